"""End-to-end verification: every claim the package makes about the
dynamics, checked at its stated tolerance on the built-in reference
instances. One test (and one printed verdict line) per criterion."""

import pytest

from reduction_lab import acceptance


@pytest.fixture(scope="module")
def results():
    table = {r.number: r for r in acceptance.run_all()}
    yield table


def _assert_criterion(results, number):
    r = results[number]
    status = "PASS" if r.passed else "FAIL"
    print(f"[{status}] criterion {r.number}: {r.claim}")
    print(f"        measured : {r.measured}")
    print(f"        threshold: {r.threshold}  ({r.runtime_s:.2f}s)")
    assert r.passed, f"criterion {number}: {r.measured} vs {r.threshold}"


def test_criterion_01_oracle_equivalence(results):
    _assert_criterion(results, 1)
    r = results[1]
    assert r.details["err_coarse"] < 5e-3
    assert 0.35 <= r.details["ratio"] <= 0.75
    assert r.runtime_s < 10.0


def test_criterion_02_born_rule(results):
    _assert_criterion(results, 2)
    assert results[2].runtime_s < 60.0


def test_criterion_03_terminal_moments(results):
    _assert_criterion(results, 3)
    r = results[3]
    assert r.details["z_mean"] <= 3.0
    assert r.details["z_var"] <= 3.0


def test_criterion_04_variance_decay(results):
    _assert_criterion(results, 4)
    r = results[4]
    assert r.details["worst_bound_margin"] <= 0.0
    assert r.details["terminal_v_mean"] < 1e-6


def test_criterion_05_lindblad_mean(results):
    _assert_criterion(results, 5)
    assert results[5].details["z_mean_state"] <= 3.0


def test_criterion_06_decoherence_rates(results):
    _assert_criterion(results, 6)
    slopes = results[6].details["slopes"]
    for stats in slopes.values():
        assert stats["relative_error"] <= 0.10
    for ratio in results[6].details["ratios"]:
        assert 3.6 <= ratio <= 4.4


def test_criterion_07_luders_outcomes(results):
    _assert_criterion(results, 7)
    r = results[7]
    assert r.details["ground"]["dist_mean"] < 1e-4
    assert abs(r.details["ground"]["purity_mean"] - 0.5) <= 1e-3
    assert r.details["excited"]["dist_mean"] < 1e-4
    assert abs(r.details["excited"]["purity_mean"] - 1.0) <= 1e-3


def test_criterion_08_internal_consistency(results):
    _assert_criterion(results, 8)
    assert results[8].details["worst"] < 1e-10


def test_criterion_09_determinism(results):
    _assert_criterion(results, 9)


def test_criterion_10_negative_controls(results):
    _assert_criterion(results, 10)
