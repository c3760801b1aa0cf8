"""Monte Carlo ensemble runner and statistical verdicts.

Paths are simulated with the closed-form filtering solution, which is exact
at every grid time, so the output grid spacing controls reporting
resolution only, not accuracy. Each path has its own counter-based RNG
stream derived from (base_seed, path index); paths are processed in
fixed-size chunks whose partial sums are reduced in chunk order, so the
summary is bitwise identical for a fixed seed regardless of how many
worker threads are used (REDUCTION_LAB_THREADS caps the pool).

Every analytic claim about the dynamics gets a named check with a
pass/fail verdict at ci_multiplier standard errors. The config carries two
deliberate corruption fixtures (drift_multiplier, sampler_bias) so the
test suite can prove the checks fail when the dynamics are wrong.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TimeGrid, integrate_lindblad, variance_bound
from .errors import ReductionLabError, ValidationError
from .filtering import FilterModel
from .spectral import (
    DEFAULT_TOLS,
    SpectralDecomposition,
    ToleranceSet,
    _mat,
    spectral_decompose,
)

CHUNK = 512          # fixed so that chunking never depends on thread count
CHECK_NAMES = ("born", "martingales", "variance_decay", "decoherence", "luders")


@dataclass(frozen=True)
class EnsembleConfig:
    """Inputs for one ensemble run.

    check_times lists grid times where dense mean states are recorded for
    comparison against the deterministic mean-state integrator.
    drift_multiplier and sampler_bias are negative-control fixtures: they
    corrupt the simulated dynamics while the checks keep testing the
    honest claims, and must therefore cause failures when != defaults.
    """

    hamiltonian: np.ndarray
    rho0: np.ndarray
    grid: TimeGrid
    n_paths: int
    base_seed: int = 0
    sigma: float = 1.0
    hbar: float = 1.0
    checks: tuple = CHECK_NAMES
    ci_multiplier: float = 3.0
    check_times: tuple = ()
    lindblad_dt: float = 1e-3
    drift_multiplier: float = 1.0
    sampler_bias: tuple | None = None
    tols: ToleranceSet = DEFAULT_TOLS

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.checks and self.n_paths < 100:
            raise ValidationError(
                f"CI-based checks need n_paths >= 100, got {self.n_paths}"
            )
        unknown = set(self.checks) - set(CHECK_NAMES)
        if unknown:
            raise ValidationError(f"unknown checks: {sorted(unknown)}")
        if self.ci_multiplier <= 0:
            raise ValidationError("ci_multiplier must be positive")


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    statistic: float
    threshold: float
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SeriesStats:
    """Per-time-point sample mean and standard error of the mean."""

    mean: np.ndarray
    se: np.ndarray


@dataclass
class EnsembleSummary:
    config: EnsembleConfig
    spec: SpectralDecomposition
    model: FilterModel
    times: np.ndarray
    n_paths: int
    stderr_defined: bool
    h_series: SeriesStats
    v_series: SeriesStats
    purity_series: SeriesStats
    pi_series: SeriesStats            # (T, D)
    phi_series: SeriesStats           # (T, n_pairs)
    v_step: SeriesStats               # paired increments V_{k+1} - V_k, (T-1,)
    born_counts: np.ndarray
    born_freqs: np.ndarray
    born_expected: np.ndarray
    terminal: dict
    luders: dict                      # level -> conditional terminal stats
    mean_states: dict                 # time -> {mean, se_real, se_imag}
    checks: dict = field(default_factory=dict)

    @property
    def pairs(self):
        return self.model.pairs


def _se_from_sums(total, total_sq, n):
    """Standard error of the mean from accumulated sum and sum of squares."""
    if n < 2:
        return np.full_like(np.asarray(total, dtype=float), np.nan)
    mean = total / n
    var = np.clip((total_sq - n * mean**2) / (n - 1), 0.0, None)
    return np.sqrt(var / n)


def _path_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=base_seed, spawn_key=(index,))
    )


class _Accumulator:
    """Order-fixed reduction of per-chunk partial sums."""

    def __init__(self, n_times, d, n_pairs, n_check, dim, n_paths):
        self.h = np.zeros(n_times)
        self.h_sq = np.zeros(n_times)
        self.v = np.zeros(n_times)
        self.v_sq = np.zeros(n_times)
        self.v_cross = np.zeros(n_times - 1) if n_times > 1 else np.zeros(0)
        self.purity = np.zeros(n_times)
        self.purity_sq = np.zeros(n_times)
        self.pi = np.zeros((n_times, d))
        self.pi_sq = np.zeros((n_times, d))
        self.phi = np.zeros((n_times, n_pairs))
        self.phi_sq = np.zeros((n_times, n_pairs))
        self.born = np.zeros(d, dtype=np.int64)
        self.luders_count = np.zeros(d, dtype=np.int64)
        self.luders_dist = np.zeros(d)
        self.luders_dist_sq = np.zeros(d)
        self.luders_pur = np.zeros(d)
        self.luders_pur_sq = np.zeros(d)
        self.state_sum = np.zeros((n_check, dim, dim), dtype=complex)
        self.state_sq_re = np.zeros((n_check, dim, dim))
        self.state_sq_im = np.zeros((n_check, dim, dim))
        self.h_terminal = np.zeros(n_paths)
        self.v_terminal = np.zeros(n_paths)

    def fold(self, part):
        for name in (
            "h", "h_sq", "v", "v_sq", "v_cross", "purity", "purity_sq",
            "pi", "pi_sq", "phi", "phi_sq", "born",
            "luders_count", "luders_dist", "luders_dist_sq",
            "luders_pur", "luders_pur_sq",
            "state_sum", "state_sq_re", "state_sq_im",
        ):
            getattr(self, name).__iadd__(part[name])
        lo, hi = part["path_range"]
        self.h_terminal[lo:hi] = part["h_terminal"]
        self.v_terminal[lo:hi] = part["v_terminal"]


def _trace_distance_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """0.5 * sum |eig(a - b)| over the last two axes."""
    diff = a - b
    diff = 0.5 * (diff + np.swapaxes(diff, -1, -2).conj())
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff)), axis=-1)


def _run_chunk(cfg: EnsembleConfig, model: FilterModel, times, check_idx, lo, hi):
    """Simulate paths [lo, hi) and return their partial sums."""
    c = hi - lo
    n_steps = len(times) - 1
    sqrt_dt = np.sqrt(cfg.grid.dt)
    if cfg.sampler_bias is not None:
        draw_p = np.clip(np.asarray(cfg.sampler_bias, dtype=float), 0.0, None)
    else:
        draw_p = model.p
    cumulative = np.cumsum(draw_p / draw_p.sum())

    levels = np.empty(c, dtype=np.int64)
    b = np.empty((c, n_steps + 1))
    b[:, 0] = 0.0
    for j in range(c):
        rng = _path_rng(cfg.base_seed, lo + j)
        levels[j] = np.searchsorted(cumulative, rng.random(), side="right")
        b[j, 1:] = np.cumsum(rng.standard_normal(n_steps) * sqrt_dt)

    drift = cfg.drift_multiplier * cfg.sigma * model.energies[levels]
    xi = drift[:, None] * times[None, :] + b

    pi, log_z = model.posterior(times, xi)          # (c, T, D)
    phi = model.phi(times, xi, log_z)               # (c, T, P)
    h_path = model.energy(pi)
    v_path = model.variance(pi)
    purity = model.purity(pi, phi)

    terminal_states = model.assemble(times[-1], pi[:, -1, :], phi[:, -1, :])
    targets = model.luders_stack[levels]
    dist = _trace_distance_batch(terminal_states, targets)
    pur_t = purity[:, -1]

    part = {
        "path_range": (lo, hi),
        "h": h_path.sum(axis=0),
        "h_sq": (h_path**2).sum(axis=0),
        "v": v_path.sum(axis=0),
        "v_sq": (v_path**2).sum(axis=0),
        "v_cross": (v_path[:, :-1] * v_path[:, 1:]).sum(axis=0),
        "purity": purity.sum(axis=0),
        "purity_sq": (purity**2).sum(axis=0),
        "pi": pi.sum(axis=0),
        "pi_sq": (pi**2).sum(axis=0),
        "phi": phi.sum(axis=0),
        "phi_sq": (phi**2).sum(axis=0),
        "born": np.bincount(np.argmax(pi[:, -1, :], axis=1), minlength=model.spec.d),
        "luders_count": np.bincount(levels, minlength=model.spec.d),
        "luders_dist": np.bincount(levels, weights=dist, minlength=model.spec.d),
        "luders_dist_sq": np.bincount(levels, weights=dist**2, minlength=model.spec.d),
        "luders_pur": np.bincount(levels, weights=pur_t, minlength=model.spec.d),
        "luders_pur_sq": np.bincount(levels, weights=pur_t**2, minlength=model.spec.d),
        "h_terminal": h_path[:, -1].copy(),
        "v_terminal": v_path[:, -1].copy(),
    }

    if len(check_idx):
        states = model.assemble(
            times[check_idx], pi[:, check_idx, :], phi[:, check_idx, :]
        )
        part["state_sum"] = states.sum(axis=0)
        part["state_sq_re"] = (states.real**2).sum(axis=0)
        part["state_sq_im"] = (states.imag**2).sum(axis=0)
    else:
        dim = model.spec.dim
        part["state_sum"] = np.zeros((0, dim, dim), dtype=complex)
        part["state_sq_re"] = np.zeros((0, dim, dim))
        part["state_sq_im"] = np.zeros((0, dim, dim))
    return part


def thread_count() -> int:
    raw = os.environ.get("REDUCTION_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_ensemble(cfg: EnsembleConfig) -> EnsembleSummary:
    """Run n_paths independent trajectories and aggregate every verified
    statistic, then attach verdicts for the enabled checks."""
    spec = spectral_decompose(cfg.hamiltonian, tols=cfg.tols)
    model = FilterModel(cfg.rho0, spec, cfg.sigma, cfg.hbar, cfg.tols)
    times = cfg.grid.times()
    n = cfg.n_paths
    if cfg.sampler_bias is not None and len(cfg.sampler_bias) != spec.d:
        raise ValidationError(
            f"sampler_bias has {len(cfg.sampler_bias)} weights for {spec.d} levels"
        )

    check_idx = np.array(
        [int(np.argmin(np.abs(times - t))) for t in cfg.check_times], dtype=int
    )
    for want, got in zip(cfg.check_times, check_idx):
        if abs(times[got] - want) > 1e-9 * max(1.0, abs(want)):
            raise ValidationError(
                f"check time {want} is not on the output grid (dt={cfg.grid.dt})"
            )

    acc = _Accumulator(
        len(times), spec.d, len(model.pairs), len(check_idx), spec.dim, n
    )

    def chunk(bounds):
        lo, hi = bounds
        try:
            return _run_chunk(cfg, model, times, check_idx, lo, hi)
        except ReductionLabError as exc:
            raise type(exc)(f"paths [{lo}, {hi}): {exc}") from exc

    ranges = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    workers = min(thread_count(), len(ranges))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, ranges))
    else:
        parts = [chunk(bounds) for bounds in ranges]
    for part in parts:        # chunk order fixes the reduction order
        acc.fold(part)

    stderr_defined = n > 1
    summary = EnsembleSummary(
        config=cfg,
        spec=spec,
        model=model,
        times=times,
        n_paths=n,
        stderr_defined=stderr_defined,
        h_series=SeriesStats(acc.h / n, _se_from_sums(acc.h, acc.h_sq, n)),
        v_series=SeriesStats(acc.v / n, _se_from_sums(acc.v, acc.v_sq, n)),
        purity_series=SeriesStats(
            acc.purity / n, _se_from_sums(acc.purity, acc.purity_sq, n)
        ),
        pi_series=SeriesStats(acc.pi / n, _se_from_sums(acc.pi, acc.pi_sq, n)),
        phi_series=SeriesStats(acc.phi / n, _se_from_sums(acc.phi, acc.phi_sq, n)),
        v_step=_paired_step_stats(acc, n),
        born_counts=acc.born,
        born_freqs=acc.born / n,
        born_expected=model.p,
        terminal=_terminal_stats(acc, n),
        luders=_luders_stats(acc, model, n),
        mean_states=_mean_state_stats(acc, times, check_idx, n),
    )
    for name in cfg.checks:
        summary.checks[name] = CHECKS[name](summary)
    return summary


def _paired_step_stats(acc: _Accumulator, n: int) -> SeriesStats:
    """Mean and SE of the per-path increments V_{k+1} - V_k.

    Var(D) = Var(V_{k+1}) + Var(V_k) - 2 Cov comes from the accumulated
    cross products, avoiding a per-path store of the whole series.
    """
    if len(acc.v_cross) == 0:
        return SeriesStats(np.zeros(0), np.zeros(0))
    mean_diff = (acc.v[1:] - acc.v[:-1]) / n
    if n < 2:
        return SeriesStats(mean_diff, np.full_like(mean_diff, np.nan))
    mean_k = acc.v[:-1] / n
    mean_k1 = acc.v[1:] / n
    e_sq = (acc.v_sq[1:] + acc.v_sq[:-1] - 2.0 * acc.v_cross) / n
    var = np.clip(e_sq - mean_diff**2, 0.0, None) * n / (n - 1)
    return SeriesStats(mean_diff, np.sqrt(var / n))


def _terminal_stats(acc: _Accumulator, n: int) -> dict:
    h = acc.h_terminal
    mean = float(np.mean(h))
    if n > 1:
        se = float(np.std(h, ddof=1) / np.sqrt(n))
        centered = h - mean
        m2 = float(np.mean(centered**2))
        m4 = float(np.mean(centered**4))
        var = float(np.var(h, ddof=1))
        var_se = float(np.sqrt(max(m4 - m2**2, 0.0) / n))
    else:
        se = var = var_se = float("nan")
    return {
        "h_mean": mean,
        "h_se": se,
        "h_var": var,
        "h_var_se": var_se,
        "v_mean": float(np.mean(acc.v_terminal)),
        "v_se": float(np.std(acc.v_terminal, ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
    }


def _luders_stats(acc: _Accumulator, model: FilterModel, n: int) -> dict:
    out = {}
    for r in range(model.spec.d):
        count = int(acc.luders_count[r])
        if count == 0:
            continue
        dist_mean = acc.luders_dist[r] / count
        pur_mean = acc.luders_pur[r] / count
        out[r] = {
            "count": count,
            "dist_mean": float(dist_mean),
            "dist_se": float(_se_from_sums(acc.luders_dist[r], acc.luders_dist_sq[r], count)),
            "purity_mean": float(pur_mean),
            "purity_se": float(_se_from_sums(acc.luders_pur[r], acc.luders_pur_sq[r], count)),
            "target_purity": float(model.luders_purity[r]),
        }
    return out


def _mean_state_stats(acc: _Accumulator, times, check_idx, n: int) -> dict:
    out = {}
    for slot, idx in enumerate(check_idx):
        mean = acc.state_sum[slot] / n
        se_re = _se_from_sums(acc.state_sum[slot].real, acc.state_sq_re[slot], n)
        se_im = _se_from_sums(acc.state_sum[slot].imag, acc.state_sq_im[slot], n)
        out[float(times[idx])] = {"mean": mean, "se_real": se_re, "se_imag": se_im}
    return out


# ---------------------------------------------------------------------------
# checks


def _z_exceedance(mean, se, target):
    """Worst |mean - target| / se, treating se == 0 as an exactness demand."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    se = np.atleast_1d(np.asarray(se, dtype=float))
    target = np.broadcast_to(np.asarray(target, dtype=float), mean.shape)
    dev = np.abs(mean - target)
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev <= 1e-12, 0.0, np.inf))
    return float(np.max(z)) if z.size else 0.0


def check_born(summary: EnsembleSummary) -> Verdict:
    """Terminal-level frequencies against p_r = tr(rho_0 P_r), within
    ci * binomial standard error per level."""
    cfg = summary.config
    n = summary.n_paths
    p = summary.born_expected
    freq = summary.born_freqs
    binom_se = np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / n)
    z = _z_exceedance(freq, binom_se, p)
    return Verdict(
        name="born",
        passed=z <= cfg.ci_multiplier,
        statistic=z,
        threshold=cfg.ci_multiplier,
        details={
            "frequencies": freq.tolist(),
            "expected": p.tolist(),
            "counts": summary.born_counts.tolist(),
        },
    )


def _phi_window(summary: EnsembleSummary, pair_slot: int) -> np.ndarray:
    """Grid mask where the Phi sample mean is resolved above its noise:
    mean > 10 * stderr. Keeps log fits and martingale z-scores away from
    the regime where the heavy-tailed Phi estimator is pure noise."""
    mean = summary.phi_series.mean[:, pair_slot]
    se = summary.phi_series.se[:, pair_slot]
    return (mean > 10.0 * se) & (mean > 0)


def check_martingales(summary: EnsembleSummary) -> Verdict:
    """Constancy of the conserved means: E[H_t] = H_0, E[pi_r(t)] = p_r,
    E[Pi_nm(t)] = 1; plus the one-sided supermartingale step test on V."""
    cfg = summary.config
    ci = cfg.ci_multiplier
    model = summary.model
    h0 = float(model.p @ model.energies)
    z_h = _z_exceedance(summary.h_series.mean, summary.h_series.se, h0)
    z_pi = _z_exceedance(summary.pi_series.mean, summary.pi_series.se, model.p)

    z_pi_nm = 0.0
    for slot in range(len(model.pairs)):
        window = _phi_window(summary, slot)
        window[0] = False          # se == 0 at t = 0 where Phi == 1 exactly
        if not np.any(window):
            continue
        rate = 0.125 * cfg.sigma**2 * model.pair_gap[slot] ** 2
        growth = np.exp(rate * summary.times[window])
        mean_pi_nm = summary.phi_series.mean[window, slot] * growth
        se_pi_nm = summary.phi_series.se[window, slot] * growth
        z_pi_nm = max(z_pi_nm, _z_exceedance(mean_pi_nm, se_pi_nm, 1.0))

    # supermartingale: paired increments of V must not be significantly positive
    step = summary.v_step
    if step.mean.size:
        up = step.mean / np.where(step.se > 0, step.se, np.inf)
        slack = np.where(step.se > 0, up, np.where(step.mean <= 1e-12, 0.0, np.inf))
        z_super = float(np.max(slack))
    else:
        z_super = 0.0

    statistic = max(z_h, z_pi, z_pi_nm, z_super)
    return Verdict(
        name="martingales",
        passed=statistic <= ci,
        statistic=statistic,
        threshold=ci,
        details={
            "z_energy": z_h,
            "z_level_weights": z_pi,
            "z_offdiag_martingale": z_pi_nm,
            "z_variance_supermartingale": z_super,
        },
    )


def check_variance_decay(summary: EnsembleSummary) -> Verdict:
    """Mean V_t under the envelope V_0/(1 + V_0 sigma^2 t) at every grid
    point, terminal mean V below 1e-6 * (E_D - E_1)^2, and (when check
    times were recorded) entrywise agreement of the mean state with the
    deterministic mean-state integrator."""
    cfg = summary.config
    ci = cfg.ci_multiplier
    model = summary.model
    v0 = float(model.p @ model.energies**2 - (model.p @ model.energies) ** 2)
    bound = variance_bound(v0, cfg.sigma, summary.times)
    margin = summary.v_series.mean - (bound + ci * np.where(np.isnan(summary.v_series.se), 0.0, summary.v_series.se))
    worst_margin = float(np.max(margin))

    span = float(model.energies[-1] - model.energies[0]) if summary.spec.d > 1 else 0.0
    terminal_tol = 1e-6 * span**2
    terminal_v = float(summary.v_series.mean[-1])

    z_state = 0.0
    if summary.mean_states:
        horizon = max(summary.mean_states)
        grid = TimeGrid.from_duration(horizon, min(cfg.lindblad_dt, horizon))
        ode = integrate_lindblad(cfg.rho0, cfg.hamiltonian, cfg.sigma, cfg.hbar, grid)
        ode_times = grid.times()
        for t, stats in summary.mean_states.items():
            idx = int(np.argmin(np.abs(ode_times - t)))
            target = ode[idx].matrix
            z_re = _z_exceedance(stats["mean"].real, stats["se_real"], target.real)
            z_im = _z_exceedance(stats["mean"].imag, stats["se_imag"], target.imag)
            z_state = max(z_state, z_re, z_im)

    terminal_ok = terminal_v < terminal_tol or (span == 0.0 and terminal_v == 0.0)
    passed = worst_margin <= 0 and terminal_ok and z_state <= ci
    return Verdict(
        name="variance_decay",
        passed=bool(passed),
        statistic=max(worst_margin, z_state - ci, terminal_v - terminal_tol),
        threshold=0.0,
        details={
            "v0": v0,
            "worst_bound_margin": worst_margin,
            "terminal_v_mean": terminal_v,
            "terminal_tolerance": terminal_tol,
            "z_mean_state": z_state,
        },
    )


def check_decoherence(summary: EnsembleSummary) -> Verdict:
    """Fitted decay rate of log E[Phi_nm] against -sigma^2 (E_n - E_m)^2 / 8,
    within 10% relative error per level pair."""
    cfg = summary.config
    model = summary.model
    slopes = {}
    worst = 0.0
    ok = True
    for slot, (n, m) in enumerate(model.pairs):
        expected = -0.125 * cfg.sigma**2 * model.pair_gap[slot] ** 2
        window = _phi_window(summary, slot)
        if np.count_nonzero(window) < 5:
            ok = False
            slopes[f"{n + 1}-{m + 1}"] = {"slope": float("nan"), "expected": expected}
            continue
        t = summary.times[window]
        y = np.log(summary.phi_series.mean[window, slot])
        slope = float(np.polyfit(t, y, 1)[0])
        # sigma = 0 turns the claim into "no decay at all"; compare absolutely
        rel = abs(slope - expected) / abs(expected) if expected != 0 else abs(slope)
        worst = max(worst, rel)
        ok = ok and rel <= 0.10
        slopes[f"{n + 1}-{m + 1}"] = {
            "slope": slope,
            "expected": expected,
            "relative_error": rel,
            "window_points": int(np.count_nonzero(window)),
        }
    return Verdict(
        name="decoherence",
        passed=ok,
        statistic=worst,
        threshold=0.10,
        details={"slopes": slopes},
    )


def check_luders(summary: EnsembleSummary) -> Verdict:
    """Conditional on the sampled level n, the terminal state sits on the
    Lueders state of that level: mean trace distance < 1e-4 and mean
    terminal purity within 1e-3 of tr(L_n^2) (1 for nondegenerate levels,
    and for pure initial states)."""
    dist_tol = 1e-4
    purity_tol = 1e-3
    worst = 0.0
    ok = True
    details = {}
    for level, stats in summary.luders.items():
        purity_err = abs(stats["purity_mean"] - stats["target_purity"])
        ok = ok and stats["dist_mean"] < dist_tol and purity_err < purity_tol
        worst = max(worst, stats["dist_mean"] / dist_tol, purity_err / purity_tol)
        details[level] = stats
    return Verdict(
        name="luders",
        passed=ok,
        statistic=worst,
        threshold=1.0,
        details={"by_level": details},
    )


CHECKS = {
    "born": check_born,
    "martingales": check_martingales,
    "variance_decay": check_variance_decay,
    "decoherence": check_decoherence,
    "luders": check_luders,
}
