"""Command-line surface.

Subcommands:
  simulate   one trajectory -> CSV (t, H_t, V_t, purity, xi, W, pi_r, |R_nm|)
  ensemble   Monte Carlo run -> summary JSON + per-time CSV of means/stderrs
  lindblad   deterministic mean-state ODE -> CSV of matrix entries
  verify     built-in verification suite; nonzero exit on any failure

REDUCTION_LAB_THREADS caps ensemble parallelism; outputs are byte-identical
for a fixed seed regardless of its value.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import acceptance
from .config import MODES, RunConfig, parse_config
from .dynamics import (
    NoisePath,
    TimeGrid,
    integrate_lindblad,
    sample_noise,
    simulate_sme,
)
from .errors import ReductionLabError
from .filtering import (
    FilterModel,
    closed_form_trajectory,
    default_horizon,
    make_information_path,
    recovered_brownian,
    sample_terminal_energy,
)
from .harness import EnsembleConfig, run_ensemble
from .reporting import (
    lindblad_columns,
    summary_columns,
    trajectory_columns,
    write_csv,
    write_summary_json,
)
from .spectral import spectral_decompose, validate_density


def _load_config(args) -> RunConfig:
    if not args.config:
        raise ReductionLabError("--config PATH is required for this command")
    with open(args.config) as handle:
        cfg = parse_config(handle.read())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.paths is not None:
        cfg.n_paths = args.paths
    if args.out is not None:
        cfg.output_dir = args.out
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "checks", None):
        from .harness import CHECK_NAMES

        names = tuple(name.strip() for name in args.checks.split(",") if name.strip())
        unknown = set(names) - set(CHECK_NAMES)
        if unknown:
            raise ReductionLabError(f"--checks: unknown names {sorted(unknown)}")
        cfg.checks = names
    return cfg


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _resolve_t_max(cfg: RunConfig, spec, rho0) -> float:
    if cfg.t_max is not None:
        return cfg.t_max
    return default_horizon(spec, rho0, cfg.sigma)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    rho0 = validate_density(cfg.rho0, cfg.tolerances)
    spec = spectral_decompose(cfg.hamiltonian, tols=cfg.tolerances)
    grid = cfg.grid(_resolve_t_max(cfg, spec, rho0))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0,)))

    if cfg.mode == "sde":
        noise = sample_noise(grid, rng, seed=cfg.seed)
        traj = simulate_sme(
            rho0, cfg.hamiltonian, cfg.sigma, cfg.hbar, grid, noise,
            tols=cfg.tolerances, spec=spec,
        )
    else:
        model = FilterModel(rho0, spec, cfg.sigma, cfg.hbar, cfg.tolerances)
        level = sample_terminal_energy(rho0, spec, rng, cfg.tolerances)
        path = make_information_path(level, spec, cfg.sigma, grid, rng, seed=cfg.seed)
        traj = closed_form_trajectory(model, path)
        if cfg.mode == "both":
            # drive the SDE integrator with the reconstructed increments and
            # report how far it lands from the exact trajectory
            w = recovered_brownian(path, rho0, spec, cfg.sigma)
            sde = simulate_sme(
                rho0, cfg.hamiltonian, cfg.sigma, cfg.hbar, grid,
                NoisePath(increments=np.diff(w)), tols=cfg.tolerances, spec=spec,
            )
            times = grid.times()
            pi, log_z = model.posterior(times, path.xi)
            exact = model.assemble(times, pi, model.phi(times, path.xi, log_z))
            gap = float(np.max(np.abs(np.stack([s.matrix for s in sde.states]) - exact)))
            print(f"max |integrated - closed form| over the grid: {gap:.3e}")

    out = _out_path(cfg, cfg.trajectory_file)
    write_csv(out, trajectory_columns(traj, spec))
    print(f"wrote {out} ({grid.n_steps + 1} rows)")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    rho0 = validate_density(cfg.rho0, cfg.tolerances)
    spec = spectral_decompose(cfg.hamiltonian, tols=cfg.tolerances)
    grid = cfg.grid(_resolve_t_max(cfg, spec, rho0))
    ensemble_cfg = EnsembleConfig(
        hamiltonian=cfg.hamiltonian,
        rho0=rho0.matrix,
        grid=grid,
        n_paths=cfg.n_paths,
        base_seed=cfg.seed,
        sigma=cfg.sigma,
        hbar=cfg.hbar,
        checks=cfg.checks or tuple(),
        ci_multiplier=cfg.ci_multiplier,
        check_times=cfg.check_times,
        drift_multiplier=cfg.drift_multiplier,
        sampler_bias=cfg.sampler_bias,
        tols=cfg.tolerances,
    )
    summary = run_ensemble(ensemble_cfg)

    # the echo describes the run, not where its files land: output paths
    # stay out so reruns into different directories stay byte-identical
    echo = cfg.to_dict()
    echo.pop("output", None)
    json_path = _out_path(cfg, cfg.summary_json_file)
    write_summary_json(json_path, summary, config_echo=echo)
    csv_path = _out_path(cfg, cfg.summary_csv_file)
    write_csv(csv_path, summary_columns(summary))

    failed = [name for name, v in summary.checks.items() if not v.passed]
    for name, verdict in summary.checks.items():
        status = "pass" if verdict.passed else "FAIL"
        print(
            f"check {name}: {status} (statistic {verdict.statistic:.4g}, "
            f"threshold {verdict.threshold:.4g})"
        )
    print(f"wrote {json_path} and {csv_path}")
    return 1 if failed else 0


def cmd_lindblad(args) -> int:
    cfg = _load_config(args)
    rho0 = validate_density(cfg.rho0, cfg.tolerances)
    spec = spectral_decompose(cfg.hamiltonian, tols=cfg.tolerances)
    grid = cfg.grid(_resolve_t_max(cfg, spec, rho0))
    states = integrate_lindblad(rho0, cfg.hamiltonian, cfg.sigma, cfg.hbar, grid)
    out = _out_path(cfg, cfg.lindblad_file)
    write_csv(out, lindblad_columns(states, grid))
    print(f"wrote {out} ({grid.n_steps + 1} rows)")
    return 0


def cmd_verify(args) -> int:
    results = acceptance.run_all()
    width = max(len(r.claim) for r in results)
    print(f"{'#':>2}  {'claim':<{width}}  verdict  runtime")
    failures = 0
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(f"{r.number:>2}  {r.claim:<{width}}  {verdict:<7}  {r.runtime_s:7.2f}s")
        print(f"      measured : {r.measured}")
        print(f"      threshold: {r.threshold}")
    print(f"{len(results) - failures}/{len(results)} criteria passed")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reduction-lab",
        description="Energy-driven quantum state reduction: simulation and "
        "statistical verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False, checks=False):
        p.add_argument("--config", help="path to a JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override RNG seed")
        p.add_argument("--paths", type=int, default=None, help="override n_paths")
        p.add_argument("--out", default=None, help="override output directory")
        if mode:
            p.add_argument("--mode", choices=MODES, default=None,
                           help="trajectory source")
        if checks:
            p.add_argument("--checks", default=None,
                           help="comma-separated subset of checks to run")

    common(sub.add_parser("simulate", help="write one trajectory CSV"), mode=True)
    common(sub.add_parser("ensemble", help="run a Monte Carlo ensemble"), checks=True)
    common(sub.add_parser("lindblad", help="integrate the mean-state equation"))
    sub.add_parser("verify", help="run the built-in verification suite")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "lindblad": cmd_lindblad,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ReductionLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
