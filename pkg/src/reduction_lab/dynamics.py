"""Time-stepping integrators for energy-driven state reduction.

Three dynamical layers share the generators built from the Hamiltonian H,
the reduction parameter sigma (units energy^-1 time^-1/2), and hbar:

  density matrix (Euler-Maruyama, Ito):
    drho = -(i/hbar)[H, rho] dt
           + (sigma^2/8)(2 H rho H - H^2 rho - rho H^2) dt
           + (sigma/2)((H - H_t) rho + rho (H - H_t)) dW,   H_t = tr(rho H)

  state vector (Euler-Maruyama, Ito):
    dpsi = -(i/hbar) H psi dt - (sigma^2/8)(H - H_t)^2 psi dt
           + (sigma/2)(H - H_t) psi dW

  ensemble mean (deterministic, classical RK4):
    drho/dt = -(i/hbar)[H, rho] + (sigma^2/8)(2 H rho H - H^2 rho - rho H^2)

Euler-Maruyama does not preserve positivity, so each stochastic step is
repaired: hermitize, renormalize the trace, and clamp slightly negative
eigenvalues; a violation beyond clamp_tol raises StepDivergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, StepDivergence
from .spectral import (
    DEFAULT_TOLS,
    DensityMatrix,
    SpectralDecomposition,
    ToleranceSet,
    _freeze,
    _mat,
    frobenius_norm,
    hermitian_part,
    moments,
    offdiag_norms,
    spectral_decompose,
    validate_density,
)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = t0 + k dt, k = 0..n_steps."""

    t_max: float
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        span = self.t_max - self.t0
        tol = 32.0 * np.spacing(max(abs(self.t_max), abs(self.dt), 1.0))
        if abs(self.n_steps * self.dt - span) > tol * max(1, self.n_steps):
            raise ValueError(
                f"n_steps * dt = {self.n_steps * self.dt} does not match "
                f"t_max - t0 = {span}"
            )

    @classmethod
    def from_duration(cls, t_max: float, dt: float) -> "TimeGrid":
        """Build a grid of round(t_max/dt) steps, snapping t_max to the grid."""
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        n = max(1, round(t_max / dt))
        return cls(t_max=n * dt, dt=dt, n_steps=n)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments on a grid: increments[k] ~ Normal(0, dt)."""

    increments: np.ndarray
    seed: object = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.increments)):
            raise ValueError("noise increments must be finite")


def sample_noise(grid: TimeGrid, rng: np.random.Generator, seed=None) -> NoisePath:
    """Draw independent Normal(0, dt) increments for every step of the grid."""
    dw = rng.standard_normal(grid.n_steps) * np.sqrt(grid.dt)
    return NoisePath(increments=_freeze(dw), seed=seed)


@dataclass(frozen=True)
class MomentSeries:
    """Energy mean, variance, and third central moment along a trajectory."""

    H: np.ndarray
    V: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """One realization of the reduction process on a time grid.

    xi is reconstructed from the driving noise via dxi = sigma H_t dt + dW,
    so xi[0] = w[0] = 0 and the pair (xi, w) is consistent with the
    information-process picture of the same dynamics.
    """

    grid: TimeGrid
    states: tuple                 # n_steps + 1 DensityMatrix values
    xi: np.ndarray
    w: np.ndarray
    moments: MomentSeries
    purity: np.ndarray
    offdiag: dict                 # (n, m) -> series of |P_n rho P_m|


def _repair_state(
    raw: np.ndarray, tols: ToleranceSet, step: int | None = None
) -> np.ndarray:
    """Hermitize, renormalize, and clamp a post-step density matrix.

    Clamping is a small repair, not a projection: eigenvalues below
    -clamp_tol mean the step diverged and raise instead.
    """
    a = hermitian_part(raw)
    trace = np.trace(a).real
    if not np.isfinite(trace) or trace <= 0:
        raise StepDivergence(f"trace collapsed to {trace}", step)
    a = a / trace
    lowest = float(np.linalg.eigvalsh(a)[0])
    if lowest < -tols.clamp_tol:
        raise StepDivergence(
            f"eigenvalue {lowest:.3e} below clamp tolerance -{tols.clamp_tol:.1e}",
            step,
        )
    if lowest < -tols.psd_tol:
        values, vectors = np.linalg.eigh(a)
        values = np.clip(values, 0.0, None)
        a = (vectors * values) @ vectors.conj().T
        a = hermitian_part(a / np.trace(a).real)
    return a


def sme_euler_raw(
    rho, h, sigma: float, hbar: float, dt: float, dw: float
) -> np.ndarray:
    """The algebraic Euler-Maruyama map: hermitized and trace-renormalized
    but without the PSD policy.

    The generators preserve the trace exactly, so the renormalization only
    absorbs floating-point residue. A step from a pure state leaves the PSD
    cone at order dt (dW^2 - dt), which is why the full sme_step layers a
    clamp-or-reject policy on top of this map.
    """
    r = _mat(rho)
    a = _mat(h)
    if r.shape != a.shape:
        raise DimensionMismatch(r.shape, a.shape)
    h_t = np.trace(r @ a).real
    commutator = a @ r - r @ a
    hr = a @ r
    dissipator = 2.0 * (hr @ a) - a @ hr - (r @ a) @ a
    centered = a - h_t * np.eye(a.shape[0])
    diffusion = centered @ r + r @ centered

    raw = (
        r
        + (-1j / hbar * commutator + 0.125 * sigma**2 * dissipator) * dt
        + 0.5 * sigma * diffusion * dw
    )
    raw = hermitian_part(raw)
    trace = np.trace(raw).real
    if not np.isfinite(trace) or trace <= 0:
        raise StepDivergence(f"trace collapsed to {trace}")
    return raw / trace


def sme_step(
    rho,
    h,
    sigma: float,
    hbar: float,
    dt: float,
    dw: float,
    tols: ToleranceSet = DEFAULT_TOLS,
) -> DensityMatrix:
    """One Euler-Maruyama step of the nonlinear stochastic master equation."""
    raw = sme_euler_raw(rho, h, sigma, hbar, dt, dw)
    return DensityMatrix(_freeze(_repair_state(raw, tols)))


def simulate_sme(
    rho0,
    h,
    sigma: float,
    hbar: float,
    grid: TimeGrid,
    noise: NoisePath,
    tols: ToleranceSet = DEFAULT_TOLS,
    spec: SpectralDecomposition | None = None,
) -> Trajectory:
    """Iterate sme_step along the grid, recording the full trajectory.

    W accumulates the supplied increments; the run is bitwise reproducible
    for a fixed noise path.
    """
    if len(noise.increments) != grid.n_steps:
        raise DimensionMismatch(len(noise.increments), grid.n_steps)
    if spec is None:
        spec = spectral_decompose(h, tols=tols)

    a = _mat(h)
    state = validate_density(rho0, tols)
    n = grid.n_steps
    states = [state]
    h_series = np.empty(n + 1)
    v_series = np.empty(n + 1)
    beta_series = np.empty(n + 1)
    purity = np.empty(n + 1)
    xi = np.zeros(n + 1)
    w = np.zeros(n + 1)
    pair_keys = [(p, q) for p in range(spec.d) for q in range(spec.d) if p != q]
    offdiag = {key: np.empty(n + 1) for key in pair_keys}

    def record(k, rho):
        m = moments(rho, a)
        h_series[k], v_series[k], beta_series[k] = m.H, m.V, m.beta
        purity[k] = rho.purity()
        if pair_keys:
            norms = offdiag_norms(rho, spec)
            for key in pair_keys:
                offdiag[key][k] = norms[key]
        return m.H

    h_t = record(0, state)
    for k in range(n):
        dw = noise.increments[k]
        try:
            state = sme_step(state, a, sigma, hbar, grid.dt, dw, tols)
        except StepDivergence as exc:
            raise StepDivergence(str(exc), step=k) from exc
        w[k + 1] = w[k] + dw
        xi[k + 1] = xi[k] + sigma * h_t * grid.dt + dw
        states.append(state)
        h_t = record(k + 1, state)

    return Trajectory(
        grid=grid,
        states=tuple(states),
        xi=_freeze(xi),
        w=_freeze(w),
        moments=MomentSeries(_freeze(h_series), _freeze(v_series), _freeze(beta_series)),
        purity=_freeze(purity),
        offdiag={k: _freeze(v) for k, v in offdiag.items()},
    )


def sse_step(
    psi: np.ndarray, h, sigma: float, hbar: float, dt: float, dw: float
) -> np.ndarray:
    """One Euler-Maruyama step of the pure-state reduction equation,
    renormalized to unit norm."""
    a = _mat(h)
    psi = np.asarray(psi, dtype=complex)
    norm2 = np.vdot(psi, psi).real
    if norm2 <= 0:
        raise StepDivergence("state vector has zero norm")
    h_t = (np.vdot(psi, a @ psi).real) / norm2
    centered = a - h_t * np.eye(a.shape[0])
    out = (
        psi
        + (-1j / hbar * (a @ psi) - 0.125 * sigma**2 * (centered @ (centered @ psi))) * dt
        + 0.5 * sigma * (centered @ psi) * dw
    )
    norm = np.linalg.norm(out)
    if not np.isfinite(norm) or norm <= 0:
        raise StepDivergence("state vector norm diverged")
    return out / norm


def lindblad_rhs(rho_bar: np.ndarray, h, sigma: float, hbar: float) -> np.ndarray:
    """Right-hand side of the deterministic mean-state master equation.

    Accepts any trace-one Hermitian matrix; positivity is not required
    mid-integration.
    """
    a = _mat(h)
    r = np.asarray(_mat(rho_bar), dtype=complex)
    if r.shape != a.shape:
        raise DimensionMismatch(r.shape, a.shape)
    commutator = a @ r - r @ a
    hr = a @ r
    dissipator = 2.0 * (hr @ a) - a @ hr - (r @ a) @ a
    return -1j / hbar * commutator + 0.125 * sigma**2 * dissipator


def integrate_lindblad(
    rho0, h, sigma: float, hbar: float, grid: TimeGrid
) -> list:
    """Classical RK4 on the mean-state equation; trace renormalized each step.

    Returns the list of mean states at every grid point.
    """
    a = _mat(h)
    r = np.asarray(_mat(rho0), dtype=complex)
    dt = grid.dt
    out = [DensityMatrix(_freeze(hermitian_part(r)))]
    for k in range(grid.n_steps):
        k1 = lindblad_rhs(r, a, sigma, hbar)
        k2 = lindblad_rhs(r + 0.5 * dt * k1, a, sigma, hbar)
        k3 = lindblad_rhs(r + 0.5 * dt * k2, a, sigma, hbar)
        k4 = lindblad_rhs(r + dt * k3, a, sigma, hbar)
        r = r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        trace = np.trace(r).real
        if not np.isfinite(trace) or trace <= 0:
            raise StepDivergence(f"trace collapsed to {trace}", step=k)
        r = hermitian_part(r / trace)
        out.append(DensityMatrix(_freeze(r)))
    return out


def variance_bound(v0: float, sigma: float, t) -> np.ndarray | float:
    """Upper bound V_0 / (1 + V_0 sigma^2 t) on the mean energy variance."""
    if v0 < 0:
        raise ValueError(f"initial variance must be nonnegative, got {v0}")
    return v0 / (1.0 + v0 * sigma**2 * np.asarray(t))


def unitary_propagator(spec: SpectralDecomposition, t: float, hbar: float) -> np.ndarray:
    """exp(-i H t / hbar) assembled from the spectral decomposition."""
    out = np.zeros((spec.dim, spec.dim), dtype=complex)
    for e, p in zip(spec.energies, spec.projectors):
        out += np.exp(-1j * e * t / hbar) * p
    return out
