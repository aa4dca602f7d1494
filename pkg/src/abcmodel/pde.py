"""Finite-volume solver for the hydrodynamic system in flux form.

Each species obeys ``d_t rho = d_u F`` with

    F^a = grad rho^a + beta * rho^a (rho^{a+1} - rho^{a+2}).

Cell ``i`` (0-based) has center ``(i + 1/2) h``.  Interior faces use centered
differences and arithmetic averages; boundary faces are either a Dirichlet
ghost cell or a prescribed Robin total flux.  Time stepping is forward Euler.
The module also evaluates the weak-formulation residuals and the energy
functionals used in uniqueness arguments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .species import ModelParams, RegimeSpec, ReservoirDensities, classify_regime
from .testfns import TestFunction

__all__ = [
    "Grid1D",
    "SolverConfig",
    "PdeSolution",
    "NumericalFailure",
    "numerical_flux",
    "boundary_flux",
    "boundary_values",
    "step_explicit",
    "stable_dt",
    "solve",
    "weak_residual_dirichlet",
    "weak_residual_robin",
    "energy_V",
    "energy_W",
    "fit_exponential_rate",
    "cell_average_bins",
]

CLIP_EPS = 1e-6
SUM_TOL = 1e-8
NXT = np.array([1, 2, 0])
NXT2 = np.array([2, 0, 1])


class NumericalFailure(ArithmeticError):
    """NaN, bound violation or CFL violation during time stepping."""


@dataclass(frozen=True)
class Grid1D:
    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 8:
            raise ValueError(f"grid needs M >= 8 cells, got {self.M}")

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M


@dataclass(frozen=True)
class SolverConfig:
    M: int
    t_end: float
    output_times: tuple = ()
    safety: float = 0.4
    max_history: int = 4000

    def __post_init__(self):
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety factor must lie in (0, 1]")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if any(t < 0 or t > self.t_end + 1e-15 for t in self.output_times):
            raise ValueError("output times must lie in [0, t_end]")


def stable_dt(h: float, beta: float, safety: float = 0.4) -> float:
    return safety * h * h / (2.0 + beta * h)


# ---------------------------------------------------------------------------
# fluxes


def _drift(rho_face, nxt_face, nxt2_face, beta):
    return beta * rho_face * (nxt_face - nxt2_face)


def numerical_flux(rho: np.ndarray, beta: float, h: float) -> np.ndarray:
    """Interior face fluxes ``F_{i+1/2}``, shape ``(3, M-1)``."""
    avg = 0.5 * (rho[:, 1:] + rho[:, :-1])
    return (rho[:, 1:] - rho[:, :-1]) / h + _drift(avg, avg[NXT], avg[NXT2], beta)


def boundary_values(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Point values at ``u=0`` and ``u=1`` by linear extrapolation from the two
    nearest cell centers."""
    return 1.5 * rho[:, 0] - 0.5 * rho[:, 1], 1.5 * rho[:, -1] - 0.5 * rho[:, -2]


def _robin_bracket_left(rho0, r):
    """``(2 r_{a+2} - 1) rho^a(0) - 2 r_a rho^{a+1}(0) + r_a`` for every ``a``."""
    return (2 * r[NXT2] - 1) * rho0 - 2 * r * rho0[NXT] + r


def _robin_bracket_right(rho1, rt):
    """``(1 - 2 rt_{a+2}) rho^a(1) + 2 rt_a rho^{a+1}(1) - rt_a``."""
    return (1 - 2 * rt[NXT2]) * rho1 + 2 * rt * rho1[NXT] - rt


def boundary_flux(rho: np.ndarray, side: str, regime: RegimeSpec, densities: ReservoirDensities,
                  beta: float, h: float) -> np.ndarray:
    """Total flux ``F^a`` through the boundary face on ``side``."""
    r = np.asarray(densities.as_tuple())
    if regime.is_dirichlet:
        if side == "left":
            ghost = 2 * r - rho[:, 0]
            return (rho[:, 0] - ghost) / h + _drift(r, r[NXT], r[NXT2], beta)
        ghost = 2 * r - rho[:, -1]
        return (ghost - rho[:, -1]) / h + _drift(r, r[NXT], r[NXT2], beta)
    k1, k2 = regime.kappa1, regime.kappa2
    rho0, rho1 = boundary_values(rho)
    if side == "left":
        return -k1 * _robin_bracket_left(rho0, r) - k2 * (r - rho0)
    if side == "right":
        # the right bracket is minus the left one with r -> rt
        return k1 * _robin_bracket_right(rho1, r) + k2 * (r - rho1)
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def _all_fluxes(rho, beta, h, regime, left, right):
    F = np.empty((3, rho.shape[1] + 1))
    F[:, 1:-1] = numerical_flux(rho, beta, h)
    F[:, 0] = boundary_flux(rho, "left", regime, left, beta, h)
    F[:, -1] = boundary_flux(rho, "right", regime, right, beta, h)
    return F


def step_explicit(rho: np.ndarray, dt: float, beta: float, regime: RegimeSpec,
                  left: ReservoirDensities, right: ReservoirDensities,
                  safety: float = 1.0) -> np.ndarray:
    """One forward-Euler step; raises :class:`NumericalFailure` on CFL violation or NaN."""
    M = rho.shape[1]
    h = 1.0 / M
    if dt > stable_dt(h, beta, safety) * (1 + 1e-12):
        raise NumericalFailure(f"dt={dt:.3e} exceeds CFL bound {stable_dt(h, beta, safety):.3e}")
    F = _all_fluxes(rho, beta, h, regime, left, right)
    out = rho + (dt / h) * (F[:, 1:] - F[:, :-1])
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite value in density fields")
    return out


# ---------------------------------------------------------------------------
# solve


@dataclass
class PdeSolution:
    grid: Grid1D
    times: np.ndarray  # requested output times
    fields: np.ndarray  # (n_out, 3, M)
    regime: RegimeSpec
    beta: float
    left: ReservoirDensities
    right: ReservoirDensities
    initial: np.ndarray  # (3, M) initial data at cell centers
    hist_times: np.ndarray = field(repr=False, default=None)
    hist_fields: np.ndarray = field(repr=False, default=None)
    max_sum_error: float = 0.0
    steps: int = 0

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise ValueError(f"time {t} is not an output time")
        return self.fields[k]

    def mass(self) -> np.ndarray:
        """Per-species total mass at every output time, shape (n_out, 3)."""
        return self.fields.sum(axis=2) * self.grid.h

    def history_until(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        k = int(np.searchsorted(self.hist_times, t + 1e-14, side="right"))
        if abs(self.hist_times[k - 1] - t) > 1e-12:
            raise ValueError(f"time {t} is not stored in the quadrature history")
        return self.hist_times[:k], self.hist_fields[:k]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "u", "rho_A", "rho_B", "rho_E"])
            for t, f in zip(self.times, self.fields):
                for i, u in enumerate(self.grid.centers):
                    w.writerow([repr(float(t)), repr(float(u))]
                               + [repr(float(f[s, i])) for s in range(3)])


def _initial_fields(g, grid: Grid1D) -> np.ndarray:
    u = grid.centers
    if callable(g):
        rho = np.asarray(g(u), dtype=float)
    else:
        rho = np.repeat(np.asarray(g, dtype=float).reshape(3, 1), grid.M, axis=1)
    if rho.shape != (3, grid.M):
        raise ValueError(f"initial profile must evaluate to shape (3, {grid.M})")
    if np.any(rho < -1e-12) or np.any(np.abs(rho.sum(axis=0) - 1) > 1e-9):
        raise ValueError("initial profile must be a probability triple at every cell")
    return rho


def _check_fields(rho, t):
    if not np.all(np.isfinite(rho)):
        raise NumericalFailure(f"non-finite density at t={t:.6g}")
    lo, hi = rho.min(), rho.max()
    if lo < -CLIP_EPS or hi > 1 + CLIP_EPS:
        raise NumericalFailure(f"density left [0,1] at t={t:.6g}: range [{lo:.3e}, {hi:.3e}]")
    return float(np.max(np.abs(rho.sum(axis=0) - 1.0)))


def solve(g, params: ModelParams, regime: RegimeSpec | None, config: SolverConfig) -> PdeSolution:
    """March the initial profile ``g`` to every output time.

    ``g`` is a callable returning ``(3, n)`` from positions or a constant
    triple.  Only ``beta`` and the reservoir triples are read from
    ``params``; when ``regime`` is None it is classified from the exponents.
    """
    if regime is None:
        regime = classify_regime(params.theta, params.delta, params.beta_tilde)
    grid = Grid1D(config.M)
    h = grid.h
    beta = float(params.beta)
    rho = _initial_fields(g, grid)
    init = rho.copy()
    outs = sorted(set(float(t) for t in config.output_times) | {float(config.t_end)})
    dt_max = stable_dt(h, beta, config.safety)
    est_steps = max(1, math.ceil(config.t_end / dt_max))
    stride = max(1, math.ceil(est_steps / config.max_history))

    fields = []
    hist_t = [0.0]
    hist_f = [rho.copy()]
    max_sum = _check_fields(rho, 0.0)
    t = 0.0
    steps = 0
    for t_out in outs:
        span = t_out - t
        n = math.ceil(span / dt_max - 1e-9) if span > 0 else 0
        dt = span / n if n else 0.0
        for j in range(n):
            F = _all_fluxes(rho, beta, h, regime, params.left, params.right)
            rho = rho + (dt / h) * (F[:, 1:] - F[:, :-1])
            steps += 1
            t_now = t + (j + 1) * dt
            if steps % stride == 0 or j == n - 1:
                max_sum = max(max_sum, _check_fields(rho, t_now))
                if j == n - 1:
                    t_now = t_out
                hist_t.append(t_now)
                hist_f.append(rho.copy())
        t = t_out
        fields.append(rho.copy())
    if max_sum > SUM_TOL:
        raise NumericalFailure(f"species sum drifted from 1 by {max_sum:.3e}")
    keep = [i for i, t_o in enumerate(outs) if t_o in set(float(x) for x in config.output_times)
            or not config.output_times]
    return PdeSolution(grid, np.asarray([outs[i] for i in keep]), np.asarray([fields[i] for i in keep]),
                       regime, beta, params.left, params.right, init, np.asarray(hist_t),
                       np.asarray(hist_f), max_sum, steps)


# ---------------------------------------------------------------------------
# weak residuals


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    if times.size < 2:
        return 0.0
    return float(np.sum(0.5 * np.diff(times) * (values[1:] + values[:-1])))


def weak_residual_dirichlet(sol: PdeSolution, phi: TestFunction, t: float) -> np.ndarray:
    """``F_Dir`` per species: midpoint rule in space, trapezoid in time."""
    if not phi.compact:
        raise ValueError("Dirichlet residual needs a compactly supported test function")
    if phi.time_dependent:
        raise ValueError("Dirichlet residual needs a time-independent test function")
    u = sol.grid.centers
    h = sol.grid.h
    ts, fs = sol.history_until(t)
    ph, lap, grad = phi.phi(0, u), phi.lap(0, u), phi.grad(0, u)
    nonlin = fs * (fs[:, NXT] - fs[:, NXT2])
    integrand = h * (np.einsum("tai,i->ta", fs, lap)
                     - sol.beta * np.einsum("tai,i->ta", nonlin, grad))
    res = h * (fs[-1] @ ph) - h * (sol.initial @ ph)
    return res - np.array([_trapezoid(integrand[:, a], ts) for a in range(3)])


def weak_residual_robin(sol: PdeSolution, phi: TestFunction, t: float,
                        regime: RegimeSpec | None = None) -> np.ndarray:
    """``F_Rob`` per species including the boundary-gradient and both kappa lines."""
    regime = regime or sol.regime
    if regime.is_dirichlet:
        raise ValueError("Robin residual requested for a Dirichlet regime")
    k1, k2 = regime.kappa1, regime.kappa2
    u = sol.grid.centers
    h = sol.grid.h
    r = np.asarray(sol.left.as_tuple())
    rt = np.asarray(sol.right.as_tuple())
    ts, fs = sol.history_until(t)
    n = ts.size
    integ = np.zeros((n, 3))
    for k in range(n):
        s = ts[k]
        rho = fs[k]
        rho0, rho1 = boundary_values(rho)
        nonlin = rho * (rho[NXT] - rho[NXT2])
        integ[k] = (h * (rho @ (phi.lap(s, u) + phi.dt(s, u)))
                    - sol.beta * h * (nonlin @ phi.grad(s, u))
                    + phi.grad(s, 0.0) * rho0 - phi.grad(s, 1.0) * rho1
                    + k1 * phi.phi(s, 0.0) * _robin_bracket_left(rho0, r)
                    + k1 * phi.phi(s, 1.0) * _robin_bracket_right(rho1, rt)
                    + k2 * (phi.phi(s, 0.0) * (r - rho0) + phi.phi(s, 1.0) * (rt - rho1)))
    res = h * (fs[-1] @ phi.phi(t, u)) - h * (sol.initial @ phi.phi(0.0, u))
    return res - np.array([_trapezoid(integ[:, a], ts) for a in range(3)])


# ---------------------------------------------------------------------------
# energy diagnostics


def energy_V(diff: np.ndarray, K: int = 64) -> np.ndarray:
    """``V = sum_a sum_k <diff^a, psi_k>^2 / (2 a_k)`` with ``psi_k = sqrt2 sin(k pi u)``
    and ``a_k = (k pi)^2 + 1``.

    ``diff`` has shape ``(..., M)``; any leading axes other than the first
    (time) are summed, so ``(n, 3, M)`` gives one value per time.
    """
    diff = np.asarray(diff, dtype=float)
    M = diff.shape[-1]
    u = (np.arange(M) + 0.5) / M
    k = np.arange(1, K + 1)
    psi = np.sqrt(2.0) * np.sin(np.pi * np.outer(k, u))  # (K, M)
    coef = diff @ psi.T / M  # (..., K)
    a = (k * np.pi) ** 2 + 1.0
    v = np.sum(coef ** 2 / (2 * a), axis=-1)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape[0], -1).sum(axis=1)


def energy_W(diff: np.ndarray) -> np.ndarray:
    """``W = (1/2) sum_a ||diff^a||^2`` with midpoint quadrature."""
    diff = np.asarray(diff, dtype=float)
    M = diff.shape[-1]
    w = 0.5 * np.sum(diff ** 2, axis=-1) / M
    if w.ndim <= 1:
        return w
    return w.reshape(w.shape[0], -1).sum(axis=1)


def fit_exponential_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of ``log values`` against time."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    mask = values > 0
    if mask.sum() < 2:
        raise ValueError("need at least two positive values to fit a rate")
    slope, _ = np.polyfit(times[mask], np.log(values[mask]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# comparison helpers


def cell_average_bins(values: np.ndarray, edges_src: np.ndarray, bins: int) -> np.ndarray:
    """Exact averages over ``bins`` equal subintervals of [0, 1] of a piecewise-constant
    function with cell edges ``edges_src``; ``values`` has shape ``(..., n_cells)``."""
    values = np.asarray(values, float)
    cum = np.concatenate([np.zeros(values.shape[:-1] + (1,)),
                          np.cumsum(values * np.diff(edges_src), axis=-1)], axis=-1)
    targets = np.linspace(0.0, 1.0, bins + 1)
    out = np.empty(values.shape[:-1] + (bins + 1,))
    for idx in np.ndindex(values.shape[:-1]):
        out[idx] = np.interp(targets, edges_src, cum[idx])
    return np.diff(out, axis=-1) * bins
