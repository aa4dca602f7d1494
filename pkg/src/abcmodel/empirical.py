"""Empirical-measure functionals and the microscopic observables of the Dynkin
expansion.

Occupancies are 0-based arrays of length ``N-1``; the public functions take
1-based site and bond indices to match the lattice ``1..N-1``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .simulator import DynkinTables, EnsembleResult, Trajectory
from .species import ModelParams, ReservoirDensities
from .testfns import TestFunction

__all__ = [
    "DensityProfile",
    "InsufficientSnapshotsError",
    "pair_empirical",
    "block_average",
    "g_bulk",
    "f_boundary",
    "f_boundary_long",
    "h_boundary",
    "h_boundary_long",
    "generator_action",
    "generator_tables",
    "dynkin_residual",
    "profile_from_ensemble",
]


class InsufficientSnapshotsError(ValueError):
    """Snapshot schedule too sparse for a quadrature-based residual."""


def _xi(occ, x: int, alpha: int) -> float:
    return 1.0 if int(occ[x - 1]) == alpha % 3 else 0.0


def _as_space_fn(phi, t: float) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(phi, TestFunction):
        return lambda u: phi.phi(t, u)
    return lambda u: np.broadcast_to(np.asarray(phi(u), dtype=float), np.shape(u))


def pair_empirical(occupancy, phi, alpha: int, t: float = 0.0) -> float:
    """``<pi^alpha, phi> = (1/N) sum_x phi(x/N) xi^alpha_x``."""
    occ = np.asarray(occupancy)
    N = occ.shape[0] + 1
    u = np.arange(1, N) / N
    return float(np.sum(_as_space_fn(phi, t)(u) * (occ == alpha % 3)) / N)


def block_average(occupancy, x: int, ell: int, alpha: int, side: str = "right") -> float:
    """Mean of ``xi^alpha`` over ``x+1..x+ell`` (right) or ``x-ell..x-1`` (left)."""
    occ = np.asarray(occupancy)
    L = occ.shape[0]
    if ell < 1:
        raise ValueError("box size must be >= 1")
    if side == "right":
        lo, hi = x + 1, x + ell
    elif side == "left":
        lo, hi = x - ell, x - 1
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if lo < 1 or hi > L:
        raise IndexError(f"box [{lo}, {hi}] exits the lattice 1..{L}")
    return float(np.mean(occ[lo - 1:hi] == alpha % 3))


def g_bulk(occupancy, x: int, alpha: int) -> float:
    occ = np.asarray(occupancy)
    if not 1 <= x <= occ.shape[0] - 1:
        raise IndexError(f"bond index {x} outside 1..{occ.shape[0] - 1}")
    a1, a2 = alpha + 1, alpha + 2
    return 0.5 * (_xi(occ, x + 1, alpha) * (_xi(occ, x, a1) - _xi(occ, x, a2))
                  + _xi(occ, x, alpha) * (_xi(occ, x + 1, a1) - _xi(occ, x + 1, a2)))


def _boundary_side(occ, site: int) -> str:
    L = np.asarray(occ).shape[0]
    if site == 1:
        return "left"
    if site == L:
        return "right"
    raise IndexError(f"site {site} is not a boundary site (1 or {L})")


def f_boundary(occupancy, site: int, alpha: int, densities: ReservoirDensities) -> float:
    _boundary_side(occupancy, site)
    return densities[alpha] - _xi(occupancy, site, alpha)


def f_boundary_long(occupancy, site: int, alpha: int, densities: ReservoirDensities) -> float:
    _boundary_side(occupancy, site)
    r = densities
    return ((-r[alpha + 1] - r[alpha + 2]) * _xi(occupancy, site, alpha)
            + r[alpha] * _xi(occupancy, site, alpha + 1)
            + r[alpha] * _xi(occupancy, site, alpha + 2))


def h_boundary(occupancy, site: int, alpha: int, densities: ReservoirDensities) -> float:
    side = _boundary_side(occupancy, site)
    r = densities
    x0, x1 = _xi(occupancy, site, alpha), _xi(occupancy, site, alpha + 1)
    val = 0.5 * ((2 * r[alpha + 2] - 1) * x0 - 2 * r[alpha] * x1 + r[alpha])
    return val if side == "left" else -val


def h_boundary_long(occupancy, site: int, alpha: int, densities: ReservoirDensities) -> float:
    side = _boundary_side(occupancy, site)
    r = densities
    x0 = _xi(occupancy, site, alpha)
    x1 = _xi(occupancy, site, alpha + 1)
    x2 = _xi(occupancy, site, alpha + 2)
    if side == "left":
        return 0.5 * ((r[alpha + 2] - r[alpha + 1]) * x0 - r[alpha] * x1 + r[alpha] * x2)
    return 0.5 * ((r[alpha + 1] - r[alpha + 2]) * x0 + r[alpha] * x1 - r[alpha] * x2)


# ---------------------------------------------------------------------------
# generator expansion


def _grid_values(phi: TestFunction, t: float, N: int) -> np.ndarray:
    """phi(t, x/N) for x = 0..N."""
    return np.asarray(phi.phi(t, np.arange(N + 1) / N), dtype=float)


def generator_action(occupancy, phi: TestFunction, alpha: int, params: ModelParams,
                     t: float = 0.0) -> float:
    """``N^2 L_N <pi^alpha, phi_t>`` through the expanded form of the Dynkin integrand."""
    occ = np.asarray(occupancy)
    N = params.N
    if occ.shape != (N - 1,):
        raise ValueError("occupancy length must be N-1")
    v = _grid_values(phi, t, N)
    lap = N * N * (v[2:] - 2 * v[1:-1] + v[:-2])  # x = 1..N-1
    grad = N * (v[1:] - v[:-1])  # grad[x] = nabla+ phi(x/N), x = 0..N-1
    xi = (occ == alpha % 3).astype(float)
    total = float(np.sum(xi * lap)) / N
    total -= params.beta / N * sum(grad[x] * g_bulk(occ, x, alpha) for x in range(1, N - 1))
    total += N ** (1.0 - params.delta) * (
        v[1] * f_boundary(occ, 1, alpha, params.left)
        + v[N - 1] * f_boundary(occ, N - 1, alpha, params.right))
    total += grad[0] * xi[0] - grad[N - 1] * xi[-1]
    total += params.beta_tilde * N ** (1.0 - params.theta) * (
        v[1] * h_boundary(occ, 1, alpha, params.left)
        + v[N - 1] * h_boundary(occ, N - 1, alpha, params.right))
    return total


def generator_tables(params: ModelParams, phi: TestFunction, t: float = 0.0) -> DynkinTables:
    """Lookup tables that let the simulation kernel maintain ``N^2 L_N <pi, phi>`` for
    all three species incrementally.  ``phi`` must not depend on time."""
    if phi.time_dependent:
        raise ValueError("inline Dynkin accumulation needs a time-independent test function")
    N = params.N
    L = N - 1
    v = _grid_values(phi, t, N)
    site = N * (v[2:] - 2 * v[1:-1] + v[:-2])  # Delta_N phi / N
    grad = N * (v[1:] - v[:-1])
    bond = -params.beta / N * grad[1:N - 1]
    g = np.zeros((3, 3, 3))
    for s in range(3):
        for a in range(3):
            for c in range(3):
                g[s, a, c] = g_bulk(np.array([a, c], dtype=np.int8), 1, s)
    left = np.zeros((3, 3))
    right = np.zeros((3, 3))
    ks = N ** (1.0 - params.delta)
    kh = params.beta_tilde * N ** (1.0 - params.theta)
    for s in range(3):
        for occ_val in range(3):
            probe = np.full(L, occ_val, dtype=np.int8)
            xi = 1.0 if occ_val == s else 0.0
            left[s, occ_val] = (v[1] * (ks * f_boundary(probe, 1, s, params.left)
                                        + kh * h_boundary(probe, 1, s, params.left))
                                + grad[0] * xi)
            right[s, occ_val] = (v[N - 1] * (ks * f_boundary(probe, L, s, params.right)
                                             + kh * h_boundary(probe, L, s, params.right))
                                 - grad[N - 1] * xi)
    pair = v[1:N] / N
    return DynkinTables(np.ascontiguousarray(site), np.ascontiguousarray(bond), g, left, right,
                        np.ascontiguousarray(pair))


def dynkin_residual(traj: Trajectory | EnsembleResult, phi: TestFunction, alpha: int,
                    params: ModelParams | None = None, min_snapshots: int = 2) -> np.ndarray:
    """Martingale ``M_t`` at each snapshot time.

    Uses the exact per-event integral when the run carried Dynkin tables;
    otherwise falls back to the trapezoid rule over snapshots (requiring a
    snapshot at ``t=0`` and at least ``min_snapshots`` of them).  Returns shape
    ``(n_snap,)`` for a trajectory and ``(R, n_snap)`` for an ensemble.
    """
    params = params or traj.params
    if traj.dynkin_integral is not None and not phi.time_dependent:
        pair = traj.dynkin_pairing[..., alpha]
        return pair - pair[..., :1] - traj.dynkin_integral[..., alpha]
    times = np.asarray(traj.times)
    if times.size < min_snapshots or times[0] != 0.0:
        raise InsufficientSnapshotsError(
            f"quadrature needs >= {min_snapshots} snapshots starting at t=0, got {times.size}")
    snaps = traj.snapshots
    single = snaps.ndim == 2
    if single:
        snaps = snaps[None]
    N = params.N
    u = np.arange(1, N) / N
    out = np.zeros(snaps.shape[:2])
    for r in range(snaps.shape[0]):
        integrand = np.empty(times.size)
        pairing = np.empty(times.size)
        for k, t in enumerate(times):
            occ = snaps[r, k]
            integrand[k] = (generator_action(occ, phi, alpha, params, t)
                            + np.sum(phi.dt(t, u) * (occ == alpha)) / N)
            pairing[k] = pair_empirical(occ, phi, alpha, t)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times)
                                                     * (integrand[1:] + integrand[:-1]))])
        out[r] = pairing - pairing[0] - integral
    return out[0] if single else out


# ---------------------------------------------------------------------------
# density profiles


@dataclass
class DensityProfile:
    grid: np.ndarray  # x/N
    values: np.ndarray  # (3, N-1)
    stderr: np.ndarray | None = None
    time: float = 0.0
    replicas: int = 1

    @classmethod
    def from_occupancy(cls, occupancy, time: float = 0.0) -> "DensityProfile":
        occ = np.asarray(occupancy)
        N = occ.shape[0] + 1
        vals = np.stack([(occ == s).astype(float) for s in range(3)])
        return cls(np.arange(1, N) / N, vals, None, time, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["u", "rho_A", "rho_B", "rho_E"]
            if self.stderr is not None:
                head += ["stderr_A", "stderr_B", "stderr_E"]
            w.writerow(head)
            for i, u in enumerate(self.grid):
                row = [repr(float(u))] + [repr(float(self.values[s, i])) for s in range(3)]
                if self.stderr is not None:
                    row += [repr(float(self.stderr[s, i])) for s in range(3)]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, time: float = 0.0) -> "DensityProfile":
        data = np.genfromtxt(path, delimiter=",", names=True)
        vals = np.stack([data["rho_A"], data["rho_B"], data["rho_E"]])
        err = None
        if "stderr_A" in data.dtype.names:
            err = np.stack([data["stderr_A"], data["stderr_B"], data["stderr_E"]])
        return cls(np.atleast_1d(data["u"]), np.atleast_2d(vals), err, time)


def profile_from_ensemble(ens: EnsembleResult, k: int) -> DensityProfile:
    """Replica-mean occupation profile at snapshot index ``k`` with standard errors."""
    snaps = ens.snapshots[:, k, :]
    R = snaps.shape[0]
    vals = np.stack([(snaps == s).mean(axis=0) for s in range(3)])
    if R > 1:
        err = np.stack([(snaps == s).std(axis=0, ddof=1) for s in range(3)]) / np.sqrt(R)
    else:
        err = np.zeros_like(vals)
    N = ens.params.N
    return DensityProfile(np.arange(1, N) / N, vals, err, float(ens.times[k]), R)
