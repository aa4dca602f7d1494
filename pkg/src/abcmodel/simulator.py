"""Continuous-time simulation of the boundary-driven ABC exclusion process.

The process runs with generator ``N^2 L_N`` so every time seen by callers is
macroscopic.  Sites are ``1..N-1``; internally the occupancy array is
0-based, ``occ[x-1]`` holding the species at site ``x`` (``A=0, B=1, E=2``).

Sampling is class-partitioned: the total rate splits into a bulk part and a
boundary part.  A bulk event picks a bond uniformly and accepts it with
probability ``rate / (1 + beta/2N)``; boundary events come from an exact
four-entry table.  Holding times are ``Exp(N^2 * total)``.

Two implementations share this algorithm: a readable per-event API
(:class:`LatticeState`, :func:`step`) and a numba kernel used by
:func:`simulate` and :func:`simulate_ensemble`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .species import ModelParams, validate_params

__all__ = [
    "RateTable",
    "LatticeState",
    "EventOutcome",
    "Trajectory",
    "EnsembleResult",
    "DynkinTables",
    "RateCacheError",
    "bulk_rate",
    "boundary_rates",
    "apply_swap",
    "apply_flip",
    "step",
    "sample_initial",
    "simulate",
    "simulate_ensemble",
    "replica_seed",
    "profile_cdf",
]

RESYNC_EVERY = 1_000_000
CACHE_RTOL = 1e-9


class RateCacheError(RuntimeError):
    """Cached rate sums drifted from the recomputed values."""


# ---------------------------------------------------------------------------
# rate table


@dataclass(frozen=True)
class RateTable:
    """Microscopic jump rates (before the ``N^2`` speed-up) for one parameter set."""

    params: ModelParams

    def bulk(self, a: int, b: int) -> float:
        """Rate of swapping the ordered pair ``(eta(x), eta(x+1)) = (a, b)``."""
        if a == b:
            return 0.0
        if (b - a) % 3 == 1:  # (alpha, alpha+1)
            return self.params.bulk_slow
        return self.params.bulk_fast

    def boundary(self, side: str, s: int) -> tuple[float, float]:
        """``(c_plus, c_minus)`` at the left (site 1) or right (site N-1) boundary."""
        p = self.params
        sym, asym = p.boundary_sym, p.boundary_asym
        if side == "left":
            r, up, down = p.left, sym + asym, sym - asym
        elif side == "right":
            r, up, down = p.right, sym - asym, sym + asym
        else:
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        # upgrade s -> s+1 is weighted by r_{s+1}, downgrade s -> s-1 by r_{s-1}
        return up * r[(s + 1) % 3], down * r[(s + 2) % 3]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense tables for the kernel: bulk[3,3], plus[2,3], minus[2,3]."""
        bulk = np.array([[self.bulk(a, b) for b in range(3)] for a in range(3)])
        plus = np.empty((2, 3))
        minus = np.empty((2, 3))
        for i, side in enumerate(("left", "right")):
            for s in range(3):
                plus[i, s], minus[i, s] = self.boundary(side, s)
        return bulk, plus, minus

    @property
    def bulk_envelope(self) -> float:
        return self.params.bulk_fast


RatesFactory = Callable[[ModelParams], RateTable]


# ---------------------------------------------------------------------------
# per-event API


@dataclass
class LatticeState:
    params: ModelParams
    occupancy: np.ndarray
    clock: float = 0.0
    rates: RateTable | None = None
    bulk_rate_sum: float = field(init=False, default=0.0)
    boundary_rate_sum: float = field(init=False, default=0.0)
    events_since_sync: int = field(init=False, default=0)

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=np.int8).copy()
        if self.occupancy.shape != (self.params.N - 1,):
            raise ValueError(
                f"occupancy must have length N-1={self.params.N - 1}, "
                f"got {self.occupancy.shape}")
        if self.rates is None:
            self.rates = RateTable(self.params)
        self.resync()

    @property
    def N(self) -> int:
        return self.params.N

    def site(self, x: int) -> int:
        return int(self.occupancy[x - 1])

    def recompute_sums(self) -> tuple[float, float]:
        occ = self.occupancy
        bulk = sum(self.rates.bulk(int(occ[i]), int(occ[i + 1])) for i in range(len(occ) - 1))
        bnd = sum(boundary_rates(self, 1)) + sum(boundary_rates(self, self.N - 1))
        return bulk, bnd

    def resync(self) -> None:
        self.bulk_rate_sum, self.boundary_rate_sum = self.recompute_sums()
        self.events_since_sync = 0

    def check_caches(self) -> None:
        bulk, bnd = self.recompute_sums()
        for cached, fresh, name in ((self.bulk_rate_sum, bulk, "bulk"),
                                    (self.boundary_rate_sum, bnd, "boundary")):
            if abs(cached - fresh) > CACHE_RTOL * max(1.0, abs(fresh)):
                raise RateCacheError(f"{name} rate cache {cached!r} != recomputed {fresh!r}")

    def counts(self) -> np.ndarray:
        return np.bincount(self.occupancy, minlength=3)

    def copy(self) -> "LatticeState":
        return LatticeState(self.params, self.occupancy.copy(), self.clock, self.rates)


@dataclass(frozen=True)
class EventOutcome:
    kind: str  # "swap" or "flip"
    site: int  # bond x for swaps (x, x+1); boundary site for flips
    direction: int = 0  # +1 / -1 for flips
    waiting_time: float = 0.0


def _check_bond(state: LatticeState, x: int) -> None:
    if not 1 <= x <= state.N - 2:
        raise IndexError(f"bond index {x} outside 1..{state.N - 2}")


def _check_boundary_site(state: LatticeState, site: int) -> str:
    if site == 1:
        return "left"
    if site == state.N - 1:
        return "right"
    raise IndexError(f"site {site} is not a boundary site (1 or {state.N - 1})")


def bulk_rate(state: LatticeState, x: int) -> float:
    _check_bond(state, x)
    return state.rates.bulk(state.site(x), state.site(x + 1))


def boundary_rates(state: LatticeState, site: int) -> tuple[float, float]:
    side = _check_boundary_site(state, site)
    return state.rates.boundary(side, state.site(site))


def _local_bulk(state: LatticeState, lo: int, hi: int) -> float:
    """Sum of bond rates over bonds lo..hi clipped to 1..N-2."""
    return sum(bulk_rate(state, b) for b in range(max(lo, 1), min(hi, state.N - 2) + 1))


def _boundary_total(state: LatticeState, site: int) -> float:
    return sum(boundary_rates(state, site))


def apply_swap(state: LatticeState, x: int) -> LatticeState:
    _check_bond(state, x)
    before = _local_bulk(state, x - 1, x + 1)
    touched = [s for s in (1, state.N - 1) if s in (x, x + 1)]
    bnd_before = sum(_boundary_total(state, s) for s in touched)
    occ = state.occupancy
    occ[x - 1], occ[x] = occ[x], occ[x - 1]
    state.bulk_rate_sum += _local_bulk(state, x - 1, x + 1) - before
    state.boundary_rate_sum += sum(_boundary_total(state, s) for s in touched) - bnd_before
    _count_event(state)
    return state


def apply_flip(state: LatticeState, site: int, direction: int) -> LatticeState:
    _check_boundary_site(state, site)
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    before = _local_bulk(state, site - 1, site)
    bnd_before = _boundary_total(state, site)
    state.occupancy[site - 1] = (state.occupancy[site - 1] + direction) % 3
    state.bulk_rate_sum += _local_bulk(state, site - 1, site) - before
    state.boundary_rate_sum += _boundary_total(state, site) - bnd_before
    _count_event(state)
    return state


def _count_event(state: LatticeState) -> None:
    state.events_since_sync += 1
    if state.events_since_sync >= RESYNC_EVERY:
        state.check_caches()
        state.resync()


def step(state: LatticeState, rng: np.random.Generator) -> EventOutcome:
    """Sample and apply the next event; advance the macroscopic clock."""
    total = state.bulk_rate_sum + state.boundary_rate_sum
    if not total > 0.0:
        raise RateCacheError(f"total rate {total!r} is not positive")
    n2 = float(state.N) ** 2
    wait = rng.exponential() / (n2 * total)
    state.clock += wait
    u = rng.random() * total
    if u < state.bulk_rate_sum:
        envelope = state.rates.bulk_envelope
        nb = state.N - 2
        while True:
            x = int(rng.integers(nb)) + 1
            if rng.random() * envelope < bulk_rate(state, x):
                break
        apply_swap(state, x)
        return EventOutcome("swap", x, 0, wait)
    u -= state.bulk_rate_sum
    for site in (1, state.N - 1):
        c_plus, c_minus = boundary_rates(state, site)
        if u < c_plus:
            apply_flip(state, site, +1)
            return EventOutcome("flip", site, +1, wait)
        u -= c_plus
        if u < c_minus or site == state.N - 1:
            apply_flip(state, site, -1)
            return EventOutcome("flip", site, -1, wait)
        u -= c_minus
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# initial configurations


def profile_cdf(profile: Callable[[np.ndarray], np.ndarray] | Sequence, N: int) -> np.ndarray:
    """Per-site cumulative probabilities ``[P(A), P(A)+P(B)]`` at ``x/N``.

    ``profile`` maps an array of positions to a ``(3, n)`` array, is a
    tabulated ``(3, N-1)`` array, or is a constant triple.
    """
    u = np.arange(1, N) / N
    if callable(profile):
        probs = np.asarray(profile(u), dtype=float)
    elif np.ndim(profile) == 2:
        probs = np.asarray(profile, dtype=float)
    else:
        probs = np.repeat(np.asarray(profile, dtype=float).reshape(3, 1), N - 1, axis=1)
    if probs.shape != (3, N - 1):
        raise ValueError(f"profile must evaluate to shape (3, {N - 1}), got {probs.shape}")
    if np.any(probs < -1e-12) or np.any(np.abs(probs.sum(axis=0) - 1.0) > 1e-9):
        bad = int(np.argmax(np.abs(probs.sum(axis=0) - 1.0) + (probs.min(axis=0) < 0)))
        raise ValueError(f"profile is not a probability triple at u={u[bad]:.6g}")
    return np.cumsum(np.clip(probs, 0.0, 1.0), axis=0)[:2].T.copy()


def sample_initial(profile, N: int, rng: np.random.Generator) -> np.ndarray:
    """Product-measure sample with marginals ``profile(x/N)``."""
    cdf = profile_cdf(profile, N)
    u = rng.random(N - 1)
    return ((u >= cdf[:, 0]).astype(np.int8) + (u >= cdf[:, 1]).astype(np.int8)).astype(np.int8)


def replica_seed(base_seed: int, k: int) -> int:
    """32-bit kernel seed for replica ``k``, hashed from ``base_seed``."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(k)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# numba kernel


@njit(cache=True)
def _local_gen(occ, lo, hi, out, site_coef, bond_coef, g_tab, left_tab, right_tab):
    """Add the generator-expansion terms touching sites lo..hi (0-based) to out[3]."""
    L = occ.shape[0]
    for i in range(lo, hi + 1):
        out[occ[i]] += site_coef[i]
    b_lo = lo - 1 if lo > 0 else 0
    b_hi = hi if hi < L - 1 else L - 2
    for b in range(b_lo, b_hi + 1):
        a = occ[b]
        c = occ[b + 1]
        for s in range(3):
            out[s] += bond_coef[b] * g_tab[s, a, c]
    if lo == 0:
        for s in range(3):
            out[s] += left_tab[s, occ[0]]
    if hi == L - 1:
        for s in range(3):
            out[s] += right_tab[s, occ[L - 1]]


@njit(cache=True)
def _bulk_sum(occ, bulk):
    acc = 0.0
    for b in range(occ.shape[0] - 1):
        acc += bulk[occ[b], occ[b + 1]]
    return acc


@njit(cache=True)
def _run_one(occ, bulk, plus, minus, n2, times, snaps, dyn_on, site_coef, bond_coef,
             g_tab, left_tab, right_tab, pair_coef, dyn_int, dyn_pair):
    """Advance ``occ`` in place through the schedule ``times``; returns event count."""
    L = occ.shape[0]
    nb = L - 1
    envelope = 0.0
    for a in range(3):
        for c in range(3):
            if bulk[a, c] > envelope:
                envelope = bulk[a, c]
    bulk_sum = _bulk_sum(occ, bulk)
    bnd_sum = plus[0, occ[0]] + minus[0, occ[0]] + plus[1, occ[L - 1]] + minus[1, occ[L - 1]]
    gen = np.zeros(3)
    tmp = np.zeros(3)
    acc = np.zeros(3)
    if dyn_on:
        _local_gen(occ, 0, L - 1, gen, site_coef, bond_coef, g_tab, left_tab, right_tab)
    t = 0.0
    k = 0
    n_snap = times.shape[0]
    events = 0
    since_sync = 0
    while k < n_snap:
        total = bulk_sum + bnd_sum
        t_next = t + np.random.exponential(1.0) / (n2 * total)
        while k < n_snap and t_next > times[k]:
            if dyn_on:
                for s in range(3):
                    acc[s] += gen[s] * (times[k] - t)
                t = times[k]
                for s in range(3):
                    dyn_int[k, s] = acc[s]
                    dyn_pair[k, s] = 0.0
                for i in range(L):
                    dyn_pair[k, occ[i]] += pair_coef[i]
            for i in range(L):
                snaps[k, i] = occ[i]
            k += 1
        if k >= n_snap:
            break
        if dyn_on:
            for s in range(3):
                acc[s] += gen[s] * (t_next - t)
        t = t_next
        u = np.random.random() * total
        if u < bulk_sum:
            while True:
                b = np.random.randint(0, nb)
                if np.random.random() * envelope < bulk[occ[b], occ[b + 1]]:
                    break
            lo = b
            hi = b + 1
            old = 0.0
            for j in range(max(b - 1, 0), min(b + 1, nb - 1) + 1):
                old += bulk[occ[j], occ[j + 1]]
            old_bnd = 0.0
            if lo == 0:
                old_bnd += plus[0, occ[0]] + minus[0, occ[0]]
            if hi == L - 1:
                old_bnd += plus[1, occ[L - 1]] + minus[1, occ[L - 1]]
            if dyn_on:
                tmp[:] = 0.0
                _local_gen(occ, lo, hi, tmp, site_coef, bond_coef, g_tab, left_tab, right_tab)
                gen -= tmp
            sa = occ[b]
            occ[b] = occ[b + 1]
            occ[b + 1] = sa
            new = 0.0
            for j in range(max(b - 1, 0), min(b + 1, nb - 1) + 1):
                new += bulk[occ[j], occ[j + 1]]
            new_bnd = 0.0
            if lo == 0:
                new_bnd += plus[0, occ[0]] + minus[0, occ[0]]
            if hi == L - 1:
                new_bnd += plus[1, occ[L - 1]] + minus[1, occ[L - 1]]
            bulk_sum += new - old
            bnd_sum += new_bnd - old_bnd
        else:
            u -= bulk_sum
            s0 = occ[0]
            sL = occ[L - 1]
            if u < plus[0, s0]:
                i, d = 0, 1
            elif u < plus[0, s0] + minus[0, s0]:
                i, d = 0, 2
            elif u < plus[0, s0] + minus[0, s0] + plus[1, sL]:
                i, d = L - 1, 1
            else:
                i, d = L - 1, 2
            old = 0.0
            for j in range(max(i - 1, 0), min(i, nb - 1) + 1):
                old += bulk[occ[j], occ[j + 1]]
            if dyn_on:
                tmp[:] = 0.0
                _local_gen(occ, i, i, tmp, site_coef, bond_coef, g_tab, left_tab, right_tab)
                gen -= tmp
            lo = i
            hi = i
            occ[i] = (occ[i] + d) % 3
            new = 0.0
            for j in range(max(i - 1, 0), min(i, nb - 1) + 1):
                new += bulk[occ[j], occ[j + 1]]
            bulk_sum += new - old
            bnd_sum = (plus[0, occ[0]] + minus[0, occ[0]]
                       + plus[1, occ[L - 1]] + minus[1, occ[L - 1]])
        if dyn_on:
            tmp[:] = 0.0
            _local_gen(occ, lo, hi, tmp, site_coef, bond_coef, g_tab, left_tab, right_tab)
            gen += tmp
        events += 1
        since_sync += 1
        if since_sync >= 1_000_000:
            fresh = _bulk_sum(occ, bulk)
            if abs(fresh - bulk_sum) > 1e-9 * max(1.0, fresh):
                raise RuntimeError("bulk rate cache drifted")
            bulk_sum = fresh
            since_sync = 0
    return events


@njit(cache=True)
def _run_ensemble(seeds, init, init_cdf, sample_init, bulk, plus, minus, n2, times, snaps,
                  finals, events, dyn_on, site_coef, bond_coef, g_tab, left_tab, right_tab,
                  pair_coef, dyn_int, dyn_pair):
    L = init.shape[0]
    occ = np.empty(L, dtype=np.int8)
    for r in range(seeds.shape[0]):
        np.random.seed(seeds[r])
        if sample_init:
            for i in range(L):
                u = np.random.random()
                s = 0
                if u >= init_cdf[i, 0]:
                    s += 1
                if u >= init_cdf[i, 1]:
                    s += 1
                occ[i] = s
        else:
            for i in range(L):
                occ[i] = init[i]
        events[r] = _run_one(occ, bulk, plus, minus, n2, times, snaps[r], dyn_on, site_coef,
                             bond_coef, g_tab, left_tab, right_tab, pair_coef, dyn_int[r],
                             dyn_pair[r])
        for i in range(L):
            finals[r, i] = occ[i]


# ---------------------------------------------------------------------------
# public drivers


@dataclass(frozen=True)
class DynkinTables:
    """Precomputed pieces of ``N^2 L_N <pi^alpha, phi>`` for a static test function.

    With 0-based site index ``i`` (site ``i+1``) the generator applied to the
    pairing equals, for each species ``alpha``::

        sum_i xi^alpha_i site[i] + sum_b bond[b] g[alpha, eta_b, eta_b+1]
        + left[alpha, eta_0] + right[alpha, eta_{L-1}]

    and ``pair[i]`` are the weights of ``<pi, phi>``.
    """

    site: np.ndarray
    bond: np.ndarray
    g: np.ndarray
    left: np.ndarray
    right: np.ndarray
    pair: np.ndarray


def _empty_dynkin(L: int) -> DynkinTables:
    return DynkinTables(np.zeros(L), np.zeros(max(L - 1, 1)), np.zeros((3, 3, 3)),
                        np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(L))


@dataclass
class Trajectory:
    params: ModelParams
    seed: int
    times: np.ndarray
    snapshots: np.ndarray  # (n_snap, N-1) int8
    final: np.ndarray
    t_end: float
    event_count: int
    dynkin_integral: np.ndarray | None = None  # (n_snap, 3)
    dynkin_pairing: np.ndarray | None = None  # (n_snap, 3)

    def write(self, path) -> None:
        from .harness.io import write_trajectory
        write_trajectory(path, self)


@dataclass
class EnsembleResult:
    params: ModelParams
    base_seed: int
    replica_ids: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray  # (R, n_snap, N-1) int8
    finals: np.ndarray  # (R, N-1)
    event_counts: np.ndarray
    dynkin_integral: np.ndarray | None = None  # (R, n_snap, 3)
    dynkin_pairing: np.ndarray | None = None

    @property
    def replicas(self) -> int:
        return int(self.replica_ids.shape[0])

    def martingale(self) -> np.ndarray:
        """``<pi_t, phi> - <pi_0, phi> - int_0^t N^2 L <pi_s, phi> ds``, shape (R, n_snap, 3)."""
        if self.dynkin_integral is None:
            raise ValueError("ensemble was run without a test function")
        pair = self.dynkin_pairing
        return pair - pair[:, :1, :] - self.dynkin_integral

    @classmethod
    def concatenate(cls, parts: Sequence["EnsembleResult"]) -> "EnsembleResult":
        parts = sorted(parts, key=lambda p: int(p.replica_ids[0]) if p.replicas else 0)
        first = parts[0]
        cat = lambda name: (None if getattr(first, name) is None
                            else np.concatenate([getattr(p, name) for p in parts]))
        return cls(first.params, first.base_seed, cat("replica_ids"), first.times,
                   cat("snapshots"), cat("finals"), cat("event_counts"),
                   cat("dynkin_integral"), cat("dynkin_pairing"))


def _schedule(snapshot_times, t_end: float) -> tuple[np.ndarray, bool]:
    times = np.asarray(sorted(float(t) for t in snapshot_times), dtype=float)
    if t_end < 0 or not math.isfinite(t_end):
        raise ValueError(f"t_end must be finite and nonnegative, got {t_end}")
    if times.size and (times[0] < 0 or times[-1] > t_end + 1e-15):
        raise ValueError("snapshot times must lie in [0, t_end]")
    appended = not times.size or times[-1] < t_end
    if appended:
        times = np.append(times, t_end)
    return times, appended


def simulate_ensemble(params: ModelParams, initial, t_end: float, snapshot_times,
                      base_seed: int, replicas: int | Sequence[int],
                      rates: RateTable | None = None,
                      dynkin: DynkinTables | None = None) -> EnsembleResult:
    """Run independent replicas with seeds ``replica_seed(base_seed, k)``.

    ``initial`` is either a fixed occupancy array of length ``N-1`` or a
    profile (callable or constant triple) sampled per replica from that
    replica's own stream.  ``replicas`` is a count or an explicit list of
    replica indices, so a split run merges to the same result.
    """
    validate_params(params)
    N = params.N
    L = N - 1
    ids = (np.arange(replicas) if np.isscalar(replicas)
           else np.asarray(list(replicas), dtype=np.int64))
    times, appended = _schedule(snapshot_times, t_end)
    rates = rates or RateTable(params)
    bulk, plus, minus = rates.arrays()
    if np.any(bulk < 0) or np.any(plus < 0) or np.any(minus < 0):
        raise ValueError("rate table has negative entries")

    arr = None if callable(initial) else np.asarray(initial)
    if arr is not None and arr.ndim == 1 and arr.shape[0] == L and arr.dtype.kind in "iu":
        init = arr.astype(np.int8)
        cdf = np.zeros((L, 2))
        sample = False
    else:
        init = np.zeros(L, dtype=np.int8)
        cdf = profile_cdf(initial, N)
        sample = True

    R = ids.shape[0]
    seeds = np.array([replica_seed(base_seed, int(k)) for k in ids], dtype=np.int64)
    n_snap = times.shape[0]
    snaps = np.empty((R, n_snap, L), dtype=np.int8)
    finals = np.empty((R, L), dtype=np.int8)
    events = np.zeros(R, dtype=np.int64)
    dyn_on = dynkin is not None
    tabs = dynkin if dyn_on else _empty_dynkin(L)
    dyn_int = np.zeros((R, n_snap, 3))
    dyn_pair = np.zeros((R, n_snap, 3))
    _run_ensemble(seeds, init, cdf, sample, bulk, plus, minus, float(N) ** 2, times, snaps,
                  finals, events, dyn_on, tabs.site, tabs.bond, tabs.g, tabs.left, tabs.right,
                  tabs.pair, dyn_int, dyn_pair)
    keep = slice(0, n_snap - 1) if appended else slice(0, n_snap)
    return EnsembleResult(params, int(base_seed), ids, times[keep], snaps[:, keep], finals,
                          events, dyn_int[:, keep] if dyn_on else None,
                          dyn_pair[:, keep] if dyn_on else None)


def simulate(params: ModelParams, initial, t_end: float, snapshot_times, seed: int,
             rates: RateTable | None = None,
             dynkin: DynkinTables | None = None) -> Trajectory:
    """Single trajectory; identical to replica ``0`` of :func:`simulate_ensemble`."""
    ens = simulate_ensemble(params, initial, t_end, snapshot_times, seed, [0], rates, dynkin)
    return Trajectory(params, int(seed), ens.times, ens.snapshots[0], ens.finals[0],
                      float(t_end), int(ens.event_counts[0]),
                      None if ens.dynkin_integral is None else ens.dynkin_integral[0],
                      None if ens.dynkin_pairing is None else ens.dynkin_pairing[0])
