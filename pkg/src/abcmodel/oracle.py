"""Exact finite-state computations for small lattices (``N <= 7``).

Rates are transcribed here from the two-index reservoir table ``r_{ab}``
(rate weight for the boundary move ``a -> b``) and the list of ordered bulk
pairs.  This is deliberately independent of :class:`abcmodel.simulator.RateTable`
so the two can check each other; a rate table can still be injected through
the ``rates`` argument for negative controls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg

from .species import ModelParams, ReservoirDensities, validate_params

__all__ = [
    "StateSpace",
    "GeneratorMatrix",
    "ProductMeasure",
    "IdentityReport",
    "OracleCapError",
    "build_generator",
    "exact_expectation",
    "exact_distribution",
    "adjoint_left",
    "adjoint_right",
    "numerical_adjoint",
    "relative_entropy",
    "dirichlet_form",
    "dirichlet_form_identity",
    "adjoint_identity",
]

N_MAX = 7
A, B, E = 0, 1, 2


class OracleCapError(ValueError):
    """Lattice too large for dense enumeration."""


@dataclass(frozen=True)
class StateSpace:
    N: int

    def __post_init__(self):
        if self.N > N_MAX:
            raise OracleCapError(f"oracle is capped at N <= {N_MAX}, got N={self.N}")
        if self.N < 3:
            raise ValueError("N must be >= 3")

    @property
    def sites(self) -> int:
        return self.N - 1

    @property
    def size(self) -> int:
        return 3 ** self.sites

    def decode(self, index: int) -> np.ndarray:
        out = np.empty(self.sites, dtype=np.int8)
        for i in range(self.sites):
            index, out[i] = divmod(index, 3)
        return out

    def encode(self, occ) -> int:
        idx = 0
        for i in reversed(range(self.sites)):
            idx = idx * 3 + int(occ[i])
        return idx

    def all_states(self) -> np.ndarray:
        """``(size, N-1)`` array; row ``i`` decodes index ``i``."""
        idx = np.arange(self.size)
        return np.stack([(idx // 3 ** i) % 3 for i in range(self.sites)], axis=1).astype(np.int8)

    def indicator(self, site: int, alpha: int) -> np.ndarray:
        """Values of ``xi^alpha_site`` (1-based site) on every state."""
        return (self.all_states()[:, site - 1] == alpha).astype(float)


@dataclass
class GeneratorMatrix:
    Q: np.ndarray
    parts: frozenset
    space: StateSpace

    def __add__(self, other: "GeneratorMatrix") -> "GeneratorMatrix":
        return GeneratorMatrix(self.Q + other.Q, self.parts | other.parts, self.space)

    def max_row_sum(self) -> float:
        return float(np.max(np.abs(self.Q.sum(axis=1))))

    def min_offdiag(self) -> float:
        off = self.Q - np.diag(np.diag(self.Q))
        return float(off.min())


@dataclass(frozen=True)
class ProductMeasure:
    marginals: np.ndarray  # (N-1, 3)

    def __post_init__(self):
        m = np.asarray(self.marginals, dtype=float)
        object.__setattr__(self, "marginals", m)
        if m.ndim != 2 or m.shape[1] != 3:
            raise ValueError("marginals must have shape (N-1, 3)")
        if np.any(m <= 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each marginal must be a strictly positive probability triple")

    @classmethod
    def constant(cls, triple, N: int) -> "ProductMeasure":
        return cls(np.tile(np.asarray(triple, float), (N - 1, 1)))

    @classmethod
    def from_profile(cls, profile, N: int) -> "ProductMeasure":
        u = np.arange(1, N) / N
        return cls(np.asarray(profile(u), float).T.copy())

    def probabilities(self, space: StateSpace) -> np.ndarray:
        states = space.all_states()
        p = np.ones(space.size)
        for i in range(space.sites):
            p *= self.marginals[i, states[:, i]]
        return p


@dataclass
class IdentityReport:
    name: str
    max_deviation: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max deviation {self.max_deviation:.3e} (tol {self.tolerance:.1e})"


# ---------------------------------------------------------------------------
# rate transcription


def _reservoir_table(r: ReservoirDensities) -> dict[tuple[int, int], float]:
    """``r_{ab}`` under the concentration identification of the reservoir rates."""
    rA, rB, rE = r.as_tuple()
    return {
        (A, B): rB, (E, B): rB,
        (B, E): rE, (A, E): rE,
        (E, A): rA, (B, A): rA,
    }


_SLOW_PAIRS = {(A, B), (B, E), (E, A)}
_FAST_PAIRS = {(B, A), (E, B), (A, E)}


def _bulk_pair_rate(params: ModelParams, a: int, b: int) -> float:
    if (a, b) in _SLOW_PAIRS:
        return 1.0 - params.beta / (2.0 * params.N)
    if (a, b) in _FAST_PAIRS:
        return 1.0 + params.beta / (2.0 * params.N)
    return 0.0


def _flip_rates(params: ModelParams, side: str, s: int) -> tuple[float, float]:
    sym = 1.0 / params.N ** params.delta
    asym = params.beta_tilde / (2.0 * params.N ** params.theta)
    if side == "left":
        table, k_up, k_down = _reservoir_table(params.left), sym + asym, sym - asym
    else:
        table, k_up, k_down = _reservoir_table(params.right), sym - asym, sym + asym
    up, down = (s + 1) % 3, (s - 1) % 3
    return k_up * table[(s, up)], k_down * table[(s, down)]


def _normalize_parts(parts, N: int) -> list:
    if parts is None or parts == "all":
        parts = ("bulk", "left", "right")
    if isinstance(parts, str):
        parts = (parts,)
    out = []
    for p in parts:
        if p == "bulk":
            out.extend(("bond", x) for x in range(1, N - 1))
        elif p in ("left", "right"):
            out.append(p)
        elif isinstance(p, tuple) and p[0] == "bond":
            out.append(p)
        elif isinstance(p, (int, np.integer)):
            out.append(("bond", int(p)))
        else:
            raise ValueError(f"unknown generator part {p!r}")
    return out


def build_generator(params: ModelParams, parts: Iterable | str | None = None,
                    rates=None) -> GeneratorMatrix:
    """Dense microscopic rate matrix (no ``N^2`` factor) of the selected parts.

    ``parts`` mixes ``"bulk"``, ``"left"``, ``"right"`` and single bonds
    ``("bond", x)``.  ``rates`` optionally overrides the transcription with an
    object exposing ``bulk(a, b)`` and ``boundary(side, s)``.
    """
    validate_params(params)
    space = StateSpace(params.N)
    states = space.all_states()
    L = space.sites
    plist = _normalize_parts(parts, params.N)
    Q = np.zeros((space.size, space.size))
    pow3 = 3 ** np.arange(L)
    for i in range(space.size):
        occ = states[i]
        for part in plist:
            if isinstance(part, tuple):
                x = part[1]
                a, b = int(occ[x - 1]), int(occ[x])
                rate = rates.bulk(a, b) if rates is not None else _bulk_pair_rate(params, a, b)
                if rate:
                    j = i + (b - a) * pow3[x - 1] + (a - b) * pow3[x]
                    Q[i, j] += rate
            else:
                k = 0 if part == "left" else L - 1
                s = int(occ[k])
                c_up, c_down = (rates.boundary(part, s) if rates is not None
                                else _flip_rates(params, part, s))
                Q[i, i + (((s + 1) % 3) - s) * pow3[k]] += c_up
                Q[i, i + (((s - 1) % 3) - s) * pow3[k]] += c_down
    Q[np.diag_indices_from(Q)] = 0.0
    Q[np.diag_indices_from(Q)] = -Q.sum(axis=1)
    names = frozenset("bulk" if isinstance(p, tuple) else p for p in plist)
    return GeneratorMatrix(Q, names, space)


# ---------------------------------------------------------------------------
# transient expectations


def exact_distribution(gen: GeneratorMatrix, p0, t: float) -> np.ndarray:
    """Law at macroscopic time ``t`` of the process sped up by ``N^2``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    p0 = np.asarray(p0, dtype=float)
    if t == 0:
        return p0.copy()
    N = gen.space.N
    P = scipy.linalg.expm(gen.Q * (N * N * t))
    pt = p0 @ P
    if not np.all(np.isfinite(pt)) or abs(pt.sum() - p0.sum()) > 1e-10:
        raise ArithmeticError("matrix exponential lost probability mass")
    return pt


def exact_expectation(gen: GeneratorMatrix, p0, observable, t: float) -> np.ndarray | float:
    """``E[obs(eta_t)]``; ``observable`` may be ``(size,)`` or ``(size, k)``."""
    res = exact_distribution(gen, p0, t) @ np.asarray(observable, dtype=float)
    return float(res) if np.ndim(res) == 0 else res


# ---------------------------------------------------------------------------
# adjoints


def numerical_adjoint(gen: GeneratorMatrix, nu: ProductMeasure) -> np.ndarray:
    """``D^{-1} Q^T D`` with ``D = diag(nu)``: the L^2(nu) adjoint."""
    p = nu.probabilities(gen.space)
    return (gen.Q.T * p[None, :]) / p[:, None]


def _analytic_boundary_adjoint(params: ModelParams, nu: ProductMeasure, side: str) -> GeneratorMatrix:
    validate_params(params)
    space = StateSpace(params.N)
    L = space.sites
    k = 0 if side == "left" else L - 1
    r = params.left if side == "left" else params.right
    if nu.marginals.shape[0] != L:
        raise ValueError("product measure size does not match N")
    if np.max(np.abs(nu.marginals[k] - np.asarray(r.as_tuple()))) > 1e-12:
        raise ValueError(f"{side} marginal of the reference measure must equal the reservoir triple")
    sym = 1.0 / params.N ** params.delta
    asym = params.beta_tilde / (2.0 * params.N ** params.theta)
    # coefficients of the forward flip terms
    k_up, k_down = (sym + asym, sym - asym) if side == "left" else (sym - asym, sym + asym)
    table = _reservoir_table(r)
    states = space.all_states()
    pow3 = 3 ** np.arange(L)
    Q = np.zeros((space.size, space.size))
    rA, rB, rE = r.as_tuple()
    # multiplicative term: for the left side (beta_tilde/N^theta) * [xi^A(r_E-r_B) + ...]
    mult = {A: rE - rB, B: rA - rE, E: rB - rA}
    for i in range(space.size):
        s = int(states[i, k])
        up, down = (s + 1) % 3, (s - 1) % 3
        # adjoint swaps the sign of the asymmetric part on the flip coefficients
        Q[i, i + (up - s) * pow3[k]] += k_down * table[(s, up)]
        Q[i, i + (down - s) * pow3[k]] += k_up * table[(s, down)]
        Q[i, i] -= k_down * table[(s, up)] + k_up * table[(s, down)]
        Q[i, i] += (k_up - k_down) * mult[s]
    return GeneratorMatrix(Q, frozenset({side + "*"}), space)


def adjoint_left(params: ModelParams, nu: ProductMeasure) -> GeneratorMatrix:
    """Closed-form ``L^{L,*}`` in ``L^2(nu)``; ``nu`` must equal the reservoir at site 1."""
    return _analytic_boundary_adjoint(params, nu, "left")


def adjoint_right(params: ModelParams, nu: ProductMeasure) -> GeneratorMatrix:
    """Closed-form ``L^{R,*}``; ``nu`` must equal the right reservoir at site N-1."""
    return _analytic_boundary_adjoint(params, nu, "right")


def adjoint_identity(params: ModelParams, nu: ProductMeasure, side: str,
                     rng: np.random.Generator, pairs: int = 100, rates=None,
                     tol: float = 1e-12) -> IdentityReport:
    """Max relative gap in ``<L f, g>_nu = <f, L* g>_nu`` over random pairs."""
    gen = build_generator(params, side, rates)
    adj = _analytic_boundary_adjoint(params, nu, side)
    p = nu.probabilities(gen.space)
    worst = 0.0
    for _ in range(pairs):
        f = rng.normal(size=gen.space.size)
        g = rng.normal(size=gen.space.size)
        lhs = np.sum(p * (gen.Q @ f) * g)
        rhs = np.sum(p * f * (adj.Q @ g))
        scale = np.sum(p * np.abs(gen.Q @ f) * np.abs(g)) + np.sum(p * np.abs(f) * np.abs(adj.Q @ g))
        worst = max(worst, abs(lhs - rhs) / max(scale, 1e-300))
    return IdentityReport(f"adjoint_{side}", worst, tol, {"pairs": pairs})


# ---------------------------------------------------------------------------
# entropy and Dirichlet forms


def relative_entropy(mu, nu: ProductMeasure | np.ndarray, space: StateSpace | None = None) -> float:
    mu = np.asarray(mu, dtype=float)
    if isinstance(nu, ProductMeasure):
        space = space or StateSpace(nu.marginals.shape[0] + 1)
        nu = nu.probabilities(space)
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("reference measure must be strictly positive")
    mask = mu > 0
    return float(np.sum(mu[mask] * np.log(mu[mask] / nu[mask])))


def dirichlet_form(gen: GeneratorMatrix, nu: ProductMeasure, f) -> float:
    """``sum_eta nu(eta) sum_eta' c(eta, eta') (sqrt f(eta') - sqrt f(eta))^2``."""
    p = nu.probabilities(gen.space)
    sf = np.sqrt(np.asarray(f, dtype=float))
    off = gen.Q - np.diag(np.diag(gen.Q))
    diff2 = (sf[None, :] - sf[:, None]) ** 2
    return float(np.sum(p[:, None] * off * diff2))


def dirichlet_form_identity(params: ModelParams, nu: ProductMeasure, f,
                            tol: float = 1e-12) -> list[IdentityReport]:
    """Check ``<L sqrt f, sqrt f>_nu = -D/2 + (1/2) int L f dnu`` for every sub-generator.

    The left side is an inner product with the generator; the right side is
    assembled from the quadratic form and the jump-rate integral of ``f``.
    """
    if params.N > 6:
        raise OracleCapError("Dirichlet-form identity is run for N <= 6")
    space = StateSpace(params.N)
    p = nu.probabilities(space)
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or abs(np.sum(p * f) - 1.0) > 1e-10:
        raise ValueError("f must be a nonnegative density with respect to nu")
    sf = np.sqrt(f)
    parts = ["left", "right"] + [("bond", x) for x in range(1, params.N - 1)]
    reports = []
    for part in parts:
        gen = build_generator(params, [part])
        off = gen.Q - np.diag(np.diag(gen.Q))
        lhs = float(np.sum(p * (gen.Q @ sf) * sf))
        D = dirichlet_form(gen, nu, f)
        jump = float(np.sum(p[:, None] * off * (f[None, :] - f[:, None])))
        rhs = -0.5 * D + 0.5 * jump
        scale = max(1.0, abs(lhs), abs(D), abs(jump))
        name = part if isinstance(part, str) else f"bond{part[1]}"
        reports.append(IdentityReport(f"dirichlet_form_{name}", abs(lhs - rhs) / scale, tol,
                                      {"D": D, "nonnegative": D >= -1e-15}))
    return reports
