"""Species algebra, model parameters and boundary-regime classification.

Species are encoded as small integers ``A=0, B=1, E=2`` so that the cyclic
successor ``alpha + k`` is plain arithmetic mod 3.  Everything here is
immutable.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

__all__ = [
    "Species",
    "cyclic_next",
    "ReservoirDensities",
    "ModelParams",
    "RegimeSpec",
    "RegimeKind",
    "ParameterError",
    "ExponentOrderError",
    "BoundaryAsymmetryError",
    "NegativeRateError",
    "ReservoirDensityError",
    "validate_params",
    "classify_regime",
]

SUM_TOL = 1e-12
# exponents are compared to 1 with this slack so 1.0 read from text files classifies cleanly
EXPONENT_TOL = 1e-12


class Species(enum.IntEnum):
    A = 0
    B = 1
    E = 2  # empty site (the "C" species of the torus model)

    @property
    def label(self) -> str:
        return self.name


def cyclic_next(s: Species | int, k: int = 1) -> Species:
    """Return ``s + k`` in the cyclic order A -> B -> E -> A (``k`` taken mod 3)."""
    return Species((int(s) + k) % 3)


class ParameterError(ValueError):
    """Base class for rejected model parameters."""


class ExponentOrderError(ParameterError):
    """theta >= delta and theta >= 1 violated."""


class BoundaryAsymmetryError(ParameterError):
    """beta_tilde >= 2 while theta == delta."""


class NegativeRateError(ParameterError):
    """Some jump rate would be negative at this finite N."""


class ReservoirDensityError(ParameterError):
    """Reservoir triple is not a strictly positive probability vector."""


@dataclass(frozen=True)
class ReservoirDensities:
    rA: float
    rB: float
    rE: float

    def __post_init__(self):
        vals = (self.rA, self.rB, self.rE)
        if any(not math.isfinite(v) or v <= 0.0 or v >= 1.0 for v in vals):
            raise ReservoirDensityError(
                f"reservoir densities must lie in (0, 1), got {vals}")
        if abs(sum(vals) - 1.0) > SUM_TOL:
            raise ReservoirDensityError(
                f"reservoir densities must sum to 1, got sum={sum(vals)!r}")

    def __getitem__(self, s: Species | int) -> float:
        return (self.rA, self.rB, self.rE)[int(s) % 3]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rA, self.rB, self.rE)

    @classmethod
    def from_seq(cls, seq) -> "ReservoirDensities":
        a, b, e = (float(v) for v in seq)
        return cls(a, b, e)


@dataclass(frozen=True)
class ModelParams:
    N: int
    beta: float
    beta_tilde: float
    theta: float
    delta: float
    left: ReservoirDensities
    right: ReservoirDensities

    @property
    def sites(self) -> int:
        return self.N - 1

    @property
    def bulk_slow(self) -> float:
        """Rate of an ordered pair (alpha, alpha+1)."""
        return 1.0 - self.beta / (2.0 * self.N)

    @property
    def bulk_fast(self) -> float:
        """Rate of an inverted pair (alpha+1, alpha)."""
        return 1.0 + self.beta / (2.0 * self.N)

    @property
    def boundary_sym(self) -> float:
        return self.N ** (-self.delta)

    @property
    def boundary_asym(self) -> float:
        return self.beta_tilde / (2.0 * self.N ** self.theta)

    def replace(self, **changes) -> "ModelParams":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return ModelParams(**data)


class RegimeKind(str, enum.Enum):
    DIRICHLET = "dirichlet"
    ROBIN = "robin"


@dataclass(frozen=True)
class RegimeSpec:
    kind: RegimeKind
    kappa1: float = 0.0
    kappa2: float = 0.0
    # set for theta = delta = 1 with beta_tilde >= 4/3: the model is defined
    # there but uniqueness of the limit equation is not established
    uniqueness_unproved: bool = False
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("Robin coefficients must be nonnegative")
        if self.kind is RegimeKind.DIRICHLET and (self.kappa1 or self.kappa2):
            raise ValueError("Dirichlet regime carries no Robin coefficients")

    @property
    def is_dirichlet(self) -> bool:
        return self.kind is RegimeKind.DIRICHLET

    @classmethod
    def dirichlet(cls) -> "RegimeSpec":
        return cls(RegimeKind.DIRICHLET, label="a")

    @classmethod
    def robin(cls, kappa1: float, kappa2: float, label: str = "",
              uniqueness_unproved: bool = False) -> "RegimeSpec":
        return cls(RegimeKind.ROBIN, float(kappa1), float(kappa2),
                   uniqueness_unproved, label)


def _check_exponents(theta: float, delta: float) -> None:
    if theta < 1.0 - EXPONENT_TOL:
        raise ExponentOrderError(f"theta >= 1 required, got theta={theta}")
    if theta < delta - EXPONENT_TOL:
        raise ExponentOrderError(
            f"theta >= delta required, got theta={theta}, delta={delta}")


def validate_params(p: ModelParams) -> ModelParams:
    """Check every invariant of :class:`ModelParams`; return ``p`` unchanged."""
    if int(p.N) != p.N or p.N < 3:
        raise ParameterError(f"N must be an integer >= 3, got {p.N}")
    if p.beta < 0 or p.beta_tilde < 0:
        raise ParameterError("beta and beta_tilde must be nonnegative")
    _check_exponents(p.theta, p.delta)
    if abs(p.theta - p.delta) <= EXPONENT_TOL and p.beta_tilde >= 2.0:
        raise BoundaryAsymmetryError(
            f"theta == delta requires beta_tilde < 2, got {p.beta_tilde}")
    if p.beta / (2.0 * p.N) >= 1.0:
        raise NegativeRateError(
            f"beta/(2N) = {p.beta / (2.0 * p.N)} >= 1 makes bulk rates vanish or go negative")
    if p.beta_tilde / (2.0 * p.N ** (p.theta - p.delta)) > 1.0:
        raise NegativeRateError(
            "beta_tilde/(2 N^(theta-delta)) > 1 makes a boundary rate negative at N="
            f"{p.N}")
    for side, r in (("left", p.left), ("right", p.right)):
        vals = r.as_tuple()
        if any(v <= 0 for v in vals) or abs(sum(vals) - 1.0) > SUM_TOL:
            raise ReservoirDensityError(f"{side} reservoir densities invalid: {vals}")
    return p


def classify_regime(theta: float, delta: float, beta_tilde: float) -> RegimeSpec:
    """Boundary condition of the hydrodynamic equation for the given exponents."""
    _check_exponents(theta, delta)
    if delta < 1.0 - EXPONENT_TOL:
        return RegimeSpec.dirichlet()
    if delta > 1.0 + EXPONENT_TOL:
        return RegimeSpec.robin(0.0, 0.0, label="b1")
    if abs(theta - 1.0) <= EXPONENT_TOL:
        return RegimeSpec.robin(beta_tilde / 2.0, 1.0, label="b2",
                                uniqueness_unproved=beta_tilde >= 4.0 / 3.0)
    return RegimeSpec.robin(0.0, 1.0, label="b3")
