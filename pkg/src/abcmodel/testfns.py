"""Analytic test functions phi(t, u) with closed-form derivatives.

Two families:

* ``bump``: ``p(u) * ((u-a)(b-u))^3`` on ``[a, b]``, zero outside.  Compactly
  supported in ``(0, 1)`` when ``0 < a < b < 1``; C^2 across the support edges.
* ``cosine`` / ``affine``: smooth on ``[0, 1]`` with no boundary restriction,
  optionally damped in time by ``exp(-lam * t)``.  These are the Robin-class
  functions; with ``lam != 0`` they are time-dependent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

__all__ = ["TestFunction", "bump", "cosine", "affine", "constant", "dirichlet_family",
           "robin_family"]


@dataclass(frozen=True)
class TestFunction:
    preset: str
    params: tuple = ()
    compact: bool = False
    time_dependent: bool = False
    name: str = field(default="", compare=False)

    # -- evaluation -------------------------------------------------------
    def _space(self, u, order: int) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.preset == "bump":
            a, b, coefs = self.params
            return _bump_derivative(u, a, b, np.asarray(coefs, float), order)
        if self.preset == "cosine":
            k, phase, amp, offset, _ = self.params
            w = k * np.pi
            arg = w * u + phase
            if order == 0:
                return offset + amp * np.cos(arg)
            if order == 1:
                return -amp * w * np.sin(arg)
            return -amp * w * w * np.cos(arg)
        if self.preset == "affine":
            c0, c1, _ = self.params
            if order == 0:
                return c0 + c1 * u
            if order == 1:
                return np.full_like(u, c1)
            return np.zeros_like(u)
        raise ValueError(f"unknown preset {self.preset!r}")

    def _lam(self) -> float:
        return 0.0 if self.preset == "bump" else float(self.params[-1])

    def _time(self, t) -> float:
        return float(np.exp(-self._lam() * t))

    def phi(self, t, u) -> np.ndarray:
        return self._time(t) * self._space(u, 0)

    def dt(self, t, u) -> np.ndarray:
        return -self._lam() * self._time(t) * self._space(u, 0)

    def grad(self, t, u) -> np.ndarray:
        return self._time(t) * self._space(u, 1)

    def lap(self, t, u) -> np.ndarray:
        return self._time(t) * self._space(u, 2)

    def __call__(self, u, t: float = 0.0) -> np.ndarray:
        return self.phi(t, u)

    def label(self) -> str:
        return self.name or f"{self.preset}{self.params}"


def _bump_derivative(u, a, b, coefs, order):
    inside = (u > a) & (u < b)
    uu = np.where(inside, u, 0.5 * (a + b))
    w = (uu - a) * (b - uu)
    w1 = a + b - 2.0 * uu
    B = (w ** 3, 3 * w * w * w1, 6 * w * w1 * w1 - 6 * w * w)
    p = (P.polyval(uu, coefs), P.polyval(uu, P.polyder(coefs, 1)),
         P.polyval(uu, P.polyder(coefs, 2)))
    if order == 0:
        val = p[0] * B[0]
    elif order == 1:
        val = p[1] * B[0] + p[0] * B[1]
    else:
        val = p[2] * B[0] + 2 * p[1] * B[1] + p[0] * B[2]
    return np.where(inside, val, 0.0)


def bump(a: float = 0.2, b: float = 0.8, coefs=(1.0,), scale: bool = True,
         name: str = "") -> TestFunction:
    """Polynomial times ``((u-a)(b-u))^3``; by default rescaled to peak near 1."""
    if not 0.0 < a < b < 1.0:
        raise ValueError("bump support must satisfy 0 < a < b < 1")
    coefs = tuple(float(c) for c in coefs)
    if scale:
        s = ((b - a) / 2.0) ** 6
        coefs = tuple(c / s for c in coefs)
    return TestFunction("bump", (float(a), float(b), coefs), compact=True, name=name)


def cosine(k: float = 1.0, phase: float = 0.0, amp: float = 1.0, offset: float = 0.0,
           lam: float = 0.0, name: str = "") -> TestFunction:
    return TestFunction("cosine", (float(k), float(phase), float(amp), float(offset), float(lam)),
                        time_dependent=lam != 0.0, name=name)


def affine(c0: float = 0.0, c1: float = 1.0, lam: float = 0.0, name: str = "") -> TestFunction:
    return TestFunction("affine", (float(c0), float(c1), float(lam)),
                        time_dependent=lam != 0.0, name=name)


def constant(c: float = 1.0) -> TestFunction:
    return affine(c, 0.0, name="const")


def dirichlet_family() -> list[TestFunction]:
    """Compactly supported presets used by Dirichlet residual checks.

    Support endpoints are dyadic so they fall on cell faces of every grid with
    ``M`` a multiple of 8; the third derivative jumps there and would otherwise
    spoil the midpoint rule."""
    return [
        bump(0.25, 0.75, name="bump"),
        bump(0.125, 0.625, (0.0, 1.0), name="bump_u"),
        bump(0.375, 0.875, (1.0, -1.0, 1.0), name="bump_quad"),
    ]


def robin_family() -> list[TestFunction]:
    """Smooth presets without boundary restriction used by Robin residual checks."""
    return [
        cosine(1.0, name="cos1"),
        cosine(2.0, phase=0.3, offset=0.5, name="cos2"),
        affine(0.5, 1.0, name="affine"),
        cosine(1.0, phase=0.7, lam=1.0, name="cos1_damped"),
    ]
