"""Concave valuation families for contributor preferences over funded projects.

Three strictly increasing, strictly concave families are provided so that
equilibrium experiments can pick whichever marginal behaviour they need.
``LOG1P`` has a finite marginal at zero funding, which lets instances with
unfunded projects stay free of singularities; ``SQRT`` and ``POWER`` have the
classic diverging marginal at zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class UtilityFamily(enum.Enum):
    SQRT = "sqrt"
    LOG1P = "log1p"
    POWER = "power"

    @classmethod
    def from_str(cls, name: str) -> "UtilityFamily":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise DomainError(f"unknown utility family {name!r} (expected one of: {valid})")


@dataclass(frozen=True)
class UtilitySpec:
    """Valuation family plus per-(contributor, project) weights.

    A weight of zero encodes "this contributor does not care about this
    project", which keeps sparse preference instances well defined.
    ``exponent`` is only consulted by the POWER family and must lie in (0, 1)
    so the family stays strictly concave.
    """

    family: UtilityFamily
    weights: np.ndarray
    exponent: float | None = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if w.ndim != 2 or w.size == 0:
            raise DomainError("weights must be a nonempty 2-d matrix")
        if (~np.isfinite(w)).any() or (w < 0).any():
            raise DomainError("weights must be finite and >= 0")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.family is UtilityFamily.POWER:
            if self.exponent is None or not (0.0 < self.exponent < 1.0):
                raise DomainError("POWER family requires exponent in (0, 1)")

    @property
    def n_contributors(self) -> int:
        return self.weights.shape[0]

    @property
    def n_projects(self) -> int:
        return self.weights.shape[1]


def _value(family: UtilityFamily, w: float, f: float, gamma: float | None) -> float:
    if w == 0.0:
        return 0.0
    if family is UtilityFamily.SQRT:
        return w * math.sqrt(f)
    if family is UtilityFamily.LOG1P:
        return w * math.log1p(f)
    return w * f**gamma / gamma


def _marginal(family: UtilityFamily, w: float, f: float, gamma: float | None) -> float:
    if w == 0.0:
        return 0.0
    if f == 0.0 and family is not UtilityFamily.LOG1P:
        raise DomainError(f"unbounded marginal at zero funding for {family.value} family")
    if family is UtilityFamily.SQRT:
        return w / (2.0 * math.sqrt(f))
    if family is UtilityFamily.LOG1P:
        return w / (1.0 + f)
    return w * f ** (gamma - 1.0)


def utility_value(spec: UtilitySpec, i: int, p: int, f: float) -> float:
    """Currency-equivalent utility contributor ``i`` gets from project ``p`` funded at ``f``."""
    if f < 0:
        raise DomainError(f"funding level must be >= 0, got {f!r}")
    return _value(spec.family, float(spec.weights[i, p]), float(f), spec.exponent)


def utility_marginal(spec: UtilitySpec, i: int, p: int, f: float) -> float:
    """Exact derivative of the valuation at funding level ``f``.

    Zero-weight pairs return 0 regardless of ``f``; otherwise SQRT and POWER
    marginals diverge at zero funding and raise instead of returning inf.
    """
    if f < 0:
        raise DomainError(f"funding level must be >= 0, got {f!r}")
    return _marginal(spec.family, float(spec.weights[i, p]), float(f), spec.exponent)


def marginal_matrix(spec: UtilitySpec, funded: np.ndarray) -> np.ndarray:
    """Marginal utilities for every (contributor, project) at the given funding vector."""
    funded = np.asarray(funded, dtype=float)
    if funded.shape != (spec.n_projects,):
        raise DomainError(
            f"funded vector has shape {funded.shape}, expected ({spec.n_projects},)"
        )
    if (funded < 0).any():
        raise DomainError("funding levels must be >= 0")
    w = spec.weights
    singular_at_zero = spec.family is not UtilityFamily.LOG1P
    if singular_at_zero:
        bad = (funded == 0.0) & (w > 0).any(axis=0)
        if bad.any():
            p = int(np.argmax(bad))
            raise DomainError(
                f"unbounded marginal at zero funding for {spec.family.value} family (project {p})"
            )
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.family is UtilityFamily.SQRT:
            m = w / (2.0 * np.sqrt(funded))
        elif spec.family is UtilityFamily.LOG1P:
            m = w / (1.0 + funded)
        else:
            m = w * funded ** (spec.exponent - 1.0)
    # zero weight wins over any singular funding level
    return np.where(w == 0.0, 0.0, m)


def social_marginal_benefit(spec: UtilitySpec, funded: np.ndarray) -> np.ndarray:
    """Population marginal utility of one more unit of funding, per project."""
    return marginal_matrix(spec, funded).sum(axis=0)
