"""Dynamical system definition: parameters, potential, Hamiltonian, angular momentum.

The family of attractive homogeneous potentials is

    U_n(q) = Z * ||q||**(-alpha_n),   alpha_n = 2*(1 - 1/n),

so n = 1 is free motion (constant potential) and n = 2 is the Kepler problem.
The Hamiltonian is H(q, p) = ||p||**2 / (2 m) - U_n(q).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Raised when an operation is evaluated outside its domain (e.g. q = 0)."""


@dataclass(frozen=True)
class ModelParams:
    """Tuple (n, d, m, Z, eps) fixing the dynamical system and chart radius.

    n    : potential index, n >= 1.  alpha_n = 2*(1 - 1/n) in [0, 2).
    d    : spatial dimension, d >= 2.
    m    : particle mass, > 0.
    Z    : coupling strength, > 0 (attractive).
    eps  : radius of the near-collision chart domain, > 0.
    """

    n: int
    d: int
    m: float = 1.0
    Z: float = 1.0
    eps: float = 0.1

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if not (self.m > 0):
            raise ValueError(f"m must be positive, got {self.m}")
        if not (self.Z > 0):
            raise ValueError(f"Z must be positive, got {self.Z}")
        if not (self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def alpha(self) -> float:
        """Homogeneity exponent alpha_n = 2*(1 - 1/n), in [0, 2)."""
        return 2.0 * (1.0 - 1.0 / self.n)


@dataclass(frozen=True)
class PhasePoint:
    """A position/momentum pair (q, p) with q != 0."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape or self.q.ndim != 1:
            raise ValueError("q and p must be 1-d arrays of equal length")

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.q))

    @property
    def radial(self) -> float:
        """<q, p>, the (scaled) radial momentum."""
        return float(np.dot(self.q, self.p))

    def require_noncollision(self) -> None:
        if self.r == 0.0:
            raise DomainError("q = 0 is outside the unregularised phase space")


@dataclass(frozen=True)
class AngularMomentum:
    """Antisymmetric d x d matrix L with entries L_ij = q_j p_i - q_i p_j."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=float)
        # enforce antisymmetry structurally
        object.__setattr__(self, "matrix", 0.5 * (mat - mat.T))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, ij: tuple[int, int]) -> float:
        return float(self.matrix[ij])


def potential(params: ModelParams, q: np.ndarray) -> float:
    """U_n(q) = Z * ||q||**(-alpha_n).  Constant Z for n = 1."""
    r = float(np.linalg.norm(q))
    if r == 0.0:
        raise DomainError("potential undefined at q = 0")
    return params.Z * r ** (-params.alpha)


def hamiltonian(params: ModelParams, x: PhasePoint) -> float:
    """Total energy ||p||**2 / (2 m) - U_n(q)."""
    x.require_noncollision()
    return float(np.dot(x.p, x.p)) / (2.0 * params.m) - potential(params, x.q)


def vector_field(params: ModelParams, x: PhasePoint) -> tuple[np.ndarray, np.ndarray]:
    """Canonical equations: dq = p/m, dp = -alpha_n Z q ||q||**(-alpha_n - 2)."""
    x.require_noncollision()
    r = x.r
    dq = x.p / params.m
    dp = -params.alpha * params.Z * x.q * r ** (-params.alpha - 2.0)
    return dq, dp


def angular_momentum(x: PhasePoint) -> AngularMomentum:
    """L_ij = q_j p_i - q_i p_j (rank <= 2, antisymmetric)."""
    mat = np.outer(x.p, x.q) - np.outer(x.q, x.p)
    return AngularMomentum(mat)


def l_squared(L: AngularMomentum) -> float:
    """Scalar invariant (1/2) tr(L L^T) = sum_{i<j} L_ij**2."""
    return 0.5 * float(np.sum(L.matrix * L.matrix))


def l_squared_point(x: PhasePoint) -> float:
    """||q||^2 ||p||^2 - <q,p>^2, the Lagrange-identity form of the invariant."""
    qq = float(np.dot(x.q, x.q))
    pp = float(np.dot(x.p, x.p))
    qp = float(np.dot(x.q, x.p))
    return qq * pp - qp * qp


def radial_convexity(params: ModelParams, x: PhasePoint) -> float:
    """d/dt <q, p> = ||p||**2/m - alpha_n Z ||q||**(-alpha_n).

    Strictly positive on the chart domain; equals
    2 H + (2 Z / n) ||q||**(-alpha_n) by the energy identity.
    """
    x.require_noncollision()
    pp = float(np.dot(x.p, x.p))
    return pp / params.m - params.alpha * params.Z * x.r ** (-params.alpha)
