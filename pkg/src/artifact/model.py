"""Model family: parameters, the well potential, the two symbols, harmonic levels.

The operator under study is a 2x2 system of semiclassical Schrödinger operators
on R^n coupled by a constant off-diagonal term:

    diag(-h^2 Lap + x_n - mu,  -h^2 Lap + tau*V2(x))  +  h * [[0, c], [c, 0]]

The first diagonal entry ("slope" channel) has a linear potential in the last
coordinate and carries a continuum; the second ("well" channel) has a potential
well at the origin.  Everything downstream — flows, phases, the tunneling loop,
the grid resonances — is built from the two principal symbols

    slope:  xi.xi + x_n - mu
    well:   xi.xi + tau * V2(x)

evaluated with the complex bilinear square (no conjugation), so that all
formulas continue analytically to complex positions and momenta.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "PotentialModel",
    "HarmonicData",
    "symbol_value",
    "hamilton_field",
    "harmonic_levels",
]

#: tags for the two channels of the system
SLOPE, WELL = "slope", "well"


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the model.

    Attributes
    ----------
    n : int
        Spatial dimension, 1 or 2.
    mu : float
        Positive energy offset of the slope channel.
    tau : float
        Positive depth scale of the well channel.
    coupling_c : float
        Constant interaction coefficient.  May be 0 for decoupled
        diagnostics; the width pipeline requires it nonzero.
    planck_h : float
        Semiclassical parameter, > 0.
    strip_delta : float
        Nominal analyticity strip width available for complex translation.
    """

    n: int = 2
    mu: float = 0.1
    tau: float = 0.1
    coupling_c: float = 1.0
    planck_h: float = 1e-3
    strip_delta: float = 0.5

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"n must be 1 or 2, got {self.n}")
        for name in ("mu", "tau", "planck_h", "strip_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


RADIAL_FAMILY = "RadialGaussianWell"
ANISO_FAMILY = "AnisotropicGaussianWell"


@dataclass(frozen=True)
class PotentialModel:
    """The well potential V2(x) = 1 - exp(-<A x, x>/2) with A symmetric positive definite.

    V2 vanishes exactly at the origin, is positive elsewhere on the reals,
    tends to 1 at infinity, has Hessian A at the origin, and is entire — the
    value, gradient and Hessian methods accept complex positions and return
    the analytic continuation.
    """

    family: str = RADIAL_FAMILY
    aniso_matrix: np.ndarray = field(default_factory=lambda: np.eye(2))

    @classmethod
    def radial(cls, n: int) -> "PotentialModel":
        return cls(RADIAL_FAMILY, np.eye(n))

    @classmethod
    def anisotropic(cls, matrix) -> "PotentialModel":
        return cls(ANISO_FAMILY, np.asarray(matrix, dtype=float))

    def __post_init__(self):
        if self.family not in (RADIAL_FAMILY, ANISO_FAMILY):
            raise ValueError(f"unknown potential family {self.family!r}")
        a = np.asarray(self.aniso_matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("aniso_matrix must be square")
        if not np.allclose(a, a.T, atol=1e-14):
            raise ValueError("aniso_matrix must be symmetric")
        if np.min(np.linalg.eigvalsh(a)) <= 0:
            raise ValueError("aniso_matrix must be positive definite")
        if self.family == RADIAL_FAMILY and not np.allclose(a, np.eye(a.shape[0])):
            raise ValueError("radial family requires the identity matrix")
        object.__setattr__(self, "aniso_matrix", a)

    @property
    def dim(self) -> int:
        return self.aniso_matrix.shape[0]

    # -- closed-form evaluation, valid for real or complex x ---------------

    def _quad(self, x):
        """Bilinear quadratic form <A x, x> (no conjugation)."""
        x = np.asarray(x)
        return x @ (self.aniso_matrix @ x)

    def value(self, x):
        """V2 at a real or complex position."""
        return 1.0 - np.exp(-0.5 * self._quad(x))

    __call__ = value

    def gradient(self, x):
        """grad V2, componentwise exp(-<Ax,x>/2) * (A x)."""
        x = np.asarray(x)
        return np.exp(-0.5 * self._quad(x)) * (self.aniso_matrix @ x)

    def hessian(self, x):
        """Hess V2 = exp(-<Ax,x>/2) * (A - (Ax)(Ax)^T)."""
        x = np.asarray(x)
        ax = self.aniso_matrix @ x
        return np.exp(-0.5 * self._quad(x)) * (self.aniso_matrix - np.outer(ax, ax))

    def radial_profile(self, r):
        """V2 along any unit ray for the radial family (vectorized in r)."""
        if self.family != RADIAL_FAMILY:
            raise ValueError("radial_profile requires the radial family")
        r = np.asarray(r)
        return 1.0 - np.exp(-0.5 * r * r)


def symbol_value(which: str, params: ModelParams, model: PotentialModel, x, xi):
    """Principal symbol of one channel at (x, xi), complex bilinear in xi.

    Parameters
    ----------
    which : {"slope", "well"}
        ``slope`` is xi.xi + x_n - mu, ``well`` is xi.xi + tau*V2(x).
    x, xi : array_like, shape (n,)
        Position and momentum; real or complex.
    """
    x = np.asarray(x)
    xi = np.asarray(xi)
    kinetic = xi @ xi
    if which == SLOPE:
        return kinetic + x[-1] - params.mu
    if which == WELL:
        return kinetic + params.tau * model.value(x)
    raise ValueError(f"unknown channel {which!r}")


def hamilton_field(which: str, params: ModelParams, model: PotentialModel, x, xi):
    """Hamilton field (d_xi p, -d_x p) of one channel at (x, xi).

    For the slope channel this is (2 xi, -e_n); for the well channel
    (2 xi, -tau * grad V2(x)).
    """
    x = np.asarray(x)
    xi = np.asarray(xi)
    dx = 2.0 * xi
    if which == SLOPE:
        dxi = np.zeros_like(x)
        dxi[-1] = -1.0
    elif which == WELL:
        dxi = -params.tau * model.gradient(x)
    else:
        raise ValueError(f"unknown channel {which!r}")
    return dx, dxi


@dataclass(frozen=True)
class HarmonicData:
    """Harmonic-approximation levels of the well channel.

    ``mode_frequencies`` are the n oscillator frequencies sqrt(tau*a_i/2)
    (a_i the eigenvalues of A); ``levels`` lists the sorted sums
    sum_i (2 k_i + 1) * omega_i.
    """

    mode_frequencies: np.ndarray
    levels: np.ndarray

    def level(self, j: int) -> float:
        """j-th level, 1-based; level(1) = sum of the mode frequencies."""
        if j < 1 or j > len(self.levels):
            raise IndexError(f"level index {j} out of range")
        return float(self.levels[j - 1])


def harmonic_levels(params: ModelParams, model: PotentialModel, j_max: int) -> HarmonicData:
    """Oscillator levels of the quadratic approximation of the well channel.

    The well channel near the origin is -h^2 Lap + tau*<A x, x>/2 + O(|x|^3);
    after the usual scaling its low levels are h * sum_i (2 k_i + 1) omega_i
    with omega_i = sqrt(tau * a_i / 2).  Returns at least ``j_max`` levels,
    sorted ascending (the returned values are the coefficients of h).
    """
    a_eigs = np.linalg.eigvalsh(model.aniso_matrix)
    if np.min(a_eigs) <= 0:
        raise ValueError("aniso_matrix must be positive definite")
    omegas = np.sort(np.sqrt(params.tau * a_eigs / 2.0))
    # enumerate enough excitation multi-indices to cover j_max sums
    k_bound = j_max + 1
    sums = [
        float(np.dot(2 * np.asarray(ks) + 1, omegas))
        for ks in itertools.product(range(k_bound + 1), repeat=len(omegas))
    ]
    levels = np.sort(np.asarray(sums))[: max(j_max, 1) + k_bound]
    return HarmonicData(mode_frequencies=omegas, levels=levels)
