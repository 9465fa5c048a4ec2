"""Hamiltonian flows in complexified phase space along complex-time rays.

Trajectories are integrated in a real parameter s in [0, 1] along the straight
ray t(s) = s * t_end, with an embedded Dormand-Prince 5(4) pair on the complex
state (x, xi) augmented by the accumulated action integral of xi . dx.  The
slope channel has a polynomial flow that is also provided in closed form.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import SLOPE, WELL, ModelParams, PotentialModel, symbol_value

__all__ = [
    "PhasePoint",
    "FlowState",
    "PathSegment",
    "FlowError",
    "StepUnderflow",
    "integrate",
    "integrate_path",
    "slope_flow_closed_form",
    "energy_drift",
]


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, xi) of complexified phase space."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=complex))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=complex))
        if x.shape != xi.shape or x.ndim != 1:
            raise ValueError("x and xi must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(x.view(float))) and np.all(np.isfinite(xi.view(float)))):
            raise ValueError("phase-space components must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.x.size

    def close_to(self, other: "PhasePoint", tol: float) -> bool:
        return (
            np.max(np.abs(self.x - other.x)) <= tol
            and np.max(np.abs(self.xi - other.xi)) <= tol
        )


@dataclass(frozen=True)
class FlowState:
    """Phase point plus accumulated action and elapsed complex time."""

    point: PhasePoint
    action: complex
    time: complex


@dataclass
class PathSegment:
    """Sampled trajectory along a single complex-time ray.

    ``generator`` tags which vector field produced it: "slope" / "well" for
    the Hamiltonian flows, "ascent" / "descent" for the well flow restricted
    to the outgoing/incoming phase graphs (imaginary-time rays used by the
    tunneling-loop construction).
    """

    samples: list = field(default_factory=list)
    generator: str = WELL

    @property
    def start(self) -> FlowState:
        return self.samples[0]

    @property
    def end(self) -> FlowState:
        return self.samples[-1]

    def write_csv(self, path) -> None:
        """Dump the samples (Re/Im of time, positions, momenta, action)."""
        n = self.start.point.dim
        header = ["re_t", "im_t"]
        header += [f"re_x{i}" for i in range(n)] + [f"im_x{i}" for i in range(n)]
        header += [f"re_xi{i}" for i in range(n)] + [f"im_xi{i}" for i in range(n)]
        header += ["re_action", "im_action"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for st in self.samples:
                row = [st.time.real, st.time.imag]
                row += list(st.point.x.real) + list(st.point.x.imag)
                row += list(st.point.xi.real) + list(st.point.xi.imag)
                row += [st.action.real, st.action.imag]
                writer.writerow(row)


class FlowError(RuntimeError):
    pass


class StepUnderflow(FlowError):
    """Step size fell below the representable floor; carries the last good state."""

    def __init__(self, message: str, last_state: FlowState):
        super().__init__(message)
        self.last_state = last_state


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_ERR_W = _B5 - _B4

_MIN_STEP = 1e-14
_MAX_STEPS = 100_000


def _ray_rhs(which, params, model, t_end):
    """RHS in the ray parameter s for state u = [x, xi, action].

    The channel fields are inlined (they match hamilton_field) because this
    closure runs once per Runge-Kutta stage and dominates the integrator cost.
    """
    if which == SLOPE:
        def rhs(s, u):
            n = (u.size - 1) // 2
            xi = u[n : 2 * n]
            du = np.empty_like(u)
            du[:n] = (2.0 * t_end) * xi
            du[n : 2 * n] = 0.0
            du[2 * n - 1] = -t_end
            du[2 * n] = (2.0 * t_end) * (xi @ xi)
            return du

        return rhs
    if which != WELL:
        raise ValueError(f"unknown channel {which!r}")
    aniso = model.aniso_matrix
    tau = params.tau

    def rhs(s, u):
        n = (u.size - 1) // 2
        x, xi = u[:n], u[n : 2 * n]
        ax = aniso @ x
        du = np.empty_like(u)
        du[:n] = (2.0 * t_end) * xi
        du[n : 2 * n] = (-tau * t_end * np.exp(-0.5 * (x @ ax))) * ax
        du[2 * n] = (2.0 * t_end) * (xi @ xi)
        return du

    return rhs


def _advance(rhs, s, u, h):
    """One embedded Dormand-Prince step; returns (u5, error_estimate)."""
    k = np.empty((7, u.size), dtype=complex)
    k[0] = rhs(s, u)
    for i in range(1, 7):
        k[i] = rhs(s + _C[i] * h, u + h * (_A[i] @ k[:i]))
    u5 = u + h * (_B5 @ k)
    return u5, h * (_ERR_W @ k)


def integrate_path(
    which: str,
    params: ModelParams,
    model: PotentialModel,
    z0: PhasePoint,
    t_end: complex,
    tol: float = 1e-12,
    generator: str | None = None,
    record: bool = True,
) -> PathSegment:
    """Integrate one channel's flow from z0 over the ray [0, t_end].

    Accepted steps become the samples of the returned PathSegment; the action
    integral rides along as an extra state with the same error control.  With
    record=False only the endpoint is kept, which skips the per-step sample
    bookkeeping (the dominant overhead for shooting iterations).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = z0.dim
    u = np.concatenate([z0.x, z0.xi, [0.0 + 0.0j]])
    seg = PathSegment(generator=generator or which)
    seg.samples.append(FlowState(z0, 0.0 + 0.0j, 0.0 + 0.0j))
    if t_end == 0:
        return seg

    rhs = _ray_rhs(which, params, model, complex(t_end))
    s, h = 0.0, 0.1
    for _ in range(_MAX_STEPS):
        if s >= 1.0:
            if not record:
                point = PhasePoint(u[:n], u[n : 2 * n])
                seg.samples.append(FlowState(point, complex(u[2 * n]), complex(t_end)))
            return seg
        h = min(h, 1.0 - s)
        u_new, err = _advance(rhs, s, u, h)
        if not np.all(np.isfinite(u_new.view(float))):
            raise FlowError("non-finite state encountered during integration")
        scale = tol + tol * np.maximum(np.abs(u), np.abs(u_new))
        err_norm = float(np.max(np.abs(err) / scale))
        if err_norm <= 1.0:
            s += h
            u = u_new
            if record:
                point = PhasePoint(u[:n], u[n : 2 * n])
                seg.samples.append(FlowState(point, complex(u[2 * n]), s * complex(t_end)))
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
        if h < _MIN_STEP and s < 1.0:
            raise StepUnderflow(
                f"step size underflow at ray fraction s={s:.6g}", seg.end
            )
    raise FlowError("step budget exhausted before reaching the ray end")


def integrate(
    which: str,
    params: ModelParams,
    model: PotentialModel,
    z0: PhasePoint,
    t_end: complex,
    tol: float = 1e-12,
) -> FlowState:
    """Endpoint of the ray integration (see integrate_path)."""
    return integrate_path(which, params, model, z0, t_end, tol, record=False).end


def slope_flow_closed_form(z0: PhasePoint, t: complex) -> FlowState:
    """Exact flow of the slope channel, polynomial in the complex time t.

    xi(t) = xi0 - t e_n,  x(t) = x0 + 2 xi0 t - t^2 e_n, and the action
    integral of 2 xi.xi is the exact cubic
    2 (xi0.xi0 t - xi0_n t^2 + t^3 / 3).
    """
    t = complex(t)
    n = z0.dim
    e_n = np.zeros(n, dtype=complex)
    e_n[-1] = 1.0
    xi = z0.xi - t * e_n
    x = z0.x + 2.0 * t * z0.xi - t * t * e_n
    action = 2.0 * ((z0.xi @ z0.xi) * t - z0.xi[-1] * t * t + t**3 / 3.0)
    return FlowState(PhasePoint(x, xi), action, t)


def energy_drift(
    segment: PathSegment, which: str, params: ModelParams, model: PotentialModel
) -> float:
    """Max deviation of the conserved symbol value along the samples."""
    p0 = symbol_value(which, params, model, segment.start.point.x, segment.start.point.xi)
    return max(
        abs(symbol_value(which, params, model, st.point.x, st.point.xi) - p0)
        for st in segment.samples
    )
