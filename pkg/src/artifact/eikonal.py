"""Outgoing well phase by unstable-manifold shooting.

The well phase phi2(x) is the analytic Agmon distance from the origin: the
solution of |grad phi2|^2 = tau * V2 with phi2(0) = 0 that is positive away
from the well.  It is realized constructively: the real system

    dx/ds = 2 zeta,   dzeta/ds = tau * grad V2(x)

(the well-channel Hamilton flow restricted to the outgoing graph, run along
an imaginary-time ray) has a hyperbolic fixed point at the origin whose
unstable manifold is the graph zeta = grad phi2(x).  A trajectory is launched
a distance eps0 from the origin along a chosen unstable direction, where the
quadratic phase <M x, x>/2 (M the positive square root of tau*A/2) is exact
to O(eps0^3), and shooting on (direction, travel time) lands it on the
requested target.  The accumulated action supplies the phase value and the
arrival momentum supplies its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .flow import PhasePoint, integrate, integrate_path
from .model import WELL, ModelParams, PotentialModel

__all__ = ["EikonalField", "EikonalError", "PhaseData", "well_hessian", "radial_phase_oracle"]


class EikonalError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseData:
    value: float
    grad: np.ndarray


def well_hessian(params: ModelParams, model: PotentialModel) -> np.ndarray:
    """Unique symmetric positive-definite square root of tau*A/2.

    This is the Hessian of the well phase at the origin: inserting the
    quadratic ansatz <M x, x>/2 into the eikonal equation forces M^2 = tau*A/2.
    """
    a = model.aniso_matrix
    vals, vecs = np.linalg.eigh(params.tau * a / 2.0)
    if np.min(vals) <= 0:
        raise ValueError("potential matrix must be positive definite")
    return (vecs * np.sqrt(vals)) @ vecs.T


def radial_phase_oracle(params: ModelParams, r: float) -> float:
    """Quadrature value sqrt(tau) * int_0^r sqrt(1 - exp(-s^2/2)) ds (radial family)."""
    val, _ = quad(
        lambda s: np.sqrt(-params.tau * np.expm1(-0.5 * s * s)),
        0.0,
        r,
        epsabs=1e-14,
        epsrel=1e-12,
        limit=200,
    )
    return val


class EikonalField:
    """Well-phase evaluator with a shooting cache.

    Evaluations share a warm-start cache mapping targets to converged
    (direction, time) unknowns; use one field instance per worker if calling
    concurrently.
    """

    def __init__(
        self,
        params: ModelParams,
        model: PotentialModel,
        eikonal_tol: float = 1e-8,
        r_max: float = 1.5,
        launch_eps: float = 1e-6,
        flow_tol: float = 1e-12,
    ):
        if model.dim != params.n:
            raise ValueError("model dimension does not match params.n")
        self.params = params
        self.model = model
        self.eikonal_tol = eikonal_tol
        self.r_max = r_max
        self.launch_eps = launch_eps
        self.flow_tol = flow_tol
        self.well_hessian_M = well_hessian(params, model)
        self._cache: dict[tuple, tuple] = {}
        self._value_cache: dict[tuple, PhaseData] = {}
        self._last_jac = None
        # sanity: M^2 = tau*A/2 to 1e-10
        resid = np.max(np.abs(self.well_hessian_M @ self.well_hessian_M - params.tau * model.aniso_matrix / 2))
        if resid > 1e-10:
            raise EikonalError(f"well Hessian square-root residual {resid:.2e}")

    # -- launch and endpoint maps ------------------------------------------

    def _direction(self, alpha) -> np.ndarray:
        if self.params.n == 1:
            return np.array([1.0 if alpha >= 0 else -1.0])
        return np.array([np.sin(alpha), np.cos(alpha)])

    def _launch_state(self, alpha) -> PhasePoint:
        x0 = self.launch_eps * self._direction(alpha)
        zeta0 = self.well_hessian_M @ x0
        return PhasePoint(x0.astype(complex), 1j * zeta0)

    def _endpoint(self, alpha, travel_time, tol=None):
        st = integrate(
            WELL,
            self.params,
            self.model,
            self._launch_state(alpha),
            -1j * travel_time,
            self.flow_tol if tol is None else tol,
        )
        return st

    def _head_value(self, alpha) -> float:
        x0 = self.launch_eps * self._direction(alpha)
        return 0.5 * float(x0 @ (self.well_hessian_M @ x0))

    def _radial_time_guess(self, r: float) -> float:
        """Travel time from the launch radius to r for the radial profile.

        Uses the log substitution to keep the integrand bounded near 0.
        """
        a_mean = float(np.mean(np.linalg.eigvalsh(self.model.aniso_matrix)))
        tau = self.params.tau

        def integrand(u):
            s = np.exp(u)
            v = -np.expm1(-0.5 * a_mean * s * s)
            return s / (2.0 * np.sqrt(tau * max(v, 1e-300)))

        val, _ = quad(integrand, np.log(self.launch_eps), np.log(max(r, 2 * self.launch_eps)), limit=200)
        return max(val, 1e-3)

    # -- shooting solve -----------------------------------------------------

    def solve_shooting(self, x_target: np.ndarray):
        """Converged (direction parameter, travel time) for a real target."""
        return self._solve(np.asarray(x_target, dtype=float))

    def _solve(self, x_target: np.ndarray):
        key = tuple(np.round(x_target, 12))
        if key in self._cache:
            return self._cache[key]
        r = float(np.linalg.norm(x_target))
        if self.params.n == 1:
            alpha = 1.0 if x_target[0] >= 0 else -1.0
        else:
            alpha = float(np.arctan2(x_target[0], x_target[1]))
        travel = self._radial_time_guess(r)
        # warm start from the nearest converged neighbour, if any
        if self._cache:
            nearest = min(self._cache, key=lambda k: np.linalg.norm(np.asarray(k) - x_target))
            if np.linalg.norm(np.asarray(nearest) - x_target) < 0.3 * max(r, 0.1):
                alpha, travel = self._cache[nearest]

        unknowns = np.array([travel]) if self.params.n == 1 else np.array([alpha, travel])

        # NOTE: the outgoing mode amplifies local integration error by several
        # orders of magnitude over the travel time, so every residual must be
        # evaluated at the tight tolerance; a loosened inner loop cannot reach
        # (or even measure) the shooting target.
        def residual(vec):
            if self.params.n == 1:
                st = self._endpoint(alpha, vec[0])
            else:
                st = self._endpoint(vec[0], vec[1])
            return np.real(st.point.x) - x_target

        def build_jacobian(vec, res):
            jac = np.zeros((self.params.n, len(vec)))
            for j in range(len(vec)):
                step = 1e-7 * max(1.0, abs(vec[j]))
                bumped = vec.copy()
                bumped[j] += step
                jac[:, j] = (residual(bumped) - res) / step
            return jac

        # The shooting Jacobian varies slowly with the target, so reuse the one
        # from the previous solve and only rebuild when progress stalls.
        jac = self._last_jac if np.shape(self._last_jac) == (self.params.n, len(unknowns)) else None
        best = None
        prev_norm = np.inf
        for _ in range(60):
            res = residual(unknowns)
            norm = np.max(np.abs(res))
            if best is None or norm < best[0]:
                best = (norm, unknowns.copy())
            if norm <= 1e-11 * max(1.0, r):
                # polish: a few more cheap steps, so the endpoint lands at
                # integrator precision (downstream finite differences of the
                # phase are sensitive to the leftover position error)
                for _ in range(3):
                    if jac is None or norm <= 3e-14 * max(1.0, r):
                        break
                    cand = unknowns + np.linalg.solve(jac, -res)
                    cand[-1] = max(cand[-1], 1e-6)
                    res_cand = residual(cand)
                    norm_cand = np.max(np.abs(res_cand))
                    if norm_cand >= norm:
                        break
                    unknowns, res, norm = cand, res_cand, norm_cand
                sol = (alpha, unknowns[-1]) if self.params.n == 1 else tuple(unknowns)
                self._cache[key] = sol
                self._last_jac = jac
                return sol
            if jac is None or norm > 0.5 * prev_norm:
                jac = build_jacobian(unknowns, res)
            prev_norm = norm
            try:
                delta = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError as exc:
                raise EikonalError(f"singular shooting Jacobian at target {x_target}") from exc
            caps = np.array([5.0]) if len(unknowns) == 1 else np.array([0.5, 5.0])
            unknowns = unknowns + np.clip(delta, -caps, caps)
            unknowns[-1] = max(unknowns[-1], 1e-6)
        raise EikonalError(
            f"shooting failed to converge at target {x_target}; best residual {best[0]:.3e}"
        )

    # -- public evaluation ---------------------------------------------------

    def phi2_at(self, x) -> PhaseData:
        """Well phase value and (real) gradient at a real target point."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.params.n,):
            raise ValueError(f"target must have shape ({self.params.n},)")
        key = tuple(np.round(x, 13))
        hit = self._value_cache.get(key)
        if hit is not None:
            return PhaseData(hit.value, hit.grad.copy())
        r = float(np.linalg.norm(x))
        if r > self.r_max:
            raise EikonalError(f"target radius {r:.3f} outside trust region {self.r_max}")
        if r <= 10 * self.launch_eps:
            # quadratic well model, exact to O(r^3)
            return PhaseData(0.5 * float(x @ (self.well_hessian_M @ x)), self.well_hessian_M @ x)
        alpha, travel = self._solve(x)
        st = self._endpoint(alpha, travel)
        value = self._head_value(alpha) + float(np.imag(st.action))
        grad = np.real(st.point.xi / 1j)
        resid = abs(float(grad @ grad) - self.params.tau * float(np.real(self.model.value(x))))
        if resid > self.eikonal_tol:
            raise EikonalError(f"eikonal residual {resid:.3e} exceeds {self.eikonal_tol:.1e} at {x}")
        data = PhaseData(value, grad)
        self._value_cache[key] = data
        return data

    def trajectory_to(self, x):
        """Sampled launch-to-target path on the outgoing graph (for loop assembly).

        Returns (segment, head_value) where head_value is the quadratic phase
        of the skipped launch ball; the segment's momenta are purely imaginary.
        """
        x = np.asarray(x, dtype=float)
        alpha, travel = self._solve(x)
        seg = integrate_path(
            WELL,
            self.params,
            self.model,
            self._launch_state(alpha),
            -1j * travel,
            self.flow_tol,
            generator="ascent",
        )
        return seg, self._head_value(alpha)
