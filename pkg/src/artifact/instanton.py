"""Tunnelling loop: correspondence pair, broken path, and its action.

The loop runs from the well out to the slope-channel crossing point along the
outgoing graph (momentum +i * grad phi2), rides the slope-channel flow for a
purely imaginary time, lands back on the incoming graph (momentum
-i * grad phi2), and descends into the well.  The imaginary part of the
complex action collected along this broken path is the tunnelling exponent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .eikonal import EikonalField
from .flow import PathSegment, PhasePoint, integrate_path, slope_flow_closed_form
from .model import SLOPE, WELL, ModelParams, PotentialModel

__all__ = [
    "CorrespondencePair",
    "BrokenPath",
    "ActionResult",
    "InstantonError",
    "find_correspondence_pair",
    "build_broken_path",
    "action",
    "action_radial_oracle",
]

_RESIDUAL_GATE = 1e-10
_CHAIN_TOL = 1e-8


class InstantonError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorrespondencePair:
    rho_plus: PhasePoint
    rho_minus: PhasePoint
    t_corr: complex
    x_plus: np.ndarray
    x_minus: np.ndarray
    eta: float
    residual: float


@dataclass(frozen=True)
class BrokenPath:
    gamma2_plus: PathSegment
    gamma1: PathSegment
    gamma2_minus: PathSegment
    head_in: float
    head_out: float
    pair: CorrespondencePair


@dataclass(frozen=True)
class ActionResult:
    action_I: complex
    S: float
    per_segment: tuple


def _membership_xn(
    params: ModelParams, field: EikonalField, x_prime: np.ndarray, start: float | None = None
) -> float:
    """Scalar solve of the outgoing-crossing condition x_n = mu + |grad phi2|^2.

    The map x_n -> mu + |grad phi2(x', x_n)|^2 is a strong contraction for the
    parameter ranges of interest (derivative ~ tau * x_n).  A secant update on
    the defect drives warm starts to machine precision in two or three phase
    evaluations, each of which is a full shooting solve.
    """
    xn = params.mu if start is None else start
    prev: tuple[float, float] | None = None
    for _ in range(80):
        g = field.phi2_at(np.append(x_prime, xn)).grad
        target = params.mu + float(g @ g)
        defect = target - xn
        if abs(defect) <= 1e-15 + 1e-14 * abs(target):
            return target
        if prev is not None and abs(defect - prev[1]) > 0:
            slope = (defect - prev[1]) / (xn - prev[0])
            new = xn - defect / slope
        else:
            new = target
        prev = (xn, defect)
        xn = new
    raise InstantonError(f"crossing-membership solve stalled at x' = {x_prime}")


def find_correspondence_pair(
    params: ModelParams,
    field: EikonalField,
    x_prime_guess=None,
    s_guess: float | None = None,
) -> CorrespondencePair:
    """Newton solve for the pair of loop corner points.

    Unknowns are the tangential position of the outgoing corner and the real
    parameter s of the purely imaginary slope-channel time t = i*s; the normal
    position is slaved to the crossing-membership equation.  The residual asks
    the slope-channel flow started at the outgoing corner to land exactly on
    the incoming graph.
    """
    n = params.n
    e_n = np.zeros(n)
    e_n[-1] = 1.0

    xn_memo = {"start": None}

    def assemble(u):
        x_prime, s = u[:-1], u[-1]
        xn = _membership_xn(params, field, x_prime, start=xn_memo["start"])
        xn_memo["start"] = xn
        x_plus = np.append(x_prime, xn)
        zeta_plus = field.phi2_at(x_plus).grad
        x_minus = x_plus - 2.0 * s * zeta_plus + s * s * e_n
        zeta_minus = field.phi2_at(x_minus).grad
        res = zeta_plus - s * e_n + zeta_minus
        return res, x_plus, zeta_plus, x_minus, zeta_minus

    if x_prime_guess is None:
        x_prime = np.zeros(n - 1)
    else:
        x_prime = np.atleast_1d(np.asarray(x_prime_guess, dtype=float))
    if s_guess is None:
        # predictor from the one-dimensional profile along the slope axis
        a_nn = float(field.model.aniso_matrix[-1, -1])
        xn0 = params.mu
        for _ in range(60):
            xn0 = params.mu - params.tau * np.expm1(-0.5 * a_nn * xn0 * xn0)
        s_guess = 2.0 * np.sqrt(max(xn0 - params.mu, 1e-30))
    u = np.append(x_prime, s_guess)

    best = None
    for _ in range(30):
        res, x_plus, zeta_plus, x_minus, zeta_minus = assemble(u)
        norm = float(np.max(np.abs(res)))
        if best is None or norm < best[0]:
            best = (norm, u.copy())
        if norm <= 1e-12:
            break
        jac = np.zeros((n, n))
        for j in range(n):
            step = 1e-7 * max(1.0, abs(u[j]))
            bumped = u.copy()
            bumped[j] += step
            jac[:, j] = (assemble(bumped)[0] - res) / step
        try:
            delta = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise InstantonError("singular Jacobian in correspondence solve") from exc
        u = u + np.clip(delta, -0.1, 0.1)
    else:
        res, x_plus, zeta_plus, x_minus, zeta_minus = assemble(u)
        norm = float(np.max(np.abs(res)))
    if norm > _RESIDUAL_GATE:
        raise InstantonError(f"correspondence solve residual {norm:.3e} exceeds {_RESIDUAL_GATE}")

    s = float(u[-1])
    pair = CorrespondencePair(
        rho_plus=PhasePoint(x_plus.astype(complex), 1j * zeta_plus),
        rho_minus=PhasePoint(x_minus.astype(complex), -1j * zeta_minus),
        t_corr=1j * s,
        x_plus=x_plus,
        x_minus=x_minus,
        eta=float(np.linalg.norm(zeta_plus)),
        residual=norm,
    )
    # consistency: exact slope-channel flow carries rho_plus to rho_minus
    shadow = slope_flow_closed_form(pair.rho_plus, pair.t_corr)
    if not shadow.point.close_to(pair.rho_minus, 10 * _RESIDUAL_GATE):
        raise InstantonError("closed-form slope flow does not land on the incoming graph")
    return pair


def build_broken_path(params: ModelParams, field: EikonalField, pair: CorrespondencePair) -> BrokenPath:
    """Realize the three loop legs as sampled flows and check their chaining."""
    ascent, head_in = field.trajectory_to(pair.x_plus)
    if not ascent.end.point.close_to(pair.rho_plus, _CHAIN_TOL):
        raise InstantonError("outgoing well leg fails to reach the crossing corner")

    arc = integrate_path(SLOPE, params, field.model, pair.rho_plus, pair.t_corr, tol=field.flow_tol)
    if not arc.end.point.close_to(pair.rho_minus, _CHAIN_TOL):
        raise InstantonError("slope-channel leg fails to land on the incoming graph")

    _, travel = field.solve_shooting(pair.x_minus)
    descent = integrate_path(
        WELL,
        params,
        field.model,
        pair.rho_minus,
        -1j * travel,
        tol=field.flow_tol,
        generator="descent",
    )
    x_end = np.real(descent.end.point.x)
    if np.linalg.norm(x_end) > 20 * field.launch_eps:
        raise InstantonError("incoming well leg fails to re-enter the launch neighborhood")
    head_out = 0.5 * float(x_end @ (field.well_hessian_M @ x_end))
    return BrokenPath(
        gamma2_plus=ascent,
        gamma1=arc,
        gamma2_minus=descent,
        head_in=head_in,
        head_out=head_out,
        pair=pair,
    )


def action(path: BrokenPath) -> ActionResult:
    """Complex loop action with per-leg contributions.

    The slope-channel leg uses the exact polynomial action of the closed-form
    flow; the well legs use their integrated actions completed by the
    quadratic phase of the skipped launch ball.
    """
    c_out = complex(path.gamma2_plus.end.action) + 1j * path.head_in
    c_arc = complex(slope_flow_closed_form(path.pair.rho_plus, path.pair.t_corr).action)
    c_in = complex(path.gamma2_minus.end.action) + 1j * path.head_out
    total = c_out + c_arc + c_in
    return ActionResult(action_I=total, S=float(np.imag(total)), per_segment=(c_out, c_arc, c_in))


def action_radial_oracle(params: ModelParams, model: PotentialModel) -> float:
    """Independent quadrature value of the loop exponent for the radial family.

    Solves the scalar crossing equation by bracketed root finding, then
    integrates the radial phase profile; no Hamiltonian flow is involved.
    """
    if model.family != "RadialGaussianWell":
        raise InstantonError("radial oracle requires the radial family")
    mu, tau = params.mu, params.tau

    def crossing(x):
        return x - mu + tau * np.expm1(-0.5 * x * x)

    hi = mu + tau + 0.05
    if crossing(hi) <= 0:
        raise InstantonError("no crossing root in trust region")
    x_star = brentq(crossing, mu, hi, xtol=1e-15, rtol=8.9e-16)
    eta = np.sqrt(x_star - mu)
    phi, _ = quad(
        lambda r: np.sqrt(-tau * np.expm1(-0.5 * r * r)),
        0.0,
        x_star,
        epsabs=1e-15,
        epsrel=1e-13,
        limit=300,
    )
    return 2.0 * phi - (4.0 / 3.0) * eta**3
