"""Command-line front end: config loading, subcommand dispatch, reports.

Configuration is a plain INI file; every numeric output carries the SHA-256
fingerprint of the canonically serialized config so cached results can be
tied back to the run that produced them.  Example::

    [model]
    n = 2
    mu = 0.1
    tau = 0.1
    c = 1.0
    h = 0.001
    family = radial

    [grid]
    L = 0.2
    N = 256
    stencil_order = 4

    [scan]
    s_over_h = 4.0 4.7 5.4 6.1
    theta = auto

    [tolerances]
    resonance_tol = 1e-12

The ``A`` key (row-major entries) selects an anisotropic well; ``h_list``
replaces ``s_over_h`` with explicit values.  Scan caches default to the
directory named by the ``ARTIFACT_CACHE_DIR`` environment variable.

Exit codes: 0 success, 1 failed check or failed computation, 2 usage error
(bad flags, unreadable config, missing or corrupted cache).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from .eikonal import EikonalError, EikonalField
from .flow import FlowError, PhasePoint, energy_drift, integrate_path
from .instanton import (
    InstantonError,
    action,
    action_radial_oracle,
    build_broken_path,
    find_correspondence_pair,
)
from .model import RADIAL_FAMILY, SLOPE, WELL, ModelParams, PotentialModel
from . import transform as tr
from .spectral import (
    GridSpec,
    ScanSample,
    SpectralError,
    _append_cache,
    _load_cache,
    _sample_key,
    accept_sample,
    assemble,
    boundary_decay,
    compute_resonance,
    default_theta,
    fit_width,
    width_scan,
)
from .transform import TransformError
from .weber import WeberError, weber_family

__all__ = ["RunConfig", "load_config", "serialize_config", "config_fingerprint",
           "run_subcommand", "main"]


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent configuration input."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    model: PotentialModel
    grid: GridSpec
    h_list: tuple | None
    s_over_h: tuple | None
    theta: float | None  # None means the default translation policy
    resonance_tol: float
    results: str | None


DEFAULT_INI = """
[model]
n = 2
mu = 0.1
tau = 0.1
c = 1.0
h = 0.001
family = radial

[grid]
L = 0.2
N = 256
stencil_order = 4

[scan]
s_over_h = 4.0 4.7 5.4 6.1
theta = auto

[tolerances]
resonance_tol = 1e-12
"""


def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.split())


def _parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    try:
        sec = parser["model"]
        n = sec.getint("n")
        family = sec.get("family", "radial").strip().lower()
        if family == "radial":
            model = PotentialModel.radial(n)
        elif family == "anisotropic":
            entries = _floats(sec.get("A", ""))
            if len(entries) != n * n:
                raise ConfigError(f"A must carry {n * n} row-major entries")
            model = PotentialModel.anisotropic(np.array(entries).reshape(n, n))
        else:
            raise ConfigError(f"unknown family {family!r}")
        params = ModelParams(
            n=n,
            mu=sec.getfloat("mu"),
            tau=sec.getfloat("tau"),
            coupling_c=sec.getfloat("c", 1.0),
            planck_h=sec.getfloat("h", 1e-3),
        )

        gsec = parser["grid"]
        grid = GridSpec(
            n=n,
            half_width=gsec.getfloat("L"),
            points_per_dim=gsec.getint("N"),
            stencil_order=gsec.getint("stencil_order", 4),
        )

        h_list = s_over_h = None
        theta = None
        if parser.has_section("scan"):
            ssec = parser["scan"]
            if ssec.get("h_list", "").strip():
                h_list = _floats(ssec["h_list"])
            if ssec.get("s_over_h", "").strip():
                s_over_h = _floats(ssec["s_over_h"])
            raw = ssec.get("theta", "auto").strip().lower()
            theta = None if raw == "auto" else float(raw)

        tol = 1e-12
        if parser.has_section("tolerances"):
            tol = parser["tolerances"].getfloat("resonance_tol", 1e-12)
        if tol <= 0:
            raise ConfigError("resonance_tol must be positive")

        results = None
        if parser.has_section("output"):
            results = parser["output"].get("results", "").strip() or None
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc

    return RunConfig(params=params, model=model, grid=grid, h_list=h_list,
                     s_over_h=s_over_h, theta=theta, resonance_tol=tol, results=results)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return _parse_config(DEFAULT_INI)
    try:
        with open(path) as handle:
            return _parse_config(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def serialize_config(cfg: RunConfig) -> str:
    """Canonical, order-stable text form; the fingerprint hashes this."""
    g = lambda x: format(x, ".17g")
    lines = [
        "[model]",
        f"n = {cfg.params.n}",
        f"mu = {g(cfg.params.mu)}",
        f"tau = {g(cfg.params.tau)}",
        f"c = {g(cfg.params.coupling_c)}",
        f"h = {g(cfg.params.planck_h)}",
        f"family = {'radial' if cfg.model.family == RADIAL_FAMILY else 'anisotropic'}",
    ]
    if cfg.model.family != RADIAL_FAMILY:
        lines.append("A = " + " ".join(g(v) for v in cfg.model.aniso_matrix.ravel()))
    lines += [
        "",
        "[grid]",
        f"L = {g(cfg.grid.half_width)}",
        f"N = {cfg.grid.points_per_dim}",
        f"stencil_order = {cfg.grid.stencil_order}",
        "",
        "[scan]",
    ]
    if cfg.h_list is not None:
        lines.append("h_list = " + " ".join(g(v) for v in cfg.h_list))
    if cfg.s_over_h is not None:
        lines.append("s_over_h = " + " ".join(g(v) for v in cfg.s_over_h))
    lines.append("theta = " + ("auto" if cfg.theta is None else g(cfg.theta)))
    lines += ["", "[tolerances]", f"resonance_tol = {g(cfg.resonance_tol)}"]
    if cfg.results:
        lines += ["", "[output]", f"results = {cfg.results}"]
    return "\n".join(lines) + "\n"


def config_fingerprint(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def _cache_dir() -> str:
    return os.environ.get("ARTIFACT_CACHE_DIR", os.path.join(".", "artifact_cache"))


def _default_cache(cfg: RunConfig) -> str:
    return os.path.join(_cache_dir(), f"scan_{config_fingerprint(cfg)[:16]}.csv")


def _check_cache_stamp(cache_path: str, fingerprint: str, create: bool) -> None:
    """Sidecar fingerprint: a mismatch means the cache belongs to another
    config and must not be silently reused."""
    stamp = cache_path + ".fpr"
    if os.path.exists(stamp):
        recorded = open(stamp).read().strip()
        if recorded != fingerprint:
            raise ConfigError(
                f"cache {cache_path!r} was produced under config {recorded[:16]}..., "
                f"current config is {fingerprint[:16]}..."
            )
    elif create:
        os.makedirs(os.path.dirname(stamp) or ".", exist_ok=True)
        with open(stamp, "w") as handle:
            handle.write(fingerprint + "\n")


def _json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _g(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_action(cfg: RunConfig, ns) -> tuple:
    field = EikonalField(cfg.params, cfg.model)
    pair = find_correspondence_pair(cfg.params, field)
    path = build_broken_path(cfg.params, field, pair)
    result = action(path)
    payload = {
        "mu": cfg.params.mu,
        "tau": cfg.params.tau,
        "x_plus": [float(v) for v in pair.x_plus],
        "eta": pair.eta,
        "S": result.S,
        "per_segment_im": [float(np.imag(c)) for c in result.per_segment],
        "config_fingerprint": config_fingerprint(cfg),
    }
    if ns.both:
        phases = tr.build_transformed_phases(cfg.params, field)
        payload["S_geometry"] = result.S
        payload["S_transform"] = phases.S_mu
        payload["relative_gap"] = abs(phases.S_mu - result.S) / result.S
    if ns.dump_path:
        n = cfg.params.n
        with open(ns.dump_path, "w", newline="") as handle:
            handle.write(f"# config fingerprint: {payload['config_fingerprint']}\n")
            writer = csv.writer(handle)
            header = ["leg", "re_t", "im_t"]
            header += [f"re_x{i}" for i in range(n)] + [f"im_x{i}" for i in range(n)]
            header += [f"re_xi{i}" for i in range(n)] + [f"im_xi{i}" for i in range(n)]
            header += ["re_action", "im_action"]
            writer.writerow(header)
            for leg, seg in (("out", path.gamma2_plus), ("arc", path.gamma1),
                             ("in", path.gamma2_minus)):
                for st in seg.samples:
                    row = [leg, _g(st.time.real), _g(st.time.imag)]
                    row += [_g(v) for v in st.point.x.real] + [_g(v) for v in st.point.x.imag]
                    row += [_g(v) for v in st.point.xi.real] + [_g(v) for v in st.point.xi.imag]
                    row += [_g(st.action.real), _g(st.action.imag)]
                    writer.writerow(row)
    return 0, _json(payload)


def _battery(cfg: RunConfig) -> list:
    """The invariant battery behind `transform-check`: (name, measured, bound)."""
    params, model = cfg.params, cfg.model
    if params.n != 2:
        raise ConfigError("transform-check needs a two-dimensional model section")
    field = EikonalField(params, model)
    pair = find_correspondence_pair(params, field)
    path = build_broken_path(params, field, pair)
    phases = tr.build_transformed_phases(params, field)
    rng = np.random.default_rng(20260817)
    checks = []

    omega = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    step = 1e-6
    worst = 0.0
    for _ in range(5):
        w = 0.5 * rng.standard_normal(4)
        jac = np.zeros((4, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = step
            plus = tr.kappa(PhasePoint((w + e)[:2], (w + e)[2:]))
            minus = tr.kappa(PhasePoint((w - e)[:2], (w - e)[2:]))
            jac[:, k] = np.concatenate(
                [np.real(plus.x - minus.x), np.real(plus.xi - minus.xi)]
            ) / (2 * step)
        worst = max(worst, float(np.max(np.abs(jac.T @ omega @ jac - omega))))
    checks.append(("straightening map symplectic", worst, 1e-8))

    worst = 0.0
    for _ in range(8):
        y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        eta = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        val = tr.p_tilde_eval(SLOPE, params, model, y, eta)
        worst = max(worst, abs(val - (-(eta @ eta - y[-1] + params.mu))))
    checks.append(("slope symbol closed form", worst, 1e-14))

    worst = 0.0
    for _ in range(5):
        y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        eta = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        worst = max(
            worst,
            abs(
                tr.p_tilde_eval(WELL, params, model, y, eta)
                - tr.p_tilde_eval(WELL, params, model, y, -eta)
            ),
        )
    checks.append(("well symbol parity", worst, 0.0))

    worst = 0.0
    for x in (np.array([0.1, 0.0]), np.array([-0.2, 0.35]), np.array([0.7, -0.6])):
        data = field.phi2_at(x)
        worst = max(worst, abs(data.grad @ data.grad - params.tau * np.real(model.value(x))))
    checks.append(("well eikonal residual", worst, 1e-8))

    worst = 0.0
    for yp in (-0.15, 0.0, 0.15):
        for yn in np.linspace(-0.2, 0.08, 5):
            data = phases.phi2t(np.array([yp, yn]))
            worst = max(
                worst,
                abs(tr.p_tilde_eval(WELL, params, model, np.array([yp, yn]), 1j * data.grad)),
            )
    checks.append(("transformed eikonal residual", worst, 1e-7))

    worst = 0.0
    for yp in (-0.04, 0.0, 0.03):
        _, point = tr.crossing_and_gamma(phases, np.array([yp]))
        for which in (SLOPE, WELL):
            worst = max(worst, abs(tr.p_tilde_eval(which, params, model, point.x, point.xi)))
    checks.append(("crossing set matching", worst, 1e-9))

    worst_order = worst_z = 0.0
    for yp in (-0.1, 0.0, 0.1):
        for yn in (-0.15, -0.05, 0.05):
            y = np.array([yp, yn])
            one, two = phases.phi1t(y), phases.phi2t(y)
            worst_order = max(worst_order, one.value - two.value)
            _, z = phases.psi_z(y)
            worst_z = max(worst_z, abs(0.5 * z * z - max(two.value - one.value, 0.0)))
    checks.append(("phase ordering", worst_order, 1e-9))
    checks.append(("square-root coordinate", worst_z, 1e-9))

    offsets = np.array([0.02, 0.04, 0.08])
    gaps = [
        0.5
        * (
            (params.mu - phases.caustic_g(np.array([d])))
            + (params.mu - phases.caustic_g(np.array([-d])))
        )
        for d in offsets
    ]
    slope, _ = np.polyfit(np.log(offsets), np.log(gaps), 1)
    checks.append(("caustic contact exponent gap", abs(float(slope) - 2.0), 0.2))

    out = tr.outgoing_phase_check(phases, np.linspace(params.mu + 0.005, params.mu + 0.05, 10))
    checks.append(("outgoing derivative law", out["max_derivative_deviation"], 1e-5))
    checks.append(("outgoing real part", out["max_real_part_deviation"], 1e-6))

    ok_pos, _ = tr.interior_positivity_check(
        phases, np.array([[-0.05], [0.0], [0.05]]), np.linspace(0.0, 1.0, 11)
    )
    checks.append(("interior positivity", 0.0 if ok_pos else 1.0, 0.5))

    half = pair.t_corr / 2
    first = integrate_path(SLOPE, params, model, pair.rho_plus, half)
    second = integrate_path(SLOPE, params, model, first.end.point, half)
    drift = abs(
        np.imag(first.end.action + second.end.action) - np.imag(action(path).per_segment[1])
    )
    checks.append(("action path-independence", drift, 1e-8))

    worst = 0.0
    for which in (SLOPE, WELL):
        for _ in range(4):
            z0 = PhasePoint(
                0.4 * rng.standard_normal(2) + 0.1j * rng.standard_normal(2),
                0.4 * rng.standard_normal(2) + 0.1j * rng.standard_normal(2),
            )
            t = complex(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6))
            seg = integrate_path(which, params, model, z0, t, 1e-12)
            worst = max(worst, energy_drift(seg, which, params, model))
    checks.append(("flow energy conservation", worst, 1e-10))
    return checks


def _cmd_transform_check(cfg: RunConfig, ns) -> tuple:
    checks = _battery(cfg)
    payload = {
        "checks": [
            {"name": name, "measured": float(measured), "threshold": float(bound),
             "pass": bool(measured <= bound)}
            for name, measured, bound in checks
        ],
        "overall_pass": all(m <= b for _, m, b in checks),
        "config_fingerprint": config_fingerprint(cfg),
    }
    return (0 if payload["overall_pass"] else 1), _json(payload)


def _cmd_weber(cfg: RunConfig, ns) -> tuple:
    z_min, z_max = ns.range
    # the evaluator anchors its far field at z = 12, so build at least that
    # much table internally and trim the printout to the requested window
    ev = weber_family(ns.epsilon, ns.kmax, z_min, max(z_max, 12.0))
    buf = io.StringIO()
    buf.write(f"# config fingerprint: {config_fingerprint(cfg)}\n")
    buf.write("z," + ",".join(f"Y{k}" for k in range(ns.kmax + 1)) + "\n")
    for j, z in enumerate(ev.z_grid):
        if z > z_max:
            break
        buf.write(_g(z) + "," + ",".join(_g(ev.values[k, j]) for k in range(ns.kmax + 1)) + "\n")
    return 0, buf.getvalue()


def _cmd_resonance(cfg: RunConfig, ns) -> tuple:
    params = cfg.params
    if ns.h is not None:
        params = dataclasses.replace(params, planck_h=ns.h)
    if ns.c is not None:
        params = dataclasses.replace(params, coupling_c=ns.c)
    grid = cfg.grid
    if ns.N is not None or ns.L is not None:
        grid = GridSpec(
            n=params.n,
            half_width=ns.L if ns.L is not None else cfg.grid.half_width,
            points_per_dim=ns.N if ns.N is not None else cfg.grid.points_per_dim,
            stencil_order=cfg.grid.stencil_order,
        )
    theta = ns.theta if ns.theta is not None else cfg.theta
    res = compute_resonance(params, cfg.model, grid, theta=theta, tol=cfg.resonance_tol)
    payload = {
        "rho_re": res.rho.real,
        "rho_im": res.rho.imag,
        "eigvec_residual": res.eigvec_residual,
        "theta_used": res.theta_used,
        "theta_drift": res.theta_drift,
        "iterations": res.iterations,
        "accepted": accept_sample(res.rho, res.eigvec_residual, res.theta_drift),
        "boundary_decay": boundary_decay(params, cfg.model, grid),
        "config_fingerprint": config_fingerprint(cfg),
    }
    return 0, _json(payload)


def _resolve_h_list(cfg: RunConfig) -> list:
    if cfg.h_list is not None:
        return sorted((float(h) for h in cfg.h_list), reverse=True)
    if cfg.s_over_h is None:
        raise ConfigError("scan needs h_list or s_over_h in the [scan] section")
    if cfg.model.family != RADIAL_FAMILY:
        raise ConfigError("s_over_h requires the radial family; give h_list explicitly")
    s_geo = action_radial_oracle(cfg.params, cfg.model)
    return [s_geo / k for k in sorted(cfg.s_over_h)]


def _scan_one(task):
    """Worker-pool task: one validated resonance for one h."""
    params, model, grid, theta, tol = task
    try:
        res = compute_resonance(params, model, grid, theta=theta, tol=tol)
        return ScanSample(
            h=params.planck_h, theta=theta, points_per_dim=grid.points_per_dim,
            half_width=grid.half_width, rho=res.rho, residual=res.eigvec_residual,
            theta_drift=res.theta_drift,
            accepted=accept_sample(res.rho, res.eigvec_residual, res.theta_drift),
        )
    except (SpectralError, ValueError):
        return ScanSample(
            h=params.planck_h, theta=theta, points_per_dim=grid.points_per_dim,
            half_width=grid.half_width, rho=complex(float("nan"), float("nan")),
            residual=float("inf"), theta_drift=float("nan"), accepted=False,
        )


def _parallel_scan(cfg: RunConfig, h_list, cache_path: str, workers: int) -> list:
    cache = _load_cache(cache_path)
    theta_of = lambda h: cfg.theta if cfg.theta is not None else default_theta(h)
    tasks, order = [], []
    for h in h_list:
        theta = theta_of(h)
        key = _sample_key(h, theta, cfg.grid.points_per_dim, cfg.grid.half_width)
        order.append(key)
        if key not in cache:
            params = dataclasses.replace(cfg.params, planck_h=h)
            tasks.append((key, (params, cfg.model, cfg.grid, theta, cfg.resonance_tol)))
    if tasks:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for (key, _), sample in zip(tasks, pool.map(_scan_one, [t for _, t in tasks])):
                cache[key] = sample
                _append_cache(cache_path, sample)
    return [cache[key] for key in order]


def _cmd_scan(cfg: RunConfig, ns) -> tuple:
    h_list = _resolve_h_list(cfg)
    cache_path = ns.cache or _default_cache(cfg)
    os.makedirs(os.path.dirname(cache_path) or ".", exist_ok=True)
    fingerprint = config_fingerprint(cfg)
    _check_cache_stamp(cache_path, fingerprint, create=True)
    if ns.workers <= 1:
        samples = width_scan(cfg.params, cfg.model, cfg.grid, h_list,
                             cache_path=cache_path, tol=cfg.resonance_tol)
    else:
        samples = _parallel_scan(cfg, h_list, cache_path, ns.workers)
    payload = {
        "cache": cache_path,
        "config_fingerprint": fingerprint,
        "samples": [
            {"h": s.h, "theta": s.theta, "N": s.points_per_dim, "L": s.half_width,
             "rho_re": s.rho.real, "rho_im": s.rho.imag, "residual": s.residual,
             "theta_drift": s.theta_drift, "accepted": s.accepted}
            for s in samples
        ],
    }
    return 0, _json(payload)


def _read_cache_or_die(cfg: RunConfig, path: str) -> list:
    if not os.path.exists(path):
        raise ConfigError(f"cache {path!r} does not exist")
    _check_cache_stamp(path, config_fingerprint(cfg), create=False)
    samples = list(_load_cache(path).values())
    if not samples:
        raise ConfigError(f"cache {path!r} is empty")
    return sorted(samples, key=lambda s: -s.h)


def _cmd_fit(cfg: RunConfig, ns) -> tuple:
    samples = _read_cache_or_die(cfg, ns.cache or _default_cache(cfg))
    fit = fit_width(samples, fix_exponent=ns.fix_exponent)
    payload = {
        "S_fit": fit.S_fit,
        "two_S_fit": 2.0 * fit.S_fit,
        "prefactor_exponent": fit.prefactor_exponent,
        "log_f00": fit.log_f00,
        "f00": math.exp(fit.log_f00),
        "residual_rms": fit.residual_rms,
        "samples_used": len(fit.samples),
        "config_fingerprint": config_fingerprint(cfg),
    }
    return 0, _json(payload)


def _cmd_verify(cfg: RunConfig, ns) -> tuple:
    checks = []

    def run(name, fn):
        start = time.perf_counter()
        measured, threshold = fn()
        checks.append(
            {"name": name, "measured": float(measured), "threshold": float(threshold),
             "pass": bool(measured <= threshold),
             "seconds": round(time.perf_counter() - start, 3)}
        )

    def action_pair():
        field = EikonalField(cfg.params, cfg.model)
        pair = find_correspondence_pair(cfg.params, field)
        s_geo = action(build_broken_path(cfg.params, field, pair)).S
        phases = tr.build_transformed_phases(cfg.params, field)
        state["s_geo"] = s_geo
        return abs(phases.S_mu - s_geo) / s_geo, 1e-4

    def oracle():
        if cfg.model.family != RADIAL_FAMILY:
            return 0.0, 1.0  # no oracle away from the radial family
        ref = action_radial_oracle(cfg.params, cfg.model)
        return abs(state["s_geo"] - ref) / ref, 1e-8

    def weber_chain():
        worst = 0.0
        for eps in (0.5, 1.0, 2.0):
            worst = max(worst, float(weber_family(eps, 3, 0.0, 14.0).residuals.max()))
        return worst, 1e-8

    def weber_exact():
        ev = weber_family(1.0, 0, 0.0, 14.0)
        mask = ev.z_grid <= 6.0
        exact = np.sqrt(2.0 * np.pi) * np.exp(ev.z_grid[mask] ** 2 / 4.0)
        return float(np.max(np.abs(ev.values[0, mask] - exact) / exact)), 1e-8

    def fit_roundtrip():
        rows = []
        for h in np.linspace(0.01, 0.025, 7):
            width = 0.7 * h**1.5 * math.exp(-2.0 * 0.05 / h)
            rows.append(ScanSample(h=float(h), theta=default_theta(h), points_per_dim=2048,
                                   half_width=2.0, rho=complex(0.1 * h, -width),
                                   residual=1e-15, theta_drift=0.0, accepted=True))
        return abs(fit_width(rows).S_fit - 0.05), 1e-6

    def symmetry():
        params = ModelParams(n=1, mu=cfg.params.mu, tau=cfg.params.tau,
                             coupling_c=cfg.params.coupling_c, planck_h=1e-3)
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=128)
        op = assemble(params, PotentialModel.radial(1), grid, theta=0.01)
        return float((op.matrix - op.matrix.T).nnz), 0.0

    def uncoupled_reality():
        params = ModelParams(n=1, mu=cfg.params.mu, tau=cfg.params.tau,
                             coupling_c=0.0, planck_h=1e-3)
        grid = GridSpec(n=1, half_width=2.0, points_per_dim=2048)
        res = compute_resonance(params, PotentialModel.radial(1), grid, drift_check=False)
        floor = 10.0 * max(res.eigvec_residual, 1e-15)
        return abs(res.rho.imag) / floor, 1.0

    state: dict = {}
    run("action cross-representation gap", action_pair)
    run("radial oracle agreement", oracle)
    run("special-function chain residuals", weber_chain)
    run("special-function exact case", weber_exact)
    run("width-fit synthetic roundtrip", fit_roundtrip)
    run("operator exact symmetry", symmetry)
    run("uncoupled eigenvalue reality", uncoupled_reality)

    overall = all(c["pass"] for c in checks)
    payload = {
        "checks": checks,
        "overall_pass": overall,
        "config_fingerprint": config_fingerprint(cfg),
    }
    return (0 if overall else 1), _json(payload)


def _cmd_report(cfg: RunConfig, ns) -> tuple:
    samples = _read_cache_or_die(cfg, ns.cache or _default_cache(cfg))
    fingerprint = config_fingerprint(cfg)
    lines = [f"config fingerprint: {fingerprint}"]
    s_geo = None
    if cfg.model.family == RADIAL_FAMILY:
        s_geo = action_radial_oracle(cfg.params, cfg.model)
        lines.append(f"geometric 2S (radial oracle): {_g(s_geo)}")
    lines.append("")
    lines.append(f"{'h':>22} {'theta':>12} {'N':>6} {'L':>8} "
                 f"{'Re rho':>24} {'Im rho':>24} {'residual':>10} {'drift':>10} ok")
    for s in samples:
        lines.append(
            f"{_g(s.h):>22} {s.theta:>12.6f} {s.points_per_dim:>6d} {s.half_width:>8.3f} "
            f"{_g(s.rho.real):>24} {_g(s.rho.imag):>24} {s.residual:>10.2e} "
            f"{s.theta_drift:>10.2e} {'1' if s.accepted else '0'}"
        )
    lines.append("")
    try:
        fit = fit_width(samples)
        kind = "unconstrained"
    except SpectralError:
        try:
            fit = fit_width(samples, fix_exponent=1.5)
            kind = "constrained q = 3/2"
        except SpectralError as exc:
            fit, kind = None, str(exc)
    if fit is None:
        lines.append(f"fit: unavailable ({kind})")
    else:
        lines.append(
            f"fit ({kind}): 2*S_fit = {_g(2 * fit.S_fit)}, q = {_g(fit.prefactor_exponent)}, "
            f"exp(b) = {_g(math.exp(fit.log_f00))}, rms = {fit.residual_rms:.3e}"
        )
        if s_geo is not None:
            lines.append(f"relative gap to geometric 2S: {abs(2 * fit.S_fit - s_geo) / s_geo:.4%}")
    if ns.plot_csv:
        with open(ns.plot_csv, "w", newline="") as handle:
            handle.write(f"# config fingerprint: {fingerprint}\n")
            handle.write("h,minus_h_log_width\n")
            for s in samples:
                if s.accepted and s.rho.imag < 0:
                    handle.write(f"{_g(s.h)},{_g(-s.h * math.log(abs(s.rho.imag)))}\n")
        lines.append(f"plot data written to {ns.plot_csv}")
    return 0, "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config file (built-in defaults if omitted)")
    common.add_argument("--out", default=None, help="also write the printed result to this file")

    parser = argparse.ArgumentParser(prog="artifact",
                                     description="tunneling-width laboratory command line")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("action", parents=[common], help="tunneling-loop action by path geometry")
    p.add_argument("--both", action="store_true",
                   help="also compute the transformed-phase value and the relative gap")
    p.add_argument("--dump-path", default=None, metavar="CSV",
                   help="write the sampled loop trajectory to this CSV file")

    sub.add_parser("transform-check", parents=[common],
                   help="run the full invariant battery and emit a JSON report")

    p = sub.add_parser("weber", parents=[common], help="tabulate the special-function chain as CSV")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--range", type=float, nargs=2, required=True, metavar=("A", "B"))

    p = sub.add_parser("resonance", parents=[common], help="one translated-operator eigenvalue as JSON")
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--c", type=float, default=None)

    p = sub.add_parser("scan", parents=[common], help="width scan over the configured h values")
    p.add_argument("--cache", default=None, help="CSV cache path (default: per-config file)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (one h per task)")

    p = sub.add_parser("fit", parents=[common], help="decay-law fit over a scan cache")
    p.add_argument("--cache", default=None)
    p.add_argument("--fix-exponent", type=float, default=None,
                   help="freeze the prefactor exponent (e.g. 1.5)")

    sub.add_parser("verify", parents=[common], help="run the mandatory check battery")

    p = sub.add_parser("report", parents=[common], help="human-readable scan summary")
    p.add_argument("--cache", default=None)
    p.add_argument("--plot-csv", default=None, metavar="CSV",
                   help="write plot-ready (h, -h*ln|Im rho|) rows to this file")
    return parser


_HANDLERS = {
    "action": _cmd_action,
    "transform-check": _cmd_transform_check,
    "weber": _cmd_weber,
    "resonance": _cmd_resonance,
    "scan": _cmd_scan,
    "fit": _cmd_fit,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def run_subcommand(argv) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        cfg = load_config(ns.config)
        code, text = _HANDLERS[ns.command](cfg, ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EikonalError, FlowError, InstantonError, TransformError, SpectralError,
            WeberError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    for target in (ns.out, cfg.results):
        if target:
            os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
            with open(target, "w") as handle:
                handle.write(text)
    return code


def main(argv=None) -> int:
    return run_subcommand(sys.argv[1:] if argv is None else list(argv))
