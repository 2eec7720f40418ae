"""Command-line runner for the hypershell experiments.

Every command reads one JSON config (``--config``; a bundled config name
also works) and writes CSV/JSON results into ``--out``.  Exit codes: 0 ok,
2 invalid config, 3 non-hyperbolic surface, 4 solver failure, 5 unsaturated
Korn basis, 6 appendix check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .surface_geometry import (
    CurveOnSurface,
    NotHyperbolicError,
    SurfaceError,
    asymptotic_directions,
    expression_surface,
    gauss_curvature,
    get_surface,
    shape_operator,
)

log = logging.getLogger("hypershell")

DEFAULT_SEED = 0xC0FFEE
EXIT_OK, EXIT_CONFIG, EXIT_NONHYPERBOLIC, EXIT_SOLVER, EXIT_UNSATURATED, EXIT_APPENDIX = 0, 2, 3, 4, 5, 6


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config helpers


def load_config(spec: Optional[str]) -> dict:
    """Read a config file, or a bundled config by name (with or without ``.json``)."""
    if spec is None:
        return {}
    p = Path(spec)
    if p.is_file():
        text = p.read_text()
    else:
        name = spec if spec.endswith(".json") else spec + ".json"
        try:
            text = resources.files("hypershell").joinpath("configs", name).read_text()
        except (FileNotFoundError, OSError) as exc:
            raise ConfigError(f"config {spec!r} not found") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def bundled_configs() -> list[str]:
    return sorted(p.name for p in resources.files("hypershell").joinpath("configs").iterdir()
                  if p.name.endswith(".json"))


def _positive(cfg: dict, key: str, default=None, kind=float):
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"missing parameter {key!r}")
    try:
        v = kind(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"parameter {key!r} must be a number") from exc
    if not v > 0:
        raise ConfigError(f"parameter {key!r} must be positive")
    return v


def make_surface(spec):
    """``"monkey_saddle"``, ``{"name": ..., "domain": ...}`` or ``{"expressions": [...], "domain": ...}``."""
    try:
        if isinstance(spec, str):
            return get_surface(spec)
        if isinstance(spec, dict) and "expressions" in spec:
            return expression_surface(spec["expressions"], spec["domain"], spec.get("variables", ("u", "v")))
        if isinstance(spec, dict) and "name" in spec:
            dom = spec.get("domain")
            return get_surface(spec["name"], None if dom is None else tuple(map(tuple, dom)))
    except (SurfaceError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid surface spec: {exc}") from exc
    raise ConfigError("surface must be a name or an object with 'name' or 'expressions'")


def make_anchor(spec: dict) -> CurveOnSurface:
    """Straight anchor ``point + t * direction`` on ``t_range``."""
    try:
        p = np.asarray(spec["point"], dtype=float)
        d = np.asarray(spec["direction"], dtype=float)
        lo, hi = map(float, spec["t_range"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"anchor needs point, direction and t_range: {exc}") from exc
    if p.shape != (2,) or d.shape != (2,) or not hi > lo:
        raise ConfigError("anchor point/direction must be 2-vectors and t_range increasing")
    return CurveOnSurface(lambda t: p + np.asarray(t, dtype=float)[..., None] * d, (lo, hi),
                          lambda t: np.broadcast_to(d, np.shape(t) + (2,)))


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if not isinstance(v, str) else v for v in r) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_surface_info(cfg: dict, out: Path, args) -> int:
    """Curvature range, hyperbolicity and principal/asymptotic samples over a parameter box."""
    S = make_surface(cfg.get("surface", "monkey_saddle"))
    if "box" in cfg:
        box = cfg["box"]
    else:
        # keep finite-difference stencils of expression surfaces inside the domain
        pad = 0.0 if S.analytic else 2.5 * S.fd_step2
        box = tuple((lo + pad, hi - pad) for lo, hi in S.domain)
    n = int(args.grid or cfg.get("samples", 33))
    if n < 2:
        raise ConfigError("samples must be at least 2")
    (a1, b1), (a2, b2) = box
    U = np.stack(np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij"), -1)
    kappa = gauss_curvature(S, U)
    ev = np.linalg.eigvals(shape_operator(S, U)).real
    k1, k2 = ev.max(axis=-1), ev.min(axis=-1)
    at0 = None
    if (a1 <= 0 <= b1) and (a2 <= 0 <= b2):
        at0 = float(gauss_curvature(S, np.zeros(2)))
    report = {"surface": S.name, "box": [list(map(float, box[0])), list(map(float, box[1]))], "samples": n,
              "kappa_min": float(kappa.min()), "kappa_max": float(kappa.max()), "kappa_at_origin": at0,
              "hyperbolic": bool(np.all(kappa < 0))}
    rows = []
    if report["hyperbolic"]:
        Ap, Am = asymptotic_directions(S, U)
        for i in range(n):
            for j in range(n):
                rows.append((U[i, j, 0], U[i, j, 1], kappa[i, j], k1[i, j], k2[i, j],
                             Ap[i, j, 0], Ap[i, j, 1], Am[i, j, 0], Am[i, j, 1]))
    write_json(out / "surface_info.json", report)
    write_csv(out / "surface_samples.csv",
              ["u1", "u2", "kappa", "k1", "k2", "a_plus_1", "a_plus_2", "a_minus_1", "a_minus_2"], rows)
    if not report["hyperbolic"]:
        log.error("surface is not hyperbolic on the box (max kappa %.3e)", report["kappa_max"])
        return EXIT_NONHYPERBOLIC
    return EXIT_OK


def cmd_solve_strain(cfg: dict, out: Path, args) -> int:
    """Local strain solve on an asymptotic chart, with a manufactured-solution error table."""
    from .asymptotic_atlas import build_chart
    from .planar_regions import region_from_json
    from .strain_system import (
        SmoothAmbientField,
        StrainTensorField,
        covariant_on_curve,
        manufactured,
        phi_components,
        solve_strain_local,
        strain_of,
    )

    S = make_surface(cfg.get("surface", "hyperbolic_paraboloid"))
    if "anchor" not in cfg or "region" not in cfg:
        raise ConfigError("solve-strain needs 'anchor' and 'region'")
    anchor = make_anchor(cfg["anchor"])
    n = int(args.grid or cfg.get("grid", 65))
    tol = float(args.tol if args.tol is not None else cfg.get("tol", 1e-3))
    data = cfg.get("data", {"type": "zero"})
    seed = int(args.seed if args.seed is not None else data.get("seed", DEFAULT_SEED))
    try:
        region = region_from_json(cfg["region"])
    except Exception as exc:  # region validation errors of any kind are config errors
        raise ConfigError(f"invalid region: {exc}") from exc
    chart = build_chart(S, anchor, n=n)
    exact = None
    if data.get("type") == "manufactured":
        rng = np.random.default_rng(seed)
        y = SmoothAmbientField.random(S, rng, terms=int(data.get("terms", 3)),
                                      max_freq=float(data.get("max_freq", 2.0)))
        exact, U = manufactured(chart, y)
        beta = region.pieces[region.labels.index("Pminus")].beta
        cov = covariant_on_curve(chart, y.tangential_u, beta)
        q1 = lambda s: cov(s)[..., 0] * beta.derivative(s)[..., 0]  # noqa: E731
        phi = phi_components(chart, y.tangential_u)
    elif data.get("type", "zero") == "zero":
        U, q1, phi = StrainTensorField.zeros(chart), None, None
    else:
        raise ConfigError(f"unknown data type {data.get('type')!r}")
    disp = solve_strain_local(chart, region, U, q1=q1, phi=phi, tol=cfg.get("solver_tol"))
    disp.to_csv(out / "displacement.csv")
    disp.to_field().to_binary(out / "W.bin")
    res = strain_of(disp) - U
    summary = {"nodes": int(disp.mask.sum()), "grid": n, "seed": seed, "tol": tol,
               "strain_residual_rel": res.norm(disp.mask) / max(U.norm(disp.mask), 1e-300),
               "pieces": [{"label": r.label, "iterations": r.iterations, "depth": r.depth}
                          for r in disp.solution.reports]}
    if exact is not None:
        m = disp.mask
        summary["max_error_W"] = float(np.nanmax(np.linalg.norm(disp.tangential() - exact.tangential(), axis=-1)))
        summary["max_error_w"] = float(np.max(np.abs(disp.w - exact.w)[m]))
        summary["max_error"] = max(summary["max_error_W"], summary["max_error_w"])
    else:
        summary["max_error"] = float(max(np.max(np.abs(disp.W1)), np.max(np.abs(disp.W2)), np.max(np.abs(disp.w))))
    write_json(out / "solve_summary.json", summary)
    write_csv(out / "error_table.csv", ["quantity", "value"],
              [(k, v) for k, v in sorted(summary.items()) if isinstance(v, float)])
    if summary["max_error"] > tol:
        log.error("max error %.3e above tolerance %.3e", summary["max_error"], tol)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_korn_scale(cfg: dict, out: Path, args) -> int:
    """Korn-quotient scaling in the thickness, or the synthetic power-law self-test."""
    from .rigidity_korn import (
        InvalidShellError,
        QuotientRecord,
        SaturationError,
        ShellModel,
        fit_scaling,
        saturated_quotient,
        write_records_csv,
        write_records_json,
    )

    hs = cfg.get("h_list")
    if not isinstance(hs, list) or len(hs) < 4:
        raise ConfigError("h_list needs at least 4 thickness values")
    hs = [float(h) for h in hs]
    if any(h <= 0 for h in hs):
        raise ConfigError("thickness values must be positive")
    if max(hs) < 2 * min(hs) * (1 - 1e-12):
        raise ConfigError("thickness values must span at least one octave")
    records = []
    if "synthetic" in cfg:
        syn = cfg["synthetic"]
        rng = np.random.default_rng(int(args.seed if args.seed is not None else syn.get("seed", DEFAULT_SEED)))
        p = float(syn.get("exponent", -4.0 / 3.0))
        c = _positive(syn, "c", 1.0)
        noise = float(syn.get("noise", 0.0))
        for h in hs:
            lam = c * h ** p * (1.0 + noise * rng.uniform(-1, 1))
            records.append(QuotientRecord(h, lam, 0, 0, 0.0))
    else:
        S = make_surface(cfg.get("surface", "monkey_saddle"))
        box = tuple(map(tuple, cfg.get("box", [[0.6, 1.6], [-0.5, 0.5]])))
        sched = [int(k) for k in cfg.get("K_schedule", [6, 8, 11, 14])]
        degree = int(cfg.get("degree", 2))
        rel = float(cfg.get("saturation", 0.02))
        history = {}
        for h in hs:
            try:
                shell = ShellModel(S, box, h, t_nodes=int(cfg.get("t_nodes", 5)),
                                   free_side=cfg.get("free_side", "top"), modes=cfg.get("modes", "legendre"))
            except InvalidShellError as exc:
                raise ConfigError(str(exc)) from exc
            try:
                rec, hist = saturated_quotient(shell, sched, degree, rel)
            except SaturationError as exc:
                write_json(out / "saturation_report.json", exc.report)
                log.error("%s", exc)
                return EXIT_UNSATURATED
            records.append(rec)
            history[repr(h)] = [r.to_dict() for r in hist]
            log.info("h=%g lambda_max=%.6g K=%d", h, rec.lambda_max, rec.K)
        write_json(out / "saturation_history.json", history)
    fit = fit_scaling(records)
    write_records_csv(records, out / "korn_records.csv")
    write_records_json(records, fit, out / "korn_records.json")
    write_json(out / "slope.json", fit.to_dict())
    return EXIT_OK


def cmd_appendix_verify(cfg: dict, out: Path, args) -> int:
    """Principal-direction computations on the monkey saddle and the obstruction report."""
    from . import principal_analysis as pa

    tol = float(args.tol if args.tol is not None else cfg.get("tol", 1e-3))
    x1s = np.array(cfg.get("lambda_x1", [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]))
    l1, _ = pa.principal_curvatures(np.stack([x1s, np.zeros_like(x1s)], -1))
    lam_err = float(np.max(np.abs(l1 - pa.lambda1_on_axis(x1s))))
    ladder = tuple(cfg.get("x2_ladder", pa.DEFAULT_X2_LADDER))
    limit = pa.richardson_limit(ladder, [h * pa.eta(np.array([-1.0, h])) for h in ladder])
    eta_lim = pa.richardson_limit(ladder, [pa.eta(np.array([1.0, h])) for h in ladder])
    rep = pa.principal_obstruction_report(-1.0, 1.0, ladder)
    checks = {
        "lambda1_axis_formula": {"value": lam_err, "target": 0.0, "ok": lam_err <= 1e-10},
        "x2_eta_limit_at_minus_1": {"value": limit, "target": -1.375, "ok": abs(limit + 1.375) <= tol},
        "eta_limit_at_plus_1": {"value": eta_lim, "target": 0.0, "ok": abs(eta_lim) <= tol},
        "zeta1_jump_at_minus_1": {"value": rep.zeta1_jump, "target": 2 / np.sqrt(10),
                                  "ok": abs(rep.zeta1_jump - 2 / np.sqrt(10)) <= tol},
        "zeta1_one_sided_opposite": {
            "value": [rep.zeta1_limit_above, rep.zeta1_limit_below], "target": 1 / np.sqrt(10),
            "ok": bool(rep.zeta1_limit_above * rep.zeta1_limit_below < 0
                       and abs(abs(rep.zeta1_limit_above) - 1 / np.sqrt(10)) <= tol
                       and abs(abs(rep.zeta1_limit_below) - 1 / np.sqrt(10)) <= tol)},
        "obstruction": {"value": rep.obstruction_holds, "target": True, "ok": rep.obstruction_holds},
    }
    write_json(out / "appendix_report.json", {"checks": checks, "obstruction": rep.to_dict(), "tol": tol})
    if not all(c["ok"] for c in checks.values()):
        log.error("appendix check failed: %s", [k for k, c in checks.items() if not c["ok"]])
        return EXIT_APPENDIX
    return EXIT_OK


def cmd_region_selftest(cfg: dict, out: Path, args) -> int:
    """Oracle suite of the characteristic solver."""
    from .characteristic_solver import BoundaryData, CharSystem, solve_primitive, solve_region, xi_minus_data
    from .planar_regions import PlanarCurve, make_region

    n = int(args.grid or cfg.get("grid", 129))
    results = {}
    R = make_region("R", z=(0.0, 0.0), a=1.0, b=1.0)
    f = solve_primitive(R, CharSystem(), BoundaryData.for_R(lambda x2: x2, lambda x1: x1), grid=n)
    X1, X2 = np.meshgrid(f.x1, f.x2, indexing="ij")
    results["transport"] = float(max(np.max(np.abs(f.f1 - X2)), np.max(np.abs(f.f2 - X1))))
    f = solve_primitive(R, CharSystem(a11=1.0), BoundaryData.for_R(1.0, 0.0), grid=n)
    results["exponential"] = float(max(np.max(np.abs(f.f1 - np.exp(X1))), np.max(np.abs(f.f2))))
    g = PlanarCurve.segment((0.0, 0.0), (1.0, -1.0))
    E = make_region("E", gamma=g)
    f = solve_primitive(E, CharSystem(p1=1.0), BoundaryData.for_E(g, lambda t: np.zeros(np.shape(t) + (2,))),
                        grid=n)
    m = f.mask
    X1, X2 = np.meshgrid(f.x1, f.x2, indexing="ij")
    results["triangle"] = float(max(np.max(np.abs(f.f1 - (X1 + X2))[m]), np.max(np.abs(f.f2)[m])))
    beta = PlanarCurve.segment((0.0, 0.0), (0.5, 0.5))
    gam = PlanarCurve.segment((0.0, 0.0), (1.0, -1.0))
    xi = make_region("XiMinus", beta=beta, gamma=gam)
    data = xi_minus_data(xi, lambda t: np.ones(np.shape(t)), lambda t: np.zeros(np.shape(t) + (2,)))
    f = solve_region(xi, CharSystem(), data, grid=n)
    vals = f.f1[f.mask]
    results["xi_minus_pattern"] = float(np.min(np.minimum(np.abs(vals), np.abs(vals - 1.0))))
    tol = float(args.tol if args.tol is not None else cfg.get("tol", 1e-4))
    ok = all(v <= tol for v in results.values())
    write_json(out / "region_selftest.json", {"errors": results, "tol": tol, "grid": n, "ok": ok})
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {
    "surface-info": cmd_surface_info,
    "solve-strain": cmd_solve_strain,
    "korn-scale": cmd_korn_scale,
    "appendix-verify": cmd_appendix_verify,
    "region-selftest": cmd_region_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypershell", description="Strain equations and Korn scaling on hyperbolic shells.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", help="JSON config file or bundled config name")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--grid", type=int, help="grid size override")
        sp.add_argument("--tol", type=float, help="tolerance override")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help=f"random seed (default {DEFAULT_SEED:#x})")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    from .characteristic_solver import SolverError
    from .strain_system import StrainError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except NotHyperbolicError as exc:
        log.error("not hyperbolic: %s", exc)
        return EXIT_NONHYPERBOLIC
    except (SolverError, StrainError, SurfaceError) as exc:
        log.error("solver failure: %s: %s", type(exc).__name__, exc)
        try:
            write_json(out / "failure.json", {"error": type(exc).__name__, "message": str(exc)})
        except OSError:
            pass
        return EXIT_SOLVER
    log.info("%s finished in %.2f s with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
