"""Command-line front end: validate | bands | converge | constants."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .cascade import CascadeContext, cascade_constants
from .coefficients import validate
from .errors import EXIT_CODES, ElastohomError, InvalidInput, SlopeCheckFailed
from .fiber import korn_constant
from .fullspace import default_source, run_convergence
from .spectral import Contour, build_contour, rayleigh_sweep

log = logging.getLogger("elastohom")


def _exit_code_help() -> str:
    lines = ["exit codes:", "  0  success", "  1  unexpected internal error"]
    for name, code in sorted(EXIT_CODES.items(), key=lambda kv: kv[1]):
        lines.append(f"  {code:<2} {name}")
    return "\n".join(lines)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    return cfg.with_overrides(n=args.grid, max_cycles=args.cycles, truncation=args.truncation,
                              workers=args.workers, out=args.out)


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(cfg: config_mod.RunConfig) -> int:
    A = cfg.coefficients()
    cert = validate(A)
    from .fiber import CellKernels

    sweep = rayleigh_sweep(A, CellKernels(A), np.random.default_rng(cfg.seed), trials=100)
    report = {
        "coefficients": A.description,
        "grid": A.grid.n_per_axis,
        "symmetric": cert.symmetric,
        "nu_measured": cert.nu_measured,
        "nu_upper": cert.nu_upper,
        "nu_two_sided": cert.nu_two_sided,
        "korn_constant": korn_constant(A.grid),
        "rayleigh": sweep.to_report(),
        "passed": bool(sweep.passed),
    }
    out = _out_dir(cfg)
    _write_json(out / "certificate.json", report)
    log.info("nu = %.6g, C_korn = %.6g, rayleigh sweep %s", cert.nu_measured, report["korn_constant"],
             "ok" if sweep.passed else "FAILED")
    print(json.dumps({"nu": cert.nu_measured, "passed": report["passed"]}))
    return 0 if sweep.passed else 1


def _context(cfg):
    A = cfg.coefficients()
    validate(A)
    return CascadeContext(A, cfg.solver())


def _bands(cfg, ctx) -> Contour:
    contour = build_contour(ctx, cfg.solver(), M=cfg.M, candidates=list(cfg.mu_candidates))
    out = _out_dir(cfg)
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chi1", "chi2", "chi3", "chi_norm", "lam1", "lam2", "lam3", "lam4",
                    "lam1_rescaled", "lam2_rescaled", "lam3_rescaled", "lam4_rescaled",
                    "hom1_rescaled", "hom2_rescaled", "hom3_rescaled"])
        for p in contour.sweep:
            t2 = float(np.dot(p.chi, p.chi))
            w.writerow([repr(float(x)) for x in (*p.chi, np.sqrt(t2), *(v * t2 for v in p.low), *p.low, *p.hom)])
    _write_json(out / "contour.json", contour.to_report())
    from .plotting import bands_figure

    bands_figure(contour.sweep, out / "bands.png", contour.to_report())
    log.info("contour: center %.4f radius %.4f mu %.4f rho0 %.4f", contour.center, contour.radius,
             contour.mu, contour.rho0_measured)
    return contour


def cmd_bands(cfg: config_mod.RunConfig) -> int:
    ctx = _context(cfg)
    c = _bands(cfg, ctx)
    print(json.dumps(c.to_report()))
    return 0


def cmd_converge(cfg: config_mod.RunConfig, contour_path: str | None = None) -> int:
    ctx = _context(cfg)
    if contour_path:
        d = json.loads(Path(contour_path).read_text())
        contour = Contour(d["center"], d["radius"], cfg.M, d["mu"], d.get("rho0_measured", 0.0))
    else:
        contour = _bands(cfg, ctx)
    src = default_source(cfg.nodes, cfg.K_radius, cfg.node_radius, cfg.seed)
    rep = run_convergence(ctx, contour, src, cfg.solver(), eps_ladder=cfg.eps, n_max=cfg.max_cycles,
                          truncations=(cfg.truncation,), slope_tol=cfg.slope_tol, workers=cfg.workers)
    rep.metadata["config"] = cfg.as_dict()
    out = _out_dir(cfg)
    _write_json(out / "report.json", rep.to_json())
    cols = ["n", "eps", "l2_error", "h1_error", "truncation", "grid", "mu", "contour_M"]
    with open(out / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rep.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    with open(out / "plot.dat", "w") as fh:
        fh.write("# n eps l2_error h1_error\n")
        for n in sorted({r["n"] for r in rep.rows}):
            for r in sorted((r for r in rep.rows if r["n"] == n), key=lambda r: r["eps"]):
                fh.write(f"{n} {r['eps']:.17g} {r['l2_error']:.17g} {r['h1_error']:.17g}\n")
            fh.write("\n\n")
    from .plotting import convergence_figure

    convergence_figure(rep.rows, rep.slopes, out / f"convergence_{cfg.truncation}.png", cfg.truncation)
    for ch in rep.checks:
        log.info("%s n=%d %s slope %s (expected %s, %s) %s", ch["truncation"], ch["n"], ch["norm"],
                 "nan" if ch["slope"] is None else f"{ch['slope']:.3f}", ch["expected"], ch["kind"],
                 "ok" if ch["pass"] else "FAIL")
    print(json.dumps({"passed": rep.passed, "slopes": rep.slopes}, sort_keys=True))
    if not rep.passed:
        raise SlopeCheckFailed("at least one slope check failed; see report.json")
    return 0


def cmd_constants(nu: float, korn: float) -> int:
    print(json.dumps(cascade_constants(nu, korn).as_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file (INI sections)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--workers", type=int, metavar="N", help="parallel fiber workers")
    common.add_argument("--grid", type=int, metavar="N", help="grid points per axis (even, >= 4)")
    common.add_argument("--cycles", type=int, metavar="N", help="largest cascade cycle count")
    common.add_argument("--truncation", choices=("full", "reduced_l2", "reduced_h1"))
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p = argparse.ArgumentParser(prog="elastohom", description="Periodic elasticity homogenization toolkit.",
                                epilog=_exit_code_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="coefficient certificate, Korn constant, Rayleigh sweep")
    sub.add_parser("bands", parents=[common], help="low band sweep and contour")
    conv = sub.add_parser("converge", parents=[common], help="full-space convergence run")
    conv.add_argument("--contour", metavar="PATH", help="reuse a contour.json from an earlier bands run")
    const = sub.add_parser("constants", parents=[common], help="print the cascade constants")
    const.add_argument("--nu", type=float, required=True)
    const.add_argument("--korn", type=float, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "constants":
            return cmd_constants(args.nu, args.korn)
        cfg = _load_config(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "bands":
            return cmd_bands(cfg)
        if args.command == "converge":
            return cmd_converge(cfg, args.contour)
        raise InvalidInput(f"unknown command {args.command}")
    except ElastohomError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
