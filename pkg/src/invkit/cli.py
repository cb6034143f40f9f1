"""Command-line entry point: ``invkit <command> [options]``.

Exit codes: 0 all checks pass, 2 validation error, 3 solver failure,
4 certificate check failure.
"""

from __future__ import annotations

import os

_threads = os.environ.get("INVKIT_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import grid_eval, mc_volume
from .models import (PHYSICAL_NAMES, PRESETS, SmibParams, ValidationError, build_poly_system, equilibrium,
                     physical_field)
from .sdp import export_sdpa, solve
from .sim import cct_bisection, cct_from_certificate, certificate_profile, integrate
from .sos import (AssemblyError, Certificate, CertificateProblem, ConfigurationError, ExtractionError,
                  assemble, extract_certificate, residual_check)

log = logging.getLogger("invkit")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        self.code = code
        super().__init__(msg)


@dataclass
class RunConfig:
    order: int = 2
    preset: str | None = "appendixB"
    params: dict = field(default_factory=dict)
    C_m: float | None = None
    taylor_order: int = 2
    omega_M: float | None = None
    k: int = 5
    a: float = 100.0
    beta: float = 1.0
    tol: float = 1e-8
    multipliers: str = "full"
    seed: int = 0
    nsamples: int = 100_000
    grid: float = 1e-3
    residual_tol: float = 1e-6
    output: str = "invkit-out"

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**data)

    def resolved_params(self) -> SmibParams:
        over = dict(self.params)
        if self.C_m is not None:
            over["C_m"] = self.C_m
        if self.omega_M is not None:
            over["omega_M"] = self.omega_M
        if self.preset:
            if self.preset not in PRESETS:
                raise ValidationError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
            return PRESETS[self.preset](self.order, **over)
        return SmibParams(**over)

    def validate(self) -> SmibParams:
        if self.order not in (2, 3, 4):
            raise ValidationError(f"model order must be 2, 3 or 4, got {self.order}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.taylor_order < 0:
            raise ValidationError("taylor_order must be >= 0")
        if self.a < 0 or self.beta <= 0 or self.tol <= 0 or self.grid <= 0:
            raise ValidationError("a must be >= 0 and beta, tol, grid must be > 0")
        return self.resolved_params()

    def resolved(self) -> dict:
        d = asdict(self)
        d["params"] = self.resolved_params().to_dict()
        d["preset"] = None
        d["C_m"] = d["omega_M"] = None
        return d

    def digest(self, keys=None) -> str:
        d = self.resolved()
        d.pop("output")
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def cert_digest(self, kind: str) -> str:
        keys = ["order", "params", "taylor_order", "k", "a", "beta", "tol", "multipliers"]
        return f"{kind}-{self.digest(keys)}"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.output)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _stamp(cfg: RunConfig) -> dict:
    return {"config": cfg.resolved(), "config_hash": cfg.digest(), "seed": cfg.seed,
            "invkit_version": __version__}


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)
    log.info("wrote %s", path)


def _cert_path(cfg: RunConfig, kind: str) -> Path:
    d = Path(cfg.output) / "certificates"
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{cfg.cert_digest(kind)}.json"


def _solve_certificate(cfg: RunConfig, kind: str, use_cache: bool = True):
    path = _cert_path(cfg, kind)
    if use_cache and path.exists():
        log.info("[sos] reusing cached %s certificate %s", kind, path.name)
        return Certificate.load(path), path, True
    params = cfg.validate()
    system = build_poly_system(cfg.order, params, cfg.taylor_order)
    try:
        asm = assemble(CertificateProblem(kind, cfg.k, system, a=cfg.a, beta=cfg.beta,
                                          multipliers=cfg.multipliers))
    except (AssemblyError, ConfigurationError) as exc:
        raise CliError(EXIT_VALIDATION, f"[sos] {exc}") from exc
    t0 = time.perf_counter()
    sol = solve(asm.problem, tol=cfg.tol)
    wall = time.perf_counter() - t0
    try:
        cert = extract_certificate(asm, sol)
    except ExtractionError as exc:
        raise CliError(EXIT_SOLVER, f"[sdp] {kind} k={cfg.k}: {exc}") from exc
    # timings live beside the certificate so the certificate file itself is reproducible
    solver_time = cert.meta.get("solver", {}).pop("time", None)
    cert.meta.update(_stamp(cfg))
    cert.save(path)
    _write_json(_timing_path(path), {"wall_time": wall, "solver_time": solver_time})
    return cert, path, False


def _timing_path(cert_path: Path) -> Path:
    return cert_path.with_suffix(".timing.json")


def _wall_time(cfg: RunConfig, kind: str) -> float | None:
    p = _timing_path(_cert_path(cfg, kind))
    if not p.exists():
        return None
    with open(p) as fh:
        return json.load(fh).get("wall_time")


def _load_certificate(cfg: RunConfig, kind: str) -> Certificate:
    path = _cert_path(cfg, kind)
    if not path.exists():
        raise CliError(EXIT_VALIDATION, f"[cli] missing artifact: no {kind} certificate at {path}; "
                                        f"run `invkit {'robust' if kind == 'robust-inner' else 'mpi'}` "
                                        "with the same configuration first")
    return Certificate.load(path)


def _system(cfg: RunConfig):
    return build_poly_system(cfg.order, cfg.validate(), cfg.taylor_order)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _run_certificates(cfg: RunConfig, kinds, label: str, no_cache: bool) -> int:
    system = _system(cfg)
    summary = dict(_stamp(cfg), command=label, certificates={})
    code = EXIT_OK
    for kind in kinds:
        cert, path, cached = _solve_certificate(cfg, kind, use_cache=not no_cache)
        rep = residual_check(cert, system, seed=cfg.seed, tol=cfg.residual_tol)
        ok = rep.passed and cert.certifies_invariance and cert.status in ("optimal", "near")
        summary["certificates"][kind] = {"file": str(path), "cached": cached, "objective": cert.objective,
                                         "u": cert.u, "status": cert.status, "residuals": rep.to_json(),
                                         "verdict": "PASS" if ok else "FAIL"}
        print(f"{kind:13s} k={cfg.k} objective={cert.objective:.8f} u={cert.u:.2e} "
              f"status={cert.status} residual={rep.worst:.2e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            code = EXIT_CHECK
    _write_json(_out(cfg) / f"{label}-{cfg.digest()}.json", summary)
    return code


def cmd_mpi(cfg: RunConfig, args) -> int:
    kinds = ["inner"] if args.inner_only else ["inner", "outer"]
    return _run_certificates(cfg, kinds, "mpi", args.no_cache)


def cmd_robust(cfg: RunConfig, args) -> int:
    return _run_certificates(cfg, ["robust-inner"], "robust", args.no_cache)


def _parse_sweep(spec: str | None):
    if not spec:
        return None, [None]
    name, _, vals = spec.partition("=")
    if not vals:
        raise ValidationError(f"--sweep expects NAME=v1,v2,..., got {spec!r}")
    return name.strip(), [float(v) for v in vals.split(",")]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("INVKIT_THREADS", "1")))
    except ValueError:
        return 1


def cmd_cct(cfg: RunConfig, args) -> int:
    name, values = _parse_sweep(args.sweep)
    jobs = []
    for val in values:
        c = cfg if name is None else replace(cfg, params=dict(cfg.params, **{name: val}))
        c.validate()
        jobs.append((val, c))

    def run(job):
        val, c = job
        params = c.resolved_params()
        out = {"sweep_value": val}
        if args.method in ("sim", "both"):
            out["simulation"] = cct_bisection(c.order, params, grid=c.grid).to_json()
        if args.method in ("cert", "both"):
            ci = _load_certificate(c, "inner")
            co = _load_certificate(c, "outer")
            res = cct_from_certificate(ci, co, c.order, params, grid=c.grid,
                                       system=build_poly_system(c.order, params, c.taylor_order))
            out["certificate"] = res.to_json()
        return out

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, jobs))
    code = EXIT_OK
    for r in results:
        if "simulation" in r and "certificate" in r:
            s, c = r["simulation"], r["certificate"]
            up = c["upper"] if c["upper"] is not None else math.inf
            sound = c["lower"] <= s["lower"] and s["upper"] <= up + c["grid_step"]
            r["bracket_sound"] = sound
            if not sound:
                code = EXIT_CHECK
        prefix = "" if name is None else f"{name}={r['sweep_value']:g} "
        for key in ("simulation", "certificate"):
            if key in r:
                up = r[key]["upper"]
                print(f"{prefix}{key:10s} CCT in [{1e3 * r[key]['lower']:.1f}, "
                      f"{'inf' if up is None else f'{1e3 * up:.1f}'}] ms {r[key]['note']}")
    _write_json(_out(cfg) / f"cct-{cfg.digest()}.json", dict(_stamp(cfg), sweep=name, results=results))
    return code


def cmd_volume(cfg: RunConfig, args) -> int:
    system = _system(cfg)
    res = {}
    for kind, region in (("inner", "inner"), ("outer", "outer")):
        cert = _load_certificate(cfg, kind)
        est = mc_volume(cert, region, system, nsamples=cfg.nsamples, seed=cfg.seed)
        res[kind] = est.to_json()
        print(f"{kind:5s} volume {est.value:.4f} +- {est.stderr:.4f} (fraction {est.fraction:.4f})")
    _write_json(_out(cfg) / f"volume-{cfg.digest()}.json", dict(_stamp(cfg), volumes=res))
    return EXIT_OK


def _parse_fixed(items) -> dict:
    out = {}
    for it in items or []:
        k, _, v = it.partition("=")
        out[int(k)] = float(v)
    return out


def cmd_contour(cfg: RunConfig, args) -> int:
    system = _system(cfg)
    axes = tuple(int(a) for a in args.axes.split(","))
    for kind in args.kinds.split(","):
        cert = _load_certificate(cfg, kind)
        g = grid_eval(cert, system, axes=axes, fixed=_parse_fixed(args.fix), resolution=args.resolution,
                      meta=dict(_stamp(cfg), kind=kind))
        path = _out(cfg) / f"contour-{kind}-{cfg.digest()}.csv"
        g.to_csv(path)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_export_sdpa(cfg: RunConfig, args) -> int:
    system = _system(cfg)
    asm = assemble(CertificateProblem(args.kind, cfg.k, system, a=cfg.a, beta=cfg.beta,
                                      multipliers=cfg.multipliers))
    path = Path(args.file) if args.file else _out(cfg) / f"{args.kind}-k{cfg.k}-{cfg.digest()}.dat-s"
    export_sdpa(asm.problem, path, comment=f"invkit {args.kind} k={cfg.k} config {cfg.digest()}")
    print(f"wrote {path}")
    return EXIT_OK


def _report_table(cfg: RunConfig, table: str, ks) -> int:
    rows = []
    system = _system(cfg)
    for k in ks:
        c = replace(cfg, k=k)
        row = {"k": k}
        for kind in ("inner", "outer"):
            if table == "II":
                # timings need a fresh solve
                cert, _, _ = _solve_certificate(c, kind, use_cache=False)
            else:
                cert, _, _ = _solve_certificate(c, kind)
            if table == "I":
                est = mc_volume(cert, kind, system, nsamples=cfg.nsamples, seed=cfg.seed)
                row[kind] = est.value
                row[kind + "_stderr"] = est.stderr
            else:
                row[kind + "_seconds"] = _wall_time(c, kind)
        rows.append(row)
        print(json.dumps(row))
    flags = {}
    if table == "I":
        inn = [r["inner"] for r in rows]
        out = [r["outer"] for r in rows]
        flags = {"inner_nondecreasing": all(a <= b for a, b in zip(inn, inn[1:])),
                 "outer_nonincreasing": all(a >= b for a, b in zip(out, out[1:])),
                 "inner_below_outer": all(a < b for a, b in zip(inn, out))}
    else:
        t = [r["inner_seconds"] for r in rows]
        flags = {"cost_increasing_in_k": all(a < b for a, b in zip(t, t[1:]))}
    print(json.dumps(flags))
    _write_json(_out(cfg) / f"table{table}-{cfg.digest()}.json", dict(_stamp(cfg), rows=rows, flags=flags))
    return EXIT_OK if all(flags.values()) else EXIT_CHECK


def _report_figure(cfg: RunConfig, fig: int, args) -> int:
    params = cfg.validate()
    system = build_poly_system(cfg.order, params, cfg.taylor_order)
    out = _out(cfg)
    if fig == 6:
        ci, _, _ = _solve_certificate(cfg, "inner")
        co, _, _ = _solve_certificate(cfg, "outer")
        traj = integrate(physical_field(cfg.order, params, "bolted-terminal"), equilibrium(cfg.order, params),
                         1.0, dt_out=cfg.grid, names=PHYSICAL_NAMES[cfg.order])
        vi, _ = certificate_profile(ci, system, traj)
        vo, _ = certificate_profile(co, system, traj)
        # sign flipped and normalized for plotting, raw values kept alongside
        norm_i = -vi / np.nanmax(np.abs(vi)) if np.isfinite(vi).any() else vi
        norm_o = vo / np.nanmax(np.abs(vo)) if np.isfinite(vo).any() else vo
        path = out / f"figure6-{cfg.digest()}.csv"
        traj.to_csv(path, extra={"v_inner": vi, "v_outer": vo, "v_inner_normalized": norm_i,
                                 "v_outer_normalized": norm_o})
        print(f"wrote {path}")
        return EXIT_OK
    kinds = ["robust-inner", "inner"] if fig == 8 else ["inner", "outer"]
    sections = [{}]
    if fig == 5 and cfg.order >= 3:
        sections = [{2: v} for v in (-0.5, 0.0, 0.5)]
    for kind in kinds:
        cert, _, _ = _solve_certificate(cfg, kind)
        for j, fixed in enumerate(sections):
            g = grid_eval(cert, system, axes=(0, 1), fixed=fixed, resolution=args.resolution,
                          meta=dict(_stamp(cfg), kind=kind, figure=fig))
            path = out / f"figure{fig}-{kind}-{j}-{cfg.digest()}.csv"
            g.to_csv(path)
            print(f"wrote {path}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    if args.table:
        ks = [int(k) for k in args.ks.split(",")]
        return _report_table(cfg, args.table, ks)
    if args.figure:
        return _report_figure(cfg, args.figure, args)
    raise ValidationError("report needs --table or --figure")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="RunConfig JSON file")
    g.add_argument("--preset", help="parameter preset (appendixB)")
    g.add_argument("--order", type=int, help="model order 2, 3 or 4")
    g.add_argument("--cm", type=float, dest="C_m", help="mechanical torque C_m")
    g.add_argument("--taylor-order", type=int, dest="taylor_order")
    g.add_argument("--omega-m", type=float, dest="omega_M")
    g.add_argument("--k", type=int, help="relaxation order")
    g.add_argument("--a", type=float, help="mass bound a")
    g.add_argument("--beta", type=float)
    g.add_argument("--tol", type=float, help="solver tolerance")
    g.add_argument("--multipliers", choices=["full", "truncated"])
    g.add_argument("--seed", type=int)
    g.add_argument("--nsamples", type=int)
    g.add_argument("--grid", type=float, help="time grid in seconds")
    g.add_argument("--param", action="append", metavar="NAME=VALUE", help="override one SmibParams field")
    g.add_argument("--output", "-o", help="output directory")
    g.add_argument("--quiet", "-q", action="store_true")
    g.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="invkit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"invkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mpi", help="inner and outer MPI certificates")
    _common(p)
    p.add_argument("--inner-only", action="store_true")
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=cmd_mpi)

    p = sub.add_parser("robust", help="robust inner certificate")
    _common(p)
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("cct", help="critical clearing time")
    _common(p)
    p.add_argument("--method", choices=["sim", "cert", "both"], default="sim")
    p.add_argument("--sweep", help="parameter sweep NAME=v1,v2,...")
    p.set_defaults(func=cmd_cct)

    p = sub.add_parser("volume", help="Monte-Carlo volumes of cached certificates")
    _common(p)
    p.set_defaults(func=cmd_volume)

    p = sub.add_parser("contour", help="2-D section grid of cached certificates")
    _common(p)
    p.add_argument("--axes", default="0,1", help="physical coordinate indices of the section")
    p.add_argument("--fix", action="append", metavar="INDEX=VALUE", help="scaled value of a fixed coordinate")
    p.add_argument("--kinds", default="inner,outer")
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("export-sdpa", help="write the assembled SDP in SDPA sparse format")
    _common(p)
    p.add_argument("--kind", choices=["inner", "outer", "robust-inner"], default="inner")
    p.add_argument("--file")
    p.set_defaults(func=cmd_export_sdpa)

    p = sub.add_parser("report", help="tables and figure data")
    _common(p)
    p.add_argument("--table", choices=["I", "II"])
    p.add_argument("--figure", type=int, choices=range(3, 9))
    p.add_argument("--ks", default="4,5,6")
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_report)
    return ap


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    changes = {}
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None and f.name not in ("params",):
            changes[f.name] = val
    if args.param:
        params = dict(cfg.params)
        for item in args.param:
            name, _, val = item.partition("=")
            if not val:
                raise ValidationError(f"--param expects NAME=VALUE, got {item!r}")
            params[name.strip()] = None if val.strip().lower() == "none" else float(val)
        changes["params"] = params
    cfg = replace(cfg, **changes)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return args.func(cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValidationError, ConfigurationError, ValueError, TypeError) as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ExtractionError as exc:
        print(f"error: [sdp] {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
