"""Command-line interface.

Settings are resolved with the precedence CLI flag > config file (JSON) >
environment variable > default:

==============  ======================  ===========
setting         environment variable    default
==============  ======================  ===========
a               CAPSHIFT_A              1.0
eps             CAPSHIFT_EPS            0.2,0.1,0.05,0.025
j               CAPSHIFT_J              1
lmax            CAPSHIFT_LMAX           40
nmax            CAPSHIFT_NMAX           10
n_constraints   CAPSHIFT_NCONSTRAINTS   6
grid            CAPSHIFT_GRID           20x40
h_convention    CAPSHIFT_H_CONVENTION   mean
cache_dir       CAPSHIFT_CACHE_DIR      ~/.cache/capshift
==============  ======================  ===========

Exit codes: 0 success, 2 invalid input, 1 computational failure.  Errors
are written to stderr as JSON ``{"code", "message", "context"}``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, capsolver, coeffs, diskops, fitshift, greens, modelgeom


class ValidationError(Exception):
    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context or {}


class ComputationError(Exception):
    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context or {}


def _parse_eps(text):
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    return vals


def _parse_grid(text):
    if isinstance(text, (list, tuple)):
        r, a = text
    else:
        try:
            r, a = str(text).lower().split("x")
        except ValueError as exc:
            raise ValidationError(f"grid must look like 32x64, got {text!r}") from exc
    return int(r), int(a)


SETTINGS = {
    # name: (env var, default, parser)
    "a": ("CAPSHIFT_A", 1.0, float),
    "eps": ("CAPSHIFT_EPS", "0.2,0.1,0.05,0.025", _parse_eps),
    "j": ("CAPSHIFT_J", 1, int),
    "lmax": ("CAPSHIFT_LMAX", 40, int),
    "nmax": ("CAPSHIFT_NMAX", 10, int),
    "n_constraints": ("CAPSHIFT_NCONSTRAINTS", 6, int),
    "grid": ("CAPSHIFT_GRID", "20x40", _parse_grid),
    "h_convention": ("CAPSHIFT_H_CONVENTION", "mean", str),
    "cache_dir": ("CAPSHIFT_CACHE_DIR", None, str),
}


@dataclass
class RunConfig:
    subcommand: str
    a: float = 1.0
    eps: list = field(default_factory=list)
    j: int = 1
    lmax: int = 40
    nmax: int = 10
    n_constraints: int = 6
    grid: tuple = (20, 40)
    h_convention: str = "mean"
    cache_dir: str | None = None
    output: str | None = None
    format: str = "json"
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not (0.0 < self.a <= 1.0):
            raise ValidationError("a must lie in (0, 1]", {"a": self.a})
        for e in self.eps:
            if not (0.0 < e < math.pi / 4):
                raise ValidationError("eps values must lie in (0, pi/4)", {"eps": self.eps})
        if self.j < 1:
            raise ValidationError("j must be >= 1", {"j": self.j})
        if self.lmax < 0 or self.nmax < 1:
            raise ValidationError("need lmax >= 0 and nmax >= 1", {"lmax": self.lmax, "nmax": self.nmax})
        if self.n_constraints < 4:
            raise ValidationError("n_constraints must be >= 4", {"n_constraints": self.n_constraints})
        if self.grid[0] < 2 or self.grid[1] < 4:
            raise ValidationError("grid needs radial >= 2 and angular >= 4", {"grid": self.grid})
        if self.h_convention not in ("mean", "sum"):
            raise ValidationError("h_convention must be mean or sum", {"h_convention": self.h_convention})
        if self.format not in ("json", "csv"):
            raise ValidationError("format must be json or csv", {"format": self.format})
        return self

    def public(self) -> dict:
        d = asdict(self)
        d["grid"] = f"{self.grid[0]}x{self.grid[1]}"
        return d


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="capshift", description="Eigenvalue shifts under a small Dirichlet boundary window.")
    p.add_argument("--version", action="version", version=f"capshift {__version__}")
    p.add_argument("--config", help="JSON file with settings")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--output", "-o", help="output file (default stdout)")
    p.add_argument("--format", choices=("json", "csv"))
    # the same options are accepted after the subcommand name
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", default=argparse.SUPPRESS)
    glob.add_argument("--cache-dir", dest="cache_dir", default=argparse.SUPPRESS)
    glob.add_argument("--output", "-o", default=argparse.SUPPRESS)
    glob.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda name, **kw: _add(name, parents=[glob], **kw)

    def common(sp, *names):
        if "a" in names:
            sp.add_argument("--a", type=float)
        if "eps" in names:
            sp.add_argument("--eps", help="comma-separated, strictly decreasing")
        if "j" in names:
            sp.add_argument("--j", type=int)
        if "trunc" in names:
            sp.add_argument("--lmax", type=int)
            sp.add_argument("--nmax", type=int)
        if "grid" in names:
            sp.add_argument("--grid", help="RADIALxANGULAR, e.g. 32x64")
        if "h" in names:
            sp.add_argument("--h-convention", dest="h_convention", choices=("mean", "sum"))

    sp = sub.add_parser("constants", help="K_a, coefficients and the cross-formula consistency report")
    common(sp, "a", "j", "trunc", "grid", "h")
    sp = sub.add_parser("opcheck", help="disk operator self-tests")
    common(sp, "a", "grid")
    sp = sub.add_parser("greens", help="boundary Green's function and its regular part")
    common(sp, "j", "trunc")
    sp.add_argument("--omega2", type=float, default=-1.0)
    sp.add_argument("--separation", type=float, default=0.1, help="geodesic distance from the pole")
    sp.add_argument("--regular-part", action="store_true")
    sp = sub.add_parser("shift", help="perturbed eigenvalue table")
    common(sp, "a", "eps", "j", "trunc", "grid")
    sp.add_argument("--method", choices=("galerkin", "secular", "both"), default="both")
    sp.add_argument("--n-constraints", dest="n_constraints", type=int)
    sp.add_argument("--secular-form", choices=("expansion", "exact"), default="expansion")
    sp = sub.add_parser("fit", help="fit (A, B, C) to a shift table and adjudicate")
    common(sp, "trunc", "grid", "h")
    sp.add_argument("--input", required=True, help="CSV written by the shift subcommand")
    sp.add_argument("--method", choices=("galerkin", "secular"), default="galerkin")
    sp = sub.add_parser("report", help="shift table, fit and adjudication in one run")
    common(sp, "eps", "trunc", "grid", "h")
    sp.add_argument("--n-constraints", dest="n_constraints", type=int)
    sp = sub.add_parser("cache", help="spectral cache management")
    sp.add_argument("action", choices=("rebuild", "show"))
    common(sp, "trunc")
    return p


def resolve_config(ns: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    filecfg = {}
    if getattr(ns, "config", None):
        try:
            with open(ns.config, encoding="utf-8") as fh:
                filecfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config file: {exc}", {"config": ns.config}) from exc
        if not isinstance(filecfg, dict):
            raise ValidationError("config file must hold a JSON object")
    vals = {}
    for name, (env, default, parse) in SETTINGS.items():
        cli_val = getattr(ns, name, None)
        try:
            if cli_val is not None:
                vals[name] = parse(cli_val)
            elif name in filecfg:
                vals[name] = parse(filecfg[name])
            elif env in environ:
                vals[name] = parse(environ[env])
            else:
                vals[name] = parse(default) if default is not None else None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid value for {name}: {exc}", {name: cli_val}) from exc
    fmt = ns.format or filecfg.get("format") or ("csv" if ns.subcommand == "shift" else "json")
    extra = {k: v for k, v in vars(ns).items() if k not in SETTINGS and k not in ("config", "output", "format", "subcommand")}
    cfg = RunConfig(subcommand=ns.subcommand, output=ns.output, format=fmt, extra=extra, **vals)
    return cfg.validate()


def _cache(cfg):
    return modelgeom.RootCache(cfg.cache_dir) if cfg.cache_dir else None


def _basis(cfg, a=1.0):
    return modelgeom.build_basis(cfg.lmax, cfg.nmax, 0 if a == 1.0 else "even", cache=_cache(cfg))


def _ball_coefficient_sets(cfg, basis):
    pd, rp = greens.ball_point_data(basis, cfg.j, cfg.h_convention)
    grid = diskops.build_grid(*cfg.grid)
    ball = coeffs.ball_coeffs(pd)
    ell = coeffs.ellipse_coeffs(pd, 1.0, grid)
    return pd, rp, ball, ell, grid


def cmd_constants(cfg):
    Ka = coeffs.compute_Ka(cfg.a)
    basis = _basis(cfg)
    pd, rp, ball, ell, grid = _ball_coefficient_sets(cfg, basis)
    report = coeffs.consistency_report(pd, grid)
    out = {
        "K_a": Ka,
        "a": cfg.a,
        "point_data": asdict(pd),
        "R_star_uncertainty": rp.uncertainty,
        "ball": coeffs.to_dict(ball),
        "consistency": report,
    }
    if cfg.a != 1.0:
        out["ellipse"] = coeffs.to_dict(coeffs.ellipse_coeffs(pd, cfg.a, grid))
    return out


def operator_checks(a: float, grid_res=(64, 128), solve_res=(32, 64)) -> list:
    """Pass/fail list of the disk-operator invariants."""
    checks = []

    def add(name, value, tol, ok=None):
        ok = bool(value < tol) if ok is None else bool(ok)
        checks.append({"name": name, "value": float(value), "tolerance": tol, "passed": ok})

    g = diskops.build_grid(*grid_res)
    add("plain_weights_sum", abs(g.plain_weights.sum() - math.pi) / math.pi, 1e-10)
    add("weighted_weights_sum", abs(g.weighted_weights.sum() - 2 * math.pi) / (2 * math.pi), 1e-10)
    add("nodes_inside", float(g.radius().max()), 1.0)
    Ka = coeffs.compute_Ka(a)
    La = diskops.assemble("La", a, g)
    inner = g.radius() <= 0.9
    res = diskops.apply(La, g.rim_weight / Ka)
    add("La_identity_inner", float(np.abs(res[inner] - 1).max()), 1e-6)
    S = La.symmetrized()
    add("La_symmetry", float(np.linalg.norm(S - S.T) / np.linalg.norm(S)), 1e-8)
    del La, S
    g1 = diskops.build_grid(*solve_res)
    rinf = diskops.assemble("RInf", 1.0, g1)
    r = g1.radius()
    worst = 0.0
    for f in (np.ones_like(r), r**2, np.exp(-r**2), g1.rim_weight):
        worst = max(worst, abs(float((g1.plain_weights * f) @ diskops.apply(rinf, f))))
    add("RInf_antisymmetry_a1", worst, 1e-10)
    ri = diskops.assemble("RI", a, g1)
    add("RI_constant", float(np.abs(diskops.apply(ri, np.ones(g1.size)) - a * math.pi).max()), 1e-10)
    psi = diskops.solve_La(a, g1, np.ones(g1.size))
    La1 = diskops.assemble("La", a, g1)
    add("La_inverse_identity", float(np.abs(diskops.apply(La1, psi)[g1.radius() <= 0.9] - 1).max()), 1e-6)
    add("La_solve_mass", abs(float(g1.plain_weights @ psi) - 2 * math.pi / Ka), 1e-4)
    # order of the diagonal rule for a smooth density on the inner disk
    errs = []
    fun = lambda x, y: np.exp(0.5 * x - 0.3 * y) * (1 + x * y)  # noqa: E731
    for res_ in ((16, 32), (32, 64), (64, 128)):
        gg = diskops.build_grid(*res_)
        op = diskops.assemble("La", a, gg)
        val = diskops.apply(op, gg.rim_weight * fun(gg.nodes[:, 0], gg.nodes[:, 1]))
        ref = diskops.polar_self_integrals(gg.nodes, a, "La", density=fun)
        m = gg.radius() <= 0.9
        errs.append(float(np.abs(val - ref)[m].max()))
    order = math.log2(errs[-2] / errs[-1])
    checks.append({"name": "La_diagonal_order_inner", "value": order, "tolerance": 2.0, "passed": order >= 2.0})
    return checks


def cmd_opcheck(cfg):
    t0 = time.time()
    checks = operator_checks(cfg.a, cfg.grid)
    return {"a": cfg.a, "checks": checks, "all_passed": all(c["passed"] for c in checks),
            "seconds": time.time() - t0}


def cmd_greens(cfg):
    basis = _basis(cfg)
    x = np.array([0.0, 0.0, 1.0])
    out = {}
    if cfg.extra.get("regular_part"):
        rp = greens.regular_part(basis, cfg.j)
        out["R_star"] = rp.value
        out["uncertainty"] = rp.uncertainty
        out["delta_exponent"] = rp.delta_exponent
        out["fit_condition"] = rp.fit_condition
    d = cfg.extra.get("separation", 0.1)
    if not (0 < d < 0.5):
        raise ValidationError("separation must lie in (0, 0.5)", {"separation": d})
    y = greens.point_on_geodesic(x, d)
    g = greens.greens_boundary(basis, cfg.extra.get("omega2", -1.0), x, y)
    sing = greens.singular_eval(x, y)
    out.update(omega2=g.omega2, separation=d, value=g.value, singular=asdict(sing),
               remainder=g.value - sing.total)
    return out


def _header(cfg):
    return [f"capshift {__version__}", "config: " + json.dumps(cfg.public(), sort_keys=True)]


def cmd_shift(cfg):
    if not cfg.eps:
        raise ValidationError("empty eps list")
    method = cfg.extra.get("method", "both")
    methods = ("galerkin", "secular") if method == "both" else (method,)
    basis = _basis(cfg, cfg.a)
    try:
        samples, failures = capsolver.shift_table(cfg.eps, cfg.a, cfg.j, methods, n_constraints=cfg.n_constraints,
                                                  grid=diskops.build_grid(*cfg.grid),
                                                  secular_form=cfg.extra.get("secular_form", "expansion"),
                                                  basis=basis)
    except ValueError as exc:
        raise ValidationError(str(exc), {"eps": cfg.eps}) from exc
    if failures:
        raise ComputationError("some samples failed", {"failures": failures})
    return samples


def _read_table(path, method):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(lines)
    missing = set(capsolver.CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValidationError(f"{path} lacks columns {sorted(missing)}")
    rows = [r for r in reader if r["method"] == method]
    if not rows:
        raise ValidationError(f"no {method} rows in {path}")
    return rows


def _fit_and_adjudicate(cfg, pairs, j):
    cfg.j = j
    basis = _basis(cfg)
    pd, rp, ball, ell, _ = _ball_coefficient_sets(cfg, basis)
    try:
        fit = fitshift.fit_expansion(pairs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    rep = fitshift.adjudicate(fit, ball, ell)
    rep["R_star"] = rp.value
    rep["pref"] = pd.pref
    return rep


def cmd_fit(cfg):
    rows = _read_table(cfg.extra["input"], cfg.extra.get("method", "galerkin"))
    try:
        js = {int(r["j"]) for r in rows}
        aa = {float(r["a"]) for r in rows}
    except ValueError as exc:
        raise ValidationError(f"malformed number in the table: {exc}") from exc
    if len(js) != 1 or aa != {1.0}:
        raise ValidationError("fit needs rows of one eigenvalue index on the disk window (a = 1)")
    basis = _basis(cfg)
    lam_j = basis.mode(js.pop()).lam
    try:
        pairs = [(float(r["epsilon"]), float(r["lambda_eps"]) - lam_j) for r in rows]
    except ValueError as exc:
        raise ValidationError(f"malformed number in the table: {exc}") from exc
    return _fit_and_adjudicate(cfg, pairs, int(rows[0]["j"]))


def cmd_report(cfg):
    cfg.a = 1.0
    eps = cfg.eps or _parse_eps(SETTINGS["eps"][1])
    basis = _basis(cfg)
    samples, failures = capsolver.shift_table(eps, 1.0, cfg.j, ("galerkin",), n_constraints=cfg.n_constraints,
                                              basis=basis)
    if failures:
        raise ComputationError("some samples failed", {"failures": failures})
    rep = _fit_and_adjudicate(cfg, [(s.eps, s.shift) for s in samples], cfg.j)
    rep["table"] = [s.row() for s in samples]
    return rep


def cmd_cache(cfg):
    directory = cfg.cache_dir or str(modelgeom.default_cache_dir())
    if cfg.extra["action"] == "show":
        c = modelgeom.RootCache(directory)
        return {"path": str(c.path), "entries": len(c.load())}
    try:
        path = modelgeom.rebuild_cache(cfg.lmax, cfg.nmax, directory)
    except modelgeom.CacheError as exc:
        if exc.kind == "readonly":
            raise ValidationError(str(exc), {"cache_dir": directory}) from exc
        raise ComputationError(str(exc), {"cache_dir": directory, "kind": exc.kind}) from exc
    return {"path": str(path), "entries": len(modelgeom.RootCache(directory).load())}


COMMANDS = {
    "constants": cmd_constants,
    "opcheck": cmd_opcheck,
    "greens": cmd_greens,
    "shift": cmd_shift,
    "fit": cmd_fit,
    "report": cmd_report,
    "cache": cmd_cache,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _emit(cfg, result, stdout):
    if cfg.subcommand == "shift" and cfg.format == "csv":
        buf = io.StringIO()
        capsolver.write_csv(result, buf, _header(cfg))
        text = buf.getvalue()
    else:
        if cfg.subcommand == "shift":
            result = [s.row() for s in result]
        doc = {"version": __version__, "config": cfg.public(), "result": _jsonable(result)}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _error(stderr, code, message, context=None):
    stderr.write(json.dumps({"code": code, "message": message, "context": _jsonable(context or {})}) + "\n")


def run(argv=None, stdout=None, stderr=None) -> int:
    """Run the CLI and return the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        ns = build_parser().parse_args(argv)
        if not ns.subcommand:
            raise ValidationError("missing subcommand", {"choices": sorted(COMMANDS)})
        cfg = resolve_config(ns)
        result = COMMANDS[cfg.subcommand](cfg)
        _emit(cfg, result, stdout)
        if cfg.subcommand == "opcheck" and not result["all_passed"]:
            return 1
        return 0
    except ValidationError as exc:
        _error(stderr, 2, str(exc), exc.context)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ComputationError,) as exc:
        _error(stderr, 1, str(exc), exc.context)
        return 1
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        _error(stderr, 1, f"{type(exc).__name__}: {exc}")
        return 1


def main():
    sys.exit(run())
