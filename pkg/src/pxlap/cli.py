"""Batch front end: ``pxlap <command> [--config file.toml]``.

Every run writes a CSV (or JSON report) plus a JSON manifest with the
resolved config, library versions, wall time and the outcome of each
assertion. Exit status: 0 success, 2 config error, 3 non-convergence,
4 assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config, resolve
from .examples import (
    RadialProfile,
    grad_modular_cum,
    radial_example,
    rado_case,
    rado_experiment,
)
from .exponent import Domain, exponent_from_config, make_exponent
from .operators import (
    Jet2,
    jet_form_F,
    normalized_pxlap,
    pxlap_expanded,
    pxlap_value,
    sqrt_A_lambda_min,
    sqrt_A_lambda_min_numeric,
)
from .solver import ConvergenceError, DirichletProblem, check_weak_comparison, eps_sweep, solve
from .spaces import GridFunction, luxemburg_norm, modular, modular_sandwich, poincare_ratio
from .viscosity import (
    doubling_experiment,
    normalized_doubling_experiment,
    quadratic_family,
    viscosity_test,
)

log = logging.getLogger("pxlap")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_ASSERTION = 0, 2, 3, 4


# -- output helpers ------------------------------------------------------------------


def fmt(v) -> str:
    """Shortest round-trip text for floats; plain str otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(fmt(x) for x in v)
    if v is None:
        return ""
    return str(v)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Run:
    """Collects artifacts and assertion outcomes for one command."""

    def __init__(self, cfg: RunConfig, out_dir: Path, csv_name: Optional[str], manifest_name: Optional[str]):
        self.cfg = cfg
        self.out_dir = out_dir
        stem = cfg.command.replace("-", "_")
        self.csv_path = out_dir / (csv_name or cfg.output.get("csv") or f"{stem}.csv")
        self.manifest_path = out_dir / (manifest_name or cfg.output.get("manifest") or f"{stem}_manifest.json")
        self.assertions: list[dict] = []
        self.outputs: list[str] = []
        self.results: dict = {}

    def check(self, name: str, ok, detail=None) -> bool:
        self.assertions.append({"name": name, "passed": bool(ok), "detail": _jsonable(detail)})
        return bool(ok)

    def write_csv(self, header, rows, path: Optional[Path] = None) -> None:
        path = path or self.csv_path
        atomic_write(path, csv_text(header, rows))
        self.outputs.append(str(path))

    def write_json(self, data: dict, path: Path) -> None:
        atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
        self.outputs.append(str(path))

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def manifest(self, status: str, exit_code: int, wall: float, error: Optional[str] = None) -> dict:
        return {
            "command": self.cfg.command,
            "status": status,
            "exit_code": exit_code,
            "error": error,
            "config": self.cfg.echo(),
            "seed": self.cfg.seed,
            "versions": {
                "pxlap": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": wall,
            "assertions": self.assertions,
            "outputs": self.outputs,
            "results": self.results,
        }


# -- commands -------------------------------------------------------------------------


def _problem(cfg: RunConfig, rhs=None) -> DirichletProblem:
    mesh = cfg.build_mesh()
    p = cfg.build_exponent()
    c = cfg.problem["rhs_c"] if rhs is None else rhs
    return DirichletProblem.from_function(mesh, p, float(c), cfg.boundary_function())


def _tol(cfg):
    t = cfg.experiment.get("tolerance")
    return None if t is None else float(t)


def _node_rows(u: GridFunction, *extra):
    for i, x in enumerate(u.mesh.nodes):
        yield [i, *x, u.values[i], *(e[i] for e in extra)]


def _coord_names(dim):
    return ["x", "y"][:dim]


def cmd_solve(run: Run):
    cfg = run.cfg
    prob = _problem(cfg)
    u, rep = solve(prob, tol=_tol(cfg), max_iter=int(cfg.experiment["max_iter"]))
    run.results["report"] = rep.as_dict()
    run.write_csv(["node_id", *_coord_names(prob.mesh.dimension), "u"], _node_rows(u))
    run.check("newton converged", rep.converged, rep.final_residual_norm)
    run.check("local minimum certified", rep.local_min_certified)
    hist = np.asarray(rep.energy_history)
    run.check(
        "energy nonincreasing",
        np.all(np.diff(hist) <= 1e-12 * np.maximum(1.0, np.abs(hist[:-1]))),
    )


def cmd_eps_sweep(run: Run):
    cfg = run.cfg
    prob = _problem(cfg)
    eps = [float(e) for e in cfg.experiment["eps_list"]]
    base, family, rows = eps_sweep(prob, eps, tol=_tol(cfg))
    run.write_csv(
        ["eps", "sup_diff", "grad_modular_diff", "grad_norm_diff"],
        [[r.eps, r.sup_diff, r.grad_modular_diff, r.grad_norm_diff] for r in rows],
    )
    sup = [r.sup_diff for r in rows]
    run.check("sup_diff strictly decreasing", all(b < a for a, b in zip(sup, sup[1:])), sup)
    mt = float(cfg.experiment["monotone_tol"])
    worst = max(
        [float((u2.values - u1.values).max()) for (_, u1), (_, u2) in zip(family, family[1:])],
        default=-np.inf,
    )
    worst = max(worst, float(np.max([(base.values - u.values).max() for _, u in family])))
    run.check("family monotone in eps", worst <= mt, worst)


def cmd_compare(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    lo, hi = float(ex["rhs_lower"]), float(ex["rhs_upper"])
    if lo > hi:
        raise ConfigError("experiment.rhs_lower must not exceed rhs_upper")
    shift = float(ex["boundary_shift"])
    if shift < 0:
        raise ConfigError("experiment.boundary_shift must be nonnegative")
    pu = _problem(cfg, lo)
    pv = DirichletProblem(pu.mesh, pu.p, hi, pu.boundary_data + shift)
    u, _ = solve(pu, tol=_tol(cfg))
    v, _ = solve(pv, tol=_tol(cfg))
    rep = check_weak_comparison(u, v, pu.p)
    run.results["comparison"] = rep.__dict__
    run.write_csv(["node_id", *_coord_names(pu.mesh.dimension), "u", "v", "u_minus_v"], _node_rows(u, v.values, u.values - v.values))
    run.check("premise satisfied", rep.state != "premise_not_satisfied", rep.premise_gap)
    run.check("u <= v nodewise", rep.ordered, rep.max_violation)


def cmd_viscosity(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    prob = _problem(cfg)
    u, _ = solve(prob, tol=_tol(cfg))
    rng = np.random.default_rng(cfg.seed)
    fam = quadratic_family(u, int(ex["family_size"]), rng, float(ex["slope_jitter"]))
    rhs = prob.rhs_c if ex["rhs"] is None else float(ex["rhs"])
    side = ex["side"]
    if side not in ("super", "sub"):
        raise ConfigError("experiment.side must be 'super' or 'sub'")
    rep = viscosity_test(u, prob.p, rhs, fam, side=side)
    run.write_csv(
        ["phi_id", "x0", "grad_norm", "op_value", "required", "violated", "status"],
        [
            [r.phi_id, "" if r.x0 is None else r.x0, r.grad_norm, r.op_value, r.required, r.violated, r.status]
            for r in rep.records
        ],
    )
    run.results["evaluated"] = rep.evaluated
    run.results["vacuous"] = rep.vacuous
    run.check("no viscosity violations", rep.passed, len(rep.violations))


def cmd_doubling(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    prob = _problem(cfg, 0.0)
    u, _ = solve(prob, tol=_tol(cfg))
    v, _ = solve(prob.with_rhs(float(ex["eps"])), tol=_tol(cfg), initial=u.values)
    js = [float(j) for j in ex["j_list"]]
    if ex["operator"] == "normalized":
        tr = normalized_doubling_experiment(u, v, prob.p, js, delta=ex["delta"])
    else:
        tr = doubling_experiment(u, v, prob.p, q=ex["q"], j_list=js, delta=ex["delta"])
    run.results.update(q=tr.q, delta=tr.delta, boundary_max=tr.boundary_max)
    run.write_csv(
        ["j", "xj", "yj", "gap", "wmax", "eta_norm", "decay", "op_at_x", "op_at_y"],
        [[r.j, r.x, r.y, r.gap, r.wmax, r.eta_norm, r.decay, r.op_at_x, r.op_at_y] for r in tr.records],
    )
    run.check("decay nonincreasing over the top decade of j", tr.decay_top_decade_nonincreasing())
    run.check("final decay <= ratio * initial", tr.decay_ratio <= float(ex["decay_ratio_max"]), tr.decay_ratio)
    run.check("x_j != y_j at interior maximizers", tr.eta_nonvanishing)
    run.check("no interior crossing at the largest j", tr.no_interior_crossing, tr.records[-1].interior_max)


def _radial_profile(cfg: RunConfig) -> RadialProfile:
    e = cfg.exponent
    if e.get("kind") not in ("constant", "affine", "radial"):
        raise ConfigError("radial profiles take a constant, affine or radial exponent p0 + slope * r")
    p0 = float(e.get("p0", 2.0))
    slope = 0.0 if e.get("kind") == "constant" else float(e.get("slope", 0.0))
    if min(p0, p0 + slope) <= 1.0:
        raise ConfigError("radial profile exponent must exceed 1 on [0, 1]")
    ex = cfg.experiment
    return RadialProfile.affine(p0, slope, ex["variant"], int(ex["n"]), float(ex["quad_tol"]))


def cmd_radial(run: Run):
    cfg = run.cfg
    prof = _radial_profile(cfg)
    radii = sorted((float(r) for r in cfg.experiment["sample_radii"]), reverse=True)
    vals = radial_example(prof, radii)
    mods = [0.0 if r >= 1.0 else grad_modular_cum(prof, r) for r in radii]
    run.write_csv(["r", "v", "grad_modular_cum"], [[r, v, m] for (r, v), m in zip(vals, mods)])
    vs = [v for _, v in vals]
    run.check("v(1) = 0", all(v == 0.0 for r, v in vals if r == 1.0))
    run.check("v strictly decreasing in r", all(b > a for a, b in zip(vs, vs[1:])))
    run.check("cumulative gradient modular increasing", all(b > a for a, b in zip(mods, mods[1:])))


def cmd_rado(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    case = ex["case"]
    dim = 2 if case == "linear2d" else 1
    p = None
    if "exponent" in cfg.raw:
        p = cfg.build_exponent(Domain.box([(-1.0, 1.0)] * dim))
    mesh, u, grad, p = rado_case(case, p, int(ex["resolution"]))
    rep = rado_experiment(u, p, float(ex["tolerance"]), grad, case)
    expect = ex["expect_pass"]
    if expect is None:
        expect = case != "abs"
    run.results["report"] = rep.as_dict()
    path = run.csv_path.with_suffix(".json")
    run.write_json(rep.as_dict(), path)
    run.check("premise: residual vanishes away from the zero set", rep.premise_holds, rep.away_residual)
    run.check(f"full-domain residual {'passes' if expect else 'fails'} as expected", rep.passed == bool(expect), rep.full_residual)


def _bubble(mesh) -> np.ndarray:
    """Product of (x - lo)(hi - x) over the axes, scaled to peak at 1."""
    out = np.ones(mesh.n_nodes)
    for k in range(mesh.dimension):
        x = mesh.nodes[:, k]
        lo, hi = x.min(), x.max()
        out *= 4.0 * (x - lo) * (hi - x) / (hi - lo) ** 2
    return out


def cmd_norms(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    mesh = cfg.build_mesh()
    p = cfg.build_exponent()
    tol = float(ex["tolerance"])
    # the catalog boundary function times a bubble, so the trace vanishes
    g = cfg.boundary_function()(mesh.nodes)
    u = GridFunction(mesh, float(ex["amplitude"]) * g * _bubble(mesh))
    quantities = {
        "modular": modular(u, p),
        "norm": luxemburg_norm(u, p),
        "grad_modular": modular(u, p, of_gradient=True),
        "grad_norm": luxemburg_norm(u, p, of_gradient=True),
        "poincare_ratio": poincare_ratio(u, p),
    }
    run.results.update(quantities)
    run.write_csv(["quantity", "value"], list(quantities.items()))

    # randomized property table
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(int(ex["samples"])):
        v = GridFunction(mesh, float(ex["amplitude"]) * rng.standard_normal(mesh.n_nodes))
        nrm = luxemburg_norm(v, p)
        unit = abs(modular(v * (1.0 / nrm), p) - 1.0)
        lo, hi = modular_sandwich(nrm, p)
        m = modular(v, p)
        sand = lo * (1 - 1e-12) <= m <= hi * (1 + 1e-12)
        t = float(rng.uniform(0.1, 10.0))
        hom = abs(luxemburg_norm(v * t, p) - t * nrm) / (t * nrm)
        rows.append([k, m, nrm, unit, sand, hom])
    props = run.csv_path.with_name(run.csv_path.stem + "_properties.csv")
    run.write_csv(["sample", "modular", "norm", "unit_ball_err", "sandwich_ok", "homogeneity_err"], rows, props)
    run.check("unit ball property", all(r[3] <= tol for r in rows), max(r[3] for r in rows))
    run.check("modular-norm sandwich", all(r[4] for r in rows))
    run.check("norm homogeneity", all(r[5] <= tol for r in rows), max(r[5] for r in rows))


def cmd_op(run: Run):
    cfg = run.cfg
    ex = cfg.experiment
    n = int(ex["dimension"])
    dom = Domain.box([(-1.0, 1.0)] * n)
    e = dict(cfg.exponent)
    p = make_exponent(
        e.get("kind", "constant"), dom, p0=float(e.get("p0", 2.0)), slope=float(e.get("slope", 0.0)), direction=e.get("direction")
    )
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(int(ex["samples"])):
        x = rng.uniform(-1, 1, n)
        if not p.is_regular(x):
            continue
        xi = rng.standard_normal(n) * 10.0 ** rng.uniform(-2, 2)
        S = rng.standard_normal((n, n))
        jet = Jet2(x, 0.0, xi, (S + S.T) / 2)
        F = jet_form_F(jet, p)
        ex_val = pxlap_expanded(jet, p)
        rel = abs(F - ex_val) / max(abs(ex_val), 1e-300)
        lc, ln = sqrt_A_lambda_min(x, xi, p), sqrt_A_lambda_min_numeric(x, xi, p)
        rows.append([k, F, ex_val, rel, lc, ln, abs(lc - ln) / lc])
    run.write_csv(["sample", "jet_form", "expanded", "rel_diff", "lambda_closed", "lambda_numeric", "lambda_rel_diff"], rows)
    rtol, etol = float(ex["rtol"]), float(ex["eig_tol"])
    # an absolute floor guards jets whose operator value nearly cancels
    run.check(
        "jet form equals expanded operator",
        all(abs(r[1] - r[2]) <= rtol * max(abs(r[2]), 1.0) for r in rows),
        max(r[3] for r in rows),
    )
    run.check("closed-form eigenvalue matches numerics", all(r[6] <= etol for r in rows), max(r[6] for r in rows))


def parse_jet(text: str) -> Jet2:
    """A jet from JSON: {"x", "value", "xi", "X"} or the list [x, value, xi, X]."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--jet is not valid JSON: {exc}") from None
    if isinstance(data, list):
        if len(data) != 4:
            raise ConfigError("--jet list must be [x, value, xi, X]")
        data = dict(zip(("x", "value", "xi", "X"), data))
    if not isinstance(data, dict) or set(data) != {"x", "value", "xi", "X"}:
        raise ConfigError("--jet needs exactly the keys x, value, xi, X")
    try:
        return Jet2(data["x"], data["value"], data["xi"], data["X"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad jet: {exc}") from None


def parse_exponent(text: Optional[str], x: np.ndarray):
    """Exponent from a JSON ``[exponent]``-style table; optional ``extent`` sets the domain."""
    section = {"kind": "constant", "p0": 2.0}
    if text:
        try:
            section = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--exponent is not valid JSON: {exc}") from None
        if not isinstance(section, dict):
            raise ConfigError("--exponent must be a JSON object")
    section = dict(section)
    extent = section.pop("extent", None)
    if extent is None:
        r = max(1.0, float(np.max(np.abs(x))))
        extent = [(-r, r)] * len(x)
    try:
        return exponent_from_config(section, Domain.box(extent))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad exponent: {exc}") from None


def evaluate_single_jet(jet_text: str, exponent_text: Optional[str], operator: str, side: str) -> dict:
    jet = parse_jet(jet_text)
    p = parse_exponent(exponent_text, jet.x)
    if operator == "normalized":
        ov = normalized_pxlap(jet, p, side)
    else:
        ov = pxlap_value(jet, p)
    value = ov.value if np.isfinite(ov.value) else None
    return {"operator": operator, "value": value, "branch": ov.branch.value, "p": p(jet.x)}


COMMANDS: dict[str, Callable[[Run], None]] = {
    "solve": cmd_solve,
    "eps-sweep": cmd_eps_sweep,
    "compare": cmd_compare,
    "viscosity-check": cmd_viscosity,
    "doubling": cmd_doubling,
    "radial": cmd_radial,
    "rado": cmd_rado,
    "norms": cmd_norms,
    "op": cmd_op,
}


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pxlap", description="Variable-exponent p-Laplacian experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML config; built-in defaults otherwise")
        sp.add_argument("--out-dir", type=Path, help="directory for outputs (default: output.dir)")
        sp.add_argument("--out", help="CSV file name or path")
        sp.add_argument("--manifest", help="manifest file name or path")
        sp.add_argument("--seed", type=int, help="overrides config seed and PXLAP_SEED")
        if name == "radial":
            sp.add_argument("--variant", choices=("verbatim", "grouped"))
        if name == "rado":
            sp.add_argument("--case", choices=("linear1d", "linear2d", "abs"))
        if name == "eps-sweep":
            sp.add_argument("--eps", help="comma separated, strictly decreasing")
        if name == "op":
            sp.add_argument("--jet", help='single jet as JSON, e.g. \'{"x": [0.1], "value": 0, "xi": [1], "X": [[2]]}\'')
            sp.add_argument("--exponent", help='exponent as JSON, e.g. \'{"kind": "affine", "p0": 2, "slope": 0.5}\'')
            sp.add_argument("--operator", choices=("divergence", "normalized"), default="divergence")
            sp.add_argument("--side", choices=("sub", "super"), default="sub")
    return ap


def run(cfg: RunConfig, out_dir: Optional[Path] = None, csv_name=None, manifest_name=None) -> int:
    """Execute one configured command; returns the exit status."""
    out = Path(out_dir) if out_dir else (cfg.base_dir / cfg.output.get("dir", "."))
    r = Run(cfg, out, csv_name, manifest_name)
    t0 = time.perf_counter()
    status, code, err = "ok", EXIT_OK, None
    try:
        COMMANDS[cfg.command](r)
        if not r.passed:
            status, code = "assertion_failed", EXIT_ASSERTION
    except ConvergenceError as exc:
        status, code, err = "not_converged", EXIT_NONCONVERGENCE, str(exc)
    except (ConfigError, ValueError) as exc:
        status, code, err = "config_error", EXIT_CONFIG, str(exc)
    wall = time.perf_counter() - t0
    r.write_json(r.manifest(status, code, wall, err), r.manifest_path)
    if err:
        print(f"pxlap {cfg.command}: {err}", file=sys.stderr)
    for a in r.assertions:
        log.info("%s %s", "PASS" if a["passed"] else "FAIL", a["name"])
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "op" and args.jet is not None:
        try:
            out = evaluate_single_jet(args.jet, args.exponent, args.operator, args.side)
        except ValueError as exc:
            print(f"pxlap op: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(out))
        return EXIT_OK
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.command, args.seed)
        else:
            cfg = resolve({}, args.command, Path.cwd(), args.seed)
        if getattr(args, "variant", None):
            cfg.experiment["variant"] = args.variant
        if getattr(args, "case", None):
            cfg.experiment["case"] = args.case
        if getattr(args, "eps", None):
            try:
                cfg.experiment["eps_list"] = [float(e) for e in args.eps.split(",")]
            except ValueError:
                raise ConfigError(f"cannot parse --eps {args.eps!r}") from None
    except ConfigError as exc:
        print(f"pxlap {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out_dir, args.out, args.manifest)


if __name__ == "__main__":
    sys.exit(main())
