"""Run configuration: TOML files with nested sections, validated per command.

Grammar (every section optional unless the command needs it)::

    command = "solve"          # must match the CLI subcommand if given
    seed = 0                   # PXLAP_SEED overrides

    [exponent]                 # kind = constant | affine | radial | tabulated
    kind = "affine"
    p0 = 2.0
    slope = 0.5
    direction = [1.0]          # affine only
    table_path = "p.csv"       # tabulated only, relative to the config file

    [mesh]
    dimension = 1
    extent = [[0.0, 1.0]]
    resolution = 65            # nodes per axis

    [problem]
    rhs_c = 0.0
    [problem.boundary]         # kind = constant | linear | bump
    kind = "linear"
    gradient = [1.0]           # linear: offset + gradient . x
    offset = 0.0
    # constant: value;  bump: offset + amplitude exp(-|x - center|^2 / width^2)

    [experiment]               # command specific keys, see DEFAULTS
    [output]
    dir = "out"
    csv = "result.csv"
    manifest = "manifest.json"
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli

from .exponent import Domain, ExponentField, exponent_from_config
from .mesh import Mesh, make_mesh

COMMANDS = ("solve", "eps-sweep", "compare", "viscosity-check", "doubling", "radial", "rado", "norms", "op")
BOUNDARY_KINDS = ("constant", "linear", "bump")
SEED_ENV = "PXLAP_SEED"

_BASE = {
    "exponent": {"kind": "constant", "p0": 2.0},
    "mesh": {"dimension": 1, "extent": [[0.0, 1.0]], "resolution": 65},
    "problem": {"rhs_c": 0.0, "boundary": {"kind": "linear", "offset": 0.0}},
}

EXPERIMENT_DEFAULTS = {
    "solve": {"tolerance": None, "max_iter": 200},
    "eps-sweep": {"eps_list": [1e-1, 1e-2, 1e-3, 1e-4], "tolerance": None, "monotone_tol": 1e-8},
    "compare": {"rhs_lower": 0.0, "rhs_upper": 1.0, "boundary_shift": 0.0, "tolerance": None},
    "viscosity-check": {"family_size": 200, "rhs": None, "side": "super", "slope_jitter": 0.05},
    "doubling": {
        "eps": 1e-2,
        "j_list": [10.0**k for k in range(7)],
        "q": None,
        "delta": None,
        "operator": "divergence",
        "decay_ratio_max": 1e-3,
    },
    "radial": {
        "variant": "grouped",
        "n": 2,
        "sample_radii": [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001],
        "quad_tol": 1e-12,
    },
    "rado": {"case": "linear1d", "resolution": 33, "tolerance": 1e-10, "expect_pass": None},
    "norms": {"samples": 100, "amplitude": 3.0, "tolerance": 1e-8},
    "op": {"samples": 1000, "dimension": 2, "rtol": 1e-10, "eig_tol": 1e-8},
}


class ConfigError(ValueError):
    """Invalid or incomplete configuration (CLI exit status 2)."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    command: str
    exponent: dict
    mesh: dict
    problem: dict
    experiment: dict
    output: dict
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Resolved configuration, for the manifest."""
        return {
            "command": self.command,
            "seed": self.seed,
            "exponent": self.exponent,
            "mesh": self.mesh,
            "problem": self.problem,
            "experiment": self.experiment,
            "output": self.output,
        }

    # -- builders --------------------------------------------------------------

    def build_mesh(self) -> Mesh:
        m = self.mesh
        return make_mesh(int(m["dimension"]), m["extent"], m["resolution"])

    def domain(self) -> Domain:
        return Domain.box(self.mesh["extent"])

    def build_exponent(self, domain: Optional[Domain] = None) -> ExponentField:
        return exponent_from_config(self.exponent, domain or self.domain(), self.base_dir)

    def boundary_function(self):
        return boundary_function(self.problem["boundary"], int(self.mesh["dimension"]))


def boundary_function(entry: dict, dim: int):
    """Callable g(points) from a boundary catalog entry."""
    kind = entry.get("kind")
    if kind not in BOUNDARY_KINDS:
        raise ConfigError(f"boundary kind must be one of {BOUNDARY_KINDS}, got {kind!r}")
    offset = float(entry.get("offset", 0.0))
    if kind == "constant":
        c = float(entry.get("value", offset))
        return lambda x: np.full(len(x), c)
    if kind == "linear":
        g = np.asarray(entry.get("gradient", [1.0] + [0.0] * (dim - 1)), dtype=float)
        if g.shape != (dim,):
            raise ConfigError(f"linear boundary gradient must have {dim} entries")
        return lambda x: offset + x @ g
    amp = float(entry.get("amplitude", 1.0))
    center = np.asarray(entry.get("center", [0.5] * dim), dtype=float)
    width = float(entry.get("width", 0.25))
    if center.shape != (dim,) or width <= 0:
        raise ConfigError("bump boundary needs a center of the mesh dimension and a positive width")
    return lambda x: offset + amp * np.exp(-np.sum((x - center) ** 2, axis=1) / width**2)


def _check_positive(exp: dict, keys):
    for k in keys:
        v = exp.get(k)
        if v is not None and not float(v) > 0:
            raise ConfigError(f"experiment.{k} must be positive, got {v}")


def resolve(raw: dict, command: str, base_dir: Optional[Path] = None, seed_override=None) -> RunConfig:
    """Merge ``raw`` with the defaults for ``command`` and validate it."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    if "command" in raw and raw["command"] != command:
        raise ConfigError(f"config is for command {raw['command']!r}, not {command!r}")
    unknown = set(raw) - {"command", "seed", "exponent", "mesh", "problem", "experiment", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    for sec in ("exponent", "mesh", "problem", "experiment", "output"):
        if sec in raw and not isinstance(raw[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")

    merged = _merge(_BASE, {k: raw[k] for k in ("exponent", "mesh", "problem") if k in raw})
    experiment = _merge(EXPERIMENT_DEFAULTS[command], raw.get("experiment", {}))
    output = _merge({"dir": ".", "csv": None, "manifest": None}, raw.get("output", {}))

    seed = raw.get("seed", 0)
    env = os.environ.get(SEED_ENV)
    if seed_override is not None:
        seed = seed_override
    elif env not in (None, ""):
        seed = env
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None

    m = merged["mesh"]
    dim = m.get("dimension")
    if dim not in (1, 2):
        raise ConfigError("mesh.dimension must be 1 or 2")
    ext = np.asarray(m.get("extent"), dtype=float)
    if ext.shape != (dim, 2) or np.any(ext[:, 1] <= ext[:, 0]):
        raise ConfigError(f"mesh.extent must hold {dim} increasing (lo, hi) pairs")
    res = np.atleast_1d(np.asarray(m.get("resolution")))
    if not np.issubdtype(res.dtype, np.integer) or np.any(res < 2):
        raise ConfigError("mesh.resolution must be an integer >= 2 (nodes per axis)")

    if "boundary" not in merged["problem"]:
        raise ConfigError("problem.boundary is required")
    boundary_function(merged["problem"]["boundary"], dim)
    try:
        float(merged["problem"].get("rhs_c", 0.0))
    except (TypeError, ValueError):
        raise ConfigError("problem.rhs_c must be a number") from None

    _check_positive(experiment, ("tolerance", "monotone_tol", "quad_tol", "rtol", "eig_tol", "decay_ratio_max"))
    if command == "eps-sweep" and not experiment["eps_list"]:
        raise ConfigError("experiment.eps_list must not be empty")
    if command == "doubling":
        if experiment["operator"] not in ("divergence", "normalized"):
            raise ConfigError("experiment.operator must be 'divergence' or 'normalized'")
        if experiment["q"] is not None and float(experiment["q"]) <= 2.0:
            raise ConfigError(f"experiment.q = {experiment['q']} is inadmissible: q must exceed max(2, p-/(p- - 1))")
        if not experiment["j_list"] or any(float(j) <= 0 for j in experiment["j_list"]):
            raise ConfigError("experiment.j_list must hold positive values")
    if command == "viscosity-check" and int(experiment["family_size"]) < 1:
        raise ConfigError("experiment.family_size must be positive")
    if command == "radial" and experiment["variant"] not in ("verbatim", "grouped"):
        raise ConfigError("experiment.variant must be 'verbatim' or 'grouped'")
    if command == "rado" and experiment["case"] not in ("linear1d", "linear2d", "abs"):
        raise ConfigError("experiment.case must be linear1d, linear2d or abs")

    return RunConfig(
        command,
        merged["exponent"],
        merged["mesh"],
        merged["problem"],
        experiment,
        output,
        seed,
        Path(base_dir) if base_dir else Path.cwd(),
        raw,
    )


def load_config(path, command: str, seed_override=None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return resolve(raw, command, path.parent, seed_override)
