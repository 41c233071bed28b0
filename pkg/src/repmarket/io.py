"""JSON configs and artifacts."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .equilibrium import EquilibriumSolution, SolverOptions
from .estimation import EstimationConfig, Transform
from .model import (DEFAULT_SALES_EDGES, ESTIMATION_SALES_EDGES, Model, ModelParams, NormalCost, RatingGrid,
                    SalesGrid, StateSpace, UniformCost, build_model)
from .simulate import SimulationConfig

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "RunConfig",
    "to_jsonable",
    "dumps",
    "write_json",
    "read_json",
    "load_config",
    "parse_config",
    "config_hash",
    "solution_to_dict",
    "write_solution",
    "read_solution",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def to_jsonable(obj: Any) -> Any:
    """Convert numpy values, dataclasses and non-finite floats to plain JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON: sorted keys, floats in shortest round-trip form."""
    return json.dumps(to_jsonable(obj), indent=1, sort_keys=True) + "\n"


def write_json(obj: Any, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    """Everything a command may need, parsed from one JSON document."""

    params: ModelParams
    space: StateSpace
    cost: Any
    solver: SolverOptions
    simulation: SimulationConfig
    estimation: EstimationConfig
    analysis: dict
    seed: int
    raw: dict

    def model(self, params: Optional[ModelParams] = None) -> Model:
        params = params or self.params
        cost = self.cost
        if isinstance(cost, NormalCost):
            cost = params.cost()
        return build_model(params, self.space, cost=cost)


_TOP_KEYS = {"schema_version", "params", "grid", "cost", "solver", "simulation", "estimation", "analysis", "seed"}
_ANALYSIS_KEYS = {"dollars_per_gram", "grams_per_order", "orders_per_week", "from_rating", "to_rating",
                  "sales_bucket", "entry_fee_dollars"}


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _grid(spec) -> StateSpace:
    if spec is None or spec == "default":
        return StateSpace.default()
    if spec == "estimation":
        return StateSpace.estimation()
    _check_keys(spec, {"ratings", "sales_edges"}, "grid")
    r = spec.get("ratings", {"lo": 3.0, "hi": 5.0, "n": 51})
    if isinstance(r, dict):
        _check_keys(r, {"lo", "hi", "n", "points"}, "grid.ratings")
        if "points" in r:
            ratings = RatingGrid(np.array(r["points"], dtype=float), (r.get("lo", min(r["points"])),
                                                                     r.get("hi", max(r["points"]))))
        else:
            ratings = RatingGrid.linspace(float(r.get("lo", 3.0)), float(r.get("hi", 5.0)), int(r.get("n", 51)))
    else:
        raise ConfigError("grid.ratings must be an object")
    edges = spec.get("sales_edges", DEFAULT_SALES_EDGES)
    if edges == "estimation":
        edges = ESTIMATION_SALES_EDGES
    return StateSpace(ratings, SalesGrid(tuple(edges)))


def _cost(spec, params: ModelParams):
    if spec is None:
        return params.cost()
    _check_keys(spec, {"family", "lo", "hi"}, "cost")
    family = spec.get("family", "normal")
    if family == "normal":
        return params.cost()
    if family == "uniform":
        return UniformCost(float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)))
    raise ConfigError(f"unsupported cost family {family!r}")


def parse_config(raw: dict) -> RunConfig:
    """Validate and parse a configuration document.  Unknown keys are errors."""
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    seed = int(raw.get("seed", 0))
    p = raw.get("params", {})
    _check_keys(p, _fields(ModelParams), "params")
    try:
        params = ModelParams(**p)
        space = _grid(raw.get("grid"))
        cost = _cost(raw.get("cost"), params)
        s = raw.get("solver", {})
        _check_keys(s, _fields(SolverOptions), "solver")
        solver = SolverOptions(**s)
        sim = dict(raw.get("simulation", {}))
        _check_keys(sim, _fields(SimulationConfig), "simulation")
        sim.setdefault("seed", seed)
        simulation = SimulationConfig(**sim)
        e = dict(raw.get("estimation", {}))
        _check_keys(e, _fields(EstimationConfig) - {"base_params", "space", "solver"} | {"grid"}, "estimation")
        if "transforms" in e:
            e["transforms"] = {k: Transform(**v) for k, v in e["transforms"].items()}
        if "free_parameters" in e:
            e["free_parameters"] = tuple(e["free_parameters"])
        est_space = _grid(e.pop("grid", "estimation"))
        estimation = EstimationConfig(base_params=params, space=est_space,
                                      solver=dataclasses.replace(solver, max_iter=min(solver.max_iter, 2000)), **e)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    a = raw.get("analysis", {})
    _check_keys(a, _ANALYSIS_KEYS, "analysis")
    return RunConfig(params, space, cost, solver, simulation, estimation, dict(a), seed, raw)


def load_config(path) -> RunConfig:
    """Read and parse a JSON config file.  A missing file raises ``FileNotFoundError``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a config."""
    canon = json.dumps(to_jsonable(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------


def _space_dict(space: StateSpace) -> dict:
    return {"ratings": {"points": space.ratings.points.tolist(), "lo": space.ratings.bounds[0],
                        "hi": space.ratings.bounds[1]},
            "sales_edges": list(space.sales.edges)}


def _cost_dict(cost) -> dict:
    if isinstance(cost, UniformCost):
        return {"family": "uniform", "lo": cost.lo, "hi": cost.hi}
    return {"family": "normal"}


def solution_to_dict(solution: EquilibriumSolution, model: Model) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "params": model.params.to_dict(),
        "grid": _space_dict(model.space),
        "cost": _cost_dict(model.cost),
        "entry": model.entry,
        "beliefs": solution.beliefs,
        "cutoffs": solution.cutoffs,
        "masses": solution.masses,
        "survival": solution.survival,
        "exit_prob": solution.exit_prob,
        "residuals": {"cutoff": solution.residual_cutoff, "mass": solution.residual_mass,
                      "belief": solution.residual_belief},
        "iterations": solution.iterations,
        "converged": solution.converged,
        "offpath": solution.offpath,
    }


def write_solution(solution: EquilibriumSolution, model: Model, path) -> None:
    write_json(solution_to_dict(solution, model), path)


def _arr(x):
    return np.array([[float(v) for v in row] for row in x]) if isinstance(x[0], list) else np.array(
        [float(v) for v in x])


def read_solution(path) -> tuple[EquilibriumSolution, Model]:
    """Rebuild a solution and its model from :func:`write_solution` output."""
    d = read_json(path)
    try:
        params = ModelParams(**d["params"])
        space = _grid(d["grid"])
        cost = _cost(d.get("cost"), params)
        model = build_model(params, space, cost=cost, entry=_arr(d["entry"]))
        off = d.get("offpath")
        sol = EquilibriumSolution(
            beliefs=_arr(d["beliefs"]), cutoffs=_arr(d["cutoffs"]), masses=_arr(d["masses"]),
            survival=_arr(d["survival"]), exit_prob=_arr(d["exit_prob"]),
            residual_cutoff=float(d["residuals"]["cutoff"]), residual_mass=float(d["residuals"]["mass"]),
            residual_belief=float(d["residuals"]["belief"]), iterations=int(d["iterations"]),
            converged=bool(d["converged"]), offpath=None if off is None else np.array(off, dtype=bool),
            model=model)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed solution file ({exc})") from None
    return sol, model
