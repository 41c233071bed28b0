"""Counterfactuals and descriptive analytics on solved equilibria and panels."""
from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .equilibrium import EquilibriumSolution, SolverError, SolverOptions, expected_continuation, solve_equilibrium
from .model import HIGH, LOW, Model, ModelParams, QualityType, RatingGrid, StateSpace, build_model
from .simulate import Panel, SimulationConfig, simulate_panel

__all__ = [
    "DollarScale",
    "expected_state_values",
    "expected_entry_profit",
    "returns_to_reputation",
    "no_rating_model",
    "no_rating_counterfactual",
    "sybil_attack_value",
    "SweepSpec",
    "SWEEP_METRICS",
    "comparative_statics_sweep",
    "write_sweep_csv",
    "RegressionSpec",
    "RegressionResult",
    "RankDeficiencyError",
    "stylized_fact_regression",
    "ols",
]


@dataclass(frozen=True)
class DollarScale:
    """Conversion from normalized value to dollars.

    dollars = value * dollars_per_gram * grams_per_order * orders_per_week
    """

    dollars_per_gram: float = 35.0
    grams_per_order: float = 20.0
    orders_per_week: float = 1.0

    @property
    def factor(self) -> float:
        return self.dollars_per_gram * self.grams_per_order * self.orders_per_week

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"factor": self.factor}


def expected_state_values(solution: EquilibriumSolution, model: Model) -> np.ndarray:
    """Expected value before the cost draw in every state, shape (2, n)."""
    return expected_continuation(solution.cutoffs, model.cost, model.params.payoff_variant)


def expected_entry_profit(solution: EquilibriumSolution, model: Model, type_,
                          scale: DollarScale = DollarScale()) -> dict:
    """Expected lifetime value of an entrant of the given type at the entry state."""
    t = int(QualityType.parse(type_))
    v = float(expected_state_values(solution, model)[t, model.space.entry_state])
    return {"type": QualityType(t).label, "value": v, "dollars": v * scale.factor, "scale": scale.to_dict()}


def _snap(grid: RatingGrid, rating: float, what: str) -> int:
    lo, hi = grid.bounds
    if rating < lo or rating > hi:
        warnings.warn(f"{what} rating {rating} outside [{lo}, {hi}]; snapped to the grid", stacklevel=3)
    idx, moved = grid.nearest(rating)
    if moved:
        warnings.warn(f"{what} rating {rating} snapped to grid point {grid.points[idx]}", stacklevel=3)
    return idx


def returns_to_reputation(solution: EquilibriumSolution, model: Model, from_rating: float, to_rating: float,
                          sales_bucket: int = 0, scale: DollarScale = DollarScale()) -> dict:
    """Loss in expected value when the rating moves from ``from_rating`` to ``to_rating``.

    Ratings off the grid are snapped to the nearest point with a warning.
    Returns, per type, the absolute loss (normalized and dollars) and the loss
    as a share of the value at ``from_rating``.
    """
    space = model.space
    if not 0 <= sales_bucket < space.n_buckets:
        raise ValueError(f"sales bucket {sales_bucket} out of range")
    i = _snap(space.ratings, from_rating, "from")
    j = _snap(space.ratings, to_rating, "to")
    s_from = int(space.index(i, sales_bucket))
    s_to = int(space.index(j, sales_bucket))
    ev = expected_state_values(solution, model)
    out = {"from_state": s_from, "to_state": s_to,
           "from_rating": float(space.ratings.points[i]), "to_rating": float(space.ratings.points[j])}
    for t in (LOW, HIGH):
        loss = float(ev[t, s_from] - ev[t, s_to])
        base = float(ev[t, s_from])
        out[QualityType(t).label] = {
            "npv_loss": loss,
            "npv_loss_dollars": loss * scale.factor,
            "pct_loss": loss / base if base > 0 else float("nan"),
        }
    return out


def no_rating_model(model: Model) -> Model:
    """The same market with ratings removed: a single rating point, same sales ladder."""
    top = float(model.space.ratings.points[-1])
    space = StateSpace(RatingGrid(np.array([top]), model.space.ratings.bounds), model.space.sales)
    return build_model(model.params, space, cost=model.cost)


def no_rating_counterfactual(model: Model, options: Optional[SolverOptions] = None,
                             baseline: Optional[EquilibriumSolution] = None) -> dict:
    """Compare the equilibrium with and without a rating system.

    Reports per type the cutoff and one-week survival probability at the
    entry state, the mass-weighted mean survival, and the expected entry
    profit, for the baseline and the counterfactual.
    """
    base = baseline if baseline is not None else solve_equilibrium(model, options)
    cmodel = no_rating_model(model)
    cf = solve_equilibrium(cmodel, options)

    def summary(sol, m):
        e = m.space.entry_state
        ev = expected_state_values(sol, m)
        out = {}
        for t in (LOW, HIGH):
            w = sol.masses[t]
            mean_surv = float(np.sum(w * sol.survival[t]) / np.sum(w)) if np.sum(w) > 0 else float("nan")
            out[QualityType(t).label] = {
                "cutoff": float(sol.cutoffs[t, e]),
                "survival": float(sol.survival[t, e]),
                "mean_survival": mean_surv,
                "entry_profit": float(ev[t, e]),
            }
        out["entry_belief"] = float(sol.beliefs[e])
        return out

    return {"baseline": summary(base, model), "no_rating": summary(cf, cmodel), "solution": cf, "model": cmodel}


def sybil_attack_value(solution: EquilibriumSolution, model: Model, state: int, type_,
                       entry_fee_dollars: float = 500.0, scale: DollarScale = DollarScale()) -> float:
    """Dollar gain from abandoning ``state`` and re-entering under a fresh identity, net of the fee."""
    t = int(QualityType.parse(type_))
    if not 0 <= state < model.n_states:
        raise ValueError(f"state {state} out of range")
    ev = expected_state_values(solution, model)
    e = model.space.entry_state
    return float(ev[t, e] * scale.factor - ev[t, state] * scale.factor - entry_fee_dollars)


# ---------------------------------------------------------------------------
# comparative statics
# ---------------------------------------------------------------------------

SWEEP_METRICS = ("avg_price", "mean_exit_age", "total_sales", "entry_profit", "high_share_by_age")


@dataclass(frozen=True)
class SweepSpec:
    """A parameter, the values to try and the metrics to record."""

    parameter: str
    values: tuple
    metrics: tuple = SWEEP_METRICS
    share_ages: tuple = (0, 4, 13, 26, 52)

    def __post_init__(self):
        names = {f.name for f in dataclasses.fields(ModelParams)}
        if self.parameter not in names:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("sweep grid is empty")
        object.__setattr__(self, "values", vals)
        bad = set(self.metrics) - set(SWEEP_METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan"), 0
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), sd, int(x.size)


def _panel_metrics(panel: Panel, solution, model, spec: SweepSpec) -> list[dict]:
    rows = []
    starts, stops = panel.vendor_slices()
    alive = ~panel.exited
    for t in (LOW, HIGH):
        label = QualityType(t).label
        vt = panel.true_type == t
        if "avg_price" in spec.metrics:
            m = alive & np.isin(panel.vendor_id, panel.ids[vt])
            mean, sd, n = _mean_sd(panel.price[m])
            rows.append(("avg_price", label, mean, sd, n))
        if "mean_exit_age" in spec.metrics:
            ages = panel.age[panel.exited & np.isin(panel.vendor_id, panel.ids[vt])]
            rows.append(("mean_exit_age", label, *_mean_sd(ages)))
        if "total_sales" in spec.metrics:
            sales = np.add.reduceat(alive.astype(float), starts)[vt] if panel.n_obs else np.zeros(0)
            mean, sd, n = _mean_sd(sales)
            rows.append(("total_sales", label, float(np.sum(sales)), sd, n))
        if "entry_profit" in spec.metrics:
            v = expected_entry_profit(solution, model, t)["value"]
            rows.append(("entry_profit", label, v, 0.0, 1))
    if "avg_price" in spec.metrics:
        rows.append(("avg_price", "pooled", *_mean_sd(panel.price[alive])))
    if "high_share_by_age" in spec.metrics:
        typ = np.repeat(panel.true_type, stops - starts)
        for a in spec.share_ages:
            m = alive & (panel.age == a)
            n = int(m.sum())
            share = float(np.mean(typ[m] == HIGH)) if n else float("nan")
            sd = math.sqrt(share * (1 - share)) if n else float("nan")
            rows.append((f"high_share_age_{a}", "pooled", share, sd, n))
    return [{"metric": r[0], "type": r[1], "mean": r[2], "sd": r[3], "n": r[4]} for r in rows]


def _sweep_point(spec, value, base_model, sim_config, options):
    head = {"parameter": spec.parameter, "value": value}
    try:
        model = base_model.with_params(**{spec.parameter: value})
        sol = solve_equilibrium(model, options)
    except (SolverError, ValueError) as exc:
        return [head | {"metric": "failed", "type": "", "mean": float("nan"), "sd": float("nan"), "n": 0,
                        "flag": f"{type(exc).__name__}: {exc}"}]
    panel = simulate_panel(sol, model, sim_config)
    return [head | r | {"flag": ""} for r in _panel_metrics(panel, sol, model, spec)]


def comparative_statics_sweep(spec: SweepSpec, base_model: Model, sim_config: SimulationConfig,
                              options: Optional[SolverOptions] = None, n_threads: int = 1) -> list[dict]:
    """Re-solve and simulate at every grid value and record the requested metrics.

    Returns long-form rows ``parameter, value, metric, type, mean, sd, n, flag``
    in grid order.  A grid point whose solve fails yields one flagged row.
    The standard deviation is across vendors (binomial for shares).
    """
    run = lambda v: _sweep_point(spec, v, base_model, sim_config, options)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            parts = list(pool.map(run, spec.values))
    else:
        parts = [run(v) for v in spec.values]
    return [r for part in parts for r in part]


SWEEP_COLUMNS = ("parameter", "value", "metric", "type", "mean", "sd", "n", "flag")


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------


class RankDeficiencyError(ValueError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(columns)}")
        self.columns = list(columns)


@dataclass(frozen=True)
class RegressionSpec:
    """Regression of log price on rating and controls.

    ``split_by_sales`` replaces the single rating slope by separate slopes for
    the bottom and top halves of the sales buckets (plus a top-half dummy).
    ``review_bins`` adds one dummy per sales bucket except the first.
    ``fixed_effects`` demeans everything within vendor and drops the intercept.
    """

    split_by_sales: bool = False
    review_bins: bool = False
    age: bool = True
    intercept: bool = True
    fixed_effects: bool = False


@dataclass
class RegressionResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    n_obs: int
    residuals: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)

    def table(self) -> list[dict]:
        return [{"term": n, "coef": float(c), "se": float(s)} for n, c, s in zip(self.names, self.coef, self.se)]

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])


def ols(X, y, names: Sequence[str]) -> RegressionResult:
    """Least squares by QR with heteroskedasticity-robust (HC1) standard errors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n <= k:
        raise ValueError("need more observations than regressors")
    q, r = np.linalg.qr(X)
    d = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(float).eps * (d.max() if k else 0.0) * 10
    if np.any(d <= tol) or np.linalg.matrix_rank(X) < k:
        raise RankDeficiencyError(_collinear(X, names))
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    rinv = np.linalg.inv(r)
    bread = rinv @ rinv.T
    meat = (X * resid[:, None] ** 2).T @ X
    cov = bread @ meat @ bread * (n / (n - k))
    return RegressionResult(list(names), coef, np.sqrt(np.diag(cov)), n, resid, X)


def _collinear(X, names):
    """Columns that are linear combinations of earlier ones."""
    bad, kept = [], []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) < len(trial):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad or list(names)


def stylized_fact_regression(panel: Panel, spec: RegressionSpec = RegressionSpec()) -> RegressionResult:
    """Regress log observed price on rating and controls over weeks with a sale."""
    m = ~panel.exited & np.isfinite(panel.price) & (panel.price > 0)
    if np.unique(panel.rating[m]).size < 2:
        raise ValueError("need at least two distinct ratings")
    y = np.log(panel.price[m])
    rating = panel.rating[m]
    bucket = panel.bucket[m]
    n_buckets = panel.space.n_buckets if panel.space is not None else int(panel.bucket.max()) + 1
    cols, names = [], []
    if spec.split_by_sales:
        top = (bucket >= n_buckets // 2).astype(float)
        cols += [rating * (1 - top), rating * top, top]
        names += ["rating_small", "rating_large", "large"]
    else:
        cols.append(rating)
        names.append("rating")
    if spec.review_bins:
        for b in range(1, n_buckets):
            cols.append((bucket == b).astype(float))
            names.append(f"bucket_{b}")
    if spec.age:
        cols.append(panel.age[m].astype(float))
        names.append("age")
    if spec.intercept and not spec.fixed_effects:
        cols.append(np.ones(y.size))
        names.append("intercept")
    X = np.column_stack(cols)
    if spec.fixed_effects:
        vid = panel.vendor_id[m]
        _, inv = np.unique(vid, return_inverse=True)
        counts = np.bincount(inv)
        y = y - (np.bincount(inv, y) / counts)[inv]
        X = X - np.column_stack([(np.bincount(inv, X[:, j]) / counts)[inv] for j in range(X.shape[1])])
    return ols(X, y, names)
