"""Weekly vendor panels simulated from a stationary equilibrium."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .equilibrium import EquilibriumSolution
from .model import HIGH, LOW, Model, RatingGrid, SalesGrid, StateSpace

__all__ = [
    "SimulationConfig",
    "Panel",
    "PanelFormatError",
    "simulate_panel",
    "empirical_moments",
    "write_panel",
    "read_panel",
    "PANEL_HEADER",
]

PANEL_HEADER = ["vendor_id", "week", "age", "state_index", "rating", "sales_bucket", "price_obs", "exited"]


class PanelFormatError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class SimulationConfig:
    """Panel size, market closure week, master seed and entry timing.

    With ``staggered_entry`` each vendor enters in a week drawn uniformly from
    ``1..horizon_weeks``; otherwise everyone enters in week 1.
    """

    n_vendors: int = 2000
    horizon_weeks: int = 85
    seed: int = 0
    staggered_entry: bool = True
    n_threads: int = 1

    def __post_init__(self):
        if self.n_vendors < 1:
            raise ValueError("n_vendors must be at least 1")
        if self.horizon_weeks < 1:
            raise ValueError("horizon_weeks must be at least 1")


@dataclass
class Panel:
    """Observations stored column-wise, sorted by vendor and age.

    Row columns: ``vendor_id, week, age, state, rating, bucket, price, exited``.
    Vendor metadata (one entry per vendor, sorted by id): ``ids``,
    ``entry_week``, ``censored`` and ``true_type`` (kept for validation only).
    """

    vendor_id: np.ndarray
    week: np.ndarray
    age: np.ndarray
    state: np.ndarray
    rating: np.ndarray
    bucket: np.ndarray
    price: np.ndarray
    exited: np.ndarray
    ids: np.ndarray
    entry_week: np.ndarray
    censored: np.ndarray
    true_type: np.ndarray
    space: Optional[StateSpace] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.vendor_id.size

    @property
    def n_vendors(self) -> int:
        return self.ids.size

    def vendor_slices(self):
        """Start and stop row offsets for each vendor, in id order."""
        starts = np.searchsorted(self.vendor_id, self.ids, side="left")
        stops = np.searchsorted(self.vendor_id, self.ids, side="right")
        return starts, stops

    def rows(self, vendor: int) -> dict:
        lo, hi = np.searchsorted(self.vendor_id, [vendor, vendor + 1])
        return {name: getattr(self, name)[lo:hi] for name in
                ("week", "age", "state", "rating", "bucket", "price", "exited")}

    def select(self, keep_ids) -> "Panel":
        """Sub-panel with the given vendor ids."""
        keep_ids = np.asarray(sorted(keep_ids), dtype=np.int64)
        rmask = np.isin(self.vendor_id, keep_ids)
        vmask = np.isin(self.ids, keep_ids)
        return Panel(*(getattr(self, c)[rmask] for c in _ROW_COLUMNS),
                     *(getattr(self, c)[vmask] for c in _VENDOR_COLUMNS),
                     space=self.space, meta=dict(self.meta))

    def equals(self, other: "Panel") -> bool:
        for c in _ROW_COLUMNS + _VENDOR_COLUMNS:
            a, b = getattr(self, c), getattr(other, c)
            if a.shape != b.shape:
                return False
            if a.dtype.kind == "f":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True


_ROW_COLUMNS = ("vendor_id", "week", "age", "state", "rating", "bucket", "price", "exited")
_VENDOR_COLUMNS = ("ids", "entry_week", "censored", "true_type")


def _empty_panel(space=None) -> Panel:
    i = np.zeros(0, dtype=np.int64)
    f = np.zeros(0)
    b = np.zeros(0, dtype=bool)
    return Panel(i, i, i, i, f, i, f, b, i, i, b, i, space=space)


def _draw_costs(cost, rng, size):
    if hasattr(cost, "mu"):
        return cost.mu + cost.sigma * rng.standard_normal(size)
    return rng.uniform(cost.lo, cost.hi, size)


def _simulate_vendor(i, solution, model, config, cum):
    p = model.params
    ss = np.random.SeedSequence(config.seed, spawn_key=(i,))
    rng = np.random.Generator(np.random.Philox(ss))
    typ = HIGH if rng.random() < p.alpha else LOW
    W = config.horizon_weeks
    entry = int(rng.integers(1, W + 1)) if config.staggered_entry else 1
    L = W - entry + 1
    costs = _draw_costs(model.cost, rng, L)
    noise = rng.standard_normal(L)
    moves = rng.random(L)
    cut = solution.cutoffs[typ]
    belief = solution.beliefs
    s = model.space.entry_state
    states, prices, exited = [], [], False
    for a in range(L):
        states.append(s)
        if costs[a] > cut[s]:
            prices.append(np.nan)
            exited = True
            break
        if p.price_noise == "multiplicative":
            prices.append(belief[s] * math.exp(p.sigma_p * noise[a]))
        else:
            prices.append(belief[s] + math.exp(p.sigma_p * noise[a]))
        row = cum[typ, s]
        s = int(min(np.searchsorted(row, moves[a], side="right"), row.size - 1))
    return typ, entry, np.array(states, dtype=np.int64), np.array(prices), exited


def simulate_panel(solution: EquilibriumSolution, model: Model, config: SimulationConfig) -> Panel:
    """Simulate vendor life cycles.

    Each vendor draws its type (high with probability ``alpha``), starts at the
    entry state and each week draws a cost shock.  It exits when the shock
    exceeds its cutoff (that week is recorded without a price); otherwise a
    noisy price is recorded and the state moves along the type's kernel.
    Vendors alive after the closure week are censored.

    Vendor ``i`` uses its own counter-based random stream derived from
    ``(seed, i)``, so results do not depend on thread count or order.
    """
    cum = np.cumsum(model.kernel.matrices, axis=2)
    cum[:, :, -1] = 1.0
    ids = range(config.n_vendors)
    if config.n_threads > 1:
        with ThreadPoolExecutor(config.n_threads) as pool:
            results = list(pool.map(lambda i: _simulate_vendor(i, solution, model, config, cum), ids))
    else:
        results = [_simulate_vendor(i, solution, model, config, cum) for i in ids]
    space = model.space
    n_rows = np.array([r[2].size for r in results])
    vid = np.repeat(np.arange(config.n_vendors), n_rows)
    entry = np.array([r[1] for r in results], dtype=np.int64)
    age = np.concatenate([np.arange(k) for k in n_rows])
    states = np.concatenate([r[2] for r in results])
    exited = np.zeros(states.size, dtype=bool)
    ends = np.cumsum(n_rows) - 1
    vendor_exit = np.array([r[4] for r in results])
    exited[ends[vendor_exit]] = True
    return Panel(
        vendor_id=vid.astype(np.int64),
        week=np.repeat(entry, n_rows) + age,
        age=age.astype(np.int64),
        state=states,
        rating=space.rating(states).astype(float),
        bucket=space.bucket(states).astype(np.int64),
        price=np.concatenate([r[3] for r in results]),
        exited=exited,
        ids=np.arange(config.n_vendors, dtype=np.int64),
        entry_week=entry,
        censored=~vendor_exit,
        true_type=np.array([r[0] for r in results], dtype=np.int64),
        space=space,
        meta={"seed": config.seed, "horizon_weeks": config.horizon_weeks,
              "staggered_entry": config.staggered_entry, "n_vendors": config.n_vendors},
    )


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def _km_curve(ages, exits, max_age):
    """Product-limit survival by age from row-level at-risk counts."""
    at_risk = np.bincount(ages, minlength=max_age + 1).astype(float)
    events = np.bincount(ages[exits], minlength=max_age + 1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        hazard = np.where(at_risk > 0, events / at_risk, 0.0)
    return np.cumprod(1.0 - hazard)


def empirical_moments(panel: Panel, high_rating: float = 4.95, old_age_weeks: int = 7) -> dict:
    """Descriptive moments of a panel.

    Returns rating percentiles (30th, 50th, 70th) by sales bucket with the
    bucket's cumulative share of observations, survival curves by age split by
    rating and by age group, the share of vendors active at closure, and the
    histogram of ages at exit.
    """
    if panel.n_vendors == 0:
        raise ValueError("empty panel")
    out = {}
    rows = []
    order_share = 0.0
    n = panel.n_obs
    for b in np.unique(panel.bucket):
        r = panel.rating[panel.bucket == b]
        order_share += r.size / n
        q30, q50, q70 = np.percentile(r, [30, 50, 70])
        rows.append({"bucket": int(b), "sales_percentile": order_share, "p30": q30, "median": q50,
                     "p70": q70, "n": int(r.size)})
    out["rating_by_sales"] = rows
    max_age = int(panel.age.max()) if n else 0
    groups = {
        "all": np.ones(n, dtype=bool),
        "high_rating": panel.rating >= high_rating,
        "low_rating": panel.rating < high_rating,
        "young": panel.age < old_age_weeks,
        "old": panel.age >= old_age_weeks,
    }
    out["survival_by_age"] = {k: _km_curve(panel.age[m], panel.exited[m], max_age).tolist()
                              for k, m in groups.items()}
    out["weekly_survival"] = {k: (float(1.0 - panel.exited[m].mean()) if m.any() else None)
                              for k, m in groups.items()}
    out["active_share"] = float(panel.censored.mean())
    exit_ages = panel.age[panel.exited]
    hist = np.bincount(exit_ages, minlength=max_age + 1) if exit_ages.size else np.zeros(max_age + 1, int)
    out["exit_age_histogram"] = hist.tolist()
    return out


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_panel(panel: Panel, path) -> None:
    """Write the observation CSV and a JSON sidecar with vendor metadata and grids."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for k in range(panel.n_obs):
            price = panel.price[k]
            w.writerow([int(panel.vendor_id[k]), int(panel.week[k]), int(panel.age[k]), int(panel.state[k]),
                        f"{panel.rating[k]:.6f}", int(panel.bucket[k]),
                        "" if np.isnan(price) else repr(float(price)), int(panel.exited[k])])
    meta = {
        "schema_version": 1,
        "vendors": [{"vendor_id": int(v), "entry_week": int(e), "censored": bool(c), "true_type": int(t)}
                    for v, e, c, t in zip(panel.ids, panel.entry_week, panel.censored, panel.true_type)],
        "meta": panel.meta,
    }
    if panel.space is not None:
        meta["rating_points"] = [float(x) for x in panel.space.ratings.points]
        meta["rating_bounds"] = list(panel.space.ratings.bounds)
        meta["sales_edges"] = list(panel.space.sales.edges)
    _sidecar(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")


def read_panel(path, space: Optional[StateSpace] = None) -> Panel:
    """Read a panel written by :func:`write_panel`.

    Ages must be contiguous within a vendor, an exit may only appear on a
    vendor's last row, and (when the grids are known) ratings and buckets
    must agree with the state index.
    """
    path = Path(path)
    meta = {}
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        if space is None and "rating_points" in meta:
            space = StateSpace(RatingGrid(np.array(meta["rating_points"]), tuple(meta["rating_bounds"])),
                               SalesGrid(tuple(meta["sales_edges"])))
    cols = {c: [] for c in PANEL_HEADER}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PanelFormatError("missing header", 1)
        if header != PANEL_HEADER:
            raise PanelFormatError(f"unexpected header {header}", 1)
        prev = None
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(PANEL_HEADER):
                raise PanelFormatError(f"expected {len(PANEL_HEADER)} fields, got {len(rec)}", lineno)
            try:
                vid, week, age, state = (int(x) for x in rec[:4])
                rating = float(rec[4])
                bucket = int(rec[5])
                price = float(rec[6]) if rec[6] != "" else np.nan
                exited = int(rec[7])
            except ValueError as exc:
                raise PanelFormatError(str(exc), lineno) from None
            if exited not in (0, 1):
                raise PanelFormatError("exited must be 0 or 1", lineno)
            if prev is not None and prev[0] == vid:
                if prev[2]:
                    raise PanelFormatError(f"vendor {vid} has rows after its exit", lineno)
                if age != prev[1] + 1:
                    raise PanelFormatError(f"non-contiguous ages for vendor {vid}", lineno)
            elif prev is not None and vid < prev[0]:
                raise PanelFormatError("rows must be sorted by vendor id", lineno)
            if space is not None:
                if state < 0 or state >= space.size:
                    raise PanelFormatError(f"state index {state} out of range", lineno)
                if int(space.bucket(state)) != bucket or abs(float(space.rating(state)) - rating) > 5e-7:
                    raise PanelFormatError(f"rating/bucket inconsistent with state {state}", lineno)
                rating = float(space.rating(state))
            prev = (vid, age, bool(exited))
            for c, v in zip(PANEL_HEADER, (vid, week, age, state, rating, bucket, price, exited)):
                cols[c].append(v)
    if not cols["vendor_id"] and not meta.get("vendors"):
        return _empty_panel(space)
    vid = np.array(cols["vendor_id"], dtype=np.int64)
    vendors = meta.get("vendors")
    if vendors is None:
        ids = np.unique(vid)
        first = np.searchsorted(vid, ids)
        entry = np.array(cols["week"], dtype=np.int64)[first] - np.array(cols["age"], dtype=np.int64)[first]
        last = np.searchsorted(vid, ids, side="right") - 1
        censored = ~np.array(cols["exited"], dtype=bool)[last]
        true_type = np.full(ids.size, -1, dtype=np.int64)
    else:
        ids = np.array([v["vendor_id"] for v in vendors], dtype=np.int64)
        entry = np.array([v["entry_week"] for v in vendors], dtype=np.int64)
        censored = np.array([v["censored"] for v in vendors], dtype=bool)
        true_type = np.array([v["true_type"] for v in vendors], dtype=np.int64)
    return Panel(
        vendor_id=vid,
        week=np.array(cols["week"], dtype=np.int64),
        age=np.array(cols["age"], dtype=np.int64),
        state=np.array(cols["state_index"], dtype=np.int64),
        rating=np.array(cols["rating"], dtype=float),
        bucket=np.array(cols["sales_bucket"], dtype=np.int64),
        price=np.array(cols["price_obs"], dtype=float),
        exited=np.array(cols["exited"], dtype=bool),
        ids=ids, entry_week=entry, censored=censored, true_type=true_type,
        space=space, meta=meta.get("meta", {}),
    )
