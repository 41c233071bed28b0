"""State space, transition kernels, cost shocks and structural parameters.

The public state of a seller is a pair (rating, sales bucket).  States are
enumerated rating-major, so ``index = rating_index * n_buckets + bucket``.
Per-type quantities are stored as arrays with a leading axis of length two,
``[LOW, HIGH]``.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.special import log_ndtr, ndtr

__all__ = [
    "LOW",
    "HIGH",
    "WEEKLY_BETA",
    "QualityType",
    "InvalidGridError",
    "RatingGrid",
    "SalesGrid",
    "StateSpace",
    "TransitionKernel",
    "NormalCost",
    "UniformCost",
    "make_cost",
    "ModelParams",
    "TABLE3",
    "ESTIMATED_FIELDS",
    "Model",
    "build_model",
    "build_tauchen_rating_kernel",
    "build_sales_kernel",
    "build_product_kernel",
    "build_kernel",
    "AssumptionReport",
    "validate_assumption_a1",
    "validate_assumption_a2",
]

LOW, HIGH = 0, 1

#: Weekly discount factor implied by a 25% annual interest rate.
WEEKLY_BETA = (1.0 / 1.25) ** (1.0 / 52.0)

PAYOFF_VARIANTS = ("survival_weighted", "main_text")
NOISE_MODELS = ("multiplicative", "additive")


class QualityType(enum.IntEnum):
    """Seller type; the integer value is the row used in per-type arrays."""

    LOW = 0
    HIGH = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "QualityType":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


class InvalidGridError(ValueError):
    """Raised for malformed rating or sales grids."""


# ---------------------------------------------------------------------------
# grids and state space
# ---------------------------------------------------------------------------


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RatingGrid:
    """Ordered rating levels.

    Parameters
    ----------
    points : array_like
        Strictly increasing rating values.
    bounds : tuple of float, optional
        ``(r_min, r_max)``; defaults to the first and last point.
    """

    points: np.ndarray
    bounds: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 1:
            raise InvalidGridError("rating grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidGridError("rating grid points must be finite")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise InvalidGridError("rating grid must be strictly increasing")
        bounds = self.bounds
        if bounds is None:
            bounds = (float(pts[0]), float(pts[-1]))
        bounds = (float(bounds[0]), float(bounds[1]))
        if pts[0] < bounds[0] or pts[-1] > bounds[1]:
            raise InvalidGridError("rating grid points outside bounds")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def linspace(cls, lo: float, hi: float, n: int) -> "RatingGrid":
        if n < 1:
            raise InvalidGridError("rating grid needs at least one point")
        if n == 1:
            return cls(np.array([hi]), (lo, hi))
        return cls(np.linspace(lo, hi, n), (lo, hi))

    def __len__(self) -> int:
        return self.points.size

    def nearest(self, rating: float) -> tuple[int, bool]:
        """Index of the grid point closest to ``rating`` and whether it moved."""
        idx = int(np.argmin(np.abs(self.points - rating)))
        return idx, bool(self.points[idx] != rating)

    def __eq__(self, other):
        if not isinstance(other, RatingGrid):
            return NotImplemented
        return self.bounds == other.bounds and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.bounds, self.points.tobytes()))


DEFAULT_SALES_EDGES = (0, 1, 5, 10, 50, 100, 500, 1000, 2000, 5000)
ESTIMATION_SALES_EDGES = (0, 1, 10, 100, 1000, 5000)


@dataclass(frozen=True)
class SalesGrid:
    """Sales-count buckets ``[e_0, e_1), ..., [e_{K-1}, inf)`` given lower edges."""

    edges: tuple = DEFAULT_SALES_EDGES

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 1:
            raise InvalidGridError("sales grid needs at least one bucket")
        if edges[0] != 0.0:
            raise InvalidGridError("first sales bucket must start at 0")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise InvalidGridError("sales bucket edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def buckets(self) -> list[tuple[float, float]]:
        upper = list(self.edges[1:]) + [np.inf]
        return list(zip(self.edges, upper))

    @property
    def labels(self) -> list[str]:
        return [f"{lo:g}-{hi:g}" for lo, hi in self.buckets]


@dataclass(frozen=True)
class StateSpace:
    """Cartesian product of a rating grid and a sales grid."""

    ratings: RatingGrid
    sales: SalesGrid

    @classmethod
    def default(cls) -> "StateSpace":
        """51 ratings on [3, 5] crossed with the ten default sales buckets."""
        return cls(RatingGrid.linspace(3.0, 5.0, 51), SalesGrid(DEFAULT_SALES_EDGES))

    @classmethod
    def estimation(cls) -> "StateSpace":
        """Coarser 21 x 6 grid used inside the likelihood loop."""
        return cls(RatingGrid.linspace(3.0, 5.0, 21), SalesGrid(ESTIMATION_SALES_EDGES))

    @property
    def n_ratings(self) -> int:
        return len(self.ratings)

    @property
    def n_buckets(self) -> int:
        return len(self.sales)

    @property
    def size(self) -> int:
        return self.n_ratings * self.n_buckets

    def __len__(self) -> int:
        return self.size

    def index(self, rating_index, bucket):
        return np.asarray(rating_index) * self.n_buckets + np.asarray(bucket)

    def rating_index(self, state):
        return np.asarray(state) // self.n_buckets

    def bucket(self, state):
        return np.asarray(state) % self.n_buckets

    def rating(self, state):
        return self.ratings.points[self.rating_index(state)]

    @property
    def entry_state(self) -> int:
        """Top rating, first sales bucket."""
        return int(self.index(self.n_ratings - 1, 0))

    def state_table(self) -> np.ndarray:
        """Array of shape (size, 2) with (rating value, bucket) per state."""
        idx = np.arange(self.size)
        return np.column_stack([self.rating(idx), self.bucket(idx)])


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def build_tauchen_rating_kernel(points, xi: float, rho: float, sigma_r: float) -> np.ndarray:
    """Tauchen discretization of ``r' = xi*r + (1-xi)*rho + e``, ``e ~ N(0, sigma_r)``.

    Cell boundaries are midpoints between adjacent grid points; the mass
    beyond the outermost midpoints is assigned to the boundary cells.  Works
    for uneven grids.

    Parameters
    ----------
    points : array_like or RatingGrid
        Rating levels.
    xi : float
        Persistence of the rating process.
    rho : float
        Long-run target rating (may lie outside the grid).
    sigma_r : float
        Standard deviation of the innovation, must be positive.

    Returns
    -------
    numpy.ndarray
        Row-stochastic matrix of shape (n, n).
    """
    if isinstance(points, RatingGrid):
        points = points.points
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or pts.size < 1:
        raise InvalidGridError("rating grid needs at least one point")
    if not sigma_r > 0:
        raise ValueError("sigma_r must be positive")
    n = pts.size
    if n == 1:
        return np.ones((1, 1))
    mean = xi * pts + (1.0 - xi) * rho
    cuts = 0.5 * (pts[1:] + pts[:-1])
    z = (cuts[None, :] - mean[:, None]) / sigma_r
    below = ndtr(z)
    above = ndtr(-z)
    out = np.empty((n, n))
    out[:, 0] = below[:, 0]
    out[:, -1] = above[:, -1]
    # difference the tail that is small to avoid cancellation
    from_below = below[:, 1:] - below[:, :-1]
    from_above = above[:, :-1] - above[:, 1:]
    out[:, 1:-1] = np.where(z[:, :-1] > 0, from_above, from_below)
    np.maximum(out, 0.0, out=out)
    return out


def build_sales_kernel(gamma: float, n_buckets) -> np.ndarray:
    """Sales ladder: move up one bucket with probability ``gamma``, top absorbing."""
    if isinstance(n_buckets, SalesGrid):
        n_buckets = len(n_buckets)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    k = int(n_buckets)
    out = np.diag(np.full(k, 1.0 - gamma))
    out[np.arange(k - 1), np.arange(1, k)] = gamma
    out[-1, -1] = 1.0
    return out


def build_product_kernel(rating_kernel, sales_kernel, space: Optional[StateSpace] = None) -> np.ndarray:
    """Joint kernel when rating and sales move independently given the type."""
    rk = np.asarray(rating_kernel, dtype=float)
    sk = np.asarray(sales_kernel, dtype=float)
    for m in (rk, sk):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("kernel factors must be square")
        if np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("kernel factors must be row-stochastic")
    if space is not None and (rk.shape[0], sk.shape[0]) != (space.n_ratings, space.n_buckets):
        raise ValueError("kernel factors do not match the state space")
    return np.kron(rk, sk)


@dataclass(frozen=True)
class TransitionKernel:
    """Per-type transition matrices, ``matrices[t, i, j] = P(j | i, type t)``."""

    matrices: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[0] != 2 or m.shape[1] != m.shape[2]:
            raise ValueError("kernel must have shape (2, n, n)")
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("kernel entries must lie in [0, 1]")
        err = np.max(np.abs(m.sum(axis=2) - 1.0))
        if err > 1e-12:
            raise ValueError(f"kernel rows must sum to one (max error {err:.3g})")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @property
    def n_states(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, type_) -> np.ndarray:
        return self.matrices[int(type_)]


def build_kernel(params: "ModelParams", space: StateSpace) -> TransitionKernel:
    sales = build_sales_kernel(params.gamma_sales, space.n_buckets)
    mats = []
    for rho in (params.rho_low, params.rho_high):
        rating = build_tauchen_rating_kernel(space.ratings, params.xi, rho, params.sigma_r)
        mats.append(build_product_kernel(rating, sales))
    return TransitionKernel(np.stack(mats))


# ---------------------------------------------------------------------------
# cost shocks
# ---------------------------------------------------------------------------


class _CostBase:
    family = "abstract"
    support = (-np.inf, np.inf)

    def expected_value(self, c, variant: str = "survival_weighted"):
        """Expected continuation payoff at cutoff ``c``.

        ``survival_weighted`` is ``F(c) (c - E[x | x <= c]) = E[max(0, c - x)]``;
        ``main_text`` drops the survival weight, ``c - E[x | x <= c]``.
        """
        if variant == "survival_weighted":
            return self._ev_survival(np.asarray(c, dtype=float))
        if variant == "main_text":
            return self._ev_main(np.asarray(c, dtype=float))
        raise ValueError(f"unknown payoff variant {variant!r}")

    def expected_value_derivative(self, c, variant: str = "survival_weighted"):
        if variant == "survival_weighted":
            return self.cdf(c)
        if variant == "main_text":
            return self._ev_main_prime(np.asarray(c, dtype=float))
        raise ValueError(f"unknown payoff variant {variant!r}")


class NormalCost(_CostBase):
    """Normal cost shocks with mean ``mu`` and standard deviation ``sigma``."""

    family = "normal"

    def __init__(self, mu: float = 0.386, sigma: float = 1.0):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def __repr__(self):
        return f"NormalCost(mu={self.mu!r}, sigma={self.sigma!r})"

    @property
    def std(self) -> float:
        return self.sigma

    def _z(self, c):
        return (np.asarray(c, dtype=float) - self.mu) / self.sigma

    def cdf(self, c):
        return ndtr(self._z(c))

    def sf(self, c):
        return ndtr(-self._z(c))

    def logcdf(self, c):
        return log_ndtr(self._z(c))

    def logsf(self, c):
        return log_ndtr(-self._z(c))

    def pdf(self, c):
        z = self._z(c)
        return np.exp(-0.5 * z * z) / (self.sigma * np.sqrt(2 * np.pi))

    def _mills(self, z):
        # phi(z) / Phi(z), stable in the lower tail
        return np.exp(-0.5 * z * z - 0.5 * np.log(2 * np.pi) - log_ndtr(z))

    def truncated_mean(self, c):
        """E[x | x <= c]."""
        z = self._z(c)
        return self.mu - self.sigma * self._mills(z)

    def _ev_survival(self, c):
        z = self._z(c)
        phi = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        return self.sigma * (z * ndtr(z) + phi)

    def _ev_main(self, c):
        z = self._z(c)
        return self.sigma * (z + self._mills(z))

    def _ev_main_prime(self, c):
        z = self._z(c)
        lam = self._mills(z)
        return 1.0 - lam * (z + lam)


class UniformCost(_CostBase):
    """Uniform cost shocks on ``[lo, hi]`` (the unit interval by default)."""

    family = "uniform"

    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        if not hi > lo:
            raise ValueError("uniform support must have hi > lo")
        self.lo = float(lo)
        self.hi = float(hi)
        self.support = (self.lo, self.hi)

    def __repr__(self):
        return f"UniformCost(lo={self.lo!r}, hi={self.hi!r})"

    @property
    def std(self) -> float:
        return (self.hi - self.lo) / np.sqrt(12.0)

    def _u(self, c):
        return np.clip((np.asarray(c, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def cdf(self, c):
        return self._u(c)

    def sf(self, c):
        return 1.0 - self._u(c)

    def logcdf(self, c):
        with np.errstate(divide="ignore"):
            return np.log(self.cdf(c))

    def logsf(self, c):
        with np.errstate(divide="ignore"):
            return np.log(self.sf(c))

    def pdf(self, c):
        c = np.asarray(c, dtype=float)
        inside = (c >= self.lo) & (c <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def truncated_mean(self, c):
        """E[x | x <= c]; equals ``c`` below the support (degenerate limit)."""
        c = np.asarray(c, dtype=float)
        return np.where(c <= self.lo, c, 0.5 * (self.lo + np.minimum(c, self.hi)))

    def _ev_survival(self, c):
        w = self.hi - self.lo
        inside = (c - self.lo) ** 2 / (2 * w)
        above = c - 0.5 * (self.lo + self.hi)
        return np.where(c <= self.lo, 0.0, np.where(c >= self.hi, above, inside))

    def _ev_main(self, c):
        return c - self.truncated_mean(c)

    def _ev_main_prime(self, c):
        return np.where(c <= self.lo, 0.0, np.where(c >= self.hi, 1.0, 0.5))


def make_cost(family: str = "normal", **kwargs):
    """Construct a continuous cost distribution by family name."""
    family = family.lower()
    if family == "normal":
        return NormalCost(**kwargs)
    if family in ("uniform", "uniform01"):
        return UniformCost(**kwargs)
    raise ValueError(f"unsupported cost family {family!r}: only continuous normal or uniform laws")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

#: The ten parameters estimated by maximum likelihood.
ESTIMATED_FIELDS = (
    "theta_low",
    "theta_high",
    "alpha",
    "mu_c",
    "gamma_sales",
    "rho_low",
    "rho_high",
    "xi",
    "sigma_r",
    "sigma_p",
)


@dataclass(frozen=True)
class ModelParams:
    """Structural parameters.  Defaults are the published point estimates."""

    theta_low: float = 0.300
    theta_high: float = 0.525
    alpha: float = 0.233
    mu_c: float = 0.386
    sigma_c: float = 1.0
    gamma_sales: float = 0.293
    rho_low: float = 5.010
    rho_high: float = 6.372
    xi: float = 0.060
    sigma_r: float = 0.037
    sigma_p: float = 0.144
    beta: float = WEEKLY_BETA
    demand_gamma0: float = 1.0
    demand_gamma1: float = 0.0
    payoff_variant: str = "survival_weighted"
    entry_mass: float = 1.0
    price_noise: str = "multiplicative"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name in ("payoff_variant", "price_noise"):
                continue
            v = float(getattr(self, f.name))
            if not np.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            object.__setattr__(self, f.name, v)
        if self.theta_low > self.theta_high:
            raise ValueError("theta_low must not exceed theta_high")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma_sales <= 1.0:
            raise ValueError("gamma_sales must lie in [0, 1]")
        if not 0.0 <= self.xi < 1.0:
            raise ValueError("xi must lie in [0, 1)")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not self.sigma_r > 0:
            raise ValueError("sigma_r must be positive")
        if not self.sigma_c > 0:
            raise ValueError("sigma_c must be positive")
        if not self.sigma_p >= 0:
            raise ValueError("sigma_p must be non-negative")
        if not self.entry_mass > 0:
            raise ValueError("entry_mass must be positive")
        if self.payoff_variant not in PAYOFF_VARIANTS:
            raise ValueError(f"payoff_variant must be one of {PAYOFF_VARIANTS}")
        if self.price_noise not in NOISE_MODELS:
            raise ValueError(f"price_noise must be one of {NOISE_MODELS}")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([self.theta_low, self.theta_high])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([self.rho_low, self.rho_high])

    def cost(self) -> NormalCost:
        return NormalCost(self.mu_c, self.sigma_c)


TABLE3 = ModelParams()


# ---------------------------------------------------------------------------
# bundled model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    """Everything the equilibrium solver needs: parameters, states, kernel, costs, entry."""

    params: ModelParams
    space: StateSpace
    kernel: TransitionKernel
    cost: object
    entry: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.space.size
        if self.kernel.n_states != n:
            raise ValueError("kernel size does not match the state space")
        entry = self.entry
        if entry is None:
            entry = np.zeros((2, n))
            p = self.params
            entry[LOW, self.space.entry_state] = p.entry_mass * (1.0 - p.alpha)
            entry[HIGH, self.space.entry_state] = p.entry_mass * p.alpha
        entry = np.array(entry, dtype=float)
        if entry.shape != (2, n) or np.any(entry < 0):
            raise ValueError("entry measure must be a non-negative (2, n) array")
        entry.setflags(write=False)
        object.__setattr__(self, "entry", entry)

    @property
    def n_states(self) -> int:
        return self.space.size

    def with_params(self, **changes) -> "Model":
        """Rebuild the kernel, costs and entry for changed parameters."""
        params = self.params.replace(**changes)
        return build_model(params, self.space, cost=_rebuild_cost(self.cost, params))

    def scaled_entry(self, factor: float) -> "Model":
        return dataclasses.replace(self, entry=self.entry * factor)


def _rebuild_cost(cost, params):
    if isinstance(cost, NormalCost):
        return params.cost()
    return cost


def build_model(params: ModelParams = TABLE3, space: Optional[StateSpace] = None, cost=None,
                entry=None) -> Model:
    """Assemble a :class:`Model` with the product kernel and normal costs by default."""
    space = StateSpace.default() if space is None else space
    cost = params.cost() if cost is None else cost
    return Model(params, space, build_kernel(params, space), cost, entry)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    ok: bool
    message: str
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def _components(matrix):
    graph = sparse.csr_matrix(np.asarray(matrix) > 0)
    return connected_components(graph, directed=True, connection="strong")


def validate_assumption_a1(kernel) -> AssumptionReport:
    """Irreducibility of every per-type kernel.

    Accepts a :class:`TransitionKernel` or a single square matrix.  On failure
    the report names the type and the states of one closed class that other
    states cannot leave.
    """
    mats = kernel.matrices if isinstance(kernel, TransitionKernel) else np.asarray(kernel)[None]
    details = {}
    ok = True
    messages = []
    for t, m in enumerate(mats):
        n_comp, labels = _components(m)
        label = QualityType(t).label if len(mats) == 2 else str(t)
        details[label] = {"n_components": int(n_comp)}
        if n_comp > 1:
            ok = False
            # a closed class: component with no edge leaving it
            pattern = np.asarray(m) > 0
            closed = []
            for comp in range(n_comp):
                members = np.flatnonzero(labels == comp)
                leaves = pattern[np.ix_(members, np.flatnonzero(labels != comp))].any()
                if not leaves:
                    closed.append(members.tolist())
            details[label]["closed_classes"] = closed
            messages.append(f"{label}: {n_comp} strongly connected components, "
                            f"closed class {closed[0] if closed else []}")
    msg = "irreducible" if ok else "; ".join(messages)
    return AssumptionReport(ok, msg, details)


def validate_assumption_a2(cost, params: ModelParams, probe_grid: Optional[Sequence[float]] = None,
                           step: float = 1e-5, n_probe: int = 1000) -> AssumptionReport:
    """Check ``0 < F(theta_low) < F(theta_high) < 1`` and the monotone-payoff condition.

    The second condition requires ``d/dc [F(c) (c - E[x | x <= c])] > 0``, checked
    by central differences at every probe point.  The default probe grid spans
    ``[theta_low - 5 sd, theta_high / (1 - beta)]`` intersected with the interior
    of the cost support.
    """
    f_lo = float(cost.cdf(params.theta_low))
    f_hi = float(cost.cdf(params.theta_high))
    details = {"F_theta_low": f_lo, "F_theta_high": f_hi}
    if not 0.0 < f_lo < f_hi < 1.0:
        return AssumptionReport(False, "requires 0 < F(theta_low) < F(theta_high) < 1", details)
    if probe_grid is None:
        lo = params.theta_low - 5.0 * cost.std
        hi = params.theta_high / (1.0 - params.beta)
        s_lo, s_hi = cost.support
        lo = max(lo, s_lo + 2 * step)
        hi = min(hi, s_hi - 2 * step)
        probe_grid = np.linspace(lo, hi, n_probe)
    probe = np.asarray(probe_grid, dtype=float)

    def h(c):
        return cost.cdf(c) * (c - cost.truncated_mean(c))

    deriv = (h(probe + step) - h(probe - step)) / (2 * step)
    details["probe_range"] = [float(probe.min()), float(probe.max())]
    bad = np.flatnonzero(~(deriv > 0))
    if bad.size:
        c0 = float(probe[bad[0]])
        details["first_violation"] = c0
        return AssumptionReport(False, f"derivative condition fails at c={c0:.6g}", details)
    return AssumptionReport(True, "holds on probe grid", details)
