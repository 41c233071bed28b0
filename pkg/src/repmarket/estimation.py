"""Nested fixed-point maximum likelihood for the structural parameters."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .equilibrium import EquilibriumSolution, SolverError, SolverOptions, solve_equilibrium
from .model import ESTIMATED_FIELDS, HIGH, LOW, TABLE3, Model, ModelParams, QualityType, StateSpace, build_model
from .simulate import Panel

__all__ = [
    "Transform",
    "DEFAULT_TRANSFORMS",
    "EstimationConfig",
    "EstimationResult",
    "PreparedPanel",
    "prepare_panel",
    "log_price_density",
    "vendor_loglik_conditional",
    "mixture_vendor_loglik",
    "LikelihoodEvaluator",
    "total_loglik",
    "maximize_likelihood",
    "opg_covariance",
    "opg_standard_errors",
    "perturbed_start",
]

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    """Map between a bounded parameter and an unconstrained coordinate.

    ``kind`` is ``"logit"`` (open interval ``(lo, hi)``), ``"log"`` (values
    above ``lo``) or ``"identity"``.
    """

    kind: str = "identity"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("logit", "log", "identity"):
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.kind == "logit" and not self.lo < self.hi:
            raise ValueError("logit transform needs lo < hi")

    def forward(self, v: float) -> float:
        if self.kind == "logit":
            return math.log((v - self.lo) / (self.hi - v))
        if self.kind == "log":
            return math.log(v - self.lo)
        return float(v)

    def inverse(self, x: float) -> float:
        if self.kind == "logit":
            v = self.lo + (self.hi - self.lo) * _expit(x)
            if not self.lo < v < self.hi:
                raise ValueError("coordinate maps onto the boundary")
            return v
        if self.kind == "log":
            v = self.lo + math.exp(x)
            if not v > self.lo:
                raise ValueError("coordinate maps onto the boundary")
            return v
        return float(x)

    def derivative(self, x: float) -> float:
        """d(value)/d(coordinate) at ``x``."""
        if self.kind == "logit":
            e = _expit(x)
            return (self.hi - self.lo) * e * (1.0 - e)
        if self.kind == "log":
            return math.exp(x)
        return 1.0


def _expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


DEFAULT_TRANSFORMS = {
    "theta_low": Transform("log"),
    "theta_high": Transform("log"),
    "alpha": Transform("logit"),
    "mu_c": Transform("identity"),
    "gamma_sales": Transform("logit"),
    "rho_low": Transform("identity"),
    "rho_high": Transform("identity"),
    "xi": Transform("logit"),
    "sigma_r": Transform("log"),
    "sigma_p": Transform("log"),
}


@dataclass(frozen=True)
class EstimationConfig:
    """Settings for likelihood evaluation and maximization.

    ``base_params`` supplies fixed values (discount factor, cost scale, demand
    and noise conventions) and the default starting point.  ``start``
    optionally overrides the starting values of free parameters.

    ``warm_start`` reuses the previous equilibrium as the inner starting
    point.  It is off by default: where several equilibria exist, a warm
    start can carry one of them into a region where the cold start selects
    another, which makes the objective depend on the search path.
    """

    free_parameters: tuple = ESTIMATED_FIELDS
    transforms: dict = field(default_factory=dict)
    base_params: ModelParams = TABLE3
    start: Optional[dict] = None
    space: StateSpace = field(default_factory=StateSpace.estimation)
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(max_iter=2000))
    initial_simplex_scale: float = 0.1
    fatol: float = 1e-6
    xatol: float = 1e-5
    max_evaluations: int = 6000
    restarts: int = 1
    opg_step: float = 1e-5
    warm_start: bool = False

    def __post_init__(self):
        names = {f.name for f in dataclasses.fields(ModelParams)}
        free = tuple(self.free_parameters)
        object.__setattr__(self, "free_parameters", free)
        for p in free:
            if p not in names:
                raise ValueError(f"unknown parameter {p!r}")
            if p in ("beta", "sigma_c"):
                raise ValueError(f"{p} is held fixed and cannot be estimated")
            if p not in self.transform_map():
                raise ValueError(f"no transform for {p!r}")
        if len(set(free)) != len(free):
            raise ValueError("duplicate free parameters")

    def transform_map(self) -> dict:
        out = dict(DEFAULT_TRANSFORMS)
        out.update(self.transforms)
        return out

    def start_params(self) -> ModelParams:
        return self.base_params.replace(**(self.start or {}))

    def to_coords(self, params: ModelParams) -> np.ndarray:
        tm = self.transform_map()
        return np.array([tm[p].forward(getattr(params, p)) for p in self.free_parameters])

    def from_coords(self, x) -> ModelParams:
        tm = self.transform_map()
        vals = {p: tm[p].inverse(float(v)) for p, v in zip(self.free_parameters, x)}
        return self.base_params.replace(**vals)

    def coord_jacobian(self, x) -> np.ndarray:
        tm = self.transform_map()
        return np.array([tm[p].derivative(float(v)) for p, v in zip(self.free_parameters, x)])


@dataclass
class EstimationResult:
    point_estimates: ModelParams
    standard_errors: dict
    loglik: float
    n_vendors: int
    n_obs: int
    converged: bool
    evaluation_count: int
    inner_failures: int
    free_parameters: tuple = ()
    start: Optional[ModelParams] = None
    se_flags: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    message: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "estimates": {p: getattr(self.point_estimates, p) for p in self.free_parameters},
            "params": self.point_estimates.to_dict(),
            "standard_errors": self.standard_errors,
            "se_flags": self.se_flags,
            "loglik": self.loglik,
            "n_vendors": self.n_vendors,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "evaluation_count": self.evaluation_count,
            "inner_failures": self.inner_failures,
            "excluded": self.excluded,
            "start": None if self.start is None else self.start.to_dict(),
            "message": self.message,
            "seconds": self.seconds,
        }


# ---------------------------------------------------------------------------
# panel preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedPanel:
    """Row arrays for likelihood evaluation, vendors sorted by id."""

    ids: np.ndarray
    starts: np.ndarray
    state: np.ndarray
    prev: np.ndarray
    first: np.ndarray
    price: np.ndarray
    exited: np.ndarray
    excluded: dict

    @property
    def n_vendors(self) -> int:
        return self.ids.size

    @property
    def n_obs(self) -> int:
        return self.state.size


def prepare_panel(panel: Panel, space: StateSpace) -> PreparedPanel:
    """Select usable vendors and precompute row indices.

    Vendors whose first observed state is not the entry state are rejected,
    since their initial distribution is unknown.  Vendors observed for a
    single week that also exit in it are excluded, as the likelihood has no
    term for them.
    """
    if panel.space is not None and panel.space != space:
        raise ValueError("panel state space differs from the estimation state space")
    if panel.n_obs and (panel.state.min() < 0 or panel.state.max() >= space.size):
        raise ValueError("panel state index outside the state space")
    starts, stops = panel.vendor_slices()
    present = stops > starts
    lengths = stops - starts
    head = np.minimum(starts, max(panel.n_obs - 1, 0))
    if panel.n_obs:
        not_entry = present & (panel.state[head] != space.entry_state)
        single_exit = present & (lengths == 1) & panel.exited[head]
    else:
        not_entry = single_exit = np.zeros(starts.size, dtype=bool)
    keep = present & ~not_entry & ~single_exit
    keep_ids = panel.ids[keep]
    rmask = np.isin(panel.vendor_id, keep_ids)
    vid = panel.vendor_id[rmask]
    state = panel.state[rmask]
    first = np.ones(vid.size, dtype=bool)
    first[1:] = vid[1:] != vid[:-1]
    prev = np.empty_like(state)
    prev[0:1] = state[0:1]
    prev[1:] = state[:-1]
    prev[first] = state[first]
    return PreparedPanel(
        ids=keep_ids,
        starts=np.flatnonzero(first),
        state=state,
        prev=prev,
        first=first,
        price=panel.price[rmask],
        exited=panel.exited[rmask],
        excluded={"not_entering_at_entry_state": int(not_entry.sum()),
                  "single_week_exit": int(single_exit.sum()),
                  "no_rows": int((~present).sum())},
    )


# ---------------------------------------------------------------------------
# likelihood pieces
# ---------------------------------------------------------------------------


def log_price_density(price, belief, sigma_p: float, noise: str = "multiplicative"):
    """Log density of an observed price given the market belief.

    ``multiplicative``: ``log p`` is normal around ``log belief``.
    ``additive``: ``p - belief`` is lognormal with unit median.
    """
    price = np.asarray(price, dtype=float)
    belief = np.asarray(belief, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if noise == "multiplicative":
            q = price
            z = (np.log(price) - np.log(belief)) / sigma_p
        else:
            q = price - belief
            z = np.log(q) / sigma_p
        out = -np.log(q) - math.log(sigma_p) - _LOG_SQRT_2PI - 0.5 * z * z
    return np.where(q > 0, out, -np.inf)


def _row_terms(prep_state, prep_prev, first, price, exited, solution, model):
    """Per-row log factors for both types, shape (2, rows)."""
    p = model.params
    cost = model.cost
    with np.errstate(divide="ignore"):
        log_surv = cost.logcdf(solution.cutoffs)
        log_exit = cost.logsf(solution.cutoffs)
        log_trans = np.log(model.kernel.matrices[:, prep_prev, prep_state])
    log_trans[:, first] = 0.0
    stay = np.flatnonzero(~exited)
    dens = np.zeros(prep_state.size)
    dens[stay] = log_price_density(price[stay], solution.beliefs[prep_state[stay]], p.sigma_p, p.price_noise)
    out = np.where(exited, log_exit[:, prep_state], log_surv[:, prep_state] + dens) + log_trans
    return out


def _vendor_arrays(vendor):
    if isinstance(vendor, dict):
        state = np.asarray(vendor["state"], dtype=np.int64)
        price = np.asarray(vendor["price"], dtype=float)
        exited = np.asarray(vendor["exited"], dtype=bool)
        age = vendor.get("age")
    else:
        state, price, exited = (np.asarray(a) for a in vendor[:3])
        age = None
        state = state.astype(np.int64)
        exited = exited.astype(bool)
    if state.size == 0:
        raise ValueError("vendor has no observations")
    if age is not None and np.any(np.diff(np.asarray(age)) != 1):
        raise ValueError("vendor observations are not age-contiguous")
    if np.any(exited[:-1]):
        raise ValueError("exit may only be recorded in the last period")
    return state, price, exited


def vendor_loglik_conditional(vendor, type_, solution: EquilibriumSolution, model: Model) -> float:
    """Log-likelihood of one vendor's history given its quality type.

    Parameters
    ----------
    vendor : dict or tuple
        ``state``, ``price`` and ``exited`` arrays in age order (``age``
        optional, checked for contiguity), as returned by ``Panel.rows``.
    type_ : QualityType or int
    solution, model
        Equilibrium supplying cutoffs and beliefs, and the model supplying the
        kernel, cost law and price noise.

    Returns
    -------
    float
        ``-inf`` if the history has zero probability (for instance a
        transition the kernel rules out, or a first state other than the entry
        state).
    """
    t = int(QualityType.parse(type_))
    state, price, exited = _vendor_arrays(vendor)
    if state[0] != model.space.entry_state:
        return -np.inf
    first = np.zeros(state.size, dtype=bool)
    first[0] = True
    prev = np.concatenate([state[:1], state[:-1]])
    terms = _row_terms(state, prev, first, price, exited, solution, model)[t]
    return float(math.fsum(terms)) if np.all(np.isfinite(terms)) else -np.inf


def mixture_vendor_loglik(loglik_high, loglik_low, alpha: float):
    """Mix the type-conditional log-likelihoods with weights ``alpha`` and ``1 - alpha``."""
    with np.errstate(divide="ignore"):
        la, lb = np.log(alpha), np.log1p(-alpha)
    a = np.where(np.isneginf(loglik_high), -np.inf, la + np.asarray(loglik_high, dtype=float))
    b = np.where(np.isneginf(loglik_low), -np.inf, lb + np.asarray(loglik_low, dtype=float))
    out = np.logaddexp(a, b)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# nested fixed point
# ---------------------------------------------------------------------------


class LikelihoodEvaluator:
    """Evaluate the panel log-likelihood at candidate parameters.

    The equilibrium is re-solved for every candidate, from the default cold
    start unless ``config.warm_start`` is set.  Candidates whose inner solve
    fails, or which violate parameter constraints, score ``-inf``.
    """

    def __init__(self, panel: Panel, config: EstimationConfig, cost=None):
        self.config = config
        self.prep = prepare_panel(panel, config.space)
        self.cost = cost
        self.evaluations = 0
        self.inner_failures = 0
        self.invalid_points = 0
        self.last: Optional[EquilibriumSolution] = None
        self.diagnostics: list = []
        self.best = -np.inf
        self.best_params: Optional[ModelParams] = None

    def model_for(self, params: ModelParams) -> Model:
        return build_model(params, self.config.space, cost=self.cost)

    def solve(self, params: ModelParams, warm: Optional[bool] = None) -> tuple[Model, EquilibriumSolution]:
        model = self.model_for(params)
        if warm is None:
            warm = self.config.warm_start
        init = self.last if warm else None
        try:
            sol = solve_equilibrium(model, self.config.solver, initial=init)
        except SolverError:
            if init is None:
                raise
            sol = solve_equilibrium(model, self.config.solver)
        self.last = sol
        return model, sol

    def vendor_logliks(self, params: ModelParams, warm: Optional[bool] = None) -> np.ndarray:
        """Mixture log-likelihood per vendor (id order); ``-inf`` entries flag impossible histories."""
        self.evaluations += 1
        try:
            model, sol = self.solve(params, warm)
        except SolverError:
            self.inner_failures += 1
            return np.full(self.prep.n_vendors, -np.inf)
        return self.vendor_logliks_at(sol, model)

    def vendor_logliks_at(self, solution: EquilibriumSolution, model: Model) -> np.ndarray:
        pp = self.prep
        if pp.n_vendors == 0:
            return np.zeros(0)
        terms = _row_terms(pp.state, pp.prev, pp.first, pp.price, pp.exited, solution, model)
        with np.errstate(invalid="ignore"):
            cond = np.add.reduceat(terms, pp.starts, axis=1)
        cond = np.where(np.isnan(cond), -np.inf, cond)
        mix = mixture_vendor_loglik(cond[HIGH], cond[LOW], model.params.alpha)
        bad = np.flatnonzero(np.isneginf(mix))
        self.diagnostics = [int(pp.ids[i]) for i in bad[:20]]
        return np.atleast_1d(mix)

    def total(self, params: ModelParams, warm: Optional[bool] = None) -> float:
        ll = self.vendor_logliks(params, warm)
        if ll.size == 0:
            return 0.0
        if not np.all(np.isfinite(ll)):
            return -np.inf
        return math.fsum(ll)

    def objective(self, x) -> float:
        """Negative log-likelihood at transformed coordinates ``x``."""
        try:
            params = self.config.from_coords(x)
        except (ValueError, OverflowError):
            self.invalid_points += 1
            return np.inf
        ll = self.total(params)
        if np.isfinite(ll) and ll > self.best:
            self.best = ll
            self.best_params = params
        if self.evaluations % 200 == 0:
            log.info("evaluation %d: best loglik %.6f", self.evaluations, self.best)
        return -ll if np.isfinite(ll) else np.inf


def total_loglik(panel: Panel, params: ModelParams, config: Optional[EstimationConfig] = None,
                 cost=None) -> float:
    """Panel log-likelihood at ``params``: solve the equilibrium, then sum vendor mixtures.

    The sum over vendors is exactly rounded, so it does not depend on vendor
    order.  An empty panel scores 0; a failed inner solve scores ``-inf``.
    """
    config = config or EstimationConfig(space=panel.space or StateSpace.estimation())
    ev = LikelihoodEvaluator(panel, config, cost=cost)
    if ev.prep.n_vendors == 0:
        return 0.0
    return ev.total(params, warm=False)


def _initial_simplex(x0, scale):
    n = x0.size
    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] += scale * max(1.0, abs(x0[i]))
    return sim


def maximize_likelihood(panel: Panel, config: EstimationConfig, with_se: bool = True,
                        cost=None) -> EstimationResult:
    """Maximize the panel likelihood by Nelder-Mead in transformed coordinates.

    Convergence requires the simplex spread to fall below ``fatol`` in value
    and ``xatol`` in coordinates.  The search restarts ``config.restarts``
    times from the incumbent with a fresh simplex.  Standard errors come from
    :func:`opg_standard_errors` at the optimum.
    """
    t0 = time.perf_counter()
    ev = LikelihoodEvaluator(panel, config, cost=cost)
    if ev.prep.n_vendors == 0:
        raise ValueError("no usable vendors in the panel")
    start = config.start_params()
    x = config.to_coords(start)
    f = ev.objective(x)
    if not np.isfinite(f):
        raise ValueError("likelihood is not finite at the starting point")
    converged = False
    message = ""
    for attempt in range(config.restarts + 1):
        budget = config.max_evaluations - ev.evaluations
        if budget <= len(x) + 1:
            message = "evaluation budget exhausted"
            converged = False
            break
        res = optimize.minimize(
            ev.objective, x, method="Nelder-Mead",
            options={"initial_simplex": _initial_simplex(x, config.initial_simplex_scale),
                     "xatol": config.xatol, "fatol": config.fatol, "maxfev": budget, "adaptive": True},
        )
        if res.fun <= f:
            x, f = res.x, float(res.fun)
        converged = bool(res.success)
        message = str(res.message)
        if not converged:
            break
    estimates = config.from_coords(x)
    ses, flags = {}, {}
    if with_se:
        ses, flags = opg_standard_errors(panel, estimates, config, evaluator=ev)
    return EstimationResult(
        point_estimates=estimates,
        standard_errors=ses,
        loglik=-f,
        n_vendors=ev.prep.n_vendors,
        n_obs=ev.prep.n_obs,
        converged=converged,
        evaluation_count=ev.evaluations,
        inner_failures=ev.inner_failures,
        free_parameters=config.free_parameters,
        start=start,
        se_flags=flags,
        excluded=ev.prep.excluded,
        message=message,
        seconds=time.perf_counter() - t0,
    )


def opg_covariance(scores, rcond: float = 1e-12):
    """Inverse of the outer-product-of-scores matrix.

    Parameters
    ----------
    scores : array, shape (n_vendors, k)

    Returns
    -------
    cov : array, shape (k, k)
    flags : list of str or None
        Per parameter, ``"singular"`` when the matrix had to be pseudo-inverted
        and the parameter loads on a near-null direction.
    """
    g = np.asarray(scores, dtype=float)
    G = g.T @ g
    k = G.shape[0]
    w, v = np.linalg.eigh(G)
    top = w.max() if k else 0.0
    if k and top > 0 and w.min() > rcond * top:
        return np.linalg.inv(G), [None] * k
    cov = np.linalg.pinv(G, rcond=rcond, hermitian=True)
    null = v[:, w <= rcond * max(top, 0.0)]
    flags = ["singular" if null.size and np.max(np.abs(null[i])) > 0.1 else None for i in range(k)]
    if not any(flags):
        flags = ["singular"] * k
    return cov, flags


def opg_standard_errors(panel: Panel, estimates: ModelParams, config: EstimationConfig,
                        evaluator: Optional[LikelihoodEvaluator] = None) -> tuple[dict, dict]:
    """Standard errors from the outer product of per-vendor scores.

    Scores are central differences in transformed coordinates with relative
    step ``config.opg_step``; the covariance is mapped back to natural units by
    the delta method.  Returns ``(standard_errors, flags)`` keyed by parameter.
    """
    ev = evaluator or LikelihoodEvaluator(panel, config)
    x = config.to_coords(estimates)
    base = ev.solve(estimates, warm=False)[1]
    names = config.free_parameters

    def side(xs):
        # None when the neighbour leaves the parameter space
        try:
            params = config.from_coords(xs)
        except ValueError:
            return None
        ev.last = base
        return ev.vendor_logliks(params)

    ev.last = base
    l0 = ev.vendor_logliks(estimates)
    scores = np.full((ev.prep.n_vendors, x.size), np.nan)
    kind = {}
    for j in range(x.size):
        h = config.opg_step * max(1.0, abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        lu, ld = side(up), side(dn)
        if lu is not None and ld is not None:
            scores[:, j] = (lu - ld) / (2.0 * h)
        elif lu is not None:
            scores[:, j] = (lu - l0) / h
            kind[names[j]] = "one_sided"
        elif ld is not None:
            scores[:, j] = (l0 - ld) / h
            kind[names[j]] = "one_sided"
        else:
            kind[names[j]] = "boundary"
    cols = np.array([kind.get(n) != "boundary" for n in names])
    ok = np.all(np.isfinite(scores[:, cols]), axis=1)
    se = np.full(x.size, np.nan)
    out_flags = {}
    if cols.any():
        cov, flags = opg_covariance(scores[np.ix_(ok, cols)])
        jac = config.coord_jacobian(x)[cols]
        se[cols] = np.abs(jac) * np.sqrt(np.clip(np.diag(cov), 0.0, None))
        out_flags.update({n: f for n, f in zip(np.array(names)[cols], flags) if f})
    for n, k in kind.items():
        out_flags.setdefault(n, k)
    if not ok.all():
        out_flags["_dropped_vendors"] = int((~ok).sum())
    return {n: float(v) for n, v in zip(names, se)}, out_flags


def perturbed_start(config: EstimationConfig, params: ModelParams, fraction: float = 0.2,
                    signs: Optional[Sequence[float]] = None) -> ModelParams:
    """Scale every free coordinate by ``1 + fraction * sign``.

    By default the rating targets move down and everything else moves up in
    transformed coordinates.  Moving a rating target up by a fifth pushes it
    so far above the grid that observed rating drops get zero probability.
    """
    if signs is None:
        signs = [-1.0 if p in ("rho_low", "rho_high") else 1.0 for p in config.free_parameters]
    x = config.to_coords(params)
    return config.from_coords(x * (1.0 + fraction * np.asarray(signs, dtype=float)))
