"""Stationary equilibrium: exit cutoffs, type-state masses and Bayes-consistent beliefs.

Conventions
-----------
* Arrays indexed by type have shape ``(2, n)`` with rows ``[LOW, HIGH]``.
* Masses move "survive, then transition":
  ``mu'(w') = sum_w P(w, w') F(c(w)) mu(w) + entry(w')``.
* Cutoffs satisfy ``c(w) = flow(w) + beta * sum_w' P(w, w') EV(c(w'))`` where
  ``EV`` is the expected continuation payoff of the configured payoff variant.

The solver iterates on beliefs only.  For given beliefs the cutoff system and
the mass system are each solved exactly, block by block along the strongly
connected components of the kernel.  The mass solve uses a subtraction-free
elimination so that states whose exit probability is far below machine
precision still get accurate (and very large) masses.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, sparse
from scipy.sparse.csgraph import connected_components

from .model import (
    HIGH,
    LOW,
    Model,
    ModelParams,
    RatingGrid,
    SalesGrid,
    StateSpace,
    TransitionKernel,
    UniformCost,
    validate_assumption_a1,
    validate_assumption_a2,
)

__all__ = [
    "SolverError",
    "NonConvergenceError",
    "NonContractionError",
    "UndefinedBeliefError",
    "InfeasibleError",
    "SolverOptions",
    "EquilibriumSolution",
    "flow_revenue",
    "flow_revenue_derivative",
    "expected_continuation",
    "bellman_cutoff_update",
    "stationary_mass_update",
    "beliefs_from_masses",
    "solve_cutoffs",
    "solve_masses",
    "solve_equilibrium",
    "four_state_model",
    "solve_four_state_closed_form",
]


class SolverError(RuntimeError):
    """Base class for numerical failures of the equilibrium solver."""


class NonConvergenceError(SolverError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class NonContractionError(SolverError):
    """Stationary masses do not exist (some recurrent class never exits)."""


class UndefinedBeliefError(SolverError):
    def __init__(self, state):
        super().__init__(f"zero total mass in state {state}: belief undefined")
        self.state = int(state)


class InfeasibleError(SolverError):
    """The four-state system has no solution with cutoffs in (0, 1)."""


@dataclass(frozen=True)
class SolverOptions:
    """Settings for :func:`solve_equilibrium`.

    ``damping`` is the weight kept on the old beliefs in each update.
    ``anderson`` is the Anderson-acceleration memory; zero gives plain damped
    iteration.  ``offpath_belief`` sets beliefs in states that carry no mass
    of either type: ``"low"`` (the low quality) or ``"prior"`` (the entry mix).
    ``root_fallback`` hands a stalled iteration to a hybrid Powell root solve
    of the belief residual; the belief map can have an expanding direction
    with a negative eigenvalue that no fixed damping tames.
    """

    tol: float = 1e-10
    max_iter: int = 10_000
    damping: float = 0.5
    anderson: int = 5
    offpath_belief: str = "low"
    check_assumptions: bool = False
    root_fallback: bool = True
    stall_window: int = 200

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.offpath_belief not in ("low", "prior"):
            raise ValueError("offpath_belief must be 'low' or 'prior'")


@dataclass
class EquilibriumSolution:
    beliefs: np.ndarray
    cutoffs: np.ndarray
    masses: np.ndarray
    survival: np.ndarray
    exit_prob: np.ndarray
    residual_cutoff: float
    residual_mass: float
    residual_belief: float
    iterations: int
    converged: bool = True
    offpath: np.ndarray = None
    trace: list = field(default_factory=list, repr=False)
    seconds: float = 0.0
    model: Optional[Model] = field(default=None, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return self.beliefs.size

    @property
    def prices(self) -> np.ndarray:
        return self.beliefs

    def max_residual(self) -> float:
        return max(self.residual_cutoff, self.residual_mass, self.residual_belief)


# ---------------------------------------------------------------------------
# one-sweep maps
# ---------------------------------------------------------------------------


def flow_revenue(beliefs, params: ModelParams, state=None):
    """Price times quantity, ``b * (gamma0 + gamma1 * b)``."""
    b = np.asarray(beliefs, dtype=float)
    if state is not None:
        b = b[state]
    return b * (params.demand_gamma0 + params.demand_gamma1 * b)


def flow_revenue_derivative(beliefs, params: ModelParams):
    b = np.asarray(beliefs, dtype=float)
    return params.demand_gamma0 + 2.0 * params.demand_gamma1 * b


def expected_continuation(cutoffs, cost, variant: str = "survival_weighted"):
    """Expected value of a state before the cost draw, given its cutoff."""
    return cost.expected_value(cutoffs, variant)


def bellman_cutoff_update(beliefs, cutoffs, model: Model) -> np.ndarray:
    """One synchronous sweep of the cutoff equations for both types."""
    p = model.params
    flow = flow_revenue(beliefs, p)
    ev = expected_continuation(np.asarray(cutoffs, dtype=float), model.cost, p.payoff_variant)
    out = np.empty((2, model.n_states))
    for t in (LOW, HIGH):
        out[t] = flow + p.beta * (model.kernel[t] @ ev[t])
    return out


def stationary_mass_update(masses, cutoffs, model: Model) -> np.ndarray:
    """One synchronous sweep of the stationarity equations for both types."""
    surv = model.cost.cdf(np.asarray(cutoffs, dtype=float))
    out = np.empty((2, model.n_states))
    for t in (LOW, HIGH):
        out[t] = (surv[t] * masses[t]) @ model.kernel[t] + model.entry[t]
    return out


def beliefs_from_masses(masses, params: ModelParams, offpath: Optional[float] = None) -> np.ndarray:
    """Posterior mean quality in every state.

    States with zero total mass raise :class:`UndefinedBeliefError` unless an
    ``offpath`` value is supplied for them.
    """
    m = np.asarray(masses, dtype=float)
    total = m[LOW] + m[HIGH]
    empty = ~(total > 0)
    if np.any(empty) and offpath is None:
        raise UndefinedBeliefError(np.flatnonzero(empty)[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        share = m[HIGH] / total
    b = params.theta_low + (params.theta_high - params.theta_low) * share
    if np.any(empty):
        b[empty] = offpath
    return np.clip(b, params.theta_low, params.theta_high)


# ---------------------------------------------------------------------------
# block structure of a kernel
# ---------------------------------------------------------------------------


def _topological_blocks(matrix: np.ndarray, max_block: int = 64) -> list[np.ndarray]:
    """Index blocks in an order where every transition stays in or moves to a later block.

    Strongly connected components are sorted topologically and consecutive
    components are merged while the merged block stays below ``max_block``.
    """
    pattern = sparse.csr_matrix(matrix > 0)
    n_comp, labels = connected_components(pattern, directed=True, connection="strong")
    coo = pattern.tocoo()
    src, dst = labels[coo.row], labels[coo.col]
    keep = src != dst
    edges = sparse.csr_matrix((np.ones(keep.sum()), (src[keep], dst[keep])), shape=(n_comp, n_comp))
    edges.sum_duplicates()
    indeg = np.asarray((edges > 0).sum(axis=0)).ravel()
    order = []
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    import heapq

    heapq.heapify(ready)
    edges = edges.tocsr()
    while ready:
        k = heapq.heappop(ready)
        order.append(k)
        for j in edges.indices[edges.indptr[k]:edges.indptr[k + 1]]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, int(j))
    members = [[] for _ in range(n_comp)]
    for i, lab in enumerate(labels):
        members[lab].append(i)
    blocks, current = [], []
    for k in order:
        comp = members[k]
        if current and len(current) + len(comp) > max_block:
            blocks.append(np.array(current))
            current = []
        current.extend(comp)
    if current:
        blocks.append(np.array(current))
    return blocks


def _structure(model: Model) -> list[list[np.ndarray]]:
    cache = getattr(model, "_block_cache", None)
    if cache is None:
        cache = [_topological_blocks(np.asarray(model.kernel[t])) for t in (LOW, HIGH)]
        object.__setattr__(model, "_block_cache", cache)
    return cache


# ---------------------------------------------------------------------------
# exact inner solves
# ---------------------------------------------------------------------------


def _gth_solve(offdiag: np.ndarray, deficit: np.ndarray, inflow: np.ndarray) -> np.ndarray:
    """Solve ``m (D - N) = inflow`` with ``D = diag(row sums of N + deficit)``.

    ``N`` (non-negative, diagonal ignored) and ``deficit`` (non-negative) define
    a substochastic system.  Elimination never subtracts, so the result keeps
    full relative accuracy even when deficits are far below machine epsilon.
    """
    N = np.array(offdiag, dtype=float)
    np.fill_diagonal(N, 0.0)
    s = np.array(deficit, dtype=float)
    n = s.size
    d = np.empty(n)
    for k in range(n):
        d[k] = N[k, k + 1:].sum() + s[k]
        if not d[k] > 0:
            raise NonContractionError("a closed class of states never exits: masses diverge")
        if k + 1 < n:
            f = N[k + 1:, k] / d[k]
            N[k + 1:, k + 1:] += np.outer(f, N[k, k + 1:])
            s[k + 1:] += f * s[k]
            np.fill_diagonal(N[k + 1:, k + 1:], 0.0)
    y = np.empty(n)
    for j in range(n):
        y[j] = (inflow[j] + y[:j] @ N[:j, j]) / d[j]
    m = np.empty(n)
    for k in range(n - 1, -1, -1):
        m[k] = y[k] + m[k + 1:] @ N[k + 1:, k] / d[k]
    return m


def solve_masses(cutoffs, model: Model) -> np.ndarray:
    """Stationary masses for given cutoffs (exact linear solve for both types)."""
    cutoffs = np.asarray(cutoffs, dtype=float)
    surv = model.cost.cdf(cutoffs)
    exit_ = model.cost.sf(cutoffs)
    out = np.zeros((2, model.n_states))
    for t, blocks in zip((LOW, HIGH), _structure(model)):
        P = np.asarray(model.kernel[t])
        A = surv[t][:, None] * P
        m = out[t]
        for B in blocks:
            inflow = model.entry[t, B] + m @ A[:, B]
            if not np.any(inflow > 0):
                continue
            outside = np.ones(model.n_states, dtype=bool)
            outside[B] = False
            leak = surv[t, B] * (P[np.ix_(B, outside)].sum(axis=1))
            deficit = exit_[t, B] + leak
            if B.size == 1:
                if not deficit[0] > 0:
                    raise NonContractionError(f"state {B[0]} never exits: masses diverge")
                m[B] = inflow / deficit
            else:
                m[B] = _gth_solve(A[np.ix_(B, B)], deficit, inflow)
        if not np.all(np.isfinite(m)):
            raise NonContractionError("stationary masses overflow")
    return out


def solve_cutoffs(beliefs, model: Model, start=None, tol: float = 1e-13, max_newton: int = 200) -> np.ndarray:
    """Exact fixed point of the cutoff equations for fixed beliefs.

    Blocks are processed downstream first; within a block Newton's method is
    applied to the concave map ``c - flow - beta P EV(c)`` and converges from
    any start.
    """
    p = model.params
    cost, variant = model.cost, p.payoff_variant
    flow = flow_revenue(beliefs, p)
    n = model.n_states
    out = np.empty((2, n))
    if start is None:
        start = np.broadcast_to(flow, (2, n))
    for t, blocks in zip((LOW, HIGH), _structure(model)):
        P = np.asarray(model.kernel[t])
        c = np.array(start[t], dtype=float)
        ev = np.zeros(n)
        for B in reversed(blocks):
            base = flow[B] + p.beta * (P[B] @ ev)
            PBB = P[np.ix_(B, B)]
            cB = c[B]
            for _ in range(max_newton):
                evB = cost.expected_value(cB, variant)
                resid = cB - base - p.beta * (PBB @ evB)
                J = np.eye(B.size) - p.beta * PBB * cost.expected_value_derivative(cB, variant)[None, :]
                step = np.linalg.solve(J, resid)
                cB = cB - step
                if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(cB))):
                    break
            else:
                raise NonConvergenceError("Newton iteration for cutoffs did not converge")
            c[B] = cB
            ev[B] = cost.expected_value(cB, variant)
        out[t] = c
    return out


# ---------------------------------------------------------------------------
# outer belief loop
# ---------------------------------------------------------------------------


def _offpath_value(model: Model, options: SolverOptions) -> float:
    p = model.params
    if options.offpath_belief == "low":
        return p.theta_low
    tot = model.entry.sum(axis=1)
    share = tot[HIGH] / tot.sum()
    return p.theta_low + (p.theta_high - p.theta_low) * share


def _relative_mass_residual(masses, update) -> float:
    diff = np.abs(update - masses)
    scale = np.maximum(np.abs(masses), np.abs(update))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, diff / scale, 0.0)
    return float(rel.max())


def _mass_upper_bound(model: Model, cutoffs) -> float:
    c_max = float(np.max(cutoffs))
    x_min = float(model.cost.sf(c_max))
    if x_min <= 0:
        return np.inf
    return 2 * model.n_states * float(model.entry.max()) / x_min


def solve_equilibrium(model: Model, options: Optional[SolverOptions] = None,
                      initial: Optional[EquilibriumSolution] = None) -> EquilibriumSolution:
    """Compute a stationary equilibrium.

    Parameters
    ----------
    model : Model
        Parameters, state space, kernel, cost distribution and entry measure.
    options : SolverOptions, optional
        Tolerance, iteration cap, damping and off-path convention.
    initial : EquilibriumSolution, optional
        Warm start (beliefs and cutoffs are reused).

    Returns
    -------
    EquilibriumSolution

    Raises
    ------
    NonConvergenceError
        If the belief residual is still above ``tol`` after ``max_iter`` updates.
    NonContractionError
        If some closed class of states has zero exit probability.
    """
    options = options or SolverOptions()
    p = model.params
    t0 = time.perf_counter()
    if options.check_assumptions:
        for rep in (validate_assumption_a1(model.kernel), validate_assumption_a2(model.cost, p)):
            if not rep.ok:
                raise SolverError(f"assumption check failed: {rep.message}")
    off = _offpath_value(model, options)
    lo, hi = p.theta_low, p.theta_high
    if initial is not None:
        theta = np.array(initial.beliefs, dtype=float)
        cut = np.array(initial.cutoffs, dtype=float)
    else:
        tot = model.entry.sum(axis=1)
        theta = np.full(model.n_states, lo + (hi - lo) * tot[HIGH] / tot.sum())
        cut = None
    mix = 1.0 - options.damping
    hist_x, hist_f = [], []
    trace = []
    best = (np.inf, theta, cut)
    w = options.stall_window
    for it in range(1, options.max_iter + 1):
        cut = solve_cutoffs(theta, model, start=cut)
        mass = solve_masses(cut, model)
        new = beliefs_from_masses(mass, p, offpath=off)
        f = new - theta
        r = float(np.max(np.abs(f))) if f.size else 0.0
        trace.append(r)
        if r <= options.tol:
            break
        if r < best[0]:
            best = (r, theta.copy(), cut.copy())
        if options.root_fallback and it >= 2 * w and min(trace[-w:]) > 0.1 * min(trace[:-w]):
            theta, cut, mass = _root_beliefs(model, best[1], best[2], off, options, trace)
            break
        theta = _next_beliefs(theta, f, hist_x, hist_f, mix, options.anderson, lo, hi, trace)
    else:
        if options.root_fallback and best[0] < np.inf:
            theta, cut, mass = _root_beliefs(model, best[1], best[2], off, options, trace)
        else:
            raise NonConvergenceError(
                f"belief iteration did not converge in {options.max_iter} iterations (residual {trace[-1]:.3g})",
                trace)
    bound = _mass_upper_bound(model, cut)
    if np.max(mass) > bound:
        raise NonContractionError(f"masses exceed the theoretical bound {bound:.3g}")
    sol = _finish(model, theta, cut, mass, it, trace, off)
    sol.seconds = time.perf_counter() - t0
    return sol


def _root_beliefs(model, theta, cut, off, options, trace):
    """Solve the belief residual with a hybrid Powell method from the best iterate."""
    p = model.params
    state = {"cut": cut}

    def resid(x):
        c = solve_cutoffs(x, model, start=state["cut"])
        state["cut"] = c
        return beliefs_from_masses(solve_masses(c, model), p, offpath=off) - x

    res = optimize.root(resid, theta, method="hybr", options={"xtol": 1e-14})
    x = np.clip(res.x, p.theta_low, p.theta_high)
    # one plain sweep so the reported residual comes from the maps themselves
    cut = solve_cutoffs(x, model, start=state["cut"])
    mass = solve_masses(cut, model)
    r = float(np.max(np.abs(beliefs_from_masses(mass, p, offpath=off) - x))) if x.size else 0.0
    trace.append(r)
    if r <= options.tol:
        return x, cut, mass
    raise NonConvergenceError(
        f"belief iteration stalled and the root solve ended at residual {trace[-1]:.3g} ({res.message})", trace)


def _next_beliefs(theta, f, hist_x, hist_f, mix, depth, lo, hi, trace):
    hist_x.append(theta.copy())
    hist_f.append(f.copy())
    if len(trace) >= 2 and trace[-1] > 2.0 * trace[-2]:
        # acceleration went astray: restart the memory
        del hist_x[:-1], hist_f[:-1]
    if len(hist_x) > depth + 1:
        del hist_x[0], hist_f[0]
    step = theta + mix * f
    if depth > 0 and len(hist_x) >= 2:
        dX = np.diff(np.array(hist_x), axis=0).T
        dF = np.diff(np.array(hist_f), axis=0).T
        gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
        step = step - (dX + mix * dF) @ gamma
    return np.clip(step, lo, hi)


def _finish(model, theta, cut, mass, iterations, trace, off):
    p = model.params
    res_c = float(np.max(np.abs(bellman_cutoff_update(theta, cut, model) - cut)))
    res_m = _relative_mass_residual(mass, stationary_mass_update(mass, cut, model))
    res_b = float(np.max(np.abs(beliefs_from_masses(mass, p, offpath=off) - theta)))
    offpath = ~((mass[LOW] + mass[HIGH]) > 0)
    return EquilibriumSolution(
        beliefs=theta, cutoffs=cut, masses=mass,
        survival=model.cost.cdf(cut), exit_prob=model.cost.sf(cut),
        residual_cutoff=res_c, residual_mass=res_m, residual_belief=res_b,
        iterations=iterations, converged=True, offpath=offpath, trace=trace, model=model)


# ---------------------------------------------------------------------------
# four-state appendix model
# ---------------------------------------------------------------------------

# States of the appendix example in the order L1, H1, L2, H2.
FOUR_STATE_LABELS = ("L1", "H1", "L2", "H2")


def _four_state_rates(gamma, rho, t):
    g_own = gamma if t == 0 else 1.0 - gamma       # gamma_theta
    g_other = 1.0 - gamma if t == 0 else gamma     # gamma_{1-theta}
    up = (1.0 - g_own) / 2.0      # L1 -> H1
    down = (1.0 - g_other) / 2.0  # H1 -> L1
    return up, down


def four_state_model(gamma: float, rho: float, beta: float, entry=(0.5, 0.5)) -> Model:
    """The two-rating, two-sales-level example as a general :class:`Model`.

    Qualities are 0 and 1, costs are uniform on [0, 1] and the main-text payoff
    is used.  States follow the rating-major index, i.e. (L,1), (L,2), (H,1),
    (H,2); entrants start at (H,1).
    """
    space = StateSpace(RatingGrid(np.array([0.0, 1.0])), SalesGrid((0.0, 1.0)))
    L1, L2, H1, H2 = 0, 1, 2, 3
    mats = np.zeros((2, 4, 4))
    for t in (0, 1):
        up, down = _four_state_rates(gamma, rho, t)
        M = mats[t]
        M[L1, H1], M[L1, L2] = up, rho
        M[H1, L1], M[H1, H2] = down, rho
        M[L2, H2] = up / 2.0
        M[H2, L2] = down / 2.0
        M[np.arange(4), np.arange(4)] = 1.0 - M.sum(axis=1)
    params = ModelParams(theta_low=0.0, theta_high=1.0, alpha=0.5, beta=beta,
                         payoff_variant="main_text", sigma_p=0.1)
    ent = np.zeros((2, 4))
    ent[LOW, H1], ent[HIGH, H1] = entry
    return Model(params, space, TransitionKernel(mats), UniformCost(0.0, 1.0), ent)


def _four_state_cutoffs(b, gamma, rho, beta):
    """Cutoff equations of the example, solved for fixed prices ``b`` (L1, H1, L2, H2)."""
    bL1, bH1, bL2, bH2 = b
    out = np.empty((2, 4))
    h = beta / 2.0
    for t in (0, 1):
        up, down = _four_state_rates(gamma, rho, t)
        # unknowns ordered L1, H1, L2, H2; each row is c - (beta/2) * (...) = price
        A = np.array([
            [1 - h * (1 - rho - up), -h * up, -h * rho, 0.0],
            [-h * down, 1 - h * (1 - rho - down), 0.0, -h * rho],
            [0.0, 0.0, 1 - h * (1 - up / 2), -h * up / 2],
            [0.0, 0.0, -h * down / 2, 1 - h * (1 - down / 2)],
        ])
        out[t] = np.linalg.solve(A, [bL1, bH1, bL2, bH2])
    return out


def _four_state_masses(c, gamma, rho, entry):
    """Stationarity equations of the example for given cutoffs (uniform costs, F(c) = c)."""
    out = np.empty((2, 4))
    for t in (0, 1):
        up, down = _four_state_rates(gamma, rho, t)
        cL1, cH1, cL2, cH2 = c[t]
        # mass exiting each state equals mass entering it
        A = np.array([
            [(1 - cL1) + cL1 * (up + rho), -cH1 * down, 0.0, 0.0],
            [-cL1 * up, (1 - cH1) + cH1 * (down + rho), 0.0, 0.0],
            [-cL1 * rho, 0.0, (1 - cL2) + cL2 * up / 2, -cH2 * down / 2],
            [0.0, -cH1 * rho, -cL2 * up / 2, (1 - cH2) + cH2 * down / 2],
        ])
        out[t] = np.linalg.solve(A, [0.0, entry[t], 0.0, 0.0])
    return out


def solve_four_state_closed_form(gamma: float, rho: float, beta: float, entry=(0.5, 0.5),
                                 tol: float = 1e-13) -> EquilibriumSolution:
    """Solve the appendix four-state example directly from its eight-plus-eight equations.

    For fixed prices both equation groups are linear, so the system reduces to
    four equations in the prices, solved with Newton's method from several
    starting points.  The returned arrays use the rating-major state order of
    :func:`four_state_model`.

    Raises
    ------
    InfeasibleError
        If no root has all cutoffs in (0, 1) and positive masses.
    """
    def prices(b):
        c = _four_state_cutoffs(b, gamma, rho, beta)
        m = _four_state_masses(c, gamma, rho, entry)
        tot = m[0] + m[1]
        return c, m, m[1] / tot

    def resid(b):
        return prices(b)[2] - b

    starts = [np.full(4, 0.5), np.array([0.3, 0.7, 0.3, 0.7]), np.array([0.2, 0.6, 0.4, 0.8]),
              np.full(4, 0.9), np.full(4, 0.1)]
    best = None
    for b0 in starts:
        with np.errstate(all="ignore"):
            try:
                sol = optimize.root(resid, b0, method="hybr", tol=tol)
            except np.linalg.LinAlgError:
                continue
        if not np.all(np.isfinite(sol.x)):
            continue
        b = sol.x
        err = np.max(np.abs(resid(b)))
        if err > 1e-11:
            continue
        c, m, _ = prices(b)
        if np.all((c > 0) & (c < 1)) and np.all(m > 0):
            best = (b, c, m, err)
            break
    if best is None:
        raise InfeasibleError(
            f"no equilibrium with cutoffs in (0, 1) for gamma={gamma}, rho={rho}, beta={beta}")
    b, c, m, err = best
    perm = [0, 2, 1, 3]  # L1, H1, L2, H2 -> (L,1), (L,2), (H,1), (H,2)
    return EquilibriumSolution(
        beliefs=b[perm], cutoffs=c[:, perm], masses=m[:, perm],
        survival=c[:, perm].copy(), exit_prob=1.0 - c[:, perm],
        residual_cutoff=0.0, residual_mass=0.0, residual_belief=float(err),
        iterations=0, converged=True, offpath=np.zeros(4, dtype=bool))
