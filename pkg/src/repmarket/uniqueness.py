"""Numerical verification of equilibrium uniqueness at a computed solution.

The stacked residual map is ``g(c, mu) = (g1, g2)`` with

* ``g1 = flow(belief(mu)) + beta * P EV(c) - c`` (cutoff conditions),
* ``g2 = P' (F(c) * mu) + entry - mu`` (stationarity conditions),

with cutoffs and masses of both types stacked as ``[low, high]``.  Uniqueness
follows when ``-Dg`` is a P-matrix, which the diagonal blocks secure through
weighted diagonal dominance as long as the coupling blocks are small.

At realistic discount factors exit probabilities can be many orders of
magnitude below machine epsilon, so the dominance margins and principal
minors of the mass block cannot be read off the floating point matrix.  The
verifier therefore keeps exit probabilities as separate "deficits" and
evaluates minors of the mass block by a subtraction-free elimination.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .equilibrium import (
    EquilibriumSolution,
    SolverError,
    SolverOptions,
    flow_revenue,
    flow_revenue_derivative,
    solve_equilibrium,
)
from .model import HIGH, LOW, Model

__all__ = [
    "StaleSolutionError",
    "JacobianBundle",
    "stacked_residual",
    "assemble_jacobian",
    "finite_difference_jacobian",
    "PMatrixResult",
    "is_p_matrix",
    "is_diagonally_dominant",
    "dominance_margins",
    "verify_uniqueness_at",
    "estimate_beta_bar",
]

EXACT_MINOR_LIMIT = 12


class StaleSolutionError(ValueError):
    """The solution passed to the verifier is not a converged equilibrium."""


def _block_diag(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n + m, a.shape[1] + b.shape[1]))
    out[:n, :a.shape[1]] = a
    out[n:, a.shape[1]:] = b
    return out


@dataclass
class JacobianBundle:
    """Blocks of ``Dg`` at an equilibrium.

    ``dg1 = dg1/dc``, ``dg2 = dg2/dmu``, ``off12 = dg1/dmu`` and
    ``off21 = dg2/dc``, each of size ``2n x 2n``.  ``exit_diag`` holds the exit
    probabilities ``1 - F(c)`` evaluated directly from the upper tail, which
    keeps the mass-block diagonal accurate when ``F(c)`` rounds to one.
    """

    dg1: np.ndarray
    dg2: np.ndarray
    off12: np.ndarray
    off21: np.ndarray
    s_diag: np.ndarray
    r_diag: np.ndarray
    exit_diag: np.ndarray
    beta: float
    kernel: np.ndarray = field(repr=False)  # (2, n, n)

    @property
    def n(self) -> int:
        return self.dg1.shape[0]

    def dense(self) -> np.ndarray:
        return np.block([[self.dg1, self.off12], [self.off21, self.dg2]])

    def neg_dg2_diagonal(self) -> np.ndarray:
        """Accurate diagonal of ``-dg2``: ``1 - F P_jj = exit + F (1 - P_jj)``."""
        stay_out = np.concatenate([_offdiag_row_sums(self.kernel[t]) for t in (LOW, HIGH)])
        return self.exit_diag + self.r_diag * stay_out

    def neg_dense(self) -> np.ndarray:
        """``-Dg`` with the accurate mass-block diagonal."""
        m = -self.dense()
        k = self.n
        idx = np.arange(k, 2 * k)
        m[idx, idx] = self.neg_dg2_diagonal()
        return m


def _offdiag_row_sums(P):
    Q = np.array(P, dtype=float)
    np.fill_diagonal(Q, 0.0)
    return Q.sum(axis=1)


def _check_solution(solution: EquilibriumSolution, model: Model, tol: float = 1e-6):
    if not solution.converged:
        raise StaleSolutionError("solution did not converge")
    if solution.cutoffs.shape != (2, model.n_states):
        raise StaleSolutionError("solution does not match the model's state space")
    if solution.max_residual() > tol:
        raise StaleSolutionError(f"solution residual {solution.max_residual():.3g} exceeds {tol}")


def stacked_residual(x, model: Model, offpath=None) -> np.ndarray:
    """Evaluate ``g`` at ``x = [c_low, c_high, mu_low, mu_high]``."""
    p = model.params
    n = model.n_states
    x = np.asarray(x, dtype=float)
    c = x[:2 * n].reshape(2, n)
    mu = x[2 * n:].reshape(2, n)
    tot = mu[LOW] + mu[HIGH]
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(tot > 0, mu[HIGH] / tot, 0.0)
    b = p.theta_low + (p.theta_high - p.theta_low) * share
    if offpath is not None:
        b = np.where(tot > 0, b, offpath)
    flow = flow_revenue(b, p)
    ev = model.cost.expected_value(c, p.payoff_variant)
    surv = model.cost.cdf(c)
    g1 = np.empty((2, n))
    g2 = np.empty((2, n))
    for t in (LOW, HIGH):
        P = model.kernel[t]
        g1[t] = flow + p.beta * (P @ ev[t]) - c[t]
        g2[t] = (surv[t] * mu[t]) @ P + model.entry[t] - mu[t]
    return np.concatenate([g1.ravel(), g2.ravel()])


def assemble_jacobian(solution: EquilibriumSolution, model: Model, check: bool = True) -> JacobianBundle:
    """Analytic Jacobian blocks of ``g`` at a solution."""
    if check:
        _check_solution(solution, model)
    p = model.params
    n = model.n_states
    c, mu = solution.cutoffs, solution.masses
    cost = model.cost
    s = cost.expected_value_derivative(c, p.payoff_variant)
    r = cost.cdf(c)
    x = cost.sf(c)
    dens = cost.pdf(c)
    P = np.asarray(model.kernel.matrices)
    dg1 = _block_diag(p.beta * P[LOW] * s[LOW][None, :] - np.eye(n),
                      p.beta * P[HIGH] * s[HIGH][None, :] - np.eye(n))
    dg2 = _block_diag(P[LOW].T * r[LOW][None, :] - np.eye(n),
                      P[HIGH].T * r[HIGH][None, :] - np.eye(n))
    off21 = _block_diag(P[LOW].T * (dens[LOW] * mu[LOW])[None, :],
                        P[HIGH].T * (dens[HIGH] * mu[HIGH])[None, :])
    tot = mu[LOW] + mu[HIGH]
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(tot > 0, 1.0 / tot, 0.0)
    # written as share / total so that huge masses do not overflow
    scale = flow_revenue_derivative(solution.beliefs, p) * (p.theta_high - p.theta_low)
    d_low = -scale * (mu[HIGH] * inv) * inv   # d belief / d mu_low
    d_high = scale * (mu[LOW] * inv) * inv    # d belief / d mu_high
    off12 = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    for t in (LOW, HIGH):
        rows = t * n + idx
        off12[rows, idx] = d_low
        off12[rows, n + idx] = d_high
    bundle = JacobianBundle(dg1, dg2, off12, off21, s.ravel(), r.ravel(), x.ravel(), p.beta, P)
    # sign correction: raw diagonal of dg1 must be negative
    assert np.all(np.diag(dg1) < 0), "dg1 has a non-negative diagonal entry"
    return bundle


def finite_difference_jacobian(solution: EquilibriumSolution, model: Model,
                               step: float = float(np.finfo(float).eps ** (1 / 3))) -> np.ndarray:
    """Central-difference Jacobian of :func:`stacked_residual` (relative step).

    The default step balances truncation against rounding for central
    differences; mass rows can be large, so much smaller steps amplify noise.
    """
    x0 = np.concatenate([solution.cutoffs.ravel(), solution.masses.ravel()])
    cols = []
    for i in range(x0.size):
        h = step * max(1.0, abs(x0[i]))
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((stacked_residual(xp, model) - stacked_residual(xm, model)) / (2 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# matrix tests
# ---------------------------------------------------------------------------


@dataclass
class PMatrixResult:
    is_p: bool
    sampled: bool
    n_checked: int
    failing_subset: Optional[list] = None

    def __bool__(self):
        return self.is_p

    def to_dict(self):
        return {"is_p": self.is_p, "sampled": self.sampled, "n_checked": self.n_checked,
                "failing_subset": self.failing_subset}


def _leading_minor_signs(m):
    """Signs of all leading principal minors via unpivoted elimination."""
    a = np.array(m, dtype=float)
    n = a.shape[0]
    signs = np.empty(n)
    det_sign = 1.0
    for k in range(n):
        piv = a[k, k]
        if piv == 0 or not np.isfinite(piv):
            signs[k:] = 0.0
            return signs
        det_sign *= np.sign(piv)
        signs[k] = det_sign
        if k + 1 < n:
            a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k] / piv, a[k, k + 1:])
    return signs


def is_p_matrix(m, n_samples: int = 2000, seed: int = 0) -> PMatrixResult:
    """Whether every principal minor of ``m`` is positive.

    All ``2^n - 1`` minors are expanded for ``n <= 12``.  Larger matrices get the
    leading minors plus ``n_samples`` random principal submatrices, and the
    result is flagged as sampled.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    n = m.shape[0]
    if n <= EXACT_MINOR_LIMIT:
        count = 0
        for k in range(1, n + 1):
            for subset in itertools.combinations(range(n), k):
                count += 1
                if not np.linalg.det(m[np.ix_(subset, subset)]) > 0:
                    return PMatrixResult(False, False, count, list(subset))
        return PMatrixResult(True, False, count)
    signs = _leading_minor_signs(m)
    bad = np.flatnonzero(~(signs > 0))
    if bad.size:
        return PMatrixResult(False, True, int(bad[0]) + 1, list(range(int(bad[0]) + 1)))
    rng = np.random.default_rng(seed)
    for i in range(n_samples):
        k = int(rng.integers(1, n + 1))
        subset = np.sort(rng.choice(n, size=k, replace=False))
        sign, _ = np.linalg.slogdet(m[np.ix_(subset, subset)])
        if not sign > 0:
            return PMatrixResult(False, True, n + i + 1, subset.tolist())
    return PMatrixResult(True, True, n + n_samples)


def dominance_margins(m, weights) -> np.ndarray:
    """``d_j |a_jj| - sum_{i != j} d_i |a_ji|`` for every row ``j``."""
    m = np.asarray(m, dtype=float)
    d = np.asarray(weights, dtype=float)
    if d.shape != (m.shape[0],):
        raise ValueError("weights must match the matrix size")
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise ValueError("weights must be positive and finite")
    a = np.abs(m)
    diag = np.diag(a) * d
    off = a @ d - diag
    return diag - off


def is_diagonally_dominant(m, weights) -> bool:
    """Weighted strict diagonal dominance, ``d_j |a_jj| > sum_{i != j} d_i |a_ji|`` for all ``j``."""
    return bool(np.all(dominance_margins(m, weights) > 0))


# ---------------------------------------------------------------------------
# structured minors of -Dg
# ---------------------------------------------------------------------------


def _deficit_determinant(N, s):
    """Sign and log|det| of ``diag(rowsum(N) + s) - N`` (diagonal of ``N`` ignored).

    Also returns the elimination pivots, whose running products are the
    leading principal minors.  Subtraction-free when ``N >= 0`` and ``s >= 0``.
    """
    N = np.array(N, dtype=float)
    np.fill_diagonal(N, 0.0)
    s = np.array(s, dtype=float)
    n = s.size
    piv = np.empty(n)
    for k in range(n):
        piv[k] = N[k, k + 1:].sum() + s[k]
        if piv[k] == 0:
            piv[k + 1:] = np.nan
            return piv
        if k + 1 < n:
            f = N[k + 1:, k] / piv[k]
            N[k + 1:, k + 1:] += np.outer(f, N[k, k + 1:])
            s[k + 1:] += f * s[k]
            np.fill_diagonal(N[k + 1:, k + 1:], 0.0)
    return piv


def _cutoff_block_pieces(bundle: JacobianBundle, idx):
    """Off-diagonal part and row deficits of ``-dg1`` restricted to ``idx``."""
    A = -bundle.dg1[np.ix_(idx, idx)]
    N = -A.copy()
    np.fill_diagonal(N, 0.0)
    s = np.diag(A) - N.sum(axis=1)
    return N, s


def _mass_block_pieces(bundle: JacobianBundle, idx, E):
    """Transpose form of ``-dg2[idx, idx] - E``: off-diagonals and accurate row deficits.

    Column ``j`` of ``-dg2`` sums to ``exit_j + F_j * (transition mass leaving idx)``.
    """
    k = bundle.n // 2
    P = bundle.kernel
    idx = np.asarray(idx)
    types = idx // k
    states = idx % k
    M = -bundle.dg2[np.ix_(idx, idx)] - E
    N = -M.T.copy()
    np.fill_diagonal(N, 0.0)
    leak = np.empty(idx.size)
    for t in (LOW, HIGH):
        sel = types == t
        if not np.any(sel):
            continue
        st = states[sel]
        outside = np.where(np.isin(np.arange(k), st), 0.0, 1.0)
        leak[sel] = P[t][st] @ outside
    s = bundle.exit_diag[idx] + bundle.r_diag[idx] * leak - E.sum(axis=0)
    return N, s


def _structured_minor_sign(bundle: JacobianBundle, neg_off12, neg_off21, subset):
    """Sign of the principal minor of ``-Dg`` on ``subset`` (indices into 0..4n/2*2)."""
    k2 = bundle.n
    subset = np.asarray(subset)
    s1 = subset[subset < k2]
    s2 = subset[subset >= k2] - k2
    sign = 1.0
    if s1.size:
        N, s = _cutoff_block_pieces(bundle, s1)
        piv = _deficit_determinant(N, s)
        if not np.all(piv > 0):
            return float(np.sign(np.prod(np.sign(np.nan_to_num(piv)))))
    if s2.size:
        if s1.size:
            A = -bundle.dg1[np.ix_(s1, s1)]
            B = neg_off12[np.ix_(s1, s2)]
            C = neg_off21[np.ix_(s2, s1)]
            E = C @ np.linalg.solve(A, B)
        else:
            E = np.zeros((s2.size, s2.size))
        N, s = _mass_block_pieces(bundle, s2, E)
        piv = _deficit_determinant(N, s)
        sign *= float(np.prod(np.sign(np.nan_to_num(piv))))
    return sign


def structured_p_matrix_check(bundle: JacobianBundle, n_samples: int = 64, seed: int = 0) -> PMatrixResult:
    """P-matrix test of ``-Dg`` using deficit-aware determinants.

    Checks every diagonal entry, every leading principal minor (cutoffs first,
    then masses), and ``n_samples`` random principal submatrices.
    """
    k2 = bundle.n
    neg_off12 = -bundle.off12
    neg_off21 = -bundle.off21
    diag = np.concatenate([-np.diag(bundle.dg1), bundle.neg_dg2_diagonal()])
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        return PMatrixResult(False, True, int(bad[0]) + 1, [int(bad[0])])
    checked = diag.size
    # leading minors: cutoff block, then Schur complement of the mass block
    N, s = _cutoff_block_pieces(bundle, np.arange(k2))
    piv = _deficit_determinant(N, s)
    if not np.all(piv > 0):
        j = int(np.flatnonzero(~(piv > 0))[0])
        return PMatrixResult(False, True, checked + j + 1, list(range(j + 1)))
    A = -bundle.dg1
    E = neg_off21 @ np.linalg.solve(A, neg_off12)
    N, s = _mass_block_pieces(bundle, np.arange(k2), E)
    piv = _deficit_determinant(N, s)
    run = np.cumprod(np.sign(np.nan_to_num(piv)))
    if not np.all(run > 0):
        j = int(np.flatnonzero(~(run > 0))[0])
        return PMatrixResult(False, True, checked + k2 + j + 1, list(range(k2 + j + 1)))
    checked += 2 * k2
    rng = np.random.default_rng(seed)
    total = 2 * k2
    for i in range(n_samples):
        size = int(np.exp(rng.uniform(0.0, np.log(total))))
        subset = np.sort(rng.choice(total, size=max(size, 1), replace=False))
        if not _structured_minor_sign(bundle, neg_off12, neg_off21, subset) > 0:
            return PMatrixResult(False, True, checked + i + 1, subset.tolist())
    return PMatrixResult(True, True, checked + n_samples)


# ---------------------------------------------------------------------------
# verifier
# ---------------------------------------------------------------------------


def _dominance_report(X, weights, reduction_margin):
    """Dominance of ``X - I`` by the matrix test and by a cancellation-free reduction.

    The rounding error of a matrix margin is bounded by a multiple of epsilon
    times the magnitudes of the terms that enter it, including the identity
    subtracted on the diagonal.  Rows whose margin is below that resolution
    take the verdict of the reduction.
    """
    n = X.shape[0]
    matrix = X - np.eye(n)
    margins = dominance_margins(matrix, weights)
    resolution = 8 * n * np.finfo(float).eps * (np.abs(X) @ weights + weights)
    resolvable = np.abs(margins) > resolution
    row_ok = np.where(resolvable, margins > 0, reduction_margin > 0)
    return {
        "dominant": bool(np.all(row_ok)),
        "matrix_test": bool(np.all(margins > 0)),
        "scalar_reduction": bool(np.all(reduction_margin > 0)),
        "min_matrix_margin": float(margins.min()),
        "min_reduction_margin": float(np.min(reduction_margin)),
        "rows_below_resolution": int((~resolvable).sum()),
        "consistent": bool(np.all(~resolvable | ((margins > 0) == (reduction_margin > 0)))),
    }


def verify_uniqueness_at(solution: EquilibriumSolution, model: Model, n_samples: int = 64,
                         seed: int = 0) -> dict:
    """Check the uniqueness conditions at a converged equilibrium.

    Returns a JSON-ready report with the weighted dominance of ``dg1`` (weights
    ``1/s``) and of the transposed mass block (weights ``1/F``), the sup-norms of
    the coupling blocks, the P-matrix verdict on ``-Dg`` and an overall verdict.
    """
    bundle = assemble_jacobian(solution, model)
    k2 = bundle.n
    n = k2 // 2
    beta = bundle.beta
    P = bundle.kernel
    tiny = np.finfo(float).tiny
    s = np.maximum(bundle.s_diag, tiny)
    # dg1 with weights 1/s: margin_j = 1/s_j - beta * sum_i P_ji
    rowsum = np.concatenate([P[t].sum(axis=1) for t in (LOW, HIGH)])
    red1 = 1.0 / s - beta * rowsum
    dg1_rep = _dominance_report(bundle.dg1 + np.eye(k2), 1.0 / s, red1)
    dg1_rep["weights"] = "1/s"
    # transposed mass block in source-row orientation, P R - I, weights 1/F:
    # margin_j = 1/F_j - sum_i P_ji = exit_j / F_j for stochastic rows
    F = np.maximum(bundle.r_diag, tiny)
    pr = _block_diag(P[LOW] * bundle.r_diag[:n][None, :], P[HIGH] * bundle.r_diag[n:][None, :])
    red2 = bundle.exit_diag / F
    dg2_rep = _dominance_report(pr, 1.0 / F, red2)
    dg2_rep["weights"] = "1/F"
    pm = (is_p_matrix(bundle.neg_dense()) if 2 * k2 <= EXACT_MINOR_LIMIT
          else structured_p_matrix_check(bundle, n_samples=n_samples, seed=seed))
    report = {
        "n_states": n,
        "beta": beta,
        "dg1_dominance": dg1_rep,
        "dg2_transpose_dominance": dg2_rep,
        "off12_supnorm": float(np.max(np.abs(bundle.off12).sum(axis=1))),
        "off21_supnorm": float(np.max(np.abs(bundle.off21).sum(axis=1))),
        "p_matrix": pm.to_dict(),
    }
    report["pass"] = bool(dg1_rep["dominant"] and dg2_rep["dominant"] and pm.is_p)
    return report


@dataclass
class BetaBarResult:
    beta_bar: Optional[float]
    verdicts: list
    monotone: bool
    skipped: list

    def to_dict(self):
        return {"beta_bar": self.beta_bar, "verdicts": self.verdicts, "monotone": self.monotone,
                "skipped": self.skipped}


def estimate_beta_bar(model: Model, beta_grid: Sequence[float], options: Optional[SolverOptions] = None,
                      n_samples: int = 64) -> BetaBarResult:
    """Smallest grid discount factor from which the verifier passes at every larger grid point.

    Grid points where the equilibrium cannot be computed are skipped and
    listed; a pass followed by a failure is reported as a monotonicity
    violation.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] <= 0 or grid[-1] >= 1:
        raise ValueError("beta grid must be increasing inside (0, 1)")
    verdicts, skipped = [], []
    for b in grid:
        m = _with_beta(model, float(b))
        try:
            sol = solve_equilibrium(m, options)
            ok = verify_uniqueness_at(sol, m, n_samples=n_samples)["pass"]
            verdicts.append({"beta": float(b), "pass": bool(ok)})
        except SolverError as exc:
            skipped.append({"beta": float(b), "error": str(exc)})
    passes = [v["pass"] for v in verdicts]
    monotone = all(not (a and not b) for a, b in zip(passes, passes[1:]))
    beta_bar = None
    for i in range(len(verdicts)):
        if all(passes[i:]):
            beta_bar = verdicts[i]["beta"]
            break
    return BetaBarResult(beta_bar, verdicts, monotone, skipped)


def _with_beta(model: Model, beta: float) -> Model:
    params = model.params.replace(beta=beta)
    return dataclasses.replace(model, params=params)
