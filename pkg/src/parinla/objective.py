"""Negative log posterior of the hyperparameters via the Laplace route.

Each evaluation conditions the latent field on the data at fixed theta:
find the conditional mode (one linear solve for a gaussian likelihood, a
damped Newton iteration otherwise), then combine the hyper prior, the
latent prior at the mode, the likelihood at the mode and the Gaussian
approximation's normalizer.  Both sparsity patterns (prior and
conditional) are analyzed exactly once and reused for every theta.
"""

from __future__ import annotations

import math
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import kernels
from .cholesky import CholeskyFactor, SymbolicFactor, analyze, factorize, solve
from .errors import DimensionMismatch, InnerDivergence
from .model import (
    HyperParams,
    ModelSpec,
    assemble_prior_precision,
    build_design,
    likelihood_terms,
    log_prior_hyper,
)
from .runtime import SERIAL, ThreadBudget
from .sparse import SparseSymMatrix

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianApprox:
    """Gaussian match to the conditional posterior of x at one theta."""

    theta: HyperParams
    mode: np.ndarray
    cond_precision: SparseSymMatrix
    factor: CholeskyFactor
    iterations: int
    # conditional log density at the start of each inner iteration;
    # non-decreasing by the step-halving rule
    inner_trace: list = field(default_factory=list)


@dataclass
class ObjectiveValue:
    """One evaluation of f(theta), with its additive pieces.

    f = -(log_prior_hyper + log_prior_latent + log_likelihood
          - log_gaussian_approx), every term with its full constants.
    """

    f: float
    log_prior_hyper: float
    log_prior_latent: float
    log_likelihood: float
    log_gaussian_approx: float
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "f": self.f,
            "log_prior_hyper": self.log_prior_hyper,
            "log_prior_latent": self.log_prior_latent,
            "log_likelihood": self.log_likelihood,
            "log_gaussian_approx": self.log_gaussian_approx,
            "timings": dict(self.timings),
        }


@njit(cache=True)
def _pair_contributions(indptr, indices, data):
    """All unordered index pairs per design row, as flat arrays."""
    m = indptr.shape[0] - 1
    counts = np.diff(indptr)
    total = int(np.sum(counts * (counts + 1) // 2))
    rows = np.empty(total, np.int64)
    cols = np.empty(total, np.int64)
    obs = np.empty(total, np.int64)
    coef = np.empty(total, np.float64)
    t = 0
    for i in range(m):
        lo, hi = indptr[i], indptr[i + 1]
        for a in range(lo, hi):
            ja, va = indices[a], data[a]
            for b in range(a, hi):
                jb, vb = indices[b], data[b]
                rows[t] = max(ja, jb)
                cols[t] = min(ja, jb)
                obs[t] = i
                coef[t] = va * vb
                t += 1
    return rows, cols, obs, coef


class ObjectiveEvaluator:
    """Evaluates f(theta) = -log of the (unnormalized) hyper posterior.

    Pure function of theta given (spec, y): concurrent evaluations from
    level-1 tasks share only immutable precomputed structure.  The
    level-2 budget flows into the sparse factorizations.
    """

    def __init__(
        self,
        spec: ModelSpec,
        y: np.ndarray,
        A=None,
        ordering: str = "nested-dissection",
        leaf_cutoff: int = 64,
        inner_tol: float = 1e-8,
        max_inner: int = 50,
        cache_size: int | None = None,
    ):
        self.spec = spec
        self.y = np.asarray(y, dtype=np.float64)
        if self.y.shape != (spec.m,):
            raise DimensionMismatch("y must have length m")
        self.A = build_design(spec) if A is None else A.tocsr()
        self.AT = self.A.T.tocsr()
        self.inner_tol = float(inner_tol)
        self.max_inner = int(max_inner)

        n = spec.latent_dim
        self._q_prior0 = assemble_prior_precision(spec, np.zeros(spec.theta_dim))
        self.sym_prior: SymbolicFactor = analyze(self._q_prior0, ordering, leaf_cutoff)

        # conditional pattern: prior plus the likelihood Gram block
        pr, pc, pobs, pcoef = _pair_contributions(
            self.A.indptr.astype(np.int64), self.A.indices.astype(np.int64), self.A.data
        )
        gorder = np.lexsort((pr, pc))
        pr, pc, pobs, pcoef = pr[gorder], pc[gorder], pobs[gorder], pcoef[gorder]
        gkey = pc * n + pr
        gram_keys, self._gram_dst = np.unique(gkey, return_inverse=True)
        self._gram_obs = pobs
        self._gram_coef = pcoef
        self._gram_nnz = gram_keys.shape[0]

        prior_keys = (
            np.repeat(np.arange(n, dtype=np.int64), np.diff(self._q_prior0.indptr)) * n
            + self._q_prior0.indices
        )
        cond_keys = np.union1d(prior_keys, gram_keys)
        cond_rows = cond_keys % n
        cond_cols = cond_keys // n
        cond0 = SparseSymMatrix.from_coo(n, cond_rows, cond_cols, np.zeros(cond_keys.shape[0]))
        ck = np.repeat(np.arange(n, dtype=np.int64), np.diff(cond0.indptr)) * n + cond0.indices
        self._prior_to_cond = np.searchsorted(ck, prior_keys)
        self._gram_to_cond = np.searchsorted(ck, gram_keys)
        self._cond0 = cond0
        self.sym_cond: SymbolicFactor = analyze(cond0, ordering, leaf_cutoff)

        # gaussian likelihood: the Gram values scale with one precision
        self._gram_unit = np.bincount(
            self._gram_dst, weights=self._gram_coef, minlength=self._gram_nnz
        )

        self._lock = threading.Lock()
        self.n_evaluations = 0
        self.n_factorizations = 0
        self.analyze_calls = 2
        d = max(spec.theta_dim, 1)
        self._cache_size = cache_size if cache_size is not None else 2 * d + 1
        self._cache: OrderedDict[bytes, GaussianApprox] = OrderedDict()

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.spec.latent_dim

    def stats(self) -> dict:
        with self._lock:
            return {
                "n_evaluations": self.n_evaluations,
                "n_factorizations": self.n_factorizations,
                "analyze_calls": self.analyze_calls,
                "nnz_factor_prior": self.sym_prior.nnz,
                "nnz_factor_cond": self.sym_cond.nnz,
            }

    def _count(self, evals=0, factors=0):
        with self._lock:
            self.n_evaluations += evals
            self.n_factorizations += factors

    def _cond_matrix(self, prior_vals: np.ndarray, weights: np.ndarray) -> SparseSymMatrix:
        gram_vals = np.bincount(
            self._gram_dst,
            weights=weights[self._gram_obs] * self._gram_coef,
            minlength=self._gram_nnz,
        )
        vals = np.zeros(self._cond0.nnz)
        vals[self._prior_to_cond] += prior_vals
        vals[self._gram_to_cond] += gram_vals
        return self._cond0.with_values(vals)

    def _cond_matrix_gaussian(self, prior_vals: np.ndarray, tau: float) -> SparseSymMatrix:
        vals = np.zeros(self._cond0.nnz)
        vals[self._prior_to_cond] += prior_vals
        vals[self._gram_to_cond] += tau * self._gram_unit
        return self._cond0.with_values(vals)

    def _prior_matvec(self, Qp: SparseSymMatrix, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        kernels.sym_matvec(Qp.indptr, Qp.indices, Qp.data, x, out)
        return out

    # ------------------------------------------------------------------
    def gaussian_approx(
        self,
        theta,
        warm_start: np.ndarray | None = None,
        budget: ThreadBudget = SERIAL,
    ) -> GaussianApprox:
        """Conditional mode and precision of x at fixed theta.

        A gaussian likelihood is quadratic in x, so a single Newton step
        from any start lands on the mode; otherwise the iteration solves
        the conditional system at the current weights until the step is
        below tolerance, halving any step that fails to increase the
        conditional log density.
        """
        approx, _ = self._approx_with_prior(theta, warm_start, budget)
        return approx

    def _approx_with_prior(self, theta, warm_start, budget):
        spec = self.spec
        hp = spec.hyper_params(theta)
        Qp = assemble_prior_precision(spec, hp.theta)
        n = self.n

        if warm_start is not None:
            warm_start = np.asarray(warm_start, dtype=np.float64)
            if warm_start.shape != (n,):
                raise DimensionMismatch("warm start must have the latent dimension")

        if spec.family == "gaussian":
            tau = (
                float(np.exp(hp.theta[spec.noise_theta]))
                if spec.noise_theta is not None
                else float(spec.noise_precision)
            )
            Qc = self._cond_matrix_gaussian(Qp.data, tau)
            fac = factorize(self.sym_cond, Qc, budget)
            self._count(factors=1)
            rhs = self.AT @ (tau * (self.y - spec.offsets))
            mode = solve(fac, rhs)
            return GaussianApprox(hp, mode, Qc, fac, 1), Qp

        x = np.zeros(n) if warm_start is None else warm_start.copy()
        inner_trace: list[float] = []
        for it in range(1, self.max_inner + 1):
            eta = self.A @ x
            ll, d1, d2 = likelihood_terms(spec, eta, self.y, hp.theta)
            qx = self._prior_matvec(Qp, x)
            g0 = -0.5 * float(x @ qx) + ll
            inner_trace.append(g0)
            weights = np.clip(-d2, 1e-12, None)
            Qc = self._cond_matrix(Qp.data, weights)
            fac = factorize(self.sym_cond, Qc, budget)
            self._count(factors=1)
            grad = (self.AT @ d1) - qx
            delta = solve(fac, grad)
            if np.max(np.abs(delta)) <= self.inner_tol * (1.0 + np.max(np.abs(x))):
                return GaussianApprox(hp, x, Qc, fac, it, inner_trace), Qp
            accepted = False
            alpha = 1.0
            best_diff = -np.inf
            for _ in range(11):
                x_try = x + alpha * delta
                ll_try, _, _ = likelihood_terms(spec, self.A @ x_try, self.y, hp.theta)
                q_try = self._prior_matvec(Qp, x_try)
                g_try = -0.5 * float(x_try @ q_try) + ll_try
                if np.isfinite(g_try):
                    best_diff = max(best_diff, g_try - g0)
                if np.isfinite(g_try) and g_try >= g0:
                    x = x_try
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # Newton at its arithmetic floor: the log density is flat to
                # rounding along the whole step; the current point is the mode
                if best_diff >= -1e-9 * (1.0 + abs(g0)):
                    return GaussianApprox(hp, x, Qc, fac, it, inner_trace), Qp
                raise InnerDivergence(hp.theta, "no ascent step found")
        raise InnerDivergence(hp.theta, f"not converged in {self.max_inner} iterations")

    def eval_objective(
        self,
        theta,
        warm_start: np.ndarray | None = None,
        budget: ThreadBudget = SERIAL,
    ) -> tuple[ObjectiveValue, GaussianApprox]:
        """f(theta) together with the Gaussian approximation it used."""
        t0 = time.perf_counter()
        approx, Qp = self._approx_with_prior(theta, warm_start, budget)
        t_mode = time.perf_counter()
        fac_prior = factorize(self.sym_prior, Qp, budget)
        self._count(evals=1, factors=1)
        xs = approx.mode
        qx = self._prior_matvec(Qp, xs)
        quad = float(xs @ qx)
        ll, _, _ = likelihood_terms(self.spec, self.A @ xs, self.y, approx.theta.theta)
        n = self.n
        lph = log_prior_hyper(self.spec, approx.theta.theta)
        lpl = 0.5 * fac_prior.log_det - 0.5 * n * LOG_2PI - 0.5 * quad
        lga = 0.5 * approx.factor.log_det - 0.5 * n * LOG_2PI
        f = -(lph + lpl + ll - lga)
        value = ObjectiveValue(
            f=f,
            log_prior_hyper=lph,
            log_prior_latent=lpl,
            log_likelihood=ll,
            log_gaussian_approx=lga,
            timings={
                "mode_s": t_mode - t0,
                "total_s": time.perf_counter() - t0,
                "inner_iterations": approx.iterations,
            },
        )
        return value, approx

    def objective(self, theta, warm_start=None, budget: ThreadBudget = SERIAL) -> float:
        return self.eval_objective(theta, warm_start, budget)[0].f

    # ------------------------------------------------------------------
    # approximation cache; populated from single-threaded assembly code,
    # read (under the lock) from parallel marginal tasks
    def cache_put(self, theta, approx: GaussianApprox):
        key = np.asarray(theta, dtype=np.float64).tobytes()
        with self._lock:
            self._cache[key] = approx
            self._cache.move_to_end(key)
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)

    def cache_get(self, theta) -> GaussianApprox | None:
        key = np.asarray(theta, dtype=np.float64).tobytes()
        with self._lock:
            return self._cache.get(key)

    def cache_clear(self):
        with self._lock:
            self._cache.clear()
