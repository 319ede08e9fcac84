"""BFGS hyperparameter optimization with batched finite differences and a
robust parallel line search.

Every objective evaluation the optimizer needs in one step (the gradient
stencil, the line-search candidates, the final Hessian stencil) is
dispatched as a single batch of independent tasks; results come back in
slot order, so the arithmetic that consumes them is schedule independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BatchError, EvaluationError, LineSearchFailure, RobustFitError
from .runtime import SERIAL, ThreadBudget, run_batch

Objective = Callable[[np.ndarray], float]


@dataclass
class FDConfig:
    """Finite-difference stencil for the gradient.

    "mixed" starts with forward differences and switches to central once
    the gradient infinity norm falls below ``central_switch``.
    """

    scheme: str = "mixed"  # forward | central | mixed
    epsilon: float = 5e-3
    central_switch: float = 0.1

    def __post_init__(self):
        if self.scheme not in ("forward", "central", "mixed"):
            raise ValueError(f"unknown difference scheme {self.scheme!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class LineSearchConfig:
    gamma: float = 1.0
    candidates: int | None = None  # None: max(budget.l1, 5)
    stabilizer_fracs: tuple[float, float] = (0.05, 0.10)
    irls_max_iterations: int = 20
    bisquare_cutoff: float = 6.0
    coef_tol: float = 1e-10
    parallel: bool = True
    armijo_c: float = 1e-4
    armijo_factor: float = 0.5
    gamma_min: float = 0.25
    gamma_max: float = 4.0


@dataclass
class RobustFit:
    """Quadratic q(t) = c0 + c1 t + c2 t^2 with bisquare point weights."""

    coefficients: np.ndarray
    weights: np.ndarray
    scale: float

    def __call__(self, t):
        c = self.coefficients
        return c[0] + c[1] * t + c[2] * t * t


@dataclass
class BFGSState:
    theta: np.ndarray
    f: float
    grad: np.ndarray
    H: np.ndarray  # inverse-Hessian approximation
    iteration: int = 0


@dataclass
class OptimizeResult:
    theta: np.ndarray
    f: float
    grad: np.ndarray
    hessian: np.ndarray  # finite-difference Hessian at the mode
    status: str  # converged | max-iters | stalled
    iterations: int
    n_evals: int
    trace: list[dict] = field(default_factory=list)


def _eval_batch(f: Objective, points: Sequence[np.ndarray], budget: ThreadBudget) -> list[float]:
    tasks = [lambda p=p: float(f(p)) for p in points]
    try:
        return run_batch(tasks, budget)
    except BatchError as exc:
        raise EvaluationError(points[exc.slot], exc.slot, exc.task_error) from exc


def fd_gradient(
    f: Objective,
    theta: np.ndarray,
    cfg: FDConfig,
    budget: ThreadBudget = SERIAL,
    scheme: str | None = None,
) -> tuple[np.ndarray, float]:
    """Finite-difference gradient, all stencil points in one batch.

    Returns (gradient, f(theta)); f(theta) always occupies slot 0 of the
    batch.  The slot layout is fixed, so the assembled gradient does not
    depend on scheduling.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    eps = cfg.epsilon
    scheme = scheme or cfg.scheme
    if scheme == "mixed":
        scheme = "forward"
    points = [theta]
    if scheme == "central":
        for i in range(d):
            step = np.zeros(d)
            step[i] = eps
            points.append(theta + step)
            points.append(theta - step)
    else:
        for i in range(d):
            step = np.zeros(d)
            step[i] = eps
            points.append(theta + step)
    vals = _eval_batch(f, points, budget)
    f0 = vals[0]
    grad = np.empty(d)
    if scheme == "central":
        for i in range(d):
            grad[i] = (vals[1 + 2 * i] - vals[2 + 2 * i]) / (2.0 * eps)
    else:
        for i in range(d):
            grad[i] = (vals[1 + i] - f0) / eps
    return grad, f0


def fd_hessian(
    f: Objective,
    theta: np.ndarray,
    epsilon: float,
    budget: ThreadBudget = SERIAL,
    f0: float | None = None,
    eigen_floor: float = 1e-8,
) -> np.ndarray:
    """Central finite-difference Hessian, one parallel batch.

    Diagonal terms use the three-point stencil, off-diagonal terms the
    four-point cross; the result is symmetrized and eigenvalue-floored.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    points = []
    if f0 is None:
        points.append(theta)
    base = len(points)
    for i in range(d):
        step = np.zeros(d)
        step[i] = epsilon
        points.append(theta + step)
        points.append(theta - step)
    cross = []
    for i in range(d):
        for j in range(i + 1, d):
            si = np.zeros(d)
            si[i] = epsilon
            sj = np.zeros(d)
            sj[j] = epsilon
            cross.append((i, j, len(points)))
            points.extend([theta + si + sj, theta + si - sj, theta - si + sj, theta - si - sj])
    vals = _eval_batch(f, points, budget)
    if f0 is None:
        f0 = vals[0]
    H = np.zeros((d, d))
    e2 = epsilon * epsilon
    for i in range(d):
        fp = vals[base + 2 * i]
        fm = vals[base + 2 * i + 1]
        H[i, i] = (fp - 2.0 * f0 + fm) / e2
    for i, j, at in cross:
        H[i, j] = H[j, i] = (vals[at] - vals[at + 1] - vals[at + 2] + vals[at + 3]) / (4.0 * e2)
    H = 0.5 * (H + H.T)
    evals, evecs = np.linalg.eigh(H)
    evals = np.maximum(evals, eigen_floor)
    return (evecs * evals) @ evecs.T


def _exact_subset_start(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-median-of-squares start: best exact quadratic through any
    3-point subset, judged by the median absolute residual on all points.

    A corrupted high-leverage point can drag the least-squares start far
    enough that IRLS blames the wrong points; this start is immune to any
    single outlier.
    """
    from itertools import combinations, islice

    n = t.shape[0]
    best = None
    best_score = np.inf
    for i, j, k in islice(combinations(range(n), 3), 2000):
        t1, t2, t3 = t[i], t[j], t[k]
        if t1 == t2 or t2 == t3 or t1 == t3:
            continue
        s12 = (y[j] - y[i]) / (t2 - t1)
        s23 = (y[k] - y[j]) / (t3 - t2)
        c2 = (s23 - s12) / (t3 - t1)
        c1 = s12 - c2 * (t1 + t2)
        c0 = y[i] - c1 * t1 - c2 * t1 * t1
        r = y - (c0 + c1 * t + c2 * t * t)
        score = float(np.median(np.abs(r)))
        if score < best_score:
            best_score = score
            best = np.array([c0, c1, c2])
    return best


def _bisquare_irls(t, y, X, beta, cfg: LineSearchConfig, floor: float):
    cutoff = cfg.bisquare_cutoff
    scale = floor
    for _ in range(cfg.irls_max_iterations):
        r = y - X @ beta
        scale = max(float(np.median(np.abs(r - np.median(r)))), floor)
        u = r / (cutoff * scale)
        weights = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
        active = weights > 0
        if np.unique(t[active]).shape[0] < 3:
            break  # cannot refit; keep the current coefficients
        sw = np.sqrt(weights)
        beta_new = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        if np.max(np.abs(beta_new - beta)) < cfg.coef_tol:
            beta = beta_new
            break
        beta = beta_new
    return beta, scale


def robust_quadratic_fit(
    points: Sequence[tuple[float, float]], cfg: LineSearchConfig | None = None
) -> RobustFit:
    """Second-order polynomial through (t, f(t)) pairs by IRLS.

    Reweights with the bisquare function w(r) = (1 - (r / (cutoff*m))^2)^2
    (zero outside), where m is the median absolute deviation of the
    residuals, floored to avoid a zero scale.  The iteration runs from the
    unweighted least-squares start and from an exact-subset start; the
    fixed point with the smaller robust scale wins, which keeps a single
    corrupted high-leverage point from masking itself.
    """
    cfg = cfg or LineSearchConfig()
    t = np.asarray([p[0] for p in points], dtype=np.float64)
    y = np.asarray([p[1] for p in points], dtype=np.float64)
    if t.shape[0] < 4:
        raise RobustFitError("need at least 4 points for a robust quadratic fit")
    if np.unique(t).shape[0] < 3:
        raise RobustFitError("need at least 3 distinct abscissae")
    X = np.column_stack([np.ones_like(t), t, t * t])
    floor = 1e-12 * max(float(np.ptp(y)), 1.0)

    beta_lsq = np.linalg.lstsq(X, y, rcond=None)[0]
    candidates = [beta_lsq]
    beta_lms = _exact_subset_start(t, y)
    if beta_lms is not None:
        candidates.append(beta_lms)
    best = None
    for start in candidates:
        beta, scale = _bisquare_irls(t, y, X, start.copy(), cfg, floor)
        score = float(np.median(np.abs(y - X @ beta)))
        if best is None or score < best[0] - 1e-12 * (1.0 + abs(best[0])):
            best = (score, beta, scale)
    _, beta, scale = best
    r = y - X @ beta
    u = r / (cfg.bisquare_cutoff * max(scale, floor))
    weights = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)
    return RobustFit(coefficients=beta, weights=weights, scale=scale)


@dataclass
class LineSearchResult:
    theta: np.ndarray
    f: float
    step: float  # accepted t along -p
    n_evals: int


def parallel_line_search(
    f: Objective,
    theta: np.ndarray,
    p: np.ndarray,
    f_at_theta: float,
    cfg: LineSearchConfig,
    budget: ThreadBudget = SERIAL,
    gamma: float | None = None,
) -> LineSearchResult:
    """Batched line search on (theta, theta - gamma p] with a robust fit.

    Equidistant candidates plus two small stabilizer points on the
    opposite side are evaluated in one batch; a robust quadratic through
    them (and the current point) proposes the next iterate.  Falls back
    to the best raw candidate, then to one gamma/4 retry, before
    declaring failure.
    """
    theta = np.asarray(theta, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    gamma = cfg.gamma if gamma is None else float(gamma)
    k = cfg.candidates if cfg.candidates is not None else max(budget.l1, 5)
    k = max(k, 3)
    n_evals = 0

    for attempt_gamma in (gamma, gamma / 4.0):
        ts = [attempt_gamma * (i + 1) / k for i in range(k)]
        stabs = [-frac * attempt_gamma for frac in cfg.stabilizer_fracs]
        all_t = ts + stabs
        vals = _eval_batch(f, [theta - t * p for t in all_t], budget)
        n_evals += len(all_t)
        # non-finite evaluations are infinitely bad; keep them out of the fit
        fit_points = [(0.0, f_at_theta)] + [
            (t, v) for t, v in zip(all_t, vals) if np.isfinite(v)
        ]
        t_hat = 0.0
        if len(fit_points) >= 4:
            fit = robust_quadratic_fit(fit_points, cfg)
            c0, c1, c2 = fit.coefficients
            if c2 > 0.0:
                t_hat = -c1 / (2.0 * c2)
                if not (0.0 <= t_hat <= attempt_gamma):
                    t_hat = 0.0 if fit(0.0) <= fit(attempt_gamma) else attempt_gamma
            else:
                t_hat = 0.0 if fit(0.0) <= fit(attempt_gamma) else attempt_gamma

        if t_hat > 0.0:
            theta_new = theta - t_hat * p
            f_new = float(f(theta_new))
            n_evals += 1
            if np.isfinite(f_new) and f_new <= f_at_theta:
                return LineSearchResult(theta_new, f_new, t_hat, n_evals)
        # fitted minimum unusable: best raw candidate on the interval
        best = int(np.argmin(vals[:k]))
        if np.isfinite(vals[best]) and vals[best] <= f_at_theta:
            return LineSearchResult(theta - ts[best] * p, vals[best], ts[best], n_evals)
    raise LineSearchFailure(theta)


def serial_armijo_search(
    f: Objective,
    theta: np.ndarray,
    p: np.ndarray,
    f_at_theta: float,
    slope: float,
    cfg: LineSearchConfig,
    gamma: float | None = None,
    max_backtracks: int = 40,
) -> LineSearchResult:
    """Sequential backtracking with the sufficient-decrease condition."""
    gamma = cfg.gamma if gamma is None else float(gamma)
    alpha = gamma
    n_evals = 0
    for _ in range(max_backtracks):
        trial = theta - alpha * p
        f_new = float(f(trial))
        n_evals += 1
        if f_new <= f_at_theta - cfg.armijo_c * alpha * slope:
            return LineSearchResult(trial, f_new, alpha, n_evals)
        alpha *= cfg.armijo_factor
    raise LineSearchFailure(theta)


def bfgs_update(state: BFGSState, theta_next: np.ndarray, grad_next: np.ndarray) -> BFGSState:
    """Inverse-Hessian secant update from consecutive iterates.

    Skipped (H unchanged) when the curvature product is not safely
    positive, which preserves positive definiteness.
    """
    theta_next = np.asarray(theta_next, dtype=np.float64)
    grad_next = np.asarray(grad_next, dtype=np.float64)
    s = theta_next - state.theta
    g = grad_next - state.grad
    H = _bfgs_update_matrix(state.H, s, g)
    return BFGSState(
        theta=theta_next,
        f=state.f,
        grad=grad_next,
        H=H,
        iteration=state.iteration + 1,
    )


def _bfgs_update_matrix(H: np.ndarray, s: np.ndarray, g: np.ndarray) -> np.ndarray:
    sty = float(s @ g)
    if sty <= 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(g)):
        return H
    rho = 1.0 / sty
    d = s.shape[0]
    eye = np.eye(d)
    left = eye - rho * np.outer(s, g)
    return left @ H @ left.T + rho * np.outer(s, s)


@dataclass
class OptimizeConfig:
    fd: FDConfig = field(default_factory=FDConfig)
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    budget: ThreadBudget = SERIAL
    grad_tol: float = 5e-4
    f_tol: float = 1e-6
    max_iterations: int = 200
    hessian_epsilon: float | None = None  # default: fd.epsilon


def optimize(
    f: Objective,
    theta0: np.ndarray,
    cfg: OptimizeConfig | None = None,
    on_accept: Callable[[np.ndarray], None] | None = None,
) -> OptimizeResult:
    """Minimize f by BFGS with batched gradients and line searches.

    Terminates when the gradient infinity norm and the objective decrease
    both fall under tolerance, at the iteration cap ("max-iters"), or on
    line-search failure ("stalled"); the finite-difference Hessian at the
    final iterate is computed in all cases.
    """
    cfg = cfg or OptimizeConfig()
    theta = np.asarray(theta0, dtype=np.float64).copy()
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    d = theta.shape[0]
    H = np.eye(d)
    grad_prev: np.ndarray | None = None
    theta_prev: np.ndarray | None = None
    f_prev: float | None = None
    gamma = cfg.line_search.gamma
    trace: list[dict] = []
    n_evals = 0
    status = "max-iters"
    f_cur = float("nan")
    grad = np.zeros(d)
    use_central = False  # sticky once the mixed policy upgrades

    for it in range(cfg.max_iterations):
        t_iter = time.perf_counter()
        scheme = cfg.fd.scheme
        if scheme == "mixed":
            scheme = "central" if use_central else "forward"
        grad, f_cur = fd_gradient(f, theta, cfg.fd, cfg.budget, scheme=scheme)
        n_evals += 1 + (2 * d if scheme == "central" else d)
        if cfg.fd.scheme == "mixed" and not use_central:
            # forward truncation bias scales with the curvature, so a fixed
            # gradient threshold alone is not a safe trigger: upgrade for
            # good once the gradient reads small or progress has slowed to
            # where the bias could dominate, and redo this gradient centrally
            slow = f_prev is not None and abs(f_cur - f_prev) < 1e-4 * (1.0 + abs(f_cur))
            if slow or float(np.max(np.abs(grad))) < cfg.fd.central_switch:
                use_central = True
                scheme = "central"
                grad, f_cur = fd_gradient(f, theta, cfg.fd, cfg.budget, scheme=scheme)
                n_evals += 1 + 2 * d
        if grad_prev is not None:
            s = theta - theta_prev
            g_diff = grad - grad_prev
            if it == 1:
                # size the initial inverse Hessian from the first secant pair
                sg = float(s @ g_diff)
                gg = float(g_diff @ g_diff)
                if sg > 0 and gg > 0:
                    H = np.eye(d) * (sg / gg)
            H = _bfgs_update_matrix(H, s, g_diff)

        gnorm = float(np.max(np.abs(grad)))
        f_small = f_prev is None or abs(f_cur - f_prev) <= cfg.f_tol * (1.0 + abs(f_prev))
        if gnorm <= cfg.grad_tol and f_small:
            status = "converged"
            trace.append(
                {
                    "iter": it,
                    "f": f_cur,
                    "grad_norm": gnorm,
                    "step": 0.0,
                    "n_evals": n_evals,
                    "wall_ms": 1000.0 * (time.perf_counter() - t_iter),
                }
            )
            break

        p = H @ grad
        if grad_prev is None:
            # no curvature information yet: cap the first trial step at
            # unit length so huge initial gradients cannot fling the
            # candidates into infeasible territory
            p = p / max(1.0, float(np.max(np.abs(p))))
        slope = float(grad @ p)
        if slope <= 0.0:
            H = np.eye(d)
            p = grad.copy()
            slope = float(grad @ grad)
        try:
            if cfg.line_search.parallel:
                ls = parallel_line_search(f, theta, p, f_cur, cfg.line_search, cfg.budget, gamma)
            else:
                ls = serial_armijo_search(f, theta, p, f_cur, slope, cfg.line_search, gamma)
        except LineSearchFailure:
            status = "stalled"
            trace.append(
                {
                    "iter": it,
                    "f": f_cur,
                    "grad_norm": gnorm,
                    "step": 0.0,
                    "n_evals": n_evals,
                    "wall_ms": 1000.0 * (time.perf_counter() - t_iter),
                }
            )
            break
        n_evals += ls.n_evals
        gamma = min(max(2.0 * ls.step, cfg.line_search.gamma_min), cfg.line_search.gamma_max)
        theta_prev, grad_prev, f_prev = theta, grad, f_cur
        theta = ls.theta
        if on_accept is not None:
            on_accept(theta)
        trace.append(
            {
                "iter": it,
                "f": f_cur,
                "grad_norm": gnorm,
                "step": ls.step,
                "n_evals": n_evals,
                "wall_ms": 1000.0 * (time.perf_counter() - t_iter),
            }
        )

    eps_h = cfg.hessian_epsilon if cfg.hessian_epsilon is not None else cfg.fd.epsilon
    f_final = f_cur if status == "converged" else float(f(theta))
    if status != "converged":
        n_evals += 1
    hess = fd_hessian(f, theta, eps_h, cfg.budget, f0=f_final)
    n_evals += 2 * d + 2 * d * (d - 1)
    return OptimizeResult(
        theta=theta,
        f=f_final,
        grad=grad,
        hessian=hess,
        status=status,
        iterations=len(trace),
        n_evals=n_evals,
        trace=trace,
    )
