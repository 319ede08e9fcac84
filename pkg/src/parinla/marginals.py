"""Posterior marginal assembly around the hyperparameter mode.

The mode neighborhood is explored on standardized eigen-axes of the
Hessian (or collapsed to the single mode point under the empirical Bayes
strategy); each retained point contributes a weighted Gaussian
conditional, and the latent marginals are the moments of that mixture,
with per-point variances from the selected inverse of the conditional
precision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cholesky import selected_inverse
from .errors import BatchError, EvaluationError, StructureError
from .objective import GaussianApprox, ObjectiveEvaluator
from .runtime import SERIAL, ThreadBudget, run_batch

STRATEGIES = ("eb", "grid")


@dataclass
class IntegrationPoint:
    """One weighted evaluation point in hyperparameter space."""

    theta: np.ndarray
    z: np.ndarray  # standardized coordinates relative to the mode
    log_post_rel: float  # -(f - f_mode), 0 at the mode
    weight: float
    approx: GaussianApprox | None = None


@dataclass
class HyperMarginal:
    name: str
    mode: float
    sd: float
    table: list[tuple[float, float]] | None = None  # (theta_j, density)


@dataclass
class MarginalResult:
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    labels: list[str]
    hyper: list[HyperMarginal] = field(default_factory=list)
    n_points: int = 1


def standardizing_transform(H_mode: np.ndarray) -> np.ndarray:
    """Columns map unit steps in z to theta offsets: M = V diag(1/sqrt(l))."""
    evals, evecs = np.linalg.eigh(0.5 * (H_mode + H_mode.T))
    if np.any(evals <= 0):
        raise StructureError("Hessian at the mode must be positive definite")
    return evecs / np.sqrt(evals)[None, :]


def explore_grid(
    f,
    theta_star: np.ndarray,
    H_mode: np.ndarray,
    strategy: str = "grid",
    budget: ThreadBudget = SERIAL,
    f_star: float | None = None,
    delta_z: float = 1.0,
    accept_drop: float = 2.5,
    max_steps: int = 5,
) -> list[IntegrationPoint]:
    """Integration points around the mode.

    "eb" returns the single mode point.  "grid" walks each eigen-axis of
    the Hessian in +-delta_z steps, keeping points while the objective
    rise stays under ``accept_drop``; each wave of candidates (all axes
    and directions at one step index) evaluates as one parallel batch.
    Weights are proportional to exp(-(f - f_mode)) and normalized.
    """
    if strategy not in STRATEGIES:
        raise StructureError(f"unknown strategy {strategy!r}")
    theta_star = np.asarray(theta_star, dtype=np.float64)
    d = theta_star.shape[0]
    mode_point = IntegrationPoint(
        theta=theta_star.copy(), z=np.zeros(d), log_post_rel=0.0, weight=1.0
    )
    if strategy == "eb":
        return [mode_point]

    if f_star is None:
        f_star = float(f(theta_star))
    M = standardizing_transform(H_mode)
    points = [mode_point]
    active = [(axis, sign) for axis in range(d) for sign in (+1.0, -1.0)]
    for step in range(1, max_steps + 1):
        if not active:
            break
        zs = []
        for axis, sign in active:
            z = np.zeros(d)
            z[axis] = sign * step * delta_z
            zs.append(z)
        thetas = [theta_star + M @ z for z in zs]
        try:
            vals = run_batch([lambda t=t: float(f(t)) for t in thetas], budget)
        except BatchError as exc:
            raise EvaluationError(thetas[exc.slot], exc.slot, exc.task_error) from exc
        survivors = []
        for (axis, sign), z, theta_k, val in zip(active, zs, thetas, vals):
            drop = val - f_star
            if not np.isfinite(drop) or drop >= accept_drop:
                continue
            points.append(
                IntegrationPoint(theta=theta_k, z=z, log_post_rel=-drop, weight=0.0)
            )
            survivors.append((axis, sign))
        active = survivors
    logw = np.array([p.log_post_rel for p in points])
    w = np.exp(logw - logw.max())
    w /= w.sum()
    for point, wk in zip(points, w):
        point.weight = float(wk)
    return points


def hyper_marginals(
    points: list[IntegrationPoint],
    theta_star: np.ndarray,
    H_mode: np.ndarray,
    names: tuple[str, ...] | None = None,
) -> list[HyperMarginal]:
    """Per-hyperparameter mode, standard deviation and profile table.

    The standard deviation comes from the inverse Hessian; the profile
    density for theta_j follows the eigen-axis with the largest loading
    on coordinate j, mapped back to the theta_j scale and normalized by
    the trapezoid rule.  Axes with fewer than 3 retained points fall back
    to the Laplace Gaussian curve.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    d = theta_star.shape[0]
    names = names or tuple(f"theta[{j}]" for j in range(d))
    cov = np.linalg.inv(0.5 * (H_mode + H_mode.T))
    sds = np.sqrt(np.diag(cov))
    M = standardizing_transform(H_mode)

    out = []
    gridded = len(points) > 1
    for j in range(d):
        table = None
        if gridded:
            axis = int(np.argmax(np.abs(M[j, :])))
            samples = []
            for p in points:
                on_axis = np.all(p.z[np.arange(d) != axis] == 0.0)
                if on_axis:
                    samples.append((float(p.z[axis]), p.log_post_rel))
            if len(samples) >= 3 and abs(M[j, axis]) > 0:
                samples.sort()
                zvals = np.array([s[0] for s in samples])
                logd = np.array([s[1] for s in samples])
                tj = theta_star[j] + M[j, axis] * zvals
                if tj[0] > tj[-1]:
                    tj, logd = tj[::-1], logd[::-1]
                dens = np.exp(logd - logd.max())
                area = np.trapezoid(dens, tj)
                table = list(zip(tj.tolist(), (dens / area).tolist()))
        if table is None:
            grid = theta_star[j] + sds[j] * np.linspace(-4, 4, 41)
            dens = np.exp(-0.5 * ((grid - theta_star[j]) / sds[j]) ** 2)
            dens /= np.trapezoid(dens, grid)
            table = list(zip(grid.tolist(), dens.tolist())) if gridded else None
        out.append(HyperMarginal(name=names[j], mode=float(theta_star[j]), sd=float(sds[j]), table=table))
    return out


def latent_marginals(
    evaluator: ObjectiveEvaluator,
    points: list[IntegrationPoint],
    budget: ThreadBudget = SERIAL,
) -> MarginalResult:
    """Mixture marginals of the latent field over the integration points.

    Each point needs a converged conditional approximation (recomputed
    through the evaluator when not cached) and one selected inversion for
    its per-latent variances; the K point tasks run as one level-1 batch,
    each inversion under the level-2 budget.  Mixture moments are
    assembled in fixed point order.
    """
    if not points:
        raise StructureError("need at least one integration point")

    def point_task(point: IntegrationPoint):
        approx = point.approx
        if approx is None:
            approx = evaluator.cache_get(point.theta)
        if approx is None:
            approx = evaluator.gaussian_approx(point.theta, budget=budget)
        si = selected_inverse(approx.factor, budget)
        return approx.mode, si.marginal_variances

    try:
        results = run_batch([lambda p=p: point_task(p) for p in points], budget)
    except BatchError as exc:
        raise EvaluationError(points[exc.slot].theta, exc.slot, exc.task_error) from exc

    weights = np.array([p.weight for p in points])
    means = np.stack([r[0] for r in results])
    variances = np.stack([r[1] for r in results])
    mean, sd = mixture_moments(weights, means, variances)
    return MarginalResult(
        latent_mean=mean,
        latent_sd=sd,
        labels=evaluator.spec.latent_labels(),
        n_points=len(points),
    )


def mixture_moments(weights, means, variances) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sd of a Gaussian mixture, componentwise.

    sd^2 = sum_k w_k (sigma_k^2 + mu_k^2) - (sum_k w_k mu_k)^2, clipped at
    zero against rounding.
    """
    weights = np.asarray(weights, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    mean = weights @ means
    second = weights @ (variances + means * means)
    var = np.maximum(second - mean * mean, 0.0)
    return mean, np.sqrt(var)


# ----------------------------------------------------------------------
# exports


def write_marginals_csv(path, result: MarginalResult):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "component", "mean", "sd"])
        for i, (label, mu, sd) in enumerate(
            zip(result.labels, result.latent_mean, result.latent_sd)
        ):
            writer.writerow([i, label, repr(float(mu)), repr(float(sd))])


def write_hyper_json(path, result: MarginalResult, meta: dict | None = None):
    doc = {
        "hyperparameters": [
            {
                "name": h.name,
                "mode": h.mode,
                "sd": h.sd,
                "table": [[float(a), float(b)] for a, b in h.table] if h.table else None,
            }
            for h in result.hyper
        ],
        "n_integration_points": result.n_points,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
