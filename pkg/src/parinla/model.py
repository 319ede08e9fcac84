"""Latent Gaussian model definition and assembly.

A model is a linear predictor eta = intercept + Z beta + sum of random
effects, a gaussian or poisson likelihood, independent log-gamma priors on
the precisions (handled on log scale), and the block-diagonal prior
precision Q(theta) over the latent vector x = (intercept, beta, u).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, StructureError
from .ordering import AdjacencyGraph
from .sparse import SparseSymMatrix

COMPONENT_KINDS = ("iid", "rw1", "rw2", "besag")

DEFAULT_FIXED_PRIOR_PREC = 1e-3
DEFAULT_JITTER = 1e-5
DEFAULT_HYPER_SHAPE = 1.0
DEFAULT_HYPER_RATE = 5e-5


@dataclass(frozen=True)
class HyperParams:
    """Log-scale hyperparameter vector with labels."""

    theta: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=np.float64)))
        if not np.all(np.isfinite(self.theta)):
            raise StructureError("hyperparameters must be finite")
        if len(self.names) != self.theta.shape[0]:
            raise DimensionMismatch("names and theta disagree")

    @property
    def dim(self) -> int:
        return int(self.theta.shape[0])


@dataclass
class Component:
    """One random-effect block of the latent field."""

    name: str
    kind: str
    size: int
    theta_index: int
    obs_index: np.ndarray  # observation -> level map, length m
    graph: AdjacencyGraph | None = None
    hyper_shape: float = DEFAULT_HYPER_SHAPE
    hyper_rate: float = DEFAULT_HYPER_RATE


class ModelSpec:
    """Structure, data bindings and priors of one latent Gaussian model.

    Immutable after construction and safe to share across threads; the
    prior assembly plan is precomputed so each assemble call is a handful
    of vector operations on a fixed pattern.
    """

    def __init__(
        self,
        m: int,
        family: str,
        components: list[Component],
        Z: np.ndarray | None = None,
        fixed_names: list[str] | None = None,
        intercept: bool = True,
        offsets: np.ndarray | None = None,
        exposures: np.ndarray | None = None,
        noise_precision: float | None = None,
        noise_hyper: tuple[float, float] = (DEFAULT_HYPER_SHAPE, DEFAULT_HYPER_RATE),
        fixed_prior_prec: float = DEFAULT_FIXED_PRIOR_PREC,
        jitter: float = DEFAULT_JITTER,
    ):
        if family not in ("gaussian", "poisson"):
            raise ConfigError("likelihood.family", f"unknown family {family!r}")
        self.m = int(m)
        self.family = family
        self.components = list(components)
        self.Z = np.zeros((m, 0)) if Z is None else np.asarray(Z, dtype=np.float64)
        if self.Z.shape[0] != m:
            raise DimensionMismatch("covariate matrix row count differs from m")
        self.fixed_names = list(fixed_names or [f"x{i}" for i in range(self.Z.shape[1])])
        if len(self.fixed_names) != self.Z.shape[1]:
            raise DimensionMismatch("fixed effect names do not match covariates")
        self.intercept = bool(intercept)
        self.offsets = np.zeros(m) if offsets is None else np.asarray(offsets, dtype=np.float64)
        self.exposures = np.ones(m) if exposures is None else np.asarray(exposures, dtype=np.float64)
        if self.offsets.shape != (m,) or self.exposures.shape != (m,):
            raise DimensionMismatch("offsets/exposures must have length m")
        if family == "poisson" and np.any(self.exposures <= 0):
            raise ConfigError("exposure", "poisson exposures must be positive")
        self.noise_precision = noise_precision
        self.noise_hyper = noise_hyper
        self.fixed_prior_prec = float(fixed_prior_prec)
        self.jitter = float(jitter)

        # theta layout: gaussian noise first when free, then components
        names: list[str] = []
        self.noise_theta: int | None = None
        if family == "gaussian" and noise_precision is None:
            self.noise_theta = 0
            names.append("log_prec_noise")
        for comp in self.components:
            expected = len(names)
            if comp.theta_index != expected:
                raise ConfigError(
                    f"components.{comp.name}.theta_index",
                    f"expected {expected}, got {comp.theta_index}",
                )
            names.append(f"log_prec_{comp.name}")
            comp.obs_index = np.asarray(comp.obs_index, dtype=np.int64)
            if comp.obs_index.shape != (m,):
                raise DimensionMismatch(f"component {comp.name} index column must have length m")
            if comp.obs_index.min(initial=0) < 0 or comp.obs_index.max(initial=0) >= comp.size:
                raise ConfigError(f"components.{comp.name}", "observation index out of range")
            if comp.kind not in COMPONENT_KINDS:
                raise ConfigError(f"components.{comp.name}.kind", f"unknown kind {comp.kind!r}")
            if comp.kind == "rw1" and comp.size < 2:
                raise ConfigError(f"components.{comp.name}.size", "rw1 needs size >= 2")
            if comp.kind == "rw2" and comp.size < 3:
                raise ConfigError(f"components.{comp.name}.size", "rw2 needs size >= 3")
            if comp.kind == "besag" and (comp.graph is None or comp.graph.n != comp.size):
                raise ConfigError(f"components.{comp.name}.graph", "besag needs a graph of matching size")
        self.theta_names: tuple[str, ...] = tuple(names)
        self.theta_dim = len(names)

        self.n_fixed = self.Z.shape[1] + (1 if self.intercept else 0)
        self.latent_dim = self.n_fixed + sum(c.size for c in self.components)
        if self.latent_dim < 1:
            raise ConfigError("model", "latent field is empty")
        self._prior_plan = _build_prior_plan(self)
        self._labels: list[str] | None = None

    # ------------------------------------------------------------------
    def block_slices(self) -> list[tuple[str, slice]]:
        out = []
        ofs = 0
        if self.intercept:
            out.append(("intercept", slice(0, 1)))
            ofs = 1
        for name in self.fixed_names:
            out.append((f"beta:{name}", slice(ofs, ofs + 1)))
            ofs += 1
        for comp in self.components:
            out.append((comp.name, slice(ofs, ofs + comp.size)))
            ofs += comp.size
        return out

    def latent_labels(self) -> list[str]:
        if self._labels is None:
            labels = []
            for name, sl in self.block_slices():
                if name == "intercept" or name.startswith("beta:"):
                    labels.append(name)
                else:
                    labels.extend(f"{name}[{i}]" for i in range(sl.stop - sl.start))
            self._labels = labels
        return list(self._labels)

    def hyper_params(self, theta) -> HyperParams:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape[0] != self.theta_dim:
            raise DimensionMismatch(
                f"theta has dimension {theta.shape[0]}, model needs {self.theta_dim}"
            )
        return HyperParams(theta=theta, names=self.theta_names)

    def __repr__(self):
        return (
            f"ModelSpec(m={self.m}, family={self.family!r}, latent={self.latent_dim}, "
            f"theta={self.theta_dim})"
        )


# ----------------------------------------------------------------------
# structure matrices


def structure_matrix(kind: str, size: int, graph: AdjacencyGraph | None = None):
    """Lower-triangle COO (rows, cols, vals) of the roughness structure."""
    import scipy.sparse as sp

    if kind == "iid":
        idx = np.arange(size, dtype=np.int64)
        return idx, idx, np.ones(size)
    if kind == "rw1":
        D = sp.diags([-np.ones(size - 1), np.ones(size - 1)], [0, 1], shape=(size - 1, size))
        R = sp.tril((D.T @ D).tocoo())
        return R.row.astype(np.int64), R.col.astype(np.int64), R.data
    if kind == "rw2":
        D = sp.diags(
            [np.ones(size - 2), -2.0 * np.ones(size - 2), np.ones(size - 2)],
            [0, 1, 2],
            shape=(size - 2, size),
        )
        R = sp.tril((D.T @ D).tocoo())
        return R.row.astype(np.int64), R.col.astype(np.int64), R.data
    if kind == "besag":
        deg = np.diff(graph.indptr).astype(np.float64)
        cols = np.repeat(np.arange(graph.n, dtype=np.int64), np.diff(graph.indptr))
        lower = graph.indices > cols
        rows = np.concatenate([np.arange(size, dtype=np.int64), graph.indices[lower]])
        cs = np.concatenate([np.arange(size, dtype=np.int64), cols[lower]])
        vals = np.concatenate([deg, -np.ones(int(lower.sum()))])
        return rows, cs, vals
    raise ConfigError("kind", f"unknown component kind {kind!r}")


@dataclass
class _PriorPlan:
    indptr: np.ndarray
    indices: np.ndarray
    base: np.ndarray  # structure values, unit precision
    tix: np.ndarray  # theta index per entry, -1 for the fixed block
    jit: np.ndarray  # additive jitter per entry


def _build_prior_plan(spec: ModelSpec) -> _PriorPlan:
    rows_all, cols_all, base_all, tix_all, jit_all = [], [], [], [], []
    ofs = 0
    if spec.n_fixed:
        idx = np.arange(spec.n_fixed, dtype=np.int64)
        rows_all.append(idx)
        cols_all.append(idx)
        base_all.append(np.full(spec.n_fixed, spec.fixed_prior_prec))
        tix_all.append(np.full(spec.n_fixed, -1, dtype=np.int64))
        jit_all.append(np.zeros(spec.n_fixed))
        ofs = spec.n_fixed
    for comp in spec.components:
        r, c, v = structure_matrix(comp.kind, comp.size, comp.graph)
        rows_all.append(r + ofs)
        cols_all.append(c + ofs)
        base_all.append(v)
        tix_all.append(np.full(r.shape[0], comp.theta_index, dtype=np.int64))
        jit_all.append(np.where(r == c, spec.jitter, 0.0))
        ofs += comp.size
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    base = np.concatenate(base_all)[order]
    tix = np.concatenate(tix_all)[order]
    jit = np.concatenate(jit_all)[order]
    pattern = SparseSymMatrix.from_coo(spec.latent_dim, rows, cols, base)
    if pattern.nnz != rows.shape[0]:
        raise StructureError("duplicate entries in prior structure")
    return _PriorPlan(pattern.indptr, pattern.indices, base, tix, jit)


def assemble_prior_precision(spec: ModelSpec, theta) -> SparseSymMatrix:
    """Q_prior(theta): block diagonal, pattern independent of theta.

    Fixed-effect block is a constant diagonal; component blocks scale
    their structure matrix by exp(theta_c) and add the diagonal jitter
    that keeps intrinsic models proper.
    """
    hp = spec.hyper_params(theta)
    plan = spec._prior_plan
    with np.errstate(over="ignore"):
        # overflowing precisions produce inf entries; factorization reports
        # them as not positive definite, which callers treat as infeasible
        gains = np.where(plan.tix >= 0, np.exp(hp.theta[np.maximum(plan.tix, 0)]), 1.0)
    values = plan.base * gains + plan.jit
    out = SparseSymMatrix.__new__(SparseSymMatrix)
    out.n = spec.latent_dim
    out.indptr = plan.indptr
    out.indices = plan.indices
    out.data = values
    return out


def log_prior_hyper(spec: ModelSpec, theta) -> float:
    """Sum of log-gamma log densities of exp(theta_j), with the log-scale
    change-of-variable term theta_j."""
    hp = spec.hyper_params(theta)
    shapes = np.empty(spec.theta_dim)
    rates = np.empty(spec.theta_dim)
    if spec.noise_theta is not None:
        shapes[spec.noise_theta], rates[spec.noise_theta] = spec.noise_hyper
    for comp in spec.components:
        shapes[comp.theta_index] = comp.hyper_shape
        rates[comp.theta_index] = comp.hyper_rate
    th = hp.theta
    terms = shapes * np.log(rates) + shapes * th - rates * np.exp(th)
    terms -= np.array([math.lgamma(a) for a in shapes])
    return float(np.sum(terms))


def likelihood_terms(spec: ModelSpec, eta, y, theta):
    """Log likelihood and its first two derivatives in the linear predictor.

    Returns (loglik, d1, d2) where d1_i and d2_i differentiate the i-th
    observation's log density with respect to eta_i; offsets are applied
    here, so callers pass eta = A x.
    """
    eta = np.asarray(eta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if eta.shape != (spec.m,) or y.shape != (spec.m,):
        raise DimensionMismatch("eta and y must have length m")
    full = eta + spec.offsets
    if spec.family == "gaussian":
        if spec.noise_theta is not None:
            tau = float(np.exp(spec.hyper_params(theta).theta[spec.noise_theta]))
        else:
            tau = float(spec.noise_precision)
        r = y - full
        loglik = 0.5 * spec.m * (math.log(tau) - math.log(2.0 * math.pi)) - 0.5 * tau * float(r @ r)
        return loglik, tau * r, np.full(spec.m, -tau)
    # poisson, log link with exposures
    from scipy.special import gammaln

    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise StructureError("poisson observations must be finite and non-negative")
    mu = spec.exposures * np.exp(full)
    loglik = float(
        np.sum(y * full + y * np.log(spec.exposures)) - np.sum(mu) - np.sum(gammaln(y + 1.0))
    )
    return loglik, y - mu, -mu


def build_design(spec: ModelSpec):
    """Sparse m x n design A with eta = A x, blocks aligned to the spec."""
    import scipy.sparse as sp

    blocks = []
    if spec.intercept:
        blocks.append(sp.csr_matrix(np.ones((spec.m, 1))))
    if spec.Z.shape[1]:
        blocks.append(sp.csr_matrix(spec.Z))
    rows = np.arange(spec.m, dtype=np.int64)
    for comp in spec.components:
        blocks.append(
            sp.csr_matrix(
                (np.ones(spec.m), (rows, comp.obs_index)), shape=(spec.m, comp.size)
            )
        )
    A = sp.hstack(blocks, format="csr") if blocks else sp.csr_matrix((spec.m, 0))
    if A.shape[1] != spec.latent_dim:
        raise StructureError("design width disagrees with the latent dimension")
    counts = np.diff(A.indptr)
    if np.any(counts < 1):
        raise StructureError("every observation needs at least one design entry")
    return A


# ----------------------------------------------------------------------
# file formats


def read_graph_file(path) -> AdjacencyGraph:
    """Adjacency list file: first line n, then "i deg j1 ... jdeg" (0-based)."""
    text = Path(path).read_text().split()
    if not text:
        raise ConfigError("graph", f"{path}: empty file")
    n = int(text[0])
    pos = 1
    us, vs = [], []
    seen = set()
    while pos < len(text):
        i = int(text[pos])
        deg = int(text[pos + 1])
        pos += 2
        for k in range(deg):
            j = int(text[pos + k])
            if i == j:
                raise ConfigError("graph", f"{path}: self loop at {i}")
            us.append(i)
            vs.append(j)
        pos += deg
        seen.add(i)
    g = AdjacencyGraph.from_edges(n, np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64))
    return g


def write_graph_file(path, g: AdjacencyGraph):
    lines = [str(g.n)]
    for v in range(g.n):
        nb = g.neighbors(v)
        lines.append(" ".join([str(v), str(len(nb))] + [str(int(u)) for u in nb]))
    Path(path).write_text("\n".join(lines) + "\n")


def _hyper_pair(obj, key) -> tuple[float, float]:
    if obj is None:
        return DEFAULT_HYPER_SHAPE, DEFAULT_HYPER_RATE
    if not isinstance(obj, dict) or "shape" not in obj or "rate" not in obj:
        raise ConfigError(key, "hyper prior needs {shape, rate}")
    shape, rate = float(obj["shape"]), float(obj["rate"])
    if shape <= 0 or rate <= 0:
        raise ConfigError(key, "hyper prior shape and rate must be positive")
    return shape, rate


def read_model_file(path) -> dict:
    """Parse and validate the model JSON document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("model", f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("model", "top level must be an object")
    lik = doc.get("likelihood")
    if not isinstance(lik, dict) or "family" not in lik:
        raise ConfigError("likelihood", "missing likelihood.family")
    if lik["family"] not in ("gaussian", "poisson"):
        raise ConfigError("likelihood.family", f"unknown family {lik['family']!r}")
    comps = doc.get("components", [])
    if not isinstance(comps, list):
        raise ConfigError("components", "must be a list")
    for i, comp in enumerate(comps):
        if not isinstance(comp, dict) or "kind" not in comp or "name" not in comp:
            raise ConfigError(f"components[{i}]", "needs name and kind")
        if comp["kind"] not in COMPONENT_KINDS:
            raise ConfigError(f"components[{i}].kind", f"unknown kind {comp['kind']!r}")
        if comp["kind"] == "besag":
            if "graph_file" not in comp:
                raise ConfigError(f"components[{i}].graph_file", "besag needs graph_file")
        elif "size" not in comp:
            raise ConfigError(f"components[{i}].size", "needs size")
    fixed = doc.get("fixed", [])
    if not isinstance(fixed, list) or not all(isinstance(s, str) for s in fixed):
        raise ConfigError("fixed", "must be a list of covariate names")
    options = doc.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options", "must be an object")
    return doc


def read_data_file(path) -> dict[str, np.ndarray]:
    """CSV with a header; returns a dict of float columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError("data", f"{path}: empty file") from None
        columns: dict[str, list[float]] = {name: [] for name in header}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError("data", f"{path}:{lineno}: wrong column count")
            for name, cell in zip(header, row):
                try:
                    columns[name].append(float(cell))
                except ValueError:
                    raise ConfigError(
                        "data", f"{path}:{lineno}: non-numeric value in {name!r}"
                    ) from None
    return {name: np.asarray(vals) for name, vals in columns.items()}


def build_model(model_doc: dict, data: dict[str, np.ndarray], base_dir=".") -> tuple[ModelSpec, np.ndarray]:
    """Bind a validated model document to data columns."""
    if "y" not in data:
        raise ConfigError("data.y", "data file needs a y column")
    y = data["y"]
    m = y.shape[0]
    if m == 0:
        raise ConfigError("data", "no observations")
    lik = model_doc["likelihood"]
    family = lik["family"]
    options = model_doc.get("options", {})

    fixed = model_doc.get("fixed", [])
    Z_cols = []
    for name in fixed:
        if name not in data:
            raise ConfigError(f"fixed.{name}", "covariate column missing from data")
        Z_cols.append(data[name])
    Z = np.column_stack(Z_cols) if Z_cols else None

    components = []
    next_theta = 1 if (family == "gaussian" and "precision" not in lik) else 0
    for i, comp in enumerate(model_doc.get("components", [])):
        name = comp["name"]
        if name not in data:
            raise ConfigError(f"components[{i}].{name}", "index column missing from data")
        obs_index = data[name].astype(np.int64)
        graph = None
        if comp["kind"] == "besag":
            graph = read_graph_file(Path(base_dir) / comp["graph_file"])
            size = graph.n
        else:
            size = int(comp["size"])
        shape, rate = _hyper_pair(comp.get("hyper"), f"components[{i}].hyper")
        components.append(
            Component(
                name=name,
                kind=comp["kind"],
                size=size,
                theta_index=next_theta,
                obs_index=obs_index,
                graph=graph,
                hyper_shape=shape,
                hyper_rate=rate,
            )
        )
        next_theta += 1

    spec = ModelSpec(
        m=m,
        family=family,
        components=components,
        Z=Z,
        fixed_names=list(fixed),
        intercept=bool(options.get("intercept", True)),
        offsets=data.get("offset"),
        exposures=data.get("exposure"),
        noise_precision=(float(lik["precision"]) if "precision" in lik else None),
        noise_hyper=_hyper_pair(lik.get("hyper"), "likelihood.hyper"),
        fixed_prior_prec=float(options.get("fixed_prior_precision", DEFAULT_FIXED_PRIOR_PREC)),
        jitter=float(options.get("jitter", DEFAULT_JITTER)),
    )
    if family == "poisson" and np.any(y < 0):
        raise ConfigError("data.y", "poisson counts must be non-negative")
    return spec, y


def load_model(model_path, data_path) -> tuple[ModelSpec, np.ndarray]:
    doc = read_model_file(model_path)
    data = read_data_file(data_path)
    return build_model(doc, data, base_dir=Path(model_path).parent)
