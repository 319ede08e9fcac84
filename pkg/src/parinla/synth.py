"""Seeded synthetic model and data generators.

Each generator samples ground-truth hyperparameters, draws the latent
field from the assembled prior (through the sparse sampler), then draws
observations from the likelihood.  All randomness comes from one 64-bit
seed through a counter-based generator, so outputs are byte-identical
across runs and platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cholesky import analyze, factorize, sample_gmrf
from .errors import ConfigError
from .model import ModelSpec, build_model, write_graph_file
from .ordering import AdjacencyGraph
from .sparse import SparseSymMatrix

KINDS = ("conjugate", "grid2d", "leukemia-like")


@dataclass
class SynthBundle:
    kind: str
    seed: int
    model_doc: dict
    data: dict[str, np.ndarray]
    truth: dict
    graph: AdjacencyGraph | None = None

    def build(self) -> tuple[ModelSpec, np.ndarray]:
        """Bind to a ModelSpec in memory, without touching the filesystem."""
        return _build_with_graph(self.model_doc, self.data, self.graph)


def _build_with_graph(doc, data, graph):
    from .model import Component

    if graph is None:
        return build_model(doc, data, base_dir=".")
    # mirror build_model but inject the graph object directly
    y = data["y"]
    lik = doc["likelihood"]
    options = doc.get("options", {})
    fixed = doc.get("fixed", [])
    Z = np.column_stack([data[name] for name in fixed]) if fixed else None
    next_theta = 1 if (lik["family"] == "gaussian" and "precision" not in lik) else 0
    comps = []
    for comp in doc.get("components", []):
        if comp["kind"] == "besag":
            size, g = graph.n, graph
        else:
            size, g = int(comp["size"]), None
        hyper = comp.get("hyper", {})
        comps.append(
            Component(
                name=comp["name"],
                kind=comp["kind"],
                size=size,
                theta_index=next_theta,
                obs_index=data[comp["name"]].astype(np.int64),
                graph=g,
                hyper_shape=float(hyper.get("shape", 1.0)),
                hyper_rate=float(hyper.get("rate", 5e-5)),
            )
        )
        next_theta += 1
    spec = ModelSpec(
        m=y.shape[0],
        family=lik["family"],
        components=comps,
        Z=Z,
        fixed_names=list(fixed),
        intercept=bool(options.get("intercept", True)),
        offsets=data.get("offset"),
        exposures=data.get("exposure"),
        noise_precision=(float(lik["precision"]) if "precision" in lik else None),
        fixed_prior_prec=float(options.get("fixed_prior_precision", 1e-3)),
        jitter=float(options.get("jitter", 1e-5)),
    )
    return spec, y


def lattice_graph(side: int) -> AdjacencyGraph:
    """4-neighbor grid graph on side x side vertices."""
    idx = np.arange(side * side, dtype=np.int64).reshape(side, side)
    us = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    vs = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return AdjacencyGraph.from_edges(side * side, us, vs)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def _sample_component(kind, size, graph, log_prec, rng, jitter=1e-5):
    """Draw one component from its (jittered) prior precision."""
    from .model import structure_matrix

    rows, cols, vals = structure_matrix(kind, size, graph)
    vals = np.exp(log_prec) * vals
    vals = vals + np.where(rows == cols, jitter, 0.0)
    Q = SparseSymMatrix.from_coo(size, rows, cols, vals)
    sym = analyze(Q, "nested-dissection" if size > 64 else "minimum-degree")
    fac = factorize(sym, Q)
    x = sample_gmrf(fac, rng.standard_normal(size))
    if kind in ("rw1", "rw2", "besag"):
        # intrinsic models: remove the nearly-free mean so observations
        # stay on a sane scale (synthesis-side choice only)
        x = x - x.mean()
    return x


def synth_conjugate(size: int = 1, seed: int = 0) -> SynthBundle:
    """Known-noise gaussian with one iid effect observed directly."""
    if size < 1:
        raise ConfigError("size", "size must be positive")
    rng = _rng(seed)
    theta_true = float(rng.normal(0.0, 0.7))
    u = _sample_component("iid", size, None, theta_true, rng)
    y = u + rng.standard_normal(size)
    model_doc = {
        "likelihood": {"family": "gaussian", "precision": 1.0},
        "fixed": [],
        "components": [
            {"name": "u", "kind": "iid", "size": size, "hyper": {"shape": 1.0, "rate": 5e-5}}
        ],
        "options": {"intercept": False},
    }
    data = {"y": y, "u": np.arange(size, dtype=np.float64)}
    truth = {"kind": "conjugate", "seed": seed, "size": size, "theta_true": [theta_true]}
    return SynthBundle("conjugate", seed, model_doc, data, truth)


def synth_grid2d(side: int = 30, seed: int = 0) -> SynthBundle:
    """Poisson counts over a lattice spatial effect plus an intercept."""
    if side < 3:
        raise ConfigError("size", "side must be at least 3")
    rng = _rng(seed)
    graph = lattice_graph(side)
    n_cells = side * side
    theta_true = float(np.log(2.0) + rng.normal(0.0, 0.3))
    beta0 = float(rng.normal(0.5, 0.2))
    u = _sample_component("besag", n_cells, graph, theta_true, rng)
    eta = beta0 + u
    exposure = np.full(n_cells, 25.0)  # enough events per cell to inform tau
    y = rng.poisson(exposure * np.exp(eta)).astype(np.float64)
    model_doc = {
        "likelihood": {"family": "poisson"},
        "fixed": [],
        "components": [
            {"name": "spatial", "kind": "besag", "graph_file": "graph.txt",
             "hyper": {"shape": 1.0, "rate": 5e-5}}
        ],
        "options": {"intercept": True},
    }
    data = {
        "y": y,
        "exposure": exposure,
        "spatial": np.arange(n_cells, dtype=np.float64),
    }
    truth = {
        "kind": "grid2d",
        "seed": seed,
        "side": side,
        "theta_true": [theta_true],
        "beta0_true": beta0,
    }
    return SynthBundle("grid2d", seed, model_doc, data, truth, graph=graph)


def synth_leukemia_like(
    side: int = 63, m: int = 6174, n_fixed: int = 5, seed: int = 0
) -> SynthBundle:
    """Gaussian observations over spatial + unstructured region effects.

    Three hyperparameters (noise, spatial, iid precisions), a handful of
    fixed effects, and a latent field of roughly twice the region count.
    """
    if side < 4 or m < 10:
        raise ConfigError("size", "need side >= 4 and m >= 10")
    rng = _rng(seed)
    graph = lattice_graph(side)
    regions = side * side
    theta_true = [
        float(np.log(2.0) + rng.normal(0.0, 0.2)),  # noise
        float(np.log(1.0) + rng.normal(0.0, 0.3)),  # spatial
        float(np.log(4.0) + rng.normal(0.0, 0.3)),  # iid
    ]
    beta0 = float(rng.normal(0.3, 0.2))
    beta = rng.normal(0.0, 0.5, n_fixed)
    Z = rng.normal(0.0, 1.0, (m, n_fixed))
    region = rng.integers(0, regions, size=m)
    # the unstructured effect uses its own grouping, otherwise it is
    # collinear with the spatial field and the precision split between
    # them is not identified
    group = rng.integers(0, regions, size=m)
    u_spatial = _sample_component("besag", regions, graph, theta_true[1], rng)
    u_iid = _sample_component("iid", regions, None, theta_true[2], rng)
    eta = beta0 + Z @ beta + u_spatial[region] + u_iid[group]
    sd_noise = float(np.exp(-0.5 * theta_true[0]))
    y = eta + sd_noise * rng.standard_normal(m)
    fixed_names = [f"z{i}" for i in range(n_fixed)]
    model_doc = {
        "likelihood": {"family": "gaussian", "hyper": {"shape": 1.0, "rate": 5e-5}},
        "fixed": fixed_names,
        "components": [
            {"name": "spatial", "kind": "besag", "graph_file": "graph.txt",
             "hyper": {"shape": 1.0, "rate": 5e-5}},
            {"name": "group_iid", "kind": "iid", "size": regions,
             "hyper": {"shape": 1.0, "rate": 5e-5}},
        ],
        "options": {"intercept": True},
    }
    data = {"y": y}
    for i, name in enumerate(fixed_names):
        data[name] = Z[:, i]
    data["spatial"] = region.astype(np.float64)
    data["group_iid"] = group.astype(np.float64)
    truth = {
        "kind": "leukemia-like",
        "seed": seed,
        "side": side,
        "m": m,
        "theta_true": theta_true,
        "beta0_true": beta0,
        "beta_true": beta.tolist(),
    }
    return SynthBundle("leukemia-like", seed, model_doc, data, truth, graph=graph)


def make_synth(kind: str, **kw) -> SynthBundle:
    if kind == "conjugate":
        return synth_conjugate(size=kw.get("size", 1), seed=kw.get("seed", 0))
    if kind == "grid2d":
        return synth_grid2d(side=kw.get("size", 30), seed=kw.get("seed", 0))
    if kind == "leukemia-like":
        return synth_leukemia_like(
            side=kw.get("size", 63),
            m=kw.get("m", 6174),
            seed=kw.get("seed", 0),
        )
    raise ConfigError("kind", f"unknown synthetic kind {kind!r}; expected one of {KINDS}")


def write_synth(out_dir, bundle: SynthBundle) -> dict:
    """Write model.json, data.csv, truth.json (and graph.txt) to a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    model_path.write_text(json.dumps(bundle.model_doc, indent=2, sort_keys=True) + "\n")
    if bundle.graph is not None:
        write_graph_file(out / "graph.txt", bundle.graph)
    names = list(bundle.data.keys())
    m = bundle.data["y"].shape[0]
    lines = [",".join(names)]
    for i in range(m):
        lines.append(",".join(repr(float(bundle.data[name][i])) for name in names))
    (out / "data.csv").write_text("\n".join(lines) + "\n")
    (out / "truth.json").write_text(json.dumps(bundle.truth, indent=2, sort_keys=True) + "\n")
    return {
        "model": str(model_path),
        "data": str(out / "data.csv"),
        "truth": str(out / "truth.json"),
        "graph": str(out / "graph.txt") if bundle.graph is not None else None,
    }
