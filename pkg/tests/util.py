"""Shared test helpers: independent oracles and random GMRF instances.

The oracles use dense numpy linear algebra or plain scalar iteration so
they share no code path with the sparse machinery they check.
"""

from __future__ import annotations

import numpy as np

from parinla.ordering import AdjacencyGraph
from parinla.sparse import SparseSymMatrix

# ----------------------------------------------------------------------
# dense oracles


def dense_logdet(M: np.ndarray) -> float:
    L = np.linalg.cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def symbolic_fill_count(M_pattern: np.ndarray) -> int:
    """nnz of the Cholesky factor of a dense boolean pattern.

    Boolean Gaussian elimination in the given order: eliminating column k
    connects all its below-diagonal neighbors pairwise.  Returns the
    count of structural nonzeros in the lower triangle (diagonal
    included).  Independent of the elimination-tree machinery.
    """
    B = np.asarray(M_pattern, dtype=bool).copy()
    B |= B.T
    np.fill_diagonal(B, True)
    n = B.shape[0]
    for k in range(n):
        rows = np.flatnonzero(B[k + 1 :, k]) + k + 1
        if rows.size:
            B[np.ix_(rows, rows)] = True
    return int(np.sum(np.tril(B)))


def pattern_entries(sym, values):
    """Iterate (row, col, value) of a factor-shaped array in permuted order."""
    cols = np.repeat(np.arange(sym.n), np.diff(sym.Lp))
    for pos in range(sym.nnz):
        yield int(sym.Li[pos]), int(cols[pos]), float(values[pos])


def scalar_newton(gprime, gsecond, x0=0.0, tol=1e-13, max_iter=200):
    """Damped scalar Newton on g'(x) = 0 for a concave g."""
    x = float(x0)
    for _ in range(max_iter):
        step = gprime(x) / -gsecond(x)
        if not np.isfinite(step):
            raise RuntimeError("scalar newton broke down")
        # damp until |g'| decreases
        alpha = 1.0
        for _ in range(60):
            x_new = x + alpha * step
            if abs(gprime(x_new)) <= abs(gprime(x)) or alpha < 1e-12:
                break
            alpha *= 0.5
        x = x_new
        if abs(step) * alpha < tol:
            return x
    return x


def golden_section(f, lo, hi, tol=1e-10):
    """Scalar minimizer on [lo, hi] by golden-section search."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def dense_conditional_posterior(Q_prior: np.ndarray, A: np.ndarray, R: np.ndarray, y: np.ndarray):
    """Gaussian conditional posterior N((Q + A'RA)^{-1} A'Ry, (Q + A'RA)^{-1})."""
    Qc = Q_prior + A.T @ R @ A
    cov = np.linalg.inv(Qc)
    mean = np.linalg.solve(Qc, A.T @ R @ y)
    return mean, cov


def dense_neg_log_marginal(Q_prior: np.ndarray, A: np.ndarray, tau: float, y: np.ndarray) -> float:
    """-log N(y; 0, R^{-1} + A Q^{-1} A') for gaussian noise precision tau."""
    m = y.shape[0]
    S = np.eye(m) / tau + A @ np.linalg.inv(Q_prior) @ A.T
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    return 0.5 * (m * np.log(2.0 * np.pi) + logdet + float(y @ np.linalg.solve(S, y)))


# ----------------------------------------------------------------------
# random GMRF instances


def path_graph(n: int) -> AdjacencyGraph:
    idx = np.arange(n - 1, dtype=np.int64)
    return AdjacencyGraph.from_edges(n, idx, idx + 1)


def grid_graph(side: int) -> AdjacencyGraph:
    idx = np.arange(side * side, dtype=np.int64).reshape(side, side)
    us = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    vs = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return AdjacencyGraph.from_edges(side * side, us, vs)


def random_connected_graph(n: int, extra_edges: int, rng) -> AdjacencyGraph:
    """Random spanning tree plus extra edges; always connected."""
    us, vs = [], []
    for v in range(1, n):
        us.append(int(rng.integers(0, v)))
        vs.append(v)
    seen = {(min(u, v), max(u, v)) for u, v in zip(us, vs)}
    for _ in range(extra_edges * 3):
        if len(seen) - (n - 1) >= extra_edges:
            break
        a, b = int(rng.integers(0, n)), int(rng.integers(0, n))
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        us.append(key[0])
        vs.append(key[1])
    return AdjacencyGraph.from_edges(n, np.array(us), np.array(vs))


def structure_dense(kind: str, size: int, graph=None) -> np.ndarray:
    """Dense roughness structure, independent of the model module."""
    if kind == "iid":
        return np.eye(size)
    if kind == "rw1":
        D = np.zeros((size - 1, size))
        for i in range(size - 1):
            D[i, i], D[i, i + 1] = -1.0, 1.0
        return D.T @ D
    if kind == "rw2":
        D = np.zeros((size - 2, size))
        for i in range(size - 2):
            D[i, i], D[i, i + 1], D[i, i + 2] = 1.0, -2.0, 1.0
        return D.T @ D
    if kind == "besag":
        M = np.zeros((size, size))
        for v in range(size):
            nb = graph.neighbors(v)
            M[v, v] = len(nb)
            for u in nb:
                M[v, int(u)] = -1.0
        return M
    raise ValueError(kind)


def random_gmrf_matrix(rng, n_lo=50, n_hi=500, couple=True):
    """One random block precision (iid / rw1 / rw2 / besag mixture).

    Moderately conditioned by construction: intrinsic blocks get a
    diagonal shift in [0.05, 1].  With ``couple`` a sparse observation
    Gram term ties the blocks together, mimicking a conditional
    precision.  Returns (SparseSymMatrix, dense copy).
    """
    kinds = ["iid", "rw1", "rw2", "besag"]
    n_blocks = int(rng.integers(1, 4))
    blocks = []
    total = 0
    target = int(rng.integers(n_lo, n_hi + 1))
    for b in range(n_blocks):
        size = max(4, int(rng.integers(target // (2 * n_blocks), target // n_blocks + 5)))
        kind = kinds[int(rng.integers(0, len(kinds)))]
        graph = random_connected_graph(size, size // 2, rng) if kind == "besag" else None
        R = structure_dense(kind, size, graph)
        scale = float(np.exp(rng.normal(0.0, 0.7)))
        shift = float(rng.uniform(0.05, 1.0))
        blocks.append(scale * R + shift * np.eye(size))
        total += size
    M = np.zeros((total, total))
    ofs = 0
    for B in blocks:
        k = B.shape[0]
        M[ofs : ofs + k, ofs : ofs + k] = B
        ofs += k
    if couple and total >= 8:
        m_obs = int(rng.integers(total // 2, total))
        A = np.zeros((m_obs, total))
        for i in range(m_obs):
            js = rng.choice(total, size=int(rng.integers(1, 4)), replace=False)
            A[i, js] = rng.normal(0.0, 1.0, js.shape[0])
        w = rng.uniform(0.1, 2.0, m_obs)
        M = M + (A.T * w) @ A
        M[np.abs(M) < 1e-12] = 0.0
        M = 0.5 * (M + M.T)
    Q = SparseSymMatrix.from_dense(M)
    return Q, Q.to_dense()
