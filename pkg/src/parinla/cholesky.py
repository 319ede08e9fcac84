"""Sparse Cholesky: symbolic analysis, numeric factorization, triangular
solves, sampling and Takahashi selected inversion.

The symbolic step is done once per sparsity pattern; numeric passes reuse
it for every new set of values.  Factorization and selected inversion are
task parallel over the separator tree: sibling subtrees factorize
independently (children before their separator), and the inversion runs
the same tree in reverse (separator before its children).  Tasks own
disjoint column ranges, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NotPositiveDefinite, StructureError
from .ordering import (
    Permutation,
    SeparatorTree,
    build_adjacency,
    minimum_degree_order,
    nested_dissection_order,
)
from .runtime import SERIAL, ThreadBudget, physical_cores, run_tree_tasks
from .sparse import SparseSymMatrix

# relative pivot breakdown threshold: fail when L_jj^2 <= tol * Q_jj
REL_PIVOT_TOL = 1e-13


def _effective_workers(l2: int, n_tasks: int) -> int:
    # The budget is an upper bound; oversubscribing CPU-bound kernels past
    # the physical cores only adds switching cost, so never spawn more.
    return max(1, min(l2, physical_cores(), n_tasks))

ORDERINGS = ("natural", "minimum-degree", "nested-dissection")


@dataclass
class SymbolicFactor:
    """One-time structural analysis of a sparsity pattern."""

    n: int
    permutation: Permutation
    tree: SeparatorTree
    parent: np.ndarray  # elimination tree over permuted indices
    Lp: np.ndarray
    Li: np.ndarray
    # strictly-lower row form of L with storage positions
    rowptr: np.ndarray = field(repr=False, default=None)
    rowcol: np.ndarray = field(repr=False, default=None)
    rowpos: np.ndarray = field(repr=False, default=None)
    # permuted row form of Q with source indices into the value array
    arowptr: np.ndarray = field(repr=False, default=None)
    arowcol: np.ndarray = field(repr=False, default=None)
    asrc: np.ndarray = field(repr=False, default=None)
    adiag: np.ndarray = field(repr=False, default=None)
    q_indptr: np.ndarray = field(repr=False, default=None)
    q_indices: np.ndarray = field(repr=False, default=None)
    ordering: str = "natural"
    # flattened tree arrays for the schedulers
    node_parent: list[int] = field(repr=False, default_factory=list)
    node_children: list[list[int]] = field(repr=False, default_factory=list)
    node_range: list[tuple[int, int]] = field(repr=False, default_factory=list)

    @property
    def nnz(self) -> int:
        return int(self.Lp[self.n])

    def stats(self) -> dict:
        """Diagnostic summary (fill, tree shape) as plain JSON-able data."""
        nnz_q = int(self.q_indptr[self.n])
        return {
            "n": self.n,
            "nnz_lower_input": nnz_q,
            "nnz_factor": self.nnz,
            "fill_ratio": self.nnz / nnz_q,
            "tree_nodes": len(self.node_range),
            "tree_depth": self.tree.depth(),
            "ordering": self.ordering,
        }


def analyze(
    Q: SparseSymMatrix,
    ordering: str = "nested-dissection",
    leaf_cutoff: int = 64,
) -> SymbolicFactor:
    """Choose a fill-reducing permutation and compute the pattern of L.

    ``ordering`` is one of "natural", "minimum-degree" or
    "nested-dissection"; only the last produces a separator tree with more
    than one node, the others factorize as a single block.
    """
    if ordering not in ORDERINGS:
        raise StructureError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")
    n = Q.n
    if ordering == "natural":
        perm = Permutation.identity(n)
        tree = SeparatorTree.single_block(n)
    elif ordering == "minimum-degree":
        perm = minimum_degree_order(build_adjacency(Q))
        tree = SeparatorTree.single_block(n)
    else:
        perm, tree = nested_dissection_order(build_adjacency(Q), leaf_cutoff=leaf_cutoff)

    arowptr, arowcol, asrc, adiag = _permuted_row_form(Q, perm)
    parent = kernels.etree_from_rows(n, arowptr, arowcol)
    Lp, Li = kernels.symbolic_pattern(n, arowptr, arowcol, parent)
    rowptr, rowcol, rowpos = kernels.lower_row_form(n, Lp, Li)

    sym = SymbolicFactor(
        n=n,
        permutation=perm,
        tree=tree,
        parent=parent,
        Lp=Lp,
        Li=Li,
        rowptr=rowptr,
        rowcol=rowcol,
        rowpos=rowpos,
        arowptr=arowptr,
        arowcol=arowcol,
        asrc=asrc,
        adiag=adiag,
        q_indptr=Q.indptr,
        q_indices=Q.indices,
        ordering=ordering,
    )
    sym.node_parent = [nd.parent for nd in tree.nodes]
    sym.node_children = [list(nd.children) for nd in tree.nodes]
    sym.node_range = [(nd.start, nd.end) for nd in tree.nodes]
    return sym


def _permuted_row_form(Q: SparseSymMatrix, perm: Permutation):
    """Row form of the permuted lower triangle, with indices into Q.data.

    Entry t of the output maps position asrc[t] of the original value array
    to permuted coordinates (row r, col arowcol[t]); adiag[r] is the source
    of the permuted diagonal entry of row r.
    """
    n = Q.n
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(Q.indptr))
    rows = Q.indices
    ip = perm.iperm
    rp = ip[rows]
    cp = ip[cols]
    r = np.maximum(rp, cp)
    c = np.minimum(rp, cp)
    pos = np.arange(rows.shape[0], dtype=np.int64)
    on_diag = r == c
    adiag = np.empty(n, dtype=np.int64)
    adiag[r[on_diag]] = pos[on_diag]
    r_off, c_off, pos_off = r[~on_diag], c[~on_diag], pos[~on_diag]
    order = np.lexsort((c_off, r_off))
    r_off, c_off, pos_off = r_off[order], c_off[order], pos_off[order]
    arowptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(arowptr, r_off + 1, 1)
    np.cumsum(arowptr, out=arowptr)
    return arowptr, c_off, pos_off, adiag


@dataclass
class CholeskyFactor:
    """Numeric factor L on the symbolic pattern, plus its log-determinant."""

    symbolic: SymbolicFactor
    values: np.ndarray
    log_det: float

    @property
    def n(self) -> int:
        return self.symbolic.n

    def factor_diagonal(self) -> np.ndarray:
        return self.values[self.symbolic.Lp[:-1]]

    def to_scipy_lower(self):
        """L in scipy CSC, permuted ordering."""
        import scipy.sparse as sp

        s = self.symbolic
        return sp.csc_matrix(
            (self.values, s.Li, s.Lp), shape=(s.n, s.n)
        )


@dataclass
class SelectedInverse:
    """Entries of Q^{-1} on the pattern of L, plus re-permuted variances."""

    symbolic: SymbolicFactor
    values: np.ndarray
    marginal_variances: np.ndarray  # diag(Sigma) in the original ordering
    entries_computed: int = 0

    def entry(self, i: int, j: int) -> float:
        """Sigma_ij in original coordinates; (i, j) must be on the pattern."""
        s = self.symbolic
        ip = s.permutation.iperm
        r, c = int(ip[i]), int(ip[j])
        if r < c:
            r, c = c, r
        if r == c:
            return float(self.values[s.Lp[r]])
        pos = int(kernels._entry_position(s.Lp, s.Li, r, c))
        if pos < 0:
            raise StructureError(f"({i}, {j}) is not on the factor pattern")
        return float(self.values[pos])


def _pruned_tasks(sym: SymbolicFactor, n_workers: int):
    """Coarsen the separator tree into a task forest.

    Subtrees whose estimated factor work falls below a chunk threshold
    collapse into one task covering their contiguous span; running a span
    serially (ascending for factorization, descending for inversion) is a
    valid schedule for everything inside it.  Returns (parents, children,
    ranges) for the scheduler.
    """
    nodes = sym.tree.nodes
    colsz = np.diff(sym.Lp).astype(np.float64)
    prefix = np.concatenate([[0.0], np.cumsum(colsz * colsz)])

    own = [prefix[nd.end] - prefix[nd.start] for nd in nodes]
    sub = list(own)
    for i in _postorder(nodes, sym.tree.root):
        for c in nodes[i].children:
            sub[i] += sub[c]
    total = sub[sym.tree.root]
    threshold = max(total / (n_workers * 24.0), 2.0e5)

    parents: list[int] = []
    children: list[list[int]] = []
    ranges: list[tuple[int, int]] = []

    def emit(node: int, parent_task: int) -> int:
        nd = nodes[node]
        tid = len(parents)
        parents.append(parent_task)
        children.append([])
        if parent_task >= 0:
            children[parent_task].append(tid)
        if sub[node] <= threshold or not nd.children:
            ranges.append((nd.span_start, nd.end))
        else:
            ranges.append((nd.start, nd.end))
            for c in nd.children:
                emit(c, tid)
        return tid

    emit(sym.tree.root, -1)
    return parents, children, ranges


def _postorder(nodes, root) -> list[int]:
    out: list[int] = []
    stack = [root]
    while stack:
        i = stack.pop()
        out.append(i)
        stack.extend(nodes[i].children)
    out.reverse()
    return out


def _check_structure(sym: SymbolicFactor, Q: SparseSymMatrix):
    if Q.n != sym.n:
        raise DimensionMismatch("matrix size differs from the analyzed pattern")
    same = Q.indptr is sym.q_indptr and Q.indices is sym.q_indices
    if not same and not (
        np.array_equal(Q.indptr, sym.q_indptr) and np.array_equal(Q.indices, sym.q_indices)
    ):
        raise StructureError("matrix pattern differs from the analyzed pattern")


def factorize(
    sym: SymbolicFactor, Q: SparseSymMatrix, budget: ThreadBudget = SERIAL
) -> CholeskyFactor:
    """Numeric Cholesky of Q on the analyzed pattern.

    Sibling subtrees of the separator tree run as independent tasks under
    ``budget.l2`` workers; a separator waits for both children.  Output is
    bit-identical for any worker count.
    """
    _check_structure(sym, Q)
    n = sym.n
    Lx = np.zeros(sym.nnz)
    qvals = Q.data
    n_workers = _effective_workers(budget.l2, len(sym.node_range))

    if n_workers == 1 or len(sym.node_range) <= 1:
        x = np.zeros(n)
        fail = kernels.factor_range(
            0, n, sym.Lp, sym.Li, Lx, sym.rowptr, sym.rowcol, sym.rowpos,
            sym.arowptr, sym.arowcol, sym.asrc, sym.adiag, qvals, x, REL_PIVOT_TOL,
        )
        if fail >= 0:
            raise NotPositiveDefinite(sym.permutation.perm[fail])
    else:
        parents, children, ranges = _pruned_tasks(sym, n_workers)
        workspaces = [np.zeros(n) for _ in range(n_workers)]

        def run_node(node: int, slot: int):
            start, end = ranges[node]
            fail = kernels.factor_range(
                start, end, sym.Lp, sym.Li, Lx, sym.rowptr, sym.rowcol, sym.rowpos,
                sym.arowptr, sym.arowcol, sym.asrc, sym.adiag, qvals,
                workspaces[slot], REL_PIVOT_TOL,
            )
            if fail >= 0:
                raise NotPositiveDefinite(sym.permutation.perm[fail])

        run_tree_tasks(parents, children, run_node, n_workers)

    log_det = 2.0 * float(np.sum(np.log(Lx[sym.Lp[:-1]])))
    return CholeskyFactor(symbolic=sym, values=Lx, log_det=log_det)


def solve(fac: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve Q x = b; input and output are in the original ordering."""
    sym = fac.symbolic
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (sym.n,):
        raise DimensionMismatch(f"b must have length {sym.n}")
    work = b[sym.permutation.perm].copy()
    kernels.solve_lower(sym.Lp, sym.Li, fac.values, work)
    kernels.solve_lower_t(sym.Lp, sym.Li, fac.values, work)
    out = np.empty(sym.n)
    out[sym.permutation.perm] = work
    return out


def sample_gmrf(fac: CholeskyFactor, z: np.ndarray) -> np.ndarray:
    """Turn iid standard normals into a draw with precision Q.

    Solves L^T x = z in factor coordinates and returns x in the original
    ordering; with z ~ N(0, I) the result is N(0, Q^{-1}).
    """
    sym = fac.symbolic
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (sym.n,):
        raise DimensionMismatch(f"z must have length {sym.n}")
    work = z.copy()
    kernels.solve_lower_t(sym.Lp, sym.Li, fac.values, work)
    out = np.empty(sym.n)
    out[sym.permutation.perm] = work
    return out


def selected_inverse(fac: CholeskyFactor, budget: ThreadBudget = SERIAL) -> SelectedInverse:
    """Entries of Sigma = Q^{-1} on the pattern of L.

    Columns are processed from the last to the first; the parallel
    schedule is the reverse of factorization (a separator's entries are
    final before its children start).  Only pattern entries are computed;
    the diagonal comes back re-permuted to the original ordering.
    """
    sym = fac.symbolic
    n = sym.n
    Sx = np.zeros(sym.nnz)
    Lx = fac.values
    n_workers = _effective_workers(budget.l2, len(sym.node_range))

    if n_workers == 1 or len(sym.node_range) <= 1:
        zwork = np.zeros(n)
        stamp = np.full(n, -1, dtype=np.int64)
        count = kernels.selinv_range(
            0, n, sym.Lp, sym.Li, Lx, Sx, sym.rowptr, sym.rowcol, sym.rowpos,
            zwork, stamp,
        )
        counts = [count]
    else:
        parents, children, ranges = _pruned_tasks(sym, n_workers)
        zworks = [np.zeros(n) for _ in range(n_workers)]
        stamps = [np.full(n, -1, dtype=np.int64) for _ in range(n_workers)]
        counts = [0] * len(ranges)

        def run_node(node: int, slot: int):
            start, end = ranges[node]
            counts[node] = kernels.selinv_range(
                start, end, sym.Lp, sym.Li, Lx, Sx, sym.rowptr, sym.rowcol,
                sym.rowpos, zworks[slot], stamps[slot],
            )

        run_tree_tasks(parents, children, run_node, n_workers, root_first=True)

    var = np.empty(n)
    var[sym.permutation.perm] = Sx[sym.Lp[:-1]]
    return SelectedInverse(
        symbolic=sym,
        values=Sx,
        marginal_variances=var,
        entries_computed=int(sum(counts)),
    )


def selected_inverse_unnormalized(fac: CholeskyFactor) -> SelectedInverse:
    """Cross-check route: the same recursion on raw factor entries.

    Serial by design; used to validate :func:`selected_inverse` (the two
    coincide because L is the normalized column scaled by its pivot).
    """
    sym = fac.symbolic
    n = sym.n
    Sx = np.zeros(sym.nnz)
    count = kernels.selinv_range_unnormalized(0, n, sym.Lp, sym.Li, fac.values, Sx)
    var = np.empty(n)
    var[sym.permutation.perm] = Sx[sym.Lp[:-1]]
    return SelectedInverse(
        symbolic=sym, values=Sx, marginal_variances=var, entries_computed=int(count)
    )


def log_det_only(fac: CholeskyFactor) -> float:
    return fac.log_det


def gaussian_log_density_at_mode(fac: CholeskyFactor) -> float:
    """log of a Gaussian with precision Q evaluated at its own mean."""
    return 0.5 * fac.log_det - 0.5 * fac.n * math.log(2.0 * math.pi)
