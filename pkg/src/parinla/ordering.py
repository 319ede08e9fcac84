"""Fill-reducing orderings: minimum degree and recursive nested dissection.

Nested dissection also produces the separator tree that later drives the
task-parallel factorization and selected inversion.  Everything here runs
single threaded; outputs are immutable and freely shareable.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError
from .sparse import SparseSymMatrix


class AdjacencyGraph:
    """Undirected graph of the off-diagonal structure, CSR neighbor lists.

    Neighbor lists are sorted ascending and contain no self loops.
    """

    __slots__ = ("n", "indptr", "indices")

    def __init__(self, n: int, indptr, indices):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)

    @classmethod
    def from_edges(cls, n: int, u, v) -> "AdjacencyGraph":
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if np.any(u == v):
            raise StructureError("self loop in edge list")
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        if src.size:
            dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            keep = np.concatenate([[True], ~dup])
            src, dst = src[keep], dst[keep]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, dst)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    @property
    def n_edges(self) -> int:
        return int(self.indices.shape[0] // 2)

    def __repr__(self):
        return f"AdjacencyGraph(n={self.n}, edges={self.n_edges})"


def build_adjacency(Q: SparseSymMatrix) -> AdjacencyGraph:
    """Graph of Q: one vertex per row, one edge per strictly-lower nonzero."""
    cols = np.repeat(np.arange(Q.n, dtype=np.int64), np.diff(Q.indptr))
    off = Q.indices != cols
    return AdjacencyGraph.from_edges(Q.n, Q.indices[off], cols[off])


@dataclass(frozen=True)
class Permutation:
    """perm maps new index -> old index; iperm is its inverse."""

    perm: np.ndarray
    iperm: np.ndarray

    @classmethod
    def from_order(cls, order) -> "Permutation":
        perm = np.ascontiguousarray(order, dtype=np.int64)
        n = perm.shape[0]
        iperm = np.empty(n, dtype=np.int64)
        iperm[perm] = np.arange(n, dtype=np.int64)
        return cls(perm, iperm)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        idx = np.arange(n, dtype=np.int64)
        return cls(idx, idx.copy())

    @property
    def n(self) -> int:
        return int(self.perm.shape[0])

    def validate(self):
        n = self.n
        if sorted(self.perm.tolist()) != list(range(n)):
            raise StructureError("perm is not a bijection")
        if np.any(self.perm[self.iperm] != np.arange(n)):
            raise StructureError("iperm is not the inverse of perm")


@dataclass
class TreeNode:
    """One node of the separator tree.

    ``start:end`` is the node's own slice of the permuted order (the
    separator slice, or the whole block for a leaf).  ``span_start:end``
    covers the node and everything below it, which is contiguous by
    construction.
    """

    start: int
    end: int
    kind: str  # "leaf" | "separator"
    children: list[int] = field(default_factory=list)
    parent: int = -1
    span_start: int = -1


class SeparatorTree:
    def __init__(self, nodes: list[TreeNode], root: int, n: int):
        self.nodes = nodes
        self.root = root
        self.n = n

    def __len__(self):
        return len(self.nodes)

    def leaves(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if not nd.children]

    def depth(self) -> int:
        depth = [0] * len(self.nodes)
        best = 0
        stack = [self.root]
        while stack:
            i = stack.pop()
            best = max(best, depth[i])
            for c in self.nodes[i].children:
                depth[c] = depth[i] + 1
                stack.append(c)
        return best + 1 if self.nodes else 0

    @classmethod
    def single_block(cls, n: int) -> "SeparatorTree":
        node = TreeNode(start=0, end=n, kind="leaf", span_start=0)
        return cls([node], root=0, n=n)

    def validate(self):
        seen = np.zeros(self.n, dtype=bool)
        for nd in self.nodes:
            if nd.start > nd.end or nd.end > self.n:
                raise StructureError("node range out of bounds")
            if np.any(seen[nd.start : nd.end]):
                raise StructureError("overlapping node ranges")
            seen[nd.start : nd.end] = True
            if nd.children:
                lo = min(self.nodes[c].span_start for c in nd.children)
                hi = max(self.nodes[c].end for c in nd.children)
                if hi != nd.start or lo != nd.span_start:
                    raise StructureError("children must immediately precede the separator")
        if not np.all(seen):
            raise StructureError("node ranges do not cover the index set")


def minimum_degree_order(g: AdjacencyGraph) -> Permutation:
    """Greedy elimination; ties broken by smallest original index.

    Explicit fill bookkeeping on python sets; adequate for leaf blocks and
    desk-scale graphs.
    """
    return Permutation.from_order(_minimum_degree_sequence(g, np.arange(g.n)))


def _minimum_degree_sequence(g: AdjacencyGraph, vertices: np.ndarray) -> list[int]:
    """Eliminate the induced subgraph; returns original vertex ids."""
    verts = [int(v) for v in vertices]
    vset = set(verts)
    adj = {v: {int(u) for u in g.neighbors(v) if int(u) in vset} for v in verts}
    heap = [(len(adj[v]), v) for v in verts]
    heapq.heapify(heap)
    order: list[int] = []
    alive = set(verts)
    while heap:
        deg, v = heapq.heappop(heap)
        if v not in alive or deg != len(adj[v]):
            continue  # stale entry
        order.append(v)
        alive.discard(v)
        nbrs = adj.pop(v)
        for u in nbrs:
            adj[u].discard(v)
        nbrs = sorted(nbrs)
        for a_i, a in enumerate(nbrs):
            for b in nbrs[a_i + 1 :]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
        for u in nbrs:
            heapq.heappush(heap, (len(adj[u]), u))
    return order


def nested_dissection_order(
    g: AdjacencyGraph, leaf_cutoff: int = 64
) -> tuple[Permutation, SeparatorTree]:
    """Recursive vertex-separator ordering plus the induced separator tree.

    Each connected piece larger than ``leaf_cutoff`` is split by a BFS
    level-set separator; the two parts come first in the permuted order,
    the separator last.  Pieces at or below the cutoff are ordered by
    minimum degree and become leaf blocks.
    """
    if leaf_cutoff < 1:
        raise StructureError("leaf_cutoff must be at least 1")
    order: list[int] = []
    nodes: list[TreeNode] = []

    # Vertices adjacent to almost everything (design columns such as an
    # intercept produce them) defeat level-set bisection; peel them into
    # the root separator up front.
    degrees = np.diff(g.indptr)
    dense_cut = max(16, (g.n - 1) // 2)
    dense = np.flatnonzero(degrees >= dense_cut).astype(np.int64) if g.n > 32 else np.empty(0, np.int64)

    def new_node(start, end, kind, children):
        nd = TreeNode(start=start, end=end, kind=kind, children=children)
        nd.span_start = min([start] + [nodes[c].span_start for c in children])
        for c in children:
            nodes[c].parent = len(nodes)
        nodes.append(nd)
        return len(nodes) - 1

    def dissect(vertices: np.ndarray) -> list[int]:
        """Order the induced subgraph in place; returns top-level node ids."""
        if 0 < vertices.shape[0] <= leaf_cutoff:
            # below the cutoff nothing is split, connected or not
            return [_emit_leaf(np.sort(vertices))]
        tops: list[int] = []
        for comp in _connected_components(g, vertices):
            if comp.shape[0] <= leaf_cutoff:
                tops.append(_emit_leaf(comp))
                continue
            split = _level_set_separator(g, comp)
            if split is None:
                # inseparable (e.g. near-complete); fall back to one block
                tops.append(_emit_leaf(comp))
                continue
            sep, part_a, part_b = split
            kids = dissect(part_a) + dissect(part_b)
            start = len(order)
            order.extend(int(v) for v in sep)
            tops.append(new_node(start, len(order), "separator", kids))
        return tops

    def _emit_leaf(comp: np.ndarray) -> int:
        start = len(order)
        order.extend(_minimum_degree_sequence(g, comp))
        return new_node(start, len(order), "leaf", [])

    keep = np.setdiff1d(np.arange(g.n, dtype=np.int64), dense, assume_unique=True)
    tops = dissect(keep)
    if len(tops) == 1 and dense.size == 0:
        root = tops[0]
    else:
        # dense vertices (or a synthetic empty separator) over the subtrees
        start = len(order)
        order.extend(int(v) for v in dense)
        root = new_node(start, len(order), "separator", tops)
    perm = Permutation.from_order(np.asarray(order, dtype=np.int64))
    tree = SeparatorTree(nodes, root=root, n=g.n)
    return perm, tree


def _connected_components(g: AdjacencyGraph, vertices: np.ndarray) -> list[np.ndarray]:
    """Components of the induced subgraph, each sorted, in ascending-seed order."""
    member = np.zeros(g.n, dtype=bool)
    member[vertices] = True
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for v in np.sort(vertices):
        v = int(v)
        if seen[v]:
            continue
        comp = [v]
        seen[v] = True
        head = 0
        while head < len(comp):
            u = comp[head]
            head += 1
            for w in g.neighbors(u):
                w = int(w)
                if member[w] and not seen[w]:
                    seen[w] = True
                    comp.append(w)
        comps.append(np.sort(np.asarray(comp, dtype=np.int64)))
    return comps


def _bfs_levels(g: AdjacencyGraph, member: np.ndarray, root: int) -> list[list[int]]:
    level = {root: 0}
    levels = [[root]]
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for w in g.neighbors(u):
                w = int(w)
                if member[w] and w not in level:
                    level[w] = level[u] + 1
                    nxt.append(w)
        if nxt:
            levels.append(sorted(nxt))
        frontier = nxt
    return levels


def _pseudo_peripheral(g: AdjacencyGraph, comp: np.ndarray, member: np.ndarray) -> int:
    degs = np.array([g.degree(int(v)) for v in comp])
    root = int(comp[int(np.argmin(degs))])
    ecc = -1
    for _ in range(8):
        levels = _bfs_levels(g, member, root)
        if len(levels) - 1 <= ecc:
            break
        ecc = len(levels) - 1
        last = levels[-1]
        root = min(last, key=lambda v: (g.degree(v), v))
    return root


def _level_set_separator(g: AdjacencyGraph, comp: np.ndarray):
    """Split one connected component.

    Returns (separator, part_a, part_b) as sorted arrays, or None when the
    component has no usable level structure (diameter 0).
    """
    member = np.zeros(g.n, dtype=bool)
    member[comp] = True
    root = _pseudo_peripheral(g, comp, member)
    levels = _bfs_levels(g, member, root)
    h = len(levels) - 1
    if h < 1:
        return None

    sizes = np.array([len(lv) for lv in levels])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    # level whose lower side first reaches half the mass
    m_star = int(np.searchsorted(cum, total / 2.0))
    m_star = min(max(m_star, 1), h)

    level_of = np.full(g.n, -1, dtype=np.int64)
    for d, lv in enumerate(levels):
        for v in lv:
            level_of[v] = d

    candidates = sorted(range(1, h + 1), key=lambda m: (abs(m - m_star), m))
    for m in candidates:
        picked = _boundary_separator(g, levels, level_of, m)
        if picked is None:
            continue
        sep, side = picked
        below = [v for d in range(m) for v in levels[d]]
        at = [v for v in levels[m] if v not in sep]
        above = [v for d in range(m + 1, h + 1) for v in levels[d]]
        if side == "prev":
            part_a, part_b = below, at + above
        else:
            part_a, part_b = below + at, above
        if not part_a or not part_b:
            continue
        sep, part_a, part_b = _shrink_separator(g, sep, set(part_a), set(part_b))
        if sep and part_a and part_b:
            return (
                np.sort(np.asarray(list(sep), dtype=np.int64)),
                np.sort(np.asarray(list(part_a), dtype=np.int64)),
                np.sort(np.asarray(list(part_b), dtype=np.int64)),
            )
    return None


def _boundary_separator(g, levels, level_of, m):
    """Smaller boundary side of level m; None if both sides are empty."""
    prev_side = {v for v in levels[m] if any(level_of[int(w)] == m - 1 for w in g.neighbors(v))}
    next_side = (
        {v for v in levels[m] if any(level_of[int(w)] == m + 1 for w in g.neighbors(v))}
        if m < len(levels) - 1
        else set()
    )
    options = []
    if prev_side:
        options.append((len(prev_side), 0, prev_side, "prev"))
    if next_side:
        options.append((len(next_side), 1, next_side, "next"))
    if not options:
        return None
    options.sort(key=lambda o: (o[0], o[1]))
    _, _, sep, side = options[0]
    return set(sep), side


def _shrink_separator(g, sep: set, part_a: set, part_b: set):
    """Drop separator vertices whose outside neighbors lie on one side only."""
    changed = True
    while changed:
        changed = False
        for v in sorted(sep):
            touches_a = any(int(w) in part_a for w in g.neighbors(v))
            touches_b = any(int(w) in part_b for w in g.neighbors(v))
            if touches_a and touches_b:
                continue
            sep.discard(v)
            if touches_a:
                part_a.add(v)
            elif touches_b:
                part_b.add(v)
            else:
                (part_a if len(part_a) <= len(part_b) else part_b).add(v)
            changed = True
    return sep, part_a, part_b
