"""Numba kernels for the sparse Cholesky machinery.

All numeric kernels are compiled ``nogil`` so separator-tree tasks running
on Python threads execute concurrently.  Every kernel writes a disjoint,
position-addressed slice of the shared output arrays; nothing here takes a
lock.  The scatter workspace ``x`` must be all zeros on entry and is
restored to zeros before returning (including on pivot failure).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def etree_from_rows(n, rowptr, rowcol):
    """Elimination tree parents from the strictly-lower row pattern of A."""
    parent = np.full(n, -1, np.int64)
    ancestor = np.full(n, -1, np.int64)
    for j in range(n):
        for t in range(rowptr[j], rowptr[j + 1]):
            k = rowcol[t]
            while k != -1 and k < j:
                nxt = ancestor[k]
                ancestor[k] = j
                if nxt == -1:
                    parent[k] = j
                k = nxt
    return parent


@njit(cache=True)
def symbolic_pattern(n, rowptr, rowcol, parent):
    """Column pattern of L via per-row reachability in the elimination tree.

    Returns (Lp, Li) with the diagonal first in every column and rows
    ascending (rows are appended in increasing j).
    """
    mark = np.full(n, -1, np.int64)
    colcount = np.ones(n, np.int64)
    for j in range(n):
        mark[j] = j
        for t in range(rowptr[j], rowptr[j + 1]):
            k = rowcol[t]
            while mark[k] != j:
                mark[k] = j
                colcount[k] += 1
                k = parent[k]
    Lp = np.zeros(n + 1, np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + colcount[j]
    Li = np.empty(Lp[n], np.int64)
    nxt = np.empty(n, np.int64)
    for j in range(n):
        Li[Lp[j]] = j
        nxt[j] = Lp[j] + 1
    for j in range(n):
        mark[j] = -1
    for j in range(n):
        mark[j] = j
        for t in range(rowptr[j], rowptr[j + 1]):
            k = rowcol[t]
            while mark[k] != j:
                mark[k] = j
                Li[nxt[k]] = j
                nxt[k] += 1
                k = parent[k]
    return Lp, Li


@njit(cache=True)
def lower_row_form(n, Lp, Li):
    """Strictly-lower pattern of L in row form with storage positions.

    rowcol holds the columns of row j ascending; rowpos the index of that
    entry inside (Lp, Li) storage.
    """
    rowptr = np.zeros(n + 1, np.int64)
    for j in range(n):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            rowptr[Li[p] + 1] += 1
    for j in range(n):
        rowptr[j + 1] += rowptr[j]
    nnz_off = Lp[n] - n
    rowcol = np.empty(nnz_off, np.int64)
    rowpos = np.empty(nnz_off, np.int64)
    w = rowptr[:-1].copy()
    for k in range(n):
        for p in range(Lp[k] + 1, Lp[k + 1]):
            j = Li[p]
            t = w[j]
            rowcol[t] = k
            rowpos[t] = p
            w[j] += 1
    return rowptr, rowcol, rowpos


@njit(cache=True, nogil=True)
def factor_range(
    start,
    end,
    Lp,
    Li,
    Lx,
    rowptr,
    rowcol,
    rowpos,
    arowptr,
    arowcol,
    asrc,
    adiag,
    qvals,
    x,
    rel_pivot_tol,
):
    """Up-looking Cholesky of permuted rows [start, end).

    Requires all rows referenced below ``start`` to be final, which the
    separator-tree schedule (children before parent) guarantees.  Returns
    the failing permuted row on a non-positive pivot, else -1.
    """
    for j in range(start, end):
        for t in range(arowptr[j], arowptr[j + 1]):
            x[arowcol[t]] = qvals[asrc[t]]
        qjj = qvals[adiag[j]]
        d = qjj
        for t in range(rowptr[j], rowptr[j + 1]):
            k = rowcol[t]
            xk = x[k]
            x[k] = 0.0
            ljk = xk / Lx[Lp[k]]
            pend = rowpos[t]
            for p in range(Lp[k] + 1, pend):
                x[Li[p]] -= Lx[p] * ljk
            Lx[pend] = ljk
            d -= ljk * ljk
        if qjj <= 0.0 or not (d > rel_pivot_tol * qjj):
            for t in range(rowptr[j], rowptr[j + 1]):
                x[rowcol[t]] = 0.0
            return j
        Lx[Lp[j]] = np.sqrt(d)
    return -1


@njit(cache=True, nogil=True)
def solve_lower(Lp, Li, Lx, b):
    """In-place forward solve L y = b."""
    n = b.shape[0]
    for j in range(n):
        yj = b[j] / Lx[Lp[j]]
        b[j] = yj
        for p in range(Lp[j] + 1, Lp[j + 1]):
            b[Li[p]] -= Lx[p] * yj


@njit(cache=True, nogil=True)
def solve_lower_t(Lp, Li, Lx, b):
    """In-place backward solve L^T x = b."""
    n = b.shape[0]
    for j in range(n - 1, -1, -1):
        s = b[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * b[Li[p]]
        b[j] = s / Lx[Lp[j]]


@njit(cache=True, inline="always")
def _entry_position(Lp, Li, row, col):
    """Storage index of (row, col), row > col, in the factor pattern."""
    lo = Lp[col] + 1
    hi = Lp[col + 1] - 1
    while lo <= hi:
        mid = (lo + hi) >> 1
        r = Li[mid]
        if r == row:
            return mid
        if r < row:
            lo = mid + 1
        else:
            hi = mid - 1
    return np.int64(-1)


@njit(cache=True, nogil=True)
def selinv_range(start, end, Lp, Li, Lx, Sx, rowptr, rowcol, rowpos, zwork, stamp):
    """Takahashi recursion over columns [start, end), descending.

    Uses the normalized columns V = L D^{-1/2}; every entry of Sigma it
    reads lives in a column with a larger index, so the root-first tree
    schedule keeps tasks independent.

    For column i the needed products V_ki * Sigma_kj are gathered by
    scatter-accumulation into ``zwork``: iterating stored column k covers
    the pairs with j >= k, iterating stored row k (columns in (i, k))
    covers the rest; positions outside the pattern of column i accumulate
    garbage that is never read.  ``stamp`` invalidates the workspace
    between columns without clearing it.  Returns the number of entries
    computed (pattern-completeness counter).
    """
    count = 0
    for i in range(end - 1, start - 1, -1):
        p0 = Lp[i]
        p1 = Lp[i + 1]
        lii = Lx[p0]
        for t in range(p0 + 1, p1):
            k = Li[t]
            v = Lx[t] / lii
            for p in range(Lp[k], Lp[k + 1]):
                r = Li[p]
                contrib = v * Sx[p]
                if stamp[r] == i:
                    zwork[r] += contrib
                else:
                    stamp[r] = i
                    zwork[r] = contrib
            # pairs with i < j < k live in row k of the pattern
            lo = rowptr[k]
            hi = rowptr[k + 1]
            while lo < hi:
                mid = (lo + hi) >> 1
                if rowcol[mid] <= i:
                    lo = mid + 1
                else:
                    hi = mid
            for q in range(lo, rowptr[k + 1]):
                j = rowcol[q]
                contrib = v * Sx[rowpos[q]]
                if stamp[j] == i:
                    zwork[j] += contrib
                else:
                    stamp[j] = i
                    zwork[j] = contrib
        for idx in range(p1 - 1, p0, -1):
            j = Li[idx]
            if stamp[j] == i:
                Sx[idx] = -zwork[j]
            else:
                Sx[idx] = 0.0
            count += 1
        s = 0.0
        for t in range(p0 + 1, p1):
            s += (Lx[t] / lii) * Sx[t]
        Sx[p0] = 1.0 / (lii * lii) - s
        count += 1
    return count


@njit(cache=True, nogil=True)
def selinv_range_unnormalized(start, end, Lp, Li, Lx, Sx):
    """Same recursion written on the raw factor entries.

    Divides by the pivot inside the accumulation instead of normalizing
    the column first; kept as the independent cross-check route.
    """
    count = 0
    for i in range(end - 1, start - 1, -1):
        p0 = Lp[i]
        p1 = Lp[i + 1]
        lii = Lx[p0]
        for idx in range(p1 - 1, p0, -1):
            j = Li[idx]
            s = 0.0
            for t in range(p0 + 1, p1):
                k = Li[t]
                if k == j:
                    skj = Sx[Lp[j]]
                elif k > j:
                    skj = Sx[_entry_position(Lp, Li, k, j)]
                else:
                    skj = Sx[_entry_position(Lp, Li, j, k)]
                s += Lx[t] * skj
            Sx[idx] = -s / lii
            count += 1
        s = 0.0
        for t in range(p0 + 1, p1):
            s += Lx[t] * Sx[t]
        Sx[p0] = 1.0 / (lii * lii) - s / lii
        count += 1
    return count


@njit(cache=True, nogil=True)
def sym_matvec(indptr, indices, data, x, out):
    """out += Q x for lower-stored symmetric Q; out must be zeroed by the caller."""
    n = x.shape[0]
    for j in range(n):
        xj = x[j]
        acc = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            i = indices[p]
            v = data[p]
            if i == j:
                acc += v * xj
            else:
                acc += v * x[i]
                out[i] += v * xj
        out[j] += acc
