"""Exact rational linear algebra on dense matrices.

All kernel/rank/solve computations used for certificates go through the
fraction-free integer elimination in this module; results are exact by
construction (no floating point anywhere).
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd

import numpy as np

QQ = Fraction


def qmat(rows):
    """Matrix of Fractions (numpy object array) from an iterable of rows."""
    return np.array([[QQ(x) for x in row] for row in rows], dtype=object)


def qzeros(n, m=None):
    if m is None:
        m = n
    z = QQ(0)
    return np.array([[z] * m for _ in range(n)], dtype=object)


def qeye(n):
    m = qzeros(n)
    for i in range(n):
        m[i, i] = QQ(1)
    return m


def commutator(x, y):
    return x @ y - y @ x


def mat_trace(m):
    return sum(m[i, i] for i in range(m.shape[0]))


def _integer_rows(m):
    """Scale each row by the lcm of denominators; returns list[list[int]]."""
    out = []
    for row in m:
        den = 1
        for x in row:
            q = QQ(x)
            den = den * q.denominator // gcd(den, q.denominator)
        out.append([int(QQ(x) * den) for x in row])
    return out


def _strip_content(row):
    g = 0
    for x in row:
        if x:
            g = gcd(g, x if x > 0 else -x)
            if g == 1:
                return row
    if g > 1:
        return [x // g for x in row]
    return row


def _echelon(rows):
    """In-place fraction-free row echelon form.

    Returns the list of pivot columns.  Update rule uses gcd-reduced cross
    multipliers plus content stripping, which keeps entries integral and
    empirically small on the sparse structured systems built here.
    """
    nrows = len(rows)
    ncols = len(rows[0]) if nrows else 0
    pivots = []
    r = 0
    for c in range(ncols):
        if r == nrows:
            break
        # smallest nonzero pivot by absolute value limits growth
        best = -1
        for i in range(r, nrows):
            v = rows[i][c]
            if v and (best < 0 or abs(v) < abs(rows[best][c])):
                best = i
        if best < 0:
            continue
        rows[r], rows[best] = rows[best], rows[r]
        piv = rows[r][c]
        prow = rows[r]
        for i in range(r + 1, nrows):
            v = rows[i][c]
            if not v:
                continue
            g = gcd(piv if piv > 0 else -piv, v if v > 0 else -v)
            a, b = piv // g, v // g
            ri = rows[i]
            rows[i] = _strip_content([a * x - b * y for x, y in zip(ri, prow)])
        pivots.append(c)
        r += 1
    return pivots


def _back_substitute(rows, pivots, free_col, ncols):
    """Kernel vector with 1 in free_col, solving the echelon system."""
    x = [QQ(0)] * ncols
    x[free_col] = QQ(1)
    for r in range(len(pivots) - 1, -1, -1):
        pc = pivots[r]
        row = rows[r]
        s = QQ(0)
        for c in range(pc + 1, ncols):
            if row[c] and x[c]:
                s += QQ(row[c]) * x[c]
        x[pc] = -s / row[pc]
    return x


def exact_rank(m):
    rows = _integer_rows(m)
    if not rows:
        return 0
    return len(_echelon(rows))


def exact_nullspace(m):
    """Exact kernel basis of a matrix over the rationals.

    Accepts any iterable of rows with Fraction/int entries.  Returns a list of
    Fraction column vectors (length = number of columns); empty list when the
    kernel is trivial.  Basis vectors satisfy m @ v == 0 exactly.
    """
    rows = _integer_rows(m)
    if not rows:
        return []
    ncols = len(rows[0])
    pivots = _echelon(rows)
    pivot_set = set(pivots)
    basis = []
    for c in range(ncols):
        if c not in pivot_set:
            basis.append(np.array(_back_substitute(rows, pivots, c, ncols), dtype=object))
    return basis


def exact_solve(m, b):
    """Solve m x = b exactly.

    Returns (particular, kernel_basis) or None when inconsistent.  The
    particular solution sets all free variables to zero.
    """
    rows = [list(row) + [bi] for row, bi in zip(m, b)]
    nc_m = len(rows[0]) - 1 if rows else 0
    rows = _integer_rows(rows)
    pivots = _echelon(rows)
    if pivots and pivots[-1] == nc_m:
        return None
    x = [QQ(0)] * nc_m
    for r in range(len(pivots) - 1, -1, -1):
        pc = pivots[r]
        row = rows[r]
        s = QQ(row[nc_m])
        for c in range(pc + 1, nc_m):
            if row[c] and x[c]:
                s -= QQ(row[c]) * x[c]
        x[pc] = s / row[pc]
    pivot_set = set(pivots)
    basis = []
    for c in range(nc_m):
        if c not in pivot_set:
            basis.append(np.array(_back_substitute(rows, pivots, c, nc_m), dtype=object))
    return np.array(x, dtype=object), basis


def rational_str(q):
    """Canonical num/den rendering used by the table serializers."""
    q = QQ(q)
    return f"{q.numerator}/{q.denominator}"
