from fractions import Fraction as QQ

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from operstokes.exactla import (commutator, exact_nullspace, exact_rank,
                                exact_solve, mat_trace, qeye, qmat, qzeros,
                                rational_str)

rationals = st.fractions(min_value=-30, max_value=30, max_denominator=7)


def rand_matrix(draw, rows, cols):
    return [[draw(rationals) for _ in range(cols)] for _ in range(rows)]


def test_qmat_roundtrip():
    m = qmat([[1, QQ(1, 2)], [0, 3]])
    assert m[0, 1] == QQ(1, 2)
    assert m.dtype == object


def test_rank_known():
    assert exact_rank([[1, 2], [2, 4]]) == 1
    assert exact_rank([[1, 2], [3, 4]]) == 2
    assert exact_rank(qzeros(3)) == 0
    assert exact_rank(qeye(5)) == 5


def test_nullspace_known():
    ker = exact_nullspace([[1, 2], [2, 4]])
    assert len(ker) == 1
    v = ker[0]
    assert v[0] * 1 + v[1] * 2 == 0


def test_nullspace_trivial():
    assert exact_nullspace(qeye(4)) == []


def test_solve_particular_and_kernel():
    sol = exact_solve([[1, 1], [2, 2]], [3, 6])
    assert sol is not None
    x, ker = sol
    assert x[0] + x[1] == 3
    assert len(ker) == 1


def test_solve_inconsistent():
    assert exact_solve([[1, 1], [1, 1]], [0, 1]) is None


def test_trace_and_commutator():
    a = qmat([[1, 2], [3, 4]])
    b = qmat([[0, 1], [1, 0]])
    assert mat_trace(commutator(a, b)) == 0
    assert mat_trace(a) == 5


def test_rational_str():
    assert rational_str(QQ(3, 4)) == "3/4"
    assert rational_str(QQ(-2)) == "-2/1"


@given(st.data(), st.integers(2, 5), st.integers(2, 5))
@settings(max_examples=40, deadline=None)
def test_rank_nullity(data, r, c):
    m = rand_matrix(data.draw, r, c)
    assert exact_rank(m) + len(exact_nullspace(m)) == c


@given(st.data(), st.integers(2, 5), st.integers(2, 5))
@settings(max_examples=40, deadline=None)
def test_nullspace_vectors_annihilate(data, r, c):
    rows = rand_matrix(data.draw, r, c)
    m = qmat(rows)
    for v in exact_nullspace(rows):
        res = m @ v
        assert all(x == 0 for x in res)


@given(st.data(), st.integers(2, 4), st.integers(2, 4))
@settings(max_examples=40, deadline=None)
def test_solve_resubstitution(data, r, c):
    rows = rand_matrix(data.draw, r, c)
    m = qmat(rows)
    x_true = np.array([data.draw(rationals) for _ in range(c)], dtype=object)
    b = m @ x_true
    sol = exact_solve(rows, list(b))
    assert sol is not None
    x, ker = sol
    res = m @ np.array(x, dtype=object) - b
    assert all(e == 0 for e in res)
    for v in ker:
        assert all(e == 0 for e in m @ v)


def test_rank_scale_invariance():
    rows = [[QQ(1, 3), QQ(2, 7)], [QQ(5), QQ(-1, 2)], [QQ(0), QQ(11, 13)]]
    scaled = [[q * QQ(30031, 17) for q in row] for row in rows]
    assert exact_rank(rows) == exact_rank(scaled)
