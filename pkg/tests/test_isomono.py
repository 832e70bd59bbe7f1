import random
from fractions import Fraction as QQ

import numpy as np
import pytest

from operstokes.exactla import qeye, qzeros
from operstokes.isomono import (OperPoint, ScalarSystem, apply_deformation,
                                connection_matrix, corner_vector,
                                degree_obstruction, jmu_matrix, joint_system,
                                matrix_from_scalar, mp_trim,
                                reduction_residual_pair, scalar_from_matrix,
                                solvability, weight_expression_check)
from operstokes.poly import Poly
from operstokes.sl2 import principal_sl2

Z2 = OperPoint(2, 1, (QQ(0),))  # p = z^2


def rand_point(rng, n, k, span=9):
    d = n * k
    return OperPoint(n, k, tuple(QQ(rng.randint(-span, span), rng.randint(1, 4))
                                 for _ in range(d - 1)))


def test_oper_point_validation():
    with pytest.raises(ValueError):
        OperPoint(1, 1, ())
    with pytest.raises(ValueError):
        OperPoint(2, 0, ())
    with pytest.raises(ValueError):
        OperPoint(2, 1, (QQ(1), QQ(2)))  # d=2 needs exactly one coefficient
    op = OperPoint(3, 2, tuple(QQ(m) for m in range(5)))
    assert op.d == 6
    assert op.p().degree == 6
    assert op.p().coeff(5) == 0  # no z^{d-1} term
    assert op.p_coeff(6) == 1
    assert op.exact


def test_connection_matrix_n2():
    a = connection_matrix(Z2)
    assert a[0][0, 1] == 1 and a[2][1, 0] == 1
    assert not np.any(a[1] != 0)
    assert all(sum(m[t, t] for t in range(2)) == 0 for m in a)


def test_connection_matrix_n3_structure():
    op = OperPoint(3, 1, (QQ(5), QQ(-7)))
    a = connection_matrix(op)
    tri = principal_sl2(3)
    assert a[0][0, 1] == 1 and a[0][1, 2] == 2  # superdiagonal weights of e
    assert np.array_equal(a[0], np.array(tri.e) + QQ(5) * corner_vector(3))
    assert a[1][2, 0] == QQ(-7)
    assert a[3][2, 0] == 1


def test_deformation_operator_oracles():
    # identity is always horizontal
    res = apply_deformation(Z2, [qeye(2)], Poly([]))
    assert all(not np.any(m != 0) for m in res)
    # T(A) = dA/dz = p' f
    a = connection_matrix(Z2)
    res = mp_trim(apply_deformation(Z2, a, Poly([])))
    assert not np.any(res[0] != 0)
    assert np.array_equal(res[1], 2 * corner_vector(2))
    # T(e) for p = z^2 is z^2 h
    tri = principal_sl2(2)
    res = mp_trim(apply_deformation(Z2, [np.array(tri.e)], Poly([])))
    assert np.array_equal(res[2], tri.h)
    assert not np.any(res[0] != 0) and not np.any(res[1] != 0)


def test_jmu_matrix_agrees_with_direct_application():
    rng = random.Random(7)
    D = 4
    rows = jmu_matrix(Z2, D)
    ncols = 4 * (D + 1)
    vec = [QQ(rng.randint(-5, 5), rng.randint(1, 3)) for _ in range(ncols)]
    omega = []
    for b in range(D + 1):
        m = qzeros(2)
        for a in range(2):
            for c in range(2):
                m[a, c] = vec[(D - b) * 4 + a * 2 + c]
        omega.append(m)
    out = [sum(r[t] * vec[t] for t in range(ncols)) for r in rows]
    res = apply_deformation(Z2, omega, Poly([]))
    d = Z2.d
    for m in range(D + d + 1):
        for a in range(2):
            for c in range(2):
                direct = res[m][a, c] if m < len(res) else QQ(0)
                assert out[(D + d - m) * 4 + a * 2 + c] == direct


def test_solvability_basic():
    rep = solvability(Z2, D=10)
    assert rep.joint_kernel_dim == 1
    assert rep.tangent_dim == 0
    assert rep.homogeneous_kernel_dim == 1
    assert rep.traceless_homogeneous_kernel_dim == 0
    assert rep.witness is None
    assert rep.exact
    text = rep.to_text()
    assert "tangent_dim 0" in text and "timing" not in text


def test_solvability_default_cap():
    rep = solvability(Z2)
    assert rep.D == 2 * (Z2.d + Z2.n)
    assert rep.tangent_dim == 0


def test_solvability_monotone_in_D():
    rng = random.Random(11)
    op = rand_point(rng, 2, 2)
    dims = [solvability(op, D=D).tangent_dim for D in (4, 8, 12)]
    assert dims == sorted(dims)
    assert dims == [0, 0, 0]


def test_solvability_n3():
    rep = solvability(OperPoint(3, 1, (QQ(0), QQ(0))), D=12)
    assert rep.tangent_dim == 0
    assert rep.homogeneous_kernel_dim == 1


def test_solvability_float_path():
    op = OperPoint(2, 1, (0.3 + 0.1j,))
    assert not op.exact
    rep = solvability(op, D=8)
    assert not rep.exact
    assert rep.joint_kernel_dim == 1
    assert rep.tangent_dim == 0
    assert rep.homogeneous_kernel_dim == 1
    assert rep.traceless_homogeneous_kernel_dim == 0


def test_joint_system_shape():
    rows = joint_system(Z2, 5)
    assert len(rows) == 4 * (5 + Z2.d + 1)
    assert len(rows[0]) == 4 * 6 + Z2.d - 1


def test_scalar_system_counts_and_n2_bottom_equation():
    sys2 = ScalarSystem(2)
    assert len(sys2.equations) == 3
    bottom = sys2.equations[(1, -1)]
    assert (QQ(1), ("pdot",)) in bottom
    assert (QQ(2), ("p_omega", 1, 0)) in bottom
    for n in (3, 4, 5):
        assert len(ScalarSystem(n).equations) == n * n - 1


def test_scalar_system_symbols_in_range():
    for n in (2, 3, 4):
        sysn = ScalarSystem(n)
        for (i, j), terms in sysn.equations.items():
            assert 1 <= i <= n - 1 and -i <= j <= i
            for _, tag in terms:
                if tag[0] in ("omega", "p_omega"):
                    i2, j2 = tag[1], tag[2]
                    assert 1 <= i2 <= n - 1 and -i2 <= j2 <= i2


def test_scalar_matrix_roundtrip():
    rng = random.Random(5)
    n = 3
    omega = {(i, j): Poly([QQ(rng.randint(-4, 4)) for _ in range(3)])
             for i in range(1, n) for j in range(-i, i + 1)}
    mats = matrix_from_scalar(n, omega)
    back = scalar_from_matrix(n, mats)
    for key, pol in omega.items():
        assert back.get(key, Poly([])) == pol


def test_reduction_equivalence_random():
    rng = random.Random(23)
    for (n, k) in [(2, 2), (3, 3)]:
        for _ in range(10):
            op = rand_point(rng, n, k)
            omega = {}
            for i in range(1, n):
                for j in range(-i, i + 1):
                    if rng.random() < 0.7:
                        omega[(i, j)] = Poly([QQ(rng.randint(-6, 6), rng.randint(1, 3))
                                              for _ in range(rng.randint(1, 5))])
            pdot = Poly([QQ(rng.randint(-6, 6)) for _ in range(op.d - 1)])
            lhs, rhs = reduction_residual_pair(op, omega, pdot)
            keys = {(i, j) for i in range(1, n) for j in range(-i, i + 1)}
            for key in keys:
                assert lhs.get(key, Poly([])) == rhs.get(key, Poly([]))


def test_weight_expression_n2_classical_operator():
    wr = weight_expression_check(2)
    assert wr.ok, wr.violations
    (grp,) = wr.per_string[1]
    assert grp.m == 1 and grp.weight == 1 and grp.sign == 1
    assert sorted(grp.terms) == [(QQ(2), 1, 0), (QQ(4), 0, 1)]
    assert wr.pdot_terms[1] == 1


def test_weight_expression_small_n():
    for n in (3, 4, 5):
        wr = weight_expression_check(n)
        assert wr.ok, (n, wr.violations)
        for i, groups in wr.per_string.items():
            for g in groups:
                assert g.weight == i - g.leader
                assert all((1 if c > 0 else -1) == g.sign for c, _, _ in g.terms)
                assert all(a + b == g.weight for _, a, b in g.terms)
        assert set(wr.pdot_terms) == {n - 1}


def test_weight_expression_accepts_oper_point():
    wr = weight_expression_check(Z2)
    assert wr.ok


def test_degree_obstruction_n2():
    rep = degree_obstruction(Z2, 7)
    assert rep.contradiction
    (row,) = rep.rows
    assert (row.i, row.leader) == (1, 0)
    assert row.lhs_degree == 7 - 3
    assert row.rhs_degree == 2 + 7 - 1
    assert not row.holds
    assert rep.pdot_degree_bound == 0 and rep.pdot_strict_below == 1


def test_degree_obstruction_dict_degrees():
    op = OperPoint(3, 2, tuple(QQ(0) for _ in range(5)))
    rep = degree_obstruction(op, {1: 3, 2: 9})
    assert rep.d0 == 9
    assert all(r.i == 2 for r in rep.rows)
    assert rep.contradiction
