import numpy as np
import pytest

from operstokes.immersion import jacobian, kernel_cross_check, monodromy_map
from operstokes.isomono import OperPoint
from operstokes.stokes import StokesSettings


@pytest.fixture(scope="module")
def weber_report():
    return jacobian(OperPoint(2, 1, (0,)))


@pytest.fixture(scope="module")
def quartic_report():
    return jacobian(OperPoint(2, 2, (0, 0, 0)))


@pytest.fixture(scope="module")
def cubic_report():
    return jacobian(OperPoint(3, 1, (0, 0)))


def test_monodromy_map_is_the_pipeline():
    sd = monodromy_map(OperPoint(2, 1, (0,)))
    assert sd.residuals["identity"] <= 1e-8
    assert sd.monitored_vector().shape == (4,)


def test_weber_differential(weber_report):
    rep = weber_report
    assert rep.d == 2
    assert rep.jacobian.shape == (4, 1)
    assert rep.rank == 1
    assert rep.sv_gap == 1.0
    # frozen: d nu / d c_0 for y'' = (z^2 + c_0) y at c_0 = 0
    assert abs(rep.singular_values[0] - 12.7342) <= 1e-2
    assert rep.holomorphy <= 1e-5


def test_cubic_differential(cubic_report):
    rep = cubic_report
    assert rep.jacobian.shape == (12, 2)
    assert rep.rank == 2
    assert 0.4 <= rep.sv_gap <= 0.7
    assert abs(rep.singular_values[0] - 15.311) <= 5e-2
    assert abs(rep.singular_values[1] - 8.112) <= 5e-2
    assert rep.holomorphy <= 1e-5


def test_quartic_differential(quartic_report):
    rep = quartic_report
    assert rep.jacobian.shape == (6, 3)
    assert rep.rank == 3
    assert rep.sv_gap >= 1e-4
    assert rep.holomorphy <= 1e-5


def test_step_sweep_is_stable(quartic_report):
    coarse = jacobian(OperPoint(2, 2, (0, 0, 0)), h=1e-3)
    assert coarse.rank == quartic_report.rank
    assert abs(coarse.sv_gap - quartic_report.sv_gap) <= 1e-3
    worst = abs(coarse.jacobian - quartic_report.jacobian).max()
    assert worst <= 1e-3 * abs(quartic_report.jacobian).max()


def test_rank_threshold_semantics(quartic_report):
    sv = quartic_report.singular_values
    strict = jacobian(OperPoint(2, 2, (0, 0, 0)), rank_tol=0.99,
                      holomorphy=False)
    assert strict.rank == sum(1 for s in sv if s >= 0.99 * sv[0])
    assert strict.rank < 3
    assert strict.holomorphy == 0.0


def test_perturbed_point_keeps_full_rank():
    rep = jacobian(OperPoint(2, 1, (0.3 + 0.2j,)))
    assert rep.rank == 1
    assert rep.params == (0.3 + 0.2j,)
    assert rep.holomorphy <= 1e-5


def test_threading_gives_identical_differential(weber_report):
    rep = jacobian(OperPoint(2, 1, (0,)), settings=StokesSettings(threads=2))
    assert np.array_equal(rep.jacobian, weber_report.jacobian)


def test_stencil_bookkeeping(weber_report):
    rep = weber_report
    assert set(rep.stencil_residuals) == {
        (0, complex(s)) for s in (1e-4, -1e-4, 1e-4j, -1e-4j)}
    assert all(v <= 1e-6 for v in rep.stencil_residuals.values())
    assert rep.base_residuals["identity"] <= 1e-8


def test_lost_closure_is_an_error():
    # a step so large the base point's frozen reading plan cannot represent
    # the shifted equation any more must fail loudly, not differentiate noise
    with pytest.raises(ArithmeticError):
        jacobian(OperPoint(2, 1, (0,)), h=50.0, holomorphy=False)


def test_cross_check_weber():
    rep = kernel_cross_check(OperPoint(2, 1, (0,)))
    assert rep.agree
    assert rep.tangent_dim == 0
    assert rep.numeric_rank == 1
    assert rep.solvability.homogeneous_kernel_dim == 1


def test_cross_check_needs_exact_point():
    with pytest.raises(ValueError):
        kernel_cross_check(OperPoint(2, 1, (0.5 + 0.1j,)))
