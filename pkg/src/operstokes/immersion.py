"""Numerical corroboration that the monodromy map is an immersion.

The base space is the family y^(n) = p(z) y with p monic of degree d = k n
and no z^{d-1} term, coordinatized by the remaining d-1 coefficients
c_0..c_{d-2}.  The map under study sends these coordinates to the
strict-triangle entries of the grouped Stokes matrices -- the free entries of
the alternating unipotent factors.  Its differential is approximated by
central differences in each coordinate, with every discrete choice of the
Stokes run (reading circle, collocation angles, term count, working
precision, eigenvalue labeling) frozen at the base point, so the quotients
differentiate one fixed smooth function rather than a chain of re-planned
runs.

Full column rank of the differential, read off a singular value decomposition
with a relative threshold, corroborates numerically what the exact kernel
computation of the deformation system certifies algebraically; the module
also houses the cross-check that runs both at the same point and insists
they agree.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .isomono import OperPoint, solvability
from .stokes import StokesSettings, stokes_data

__all__ = [
    "JacobianReport", "CrossCheckReport",
    "monodromy_map", "jacobian", "kernel_cross_check",
]


def monodromy_map(op, settings=None, plan=None):
    """Stokes data of one oper point: the full composite pipeline, one call."""
    return stokes_data(op, settings, plan=plan)


@dataclass(frozen=True)
class JacobianReport:
    """Differential of the monodromy map at one base point.

    jacobian has one row per monitored Stokes entry and one column per
    coefficient c_m; singular_values descend; rank counts values at or above
    sigma_1 * rank_tol; sv_gap = sigma_{d-1}/sigma_1 is the margin by which
    full column rank holds; holomorphy is the worst disagreement between the
    real-step and imaginary-step difference quotients (complex
    differentiability makes them equal up to O(h^2))."""
    n: int
    k: int
    d: int
    params: tuple
    h: float
    rank_tol: float
    jacobian: np.ndarray
    singular_values: tuple
    rank: int
    sv_gap: float
    holomorphy: float
    base_residuals: dict
    stencil_residuals: dict
    plan: object


@dataclass(frozen=True)
class CrossCheckReport:
    """Exact tangent kernel vs numeric differential rank at one point."""
    n: int
    k: int
    d: int
    tangent_dim: int
    numeric_rank: int
    agree: bool
    solvability: object
    jacobian: JacobianReport


def _shifted(op, m, delta):
    coeffs = list(op.coeffs)
    coeffs[m] = complex(coeffs[m]) + delta
    return OperPoint(op.n, op.k, tuple(coeffs))


def _stencil_points(op, h, holomorphy):
    """Evaluation points around the base: per coordinate the real-step pair,
    plus the imaginary-step pair when the holomorphy diagnostic is on."""
    points = []
    deltas = [h, -h] + ([1j * h, -1j * h] if holomorphy else [])
    for m in range(op.d - 1):
        for delta in deltas:
            points.append((m, delta, _shifted(op, m, delta)))
    return points


def jacobian(op, h=1e-4, settings=None, rank_tol=1e-4, holomorphy=True):
    """Central-difference differential of the monodromy map.

    Columns are (nu(c + h e_m) - nu(c - h e_m)) / (2h) for each of the d-1
    coordinates; when holomorphy is on, the same quotient along i h is formed
    and its worst deviation from the real-step quotient is reported.  Every
    stencil evaluation reuses the base point's frozen plan and must come back
    with sane closure residuals, otherwise the differences would compare
    artifacts of run planning instead of values of the map."""
    settings = settings or StokesSettings()
    base = stokes_data(op, settings)
    plan = base.plan
    nu0 = base.monitored_vector()
    points = _stencil_points(op, h, holomorphy)

    def evaluate(point):
        _, _, shifted_op = point
        return stokes_data(shifted_op, settings, plan=plan)

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            runs = list(pool.map(evaluate, points))
    else:
        runs = [evaluate(point) for point in points]

    ceiling = max(1e-6, 1e3 * base.residuals["identity"])
    values = {}
    stencil_residuals = {}
    for (m, delta, _), run in zip(points, runs):
        res = run.residuals["identity"]
        stencil_residuals[(m, complex(delta))] = res
        if not math.isfinite(res) or res > ceiling:
            raise ArithmeticError(
                f"stencil point c_{m} {delta:+} lost closure "
                f"(identity residual {res:.2e})")
        values[(m, complex(delta))] = run.monitored_vector()

    cols, deviation = [], 0.0
    for m in range(op.d - 1):
        col = (values[(m, complex(h))] - values[(m, complex(-h))]) / (2 * h)
        cols.append(col)
        if holomorphy:
            icol = (values[(m, 1j * h)] - values[(m, -1j * h)]) / (2j * h)
            scale = max(1.0, float(np.abs(col).max()))
            deviation = max(deviation, float(np.abs(icol - col).max()) / scale)
    jac = np.column_stack(cols)

    sv = np.linalg.svd(jac, compute_uv=False)
    top = float(sv[0]) if len(sv) else 0.0
    rank = int((sv >= top * rank_tol).sum()) if top > 0 else 0
    gap = float(sv[op.d - 2] / top) if top > 0 and len(sv) >= op.d - 1 else 0.0
    return JacobianReport(
        n=op.n, k=op.k, d=op.d,
        params=tuple(complex(c) for c in op.coeffs),
        h=h, rank_tol=rank_tol, jacobian=jac,
        singular_values=tuple(float(s) for s in sv),
        rank=rank, sv_gap=gap, holomorphy=deviation,
        base_residuals=dict(base.residuals),
        stencil_residuals=stencil_residuals, plan=plan)


def kernel_cross_check(op, D=None, h=1e-4, settings=None, rank_tol=1e-4):
    """Exact and numeric injectivity verdicts at the same point.

    The exact side computes the kernel of the joint deformation system and
    its tangent dimension; the numeric side computes the differential's rank.
    A vanishing tangent kernel must coincide with full column rank d-1; the
    report records both so a disagreement points at settings, not at the
    mathematics."""
    if not op.exact:
        raise ValueError("cross-check needs an exact rational base point")
    exact = solvability(op, D)
    numeric = jacobian(op, h=h, settings=settings, rank_tol=rank_tol)
    agree = (exact.tangent_dim == 0) == (numeric.rank == op.d - 1)
    return CrossCheckReport(
        n=op.n, k=op.k, d=op.d,
        tangent_dim=exact.tangent_dim, numeric_rank=numeric.rank,
        agree=agree, solvability=exact, jacobian=numeric)
