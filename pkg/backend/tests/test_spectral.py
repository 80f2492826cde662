import math

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.linalg import norm as sparse_norm

from core.errors import ConfigError
from core.spectral import (
    GridSpec, GridTooCoarse, InitialMeasure, ShortMargin, SpectralResult, SweepPoint, assemble, box_margin,
    e_eps_sweep, eigvec_rows, errors_nonincreasing, fk_propagate, grid_for, leading_eigpair,
)
from core.model import find_critical_points, twowell
from tests.helpers import rotation_cgf

BOX = GridSpec.cube(-4.0, 4.0, 61)


def test_grid_spec_basics():
    grid = GridSpec.cube(-1.0, 1.0, 33)
    assert grid.interior_shape == (31, 31)
    assert grid.n_nodes == 961
    assert grid.h == pytest.approx(2.0 / 32)
    points = grid.interior_points()
    assert points.shape == (961, 2)
    assert np.allclose(points[grid.nearest_node([0.0, 0.0])], 0.0)
    with pytest.raises(ConfigError):
        GridSpec.cube(-1.0, 1.0, 16)
    with pytest.raises(ConfigError):
        GridSpec.cube(1.0, -1.0, 40)


def test_operator_transposes_under_alpha_reflection(rot):
    forward = assemble(rot, 0.25, 0.5, BOX).entries
    backward = assemble(rot, 0.75, 0.5, BOX).entries
    assert sparse_norm(forward - backward.T) < 1e-10


def test_off_diagonal_entries_nonnegative(rot):
    op = assemble(rot, 0.25, 0.5, BOX)
    off = op.entries - sparse.diags(op.entries.diagonal())
    assert off.min() >= 0.0


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5])
def test_rotation_eigenvalue_matches_closed_form(rot, alpha):
    eps = 0.5
    op = assemble(rot, alpha, eps, grid_for(rot, alpha, eps))
    result = leading_eigpair(op)
    assert op.prediction == pytest.approx(float(rotation_cgf(alpha)), abs=1e-12)
    assert result.eigenvalue == pytest.approx(float(rotation_cgf(alpha)), abs=1e-2)
    assert result.residual <= 1e-7
    assert result.eigvec.max() == pytest.approx(1.0)
    assert result.eigvec.min() > 0.0


def test_eigenvalue_is_symmetric_under_reflection(rot):
    left = leading_eigpair(assemble(rot, 0.2, 0.5, BOX)).eigenvalue
    right = leading_eigpair(assemble(rot, 0.8, 0.5, BOX)).eigenvalue
    assert left == pytest.approx(right, abs=1e-6)


def test_coarse_grid_is_rejected(rot):
    with pytest.raises(GridTooCoarse):
        assemble(rot, 0.0, 0.5, GridSpec.cube(-4.0, 4.0, 41))


def test_grid_policy_shrinks_spacing_with_eps(rot):
    coarse = grid_for(rot, 0.25, 0.4)
    fine = grid_for(rot, 0.25, 0.1)
    assert fine.h < coarse.h
    assert fine.box[0][1] < coarse.box[0][1]


def test_eigvec_rows_layout(rot):
    result = leading_eigpair(assemble(rot, 0.0, 0.5, BOX))
    rows = eigvec_rows(result)
    assert len(rows) == BOX.n_nodes
    assert len(rows[0]) == 3
    assert rows[0][:2] == tuple(BOX.interior_points()[0])


def test_sweep_requires_decreasing_eps(rot):
    with pytest.raises(ConfigError):
        e_eps_sweep(rot, 0.25, [0.2, 0.4])


def _sweep_point(eps, error):
    result = SpectralResult(eigenvalue=error, eigvec=np.ones(1), residual=0.0, grid=BOX,
                            alpha=0.25, eps=eps, iterations=1)
    return SweepPoint(eps=eps, result=result, reference=0.0)


def test_errors_nonincreasing_allows_slack():
    assert errors_nonincreasing([_sweep_point(0.4, 0.1), _sweep_point(0.2, 0.11), _sweep_point(0.1, 0.05)])
    assert not errors_nonincreasing([_sweep_point(0.4, 0.1), _sweep_point(0.2, 0.2)])


def test_feynman_kac_preserves_mass_at_alpha_zero(rot):
    chi = fk_propagate(rot, 0.0, 0.5, BOX, lam=InitialMeasure.mu0(), t=1.0, dt=1e-2)
    assert chi == pytest.approx(1.0, abs=1e-2)


def test_feynman_kac_growth_rate_approaches_eigenvalue(rot):
    eps, alpha = 0.5, 0.25
    lam = InitialMeasure.point([0.5, 0.0])
    early = fk_propagate(rot, alpha, eps, BOX, lam=lam, t=6.0, dt=1e-2)
    late = fk_propagate(rot, alpha, eps, BOX, lam=lam, t=10.0, dt=1e-2)
    rate = (math.log(late) - math.log(early)) / 4.0
    eigenvalue = leading_eigpair(assemble(rot, alpha, eps, BOX)).eigenvalue
    assert rate == pytest.approx(eigenvalue, abs=2e-2)


def test_feynman_kac_argument_checks(rot, wells):
    with pytest.raises(ConfigError):
        fk_propagate(rot, 0.25, 0.5, BOX, g=-np.ones(BOX.n_nodes), t=0.1, dt=1e-2)
    with pytest.raises(ConfigError):
        fk_propagate(wells, 0.25, 0.5, GridSpec.cube(-3.0, 3.0, 61), lam=InitialMeasure.mu0(), t=0.1, dt=1e-2)
    with pytest.raises(ConfigError):
        fk_propagate(rot, 0.25, 0.5, BOX, lam=InitialMeasure(kind="uniform"), t=0.1, dt=1e-2)


def test_initial_law_is_checked_before_propagation(wells, monkeypatch):
    def factorize(*args, **kwargs):
        raise AssertionError("Crank-Nicolson stepping started")

    monkeypatch.setattr("core.spectral.splu", factorize)
    with pytest.raises(ConfigError):
        fk_propagate(wells, 0.25, 0.5, GridSpec.cube(-3.0, 3.0, 61), lam=InitialMeasure.mu0(), t=5.0, dt=1e-2)


def test_feynman_kac_symmetry_under_reflection(rot):
    lam = InitialMeasure.mu0()
    left = fk_propagate(rot, 0.25, 0.5, BOX, lam=lam, t=1.0, dt=1e-2)
    right = fk_propagate(rot, 0.75, 0.5, BOX, lam=lam, t=1.0, dt=1e-2)
    assert left == pytest.approx(right, rel=1e-8)


@pytest.mark.parametrize("alpha", [0.25, 0.5])
def test_halving_the_spacing_cuts_the_error(rot, alpha):
    exact = float(rotation_cgf(alpha))
    errors = [
        abs(leading_eigpair(assemble(rot, alpha, 0.5, GridSpec.cube(-5.0, 5.0, n))).eigenvalue - exact)
        for n in (101, 201)
    ]
    assert errors[1] <= 1e-2
    # second order: the ratio is close to 4
    assert errors[0] / errors[1] >= 1.5


def test_short_box_margin_warns(rot):
    grid = GridSpec.cube(-2.0, 2.0, 41)
    assert box_margin(grid, find_critical_points(rot)) == pytest.approx(2.0)
    with pytest.warns(ShortMargin):
        assemble(rot, 0.0, 0.5, grid)


@pytest.mark.slow
def test_semiclassical_sweep_on_twowell():
    model = twowell(omega=1.0, beta=0.0)
    sweep = e_eps_sweep(model, 0.25, [0.4, 0.2, 0.1, 0.05], threads=2)
    assert all(point.error is not None for point in sweep)
    assert errors_nonincreasing(sweep)
    assert sweep[-1].error <= 5e-2
