import numpy as np
import pytest

from core.errors import ConfigError
from core.model import find_critical_points, sample_fields, twowell
from core.ratefn import (
    AdmissibilityQuery, CgfCurve, InvalidConstants, NonConvexInput, admissible_pair, alpha_interval,
    convex_hull_check, default_alpha_grid, default_sigma_grid, flat_interval, gc_defect, legendre, local_means,
    mean_ep_local, pointwise_admissible, rate_gc_defect, region_raster, sampled_alpha_interval,
    semiclassical_cgf,
)
from core.riccati import LocalLinearization, mean_ep_lyapunov
from tests.helpers import random_linear_blocks, rotation_cgf


def test_alpha_interval_values():
    lo, hi = alpha_interval(0.0, 1.0)
    assert lo == pytest.approx(0.5 - 0.5 * np.sqrt(2.0))
    assert hi == pytest.approx(0.5 + 0.5 * np.sqrt(2.0))
    assert alpha_interval(0.2, 0.0) == (-np.inf, np.inf)
    with pytest.raises(InvalidConstants):
        alpha_interval(0.5, 1.0)


def test_default_alpha_grid_is_symmetric_and_contains_endpoints():
    grid = default_alpha_grid(0.0, 1.0, n=51)
    assert np.all(np.diff(grid) > 0)
    assert np.min(np.abs(grid)) < 1e-12 and np.min(np.abs(grid - 1.0)) < 1e-12
    assert np.allclose(np.sort(1.0 - grid), grid, atol=1e-12)
    lo, hi = alpha_interval(0.0, 1.0)
    assert lo < grid[0] and grid[-1] < hi
    # gradient dynamics: capped to [-1, 2]
    wide = default_alpha_grid(0.0, 0.0, n=51)
    assert wide[0] >= -1.0 - 1e-12 and wide[-1] <= 2.0 + 1e-12


def test_rotation_cgf_and_rate(rot):
    alphas = default_alpha_grid(0.0, 1.0, n=201)
    curve = semiclassical_cgf(rot, alphas)
    assert np.allclose(curve.values, rotation_cgf(alphas), atol=1e-10)
    assert np.all(curve.argmax_index == 0)

    rf = legendre(curve)
    assert np.all(rf.values >= -1e-12)
    # the rate vanishes at the mean 2 omega^2
    near_mean = np.argmin(np.abs(rf.sigmas - 2.0))
    assert rf.values[near_mean] == pytest.approx(0.0, abs=1e-2)
    assert rf.flat_interval is None
    assert gc_defect(curve) < 1e-10
    assert rate_gc_defect(rf) < 1e-9


def test_legendre_matches_closed_form_inside_domain(rot):
    alphas = default_alpha_grid(0.0, 1.0, n=801)
    rf = legendre(semiclassical_cgf(rot, alphas), sigma_grid=np.linspace(-1.0, 5.0, 13))
    fine = np.linspace(alphas[0], alphas[-1], 200001)
    exact = np.max(-np.outer(rf.sigmas, fine) - rotation_cgf(fine)[None, :], axis=1)
    assert np.allclose(rf.values, exact, atol=1e-3)


def test_legendre_rejects_non_convex_input():
    alphas = np.linspace(0.0, 1.0, 11)
    curve = CgfCurve(alphas=alphas, values=np.sin(np.pi * alphas), argmax_index=np.zeros(11, dtype=int),
                     per_point_curves=np.sin(np.pi * alphas)[None, :])
    with pytest.raises(NonConvexInput):
        legendre(curve)


def test_alpha_grid_must_increase(rot):
    with pytest.raises(ConfigError):
        semiclassical_cgf(rot, [0.0, 0.5, 0.5, 1.0])


@pytest.mark.parametrize("seed", range(4))
def test_local_mean_matches_lyapunov(seed):
    lin = LocalLinearization(*random_linear_blocks(seed))
    assert mean_ep_local(lin) == pytest.approx(mean_ep_lyapunov(lin), rel=1e-6, abs=1e-8)


def test_twowell_flat_interval(wells):
    points = find_critical_points(wells)
    means = local_means(points)
    assert len(means) == 2
    flat = flat_interval(wells, points)
    assert flat is not None
    assert flat[0] == pytest.approx(min(means)) and flat[1] == pytest.approx(max(means))
    assert flat_interval(twowell(omega=1.0, beta=0.0)) is None


def test_twowell_cgf_takes_larger_branch(wells):
    points = find_critical_points(wells)
    minima = [p for p in points if p.is_minimum]
    # extends slightly below 0 so the transform reaches the flat interval
    alphas = np.linspace(-0.1, 1.1, 49)
    curve = semiclassical_cgf(wells, alphas, minima)
    assert np.allclose(curve.values, curve.per_point_curves.max(axis=0))
    assert gc_defect(curve) < 1e-9
    rf = legendre(curve, flat=flat_interval(wells, points))
    inside = (rf.sigmas > rf.flat_interval[0]) & (rf.sigmas < rf.flat_interval[1])
    assert inside.any()
    assert np.all(np.abs(rf.values[inside]) <= 1e-3)
    assert convex_hull_check(curve) < 1e-6


def test_admissible_pair_known_cells():
    assert admissible_pair(AdmissibilityQuery(k_b=0.33, h_b=0.75, alpha=0.0, p=2.0))
    assert admissible_pair(AdmissibilityQuery(k_b=0.33, h_b=0.75, alpha=0.5, p=2.0))
    assert not admissible_pair(AdmissibilityQuery(k_b=0.33, h_b=0.75, alpha=0.5, p=1.0))
    # far outside [0, 1] the h_b penalty dominates
    assert not admissible_pair(AdmissibilityQuery(k_b=0.33, h_b=1.5, alpha=-1.0, p=2.0))
    assert admissible_pair(AdmissibilityQuery(k_b=0.49, h_b=1.5, alpha=0.0, p=2.0))
    assert not admissible_pair(AdmissibilityQuery(k_b=0.33, h_b=0.75, alpha=2.0, p=2.0))


@pytest.mark.parametrize("k_b, h_b", [(0.33, 0.75), (0.33, 1.5), (0.49, 1.5)])
def test_p_two_segment_is_admissible_and_symmetric(k_b, h_b):
    for alpha in np.linspace(0.0, 1.0, 101):
        assert admissible_pair(AdmissibilityQuery(k_b=k_b, h_b=h_b, alpha=alpha, p=2.0))
    for alpha in np.linspace(-1.0, 2.0, 61):
        forward = admissible_pair(AdmissibilityQuery(k_b=k_b, h_b=h_b, alpha=alpha, p=2.0))
        assert forward == admissible_pair(AdmissibilityQuery(k_b=k_b, h_b=h_b, alpha=1.0 - alpha, p=2.0))

    raster = region_raster(k_b, h_b, (0.0, 1.0), (1.0, 3.0), (101, 21))
    column = np.isclose(raster.ps, 2.0)
    assert column.sum() == 1
    assert raster.mask[:, column].all()


def test_region_raster_shape_and_monotone_in_h_b():
    loose = region_raster(0.33, 0.75, (-1.0, 2.0), (1.0, 5.0), 31)
    tight = region_raster(0.33, 1.5, (-1.0, 2.0), (1.0, 5.0), 31)
    assert loose.mask.shape == (31, 31)
    assert not loose.mask[:, 0].any()
    # a larger h_b only removes cells
    assert np.all(tight.mask <= loose.mask)
    with pytest.raises(ConfigError):
        region_raster(0.33, 0.75, (-1.0, 2.0), (1.0, 5.0), 1)


def test_sampled_interval_and_pointwise_check(rot):
    samples = sample_fields(rot, 500, rng_seed=1)
    lo, hi = sampled_alpha_interval(samples)
    assert lo == pytest.approx(0.5 - 0.5 * np.sqrt(2.0))
    assert hi == pytest.approx(0.5 + 0.5 * np.sqrt(2.0))
    assert pointwise_admissible(samples, 0.5, 2.0)
    assert not pointwise_admissible(samples, 2.0, 2.0)


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_rotation_local_mean(omega):
    lin = LocalLinearization(C=np.eye(2), Bm=omega * np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert mean_ep_local(lin) == pytest.approx(2.0 * omega ** 2, abs=1e-6)


def test_twowell_flat_interval_width(wells):
    lo, hi = flat_interval(wells)
    assert hi - lo >= 0.01


def test_default_sigma_grid_spans_derivative_range(rot):
    alphas = default_alpha_grid(0.0, 1.0, n=201)
    curve = semiclassical_cgf(rot, alphas)
    sigmas = default_sigma_grid(curve, n=101)
    slopes = np.diff(curve.values) / np.diff(curve.alphas)
    assert len(sigmas) == 101
    assert sigmas[0] == pytest.approx(-slopes.max())
    assert sigmas[-1] == pytest.approx(-slopes.min())
    # the mean 2 omega^2 lies inside
    assert sigmas[0] < 2.0 < sigmas[-1]
