"""
Vanishing-noise cumulant generating function and its rate function.

e(alpha) = max_j e_j(alpha) over all critical points, the Legendre
transform e_+(sigma) = sup_alpha (-alpha sigma - e(alpha)) by exhaustive
grid scan, mean entropy production at local minima, symmetry defects and
the (alpha, p) admissibility region of the deformed semigroup.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, NumericalGuardError
from core.model import CriticalPoint, DriftModel, FieldSamples, find_critical_points
from core.riccati import LocalLinearization, RiccatiError, leading_eig_linear, linearize
from utils.logging import get_logger

logger = get_logger(__name__)

Interval = Tuple[float, float]


class NonConvexInput(NumericalGuardError):
    pass


class NoLocalMinima(NumericalGuardError):
    pass


class InvalidConstants(ConfigError):
    pass


@dataclass(frozen=True)
class CgfCurve:
    alphas: np.ndarray
    values: np.ndarray
    argmax_index: np.ndarray
    per_point_curves: np.ndarray
    points: Tuple[CriticalPoint, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class RateFunction:
    sigmas: np.ndarray
    values: np.ndarray
    domain: Interval
    flat_interval: Optional[Interval]
    # the curve the transform was built from, kept for exact reflections
    alphas: np.ndarray
    cgf: np.ndarray


@dataclass(frozen=True)
class AdmissibilityQuery:
    k_b: float
    h_b: float
    alpha: float
    p: float


@dataclass(frozen=True)
class AdmissibilityRaster:
    alphas: np.ndarray
    ps: np.ndarray
    mask: np.ndarray  # shape (len(alphas), len(ps))
    k_b: float
    h_b: float


# ---------------------------------------------------------------------------
# alpha grids and the admissible interval
# ---------------------------------------------------------------------------

def alpha_interval(k_b: float, h_b: float) -> Interval:
    """
    Outer estimate of the admissible interval from the growth constants.

    Returns (1/2 - r, 1/2 + r) with r = 1/2 sqrt(1 + (1 - 2 k_b) / h_b).
    For h_b = 0 (gradient dynamics) every alpha is admissible.
    """
    if k_b >= 0.5:
        raise InvalidConstants(f"k_b must be below 1/2, got {k_b}")
    if h_b <= 0.0:
        return (-np.inf, np.inf)
    r = 0.5 * np.sqrt(1.0 + (1.0 - 2.0 * k_b) / h_b)
    return (0.5 - r, 0.5 + r)


def default_alpha_grid(k_b: float, h_b: float, n: int = 201, shrink: float = 0.01) -> np.ndarray:
    """
    Grid symmetric about 1/2 inside alpha_interval(k_b, h_b) and [-1, 2].

    The half-width is pulled in by `shrink` of itself to stay inside the
    open interval; 0 and 1 are always grid points.
    """
    lo, hi = alpha_interval(k_b, h_b)
    half_width = min(0.5 * (hi - lo) * (1.0 - shrink), 1.5)
    n_half = max(n // 2, 1)
    offsets = np.linspace(0.0, half_width, n_half + 1)
    grid = np.concatenate([0.5 - offsets[:0:-1], [0.5], 0.5 + offsets[1:]])
    grid = np.union1d(grid, [0.0, 1.0])
    # drop near-duplicates introduced by the union
    keep = np.concatenate([[True], np.diff(grid) > 1e-12])
    return grid[keep]


def sampled_alpha_interval(samples: FieldSamples) -> Optional[Interval]:
    """
    Pointwise estimate of the admissible interval at p = 2.

    alpha is kept when 1/4 |grad V|^2 - 1/2 <b, grad V> + alpha(1-alpha)|b|^2 >= 0
    at every sample; returns None when no alpha qualifies.
    """
    excess = 0.5 * samples.b_dot_grad - 0.25 * samples.grad_sq
    moving = samples.b_sq > 0.0
    if np.any(excess[~moving] > 0.0):
        return None
    if not np.any(moving):
        return (-np.inf, np.inf)
    threshold = float(np.max(excess[moving] / samples.b_sq[moving]))
    if threshold > 0.25:
        return None
    r = np.sqrt(0.25 - threshold)
    return (0.5 - r, 0.5 + r)


# ---------------------------------------------------------------------------
# Cumulant generating function and Legendre transform
# ---------------------------------------------------------------------------

def _curve_for_point(index: int, point: CriticalPoint, alphas: np.ndarray) -> np.ndarray:
    lin = linearize(point)
    try:
        return np.array([leading_eig_linear(lin, a) for a in alphas])
    except RiccatiError as e:
        raise type(e)(
            f"critical point {index} ({point.kind.value} at {np.round(point.location, 8).tolist()}): {e}"
        ) from e


def semiclassical_cgf(model: DriftModel, alpha_grid: Sequence[float],
                      critical_points: Optional[List[CriticalPoint]] = None,
                      threads: int = 1) -> CgfCurve:
    """
    e(alpha) = max_j e_j(alpha) over every critical point.

    Args:
        model: Drift model
        alpha_grid: Sorted alpha values, admissible for every critical point
        critical_points: Precomputed critical points (located if omitted)
        threads: Worker threads, one job per critical point

    Returns:
        CgfCurve with the per-point curves and the argmax index
    """
    alphas = np.asarray(alpha_grid, dtype=float)
    if np.any(np.diff(alphas) <= 0):
        raise ConfigError("alpha grid must be strictly increasing")
    points = find_critical_points(model) if critical_points is None else list(critical_points)
    if not points:
        raise NoLocalMinima(f"Model {model.name} has no critical points inside the check ball")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        curves = list(pool.map(lambda job: _curve_for_point(job[0], job[1], alphas), enumerate(points)))
    per_point = np.vstack(curves)
    argmax = np.argmax(per_point, axis=0)
    values = per_point[argmax, np.arange(len(alphas))]
    logger.info(
        f"Semiclassical CGF on {len(alphas)} alphas over {len(points)} critical points: "
        f"min e = {values.min():.8g}"
    )
    return CgfCurve(alphas=alphas, values=values, argmax_index=argmax,
                    per_point_curves=per_point, points=tuple(points))


def _convexity_violation(alphas: np.ndarray, values: np.ndarray) -> float:
    if len(alphas) < 3:
        return 0.0
    a0, a1, a2 = alphas[:-2], alphas[1:-1], alphas[2:]
    w = (a1 - a0) / (a2 - a0)
    chord = (1.0 - w) * values[:-2] + w * values[2:]
    return float(np.max(values[1:-1] - chord))


def cgf_domain(curve: CgfCurve) -> Interval:
    """Range of -De over the grid, from the chord slopes of e."""
    slopes = np.diff(curve.values) / np.diff(curve.alphas)
    return (float(-slopes.max()), float(-slopes.min()))


def default_sigma_grid(curve: CgfCurve, n: int = 401) -> np.ndarray:
    lo, hi = cgf_domain(curve)
    return np.linspace(lo, hi, n)


def legendre_scan(alphas: np.ndarray, values: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """sup over grid alpha of (-alpha sigma - e(alpha)) for every sigma."""
    sigmas = np.asarray(sigmas, dtype=float)
    return np.max(-np.outer(sigmas, alphas) - values[None, :], axis=1)


def legendre(curve: CgfCurve, sigma_grid: Optional[Sequence[float]] = None,
             flat: Optional[Interval] = None, n_sigma: int = 401) -> RateFunction:
    """
    Legendre transform of the CGF by exhaustive grid scan.

    Args:
        curve: Convex CGF samples
        sigma_grid: Evaluation points, clipped to the domain; a uniform
            grid of n_sigma points on the domain when omitted
        flat: Flat interval to carry along (see flat_interval)
        n_sigma: Size of the default sigma grid

    Returns:
        RateFunction
    """
    violation = _convexity_violation(curve.alphas, curve.values)
    if violation > 1e-6:
        raise NonConvexInput(f"CGF violates convexity by {violation:.3e}")

    domain = cgf_domain(curve)
    if sigma_grid is None:
        sigmas = default_sigma_grid(curve, n_sigma)
    else:
        sigmas = np.asarray(sigma_grid, dtype=float)
        span = 1e-12 * max(1.0, abs(domain[0]), abs(domain[1]))
        sigmas = sigmas[(sigmas >= domain[0] - span) & (sigmas <= domain[1] + span)]
    values = legendre_scan(curve.alphas, curve.values, sigmas)
    return RateFunction(sigmas=sigmas, values=values, domain=domain, flat_interval=flat,
                        alphas=curve.alphas, cgf=curve.values)


# ---------------------------------------------------------------------------
# Mean entropy production and the flat piece
# ---------------------------------------------------------------------------

def mean_ep_local(lin: LocalLinearization, step: float = 1e-5) -> float:
    """
    m_j = -De_j(0) by Richardson-extrapolated central differences.

    Args:
        lin: Linearization at a local minimum (C positive definite)
        step: Base finite-difference step

    Returns:
        Local mean entropy production rate
    """
    if np.linalg.eigvalsh(lin.C).min() <= 0.0:
        raise ConfigError("mean_ep_local needs a local minimum (C positive definite)")

    def central(h):
        return (leading_eig_linear(lin, h) - leading_eig_linear(lin, -h)) / (2.0 * h)

    derivative = (4.0 * central(0.5 * step) - central(step)) / 3.0
    return float(-derivative)


def local_means(points: Sequence[CriticalPoint]) -> List[float]:
    return [mean_ep_local(linearize(p)) for p in points if p.is_minimum]


def flat_interval(model: DriftModel,
                  critical_points: Optional[List[CriticalPoint]] = None,
                  tol: float = 1e-9) -> Optional[Interval]:
    """
    [min m_j, max m_j] over the local minima, or None when they coincide.

    The vanishing-noise mean entropy production is bracketed by these values
    and the rate function vanishes on the interval.
    """
    points = find_critical_points(model) if critical_points is None else critical_points
    means = local_means(points)
    if not means:
        raise NoLocalMinima(f"Model {model.name} has no local minimum inside radius {model.check_radius}")
    lo, hi = min(means), max(means)
    logger.info(f"Local mean EP rates at minima: {', '.join(f'{m:.10g}' for m in means)}")
    if hi - lo <= tol:
        return None
    return (lo, hi)


# ---------------------------------------------------------------------------
# Symmetry and convex-hull diagnostics
# ---------------------------------------------------------------------------

def gc_defect(curve: CgfCurve) -> float:
    """max |e(alpha) - e(1 - alpha)| over grid points whose mirror is in range."""
    alphas, values = curve.alphas, curve.values
    mirror = 1.0 - alphas
    inside = (mirror >= alphas[0] - 1e-12) & (mirror <= alphas[-1] + 1e-12)
    if not np.any(inside):
        return 0.0
    reflected = np.interp(mirror[inside], alphas, values)
    return float(np.max(np.abs(values[inside] - reflected)))


def rate_gc_defect(rf: RateFunction) -> float:
    """max |e_+(s) - e_+(-s) + s| over s with both s and -s in the domain."""
    lo, hi = rf.domain
    mask = (-rf.sigmas >= lo) & (-rf.sigmas <= hi)
    if not np.any(mask):
        return 0.0
    sigmas = rf.sigmas[mask]
    reflected = legendre_scan(rf.alphas, rf.cgf, -sigmas)
    return float(np.max(np.abs(rf.values[mask] - reflected + sigmas)))


def _lower_hull(xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Monotone-chain lower convex hull of points sorted by x."""
    hull: List[Tuple[float, float]] = []
    for x, y in zip(xs, ys):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0.0:
                hull.pop()
            else:
                break
        hull.append((x, y))
    hx, hy = zip(*hull)
    return np.array(hx), np.array(hy)


def convex_hull_check(curve: CgfCurve, sigma_grid: Optional[Sequence[float]] = None) -> float:
    """
    Compare e_+ with the lower convex envelope of the per-point transforms.

    Each (e_j)_+ is piecewise linear in sigma with vertices at the chord
    slopes of e_j; the envelope of their pointwise minimum is taken over
    those vertices and the sigma grid, and compared with legendre(curve).
    """
    rf = legendre(curve, sigma_grid)
    sigmas = rf.sigmas
    if len(curve.per_point_curves) == 1:
        single = legendre_scan(curve.alphas, curve.per_point_curves[0], sigmas)
        return float(np.max(np.abs(single - rf.values)))

    vertices = [sigmas]
    for e_j in curve.per_point_curves:
        vertices.append(-np.diff(e_j) / np.diff(curve.alphas))
    knots = np.unique(np.concatenate(vertices))

    envelope = np.min(
        [legendre_scan(curve.alphas, e_j, knots) for e_j in curve.per_point_curves], axis=0
    )
    hx, hy = _lower_hull(knots, envelope)
    hull_values = np.interp(sigmas, hx, hy)
    return float(np.max(np.abs(hull_values - rf.values)))


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

def admissible_pair(q: AdmissibilityQuery) -> bool:
    """Sufficient condition for the pair (alpha, p) in terms of k_b and h_b."""
    alpha, p, k_b, h_b = q.alpha, q.p, q.k_b, q.h_b
    if p <= 1.0:
        return False
    lead = 1.0 - 2.0 * alpha + alpha * p
    if lead < 0.0:
        return False
    base = 1.0 - 1.0 / p - lead * k_b
    if alpha * (1.0 - alpha) >= 0.0:
        return base > 0.0
    return base - p * alpha * (alpha - 1.0) * h_b > 0.0


def pointwise_admissible(samples: FieldSamples, alpha: float, p: float, ell: float = 1.0) -> bool:
    """
    Sampled check of the admissibility definition itself.

    Requires, at every sample,
    ell/p (1 - 1/p) |grad V|^2 - (1 - 2 alpha + alpha p)/p <b, grad V> + alpha(1-alpha)|b|^2 >= 0.
    """
    if p <= 1.0:
        return False
    value = (ell / p * (1.0 - 1.0 / p) * samples.grad_sq
             - (1.0 - 2.0 * alpha + alpha * p) / p * samples.b_dot_grad
             + alpha * (1.0 - alpha) * samples.b_sq)
    return bool(np.all(value >= 0.0))


def region_raster(k_b: float, h_b: float, alpha_range: Interval, p_range: Interval,
                  resolution) -> AdmissibilityRaster:
    """
    admissible_pair on a regular (alpha, p) grid.

    Args:
        k_b: Growth constant in [0, 1/2)
        h_b: Growth constant > 0
        alpha_range: (min, max) alpha
        p_range: (min, max) p
        resolution: Points per axis, an int or an (n_alpha, n_p) pair

    Returns:
        AdmissibilityRaster
    """
    n_alpha, n_p = (resolution, resolution) if np.isscalar(resolution) else resolution
    if n_alpha < 2 or n_p < 2:
        raise ConfigError("raster resolution must be at least 2 per axis")
    alphas = np.linspace(alpha_range[0], alpha_range[1], int(n_alpha))
    ps = np.linspace(p_range[0], p_range[1], int(n_p))
    mask = np.array([
        [admissible_pair(AdmissibilityQuery(k_b=k_b, h_b=h_b, alpha=a, p=p)) for p in ps]
        for a in alphas
    ], dtype=bool)
    logger.info(
        f"Admissibility raster (k_b={k_b}, h_b={h_b}): {mask.sum()} of {mask.size} cells admissible"
    )
    return AdmissibilityRaster(alphas=alphas, ps=ps, mask=mask, k_b=k_b, h_b=h_b)
