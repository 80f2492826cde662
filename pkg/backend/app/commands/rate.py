"""
rate: semiclassical CGF and rate function of a model.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.commands import CommandContext
from core.errors import InvalidParams
from core.model import CriticalPoint, DriftModel, check_assumptions, find_critical_points, verify_consistency
from core.ratefn import (
    CgfCurve, NoLocalMinima, RateFunction, alpha_interval, convex_hull_check, default_alpha_grid,
    flat_interval, gc_defect, legendre, mean_ep_local, pointwise_admissible, rate_gc_defect,
    sampled_alpha_interval, semiclassical_cgf,
)
from core.riccati import equilibrium_test, linearize, mean_ep_lyapunov
from utils.csv_io import write_csv
from utils.logging import get_logger

logger = get_logger(__name__)

DOMAIN_NOTE = "domain is the derivative range of e over the computed alpha grid"


def _fmt_interval(interval) -> str:
    if interval is None:
        return "none"
    return f"[{interval[0]:.17g}, {interval[1]:.17g}]"


def semiclassical_rate(model: DriftModel, points: Sequence[CriticalPoint], alphas: np.ndarray,
                       sigma_points: int = 401, threads: int = 1):
    """CGF, flat interval and rate function on the given alpha grid."""
    curve = semiclassical_cgf(model, alphas, list(points), threads=threads)
    try:
        flat = flat_interval(model, list(points))
    except NoLocalMinima:
        logger.warning("No local minimum inside the check ball; flat interval not reported")
        flat = None
    return curve, flat, legendre(curve, flat=flat, n_sigma=sigma_points)


def local_point_summary(points: Sequence[CriticalPoint]) -> str:
    """Per local minimum: mean EP from the CGF slope, from the Lyapunov covariance, equilibrium flag."""
    parts = []
    for index, point in enumerate(points):
        if not point.is_minimum:
            continue
        lin = linearize(point)
        try:
            lyapunov = f"{mean_ep_lyapunov(lin):.17g}"
        except InvalidParams:
            lyapunov = "n/a"
        parts.append(
            f"{index}: m={mean_ep_local(lin):.17g} lyapunov={lyapunov} equilibrium={equilibrium_test(lin)}"
        )
    return "; ".join(parts) or "none"


def _pointwise_failures(report, alphas: np.ndarray) -> Optional[List[float]]:
    if report.samples is None:
        return None
    inside = alphas[(alphas >= 0.0) & (alphas <= 1.0)]
    return [float(a) for a in inside if not pointwise_admissible(report.samples, a, 2.0)]


def run(ctx: CommandContext) -> List[Path]:
    params = ctx.params
    model = ctx.config.model.build()
    points = find_critical_points(model)

    consistency = verify_consistency(model, seed=ctx.seed)
    if not consistency.passed:
        logger.warning(f"Analytic derivatives of {model.name} disagree with finite differences: {consistency}")

    report = check_assumptions(model, params.n_samples, ctx.seed, critical_points=points)
    k_b = report.k_b_hat if params.k_b is None else params.k_b
    h_b = report.h_b_hat if params.h_b is None else params.h_b
    interval = alpha_interval(k_b, h_b)
    sampled = sampled_alpha_interval(report.samples) if report.samples is not None else None

    if params.alpha_min is not None or params.alpha_max is not None:
        lo = params.alpha_min if params.alpha_min is not None else max(interval[0], -1.0)
        hi = params.alpha_max if params.alpha_max is not None else min(interval[1], 2.0)
        alphas = np.union1d(np.linspace(lo, hi, params.alpha_points), [0.0, 1.0])
    else:
        alphas = default_alpha_grid(k_b, h_b, params.alpha_points)

    curve, flat, rf = semiclassical_rate(model, points, alphas, params.sigma_points, ctx.threads)
    hull = convex_hull_check(curve, rf.sigmas)
    failures = _pointwise_failures(report, curve.alphas)
    if failures:
        logger.warning(f"{len(failures)} grid points in [0, 1] fail the sampled admissibility check at p=2")

    meta: Dict[str, object] = ctx.metadata(
        critical_points="; ".join(f"{p.kind.value}@{np.round(p.location, 10).tolist()}" for p in points),
        local_minima=local_point_summary(points),
        consistency_passed=consistency.passed,
        k_b=k_b, h_b=h_b,
        l1_margin=report.l1_margin, pass_rb=report.pass_rb,
        alpha_interval=_fmt_interval(interval),
        sampled_alpha_interval=_fmt_interval(sampled),
        pointwise_p2_failures="n/a" if failures is None else len(failures),
        domain=_fmt_interval(rf.domain),
        domain_note=DOMAIN_NOTE,
        flat_interval=_fmt_interval(flat),
        gc_defect=gc_defect(curve),
        rate_gc_defect=rate_gc_defect(rf),
        convex_hull_deviation=hull,
    )
    return write_rate_files(ctx.out_dir, curve, rf, meta)


def write_rate_files(out_dir: Path, curve: CgfCurve, rf: RateFunction, meta: Dict[str, object]) -> List[Path]:
    cgf_path = write_csv(
        out_dir / "cgf.csv", ["alpha", "e", "argmax_j"],
        zip(curve.alphas, curve.values, curve.argmax_index), meta,
    )
    rate_path = write_csv(
        out_dir / "rate.csv", ["sigma", "e_star"],
        zip(rf.sigmas, rf.values), meta,
    )
    return [cgf_path, rate_path]
