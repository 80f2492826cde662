"""
simulate: Monte Carlo ensemble, per-path entropy production and estimates.
"""

from pathlib import Path
from typing import Dict, List

from app.commands import CommandContext
from app.commands.rate import semiclassical_rate
from core.errors import EpflowError
from core.model import DriftModel, boundary_function, check_assumptions, find_critical_points
from core.montecarlo import (
    EpEnsemble, InitSpec, SimConfig, estimate_mean_ep, estimate_mean_ep_stationary, estimate_mgf,
    moment_bound_check, proxy_distance, simulate, tail_histogram,
)
from core.ratefn import default_alpha_grid
from utils.csv_io import write_csv
from utils.logging import get_logger

logger = get_logger(__name__)

PROXY_SAMPLES = 2000


def sim_config(params, seed: int) -> SimConfig:
    x0 = tuple(params.x0) if params.x0 is not None else None
    init = InitSpec(kind=params.init.value, x0=x0, t_burn=getattr(params, "t_burn", 10.0))
    return SimConfig(
        eps=params.eps, dt=params.dt, horizon=params.horizon, n_paths=params.n_paths, seed=seed,
        init=init, g=boundary_function(params.g.value), g_name=params.g.value,
    )


def path_rows(ens, model: DriftModel):
    for i, (s_ito, s_strat, x) in enumerate(zip(ens.samples, ens.strat_samples, ens.final_states)):
        yield [i, s_ito, s_strat] + list(x[:model.dim])


def rate_proxy_distance(model: DriftModel, ens: EpEnsemble, bins: int, seed: int, threads: int):
    """L1 distance of the histogram proxy to the semiclassical e_+, None when e_+ is unavailable."""
    try:
        points = find_critical_points(model)
        report = check_assumptions(model, PROXY_SAMPLES, seed, critical_points=points)
        alphas = default_alpha_grid(report.k_b_hat, report.h_b_hat)
        _, _, rf = semiclassical_rate(model, points, alphas, threads=threads)
    except EpflowError as e:
        logger.warning(f"Semiclassical rate unavailable for the histogram comparison: {e}")
        return None
    return proxy_distance(ens, rf.sigmas, rf.values, bins=bins)


def run(ctx: CommandContext) -> List[Path]:
    params = ctx.params
    model = ctx.config.model.build()
    config = sim_config(params, ctx.seed)
    ens = simulate(model, config, threads=ctx.threads)

    meta: Dict[str, object] = ctx.metadata()
    if config.n_paths >= 2:
        mean = estimate_mean_ep(ens)
        meta.update(mean_ep_rate=mean.mean_ep_rate, mean_ep_se=mean.mean_ep_se,
                    strat_rate=mean.strat_rate, second_moment=mean.second_moment,
                    moment_bound=moment_bound_check(ens))
    if params.t_long is not None:
        stationary = estimate_mean_ep_stationary(model, params.eps, params.t_long, params.dt,
                                                 seed=ctx.seed, t_burn=params.t_burn, x0=params.x0)
        meta.update(stationary_mean_ep=stationary.rate, stationary_mean_ep_se=stationary.se)

    header = ["path_id", "S_ito", "S_strat"] + [f"x{d + 1}_final" for d in range(model.dim)]
    written = [write_csv(ctx.out_dir / "paths.csv", header, path_rows(ens, model), meta)]

    if params.alphas:
        estimates = estimate_mgf(ens, params.alphas)
        rows = [[m.alpha, m.log_rate, m.se] for m in estimates.mgf]
        flagged = [m.alpha for m in estimates.mgf if not m.reliable]
        written.append(write_csv(
            ctx.out_dir / "mgf.csv", ["alpha", "mgf_log_rate", "se"], rows,
            dict(meta, unreliable_alphas=flagged),
        ))

    histogram = tail_histogram(ens, params.bins)
    distance = rate_proxy_distance(model, ens, params.bins, ctx.seed, ctx.threads) if params.compare_rate else None
    written.append(write_csv(
        ctx.out_dir / "histogram.csv", ["midpoint", "rate_proxy"], histogram,
        dict(meta, proxy_distance="n/a" if distance is None else distance),
    ))
    return written
