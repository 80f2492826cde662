"""
Monte Carlo estimation of entropy production.

Paths of dX = (-grad V + b) dt + sqrt(2 eps) dW are advanced by
Euler-Maruyama in fixed-size blocks. Block k draws its noise from a Philox
stream keyed by (seed, k), so an ensemble is bit-identical for any number
of worker threads. Entropy production is accumulated in the Ito form (the
estimator) and by the Stratonovich midpoint rule (a consistency channel).
"""

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from app.config import settings
from core.errors import ConfigError, EpflowWarning, NumericalGuardError
from core.model import DriftModel, boundary_function
from utils.logging import get_logger, log_ensemble

logger = get_logger(__name__)

T_BURN_DEFAULT = 10.0
MIN_HISTOGRAM_PATHS = 10_000


class Blowup(NumericalGuardError):
    pass


class DegenerateWeights(EpflowWarning):
    pass


class MgfRangeWarning(EpflowWarning):
    pass


class SmallEnsemble(EpflowWarning):
    pass


@dataclass(frozen=True)
class InitSpec:
    kind: str = "point"  # point | burn_in | mu0_gaussian
    x0: Optional[Tuple[float, ...]] = None
    t_burn: float = T_BURN_DEFAULT

    def start(self, dim: int) -> np.ndarray:
        return np.zeros(dim) if self.x0 is None else np.asarray(self.x0, dtype=float)


@dataclass(frozen=True)
class SimConfig:
    eps: float
    dt: float
    horizon: float
    n_paths: int
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)
    g: Callable[[np.ndarray], np.ndarray] = field(default_factory=lambda: boundary_function("one"))
    g_name: str = "one"
    block_size: Optional[int] = None
    n_records: int = 100

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ConfigError("eps must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if self.dt <= 0.0 or self.dt > self.horizon / 100.0 * (1.0 + 1e-12):
            raise ConfigError(f"dt must lie in (0, horizon/100], got dt={self.dt} for horizon {self.horizon}")
        if self.init.kind not in ("point", "burn_in", "mu0_gaussian"):
            raise ConfigError(f"Unknown init '{self.init.kind}'")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def blocks(self) -> List[Tuple[int, int]]:
        size = self.block_size or settings.MC_BLOCK_SIZE
        return [(start, min(start + size, self.n_paths)) for start in range(0, self.n_paths, size)]


@dataclass(frozen=True)
class EpEnsemble:
    samples: np.ndarray
    strat_samples: np.ndarray
    final_states: np.ndarray
    config: SimConfig
    record_times: np.ndarray
    second_moment: np.ndarray
    initial_second_moment: float


@dataclass(frozen=True)
class MgfEstimate:
    alpha: float
    log_rate: float
    se: float
    reliable: bool = True


@dataclass(frozen=True)
class Estimates:
    mean_ep_rate: Optional[float] = None
    mean_ep_se: Optional[float] = None
    strat_rate: Optional[float] = None
    mgf: Tuple[MgfEstimate, ...] = ()
    second_moment: Optional[float] = None


@dataclass(frozen=True)
class StationaryEstimate:
    rate: float
    se: float
    t_long: float

    def __float__(self) -> float:
        return self.rate


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based substream for one block of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(block,))))


def _initial_states(model: DriftModel, config: SimConfig, rng: np.random.Generator, m: int) -> np.ndarray:
    init = config.init
    x0 = init.start(model.dim)
    if init.kind == "mu0_gaussian":
        if not model.is_quadratic:
            raise ConfigError("mu0_gaussian init needs a quadratic potential")
        cov = config.eps * np.linalg.inv(model.quadratic_hessian)
        return rng.standard_normal((m, model.dim)) @ np.linalg.cholesky(cov).T
    x = np.tile(x0, (m, 1))
    if init.kind == "burn_in":
        scale = math.sqrt(2.0 * config.eps * config.dt)
        for _ in range(int(round(init.t_burn / config.dt))):
            x = x + model.drift(x) * config.dt + scale * rng.standard_normal(x.shape)
    return x


def _run_block(model: DriftModel, config: SimConfig, block: int, start: int, stop: int):
    rng = block_rng(config.seed, block)
    m = stop - start
    eps, dt = config.eps, config.dt
    limit = 100.0 * model.check_radius
    record_every = max(1, config.n_steps // config.n_records)

    x = _initial_states(model, config, rng, m)
    log_g0 = np.log(config.g(x))
    moment0 = float(np.sum(x * x))
    s_ito = np.zeros(m)
    s_strat = np.zeros(m)
    moments = []
    noise_scale = math.sqrt(2.0 * eps * dt)
    ito_scale = math.sqrt(2.0 / eps) * math.sqrt(dt)

    for k in range(config.n_steps):
        xi = rng.standard_normal((m, model.dim))
        bx = model.b(x)
        gx = model.grad_V(x)
        x_new = x + (bx - gx) * dt + noise_scale * xi
        s_ito += ((np.einsum('ij,ij->i', bx, bx) - np.einsum('ij,ij->i', bx, gx)) / eps
                  + model.div_b(x)) * dt + ito_scale * np.einsum('ij,ij->i', bx, xi)
        s_strat += np.einsum('ij,ij->i', model.b(0.5 * (x + x_new)), x_new - x) / eps
        x = x_new
        norms = np.einsum('ij,ij->i', x, x)
        if not np.all(norms <= limit ** 2):
            bad = int(np.argmax(~(norms <= limit ** 2)))
            raise Blowup(
                f"Path {start + bad} left the ball of radius {limit:g} at t={(k + 1) * dt:.4g}; "
                f"reduce dt or check the growth assumptions"
            )
        if (k + 1) % record_every == 0:
            moments.append(float(norms.sum()))

    boundary = log_g0 - np.log(config.g(x))
    return s_ito + boundary, s_strat + boundary, x, np.array(moments), moment0


def simulate(model: DriftModel, config: SimConfig, threads: int = 1) -> EpEnsemble:
    """
    Simulate an ensemble and accumulate entropy production along each path.

    Args:
        model: Drift model
        config: Simulation settings
        threads: Worker threads (results do not depend on this)

    Returns:
        EpEnsemble with both entropy production channels
    """
    begin = time.perf_counter()
    blocks = config.blocks
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda job: _run_block(model, config, job[0], *job[1]), enumerate(blocks)))

    samples = np.concatenate([r[0] for r in results])
    strat = np.concatenate([r[1] for r in results])
    finals = np.vstack([r[2] for r in results])
    moment_sums = np.sum([r[3] for r in results], axis=0)
    record_every = max(1, config.n_steps // config.n_records)
    record_times = config.dt * record_every * np.arange(1, len(moment_sums) + 1)

    log_ensemble(logger, config.n_paths, config.horizon, config.dt, threads, time.perf_counter() - begin)
    return EpEnsemble(
        samples=samples,
        strat_samples=strat,
        final_states=finals,
        config=config,
        record_times=record_times,
        second_moment=moment_sums / config.n_paths,
        initial_second_moment=sum(r[4] for r in results) / config.n_paths,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def estimate_mean_ep(ens: EpEnsemble) -> Estimates:
    """Mean and standard error of S_t / t over the ensemble."""
    n = len(ens.samples)
    if n < 2:
        raise ConfigError("At least two paths are needed for a standard error")
    rates = ens.samples / ens.config.horizon
    estimate = Estimates(
        mean_ep_rate=float(np.mean(rates)),
        mean_ep_se=float(np.std(rates, ddof=1) / math.sqrt(n)),
        strat_rate=float(np.mean(ens.strat_samples) / ens.config.horizon),
        second_moment=float(ens.second_moment[-1]) if len(ens.second_moment) else None,
    )
    logger.info(
        f"Mean EP rate {estimate.mean_ep_rate:.6g} +/- {estimate.mean_ep_se:.2g} "
        f"(Stratonovich channel {estimate.strat_rate:.6g})"
    )
    return estimate


def _log_mean_exp_jackknife(values: np.ndarray) -> Tuple[float, float, float]:
    """log mean exp(values), its jackknife standard error and the largest weight share."""
    n = len(values)
    log_total = logsumexp(values)
    estimate = log_total - math.log(n)
    weights = np.exp(values - log_total)
    top_share = float(weights.max())
    if n < 2:
        return float(estimate), 0.0, top_share
    remaining = np.maximum(1.0 - weights, np.finfo(float).tiny)
    leave_one_out = log_total + np.log(remaining) - math.log(n - 1)
    variance = (n - 1) / n * np.sum((leave_one_out - leave_one_out.mean()) ** 2)
    return float(estimate), float(math.sqrt(variance)), top_share


def estimate_mgf(ens: EpEnsemble, alphas: Sequence[float]) -> Estimates:
    """
    (1/t) log of the ensemble mean of exp(-alpha S_t) with jackknife errors.

    Estimates are flagged unreliable when one path carries more than half
    of the exponential mass or the horizon exceeds 4.
    """
    t = ens.config.horizon
    rows = []
    for alpha in alphas:
        alpha = float(alpha)
        if alpha < 0.0 or alpha > 1.0:
            message = f"alpha={alpha:g} lies outside [0, 1]; the exponential estimator variance explodes"
            logger.warning(message)
            warnings.warn(message, MgfRangeWarning, stacklevel=2)
        log_mean, se, top_share = _log_mean_exp_jackknife(-alpha * ens.samples)
        reliable = t <= 4.0
        if top_share > 0.5:
            reliable = False
            message = f"One path carries {top_share:.0%} of the exponential mass at alpha={alpha:g}"
            logger.warning(message)
            warnings.warn(message, DegenerateWeights, stacklevel=2)
        rows.append(MgfEstimate(alpha=alpha, log_rate=log_mean / t, se=se / t, reliable=reliable))
    return Estimates(mgf=tuple(rows))


def estimate_mean_ep_stationary(model: DriftModel, eps: float, t_long: float, dt: float,
                                seed: int = 0, t_burn: float = T_BURN_DEFAULT,
                                x0: Optional[Sequence[float]] = None,
                                n_batches: int = 20) -> StationaryEstimate:
    """
    Ergodic average of eps^-1 (|b|^2 - <b, grad V>) + div b along one trajectory.

    Args:
        model: Drift model
        eps: Noise strength
        t_long: Averaging time after burn-in
        dt: Time step
        seed: RNG seed
        t_burn: Burn-in time (at least 10)
        x0: Starting point (origin if omitted)
        n_batches: Batches for the batch-means standard error

    Returns:
        StationaryEstimate (converts to float)
    """
    if t_burn < 10.0:
        raise ConfigError("Burn-in must last at least 10 time units")
    rng = block_rng(seed, 0)
    x = np.zeros(model.dim) if x0 is None else np.asarray(x0, dtype=float)
    scale = math.sqrt(2.0 * eps * dt)
    limit = 100.0 * model.check_radius
    n_burn = int(round(t_burn / dt))
    n_steps = int(round(t_long / dt))
    chunk = 4096

    integrand = np.empty(n_steps)
    step = 0
    for offset in range(0, n_burn + n_steps, chunk):
        noise = rng.standard_normal((min(chunk, n_burn + n_steps - offset), model.dim))
        for xi in noise:
            if step >= n_burn:
                bx = model.b(x)
                gx = model.grad_V(x)
                integrand[step - n_burn] = (bx @ bx - bx @ gx) / eps + float(model.div_b(x))
                x = x + (bx - gx) * dt + scale * xi
            else:
                x = x + model.drift(x) * dt + scale * xi
            if x @ x > limit ** 2:
                raise Blowup(f"Trajectory left the ball of radius {limit:g} at step {step}")
            step += 1

    rate = float(np.mean(integrand))
    batches = np.array_split(integrand, n_batches)
    means = np.array([b.mean() for b in batches])
    se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    logger.info(f"Stationary mean EP rate {rate:.6g} +/- {se:.2g} over t={t_long:g}")
    return StationaryEstimate(rate=rate, se=se, t_long=t_long)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def tail_histogram(ens: EpEnsemble, bins: int = 50) -> List[Tuple[float, float]]:
    """Rows (midpoint, -(1/t) log frequency) of the empirical S_t / t distribution."""
    t = ens.config.horizon
    if len(ens.samples) < MIN_HISTOGRAM_PATHS:
        message = (f"Histogram of {len(ens.samples)} paths; the rate proxy needs at least "
                   f"{MIN_HISTOGRAM_PATHS} to be meaningful")
        logger.warning(message)
        warnings.warn(message, SmallEnsemble, stacklevel=2)
    counts, edges = np.histogram(ens.samples / t, bins=bins)
    freq = counts / counts.sum()
    mids = 0.5 * (edges[:-1] + edges[1:])
    return [(float(m), float(-math.log(f) / t)) for m, f in zip(mids, freq) if f > 0]


def proxy_distance(ens: EpEnsemble, rate_sigmas: np.ndarray, rate_values: np.ndarray,
                   bins: int = 50) -> float:
    """
    L1 distance between the shifted histogram proxy and e_+ on the central half of the mass.
    """
    rows = np.array(tail_histogram(ens, bins))
    proxy = rows[:, 1] - rows[:, 1].min()
    lo, hi = np.quantile(ens.samples / ens.config.horizon, [0.25, 0.75])
    mask = (rows[:, 0] >= lo) & (rows[:, 0] <= hi)
    if mask.sum() < 2:
        return float("nan")
    target = np.interp(rows[mask, 0], rate_sigmas, rate_values)
    return float(trapezoid(np.abs(proxy[mask] - target), rows[mask, 0]))


def moment_bound_check(ens: EpEnsemble) -> bool:
    """Second moment stays below max(E|X_0|^2, twice its long-time plateau)."""
    trace = ens.second_moment
    if len(trace) == 0:
        return True
    plateau = float(np.mean(trace[-max(1, len(trace) // 4):]))
    bound = max(ens.initial_second_moment, 2.0 * plateau)
    return bool(np.all(trace <= bound))
