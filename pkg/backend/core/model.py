"""
Drift models dX = (-grad V + b) dt + sqrt(2 eps) dW.

A DriftModel bundles analytic evaluators for V, its derivatives and the
non-gradient field b. Every evaluator accepts points of shape (..., N) and
broadcasts over the leading axes. This module also locates and classifies
critical points and runs sampled checks of the growth assumptions.
"""

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional

import numpy as np

from app.config import settings
from core.errors import EpflowWarning, InvalidParams, NumericalGuardError
from utils.logging import get_logger

logger = get_logger(__name__)

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


class DegenerateCritical(NumericalGuardError):
    pass


class NonConvergence(EpflowWarning):
    """Newton seeds that failed to converge (seed discarded)."""


class CriticalKind(str, Enum):
    LOCAL_MIN = "LocalMin"
    SADDLE = "Saddle"
    LOCAL_MAX = "LocalMax"


Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DriftModel:
    dim: int
    V: Evaluator
    grad_V: Evaluator
    hess_V: Evaluator
    b: Evaluator
    jac_b: Evaluator
    div_b: Evaluator
    check_radius: float
    name: str = "custom"
    params: Dict[str, object] = field(default_factory=dict)
    # Hessian C when V = 1/2 <x, C x>; enables the Gaussian reference measure
    quadratic_hessian: Optional[np.ndarray] = None

    @property
    def is_quadratic(self) -> bool:
        return self.quadratic_hessian is not None

    def drift(self, x: np.ndarray) -> np.ndarray:
        return self.b(x) - self.grad_V(x)


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    hess: np.ndarray
    jac: np.ndarray
    kind: CriticalKind
    b_norm: float

    @property
    def is_minimum(self) -> bool:
        return self.kind == CriticalKind.LOCAL_MIN


@dataclass(frozen=True)
class FieldSamples:
    """Sampled ingredients of the growth conditions at points away from critical points."""
    points: np.ndarray
    grad_sq: np.ndarray
    b_dot_grad: np.ndarray
    b_sq: np.ndarray


@dataclass(frozen=True)
class AssumptionReport:
    k_b_hat: float
    h_b_hat: float
    l1_margin: float
    k_b_l1: float
    n_samples: int
    pass_rb: bool
    samples: Optional[FieldSamples] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class ConsistencyReport:
    grad_rel_error: float
    hess_rel_error: float
    jac_rel_error: float
    hess_asymmetry: float
    div_trace_error: float
    n_points: int

    @property
    def passed(self) -> bool:
        return (
            self.grad_rel_error <= 1e-6
            and self.hess_rel_error <= 1e-6
            and self.jac_rel_error <= 1e-6
            and self.hess_asymmetry <= 1e-12
            and self.div_trace_error <= 1e-10
        )


# ---------------------------------------------------------------------------
# Builtin models
# ---------------------------------------------------------------------------

def linear(C, Bm, check_radius: float = 3.0) -> DriftModel:
    """V = 1/2 <x, C x> and b = Bm x."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Bm = np.atleast_2d(np.asarray(Bm, dtype=float))
    n = C.shape[0]
    if C.shape != (n, n) or Bm.shape != (n, n):
        raise InvalidParams(f"C and Bm must be square of the same size, got {C.shape} and {Bm.shape}")
    if n > 3:
        raise InvalidParams(f"Builtin models support N <= 3, got N={n}")
    C = 0.5 * (C + C.T)
    if np.linalg.eigvalsh(C).min() <= 0.0:
        raise InvalidParams("C must be positive definite")
    tr_B = float(np.trace(Bm))

    def V(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum('...i,ij,...j->...', x, C, x)

    def grad_V(x):
        return np.asarray(x, dtype=float) @ C

    def hess_V(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(C, x.shape[:-1] + (n, n)).copy()

    def b(x):
        return np.asarray(x, dtype=float) @ Bm.T

    def jac_b(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(Bm, x.shape[:-1] + (n, n)).copy()

    def div_b(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], tr_B)

    return DriftModel(
        dim=n, V=V, grad_V=grad_V, hess_V=hess_V, b=b, jac_b=jac_b, div_b=div_b,
        check_radius=float(check_radius), name="linear",
        params={"C": C.tolist(), "Bm": Bm.tolist()},
        quadratic_hessian=C,
    )


def rotation(omega: float = 1.0, check_radius: float = 3.0) -> DriftModel:
    """V = 1/2 |x|^2 and b = omega J x in the plane."""
    base = linear(np.eye(2), omega * J2, check_radius=check_radius)
    return DriftModel(
        dim=2, V=base.V, grad_V=base.grad_V, hess_V=base.hess_V, b=base.b,
        jac_b=base.jac_b, div_b=base.div_b, check_radius=base.check_radius,
        name="rotation", params={"omega": float(omega)},
        quadratic_hessian=base.quadratic_hessian,
    )


def _bump(t):
    """f(t) = exp(-1/t) for t > 0, else 0, with its derivative."""
    t = np.asarray(t, dtype=float)
    # exp(-1/t) underflows to 0 well before t = 1e-3
    pos = t > 1e-3
    safe = np.where(pos, t, 1.0)
    f = np.where(pos, np.exp(-1.0 / safe), 0.0)
    df = np.where(pos, f / safe ** 2, 0.0)
    return f, df


def _taper(r, radius: float, width: float):
    """C-infinity cutoff equal to 1 for r <= radius and 0 for r >= radius + width."""
    u = (r - radius) / width
    a, da = _bump(1.0 - u)
    c, dc = _bump(u)
    total = a + c
    tau = a / total
    # d tau / du with dA/du = -f'(1-u), dC/du = f'(u)
    dtau_du = (-da * c - a * dc) / total ** 2
    return tau, dtau_du / width


def twowell(omega: float = 1.0, beta: float = 0.0, check_radius: float = 2.5,
            taper_radius: Optional[float] = None,
            taper_width: Optional[float] = None) -> DriftModel:
    """
    Double well V = 1/4 (x1^2 - 1)^2 + 1/2 x2^2 with a tapered rotational field.

    b(x) = omega (1 + beta x1) tau(|x|) J grad V(x), where tau is a smooth
    cutoff to zero outside the taper radius.
    """
    radius = settings.TAPER_RADIUS if taper_radius is None else float(taper_radius)
    width = settings.TAPER_WIDTH if taper_width is None else float(taper_width)
    if radius <= check_radius or width <= 0:
        raise InvalidParams(
            f"taper radius {radius} must exceed check_radius {check_radius} and width must be positive"
        )

    def V(x):
        x = np.asarray(x, dtype=float)
        return 0.25 * (x[..., 0] ** 2 - 1.0) ** 2 + 0.5 * x[..., 1] ** 2

    def grad_V(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0] ** 3 - x[..., 0], x[..., 1]], axis=-1)

    def hess_V(x):
        x = np.asarray(x, dtype=float)
        h = np.zeros(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = 3.0 * x[..., 0] ** 2 - 1.0
        h[..., 1, 1] = 1.0
        return h

    def _parts(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        tau, dtau = _taper(r, radius, width)
        safe_r = np.where(r > 0.0, r, 1.0)
        grad_tau = (dtau / safe_r)[..., None] * x
        s = omega * (1.0 + beta * x[..., 0])
        grad_s = np.zeros_like(x)
        grad_s[..., 0] = omega * beta
        rot = grad_V(x) @ J2.T
        return tau, grad_tau, s, grad_s, rot

    def b(x):
        tau, _, s, _, rot = _parts(x)
        return (tau * s)[..., None] * rot

    def jac_b(x):
        tau, grad_tau, s, grad_s, rot = _parts(x)
        weight = s[..., None] * grad_tau + tau[..., None] * grad_s
        return ((tau * s)[..., None, None] * (J2 @ hess_V(x))
                + rot[..., :, None] * weight[..., None, :])

    def div_b(x):
        # tr(J H) = 0 for symmetric H
        tau, grad_tau, s, grad_s, rot = _parts(x)
        weight = s[..., None] * grad_tau + tau[..., None] * grad_s
        return np.einsum('...i,...i->...', rot, weight)

    return DriftModel(
        dim=2, V=V, grad_V=grad_V, hess_V=hess_V, b=b, jac_b=jac_b, div_b=div_b,
        check_radius=float(check_radius), name="twowell",
        params={"omega": float(omega), "beta": float(beta),
                "taper_radius": radius, "taper_width": width},
    )


BUILTINS: Dict[str, Callable[..., DriftModel]] = {
    "linear": linear,
    "rotation": rotation,
    "twowell": twowell,
}


def builtin(name: str, **params) -> DriftModel:
    """
    Build a named model.

    Args:
        name: One of linear, rotation, twowell
        **params: Keyword parameters of the chosen factory

    Returns:
        The DriftModel
    """
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise InvalidParams(f"Unknown builtin model '{name}' (expected one of {sorted(BUILTINS)})")
    try:
        return factory(**params)
    except TypeError as e:
        raise InvalidParams(f"Bad parameters for model '{name}': {e}") from e


# Boundary-term functions g > 0 of the entropy production functional
BOUNDARY_FUNCTIONS: Dict[str, Evaluator] = {
    "one": lambda x: np.ones(np.asarray(x).shape[:-1]),
    "bump": lambda x: 1.0 + 0.5 * np.exp(-np.sum(np.asarray(x) ** 2, axis=-1)),
}


def boundary_function(name: str) -> Evaluator:
    try:
        return BOUNDARY_FUNCTIONS[name]
    except KeyError:
        raise InvalidParams(f"Unknown boundary function '{name}' (expected one of {sorted(BOUNDARY_FUNCTIONS)})")


# ---------------------------------------------------------------------------
# Critical points
# ---------------------------------------------------------------------------

def seed_grid(model: DriftModel, points_per_dim: Optional[int] = None) -> np.ndarray:
    """Cartesian seeds covering the check ball."""
    k = points_per_dim or settings.SEED_POINTS_PER_DIM
    axis = np.linspace(-model.check_radius, model.check_radius, k)
    mesh = np.meshgrid(*([axis] * model.dim), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _newton(model: DriftModel, x0: np.ndarray, max_iter: int, tol: float) -> Optional[np.ndarray]:
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        g = model.grad_V(x)
        if np.linalg.norm(g) <= tol:
            return x
        try:
            step = np.linalg.solve(model.hess_V(x), g)
        except np.linalg.LinAlgError:
            return None
        x = x - step
        if not np.all(np.isfinite(x)):
            return None
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            return x if np.linalg.norm(model.grad_V(x)) <= 1e-9 else None
    return None


def classify(hess: np.ndarray) -> CriticalKind:
    eig = np.linalg.eigvalsh(hess)
    if np.all(eig > 0):
        return CriticalKind.LOCAL_MIN
    if np.all(eig < 0):
        return CriticalKind.LOCAL_MAX
    return CriticalKind.SADDLE


def find_critical_points(model: DriftModel, seeds: Optional[np.ndarray] = None,
                         max_iter: Optional[int] = None) -> List[CriticalPoint]:
    """
    Locate the critical points of V inside the check ball by Newton's method.

    Args:
        model: Drift model
        seeds: (k, N) starting points, defaults to an 11^N grid on the check ball
        max_iter: Newton iteration cap per seed

    Returns:
        Critical points sorted lexicographically by location
    """
    seeds = seed_grid(model) if seeds is None else np.atleast_2d(seeds)
    max_iter = max_iter or settings.NEWTON_MAX_ITER

    roots: List[np.ndarray] = []
    failed = 0
    for seed in seeds:
        root = _newton(model, seed, max_iter, settings.NEWTON_TOL)
        if root is None:
            failed += 1
            continue
        if np.linalg.norm(root) > model.check_radius * (1.0 + 1e-9):
            continue
        if all(np.linalg.norm(root - r) > settings.DEDUP_RADIUS for r in roots):
            roots.append(root)

    if failed:
        message = f"{failed} of {len(seeds)} Newton seeds did not converge and were discarded"
        logger.warning(message)
        warnings.warn(message, NonConvergence, stacklevel=2)

    roots.sort(key=lambda r: tuple(r))
    points = []
    for root in roots:
        hess = 0.5 * (model.hess_V(root) + model.hess_V(root).T)
        det = np.linalg.det(hess)
        if abs(det) < settings.DEGENERATE_DET_TOL:
            raise DegenerateCritical(f"Critical point at {root.tolist()} has |det D2V| = {abs(det):.3e}")
        points.append(CriticalPoint(
            location=root,
            hess=hess,
            jac=np.asarray(model.jac_b(root), dtype=float),
            kind=classify(hess),
            b_norm=float(np.linalg.norm(model.b(root))),
        ))
    logger.info(
        f"Model {model.name}: {len(points)} critical points "
        f"({', '.join(p.kind.value for p in points)})"
    )
    return points


# ---------------------------------------------------------------------------
# Sampled assumption checks
# ---------------------------------------------------------------------------

def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.random(n) ** (1.0 / dim))[:, None]


def sample_fields(model: DriftModel, n_samples: int, rng_seed: int = 0,
                  critical_points: Optional[List[CriticalPoint]] = None,
                  exclusion: float = 1e-3) -> FieldSamples:
    """Uniform samples in the check ball, excluding small neighbourhoods of critical points."""
    if n_samples < 1:
        raise InvalidParams("n_samples must be at least 1")
    if critical_points is None:
        critical_points = find_critical_points(model)
    centers = np.array([p.location for p in critical_points]).reshape(-1, model.dim)
    rng = np.random.default_rng(rng_seed)

    kept = np.empty((0, model.dim))
    while len(kept) < n_samples:
        batch = sample_ball(rng, n_samples, model.dim, model.check_radius)
        if len(centers):
            dist = np.linalg.norm(batch[:, None, :] - centers[None, :, :], axis=-1)
            batch = batch[dist.min(axis=1) > exclusion]
        kept = np.vstack([kept, batch])
    points = kept[:n_samples]

    grad = model.grad_V(points)
    bv = model.b(points)
    return FieldSamples(
        points=points,
        grad_sq=np.einsum('ij,ij->i', grad, grad),
        b_dot_grad=np.einsum('ij,ij->i', bv, grad),
        b_sq=np.einsum('ij,ij->i', bv, bv),
    )


def check_assumptions(model: DriftModel, n_samples: int, rng_seed: int = 0,
                      k_b: Optional[float] = None,
                      critical_points: Optional[List[CriticalPoint]] = None) -> AssumptionReport:
    """
    Sampled estimates of the growth constants.

    A sampled check can refute but never prove the global assumptions.
    With H_b = identity, the L1 margin is inf <grad V - b, x> - |x|^2 + K_b;
    when K_b is not supplied the smallest K_b making the margin nonnegative
    on the samples is used and reported.
    """
    samples = sample_fields(model, n_samples, rng_seed, critical_points)
    k_b_hat = max(0.0, float(np.max(samples.b_dot_grad / samples.grad_sq)))
    h_b_hat = float(np.max(samples.b_sq / samples.grad_sq))

    x = samples.points
    pull = model.grad_V(x) - model.b(x)
    l1 = np.einsum('ij,ij->i', pull, x) - np.einsum('ij,ij->i', x, x)
    k_b_l1 = max(0.0, -float(l1.min())) if k_b is None else float(k_b)
    report = AssumptionReport(
        k_b_hat=k_b_hat,
        h_b_hat=h_b_hat,
        l1_margin=float(l1.min()) + k_b_l1,
        k_b_l1=k_b_l1,
        n_samples=len(x),
        pass_rb=k_b_hat < 0.5,
        samples=samples,
    )
    logger.info(
        f"Assumption check on {model.name} ({report.n_samples} samples): "
        f"k_b={report.k_b_hat:.4g}, h_b={report.h_b_hat:.4g}, L1 margin={report.l1_margin:.4g} "
        f"(K_b={report.k_b_l1:.4g}), RB {'passed' if report.pass_rb else 'FAILED'}"
    )
    return report


def verify_consistency(model: DriftModel, n_points: int = 100, seed: int = 0,
                       radius: Optional[float] = None, step: float = 1e-5) -> ConsistencyReport:
    """
    Finite-difference consistency of the analytic evaluators.

    Central differences of V, grad V and b are compared with grad V, the
    Hessian and the Jacobian; errors are relative to max(|reference|, 1).
    """
    rng = np.random.default_rng(seed)
    x = sample_ball(rng, n_points, model.dim, radius or model.check_radius)
    eye = np.eye(model.dim) * step

    fd_grad = np.stack([(model.V(x + e) - model.V(x - e)) / (2 * step) for e in eye], axis=-1)
    fd_hess = np.stack([(model.grad_V(x + e) - model.grad_V(x - e)) / (2 * step) for e in eye], axis=-1)
    fd_jac = np.stack([(model.b(x + e) - model.b(x - e)) / (2 * step) for e in eye], axis=-1)

    def rel(fd, exact):
        axes = tuple(range(1, exact.ndim))
        err = np.sqrt(np.sum((fd - exact) ** 2, axis=axes))
        ref = np.maximum(np.sqrt(np.sum(exact ** 2, axis=axes)), 1.0)
        return float(np.max(err / ref))

    hess = model.hess_V(x)
    jac = model.jac_b(x)
    return ConsistencyReport(
        grad_rel_error=rel(fd_grad, model.grad_V(x)),
        hess_rel_error=rel(fd_hess, hess),
        jac_rel_error=rel(fd_jac, jac),
        hess_asymmetry=float(np.max(np.abs(hess - np.swapaxes(hess, -1, -2)))),
        div_trace_error=float(np.max(np.abs(model.div_b(x) - np.trace(jac, axis1=-2, axis2=-1)))),
        n_points=n_points,
    )
