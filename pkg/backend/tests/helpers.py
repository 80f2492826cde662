import numpy as np


def rotation_cgf(alpha, omega=1.0):
    """Closed-form CGF of the rotating quadratic well."""
    alpha = np.asarray(alpha, dtype=float)
    return 1.0 - np.sqrt(1.0 + 4.0 * alpha * (1.0 - alpha) * omega ** 2)


def random_linear_blocks(seed: int, dim: int = 2):
    """(C, Bm) with C positive definite and Bm = S C for a skew S."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((dim, dim))
    C = M.T @ M + np.eye(dim)
    A = rng.standard_normal((dim, dim))
    S = 0.5 * (A - A.T)
    return C, S @ C
