import numpy as np


def sample_offsets(delta: float, k: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` points drawn uniformly from the l2 ball of radius ``delta`` around 0.

    Directions are normalised Gaussians, radii ``delta * U ** (1 / dim)``.
    """
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if delta == 0:
        return np.zeros((k, dim))
    directions = rng.standard_normal((k, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = delta * rng.random(k) ** (1.0 / dim)
    return directions * radii[:, None]


def sample_ball(center, delta: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Array of shape (k, d) with i.i.d. uniform samples from B(center, delta)."""
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    return center[None, :] + sample_offsets(delta, k, center.size, rng)
