import numpy as np


def mse(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.size != x_hat.size:
        raise ValueError(f"cannot compare shapes {x.shape} and {x_hat.shape}")
    return float(np.mean((x.reshape(-1) - x_hat.reshape(-1)) ** 2))


def psnr(x, x_hat, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    error = mse(x, x_hat)
    if error == 0:
        return float("inf")
    return float(10.0 * np.log10(max_val**2 / error))


def l2_distance(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    if x.size != x_hat.size:
        raise ValueError(f"cannot compare sizes {x.size} and {x_hat.size}")
    return float(np.linalg.norm(x - x_hat))


def psnr_from_distance(distance, dim: int, max_val: float = 1.0):
    """PSNR of an image pair given only their l2 distance."""
    distance = np.asarray(distance, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(max_val**2 * dim / distance**2)
