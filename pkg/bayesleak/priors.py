"""Input priors log p(x), up to constants, traced in x.

All priors follow one sign convention: larger is more probable, and every prior except
``uniform`` is <= 0.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor

KINDS = (
    "uniform",
    "gaussian_unit",
    "laplacian_unit",
    "tv_aniso",
    "pixel_range",
    "tv_plus_range",
)
IMAGE_KINDS = ("tv_aniso", "tv_plus_range")


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "uniform"
    phi: Optional[float] = None
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prior kind '{self.kind}', expected one of {KINDS}")
        if self.image_shape is not None:
            shape = tuple(int(s) for s in self.image_shape)
            if len(shape) != 2 or min(shape) < 1:
                raise ValueError(f"image_shape must be (H, W), got {self.image_shape}")
            object.__setattr__(self, "image_shape", shape)
        if self.kind in IMAGE_KINDS and self.image_shape is None:
            raise ValueError(f"prior '{self.kind}' requires image_shape")
        if self.kind == "tv_plus_range":
            if self.phi is None or not 0 <= self.phi <= 1:
                raise ValueError(f"tv_plus_range requires phi in [0, 1], got {self.phi}")
        elif self.phi is not None:
            raise ValueError(f"prior '{self.kind}' does not take phi")

    @property
    def label(self) -> str:
        return self.kind if self.phi is None else f"{self.kind}(phi={self.phi:g})"

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.phi is not None:
            d["phi"] = self.phi
        if self.image_shape is not None:
            d["image_shape"] = list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        unknown = set(d) - {"kind", "phi", "image_shape"}
        if unknown:
            raise ValueError(f"unknown prior keys: {sorted(unknown)}")
        shape = d.get("image_shape")
        return cls(
            kind=d.get("kind", "uniform"),
            phi=d.get("phi"),
            image_shape=tuple(shape) if shape is not None else None,
        )


@lru_cache(maxsize=32)
def _neighbour_indices(shape: Tuple[int, int]):
    index = np.arange(shape[0] * shape[1]).reshape(shape)
    return (
        index[:, 1:].ravel(),
        index[:, :-1].ravel(),
        index[1:, :].ravel(),
        index[:-1, :].ravel(),
    )


def _flat_image(prior: PriorSpec, x: Tensor) -> Tensor:
    if prior.image_shape is not None and x.size != prior.image_shape[0] * prior.image_shape[1]:
        raise ValueError(
            f"input of shape {x.shape} does not match image shape {prior.image_shape}"
        )
    return x if x.ndim == 1 else x.flatten()


def total_variation(x: Tensor, shape: Tuple[int, int]) -> Tensor:
    """Anisotropic TV with forward differences and no wraparound."""
    right, left, down, up = _neighbour_indices(tuple(shape))
    horizontal = (x.take(right) - x.take(left)).abs().sum()
    vertical = (x.take(down) - x.take(up)).abs().sum()
    return horizontal + vertical


def range_error(x: Tensor) -> Tensor:
    """||x - clip(x, 0, 1)||_2, with zero gradient when every entry is in range."""
    outside = x - x.clip(0.0, 1.0)
    squared = (outside * outside).sum()
    if squared.item() == 0.0:
        return squared * 0.0
    return squared.sqrt()


def log_prior(prior: PriorSpec, x) -> Tensor:
    """log p(x) up to an additive constant."""
    x = _flat_image(prior, as_tensor(x))
    kind = prior.kind
    if kind == "uniform":
        return x.sum() * 0.0
    if kind == "gaussian_unit":
        return (x * x).sum() * -0.5
    if kind == "laplacian_unit":
        return -x.abs().sum()
    if kind == "tv_aniso":
        return -total_variation(x, prior.image_shape)
    if kind == "pixel_range":
        return -range_error(x)
    if kind == "tv_plus_range":
        phi = prior.phi
        return -(phi * total_variation(x, prior.image_shape) + (1.0 - phi) * range_error(x))
    raise AssertionError(kind)
