"""Defense mechanisms as conditional distributions p(g|x) over released gradients.

Every mechanism can sample a released gradient from a true gradient and evaluate
``log p(g|x)`` (constants dropped unless asked for) as a traced function of the true
gradient, so attacks can differentiate it with respect to the input.
"""

import logging
from dataclasses import dataclass, fields
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import Tensor, as_tensor, constant
from .models import Segment

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

KINDS = (
    "none",
    "gaussian",
    "laplacian",
    "prune_gaussian",
    "prune_laplacian",
    "clip_gaussian",
    "layer_perturb",
)

# parameters that must be present for each kind; everything else must be absent
REQUIRED = {
    "none": (),
    "gaussian": ("sigma",),
    "laplacian": ("b",),
    "prune_gaussian": ("sigma", "prune_rate"),
    "prune_laplacian": ("b", "prune_rate"),
    "clip_gaussian": ("sigma", "clip_bound"),
    "layer_perturb": ("defended_layer", "perturb_mask_rate"),
}
OPTIONAL = {"layer_perturb": ("sigma",)}

# scale of the Gaussian surrogate over the undefended layers
LAYER_PERTURB_SIGMA = 1.0


class DegenerateConditionalError(ValueError):
    """The mechanism releases the true gradient; p(g|x) is a Dirac delta."""


@dataclass(frozen=True)
class DefenseMechanism:
    kind: str
    sigma: Optional[float] = None
    b: Optional[float] = None
    prune_rate: Optional[float] = None
    clip_bound: Optional[float] = None
    defended_layer: Optional[int] = None
    perturb_mask_rate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown defense kind '{self.kind}', expected one of {KINDS}")
        allowed = REQUIRED[self.kind] + OPTIONAL.get(self.kind, ())
        for name in self.parameter_names():
            value = getattr(self, name)
            if name in REQUIRED[self.kind] and value is None:
                raise ValueError(f"defense '{self.kind}' requires '{name}'")
            if name not in allowed and value is not None:
                raise ValueError(f"defense '{self.kind}' does not take '{name}'")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.b is not None and not self.b > 0:
            raise ValueError(f"b must be > 0, got {self.b}")
        if self.prune_rate is not None and not 0 <= self.prune_rate < 1:
            raise ValueError(f"prune_rate must be in [0, 1), got {self.prune_rate}")
        if self.clip_bound is not None and not self.clip_bound > 0:
            raise ValueError(f"clip_bound must be > 0, got {self.clip_bound}")
        if self.perturb_mask_rate is not None and not 0 <= self.perturb_mask_rate <= 1:
            raise ValueError(
                f"perturb_mask_rate must be in [0, 1], got {self.perturb_mask_rate}"
            )
        if self.defended_layer is not None and self.defended_layer < 0:
            raise ValueError(f"defended_layer must be >= 0, got {self.defended_layer}")

    @staticmethod
    def parameter_names() -> Tuple[str, ...]:
        return tuple(f.name for f in fields(DefenseMechanism) if f.name != "kind")

    @property
    def parameters(self) -> dict:
        return {
            name: getattr(self, name)
            for name in self.parameter_names()
            if getattr(self, name) is not None
        }

    @property
    def label(self) -> str:
        """Short name used as the row key of result tables."""
        if self.kind == "none":
            return "none"
        params = ";".join(f"{k}={v:g}" for k, v in sorted(self.parameters.items()))
        return f"{self.kind}({params})"

    @property
    def surrogate_sigma(self) -> float:
        return self.sigma if self.sigma is not None else LAYER_PERTURB_SIGMA

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "kind": self.kind, **self.parameters}

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseMechanism":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported defense schema version {version}")
        unknown = set(d) - {"kind", *cls.parameter_names()}
        if unknown:
            raise ValueError(f"unknown defense keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("defense is missing 'kind'")
        return cls(**{k: v for k, v in d.items() if v is not None})


@dataclass(frozen=True, eq=False)
class ReleasedGradient:
    """The gradient an adversary observes."""

    g: np.ndarray
    defense: DefenseMechanism
    rng_seed: Optional[int] = None
    segments: Optional[Tuple[Segment, ...]] = None

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        if self.segments is not None:
            object.__setattr__(self, "segments", tuple(self.segments))
            if self.segments[-1].stop != g.size:
                raise ValueError("segmentation does not match the released gradient")

    def segment(self, layer: int, kind: str) -> np.ndarray:
        if self.segments is None:
            raise ValueError("released gradient carries no segmentation")
        for s in self.segments:
            if s.layer == layer and s.kind == kind:
                return self.g[s.offset : s.stop].reshape(s.shape)
        raise ValueError(f"no {kind} segment for layer {layer}")


def _layer_indices(segments: Optional[Sequence[Segment]], layer: int) -> np.ndarray:
    if segments is None:
        raise ValueError("layer_perturb needs the parameter segmentation")
    indices = [np.arange(s.offset, s.stop) for s in segments if s.layer == layer]
    if not indices:
        raise ValueError(f"defended layer {layer} does not exist")
    return np.concatenate(indices)


def _clip_scale(norm: float, bound: float) -> float:
    return 1.0 if norm <= bound else bound / norm


def sample(
    defense: DefenseMechanism,
    true_grad: Union[np.ndarray, Tensor],
    rng: Union[int, np.random.Generator, None] = None,
    segments: Optional[Sequence[Segment]] = None,
) -> ReleasedGradient:
    """Draw a released gradient from p(g|x) given the true gradient.

    Args:
        defense: The mechanism.
        true_grad: Flat true parameter gradient.
        rng: Seed or generator. Integer seeds are recorded on the result.
        segments: Parameter segmentation; required by ``layer_perturb``.
    """
    true_grad = np.array(as_tensor(true_grad).data, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(true_grad)):
        raise ValueError("true gradient contains non-finite values")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    kind = defense.kind
    d = true_grad.size
    if kind == "none":
        g = true_grad.copy()
    elif kind == "gaussian":
        g = true_grad + rng.normal(0.0, defense.sigma, d)
    elif kind == "laplacian":
        g = true_grad + rng.laplace(0.0, defense.b, d)
    elif kind in ("prune_gaussian", "prune_laplacian"):
        pruned = rng.random(d) < defense.prune_rate
        g = np.where(pruned, 0.0, true_grad)
        # noise goes on every coordinate, pruned ones included
        if kind == "prune_gaussian":
            g = g + rng.normal(0.0, defense.sigma, d)
        else:
            g = g + rng.laplace(0.0, defense.b, d)
    elif kind == "clip_gaussian":
        scale = _clip_scale(np.linalg.norm(true_grad), defense.clip_bound)
        g = true_grad * scale + rng.normal(0.0, defense.sigma, d)
    elif kind == "layer_perturb":
        indices = _layer_indices(segments, defense.defended_layer)
        n_zero = int(round(defense.perturb_mask_rate * indices.size))
        g = true_grad.copy()
        g[rng.permutation(indices)[:n_zero]] = 0.0
    else:
        raise AssertionError(kind)
    return ReleasedGradient(g, defense, seed, segments)


def _gaussian_terms(diff: Tensor, sigma: float, normalized: bool) -> Tensor:
    terms = -(diff * diff) * (1.0 / (2.0 * sigma**2))
    if normalized:
        terms = terms - 0.5 * np.log(2.0 * np.pi * sigma**2)
    return terms


def _laplacian_terms(diff: Tensor, b: float, normalized: bool) -> Tensor:
    terms = -diff.abs() * (1.0 / b)
    if normalized:
        terms = terms - np.log(2.0 * b)
    return terms


def _log_add_exp(pruned: np.ndarray, kept: Tensor) -> Tensor:
    """log(exp(pruned) + exp(kept)) with a constant shift; ``pruned`` is untraced."""
    shift = np.maximum(pruned, kept.data)
    return (constant(np.exp(pruned - shift)) + (kept - shift).exp()).log() + shift


def coordinate_log_density(
    defense: DefenseMechanism,
    g_observed,
    true_grad,
    segments: Optional[Sequence[Segment]] = None,
    normalized: bool = False,
) -> Tensor:
    """Per-coordinate terms of log p(g|x), traced in ``true_grad``.

    All mechanisms are separable across coordinates once the mean is fixed, so the
    terms sum to :func:`log_density`.
    """
    g = g_observed.g if isinstance(g_observed, ReleasedGradient) else g_observed
    g = np.asarray(as_tensor(g).data).reshape(-1)
    true_grad = as_tensor(true_grad)
    if true_grad.ndim != 1:
        true_grad = true_grad.flatten()
    if true_grad.size != g.size:
        raise ValueError(
            f"observed gradient has {g.size} entries, true gradient {true_grad.size}"
        )

    kind = defense.kind
    if kind == "none":
        raise DegenerateConditionalError(
            "no defense: p(g|x) is a Dirac delta, use the analytic attack instead"
        )
    if kind == "gaussian":
        return _gaussian_terms(constant(g) - true_grad, defense.sigma, normalized)
    if kind == "laplacian":
        return _laplacian_terms(constant(g) - true_grad, defense.b, normalized)
    if kind in ("prune_gaussian", "prune_laplacian"):
        if kind == "prune_gaussian":
            kept = _gaussian_terms(constant(g) - true_grad, defense.sigma, normalized)
            zero = _gaussian_terms(constant(g), defense.sigma, normalized).data
        else:
            kept = _laplacian_terms(constant(g) - true_grad, defense.b, normalized)
            zero = _laplacian_terms(constant(g), defense.b, normalized).data
        p = defense.prune_rate
        if p == 0:
            return kept
        return _log_add_exp(np.log(p) + zero, kept + np.log1p(-p))
    if kind == "clip_gaussian":
        norm = (true_grad * true_grad).sum().sqrt()
        if norm.item() > defense.clip_bound:
            mean = true_grad * (defense.clip_bound / norm)
        else:
            mean = true_grad
        return _gaussian_terms(constant(g) - mean, defense.sigma, normalized)
    if kind == "layer_perturb":
        defended = _layer_indices(segments, defense.defended_layer)
        mask = np.ones(g.size)
        mask[defended] = 0.0
        terms = _gaussian_terms(constant(g) - true_grad, defense.surrogate_sigma, normalized)
        return terms * constant(mask)
    raise AssertionError(kind)


def log_density(
    defense: DefenseMechanism,
    g_observed,
    true_grad,
    segments: Optional[Sequence[Segment]] = None,
    normalized: bool = False,
) -> Tensor:
    """log p(g|x) up to an additive constant (exact with ``normalized``)."""
    return coordinate_log_density(
        defense, g_observed, true_grad, segments, normalized
    ).sum()
