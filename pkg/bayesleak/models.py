"""Fully connected classification networks with a flat, segmented parameter vector."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .autodiff import NonFiniteError, Tensor, as_tensor, concat, constant, grad
from .workflows import finite_check

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu",)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a multi-layer perceptron.

    Args:
        layer_sizes: Widths n_0 ... n_L. n_0 is the input dimension and n_L the number
            of classes.
        activation: Hidden-layer nonlinearity. Only ``relu`` is available.
        seed: Seed of the parameter initialisation.
    """

    layer_sizes: Tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs at least an input and an output size")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            activation=d.get("activation", "relu"),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class Segment:
    layer: int
    kind: str  # "weight" or "bias"
    offset: int
    length: int
    shape: Tuple[int, ...]

    @property
    def stop(self) -> int:
        return self.offset + self.length

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "kind": self.kind,
            "offset": self.offset,
            "length": self.length,
            "shape": list(self.shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        return cls(d["layer"], d["kind"], d["offset"], d["length"], tuple(d["shape"]))


def build_segments(spec: NetworkSpec) -> List[Segment]:
    """Weight (n_out x n_in) then bias for every layer, in layer order."""
    segments = []
    offset = 0
    for layer in range(spec.n_layers):
        n_in, n_out = spec.layer_sizes[layer], spec.layer_sizes[layer + 1]
        for kind, shape in (("weight", (n_out, n_in)), ("bias", (n_out,))):
            length = int(np.prod(shape))
            segments.append(Segment(layer, kind, offset, length, shape))
            offset += length
    return segments


@dataclass(frozen=True, eq=False)
class LabeledExample:
    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True, eq=False)
class NetworkState:
    theta: np.ndarray
    segments: Tuple[Segment, ...] = field(repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "segments", tuple(self.segments))
        offset = 0
        for segment in self.segments:
            if segment.offset != offset or segment.length != int(np.prod(segment.shape)):
                raise ValueError(f"segments do not partition theta at {segment}")
            offset = segment.stop
        if offset != theta.size:
            raise ValueError(
                f"segments cover {offset} parameters but theta has {theta.size}"
            )

    @property
    def n_parameters(self) -> int:
        return self.theta.size

    @property
    def n_layers(self) -> int:
        return self.segments[-1].layer + 1

    def split(self, flat: Union[np.ndarray, Tensor, None] = None) -> list:
        """Per-segment views of ``flat`` (default theta), reshaped to the segment shape."""
        flat = self.theta if flat is None else flat
        if isinstance(flat, Tensor):
            return [
                flat.take(np.arange(s.offset, s.stop)).reshape(s.shape)
                for s in self.segments
            ]
        flat = np.asarray(flat)
        return [flat[s.offset : s.stop].reshape(s.shape) for s in self.segments]

    def flatten(self, per_segment: Sequence) -> Union[np.ndarray, Tensor]:
        if any(isinstance(p, Tensor) for p in per_segment):
            return concat([as_tensor(p) for p in per_segment])
        return np.concatenate([np.reshape(p, -1) for p in per_segment])

    def segments_of_layer(self, layer: int) -> List[Segment]:
        return [s for s in self.segments if s.layer == layer]

    def layer_indices(self, layer: int) -> np.ndarray:
        segments = self.segments_of_layer(layer)
        if not segments:
            raise ValueError(f"layer {layer} does not exist (network has {self.n_layers})")
        return np.concatenate([np.arange(s.offset, s.stop) for s in segments])

    def with_theta(self, theta: np.ndarray) -> "NetworkState":
        return NetworkState(theta, self.segments)


def init_parameters(spec: NetworkSpec) -> NetworkState:
    """He-uniform weights (variance 2/fan_in) and zero biases, reproducible from the seed."""
    rng = np.random.default_rng(spec.seed)
    segments = build_segments(spec)
    theta = np.zeros(segments[-1].stop)
    for segment in segments:
        if segment.kind == "weight":
            fan_in = segment.shape[1]
            limit = np.sqrt(6.0 / fan_in)
            theta[segment.offset : segment.stop] = rng.uniform(
                -limit, limit, size=segment.length
            )
    return NetworkState(theta, segments)


def forward(spec: NetworkSpec, state: NetworkState, x, params: Optional[list] = None):
    """Logits of the network for a single input ``x``."""
    x = as_tensor(x)
    if x.shape != (spec.input_dim,):
        raise ValueError(f"expected input of shape ({spec.input_dim},), got {x.shape}")
    if params is None:
        params = [constant(p) for p in state.split()]
    h = x
    for layer in range(spec.n_layers):
        weight, bias = params[2 * layer], params[2 * layer + 1]
        h = weight @ h + bias
        if layer < spec.n_layers - 1:
            h = h.relu()
    return h


def log_softmax_normalizer(logits: Tensor) -> Tensor:
    """log(sum(exp(logits))) with the maximum shifted out."""
    shift = constant(np.max(logits.data))
    return (logits - shift).exp().sum().log() + shift


def cross_entropy(logits: Tensor, y) -> Tensor:
    """Softmax cross-entropy for a class index ``y`` or a probability vector ``y``."""
    normalizer = log_softmax_normalizer(logits)
    if isinstance(y, Tensor):
        return normalizer * y.sum() - (y * logits).sum()
    y = int(y)
    if not 0 <= y < logits.size:
        raise ValueError(f"label {y} outside [0, {logits.size})")
    return normalizer - logits.take([y]).sum()


def param_gradient(spec: NetworkSpec, state: NetworkState, x, y, create_graph=True):
    """Loss and flat parameter gradient at ``x``.

    With ``create_graph`` the gradient stays on the tape, so it can be differentiated
    with respect to ``x`` (and a soft label ``y``).
    """
    params = [constant(p) for p in state.split()]
    loss = cross_entropy(forward(spec, state, x, params), y)
    grads = grad(loss, params, create_graph=create_graph)
    return loss, concat(grads)


def loss_and_param_grad(spec: NetworkSpec, state: NetworkState, example: LabeledExample):
    if not 0 <= example.y < spec.n_classes:
        raise ValueError(f"label {example.y} outside [0, {spec.n_classes})")
    loss, g = param_gradient(spec, state, example.x, example.y, create_graph=False)
    return loss.item(), constant(g)


def train_steps(
    spec: NetworkSpec,
    state: NetworkState,
    dataset: Sequence[LabeledExample],
    steps: int,
    lr: float,
    show_progress: bool = False,
) -> NetworkState:
    """Plain SGD with batch size 1, cycling through ``dataset`` in order."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return state
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    theta = state.theta.copy()
    running = 0.0
    for step in tqdm(range(steps), disable=not show_progress, desc="training"):
        example = dataset[step % len(dataset)]
        try:
            loss, g = param_gradient(
                spec, state.with_theta(theta), example.x, example.y, create_graph=False
            )
        except NonFiniteError:
            raise TrainingDivergedError(step, float("nan")) from None
        loss = loss.item()
        if not finite_check(f"training step {step}", [loss, g.data]):
            raise TrainingDivergedError(step, loss)
        theta -= lr * g.data
        running += loss
        if (step + 1) % 100 == 0:
            logger.debug(f"step {step + 1}: mean loss {running / 100:.4f}")
            running = 0.0
    return state.with_theta(theta)


class Network:
    """A network specification together with its parameters."""

    def __init__(self, spec: NetworkSpec, state: Optional[NetworkState] = None, step: int = 0):
        self.spec = spec
        self.state = state if state is not None else init_parameters(spec)
        self.step = step
        if self.state.segments != tuple(build_segments(spec)):
            raise ValueError("state segmentation does not match the network spec")

    @property
    def segments(self) -> Tuple[Segment, ...]:
        return self.state.segments

    @property
    def n_layers(self) -> int:
        return self.spec.n_layers

    @property
    def last_bias(self) -> Segment:
        return self.segments[-1]

    def forward(self, x) -> Tensor:
        return forward(self.spec, self.state, x)

    def param_gradient(self, x, y, create_graph=True) -> Tensor:
        return param_gradient(self.spec, self.state, x, y, create_graph)[1]

    def loss_and_param_grad(self, example: LabeledExample):
        return loss_and_param_grad(self.spec, self.state, example)

    def predict(self, x) -> int:
        return int(np.argmax(self.forward(x).data))

    def train(self, dataset, steps: int, lr: float, **kwargs) -> "Network":
        state = train_steps(self.spec, self.state, dataset, steps, lr, **kwargs)
        return Network(self.spec, state, step=self.step + steps)
