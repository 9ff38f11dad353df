import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import zoom

from .autodiff import Tensor, as_tensor
from .models import LabeledExample

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


class CSVTensorError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticTask:
    """x ~ N(0, I_dim) with label argmax(W x) for a fixed random W."""

    dim: int = 20
    classes: int = 10
    seed: int = 0
    W: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.classes < 2:
            raise ValueError("a synthetic task needs dim >= 1 and classes >= 2")
        W = np.random.default_rng(self.seed).standard_normal((self.classes, self.dim))
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    def label(self, x) -> int:
        return int(np.argmax(self.W @ np.asarray(x, dtype=np.float64)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "classes": self.classes, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTask":
        unknown = set(d) - {"dim", "classes", "seed"}
        if unknown:
            raise ValueError(f"unknown synthetic task keys: {sorted(unknown)}")
        return cls(**d)


def sample_synthetic(
    task: SyntheticTask, rng: Union[np.random.Generator, int]
) -> LabeledExample:
    """Draw one example; an integer ``rng`` is a draw index within the task seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng([task.seed, int(rng)])
    x = rng.standard_normal(task.dim)
    return LabeledExample(x, task.label(x))


@dataclass(frozen=True, eq=False)
class ImageDataset:
    """Grayscale images with pixels in [0, 1]."""

    images: np.ndarray  # (n, H, W)
    labels: np.ndarray
    n_classes: int = 10
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None] if images.size else images.reshape(0, 0, 0)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 3:
            raise ValueError(f"images must have shape (n, H, W), got {images.shape}")
        if images.shape[0] != labels.size:
            raise ValueError(f"{images.shape[0]} images but {labels.size} labels")
        if images.size and (images.min() < 0 or images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size

    def __getitem__(self, index: int) -> LabeledExample:
        return LabeledExample(self.images[index].reshape(-1), self.labels[index])

    @property
    def image_shape(self) -> Tuple[int, int]:
        return tuple(self.images.shape[1:])

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.image_shape))

    def examples(self, n: Optional[int] = None) -> List[LabeledExample]:
        n = len(self) if n is None else min(n, len(self))
        return [self[i] for i in range(n)]


def draw_example(dataset, rng: np.random.Generator) -> LabeledExample:
    """Random example from a synthetic task or an indexable dataset."""
    if isinstance(dataset, SyntheticTask):
        return sample_synthetic(dataset, rng)
    if len(dataset) == 0:
        raise ValueError("cannot draw from an empty dataset")
    return dataset[int(rng.integers(len(dataset)))]


def first_examples(dataset, n: int) -> List[LabeledExample]:
    if isinstance(dataset, SyntheticTask):
        return [sample_synthetic(dataset, i) for i in range(n)]
    if isinstance(dataset, ImageDataset):
        return dataset.examples(n)
    return list(dataset[:n])


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path, labels_path, limit: Optional[int] = None) -> ImageDataset:
    """Read an IDX image/label file pair (optionally gzipped), pixels scaled by 1/255."""
    if limit is not None and limit < 0:
        raise ValueError("limit must be >= 0")
    images_raw = _read_bytes(images_path)
    labels_raw = _read_bytes(labels_path)
    if len(images_raw) < 16 or len(labels_raw) < 8:
        raise IDXFormatError("IDX header is truncated")
    magic, count, rows, cols = struct.unpack(">IIII", images_raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise IDXFormatError(f"bad magic number {magic:#010x} in image file")
    label_magic, label_count = struct.unpack(">II", labels_raw[:8])
    if label_magic != IDX_LABEL_MAGIC:
        raise IDXFormatError(f"bad magic number {label_magic:#010x} in label file")
    if count != label_count:
        raise IDXFormatError(f"{count} images but {label_count} labels")
    if len(images_raw) - 16 < count * rows * cols:
        raise IDXFormatError("image file is truncated")
    if len(labels_raw) - 8 < count:
        raise IDXFormatError("label file is truncated")

    n = count if limit is None else min(limit, count)
    pixels = np.frombuffer(images_raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(labels_raw, dtype=np.uint8, count=n, offset=8)
    n_classes = max(10, int(labels.max()) + 1) if n else 10
    return ImageDataset(
        images=pixels.reshape(n, rows, cols) / 255.0,
        labels=labels,
        n_classes=n_classes,
        normalization={"scale": 1 / 255, "source": "idx"},
    )


def save_idx(dataset: ImageDataset, images_path, labels_path) -> None:
    n, rows, cols = dataset.images.shape
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_digits(limit: Optional[int] = None) -> ImageDataset:
    """The 8x8 handwritten digits bundled with scikit-learn, scaled into [0, 1]."""
    from sklearn.datasets import load_digits as sklearn_digits

    digits = sklearn_digits()
    n = len(digits.target) if limit is None else min(limit, len(digits.target))
    return ImageDataset(
        images=digits.images[:n] / 16.0,
        labels=digits.target[:n],
        n_classes=10,
        normalization={"scale": 1 / 16, "source": "sklearn-digits"},
    )


def resize_images(dataset: ImageDataset, shape: Sequence[int]) -> ImageDataset:
    """Bilinear resampling to ``shape``, clipped back into [0, 1]."""
    shape = tuple(int(s) for s in shape)
    if len(dataset) == 0 or dataset.image_shape == shape:
        return dataset
    factors = (shape[0] / dataset.image_shape[0], shape[1] / dataset.image_shape[1])
    images = np.stack(
        [np.clip(zoom(image, factors, order=1), 0.0, 1.0) for image in dataset.images]
    )
    assert images.shape[1:] == shape, images.shape
    return ImageDataset(
        images,
        dataset.labels,
        dataset.n_classes,
        {**dataset.normalization, "resized_from": list(dataset.image_shape)},
    )


def load_csv_tensor(path, shape: Sequence[int]) -> Tensor:
    """Comma separated numbers, filled row-major into ``shape``."""
    values = []
    columns = None
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if columns is not None and len(fields) != columns:
                raise CSVTensorError(
                    f"{path}:{line_number}: expected {columns} columns, found {len(fields)}"
                )
            columns = len(fields)
            try:
                values.extend(float(v) for v in fields)
            except ValueError as error:
                raise CSVTensorError(f"{path}:{line_number}: {error}") from None
    if not values:
        raise CSVTensorError(f"{path} contains no values")
    shape = tuple(int(s) for s in shape)
    if len(values) != int(np.prod(shape)):
        raise CSVTensorError(
            f"{path} holds {len(values)} values, shape {shape} needs {int(np.prod(shape))}"
        )
    return Tensor(np.array(values).reshape(shape))


def save_csv_tensor(path, tensor) -> None:
    array = as_tensor(tensor).data
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    elif array.ndim > 2:
        array = array.reshape(array.shape[0], -1)
    np.savetxt(path, array, fmt="%.17g", delimiter=",")
