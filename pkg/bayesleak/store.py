import json
import struct
from pathlib import Path
from typing import Dict, List

import numpy as np

from .models import Network, NetworkSpec, NetworkState, Segment, build_segments

FORMAT = "bayesleak-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: Network) -> None:
    """Write a JSON header (length-prefixed, little-endian uint64) and the parameters as
    little-endian float64."""
    header = {
        "format": FORMAT,
        "version": VERSION,
        "spec": net.spec.to_dict(),
        "seed": net.spec.seed,
        "step": net.step,
        "n_parameters": net.state.n_parameters,
        "segments": [segment.to_dict() for segment in net.segments],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(net.state.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    (header_length,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8 : 8 + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise CheckpointError(f"{path} has an unreadable header: {error}") from None
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise CheckpointError(
            f"{path} is not a version {VERSION} {FORMAT} file"
        )
    spec = NetworkSpec.from_dict(header["spec"])
    segments = [Segment.from_dict(s) for s in header["segments"]]
    if segments != build_segments(spec):
        raise CheckpointError(f"{path}: segmentation does not match the network spec")
    payload = raw[8 + header_length :]
    if len(payload) != 8 * header["n_parameters"]:
        raise CheckpointError(
            f"{path}: expected {header['n_parameters']} parameters, found {len(payload) // 8}"
        )
    theta = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return Network(spec, NetworkState(theta, segments), step=int(header["step"]))


class CheckpointStore:
    """A folder with one checkpoint per training step."""

    def __init__(self, path):
        self.path = Path(path)

    def file(self, step: int) -> Path:
        return self.path / f"step_{int(step)}.ckpt"

    def save(self, net: Network) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        path = self.file(net.step)
        save_checkpoint(path, net)
        return path

    def steps(self) -> List[int]:
        if not self.path.exists():
            return []
        return sorted(int(p.stem.split("_")[1]) for p in self.path.glob("step_*.ckpt"))

    def load(self, step: int) -> Network:
        path = self.file(step)
        if not path.exists():
            raise FileNotFoundError(
                f"checkpoint for step {step} ({path.resolve()}) does not exist, run `bayesleak train` first"
            )
        return load_checkpoint(path)

    def load_all(self) -> Dict[int, Network]:
        return {step: self.load(step) for step in self.steps()}
