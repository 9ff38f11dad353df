import hashlib
import json
import math
import platform
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .data import save_csv_tensor


def jsonable(obj):
    """Convert results into plain JSON types; infinities and NaN become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [jsonable(v) for v in items]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    canonical = json.dumps(jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Reporter:
    """Writes the result files of one command into ``folder`` and, on :meth:`report`,
    a ``manifest.json`` describing them.

    Args:
        folder: Output directory.
        config: The fully merged configuration of the run.
        seed: Master seed.
        command: Name of the subcommand.
    """

    def __init__(self, folder, config: dict, seed: int, command: str):
        self.folder = Path(folder)
        self.config = config
        self.seed = seed
        self.command = command
        self.outputs = []

    def _path(self, name: str) -> Path:
        self.folder.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.folder / name

    def json(self, name: str, obj) -> Path:
        path = self._path(name)
        with open(path, "w") as f:
            f.write(dumps(obj))
        return path

    def jsonl(self, name: str, records: Iterable[dict]) -> Path:
        path = self._path(name)
        with open(path, "w") as f:
            for record in records:
                f.write(json.dumps(jsonable(record), sort_keys=True) + "\n")
        return path

    def csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._path(name)
        frame.to_csv(path, index=False, float_format="%.17g", na_rep="nan")
        return path

    def tensor(self, name: str, array) -> Path:
        path = self._path(name)
        save_csv_tensor(path, array)
        return path

    def file(self, name: str) -> Path:
        """Reserve ``name`` for a file written by the caller."""
        return self._path(name)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "config_sha256": config_hash(self.config),
            "config": self.config,
            "versions": {
                "bayesleak": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "python": platform.python_version(),
            },
            "outputs": sorted(self.outputs),
        }

    def report(self, extra: Optional[dict] = None) -> Path:
        manifest = self.manifest()
        if extra:
            manifest.update(extra)
        self.folder.mkdir(parents=True, exist_ok=True)
        path = self.folder / "manifest.json"
        with open(path, "w") as f:
            f.write(dumps(manifest))
        return path
