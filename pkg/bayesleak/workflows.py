import logging
from time import perf_counter

import numpy as np

logger = logging.getLogger(__name__)


class TimingModule:
    """Wall-clock time of the named phases of a command."""

    def __init__(self, name):
        self.name = name
        self.marks = [perf_counter()]
        self.phases = []

    def new_split(self, phase):
        self.marks.append(perf_counter())
        self.phases.append(phase)

    @property
    def durations(self) -> dict:
        return {
            phase: self.marks[i + 1] - self.marks[i] for i, phase in enumerate(self.phases)
        }

    def __str__(self):
        parts = [f"{phase}: {seconds:.4f}s" for phase, seconds in self.durations.items()]
        parts.append(f"Total: {self.marks[-1] - self.marks[0]:.4f}s")
        return f"{self.name} - {', '.join(parts)}"


def finite_check(name, arrays, raise_on_error=False):
    """True when no array holds NaN or Inf; otherwise log (or raise on) the first offender."""
    if not isinstance(arrays, (list, tuple)):
        arrays = [arrays]
    for i, array in enumerate(arrays):
        array = np.asarray(array, dtype=np.float64).reshape(-1)
        bad = np.flatnonzero(~np.isfinite(array))
        if bad.size == 0:
            continue
        text = f"{name}: array {i} has {bad.size} non-finite entries, first at index {bad[0]}"
        if raise_on_error:
            raise AssertionError(text)
        logger.warning(text)
        return False
    return True
