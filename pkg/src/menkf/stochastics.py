"""Seed-derived Gaussian random streams.

Every random draw in an experiment comes from a stream identified by the
master seed and a lineage of integer labels (purpose, step, ...). Streams are
built with a counter-based generator keyed by a hashed seed sequence, so the
same lineage always gives the same samples and no state is shared between
streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

_U64_MAX = (1 << 64) - 1


class Purpose(IntEnum):
    """First lineage label, separating the different uses of randomness."""

    PRIOR = 1
    INFLATION = 2
    OBS_PERTURBATION = 3
    OBS_NOISE = 4


def _check_u64(value: int, what: str) -> int:
    value = int(value)
    if not 0 <= value <= _U64_MAX:
        raise ValueError(f"{what} must be an unsigned 64-bit integer, got {value}")
    return value


@dataclass
class SeededStream:
    """A reproducible Gaussian stream derived from ``(master_seed, lineage)``."""

    master_seed: int
    lineage: tuple[int, ...]
    _generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.master_seed = _check_u64(self.master_seed, "master_seed")
        self.lineage = tuple(_check_u64(label, "lineage label") for label in self.lineage)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.lineage)
        self._generator = np.random.Generator(np.random.Philox(seq))

    def standard_normal(self, size: int | tuple[int, ...] | None = None) -> np.ndarray | float:
        return self._generator.standard_normal(size)

    def normal(self, mean, variance, size: int | tuple[int, ...]) -> np.ndarray:
        """Draw ``size`` samples of N(mean, variance); ``variance`` may be per-column."""
        variance = np.asarray(variance, dtype=float)
        if np.any(variance < 0):
            raise ValueError("variance must be non-negative")
        return mean + np.sqrt(variance) * self._generator.standard_normal(size)


def derive_stream(master_seed: int, lineage) -> SeededStream:
    """Return the stream for ``lineage``; a pure function of its inputs."""
    return SeededStream(master_seed, tuple(lineage))


def gaussian(stream: SeededStream, mean: float, variance: float) -> float:
    """One sample of N(mean, variance). Zero variance returns ``mean`` exactly."""
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    z = float(stream.standard_normal())
    if variance == 0:
        return float(mean)
    return float(mean + np.sqrt(variance) * z)
