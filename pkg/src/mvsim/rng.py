"""Coordinate-addressed random draws.

Every draw is a pure function of (seed, stream, replicate, particle, step,
channel), so results never depend on evaluation order, batch size or thread
count.  The block cipher is numpy's Philox4x64-10: the key carries
(seed, stream) and the 256-bit counter carries (particle // 4, step, channel,
replicate); the particle's lane within the 4-word output block picks the word.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

ALGORITHM_ID = "philox4x64-10/ndtri"

CHANNEL_INIT = 0
CHANNEL_GAUSS = 1

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


def _u64(v: int) -> int:
    if v < 0:
        raise ValueError(f"noise coordinates must be non-negative, got {v}")
    return int(v) & _MASK64


def raw_to_uniform(raw: np.ndarray) -> np.ndarray:
    """Top 53 bits mapped to the open interval (0, 1)."""
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


@dataclass(frozen=True)
class NoisePlan:
    master_seed: int = 0
    stream: int = 0
    algorithm_id: str = ALGORITHM_ID

    def __post_init__(self):
        if self.algorithm_id != ALGORITHM_ID:
            raise ValueError(f"unsupported generator {self.algorithm_id!r}")
        _u64(self.master_seed)
        _u64(self.stream)

    def derive(self, stream: int) -> "NoisePlan":
        """Same seed, independent stream (used to decorrelate experiment arms)."""
        return NoisePlan(self.master_seed, stream, self.algorithm_id)

    def _bitgen(self, replicate: int, step: int, channel: int, block: int = 0) -> Philox:
        key = np.array([_u64(self.master_seed), _u64(self.stream)], dtype=np.uint64)
        counter = np.array([_u64(block), _u64(step), _u64(channel), _u64(replicate)], dtype=np.uint64)
        return Philox(key=key, counter=counter)

    def raw(self, replicate: int, step: int, channel: int, n: int) -> np.ndarray:
        """uint64 words for particles 0..n-1 at one (replicate, step, channel)."""
        return self._bitgen(replicate, step, channel).random_raw(n)

    def raw_draw(self, replicate: int, particle: int, step: int, channel: int) -> int:
        block, lane = divmod(_u64(particle), 4)
        return int(self._bitgen(replicate, step, channel, block).random_raw(4)[lane])

    def draw(self, replicate: int, particle: int, step: int, channel: int) -> float:
        """Uniform in (0, 1) at one coordinate."""
        raw = np.array([self.raw_draw(replicate, particle, step, channel)], dtype=np.uint64)
        return float(raw_to_uniform(raw)[0])

    def uniforms(self, replicate: int, n: int, step: int = 0, channel: int = CHANNEL_INIT) -> np.ndarray:
        return raw_to_uniform(self.raw(replicate, step, channel, n))

    def gaussians(self, replicate: int, step: int, n: int, channel: int = CHANNEL_GAUSS) -> np.ndarray:
        return ndtri(raw_to_uniform(self.raw(replicate, step, channel, n)))

    def gaussian_block(self, replicate: int, n_steps: int, n: int, channel: int = CHANNEL_GAUSS) -> np.ndarray:
        """(n_steps, n) standard normals; row k drives step k."""
        out = np.empty((n_steps, n))
        for k in range(n_steps):
            out[k] = ndtri(raw_to_uniform(self.raw(replicate, k, channel, n)))
        return out

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream": self.stream, "algorithm_id": self.algorithm_id}
