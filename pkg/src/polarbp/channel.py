"""BPSK over AWGN: noise level, modulation, noise, and channel LLRs.

Random streams come from Philox4x64-10 keyed by ``(seed, stream)``; Gaussian
samples use the Box-Muller transform on the stream's 53-bit uniforms, so a
stream is reproducible from its key alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for substream ``stream`` of ``seed``."""
    key = (int(seed) & _MASK64) | ((int(stream) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_id(*parts: int) -> int:
    """Pack small non-negative ids (e.g. split, snr index, chunk index) into one stream id."""
    sid = 0
    for p in parts:
        if not 0 <= p < (1 << 20):
            raise ValueError(f"stream component out of range: {p}")
        sid = (sid << 20) | int(p)
    return sid


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples by Box-Muller (cosine branch only)."""
    size = int(np.prod(shape))
    u1 = 1.0 - rng.random(size)  # in (0, 1]
    u2 = rng.random(size)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return z.reshape(shape)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    rate: float = 0.5
    seed: int = 0
    snr_is_esn0: bool = False

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")

    @property
    def sigma(self) -> float:
        return sigma_from_snr(self.snr_db, 1.0 if self.snr_is_esn0 else self.rate)


def sigma_from_snr(snr_db: float, rate: float) -> float:
    """Noise std per real dimension for Eb/N0 ``snr_db`` at code rate ``rate``.

    Passing ``rate=1`` gives the Es/N0 convention.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    return float(np.sqrt(1.0 / (2.0 * rate * 10.0 ** (snr_db / 10.0))))


def modulate_bpsk(codeword) -> np.ndarray:
    """Map bit 0 to +1 and bit 1 to -1."""
    return 1.0 - 2.0 * np.asarray(codeword, dtype=np.float64)


def awgn(symbols, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    s = np.asarray(symbols, dtype=np.float64)
    if sigma == 0:
        return s.copy()
    return s + sigma * gaussian(rng, s.shape)


def channel_llr(received, sigma: float) -> np.ndarray:
    """LLR ``ln P(y|0)/P(y|1) = 2 y / sigma^2``; positive favours bit 0."""
    if sigma <= 0:
        raise ValueError("sigma must be positive; handle the noiseless case explicitly")
    return 2.0 * np.asarray(received, dtype=np.float64) / (sigma * sigma)
