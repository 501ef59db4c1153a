"""Two-stage weight quantization and the multiplier-free scaling path.

Stage one rounds weights onto an unsigned fixed-point grid with one integer bit
and ``q - 1`` fractional bits. Stage two keeps the ``2**c`` most frequent grid
values as a codebook and maps every weight to its nearest codebook entry, so a
weight is stored as a ``c``-bit index.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantConfig:
    q: int = 4
    c: int = 3

    def __post_init__(self):
        if not 2 <= self.q <= 16:
            raise ValueError(f"q must be in [2, 16], got {self.q}")
        if not 1 <= self.c <= self.q:
            raise ValueError(f"c must be in [1, q], got {self.c}")


@dataclass(frozen=True)
class Codebook:
    values: tuple[float, ...]
    q: int

    def __post_init__(self):
        vals = list(self.values)
        if not vals:
            raise ValueError("codebook must not be empty")
        if vals != sorted(set(vals)):
            raise ValueError("codebook values must be distinct and ascending")
        if not all(on_grid(v, self.q) for v in vals):
            raise ValueError("codebook values must lie on the q-bit grid")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return len(self.values)


def step(q: int) -> float:
    return 2.0 ** -(q - 1)


def grid_max(q: int) -> float:
    return 2.0 - step(q)


def on_grid(w: float, q: int) -> bool:
    k = w * 2.0 ** (q - 1)
    return 0.0 <= w <= grid_max(q) and float(k).is_integer()


def quantize_fixed(w, q: int):
    """Round to the nearest multiple of ``2**-(q-1)`` (half to even), clipped to ``[0, 2 - 2**-(q-1)]``."""
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    scale = 2.0 ** (q - 1)
    out = np.clip(np.round(np.asarray(w, dtype=np.float64) * scale) / scale, 0.0, grid_max(q))
    return float(out) if np.ndim(out) == 0 else out


def build_codebook(quantized_weights, c: int, q: int) -> Codebook:
    """Keep the ``2**c`` most frequent grid values; frequency ties favour the smaller value."""
    w = np.asarray(quantized_weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("cannot build a codebook from no weights")
    counts = Counter(w.tolist())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    chosen = sorted(v for v, _ in ranked[: 2 ** c])
    return Codebook(tuple(chosen), q)


def apply_codebook(weights, book: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Map each weight to its nearest codebook value (ties to the smaller one).

    Returns
    -------
    (indices, values)
        Integer codebook indices and the dequantized weights, both shaped like
        ``weights``.
    """
    w = np.asarray(weights, dtype=np.float64)
    vals = book.array
    # argmin returns the first minimum, i.e. the smaller value on ties
    idx = np.argmin(np.abs(w[..., None] - vals), axis=-1)
    return idx.astype(np.int64), vals[idx]


def quantize_weights(weights, cfg: QuantConfig) -> tuple[Codebook, list[np.ndarray], list[np.ndarray]]:
    """Run both stages jointly over several arrays sharing one codebook."""
    arrays = [quantize_fixed(np.asarray(a, dtype=np.float64), cfg.q) for a in weights]
    book = build_codebook(np.concatenate([a.ravel() for a in arrays]), cfg.c, cfg.q)
    idx, deq = zip(*(apply_codebook(a, book) for a in arrays))
    return book, list(idx), list(deq)


def grid_code(weight, q: int) -> np.ndarray:
    """Integer code ``k`` with ``weight = k * 2**-(q-1)``; raises if off-grid."""
    w = np.asarray(weight, dtype=np.float64)
    k = w * 2.0 ** (q - 1)
    if np.any(k != np.round(k)) or np.any(w < 0) or np.any(w > grid_max(q)):
        raise ValueError(f"weight not on the {q}-bit grid")
    return k.astype(np.int64)


def shift_add_multiply(llr: float, weight: float, q: int) -> float:
    """``llr * weight`` as a sum of shifted copies of ``llr``, one per set weight bit.

    The terms are summed exactly (``math.fsum``), so the result equals the
    rounded product bit for bit.
    """
    k = int(grid_code(weight, q))
    terms = [math.ldexp(llr, b - (q - 1)) for b in range(q) if (k >> b) & 1]
    return math.fsum(terms) if terms else 0.0 * llr


def popcount(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    out = np.zeros_like(k)
    while np.any(k):
        out += k & 1
        k = k >> 1
    return out


def shift_add_scale(values: np.ndarray, codes: np.ndarray, q: int) -> tuple[np.ndarray, int]:
    """Vectorised shift-add scaling of ``values`` by grid weights with integer ``codes``.

    Returns the scaled values and the number of additions used per broadcast
    element set (``sum(max(popcount - 1, 0))`` over ``codes``).

    Values are first split (Veltkamp) into a high part of at most ``53 - q``
    significant bits and a low part of at most ``q``; shifted sums of either
    part are then exact, and one final addition rounds, so the result matches
    ``values * codes * 2**-(q-1)`` bit for bit.
    """
    x = np.asarray(values, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.int64)
    t = x * float((1 << q) + 1)
    hi = t - (t - x)
    lo = x - hi
    acc_hi = np.zeros(np.broadcast_shapes(x.shape, codes.shape))
    acc_lo = np.zeros_like(acc_hi)
    for b in range(q):
        bit = ((codes >> b) & 1).astype(bool)
        if not bit.any():
            continue
        acc_hi += np.where(bit, np.ldexp(hi, b), 0.0)
        acc_lo += np.where(bit, np.ldexp(lo, b), 0.0)
    out = np.ldexp(acc_hi + acc_lo, -(q - 1))
    adds = int(np.maximum(popcount(codes) - 1, 0).sum())
    return out, adds


def weight_memory_bits(mode: str, N: int, T: int = 1, quant: QuantConfig | None = None,
                       float_bits: int = 32) -> dict:
    """Weight storage in bits for a decoder configuration.

    With ``quant`` every weight is a c-bit codebook index; the codebook table
    itself (``2**c * q`` bits) is reported separately under ``codebook_bits``.
    """
    n = int(N).bit_length() - 1
    per_iter = 2 * N * n
    if mode == "unweighted":
        count = 0
    elif mode == "per_iteration":
        count = T * per_iter
    elif mode == "shared":
        count = per_iter
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if count == 0:
        return {"weight_bits": 0, "codebook_bits": 0}
    if quant is None:
        return {"weight_bits": float_bits * count, "codebook_bits": 0}
    return {"weight_bits": quant.c * count, "codebook_bits": (2 ** quant.c) * quant.q}


def memory_footprint(weights, quant: QuantConfig | None = None) -> dict:
    """Storage of a ``WeightSet``; uses the set's own q/c when ``quant`` is omitted."""
    if quant is None and getattr(weights, "q", None) is not None:
        quant = QuantConfig(weights.q, weights.c)
    return weight_memory_bits(weights.mode, weights.N, weights.T or 1, quant)
