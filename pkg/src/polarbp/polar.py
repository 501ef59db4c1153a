"""Polar code construction and encoding.

Codewords are ``x = u F^{(x)n} B_N`` over GF(2), with ``F = [[1, 0], [1, 1]]``
and ``B_N`` the bit-reversal permutation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _log2_exact(N: int) -> int:
    if not isinstance(N, (int, np.integer)) or N < 1 or (N & (N - 1)) != 0:
        raise ValueError(f"N must be a power of two, got {N!r}")
    return int(N).bit_length() - 1


def bit_reversal_permutation(N: int) -> np.ndarray:
    """Return ``perm`` with ``perm[j]`` equal to ``j`` with its log2(N) bits reversed."""
    n = _log2_exact(N)
    j = np.arange(N)
    perm = np.zeros(N, dtype=np.int64)
    for b in range(n):
        perm |= ((j >> b) & 1) << (n - 1 - b)
    return perm


def generator_matrix(N: int) -> np.ndarray:
    """Dense generator matrix ``G_N = F^{(x)n} B_N``.

    Kept as a reference for tests; :func:`encode` uses the butterfly network.
    """
    n = _log2_exact(N)
    F = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    G = np.ones((1, 1), dtype=np.uint8)
    for _ in range(n):
        G = np.kron(G, F)
    return G[:, bit_reversal_permutation(N)]


def bhattacharyya_parameters(N: int, design_snr_db: float, rate: float) -> np.ndarray:
    """Bhattacharyya parameters of the N synthetic channels (smaller is more reliable).

    The recursion starts at ``z0 = exp(-1/sigma^2)`` where sigma is the Eb/N0
    noise level at ``design_snr_db``; each level maps z to the pair
    ``(2z - z^2, z^2)`` interleaved, matching natural-order input indexing.
    """
    n = _log2_exact(N)
    sigma2 = 1.0 / (2.0 * rate * 10.0 ** (design_snr_db / 10.0))
    z = np.array([np.exp(-1.0 / sigma2)])
    for _ in range(n):
        nxt = np.empty(2 * z.size)
        nxt[0::2] = 2.0 * z - z * z
        nxt[1::2] = z * z
        z = nxt
    return z


@dataclass(frozen=True)
class PolarCode:
    """An (N, K) polar code with its information and frozen index sets."""

    N: int
    K: int
    info_set: tuple[int, ...]
    frozen_set: tuple[int, ...]
    n: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", _log2_exact(self.N))
        if not 1 <= self.K <= self.N:
            raise ValueError(f"K must satisfy 1 <= K <= N, got K={self.K}, N={self.N}")
        info, frozen = set(self.info_set), set(self.frozen_set)
        if len(info) != self.K or len(self.info_set) != self.K:
            raise ValueError("info_set must hold exactly K distinct indices")
        if info & frozen or (info | frozen) != set(range(self.N)):
            raise ValueError("info_set and frozen_set must partition range(N)")

    @property
    def rate(self) -> float:
        return self.K / self.N

    @property
    def info_index(self) -> np.ndarray:
        return np.asarray(self.info_set, dtype=np.int64)

    @property
    def frozen_index(self) -> np.ndarray:
        return np.asarray(self.frozen_set, dtype=np.int64)

    @property
    def frozen_mask(self) -> np.ndarray:
        mask = np.zeros(self.N, dtype=bool)
        mask[self.frozen_index] = True
        return mask

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N, "K": self.K, "frozen_set": list(self.frozen_set)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PolarCode":
        N, K = int(d["N"]), int(d["K"])
        frozen = tuple(sorted(int(j) for j in d["frozen_set"]))
        if "n" in d and int(d["n"]) != _log2_exact(N):
            raise ValueError(f"n={d['n']} inconsistent with N={N}")
        info = tuple(j for j in range(N) if j not in set(frozen))
        code = cls(N, K, info, frozen)
        return code


def construct_code(N: int, K: int, design_snr_db: float = 0.0) -> PolarCode:
    """Build an (N, K) polar code with the Bhattacharyya construction.

    Parameters
    ----------
    N : int
        Block length, a power of two.
    K : int
        Number of information bits, ``1 <= K <= N``.
    design_snr_db : float
        Eb/N0 (dB) at which the channel reliabilities are evaluated.

    Returns
    -------
    PolarCode
        Code whose frozen set holds the N-K indices with the largest
        Bhattacharyya parameter. Ties freeze the smaller index first.
    """
    _log2_exact(N)
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= N:
        raise ValueError(f"K must satisfy 1 <= K <= N, got K={K!r}, N={N}")
    z = bhattacharyya_parameters(N, design_snr_db, K / N)
    # sort by descending z, then ascending index
    order = np.lexsort((np.arange(N), -z))
    frozen = tuple(sorted(int(j) for j in order[: N - K]))
    info = tuple(sorted(int(j) for j in order[N - K:]))
    return PolarCode(int(N), int(K), info, frozen)


def polar_transform(u: np.ndarray) -> np.ndarray:
    """Apply ``F^{(x)n}`` along the last axis with the O(N log N) butterfly."""
    x = np.array(u, dtype=np.uint8, copy=True)
    N = x.shape[-1]
    lead = x.shape[:-1]
    d = N // 2
    while d >= 1:
        v = x.reshape(*lead, N // (2 * d), 2, d)
        v[..., 0, :] ^= v[..., 1, :]
        d //= 2
    return x


def embed_message(code: PolarCode, message) -> np.ndarray:
    """Place message bits on the information set, zeros elsewhere (the vector u)."""
    m = np.asarray(message)
    if m.shape[-1] != code.K:
        raise ValueError(f"message length {m.shape[-1]} != K={code.K}")
    if np.any((m != 0) & (m != 1)):
        raise ValueError("message bits must be 0 or 1")
    u = np.zeros(m.shape[:-1] + (code.N,), dtype=np.uint8)
    u[..., code.info_index] = m
    return u


def encode(code: PolarCode, message) -> np.ndarray:
    """Encode K-bit message(s) into N-bit codeword(s); accepts ``(K,)`` or ``(B, K)``."""
    u = embed_message(code, message)
    return polar_transform(u)[..., bit_reversal_permutation(code.N)]
