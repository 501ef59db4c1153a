"""Min-sum belief propagation on the polar factor graph, optionally weighted.

The graph has ``n + 1`` stages of N nodes. Row 0 of ``R`` holds the frozen-bit
prior, row ``n`` of ``L`` the channel LLRs in codeword order. Because
``u F^n B_N = (u B_N) F^n``, input-stage node ``j`` carries bit ``u[bitrev(j)]``.
Butterfly stage ``s`` (0-based) pairs node ``j`` with ``j + N / 2**(s+1)``
inside blocks of ``N / 2**s`` nodes.
One iteration is a left-to-right R-pass over all stages followed by a
right-to-left L-pass.

Weights are stored stage-major, node-minor: ``alpha[s, j]`` scales the
L-message written to row ``s`` at node ``j``, ``beta[s, j]`` the R-message
written to row ``s + 1`` at node ``j``. Per-iteration weights add a leading
iteration axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .polar import PolarCode, bit_reversal_permutation
from .quantize import grid_code, shift_add_scale

WEIGHT_FORMAT_VERSION = 1
MODES = ("unweighted", "per_iteration", "shared")


@dataclass(frozen=True)
class DecoderConfig:
    T: int = 5
    llr_clamp: float = 30.0
    frozen_llr: float = 30.0
    # scale by quantized weights through shift-add instead of multiplication
    shift_add: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not 0 < self.frozen_llr <= self.llr_clamp:
            raise ValueError("need 0 < frozen_llr <= llr_clamp")


@dataclass
class OpCounter:
    """Per-frame arithmetic tally of a decode."""

    additions: int = 0
    multiplications: int = 0


@dataclass
class WeightSet:
    mode: str
    N: int
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    q: int | None = None
    c: int | None = None
    codebook: tuple[float, ...] | None = None
    alpha_idx: np.ndarray | None = None
    beta_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = int(self.N).bit_length() - 1
        if self.mode == "unweighted":
            self.alpha = self.beta = None
            return
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        tail = (n, self.N)
        ok = self.alpha.shape == self.beta.shape and self.alpha.shape[-2:] == tail
        ok = ok and self.alpha.ndim == (3 if self.mode == "per_iteration" else 2)
        if not ok:
            raise ValueError(f"weight arrays of shape {self.alpha.shape}/{self.beta.shape} "
                             f"do not fit mode {self.mode!r} with N={self.N}")

    @classmethod
    def ones(cls, mode: str, N: int, T: int | None = None) -> "WeightSet":
        n = int(N).bit_length() - 1
        if mode == "unweighted":
            return cls(mode, N)
        shape = (T, n, N) if mode == "per_iteration" else (n, N)
        if mode == "per_iteration" and not T:
            raise ValueError("per_iteration weights need T")
        return cls(mode, N, np.ones(shape), np.ones(shape))

    @property
    def n(self) -> int:
        return int(self.N).bit_length() - 1

    @property
    def T(self) -> int | None:
        return self.alpha.shape[0] if self.mode == "per_iteration" else None

    @property
    def count(self) -> int:
        return 0 if self.alpha is None else self.alpha.size + self.beta.size

    @property
    def quantized(self) -> bool:
        return self.q is not None

    def copy(self) -> "WeightSet":
        cp = lambda a: None if a is None else np.array(a, copy=True)
        return WeightSet(self.mode, self.N, cp(self.alpha), cp(self.beta), self.q, self.c,
                         self.codebook, cp(self.alpha_idx), cp(self.beta_idx))

    def at(self, t: int):
        """``(alpha, beta)`` used in iteration ``t`` (1-based); ``(None, None)`` if unweighted."""
        if self.mode == "unweighted":
            return None, None
        if self.mode == "per_iteration":
            if not 1 <= t <= self.T:
                raise ValueError(f"iteration {t} outside [1, {self.T}]")
            return self.alpha[t - 1], self.beta[t - 1]
        return self.alpha, self.beta

    def to_dict(self) -> dict:
        d = {"version": WEIGHT_FORMAT_VERSION, "mode": self.mode, "N": self.N}
        if self.mode == "per_iteration":
            d["T"] = self.T
        if self.alpha is not None:
            d["alpha"] = self.alpha.tolist()
            d["beta"] = self.beta.tolist()
        if self.quantized:
            d.update(q=self.q, c=self.c, codebook=list(self.codebook))
            if self.alpha_idx is not None:
                d["alpha_idx"] = self.alpha_idx.tolist()
                d["beta_idx"] = self.beta_idx.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSet":
        if d.get("version") != WEIGHT_FORMAT_VERSION:
            raise ValueError(f"unsupported weight file version {d.get('version')!r}")
        ws = cls(d["mode"], int(d["N"]), d.get("alpha"), d.get("beta"), d.get("q"), d.get("c"),
                 tuple(d["codebook"]) if "codebook" in d else None,
                 np.asarray(d["alpha_idx"]) if "alpha_idx" in d else None,
                 np.asarray(d["beta_idx"]) if "beta_idx" in d else None)
        if ws.mode == "per_iteration" and int(d.get("T", ws.T)) != ws.T:
            raise ValueError("T field disagrees with alpha shape")
        if ws.alpha_idx is not None:
            book = np.asarray(ws.codebook)
            if not (np.array_equal(book[ws.alpha_idx], ws.alpha)
                    and np.array_equal(book[ws.beta_idx], ws.beta)):
                raise ValueError("codebook indices disagree with stored weights")
        return ws

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "WeightSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MessageGrid:
    """Right-to-left ``L`` and left-to-right ``R`` messages, shape ``(..., n+1, N)``."""

    L: np.ndarray
    R: np.ndarray
    llr_clamp: float = 30.0

    @property
    def n(self) -> int:
        return self.L.shape[-2] - 1

    @property
    def N(self) -> int:
        return self.L.shape[-1]

    def copy(self) -> "MessageGrid":
        return MessageGrid(self.L.copy(), self.R.copy(), self.llr_clamp)

    @property
    def decision_llr(self) -> np.ndarray:
        """``L + R`` at the input stage, reordered to u-bit order."""
        node = self.L[..., 0, :] + self.R[..., 0, :]
        return node[..., bit_reversal_permutation(self.N)]


def g_minsum(x, y):
    """``sign(x) sign(y) min(|x|, |y|)`` with ``sign(0) = 0``."""
    return np.sign(x) * np.sign(y) * np.minimum(np.abs(x), np.abs(y))


def _halves(row: np.ndarray, s: int):
    """Upper and lower butterfly views of a stage row for butterfly stage ``s``."""
    N = row.shape[-1]
    d = N >> (s + 1)
    v = row.reshape(row.shape[:-1] + (N // (2 * d), 2, d))
    return v[..., 0, :], v[..., 1, :]


def init_messages(channel_llrs, code: PolarCode, cfg: DecoderConfig) -> MessageGrid:
    """Zero grid with the frozen prior in R row 0 and the clamped channel LLRs in L row n."""
    llr = np.asarray(channel_llrs, dtype=np.float64)
    if llr.shape[-1] != code.N:
        raise ValueError(f"expected {code.N} channel LLRs, got {llr.shape[-1]}")
    lead = llr.shape[:-1]
    L = np.zeros(lead + (code.n + 1, code.N))
    R = np.zeros_like(L)
    R[..., 0, bit_reversal_permutation(code.N)[code.frozen_index]] = cfg.frozen_llr
    L[..., code.n, :] = np.clip(llr, -cfg.llr_clamp, cfg.llr_clamp)
    return MessageGrid(L, R, cfg.llr_clamp)


class _Scaler:
    """Applies one stage's weights to g-outputs and keeps the op tally."""

    def __init__(self, weights: WeightSet, shift_add: bool, counter: OpCounter | None):
        self.weighted = weights.mode != "unweighted"
        self.shift_add = shift_add and self.weighted
        if shift_add and self.weighted and not weights.quantized:
            raise ValueError("shift-add scaling needs quantized weights")
        self.q = weights.q
        self.counter = counter

    def __call__(self, w, gv):
        if not self.weighted:
            return gv
        if self.shift_add:
            out, adds = shift_add_scale(gv, grid_code(w, self.q), self.q)
            if self.counter is not None:
                self.counter.additions += adds
            return out
        if self.counter is not None:
            self.counter.multiplications += w.size
        return w * gv


def _r_pass(L, R, alpha_beta, clamp, scale, counter=None):
    _, beta = alpha_beta
    n = L.shape[-2] - 1
    for s in range(n):
        a, b = _halves(R[..., s, :], s)
        la, lb = _halves(L[..., s + 1, :], s)
        up, lo = _halves(R[..., s + 1, :], s)
        bu, bl = _halves(beta[s], s) if beta is not None else (None, None)
        up[...] = np.clip(scale(bu, g_minsum(a, lb + b)), -clamp, clamp)
        lo[...] = np.clip(scale(bl, g_minsum(a, la)) + b, -clamp, clamp)
        if counter is not None:
            counter.additions += L.shape[-1]


def _l_pass(L, R, alpha_beta, clamp, scale, counter=None):
    alpha, _ = alpha_beta
    n = L.shape[-2] - 1
    for s in reversed(range(n)):
        a, b = _halves(R[..., s, :], s)
        la, lb = _halves(L[..., s + 1, :], s)
        up, lo = _halves(L[..., s, :], s)
        au, al = _halves(alpha[s], s) if alpha is not None else (None, None)
        up[...] = np.clip(scale(au, g_minsum(la, lb + b)), -clamp, clamp)
        lo[...] = np.clip(scale(al, g_minsum(a, la)) + lb, -clamp, clamp)
        if counter is not None:
            counter.additions += L.shape[-1]


def _check(code: PolarCode, weights: WeightSet, cfg: DecoderConfig):
    if weights.N != code.N:
        raise ValueError(f"weights are for N={weights.N}, code has N={code.N}")
    if weights.mode == "per_iteration" and weights.T != cfg.T:
        raise ValueError(f"per-iteration weights hold T={weights.T}, decoder runs T={cfg.T}")


def bp_iteration(grid: MessageGrid, weights: WeightSet, t: int, cfg: DecoderConfig | None = None,
                 counter: OpCounter | None = None) -> MessageGrid:
    """One R-pass plus L-pass at iteration ``t`` (1-based); returns a new grid."""
    shift_add = cfg.shift_add if cfg is not None else False
    out = grid.copy()
    ab = weights.at(t)
    scale = _Scaler(weights, shift_add, counter)
    _r_pass(out.L, out.R, ab, grid.llr_clamp, scale, counter)
    _l_pass(out.L, out.R, ab, grid.llr_clamp, scale, counter)
    return out


def run_decoder(channel_llrs, code: PolarCode, weights: WeightSet, cfg: DecoderConfig,
                counter: OpCounter | None = None) -> MessageGrid:
    """Initialise and run T iterations in place; returns the final grid."""
    _check(code, weights, cfg)
    grid = init_messages(channel_llrs, code, cfg)
    scale = _Scaler(weights, cfg.shift_add, counter)
    for t in range(1, cfg.T + 1):
        ab = weights.at(t)
        _r_pass(grid.L, grid.R, ab, cfg.llr_clamp, scale, counter)
        _l_pass(grid.L, grid.R, ab, cfg.llr_clamp, scale, counter)
    return grid


def hard_decision(grid: MessageGrid) -> np.ndarray:
    """All N estimated input bits: 0 where the decision LLR is >= 0."""
    return (grid.decision_llr < 0).astype(np.uint8)


def decode(channel_llrs, code: PolarCode, weights: WeightSet | None = None,
           cfg: DecoderConfig | None = None, counter: OpCounter | None = None) -> np.ndarray:
    """Decode channel LLRs of shape ``(N,)`` or ``(B, N)`` to K-bit message estimates."""
    cfg = cfg or DecoderConfig()
    weights = weights or WeightSet.ones("unweighted", code.N)
    grid = run_decoder(channel_llrs, code, weights, cfg, counter)
    return hard_decision(grid)[..., code.info_index]


def soft_output(grid: MessageGrid) -> np.ndarray:
    """Per-position probability that the input bit is 1: ``sigmoid(-decision LLR)``."""
    return 1.0 / (1.0 + np.exp(grid.decision_llr))
