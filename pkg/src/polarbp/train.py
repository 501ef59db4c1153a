"""Gradient training of the BP scaling weights.

The forward pass is the decoder from :mod:`polarbp.bp` with every grid
snapshot kept; :func:`backward` walks the unrolled iterations in reverse and
returns exact (sub)gradients of the mean cross-entropy loss.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import bp
from .bp import DecoderConfig, MessageGrid, WeightSet, _halves, _l_pass, _r_pass, g_minsum
from .channel import awgn, channel_llr, make_rng, modulate_bpsk, sigma_from_snr, stream_id
from .polar import PolarCode, bit_reversal_permutation, embed_message, encode
from .quantize import QuantConfig, quantize_weights

log = logging.getLogger(__name__)

EPS = 1e-12
SPLITS = {"train": 0, "test": 1, "val": 2}


@dataclass(frozen=True)
class TrainConfig:
    snr_grid_db: tuple[float, ...] = (0, 1, 2, 3, 4, 5)
    frames_per_snr_train: int = 40000
    frames_per_snr_test: int = 100800
    frames_per_snr_val: int = 1000
    batch_size: int = 2400
    epochs: int = 20
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    seed: int = 0
    grad_clip: float | None = 10.0
    snr_is_esn0: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0 or not 0 <= self.rms_decay < 1 or self.rms_epsilon <= 0:
            raise ValueError("invalid optimizer settings")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")

    def frames(self, split: str) -> int:
        return {"train": self.frames_per_snr_train, "test": self.frames_per_snr_test,
                "val": self.frames_per_snr_val}[split]


@dataclass
class GradientSet:
    d_alpha: np.ndarray
    d_beta: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_alpha ** 2) + np.sum(self.d_beta ** 2)))


@dataclass
class RmsState:
    s_alpha: np.ndarray
    s_beta: np.ndarray

    @classmethod
    def zeros_like(cls, weights: WeightSet) -> "RmsState":
        return cls(np.zeros_like(weights.alpha), np.zeros_like(weights.beta))


@dataclass
class History:
    """Grids recorded by :func:`forward`: ``L[t]`` after iteration t's L-pass
    (``L[0]`` is the initial grid) and ``R[t - 1]`` after its R-pass."""

    L: list
    R: list
    llr_clamp: float


@dataclass
class Dataset:
    messages: np.ndarray
    u: np.ndarray
    codewords: np.ndarray
    llrs: np.ndarray
    snr_db: np.ndarray

    def __len__(self):
        return len(self.messages)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.messages[idx], self.u[idx], self.codewords[idx], self.llrs[idx],
                       self.snr_db[idx])

    def batches(self, batch_size: int):
        for start in range(0, len(self), batch_size):
            yield self.subset(slice(start, start + batch_size))


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    val_ber: list[float]


@dataclass
class TrainResult:
    weights: WeightSet
    metrics: list[EpochMetrics] = field(default_factory=list)

    def to_csv(self, snr_grid) -> str:
        head = ["epoch", "mean_loss"] + [f"val_ber_{s:g}dB" for s in snr_grid]
        rows = [",".join(head)]
        for m in self.metrics:
            rows.append(",".join([str(m.epoch), repr(m.mean_loss)] + [repr(b) for b in m.val_ber]))
        return "\n".join(rows) + "\n"


def sigmoid_neg(D):
    return 1.0 / (1.0 + np.exp(D))


def cross_entropy_loss(targets, soft) -> float:
    """Mean binary cross entropy over the last axis (and any batch axes)."""
    u = np.asarray(targets, dtype=np.float64)
    o = np.asarray(soft, dtype=np.float64)
    if u.shape != o.shape:
        raise ValueError(f"shape mismatch: targets {u.shape} vs soft {o.shape}")
    o = np.clip(o, EPS, 1.0 - EPS)
    return float(-np.mean(u * np.log(o) + (1.0 - u) * np.log(1.0 - o)))


def forward(llrs, code: PolarCode, weights: WeightSet, cfg: DecoderConfig):
    """Run the decoder and keep the grids needed by :func:`backward`."""
    bp._check(code, weights, cfg)
    grid = bp.init_messages(llrs, code, cfg)
    hist = History([grid.L.copy()], [], cfg.llr_clamp)
    mul = lambda w, gv: gv if w is None else w * gv
    for t in range(1, cfg.T + 1):
        ab = weights.at(t)
        _r_pass(grid.L, grid.R, ab, cfg.llr_clamp, mul)
        hist.R.append(grid.R.copy())
        _l_pass(grid.L, grid.R, ab, cfg.llr_clamp, mul)
        hist.L.append(grid.L.copy())
    return grid, hist


def loss_and_grad_output(grid: MessageGrid, u) -> tuple[float, np.ndarray]:
    """Loss averaged over batch and positions, and its gradient w.r.t. the
    input-stage decision LLRs in node order."""
    D = grid.decision_llr
    o = sigmoid_neg(D)
    loss = cross_entropy_loss(u, o)
    live = (o > EPS) & (o < 1.0 - EPS)
    dD = np.where(live, np.asarray(u, dtype=np.float64) - o, 0.0) / D.size
    return loss, dD[..., bit_reversal_permutation(grid.N)]


def _dg(x, y):
    """Partials of the min-sum g; a tie |x| == |y| routes to x."""
    sx, sy = np.sign(x), np.sign(y)
    pick_x = np.abs(x) <= np.abs(y)
    return np.where(pick_x, sy, 0.0), np.where(pick_x, 0.0, sx)


def _sum_batch(a, ndim):
    return a.sum(axis=tuple(range(a.ndim - ndim))) if a.ndim > ndim else a


def backward(hist: History, weights: WeightSet, d_decision: np.ndarray) -> GradientSet:
    """Reverse sweep through the recorded iterations.

    ``d_decision`` is the loss gradient w.r.t. the input-stage decision LLRs
    in node order (as returned by :func:`loss_and_grad_output`). Clamped
    outputs pass gradient only strictly inside ``(-clamp, clamp)``.
    """
    if weights.mode == "unweighted":
        raise ValueError("unweighted decoder has no trainable weights")
    T = len(hist.R)
    if T == 0 or len(hist.L) != T + 1:
        raise ValueError("history does not hold a complete forward pass")
    clamp = hist.llr_clamp
    d_alpha = np.zeros_like(weights.alpha)
    d_beta = np.zeros_like(weights.beta)
    n = hist.L[0].shape[-2] - 1

    adjL = np.zeros_like(hist.L[0])
    adjL[..., 0, :] = d_decision
    for t in range(T, 0, -1):
        alpha, beta = weights.at(t)
        ga, gb = (d_alpha[t - 1], d_beta[t - 1]) if weights.mode == "per_iteration" else (d_alpha, d_beta)
        Lt, Rt, Lp = hist.L[t], hist.R[t - 1], hist.L[t - 1]
        adjR = np.zeros_like(Rt)
        adjLp = np.zeros_like(Lp)

        # L-pass ran s = n-1 .. 0, so undo it in ascending order
        for s in range(n):
            a, b = _halves(Rt[..., s, :], s)
            la, lb = _halves(Lt[..., s + 1, :], s)
            o_up, o_lo = _halves(adjL[..., s, :], s)
            ra, rb = _halves(adjR[..., s, :], s)
            na, nb = _halves(adjL[..., s + 1, :], s)
            wu, wl = _halves(alpha[s], s)
            gu, gl = _halves(ga[s], s)

            y = lb + b
            gv = g_minsum(la, y)
            p = np.where(np.abs(wu * gv) < clamp, o_up, 0.0)
            gu += _sum_batch(p * gv, gu.ndim)
            dx, dy = _dg(la, y)
            na += p * wu * dx
            nb += p * wu * dy
            rb += p * wu * dy

            gv = g_minsum(a, la)
            p = np.where(np.abs(wl * gv + lb) < clamp, o_lo, 0.0)
            gl += _sum_batch(p * gv, gl.ndim)
            dx, dy = _dg(a, la)
            ra += p * wl * dx
            na += p * wl * dy
            nb += p

        # R-pass ran s = 0 .. n-1
        for s in reversed(range(n)):
            a, b = _halves(Rt[..., s, :], s)
            la, lb = _halves(Lp[..., s + 1, :], s)
            o_up, o_lo = _halves(adjR[..., s + 1, :], s)
            ra, rb = _halves(adjR[..., s, :], s)
            pa, pb = _halves(adjLp[..., s + 1, :], s)
            wu, wl = _halves(beta[s], s)
            gu, gl = _halves(gb[s], s)

            y = lb + b
            gv = g_minsum(a, y)
            p = np.where(np.abs(wu * gv) < clamp, o_up, 0.0)
            gu += _sum_batch(p * gv, gu.ndim)
            dx, dy = _dg(a, y)
            ra += p * wu * dx
            pb += p * wu * dy
            rb += p * wu * dy

            gv = g_minsum(a, la)
            p = np.where(np.abs(wl * gv + b) < clamp, o_lo, 0.0)
            gl += _sum_batch(p * gv, gl.ndim)
            dx, dy = _dg(a, la)
            ra += p * wl * dx
            pa += p * wl * dy
            rb += p

        adjL = adjLp
    return GradientSet(d_alpha, d_beta)


def loss_and_gradient(llrs, u, code: PolarCode, weights: WeightSet, cfg: DecoderConfig,
                      compiled: bool = True, chunk: int = 256):
    """Mean loss over a batch and its weight gradient.

    ``compiled`` runs the per-frame kernel in :mod:`polarbp._kernels`;
    otherwise :func:`forward`/:func:`backward` run over chunks of ``chunk``
    frames. Both sum frame gradients in frame order.
    """
    llrs, u = np.atleast_2d(llrs), np.atleast_2d(u)
    if weights.mode == "unweighted":
        raise ValueError("unweighted decoder has no trainable weights")
    if compiled:
        from ._kernels import batch_loss_grad

        bp._check(code, weights, cfg)
        init = bp.init_messages(np.zeros(code.N), code, cfg)
        node_u = np.ascontiguousarray(np.asarray(u, dtype=np.float64)[:, bit_reversal_permutation(code.N)])
        per_iter = weights.mode == "per_iteration"
        alpha = weights.alpha if per_iter else weights.alpha[None]
        beta = weights.beta if per_iter else weights.beta[None]
        loss, da, db = batch_loss_grad(np.ascontiguousarray(llrs, dtype=np.float64), node_u,
                                       init.R[0].copy(), np.ascontiguousarray(alpha),
                                       np.ascontiguousarray(beta), per_iter, cfg.T,
                                       float(cfg.llr_clamp), EPS)
        return float(loss), GradientSet(da if per_iter else da[0], db if per_iter else db[0])
    B = llrs.shape[0]
    total = 0.0
    grads = GradientSet(np.zeros_like(weights.alpha), np.zeros_like(weights.beta))
    for start in range(0, B, chunk):
        sl = slice(start, start + chunk)
        grid, hist = forward(llrs[sl], code, weights, cfg)
        loss, dD = loss_and_grad_output(grid, u[sl])
        frac = grid.L.shape[0] / B
        g = backward(hist, weights, dD * frac)
        grads.d_alpha += g.d_alpha
        grads.d_beta += g.d_beta
        total += loss * frac
    return total, grads


def rmsprop_step(weights: WeightSet, grads: GradientSet, state: RmsState, cfg: TrainConfig):
    """One RMSProp update in place; returns ``(weights, state)``.

    ``s <- rho s + (1 - rho) g^2`` and ``w <- w - lr g / (sqrt(s) + eps)``,
    after optional global-norm clipping of the gradient.
    """
    if grads.d_alpha.shape != weights.alpha.shape or grads.d_beta.shape != weights.beta.shape:
        raise ValueError("gradient shape does not match weights")
    if state.s_alpha.shape != weights.alpha.shape or state.s_beta.shape != weights.beta.shape:
        raise ValueError("optimizer state shape does not match weights")
    ga, gb = grads.d_alpha, grads.d_beta
    if cfg.grad_clip is not None:
        norm = grads.norm()
        if norm > cfg.grad_clip:
            ga, gb = ga * (cfg.grad_clip / norm), gb * (cfg.grad_clip / norm)
    rho, lr, eps = cfg.rms_decay, cfg.learning_rate, cfg.rms_epsilon
    for w, g, s in ((weights.alpha, ga, state.s_alpha), (weights.beta, gb, state.s_beta)):
        s *= rho
        s += (1.0 - rho) * g * g
        w -= lr * g / (np.sqrt(s) + eps)
    return weights, state


def generate_dataset(code: PolarCode, cfg: TrainConfig, split: str = "train",
                     frames_per_snr: int | None = None) -> Dataset:
    """Random messages at every SNR of the grid, shuffled across SNRs.

    Each (split, SNR) pair draws from its own substream of ``cfg.seed``.
    """
    sid = SPLITS[split]
    frames = cfg.frames(split) if frames_per_snr is None else frames_per_snr
    parts = []
    rate = 1.0 if cfg.snr_is_esn0 else code.rate
    for i, snr in enumerate(cfg.snr_grid_db):
        rng = make_rng(cfg.seed, stream_id(sid, i + 1))
        msg = rng.integers(0, 2, size=(frames, code.K), dtype=np.uint8)
        x = encode(code, msg)
        sigma = sigma_from_snr(snr, rate)
        llr = channel_llr(awgn(modulate_bpsk(x), sigma, rng), sigma)
        parts.append(Dataset(msg, embed_message(code, msg), x, llr, np.full(frames, float(snr))))
    data = Dataset(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("messages", "u", "codewords", "llrs", "snr_db")))
    order = make_rng(cfg.seed, stream_id(sid, 0)).permutation(len(data))
    return data.subset(order)


def ber_per_snr(data: Dataset, code: PolarCode, weights: WeightSet, dcfg: DecoderConfig,
                snr_grid) -> list[float]:
    out = []
    for snr in snr_grid:
        sel = data.snr_db == float(snr)
        est = bp.decode(data.llrs[sel], code, weights, dcfg)
        out.append(float(np.mean(est != data.messages[sel])))
    return out


def quantize_weightset(weights: WeightSet, quant: QuantConfig) -> WeightSet:
    """q-bit rounding then a shared ``2**c``-entry codebook over alpha and beta."""
    book, (ai, bi), (aq, bq) = quantize_weights([weights.alpha, weights.beta], quant)
    return WeightSet(weights.mode, weights.N, aq, bq, quant.q, quant.c, book.values, ai, bi)


def train(code: PolarCode, dcfg: DecoderConfig, tcfg: TrainConfig, mode: str = "shared",
          quant: QuantConfig | None = None, init: WeightSet | None = None) -> TrainResult:
    """Train per-iteration or shared weights with RMSProp on mixed-SNR batches.

    With ``quant`` the weights are re-quantized (q-bit grid, then codebook) at
    the end of every epoch and training resumes from the quantized values.
    """
    if mode not in ("per_iteration", "shared"):
        raise ValueError(f"cannot train mode {mode!r}")
    weights = init.copy() if init is not None else WeightSet.ones(mode, code.N, dcfg.T)
    dcfg = replace(dcfg, shift_add=False)
    result = TrainResult(weights)
    if tcfg.epochs == 0:
        return result
    data = generate_dataset(code, tcfg, "train")
    val = generate_dataset(code, tcfg, "val")
    state = RmsState.zeros_like(weights)
    for epoch in range(1, tcfg.epochs + 1):
        order = make_rng(tcfg.seed, stream_id(3, epoch)).permutation(len(data))
        losses = []
        for batch in data.subset(order).batches(tcfg.batch_size):
            loss, grads = loss_and_gradient(batch.llrs, batch.u, code, weights, dcfg)
            rmsprop_step(weights, grads, state, tcfg)
            losses.append(loss)
        if quant is not None:
            q = quantize_weightset(weights, quant)
            weights.alpha[...] = q.alpha
            weights.beta[...] = q.beta
            weights.q, weights.c, weights.codebook = q.q, q.c, q.codebook
            weights.alpha_idx, weights.beta_idx = q.alpha_idx, q.beta_idx
        val_ber = ber_per_snr(val, code, weights, dcfg, tcfg.snr_grid_db)
        result.metrics.append(EpochMetrics(epoch, float(np.mean(losses)), val_ber))
        log.info("epoch %d loss %.5f val_ber %s", epoch, result.metrics[-1].mean_loss,
                 " ".join(f"{b:.2e}" for b in val_ber))
    return result
