"""Monte-Carlo BER/FER sweeps, closed-form complexity counts and result files."""
from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

from .bp import DecoderConfig, OpCounter, WeightSet, _check, decode
from .channel import awgn, channel_llr, make_rng, modulate_bpsk, sigma_from_snr, stream_id
from .polar import PolarCode, construct_code, encode
from .quantize import QuantConfig, weight_memory_bits

CSV_SCHEMA_VERSION = 1
WORKERS_ENV = "POLARBP_WORKERS"
# keeps simulation substreams apart from the training/validation splits
SIM_STREAM = 7
MODE_ALIASES = {"bp": "unweighted", "dnn": "per_iteration", "rnn": "shared",
                "unweighted": "unweighted", "per_iteration": "per_iteration", "shared": "shared"}
CSV_FIELDS = ["schema_version", "decoder", "mode", "T", "q", "c", "snr_db", "frames",
              "bit_errors", "frame_errors", "ber", "ber_ci_low", "ber_ci_high", "fer",
              "additions", "multiplications", "seed"]


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if w < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {w}")
    return w


@dataclass(frozen=True)
class RunConfig:
    N: int = 64
    K: int = 32
    design_snr_db: float = 0.0
    snr_db: tuple[float, ...] = (0, 1, 2, 3, 4, 5)
    snr_is_esn0: bool = False
    mode: str = "unweighted"
    T: int = 5
    weights_path: str | None = None
    shift_add: bool = False
    llr_clamp: float = 30.0
    frozen_llr: float = 30.0
    # "frames": exactly frames_per_snr; "errors": stop at target_frame_errors or frames_per_snr
    stop: str = "frames"
    frames_per_snr: int = 100800
    target_frame_errors: int = 100
    chunk_frames: int = 1000
    seed: int = 0
    workers: int = 1
    noiseless: bool = False
    label: str | None = None
    csv_path: str | None = None
    svg_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODE_ALIASES:
            raise ValueError(f"unknown decoder mode {self.mode!r}")
        object.__setattr__(self, "mode", MODE_ALIASES[self.mode])
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if self.stop not in ("frames", "errors"):
            raise ValueError(f"stop must be 'frames' or 'errors', got {self.stop!r}")
        if self.frames_per_snr < 1 or self.chunk_frames < 1 or self.workers < 1:
            raise ValueError("frames_per_snr, chunk_frames and workers must be >= 1")
        if self.stop == "errors" and self.target_frame_errors < 1:
            raise ValueError("target_frame_errors must be >= 1")
        if self.mode != "unweighted" and self.weights_path is None:
            raise ValueError(f"mode {self.mode!r} needs a weight file")
        if not self.snr_db:
            raise ValueError("need at least one SNR point")

    @property
    def decoder_label(self) -> str:
        return self.label or f"{self.mode}-T{self.T}"

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.T, self.llr_clamp, self.frozen_llr, self.shift_add)


@dataclass
class SnrRecord:
    snr_db: float
    frames: int
    bit_errors: int
    frame_errors: int
    ber: float
    fer: float
    ber_ci_low: float
    ber_ci_high: float


@dataclass
class BerReport:
    decoder: str
    mode: str
    T: int
    q: int | None
    c: int | None
    K: int
    seed: int
    records: list[SnrRecord] = field(default_factory=list)
    additions: int = 0
    multiplications: int = 0
    wall_seconds: float = 0.0

    def ber(self) -> list[float]:
        return [r.ber for r in self.records]

    def rows(self) -> list[dict]:
        ident = {"schema_version": CSV_SCHEMA_VERSION, "decoder": self.decoder, "mode": self.mode,
                 "T": self.T, "q": "" if self.q is None else self.q,
                 "c": "" if self.c is None else self.c}
        tail = {"additions": self.additions, "multiplications": self.multiplications,
                "seed": self.seed}
        return [{**ident, **{k: (repr(v) if isinstance(v, float) else v)
                             for k, v in asdict(r).items()}, **tail} for r in self.records]


def clopper_pearson(errors: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval for ``errors / trials``."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= errors <= trials:
        raise ValueError("errors must lie in [0, trials]")
    a = 1.0 - level
    lo = 0.0 if errors == 0 else float(beta_dist.ppf(a / 2, errors, trials - errors + 1))
    hi = 1.0 if errors == trials else float(beta_dist.ppf(1 - a / 2, errors + 1, trials - errors))
    return lo, hi


def load_weights(cfg: RunConfig, code: PolarCode) -> WeightSet:
    if cfg.mode == "unweighted":
        return WeightSet.ones("unweighted", code.N)
    path = Path(cfg.weights_path)
    if not path.is_file():
        raise FileNotFoundError(f"weight file not found: {path}")
    ws = WeightSet.load(path)
    if ws.mode != cfg.mode:
        raise ValueError(f"{path}: holds {ws.mode!r} weights, run asks for {cfg.mode!r}")
    _check(code, ws, cfg.decoder_config())
    if cfg.shift_add and not ws.quantized:
        raise ValueError(f"{path}: shift-add decoding needs quantized weights")
    return ws


def make_frames(code: PolarCode, snr_db: float, n_frames: int, rng, llr_clamp: float,
                noiseless: bool = False, snr_is_esn0: bool = False):
    """Random messages and their channel LLRs; ``noiseless`` gives the sigma -> 0 limit
    (LLRs at the clamp magnitude)."""
    msg = rng.integers(0, 2, size=(n_frames, code.K), dtype=np.uint8)
    sym = modulate_bpsk(encode(code, msg))
    if noiseless:
        return msg, llr_clamp * sym
    sigma = sigma_from_snr(snr_db, 1.0 if snr_is_esn0 else code.rate)
    return msg, channel_llr(awgn(sym, sigma, rng), sigma)


def _run_chunk(job):
    code, weights, dcfg, cfg, snr_idx, chunk_idx, n_frames = job
    rng = make_rng(cfg.seed, stream_id(SIM_STREAM, snr_idx, chunk_idx))
    msg, llr = make_frames(code, cfg.snr_db[snr_idx], n_frames, rng, cfg.llr_clamp,
                           cfg.noiseless, cfg.snr_is_esn0)
    counter = OpCounter()
    est = decode(llr, code, weights, dcfg, counter)
    err = est != msg
    return (int(err.sum()), int(err.any(axis=1).sum()), n_frames,
            counter.additions, counter.multiplications)


def _chunk_sizes(total: int, chunk: int) -> list[int]:
    return [min(chunk, total - s) for s in range(0, total, chunk)]


def run_ber_sweep(cfg: RunConfig, code: PolarCode | None = None,
                  weights: WeightSet | None = None) -> BerReport:
    """Simulate every SNR point of ``cfg`` and return the error tallies.

    Frames are split into chunks, chunk ``i`` at SNR index ``k`` drawing from
    its own substream ``(k, i)`` of the seed, and tallies are reduced in chunk order,
    so the report does not depend on the worker count.
    """
    code = code or construct_code(cfg.N, cfg.K, cfg.design_snr_db)
    if (code.N, code.K) != (cfg.N, cfg.K):
        raise ValueError("code does not match the run configuration")
    dcfg = cfg.decoder_config()
    weights = weights if weights is not None else load_weights(cfg, code)
    _check(code, weights, dcfg)
    if cfg.shift_add and weights.mode != "unweighted" and not weights.quantized:
        raise ValueError("shift-add decoding needs quantized weights")

    start = time.perf_counter()
    report = BerReport(cfg.decoder_label, weights.mode, cfg.T, weights.q, weights.c, code.K, cfg.seed)
    counts = None
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for k, snr in enumerate(cfg.snr_db):
            sizes = _chunk_sizes(cfg.frames_per_snr, cfg.chunk_frames)
            bits = frames_err = frames = 0
            wave = cfg.workers if cfg.stop == "errors" else len(sizes)
            done = False
            for w0 in range(0, len(sizes), wave):
                jobs = [(code, weights, dcfg, cfg, k, i, sizes[i])
                        for i in range(w0, min(w0 + wave, len(sizes)))]
                results = list(pool.map(_run_chunk, jobs)) if pool else [_run_chunk(j) for j in jobs]
                for be, fe, nf, adds, mults in results:
                    if counts is None:
                        counts = (adds, mults)
                    elif counts != (adds, mults):
                        raise RuntimeError("per-frame operation count varied between chunks")
                    bits, frames_err, frames = bits + be, frames_err + fe, frames + nf
                    if cfg.stop == "errors" and frames_err >= cfg.target_frame_errors:
                        done = True
                        break
                if done:
                    break
            n_bits = frames * code.K
            lo, hi = clopper_pearson(bits, n_bits)
            report.records.append(SnrRecord(float(snr), frames, bits, frames_err, bits / n_bits,
                                            frames_err / frames, lo, hi))
    finally:
        if pool:
            pool.shutdown()
    report.additions, report.multiplications = counts
    report.wall_seconds = time.perf_counter() - start
    return report


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    wr.writeheader()
    for rep in reports:
        wr.writerows(rep.rows())
    return buf.getvalue()


def write_csv(reports, path, force: bool = False) -> Path:
    path = Path(path)
    _guard(path, force)
    path.write_text(reports_to_csv(reports))
    return path


def write_svg(reports, path, force: bool = False) -> Path:
    """BER against SNR on a log axis, one curve per report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    _guard(path, force)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for rep in reports:
        pts = [(r.snr_db, r.ber) for r in rep.records if r.ber > 0]
        if pts:
            ax.semilogy(*zip(*pts), marker="o", label=rep.decoder)
    ax.set_xlabel("Eb/N0 (dB)")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)
    if ax.lines:
        ax.legend()
    with matplotlib.rc_context({"svg.hashsalt": "polarbp"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _guard(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def complexity_report(mode: str, T: int, N: int, q: int | None = None,
                      c: int | None = None) -> dict:
    """Closed-form per-frame counts for one decoder configuration.

    Every iteration touches ``N log2 N / 2`` butterflies with four additions
    each. Weighted float decoders add one multiplication per message; with
    quantized weights each multiplication becomes up to ``q`` shift-add terms.
    """
    if mode not in MODE_ALIASES:
        raise ValueError(f"unknown decoder mode {mode!r}")
    mode = MODE_ALIASES[mode]
    if T < 1 or N < 2 or N & (N - 1):
        raise ValueError("need T >= 1 and N a power of two >= 2")
    messages = 2 * T * N * (N.bit_length() - 1)
    quant = QuantConfig(q, c) if (q is not None and c is not None and mode != "unweighted") else None
    mem = weight_memory_bits(mode, N, T, quant)
    if mode == "unweighted":
        adds, mults = messages, 0
    elif quant is None:
        adds, mults = messages, messages
    else:
        adds, mults = q * messages, 0
    return {"additions": adds, "multiplications": mults, "memory_bits": mem["weight_bits"],
            "codebook_bits": mem["codebook_bits"]}
