"""``polarbp`` command line: construct, train, quantize, simulate, complexity, selftest."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .bp import DecoderConfig, WeightSet, decode
from .polar import construct_code, embed_message, encode, generator_matrix
from .quantize import QuantConfig, shift_add_multiply
from .train import TrainConfig, quantize_weightset, train

log = logging.getLogger("polarbp")


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"{p}: top level must be an object")
    return cfg


def _pick(fields, *layers) -> dict:
    """Merge dicts left to right, keeping known fields and skipping ``None``."""
    out = {}
    for layer in layers:
        for k, v in layer.items():
            if v is None:
                continue
            if k not in fields:
                raise ValueError(f"unknown configuration key {k!r}")
            out[k] = v
    return out


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _write_text(path, text: str, force: bool):
    if path is None:
        sys.stdout.write(text)
        return
    p = Path(path)
    if p.exists() and not force:
        raise FileExistsError(f"{p} exists; pass --force to overwrite")
    p.write_text(text)
    log.info("wrote %s", p)


def cmd_construct(args, cfg):
    code_cfg = {**cfg.get("code", {}), **_pick({"N", "K", "design_snr_db"},
                                                 {"N": args.N, "K": args.K, "design_snr_db": args.design_snr})}
    code = construct_code(int(code_cfg.get("N", 64)), int(code_cfg.get("K", 32)),
                          float(code_cfg.get("design_snr_db", 0.0)))
    _write_text(args.out, code.to_json() + "\n", args.force)
    return 0


def cmd_train(args, cfg):
    code_cfg = cfg.get("code", {})
    code = construct_code(int(args.N or code_cfg.get("N", 64)), int(args.K or code_cfg.get("K", 32)),
                          float(code_cfg.get("design_snr_db", 0.0)))
    tc = cfg.get("train", {})
    if "snr_grid_db" in tc:
        tc = {**tc, "snr_grid_db": tuple(tc["snr_grid_db"])}
    tcfg = TrainConfig(**_pick(_fields(TrainConfig), tc, {
        "epochs": args.epochs, "frames_per_snr_train": args.frames, "batch_size": args.batch_size,
        "learning_rate": args.lr, "seed": args.seed}))
    dcfg = DecoderConfig(**_pick(_fields(DecoderConfig), cfg.get("decoder", {}), {"T": args.T}))
    mode = bench.MODE_ALIASES.get(args.mode or cfg.get("mode", "shared"))
    qd = cfg.get("quant")
    if args.q is not None or args.c is not None:
        qd = {**(qd or {}), **_pick({"q", "c"}, {"q": args.q, "c": args.c})}
    quant = QuantConfig(**qd) if qd else None
    out = args.out or cfg.get("out")
    if out is None:
        raise ValueError("train needs --out for the weight file")
    out = Path(out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists; pass --force to overwrite")
    res = train(code, dcfg, tcfg, mode or "", quant)
    res.weights.save(out)
    metrics = out.with_suffix(".metrics.csv")
    _write_text(metrics, res.to_csv(tcfg.snr_grid_db), args.force)
    print(f"weights: {out}")
    return 0


def cmd_quantize(args, cfg):
    src = Path(args.weights or cfg.get("weights", ""))
    if not src.is_file():
        raise FileNotFoundError(f"weight file not found: {src}")
    ws = WeightSet.load(src)
    qd = {**cfg.get("quant", {}), **_pick({"q", "c"}, {"q": args.q, "c": args.c})}
    q = quantize_weightset(ws, QuantConfig(**qd))
    if args.out is None:
        raise ValueError("quantize needs --out")
    _write_text(args.out, json.dumps(q.to_dict()), args.force)
    print(f"codebook: {list(q.codebook)}")
    return 0


def _run_configs(args, cfg) -> list[bench.RunConfig]:
    base = {k: v for k, v in cfg.items() if k not in ("code", "decoders", "out")}
    code = cfg.get("code", {})
    base.update({k: code[k] for k in ("N", "K", "design_snr_db") if k in code})
    flags = {"mode": args.mode, "T": args.T, "weights_path": args.weights, "seed": args.seed,
             "workers": args.workers, "frames_per_snr": args.frames, "N": args.N, "K": args.K,
             "shift_add": True if args.shift_add else None,
             "stop": "errors" if args.target_errors else None,
             "target_frame_errors": args.target_errors,
             "snr_db": tuple(args.snr) if args.snr else None}
    if "workers" not in base and args.workers is None:
        flags["workers"] = bench.default_workers()
    decoders = cfg.get("decoders") or [{}]
    fields = _fields(bench.RunConfig)
    runs = []
    for d in decoders:
        merged = _pick(fields, base, d, flags)
        if "snr_db" in merged:
            merged["snr_db"] = tuple(merged["snr_db"])
        runs.append(bench.RunConfig(**merged))
    return runs


def cmd_simulate(args, cfg):
    runs = _run_configs(args, cfg)
    out_cfg = cfg.get("out", {}) if isinstance(cfg.get("out"), dict) else {}
    csv_path = args.out or out_cfg.get("csv")
    svg_path = args.svg or out_cfg.get("svg")
    for p in (csv_path, svg_path):
        if p is not None and Path(p).exists() and not args.force:
            raise FileExistsError(f"{p} exists; pass --force to overwrite")
    codes = {}
    # resolve every weight file before any simulation starts
    loaded = []
    for rc in runs:
        code = codes.setdefault((rc.N, rc.K, rc.design_snr_db), construct_code(rc.N, rc.K, rc.design_snr_db))
        loaded.append((rc, code, bench.load_weights(rc, code)))
    reports = [bench.run_ber_sweep(rc, code, ws) for rc, code, ws in loaded]
    text = bench.reports_to_csv(reports)
    _write_text(csv_path, text, args.force)
    if svg_path is not None:
        bench.write_svg(reports, svg_path, args.force)
    return 0


def cmd_complexity(args, cfg):
    mode = args.mode or cfg.get("mode", "bp")
    rep = bench.complexity_report(mode, args.T or cfg.get("T", 5), args.N or cfg.get("N", 64),
                                  args.q if args.q is not None else cfg.get("q"),
                                  args.c if args.c is not None else cfg.get("c"))
    lines = [f"{k} {v}" for k, v in rep.items()]
    _write_text(args.out, "\n".join(lines) + "\n", args.force)
    return 0


def selftest() -> list[tuple[str, bool]]:
    """Fast invariant checks; returns ``(name, ok)`` pairs."""
    rng = np.random.default_rng(0)
    checks = []

    ok = True
    for N in (2, 4, 8, 16, 64):
        code = construct_code(N, max(N // 2, 1))
        msg = rng.integers(0, 2, size=(20, code.K), dtype=np.uint8)
        ok &= np.array_equal(encode(code, msg),
                             (embed_message(code, msg).astype(int) @ generator_matrix(N)) % 2)
    checks.append(("encoder matches generator matrix", bool(ok)))

    code = construct_code(64, 32)
    msg = rng.integers(0, 2, size=(50, 32), dtype=np.uint8)
    noiseless = 30.0 * (1.0 - 2.0 * encode(code, msg))
    checks.append(("noiseless frames decode exactly",
                   bool(np.array_equal(decode(noiseless, code), msg))))

    llr = noiseless + rng.normal(0, 1.5, noiseless.shape)
    ones = WeightSet.ones("shared", 64)
    checks.append(("unit weights equal min-sum",
                   bool(np.array_equal(decode(llr, code, ones), decode(llr, code)))))

    table = [bench.complexity_report("bp", 40, 64)["additions"] == 30720,
             bench.complexity_report("dnn", 5, 64)["multiplications"] == 3840,
             bench.complexity_report("dnn", 5, 64)["memory_bits"] == 122880,
             bench.complexity_report("rnn", 5, 64, 4, 3)["additions"] == 15360,
             bench.complexity_report("rnn", 5, 64, 4, 3)["memory_bits"] == 2304]
    checks.append(("complexity table", all(table)))

    x = rng.normal(0, 10, 200)
    ok = all(shift_add_multiply(v, k / 8, 4) == v * (k / 8) for v in x for k in range(16))
    checks.append(("shift-add exact", ok))
    return checks


def cmd_selftest(args, cfg):
    results = selftest()
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int,
                        help=f"worker processes (default: ${bench.WORKERS_ENV} or 1)")
    common.add_argument("--out", help="output path (stdout if omitted where allowed)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="polarbp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", parents=[common], help="emit code JSON")
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--design-snr", type=float)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("train", parents=[common], help="train decoder weights")
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--mode", choices=sorted(bench.MODE_ALIASES))
    p.add_argument("--T", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--frames", type=int, help="training frames per SNR")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("--c", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", parents=[common], help="quantize a float weight file")
    p.add_argument("--weights")
    p.add_argument("--q", type=int)
    p.add_argument("--c", type=int)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo BER sweep")
    p.add_argument("--N", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--mode", choices=sorted(bench.MODE_ALIASES))
    p.add_argument("--T", type=int)
    p.add_argument("--weights")
    p.add_argument("--frames", type=int, help="frames per SNR (cap under --target-errors)")
    p.add_argument("--target-errors", type=int, help="stop an SNR point after this many frame errors")
    p.add_argument("--snr", type=float, nargs="+")
    p.add_argument("--shift-add", action="store_true")
    p.add_argument("--svg", help="BER plot output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("complexity", parents=[common], help="closed-form operation counts")
    p.add_argument("--mode", choices=sorted(bench.MODE_ALIASES))
    p.add_argument("--T", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--c", type=int)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("selftest", parents=[common], help="run quick invariant checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        if args.workers is not None and args.workers < 1:
            raise ValueError("--workers must be >= 1")
        return args.func(args, _load_config(args.config))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"polarbp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
