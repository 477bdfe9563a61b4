"""``imse`` command line: bench | enhance | params | gradcheck | train-toy.

Global flags (accepted before or after the subcommand): ``--seed``,
``--deterministic``, ``--config PATH`` (JSON model config, optionally with a
``"preset"`` key whose fields the rest override) and ``--json``.

Exit status: 0 on success, 1 on a failed tolerance/correctness gate or a
runtime error, 2 on usage errors.

CSV outputs use ``.`` as decimal separator and these headers:

    bench      N,mode,median_ns,per_token_ns
    train-toy  epoch,train_loss,val_sisnr_db
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .audio import WavFile, resample, wav_read, wav_write
from .errors import ImseError
from .model import REFERENCE_PARAMS_M, ModelConfig, build_model, count_params, load_checkpoint, preset
from .spectral import istft, ola_envelope, stft
from .tensor import deterministic, make_rng

EDGE_ENVELOPE_MIN = 1e-3
# The end-to-end loss carries ~1e-13 of round-off, which swamps central
# differences of its smallest gradients at h = 1e-5; truncation error at 1e-4
# is still far below the tolerance.
MODEL_FD_STEP = 1e-4


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--deterministic", action="store_true", default=d(False),
                        help="single-threaded BLAS, fixed reduction order")
    parser.add_argument("--config", type=Path, default=d(None), help="JSON model config file")
    parser.add_argument("--json", action="store_true", default=d(False), help="machine-readable output")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imse", description=__doc__.splitlines()[0])
    _global_options(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="linear vs quadratic attention timing (CSV)")
    b.add_argument("--n", type=_ints, default=list(bench.DEFAULT_SIZES), help="comma-separated sequence lengths")
    b.add_argument("--d", type=int, default=16)
    b.add_argument("--dv", type=int, default=16)
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--modes", default="linear,quadratic")
    b.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    b.add_argument("--check", action="store_true",
                   help="exit 1 unless linear doubling ratios <= 2.5 and quadratic >= 3.0")

    e = sub.add_parser("enhance", help="denoise a 16-bit PCM WAV file")
    e.add_argument("input", type=Path)
    e.add_argument("output", type=Path)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--resample", action="store_true", help="resample input to the model rate and back")

    pa = sub.add_parser("params", help="parameter counts per module")
    pa.add_argument("--preset", default="full")

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--preset", default="tiny")
    g.add_argument("--samples", type=int, default=100)
    g.add_argument("--scope", choices=("all", "mala", "idconv", "model"), default="all")

    t = sub.add_parser("train-toy", help="train on synthetic tone-in-noise pairs")
    t.add_argument("--preset", default="tiny")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--items", type=int, default=200)
    t.add_argument("--val-items", type=int, default=40)
    t.add_argument("--snr-db", type=float, default=0.0)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--batch-size", type=int, default=1)
    t.add_argument("--checkpoint", type=Path, help="save the best-validation model here")
    t.add_argument("--csv", type=Path, help="write history CSV here instead of stdout")

    for sp in (b, e, pa, g, t):
        _global_options(sp, suppress=True)
    return p


def _model_config(args) -> ModelConfig:
    base = preset(getattr(args, "preset", "full"))
    if args.config is None:
        return base
    raw = json.loads(Path(args.config).read_text())
    if "preset" in raw:
        base = preset(raw.pop("preset"))
    merged = base.to_dict()
    if "stft" in raw:
        merged["stft"].update(raw.pop("stft"))
    merged.update(raw)
    return ModelConfig.from_dict(merged)


def cmd_bench(args, out) -> int:
    modes = tuple(m for m in args.modes.split(",") if m)
    worst = bench.correctness_gate(args.n, args.d, args.dv, seed=args.seed)
    if worst > 1e-9:
        print(f"correctness gate failed: paths differ by {worst:.3e} (> 1e-9)", file=sys.stderr)
        return 1
    rows = bench.run_benchmark(args.n, args.d, args.dv, args.reps, args.warmup, modes,
                               np.dtype(args.dtype), seed=args.seed)
    if args.json:
        json.dump({"gate_max_rel_dev": worst,
                   "rows": [dict(N=r.n, mode=r.mode, median_ns=r.median_ns, per_token_ns=r.per_token_ns)
                            for r in rows]}, out, indent=2)
        out.write("\n")
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["N", "mode", "median_ns", "per_token_ns"])
        for r in rows:
            w.writerow([r.n, r.mode, f"{r.median_ns:.1f}", f"{r.per_token_ns:.4f}"])
    if args.check:
        lin = bench.doubling_ratios(rows, "linear")
        quad = bench.doubling_ratios(rows, "quadratic")
        if any(x > 2.5 for x in lin) or any(x < 3.0 for x in quad):
            print(f"scaling check failed: linear {lin}, quadratic {quad}", file=sys.stderr)
            return 1
    return 0


def enhance_signal(model, samples: np.ndarray) -> np.ndarray:
    """Full pipeline on a mono signal; output has the input's length.

    Samples past the last full frame, and edge samples whose overlap-add
    envelope is below ``EDGE_ENVELOPE_MIN``, are set to zero.
    """
    cfg = model.cfg.stft
    spec = stft(samples, cfg)
    wav = istft(model.enhance(spec))
    env = ola_envelope(cfg, spec.n_frames)
    wav[env < EDGE_ENVELOPE_MIN] = 0.0
    out = np.zeros(len(samples))
    out[:len(wav)] = wav
    return out


def cmd_enhance(args, out) -> int:
    model = load_checkpoint(args.checkpoint)
    rate = model.cfg.stft.sample_rate
    wav = wav_read(args.input)
    x = wav.samples
    if wav.sample_rate != rate:
        if not args.resample:
            raise ImseError(f"{args.input} is sampled at {wav.sample_rate} Hz but the model expects {rate} Hz; "
                            "pass --resample to convert")
        x = resample(x, wav.sample_rate, rate)
    y = enhance_signal(model, x)
    if wav.sample_rate != rate:
        y = resample(y, rate, wav.sample_rate)[:len(wav.samples)]
        y = np.pad(y, (0, len(wav.samples) - len(y)))
    wav_write(args.output, WavFile(wav.sample_rate, y))
    if args.json:
        json.dump({"input": str(args.input), "output": str(args.output), "samples": len(y),
                   "sample_rate": wav.sample_rate}, out)
        out.write("\n")
    return 0


def cmd_params(args, out) -> int:
    cfg = _model_config(args)
    report = count_params(build_model(cfg, args.seed))
    counts = report.as_dict()
    if args.json:
        json.dump({"config": cfg.to_dict(), "counts": counts,
                   "reference_reported_M": REFERENCE_PARAMS_M, "reference_context_only": True}, out, indent=2)
        out.write("\n")
        return 0
    out.write(f"{'module':<12} {'params':>10}\n")
    for k, v in counts.items():
        out.write(f"{k:<12} {v:>10d}\n")
    out.write(f"\n{'total (M)':<12} {report.total / 1e6:>10.3f}   reported IMSE: {REFERENCE_PARAMS_M['IMSE']:.3f} *\n")
    for k, v in REFERENCE_PARAMS_M.items():
        out.write(f"  reported {k:<24} {v:.3f} M *\n")
    out.write("* context only: the reported networks' block internals are not published, "
              "so these totals are not expected to match.\n")
    return 0


def _gradcheck_modules(seed: int, samples: int) -> dict[str, float]:
    from .idconv import IdConvConfig, idconv_backward, idconv_forward, init_idconv_weights
    from .mala import mala_backward, mala_linear

    rng = make_rng(seed)
    out = {}
    q, k, v = rng.standard_normal((8, 4)), rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    dy = rng.standard_normal((8, 4))
    grads = mala_backward(q, k, v, dy)
    out["mala"] = _fd_max_rel(lambda a: float((mala_linear(*a) * dy).sum()), [q, k, v], grads, samples, rng)

    cfg = IdConvConfig.equal(4)
    x = rng.standard_normal((4, 6, 6))
    w = init_idconv_weights(cfg, rng)
    dy = rng.standard_normal(x.shape)
    dx, dw = idconv_backward(x, w, cfg, dy)
    names = list(w)
    f = lambda a: float((idconv_forward(a[0], dict(zip(names, a[1:])), cfg) * dy).sum())
    out["idconv"] = _fd_max_rel(f, [x] + [w[n] for n in names], [dx] + [dw[n] for n in names], samples, rng)
    return out


def _fd_max_rel(f, arrays, grads, samples, rng, h=1e-5, floor=1e-8) -> float:
    sizes = np.array([a.size for a in arrays])
    worst = 0.0
    for flat in rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False):
        i = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        idx = np.unravel_index(flat - (np.cumsum(sizes)[i] - sizes[i]), arrays[i].shape)
        orig = arrays[i][idx]
        arrays[i][idx] = orig + h
        up = f(arrays)
        arrays[i][idx] = orig - h
        down = f(arrays)
        arrays[i][idx] = orig
        num, ana = (up - down) / (2 * h), grads[i][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst


def cmd_gradcheck(args, out) -> int:
    from .training import ToyDatasetConfig, grad_check, make_toy_dataset

    results: dict[str, float] = {}
    tols = {"mala": 1e-4, "idconv": 1e-4, "model": 1e-3}
    if args.scope in ("all", "mala", "idconv"):
        mods = _gradcheck_modules(args.seed, args.samples)
        results.update({k: float(v) for k, v in mods.items() if args.scope in ("all", k)})
    if args.scope in ("all", "model"):
        model = build_model(_model_config(args), args.seed)
        data = make_toy_dataset(ToyDatasetConfig(n_items=1, n_val=0), args.seed)
        results["model"] = float(grad_check(model, data.train, args.samples, seed=args.seed, h=MODEL_FD_STEP).max_rel_error)
    ok = all(results[k] <= tols[k] for k in results)
    if args.json:
        json.dump({k: {"max_rel_error": v, "tol": tols[k], "ok": v <= tols[k]} for k, v in results.items()}, out)
        out.write("\n")
    else:
        for k, v in results.items():
            out.write(f"{k:<8} max rel error {v:.3e}  tol {tols[k]:.0e}  {'PASS' if v <= tols[k] else 'FAIL'}\n")
    return 0 if ok else 1


def cmd_train_toy(args, out) -> int:
    from .training import ToyDatasetConfig, make_toy_dataset, train_toy

    cfg = _model_config(args)
    data = make_toy_dataset(ToyDatasetConfig(n_items=args.items, n_val=args.val_items, snr_db=args.snr_db),
                            args.seed)
    model = build_model(cfg, args.seed)
    log = (lambda s: print(s, file=sys.stderr))
    history = train_toy(model, data, args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed,
                        checkpoint=args.checkpoint, log=log)
    text = history.to_csv()
    if args.csv:
        args.csv.write_text(text)
    else:
        out.write(text)
    print(f"held-out SI-SNR improvement: {history.final_improvement_db:.2f} dB", file=sys.stderr)
    return 0


COMMANDS = {"bench": cmd_bench, "enhance": cmd_enhance, "params": cmd_params,
            "gradcheck": cmd_gradcheck, "train-toy": cmd_train_toy}


def main(argv=None, out=None) -> int:
    args = build_parser().parse_args(argv)
    out = out or sys.stdout
    try:
        with deterministic(args.deterministic):
            return COMMANDS[args.command](args, out)
    except (ImseError, OSError, json.JSONDecodeError) as exc:
        print(f"imse {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
