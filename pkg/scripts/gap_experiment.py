#!/usr/bin/env python3
"""Train a teacher-forcing baseline on the noisy-map task and measure how
training-side and inference-side precision behave across decoding steps.

Prints Spearman rank correlations (precision vs decoding step) at several
checkpoints, then writes the final curves as CSV.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from sslab.cli import _teacher_forced_predictions
from sslab.data import TaskKind, batch_stream, gen_task
from sslab.decode import DecodeConfig
from sslab.metrics import decode_corpus, fuzzy_precision_per_step, strict_precision_per_step, write_curve_csv
from sslab.model import ModelConfig, init_params
from sslab.rng import named_rng
from sslab.sampler import OptimizerConfig, SamplerConfig, SamplingMode, train
from sslab.schedules import Family, ScheduleSpec


def spearman(xs, ys):
    xr = np.argsort(np.argsort(xs)).astype(float)
    yr = np.argsort(np.argsort(ys)).astype(float)
    xr -= xr.mean()
    yr -= yr.mean()
    return float((xr * yr).sum() / np.sqrt((xr * xr).sum() * (yr * yr).sum()))


def curve_points(curve, min_count):
    return zip(
        *[(s, v) for s, v, c in zip(curve.steps, curve.values, curve.counts) if c >= min_count]
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--measure-every", type=int, default=1000)
    ap.add_argument("--budget", type=int, default=2048)
    ap.add_argument("--eval-count", type=int, default=400)
    ap.add_argument("--min-count", type=int, default=30)
    ap.add_argument("--history-weight", type=int, default=1)
    ap.add_argument("--out", default="runs/gap_experiment")
    args = ap.parse_args()

    cfg = ModelConfig(
        vocab_size=50, hidden_size=64, filter_size=128, num_heads=4,
        num_encoder_layers=2, num_decoder_layers=2, dropout=0.1,
        label_smoothing=0.1, max_positions=80,
    )
    train_corpus = gen_task(
        TaskKind.NOISY_MAP, 50, 20, 60, 20000,
        seed=args.seed * 7 + 1, noise=0.1, history_weight=args.history_weight,
    )
    # measurement references come from the training distribution (noise on)
    eval_corpus = gen_task(
        TaskKind.NOISY_MAP, 50, 20, 60, args.eval_count,
        seed=args.seed * 7 + 2, noise=0.1, history_weight=args.history_weight,
    )
    refs = [tgt for _, tgt in eval_corpus.pairs]
    params = init_params(cfg, named_rng(args.seed, "init"))
    teacher = SamplerConfig(
        mode=SamplingMode.DECODING_STEPS,
        schedule=ScheduleSpec(Family.UNIFORM, uniform_p=1.0),
        warm_start_steps=10**9,
    )
    batches = batch_stream(train_corpus, args.budget, seed=args.seed + 100)
    dcfg = DecodeConfig(beam_size=1, length_penalty=0.6, max_length=70)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = 0
    t0 = time.time()
    while done < args.steps:
        chunk = min(args.measure_every, args.steps - done)
        rows = train(
            params, cfg, teacher, batches, OptimizerConfig(warmup_steps=400),
            total_steps=chunk, root_seed=args.seed, start_step=done,
        )
        done += chunk
        loss = np.mean([r["loss"] for r in rows[-50:]])

        train_preds = _teacher_forced_predictions(params, cfg, eval_corpus)
        train_curve = strict_precision_per_step(train_preds, refs)
        hyps = decode_corpus(params, cfg, eval_corpus, dcfg)
        infer_curve = fuzzy_precision_per_step(hyps, refs, window=3)

        ts, tv = curve_points(train_curve, args.min_count)
        is_, iv = curve_points(infer_curve, args.min_count)
        rho_train = spearman(ts, tv)
        rho_infer = spearman(is_, iv)
        print(
            f"step {done:5d} loss {loss:.3f} "
            f"train prec mean {np.mean(tv):.3f} rho {rho_train:+.3f} | "
            f"infer prec mean {np.mean(iv):.3f} rho {rho_infer:+.3f} "
            f"head {np.mean(iv[:5]):.3f} tail {np.mean(iv[-5:]):.3f} "
            f"[{time.time() - t0:.0f}s]",
            flush=True,
        )
        write_curve_csv(out / f"training_precision_{done}.csv", train_curve)
        write_curve_csv(out / f"inference_precision_{done}.csv", infer_curve)


if __name__ == "__main__":
    main()
