#!/usr/bin/env python3
"""Compare scheduled-sampling strategies on the noisy-map task.

One teacher-forcing warm start per seed is shared by every strategy; each
strategy then fine-tunes from that snapshot and reports held-out token
accuracy under greedy decoding. Prints a per-seed table plus seed means.
"""

import argparse
import copy
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from sslab.data import TaskKind, batch_stream, gen_task
from sslab.decode import DecodeConfig
from sslab.metrics import decode_corpus, token_accuracy
from sslab.model import ModelConfig, init_params
from sslab.rng import named_rng
from sslab.sampler import OptimizerConfig, SamplerConfig, SamplingMode, train
from sslab.schedules import Direction, Family, JointMethod, JointSpec, ScheduleSpec


def build_strategies(max_t: int, ft_steps: int) -> dict[str, SamplerConfig]:
    """Schedule parameters scaled from the translation settings by horizon.

    The translation setup decays g over 128 decoding steps (exponential
    0.99, linear -1/64, sigmoid 20) and f over 300k training steps; the
    same fractional shapes are reproduced over max_t and ft_steps.
    """
    exp_k = float(0.99 ** (128.0 / max_t))
    lin_k = -1.0 / (max_t / 2.0)
    sig_k = 1.0
    while sig_k * np.log(max(sig_k, 1.0001)) < 0.47 * max_t:
        sig_k += 0.5
    f_sig_k = 1.0
    while f_sig_k * np.log(max(f_sig_k, 1.0001)) < 0.47 * ft_steps:
        f_sig_k += 1.0

    def dec(fam, **kw):
        return ScheduleSpec(fam, Direction.DECAY, **kw)

    def inc(fam, **kw):
        return ScheduleSpec(fam, Direction.INCREASE, **kw)

    g_exp = dec(Family.EXPONENTIAL, k=exp_k)
    f_sig = dec(Family.SIGMOID, k=f_sig_k)

    def ds(spec, **kw):
        return SamplerConfig(mode=SamplingMode.DECODING_STEPS, schedule=spec, **kw)

    strategies = {
        "always_sample": ds(dec(Family.ALWAYS_SAMPLE)),
        "uniform": ds(dec(Family.UNIFORM, uniform_p=0.5)),
        "linear_decay": ds(dec(Family.LINEAR, k=lin_k, epsilon=0.2, b=1.0)),
        "linear_increase": ds(inc(Family.LINEAR, k=lin_k, epsilon=0.2, b=1.0)),
        "exponential_decay": ds(g_exp),
        "exponential_increase": ds(inc(Family.EXPONENTIAL, k=exp_k)),
        "sigmoid_decay": ds(dec(Family.SIGMOID, k=sig_k)),
        "sigmoid_increase": ds(inc(Family.SIGMOID, k=sig_k)),
        "joint_product": SamplerConfig(
            mode=SamplingMode.JOINT, joint=JointSpec(JointMethod.PRODUCT, f_sig, g_exp)
        ),
        "joint_arithmetic_mean": SamplerConfig(
            mode=SamplingMode.JOINT, joint=JointSpec(JointMethod.ARITHMETIC_MEAN, f_sig, g_exp)
        ),
        "joint_composite": SamplerConfig(
            mode=SamplingMode.JOINT, joint=JointSpec(JointMethod.COMPOSITE, f_sig, g_exp)
        ),
    }
    return strategies


def run_grid(
    seeds,
    min_len=16,
    max_len=40,
    pairs=8000,
    eval_count=300,
    warm_steps=400,
    ft_steps=700,
    budget=1024,
    vocab=50,
    noise=0.1,
    history_weight=1,
    hidden=64,
    layers=2,
    strategy_filter=None,
):
    cfg = ModelConfig(
        vocab_size=vocab, hidden_size=hidden, filter_size=2 * hidden, num_heads=4,
        num_encoder_layers=layers, num_decoder_layers=layers, dropout=0.1,
        label_smoothing=0.1, max_positions=max_len + 8,
    )
    dcfg = DecodeConfig(beam_size=1, length_penalty=0.6, max_length=max_len + 6)
    strategies = build_strategies(max_len, ft_steps)
    if strategy_filter:
        strategies = {k: v for k, v in strategies.items() if k in strategy_filter}
    results: dict[str, dict[int, float]] = {name: {} for name in strategies}

    for seed in seeds:
        train_corpus = gen_task(
            TaskKind.NOISY_MAP, vocab, min_len, max_len, pairs,
            seed=seed * 31 + 1, noise=noise, history_weight=history_weight,
        )
        eval_corpus = gen_task(
            TaskKind.NOISY_MAP, vocab, min_len, max_len, eval_count,
            seed=seed * 31 + 2, noise=0.0, history_weight=history_weight,
        )
        refs = [t for _, t in eval_corpus.pairs]

        t0 = time.time()
        warm_params = init_params(cfg, named_rng(seed, "init"))
        teacher = SamplerConfig(
            mode=SamplingMode.DECODING_STEPS,
            schedule=ScheduleSpec(Family.UNIFORM, uniform_p=1.0),
            warm_start_steps=10**9,
        )
        train(
            warm_params, cfg, teacher, batch_stream(train_corpus, budget, seed=seed + 500),
            OptimizerConfig(warmup_steps=min(400, warm_steps)), total_steps=warm_steps,
            root_seed=seed,
        )
        warm_acc = token_accuracy(decode_corpus(warm_params, cfg, eval_corpus, dcfg), refs)
        print(f"seed {seed} warm start ({warm_steps} steps): acc {warm_acc:.4f} "
              f"[{time.time() - t0:.0f}s]", flush=True)

        snapshot = {k: v.data.copy() for k, v in warm_params.params.items()}
        for name, sampler in strategies.items():
            t1 = time.time()
            params = init_params(cfg, named_rng(seed, "init"))
            params.load_arrays(snapshot)
            tuned = copy.copy(sampler)
            tuned.warm_start_steps = warm_steps
            train(
                params, cfg, tuned,
                batch_stream(train_corpus, budget, seed=seed + 500 + hash(name) % 1000),
                OptimizerConfig(warmup_steps=min(400, warm_steps)),
                total_steps=ft_steps, root_seed=seed * 13 + 7, start_step=warm_steps,
            )
            acc = token_accuracy(decode_corpus(params, cfg, eval_corpus, dcfg), refs)
            results[name][seed] = acc
            print(f"seed {seed} {name:22s} acc {acc:.4f} [{time.time() - t1:.0f}s]", flush=True)
    return results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--warm-steps", type=int, default=400)
    ap.add_argument("--ft-steps", type=int, default=700)
    ap.add_argument("--pairs", type=int, default=8000)
    ap.add_argument("--min-len", type=int, default=16)
    ap.add_argument("--max-len", type=int, default=40)
    ap.add_argument("--budget", type=int, default=1024)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    results = run_grid(
        args.seeds, min_len=args.min_len, max_len=args.max_len, pairs=args.pairs,
        warm_steps=args.warm_steps, ft_steps=args.ft_steps, budget=args.budget,
    )
    print("\n=== seed means ===")
    means = {}
    for name, per_seed in results.items():
        means[name] = float(np.mean(list(per_seed.values())))
        print(f"{name:22s} {means[name]:.4f}  (per seed: "
              + " ".join(f"{per_seed[s]:.4f}" for s in sorted(per_seed)) + ")")

    checks = [
        ("exp_decay > uniform", means["exponential_decay"] > means["uniform"]),
        ("uniform > always_sample", means["uniform"] > means["always_sample"]),
        ("linear: decay > increase", means["linear_decay"] > means["linear_increase"]),
        ("exponential: decay > increase", means["exponential_decay"] > means["exponential_increase"]),
        ("sigmoid: decay > increase", means["sigmoid_decay"] > means["sigmoid_increase"]),
        ("composite >= product", means["joint_composite"] >= means["joint_product"]),
        ("composite >= arith_mean", means["joint_composite"] >= means["joint_arithmetic_mean"]),
    ]
    print("\n=== ordering checks ===")
    for label, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {label}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
