#!/usr/bin/env python3
"""Dump the standard schedule curve families as CSV.

Covers the training-step decays at translation-scale parameters, the
decoding-step strategies (decay, increase, always/uniform baselines) over
128 steps, the accumulated-error curves, and the three joint-combination
grids. Output lands under --out (default runs/schedule_figures).
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sslab.cli import main as cli_main

TRAINING_STEP_SPECS = (
    '"lin_f": {"family": "linear", "k": -6.666666666666667e-06, "epsilon": 0.2, "b": 1.0},'
    ' "exp_f": {"family": "exponential", "k": 0.99999},'
    ' "sig_f": {"family": "sigmoid", "k": 20000}'
)

DECODING_STEP_SPECS = (
    '"lin_g": {"family": "linear", "k": -0.015625, "epsilon": 0.2, "b": 1.0},'
    ' "exp_g": {"family": "exponential", "k": 0.99},'
    ' "sig_g": {"family": "sigmoid", "k": 20},'
    ' "exp_g_increase": {"family": "exponential", "k": 0.99, "direction": "increase"},'
    ' "always": {"family": "always_sample"},'
    ' "uniform": {"family": "uniform", "uniform_p": 0.5}'
)

JOINT_SPECS = (
    '"product": {"method": "product", "f": {"family": "sigmoid", "k": 20000},'
    ' "g": {"family": "exponential", "k": 0.99}},'
    ' "arithmetic_mean": {"method": "arithmetic_mean", "f": {"family": "sigmoid", "k": 20000},'
    ' "g": {"family": "exponential", "k": 0.99}},'
    ' "composite": {"method": "composite", "f": {"family": "sigmoid", "k": 20000},'
    ' "g": {"family": "exponential", "k": 0.99}}'
)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/schedule_figures")
    args = ap.parse_args()
    out = Path(args.out)

    rc = cli_main([
        "schedule-dump",
        "--set", f"out_dir={out / 'training_steps'}",
        "--set", "dump_max_t=300001",
        "--set", "schedules={" + TRAINING_STEP_SPECS + "}",
    ])
    rc |= cli_main([
        "schedule-dump",
        "--set", f"out_dir={out / 'decoding_steps'}",
        "--set", "dump_max_t=129",
        "--set", "schedules={" + DECODING_STEP_SPECS + "}",
    ])
    rc |= cli_main([
        "schedule-dump",
        "--set", f"out_dir={out / 'joint'}",
        "--set", "dump_max_i=61",
        "--set", "dump_max_t=129",
        "--set", "schedules={" + JOINT_SPECS + "}",
    ])
    return rc


if __name__ == "__main__":
    sys.exit(main())
