"""Per-decoding-step precision measurement and a toy-scale corpus BLEU.

Training-side precision matches tokens strictly position by position.
Inference-side precision first truncates or pads the hypothesis to the
reference length (padding with the reserved null token, which never
matches) and then accepts a token if it occurs anywhere in a small
reference window around the same position. The per-step error rates
double as sampling priors for the empirical schedule family.

The BLEU here is a simplified corpus score for synthetic tasks; it is
not comparable to official evaluation scripts.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from math import exp, log
from typing import Sequence

import numpy as np

from .data import Corpus, NULL_ID, make_batch
from .decode import DecodeConfig, beam_decode, greedy_decode
from .model import ModelConfig, ModelParams

Tokens = Sequence[int]


class MetricsError(ValueError):
    """Inputs cannot be scored."""


@dataclass
class StepCurve:
    """A per-decoding-step series with the sample count behind each value."""

    steps: list[int]
    values: list[float]
    counts: list[int]

    def __post_init__(self):
        if not (len(self.steps) == len(self.values) == len(self.counts)):
            raise MetricsError("steps, values and counts must have equal lengths")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise MetricsError("steps must be strictly increasing")

    def value_at(self, step: int) -> float:
        return self.values[self.steps.index(step)]


def _check_pairs(hypotheses, references):
    if len(hypotheses) != len(references):
        raise MetricsError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not references:
        raise MetricsError("empty corpus")


def strict_precision_per_step(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> StepCurve:
    """Exact position-by-position match rate at each step."""
    _check_pairs(hypotheses, references)
    max_t = max(len(r) for r in references)
    steps, values, counts = [], [], []
    for t in range(max_t):
        hits = total = 0
        for hyp, ref in zip(hypotheses, references):
            if t >= len(ref):
                continue
            total += 1
            if t < len(hyp) and hyp[t] == ref[t]:
                hits += 1
        if total:
            steps.append(t)
            values.append(hits / total)
            counts.append(total)
    return StepCurve(steps, values, counts)


def _window_bounds(t: int, ref_len: int, window: int, trailing: bool) -> tuple[int, int]:
    if trailing:
        lo, hi = t - (window - 1), t
    else:
        half = (window - 1) // 2
        lo, hi = t - half, t + half
    return max(0, lo), min(ref_len - 1, hi)


def fuzzy_precision_per_step(
    hypotheses: Sequence[Tokens],
    references: Sequence[Tokens],
    window: int = 3,
    trailing: bool = False,
) -> StepCurve:
    """Windowed unigram match rate after truncating/padding to reference length.

    A hypothesis token at step t counts as correct when it occurs anywhere
    in the reference window centered on t (clipped at the boundaries);
    ``trailing`` switches the window to positions t-window+1 .. t. Null
    padding never matches, so window=1 reproduces the strict protocol.
    """
    if window < 1 or window % 2 == 0:
        raise MetricsError(f"window must be odd and >= 1, got {window}")
    _check_pairs(hypotheses, references)
    max_t = max(len(r) for r in references)
    steps, values, counts = [], [], []
    for t in range(max_t):
        hits = total = 0
        for hyp, ref in zip(hypotheses, references):
            if t >= len(ref):
                continue
            total += 1
            tok = hyp[t] if t < len(hyp) else NULL_ID
            if tok == NULL_ID:
                continue
            lo, hi = _window_bounds(t, len(ref), window, trailing)
            if tok in ref[lo : hi + 1]:
                hits += 1
        if total:
            steps.append(t)
            values.append(hits / total)
            counts.append(total)
    return StepCurve(steps, values, counts)


def accumulated_error_curve(
    hypotheses: Sequence[Tokens], references: Sequence[Tokens], window: int = 3
) -> StepCurve:
    """Running sum of the per-step mean error indicator (non-decreasing)."""
    prec = fuzzy_precision_per_step(hypotheses, references, window)
    running = 0.0
    values = []
    for v in prec.values:
        running += 1.0 - v
        values.append(running)
    return StepCurve(prec.steps, values, prec.counts)


def token_accuracy(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Micro-averaged strict match over all reference positions."""
    _check_pairs(hypotheses, references)
    hits = total = 0
    for hyp, ref in zip(hypotheses, references):
        total += len(ref)
        hits += sum(1 for t, r in enumerate(ref) if t < len(hyp) and hyp[t] == r)
    return hits / total


def decode_corpus(
    params: ModelParams,
    config: ModelConfig,
    corpus: Corpus,
    decode_cfg: DecodeConfig,
    batch_rows: int = 64,
) -> list[list[int]]:
    """Decode every source in order; greedy unless a wider beam is configured."""
    hyps: list[list[int]] = []
    for lo in range(0, len(corpus.pairs), batch_rows):
        chunk = corpus.pairs[lo : lo + batch_rows]
        batch = make_batch(chunk)
        if decode_cfg.beam_size == 1:
            hyps.extend(greedy_decode(params, config, batch.source, batch.source_mask, decode_cfg))
        else:
            results = beam_decode(params, config, batch.source, batch.source_mask, decode_cfg)
            hyps.extend(r.tokens for r in results)
    return hyps


def empirical_error_table(
    params: ModelParams,
    config: ModelConfig,
    corpus: Corpus,
    decode_cfg: DecodeConfig,
    max_t: int,
    window: int = 3,
) -> tuple[list[float], list[int]]:
    """Measured per-step error rates, sized for use as Empirical priors.

    Decodes the corpus, applies fuzzy matching, and returns one error rate
    per step in [0, max_t) plus the sample count behind it. Steps with no
    samples are linearly interpolated from their neighbours (edges extend).
    """
    hyps = decode_corpus(params, config, corpus, decode_cfg)
    refs = [tgt for _, tgt in corpus.pairs]
    prec = fuzzy_precision_per_step(hyps, refs, window)
    rates = np.full(max_t, np.nan)
    counts = np.zeros(max_t, dtype=int)
    for step, value, count in zip(prec.steps, prec.values, prec.counts):
        if step < max_t:
            rates[step] = 1.0 - value
            counts[step] = count
    known = np.flatnonzero(~np.isnan(rates))
    if known.size == 0:
        raise MetricsError(f"no decoding steps below max_t={max_t} were observed")
    rates = np.interp(np.arange(max_t), known, rates[known])
    return rates.tolist(), counts.tolist()


def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu_lite(
    hypotheses: Sequence[Tokens], references: Sequence[Tokens], max_n: int = 4
) -> float:
    """Geometric mean of clipped n-gram precisions with brevity penalty.

    Zero-count precisions for n >= 2 get add-one smoothing (short toy
    corpora would otherwise collapse to zero); a zero unigram precision
    keeps the score at 0. Not comparable to official BLEU scripts.
    """
    _check_pairs(hypotheses, references)
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        warnings.warn("empty hypothesis corpus scores 0", stacklevel=2)
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        clipped = total = 0
        for hyp, ref in zip(hypotheses, references):
            counts = _ngram_counts(hyp, n)
            if not counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            total += sum(counts.values())
            clipped += sum(min(c, ref_counts[g]) for g, c in counts.items())
        if n >= 2 and clipped == 0:
            precision = 1.0 / (total + 1.0)
        elif clipped == 0 or total == 0:
            return 0.0
        else:
            precision = clipped / total
        log_sum += log(precision) / max_n
    brevity = 1.0 if hyp_len >= ref_len else exp(1.0 - ref_len / hyp_len)
    return brevity * exp(log_sum)


def write_curve_csv(path, curve: StepCurve) -> None:
    """CSV with the step/value/count schema shared by all curve outputs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,value,count\n")
        for s, v, c in zip(curve.steps, curve.values, curve.counts):
            fh.write(f"{s},{v!r},{c}\n")
