"""sslab: a desk-scale laboratory for scheduled sampling in seq2seq transformers.

Subpackages cover sampling-probability schedules, a minimal reverse-mode
tensor core, a post-norm encoder-decoder transformer, the two-pass
scheduled-sampling trainer, per-decoding-step error metrics, synthetic
tasks, and greedy/beam inference. Everything runs on CPU with numpy and
is deterministic given a root seed.
"""

__version__ = "0.1.0"
