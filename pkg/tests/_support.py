"""Small shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from rtd_lab import data, synthetic
from rtd_lab.config import RunConfig
from rtd_lab.data import CLS_ID, PAD_ID, SEP_ID, Batch


def make_batch(lengths, seq_len, vocab_size=100, rng=None, n_reserved=5):
    """[CLS] content [SEP] rows padded to ``seq_len``; ``lengths`` count the specials."""
    rng = rng or np.random.default_rng(0)
    B = len(lengths)
    ids = np.full((B, seq_len), PAD_ID, dtype=np.int64)
    for b, n in enumerate(lengths):
        ids[b, 0] = CLS_ID
        ids[b, 1 : n - 1] = rng.integers(n_reserved, vocab_size, size=n - 2)
        ids[b, n - 1] = SEP_ID
    return Batch(ids, np.asarray(lengths, dtype=np.int64), np.arange(B))


def tiny_config(variant="baseline", **over) -> RunConfig:
    """Two-layer, hidden-32 configuration that trains at tens of steps per second."""
    cfg = RunConfig()
    cfg.train.variant = variant
    cfg.model.hidden_dim = 32
    cfg.model.n_heads = 2
    cfg.model.ffn_dim = 64
    cfg.gen.n_layers = 2
    cfg.gen.exit_layers = [1, 2]
    cfg.gen.exit_loss_weights = [1.0, 2.0]
    cfg.ctrl.initial_p = [0.4, 0.6]
    cfg.ctrl.reassignment_scores = [0.0, 1.0]
    cfg.disc.n_layers = 2
    cfg.disc.n_sections = 2
    cfg.train.batch_size = 8
    cfg.train.warmup_steps = 20
    cfg.train.steps = 400
    cfg.ctrl.window = 20
    for k, v in over.items():
        section, name = k.split("__")
        setattr(getattr(cfg, section), name, v)
    return cfg


def smoke_store(tmp_dir, n_lines=50, seq_len=32, seed=0):
    path = synthetic.write_corpus(tmp_dir / "smoke.txt", n_lines=n_lines, seed=seed)
    return data.build_store(path, tmp_dir, vocab_size=8192, max_seq_len=seq_len)
