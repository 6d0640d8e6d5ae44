"""Multi-exit MLM generator.

The trunk records a hidden-state snapshot at every exit layer. Exit head ``j``
reads the concatenation of the snapshots of exits ``1..j`` (or only snapshot
``j`` when concatenation is off), projects it back to ``hidden_dim`` and scores
the vocabulary with the tied token-embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import GeneratorConfig
from .masking import IGNORE, MaskedBatch
from .model import EncoderDims, ModelParams, attention_bias, embed, encoder_layer, init_trunk
from .numerics import Tensor


def init_generator(p: ModelParams, cfg: GeneratorConfig, dims: EncoderDims, rng, trunk: str = "gen") -> None:
    """Register trunk layers under ``trunk`` and one head per exit under ``gen.exit{layer}``."""
    cfg.validate()
    H = dims.hidden_dim
    if trunk not in {n.split(".")[0] for n in p.names()}:
        init_trunk(p, trunk, cfg.n_layers, dims, rng)
    for j, layer in enumerate(cfg.exit_layers):
        width = (j + 1) * H if cfg.concat_exit_heads else H
        pre = f"gen.exit{layer}"
        p.add(f"{pre}.proj.w", rng.normal(0.0, 0.02, size=(width, H)))
        p.add(f"{pre}.proj.b", np.zeros(H))
        p.add(f"{pre}.ln.g", np.ones(H))
        p.add(f"{pre}.ln.b", np.zeros(H))
        p.add(f"{pre}.out_bias", np.zeros(dims.vocab_size))


def generator_forward(
    p: ModelParams,
    cfg: GeneratorConfig,
    input_ids: np.ndarray,
    attention: np.ndarray,
    n_heads: int,
    trunk: str = "gen",
    upto_layer: int | None = None,
) -> dict[int, Tensor]:
    """Run the trunk and return ``{exit_layer: (B, T, H) hidden state}``.

    ``upto_layer`` stops the trunk early (throughput mode); only exits at or
    below it are returned.
    """
    last = cfg.n_layers if upto_layer is None else upto_layer
    bias = attention_bias(attention)
    x = embed(p, input_ids)
    snaps: dict[int, Tensor] = {}
    exits = set(cfg.exit_layers)
    for i in range(1, last + 1):
        x = encoder_layer(p, f"{trunk}.L{i}", x, bias, n_heads)
        if i in exits:
            snaps[i] = x
    return snaps


class _RowCache:
    """Selected-position rows of each snapshot, gathered once per forward."""

    def __init__(self, snapshots: dict[int, Tensor], rows: np.ndarray):
        self.snapshots = snapshots
        self.rows = rows
        self._cache: dict[int, Tensor] = {}

    def __getitem__(self, layer: int) -> Tensor:
        if layer not in self._cache:
            s = self.snapshots[layer]
            self._cache[layer] = nx.take_rows(s.reshape(-1, s.shape[-1]), self.rows)
        return self._cache[layer]


def exit_head_input_width(cfg: GeneratorConfig, exit_index: int, hidden_dim: int) -> int:
    return (exit_index + 1) * hidden_dim if cfg.concat_exit_heads else hidden_dim


def exit_head_logits(
    p: ModelParams,
    cfg: GeneratorConfig,
    exit_index: int,
    snapshots,
    rows: np.ndarray | None = None,
) -> Tensor:
    """Vocabulary logits ``(n_rows, V)`` from exit ``exit_index`` (0-based).

    ``snapshots`` is either the dict from :func:`generator_forward` (then
    ``rows`` selects flat positions) or a row cache shared across exits.
    """
    if not 0 <= exit_index < len(cfg.exit_layers):
        raise IndexError(f"exit index {exit_index} out of range for {len(cfg.exit_layers)} exits")
    cache = snapshots if isinstance(snapshots, _RowCache) else _RowCache(snapshots, rows)
    layers = cfg.exit_layers[: exit_index + 1] if cfg.concat_exit_heads else [cfg.exit_layers[exit_index]]
    feats = [cache[layer] for layer in layers]
    x = feats[0] if len(feats) == 1 else nx.concat(feats, axis=-1)
    pre = f"gen.exit{cfg.exit_layers[exit_index]}"
    h = nx.gelu(x @ p[pre + ".proj.w"] + p[pre + ".proj.b"])
    h = nx.layer_norm(h, p[pre + ".ln.g"], p[pre + ".ln.b"])
    return h @ nx.transpose(p["emb.tok"]) + p[pre + ".out_bias"]


def row_cache(snapshots: dict[int, Tensor], rows: np.ndarray) -> _RowCache:
    return _RowCache(snapshots, rows)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    # U must lie strictly inside (0, 1)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return -np.log(-np.log(u))


def gumbel_sample(logits, rng: np.random.Generator, noise: np.ndarray | None = None) -> np.ndarray:
    """argmax(logits + g) with g ~ Gumbel(0, 1); pass ``noise`` to override g."""
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise nx.NonFiniteError("gumbel_sample")
    g = gumbel_noise(z.shape, rng) if noise is None else np.broadcast_to(noise, z.shape)
    return np.argmax(z + g, axis=-1)


def mlm_loss(exit_logits: list[Tensor], labels: np.ndarray, weights) -> Tensor:
    """Sum over exits of normalized weight times cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    valid = labels != IGNORE
    if not valid.any():
        raise ValueError("mlm_loss: every label is the ignore sentinel")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(exit_logits):
        raise ValueError(f"mlm_loss: {len(exit_logits)} exits but {len(w)} weights")
    w = w / w.sum()
    idx = np.flatnonzero(valid)
    total = None
    for wj, logits in zip(w, exit_logits):
        if wj == 0:
            continue
        if not valid.all():
            logits = nx.take_rows(logits, idx)
        term = nx.cross_entropy(logits, labels[idx]) * float(wj)
        total = term if total is None else total + term
    return total


def build_discriminator_input(masked: MaskedBatch, sampled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Put sampled ids at the selected positions.

    Returns ``(corrupted_ids, rtd_labels)`` where the label is 1 (replaced)
    only where the sample differs from the original token.
    """
    sampled = np.asarray(sampled, dtype=np.int64).reshape(-1)
    flat = masked.selected_flat
    if sampled.shape[0] != flat.shape[0]:
        raise ValueError(f"{sampled.shape[0]} samples for {flat.shape[0]} selected positions")
    corrupted = masked.source_ids.copy().reshape(-1)
    corrupted[flat] = sampled
    labels = np.zeros(corrupted.shape, dtype=np.float32)
    labels[flat] = (sampled != masked.original_ids).astype(np.float32)
    return corrupted.reshape(masked.source_ids.shape), labels.reshape(masked.source_ids.shape)


@dataclass
class ExitOutput:
    logits: dict[int, Tensor]  # exit layer -> (n_selected, V)
    sampled: dict[int, np.ndarray]  # exit layer -> (n_selected,)
    losses: dict[int, float]
