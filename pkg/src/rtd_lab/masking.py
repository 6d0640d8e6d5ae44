"""MLM position selection and corruption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CLS_ID, MASK_ID, PAD_ID, SEP_ID, Batch

IGNORE = -100

ELECTRA_RATIOS = {"mask": 0.85, "random": 0.0, "original": 0.15}
BERT_RATIOS = {"mask": 0.80, "random": 0.10, "original": 0.10}

# outcome codes stored per selected position
KEPT_MASK, KEPT_RANDOM, KEPT_ORIGINAL = 0, 1, 2


class MaskingError(ValueError):
    pass


@dataclass
class MaskedBatch:
    source_ids: np.ndarray  # (B, L) ids before corruption
    input_ids: np.ndarray  # (B, L) ids after corruption
    selected: np.ndarray  # (B, L) bool
    original_ids: np.ndarray  # (n_selected,) source ids at selected positions, row-major
    mlm_labels: np.ndarray  # (B, L) original id at selected positions, IGNORE elsewhere
    content: np.ndarray  # (B, L) bool, positions that are neither special nor pad
    attention: np.ndarray  # (B, L) bool, non-pad positions
    outcome: np.ndarray  # (n_selected,) KEPT_* code per selected position

    @property
    def selected_flat(self) -> np.ndarray:
        """Flat (row-major) indices of selected positions."""
        return np.flatnonzero(self.selected)

    @property
    def selected_positions(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.selected]

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())


def n_to_select(n_content: int, fraction: float) -> int:
    """round-half-up(fraction * n), at least one, at most n."""
    k = int(np.floor(fraction * n_content + 0.5 + 1e-9))
    return min(max(k, 1), n_content)


def _check_ratios(ratios: dict) -> tuple[float, float, float]:
    m, r, o = float(ratios.get("mask", 0)), float(ratios.get("random", 0)), float(ratios.get("original", 0))
    if min(m, r, o) < 0 or abs(m + r + o - 1.0) > 1e-6:
        raise MaskingError(f"mask ratios must be non-negative and sum to 1, got {ratios}")
    return m, r, o


def apply_mlm_mask(
    batch: Batch,
    rng: np.random.Generator,
    ratios: dict = ELECTRA_RATIOS,
    mask_fraction: float = 0.15,
    vocab_size: int | None = None,
    n_reserved: int = 5,
) -> MaskedBatch:
    m, r, _ = _check_ratios(ratios)
    if r > 0 and vocab_size is None:
        raise MaskingError("random replacement needs vocab_size")
    ids = batch.ids
    attention = ids != PAD_ID
    attention &= np.arange(ids.shape[1])[None, :] < batch.lengths[:, None]
    content = attention & (ids != CLS_ID) & (ids != SEP_ID)

    selected = np.zeros_like(content)
    for b in range(ids.shape[0]):
        pos = np.flatnonzero(content[b])
        if pos.size == 0:
            raise MaskingError(f"sequence {b} has no content tokens")
        k = n_to_select(pos.size, mask_fraction)
        selected[b, rng.choice(pos, size=k, replace=False)] = True

    flat = np.flatnonzero(selected)
    original = ids.reshape(-1)[flat].copy()
    u = rng.random(flat.size)
    outcome = np.where(u < m, KEPT_MASK, np.where(u < m + r, KEPT_RANDOM, KEPT_ORIGINAL))

    new = ids.copy().reshape(-1)
    new[flat[outcome == KEPT_MASK]] = MASK_ID
    n_random = int((outcome == KEPT_RANDOM).sum())
    if n_random:
        new[flat[outcome == KEPT_RANDOM]] = rng.integers(n_reserved, vocab_size, size=n_random)

    labels = np.full(ids.shape, IGNORE, dtype=np.int64)
    labels.reshape(-1)[flat] = original
    return MaskedBatch(
        source_ids=ids,
        input_ids=new.reshape(ids.shape),
        selected=selected,
        original_ids=original,
        mlm_labels=labels,
        content=content,
        attention=attention,
        outcome=outcome,
    )
