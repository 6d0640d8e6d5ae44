"""Generator replacement in embedding space.

``topk`` swaps each selected token for one of its k nearest vocabulary entries
(L2 distance on the current embedding table); ``noise`` leaves the ids alone and
adds Gaussian noise to the selected token vectors instead.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .masking import MaskedBatch
from .numerics import Tensor


class ReplacementError(ValueError):
    pass


def pairwise_sq_dists(queries: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Squared L2 distances, (n, d) x (V, d) -> (n, V), in float64."""
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(table, dtype=np.float64)
    d = (q * q).sum(1)[:, None] - 2.0 * q @ t.T + (t * t).sum(1)[None, :]
    return np.maximum(d, 0.0)


def nearest_candidates(embeddings: np.ndarray, token_ids: np.ndarray, k: int, n_reserved: int) -> np.ndarray:
    """(n, k) ids of the k nearest non-reserved tokens to each token, itself excluded.

    Equal distances are broken by the smaller token id.
    """
    V = embeddings.shape[0]
    if V - n_reserved <= k:
        raise ReplacementError(f"k={k} needs more than {k} non-reserved tokens, vocab has {V - n_reserved}")
    token_ids = np.asarray(token_ids, dtype=np.int64)
    d = pairwise_sq_dists(embeddings[token_ids], embeddings)
    d[:, :n_reserved] = np.inf
    d[np.arange(token_ids.size), token_ids] = np.inf
    out = np.argpartition(d, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(d, out, 1).max(axis=1)
    # argpartition is not tie-aware: redo rows where the k-th distance is shared
    crowded = np.flatnonzero((d <= kth[:, None]).sum(axis=1) > k)
    for i in crowded:
        out[i] = np.argsort(d[i], kind="stable")[:k]
    return np.sort(out, axis=1)


def topk_replace(
    masked: MaskedBatch,
    embeddings: np.ndarray,
    k: int,
    rng: np.random.Generator,
    n_reserved: int = 5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Replace each selected token with a uniform pick among its k nearest neighbours.

    Returns ``(corrupted_ids, rtd_labels, replacement_ids)``. Every selected
    position is labeled replaced, so the replaced fraction equals the mask
    fraction on every batch.
    """
    cands = nearest_candidates(embeddings, masked.original_ids, k, n_reserved)
    pick = rng.integers(0, k, size=cands.shape[0])
    repl = cands[np.arange(cands.shape[0]), pick]
    flat = masked.selected_flat
    corrupted = masked.source_ids.copy().reshape(-1)
    corrupted[flat] = repl
    labels = masked.selected.astype(np.float32)
    return corrupted.reshape(masked.source_ids.shape), labels, repl


def noise_replace(
    masked: MaskedBatch,
    embeddings: Tensor,
    sigma: float,
    rng: np.random.Generator,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Token-vector stream with N(0, sigma^2 I) noise added at selected positions.

    Returns ``(stream, rtd_labels, noise)``; ``stream`` is (B, T, H) and stays
    on the tape through the embedding lookup. Ids are not changed.
    """
    ids = masked.source_ids
    H = embeddings.shape[1]
    noise = np.zeros(ids.shape + (H,), dtype=embeddings.data.dtype)
    n_sel = masked.n_selected
    noise[masked.selected] = rng.normal(0.0, sigma, size=(n_sel, H))
    stream = nx.embedding(embeddings, ids) + Tensor(noise)
    return stream, masked.selected.astype(np.float32), noise


def aux_embedding_loss(original_ids, replacement_ids, embeddings: Tensor) -> Tensor:
    """Mean squared L2 distance between original and replacement embeddings."""
    original_ids = np.asarray(original_ids, dtype=np.int64)
    replacement_ids = np.asarray(replacement_ids, dtype=np.int64)
    if original_ids.size == 0:
        return Tensor(np.zeros(()))
    diff = nx.embedding(embeddings, original_ids) - nx.embedding(embeddings, replacement_ids)
    return nx.mean(nx.sum(diff * diff, axis=-1))
