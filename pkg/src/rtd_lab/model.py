"""Parameter store and the transformer encoder shared by generator and discriminator."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

NEG_INF = -1e9


@dataclass
class EncoderDims:
    vocab_size: int
    hidden_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = 128

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")


class ModelParams:
    """Ordered name -> Tensor mapping.

    Several roles may resolve to the same Tensor object (shared trunk); the
    manifest lists each stored tensor once under its registered name.
    """

    def __init__(self):
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(data, dtype=nx.get_dtype()), requires_grad=trainable)
        self.tensors[name] = t
        return t

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if t.requires_grad]

    def manifest(self) -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self.tensors.items()}

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self.tensors.items())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def _normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def init_embeddings(p: ModelParams, dims: EncoderDims, rng: np.random.Generator) -> None:
    H = dims.hidden_dim
    p.add("emb.tok", _normal(rng, (dims.vocab_size, H)))
    p.add("emb.pos", _normal(rng, (dims.max_seq_len, H)))
    p.add("emb.ln.g", np.ones(H))
    p.add("emb.ln.b", np.zeros(H))


def init_layer(p: ModelParams, prefix: str, dims: EncoderDims, rng: np.random.Generator) -> None:
    H, F = dims.hidden_dim, dims.ffn_dim
    for w in ("q", "k", "v", "o"):
        p.add(f"{prefix}.{w}.w", _normal(rng, (H, H)))
        p.add(f"{prefix}.{w}.b", np.zeros(H))
    p.add(f"{prefix}.ln1.g", np.ones(H))
    p.add(f"{prefix}.ln1.b", np.zeros(H))
    p.add(f"{prefix}.ff1.w", _normal(rng, (H, F)))
    p.add(f"{prefix}.ff1.b", np.zeros(F))
    p.add(f"{prefix}.ff2.w", _normal(rng, (F, H)))
    p.add(f"{prefix}.ff2.b", np.zeros(H))
    p.add(f"{prefix}.ln2.g", np.ones(H))
    p.add(f"{prefix}.ln2.b", np.zeros(H))


def init_trunk(p: ModelParams, prefix: str, n_layers: int, dims: EncoderDims, rng) -> None:
    for i in range(1, n_layers + 1):
        init_layer(p, f"{prefix}.L{i}", dims, rng)


def attention_bias(attention: np.ndarray) -> np.ndarray:
    """(B, T) bool keep-mask -> (B, 1, 1, T) additive bias."""
    return np.where(attention, 0.0, NEG_INF).astype(nx.get_dtype())[:, None, None, :]


def linear(p: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return x @ p[prefix + ".w"] + p[prefix + ".b"]


def embed(p: ModelParams, ids: np.ndarray, raw: Tensor | None = None) -> Tensor:
    """Token + position embeddings, layer-normed.

    ``raw`` replaces the token lookup with a precomputed (B, T, H) stream (used
    by the noise ablation, which perturbs token vectors directly).
    """
    T = ids.shape[1]
    tok = nx.embedding(p["emb.tok"], ids) if raw is None else raw
    pos = nx.embedding(p["emb.pos"], np.arange(T))
    return nx.layer_norm(tok + pos, p["emb.ln.g"], p["emb.ln.b"])


def encoder_layer(p: ModelParams, prefix: str, x: Tensor, bias: np.ndarray, n_heads: int) -> Tensor:
    """Post-LN transformer block: LN(x + MHA(x)) then LN(h + FFN(h))."""
    B, T, H = x.shape
    d = H // n_heads

    def heads(t: Tensor) -> Tensor:
        return nx.transpose(t.reshape(B, T, n_heads, d), (0, 2, 1, 3))

    q = heads(linear(p, prefix + ".q", x))
    k = heads(linear(p, prefix + ".k", x))
    v = heads(linear(p, prefix + ".v", x))
    ctx = nx.attention(q, k, v, bias)
    ctx = nx.transpose(ctx, (0, 2, 1, 3)).reshape(B, T, H)
    h = nx.layer_norm(x + linear(p, prefix + ".o", ctx), p[prefix + ".ln1.g"], p[prefix + ".ln1.b"])
    ff = linear(p, prefix + ".ff2", nx.gelu(linear(p, prefix + ".ff1", h)))
    return nx.layer_norm(h + ff, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"])
