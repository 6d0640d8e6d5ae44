"""RTD discriminator with optional section early exit."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .config import DiscConfig
from .model import EncoderDims, ModelParams, attention_bias, embed, encoder_layer, init_trunk
from .numerics import Tensor


def section_ends(n_layers: int, n_sections: int) -> list[int]:
    """Last layer (1-based) of each section, e.g. 12 layers / 4 -> [3, 6, 9, 12]."""
    return [round((s + 1) * n_layers / n_sections) for s in range(n_sections)]


def head_name(section: int) -> str:
    return f"disc.head{section}"


def init_discriminator(p: ModelParams, cfg: DiscConfig, dims: EncoderDims, rng, trunk: str = "disc") -> None:
    """Trunk plus RTD heads. Without early exit only the top-section head exists."""
    cfg.validate()
    H = dims.hidden_dim
    if trunk not in {n.split(".")[0] for n in p.names()}:
        init_trunk(p, trunk, cfg.n_layers, dims, rng)
    sections = range(1, cfg.n_sections + 1) if cfg.early_exit else [cfg.n_sections]
    for s in sections:
        pre = head_name(s)
        p.add(f"{pre}.w", rng.normal(0.0, 0.02, size=(H, 1)))


def rtd_head(p: ModelParams, section: int, h: Tensor) -> Tensor:
    """(B, T, H) -> (B, T) logits w.h; D = sigmoid(logit)."""
    out = h @ p[head_name(section) + ".w"]
    return out.reshape(out.shape[:-1])


def rtd_forward(
    p: ModelParams,
    cfg: DiscConfig,
    ids: np.ndarray,
    attention: np.ndarray,
    n_heads: int,
    trunk: str = "disc",
    upto_section: int | None = None,
    raw_embeddings: Tensor | None = None,
) -> Tensor:
    """Per-position logits from the head of ``upto_section`` (top section when absent)."""
    section = cfg.n_sections if upto_section is None else upto_section
    last = section_ends(cfg.n_layers, cfg.n_sections)[section - 1]
    bias = attention_bias(attention)
    x = embed(p, ids, raw_embeddings)
    for i in range(1, last + 1):
        x = encoder_layer(p, f"{trunk}.L{i}", x, bias, n_heads)
    return rtd_head(p, section, x)


def rtd_forward_sections(
    p: ModelParams,
    cfg: DiscConfig,
    ids: np.ndarray,
    attention: np.ndarray,
    n_heads: int,
    active: int,
    trunk: str = "disc",
    raw_embeddings: Tensor | None = None,
) -> dict[int, Tensor]:
    """Logits from every section head for the early-exit variant.

    Layers up to the end of the ``active`` section are recorded for backward;
    deeper layers run without the tape, so their heads see detached features
    and the trunk above the exit receives no RTD gradient.
    """
    ends = section_ends(cfg.n_layers, cfg.n_sections)
    bias = attention_bias(attention)
    x = embed(p, ids, raw_embeddings)
    out: dict[int, Tensor] = {}
    layer = 0
    for s, end in enumerate(ends, start=1):
        if s <= active:
            for i in range(layer + 1, end + 1):
                x = encoder_layer(p, f"{trunk}.L{i}", x, bias, n_heads)
        else:
            with nx.no_grad():
                for i in range(layer + 1, end + 1):
                    x = encoder_layer(p, f"{trunk}.L{i}", x, bias, n_heads)
            x = nx.detach(x)
        layer = end
        out[s] = rtd_head(p, s, x)
    return out


def rtd_loss(logits: Tensor, labels: np.ndarray, content: np.ndarray) -> Tensor:
    """Mean BCE over content positions; logits are clipped at +-30."""
    if not np.asarray(content).any():
        raise ValueError("rtd_loss: no content positions")
    return nx.bce_with_logits(logits, labels, weight=np.asarray(content, dtype=logits.data.dtype))


def rtd_correct(logits, labels: np.ndarray, content: np.ndarray) -> tuple[int, int]:
    """(correct, total) over content positions; prediction is round(sigmoid(logit))."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    pred = z > 0
    ok = (pred == (labels > 0.5)) & content
    return int(ok.sum()), int(content.sum())


@dataclass(frozen=True)
class SectionState:
    ends: tuple[int, ...]
    threshold: float | None = None
    active: int = 0
    accuracies: tuple[float, ...] = ()
    history: tuple = field(default=(), compare=False)

    @classmethod
    def initial(cls, n_layers: int, n_sections: int) -> "SectionState":
        # no measurements yet: run the full depth
        return cls(ends=tuple(section_ends(n_layers, n_sections)), active=n_sections)

    @property
    def n_sections(self) -> int:
        return len(self.ends)


def choose_section(accs) -> tuple[float, int]:
    """threshold = mean(accs); active = first section strictly above it, else the last."""
    accs = [float(a) for a in accs]
    threshold = sum(accs) / len(accs)
    for s, a in enumerate(accs, start=1):
        if a > threshold:
            return threshold, s
    return threshold, len(accs)


def update_section_exit(state: SectionState, window_accuracies) -> SectionState:
    """Window-boundary update. A window with any unmeasured section keeps the old state."""
    accs = list(window_accuracies)
    if len(accs) != state.n_sections or any(a is None or not np.isfinite(a) for a in accs):
        return state
    threshold, active = choose_section(accs)
    return replace(
        state,
        threshold=threshold,
        active=active,
        accuracies=tuple(accs),
        history=state.history + ((threshold, active),),
    )
