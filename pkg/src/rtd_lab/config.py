"""Run configuration and the flat ``section.key = value`` file format.

Example file::

    # comments start with '#'
    train.steps = 2000
    gen.exit_layers = 1,2,3,4
    ctrl.alpha = 0.1
    mask_ratios = mask:0.85, random:0.0, original:0.15
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = ("baseline", "embgen", "embgen-pretrained", "early-exit-disc", "adaptive-gen")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 256


@dataclass
class DataConfig:
    store: str = ""
    seq_len: int = 128
    vocab_size: int = 8192


@dataclass
class MaskConfig:
    mask_fraction: float = 0.15
    mask_ratios: dict = field(default_factory=lambda: {"mask": 0.85, "random": 0.0, "original": 0.15})


@dataclass
class GeneratorConfig:
    n_layers: int = 4
    exit_layers: list = field(default_factory=lambda: [1, 2, 3, 4])
    exit_loss_weights: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    skip_above_exit: bool = False
    concat_exit_heads: bool = True
    # evaluate the discriminator on samples from every exit each step (instrumentation only)
    probe_exits: bool = False

    def validate(self) -> None:
        ex = list(self.exit_layers)
        if not ex or ex != sorted(set(ex)):
            raise ConfigError(f"gen.exit_layers must be strictly ascending, got {ex}")
        if ex[0] < 1 or ex[-1] != self.n_layers:
            raise ConfigError(f"gen.exit_layers must lie in 1..{self.n_layers} and end at {self.n_layers}")
        if len(self.exit_loss_weights) != len(ex):
            raise ConfigError("gen.exit_loss_weights needs one weight per exit layer")
        if any(w < 0 for w in self.exit_loss_weights) or sum(self.exit_loss_weights) <= 0:
            raise ConfigError("gen.exit_loss_weights must be non-negative with a positive sum")


@dataclass
class DiscConfig:
    n_layers: int = 4
    n_sections: int = 4
    early_exit: bool = False
    share_params_with_gen: bool = False

    def validate(self) -> None:
        if not 1 <= self.n_sections <= self.n_layers:
            raise ConfigError("disc.n_sections must be between 1 and disc.n_layers")


@dataclass
class ControllerConfig:
    alpha: float = 0.1
    initial_p: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    reassignment_scores: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    window: int = 100


@dataclass
class EmbGenConfig:
    mode: str = "topk"
    k: int = 10
    sigma: float = 1.0
    aux_coeff: float = 1.0
    frozen_embeddings_path: str = ""


@dataclass
class TrainConfig:
    variant: str = "baseline"
    steps: int = 2000
    batch_size: int = 32
    lam: float = 50.0
    lr: float = 5e-4
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0
    metrics_path: str = ""
    checkpoint_path: str = ""


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    ctrl: ControllerConfig = field(default_factory=ControllerConfig)
    embgen: EmbGenConfig = field(default_factory=EmbGenConfig)

    def validate(self) -> "RunConfig":
        if self.train.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.train.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.train.lam < 0:
            raise ConfigError("train.lam must be >= 0")
        if self.train.steps <= self.ctrl.window:
            raise ConfigError("train.steps must exceed ctrl.window")
        self.gen.validate()
        self.disc.validate()
        n_exits = len(self.gen.exit_layers)
        if len(self.ctrl.initial_p) != n_exits or len(self.ctrl.reassignment_scores) != n_exits:
            raise ConfigError("ctrl.initial_p and ctrl.reassignment_scores need one entry per exit layer")
        if self.embgen.mode not in ("topk", "noise"):
            raise ConfigError(f"embgen.mode must be topk or noise, got {self.embgen.mode!r}")
        if self.embgen.k < 1 or self.embgen.sigma <= 0 or self.embgen.aux_coeff < 0:
            raise ConfigError("embgen needs k >= 1, sigma > 0, aux_coeff >= 0")
        if self.disc.share_params_with_gen and self.disc.n_layers != self.gen.n_layers:
            raise ConfigError("shared parameters need gen.n_layers == disc.n_layers")
        return self

    def to_flat(self) -> dict[str, object]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                key = f.name if sec.name == "mask" else f"{sec.name}.{f.name}"
                out[key] = getattr(obj, f.name)
        return out


# aliases accepted in files and on the command line
_ALIASES = {"train.lambda": "train.lam", "ctrl.initial_P": "ctrl.initial_p"}


def all_keys() -> list[str]:
    return list(RunConfig().to_flat())


def _locate(cfg: RunConfig, key: str):
    key = _ALIASES.get(key, key)
    if "." not in key:
        if key in ("mask_fraction", "mask_ratios"):
            return cfg.mask, key
        raise ConfigError(f"unknown config key {key!r}")
    section, name = key.split(".", 1)
    obj = getattr(cfg, section, None)
    if obj is None or section == "mask" or not hasattr(obj, name):
        raise ConfigError(f"unknown config key {key!r}")
    return obj, name


def _parse_value(current, text: str):
    text = text.strip()
    if isinstance(current, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, dict):
        out = {}
        for part in text.strip("{}").split(","):
            if part.strip():
                k, _, v = part.replace("=", ":").partition(":")
                out[k.strip()] = float(v)
        return out
    if isinstance(current, list):
        items = [s.strip() for s in text.strip("[]()").split(",") if s.strip()]
        kind = type(current[0]) if current else float
        return [kind(float(s)) if kind is int else kind(s) for s in items]
    return text


def set_value(cfg: RunConfig, key: str, value) -> None:
    obj, name = _locate(cfg, key)
    current = getattr(obj, name)
    if isinstance(value, str):
        value = _parse_value(current, value)
    setattr(obj, name, value)


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        try:
            set_value(cfg, key.strip(), value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(encoding="utf-8"))
    for k, v in (overrides or {}).items():
        set_value(cfg, k, v)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_flat().items():
        if isinstance(value, dict):
            value = ", ".join(f"{k}:{v}" for k, v in value.items())
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def variant_defaults(cfg: RunConfig) -> RunConfig:
    """Apply the wiring each variant implies on top of user settings."""
    v = cfg.train.variant
    n = cfg.gen.n_layers
    if v in ("baseline", "early-exit-disc"):
        cfg.gen.exit_layers = [n]
        cfg.gen.exit_loss_weights = [1.0]
        cfg.gen.skip_above_exit = False
        cfg.ctrl.initial_p = [1.0]
        cfg.ctrl.reassignment_scores = [0.0]
    if v == "early-exit-disc":
        cfg.disc.early_exit = True
        cfg.disc.share_params_with_gen = True
        cfg.disc.n_layers = n
    else:
        cfg.disc.early_exit = False
        cfg.disc.share_params_with_gen = False
    if v == "embgen-pretrained" and not cfg.embgen.frozen_embeddings_path:
        raise ConfigError("embgen-pretrained needs embgen.frozen_embeddings_path")
    return cfg
