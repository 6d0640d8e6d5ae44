"""Training loop for the five model variants, metric windows, throughput and checkpoints.

Variants
--------
baseline
    single-exit generator (top layer) + full discriminator.
adaptive-gen
    multi-exit generator; the exit that feeds the discriminator is drawn each
    step from the adaptive exit distribution.
early-exit-disc
    generator and discriminator share one trunk; the discriminator is trained
    through the active section only.
embgen / embgen-pretrained
    no generator: top-k embedding neighbours (or Gaussian noise) replace the
    selected tokens; the pretrained form uses a frozen token table.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import RunConfig, dump_config, parse_config_text, variant_defaults
from .container import CorruptManifestError, ShapeMismatchError, load_tensors, save_tensors
from .controller import ExitDistribution, sample_exit
from .controller import update as update_controller
from .data import BatchSampler, RecordStore, Vocab
from .discriminator import (
    SectionState,
    init_discriminator,
    rtd_correct,
    rtd_forward,
    rtd_forward_sections,
    rtd_loss,
    update_section_exit,
)
from .embgen import aux_embedding_loss, noise_replace, topk_replace
from .generator import (
    build_discriminator_input,
    exit_head_logits,
    generator_forward,
    gumbel_noise,
    gumbel_sample,
    init_generator,
    mlm_loss,
    row_cache,
)
from .masking import apply_mlm_mask
from .model import EncoderDims, ModelParams, init_embeddings
from .optim import AdamW

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "rtd-lab-checkpoint"


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, dump_path: Path | None = None):
        self.dump_path = dump_path
        super().__init__(message if dump_path is None else f"{message} (batch dumped to {dump_path})")


@dataclass
class StepMetrics:
    step: int
    loss_total: float
    loss_mlm: float
    loss_disc: float
    loss_aux: float
    rtd_correct: int
    rtd_count: int
    exit_index: int | None = None
    replaced: int = 0
    rtd_per_exit: dict = field(default_factory=dict)  # exit index -> (correct, count)
    mlm_per_exit: dict = field(default_factory=dict)  # exit index -> (correct, count)
    rtd_per_section: dict = field(default_factory=dict)  # section -> (correct, count)

    @property
    def rtd_acc(self) -> float:
        return self.rtd_correct / self.rtd_count


@dataclass
class MetricsWindow:
    step: int
    variant: str
    start_step: int
    rtd_acc: float
    rtd_acc_per_exit: list
    mlm_acc_per_exit: list
    rtd_acc_per_section: list
    p_vector: list
    active_section: int | None
    threshold: float | None
    loss_total: float
    loss_mlm: float
    loss_disc: float
    loss_aux: float
    replaced_fraction: float
    exit_counts: list
    steps_per_sec: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _ratio(c: int, n: int):
    return c / n if n else None


class _Window:
    def __init__(self, n_exits: int, n_sections: int):
        self.n_exits = n_exits
        self.n_sections = n_sections
        self.steps: list[StepMetrics] = []
        self.t0 = time.perf_counter()

    def add(self, m: StepMetrics) -> None:
        self.steps.append(m)

    def pooled(self, attr: str, key) -> float | None:
        c = sum(getattr(m, attr).get(key, (0, 0))[0] for m in self.steps)
        n = sum(getattr(m, attr).get(key, (0, 0))[1] for m in self.steps)
        return _ratio(c, n)


class Trainer:
    """Owns parameters, optimizer, rng streams and metric windows for one run."""

    def __init__(self, cfg: RunConfig, store: RecordStore, metrics_path=None):
        cfg = variant_defaults(copy.deepcopy(cfg)).validate()
        self.cfg = cfg
        self.store = store
        self.variant = cfg.train.variant
        V = store.vocab_size
        self.dims = EncoderDims(V, cfg.model.hidden_dim, cfg.model.n_heads, cfg.model.ffn_dim, store.max_seq_len)
        self.n_reserved = 5
        seeds = np.random.SeedSequence(cfg.train.seed).spawn(7)
        init_rng, data_rng, mask_rng, sample_rng, exit_rng, probe_rng, repl_rng = (np.random.default_rng(s) for s in seeds)
        self.rngs = {"mask": mask_rng, "sample": sample_rng, "exit": exit_rng, "probe": probe_rng, "repl": repl_rng}

        self.has_generator = self.variant not in ("embgen", "embgen-pretrained")
        self.shared = cfg.disc.share_params_with_gen
        self.gen_trunk = "shared" if self.shared else "gen"
        self.disc_trunk = "shared" if self.shared else "disc"

        self.params = ModelParams()
        init_embeddings(self.params, self.dims, init_rng)
        if self.has_generator:
            init_generator(self.params, cfg.gen, self.dims, init_rng, trunk=self.gen_trunk)
        init_discriminator(self.params, cfg.disc, self.dims, init_rng, trunk=self.disc_trunk)
        if self.variant == "embgen-pretrained":
            self._load_frozen_embeddings(cfg.embgen.frozen_embeddings_path)

        self.opt = AdamW(
            self.params,
            cfg.train.lr,
            cfg.train.steps,
            cfg.train.warmup_steps,
            (cfg.train.beta1, cfg.train.beta2),
            cfg.train.adam_eps,
            cfg.train.weight_decay,
            cfg.train.clip_norm,
        )
        self.sampler = BatchSampler(store, cfg.train.batch_size, data_rng)
        self.controller = ExitDistribution.create(cfg.ctrl.initial_p, cfg.ctrl.reassignment_scores, cfg.ctrl.alpha)
        self.sections = SectionState.initial(cfg.disc.n_layers, cfg.disc.n_sections)
        self.step = 0
        self.log: list[MetricsWindow] = []
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self._window = self._new_window()

    # ------------------------------------------------------------ setup helpers

    def _new_window(self) -> _Window:
        return _Window(len(self.cfg.gen.exit_layers), self.cfg.disc.n_sections)

    def _load_frozen_embeddings(self, path) -> None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"frozen embeddings not found: {path}")
        arrays, _ = load_tensors(path)
        if "emb.tok" not in arrays:
            raise CorruptManifestError(f"{path}: no 'emb.tok' tensor")
        tok = self.params["emb.tok"]
        if arrays["emb.tok"].shape != tok.shape:
            raise ShapeMismatchError("emb.tok", tok.shape, arrays["emb.tok"].shape)
        tok.data = np.array(arrays["emb.tok"], dtype=tok.data.dtype)
        tok.requires_grad = False

    @property
    def window_size(self) -> int:
        return self.cfg.ctrl.window

    # ------------------------------------------------------------ one step

    def train_step(self, batch=None) -> StepMetrics:
        """One optimizer update on L_MLM + lambda * L_Disc (+ aux_coeff * aux)."""
        cfg = self.cfg
        batch = batch if batch is not None else self.sampler.next_batch()
        masked = apply_mlm_mask(
            batch,
            self.rngs["mask"],
            cfg.mask.mask_ratios,
            cfg.mask.mask_fraction,
            vocab_size=self.dims.vocab_size,
            n_reserved=self.n_reserved,
        )
        self.params.zero_grad()
        try:
            if self.has_generator:
                loss, m = self._generator_step(masked)
            else:
                loss, m = self._embgen_step(masked)
            if loss.requires_grad:
                loss.backward()
                self.opt.step()
            else:
                self.opt.t += 1
        except nx.NonFiniteError as exc:
            dump = self._dump_batch(batch, masked)
            raise TrainingAborted(f"step {self.step + 1}: {exc}", dump) from exc
        self.step += 1
        m.step = self.step
        self._window.add(m)
        return m

    def _dump_batch(self, batch, masked) -> Path:
        base = self.metrics_path.parent if self.metrics_path else Path.cwd()
        path = base / f"abort_step{self.step + 1}.npz"
        np.savez(path, ids=batch.ids, lengths=batch.lengths, indices=batch.indices, input_ids=masked.input_ids)
        return path

    def _disc_losses(self, ids, labels, masked, raw=None):
        """Discriminator loss and accuracy bookkeeping shared by all variants."""
        cfg = self.cfg
        H = cfg.model.n_heads
        content = masked.content
        per_section = {}
        if cfg.disc.early_exit:
            active = self.sections.active
            outs = rtd_forward_sections(self.params, cfg.disc, ids, masked.attention, H, active, self.disc_trunk, raw)
            losses = [rtd_loss(z, labels, content) for z in outs.values()]
            l_disc = losses[0]
            for extra in losses[1:]:
                l_disc = l_disc + extra
            l_disc = l_disc * (1.0 / len(losses))
            for s, z in outs.items():
                per_section[s] = rtd_correct(z, labels, content)
            correct, count = per_section[active]
        else:
            z = rtd_forward(self.params, cfg.disc, ids, masked.attention, H, self.disc_trunk, None, raw)
            l_disc = rtd_loss(z, labels, content)
            correct, count = rtd_correct(z, labels, content)
            per_section[cfg.disc.n_sections] = (correct, count)
        return l_disc, correct, count, per_section

    def _generator_step(self, masked):
        cfg = self.cfg
        gcfg = cfg.gen
        lam = cfg.train.lam
        n_exits = len(gcfg.exit_layers)
        if self.variant == "adaptive-gen":
            exit_idx = sample_exit(self.controller, self.rngs["exit"])
        else:
            exit_idx = n_exits - 1
        upto = gcfg.exit_layers[exit_idx] if gcfg.skip_above_exit else None
        snaps = generator_forward(
            self.params, gcfg, masked.input_ids, masked.attention, cfg.model.n_heads, self.gen_trunk, upto
        )
        cache = row_cache(snaps, masked.selected_flat)
        heads = [exit_idx] if gcfg.skip_above_exit else list(range(n_exits))
        logits = {j: exit_head_logits(self.params, gcfg, j, cache) for j in heads}
        weights = [1.0] if gcfg.skip_above_exit else gcfg.exit_loss_weights
        l_mlm = mlm_loss([logits[j] for j in heads], masked.original_ids, weights)

        mlm_per_exit = {}
        for j, z in logits.items():
            mlm_per_exit[j] = (int((z.data.argmax(-1) == masked.original_ids).sum()), masked.n_selected)

        # one noise draw per step; probes reuse it so exits differ only where their logits do
        noise = gumbel_noise(logits[exit_idx].shape, self.rngs["sample"])
        sampled = gumbel_sample(logits[exit_idx], self.rngs["sample"], noise=noise)
        corrupted, labels = build_discriminator_input(masked, sampled)
        if lam > 0:
            l_disc, correct, count, per_section = self._disc_losses(corrupted, labels, masked)
        else:
            with nx.no_grad():
                l_disc, correct, count, per_section = self._disc_losses(corrupted, labels, masked)
        rtd_per_exit = {exit_idx: (correct, count)}
        if gcfg.probe_exits and not gcfg.skip_above_exit:
            rtd_per_exit.update(self._probe_exits(masked, logits, exit_idx, noise))

        total = l_mlm + l_disc * lam if lam > 0 else l_mlm
        m = StepMetrics(
            step=0,
            loss_total=float(l_mlm.data) + lam * float(l_disc.data),
            loss_mlm=float(l_mlm.data),
            loss_disc=float(l_disc.data),
            loss_aux=0.0,
            rtd_correct=correct,
            rtd_count=count,
            exit_index=exit_idx,
            replaced=int(labels.sum()),
            rtd_per_exit=rtd_per_exit,
            mlm_per_exit=mlm_per_exit,
            rtd_per_section=per_section,
        )
        return total, m

    def _probe_exits(self, masked, logits, chosen, noise):
        """Discriminator accuracy on samples from the exits not chosen this step (no gradient).

        All exits share the step's Gumbel noise, which keeps each sample exact
        while removing most of the sampling noise from exit-to-exit comparisons.
        """
        out = {}
        rng = self.rngs["probe"]
        with nx.no_grad():
            for j, z in logits.items():
                if j == chosen:
                    continue
                ids, labels = build_discriminator_input(masked, gumbel_sample(z, rng, noise=noise))
                zd = rtd_forward(self.params, self.cfg.disc, ids, masked.attention, self.cfg.model.n_heads, self.disc_trunk)
                out[j] = rtd_correct(zd, labels, masked.content)
        return out

    def _embgen_step(self, masked):
        cfg = self.cfg
        ecfg = cfg.embgen
        lam = cfg.train.lam
        tok = self.params["emb.tok"]
        rng = self.rngs["repl"]
        if ecfg.mode == "topk":
            # neighbours come from a snapshot of the table at step start
            corrupted, labels, repl = topk_replace(masked, tok.data.copy(), ecfg.k, rng, self.n_reserved)
            raw = None
            aux = aux_embedding_loss(masked.original_ids, repl, tok)
        else:
            raw, labels, _ = noise_replace(masked, tok, ecfg.sigma, rng)
            corrupted = masked.source_ids
            aux = nx.Tensor(np.zeros(()))
        l_disc, correct, count, per_section = self._disc_losses(corrupted, labels, masked, raw)
        total = l_disc * lam
        if ecfg.aux_coeff > 0 and aux.requires_grad:
            total = total + aux * ecfg.aux_coeff
        m = StepMetrics(
            step=0,
            loss_total=lam * float(l_disc.data) + ecfg.aux_coeff * float(aux.data),
            loss_mlm=0.0,
            loss_disc=float(l_disc.data),
            loss_aux=float(aux.data),
            rtd_correct=correct,
            rtd_count=count,
            replaced=int(labels.sum()),
            rtd_per_section=per_section,
        )
        return total, m

    # ------------------------------------------------------------ windows

    def close_window(self) -> MetricsWindow:
        w = self._window
        if not w.steps:
            raise RuntimeError("close_window called on an empty window")
        elapsed = max(time.perf_counter() - w.t0, 1e-9)
        steps = w.steps
        correct = sum(m.rtd_correct for m in steps)
        count = sum(m.rtd_count for m in steps)
        rtd_acc = correct / count
        n_exits = len(self.cfg.gen.exit_layers) if self.has_generator else 0
        n_sec = self.cfg.disc.n_sections
        per_exit = [w.pooled("rtd_per_exit", j) for j in range(n_exits)]
        mlm_exit = [w.pooled("mlm_per_exit", j) for j in range(n_exits)]
        per_section = [w.pooled("rtd_per_section", s) for s in range(1, n_sec + 1)]
        exit_counts = [sum(1 for m in steps if m.exit_index == j) for j in range(n_exits)]

        if self.variant == "adaptive-gen":
            self.controller = update_controller(self.controller, rtd_acc)
        if self.cfg.disc.early_exit:
            self.sections = update_section_exit(self.sections, per_section)

        window = MetricsWindow(
            step=self.step,
            variant=self.variant,
            start_step=steps[0].step,
            rtd_acc=rtd_acc,
            rtd_acc_per_exit=per_exit,
            mlm_acc_per_exit=mlm_exit,
            rtd_acc_per_section=per_section,
            p_vector=self.controller.p.tolist(),
            active_section=self.sections.active if self.cfg.disc.early_exit else None,
            threshold=self.sections.threshold if self.cfg.disc.early_exit else None,
            loss_total=statistics.fmean(m.loss_total for m in steps),
            loss_mlm=statistics.fmean(m.loss_mlm for m in steps),
            loss_disc=statistics.fmean(m.loss_disc for m in steps),
            loss_aux=statistics.fmean(m.loss_aux for m in steps),
            replaced_fraction=sum(m.replaced for m in steps) / count,
            exit_counts=exit_counts,
            steps_per_sec=len(steps) / elapsed,
        )
        self.log.append(window)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a", encoding="utf-8") as f:
                f.write(window.to_json() + "\n")
        self._window = self._new_window()
        return window

    def run(self, steps: int | None = None, on_window=None) -> list[MetricsWindow]:
        """Train until ``steps`` total steps (default: the configured count)."""
        target = self.cfg.train.steps if steps is None else steps
        while self.step < target:
            self.train_step()
            if self.step % self.window_size == 0:
                w = self.close_window()
                log.info(
                    "step %d rtd_acc %.4f loss %.4f steps/s %.2f", w.step, w.rtd_acc, w.loss_total, w.steps_per_sec
                )
                if on_window is not None:
                    on_window(w)
        return self.log

    # ------------------------------------------------------------ checkpoints

    def state_meta(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "config": dump_config(self.cfg),
            "step": self.step,
            "opt_t": self.opt.t,
            "rngs": {k: r.bit_generator.state for k, r in sorted(self.rngs.items())},
            "sampler": self.sampler.state_dict(),
            "controller": {
                "p": self.controller.p.tolist(),
                "last_window_acc": self.controller.last_window_acc,
                "history": [list(h) for h in self.controller.history],
            },
            "sections": {
                "active": self.sections.active,
                "threshold": self.sections.threshold,
                "accuracies": list(self.sections.accuracies),
                "history": [list(h) for h in self.sections.history],
            },
            "frozen": [n for n, t in self.params if not t.requires_grad],
            "log": [dataclasses.asdict(w) for w in self.log],
        }

    def save(self, path) -> None:
        if self._window.steps:
            raise RuntimeError("checkpoints are taken at window boundaries; close the window first")
        arrays = dict(self.params.arrays())
        arrays.update(self.opt.state_arrays())
        save_tensors(path, arrays, self.state_meta())

    @classmethod
    def load(cls, path, store: RecordStore, cfg: RunConfig | None = None, metrics_path=None) -> "Trainer":
        """Rebuild a trainer from a checkpoint.

        ``cfg`` defaults to the configuration stored in the file; when given,
        every parameter shape must match what it implies.
        """
        arrays, meta = load_tensors(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise CorruptManifestError(f"{path}: not a trainer checkpoint")
        cfg = cfg or parse_config_text(meta["config"])
        frozen_path = cfg.embgen.frozen_embeddings_path
        if cfg.train.variant == "embgen-pretrained" and not Path(frozen_path).is_file():
            # the table itself lives in the checkpoint
            cfg.embgen.frozen_embeddings_path = str(path)
        self = cls(cfg, store, metrics_path=metrics_path)
        expected = self.params.manifest()
        for name, shape in expected.items():
            if name not in arrays:
                raise CorruptManifestError(f"{path}: missing tensor {name!r}")
            if tuple(arrays[name].shape) != tuple(shape):
                raise ShapeMismatchError(name, shape, arrays[name].shape)
        for name, t in self.params:
            t.data = np.array(arrays[name], dtype=t.data.dtype)
        for name in meta.get("frozen", []):
            self.params[name].requires_grad = False
        self.opt.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("opt.")}, meta["opt_t"])
        self.step = int(meta["step"])
        for k, state in meta["rngs"].items():
            self.rngs[k].bit_generator.state = state
        self.sampler.load_state_dict(meta["sampler"])
        c = meta["controller"]
        self.controller = dataclasses.replace(
            self.controller,
            p=np.asarray(c["p"], dtype=np.float64),
            last_window_acc=c["last_window_acc"],
            history=tuple(tuple(h) for h in c["history"]),
        )
        s = meta["sections"]
        self.sections = dataclasses.replace(
            self.sections,
            active=s["active"],
            threshold=s["threshold"],
            accuracies=tuple(s["accuracies"]),
            history=tuple(tuple(h) for h in s["history"]),
        )
        self.log = [MetricsWindow(**w) for w in meta["log"]]
        return self


# ---------------------------------------------------------------- throughput


@dataclass
class ThroughputRow:
    variant: str
    steps_per_sec: float
    ratio: float
    windows: list


def measure_throughput(
    variants,
    cfg: RunConfig,
    store: RecordStore,
    windows: int = 5,
    warmup_windows: int = 1,
    overrides: dict | None = None,
) -> list[ThroughputRow]:
    """Median steps/sec per variant over ``windows`` timed windows after warmup.

    Variants are advanced one window at a time in round-robin so slow drifts in
    machine load hit all of them alike. ``overrides`` maps a variant to a
    callable that adjusts its copy of the config. Adaptive (Gen) runs in skip
    mode unless an override says otherwise. The ratio is relative to
    ``baseline`` when it is present, else to the first variant.
    """
    total_windows = windows + warmup_windows
    trainers = {}
    for v in variants:
        c = copy.deepcopy(cfg)
        c.train.variant = v
        c.train.steps = max(c.train.steps, total_windows * c.ctrl.window + 1)
        if v == "adaptive-gen":
            c.gen.skip_above_exit = True
            c.gen.probe_exits = False
        if overrides and v in overrides:
            overrides[v](c)
        try:
            trainers[v] = Trainer(c, store)
        except Exception as exc:  # noqa: BLE001 - a broken variant is reported and skipped
            log.warning("variant %s failed to start: %s", v, exc)
    speeds: dict[str, list[float]] = {v: [] for v in trainers}
    for w in range(total_windows):
        for v, tr in list(trainers.items()):
            try:
                tr._window = tr._new_window()
                tr.run(tr.step + tr.window_size)
            except Exception as exc:  # noqa: BLE001
                log.warning("variant %s failed during run: %s", v, exc)
                del trainers[v]
                speeds.pop(v)
                continue
            if w >= warmup_windows:
                speeds[v].append(tr.log[-1].steps_per_sec)
    medians = {v: statistics.median(s) for v, s in speeds.items() if s}
    if not medians:
        return []
    ref = medians.get("baseline", next(iter(medians.values())))
    return [ThroughputRow(v, medians[v], medians[v] / ref, speeds[v]) for v in medians]


def format_throughput(rows: list[ThroughputRow]) -> str:
    lines = [f"{'variant':<22}{'steps/sec':>12}{'ratio':>10}"]
    for r in rows:
        lines.append(f"{r.variant:<22}{r.steps_per_sec:>12.2f}{r.ratio:>9.2f}x")
    return "\n".join(lines)


def load_vocab(store: RecordStore) -> Vocab:
    return Vocab.load(store.vocab_path())
