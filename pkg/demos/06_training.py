# %% [markdown]
# # Training the variants
# A short run of each variant on a small synthetic corpus, then a throughput
# comparison and the plot-ready CSVs.

# %%
import tempfile
from pathlib import Path

from rtd_lab import data, synthetic
from rtd_lab.cli import export_plots, read_metrics
from rtd_lab.config import RunConfig
from rtd_lab.trainer import Trainer, format_throughput, measure_throughput

work = Path(tempfile.mkdtemp())
corpus = synthetic.write_corpus(work / "corpus.txt", n_lines=2000, seed=0)
store = data.build_store(corpus, work, vocab_size=8192, max_seq_len=32)


def small(variant):
    cfg = RunConfig()
    cfg.train.variant = variant
    cfg.model.hidden_dim, cfg.model.ffn_dim = 32, 64
    cfg.train.batch_size = 16
    cfg.train.steps = 300
    cfg.ctrl.window = 50
    return cfg


# %%
for variant in ["baseline", "adaptive-gen", "early-exit-disc", "embgen"]:
    cfg = small(variant)
    cfg.gen.probe_exits = variant == "adaptive-gen"
    log = Trainer(cfg, store, metrics_path=work / f"{variant}.jsonl").run()
    print(f"{variant:16s} loss {log[0].loss_total:7.3f} -> {log[-1].loss_total:7.3f}   rtd acc {log[-1].rtd_acc:.3f}")

# %% the adaptive run logs per-exit accuracy and the exit distribution
for w in read_metrics(work / "adaptive-gen.jsonl"):
    print(w["step"], [round(a, 3) for a in w["rtd_acc_per_exit"]], [round(p, 3) for p in w["p_vector"]])
print(sorted(p.name for p in export_plots(read_metrics(work / "adaptive-gen.jsonl"), work / "plots").values()))

# %% throughput at one shared config (adaptive-gen runs in skip mode)
rows = measure_throughput(["baseline", "adaptive-gen", "early-exit-disc", "embgen"], small("baseline"), store, windows=2)
print(format_throughput(rows))
