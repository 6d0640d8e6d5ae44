# %% [markdown]
# # A multi-exit generator and Gumbel-max sampling

# %%
import numpy as np

from rtd_lab.config import GeneratorConfig
from rtd_lab.data import Batch
from rtd_lab.generator import build_discriminator_input, exit_head_logits, generator_forward, gumbel_sample, init_generator
from rtd_lab.masking import apply_mlm_mask
from rtd_lab.model import EncoderDims, ModelParams, init_embeddings

rng = np.random.default_rng(0)
dims = EncoderDims(vocab_size=40, hidden_dim=16, n_heads=2, ffn_dim=32, max_seq_len=12)
cfg = GeneratorConfig()  # exits after layers 1, 2, 3, 4
params = ModelParams()
init_embeddings(params, dims, rng)
init_generator(params, cfg, dims, rng)

ids = np.array([[2, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 3]])
masked = apply_mlm_mask(Batch(ids, np.array([12]), np.array([0])), rng)

# %% one hidden-state snapshot per exit; head j reads snapshots 1..j concatenated
snaps = generator_forward(params, cfg, masked.input_ids, masked.attention, dims.n_heads)
for j in range(4):
    z = exit_head_logits(params, cfg, j, snaps, masked.selected_flat)
    print(f"exit {j + 1}: head input {params[f'gen.exit{j + 1}.proj.w'].shape[0]} wide, logits {z.shape}")

# %% [markdown]
# Gumbel-max: argmax(logits + g) with g ~ Gumbel(0, 1) draws exactly from
# softmax(logits).

# %%
logits = np.log([1.0, 2.0, 3.0])
draws = gumbel_sample(np.tile(logits, (60_000, 1)), rng)
print(np.bincount(draws) / draws.size, "vs", [1 / 6, 2 / 6, 3 / 6])

# %% samples replace the selected tokens; a sample equal to the original counts as original
sampled = gumbel_sample(z, rng)
corrupted, labels = build_discriminator_input(masked, sampled)
print("replaced:", int(labels.sum()), "of", masked.n_selected, "selected")
