# %% [markdown]
# # Replacing the generator with embedding neighbours

# %%
import numpy as np

from rtd_lab import numerics as nx
from rtd_lab.data import Batch
from rtd_lab.embgen import aux_embedding_loss, nearest_candidates, noise_replace, topk_replace
from rtd_lab.masking import apply_mlm_mask

emb = np.array([[0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [1.2, 0.3]])
print("nearest to id 5:", nearest_candidates(emb, [5], k=2, n_reserved=5))  # ids 6 and 8

# %% every selected position is labeled replaced, so the class balance never drifts
rng = np.random.default_rng(0)
table = rng.normal(size=(300, 16))
ids = np.concatenate([[2], rng.integers(5, 300, size=30), [3]])[None, :]
masked = apply_mlm_mask(Batch(ids, np.array([32]), np.array([0])), rng)
corrupted, labels, repl = topk_replace(masked, table, k=10, rng=rng)
print("replaced fraction of content:", labels.sum() / masked.content.sum())

# %% the auxiliary loss pulls originals and replacements together
t = nx.Tensor(table)
print("aux loss:", float(aux_embedding_loss(masked.original_ids, repl, t).data))

# %% [markdown]
# Noise mode keeps the ids and perturbs the token vectors instead. With
# sigma = 1 on a small-norm table the noisy rows stand far outside the
# vocabulary, which makes detection trivial.

# %%
stream, labels, noise = noise_replace(masked, nx.Tensor(table * 0.02), sigma=1.0, rng=rng)
norms = np.linalg.norm(stream.data[0], axis=-1)
print("mean norm, clean:", norms[~masked.selected[0]].mean().round(2), "noised:", norms[masked.selected[0]].mean().round(2))
