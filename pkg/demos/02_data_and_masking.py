# %% [markdown]
# # From text to masked batches

# %%
import tempfile
from pathlib import Path

import numpy as np

from rtd_lab import data, synthetic
from rtd_lab.masking import BERT_RATIOS, apply_mlm_mask

work = Path(tempfile.mkdtemp())
corpus = synthetic.write_corpus(work / "corpus.txt", n_lines=500, seed=1)
print(corpus.read_text().splitlines()[:3])

store = data.build_store(corpus, work, vocab_size=8192, max_seq_len=32)
vocab = data.Vocab.load(store.vocab_path())
print(len(store), "records, vocab", store.vocab_size)
print(vocab.decode(store[0].token_ids[: store[0].true_length]))

# %% the sampler serves every record once per epoch
sampler = data.BatchSampler(store, batch_size=8, rng=np.random.default_rng(0))
batch = sampler.next_batch()

# %% [markdown]
# 15% of the content tokens are selected. With the default ratios 85% of
# those become `[MASK]` and 15% stay as they are.

# %%
masked = apply_mlm_mask(batch, np.random.default_rng(0))
row = 0
print("source :", " ".join(vocab.decode(batch.ids[row][: batch.lengths[row]])))
print("masked :", " ".join(vocab.decode(masked.input_ids[row][: batch.lengths[row]])))
print("picked :", masked.selected[row].sum(), "of", masked.content[row].sum(), "content tokens")

# %% BERT-style corruption also swaps in random tokens
bert = apply_mlm_mask(batch, np.random.default_rng(0), BERT_RATIOS, vocab_size=store.vocab_size)
print("bert   :", " ".join(vocab.decode(bert.input_ids[row][: batch.lengths[row]])))
