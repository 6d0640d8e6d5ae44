# %% [markdown]
# # The adaptive exit distribution
# Each window the controller compares the discriminator's accuracy with the
# previous window and nudges P toward the deeper exits when accuracy rose:
#
#     P <- softmax(P + alpha * clip(acc - acc_prev, -1, 1) * R)

# %%
import numpy as np

from rtd_lab.controller import ExitDistribution, sample_exit, update

d = ExitDistribution.create([0.4, 0.4, 0.1, 0.1], [0, 1, 2, 3], alpha=0.1)
d = update(d, 0.7)  # first window: only remembered
d = update(d, 0.9)
print(np.round(d.p, 4))  # [0.2795 0.2851 0.2155 0.2199]

# %% [markdown]
# The softmax acts on probabilities, not logits, so even a zero difference
# pulls P toward uniform. A falling accuracy shifts mass to the shallow exits.

# %%
d = ExitDistribution.create()
for acc in [0.60, 0.62, 0.66, 0.65, 0.58, 0.57]:
    d = update(d, acc)
    print(f"acc {acc:.2f} -> P {np.round(d.p, 3)}")

# %% sampling follows P
rng = np.random.default_rng(0)
draws = [sample_exit(d, rng) for _ in range(20_000)]
print(np.bincount(draws) / len(draws))
