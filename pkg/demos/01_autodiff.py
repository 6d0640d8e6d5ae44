# %% [markdown]
# # A tiny autodiff engine
# Tensors record the ops that made them. `backward` walks that record in
# reverse and leaves gradients on the leaves.

# %%
import numpy as np

from rtd_lab import numerics as nx
from rtd_lab.gradcheck import check_gradients

w = nx.parameter(np.array([1.0, 2.0]))
loss = nx.sum(w * w)
loss.backward()
print("d/dw sum(w*w) =", w.grad)  # [2, 4]

# %% the BCE gradient at logit 0 and label 1 is sigmoid(0) - 1
z = nx.parameter(np.zeros((1, 1)))
nx.bce_with_logits(z, np.ones((1, 1))).backward()
print("dBCE/dz =", z.grad.item())

# %% [markdown]
# Gradients are checked against central differences. float64 keeps the
# finite-difference noise far below the 1e-2 tolerance.

# %%
rng = np.random.default_rng(0)
with nx.default_dtype(np.float64):
    x = nx.parameter(rng.normal(size=(4, 6)))
    g, b = nx.parameter(np.ones(6)), nx.parameter(np.zeros(6))
    weights = nx.Tensor(rng.normal(size=(4, 6)))
    res = check_gradients(lambda: nx.sum(nx.gelu(nx.layer_norm(x, g, b)) * weights), [x, g, b])
print(f"layer_norm+gelu: {res.n_checked} coordinates, worst relative error {res.max_rel_error:.1e}")

# %% NaN anywhere in a forward pass stops everything
try:
    with np.errstate(invalid="ignore"):
        nx.log(nx.Tensor(np.array([-1.0])))
except nx.NonFiniteError as err:
    print("caught:", err)
