# %% [markdown]
# Windowed attention is ordinary attention with a block-diagonal mask, and the
# sub-sampled variant is ordinary attention against a smaller key set. Both
# claims are checked here against the slow loop implementations in
# ``twins.oracles``.

# %%
import numpy as np

from twins import ops
from twins.attention import AttentionParams, gsa, lsa, mhsa, window_partition
from twins.module import Init
from twins.oracles import gsa_ref, lsa_ref
from twins.tensor import Tensor

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 5, 7, 16))  # not a multiple of the window
p_local = AttentionParams(Init(0, np.float64, std=0.3), 16, 2)
p_global = AttentionParams(Init(1, np.float64, std=0.3), 16, 2, fused_qkv=False, ratio=2)

# %%
windows, grid = window_partition(Tensor(x), 3, 3)
print("windows", windows.shape, "grid", (grid.m, grid.n), "padding", (grid.pad_h, grid.pad_w))

out = lsa(Tensor(x), p_local, 3, 3).data
print("lsa vs masked global oracle:", np.abs(out - lsa_ref(x, p_local, 3, 3)).max())

out = gsa(Tensor(x), p_global, 2).data
print("gsa vs explicit sub-sampling oracle:", np.abs(out - gsa_ref(x, p_global, 2)).max())

# %% [markdown]
# With a single window, or with no sub-sampling, both reduce to plain
# multi-head attention bit for bit.

# %%
tokens = ops.reshape(Tensor(x), (1, 35, 16))
ref = mhsa(tokens, p_local).data.reshape(x.shape)
print("lsa(k = H x W) == mhsa:", np.array_equal(lsa(Tensor(x), p_local, 5, 7).data, ref))
p_plain = AttentionParams(Init(1, np.float64, std=0.3), 16, 2, fused_qkv=False)
ref = mhsa(tokens, p_plain).data.reshape(x.shape)
print("gsa(r = 1) == mhsa:", np.array_equal(gsa(Tensor(x), p_plain, 1).data, ref))
