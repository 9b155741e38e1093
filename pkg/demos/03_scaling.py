# %% [markdown]
# Counted attention-map multiply-adds as the token grid grows. Windowed
# attention is linear in HW; full and sub-sampled attention are quadratic, the
# latter with a constant k^2 times smaller.

# %%
from twins.analysis import scaling_bench

for op in ("lsa", "gsa", "global"):
    res = scaling_bench(op, (28, 56, 112), d=64, k=7)
    print(f"--- {op}: MAC slope {res.mac_slope:.3f}, wall-time slope {res.time_slope:.2f}")
    print(res.to_table())
