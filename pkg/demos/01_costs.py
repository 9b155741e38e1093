# %% [markdown]
# Where does the compute go?  Parameter and multiply-add counts for the six
# named variants, the window size that balances local and sub-sampled
# attention, and a per-layer breakdown for the small SVT model.

# %%
from twins import analysis
from twins.models import BUILTIN_NAMES, build, builtin_config

for name in BUILTIN_NAMES:
    report = analysis.count_model(build(builtin_config(name)), (224, 224))
    for chk in analysis.compare_reference(name, report):
        print(chk.line(name))

# %% [markdown]
# One LSA layer plus one GSA layer with a k x k window costs
# 2 k^2 HW d + 2 (HW)^2 d / k^2, minimized when k^2 = sqrt(HW).

# %%
for side in (28, 56, 112, 224):
    opt = analysis.optimal_window(side, side)
    best = analysis.brute_force_window(side, side)
    print(f"{side:>4}x{side:<4} continuous k={opt.k:6.2f}  nearest={opt.nearest:>3}  integer argmin={best}")

# %%
svt = analysis.count_model(build(builtin_config("svt-s")), (224, 224))
print("\n".join(svt.to_table().splitlines()[:12]))
print(f"attention maps are {svt.attention_macs / svt.total_macs:.1%} of svt-s compute at 224x224")
