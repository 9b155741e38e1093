# %% [markdown]
# Train the scaled-down SVT on the synthetic blob/gradient task, save it, and
# classify one image from a raw TIMG file.

# %%
import tempfile
from pathlib import Path

import numpy as np

from twins import checkpoint
from twins.data import gen_dataset, read_timg, write_timg
from twins.models import build, micro_config, predict
from twins.train import TrainConfig, train

data = gen_dataset(seed=0, n=256)
print("class counts", np.bincount(data.labels))

# %%
cfg = micro_config("svt-s")
model = build(cfg, seed=0)
print(f"{cfg.name}: {model.num_parameters():,} parameters")

tmp = Path(tempfile.mkdtemp())
result = train(model, data, TrainConfig(steps=2000, target_accuracy=0.95, checkpoint=str(tmp / "svt.twns")),
               log=lambda line: None)
print(f"reached {result.final_accuracy:.1%} train accuracy after {result.steps_run} steps")
print("loss every 10 steps:", np.round(result.losses[::10], 3))

# %%
write_timg(tmp / "sample.timg", data.images[17])
restored = build(cfg)
restored.load_state_dict(checkpoint.load_checkpoint(tmp / "svt.twns", cfg))
logits = predict(restored, read_timg(tmp / "sample.timg")[None])[0]
print("true class", data.labels[17], "predicted", int(logits.argmax()))
