import numpy as np
import pytest

from twins.blocks import BlockKind
from twins.models import (
    BUILTIN_NAMES,
    ModelConfig,
    StageConfig,
    build,
    builtin_config,
    forward,
    micro_config,
    resolve_config,
    stage_grids,
)
from twins.tensor import DimensionError


def test_builtin_configs_match_reference_tables():
    assert builtin_config("svt-s").stages[3].pattern == ("G", "G", "G", "G")
    assert builtin_config("svt-s").stages[0].pattern == ("L", "G")
    assert builtin_config("pcpvt-b").stages[2].depth == 18
    assert builtin_config("svt-l").stages[0].channels == 128
    assert [s.reduction_ratio for s in builtin_config("pcpvt-s").stages] == [8, 4, 2, 1]
    assert all(set(s.pattern) == {"S"} for s in builtin_config("pcpvt-l").stages)


def test_unknown_name():
    with pytest.raises(KeyError):
        builtin_config("svt-xl")
    with pytest.raises(KeyError):
        resolve_config("resnet50")


def test_micro_rule():
    base, micro = builtin_config("svt-s"), micro_config("svt-s")
    assert [s.channels for s in micro.stages] == [s.channels // 4 for s in base.stages]
    assert [s.depth for s in micro.stages] == [1, 1, 2, 1]
    assert [m.pattern for m in micro.stages] == [b.pattern[: m.depth] for b, m in zip(base.stages, micro.stages)]


def test_stage_config_invariants():
    ok = dict(patch_size=4, channels=64, depth=2, heads=2, mlp_ratio=4, pattern=("L", "G"), lsa_window=(7, 7))
    StageConfig(**ok)
    with pytest.raises(ValueError):
        StageConfig(**{**ok, "heads": 3})
    with pytest.raises(ValueError):
        StageConfig(**{**ok, "pattern": ("L",)})
    with pytest.raises(ValueError):
        StageConfig(**{**ok, "lsa_window": None})
    with pytest.raises(ValueError):
        ModelConfig("short", [StageConfig(**ok)] * 3)


def test_config_json_round_trip(tmp_path):
    for name in BUILTIN_NAMES:
        cfg = builtin_config(name)
        assert ModelConfig.from_json(cfg.to_json()) == cfg
    path = tmp_path / "m.json"
    micro_config("pcpvt-s").save(path)
    assert resolve_config(str(path)) == micro_config("pcpvt-s")


def test_build_is_deterministic_per_seed():
    cfg = micro_config("svt-s")
    a, b, c = build(cfg, seed=1), build(cfg, seed=1), build(cfg, seed=2)
    for (na, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert any(not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.parameters(), c.parameters()))


def test_peg_follows_first_block():
    model = build(micro_config("pcpvt-s"))
    assert all(st.config.peg_after_block == 0 for st in model.stages)
    assert model.stages[0].blocks[0].kind is BlockKind.SRA_BLOCK


@pytest.mark.parametrize("name,res,grids", [
    ("micro-svt-s", (224, 224), [(56, 56), (28, 28), (14, 14), (7, 7)]),
    ("micro-pcpvt-s", (256, 256), [(64, 64), (32, 32), (16, 16), (8, 8)]),
    ("micro-svt-s", (224, 320), [(56, 80), (28, 40), (14, 20), (7, 10)]),
])
def test_forward_geometry(name, res, grids):
    cfg = resolve_config(name)
    x = np.random.default_rng(0).random((1, *res, 3), dtype=np.float32)
    logits, feats = forward(build(cfg), x, return_features=True)
    assert logits.shape == (1, 10)
    assert [f.shape[1:3] for f in feats] == grids == stage_grids(cfg, *res)


def test_identical_images_identical_logits():
    x = np.repeat(np.random.default_rng(0).random((1, 32, 32, 3), dtype=np.float32), 3, axis=0)
    out = forward(build(micro_config("svt-s")), x).data
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[0], out[2])


def test_channel_mismatch():
    with pytest.raises(DimensionError):
        forward(build(micro_config("svt-s")), np.zeros((1, 32, 32, 4), dtype=np.float32))
