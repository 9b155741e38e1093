import numpy as np
import pytest

from twins.data import ToyDataset, gen_dataset, load_or_generate, read_timg, write_timg
from twins.models import build, micro_config
from twins.tensor import Tensor
from twins.train import AdamW, TrainConfig, TrainingDiverged, batch_indices, train


def test_dataset_deterministic_and_balanced():
    a, b = gen_dataset(5, 256), gen_dataset(5, 256)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.images.shape == (256, 32, 32, 3) and a.images.dtype == np.float32
    assert a.images.min() >= 0 and a.images.max() <= 1
    counts = np.bincount(a.labels, minlength=10)
    assert counts.max() - counts.min() <= 1
    assert not np.array_equal(a.images, gen_dataset(6, 256).images)


def test_dataset_cues():
    d = gen_dataset(0, 200)
    # direction bit: horizontal ramp makes the right edge brighter than the left
    horiz = d.images[:, 4:28, -1].mean(axis=(1, 2)) - d.images[:, 4:28, 0].mean(axis=(1, 2))
    vert = d.images[:, -1, 4:28].mean(axis=(1, 2)) - d.images[:, 0, 4:28].mean(axis=(1, 2))
    assert ((horiz > vert) == (d.labels % 2 == 0)).all()


def test_dataset_cache(tmp_path):
    path = tmp_path / "d.twns"
    first = load_or_generate(path, 1, 40)
    assert path.exists()
    again = load_or_generate(path, 99, 7)  # cache wins
    np.testing.assert_array_equal(first.images, again.images)
    assert again.seed == 1 and again.labels.dtype == np.int64


def test_timg_round_trip(tmp_path):
    img = np.random.default_rng(0).random((5, 7, 3), dtype=np.float32)
    write_timg(tmp_path / "x.timg", img)
    buf = (tmp_path / "x.timg").read_bytes()
    assert buf[:4] == b"TIMG" and len(buf) == 16 + 4 * img.size
    np.testing.assert_array_equal(read_timg(tmp_path / "x.timg"), img)


def test_timg_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"JPEG" + bytes(20))
    with pytest.raises(ValueError):
        read_timg(tmp_path / "bad")
    write_timg(tmp_path / "x.timg", np.zeros((2, 2, 3), np.float32))
    (tmp_path / "short").write_bytes((tmp_path / "x.timg").read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_timg(tmp_path / "short")


def test_batch_indices():
    epoch0 = np.concatenate([batch_indices(s, 256, 32, 0) for s in range(8)])
    assert sorted(epoch0) == list(range(256))
    np.testing.assert_array_equal(batch_indices(3, 256, 32, 0), batch_indices(3, 256, 32, 0))
    assert not np.array_equal(batch_indices(0, 256, 32, 0), batch_indices(8, 256, 32, 0))


def test_adamw_matches_hand_formula():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    b = Tensor(np.array([0.5]), requires_grad=True)
    opt = AdamW([("w", p), ("b", b)], lr=0.1, weight_decay=0.5)
    p.grad, b.grad = np.array([[0.2, -0.4]]), np.array([3.0])
    opt.step()
    # first step: bias-corrected m/sqrt(v) = sign(g); decay only on the matrix
    np.testing.assert_allclose(p.data, [[1.0 - 0.1 * (1 + 0.5), -2.0 - 0.1 * (-1 - 1.0)]], atol=1e-7)
    np.testing.assert_allclose(b.data, [0.5 - 0.1], atol=1e-7)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)


@pytest.fixture(scope="module")
def small_data():
    return gen_dataset(0, 64)


def test_training_is_deterministic(small_data):
    cfg = TrainConfig(steps=6, batch_size=16, eval_every=3)
    a = train(build(micro_config("svt-s"), seed=0), small_data, cfg, log=lambda _: None)
    b = train(build(micro_config("svt-s"), seed=0), small_data, cfg, log=lambda _: None)
    assert abs(a.losses[-1] - b.losses[-1]) < 1e-6
    assert a.losses == b.losses


def test_resume_continues_bit_identically(tmp_path, small_data):
    quiet = lambda _: None
    full = train(build(micro_config("pcpvt-s")), small_data, TrainConfig(steps=5, batch_size=16), log=quiet)
    ckpt = tmp_path / "t.twns"
    train(build(micro_config("pcpvt-s")), small_data, TrainConfig(steps=4, batch_size=16, checkpoint=str(ckpt)), log=quiet)
    resumed = train(build(micro_config("pcpvt-s"), seed=7), small_data, TrainConfig(steps=5, batch_size=16), resume=ckpt, log=quiet)
    assert resumed.losses == full.losses[4:]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step(small_data):
    images = small_data.images.copy()
    bad_step = 2
    images[batch_indices(bad_step, 64, 16, 0)[0]] = np.inf
    data = ToyDataset(images, small_data.labels, 0)
    with pytest.raises(TrainingDiverged) as info:
        train(build(micro_config("svt-s")), data, TrainConfig(steps=5, batch_size=16), log=lambda _: None)
    assert info.value.step == bad_step
    assert f"step {bad_step}" in str(info.value)
