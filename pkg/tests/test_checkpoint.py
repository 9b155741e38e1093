import numpy as np
import pytest

from twins import checkpoint
from twins.models import build, micro_config


def test_round_trip_bit_exact(tmp_path):
    model = build(micro_config("svt-s"), seed=3)
    path = tmp_path / "m.twns"
    checkpoint.save_checkpoint(model, path, extra={"step": np.array([7.0])})
    loaded = checkpoint.load_checkpoint(path, micro_config("svt-s"))
    for name, arr in model.state_dict().items():
        assert loaded[name].dtype == arr.dtype
        assert loaded[name].tobytes() == arr.tobytes()
    assert loaded["step"][0] == 7.0
    assert checkpoint.encode(loaded) == path.read_bytes()


def test_float64_and_order_preserved():
    tensors = {"b": np.arange(3.0), "a": np.ones((2, 2), dtype=np.float32)}
    out = checkpoint.decode(checkpoint.encode(tensors))
    assert list(out) == ["b", "a"]
    assert out["b"].dtype == np.float64 and out["a"].dtype == np.float32


def test_cross_config_rejected(tmp_path):
    path = tmp_path / "svt.twns"
    checkpoint.save_checkpoint(build(micro_config("svt-s")), path)
    with pytest.raises(checkpoint.ShapeMismatchError):
        checkpoint.load_checkpoint(path, micro_config("pcpvt-s"))


def test_truncation_names_the_tensor(tmp_path):
    buf = checkpoint.encode({"first": np.zeros(4, np.float32), "second": np.zeros(100, np.float32)})
    with pytest.raises(checkpoint.TruncatedCheckpointError, match="second"):
        checkpoint.decode(buf[:-10])


def test_corrupt_header():
    buf = checkpoint.encode({"x": np.zeros(2, np.float32)})
    with pytest.raises(checkpoint.CorruptHeaderError):
        checkpoint.decode(b"XXXX" + buf[4:])
    with pytest.raises(checkpoint.CorruptHeaderError):
        checkpoint.decode(b"TW")


def test_errors_are_distinct():
    kinds = {checkpoint.CorruptHeaderError, checkpoint.TruncatedCheckpointError, checkpoint.ShapeMismatchError}
    assert all(issubclass(k, checkpoint.CheckpointError) for k in kinds)
    assert len({k.__mro__[0] for k in kinds}) == 3
