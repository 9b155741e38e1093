import json

import numpy as np

from twins import verify
from twins.models import build


def test_oracle_checks_small():
    for res in (verify.check_lsa_oracle(3, 10), verify.check_gsa_oracle(3, 10), verify.check_sra_oracle(3, 10)):
        assert res.passed, res.line()
        assert res.measured < 1e-10


def test_oracle_checks_are_reproducible():
    assert verify.check_lsa_oracle(5, 5).measured == verify.check_lsa_oracle(5, 5).measured


def test_check_result_json():
    res = verify.CheckResult("x", "fail", 0.5, 0.1, 2, "why")
    assert not res.passed
    assert res.to_dict() == {"check": "x", "status": "fail", "measured": 0.5, "tolerance": 0.1, "seed": 2}
    assert json.loads(verify.summary_json([res]))[0]["check"] == "x"
    assert res.line().startswith("[FAIL] x")


def test_gradcheck_detects_a_wrong_gradient():
    from twins import ops
    from twins.tensor import Tensor, make_output

    x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    assert verify.gradcheck(lambda: ops.sum_all(ops.gelu(x)), {"x": x})["x"] < 1e-8

    def square_with_bad_backward(t):
        return make_output("bad_square", t.data**2, (t,), lambda g: (g * t.data,))  # missing factor 2

    assert verify.gradcheck(lambda: ops.sum_all(square_with_bad_backward(x)), {"x": x})["x"] > 0.1


def test_block_patterns():
    res = verify.check_block_patterns()
    assert res.passed, res.detail


def test_pattern_config_fills_depth():
    cfg = verify.pattern_config(("L", "LLG", "LG", "G"))
    assert cfg.stages[1].pattern == ("L", "L")
    assert cfg.stages[2].pattern == ("L", "G", "L", "G", "L", "G")
    assert build(cfg).num_parameters() > 0


def test_optimal_window_and_scaling_checks():
    assert verify.check_optimal_window().passed
    assert verify.check_scaling(sides=(14, 28, 56)).passed
