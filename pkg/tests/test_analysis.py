import csv
import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twins import analysis
from twins.analysis import (
    brute_force_window,
    combined_cost,
    cost_global,
    cost_gsa,
    cost_lsa,
    count_model,
    measure_model,
    optimal_window,
)
from twins.attention import AttentionParams, lsa
from twins.models import build, builtin_config, micro_config
from twins.module import Init
from twins.tensor import Tensor, count_macs, no_grad

pos = st.integers(1, 300)


def test_cost_global_values():
    assert cost_global(1, 1, 1) == 2
    assert cost_global(4, 4, 2) == 1024


def test_cost_lsa_values():
    assert cost_lsa(56, 56, 64, 7, 7) == 19_668_992
    assert cost_lsa(6, 9, 3, 6, 9) == cost_global(6, 9, 3)


def test_cost_gsa_values():
    assert cost_gsa(4, 4, 1, 2, 2) == 128
    assert cost_gsa(5, 5, 1, 2, 2) == Fraction(1250, 4)


def test_costs_reject_non_positive():
    with pytest.raises(ValueError):
        cost_global(0, 4, 2)


@settings(max_examples=100)
@given(pos, pos, st.integers(1, 128), st.integers(1, 20), st.integers(1, 20))
def test_cost_identities(h, w, d, k1, k2):
    assert Fraction(cost_global(h, w, d), cost_lsa(h, w, d, k1, k2)) == Fraction(h * w, k1 * k2)
    assert cost_global(h, w, d) == cost_lsa(h, w, d, h, w) == cost_gsa(h, w, d, 1, 1)


@settings(max_examples=100)
@given(pos, pos, st.integers(1, 64), st.integers(1, 40))
def test_combined_cost_am_gm_bound(h, w, d, k):
    assert combined_cost(h, w, d, k) >= 4 * h * w * d * math.sqrt(h * w) * (1 - 1e-12)


def test_optimal_window_reference_values():
    opt = optimal_window(224, 224)
    assert opt.nearest == 15 and abs(opt.k - 14.97) < 0.01
    assert abs(opt.area - 224) < 1e-9
    opt = optimal_window(56, 56)
    assert opt.nearest == 7 and abs(opt.k - 7.48) < 0.01


def test_brute_force_56():
    assert brute_force_window(56, 56, d=64, k_max=56) == [7, 8]


@pytest.mark.parametrize("side", [14, 28, 56, 112, 224])
def test_brute_force_agrees_with_continuous_optimum(side):
    k = optimal_window(side, side).k
    assert min(abs(b - k) for b in brute_force_window(side, side)) <= 1


def test_lsa_counter_equals_closed_form():
    p = AttentionParams(Init(0), 32, 2)
    with no_grad(), count_macs() as c:
        lsa(Tensor(np.zeros((1, 28, 21, 32), np.float32)), p, 7, 7)
    assert c.by_scope["attention"] == cost_lsa(28, 21, 32, 7, 7)


@pytest.mark.parametrize("name", ["micro-svt-s", "micro-pcpvt-s"])
@pytest.mark.parametrize("res", [(32, 32), (64, 48), (50, 70)])
def test_count_model_equals_instrumented_counter(name, res):
    model = build(micro_config(name[6:]))
    report = count_model(model, res)
    measured = measure_model(model, res)
    assert report.total_macs == measured["total"]
    assert report.attention_macs == measured["attention"]


def test_doubling_area_scales_map_counts():
    model = build(micro_config("svt-s"))
    small = {l.name: l.macs for l in count_model(model, (224, 224)).records if l.kind == "attention_map"}
    big = {l.name: l.macs for l in count_model(model, (224, 448)).records if l.kind == "attention_map"}
    for name, macs in small.items():
        blk = model.stages[int(name.split(".")[1])].blocks[int(name.split(".")[3])]
        expected = 2 if blk.kind.value == "L" else 4
        assert big[name] == expected * macs, name


def test_report_formats():
    report = count_model(build(micro_config("svt-s")), (32, 32))
    rows = list(csv.DictReader(io.StringIO(report.to_csv())))
    assert set(rows[0]) == {"layer", "macs", "params"}
    assert sum(int(r["macs"]) for r in rows if r["layer"] != "total") == report.total_macs
    obj = json.loads(report.to_json())
    assert obj["total_macs"] == report.total_macs and obj["total_params"] == report.total_params
    assert "total" in report.to_table()
    assert report.total_params == build(micro_config("svt-s")).num_parameters()


def test_svt_s_matches_reference_totals():
    checks = analysis.compare_reference("svt-s", count_model(build(builtin_config("svt-s"))))
    assert all(c.passed for c in checks), [c.line("svt-s") for c in checks]


@pytest.mark.parametrize("op", ["lsa", "gsa", "global"])
def test_scaling_bench_slopes(op):
    res = analysis.scaling_bench(op, [14, 28, 56], d=16)
    assert res.passed, res.mac_slope
    assert [r.tokens for r in res.rows] == [196, 784, 3136]


def test_scaling_bench_rejects_bad_input():
    with pytest.raises(ValueError):
        analysis.scaling_bench("swin", [14, 28])
    with pytest.raises(ValueError):
        analysis.scaling_bench("lsa", [28, 14])
