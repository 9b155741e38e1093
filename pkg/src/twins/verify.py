"""Seeded oracle and property checks; :func:`run_all` is the single gate."""

from __future__ import annotations

import functools
import json
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import analysis, checkpoint, oracles, ops
from .attention import AttentionParams, gsa, lsa, mhsa, sra
from .blocks import BlockKind, EncoderBlock, HeadParams, classify_head, encoder_block
from .models import (
    BUILTIN_NAMES,
    ModelConfig,
    Stage,
    StageConfig,
    build,
    builtin_config,
    forward,
    stage_grids,
)
from .module import Init, Module
from .tensor import Tensor, backward, no_grad

ORACLE_TOL = 1e-10
GRAD_TOL = 1e-5
FD_STEP = 1e-5


@dataclass
class CheckResult:
    check: str
    status: str
    measured: float
    tolerance: float
    seed: int | None = None
    detail: str = field(default="", compare=False)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("detail")
        return d

    def line(self) -> str:
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{self.status.upper()}] {self.check}: measured={self.measured:.3g} tol={self.tolerance:.3g}{extra}"


def _result(name: str, measured: float, tol: float, seed=None, detail: str = "", ok: bool | None = None) -> CheckResult:
    ok = measured <= tol if ok is None else ok
    return CheckResult(name, "pass" if ok else "fail", float(measured), float(tol), seed, detail)


def _rng(seed: int, stream: str) -> np.random.Generator:
    # one independent stream per check, reproducible from the printed seed
    return np.random.default_rng([seed, *stream.encode()])


def _random_attention_case(rng, max_side=8):
    heads = int(rng.integers(1, 3))
    dim = heads * int(rng.integers(2, 9))
    h, w = (int(v) for v in rng.integers(1, max_side + 1, size=2))
    bsz = int(rng.integers(1, 3))
    return bsz, h, w, dim, heads


def check_lsa_oracle(seed: int = 0, instances: int = 100) -> CheckResult:
    """LSA vs block-diagonal-masked global attention on random small maps."""
    rng = _rng(seed, "lsa")
    worst = 0.0
    init = Init(seed, dtype=np.float64, std=0.3)
    cases = [(1, 4, 4, 8, 2, 2, 2), (1, 5, 5, 8, 2, 2, 2)]
    for _ in range(instances):
        bsz, h, w, dim, heads = _random_attention_case(rng)
        k1, k2 = int(rng.integers(1, h + 2)), int(rng.integers(1, w + 2))
        cases.append((bsz, h, w, dim, heads, k1, k2))
    for bsz, h, w, dim, heads, k1, k2 in cases:
        p = AttentionParams(init, dim, heads)
        x = rng.standard_normal((bsz, h, w, dim))
        got = lsa(Tensor(x), p, k1, k2).data
        worst = max(worst, float(np.abs(got - oracles.lsa_ref(x, p, k1, k2)).max()))
    # single window bypasses masking entirely and must equal mhsa bit for bit
    bit_equal = True
    for _ in range(10):
        bsz, h, w, dim, heads = _random_attention_case(rng)
        p = AttentionParams(init, dim, heads)
        x = Tensor(rng.standard_normal((bsz, h, w, dim)))
        ref = mhsa(ops.reshape(x, (bsz, h * w, dim)), p).data.reshape(bsz, h, w, dim)
        bit_equal &= np.array_equal(lsa(x, p, h, w).data, ref)
    return _result(
        "lsa_oracle", worst, ORACLE_TOL, seed, f"{len(cases)} instances, single-window bit-equal={bit_equal}",
        ok=worst < ORACLE_TOL and bit_equal,
    )


def _reduced_oracle(name: str, op: Callable, seed: int, instances: int) -> CheckResult:
    rng = _rng(seed, name)
    init = Init(seed, dtype=np.float64, std=0.3)
    worst = 0.0
    cases = [(1, 4, 4, 8, 2, 2)]
    for _ in range(instances):
        bsz, h, w, dim, heads = _random_attention_case(rng)
        cases.append((bsz, h, w, dim, heads, int(rng.integers(1, max(h, w) + 1))))
    for bsz, h, w, dim, heads, r in cases:
        p = AttentionParams(init, dim, heads, fused_qkv=False, ratio=r)
        x = rng.standard_normal((bsz, h, w, dim))
        got = op(Tensor(x), p, r).data
        worst = max(worst, float(np.abs(got - oracles.gsa_ref(x, p, r)).max()))
    bit_equal = True
    for _ in range(10):
        bsz, h, w, dim, heads = _random_attention_case(rng)
        p = AttentionParams(init, dim, heads, fused_qkv=False, ratio=1)
        x = Tensor(rng.standard_normal((bsz, h, w, dim)))
        ref = mhsa(ops.reshape(x, (bsz, h * w, dim)), p).data.reshape(bsz, h, w, dim)
        bit_equal &= np.array_equal(op(x, p, 1).data, ref)
    return _result(
        f"{name}_oracle", worst, ORACLE_TOL, seed, f"{len(cases)} instances, r=1 bit-equal={bit_equal}",
        ok=worst < ORACLE_TOL and bit_equal,
    )


def check_gsa_oracle(seed: int = 0, instances: int = 100) -> CheckResult:
    return _reduced_oracle("gsa", gsa, seed, instances)


def check_sra_oracle(seed: int = 0, instances: int = 100) -> CheckResult:
    return _reduced_oracle("sra", sra, seed, instances)


# ---------------------------------------------------------------- gradients


def gradcheck(
    loss_fn: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    h: float = FD_STEP,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Relative error of autodiff vs central differences for each named tensor."""
    for t in tensors.values():
        t.grad = None
    backward(loss_fn())
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    def f() -> float:
        with no_grad():
            return float(loss_fn().data)

    errors = {}
    for name, t in tensors.items():
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = (rng or np.random.default_rng(0)).choice(t.size, size=max_probes, replace=False)
        numeric = oracles.central_difference(f, t.data, h=h, indices=idx)
        errors[name] = oracles.rel_error(analytic[name], numeric)
    return errors


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(w)))


class _TwoStageNet(Module):
    """Two stages plus head; small enough for finite differences."""

    def __init__(self, init: Init, num_classes: int = 3):
        self.stages = [
            Stage(init, StageConfig(2, 8, 2, 2, 2, ("L", "G"), lsa_window=(3, 3), reduction_ratio=2), 3),
            Stage(init, StageConfig(2, 8, 2, 2, 2, ("S", "G"), reduction_ratio=2), 8),
        ]
        self.head = HeadParams(init, 8, num_classes)

    def __call__(self, x: Tensor) -> Tensor:
        for s in self.stages:
            x = s(x)
        return classify_head(x, self.head)


def check_gradients(seed: int = 0) -> CheckResult:
    """Finite differences through each block kind and a two-stage micro model."""
    rng = _rng(seed, "grad")
    init = Init(seed, dtype=np.float64, std=0.3)
    worst, details = 0.0, []
    block_cases = [
        ("L(3x3 window, padded)", BlockKind.LSA_BLOCK, dict(window=(3, 3))),
        ("G(r=2)", BlockKind.GSA_BLOCK, dict(ratio=2)),
        ("G(r=1)", BlockKind.GSA_BLOCK, dict(ratio=1)),
        ("S(r=2)", BlockKind.SRA_BLOCK, dict(ratio=2)),
    ]
    for label, kind, kw in block_cases:
        blk = EncoderBlock(init, kind, 8, 2, 2, **kw)
        x = Tensor(rng.standard_normal((2, 5, 5, 8)), requires_grad=True)
        wsum = rng.standard_normal((2, 5, 5, 8))
        tensors = {"x": x, **dict(blk.named_parameters())}
        errs = gradcheck(lambda: _weighted_sum(encoder_block(x, blk), wsum), tensors)
        e = max(errs.values())
        worst = max(worst, e)
        details.append(f"{label}={e:.1e}")

    net = _TwoStageNet(init)
    x = Tensor(rng.standard_normal((2, 12, 12, 3)), requires_grad=True)
    labels = np.array([0, 2])
    tensors = {"x": x, **dict(net.named_parameters())}
    errs = gradcheck(lambda: ops.cross_entropy_loss(net(x), labels), tensors, max_probes=6, rng=rng)
    e = max(errs.values())
    worst = max(worst, e)
    details.append(f"two-stage={e:.1e}")

    # zero sub-layer weights: the block is the identity and blocks gradient to q/k/v
    blk = EncoderBlock(init, BlockKind.LSA_BLOCK, 8, 2, 2, window=(2, 2))
    for name, p in blk.named_parameters():
        if "norm" not in name:
            p.data = np.zeros_like(p.data)
    x = Tensor(rng.standard_normal((1, 4, 4, 8)), requires_grad=True)
    wsum = rng.standard_normal((1, 4, 4, 8))
    backward(_weighted_sum(encoder_block(x, blk), wsum))
    zero_ok = np.array_equal(blk.attn.qkv_weight.grad, np.zeros_like(wsum, shape=(8, 24))) and np.allclose(
        x.grad, wsum, rtol=0, atol=1e-15
    )
    details.append(f"zero-block identity={zero_ok}")
    return _result("gradients", worst, GRAD_TOL, seed, ", ".join(details), ok=worst < GRAD_TOL and zero_ok)


# ---------------------------------------------------------------- structure

ABLATION_ROWS = {
    "(L, L, L)": ("L", "L", "L", "L"),
    "(L, LLG, LLG, G)": ("L", "LLG", "LLG", "G"),
    "(L, LG, LG, G)": ("L", "LG", "LG", "G"),
    "(L, L, L, G)": ("L", "L", "L", "G"),
    "(G, G, G, G)": ("G", "G", "G", "G"),
}
PATTERN_DEPTHS = (2, 2, 6, 2)


def pattern_config(units: tuple[str, ...], depths=PATTERN_DEPTHS, channels=(16, 32, 64, 128)) -> ModelConfig:
    """Small model whose stage ``i`` repeats ``units[i]`` to fill its depth."""
    stages = []
    for i, (unit, d, c) in enumerate(zip(units, depths, channels)):
        pattern = tuple((unit * d)[:d])
        stages.append(
            StageConfig(
                patch_size=(4, 2, 2, 2)[i],
                channels=c,
                depth=d,
                heads=max(1, c // 32),
                mlp_ratio=4,
                pattern=pattern,
                lsa_window=(7, 7),
                reduction_ratio=(8, 4, 2, 1)[i],
            )
        )
    return ModelConfig(name="pattern-" + "-".join(units), stages=stages, num_classes=10)


def _gsa_param_count(model) -> int:
    return sum(
        blk.attn.num_parameters()
        for st in model.stages
        for blk in st.blocks
        if blk.kind is not BlockKind.LSA_BLOCK
    )


def check_block_patterns() -> CheckResult:
    rows = []
    for label, units in ABLATION_ROWS.items():
        model = build(pattern_config(units), seed=0)
        n_global = sum(blk.kind is not BlockKind.LSA_BLOCK for st in model.stages for blk in st.blocks)
        rows.append((n_global, model.num_parameters(), label, _gsa_param_count(model)))
    rows.sort()
    monotone = all(a[1] <= b[1] for a, b in zip(rows, rows[1:]))
    all_local_zero = dict((r[2], r[3]) for r in rows)["(L, L, L)"] == 0
    all_g = build(pattern_config(ABLATION_ROWS["(G, G, G, G)"]), seed=0).num_parameters()
    all_s = build(pattern_config(("S", "S", "S", "S")), seed=0).num_parameters()
    ok = monotone and all_local_zero and all_g == all_s
    detail = "; ".join(f"{r[2]}: {r[0]} global blocks, {r[1]:,} params" for r in rows)
    return _result("block_patterns", 0.0 if ok else 1.0, 0.0, None, detail, ok=ok)


RESOLUTIONS = ((224, 224), (256, 256), (448, 448), (224, 320))


def check_resolution_polymorphism(names=("svt-s", "pcpvt-s"), resolutions=RESOLUTIONS) -> CheckResult:
    failures = []
    for name in names:
        cfg = builtin_config(name)
        model = build(cfg, seed=0)
        for h, w in resolutions:
            x = np.random.default_rng(0).random((1, h, w, 3), dtype=np.float32)
            with no_grad():
                logits, feats = forward(model, x, return_features=True)
            grids = [f.shape[1:3] for f in feats]
            if logits.shape != (1, cfg.num_classes) or grids != stage_grids(cfg, h, w):
                failures.append(f"{name}@{h}x{w}: grids {grids}")
    return _result(
        "resolution_polymorphism", len(failures), 0, None,
        "; ".join(failures) or f"{len(names) * len(resolutions)} runs ok", ok=not failures,
    )


# ---------------------------------------------------------------- analysis-backed checks


@functools.lru_cache(maxsize=None)
def _reference_checks(name: str) -> tuple[analysis.TargetCheck, ...]:
    return tuple(analysis.compare_reference(name, analysis.count_model(build(builtin_config(name)))))


def check_param_counts() -> CheckResult:
    worst, lines = 0.0, []
    for name in BUILTIN_NAMES:
        chk = _reference_checks(name)[0]
        worst = max(worst, abs(chk.rel_error) / chk.tolerance)
        lines.append(f"{name}={chk.measured:.2f}M")
    return _result("param_counts", worst, 1.0, None, ", ".join(lines))


def check_flops() -> CheckResult:
    worst, lines = 0.0, []
    for name in BUILTIN_NAMES:
        chk = _reference_checks(name)[1]
        worst = max(worst, abs(chk.rel_error) / chk.tolerance)
        lines.append(f"{name}={chk.measured:.2f}G")
    return _result("flops_224", worst, 1.0, None, ", ".join(lines))


def check_optimal_window() -> CheckResult:
    ok = analysis.optimal_window(224, 224).nearest == 15 and analysis.optimal_window(56, 56).nearest == 7
    worst = 0.0
    for side in (14, 28, 56, 112, 224):
        k = analysis.optimal_window(side, side).k
        best = analysis.brute_force_window(side, side)
        worst = max(worst, min(abs(b - k) for b in best))
    return _result("optimal_window", worst, 1.0, None, "224->15, 56->7" if ok else "rounding mismatch", ok=ok and worst <= 1)


def check_scaling(sides=(28, 56, 112)) -> CheckResult:
    worst, lines = 0.0, []
    for op in ("lsa", "global"):
        res = analysis.scaling_bench(op, sides)
        dev = abs(res.mac_slope - analysis.EXPECTED_SLOPE[op])
        worst = max(worst, dev)
        lines.append(f"{op} slope={res.mac_slope:.3f} (time {res.time_slope:.2f})")
    return _result("scaling_slopes", worst, analysis.SLOPE_TOL, None, ", ".join(lines))


def check_checkpoint_roundtrip(seed: int = 0) -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "svt.twns"
        model = build(builtin_config("svt-s"), seed=seed)
        checkpoint.save_checkpoint(model, path)
        loaded = checkpoint.load_checkpoint(path, builtin_config("svt-s"))
        exact = all(np.array_equal(loaded[k], v) and loaded[k].dtype == v.dtype for k, v in model.state_dict().items())
        rejected = False
        try:
            checkpoint.load_checkpoint(path, builtin_config("pcpvt-s"))
        except checkpoint.ShapeMismatchError:
            rejected = True
    return _result("checkpoint_roundtrip", 0.0 if exact and rejected else 1.0, 0.0, seed,
                   f"bit-exact={exact}, cross-config rejected={rejected}", ok=exact and rejected)


def run_all(seed: int = 0, log: Callable[[str], None] | None = None) -> list[CheckResult]:
    checks = [
        lambda: check_lsa_oracle(seed),
        lambda: check_gsa_oracle(seed),
        lambda: check_sra_oracle(seed),
        lambda: check_gradients(seed),
        check_block_patterns,
        check_resolution_polymorphism,
        check_param_counts,
        check_flops,
        check_optimal_window,
        check_scaling,
        lambda: check_checkpoint_roundtrip(seed),
    ]
    results = []
    for fn in checks:
        t0 = time.perf_counter()
        res = fn()
        results.append(res)
        if log:
            log(f"{res.line()} [{time.perf_counter() - t0:.1f}s]")
    return results


def summary_json(results: list[CheckResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)
