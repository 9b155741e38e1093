"""Multiply-add (MAC) accounting and attention complexity formulas.

Convention: one MAC is one FLOP unit. Convolutions cost
``out_elems * kh * kw * C_in / groups``, linear layers ``out * in`` per
token, and each attention map costs two contractions (``QK^T`` and
``AV``). Norms, activations, softmax and residual adds are not counted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from . import ops
from .attention import ATTN_SCOPE, AttentionParams, _attend, _project, gsa, lsa, mhsa
from .blocks import BlockKind
from .models import Twins
from .module import Init, Module
from .tensor import Tensor, count_macs, no_grad


def _positive(*xs: int) -> None:
    if any(int(x) != x or x < 1 for x in xs):
        raise ValueError(f"cost inputs must be positive integers, got {xs}")


def _exact(x: Fraction) -> int | Fraction:
    return x.numerator if x.denominator == 1 else x


def cost_global(H: int, W: int, d: int) -> int:
    """Attention-map MACs of full self-attention: ``2 (HW)^2 d``."""
    _positive(H, W, d)
    return 2 * (H * W) ** 2 * d


def cost_lsa(H: int, W: int, d: int, k1: int, k2: int) -> int:
    """Windowed attention: ``2 k1 k2 HW d`` (exact when k1 | H and k2 | W)."""
    _positive(H, W, d, k1, k2)
    return 2 * k1 * k2 * H * W * d


def cost_gsa(H: int, W: int, d: int, k1: int, k2: int) -> int | Fraction:
    """Sub-sampled attention with one key per ``k1 x k2`` window: ``2 (HW)^2 d / (k1 k2)``."""
    _positive(H, W, d, k1, k2)
    return _exact(Fraction(2 * (H * W) ** 2 * d, k1 * k2))


def combined_cost(H: int, W: int, d: int, k: int) -> int | Fraction:
    """One LSA plus one GSA layer with square window ``k``."""
    return _exact(Fraction(cost_lsa(H, W, d, k, k)) + Fraction(cost_gsa(H, W, d, k, k)))


class WindowOptimum(NamedTuple):
    k: float  # continuous optimum of the side length, (HW)^(1/4)
    nearest: int
    area: float  # k1 * k2 at the optimum, sqrt(HW)


def optimal_window(H: int, W: int) -> WindowOptimum:
    """Square window minimizing :func:`combined_cost`; the optimum has ``k^2 = sqrt(HW)``."""
    _positive(H, W)
    area = math.sqrt(H * W)
    k = math.sqrt(area)
    return WindowOptimum(k, max(1, round(k)), area)


def brute_force_window(H: int, W: int, d: int = 1, k_max: int | None = None) -> list[int]:
    """All integer ``k`` in ``[1, k_max]`` attaining the minimal combined cost."""
    k_max = k_max or max(H, W)
    costs = {k: combined_cost(H, W, d, k) for k in range(1, k_max + 1)}
    best = min(costs.values())
    return [k for k, c in costs.items() if c == best]


# ---------------------------------------------------------------- model accounting


@dataclass
class LayerCost:
    name: str
    macs: int
    params: int
    kind: str = "layer"


@dataclass
class CostReport:
    model: str
    resolution: tuple[int, int]
    records: list[LayerCost] = field(default_factory=list)

    def add(self, name: str, macs: int, params: int = 0, kind: str = "layer") -> None:
        self.records.append(LayerCost(name, int(macs), int(params), kind))

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.records)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    @property
    def attention_macs(self) -> int:
        return sum(r.macs for r in self.records if r.kind == "attention_map")

    @property
    def projection_macs(self) -> int:
        return self.total_macs - self.attention_macs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "macs", "params"])
        for r in self.records:
            w.writerow([r.name, r.macs, r.params])
        w.writerow(["total", self.total_macs, self.total_params])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": self.model,
                "resolution": list(self.resolution),
                "total_macs": self.total_macs,
                "total_params": self.total_params,
                "attention_macs": self.attention_macs,
                "records": [asdict(r) for r in self.records],
            },
            indent=2,
        )

    def to_table(self) -> str:
        width = max([len(r.name) for r in self.records] + [5])
        lines = [f"{'layer':<{width}}  {'macs':>15}  {'params':>12}"]
        lines.append("-" * len(lines[0]))
        for r in self.records:
            lines.append(f"{r.name:<{width}}  {r.macs:>15,}  {r.params:>12,}")
        lines.append("-" * len(lines[0]))
        lines.append(f"{'total':<{width}}  {self.total_macs:>15,}  {self.total_params:>12,}")
        lines.append(
            f"{self.model} @ {self.resolution[0]}x{self.resolution[1]}: "
            f"{self.total_params / 1e6:.2f}M params, {self.total_macs / 1e9:.3f}G MACs "
            f"(attention maps {self.attention_macs / 1e9:.3f}G)"
        )
        return "\n".join(lines)


def _nparams(*mods) -> int:
    total = 0
    for m in mods:
        total += m.num_parameters() if isinstance(m, Module) else m.size
    return total


def _attention_costs(report: CostReport, prefix: str, blk, h: int, w: int) -> None:
    p: AttentionParams = blk.attn
    c = p.dim
    n = h * w
    if blk.kind is BlockKind.LSA_BLOCK:
        k1, k2 = blk.window
        tokens = -(-h // k1) * k1 * (-(-w // k2) * k2)
        report.add(f"{prefix}.attn.qkv", tokens * c * 3 * c, p.qkv_weight.size + p.qkv_bias.size, "projection")
        report.add(f"{prefix}.attn.map", 2 * tokens * k1 * k2 * c, 0, "attention_map")
        report.add(f"{prefix}.attn.proj", tokens * c * c, p.proj_weight.size + p.proj_bias.size, "projection")
        return
    r = blk.ratio
    report.add(f"{prefix}.attn.q", n * c * c, p.q_weight.size + p.q_bias.size, "projection")
    if r > 1:
        nk = -(-h // r) * -(-w // r)
        report.add(
            f"{prefix}.attn.sr", nk * r * r * c * c, _nparams(p.sr_weight, p.sr_bias, p.sr_norm), "conv"
        )
    else:
        nk = n
    report.add(f"{prefix}.attn.kv", nk * c * 2 * c, p.kv_weight.size + p.kv_bias.size, "projection")
    report.add(f"{prefix}.attn.map", 2 * n * nk * c, 0, "attention_map")
    report.add(f"{prefix}.attn.proj", n * c * c, p.proj_weight.size + p.proj_bias.size, "projection")


def count_model(model: Twins, resolution: tuple[int, int] = (224, 224)) -> CostReport:
    """Exact per-layer MACs and parameter counts for one image of ``resolution``."""
    h, w = resolution
    report = CostReport(model.config.name, (h, w))
    for si, stage in enumerate(model.stages):
        pe = stage.patch_embed
        P = pe.patch_size
        h, w = -(-h // P), -(-w // P)
        report.add(
            f"stages.{si}.patch_embed", h * w * pe.out_dim * P * P * pe.in_dim, _nparams(pe), "conv"
        )
        c = stage.config.channels
        for bi, blk in enumerate(stage.blocks):
            prefix = f"stages.{si}.blocks.{bi}"
            report.add(f"{prefix}.norms", 0, _nparams(blk.norm1, blk.norm2), "norm")
            _attention_costs(report, prefix, blk, h, w)
            hidden = blk.mlp.fc1_weight.shape[1]
            report.add(f"{prefix}.mlp", 2 * h * w * c * hidden, _nparams(blk.mlp), "ffn")
            if bi == stage.config.peg_after_block:
                report.add(f"stages.{si}.peg", h * w * 9 * c, _nparams(stage.peg), "conv")
    head = model.head
    report.add("head", head.dim * head.num_classes, _nparams(head), "linear")
    return report


def measure_model(model: Twins, resolution: tuple[int, int], batch: int = 1, seed: int = 0) -> dict[str, int]:
    """Run a forward pass under the MAC counter; returns per-scope totals for one image."""
    rng = np.random.default_rng(seed)
    x = rng.random((batch, *resolution, 3)).astype(model.dtype)
    with no_grad(), count_macs() as counter:
        model(x)
    out = {k: v // batch for k, v in counter.by_scope.items()}
    out["total"] = counter.total // batch
    return out


# ---------------------------------------------------------------- published size targets

REFERENCE_TARGETS = {
    "pcpvt-s": (24.1, 3.8),
    "pcpvt-b": (43.8, 6.7),
    "pcpvt-l": (60.9, 9.8),
    "svt-s": (24.0, 2.9),
    "svt-b": (56.0, 8.6),
    "svt-l": (99.2, 15.1),
}
PARAM_TOL = {"pcpvt": 0.02, "svt": 0.10}
FLOP_TOL = 0.15


@dataclass
class TargetCheck:
    quantity: str
    measured: float
    target: float
    tolerance: float

    @property
    def rel_error(self) -> float:
        return self.measured / self.target - 1.0

    @property
    def passed(self) -> bool:
        return abs(self.rel_error) <= self.tolerance

    def line(self, name: str) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {name} {self.quantity}: {self.measured:.3f} vs {self.target} "
            f"({self.rel_error:+.2%}, tol ±{self.tolerance:.0%})"
        )


def compare_reference(name: str, report: CostReport) -> list[TargetCheck]:
    params_m, flops_g = REFERENCE_TARGETS[name]
    family = name.split("-")[0]
    return [
        TargetCheck("params (M)", report.total_params / 1e6, params_m, PARAM_TOL[family]),
        TargetCheck("FLOPs (G)", report.total_macs / 1e9, flops_g, FLOP_TOL),
    ]


# ---------------------------------------------------------------- scaling bench

EXPECTED_SLOPE = {"lsa": 1.0, "global": 2.0, "gsa": 2.0}
SLOPE_TOL = 0.05


@dataclass
class BenchRow:
    side: int
    tokens: int
    seconds: float
    attention_macs: int
    total_macs: int


@dataclass
class BenchResult:
    op: str
    dim: int
    window: int
    rows: list[BenchRow]

    @property
    def mac_slope(self) -> float:
        return loglog_slope([r.tokens for r in self.rows], [r.attention_macs for r in self.rows])

    @property
    def time_slope(self) -> float:
        return loglog_slope([r.tokens for r in self.rows], [max(r.seconds, 1e-9) for r in self.rows])

    @property
    def passed(self) -> bool:
        return abs(self.mac_slope - EXPECTED_SLOPE[self.op]) <= SLOPE_TOL

    def to_table(self) -> str:
        lines = [f"{'HW':>8}  {'seconds':>9}  {'attn MACs':>16}  {'total MACs':>16}"]
        for r in self.rows:
            lines.append(f"{r.tokens:>8}  {r.seconds:>9.4f}  {r.attention_macs:>16,}  {r.total_macs:>16,}")
        return "\n".join(lines)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def _global_chunked(x, p: AttentionParams, chunk: int):
    b, n, c = x.shape
    q, k, v = _project(x, p)
    outs = []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        qc = ops.crop(q, ((0, b), (start, stop), (0, c)))
        outs.append(_attend(qc, k, v, p)[0])
    out = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
    return ops.linear(out, p.proj_weight, p.proj_bias)


def scaling_bench(
    op: str,
    sizes: Sequence[int],
    d: int = 64,
    k: int = 7,
    heads: int = 1,
    seed: int = 0,
    query_chunk: int = 1024,
) -> BenchResult:
    """Time one attention op on square ``side x side`` maps and count its MACs."""
    if op not in EXPECTED_SLOPE:
        raise ValueError(f"unknown op {op!r}")
    if list(sizes) != sorted(set(sizes)):
        raise ValueError("sizes must be strictly increasing")
    rng = np.random.default_rng(seed)
    init = Init(seed)
    p = AttentionParams(init, d, heads, fused_qkv=op == "lsa", ratio=k if op == "gsa" else 1)
    rows = []
    for side in sizes:
        x = Tensor(rng.standard_normal((1, side, side, d)).astype(np.float32))
        with no_grad(), count_macs() as counter:
            t0 = time.perf_counter()
            if op == "lsa":
                lsa(x, p, k, k)
            elif op == "gsa":
                gsa(x, p, k)
            else:
                tokens = ops.reshape(x, (1, side * side, d))
                if side * side <= query_chunk:
                    mhsa(tokens, p)
                else:
                    _global_chunked(tokens, p, query_chunk)
            dt = time.perf_counter() - t0
        rows.append(BenchRow(side, side * side, dt, counter.by_scope.get(ATTN_SCOPE, 0), counter.total))
    return BenchResult(op, d, k, rows)
