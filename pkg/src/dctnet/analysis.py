"""Parameter and multiply-accumulate accounting for model specs.

Counting conventions, applied uniformly:

  * A KxK convolution producing an NxN map costs K^2 * N^2 * C_in * C_out
    MACs and holds K^2 * C_in * C_out parameters (no bias).
  * Batch normalization costs N^2 * C MACs (one scale per element) and
    holds 2C parameters; running statistics are not parameters.
  * The classifier costs C_in * classes MACs and holds
    C_in * classes + classes parameters.
  * ReLU, pooling, residual adds, and thresholding cost zero MACs.
  * A spectral perceptron with P pods on C channels at size N costs

        (5 N^2 log2 N + (2 + 3P) N^2 / 3 - 6N + 124/3) * C  +  P N^2 C^2

    MACs; with differing channel counts the transform halves split as

        f(N) * (C_in + C_out) + P N^2 C_in + P N^2 C_in C_out,
        f(N) = 5/2 N^2 log2 N + N^2 / 3 - 6N + 62/3.

    Power-of-two sizes evaluate exactly in rational arithmetic; other
    sizes evaluate in floating point and round once per layer.
  * Downsampling by coefficient truncation costs one forward transform at
    the full size plus one inverse at the half size, f(N) + f(N/2) per
    channel.

Parameter counts per pod: N^2 scaling multipliers, C_in * C_out mixing
weights, and either N^2 thresholds or C_out biases depending on the
nonlinearity.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .models import Model, ModelSpec, StageSpec, canonical_spec

__all__ = [
    "CostRow",
    "CostReport",
    "conv_macs",
    "dct_perceptron_macs",
    "dct_perceptron_params",
    "dct_transform_adds",
    "cost_report",
    "count_params",
    "count_macs",
    "count_model_params",
    "percent_change",
]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def dct_transform_adds(n: int):
    """Per-channel cost of one 2D transform, f(N); Fraction when exact."""
    if _is_pow2(n):
        log2n = n.bit_length() - 1
        return Fraction(5 * n * n * log2n, 2) + Fraction(n * n + 62, 3) - 6 * n
    return 5 / 2 * n * n * math.log2(n) + (n * n + 62) / 3 - 6 * n


def conv_macs(ksize: int, n_out: int, c_in: int, c_out: int) -> int:
    return ksize * ksize * n_out * n_out * c_in * c_out


def dct_perceptron_macs(n: int, c_in: int, c_out: int, pods: int) -> int:
    if c_in == c_out:
        c = c_in
        if _is_pow2(n):
            log2n = n.bit_length() - 1
            total = (
                Fraction(5 * n * n * log2n)
                + Fraction((2 + 3 * pods) * n * n + 124, 3)
                - 6 * n
            ) * c + pods * n * n * c * c
            assert total.denominator == 1
            return int(total)
        total = (
            5 * n * n * math.log2(n) + (2 + 3 * pods) * n * n / 3 - 6 * n + 124 / 3
        ) * c + pods * n * n * c * c
        return round(total)
    f = dct_transform_adds(n)
    total = f * (c_in + c_out) + pods * n * n * c_in + pods * n * n * c_in * c_out
    if isinstance(total, Fraction):
        assert total.denominator == 1
        return int(total)
    return round(total)


def dct_perceptron_params(n: int, c_in: int, c_out: int, pods: int, nonlinearity: str) -> int:
    per_pod = n * n + c_in * c_out
    per_pod += c_out if nonlinearity == "relu_bias" else n * n
    return pods * per_pod


def _downsample_macs(n_in: int, channels: int) -> int:
    total = (dct_transform_adds(n_in) + dct_transform_adds(n_in // 2)) * channels
    if isinstance(total, Fraction):
        assert total.denominator == 1
        return int(total)
    return round(total)


@dataclass
class CostRow:
    path: str
    kind: str
    params: int
    macs: int


@dataclass
class CostReport:
    name: str
    rows: list[CostRow]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def to_table(self) -> str:
        width = max(len(r.path) for r in self.rows) + 2
        kw = max(len(r.kind) for r in self.rows) + 2
        lines = [f"{self.name}", f"{'layer':<{width}}{'kind':<{kw}}{'params':>12}{'macs':>16}"]
        for r in self.rows:
            lines.append(f"{r.path:<{width}}{r.kind:<{kw}}{r.params:>12,}{r.macs:>16,}")
        lines.append(f"{'total':<{width}}{'':<{kw}}{self.total_params:>12,}{self.total_macs:>16,}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["layer", "kind", "params", "macs"])
        for r in self.rows:
            w.writerow([r.path, r.kind, r.params, r.macs])
        w.writerow(["total", "", self.total_params, self.total_macs])
        return buf.getvalue()

    def to_json(self) -> str:
        d = {
            "name": self.name,
            "rows": [vars(r) for r in self.rows],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }
        return json.dumps(d, indent=2) + "\n"


def percent_change(value: int, baseline: int) -> str:
    """Relative change against a baseline, e.g. '44.4% lower'."""
    if baseline == 0:
        raise ValueError("baseline is zero")
    delta = (baseline - value) / baseline * 100.0
    word = "lower" if delta >= 0 else "higher"
    return f"{abs(delta):.1f}% {word}"


def _stage_rows(rows, si, stage: StageSpec, c_in, n_in):
    n = n_in
    for bi in range(stage.blocks):
        stride = stage.stride if bi == 0 else 1
        n_out = n // stride
        prefix = f"stage{si}.block{bi}"
        pods = stage.effective_pods()
        if stage.block == "dct_all":
            c_out = stage.channels
            if stride == 2:
                rows.append(CostRow(f"{prefix}.down", "dct_downsample", 0, _downsample_macs(n, c_in)))
            rows.append(
                CostRow(
                    f"{prefix}.unit1",
                    f"dctp{pods}",
                    dct_perceptron_params(n_out, c_in, c_out, pods, stage.nonlinearity),
                    dct_perceptron_macs(n_out, c_in, c_out, pods),
                )
            )
            rows.append(CostRow(f"{prefix}.bn1", "bn", 2 * c_out, n_out * n_out * c_out))
            rows.append(
                CostRow(
                    f"{prefix}.unit2",
                    f"dctp{pods}",
                    dct_perceptron_params(n_out, c_out, c_out, pods, stage.nonlinearity),
                    dct_perceptron_macs(n_out, c_out, c_out, pods),
                )
            )
            rows.append(CostRow(f"{prefix}.bn2", "bn", 2 * c_out, n_out * n_out * c_out))
            if stride != 1 or c_in != c_out:
                rows.append(
                    CostRow(
                        f"{prefix}.proj",
                        "projection",
                        c_in * c_out + 2 * c_out,
                        conv_macs(1, n_out, c_in, c_out) + n_out * n_out * c_out,
                    )
                )
        elif stage.is_bottleneck():
            c_mid = stage.channels
            c_out = 4 * c_mid
            spectral = stage.is_spectral() and bi != 0
            rows.append(CostRow(f"{prefix}.conv1", "conv1x1", c_in * c_mid, conv_macs(1, n, c_in, c_mid)))
            rows.append(CostRow(f"{prefix}.bn1", "bn", 2 * c_mid, n * n * c_mid))
            if spectral:
                rows.append(
                    CostRow(
                        f"{prefix}.unit2",
                        f"dctp{pods}",
                        dct_perceptron_params(n_out, c_mid, c_mid, pods, stage.nonlinearity),
                        dct_perceptron_macs(n_out, c_mid, c_mid, pods),
                    )
                )
            else:
                rows.append(
                    CostRow(f"{prefix}.unit2", "conv3x3", 9 * c_mid * c_mid, conv_macs(3, n_out, c_mid, c_mid))
                )
            rows.append(CostRow(f"{prefix}.bn2", "bn", 2 * c_mid, n_out * n_out * c_mid))
            rows.append(CostRow(f"{prefix}.conv3", "conv1x1", c_mid * c_out, conv_macs(1, n_out, c_mid, c_out)))
            rows.append(CostRow(f"{prefix}.bn3", "bn", 2 * c_out, n_out * n_out * c_out))
            if stride != 1 or c_in != c_out:
                rows.append(
                    CostRow(
                        f"{prefix}.proj",
                        "projection",
                        c_in * c_out + 2 * c_out,
                        conv_macs(1, n_out, c_in, c_out) + n_out * n_out * c_out,
                    )
                )
        else:
            c_out = stage.channels
            spectral = stage.is_spectral()
            rows.append(
                CostRow(f"{prefix}.conv1", "conv3x3", 9 * c_in * c_out, conv_macs(3, n_out, c_in, c_out))
            )
            rows.append(CostRow(f"{prefix}.bn1", "bn", 2 * c_out, n_out * n_out * c_out))
            if spectral:
                rows.append(
                    CostRow(
                        f"{prefix}.unit2",
                        f"dctp{pods}",
                        dct_perceptron_params(n_out, c_out, c_out, pods, stage.nonlinearity),
                        dct_perceptron_macs(n_out, c_out, c_out, pods),
                    )
                )
            else:
                rows.append(
                    CostRow(f"{prefix}.unit2", "conv3x3", 9 * c_out * c_out, conv_macs(3, n_out, c_out, c_out))
                )
            rows.append(CostRow(f"{prefix}.bn2", "bn", 2 * c_out, n_out * n_out * c_out))
            if stride != 1 or c_in != c_out:
                rows.append(
                    CostRow(
                        f"{prefix}.proj",
                        "projection",
                        c_in * c_out + 2 * c_out,
                        conv_macs(1, n_out, c_in, c_out) + n_out * n_out * c_out,
                    )
                )
        c_in = c_out
        n = n_out
    return c_in, n


def cost_report(spec: ModelSpec | str) -> CostReport:
    if isinstance(spec, str):
        spec = canonical_spec(spec)
    rows: list[CostRow] = []
    c = spec.stem_channels
    if spec.stem_kind == "conv3":
        n = spec.input_size
        rows.append(CostRow("stem.conv", "conv3x3", 9 * spec.input_channels * c, conv_macs(3, n, spec.input_channels, c)))
    else:
        n = spec.input_size // 2
        rows.append(CostRow("stem.conv", "conv7x7", 49 * spec.input_channels * c, conv_macs(7, n, spec.input_channels, c)))
    rows.append(CostRow("stem.bn", "bn", 2 * c, n * n * c))
    if spec.stem_kind == "conv7_pool":
        n //= 2

    c_in = c
    for si, stage in enumerate(spec.stages, start=1):
        c_in, n = _stage_rows(rows, si, stage, c_in, n)

    if spec.extra_dctp:
        rows.append(
            CostRow(
                "extra.dctp",
                "dctp1",
                dct_perceptron_params(n, c_in, c_in, 1, "soft_threshold"),
                dct_perceptron_macs(n, c_in, c_in, 1),
            )
        )
        rows.append(CostRow("extra.bn", "bn", 2 * c_in, n * n * c_in))
    rows.append(CostRow("head.linear", "linear", c_in * spec.classes + spec.classes, c_in * spec.classes))
    return CostReport(spec.name, rows)


def count_params(spec: ModelSpec | str) -> int:
    return cost_report(spec).total_params


def count_macs(spec: ModelSpec | str) -> int:
    return cost_report(spec).total_macs


def count_model_params(model: Model) -> int:
    """Independent count from the realized parameter registry."""
    return sum(p.data.size for _, p in model.named_parameters())
