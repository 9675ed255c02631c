"""Model descriptions, their JSON form, and the builder that realizes them.

A ModelSpec is a compact, validated description: input geometry, a stem, a
list of homogeneous stages, a classifier, and an optional extra spectral
layer before pooling.  Replacement placement is a builder rule, not a
per-block flag:

  * v1 stages (basic blocks): the second 3x3 unit of EVERY block becomes a
    DCT perceptron.
  * v2 stages (bottlenecks): the middle 3x3 of every block EXCEPT the first
    block of the stage becomes a DCT perceptron (the first block keeps the
    conv that carries the stage's stride).
  * dct_all stages: both units of every block are spectral, and stride-2
    positions downsample by coefficient truncation.

The canonical catalog covers the plain and spectral residual families at
depths 20, 18, and 50, their multi-pod variants, and the "+1 spectral layer
before pooling" versions, plus reduced single-stage specs for desk-scale
training runs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import tensor as T
from .layers import (
    BasicBlock,
    BatchNorm2d,
    BottleneckBlock,
    Conv2d,
    DctAllBlock,
    DctPerceptron,
    Linear,
    Module,
)
from .perceptron import NONLINEARITIES, DctPerceptronConfig

__all__ = [
    "ModelSpec",
    "StageSpec",
    "load_spec",
    "spec_schema",
    "validate_spec_dict",
    "canonical_names",
    "canonical_spec",
    "insert_extra_dctp",
    "build_model",
    "Model",
    "inventory",
]

BLOCK_KINDS = ("conv_v1", "dctp_v1", "tripod_v1", "conv_v2", "dctp_v2", "tripod_v2", "dct_all")
STEM_KINDS = ("conv3", "conv7_pool")
_DEFAULT_PODS = {"dctp_v1": 1, "dctp_v2": 1, "tripod_v1": 3, "tripod_v2": 3, "dct_all": 1}


@dataclass
class StageSpec:
    block: str
    channels: int
    blocks: int
    stride: int
    size: int
    pods: int | None = None
    shortcut: bool | None = None
    nonlinearity: str = "soft_threshold"

    def effective_pods(self) -> int:
        if self.pods is not None:
            return self.pods
        return _DEFAULT_PODS.get(self.block, 1)

    def is_spectral(self) -> bool:
        return self.block not in ("conv_v1", "conv_v2")

    def is_bottleneck(self) -> bool:
        return self.block in ("conv_v2", "dctp_v2", "tripod_v2")


@dataclass
class ModelSpec:
    name: str
    input_channels: int
    input_size: int
    classes: int
    stem_kind: str
    stem_channels: int
    stages: list[StageSpec] = field(default_factory=list)
    extra_dctp: bool = False

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "input": {"channels": self.input_channels, "size": self.input_size},
            "classes": self.classes,
            "stem": {"kind": self.stem_kind, "channels": self.stem_channels},
            "stages": [],
            "extra_dctp": self.extra_dctp,
        }
        for s in self.stages:
            row = {
                "block": s.block,
                "channels": s.channels,
                "blocks": s.blocks,
                "stride": s.stride,
                "size": s.size,
            }
            if s.pods is not None:
                row["pods"] = s.pods
            if s.shortcut is not None:
                row["shortcut"] = s.shortcut
            if s.nonlinearity != "soft_threshold":
                row["nonlinearity"] = s.nonlinearity
            d["stages"].append(row)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        validate_spec_dict(d)
        stages = [
            StageSpec(
                block=s["block"],
                channels=s["channels"],
                blocks=s["blocks"],
                stride=s["stride"],
                size=s["size"],
                pods=s.get("pods"),
                shortcut=s.get("shortcut"),
                nonlinearity=s.get("nonlinearity", "soft_threshold"),
            )
            for s in d["stages"]
        ]
        spec = cls(
            name=d["name"],
            input_channels=d["input"]["channels"],
            input_size=d["input"]["size"],
            classes=d["classes"],
            stem_kind=d["stem"]["kind"],
            stem_channels=d["stem"]["channels"],
            stages=stages,
            extra_dctp=d.get("extra_dctp", False),
        )
        spec.check_geometry()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def canonical_json(self) -> str:
        """Stable serialization used for hashing into checkpoints."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def check_geometry(self):
        """Sizes must follow from the input size, the stem, and the strides."""
        size = self.input_size
        if self.stem_kind == "conv7_pool":
            if size % 4:
                raise ValueError(f"stem downsamples by 4, input size {size} does not divide")
            size //= 4
        for i, s in enumerate(self.stages):
            if size % s.stride:
                raise ValueError(f"stage {i}: size {size} not divisible by stride {s.stride}")
            size //= s.stride
            if s.size != size:
                raise ValueError(f"stage {i}: declared size {s.size}, geometry gives {size}")
            if s.block == "dct_all" and s.shortcut is not None:
                raise ValueError("dct_all stages always use the default inner-shortcut rule")

    def final_channels(self) -> int:
        last = self.stages[-1]
        return last.channels * (4 if last.is_bottleneck() else 1)

    def final_size(self) -> int:
        return self.stages[-1].size


_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Model specification",
    "type": "object",
    "required": ["name", "input", "classes", "stem", "stages"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "input": {
            "type": "object",
            "required": ["channels", "size"],
            "additionalProperties": False,
            "properties": {
                "channels": {"type": "integer", "minimum": 1},
                "size": {"type": "integer", "minimum": 1},
            },
        },
        "classes": {"type": "integer", "minimum": 2},
        "stem": {
            "type": "object",
            "required": ["kind", "channels"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(STEM_KINDS)},
                "channels": {"type": "integer", "minimum": 1},
            },
        },
        "stages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["block", "channels", "blocks", "stride", "size"],
                "additionalProperties": False,
                "properties": {
                    "block": {"enum": list(BLOCK_KINDS)},
                    "channels": {"type": "integer", "minimum": 1},
                    "blocks": {"type": "integer", "minimum": 1},
                    "stride": {"enum": [1, 2]},
                    "size": {"type": "integer", "minimum": 1},
                    "pods": {"type": "integer", "minimum": 1},
                    "shortcut": {"type": ["boolean", "null"]},
                    "nonlinearity": {"enum": list(NONLINEARITIES)},
                },
            },
        },
        "extra_dctp": {"type": "boolean"},
    },
}


def spec_schema() -> dict:
    return copy.deepcopy(_SCHEMA)


def validate_spec_dict(d: dict):
    jsonschema.validate(d, _SCHEMA)


def load_spec(path) -> ModelSpec:
    with open(path) as f:
        return ModelSpec.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# canonical catalog


def _cifar(name, block, pods=None, shortcut=None, nonlinearity="soft_threshold", stages=3):
    sizes = [32, 16, 8]
    chans = [16, 32, 64]
    strides = [1, 2, 2]
    st = [
        StageSpec(block, chans[i], 3, strides[i], sizes[i], pods=pods, shortcut=shortcut, nonlinearity=nonlinearity)
        for i in range(stages)
    ]
    return ModelSpec(name, 3, 32, 10, "conv3", 16, st)


def _imagenet(name, block, depth, pods=None):
    if depth == 18:
        counts = [2, 2, 2, 2]
    elif depth == 50:
        counts = [3, 4, 6, 3]
    else:
        raise ValueError(f"no canonical depth {depth}")
    chans = [64, 128, 256, 512]
    sizes = [56, 28, 14, 7]
    stages = [
        StageSpec(block, chans[i], counts[i], 1 if i == 0 else 2, sizes[i], pods=pods) for i in range(4)
    ]
    return ModelSpec(name, 3, 224, 1000, "conv7_pool", 64, stages)


def _catalog() -> dict[str, ModelSpec]:
    cat = {}

    def put(spec):
        cat[spec.name] = spec

    put(_cifar("resnet20", "conv_v1"))
    put(_cifar("dct_resnet20", "dctp_v1"))
    put(_cifar("bipod_dct_resnet20", "dctp_v1", pods=2))
    put(_cifar("tripod_dct_resnet20", "tripod_v1"))
    put(_cifar("quadpod_dct_resnet20", "dctp_v1", pods=4))
    put(_cifar("quintpod_dct_resnet20", "dctp_v1", pods=5))
    put(_cifar("dct_resnet20_all", "dct_all"))
    put(insert_extra_dctp(_cifar("resnet20", "conv_v1")))

    put(_imagenet("resnet18", "conv_v1", 18))
    put(_imagenet("dct_resnet18", "dctp_v1", 18))
    put(_imagenet("tripod_dct_resnet18", "tripod_v1", 18))
    put(insert_extra_dctp(_imagenet("resnet18", "conv_v1", 18)))
    put(insert_extra_dctp(_imagenet("tripod_dct_resnet18", "tripod_v1", 18)))

    put(_imagenet("resnet50", "conv_v2", 50))
    put(_imagenet("dct_resnet50", "dctp_v2", 50))
    put(_imagenet("tripod_dct_resnet50", "tripod_v2", 50))
    put(insert_extra_dctp(_imagenet("resnet50", "conv_v2", 50)))
    put(insert_extra_dctp(_imagenet("tripod_dct_resnet50", "tripod_v2", 50)))

    # Reduced single-stage variants for desk-scale training.
    put(_cifar("resnet20_stage1", "conv_v1", stages=1))
    put(_cifar("dct_resnet20_stage1", "dctp_v1", stages=1))
    return cat


def canonical_names() -> list[str]:
    return sorted(_catalog())


def canonical_spec(name: str) -> ModelSpec:
    cat = _catalog()
    if name not in cat:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(cat))}")
    return cat[name]


def insert_extra_dctp(spec: ModelSpec) -> ModelSpec:
    """Append a single-pod spectral layer (with normalization) before pooling."""
    out = copy.deepcopy(spec)
    out.extra_dctp = True
    out.name = spec.name + "_plus1dctp"
    return out


# ---------------------------------------------------------------------------
# builder


class Model(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.dtype = dtype
        c = spec.stem_channels
        if spec.stem_kind == "conv3":
            self.register_module("stem_conv", Conv2d(spec.input_channels, c, 3, 1, rng, dtype))
        else:
            self.register_module("stem_conv", Conv2d(spec.input_channels, c, 7, 2, rng, dtype))
        self.register_module("stem_bn", BatchNorm2d(c, dtype))
        self.stem_pool = spec.stem_kind == "conv7_pool"

        c_in = c
        blocks = []
        for si, stage in enumerate(spec.stages):
            pods = stage.effective_pods()
            dctp = (pods, stage.shortcut, stage.nonlinearity) if stage.is_spectral() else None
            for bi in range(stage.blocks):
                stride = stage.stride if bi == 0 else 1
                name = f"stage{si + 1}.block{bi}"
                if stage.block == "dct_all":
                    blk = DctAllBlock(c_in, stage.channels, stage.size, stride, rng, stage.nonlinearity, dtype)
                    c_in = stage.channels
                elif stage.is_bottleneck():
                    use_dctp = dctp if (dctp is not None and bi != 0) else None
                    blk = BottleneckBlock(c_in, stage.channels, stage.size, stride, rng, use_dctp, dtype)
                    c_in = blk.c_out
                else:
                    blk = BasicBlock(c_in, stage.channels, stage.size, stride, rng, dctp, dtype)
                    c_in = stage.channels
                self.register_module(name, blk)
                blocks.append(blk)
        self.blocks = blocks

        if spec.extra_dctp:
            cfg = DctPerceptronConfig(spec.final_size(), c_in, shortcut=True)
            self.register_module("extra_dctp", DctPerceptron(cfg, rng, dtype))
            self.register_module("extra_bn", BatchNorm2d(c_in, dtype))
        self.register_module("head", Linear(c_in, spec.classes, rng, dtype))

    def forward(self, x, training=False):
        h = T.relu(self.stem_bn(self.stem_conv(x, training), training))
        if self.stem_pool:
            h = T.max_pool2(h)
        for blk in self.blocks:
            h = blk(h, training)
        if self.spec.extra_dctp:
            h = self.extra_bn(self.extra_dctp(h, training), training)
        h = T.global_avg_pool(h)
        return self.head(h, training)


def build_model(spec: ModelSpec | str, seed: int = 0, dtype=np.float64) -> Model:
    """Realize a spec (or canonical name) with freshly initialized parameters."""
    if isinstance(spec, str):
        spec = canonical_spec(spec)
    spec.check_geometry()
    return Model(spec, seed, dtype)


def inventory(model: Model) -> list[tuple[str, str]]:
    """Flat (path, unit description) list for structural comparisons."""
    rows = []

    def walk(mod: Module, prefix: str):
        for name, child in mod._modules.items():
            path = f"{prefix}{name}"
            if isinstance(child, Conv2d):
                rows.append((path, f"conv{child.ksize}x{child.ksize} {child.c_in}->{child.c_out} s{child.stride}"))
            elif isinstance(child, DctPerceptron):
                cfg = child.cfg
                rows.append(
                    (
                        path,
                        f"dctp n={cfg.size} {cfg.c_in}->{cfg.c_out} pods={cfg.pods} "
                        f"shortcut={cfg.use_shortcut} {cfg.nonlinearity}",
                    )
                )
            elif isinstance(child, BatchNorm2d):
                rows.append((path, f"bn {child.channels}"))
            elif isinstance(child, Linear):
                rows.append((path, f"linear {child.c_in}->{child.classes}"))
            walk(child, path + ".")

    walk(model, "")
    return rows
