"""Desk-scale training: SGD with momentum, step schedule, checkpoints, logs.

Determinism is the organizing constraint.  Each epoch's shuffling and
augmentation use a generator derived from (seed, epoch), so a resumed run
replays exactly the stream an uninterrupted run would have seen.  Log
records carry only deterministic fields; wall-clock timing goes to the
console, never into the log file.

Checkpoints are a small binary container: magic, format version, a JSON
header describing every array (name, dtype, shape, offset), then the raw
little-endian payload.  Parameters, batch-norm running statistics, and
optimizer velocity all round-trip bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset, augment_batch, default_data_dir, load_cifar10, synthetic_dataset
from .models import Model, ModelSpec, build_model, canonical_spec
from .tensor import Parameter, no_grad

__all__ = [
    "TrainConfig",
    "SGD",
    "TrainingDiverged",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "Checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "spec_hash",
    "worker_count",
]

CHECKPOINT_MAGIC = b"DCTP"
CHECKPOINT_VERSION = 1


def worker_count() -> int:
    """Evaluation worker cap, from the environment (defaults to 1)."""
    try:
        n = int(os.environ.get("DCTNET_THREADS", "1"))
    except ValueError:
        return 1
    return max(1, n)


@dataclass
class TrainConfig:
    model: str = "dct_resnet20_stage1"
    dataset: str = "synthetic"
    data_dir: str | None = None
    subset: int = 5000
    test_subset: int = 2000
    batch_size: int = 128
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    milestones: tuple[int, ...] = (10, 15)
    lr_factor: float = 0.1
    seed: int = 0
    checkpoint_dir: str = "runs/default"
    precision: str = "float32"

    def __post_init__(self):
        if self.dataset not in ("cifar10_bin", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.lr_factor**drops

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch_index, loss_value, param_norms):
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss_value = loss_value
        self.param_norms = param_norms
        worst = sorted(param_norms.items(), key=lambda kv: -kv[1])[:5]
        detail = ", ".join(f"{k}={v:.3e}" for k, v in worst)
        super().__init__(
            f"non-finite loss {loss_value} at epoch {epoch}, batch {batch_index}; "
            f"largest parameter norms: {detail}"
        )


class SGD:
    """v <- mu*v + (g + wd*theta); theta <- theta - lr*v; clamp constrained params."""

    def __init__(self, named_params, momentum=0.9, weight_decay=1e-4):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self._debug = os.environ.get("DCTNET_DEBUG", "") not in ("", "0")

    def step(self, lr: float):
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else 0.0
            v = self.velocity[name]
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data -= lr * v
            if p.nonneg:
                np.maximum(p.data, 0.0, out=p.data)
                if self._debug:
                    assert p.data.min() >= 0.0, f"negative entries surviving clamp in {name}"

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.canonical_json().encode()).hexdigest()


@dataclass
class Checkpoint:
    header: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]

    @property
    def epoch(self) -> int:
        return self.header["epoch"]

    @property
    def best_test_acc(self) -> float:
        return self.header["best_test_acc"]

    def spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.header["spec"])

    def restore(self, model: Model, optimizer: SGD | None = None):
        names = {n for n, _ in model.named_parameters()}
        if names != set(self.params):
            raise ValueError("checkpoint parameter names do not match the model")
        for name, p in model.named_parameters():
            p.data[...] = self.params[name]
        for name, b in model.named_buffers():
            b[...] = self.buffers[name]
        if optimizer is not None:
            for name, _ in optimizer.named_params:
                optimizer.velocity[name][...] = self.velocity[name]


def _manifest_and_payload(groups: dict[str, dict[str, np.ndarray]]):
    manifest = {}
    chunks = []
    offset = 0
    for group, arrays in groups.items():
        rows = []
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr)
            le = data.astype(data.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            rows.append(
                {
                    "name": name,
                    "dtype": le.dtype.str,
                    "shape": list(arr.shape),
                    "offset": offset,
                    "nbytes": len(raw),
                }
            )
            chunks.append(raw)
            offset += len(raw)
        manifest[group] = rows
    return manifest, b"".join(chunks)


def save_checkpoint(path, model: Model, optimizer: SGD | None, epoch: int, seed: int, best_test_acc: float):
    groups = {
        "params": {name: p.data for name, p in model.named_parameters()},
        "buffers": dict(model.named_buffers()),
        "velocity": optimizer.velocity if optimizer is not None else {},
    }
    manifest, payload = _manifest_and_payload(groups)
    header = {
        "spec": model.spec.to_dict(),
        "spec_hash": spec_hash(model.spec),
        "epoch": epoch,
        "best_test_acc": best_test_acc,
        "rng": {"scheme": "seed-epoch", "seed": seed, "next_epoch": epoch + 1},
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)
    return path


def load_checkpoint(path, expect_spec: ModelSpec | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, not a checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header = json.loads(raw[16 : 16 + header_len].decode())
    payload = raw[16 + header_len :]
    if expect_spec is not None and spec_hash(expect_spec) != header["spec_hash"]:
        raise ValueError(f"{path}: checkpoint was written for a different model spec")

    def unpack(rows):
        out = {}
        for r in rows:
            a = np.frombuffer(payload[r["offset"] : r["offset"] + r["nbytes"]], dtype=np.dtype(r["dtype"]))
            out[r["name"]] = a.reshape(r["shape"]).copy()
        return out

    arrays = header["arrays"]
    return Checkpoint(header, unpack(arrays["params"]), unpack(arrays["buffers"]), unpack(arrays["velocity"]))


def _load_datasets(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "cifar10_bin":
        data_dir = cfg.data_dir or default_data_dir()
        if not data_dir:
            raise FileNotFoundError(
                "dataset is cifar10_bin but no data directory was given "
                "(set data_dir or DCTNET_CIFAR10_DIR)"
            )
        train_set, test_set = load_cifar10(data_dir, cfg.dtype)
    else:
        train_set = synthetic_dataset(max(cfg.subset, 1), seed=1_000_003, dtype=cfg.dtype, name="synthetic-train")
        test_set = synthetic_dataset(10_000, seed=2_000_033, dtype=cfg.dtype, name="synthetic-test")
    if cfg.subset:
        train_set = train_set.take(cfg.subset)
    if cfg.test_subset:
        test_set = test_set.take(cfg.test_subset)
    return train_set, test_set


def _batch_slices(n: int, batch_size: int):
    return [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy in eval mode; argmax ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    slices = _batch_slices(len(dataset), batch_size)

    def correct_in(bounds):
        lo, hi = bounds
        with no_grad():
            logits = model(T.Tensor(dataset.images[lo:hi]), training=False)
        pred = np.argmax(logits.data[:, :, 0, 0], axis=1)
        return int((pred == dataset.labels[lo:hi]).sum())

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            total = sum(pool.map(correct_in, slices))
    else:
        total = sum(map(correct_in, slices))
    return total / len(dataset)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng((seed, epoch))


def _param_norms(model: Model) -> dict[str, float]:
    return {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}


def train(
    cfg: TrainConfig,
    resume_from: str | None = None,
    console=None,
    augment: bool = True,
):
    """Run the recipe; returns (log records, best checkpoint path, last path)."""
    train_set, test_set = _load_datasets(cfg)
    spec = canonical_spec(cfg.model) if isinstance(cfg.model, str) else cfg.model
    model = build_model(spec, seed=cfg.seed, dtype=cfg.dtype)
    optimizer = SGD(list(model.named_parameters()), cfg.momentum, cfg.weight_decay)

    start_epoch = 0
    best_acc = -1.0
    if resume_from:
        ckpt = load_checkpoint(resume_from, expect_spec=spec)
        ckpt.restore(model, optimizer)
        start_epoch = ckpt.epoch + 1
        best_acc = ckpt.best_test_acc

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "train_log.jsonl"
    best_path = ckpt_dir / "best.ckpt"
    last_path = ckpt_dir / "last.ckpt"
    log_mode = "a" if resume_from else "w"
    records = []

    with open(log_path, log_mode) as log_file:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.monotonic()
            lr = cfg.lr_at(epoch)
            rng = _epoch_rng(cfg.seed, epoch)
            order = rng.permutation(len(train_set))
            images = train_set.images[order]
            labels = train_set.labels[order]
            if augment:
                images = augment_batch(images, rng)

            loss_sum = 0.0
            correct = 0
            for bi, (lo, hi) in enumerate(_batch_slices(len(train_set), cfg.batch_size)):
                x = T.Tensor(images[lo:hi])
                logits = model(x, training=True)
                loss = T.softmax_cross_entropy(logits, labels[lo:hi])
                loss_value = float(loss.data.reshape(()))
                if not math.isfinite(loss_value):
                    raise TrainingDiverged(epoch, bi, loss_value, _param_norms(model))
                optimizer.zero_grad()
                T.backward(loss)
                optimizer.step(lr)
                loss_sum += loss_value * (hi - lo)
                pred = np.argmax(logits.data[:, :, 0, 0], axis=1)
                correct += int((pred == labels[lo:hi]).sum())

            train_loss = loss_sum / len(train_set)
            train_acc = correct / len(train_set)
            test_acc = evaluate(model, test_set, batch_size=max(cfg.batch_size, 256))
            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": round(train_loss, 10),
                "train_acc": round(train_acc, 10),
                "test_acc": round(test_acc, 10),
            }
            records.append(record)
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()

            if test_acc > best_acc:
                best_acc = test_acc
                save_checkpoint(best_path, model, optimizer, epoch, cfg.seed, best_acc)
            save_checkpoint(last_path, model, optimizer, epoch, cfg.seed, best_acc)

            if console:
                dt = time.monotonic() - t0
                console(
                    f"epoch {epoch:3d}  lr {lr:8.5f}  loss {train_loss:7.4f}  "
                    f"train {train_acc * 100:5.1f}%  test {test_acc * 100:5.1f}%  ({dt:.1f}s)"
                )

    return records, best_path, last_path
