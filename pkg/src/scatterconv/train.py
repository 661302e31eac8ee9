"""Micro segmentation trainer for the rotation-invariant block.

The network is deliberately small:

* block 1: rotation-invariant convolution.  ``orientations=1`` is a plain
  convolution, ``4`` is a p4 group convolution, ``8``/``16`` use steered
  kernels (N/4 base angles, each with its p4 orbit).  Orientations are
  max-pooled in blocks of four, giving one feature per base angle.
* block 2: a standard single-orientation scatter convolution.
* head: 1x1 classifier.

All arrays carry an explicit batch axis after the channel axis, i.e.
``(C, N, S, S)``; the convolution engines treat it as an extra leading
spatial-free dimension.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backward import (base_kernel_grad, conv_backward_input, conv_backward_weight,
                       pool_backward_avg, subgroup_pool_backward_max)
from .group import GroupSpec, orientation_pool_avg, scatter_offset_maps, subgroup_pool_max
from .scatter import _scatter_forward, identity_offset_map
from .steerable import (OrientationSet, SteerableBasis, regularizer_grads, steer,
                        steered_basis_grads, total_loss)

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "train_loss", "val_acc", "rot_test_acc"]
SHAPE_KINDS = ("bar", "wedge", "ell")


@dataclass
class SynthSample:
    image: np.ndarray   # (C, S, S)
    labels: np.ndarray  # (S, S) int

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[1:] != self.labels.shape:
            raise ValueError(f"image {self.image.shape} and labels {self.labels.shape} disagree")


@dataclass
class DatasetSplits:
    train: list[SynthSample]
    val: list[SynthSample]
    test: list[SynthSample]
    rot_test: list[SynthSample]


def rotate_sample(sample: SynthSample, quarter_turns: int) -> SynthSample:
    k = quarter_turns % 4
    return SynthSample(np.ascontiguousarray(np.rot90(sample.image, k, axes=(1, 2))),
                       np.ascontiguousarray(np.rot90(sample.labels, k)))


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    s = size
    yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    phi = rng.uniform(0, 2 * math.pi)
    cx, cy = rng.uniform(0.25 * s, 0.75 * s, size=2)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(phi) + dy * math.sin(phi)
    v = -dx * math.sin(phi) + dy * math.cos(phi)
    length = rng.uniform(0.3, 0.5) * s
    if kind == "bar":
        return (np.abs(u) <= length / 2) & (np.abs(v) <= 1.0)
    if kind == "wedge":
        half = math.tan(math.radians(rng.uniform(20, 30)))
        return (u >= -length / 3) & (u <= 2 * length / 3) & (np.abs(v) <= (u + length / 3) * half)
    if kind == "ell":
        arm = length * 0.7
        return (((u >= 0) & (u <= arm) & (np.abs(v) <= 1.5))
                | ((v >= 0) & (v <= arm) & (np.abs(u) <= 1.5)))
    raise ValueError(f"unknown shape kind {kind!r}")


def _make_sample(size: int, classes: int, channels: int, noise: float,
                 rng: np.random.Generator) -> SynthSample:
    n_kinds = min(classes - 1, len(SHAPE_KINDS))
    while True:
        labels = np.zeros((size, size), dtype=np.int64)
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.integers(n_kinds))
            labels[_shape_mask(SHAPE_KINDS[k], size, rng)] = k + 1
        if (labels > 0).any():
            break
    fg = (labels > 0).astype(np.float64)
    image = np.repeat(fg[None], channels, axis=0)
    image += noise * rng.standard_normal(image.shape)
    return SynthSample(image, labels)


def generate_dataset(n: int, size: int = 32, classes: int = 3, seed: int = 0,
                     channels: int = 1, noise: float = 0.1) -> list[SynthSample]:
    """``n`` images of 1-3 bars, wedges or L-shapes at uniformly random angles.

    Background is class 0; shape kind ``k`` is class ``k + 1``.  Deterministic
    in ``seed``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if classes < 2:
        raise ValueError("need at least two classes")
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    rng = np.random.default_rng(seed)
    return [_make_sample(size, classes, channels, noise, rng) for _ in range(n)]


def make_splits(n_train: int, n_val: int, n_test: int, size: int = 32, classes: int = 3,
                seed: int = 0, channels: int = 1) -> DatasetSplits:
    """Train/val/test splits plus the test set turned by 90, 180 and 270 degrees."""
    seeds = np.random.SeedSequence(seed).spawn(3)
    to_int = [int(s.generate_state(1)[0]) for s in seeds]
    train = generate_dataset(n_train, size, classes, to_int[0], channels)
    val = generate_dataset(n_val, size, classes, to_int[1], channels)
    test = generate_dataset(n_test, size, classes, to_int[2], channels)
    rot_test = [rotate_sample(s, k) for s in test for k in (1, 2, 3)]
    return DatasetSplits(train, val, test, rot_test)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy; logits (C, *pix), labels (*pix).

    Returns the loss and its gradient ``(softmax - onehot) / n_pixels``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n_cls = logits.shape[0]
    if logits.shape[1:] != labels.shape:
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    log_p = shifted - log_z
    picked = np.take_along_axis(log_p, labels[None], axis=0)[0]
    n_pix = labels.size
    loss = -float(picked.sum()) / n_pix
    grad = np.exp(log_p)
    np.put_along_axis(grad, labels[None], np.take_along_axis(grad, labels[None], axis=0) - 1.0, axis=0)
    return loss, grad / n_pix


@dataclass
class TrainConfig:
    orientations: int = 4
    epochs: int = 30
    lr: float = 0.05
    lambda_mag: float = 0.1
    lambda_orth: float = 0.1
    eps: float = 1e-8
    seed: int = 0
    size: int = 32
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    classes: int = 3
    hidden: int = 8
    kernel: int = 3
    batch_size: int = 8
    pool: str = "max"
    in_channels: int = 1
    workers: int = 1


class TrainingDiverged(RuntimeError):
    pass


class MicroNet:
    """Rotation-invariant block, standard conv block and 1x1 head."""

    def __init__(self, orientations: int = 4, in_channels: int = 1, hidden: int = 8,
                 classes: int = 3, kernel: int = 3, pool: str = "max", seed: int = 0):
        if orientations not in (1, 4, 8, 16):
            raise ValueError("orientations must be one of 1, 4, 8, 16")
        if pool not in ("max", "avg"):
            raise ValueError("pool must be 'max' or 'avg'")
        if kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        self.orientations = orientations
        self.pool = pool
        self.kernel = kernel
        self.hidden = hidden
        self.n_base = max(1, orientations // 4)
        rng = np.random.default_rng(seed)
        k = kernel
        std1 = math.sqrt(2.0 / (in_channels * k * k))
        mid = hidden * self.n_base
        std2 = math.sqrt(2.0 / (mid * k * k))
        self.params: dict[str, np.ndarray] = {}
        if orientations >= 8:
            self.params["f_x"] = rng.normal(0, std1, (hidden, in_channels, k, k))
            self.params["f_y"] = rng.normal(0, std1, (hidden, in_channels, k, k))
        else:
            self.params["w1"] = rng.normal(0, std1, (hidden, in_channels, k, k))
        self.params["b1"] = np.zeros(mid)
        self.params["w2"] = rng.normal(0, std2, (hidden, mid, k, k))
        self.params["b2"] = np.zeros(hidden)
        self.params["w3"] = rng.normal(0, math.sqrt(1.0 / hidden), (classes, hidden, 1, 1))
        self.params["b3"] = np.zeros(classes)

    @property
    def basis(self) -> SteerableBasis | None:
        if "f_x" in self.params:
            return SteerableBasis(self.params["f_x"], self.params["f_y"])
        return None

    def base_kernels(self) -> list[np.ndarray]:
        if self.orientations >= 8:
            return [steer(self.basis, float(t)) for t in OrientationSet(self.orientations).base_angles]
        return [self.params["w1"]]

    def _pool(self, f: np.ndarray):
        if self.pool == "avg":
            return orientation_pool_avg(f), None
        return subgroup_pool_max(f, 4)

    def block1(self, x: np.ndarray):
        """x (C_in, N, S, S) -> pre-activation (hidden * n_base, N, S, S) and cache."""
        k = self.kernel
        if self.orientations == 1:
            z = _scatter_forward(x, self.params["w1"], identity_offset_map(k, k))[:, 0]
            return z + self.params["b1"][:, None, None, None], []
        maps = scatter_offset_maps(k, GroupSpec("p4"))
        pooled, args = [], []
        for psi in self.base_kernels():
            f = _scatter_forward(x, psi, maps)
            p, a = self._pool(f)
            pooled.append(p.reshape((self.hidden,) + x.shape[1:]))
            args.append(a)
        z = np.stack(pooled, axis=1).reshape((self.hidden * self.n_base,) + x.shape[1:])
        return z + self.params["b1"][:, None, None, None], args

    def forward(self, x: np.ndarray):
        k = self.kernel
        z1, args = self.block1(x)
        a1 = np.maximum(z1, 0.0)
        z2 = _scatter_forward(a1, self.params["w2"], identity_offset_map(k, k))[:, 0]
        z2 += self.params["b2"][:, None, None, None]
        a2 = np.maximum(z2, 0.0)
        w3 = self.params["w3"][:, :, 0, 0]
        logits = np.tensordot(w3, a2, axes=(1, 0)) + self.params["b3"][:, None, None, None]
        return logits, (x, z1, a1, args, z2, a2)

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        x, z1, a1, args, z2, a2 = cache
        k = self.kernel
        grads: dict[str, np.ndarray] = {}
        w3 = self.params["w3"][:, :, 0, 0]
        sp = (1, 2, 3)
        grads["w3"] = np.tensordot(dlogits, a2, axes=(sp, sp))[:, :, None, None]
        grads["b3"] = dlogits.sum(axis=sp)
        dz2 = np.tensordot(w3.T, dlogits, axes=(1, 0)) * (z2 > 0)
        grads["b2"] = dz2.sum(axis=sp)
        grads["w2"] = conv_backward_weight(dz2[:, None], a1, k)[0]
        dz1 = conv_backward_input(dz2[:, None], self.params["w2"]) * (z1 > 0)
        grads["b1"] = dz1.sum(axis=sp)
        if self.orientations == 1:
            grads["w1"] = conv_backward_weight(dz1[:, None], x, k)[0]
            return grads
        p4 = GroupSpec("p4")
        dz1 = dz1.reshape((self.hidden, self.n_base) + dz1.shape[1:])
        base_grads = []
        for b in range(self.n_base):
            g = dz1[:, b]
            if self.pool == "avg":
                delta = pool_backward_avg(g, 4)
            else:
                delta = subgroup_pool_backward_max(g[:, None], args[b], 4)
            base_grads.append(base_kernel_grad(conv_backward_weight(delta, x, k, group=p4), p4))
        if self.orientations == 4:
            grads["w1"] = base_grads[0]
        else:
            grads["f_x"], grads["f_y"] = steered_basis_grads(base_grads, self.orientations)
        return grads

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, lambda_mag: float = 0.0,
                       lambda_orth: float = 0.0, eps: float = 1e-8):
        logits, cache = self.forward(x)
        ce, dlogits = softmax_cross_entropy(logits, labels)
        grads = self.backward(cache, dlogits)
        basis = self.basis
        loss = total_loss(ce, basis, lambda_mag, lambda_orth, eps)
        if basis is not None:
            rx, ry = regularizer_grads(basis, lambda_mag, lambda_orth, eps)
            grads["f_x"] = grads["f_x"] + rx
            grads["f_y"] = grads["f_y"] + ry
        return loss, grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(x)
        return logits.argmax(axis=0)


def _stack(samples: list[SynthSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in samples], axis=1)
    y = np.stack([s.labels for s in samples], axis=0)
    return x, y


def evaluate(model: MicroNet, dataset: list[SynthSample], batch_size: int = 16,
             workers: int = 1) -> float:
    """Mean per-pixel top-1 accuracy."""
    if not dataset:
        raise ValueError("empty dataset")
    chunks = [dataset[i:i + batch_size] for i in range(0, len(dataset), batch_size)]

    def score(chunk):
        x, y = _stack(chunk)
        return int((model.predict(x) == y).sum()), y.size

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(score, chunks))
    else:
        results = [score(c) for c in chunks]
    correct = sum(r[0] for r in results)
    total = sum(r[1] for r in results)
    return correct / total


@dataclass
class TrainReport:
    config: TrainConfig
    metrics: list[dict] = field(default_factory=list)
    test_acc: float = float("nan")
    model: MicroNet | None = None

    @property
    def final(self) -> dict:
        return self.metrics[-1] if self.metrics else {}


def train(config: TrainConfig, splits: DatasetSplits | None = None) -> TrainReport:
    """Plain SGD on the total loss; logs one metrics row per epoch."""
    if config.epochs < 0 or config.lr < 0 or config.batch_size < 1:
        raise ValueError("invalid training config")
    if splits is None:
        splits = make_splits(config.n_train, config.n_val, config.n_test, config.size,
                             config.classes, config.seed, config.in_channels)
    model = MicroNet(config.orientations, config.in_channels, config.hidden, config.classes,
                     config.kernel, config.pool, seed=config.seed + 1)
    rng = np.random.default_rng(config.seed + 2)
    report = TrainReport(config, model=model)
    n = len(splits.train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = [splits.train[i] for i in order[start:start + config.batch_size]]
            x, y = _stack(batch)
            loss, grads = model.loss_and_grads(x, y, config.lambda_mag, config.lambda_orth, config.eps)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, batch {batches}; try a smaller --lr"
                )
            for name, g in grads.items():
                model.params[name] -= config.lr * g
            total += loss
            batches += 1
        row = {
            "epoch": epoch,
            "train_loss": total / batches,
            "val_acc": evaluate(model, splits.val, workers=config.workers),
            "rot_test_acc": evaluate(model, splits.rot_test, workers=config.workers),
        }
        report.metrics.append(row)
        log.info("epoch %d loss %.4f val %.4f rot %.4f", epoch, row["train_loss"],
                 row["val_acc"], row["rot_test_acc"])
    report.test_acc = evaluate(model, splits.test, workers=config.workers)
    return report


def write_metrics(report: TrainReport, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in report.metrics:
            writer.writerow({k: row[k] for k in METRICS_HEADER})


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
