"""Data streams: synthetic class-cluster datasets, sharp task splits, and
gradually blurred class schedules.

A stream is materialized up front as an ordered list of batches plus
metadata (class-to-task map, boundary step indices).  The learner never
sees the metadata; it exists for evaluation and for the doubly-masked
ablation's task partition.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DATASET_MAGIC = b"ARDS"
DATASET_VERSION = 1


class StreamMode(enum.Enum):
    SPLIT = "split"
    BLURRY = "blurry"


@dataclass(frozen=True)
class StreamConfig:
    num_classes: int
    classes_per_task: int
    samples_per_class: int
    batch_size: int = 10
    mode: StreamMode = StreamMode.SPLIT
    seed: int = 0
    # blurry mode only: calibrate the schedule variance so batches average
    # this many distinct labels; None runs the raw schedule.
    target_unique_labels: Optional[float] = 2.0
    variance_scale: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode is StreamMode.SPLIT and self.num_classes % self.classes_per_task:
            raise ValueError("num_classes must be divisible by classes_per_task")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    input_dim: int
    num_classes: int
    samples_per_class: int          # training samples per class
    noise_sigma: float = 0.25
    mean_radius: float = 1.0
    val_fraction: float = 0.05
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.val_fraction + self.test_fraction >= 1.0 - 1e-9:
            pass  # fractions apply on top of the train count, see make_synthetic


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    step: int


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.train_y.max()) + 1 if len(self.train_y) else 0

    def train_count_per_class(self) -> np.ndarray:
        return np.bincount(self.train_y, minlength=self.num_classes)


@dataclass
class Stream:
    batches: list
    task_of_class: dict
    classes_of_task: dict
    boundaries: list       # step indices at which a new task begins (SPLIT)
    mode: StreamMode

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)

    @property
    def num_tasks(self) -> int:
        return len(self.classes_of_task)

    def metadata(self) -> dict:
        return {
            "mode": self.mode.value,
            "task_of_class": {str(k): v for k, v in self.task_of_class.items()},
            "boundaries": list(self.boundaries),
            "num_steps": len(self.batches),
        }


def random_class_means(num_classes: int, input_dim: int, seed: int,
                       radius: float = 1.0) -> np.ndarray:
    """Distinct random directions scaled to a common radius."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1A55]))
    means = rng.normal(size=(num_classes, input_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    return (means * radius).astype(np.float32)


def make_synthetic(spec: SyntheticDatasetSpec, seed: int) -> Dataset:
    """Gaussian clusters around per-class means, deterministic per seed.

    ``samples_per_class`` sets the training count; validation and test
    counts are the stated fractions of it (at least one test sample per
    class so every task is evaluable).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    means = random_class_means(spec.num_classes, spec.input_dim, seed,
                               spec.mean_radius)
    n_val = max(1, round(spec.val_fraction * spec.samples_per_class))
    n_test = max(1, round(spec.test_fraction * spec.samples_per_class))
    parts = {"train": [], "val": [], "test": []}
    for c in range(spec.num_classes):
        total = spec.samples_per_class + n_val + n_test
        pts = means[c] + rng.normal(scale=spec.noise_sigma,
                                    size=(total, spec.input_dim))
        pts = pts.astype(np.float32)
        labels = np.full(total, c, dtype=np.intp)
        parts["train"].append((pts[:spec.samples_per_class],
                               labels[:spec.samples_per_class]))
        parts["val"].append((pts[spec.samples_per_class:spec.samples_per_class + n_val],
                             labels[:n_val]))
        parts["test"].append((pts[spec.samples_per_class + n_val:], labels[:n_test]))

    def cat(key):
        xs = np.concatenate([p[0] for p in parts[key]])
        ys = np.concatenate([p[1] for p in parts[key]])
        return xs, ys

    tx, ty = cat("train")
    vx, vy = cat("val")
    sx, sy = cat("test")
    return Dataset(tx, ty, vx, vy, sx, sy)


def _task_maps(num_classes: int, classes_per_task: int):
    task_of_class = {c: c // classes_per_task for c in range(num_classes)}
    classes_of_task: dict = {}
    for c, t in task_of_class.items():
        classes_of_task.setdefault(t, []).append(c)
    return task_of_class, classes_of_task


def split_stream(dataset: Dataset, cfg: StreamConfig) -> Stream:
    """Disjoint tasks in ascending class order, one pass, shuffled within."""
    if cfg.mode is not StreamMode.SPLIT:
        raise ValueError("split_stream requires SPLIT mode")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5B117]))
    task_of_class, classes_of_task = _task_maps(cfg.num_classes, cfg.classes_per_task)
    batches: list[LabeledBatch] = []
    boundaries = []
    for t in sorted(classes_of_task):
        boundaries.append(len(batches))
        idx = np.where(np.isin(dataset.train_y, classes_of_task[t]))[0]
        idx = rng.permutation(idx)
        for lo in range(0, len(idx), cfg.batch_size):
            sel = idx[lo:lo + cfg.batch_size]
            batches.append(LabeledBatch(dataset.train_x[sel].copy(),
                                        dataset.train_y[sel].copy(),
                                        len(batches)))
    return Stream(batches, task_of_class, classes_of_task, boundaries,
                  StreamMode.SPLIT)


def _schedule_log_weights(num_classes: int, per_class_samples: np.ndarray,
                          t: float, variance_scale: float) -> np.ndarray:
    """Unnormalized per-class log weights of the Gaussian schedule at sample
    counter t (class c peaks when roughly c classes' worth of data has
    streamed)."""
    n_c = per_class_samples.astype(np.float64)
    mu = np.cumsum(n_c) - n_c / 2.0      # equals (2c-1)*N_c/2 for equal counts
    var = np.maximum(n_c / 4.0 * variance_scale, 1e-12)
    return -((mu - t) ** 2) / (2.0 * var)


def _draw_blurry_labels(per_class_samples: np.ndarray, batch_size: int,
                        variance_scale: float, rng: np.random.Generator):
    """Yield per-step label arrays until every class pool is exhausted."""
    remaining = per_class_samples.astype(np.int64).copy()
    num_classes = len(remaining)
    t = 0
    step_labels = []
    while remaining.sum() > 0:
        n_draw = min(batch_size, int(remaining.sum()))
        lw = _schedule_log_weights(num_classes, per_class_samples, t, variance_scale)
        labels = np.empty(n_draw, dtype=np.intp)
        for i in range(n_draw):
            avail = remaining > 0
            w = np.exp(lw[avail] - lw[avail].max())
            w /= w.sum()
            c = int(np.flatnonzero(avail)[rng.choice(avail.sum(), p=w)])
            remaining[c] -= 1
            labels[i] = c
        step_labels.append(labels)
        t += n_draw
    return step_labels


def _mean_unique_labels(per_class_samples, batch_size, variance_scale,
                        seeds=(0, 1, 2)) -> float:
    vals = []
    for s in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([s, 0xB1E5]))
        steps = _draw_blurry_labels(per_class_samples, batch_size,
                                    variance_scale, rng)
        vals.extend(len(np.unique(lb)) for lb in steps)
    return float(np.mean(vals))


_calibration_cache: dict = {}


def calibrate_variance_scale(per_class_samples, batch_size: int,
                             target: float) -> float:
    """Find the schedule-variance multiplier whose simulated streams average
    ``target`` unique labels per batch (bisection on the log scale)."""
    key = (tuple(int(n) for n in per_class_samples), batch_size, round(target, 3))
    if key in _calibration_cache:
        return _calibration_cache[key]
    num_classes = len(per_class_samples)
    if not (1.0 <= target <= num_classes):
        raise ValueError(f"unattainable blurriness level {target}")
    lo, hi = -6.0, 10.0  # log10 of the variance multiplier
    f_lo = _mean_unique_labels(per_class_samples, batch_size, 10.0 ** lo)
    f_hi = _mean_unique_labels(per_class_samples, batch_size, 10.0 ** hi)
    if target <= f_lo:
        _calibration_cache[key] = 10.0 ** lo
        return 10.0 ** lo
    if target >= f_hi:
        _calibration_cache[key] = 10.0 ** hi
        return 10.0 ** hi
    for _ in range(24):
        mid = (lo + hi) / 2.0
        f_mid = _mean_unique_labels(per_class_samples, batch_size, 10.0 ** mid)
        if abs(f_mid - target) < 0.05:
            lo = hi = mid
            break
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    scale = 10.0 ** ((lo + hi) / 2.0)
    _calibration_cache[key] = scale
    return scale


def blurry_stream(dataset: Dataset, cfg: StreamConfig) -> Stream:
    """Classes phase in and out under per-class Gaussian schedules.

    Labels are drawn categorically from the normalized schedule weights;
    inputs are drawn without replacement from each class's remaining pool,
    with exhausted classes dropped and the weights renormalized.
    """
    if cfg.mode is not StreamMode.BLURRY:
        raise ValueError("blurry_stream requires BLURRY mode")
    per_class = dataset.train_count_per_class()
    if cfg.variance_scale is not None:
        scale = cfg.variance_scale
    elif cfg.target_unique_labels is not None:
        scale = calibrate_variance_scale(per_class, cfg.batch_size,
                                         cfg.target_unique_labels)
    else:
        scale = 1.0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB1E5]))
    step_labels = _draw_blurry_labels(per_class, cfg.batch_size, scale, rng)
    # per-class shuffled pools of training indices
    pools = {c: list(rng.permutation(np.where(dataset.train_y == c)[0]))
             for c in range(dataset.num_classes)}
    batches = []
    for step, labels in enumerate(step_labels):
        idx = np.array([pools[int(c)].pop() for c in labels], dtype=np.intp)
        batches.append(LabeledBatch(dataset.train_x[idx].copy(),
                                    dataset.train_y[idx].copy(), step))
    task_of_class, classes_of_task = _task_maps(dataset.num_classes,
                                                cfg.classes_per_task)
    return Stream(batches, task_of_class, classes_of_task, [], StreamMode.BLURRY)


def blurriness_sweep(dataset: Dataset, cfg: StreamConfig, level: float) -> Stream:
    """Blurry stream calibrated to a requested unique-labels-per-batch level."""
    if not (1.0 <= level <= dataset.num_classes):
        raise ValueError(f"unattainable blurriness level {level}")
    from dataclasses import replace
    return blurry_stream(dataset, replace(cfg, mode=StreamMode.BLURRY,
                                          target_unique_labels=float(level),
                                          variance_scale=None))


def make_stream(dataset: Dataset, cfg: StreamConfig) -> Stream:
    if cfg.mode is StreamMode.SPLIT:
        return split_stream(dataset, cfg)
    return blurry_stream(dataset, cfg)


# dataset file format ----------------------------------------------------

def save_dataset(dataset: Dataset, path):
    """Little-endian binary: magic, version, input_dim, num_classes, three
    split counts, then per split rows of input_dim float32 plus an int32
    label."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIIIII", DATASET_VERSION, dataset.input_dim,
                             dataset.num_classes, len(dataset.train_y),
                             len(dataset.val_y), len(dataset.test_y)))
        for xs, ys in ((dataset.train_x, dataset.train_y),
                       (dataset.val_x, dataset.val_y),
                       (dataset.test_x, dataset.test_y)):
            for x, y in zip(xs, ys):
                fh.write(x.astype("<f4").tobytes())
                fh.write(struct.pack("<i", int(y)))


class DatasetParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise DatasetParseError(f"bad dataset magic {magic!r}", 0)
        header = fh.read(24)
        if len(header) != 24:
            raise DatasetParseError("truncated header", fh.tell())
        version, dim, num_classes, n_train, n_val, n_test = struct.unpack(
            "<IIIIII", header)
        if version != DATASET_VERSION:
            raise DatasetParseError(f"unsupported version {version}", 4)
        splits = []
        row_bytes = 4 * dim + 4
        for count in (n_train, n_val, n_test):
            xs = np.zeros((count, dim), dtype=np.float32)
            ys = np.zeros(count, dtype=np.intp)
            for i in range(count):
                raw = fh.read(row_bytes)
                if len(raw) != row_bytes:
                    raise DatasetParseError("truncated payload", fh.tell())
                xs[i] = np.frombuffer(raw[:4 * dim], dtype="<f4")
                (ys[i],) = struct.unpack("<i", raw[4 * dim:])
                if not 0 <= ys[i] < num_classes:
                    raise DatasetParseError(
                        f"label {ys[i]} out of range", fh.tell() - 4)
            splits.append((xs, ys))
        if fh.read(1):
            raise DatasetParseError("trailing bytes after payload", fh.tell() - 1)
    (tx, ty), (vx, vy), (sx, sy) = splits
    return Dataset(tx, ty, vx, vy, sx, sy)
