"""Measurement machinery: anytime accuracy, forgetting, representation
drift, old-feature gradient norms, buffer-holdout alignment, and the
FLOPs/memory ledgers.

FLOPs are analytic, counted from layer shapes (see
``network.forward_flops_per_sample``), never measured: a training step
charges one forward plus a backward at twice the forward cost; evaluation
forwards are charged to a separate inference-overhead ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network as net
from . import tensor as T

BYTES_PER_FLOAT = 4
BYTES_PER_LABEL = 4


@dataclass
class ResourceLedger:
    train_flops: int = 0
    eval_flops: int = 0
    mem_byte_steps: int = 0   # running sum of |theta|+|buffer| bytes per step
    steps: int = 0

    def charge_train(self, n_samples: int, per_sample_forward: int):
        # forward + backward, backward at 2x forward
        self.train_flops += 3 * n_samples * per_sample_forward

    def charge_eval(self, n_samples: int, per_sample_forward: int):
        self.eval_flops += n_samples * per_sample_forward

    def note_memory(self, param_count: int, buffer_len: int, input_dim: int):
        per_slot = input_dim * BYTES_PER_FLOAT + BYTES_PER_LABEL
        self.mem_byte_steps += param_count * BYTES_PER_FLOAT + buffer_len * per_slot
        self.steps += 1

    @property
    def mean_memory_bytes(self) -> float:
        return self.mem_byte_steps / self.steps if self.steps else 0.0


@dataclass
class MetricsLog:
    eval_steps: list = field(default_factory=list)
    # per eval: {task: accuracy} over tasks seen so far
    task_accuracy: list = field(default_factory=list)
    aa_trace: list = field(default_factory=list)
    current_task_accuracy: list = field(default_factory=list)
    drift_trace: list = field(default_factory=list)       # per training step
    grad_norm_trace: list = field(default_factory=list)   # per training step
    skipped_anchor_trace: list = field(default_factory=list)
    extra_forward_trace: list = field(default_factory=list)

    def record_eval(self, step: int, per_task: dict, current_task: int):
        self.eval_steps.append(step)
        self.task_accuracy.append(dict(per_task))
        self.aa_trace.append(anytime_accuracy_from_dict(per_task))
        self.current_task_accuracy.append(per_task.get(current_task, float("nan")))

    def accuracy_matrix(self):
        """(evals x tasks) matrix with NaN for not-yet-seen tasks."""
        tasks = sorted({t for row in self.task_accuracy for t in row})
        mat = np.full((len(self.task_accuracy), len(tasks)), np.nan)
        for i, row in enumerate(self.task_accuracy):
            for j, t in enumerate(tasks):
                if t in row:
                    mat[i, j] = row[t]
        return mat, tasks


def accuracy(model, inputs, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = net.predict(model, inputs)
    return float(np.mean(pred == np.asarray(labels)))


def anytime_accuracy_from_dict(per_task: dict) -> float:
    """Unweighted mean over the seen distributions' test accuracies."""
    if not per_task:
        raise ValueError("anytime accuracy needs at least one seen distribution")
    return float(np.mean(list(per_task.values())))


def averaged_anytime_accuracy(aa_trace) -> float:
    if not len(aa_trace):
        raise ValueError("AAA needs at least one recorded AA value")
    return float(np.mean(aa_trace))


def forgetting(matrix: np.ndarray) -> float:
    """Mean over non-final tasks of (best earlier accuracy - final accuracy).

    ``matrix`` is evals x tasks with NaN before a task is first seen.
    Returns NaN when fewer than two tasks completed.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] < 2:
        return float("nan")
    drops = []
    final = matrix[-1]
    for j in range(matrix.shape[1] - 1):
        col = matrix[:-1, j]
        col = col[~np.isnan(col)]
        if col.size == 0 or np.isnan(final[j]):
            continue
        drops.append(float(col.max() - final[j]))
    return float(np.mean(drops)) if drops else float("nan")


def one_step_drift(model_before, model_after, probe_inputs) -> float:
    """Mean distance between l2-normalized features across one update."""
    probe_inputs = np.asarray(probe_inputs, dtype=np.float32)
    if probe_inputs.size == 0:
        return float("nan")
    with T.no_grad():
        fa = T.l2_normalize(net.features(model_before, probe_inputs)).data
        fb = T.l2_normalize(net.features(model_after, probe_inputs)).data
    return float(np.mean(np.linalg.norm(fa - fb, axis=1)))


def old_feature_grad_norm(feature_records, old_classes) -> float:
    """Mean l2 norm of the loss gradient w.r.t. features of old-class
    samples present in the step's loss graph; 0 when no probe appears."""
    old = set(int(c) for c in old_classes)
    norms = []
    for feats, labels in feature_records:
        if feats.grad is None:
            g = np.zeros_like(feats.data)
        else:
            g = feats.grad
        for i, y in enumerate(np.asarray(labels)):
            if int(y) in old:
                norms.append(float(np.linalg.norm(g[i])))
    return float(np.mean(norms)) if norms else 0.0


def buffer_holdout_alignment(model, buffer, val_inputs, val_labels,
                             task_of_class) -> dict:
    """Per-task mean of each buffered sample's best same-class cosine
    similarity against held-out features. Samples whose class is absent
    from the validation set are skipped."""
    val_labels = np.asarray(val_labels)
    if not len(buffer.slots):
        return {}
    with T.no_grad():
        vf = T.l2_normalize(net.features(model, val_inputs)).data
        bx = np.stack([s.x for s in buffer.slots])
        bf = T.l2_normalize(net.features(model, bx)).data
    per_task: dict = {}
    for i, slot in enumerate(buffer.slots):
        same = np.where(val_labels == slot.y)[0]
        if same.size == 0:
            continue
        best = float(np.max(vf[same] @ bf[i]))
        per_task.setdefault(task_of_class[int(slot.y)], []).append(best)
    return {t: float(np.mean(v)) for t, v in sorted(per_task.items())}
