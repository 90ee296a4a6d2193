"""Online training loop: one pass over the stream, method-dispatched loss,
plain SGD, reservoir update, and scheduled evaluation.

The data path is method-independent: stream order, buffer contents, and
rehearsal draws depend only on the seed, never on the loss being
optimized (the positive/negative fetch has its own RNG so that methods
which skip it leave the shared state untouched).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import losses as L
from . import metrics as M
from . import network as net
from . import tensor as T
from .buffer import ReplayBuffer
from .stream import Dataset, LabeledBatch, Stream, StreamConfig, make_stream


@dataclass(frozen=True)
class TrainerConfig:
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    lr: float = 0.05
    rehearsal_batch_size: int = 10
    eval_every: int = 10
    buffer_capacity: int = 20
    hidden_sizes: tuple = (128, 128, 64)
    head_tau: Optional[float] = None   # defaults to the loss temperature
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


class RunAbort(RuntimeError):
    def __init__(self, step: int, method: L.Method, value: float):
        super().__init__(
            f"non-finite loss {value} at step {step} for method {method.value}")
        self.step = step
        self.method = method
        self.value = value


@dataclass
class StepLog:
    step: int
    loss: float
    drift: float
    old_grad_norm: float
    skipped_anchors: int
    extra_buffer_forwards: int


class RunState:
    def __init__(self, model: net.ModelParams, buffer: ReplayBuffer,
                 fetch_rng: np.random.Generator, task_of_class, classes_of_task):
        self.model = model
        self.buffer = buffer
        self.fetch_rng = fetch_rng
        self.task_of_class = task_of_class
        self.classes_of_task = classes_of_task
        self.observed: set = set()
        self.first_seen_task: dict = {}
        self.step = 0
        self.ledger = M.ResourceLedger()


@dataclass
class RunResult:
    trainer_config: TrainerConfig
    stream_config: StreamConfig
    log: M.MetricsLog
    ledger: M.ResourceLedger
    final_task_accuracy: dict
    model: net.ModelParams

    @property
    def final_accuracy(self) -> float:
        return M.anytime_accuracy_from_dict(self.final_task_accuracy)

    @property
    def aaa(self) -> float:
        return M.averaged_anytime_accuracy(self.log.aa_trace)

    @property
    def forgetting(self) -> float:
        mat, _ = self.log.accuracy_matrix()
        return M.forgetting(mat)


def sgd_update(model: net.ModelParams, lr: float):
    """theta <- theta - lr * grad; no momentum, no weight decay."""
    for p in model.parameters():
        if p.grad is not None:
            p.data -= np.float32(lr) * p.grad


def build_state(dataset: Dataset, stream: Stream, cfg: TrainerConfig) -> RunState:
    sizes = [dataset.input_dim, *cfg.hidden_sizes]
    tau = cfg.head_tau if cfg.head_tau is not None else cfg.loss.tau
    model = net.init_params(sizes, dataset.num_classes, tau, cfg.seed)
    buffer = ReplayBuffer(cfg.buffer_capacity,
                          rng=np.random.default_rng(
                              np.random.SeedSequence([cfg.seed, 0xB0FF])))
    fetch_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xFE7C]))
    return RunState(model, buffer, fetch_rng,
                    stream.task_of_class, stream.classes_of_task)


def _dispatch_loss(state: RunState, batch: LabeledBatch, x_bf, y_bf,
                   cfg: TrainerConfig, sets: L.ClassIndexSets) -> L.LossOutput:
    method = cfg.loss.method
    if method is L.Method.ER:
        return L.er_loss(state.model, batch.inputs, batch.labels, x_bf, y_bf)
    if method is L.Method.ER_ACE:
        return L.er_ace_loss(state.model, batch.inputs, batch.labels,
                             x_bf, y_bf, sets)
    if method is L.Method.SSIL_NODISTILL:
        return L.ssil_nodistill_loss(state.model, batch.inputs, batch.labels,
                                     x_bf, y_bf, sets, state.task_of_class,
                                     state.classes_of_task)
    pos_neg = state.buffer.fetch_pos_neg(batch.inputs, batch.labels,
                                         cfg.loss.negative_policy,
                                         state.fetch_rng)
    return L.er_aml_loss(state.model, batch.inputs, batch.labels, x_bf, y_bf,
                         pos_neg, cfg.loss, state.buffer)


def train_step(state: RunState, batch: LabeledBatch,
               cfg: TrainerConfig) -> StepLog:
    sets = L.ClassIndexSets.derive(batch.labels, state.observed,
                                   state.model.head.num_classes)
    x_bf, y_bf = state.buffer.sample(cfg.rehearsal_batch_size)

    # drift probe: buffered samples of classes outside the incoming batch
    old_classes = sets.c_old
    probe = [s.x for s in state.buffer.slots if s.y in old_classes]
    probe_x = np.stack(probe) if probe else np.zeros((0, batch.inputs.shape[1]),
                                                     dtype=np.float32)
    if len(probe_x):
        with T.no_grad():
            feats_before = T.l2_normalize(
                net.features(state.model, probe_x)).data.copy()

    out = _dispatch_loss(state, batch, x_bf, y_bf, cfg, sets)
    loss_value = float(out.loss.data)
    if not np.isfinite(loss_value):
        raise RunAbort(state.step, cfg.loss.method, loss_value)

    state.model.zero_grad()
    if out.loss.requires_grad:
        out.loss.backward()
    grad_norm = M.old_feature_grad_norm(out.feature_records, old_classes)
    sgd_update(state.model, cfg.lr)

    if len(probe_x):
        with T.no_grad():
            feats_after = T.l2_normalize(
                net.features(state.model, probe_x)).data
        drift = float(np.mean(np.linalg.norm(feats_after - feats_before, axis=1)))
    else:
        drift = float("nan")

    # new data enters the buffer only after being learned
    state.buffer.reservoir_update(batch.inputs, batch.labels)
    state.observed.update(int(c) for c in sets.c_curr)
    for c in sets.c_curr:
        t = state.task_of_class[int(c)]
        state.first_seen_task.setdefault(t, state.step)

    per_sample = net.forward_flops_per_sample(state.model)
    n_samples = len(batch.labels) + len(y_bf) + out.extra_buffer_forwards
    state.ledger.charge_train(n_samples, per_sample)
    state.ledger.note_memory(state.model.num_params(), len(state.buffer),
                             batch.inputs.shape[1])
    state.step += 1
    return StepLog(state.step - 1, loss_value, drift, grad_norm,
                   out.skipped_anchors, out.extra_buffer_forwards)


def _task_test_sets(dataset: Dataset, classes_of_task):
    sets = {}
    for t, classes in classes_of_task.items():
        idx = np.where(np.isin(dataset.test_y, classes))[0]
        sets[t] = (dataset.test_x[idx], dataset.test_y[idx])
    return sets


def _evaluate(state: RunState, task_tests, current_task: int, log: M.MetricsLog):
    per_sample = net.forward_flops_per_sample(state.model)
    seen_tasks = sorted(t for t, classes in state.classes_of_task.items()
                        if any(c in state.observed for c in classes))
    per_task = {}
    for t in seen_tasks:
        tx, ty = task_tests[t]
        per_task[t] = M.accuracy(state.model, tx, ty)
        state.ledger.charge_eval(len(ty), per_sample)
    log.record_eval(state.step, per_task, current_task)


def run(dataset: Dataset, stream_cfg: StreamConfig,
        cfg: TrainerConfig) -> RunResult:
    """Single-pass online run; evaluates every ``eval_every`` updates on the
    test sets of every distribution seen so far.

    The stream is rebuilt with the trainer seed so that one seed pins the
    whole run (stream order, init, buffer, rehearsal draws).
    """
    stream_cfg = replace(stream_cfg, seed=cfg.seed)
    stream = make_stream(dataset, stream_cfg)
    state = build_state(dataset, stream, cfg)
    task_tests = _task_test_sets(dataset, stream.classes_of_task)
    log = M.MetricsLog()
    for batch in stream:
        step_log = train_step(state, batch, cfg)
        log.drift_trace.append(step_log.drift)
        log.grad_norm_trace.append(step_log.old_grad_norm)
        log.skipped_anchor_trace.append(step_log.skipped_anchors)
        log.extra_forward_trace.append(step_log.extra_buffer_forwards)
        if state.step % cfg.eval_every == 0 or state.step == len(stream):
            labels, counts = np.unique(batch.labels, return_counts=True)
            current_task = state.task_of_class[int(labels[np.argmax(counts)])]
            _evaluate(state, task_tests, current_task, log)
    final = log.task_accuracy[-1] if log.task_accuracy else {}
    return RunResult(cfg, stream_cfg, log, state.ledger, final, state.model)
