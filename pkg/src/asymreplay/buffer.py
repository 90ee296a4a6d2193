"""Fixed-capacity reservoir replay memory.

Management is method-agnostic: given the same seed and stream, every
training method ends up with an identical buffer.  The positive/negative
fetch used by the metric-learning loss draws from a separate RNG so that
methods which never call it do not perturb the reservoir state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .losses import NegativePolicy

BUFFER_DUMP_MAGIC = b"ARBF"
BUFFER_DUMP_VERSION = 1


@dataclass
class Slot:
    x: np.ndarray
    y: int


@dataclass
class FetchResult:
    """Per-anchor (positive, negative) references.

    Each entry of ``pairs`` is either None (anchor skipped) or a tuple
    ``((src, idx), (src, idx))`` where src is "in" (incoming batch row) or
    "buf" (buffer slot).  ``buffer_slots`` lists the unique slots that must
    be forwarded, in first-use order.
    """

    pairs: list
    buffer_slots: list = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return sum(1 for p in self.pairs if p is None)


class ReplayBuffer:
    def __init__(self, capacity: int, seed: int = 0,
                 rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.slots: list[Slot] = []
        self.n_seen = 0
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def __len__(self):
        return len(self.slots)

    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.slots], dtype=np.intp)

    def reservoir_update(self, inputs, labels):
        """Vitter's Algorithm R, applied per example."""
        inputs = np.asarray(inputs, dtype=np.float32)
        for x, y in zip(inputs, labels):
            if self.n_seen < self.capacity:
                self.slots.append(Slot(x.copy(), int(y)))
            else:
                j = self.rng.integers(0, self.n_seen + 1)
                if j < self.capacity:
                    self.slots[j] = Slot(x.copy(), int(y))
            self.n_seen += 1

    def sample(self, k: int):
        """k examples: with replacement while underfilled, without otherwise.

        An empty buffer yields an empty batch (rehearsal simply skipped).
        """
        if not self.slots:
            dim = 0
            return np.zeros((0, dim), dtype=np.float32), np.zeros(0, dtype=np.intp)
        n = len(self.slots)
        if n < k:
            idx = self.rng.integers(0, n, size=k)
        else:
            idx = self.rng.choice(n, size=k, replace=False)
        xs = np.stack([self.slots[i].x for i in idx])
        ys = np.array([self.slots[i].y for i in idx], dtype=np.intp)
        return xs, ys

    def fetch_pos_neg(self, x_in, y_in, policy: NegativePolicy,
                      rng: np.random.Generator) -> FetchResult:
        """One positive and one negative reference per incoming anchor.

        Positives prefer an in-batch same-class partner and fall back to the
        buffer; anchors with no positive or no admissible negative are
        skipped.  Under INCOMING_ONLY, negatives are restricted to classes
        present in the incoming batch.
        """
        y_in = np.asarray(y_in)
        n = len(y_in)
        c_curr = set(int(c) for c in np.unique(y_in))
        buf_labels = self.labels()
        pairs: list = []
        used_slots: list[int] = []
        slot_seen = set()

        def note_slot(s):
            if s not in slot_seen:
                slot_seen.add(s)
                used_slots.append(s)

        for i in range(n):
            ci = int(y_in[i])
            # positive: in-batch first, buffer fallback
            in_pos = [j for j in range(n) if j != i and int(y_in[j]) == ci]
            if in_pos:
                pos = ("in", int(rng.choice(in_pos)))
            else:
                buf_pos = np.where(buf_labels == ci)[0]
                if buf_pos.size:
                    pos = ("buf", int(rng.choice(buf_pos)))
                else:
                    pairs.append(None)
                    continue
            # negative
            if policy is NegativePolicy.INCOMING_ONLY:
                ok = lambda c: c != ci and c in c_curr
            else:
                ok = lambda c: c != ci
            in_neg = [("in", j) for j in range(n) if ok(int(y_in[j]))]
            buf_neg = [("buf", int(s)) for s in np.where(
                [ok(int(c)) for c in buf_labels])[0]] if len(buf_labels) else []
            cands = in_neg + buf_neg
            if not cands:
                pairs.append(None)
                continue
            neg = cands[int(rng.integers(0, len(cands)))]
            if pos[0] == "buf":
                note_slot(pos[1])
            if neg[0] == "buf":
                note_slot(neg[1])
            pairs.append((pos, neg))
        return FetchResult(pairs=pairs, buffer_slots=used_slots)

    def dump(self, path):
        """Versioned little-endian dump of (label, input) pairs."""
        dim = self.slots[0].x.size if self.slots else 0
        with open(path, "wb") as fh:
            fh.write(BUFFER_DUMP_MAGIC)
            fh.write(struct.pack("<III", BUFFER_DUMP_VERSION, len(self.slots), dim))
            for s in self.slots:
                fh.write(struct.pack("<i", s.y))
                fh.write(s.x.astype("<f4").tobytes())


def load_buffer_dump(path):
    """Returns (inputs, labels) from a buffer dump file."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BUFFER_DUMP_MAGIC:
            raise ValueError(f"bad buffer dump magic {magic!r}")
        version, count, dim = struct.unpack("<III", fh.read(12))
        if version != BUFFER_DUMP_VERSION:
            raise ValueError(f"unsupported buffer dump version {version}")
        xs = np.zeros((count, dim), dtype=np.float32)
        ys = np.zeros(count, dtype=np.intp)
        for i in range(count):
            (ys[i],) = struct.unpack("<i", fh.read(4))
            raw = fh.read(4 * dim)
            if len(raw) != 4 * dim:
                raise ValueError("truncated buffer dump payload")
            xs[i] = np.frombuffer(raw, dtype="<f4")
    return xs, ys
