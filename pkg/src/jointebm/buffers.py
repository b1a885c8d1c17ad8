"""Persistent-chain storage for PCD.

The replay mode draws slots uniformly, reinitializes each drawn slot from
the initial distribution with probability ``reinit_rate``, and overwrites
the drawn slots with the post-sampling states on write-back (appending
while below capacity). The reservoir mode keeps a uniform-over-history
sample of everything pushed. Entries are always (x, y) pairs; the pairing
cannot be broken through this interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .energy import ConditioningSpec
from .samplers import SampleBatch

MODES = ("replay", "reservoir")


@dataclass
class InitialDistribution:
    """Per-dimension uniform box for fresh x, plus the label sampler.

    Fresh draws get labels from the model's conditional at the drawn x
    before any Langevin step, which is the stable initialization order.
    """

    low: np.ndarray
    high: np.ndarray
    label_fn: object  # callable (x, rng) -> y

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.low.shape != self.high.shape or (self.high < self.low).any():
            raise ValueError("invalid box bounds")

    @classmethod
    def from_batch(cls, x: np.ndarray, label_fn) -> "InitialDistribution":
        return cls(x.min(axis=0), x.max(axis=0), label_fn)

    def draw(self, n: int, rng: np.random.Generator) -> SampleBatch:
        x = self.low + rng.random((n, self.low.size)) * (self.high - self.low)
        y = self.label_fn(x, rng)
        return SampleBatch(x, y)


class FetchResult:
    def __init__(self, batch: SampleBatch, matched: int, shortfall: int):
        self.batch = batch
        self.matched = matched
        self.shortfall = shortfall


class JointBuffer:
    def __init__(self, capacity: int, reinit_rate: float = 0.05, mode: str = "replay"):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= reinit_rate <= 1.0:
            raise ValueError("reinit_rate must lie in [0, 1]")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.capacity = capacity
        self.reinit_rate = reinit_rate
        self.mode = mode
        self._x: np.ndarray | None = None
        self._y: np.ndarray | None = None
        self.size = 0
        self.total_pushes = 0
        self._pending_slots: np.ndarray | None = None

    def __len__(self) -> int:
        return self.size

    def _ensure_storage(self, dim: int, k: int) -> None:
        if self._x is None:
            self._x = np.zeros((self.capacity, dim))
            self._y = np.zeros((self.capacity, k), dtype=np.int64)
        elif self._x.shape[1] != dim or self._y.shape[1] != k:
            raise ValueError("sample shape does not match buffer contents")

    def _validate(self, batch: SampleBatch) -> None:
        if (batch.x < 0).any() or (batch.x > 1).any():
            raise ValueError("buffer entries must lie in [0, 1]")
        if not np.isin(batch.y, (0, 1)).all():
            raise ValueError("buffer labels must be binary")

    def contents(self) -> SampleBatch:
        if self.size == 0:
            raise ValueError("buffer is empty")
        return SampleBatch(self._x[: self.size].copy(), self._y[: self.size].copy())

    # -- replay-mode persistent chains ------------------------------------

    def draw_init_batch(
        self,
        n: int,
        p0: InitialDistribution | None,
        rng: np.random.Generator,
    ) -> SampleBatch:
        """Draw chain initializations; fresh slots come from p0.

        Each slot is a uniformly drawn buffer entry, independently replaced
        by a fresh p0 draw with probability ``reinit_rate``. An empty buffer
        draws everything fresh. The drawn slot indices are remembered for
        the matching ``write_back``.
        """
        if n < 1:
            raise ValueError("batch size must be positive")
        if self.size == 0:
            if p0 is None:
                raise ValueError("empty buffer needs an initial distribution")
            batch = p0.draw(n, rng)
            self._pending_slots = np.full(n, -1, dtype=np.int64)
            return batch

        slots = rng.integers(0, self.size, size=n)
        fresh = rng.random(n) < self.reinit_rate
        x = self._x[slots].copy()
        y = self._y[slots].copy()
        n_fresh = int(fresh.sum())
        if n_fresh > 0:
            if p0 is None:
                raise ValueError("reinitialization needs an initial distribution")
            fresh_batch = p0.draw(n_fresh, rng)
            x[fresh] = fresh_batch.x
            y[fresh] = fresh_batch.y
            if self.size < self.capacity:
                slots = slots.copy()
                slots[fresh] = -1  # fresh chains append while filling up
        self._pending_slots = slots
        return SampleBatch(x, y)

    def write_back(self, batch: SampleBatch) -> None:
        """Store post-sampling states into the drawn slots (replay mode).

        Without a preceding draw this is a plain append, clamped at
        capacity. Entries marked -1 by the draw are appended too.
        """
        if self.mode != "replay":
            raise ValueError("write_back applies to replay buffers; use reservoir_update")
        self._validate(batch)
        self._ensure_storage(batch.x.shape[1], batch.y.shape[1])
        slots = self._pending_slots
        self._pending_slots = None
        if slots is not None and len(slots) != len(batch):
            slots = None
        for i in range(len(batch)):
            slot = -1 if slots is None else int(slots[i])
            if slot >= 0:
                self._x[slot] = batch.x[i]
                self._y[slot] = batch.y[i]
            elif self.size < self.capacity:
                self._x[self.size] = batch.x[i]
                self._y[self.size] = batch.y[i]
                self.size += 1
            # at capacity with no slot: drop

    # -- reservoir mode ----------------------------------------------------

    def reservoir_update(self, sample, rng: np.random.Generator) -> None:
        """Classic reservoir insertion over the stream of pushed samples."""
        if self.mode != "reservoir":
            raise ValueError("reservoir_update applies to reservoir buffers")
        x = np.asarray(sample.x, dtype=np.float64).reshape(-1)
        y = np.asarray(sample.y, dtype=np.int64).reshape(-1)
        if (x < 0.0).any() or (x > 1.0).any():
            raise ValueError("buffer entries must lie in [0, 1]")
        if ((y != 0) & (y != 1)).any():
            raise ValueError("buffer labels must be binary")
        self._ensure_storage(x.size, y.size)
        self.total_pushes += 1
        if self.size < self.capacity:
            self._x[self.size] = x
            self._y[self.size] = y
            self.size += 1
            return
        j = int(rng.integers(0, self.total_pushes))
        if j < self.capacity:
            self._x[j] = x
            self._y[j] = y

    def store(self, batch: SampleBatch, rng: np.random.Generator) -> None:
        """Mode-dispatching write used by the training loop."""
        if self.mode == "replay":
            self.write_back(batch)
        else:
            self._pending_slots = None
            for i in range(len(batch)):
                self.reservoir_update(batch[i], rng)

    # -- conditional lookup -------------------------------------------------

    def conditional_fetch(
        self, spec: ConditioningSpec, n: int, rng: np.random.Generator
    ) -> FetchResult:
        """Up to ``n`` entries matching the conditioning, with replacement.

        A buffer with no matching entry reports a shortfall of ``n``; the
        shortfall is data, not an error.
        """
        if n < 1:
            raise ValueError("fetch count must be positive")
        if self.size == 0:
            empty = SampleBatch(np.zeros((0, 1)), np.zeros((0, spec.num_attributes)))
            return FetchResult(empty, 0, n)
        mask = spec.matches(self._y[: self.size])
        matched = int(mask.sum())
        if matched == 0:
            empty = SampleBatch(
                np.zeros((0, self._x.shape[1])), np.zeros((0, self._y.shape[1]))
            )
            return FetchResult(empty, 0, n)
        pool = np.flatnonzero(mask)
        pick = pool[rng.integers(0, matched, size=n)]
        return FetchResult(SampleBatch(self._x[pick].copy(), self._y[pick].copy()), matched, 0)


def save_buffer(path, buf: JointBuffer, p0: InitialDistribution | None = None) -> None:
    tensors = {
        "buffer/capacity": np.array([float(buf.capacity)]),
        "buffer/reinit_rate": np.array([buf.reinit_rate]),
        "buffer/mode": np.array([float(MODES.index(buf.mode))]),
        "buffer/total_pushes": np.array([float(buf.total_pushes)]),
    }
    if buf.size > 0:
        tensors["buffer/x"] = buf._x[: buf.size]
        tensors["buffer/y"] = buf._y[: buf.size].astype(np.float64)
    if p0 is not None:
        tensors["buffer/p0_low"] = p0.low
        tensors["buffer/p0_high"] = p0.high
    container.write_tensors(path, tensors)


def load_buffer(path, label_fn=None) -> tuple[JointBuffer, InitialDistribution | None]:
    tensors = container.read_tensors(path)
    buf = JointBuffer(
        capacity=int(tensors["buffer/capacity"][0]),
        reinit_rate=float(tensors["buffer/reinit_rate"][0]),
        mode=MODES[int(tensors["buffer/mode"][0])],
    )
    buf.total_pushes = int(tensors["buffer/total_pushes"][0])
    if "buffer/x" in tensors:
        x = tensors["buffer/x"]
        y = tensors["buffer/y"].astype(np.int64)
        buf._ensure_storage(x.shape[1], y.shape[1])
        buf._x[: x.shape[0]] = x
        buf._y[: y.shape[0]] = y
        buf.size = x.shape[0]
    p0 = None
    if "buffer/p0_low" in tensors:
        p0 = InitialDistribution(tensors["buffer/p0_low"], tensors["buffer/p0_high"], label_fn)
    return buf, p0
