"""The secure-intermediary execution model.

Users run randomizers, an intermediary (shuffler or aggregator) acts on the
assembled batch of messages, and an analyzer post-processes its output.
Intermediaries here are ideal functionalities: pure functions plus an
:class:`~puredp.rng.Rng`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import StructuralError
from .rng import Rng

DROPOUT = None


@dataclass(frozen=True)
class MessageBatch:
    """Rows of ``d`` residues mod ``m``; ``capacity`` bounds the row count when set."""

    rows: np.ndarray
    m: int
    capacity: Optional[int] = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise StructuralError("rows must form a 2-d array with at least one column")
        if self.m < 2:
            raise StructuralError("modulus must be >= 2")
        if rows.size and (rows.min() < 0 or rows.max() >= self.m):
            raise StructuralError(f"entries must lie in [0, {self.m - 1}]")
        if self.capacity is not None and rows.shape[0] > self.capacity:
            raise StructuralError(f"{rows.shape[0]} rows exceed capacity {self.capacity}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def empty(cls, d: int, m: int, capacity: Optional[int] = None) -> "MessageBatch":
        return cls(np.zeros((0, d), dtype=np.int64), m, capacity)

    @classmethod
    def concat(cls, parts: Sequence[np.ndarray], d: int, m: int,
               capacity: Optional[int] = None) -> "MessageBatch":
        blocks = []
        for part in parts:
            a = np.asarray(part, dtype=np.int64)
            if a.ndim == 1:
                a = a.reshape(-1, d) if d > 1 else a.reshape(-1, 1)
            if a.ndim != 2 or a.shape[1] != d:
                raise StructuralError(f"message of shape {a.shape} does not have {d} columns")
            blocks.append(a)
        rows = np.concatenate(blocks) if blocks else np.zeros((0, d), dtype=np.int64)
        return cls(rows, m, capacity)

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


def aggregator(batch: MessageBatch) -> np.ndarray:
    """Coordinatewise sum mod ``m``; the empty batch maps to the zero vector."""
    return batch.rows.sum(axis=0) % batch.m


def shuffler(batch: MessageBatch, rng: Rng) -> MessageBatch:
    """Uniformly random permutation of the rows."""
    perm = rng.gen.permutation(len(batch))
    return MessageBatch(batch.rows[perm], batch.m, batch.capacity)


def canonical(batch: MessageBatch) -> MessageBatch:
    """Rows sorted lexicographically.

    The shuffler's output law depends only on the multiset of rows, so this
    is a lossless stand-in for it in exact computations.
    """
    if len(batch) == 0:
        return batch
    order = np.lexsort(batch.rows.T[::-1])
    return MessageBatch(batch.rows[order], batch.m, batch.capacity)


@dataclass(frozen=True)
class Attack:
    """Corrupted users and the message each injects (``None`` means dropout)."""

    injections: Mapping[int, Any] = field(default_factory=dict)

    @property
    def corrupted(self) -> frozenset[int]:
        return frozenset(self.injections)

    @classmethod
    def none(cls) -> "Attack":
        return cls({})

    @classmethod
    def dropout(cls, users: Sequence[int]) -> "Attack":
        return cls({int(i): DROPOUT for i in users})

    def validate(self, n: int, *, robust: bool = False) -> None:
        for i in self.injections:
            if not 0 <= i < n:
                raise StructuralError(f"attacked user {i} outside [0, {n})")
        if robust and 2 * len(self.injections) > n:
            raise StructuralError("robust-privacy experiments allow at most n/2 corruptions")


@dataclass
class Protocol:
    """``(R, I, A)``. ``randomize_batch`` optionally vectorizes ``R`` over honest users.

    ``randomizer(x, rng)`` returns one user's message as an array of rows;
    ``randomize_batch(xs, rng)`` returns the concatenated rows for all of ``xs``.
    """

    randomizer: Callable[[Any, Rng], np.ndarray]
    intermediary: Callable[[MessageBatch, Rng], Any]
    analyzer: Callable[[Any], Any]
    d: int
    m: int
    randomize_batch: Optional[Callable[[Sequence[Any], Rng], np.ndarray]] = None


@dataclass
class View:
    corrupted: list[int]
    injections: dict[int, Any]
    corrupted_inputs: dict[int, Any]
    intermediary_output: Any


@dataclass
class Transcript:
    inputs: list
    honest_messages: Any
    intermediary_output: Any
    analyzer_output: Any
    view: View

    def to_json(self) -> dict:
        return {
            "inputs": _jsonable(self.inputs),
            "honest_messages": _jsonable(self.honest_messages),
            "intermediary_output": _jsonable(self.intermediary_output),
            "analyzer_output": _jsonable(self.analyzer_output),
            "view": {
                "C": sorted(self.view.corrupted),
                "W": {str(k): _jsonable(v) for k, v in sorted(self.view.injections.items())},
                "x_C": {str(k): _jsonable(v) for k, v in sorted(self.view.corrupted_inputs.items())},
                "I_y": _jsonable(self.view.intermediary_output),
            },
        }


def _jsonable(obj):
    if isinstance(obj, MessageBatch):
        return obj.rows.tolist()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def execute(protocol: Protocol, inputs: Sequence, attack: Attack, rng: Rng,
            *, capacity: Optional[int] = None) -> Transcript:
    """Run ``protocol`` on ``inputs`` under ``attack``.

    Honest user ``i`` draws from ``rng.child(i)`` unless the protocol supplies a
    batch randomizer, which then consumes ``rng.child(n)``. The intermediary
    uses ``rng.child(n + 1)``.
    """
    n = len(inputs)
    attack.validate(n)
    honest = [i for i in range(n) if i not in attack.injections]

    if protocol.randomize_batch is not None:
        honest_rows = np.asarray(
            protocol.randomize_batch([inputs[i] for i in honest], rng.child(n)), dtype=np.int64)
        honest_messages = honest_rows
        parts = [honest_rows]
    else:
        honest_messages = {i: np.asarray(protocol.randomizer(inputs[i], rng.child(i)))
                           for i in honest}
        parts = [honest_messages[i] for i in honest]
    for i, w in sorted(attack.injections.items()):
        if w is not DROPOUT:
            parts.append(np.asarray(w))

    batch = MessageBatch.concat(parts, protocol.d, protocol.m, capacity)
    out = protocol.intermediary(batch, rng.child(n + 1))
    result = protocol.analyzer(out)
    view = View(
        corrupted=sorted(attack.corrupted),
        injections=dict(attack.injections),
        corrupted_inputs={i: inputs[i] for i in sorted(attack.corrupted)},
        intermediary_output=out,
    )
    return Transcript(list(inputs), honest_messages, out, result, view)


def ideal_aggregator(batch: MessageBatch, rng: Rng) -> np.ndarray:
    """:func:`aggregator` with the intermediary call signature."""
    return aggregator(batch)
