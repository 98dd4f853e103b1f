"""Dense tensors and the reverse-mode differentiation tape.

Values are 64-bit floats in row-major numpy arrays. The tape is
define-by-run: every training step builds a fresh ``Tape``, records each
operation in topological order, and `backward` replays the records in
reverse. Backward rules are written in terms of taped operations, so
running them with recording enabled (``create_graph=True``) yields
gradients that are themselves differentiable nodes — which is what lets
the trainer differentiate through a one-step lookahead update.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError


class Tensor:
    """A dense float64 tensor, immutable from the tape's point of view.

    ``requires_grad`` marks leaves whose gradient `backward` must report.
    Interior nodes created by operations inherit the flag from their
    inputs while a tape is recording.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major float64 view of the stored values."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut from the graph (shares the underlying array)."""
        return Tensor(self.data, requires_grad=False)

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg)

    def assign_(self, data) -> None:
        """Replace the stored values in place.

        Only the optimizer may call this, and only between tapes: no tape
        that recorded this tensor may be replayed afterwards.
        """
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ContractError(
                f"assign_ shape mismatch: {arr.shape} vs {self.data.shape}")
        self.data = arr

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar is attached by mbrec.autodiff.ops at import time.


class OpRecord:
    """One recorded operation: inputs, output id, and its backward rule.

    ``backward`` maps the upstream gradient of the output to a tuple of
    gradients aligned with ``inputs`` (entries may be None).
    """

    __slots__ = ("name", "inputs", "output_id", "backward")

    def __init__(self, name: str, inputs: tuple[Tensor, ...], output_id: int,
                 backward: Callable[[Tensor], tuple]):
        self.name = name
        self.inputs = inputs
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Ordered record of operations; every input of record t was produced
    by a record with index < t, so one reverse sweep suffices."""

    def __init__(self):
        self.records: list[OpRecord] = []
        self._ids: dict[int, int] = {}       # id(tensor) -> node id
        self._keepalive: list[Tensor] = []   # pins tensors so ids stay valid
        self._outputs: set[int] = set()      # node ids produced by a record
        self._next_id = 0
        self.leaves: dict[int, Tensor] = {}  # node id -> leaf tensor

    def node_id(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def ensure_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._next_id
            self._next_id += 1
            self._ids[id(t)] = nid
            self._keepalive.append(t)
        return nid

    def watch(self, t: Tensor) -> int:
        """Register a requires_grad leaf so backward reports it even when
        it is unreachable from the loss."""
        nid = self.ensure_id(t)
        if nid not in self._outputs:
            self.leaves[nid] = t
        return nid

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[Tensor], tuple]) -> None:
        for t in inputs:
            if t.requires_grad and self._ids.get(id(t)) is None:
                self.watch(t)
            else:
                self.ensure_id(t)
        out_id = self.ensure_id(output)
        self._outputs.add(out_id)
        self.leaves.pop(out_id, None)
        self.records.append(OpRecord(name, tuple(inputs), out_id, backward))


# --- recording context -------------------------------------------------

_STACK: list[Tape | None] = []


def _active() -> Tape | None:
    return _STACK[-1] if _STACK else None


@contextmanager
def recording(tape: Tape):
    """Make ``tape`` the active tape inside the block."""
    _STACK.append(tape)
    try:
        yield tape
    finally:
        _STACK.pop()


@contextmanager
def paused():
    """Disable recording inside the block (pure evaluation)."""
    _STACK.append(None)
    try:
        yield
    finally:
        _STACK.pop()


def active_tape() -> Tape | None:
    return _active()


# --- backward ----------------------------------------------------------

def backward(loss: Tensor, tape: Tape, create_graph: bool = False
             ) -> dict[int, Tensor]:
    """Reverse sweep from ``loss`` over ``tape``.

    Returns ``{node id -> gradient}`` covering every watched leaf; leaves
    unreachable from the loss get zeros. With ``create_graph=True`` the
    backward rules run with recording enabled, so the returned gradients
    are tape nodes that can be differentiated again.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss_id = tape.node_id(loss)
    if loss_id is None:
        raise ContractError("loss was not produced on this tape")

    seed = Tensor(np.ones(loss.shape), requires_grad=False)
    grads: dict[int, Tensor] = {loss_id: seed}
    snapshot = list(tape.records)

    def run(rec: OpRecord, g_out: Tensor) -> tuple:
        if create_graph:
            with recording(tape):
                return rec.backward(g_out)
        with paused():
            return rec.backward(g_out)

    def accumulate(nid: int, g: Tensor) -> None:
        prev = grads.get(nid)
        if prev is None:
            grads[nid] = g
            return
        if create_graph:
            with recording(tape):
                grads[nid] = _add_for_accum(prev, g)
        else:
            with paused():
                grads[nid] = _add_for_accum(prev, g)

    for rec in reversed(snapshot):
        g_out = grads.pop(rec.output_id, None)
        if g_out is None:
            continue
        input_grads = run(rec, g_out)
        for t, g in zip(rec.inputs, input_grads):
            if g is None or not t.requires_grad:
                continue
            accumulate(tape.node_id(t), g)

    out: dict[int, Tensor] = {}
    for nid, leaf in tape.leaves.items():
        g = grads.get(nid)
        if g is None:
            g = Tensor(np.zeros(leaf.shape), requires_grad=False)
        out[nid] = g
    return out


def grad(loss: Tensor, wrt: Iterable[Tensor], tape: Tape,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``loss`` with respect to each tensor in ``wrt``."""
    wrt = list(wrt)
    for t in wrt:
        if not t.requires_grad:
            raise ContractError("grad() target does not require grad")
        tape.watch(t)
    gmap = backward(loss, tape, create_graph=create_graph)
    return [gmap[tape.node_id(t)] for t in wrt]


def _add_for_accum(a: Tensor, b: Tensor) -> Tensor:
    from . import ops
    return ops.add(a, b)
