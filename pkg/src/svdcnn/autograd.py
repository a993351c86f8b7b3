"""Dense tensors plus a taped reverse-mode differentiation engine.

Values are float32 by default; float64 is supported so gradient checks can
run at full precision.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class StateError(RuntimeError):
    """Operation applied to an object in the wrong state."""


class TapeConsumedError(StateError):
    """A tape drives exactly one reverse pass."""


class NonFiniteError(RuntimeError):
    """A recorded operation produced NaN or Inf."""

    def __init__(self, op_index: int, op_name: str):
        super().__init__(f"operation {op_index} ({op_name}) produced non-finite values")
        self.op_index = op_index
        self.op_name = op_name


class Tensor:
    """N-dimensional array with an optional gradient buffer.

    The data buffer is row-major and is treated as immutable once an
    operation has consumed it; only ``grad`` accumulates in place.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    Operations append themselves in execution order, which is a valid
    topological order of the value graph; one reverse sweep over the record
    populates every reachable gradient.
    """

    def __init__(self):
        self._entries: list[tuple[str, Tensor, Callable[[np.ndarray], None]]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def append(self, name: str, out: Tensor, pull: Callable[[np.ndarray], None]) -> None:
        self._entries.append((name, out, pull))

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self):
        return tuple(self._entries)


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Run the reverse pass of ``tape`` seeded at a scalar ``loss``.

    Every tensor with ``requires_grad`` reachable from the loss gets its
    gradient populated; tensors not on a path to the loss are untouched.
    """
    if tape.consumed:
        raise TapeConsumedError("tape was already consumed by a previous backward pass")
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if len(tape) == 0:
        raise ValueError("tape is empty: the loss was not produced by recorded operations")
    tape.consumed = True
    loss.accumulate_grad(np.ones_like(loss.data))
    for _name, out, pull in reversed(tape._entries):
        if out.grad is not None:
            pull(out.grad)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
    max_entries_per_input: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare taped gradients of a scalar function with central differences.

    ``f(*inputs)`` must return a scalar tensor and be deterministic. Returns
    the worst relative error ``|analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8)`` over the checked entries. With
    ``max_entries_per_input`` set, a seeded sample of entries per input is
    checked instead of all of them.
    """
    if not 0.0 < eps <= 0.1:
        raise ValueError(f"eps must be in (0, 0.1], got {eps}")
    inputs = list(inputs)
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad_check inputs must have requires_grad=True")
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
    if out.data.size != 1:
        raise ValueError(f"f must return a scalar, got shape {out.shape}")
    for i, (name, produced, _pull) in enumerate(tape.entries):
        if not np.all(np.isfinite(produced.data)):
            raise NonFiniteError(i, name)
    backward(out, tape)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        n = flat.size
        if max_entries_per_input is not None and n > max_entries_per_input:
            positions = rng.choice(n, size=max_entries_per_input, replace=False)
        else:
            positions = np.arange(n)
        for j in positions:
            saved = flat[j]
            flat[j] = saved + eps
            hi = f(*inputs).data.item()
            x_hi = float(flat[j])
            flat[j] = saved - eps
            lo = f(*inputs).data.item()
            x_lo = float(flat[j])
            flat[j] = saved
            numeric = (hi - lo) / (x_hi - x_lo)
            a = float(analytic[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
