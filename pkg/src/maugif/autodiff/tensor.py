"""Dense tensors and the tape that records differentiable operations.

A :class:`Tape` is activated as a context manager.  While it is active, every
primitive applied to a tensor with ``requires_grad`` appends one node to the
tape; :func:`backward` then walks the nodes in reverse and consumes them.
Outside any tape, primitives only compute values, which is how inference runs.
"""

from __future__ import annotations

import threading

import numpy as np

from ..exceptions import GraphError, NumericError, UsageError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    """Return the innermost active tape, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-d float array with an optional gradient buffer.

    Activations use N, C, H, W order and conv kernels Cout, Cin, Kh, Kw.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE, copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @classmethod
    def _result(cls, data):
        # Op outputs skip the copy and finiteness scan of the public constructor.
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor._result(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)


class _Node:
    __slots__ = ("backward_fn", "inputs", "output")

    def __init__(self, backward_fn, inputs, output):
        self.backward_fn = backward_fn
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()


def record(output_data, inputs, backward_fn):
    """Wrap ``output_data`` as a Tensor and record it on the active tape.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    Nothing is recorded when no tape is active or no input needs gradients.
    """
    out = Tensor._result(output_data)
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    out._tape = tape
    tape.nodes.append(_Node(backward_fn, inputs, out))
    return out


def backward(loss, tape):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing it.

    The tape is consumed: all nodes are cleared afterwards, even on error.
    """
    try:
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not tape:
            raise GraphError("loss was not produced on this tape")
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is not finite")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._tape is None:
                    leaves[id(inp)] = inp
                elif inp._tape is not tape:
                    raise GraphError("graph references a tensor recorded on another tape")
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, leaf in leaves.items():
            g = grads[key].astype(leaf.data.dtype, copy=False)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
    finally:
        tape.clear()
