"""Reverse-mode differentiation on a flat tape, plus Adam.

Every node stores its forward value and a vector-Jacobian closure. Nodes are
appended in evaluation order, so input ids are always smaller than the id of the
node that consumes them and a single reverse sweep visits each node once.
All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericalDomainError

LOG_2PI = math.log(2.0 * math.pi)

Vjp = Callable[[np.ndarray], tuple["np.ndarray | None", ...]]


@dataclass(slots=True)
class _Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Vjp | None
    requires_grad: bool


class Var:
    """Handle to a tape node. Arithmetic operators record new nodes."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other) -> Var:
        return add(self, other)

    def __radd__(self, other) -> Var:
        return add(other, self)

    def __sub__(self, other) -> Var:
        return add(self, negate(self.tape.lift(other)))

    def __rsub__(self, other) -> Var:
        return add(other, negate(self))

    def __mul__(self, other) -> Var:
        return multiply(self, other)

    def __rmul__(self, other) -> Var:
        return multiply(other, self)

    def __neg__(self) -> Var:
        return negate(self)

    def __truediv__(self, other: float) -> Var:
        if isinstance(other, Var):
            raise ContractError("division is only defined by constants")
        return multiply(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __getitem__(self, key) -> Var:
        return index(self, key)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"


class Gradients:
    """Result of a backward pass, indexed by Var."""

    def __init__(self, tape: Tape, grads: list[np.ndarray | None]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        g = self._grads[var.index] if var.index < len(self._grads) else None
        if g is None:
            return np.zeros_like(var.value)
        return g


class Tape:
    """Append-only record of primitive operations. Single-threaded."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.last_visits = 0

    def leaf(self, value) -> Var:
        """A differentiable input."""
        return self._append("leaf", (), np.array(value, dtype=np.float64), None, True)

    def constant(self, value) -> Var:
        return self._append("constant", (), np.asarray(value, dtype=np.float64), None, False)

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ContractError("cannot mix variables from different tapes")
            return x
        return self.constant(x)

    def record(self, op: str, inputs: Sequence[Var], value, vjp: Vjp) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericalDomainError(op)
        requires_grad = any(self.nodes[v.index].requires_grad for v in inputs)
        return self._append(
            op,
            tuple(v.index for v in inputs),
            value,
            vjp if requires_grad else None,
            requires_grad,
        )

    def _append(self, op, inputs, value, vjp, requires_grad) -> Var:
        self.nodes.append(_Node(op, inputs, value, vjp, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def backward(self, output: Var) -> Gradients:
        """Accumulate d(sum of output)/d(node) for every node up to output."""
        grads: list[np.ndarray | None] = [None] * (output.index + 1)
        grads[output.index] = np.ones_like(output.value)
        visits = 0
        for i in range(output.index, -1, -1):
            visits += 1
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for j, contribution in zip(node.inputs, node.vjp(g)):
                if contribution is None or not self.nodes[j].requires_grad:
                    continue
                if not np.all(np.isfinite(contribution)):
                    raise NumericalDomainError(node.op, "gradient")
                grads[j] = contribution if grads[j] is None else grads[j] + contribution
        self.last_visits = visits
        return Gradients(self, grads)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tape, Var, Var]:
    tape = a.tape if isinstance(a, Var) else b.tape
    return tape, tape.lift(a), tape.lift(b)


def add(a, b) -> Var:
    tape, a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        "add", (a, b), a.value + b.value, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def multiply(a, b) -> Var:
    tape, a, b = _pair(a, b)
    va, vb = a.value, b.value
    return tape.record(
        "multiply",
        (a, b),
        va * vb,
        lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)),
    )


def negate(a: Var) -> Var:
    return a.tape.record("negate", (a,), -a.value, lambda g: (-g,))


def matvec(x, w) -> Var:
    """x @ w.T for x of shape (..., n) and w of shape (m, n)."""
    tape, x, w = _pair(x, w)
    vx, vw = x.value, w.value
    if vx.shape[-1] != vw.shape[1]:
        raise ContractError(f"matvec shape mismatch: {vx.shape} vs {vw.shape}")

    def vjp(g):
        gx = g @ vw
        gw = g.reshape(-1, vw.shape[0]).T @ vx.reshape(-1, vw.shape[1])
        return gx, gw

    return tape.record("matvec", (x, w), vx @ vw.T, vjp)


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape.record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def softplus(x: Var) -> Var:
    vx = x.value
    slope = 0.5 * (1.0 + np.tanh(0.5 * vx))
    return x.tape.record("softplus", (x,), np.logaddexp(0.0, vx), lambda g: (g * slope,))


def exp(x: Var) -> Var:
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return x.tape.record("exp", (x,), y, lambda g: (g * y,))


def log(x: Var) -> Var:
    vx = x.value
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(vx)
    return x.tape.record("log", (x,), y, lambda g: (g / vx,))


def square(x: Var) -> Var:
    vx = x.value
    return x.tape.record("square", (x,), vx * vx, lambda g: (2.0 * vx * g,))


def sum(x: Var, axis: int | None = None) -> Var:  # noqa: A001 - mirrors numpy
    shape = x.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record("sum", (x,), np.sum(x.value, axis=axis), vjp)


def sigmoid(x: Var) -> Var:
    return 0.5 * tanh(0.5 * x) + 0.5


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = xs[0].tape
    xs = [tape.lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record("concat", xs, np.concatenate([x.value for x in xs], axis=axis), vjp)


def index(x: Var, key) -> Var:
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return x.tape.record("index", (x,), x.value[key], vjp)


def segment(flat: Var, offset: int, shape: tuple[int, ...]) -> Var:
    """A reshaped view of flat[offset:offset + prod(shape)]."""
    size = int(np.prod(shape))
    total = flat.shape[0]

    def vjp(g):
        out = np.zeros(total)
        out[offset : offset + size] = g.reshape(-1)
        return (out,)

    return flat.tape.record("segment", (flat,), flat.value[offset : offset + size].reshape(shape), vjp)


def gaussian_log_density(s, mu, scale) -> Var:
    """log N(s; mu, L L^T) with L = [[l11, 0], [l21, l22]].

    s and mu have shape (..., 2); scale has shape (..., 3) holding
    [l11, l21, l22] with l11, l22 > 0. Returns shape (...).
    """
    tape = next(v.tape for v in (s, mu, scale) if isinstance(v, Var))
    s, mu, scale = tape.lift(s), tape.lift(mu), tape.lift(scale)
    d = s.value - mu.value
    l11, l21, l22 = scale.value[..., 0], scale.value[..., 1], scale.value[..., 2]
    if np.any(l11 <= 0) or np.any(l22 <= 0):
        raise NumericalDomainError("gaussian_log_density", "non-positive scale diagonal")
    z1 = d[..., 0] / l11
    z2 = (d[..., 1] - l21 * z1) / l22
    value = -LOG_2PI - np.log(l11) - np.log(l22) - 0.5 * (z1 * z1 + z2 * z2)

    def vjp(g):
        a = -z1 + z2 * l21 / l22  # total derivative w.r.t. z1
        dd = np.stack([a / l11, -z2 / l22], axis=-1) * g[..., None]
        dscale = np.stack(
            [
                -1.0 / l11 - a * z1 / l11,
                z1 * z2 / l22,
                -1.0 / l22 + z2 * z2 / l22,
            ],
            axis=-1,
        ) * g[..., None]
        return (
            _unbroadcast(dd, s.shape),
            _unbroadcast(-dd, mu.shape),
            _unbroadcast(dscale, scale.shape),
        )

    return tape.record("gaussian_log_density", (s, mu, scale), value, vjp)


@dataclass(frozen=True, slots=True)
class Segment:
    name: str
    offset: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True, slots=True, eq=False)
class ParamVector:
    """Flat float64 parameter array partitioned into named segments."""

    values: np.ndarray
    layout: tuple[Segment, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        offset = 0
        for seg in self.layout:
            if seg.offset != offset:
                raise ContractError(f"segment '{seg.name}' is not contiguous")
            offset += seg.size
        if offset != len(values):
            raise ContractError(
                f"segments cover {offset} entries but the array has {len(values)}"
            )

    @classmethod
    def from_shapes(cls, shapes: dict[str, tuple[int, ...]], values=None) -> ParamVector:
        layout = []
        offset = 0
        for name, shape in shapes.items():
            seg = Segment(name, offset, tuple(shape))
            layout.append(seg)
            offset += seg.size
        if values is None:
            values = np.zeros(offset)
        return cls(values, tuple(layout))

    def __len__(self) -> int:
        return len(self.values)

    def _find(self, name: str) -> Segment:
        for seg in self.layout:
            if seg.name == name:
                return seg
        raise ContractError(f"unknown parameter segment '{name}'")

    def segment(self, name: str) -> np.ndarray:
        seg = self._find(name)
        return self.values[seg.offset : seg.offset + seg.size].reshape(seg.shape)

    def replace(self, name: str, value) -> ParamVector:
        seg = self._find(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != seg.shape:
            raise ContractError(f"segment '{name}' expects shape {seg.shape}, got {value.shape}")
        values = self.values.copy()
        values[seg.offset : seg.offset + seg.size] = value.reshape(-1)
        return ParamVector(values, self.layout)

    def with_values(self, values) -> ParamVector:
        return ParamVector(values, self.layout)

    def unpack(self, flat: Var) -> dict[str, Var]:
        """Per-segment tape views of a leaf holding these values."""
        return {seg.name: segment(flat, seg.offset, seg.shape) for seg in self.layout}


@dataclass(frozen=True, slots=True, eq=False)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, learning_rate: float = 1e-3, **kwargs) -> AdamState:
        return cls(0, np.zeros(size), np.zeros(size), learning_rate, **kwargs)


def forward_backward(
    expression: Callable[[Tape, Var], Var],
    params: ParamVector | np.ndarray,
) -> tuple[float, np.ndarray]:
    """Evaluate a scalar expression of params and its gradient."""
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    tape = Tape()
    leaf = tape.leaf(values)
    out = expression(tape, leaf)
    if out.value.size != 1:
        raise ContractError(f"expression must be scalar, got shape {out.shape}")
    grads = tape.backward(out)
    return float(out.value), grads[leaf]


def adam_step(
    params: ParamVector | np.ndarray,
    gradient: np.ndarray,
    state: AdamState,
    minimize: bool = True,
) -> tuple[ParamVector | np.ndarray, AdamState]:
    """One bias-corrected Adam update. Set minimize=False to ascend."""
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != values.shape:
        raise ContractError(f"gradient shape {gradient.shape} != params shape {values.shape}")
    if state.m.shape != values.shape:
        raise ContractError("Adam state does not match the parameter array")

    g = gradient if minimize else -gradient
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    updated = values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    new_state = AdamState(
        t, m, v, state.learning_rate, state.beta1, state.beta2, state.epsilon
    )
    if isinstance(params, ParamVector):
        return params.with_values(updated), new_state
    return updated, new_state
