"""
Tape-based reverse-mode differentiation over numpy arrays.

Every primitive knows two backward rules: a numeric one (numpy in, numpy out)
used by `grad`, and a symbolic one that records the backward computation back
onto the tape, used by `grad_as_expression`. The symbolic rule is what lets a
loss contain input-gradients and still be differentiated w.r.t. parameters.

Primitive functions accept Var or plain arrays; with no Var operand they
evaluate directly in numpy and nothing is recorded (tape-less path).
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import AutodiffError

ArrayLike = Union[np.ndarray, float, int]


@dataclass
class Node:
    op: str
    operands: Tuple[int, ...]
    value: np.ndarray
    attrs: Dict = field(default_factory=dict)
    name: Optional[str] = None


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.index]
        return f"Var(#{self.index} {node.op} shape={self.shape})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, 1.0, float(other))
        other_shape = np.shape(other.value if isinstance(other, Var) else other)
        if len(self.shape) == 2 and len(other_shape) == 1:
            return add_row(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, 1.0, -float(other))
        return add(self, neg(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, -1.0, float(other))
        return add(other, neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return affine(self, float(other), 0.0)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only list of nodes; operands always precede results."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.marks: Dict[str, Var] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: ArrayLike, name: Optional[str] = None) -> Var:
        arr = np.array(value, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise AutodiffError(f"leaf {name or ''} has non-finite values")
        self.nodes.append(Node("leaf", (), arr, {}, name))
        return Var(self, len(self.nodes) - 1)

    constant = leaf

    def as_var(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise AutodiffError("operand belongs to a different tape")
            return x
        return self.leaf(x)

    def record(self, op: str, operands: Sequence[Var], attrs: Dict) -> Var:
        prim = PRIMITIVES[op]
        value = prim.forward([v.value for v in operands], attrs)
        if not np.all(np.isfinite(value)):
            raise AutodiffError(f"{op} produced non-finite values")
        self.nodes.append(Node(op, tuple(v.index for v in operands), value, attrs))
        return Var(self, len(self.nodes) - 1)

    def owns(self, v: Var) -> bool:
        return isinstance(v, Var) and v.tape is self and 0 <= v.index < len(self.nodes)

    def replay(self, overrides: Optional[Dict[int, ArrayLike]] = None) -> List[np.ndarray]:
        """Recompute every node value from the leaves, optionally overriding some leaves."""
        overrides = overrides or {}
        values: List[np.ndarray] = []
        for i, node in enumerate(self.nodes):
            if node.op == "leaf":
                values.append(np.array(overrides.get(i, node.value), dtype=float))
            else:
                values.append(PRIMITIVES[node.op].forward([values[j] for j in node.operands], node.attrs))
        return values


@dataclass(frozen=True)
class Primitive:
    forward: Callable
    # vjp(g, operand_values, out_value, attrs, needs) -> list of arrays (None where not needed)
    vjp: Callable
    # vjp_expr(g, operand_vars, out_var, attrs, needs) -> list of Vars (None where not needed)
    vjp_expr: Callable


PRIMITIVES: Dict[str, Primitive] = {}


def _register(name, forward, vjp, vjp_expr):
    PRIMITIVES[name] = Primitive(forward, vjp, vjp_expr)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise AutodiffError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _fwd_add(vals, attrs):
    _same_shape("add", *vals)
    return vals[0] + vals[1]


def _fwd_add_row(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.shape != (a.shape[1],):
        raise AutodiffError(f"add_row: cannot add {b.shape} to rows of {a.shape}")
    return a + b


def _fwd_mul(vals, attrs):
    _same_shape("mul", *vals)
    return vals[0] * vals[1]


def _fwd_affine(vals, attrs):
    a = vals[0]
    out = a * attrs["scale"] + attrs["shift"]
    if out.shape != a.shape:
        raise AutodiffError(f"affine: constants would broadcast {a.shape} to {out.shape}")
    return out


def _fwd_relu(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _fwd_maximum(vals, attrs):
    _same_shape("maximum", *vals)
    return np.maximum(vals[0], vals[1])


def _fwd_reciprocal(vals, attrs):
    if np.any(vals[0] == 0.0):
        raise AutodiffError("reciprocal of zero")
    return 1.0 / vals[0]


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return a @ b


def _fwd_transpose(vals, attrs):
    if vals[0].ndim != 2:
        raise AutodiffError("transpose needs a 2-D operand")
    return vals[0].T.copy()


def _fwd_colsum(vals, attrs):
    if vals[0].ndim != 2:
        raise AutodiffError("colsum needs a 2-D operand")
    return vals[0].sum(axis=0)


def _fwd_rowtile(vals, attrs):
    if vals[0].ndim != 1:
        raise AutodiffError("rowtile needs a 1-D operand")
    return np.tile(vals[0], (attrs["rows"], 1))


def _fwd_fill(vals, attrs):
    return np.full(attrs["shape"], float(vals[0]))


def _fwd_concat(vals, attrs):
    if any(v.ndim != 2 for v in vals) or len({v.shape[0] for v in vals}) != 1:
        raise AutodiffError("concat needs 2-D operands with equal row counts")
    return np.concatenate(vals, axis=1)


def _fwd_slice(vals, attrs):
    a = vals[0]
    if a.ndim != 2 or not 0 <= attrs["lo"] < attrs["hi"] <= a.shape[1]:
        raise AutodiffError(f"slice [{attrs['lo']}:{attrs['hi']}] out of range for {a.shape}")
    return a[:, attrs["lo"]:attrs["hi"]].copy()


def _fwd_embed(vals, attrs):
    a = vals[0]
    out = np.zeros((a.shape[0], attrs["width"]))
    out[:, attrs["lo"]:attrs["lo"] + a.shape[1]] = a
    return out


_register("add", _fwd_add,
          lambda g, xs, y, at, nd: [g, g],
          lambda g, xs, y, at, nd: [g, g])

_register("add_row", _fwd_add_row,
          lambda g, xs, y, at, nd: [g, g.sum(axis=0) if nd[1] else None],
          lambda g, xs, y, at, nd: [g, colsum(g) if nd[1] else None])

_register("mul", _fwd_mul,
          lambda g, xs, y, at, nd: [g * xs[1] if nd[0] else None, g * xs[0] if nd[1] else None],
          lambda g, xs, y, at, nd: [mul(g, xs[1]) if nd[0] else None, mul(g, xs[0]) if nd[1] else None])

_register("affine", _fwd_affine,
          lambda g, xs, y, at, nd: [g * at["scale"]],
          lambda g, xs, y, at, nd: [affine(g, at["scale"], 0.0)])

_register("tanh", lambda vals, at: np.tanh(vals[0]),
          lambda g, xs, y, at, nd: [g * (1.0 - y * y)],
          lambda g, xs, y, at, nd: [mul(g, affine(mul(y, y), -1.0, 1.0))])

_register("sigmoid", lambda vals, at: 0.5 * (np.tanh(0.5 * vals[0]) + 1.0),
          lambda g, xs, y, at, nd: [g * y * (1.0 - y)],
          lambda g, xs, y, at, nd: [mul(g, mul(y, affine(y, -1.0, 1.0)))])

# derivative of ReLU at 0 is 0
_register("relu", _fwd_relu,
          lambda g, xs, y, at, nd: [g * (xs[0] > 0.0)],
          lambda g, xs, y, at, nd: [mul(g, g.tape.constant((xs[0].value > 0.0).astype(float)))])

# ties route the gradient to the second operand
_register("maximum", _fwd_maximum,
          lambda g, xs, y, at, nd: [g * (xs[0] > xs[1]), g * (xs[0] <= xs[1])],
          lambda g, xs, y, at, nd: [
              mul(g, g.tape.constant((xs[0].value > xs[1].value).astype(float))) if nd[0] else None,
              mul(g, g.tape.constant((xs[0].value <= xs[1].value).astype(float))) if nd[1] else None])

_register("reciprocal", _fwd_reciprocal,
          lambda g, xs, y, at, nd: [-g * y * y],
          lambda g, xs, y, at, nd: [mul(g, affine(mul(y, y), -1.0, 0.0))])

_register("matmul", _fwd_matmul,
          lambda g, xs, y, at, nd: [g @ xs[1].T if nd[0] else None, xs[0].T @ g if nd[1] else None],
          lambda g, xs, y, at, nd: [matmul(g, transpose(xs[1])) if nd[0] else None,
                                    matmul(transpose(xs[0]), g) if nd[1] else None])

_register("transpose", _fwd_transpose,
          lambda g, xs, y, at, nd: [g.T],
          lambda g, xs, y, at, nd: [transpose(g)])

_register("colsum", _fwd_colsum,
          lambda g, xs, y, at, nd: [np.tile(g, (xs[0].shape[0], 1))],
          lambda g, xs, y, at, nd: [rowtile(g, xs[0].shape[0])])

_register("rowtile", _fwd_rowtile,
          lambda g, xs, y, at, nd: [g.sum(axis=0)],
          lambda g, xs, y, at, nd: [colsum(g)])

_register("sum", lambda vals, at: np.array(vals[0].sum()),
          lambda g, xs, y, at, nd: [np.full(xs[0].shape, float(g))],
          lambda g, xs, y, at, nd: [fill(g, xs[0].shape)])

_register("fill", _fwd_fill,
          lambda g, xs, y, at, nd: [np.array(g.sum())],
          lambda g, xs, y, at, nd: [total(g)])


def _concat_offsets(xs_shapes):
    offsets = np.cumsum([0] + [s[1] for s in xs_shapes])
    return list(zip(offsets[:-1], offsets[1:]))


_register("concat", _fwd_concat,
          lambda g, xs, y, at, nd: [g[:, lo:hi] if need else None
                                    for (lo, hi), need in zip(_concat_offsets([x.shape for x in xs]), nd)],
          lambda g, xs, y, at, nd: [slice_cols(g, int(lo), int(hi)) if need else None
                                    for (lo, hi), need in zip(_concat_offsets([x.shape for x in xs]), nd)])

_register("slice", _fwd_slice,
          lambda g, xs, y, at, nd: [_fwd_embed([g], {"lo": at["lo"], "width": xs[0].shape[1]})],
          lambda g, xs, y, at, nd: [embed(g, at["lo"], xs[0].shape[1])])

_register("embed", _fwd_embed,
          lambda g, xs, y, at, nd: [g[:, at["lo"]:at["lo"] + xs[0].shape[1]]],
          lambda g, xs, y, at, nd: [slice_cols(g, at["lo"], at["lo"] + xs[0].shape[1])])


# ── Public primitive functions ──

def _apply(op: str, operands: Sequence, **attrs):
    tape = next((x.tape for x in operands if isinstance(x, Var)), None)
    if tape is None:
        return PRIMITIVES[op].forward([np.asarray(x, dtype=float) for x in operands], attrs)
    return tape.record(op, [tape.as_var(x) for x in operands], attrs)


def add(a, b):
    return _apply("add", (a, b))


def add_row(a, b):
    """a (N, H) plus row vector b (H,) on every row."""
    return _apply("add_row", (a, b))


def mul(a, b):
    return _apply("mul", (a, b))


def affine(a, scale: ArrayLike, shift: ArrayLike):
    """a * scale + shift with constant scale/shift broadcast over a."""
    return _apply("affine", (a,), scale=np.asarray(scale, dtype=float), shift=np.asarray(shift, dtype=float))


def neg(a):
    return affine(a, -1.0, 0.0)


def tanh(a):
    return _apply("tanh", (a,))


def sigmoid(a):
    return _apply("sigmoid", (a,))


def relu(a):
    return _apply("relu", (a,))


def maximum(a, b):
    return _apply("maximum", (a, b))


def reciprocal(a):
    return _apply("reciprocal", (a,))


def matmul(a, b):
    return _apply("matmul", (a, b))


def transpose(a):
    return _apply("transpose", (a,))


def colsum(a):
    return _apply("colsum", (a,))


def rowtile(a, rows: int):
    return _apply("rowtile", (a,), rows=int(rows))


def total(a):
    """Sum of all elements (0-d result)."""
    return _apply("sum", (a,))


def fill(a, shape: Tuple[int, ...]):
    return _apply("fill", (a,), shape=tuple(shape))


def mean(a):
    size = (a.value if isinstance(a, Var) else np.asarray(a)).size
    return affine(total(a), 1.0 / size, 0.0)


def concat(parts: Sequence):
    return _apply("concat", tuple(parts))


def slice_cols(a, lo: int, hi: int):
    return _apply("slice", (a,), lo=int(lo), hi=int(hi))


def embed(a, lo: int, width: int):
    return _apply("embed", (a,), lo=int(lo), width=int(width))


def linear(x, weight, bias):
    """x (N, in) @ weight (in, out) + bias (out,)."""
    return add_row(matmul(x, weight), bias)


ACTIVATIONS = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "linear": lambda a: a,
}


# ── Reverse passes ──

def _check_output(tape: Tape, output: Var):
    if not tape.owns(output):
        raise AutodiffError("output is not recorded on this tape")
    if output.value.size != 1:
        raise AutodiffError(f"output must be scalar, got shape {output.shape}")


def _relevant(tape: Tape, output: Var, inputs: Sequence[Var]) -> List[bool]:
    """Nodes up to `output` that depend on any input."""
    targets = set()
    for v in inputs:
        if not tape.owns(v):
            raise AutodiffError("input is not recorded on this tape")
        targets.add(v.index)
    relevant = [False] * (output.index + 1)
    for i in range(output.index + 1):
        relevant[i] = i in targets or any(relevant[j] for j in tape.nodes[i].operands)
    return relevant


def grad(tape: Tape, output: Var, inputs: Sequence[Var]) -> List[np.ndarray]:
    """Exact reverse-mode gradients of a scalar output w.r.t. each input."""
    _check_output(tape, output)
    relevant = _relevant(tape, output, inputs)
    adjoint: Dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    nodes = tape.nodes
    for i in range(output.index, -1, -1):
        g = adjoint.get(i)
        node = nodes[i]
        if g is None or not node.operands:
            continue
        needs = [relevant[j] for j in node.operands]
        if not any(needs):
            continue
        contribs = PRIMITIVES[node.op].vjp(g, [nodes[j].value for j in node.operands], node.value,
                                           node.attrs, needs)
        for j, need, c in zip(node.operands, needs, contribs):
            if need:
                adjoint[j] = adjoint[j] + c if j in adjoint else c
    return [adjoint.get(v.index, np.zeros_like(v.value)) for v in inputs]


def grad_as_expressions(tape: Tape, output: Var, inputs: Sequence[Var]) -> List[Var]:
    """
    Like `grad`, but the backward computation is recorded on the tape and
    each derivative is returned as a Var that can be differentiated again.
    """
    _check_output(tape, output)
    relevant = _relevant(tape, output, inputs)
    end = output.index
    adjoint: Dict[int, Var] = {end: tape.constant(np.ones_like(output.value))}
    for i in range(end, -1, -1):
        g = adjoint.get(i)
        node = tape.nodes[i]
        if g is None or not node.operands:
            continue
        needs = [relevant[j] for j in node.operands]
        if not any(needs):
            continue
        operands = [Var(tape, j) for j in node.operands]
        contribs = PRIMITIVES[node.op].vjp_expr(g, operands, Var(tape, i), node.attrs, needs)
        for j, need, c in zip(node.operands, needs, contribs):
            if need:
                adjoint[j] = add(adjoint[j], c) if j in adjoint else c
    return [adjoint[v.index] if v.index in adjoint else tape.constant(np.zeros_like(v.value))
            for v in inputs]


def grad_as_expression(tape: Tape, output: Var, input: Var) -> Var:
    return grad_as_expressions(tape, output, [input])[0]
