"""Reverse-mode automatic differentiation over dense float64 vectors.

Everything learnable in this package is expressed through the primitives
here.  A ``Tape`` records a define-by-run computation graph; ``backward``
walks it once in reverse to produce per-parameter gradients.  The tape is
rebuilt per episode because action spaces change from step to step.

All arithmetic is float64; the models are tiny, so precision beats speed
and keeps finite-difference checks meaningful at 1e-3 relative tolerance.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DivergenceError

Array = np.ndarray

_Q_FLOOR = 1e-12  # floor for the second argument of the KL divergence
_NORM_TINY = 1e-300  # below this a vector counts as zero-norm in cosine


def _as_f64(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Node:
    """One recorded primitive op (or leaf) in a computation record."""

    __slots__ = ("kind", "inputs", "attrs", "value")

    def __init__(self, kind: str, inputs: tuple[int, ...], attrs: dict, value: Array):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.value = value


class Var:
    """Handle to a tape node; carries the forward value."""

    __slots__ = ("tape", "nid", "value")

    def __init__(self, tape: "Tape", nid: int, value: Array):
        self.tape = tape
        self.nid = nid
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Var(nid={self.nid}, shape={self.value.shape})"


class Tape:
    """Ordered computation record supporting one backward pass and replay.

    With ``trace=False`` the same forward arithmetic runs without recording
    nodes; values are bit-identical to the traced path.  A record is confined
    to one thread of execution.
    """

    def __init__(self, trace: bool = True):
        self.trace = trace
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self._consumed = False
        self._grads: list[Array | None] | None = None

    # -- construction ------------------------------------------------------

    def leaf(self, value, name: str | None = None) -> Var:
        """Enter a constant or named parameter as a leaf node."""
        arr = _as_f64(value)
        if not self.trace:
            return Var(self, -1, arr)
        nid = len(self.nodes)
        self.nodes.append(Node("leaf", (), {}, arr))
        if name is not None:
            if name in self.params:
                raise ValueError(f"duplicate parameter name on tape: {name!r}")
            self.params[name] = nid
        return Var(self, nid, arr)

    def constant(self, value) -> Var:
        return self.leaf(value)

    def apply(self, kind: str, *inputs: Var, **attrs) -> Var:
        """Execute one primitive and append it to the record."""
        for v in inputs:
            if v.tape is not self:
                raise ValueError("inputs belong to a different tape")
        fwd = _FORWARD.get(kind)
        if fwd is None:
            raise ValueError(f"unknown primitive kind: {kind!r}")
        value = fwd([v.value for v in inputs], attrs)
        if not self.trace:
            return Var(self, -1, value)
        nid = len(self.nodes)
        self.nodes.append(Node(kind, tuple(v.nid for v in inputs), attrs, value))
        return Var(self, nid, value)

    # -- differentiation ---------------------------------------------------

    def backward(self, loss: Var) -> dict[str, Array]:
        """Gradients of a scalar loss for every named parameter leaf.

        Parameters not on any path to the loss receive zero gradients.  Each
        node is visited exactly once; the record may be consumed only once.
        """
        if not self.trace:
            raise ValueError("cannot run backward on an untraced tape")
        if self._consumed:
            raise ValueError("record already consumed by a previous backward pass")
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.value.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        self._consumed = True

        grads: list[Array | None] = [None] * len(self.nodes)
        grads[loss.nid] = np.ones((), dtype=np.float64)
        for nid in range(loss.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                continue
            in_vals = [self.nodes[i].value for i in node.inputs]
            contribs = _BACKWARD[node.kind](g, in_vals, node.value, node.attrs)
            for src, contrib in zip(node.inputs, contribs):
                if contrib is None:
                    continue
                if grads[src] is None:
                    grads[src] = contrib.copy() if contrib.base is not None else contrib
                else:
                    grads[src] = grads[src] + contrib
        self._grads = grads
        return {
            name: (grads[nid] if grads[nid] is not None
                   else np.zeros_like(self.nodes[nid].value))
            for name, nid in self.params.items()
        }

    def grad_of(self, var: Var) -> Array:
        """Gradient at an arbitrary node after ``backward`` has run."""
        if self._grads is None:
            raise ValueError("backward has not been run on this tape")
        g = self._grads[var.nid]
        return g if g is not None else np.zeros_like(var.value)

    # -- replay ------------------------------------------------------------

    def replay(self) -> list[Array]:
        """Re-execute the record from its leaves; returns all node values.

        Replaying with identical leaf values reproduces bit-identical
        outputs, which tests rely on.
        """
        values: list[Array] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
            else:
                values.append(_FORWARD[node.kind]([values[i] for i in node.inputs],
                                                  node.attrs))
        return values


# ---------------------------------------------------------------------------
# primitive forward / backward implementations
# ---------------------------------------------------------------------------


def _require_1d(name: str, *vals: Array) -> None:
    for v in vals:
        if v.ndim != 1:
            raise ValueError(f"{name} expects 1-D inputs, got shape {v.shape}")


def _require_same_shape(name: str, a: Array, b: Array) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _fwd_add(vals, attrs):
    _require_same_shape("add", vals[0], vals[1])
    return vals[0] + vals[1]


def _fwd_sub(vals, attrs):
    _require_same_shape("sub", vals[0], vals[1])
    return vals[0] - vals[1]


def _fwd_mul(vals, attrs):
    _require_same_shape("mul", vals[0], vals[1])
    return vals[0] * vals[1]


def _fwd_scale(vals, attrs):
    return vals[0] * attrs["factor"]


def _fwd_smul(vals, attrs):
    s, x = vals
    if s.shape != ():
        raise ValueError(f"smul: first input must be scalar, got {s.shape}")
    return float(s) * x


def _fwd_matvec(vals, attrs):
    w, x = vals
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec: incompatible shapes {w.shape} and {x.shape}")
    return w @ x


def _fwd_dot(vals, attrs):
    a, b = vals
    _require_1d("dot", a, b)
    _require_same_shape("dot", a, b)
    return np.dot(a, b)


def _fwd_vecmat(vals, attrs):
    x, w = vals
    if x.ndim != 1 or w.ndim != 2 or w.shape[0] != x.shape[0]:
        raise ValueError(f"vecmat: incompatible shapes {x.shape} and {w.shape}")
    return x @ w


def _fwd_concat(vals, attrs):
    _require_1d("concat", *vals)
    return np.concatenate(vals)


def _fwd_stack(vals, attrs):
    _require_1d("stack", *vals)
    width = vals[0].shape[0]
    for v in vals[1:]:
        if v.shape[0] != width:
            raise ValueError("stack: rows must share one length")
    return np.stack(vals)


def _stable_sigmoid(x: Array) -> Array:
    # branch-free stable form: one exp of a nonpositive argument
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _fwd_sigmoid(vals, attrs):
    return _stable_sigmoid(vals[0])


def _fwd_slice(vals, attrs):
    x = vals[0]
    _require_1d("slice", x)
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start <= stop <= x.shape[0]:
        raise ValueError(f"slice [{start}:{stop}] out of range for "
                         f"length {x.shape[0]}")
    return x[start:stop].copy()


def _lstm_gates(vals):
    h, c, x, wi, wf, wo, wc, bi, bf, bo, bc = vals
    if h.ndim != 1 or c.shape != h.shape:
        raise ValueError("lstm: hidden/cell width mismatch")
    joint = np.concatenate([h, x])
    if wi.shape[1] != joint.shape[0]:
        raise ValueError(
            f"lstm: input width {joint.shape[0]} does not match "
            f"parameters ({wi.shape[1]})")
    i = _stable_sigmoid(wi @ joint + bi)
    f = _stable_sigmoid(wf @ joint + bf)
    o = _stable_sigmoid(wo @ joint + bo)
    g = np.tanh(wc @ joint + bc)
    cell = f * c + i * g
    return joint, i, f, o, g, cell


def _fwd_lstm(vals, attrs):
    _, i, f, o, g, cell = _lstm_gates(vals)
    return np.concatenate([o * np.tanh(cell), cell])


def _fwd_tanh(vals, attrs):
    return np.tanh(vals[0])


def _fwd_relu(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _fwd_leaky_relu(vals, attrs):
    slope = attrs["slope"]
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0,1), got {slope}")
    x = vals[0]
    return np.where(x > 0, x, slope * x)


def _fwd_softmax(vals, attrs):
    x = vals[0]
    _require_1d("softmax", x)
    shifted = x - np.max(x)  # max-subtraction keeps exp in range
    e = np.exp(shifted)
    return e / np.sum(e)


def _fwd_logsumexp(vals, attrs):
    x = vals[0]
    _require_1d("logsumexp", x)
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def _fwd_log(vals, attrs):
    x = vals[0]
    if np.any(x <= 0):
        raise ValueError("log requires strictly positive inputs")
    return np.log(x)


def _fwd_sum(vals, attrs):
    _require_1d("sum", vals[0])
    return np.sum(vals[0])


def _fwd_mean(vals, attrs):
    _require_1d("mean", vals[0])
    return np.mean(vals[0])


def _fwd_pick(vals, attrs):
    x = vals[0]
    _require_1d("pick", x)
    idx = attrs["index"]
    if not 0 <= idx < x.shape[0]:
        raise ValueError(f"pick index {idx} out of range for length {x.shape[0]}")
    return x[idx] + 0.0  # force a 0-d copy


def _fwd_cosine(vals, attrs):
    a, b = vals
    _require_1d("cosine", a, b)
    _require_same_shape("cosine", a, b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < _NORM_TINY or nb < _NORM_TINY:
        return np.float64(0.0)
    return np.dot(a, b) / (na * nb)


def _validate_distribution(name: str, p: Array) -> None:
    if np.any(p < -1e-12):
        raise ValueError(f"kl: {name} has negative entries")
    s = float(np.sum(p))
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"kl: {name} sums to {s}, not 1")


def _fwd_kl(vals, attrs):
    p, q = vals
    _require_1d("kl", p, q)
    _require_same_shape("kl", p, q)
    _validate_distribution("p", p)
    _validate_distribution("q", q)
    qf = np.maximum(q, _Q_FLOOR)
    mask = p > 0  # zero-probability terms contribute exactly 0
    return np.sum(p[mask] * (np.log(p[mask]) - np.log(qf[mask])))


_FORWARD: dict[str, Callable] = {
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "scale": _fwd_scale,
    "smul": _fwd_smul,
    "matvec": _fwd_matvec,
    "vecmat": _fwd_vecmat,
    "dot": _fwd_dot,
    "concat": _fwd_concat,
    "stack": _fwd_stack,
    "sigmoid": _fwd_sigmoid,
    "slice": _fwd_slice,
    "lstm": _fwd_lstm,
    "tanh": _fwd_tanh,
    "relu": _fwd_relu,
    "leaky_relu": _fwd_leaky_relu,
    "softmax": _fwd_softmax,
    "logsumexp": _fwd_logsumexp,
    "log": _fwd_log,
    "sum": _fwd_sum,
    "mean": _fwd_mean,
    "pick": _fwd_pick,
    "cosine": _fwd_cosine,
    "kl": _fwd_kl,
}


def _bwd_add(g, ins, out, attrs):
    return g, g


def _bwd_sub(g, ins, out, attrs):
    return g, -g


def _bwd_mul(g, ins, out, attrs):
    return g * ins[1], g * ins[0]


def _bwd_scale(g, ins, out, attrs):
    return (g * attrs["factor"],)


def _bwd_smul(g, ins, out, attrs):
    s, x = ins
    return np.sum(g * x), float(s) * g


def _bwd_matvec(g, ins, out, attrs):
    w, x = ins
    return np.outer(g, x), w.T @ g


def _bwd_dot(g, ins, out, attrs):
    a, b = ins
    return g * b, g * a


def _bwd_vecmat(g, ins, out, attrs):
    x, w = ins
    return w @ g, np.outer(x, g)


def _bwd_concat(g, ins, out, attrs):
    parts = []
    offset = 0
    for v in ins:
        n = v.shape[0]
        parts.append(g[offset:offset + n])
        offset += n
    return tuple(parts)


def _bwd_stack(g, ins, out, attrs):
    return tuple(g[i] for i in range(len(ins)))


def _bwd_sigmoid(g, ins, out, attrs):
    return (g * out * (1.0 - out),)


def _bwd_slice(g, ins, out, attrs):
    grad = np.zeros_like(ins[0])
    grad[attrs["start"]:attrs["stop"]] = g
    return (grad,)


def _bwd_lstm(g, ins, out, attrs):
    h, c, x, wi, wf, wo, wc, bi, bf, bo, bc = ins
    joint, i, f, o, gate_g, cell = _lstm_gates(ins)
    width = h.shape[0]
    gh = g[:width]
    gc_out = g[width:]
    t = np.tanh(cell)
    d_o = gh * t
    d_cell = gh * o * (1.0 - t * t) + gc_out
    d_f = d_cell * c
    d_c = d_cell * f
    d_i = d_cell * gate_g
    d_g = d_cell * i
    dzi = d_i * i * (1.0 - i)
    dzf = d_f * f * (1.0 - f)
    dzo = d_o * o * (1.0 - o)
    dzg = d_g * (1.0 - gate_g * gate_g)
    d_joint = wi.T @ dzi + wf.T @ dzf + wo.T @ dzo + wc.T @ dzg
    return (d_joint[:width], d_c, d_joint[width:],
            np.outer(dzi, joint), np.outer(dzf, joint),
            np.outer(dzo, joint), np.outer(dzg, joint),
            dzi, dzf, dzo, dzg)


def _bwd_tanh(g, ins, out, attrs):
    return (g * (1.0 - out * out),)


def _bwd_relu(g, ins, out, attrs):
    return (g * (ins[0] > 0),)


def _bwd_leaky_relu(g, ins, out, attrs):
    slope = attrs["slope"]
    return (g * np.where(ins[0] > 0, 1.0, slope),)


def _bwd_softmax(g, ins, out, attrs):
    return (out * (g - np.dot(g, out)),)


def _bwd_logsumexp(g, ins, out, attrs):
    x = ins[0]
    m = np.max(x)
    e = np.exp(x - m)
    return (g * e / np.sum(e),)


def _bwd_log(g, ins, out, attrs):
    return (g / ins[0],)


def _bwd_sum(g, ins, out, attrs):
    return (np.full_like(ins[0], float(g)),)


def _bwd_mean(g, ins, out, attrs):
    n = ins[0].shape[0]
    return (np.full_like(ins[0], float(g) / n),)


def _bwd_pick(g, ins, out, attrs):
    grad = np.zeros_like(ins[0])
    grad[attrs["index"]] = float(g)
    return (grad,)


def _bwd_cosine(g, ins, out, attrs):
    a, b = ins
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < _NORM_TINY or nb < _NORM_TINY:
        return np.zeros_like(a), np.zeros_like(b)
    c = float(out)
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return g * da, g * db


def _bwd_kl(g, ins, out, attrs):
    p, q = ins
    qf = np.maximum(q, _Q_FLOOR)
    mask = p > 0
    dp = np.zeros_like(p)
    dp[mask] = np.log(p[mask]) - np.log(qf[mask]) + 1.0
    dq = np.zeros_like(q)
    dq[mask] = -p[mask] / qf[mask]
    return g * dp, g * dq


_BACKWARD: dict[str, Callable] = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "smul": _bwd_smul,
    "matvec": _bwd_matvec,
    "vecmat": _bwd_vecmat,
    "dot": _bwd_dot,
    "concat": _bwd_concat,
    "stack": _bwd_stack,
    "sigmoid": _bwd_sigmoid,
    "slice": _bwd_slice,
    "lstm": _bwd_lstm,
    "tanh": _bwd_tanh,
    "relu": _bwd_relu,
    "leaky_relu": _bwd_leaky_relu,
    "softmax": _bwd_softmax,
    "logsumexp": _bwd_logsumexp,
    "log": _bwd_log,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "pick": _bwd_pick,
    "cosine": _bwd_cosine,
    "kl": _bwd_kl,
}


# ---------------------------------------------------------------------------
# op helpers (thin wrappers so model code reads like math)
# ---------------------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    return a.tape.apply("add", a, b)


def sub(a: Var, b: Var) -> Var:
    return a.tape.apply("sub", a, b)


def mul(a: Var, b: Var) -> Var:
    return a.tape.apply("mul", a, b)


def scale(a: Var, factor: float) -> Var:
    return a.tape.apply("scale", a, factor=float(factor))


def smul(s: Var, x: Var) -> Var:
    """Scalar Var times tensor Var."""
    return s.tape.apply("smul", s, x)


def matvec(w: Var, x: Var) -> Var:
    return w.tape.apply("matvec", w, x)


def vecmat(x: Var, w: Var) -> Var:
    return x.tape.apply("vecmat", x, w)


def dot(a: Var, b: Var) -> Var:
    return a.tape.apply("dot", a, b)


def concat(*vs: Var) -> Var:
    return vs[0].tape.apply("concat", *vs)


def stack(vs: Iterable[Var]) -> Var:
    vs = tuple(vs)
    return vs[0].tape.apply("stack", *vs)


def sigmoid(x: Var) -> Var:
    return x.tape.apply("sigmoid", x)


def tanh(x: Var) -> Var:
    return x.tape.apply("tanh", x)


def relu(x: Var) -> Var:
    return x.tape.apply("relu", x)


def leaky_relu(x: Var, slope: float = 0.2) -> Var:
    return x.tape.apply("leaky_relu", x, slope=float(slope))


def softmax(x: Var) -> Var:
    return x.tape.apply("softmax", x)


def logsumexp(x: Var) -> Var:
    return x.tape.apply("logsumexp", x)


def log(x: Var) -> Var:
    return x.tape.apply("log", x)


def vsum(x: Var) -> Var:
    return x.tape.apply("sum", x)


def mean(x: Var) -> Var:
    return x.tape.apply("mean", x)


def pick(x: Var, index: int) -> Var:
    return x.tape.apply("pick", x, index=int(index))


def cosine(a: Var, b: Var) -> Var:
    return a.tape.apply("cosine", a, b)


def kl_div(p: Var, q: Var) -> Var:
    return p.tape.apply("kl", p, q)


def vmean(vs: Iterable[Var]) -> Var:
    """Coordinatewise mean of several same-length vectors."""
    vs = tuple(vs)
    acc = vs[0]
    for v in vs[1:]:
        acc = add(acc, v)
    return scale(acc, 1.0 / len(vs))


def log_prob(logits: Var, index: int) -> Var:
    """log softmax(logits)[index], computed without forming the softmax."""
    return sub(pick(logits, index), logsumexp(logits))


def entropy(logits: Var) -> Var:
    """Shannon entropy of softmax(logits)."""
    p = softmax(logits)
    return sub(logsumexp(logits), dot(p, logits))


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

LSTM_GATES = ("wi", "wf", "wo", "wc", "bi", "bf", "bo", "bc")


def lstm_param_shapes(hidden: int, input_dim: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for gate in ("wi", "wf", "wo", "wc"):
        shapes[gate] = (hidden, hidden + input_dim)
    for gate in ("bi", "bf", "bo", "bc"):
        shapes[gate] = (hidden,)
    return shapes


def lstm_cell(prev_hidden: Var, prev_cell: Var, x: Var,
              params: Mapping[str, Var]) -> tuple[Var, Var]:
    """Standard gated recurrent update; differentiable through all gates.

    Runs as one fused primitive: i/f/o gates and the candidate from the
    concatenated [hidden, input], then cell = f*c + i*g and
    hidden = o*tanh(cell).
    """
    tape = prev_hidden.tape
    packed = tape.apply("lstm", prev_hidden, prev_cell, x,
                        params["wi"], params["wf"], params["wo"], params["wc"],
                        params["bi"], params["bf"], params["bo"], params["bc"])
    width = prev_hidden.value.shape[0]
    hidden_out = tape.apply("slice", packed, start=0, stop=width)
    cell = tape.apply("slice", packed, start=width, stop=2 * width)
    return hidden_out, cell


# ---------------------------------------------------------------------------
# parameter store + Adam
# ---------------------------------------------------------------------------


class ParamStore:
    """Named float64 parameter tensors with Adam moment accumulators."""

    def __init__(self):
        self.values: dict[str, Array] = {}
        self.moment1: dict[str, Array] = {}
        self.moment2: dict[str, Array] = {}
        self.step = 0

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise ValueError(f"parameter {name!r} already present")
        arr = _as_f64(value)
        self.values[name] = arr
        self.moment1[name] = np.zeros_like(arr)
        self.moment2[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> Array:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def copy(self) -> "ParamStore":
        """Deep snapshot, safe to hand to concurrent readers."""
        out = ParamStore()
        out.values = {k: v.copy() for k, v in self.values.items()}
        out.moment1 = {k: v.copy() for k, v in self.moment1.items()}
        out.moment2 = {k: v.copy() for k, v in self.moment2.items()}
        out.step = self.step
        return out

    def bind(self, tape: Tape, prefix: str = "") -> dict[str, Var]:
        """Enter every parameter (optionally filtered by prefix) as a leaf."""
        return {name: tape.leaf(value, name=name)
                for name, value in self.values.items()
                if name.startswith(prefix)}


def adam_step(store: ParamStore, grads: Mapping[str, Array], lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected adaptive update, in place; increments the step counter.

    Raises DivergenceError on any non-finite gradient so the caller can
    abort the epoch instead of silently corrupting parameters.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        if name not in store.values:
            raise KeyError(f"unknown parameter {name!r}")
        if g.shape != store.values[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = store.moment1[name]
        v = store.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------


def gradient_check(fn: Callable[[Tape, dict[str, Var]], Var],
                   params: Mapping[str, Array],
                   epsilon: float = 1e-4,
                   max_coords: int = 10000,
                   seed: int = 0) -> float:
    """Max relative error between backward and central finite differences.

    ``fn`` must build a scalar loss from the supplied leaf Vars and be
    deterministic; two base evaluations that differ raise ValueError.  Above
    ``max_coords`` total coordinates a seeded sample is checked instead of
    every coordinate, to bound runtime.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    work = {name: _as_f64(v).copy() for name, v in params.items()}

    def evaluate() -> float:
        t = Tape(trace=False)
        leaves = {name: t.leaf(v, name=None) for name, v in work.items()}
        out = fn(t, leaves)
        if out.value.shape != ():
            raise ValueError("gradient_check requires a scalar-valued fn")
        return float(out.value)

    base = evaluate()
    if evaluate() != base:
        raise ValueError("fn is not deterministic: two evaluations differ")

    tape = Tape()
    leaves = {name: tape.leaf(v, name=name) for name, v in work.items()}
    loss = fn(tape, leaves)
    analytic = tape.backward(loss)

    coords: list[tuple[str, int]] = []
    for name, arr in work.items():
        coords.extend((name, i) for i in range(arr.size))
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(idx)]

    worst = 0.0
    for name, flat in coords:
        arr = work[name]
        orig = arr.flat[flat]
        arr.flat[flat] = orig + epsilon
        up = evaluate()
        arr.flat[flat] = orig - epsilon
        down = evaluate()
        arr.flat[flat] = orig
        numeric = (up - down) / (2.0 * epsilon)
        exact = float(analytic[name].flat[flat])
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        if err > worst:
            worst = err
    return worst
