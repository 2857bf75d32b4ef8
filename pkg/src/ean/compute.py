"""Dense float64 arrays with taped reverse-mode gradients.

Forward work happens eagerly on numpy arrays; every derived tensor keeps a
closure that routes its adjoint back to its inputs.  Calling ``backward`` on
a scalar loss walks the recorded graph once in reverse topological order and
accumulates into ``Tensor.grad``.  Gradient buffers persist across calls so
that several losses can contribute to one optimization step; the caller (or
``adam_step``) zeroes them between steps.

The same forward code serves both training and inference: the cell and
network functions accept either ``Tensor`` parameters (taped) or bare numpy
arrays (no tape, much faster).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class NumericError(ArithmeticError):
    """A numeric contract was violated (non-finite value, missing state)."""


def _check_finite(arr, name=None):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in tensor {name or '<anon>'}")


def _unbroadcast(grad, shape):
    """Sum an adjoint over the axes that broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph: row-major float64 values plus adjoint."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    # Make numpy defer to our reflected operators on mixed expressions.
    __array_ufunc__ = None

    def __init__(self, data, _parents=(), _backward=None, name=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, name)
        self.data = arr
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- elementwise arithmetic (numpy broadcasting, adjoints un-broadcast) --

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back():
            self._accumulate(_unbroadcast(out.grad, self.data.shape))
            other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back():
            self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-d operands only")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul shape mismatch {self.data.shape} @ {other.data.shape}"
            )
        out = Tensor(self.data @ other.data, (self, other))

        def back():
            self._accumulate(out.grad @ other.data.T)
            other._accumulate(self.data.T @ out.grad)

        out._backward = back
        return out

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- nonlinearities and reductions --

    def sigmoid(self):
        s = sigmoid_values(self.data)
        out = Tensor(s, (self,))

        def back():
            self._accumulate(out.grad * s * (1.0 - s))

        out._backward = back
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = Tensor(t, (self,))

        def back():
            self._accumulate(out.grad * (1.0 - t * t))

        out._backward = back
        return out

    def log(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = Tensor(np.log(self.data), (self,))

        def back():
            self._accumulate(out.grad / self.data)

        out._backward = back
        return out

    def clamp(self, lo, hi):
        """Clip values to [lo, hi]; the adjoint is zero outside the band."""
        clipped = np.clip(self.data, lo, hi)
        inside = ((self.data >= lo) & (self.data <= hi)).astype(np.float64)
        out = Tensor(clipped, (self,))

        def back():
            self._accumulate(out.grad * inside)

        out._backward = back
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def back():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._backward = back
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def squared_difference(a, b):
    """(a - b)**2 on tensors or arrays."""
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        d = as_tensor(a) - as_tensor(b)
        return d * d
    d = np.asarray(a) - np.asarray(b)
    return d * d


def sigmoid_values(x):
    """Stable logistic function on plain arrays: never overflows."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(node) into every reachable tensor's .grad."""
    if not isinstance(loss, Tensor):
        raise ValueError("backward expects a Tensor produced by a forward pass")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def graph_leaves(root):
    """All parentless tensors reachable from ``root`` (params and constants)."""
    return [node for node in _toposort(root) if not node._parents]


class ParameterSet:
    """Ordered name -> Tensor map with persistent gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, values):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        """name -> Tensor view, for taped forward passes."""
        return dict(self._params)

    def values_view(self):
        """name -> ndarray view, for untaped forward passes."""
        return {name: t.data for name, t in self._params.items()}

    def zero_grad(self):
        for t in self._params.values():
            t.grad[:] = 0.0

    def rename(self, old, new):
        """Relabel a parameter, keeping its values and gradient buffer."""
        if new in self._params:
            raise ValueError(f"duplicate parameter name {new!r}")
        self._params = {
            (new if name == old else name): t for name, t in self._params.items()
        }
        self._params[new].name = new

    def copy(self):
        out = ParameterSet()
        for name, t in self._params.items():
            p = out.add(name, t.data.copy())
            p.grad = t.grad.copy()
        return out

    def n_values(self):
        return sum(t.data.size for t in self._params.values())

    def to_json(self):
        return {
            name: {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}
            for name, t in self._params.items()
        }

    @classmethod
    def from_json(cls, doc):
        out = cls()
        for name, entry in doc.items():
            arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            out.add(name, arr)
        return out


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one ParameterSet."""

    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, alpha=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        state = cls(alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state

    def rename(self, old, new):
        self.m[new] = self.m.pop(old)
        self.v[new] = self.v.pop(old)


def adam_step(params, state, frozen=frozenset()):
    """Apply one Adam update from accumulated gradients, then zero them.

    Names in ``frozen`` are skipped entirely (their gradients are discarded),
    which is how a fixed output bias is excluded from optimization.
    """
    if not state.m and len(params) > 0:
        raise NumericError("Adam state was never initialized for these parameters")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        if name in frozen:
            p.grad[:] = 0.0
            continue
        if name not in state.m:
            raise NumericError(f"Adam state missing moments for parameter {name!r}")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)
        _check_finite(p.data, name)
        p.grad[:] = 0.0


def finite_difference_check(loss_fn, params, epsilon=1e-5, max_coords=200, seed=0):
    """Max relative error between taped gradients and central differences.

    ``loss_fn(params)`` must rebuild the forward pass deterministically; it is
    evaluated twice up front to verify that.  Coordinates are subsampled at
    random when the model has more than ``max_coords`` of them.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    first = float(loss_fn(params).data)
    second = float(loss_fn(params).data)
    if first != second:
        raise NumericError("loss function is not deterministic under a fixed mask")

    params.zero_grad()
    backward(loss_fn(params))
    analytic = {name: t.grad.copy() for name, t in params.items()}
    params.zero_grad()

    coords = [
        (name, idx)
        for name, t in params.items()
        for idx in range(t.data.size)
    ]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for name, idx in coords:
        flat = params[name].data.ravel()
        original = flat[idx]
        flat[idx] = original + epsilon
        up = float(loss_fn(params).data)
        flat[idx] = original - epsilon
        down = float(loss_fn(params).data)
        flat[idx] = original
        fd = (up - down) / (2.0 * epsilon)
        an = analytic[name].ravel()[idx]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        worst = max(worst, err)
    return worst


# -- recurrent cells ---------------------------------------------------------
#
# Both cells are bias-free by construction: with zero state and zero input
# every preactivation is zero, so the gated cell emits 0.5*0 + 0.5*tanh(0) = 0
# and the simple cell emits tanh(0) = 0.  The predictor's exact default
# behavior depends on this.


def _sig(x):
    return x.sigmoid() if isinstance(x, Tensor) else sigmoid_values(x)


def _tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


class GatedCell:
    """Bias-free gated recurrent cell (GRU-style reset/update gating)."""

    names = ("w_r", "u_r", "w_u", "u_u", "w_c", "u_c")

    def shapes(self, embed_dim, hidden):
        return {
            "w_r": (embed_dim, hidden),
            "u_r": (hidden, hidden),
            "w_u": (embed_dim, hidden),
            "u_u": (hidden, hidden),
            "w_c": (embed_dim, hidden),
            "u_c": (hidden, hidden),
        }

    def step(self, p, h, e):
        r = _sig(e @ p["w_r"] + h @ p["u_r"])
        u = _sig(e @ p["w_u"] + h @ p["u_u"])
        c = _tanh(e @ p["w_c"] + (r * h) @ p["u_c"])
        return u * h + (1.0 - u) * c


class SimpleCell:
    """Bias-free Elman cell; minimal instance of the same contract."""

    names = ("w_in", "u_rec")

    def shapes(self, embed_dim, hidden):
        return {"w_in": (embed_dim, hidden), "u_rec": (hidden, hidden)}

    def step(self, p, h, e):
        return _tanh(e @ p["w_in"] + h @ p["u_rec"])


_CELLS = {"gated": GatedCell, "simple": SimpleCell}


def make_cell(kind):
    if kind not in _CELLS:
        raise ValueError(f"unknown cell kind {kind!r}; expected one of {sorted(_CELLS)}")
    return _CELLS[kind]()


def glorot(rng, shape):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_cell_params(params, cell, embed_dim, hidden, rng):
    for name, shape in cell.shapes(embed_dim, hidden).items():
        params.add(name, glorot(rng, shape))


def save_params_json(path, params, metadata=None):
    doc = {"metadata": metadata or {}, "parameters": params.to_json()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_params_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ParameterSet.from_json(doc["parameters"]), doc.get("metadata", {})
