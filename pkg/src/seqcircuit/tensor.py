"""Minimal dense reverse-mode autodiff core.

Eager 2-D float tensors with a taped backward pass: enough machinery for
MLPs, GRU cells, attention aggregation over predecessor sets, and an Adam
optimizer.  Training runs in float32; a float64 mode exists for tight
gradient verification.
"""
from __future__ import annotations

import json
import struct
from contextlib import contextmanager

import numpy as np

CHECKPOINT_MAGIC = b"SQCK"
CHECKPOINT_VERSION = 1

_dtype = np.float32


class NumericsError(ArithmeticError):
    """A forward op produced NaN/Inf or was fed an invalid domain."""


class ShapeError(ValueError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Skip tape construction (forward-only evaluation)."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


def set_dtype(name: str):
    global _dtype
    if name not in ("float32", "float64"):
        raise ValueError(name)
    _dtype = np.dtype(name).type


def active_dtype():
    return _dtype


@contextmanager
def precision(name: str):
    """Temporarily switch the scalar type (used by 64-bit gradient checks)."""
    old = "float64" if _dtype == np.float64 else "float32"
    set_dtype(name)
    try:
        yield
    finally:
        set_dtype(old)


class Tensor:
    """A (rows, cols) array plus the tape hooks for reverse-mode gradients."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires")

    def __init__(self, data, parents=(), backward_fn=None, requires=False):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericsError("non-finite tensor value")
        self.data = arr
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires = requires or any(p.requires for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() wants a scalar tensor")
        return float(self.data[0, 0])

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=_dtype)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Seed a scalar output with gradient 1 and sweep the tape."""
        if self.data.shape != (1, 1):
            raise ShapeError("backward() starts from a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones((1, 1), dtype=_dtype))
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def constant(data) -> Tensor:
    return Tensor(data)


def _out(data, parents, backward_fn):
    needs = _grad_enabled and any(p.requires for p in parents)
    return Tensor(data, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None,
                  requires=needs)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)
    return _out(out_data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate(g.T)
    return _out(a.data.T, (a,), bwd)


def _binary_shapes(a, b):
    if a.shape == b.shape:
        return
    if b.shape == (1, 1) or (b.shape[0] == 1 and b.shape[1] == a.shape[1]):
        return
    if b.shape[1] == 1 and b.shape[0] == a.shape[0]:
        return
    if a.shape[1] == 1 and a.shape[0] == b.shape[0]:
        return
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        a.accumulate(_reduce_to(g, a.shape))
        b.accumulate(_reduce_to(g, b.shape))
    return _out(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        a.accumulate(_reduce_to(g, a.shape))
        b.accumulate(-_reduce_to(g, b.shape))
    return _out(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)

    def bwd(g):
        a.accumulate(_reduce_to(g * b.data, a.shape))
        b.accumulate(_reduce_to(g * a.data, b.shape))
    return _out(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    if np.any(np.abs(b.data) < 1e-30):
        raise NumericsError("division by (near) zero")

    def bwd(g):
        a.accumulate(_reduce_to(g / b.data, a.shape))
        b.accumulate(_reduce_to(-g * a.data / (b.data ** 2), b.shape))
    return _out(a.data / b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = _dtype(c)

    def bwd(g):
        a.accumulate(g * c)
    return _out(a.data * c, (a,), bwd)


def add_const(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        a.accumulate(g)
    return _out(a.data + _dtype(c), (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(g):
        a.accumulate(g * y * (1.0 - y))
    return _out(y, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(g):
        a.accumulate(g * (1.0 - y * y))
    return _out(y, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        a.accumulate(g * mask)
    return _out(a.data * mask, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericsError("log of non-positive value")

    def bwd(g):
        a.accumulate(g / a.data)
    return _out(np.log(a.data), (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericsError("sqrt of negative value")
    y = np.sqrt(a.data)

    def bwd(g):
        a.accumulate(g * 0.5 / np.maximum(y, _dtype(1e-20)))
    return _out(y, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    s = np.sign(a.data)

    def bwd(g):
        a.accumulate(g * s)
    return _out(np.abs(a.data), (a,), bwd)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols row mismatch")
    splits = np.cumsum([p.shape[1] for p in parts])[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=1)):
            p.accumulate(piece)
    return _out(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def vstack(parts) -> Tensor:
    parts = list(parts)
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise ShapeError("vstack column mismatch")
    splits = np.cumsum([p.shape[0] for p in parts])[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=0)):
            p.accumulate(piece)
    return _out(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a.accumulate(acc)
    return _out(a.data[idx], (a,), bwd)


def softmax_set(a: Tensor) -> Tensor:
    """Softmax along axis 0 of a (k, 1) score column (a set of predecessors)."""
    if a.shape[1] != 1:
        raise ShapeError("softmax_set wants a (k, 1) column")
    z = a.data - a.data.max()
    e = np.exp(z)
    y = e / e.sum()

    def bwd(g):
        dot = float((g * y).sum())
        a.accumulate(y * (g - dot))
    return _out(y, (a,), bwd)


def softmax_cols(a: Tensor) -> Tensor:
    """Row-wise softmax of an (n, k) score matrix (one predecessor set per row)."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        a.accumulate(y * (g - dot))
    return _out(y, (a,), bwd)


def set_rows(a: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of ``a`` with rows at distinct indices ``idx`` replaced by ``rows``."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data.copy()
    out[idx] = rows.data

    def bwd(g):
        rows.accumulate(g[idx])
        ga = g.copy()
        ga[idx] = 0
        a.accumulate(ga)
    return _out(out, (a, rows), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate(np.full(a.shape, g[0, 0], dtype=_dtype))
    return _out(a.data.sum().reshape(1, 1), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        a.accumulate(np.full(a.shape, g[0, 0] / n, dtype=_dtype))
    return _out(a.data.mean().reshape(1, 1), (a,), bwd)


def sum_rows(a: Tensor) -> Tensor:
    """Row-wise sum: (n, m) -> (n, 1)."""
    def bwd(g):
        a.accumulate(np.repeat(g, a.shape[1], axis=1))
    return _out(a.data.sum(axis=1, keepdims=True), (a,), bwd)


# --- parameter store and optimizer -------------------------------------------

class ParamStore:
    """Named trainable tensors with paired Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def create(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor(data, requires=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return sorted(self.params)

    def n_scalars(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def scale_grads(self, c: float):
        for p in self.params.values():
            if p.grad is not None:
                p.grad = p.grad * _dtype(c)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self.params.items():
            out.create(name, p.data.copy())
        out.adam_m = {k: v.copy() for k, v in self.adam_m.items()}
        out.adam_v = {k: v.copy() for k, v in self.adam_v.items()}
        out.step_count = self.step_count
        return out


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected adaptive update; missing gradients count as zero.

    Gradients are cleared afterwards.
    """
    store.step_count += 1
    t = store.step_count
    for name in store.names():
        p = store.params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        g = g.astype(np.float64)
        m = store.adam_m.get(name)
        v = store.adam_v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        store.adam_m[name] = m
        store.adam_v[name] = v
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        upd = lr * mhat / (np.sqrt(vhat) + eps)
        p.data = (p.data.astype(np.float64) - upd).astype(p.data.dtype)
        p.grad = None


# --- building blocks ----------------------------------------------------------

def init_mlp3(store: ParamStore, prefix: str, d_in: int, d_hidden: int,
              d_out: int, rng: np.random.Generator):
    # Biases draw from the same uniform range as weights so no ReLU
    # preactivation starts exactly at the kink.
    dims = [(d_in, d_hidden), (d_hidden, d_hidden), (d_hidden, d_out)]
    for k, (a, b) in enumerate(dims, 1):
        bound = np.sqrt(6.0 / a)
        store.create(f"{prefix}.w{k}", rng.uniform(-bound, bound, size=(a, b)))
        store.create(f"{prefix}.b{k}", rng.uniform(-bound, bound, size=(1, b)))


def mlp3(x: Tensor, store: ParamStore, prefix: str, head: str = "sigmoid") -> Tensor:
    """Three affine layers with ReLU between; head is 'sigmoid' or 'identity'."""
    h = x
    for k in (1, 2, 3):
        h = add(matmul(h, store[f"{prefix}.w{k}"]), store[f"{prefix}.b{k}"])
        if k < 3:
            h = relu(h)
    if head == "sigmoid":
        return sigmoid(h)
    if head == "identity":
        return h
    raise ValueError(f"unknown head {head!r}")


def init_gru(store: ParamStore, prefix: str, d_in: int, d_state: int,
             rng: np.random.Generator):
    std = 1.0 / np.sqrt(d_state)
    store.create(f"{prefix}.wx", rng.uniform(-std, std, size=(d_in, 3 * d_state)))
    store.create(f"{prefix}.wh", rng.uniform(-std, std, size=(d_state, 3 * d_state)))
    store.create(f"{prefix}.b", rng.uniform(-std, std, size=(1, 3 * d_state)))


def _split3(t: Tensor, d: int):
    data = t
    cols = [take_cols(data, k * d, (k + 1) * d) for k in range(3)]
    return cols


def take_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    def bwd(g):
        acc = np.zeros_like(a.data)
        acc[:, lo:hi] = g
        a.accumulate(acc)
    return _out(a.data[:, lo:hi], (a,), bwd)


def gru_cell(x: Tensor, h_prev: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """Standard GRU update.

    z and r gates from input and previous state; the candidate applies the
    reset gate to the recurrent term; new state is (1-z)*n + z*h_prev.
    """
    d = h_prev.shape[1]
    gx = add(matmul(x, store[f"{prefix}.wx"]), store[f"{prefix}.b"])
    gh = matmul(h_prev, store[f"{prefix}.wh"])
    xz, xr, xn = _split3(gx, d)
    hz, hr, hn = _split3(gh, d)
    z = sigmoid(add(xz, hz))
    r = sigmoid(add(xr, hr))
    n = tanh(add(xn, mul(r, hn)))
    one_minus_z = add_const(scale(z, -1.0), 1.0)
    return add(mul(one_minus_z, n), mul(z, h_prev))


def init_attention(store: ParamStore, prefix: str, dim: int,
                   rng: np.random.Generator):
    std = 1.0 / np.sqrt(dim)
    store.create(f"{prefix}.w1", rng.uniform(-std, std, size=(dim, 1)))
    store.create(f"{prefix}.w2", rng.uniform(-std, std, size=(dim, 1)))


def attn_aggregate(query: Tensor, preds: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Attention-weighted sum over a predecessor set.

    ``query`` is (1, d), ``preds`` is (k, d); scores are w1'query + w2'pred,
    normalized with a softmax over the k predecessors.
    """
    if preds.shape[0] < 1:
        raise ShapeError("attention needs at least one predecessor")
    scores = add(matmul(preds, w2), matmul(query, w1))
    alpha = softmax_set(scores)
    return matmul(transpose(alpha), preds)


def attn_aggregate_groups(query: Tensor, preds: list[Tensor], w1: Tensor,
                          w2: Tensor) -> Tensor:
    """Row-batched attention: n independent predecessor sets of equal size k.

    ``query`` is (n, d) and ``preds`` holds k tensors of shape (n, d); row i
    of the result aggregates {preds[0][i], ..., preds[k-1][i]} exactly as
    ``attn_aggregate`` would.
    """
    if not preds:
        raise ShapeError("attention needs at least one predecessor")
    qs = matmul(query, w1)
    scores = concat_cols([add(matmul(p, w2), qs) for p in preds])
    alpha = softmax_cols(scores)
    out = None
    for j, p in enumerate(preds):
        term = mul(take_cols(alpha, j, j + 1), p)
        out = term if out is None else add(out, term)
    return out


# --- checkpoint io ------------------------------------------------------------

def save_checkpoint(path, store: ParamStore, extra: dict | None = None):
    """JSON index plus a raw little-endian float32 blob, behind a tiny header."""
    entries = []
    blobs = []
    offset = 0
    for name in store.names():
        arr = store.params[name].data.astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    index = {"format_version": CHECKPOINT_VERSION, "dtype": "float32",
             "entries": entries, "extra": extra or {}}
    payload = json.dumps(index).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        f.write(payload)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, size = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        index = json.loads(f.read(size).decode())
        blob = f.read()
    store = ParamStore()
    for e in index["entries"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=e["offset"]).reshape(shape).copy()
        store.create(e["name"], arr)
    return store, index.get("extra", {})
