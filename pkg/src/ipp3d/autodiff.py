"""Reverse-mode automatic differentiation over dense numpy buffers.

Small dynamic-tape engine sized for the policy network: tensors are 1D
parameter vectors, 2D matrices, or 3D stacks of matrices (leading batch
dimension). The graph is recorded at forward time through closures, so
shapes may vary call to call, and backward() runs a reverse topological
sweep. There is no broadcasting beyond row-wise bias addition; everything
else takes explicit shapes.

Scalars default to 64-bit; set_default_dtype(np.float32) switches the
whole engine for callers that prefer speed over gradient-check headroom.
"""

from __future__ import annotations

import struct
import threading
from typing import Sequence

import numpy as np

from .errors import ShapeError

_DTYPE = np.float64
_STATE = threading.local()  # grad mode is per-thread: each worker owns its tape


def set_default_dtype(dtype) -> None:
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


def grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording, for rollouts and inference."""

    def __enter__(self):
        self._prev = grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Tensor:
    """A numpy buffer plus an optional backward-graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        """Whether gradients should accumulate here during backward."""
        return self.requires_grad or bool(self._parents)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.tracked:
        return
    if t.grad is None:
        t.grad = g.astype(_DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.tracked for p in parents):
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked tensor reachable from a scalar loss.

    Runs one reverse topological sweep; calling it a second time on the
    same loss is an error because the accumulated grads would double.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward was already called on this graph; rebuild the loss first")
    loss._consumed = True

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


# --------------------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a 1D bias added to every row of a."""
    if a.shape == b.shape:
        def back(g):
            _accum(a, g)
            _accum(b, g)
        return _make(a.data + b.data, (a, b), back)
    if b.data.ndim == 1 and a.data.ndim >= 2 and a.shape[-1] == b.shape[0]:
        def back(g):
            _accum(a, g)
            _accum(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
        return _make(a.data + b.data, (a, b), back)
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), back)


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        _accum(a, g)

    return _make(a.data + c, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2D @ 2D, batched 3D @ 3D, or batched 3D @ shared 2D."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner dims {ad.shape} @ {bd.shape}")

        def back(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

        return _make(ad @ bd, (a, b), back)
    if ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"batched matmul dims {ad.shape} @ {bd.shape}")

        def back(g):
            _accum(a, g @ bd.transpose(0, 2, 1))
            _accum(b, ad.transpose(0, 2, 1) @ g)

        return _make(ad @ bd, (a, b), back)
    if ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"batched matmul dims {ad.shape} @ {bd.shape}")

        def back(g):
            _accum(a, g @ bd.T)
            _accum(b, np.tensordot(ad, g, axes=([0, 1], [0, 1])))

        return _make(ad @ bd, (a, b), back)
    raise ShapeError(f"unsupported matmul ranks {ad.ndim} and {bd.ndim}")


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError("transpose_last2 needs rank >= 2")

    def back(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), back)


# --------------------------------------------------------------------------- nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def back(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), back)


def log(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def back(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), back)


def xlogx(a: Tensor) -> Tensor:
    """Elementwise x * log(x) with the measure-zero convention 0 log 0 = 0.

    Entries at exactly zero also get zero gradient, which is what masked-out
    probabilities need: they are structurally zero, not near a boundary.
    """
    positive = a.data > 0.0
    safe = np.where(positive, a.data, 1.0)
    out_data = np.where(positive, a.data * np.log(safe), 0.0)

    def back(g):
        _accum(a, g * np.where(positive, np.log(safe) + 1.0, 0.0))

    return _make(out_data, (a,), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; the smaller branch receives the gradient (ties go to a)."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot take minimum of shapes {a.shape} and {b.shape}")
    take_a = a.data <= b.data

    def back(g):
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    return _make(np.where(take_a, a.data, b.data), (a, b), back)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradients pass only where the input was inside."""
    inside = (a.data >= lo) & (a.data <= hi)

    def back(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), back)


# --------------------------------------------------------------------------- softmax / norm


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last dimension, computed with max subtraction for stability."""
    if a.data.ndim < 1 or a.shape[-1] < 1:
        raise ShapeError("softmax_rows needs a nonempty last dimension")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = np.sum(g * out_data, axis=-1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean and unit variance, then apply an affine map."""
    d = a.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last dimension of size >= 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},)")
    mean = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv_std

    def back(g):
        g_xhat = g * gain.data
        gx = inv_std * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accum(a, gx)
        lead = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))

    return _make(xhat * gain.data + bias.data, (a, gain, bias), back)


# --------------------------------------------------------------------------- shape / index


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def back(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along the node axis.

    2D: a (n, d) with idx (m,) -> (m, d). 3D: a (B, n, d) with idx (B, m)
    selects per-batch rows -> (B, m, d).
    """
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim == 2:
        if idx.ndim != 1:
            raise ShapeError("2D gather_rows needs 1D indices")

        def back(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            _accum(a, ga)

        return _make(a.data[idx], (a,), back)
    if a.data.ndim == 3:
        if idx.ndim != 2 or idx.shape[0] != a.data.shape[0]:
            raise ShapeError("3D gather_rows needs indices of shape (batch, m)")
        batch_ix = np.arange(a.data.shape[0])[:, None]

        def back(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, (batch_ix, idx), g)
            _accum(a, ga)

        return _make(a.data[batch_ix, idx], (a,), back)
    raise ShapeError(f"gather_rows unsupported rank {a.data.ndim}")


def set_rows(a: Tensor, idx, rows: Tensor) -> Tensor:
    """Replace rows along the node axis with rows from another tensor.

    2D: a (n, d), idx (m,), rows (m, d). 3D: a (B, n, d), idx (B,),
    rows (B, 1, d), replacing one row per batch element.
    """
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data.copy()
    if a.data.ndim == 2:
        if idx.ndim != 1 or rows.shape != (len(idx), a.shape[1]):
            raise ShapeError("2D set_rows needs idx (m,) and rows (m, d)")
        out_data[idx] = rows.data

        def back(g):
            ga = g.copy()
            ga[idx] = 0.0
            _accum(a, ga)
            _accum(rows, g[idx])

        return _make(out_data, (a, rows), back)
    if a.data.ndim == 3:
        if idx.ndim != 1 or idx.shape[0] != a.shape[0] or rows.shape != (a.shape[0], 1, a.shape[2]):
            raise ShapeError("3D set_rows needs idx (B,) and rows (B, 1, d)")
        batch_ix = np.arange(a.shape[0])
        out_data[batch_ix, idx] = rows.data[:, 0, :]

        def back(g):
            ga = g.copy()
            ga[batch_ix, idx] = 0.0
            _accum(a, ga)
            _accum(rows, g[batch_ix, idx][:, None, :])

        return _make(out_data, (a, rows), back)
    raise ShapeError(f"set_rows unsupported rank {a.data.ndim}")


def take_along_last(a: Tensor, idx) -> Tensor:
    """Pick one entry per row along the last axis: a (..., k), idx (...,) -> (..., 1)."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"index shape {idx.shape} must match leading dims of {a.shape}")
    expanded = idx[..., None]

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, expanded, g, axis=-1)
        _accum(a, ga)

    return _make(np.take_along_axis(a.data, expanded, axis=-1), (a,), back)


def split_heads(a: Tensor, heads: int) -> Tensor:
    """(n, d) -> (heads, n, d/heads); (B, n, d) -> (B*heads, n, d/heads)."""
    d = a.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"feature dim {d} not divisible by {heads} heads")
    dh = d // heads
    if a.data.ndim == 2:
        n = a.shape[0]
        out_data = a.data.reshape(n, heads, dh).transpose(1, 0, 2)

        def back(g):
            _accum(a, g.transpose(1, 0, 2).reshape(n, d))

        return _make(out_data, (a,), back)
    if a.data.ndim == 3:
        b, n = a.shape[0], a.shape[1]
        out_data = a.data.reshape(b, n, heads, dh).transpose(0, 2, 1, 3).reshape(b * heads, n, dh)

        def back(g):
            _accum(
                a,
                g.reshape(b, heads, n, dh).transpose(0, 2, 1, 3).reshape(b, n, d),
            )

        return _make(out_data, (a,), back)
    raise ShapeError(f"split_heads unsupported rank {a.data.ndim}")


def merge_heads(a: Tensor, heads: int, batched: bool) -> Tensor:
    """Inverse of split_heads; batched says whether the original input had a batch dim."""
    if a.data.ndim != 3 or a.shape[0] % heads != 0:
        raise ShapeError(f"merge_heads needs (groups*heads, n, dh), got {a.shape}")
    n, dh = a.shape[1], a.shape[2]
    if not batched:
        if a.shape[0] != heads:
            raise ShapeError("unbatched merge_heads expects exactly `heads` stacks")
        out_data = a.data.transpose(1, 0, 2).reshape(n, heads * dh)

        def back(g):
            _accum(a, g.reshape(n, heads, dh).transpose(1, 0, 2))

        return _make(out_data, (a,), back)
    b = a.shape[0] // heads
    out_data = a.data.reshape(b, heads, n, dh).transpose(0, 2, 1, 3).reshape(b, n, heads * dh)

    def back(g):
        _accum(a, g.reshape(b, n, heads, dh).transpose(0, 2, 1, 3).reshape(b * heads, n, dh))

    return _make(out_data, (a,), back)


# --------------------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean()), (a,), back)


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis, keeping it as size 1."""

    def back(g):
        _accum(a, np.repeat(g, a.shape[-1], axis=-1))

    return _make(a.data.sum(axis=-1, keepdims=True), (a,), back)


# --------------------------------------------------------------------------- serialization

_MAGIC = b"ADTF"
_VERSION = 1


def save_tensors(arrays: dict[str, np.ndarray]) -> bytes:
    """Pack named arrays into the versioned flat binary parameter format."""
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def load_tensors(blob: bytes) -> dict[str, np.ndarray]:
    """Unpack the flat binary parameter format back into named float64 arrays."""
    if blob[:4] != _MAGIC:
        raise ValueError("bad parameter file magic")
    version, count = struct.unpack("<II", blob[4:12])
    if version != _VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        (name_len,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack("<I", blob[off : off + 4])
        off += 4
        dims = struct.unpack(f"<{rank}I", blob[off : off + 4 * rank])
        off += 4 * rank
        n_bytes = 8 * int(np.prod(dims)) if rank else 8
        arr = np.frombuffer(blob[off : off + n_bytes], dtype="<f8").reshape(dims)
        off += n_bytes
        out[name] = arr.copy()
    if off != len(blob):
        raise ValueError("trailing bytes in parameter file")
    return out
