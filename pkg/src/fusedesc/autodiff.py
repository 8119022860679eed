"""Dense tensors with tape-based reverse-mode differentiation.

The operation set is exactly what the descriptor network needs: wide 5x5
convolution, 2x2 max-pooling, tanh, affine layers, spatial batch
normalization, cosine similarity, and a handful of glue ops (flatten, concat,
row split, elementwise square/subtract, mean). Forward calls record a pull
closure on a :class:`Tape`; ``Tape.backward`` replays them in exact reverse
execution order, accumulating gradients additively wherever a tensor feeds
several consumers.

Arithmetic runs at 32-bit by default; build the :class:`ParameterStore` with
``dtype=np.float64`` for tight finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ._binio import ByteReader, ByteWriter
from .errors import (
    DegenerateInputError,
    DimensionError,
    EmptyTapeError,
    UninitializedStatisticsError,
)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
ADAGRAD_EPS = 1e-10

# Splitting im2col buffers at ~16M floats keeps peak memory bounded while the
# per-chunk GEMMs stay large enough to saturate BLAS.
_COL_BUDGET = 1 << 24


class Tensor:
    """N-dimensional value plus its accumulated gradient."""

    __slots__ = ("data", "grad", "needs_grad", "tape")

    def __init__(self, data, tape: "Tape | None" = None, needs_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Ordered record of executed operations for one forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, pull: Callable[[np.ndarray], None]):
        self._records.append((out, pull))

    def backward(self, output: Tensor, output_gradient: float = 1.0):
        """Propagate ``output_gradient`` from ``output`` back to every leaf."""
        if not self._records:
            raise EmptyTapeError("backward requested before any forward operation")
        output.grad = np.full_like(output.data, output_gradient)
        for out, pull in reversed(self._records):
            if out.grad is not None:
                pull(out.grad)


def _accum(t: Tensor, g: np.ndarray):
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make_out(inputs: Iterable[Tensor], data: np.ndarray, pull) -> Tensor:
    inputs = list(inputs)
    tape = next((t.tape for t in inputs if t.tape is not None), None)
    needs = any(t.needs_grad for t in inputs)
    out = Tensor(data, tape, needs)
    if tape is not None and needs:
        tape.record(out, pull)
    return out


def as_tensor(x, tape=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), tape)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, out_h: int, out_w: int) -> np.ndarray:
    """(n, C, Hp, Wp) padded input -> (n, C*kh*kw, out_h*out_w) columns."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + out_h, j : j + out_w]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def _col2im_add(dcols: np.ndarray, dxp: np.ndarray, kh: int, kw: int, out_h: int, out_w: int):
    n, c = dxp.shape[:2]
    d6 = dcols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + out_h, j : j + out_w] += d6[:, :, i, j]


def _conv_chunk(n: int, cols_per_sample: int) -> int:
    return max(1, min(n, int(_COL_BUDGET // max(1, cols_per_sample))))


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Wide convolution: zero padding of half the kernel size, stride 1.

    ``x`` is (C, H, W) or batched (N, C, H, W); output spatial size equals
    input spatial size.
    """
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    w, b = kernels.data, bias.data
    if w.ndim != 4:
        raise DimensionError(f"kernels must be 4-d (K,C,kh,kw), got {w.shape}")
    k, wc, kh, kw = w.shape
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be 3-d or 4-d, got {x.shape}")
    n, c, h, wd = xd.shape
    if c != wc:
        raise DimensionError(f"input has {c} channels but kernels expect {wc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"wide convolution needs odd kernel sides, got {kh}x{kw}")
    if b.shape != (k,):
        raise DimensionError(f"bias must have shape ({k},), got {b.shape}")
    ph, pw = kh // 2, kw // 2

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    w2d = w.reshape(k, c * kh * kw)
    out = np.empty((n, k, h, wd), dtype=xd.dtype)
    chunk = _conv_chunk(n, c * kh * kw * h * wd)
    for s in range(0, n, chunk):
        cols = _im2col(xp[s : s + chunk], kh, kw, h, wd)
        out[s : s + chunk] = (w2d @ cols).reshape(-1, k, h, wd)
    out += b.reshape(1, k, 1, 1)

    def pull(g: np.ndarray):
        g4 = g if batched else g[None]
        _accum(bias, g4.sum(axis=(0, 2, 3)))
        dw = np.zeros_like(w2d) if kernels.needs_grad else None
        dxp = np.zeros_like(xp) if x.needs_grad else None
        for s in range(0, n, chunk):
            cols = _im2col(xp[s : s + chunk], kh, kw, h, wd)
            gm = g4[s : s + chunk].reshape(-1, k, h * wd)
            if dw is not None:
                # (k, n*hw) @ (n*hw, c*kh*kw)
                dw += np.einsum("nkp,ncp->kc", gm, cols, optimize=True)
            if dxp is not None:
                dcols = np.einsum("kc,nkp->ncp", w2d, gm, optimize=True)
                _col2im_add(dcols, dxp[s : s + chunk], kh, kw, h, wd)
        if dw is not None:
            _accum(kernels, dw.reshape(w.shape))
        if dxp is not None:
            dx = dxp[:, :, ph : ph + h, pw : pw + wd]
            _accum(x, dx if batched else dx[0])

    return _make_out([x, kernels, bias], out if batched else out[0], pull)


# ---------------------------------------------------------------------------
# pooling and pointwise ops


def maxpool2x2(x: Tensor) -> Tensor:
    """Disjoint 2x2 max pooling; gradient goes to the first row-major argmax."""
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4:
        raise DimensionError(f"maxpool2x2 input must be 3-d or 4-d, got {x.shape}")
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        xd.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    )
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def pull(g: np.ndarray):
        g4 = g if batched else g[None]
        dwin = np.zeros((n, c, h2, w2, 4), dtype=g4.dtype)
        np.put_along_axis(dwin, arg[..., None], g4[..., None], axis=-1)
        dx = (
            dwin.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        _accum(x, dx if batched else dx[0])

    return _make_out([x], out if batched else out[0], pull)


def tanh_activation(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def pull(g: np.ndarray):
        _accum(x, g * (1.0 - y * y))

    return _make_out([x], y, pull)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map W.x + b for a single vector or a (N, F) batch."""
    w, b = weights.data, bias.data
    batched = x.ndim == 2
    xd = x.data if batched else x.data[None]
    if xd.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"linear expects vectors/matrices, got {x.shape} and {w.shape}")
    u, f = w.shape
    if xd.shape[1] != f:
        raise DimensionError(f"input length {xd.shape[1]} != weight columns {f}")
    if b.shape != (u,):
        raise DimensionError(f"bias must have shape ({u},), got {b.shape}")
    out = xd @ w.T + b

    def pull(g: np.ndarray):
        g2 = g if batched else g[None]
        if weights.needs_grad:
            _accum(weights, g2.T @ xd)
        _accum(bias, g2.sum(axis=0))
        if x.needs_grad:
            dx = g2 @ w
            _accum(x, dx if batched else dx[0])

    return _make_out([x, weights, bias], out if batched else out[0], pull)


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Mutable running statistics for one spatial batch-norm layer.

    The arrays are shared views into a :class:`ParameterStore` so checkpoints
    carry them automatically; ``steps`` counts completed train-mode passes.
    """

    run_mean: np.ndarray
    run_var: np.ndarray
    steps: np.ndarray  # shape (1,); float so it serializes like every value

    @property
    def initialized(self) -> bool:
        return self.steps[0] > 0


def spatial_batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: str = "train",
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization of a (N, C, H, W) batch over batch+spatial axes."""
    xd = x.data
    if xd.ndim != 4:
        raise DimensionError(f"spatial_batchnorm needs a (N,C,H,W) batch, got {x.shape}")
    n, c, h, w = xd.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    gam = gamma.data.reshape(1, c, 1, 1)
    if mode == "train":
        if n < 2:
            raise DimensionError(f"train-mode batch norm needs batch size >= 2, got {n}")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        state.run_mean *= 1.0 - momentum
        state.run_mean += momentum * mu
        state.run_var *= 1.0 - momentum
        state.run_var += momentum * var
        state.steps += 1.0
    else:
        if not state.initialized:
            raise UninitializedStatisticsError(
                "eval-mode batch norm requested before any training step"
            )
        mu, var = state.run_mean, state.run_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gam * xhat + beta.data.reshape(1, c, 1, 1)

    def pull(g: np.ndarray):
        if gamma.needs_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, g.sum(axis=(0, 2, 3)))
        if not x.needs_grad:
            return
        scale = gam * inv_std.reshape(1, c, 1, 1)
        if mode == "train":
            # gradient through the batch statistics themselves
            gm = g.mean(axis=(0, 2, 3), keepdims=True)
            gxm = (g * xhat).mean(axis=(0, 2, 3), keepdims=True)
            _accum(x, scale * (g - gm - xhat * gxm))
        else:
            _accum(x, scale * g)

    return _make_out([x, gamma, beta], out, pull)


# ---------------------------------------------------------------------------
# similarity and reductions


def cosine_distance(d1: Tensor, d2: Tensor) -> Tensor:
    """Inner product over the product of L2 norms, in [-1, 1].

    Accepts a pair of vectors (scalar result) or (N, B) batches (length-N
    result). The denominator is computed as sqrt(ss1*ss2) so descriptors made
    of +-1 entries compare exactly against their Hamming counterpart.
    """
    a, b = d1.data, d2.data
    if a.shape != b.shape:
        raise DimensionError(f"cosine_distance operands differ: {a.shape} vs {b.shape}")
    if a.ndim not in (1, 2):
        raise DimensionError(f"cosine_distance expects vectors or (N,B) batches, got {a.shape}")
    axis = a.ndim - 1
    ss1 = (a * a).sum(axis=axis)
    ss2 = (b * b).sum(axis=axis)
    if np.any(ss1 == 0.0) or np.any(ss2 == 0.0):
        raise DegenerateInputError("cosine distance undefined for zero-norm input")
    dot = (a * b).sum(axis=axis)
    denom = np.sqrt(ss1 * ss2)
    c = dot / denom

    def pull(g: np.ndarray):
        if a.ndim == 2:
            ge = g[:, None]
            ce, de = c[:, None], denom[:, None]
            s1e, s2e = ss1[:, None], ss2[:, None]
        else:
            ge, ce, de, s1e, s2e = g, c, denom, ss1, ss2
        if d1.needs_grad:
            _accum(d1, ge * (b / de - ce * a / s1e))
        if d2.needs_grad:
            _accum(d2, ge * (a / de - ce * b / s2e))

    return _make_out([d1, d2], c, pull)


def flatten(x: Tensor) -> Tensor:
    """(C,H,W) -> (F,) or (N,C,H,W) -> (N,F), row-major."""
    batched = x.ndim == 4
    shape = x.shape
    out = x.data.reshape(shape[0], -1) if batched else x.data.reshape(-1)

    def pull(g: np.ndarray):
        _accum(x, g.reshape(shape))

    return _make_out([x], out, pull)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join two feature vectors (or (N,F) batches) along the last axis."""
    if a.ndim != b.ndim:
        raise DimensionError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    na = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def pull(g: np.ndarray):
        _accum(a, g[..., :na])
        _accum(b, g[..., na:])

    return _make_out([a, b], out, pull)


def split_rows(x: Tensor, n: int) -> tuple[Tensor, Tensor]:
    """Split a (M, F) tensor into its first n and remaining rows."""
    if x.ndim != 2 or not 0 < n < x.shape[0]:
        raise DimensionError(f"cannot split {x.shape} at row {n}")

    def pull_top(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:n] = g
        _accum(x, full)

    def pull_bot(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[n:] = g
        _accum(x, full)

    top = _make_out([x], x.data[:n].copy(), pull_top)
    bot = _make_out([x], x.data[n:].copy(), pull_bot)
    return top, bot


def sub_const(c, x: Tensor) -> Tensor:
    """Elementwise c - x for a constant c."""
    out = np.asarray(c, dtype=x.dtype) - x.data

    def pull(g: np.ndarray):
        _accum(x, -g)

    return _make_out([x], out, pull)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def pull(g: np.ndarray):
        _accum(x, 2.0 * x.data * g)

    return _make_out([x], out, pull)


def mean_all(x: Tensor) -> Tensor:
    out = x.data.mean()

    def pull(g: np.ndarray):
        _accum(x, np.full_like(x.data, g / x.data.size))

    return _make_out([x], np.asarray(out), pull)


# ---------------------------------------------------------------------------
# parameters and the optimizer


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    accum: np.ndarray


class ParameterStore:
    """Named parameters with their gradients and Adagrad accumulators."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        v = np.ascontiguousarray(value, dtype=self.dtype)
        p = Parameter(v, np.zeros_like(v), np.zeros_like(v))
        self._params[name] = p
        return p

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensor(self, name: str, tape: Tape | None = None) -> Tensor:
        """Leaf tensor sharing this parameter's value and gradient buffers."""
        p = self._params[name]
        t = Tensor(p.value, tape, needs_grad=True)
        t.grad = p.grad
        return t

    def zero_grad(self):
        for p in self._params.values():
            p.grad[...] = 0.0

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for name, arr in values.items():
            self._params[name].value[...] = arr

    def total_size(self) -> int:
        return sum(p.value.size for p in self._params.values())


def adagrad_step(store: ParameterStore, learning_rate: float, eps: float = ADAGRAD_EPS):
    """accum += g^2; value -= lr * g / (sqrt(accum) + eps)."""
    for p in store._params.values():
        g = p.grad
        p.accum += g * g
        p.value -= learning_rate * g / (np.sqrt(p.accum) + eps)


# ---------------------------------------------------------------------------
# checkpoint file ("PFCK")

_CHECKPOINT_MAGIC = b"PFCK"
_CHECKPOINT_VERSION = 1


def save_checkpoint(store: ParameterStore, path):
    """Write parameter values: magic, version, then (name, rank, dims, f32 data)."""
    w = ByteWriter()
    w.raw(_CHECKPOINT_MAGIC)
    w.u8(_CHECKPOINT_VERSION)
    for name, p in store.items():
        encoded = name.encode()
        w.u16(len(encoded))
        w.raw(encoded)
        w.u8(p.value.ndim)
        for dim in p.value.shape:
            w.u32(dim)
        w.array(p.value, np.float32)
    w.write_to(path)


def load_checkpoint(path, dtype=np.float32) -> ParameterStore:
    with open(path, "rb") as fh:
        r = ByteReader(fh.read(), path=path)
    r.expect_magic(_CHECKPOINT_MAGIC)
    version = r.u8("version")
    if version != _CHECKPOINT_VERSION:
        raise_bad_version(r, version, _CHECKPOINT_VERSION)
    store = ParameterStore(dtype=dtype)
    while not r.at_end():
        name = r.take(r.u16("name length"), "name").decode()
        rank = r.u8("rank")
        dims = [r.u32("dimension") for _ in range(rank)]
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        values = r.array(np.float32, count, f"values of {name!r}")
        store.add(name, values.reshape(dims))
    return store


def raise_bad_version(reader: ByteReader, got: int, expected: int):
    from .errors import FormatError

    raise FormatError(
        f"unsupported format version {got}, expected {expected}",
        offset=reader.offset - 1,
        path=reader.path,
    )
