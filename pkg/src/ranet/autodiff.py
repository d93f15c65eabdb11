"""Minimal dense-tensor reverse-mode differentiation.

A Tape owns every tensor created on it and records one backward closure per
primitive application, in execution order.  Execution order is already a
topological order of the graph, so reverse-mode differentiation replays the
records once, back to front.  No broadcasting: shapes must match exactly
except where a primitive says otherwise.

Two precision modes: float64 tapes for verification (finite-difference
checks are unreliable at float32) and float32 tapes for training.  All
primitives are deterministic; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's contract."""


class NumericError(ArithmeticError):
    """Non-finite values reached a primitive that requires finite input."""


class GraphError(RuntimeError):
    """Tape misuse: cross-tape operands, repeated backward, non-scalar loss."""


def _as_array(data, dtype) -> np.ndarray:
    # ascontiguousarray would promote 0-d scalars to shape (1,)
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tape:
    """Confined to one thread; distinct tapes may run concurrently."""

    def __init__(self, dtype=np.float64):
        dt = np.dtype(dtype)
        if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"tape dtype must be float32 or float64, got {dt}")
        self.dtype = dt
        self._records: list[tuple[Tensor, object]] = []
        self._next_id = 0
        self._backward_done = False

    def tensor(self, data, requires_grad: bool = False) -> "Tensor":
        return Tensor(self, _as_array(data, self.dtype), requires_grad)

    def constant(self, data) -> "Tensor":
        return self.tensor(data, requires_grad=False)

    def _record(self, out: "Tensor", backward_fn) -> None:
        self._records.append((out, backward_fn))

    def backward(self, loss: "Tensor") -> None:
        """Populate .grad of every requires-grad tensor with d(loss)/d(tensor)."""
        if loss.tape is not self:
            raise GraphError("loss tensor does not belong to this tape")
        if self._backward_done:
            raise GraphError("backward() already ran on this tape; build a new tape")
        if loss.data.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.data.shape}")
        if not loss.requires_grad:
            raise GraphError("loss is detached: nothing on the tape requires gradient")
        self._backward_done = True
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)


class Tensor:
    """Dense array plus its accumulated gradient, bound to one tape."""

    __slots__ = ("tape", "data", "grad", "requires_grad", "node_id")

    def __init__(self, tape: Tape, data: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = tape._next_id
        tape._next_id += 1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        self.tape.backward(self)


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise GraphError("operands were created on different tapes")
    return tape


def _result(tape: Tape, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(tape, _as_array(data, tape.dtype),
                 any(t.requires_grad for t in inputs))
    if out.requires_grad:
        tape._record(out, backward_fn)
    return out


def _require_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: input contains non-finite values")


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    _require_finite(a.data, "add")
    _require_finite(b.data, "add")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(tape, a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    _require_finite(a.data, "mul")
    _require_finite(b.data, "mul")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(tape, a.data * b.data, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    _require_finite(x.data, "scale")
    c = x.tape.dtype.type(c)

    def bwd(g):
        x.accumulate(g * c)

    return _result(x.tape, x.data * c, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    _require_finite(x.data, "relu")
    mask = x.data > 0  # subgradient at exactly 0 is 0

    def bwd(g):
        x.accumulate(g * mask)

    return _result(x.tape, np.where(mask, x.data, 0), (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    _require_finite(x.data, "sigmoid")
    # Branch on sign so neither exp overflows.
    pos = x.data >= 0
    z = np.exp(np.where(pos, -x.data, x.data))
    y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.tape.dtype)

    def bwd(g):
        x.accumulate(g * y * (1.0 - y))

    return _result(x.tape, y, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    """Smooth non-negative rectifier ln(1 + e^x), computed stably."""
    _require_finite(x.data, "softplus")
    y = np.logaddexp(0.0, x.data).astype(x.tape.dtype)
    sig = 1.0 / (1.0 + np.exp(-np.abs(x.data)))
    sig = np.where(x.data >= 0, sig, 1.0 - sig)

    def bwd(g):
        x.accumulate(g * sig)

    return _result(x.tape, y, (x,), bwd)


def abs_val(x: Tensor) -> Tensor:
    """|x| with subgradient 0 at the kink."""
    _require_finite(x.data, "abs_val")
    sign = np.sign(x.data)

    def bwd(g):
        x.accumulate(g * sign)

    return _result(x.tape, np.abs(x.data), (x,), bwd)


# ---------------------------------------------------------------------------
# Structural primitives
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def bwd(g):
        x.accumulate(g.reshape(x.data.shape))

    return _result(x.tape, x.data.reshape(shape), (x,), bwd)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2D tensor, got shape {x.shape}")

    def bwd(g):
        x.accumulate(g.T)

    return _result(x.tape, x.data.T, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(g):
        x.accumulate(np.full_like(x.data, g))

    return _result(x.tape, x.data.sum(dtype=x.tape.dtype), (x,), bwd)


def concat_channels(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels: need at least one tensor")
    tape = _same_tape(*xs)
    spatial = xs[0].shape[1:]
    for t in xs:
        if t.data.ndim != 3:
            raise ShapeError(f"concat_channels: expected [C,H,W] tensors, got {t.shape}")
        if t.shape[1:] != spatial:
            raise ShapeError(
                f"concat_channels: spatial shapes differ, {t.shape[1:]} vs {spatial}"
            )
    sizes = [t.shape[0] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate(g[lo:hi])

    return _result(tape, np.concatenate([t.data for t in xs], axis=0), tuple(xs), bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"slice_channels: expected [C,H,W], got {x.shape}")
    if not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"slice_channels: [{start}:{stop}] out of range for C={x.shape[0]}")

    def bwd(g):
        buf = np.zeros_like(x.data)
        buf[start:stop] = g
        x.accumulate(buf)

    return _result(x.tape, x.data[start:stop].copy(), (x,), bwd)


# ---------------------------------------------------------------------------
# Linear-algebra primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(tape, a.data @ b.data, (a, b), bwd)


def softmax_rows(s: Tensor) -> Tensor:
    """Per-row softmax with max subtraction; every output row sums to 1."""
    _require_finite(s.data, "softmax_rows")
    if s.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected a 2D tensor, got {s.shape}")
    shifted = s.data - s.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=1, keepdims=True)).astype(s.tape.dtype)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        s.accumulate(y * (g - dot))

    return _result(s.tape, y, (s,), bwd)


def normalize_columns(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each column of a 2D tensor to unit Euclidean norm."""
    if x.data.ndim != 2:
        raise ShapeError(f"normalize_columns: expected a 2D tensor, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=0, keepdims=True) + eps * eps)
    y = x.data / norms

    def bwd(g):
        # d(v/s)/dv = I/s - v v^T / s^3, applied column by column
        dot = (g * y).sum(axis=0, keepdims=True)
        x.accumulate((g - y * dot) / norms)

    return _result(x.tape, y, (x,), bwd)


# ---------------------------------------------------------------------------
# Spatial primitives on [C, H, W] tensors
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None, dilation: int = 1) -> Tensor:
    """Dilated same-size cross-correlation: [C,H,W] * [F,C,kh,kw] -> [F,H,W].

    Zero padding is sized so output spatial dims equal input dims; kernel
    sides must be odd for that to be well defined.
    """
    inputs = (x, k) if bias is None else (x, k, bias)
    tape = _same_tape(*inputs)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d: input must be [C,H,W], got {x.shape}")
    if k.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [F,C,kh,kw], got {k.shape}")
    F, C, kh, kw = k.shape
    if C != x.shape[0]:
        raise ShapeError(f"conv2d: kernel expects {C} channels, input has {x.shape[0]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    if dilation < 1 or int(dilation) != dilation:
        raise ValueError(f"conv2d: dilation must be a positive integer, got {dilation}")
    if bias is not None and bias.shape != (F,):
        raise ShapeError(f"conv2d: bias must have shape ({F},), got {bias.shape}")

    d = int(dilation)
    H, W = x.shape[1], x.shape[2]
    ph, pw = d * (kh // 2), d * (kw // 2)
    xp = np.zeros((C, H + 2 * ph, W + 2 * pw), dtype=tape.dtype)
    xp[:, ph : ph + H, pw : pw + W] = x.data

    out = np.zeros((F, H, W), dtype=tape.dtype)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, i * d : i * d + H, j * d : j * d + W]
            out += np.einsum("fc,chw->fhw", k.data[:, :, i, j], win, optimize=True)
    if bias is not None:
        out += bias.data[:, None, None]

    def bwd(g):
        if k.requires_grad:
            kg = np.empty_like(k.data)
            for i in range(kh):
                for j in range(kw):
                    win = xp[:, i * d : i * d + H, j * d : j * d + W]
                    kg[:, :, i, j] = np.einsum("fhw,chw->fc", g, win, optimize=True)
            k.accumulate(kg)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i * d : i * d + H, j * d : j * d + W] += np.einsum(
                        "fc,fhw->chw", k.data[:, :, i, j], g, optimize=True
                    )
            x.accumulate(gxp[:, ph : ph + H, pw : pw + W])
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(1, 2)))

    return _result(tape, out, inputs, bwd)


def avgpool(x: Tensor, window: int) -> Tensor:
    """Non-overlapping mean pooling; spatial dims shrink by the window factor."""
    if x.data.ndim != 3:
        raise ShapeError(f"avgpool: input must be [C,H,W], got {x.shape}")
    C, H, W = x.shape
    w = int(window)
    if w < 1:
        raise ValueError(f"avgpool: window must be positive, got {window}")
    if w > H or w > W:
        raise ValueError(f"avgpool: window {w} exceeds input {H}x{W}")
    if H % w or W % w:
        raise ValueError(f"avgpool: window {w} must divide input sides {H}x{W}")
    out = x.data.reshape(C, H // w, w, W // w, w).mean(axis=(2, 4), dtype=x.tape.dtype)

    def bwd(g):
        spread = np.repeat(np.repeat(g, w, axis=1), w, axis=2) / (w * w)
        x.accumulate(spread)

    return _result(x.tape, out, (x,), bwd)


def _adaptive_bins(size: int, grid: int):
    starts = [(i * size) // grid for i in range(grid)]
    ends = [-(-((i + 1) * size) // grid) for i in range(grid)]  # ceil division
    return list(zip(starts, ends))


def adaptive_avgpool(x: Tensor, grid: int) -> Tensor:
    """Mean pooling to an explicit grid x grid output; identity when grid = side."""
    if x.data.ndim != 3:
        raise ShapeError(f"adaptive_avgpool: input must be [C,H,W], got {x.shape}")
    C, H, W = x.shape
    g_ = int(grid)
    if g_ < 1:
        raise ValueError(f"adaptive_avgpool: grid must be positive, got {grid}")
    if g_ > H or g_ > W:
        raise ValueError(f"adaptive_avgpool: grid {g_} exceeds input {H}x{W}")
    rbins = _adaptive_bins(H, g_)
    cbins = _adaptive_bins(W, g_)
    out = np.empty((C, g_, g_), dtype=x.tape.dtype)
    for i, (r0, r1) in enumerate(rbins):
        for j, (c0, c1) in enumerate(cbins):
            out[:, i, j] = x.data[:, r0:r1, c0:c1].mean(axis=(1, 2), dtype=x.tape.dtype)

    def bwd(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rbins):
            for j, (c0, c1) in enumerate(cbins):
                area = (r1 - r0) * (c1 - c0)
                gx[:, r0:r1, c0:c1] += g[:, i, j][:, None, None] / area
        x.accumulate(gx)

    return _result(x.tape, out, (x,), bwd)


def _bilinear_axis(in_size: int, out_size: int, dtype):
    """Per-output source indices (lo, hi) and the hi-side weight, align-corners."""
    if out_size == 1 or in_size == 1:
        idx = np.zeros(out_size, dtype=np.intp)
        return idx, idx.copy(), np.zeros(out_size, dtype=dtype)
    src = np.arange(out_size, dtype=np.float64) * (in_size - 1) / (out_size - 1)
    lo = np.clip(np.floor(src).astype(np.intp), 0, in_size - 2)
    frac = (src - lo).astype(dtype)
    return lo, lo + 1, frac


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with the align-corners convention; linear in x."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample_bilinear: input must be [C,H,W], got {x.shape}")
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"upsample_bilinear: target {out_h}x{out_w} must be >= 1x1")
    C, H, W = x.shape
    dt = x.tape.dtype
    r0, r1, fy = _bilinear_axis(H, out_h, dt)
    c0, c1, fx = _bilinear_axis(W, out_w, dt)
    wy0, wy1 = (1.0 - fy)[None, :, None], fy[None, :, None]
    wx0, wx1 = (1.0 - fx)[None, None, :], fx[None, None, :]

    def gather(rr, cc):
        return x.data[:, rr[:, None], cc[None, :]]

    out = (
        wy0 * (wx0 * gather(r0, c0) + wx1 * gather(r0, c1))
        + wy1 * (wx0 * gather(r1, c0) + wx1 * gather(r1, c1))
    ).astype(dt)

    def bwd(g):
        gx = np.zeros_like(x.data)
        rows = [(r0, wy0), (r1, wy1)]
        cols = [(c0, wx0), (c1, wx1)]
        for rr, wy in rows:
            for cc, wx in cols:
                np.add.at(gx, (slice(None), rr[:, None], cc[None, :]), g * wy * wx)
        x.accumulate(gx)

    return _result(x.tape, out, (x,), bwd)


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss on its tape."""
    loss.tape.backward(loss)
