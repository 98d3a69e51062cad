"""Dense NCHW tensors with reverse-mode automatic differentiation.

Data lives in numpy arrays (float32 for training, float64 for verification).
Every differentiable op records a backward closure; ``backward`` replays the
tape in reverse execution order and accumulates gradients additively, so a
tensor consumed by several branches receives the sum of all contributions.
Kernels use fixed reduction orders, which keeps repeated forward passes
bitwise identical.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import GradCheckError, ShapeError

# Active-branch recording for finite-difference checks. Piecewise ops (relu,
# bilinear sampling) register which branch each element took; ``grad_check``
# discards probes whose +eps/-eps evaluations fall on different branches,
# where the loss is not differentiable and central differences are undefined.
_branch_trace: list[np.ndarray] | None = None


def note_branch_pattern(pattern: np.ndarray) -> None:
    if _branch_trace is not None:
        _branch_trace.append(pattern)


class _BranchRecorder:
    def __enter__(self) -> list[np.ndarray]:
        global _branch_trace
        self._prev = _branch_trace
        _branch_trace = []
        return _branch_trace

    def __exit__(self, *exc) -> None:
        global _branch_trace
        _branch_trace = self._prev


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class Tensor:
    """A dense array plus an optional autodiff tape node."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tap_mask", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        # Binary mask over kernel taps; positions where the mask is 0 are
        # frozen at 0 (used by the orientation-fusion diagonal kernels).
        self.tap_mask: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------

    def _needs_tape(self) -> bool:
        return self.requires_grad or self._backward is not None

    def backward(self) -> None:
        """Populate ``grad`` for every reachable tensor; self must be scalar."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a single-element tensor, got shape {self.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return ewise(self, other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return ewise(self, other, "sub")

    def __rsub__(self, other):
        return ewise(other, self, "sub")

    def __mul__(self, other):
        return ewise(self, other, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return ewise(self, -1.0, "mul")

    def relu(self) -> "Tensor":
        return activation(self, "relu")

    def sigmoid(self) -> "Tensor":
        return activation(self, "sigmoid")

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    seen.add(id(root))
    while stack:
        node, i = stack.pop()
        if i < len(node._parents):
            stack.append((node, i + 1))
            parent = node._parents[i]
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p._needs_tape() for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient contributions over axes that were broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------

def ewise(a, b, kind: str) -> Tensor:
    """Elementwise add/sub/mul with singleton-axis broadcasting."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("ewise needs at least one Tensor operand")
    ref = a if isinstance(a, Tensor) else b
    a = _as_tensor(a, ref)
    b = _as_tensor(b, ref)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None
    if kind == "add":
        data = a.data + b.data
    elif kind == "sub":
        data = a.data - b.data
    elif kind == "mul":
        data = a.data * b.data
    else:
        raise ValueError(f"unknown ewise kind {kind!r}")

    def backward(gout: np.ndarray) -> None:
        if a.grad is not None:
            if kind == "mul":
                a.grad += _unbroadcast(gout * b.data, a.shape)
            else:
                a.grad += _unbroadcast(gout, a.shape)
        if b.grad is not None:
            if kind == "mul":
                b.grad += _unbroadcast(gout * a.data, b.shape)
            elif kind == "sub":
                b.grad += _unbroadcast(-gout, b.shape)
            else:
                b.grad += _unbroadcast(gout, b.shape)

    return _make(data, (a, b), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    """relu (subgradient 0 at the kink) or sigmoid."""
    if kind == "relu":
        data = np.maximum(x.data, 0)
        mask = x.data > 0
        note_branch_pattern(mask)

        def backward(gout: np.ndarray) -> None:
            if x.grad is not None:
                x.grad += gout * mask

        return _make(data, (x,), backward)
    if kind == "sigmoid":
        # Numerically stable split on the sign of x.
        data = np.empty_like(x.data)
        pos = x.data >= 0
        data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
        ex = np.exp(x.data[~pos])
        data[~pos] = ex / (1.0 + ex)

        def backward(gout: np.ndarray) -> None:
            if x.grad is not None:
                x.grad += gout * data * (1.0 - data)

        return _make(data, (x,), backward)
    raise ValueError(f"unknown activation kind {kind!r}")


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(gout: np.ndarray) -> None:
        if x.grad is not None:
            x.grad += gout * np.ones_like(x.data)

    return _make(data, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.sum() / n, dtype=x.data.dtype)

    def backward(gout: np.ndarray) -> None:
        if x.grad is not None:
            x.grad += (gout / n) * np.ones_like(x.data)

    return _make(data, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis; all other extents must agree."""
    if axis != 1:
        raise ShapeError("concat supports the channel axis (1) only")
    first = xs[0]
    for i, t in enumerate(xs[1:], start=1):
        for ax in (0, 2, 3):
            if t.shape[ax] != first.shape[ax]:
                raise ShapeError(
                    f"concat input {i} disagrees on axis {ax}: "
                    f"{t.shape[ax]} vs {first.shape[ax]}"
                )
    data = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(gout: np.ndarray) -> None:
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.grad is not None:
                t.grad += gout[:, lo:hi]

    return _make(data, tuple(xs), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, (N,C,H,W) -> (N,C,1,1)."""
    n_, c_, h, w = x.shape
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(gout: np.ndarray) -> None:
        if x.grad is not None:
            x.grad += np.broadcast_to(gout / (h * w), x.shape)

    return _make(data, (x,), backward)


# -- convolution kernels -----------------------------------------------------

def _norm_pad(pad) -> tuple[tuple[int, int], tuple[int, int]]:
    """Accepts int, (ph, pw), or ((pt, pb), (pl, pr))."""
    if isinstance(pad, int):
        return (pad, pad), (pad, pad)
    ph, pw = pad
    if isinstance(ph, int):
        return (ph, ph), (pw, pw)
    return tuple(ph), tuple(pw)


def _conv_windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    s0, s1, s2, s3 = xp.strides
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(s0, s1, s2 * sh, s3 * sw, s2, s3),
        writeable=False,
    )


def _corr_raw(x: np.ndarray, w: np.ndarray, sh: int, sw: int,
              ph: tuple[int, int], pw: tuple[int, int]) -> np.ndarray:
    """Cross-correlation of x (N,Cin,H,W) with w (Cout,Cin,kh,kw)."""
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    view = _conv_windows(xp, w.shape[2], w.shape[3], sh, sw)
    out = np.tensordot(view, w, axes=((1, 4, 5), (1, 2, 3)))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _corr_dw(x: np.ndarray, gout: np.ndarray, kh: int, kw: int, sh: int, sw: int,
             ph: tuple[int, int], pw: tuple[int, int]) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    view = _conv_windows(xp, kh, kw, sh, sw)
    return np.tensordot(gout, view, axes=((0, 2, 3), (0, 2, 3)))


def _dilate(x: np.ndarray, sh: int, sw: int) -> np.ndarray:
    if sh == 1 and sw == 1:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, (h - 1) * sh + 1, (w - 1) * sw + 1), dtype=x.dtype)
    out[:, :, ::sh, ::sw] = x
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad=0) -> Tensor:
    """Direct cross-correlation plus bias; zero padding; exact output extents.

    ``pad`` may be an int, per-axis (ph, pw), or fully asymmetric
    ((top, bottom), (left, right)); stride-2 downsampling layers use (1, 0)
    so that even extents divide exactly.
    """
    ph, pw = _norm_pad(pad)
    sh = sw = stride
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (N,C,H,W), got rank {x.data.ndim}")
    n, cin, h, w_ = x.shape
    cout, wcin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel extents must be odd, got kernel axes ({kh},{kw})")
    if wcin != cin:
        raise ShapeError(f"channel axis mismatch: input has {cin}, kernel expects {wcin}")
    if b.shape != (cout,):
        raise ShapeError(f"bias axis 0 must be {cout}, got {b.shape}")
    if min(ph + pw) < 0 or stride < 1:
        raise ShapeError("conv2d requires pad >= 0 and stride >= 1")
    if (h + sum(ph) - kh) % sh or (w_ + sum(pw) - kw) % sw:
        raise ShapeError(
            f"spatial axes ({h},{w_}) with pad ({ph},{pw}), kernel ({kh},{kw}), "
            f"stride {stride} do not divide exactly"
        )
    data = _corr_raw(x.data, w.data, sh, sw, ph, pw)
    data += b.data[None, :, None, None]

    def backward(gout: np.ndarray) -> None:
        if b.grad is not None:
            b.grad += gout.sum(axis=(0, 2, 3))
        if w.grad is not None:
            w.grad += _corr_dw(x.data, gout, kh, kw, sh, sw, ph, pw)
        if x.grad is not None:
            gd = _dilate(gout, sh, sw)
            wflip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dxp = _corr_raw(gd, wflip, 1, 1, (kh - 1, kh - 1), (kw - 1, kw - 1))
            x.grad += dxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w_]

    return _make(data, (x, w, b), backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad=0) -> Tensor:
    """Gradient-of-conv upsampling; weight layout (Cin, Cout, kh, kw)."""
    (ph, _), (pw, _) = _norm_pad(pad)
    if stride not in (1, 2):
        raise ShapeError(f"conv_transpose2d stride must be 1 or 2, got {stride}")
    n, cin, h, w_ = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"channel axis mismatch: input has {cin}, kernel expects {wcin}")
    if b.shape != (cout,):
        raise ShapeError(f"bias axis 0 must be {cout}, got {b.shape}")
    if kh - 1 - ph < 0 or kw - 1 - pw < 0:
        raise ShapeError(f"pad ({ph},{pw}) exceeds kernel extents ({kh},{kw}) minus one")
    wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    xd = _dilate(x.data, stride, stride)
    data = _corr_raw(xd, wf, 1, 1, (kh - 1 - ph,) * 2, (kw - 1 - pw,) * 2)
    data += b.data[None, :, None, None]

    def backward(gout: np.ndarray) -> None:
        if b.grad is not None:
            b.grad += gout.sum(axis=(0, 2, 3))
        if w.grad is not None:
            dwf = _corr_dw(xd, gout, kh, kw, 1, 1, (kh - 1 - ph,) * 2, (kw - 1 - pw,) * 2)
            w.grad += np.ascontiguousarray(dwf.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        if x.grad is not None:
            # Adjoint of the transposed conv is the matching forward conv.
            x.grad += _corr_raw(gout, w.data, stride, stride, (ph, ph), (pw, pw))

    return _make(data, (x, w, b), backward)


# -- verification harness ----------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               max_elems: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients with central finite differences.

    ``f`` rebuilds the computation from scratch on every call and returns a
    scalar Tensor; ``params`` are the leaf tensors to probe (64-bit data).
    Returns max over probed elements of |analytic - fd| / max(1, |analytic|).
    ``max_elems`` limits the probed elements per parameter (seeded choice),
    which keeps large sweeps inside the runtime budget. Probes whose +eps and
    -eps evaluations take different branches through a piecewise op (relu
    kink, bilinear sampling cell) are discarded: the loss is not
    differentiable on that segment, so a central difference says nothing
    about the one-sided analytic gradient.
    """
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    with _BranchRecorder() as base_trace:
        loss = f()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for pi, (p, g) in enumerate(zip(params, analytic)):
        pname = p.name or f"param{pi}"
        if not np.all(np.isfinite(g)):
            raise GradCheckError(f"non-finite analytic gradient for {pname}")
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            r = rng if rng is not None else np.random.default_rng(0)
            idxs = np.sort(r.choice(flat.size, size=max_elems, replace=False))
        gflat = g.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            with _BranchRecorder() as trace_p:
                lp = float(f().data)
            flat[i] = orig - eps
            with _BranchRecorder() as trace_m:
                lm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(f"non-finite loss while probing {pname}[{i}]")
            if not (_same_branches(base_trace, trace_p)
                    and _same_branches(base_trace, trace_m)):
                continue
            fd = (lp - lm) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]))
            if rel > worst:
                worst = rel
    return worst
