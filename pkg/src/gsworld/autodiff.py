"""Minimal reverse-mode differentiation on numpy float64 arrays.

A Tape records one node per eager op; backward() walks the node list in
reverse, accumulating gradients additively. There is no broadcasting beyond
scalar-with-tensor; shaped interactions go through explicit ops so every
adjoint stays auditable. Custom differentiable ops (the splat renderer's
hand-derived adjoint) register through :func:`register_custom`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import GsWorldError, ShapeError


class AutodiffUsageError(GsWorldError):
    """Raised for mis-use of the tape (e.g. backward on a detached tensor)."""


_ACTIVE_TAPE = None


class Tensor:
    """A float64 array with optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim > 0 and not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Node:
    __slots__ = ("parents", "outputs", "backward_fn")

    def __init__(self, parents, outputs, backward_fn):
        self.parents = parents
        self.outputs = outputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; parents always precede their consumers."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise AutodiffUsageError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, parents, outputs, backward_fn):
        node_id = len(self.nodes)
        self.nodes.append(_Node(tuple(parents), tuple(outputs), backward_fn))
        for out in outputs:
            out.tape = self
            out.node_id = node_id


def active_tape():
    return _ACTIVE_TAPE


def _make_out(data, parents):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    return out


def _record(parents, out, backward_fn):
    """Attach a single-output node to the active tape when gradients are needed."""
    tape = _ACTIVE_TAPE
    if tape is not None and out.requires_grad:
        tape._record(parents, (out,), backward_fn)
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into .grad of every reachable parameter."""
    if loss.data.shape != ():
        raise AutodiffUsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        if loss.requires_grad:
            # a bare leaf: gradient of itself is 1
            g = np.ones(())
            loss.grad = g if loss.grad is None else loss.grad + g
            return
        raise AutodiffUsageError("backward on a detached tensor (no tape recorded it)")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        ups = [grads.pop(id(o), None) for o in node.outputs]
        if all(u is None for u in ups):
            continue
        ups = [np.zeros(o.data.shape) if u is None else u for u, o in zip(ups, node.outputs)]
        pgrads = node.backward_fn(*ups)
        if len(pgrads) != len(node.parents):
            raise AutodiffUsageError("backward closure returned wrong number of gradients")
        for p, g in zip(node.parents, pgrads):
            if g is None or not p.requires_grad:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"adjoint produced gradient of shape {g.shape} "
                                 f"for input of shape {p.data.shape}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if p.node_id is None:
                leaves[key] = p
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# elementwise and shape ops

def _binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.data.shape == b.data.shape:
        return
    if a.data.shape == () or b.data.shape == ():
        return
    raise ShapeError(f"{opname}: incompatible shapes {a.data.shape} and {b.data.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if shape == () and g.shape != ():
        return np.sum(g)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")
    out = _make_out(a.data + b.data, (a, b))
    return _record((a, b), out,
                   lambda g: (_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")
    out = _make_out(a.data - b.data, (a, b))
    return _record((a, b), out,
                   lambda g: (_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    out = _make_out(a.data * b.data, (a, b))
    return _record((a, b), out,
                   lambda g: (_reduce_to(g * b.data, a.data.shape),
                              _reduce_to(g * a.data, b.data.shape)))


def neg(a: Tensor) -> Tensor:
    out = _make_out(-a.data, (a,))
    return _record((a,), out, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _make_out(a.data * c, (a,))
    return _record((a,), out, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    bmat = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bmat.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ "
                         f"{b.data.shape}{' (transposed)' if transpose_b else ''}")
    out = _make_out(a.data @ bmat, (a, b))

    def bwd(g):
        ga = g @ bmat.T
        gb = g.T @ a.data if transpose_b else a.data.T @ g
        return ga, gb

    return _record((a, b), out, bwd)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x (M, N) plus a row vector v (N,) added to every row."""
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_rowvec: shapes {x.data.shape} and {v.data.shape}")
    out = _make_out(x.data + v.data[None, :], (x, v))
    return _record((x, v), out, lambda g: (g, g.sum(axis=0)))


def relu(a: Tensor) -> Tensor:
    out = _make_out(np.maximum(a.data, 0.0), (a,))
    mask = a.data > 0.0
    return _record((a,), out, lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # saturates cleanly for large |x|
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = _make_out(y, (a,))
    return _record((a,), out, lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _make_out(y, (a,))
    return _record((a,), out, lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.data)
    out = _make_out(y, (a,))
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _record((a,), out, lambda g: (g * sig,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = _make_out(y, (a,))
    return _record((a,), out, lambda g: (g * y,))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _make_out(y, (a,))

    def bwd(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record((a,), out, bwd)


def logsumexp(a: Tensor) -> Tensor:
    """Log-sum-exp over the last axis; output drops that axis."""
    m = a.data.max(axis=-1, keepdims=True)
    s = np.exp(a.data - m).sum(axis=-1, keepdims=True)
    y = (m + np.log(s)).squeeze(-1)
    out = _make_out(y, (a,))
    soft = np.exp(a.data - m) / s
    return _record((a,), out, lambda g: (np.expand_dims(g, -1) * soft,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = x.data.shape[-1]
    if gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} "
                         f"do not match feature width {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make_out(xhat * gamma.data + beta.data, (x, gamma, beta))

    def bwd(g):
        gxhat = g * gamma.data
        gsum = gxhat.sum(axis=-1, keepdims=True)
        gdot = (gxhat * xhat).sum(axis=-1, keepdims=True)
        gx = inv * (gxhat - gsum / n - xhat * gdot / n)
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _record((x, gamma, beta), out, bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    out = _make_out(np.concatenate(datas, axis=axis), tuple(tensors))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tuple(tensors), out, bwd)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _make_out(x.data[idx].copy(), (x,))

    def bwd(g):
        gx = np.zeros(x.data.shape)
        gx[idx] = g
        return (gx,)

    return _record((x,), out, bwd)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; adjoint scatter-adds back."""
    indices = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {x.data.shape}")
    out = _make_out(x.data[indices], (x,))

    def bwd(g):
        gx = np.zeros(x.data.shape)
        np.add.at(gx, indices, g)
        return (gx,)

    return _record((x,), out, bwd)


def gather_elements(x: Tensor, col_indices: np.ndarray) -> Tensor:
    """Per-row element pick from a 2-D tensor: out[i] = x[i, col[i]]."""
    col = np.asarray(col_indices, dtype=np.int64)
    if x.data.ndim != 2 or col.shape != (x.data.shape[0],):
        raise ShapeError(f"gather_elements: tensor {x.data.shape}, indices {col.shape}")
    rows = np.arange(x.data.shape[0])
    out = _make_out(x.data[rows, col], (x,))

    def bwd(g):
        gx = np.zeros(x.data.shape)
        gx[rows, col] = g
        return (gx,)

    return _record((x,), out, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = _make_out(x.data.reshape(shape), (x,))
    return _record((x,), out, lambda g: (g.reshape(x.data.shape),))


def tsum(x: Tensor) -> Tensor:
    out = _make_out(np.sum(x.data), (x,))
    return _record((x,), out, lambda g: (np.full(x.data.shape, float(g)),))


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = _make_out(np.mean(x.data), (x,))
    return _record((x,), out, lambda g: (np.full(x.data.shape, float(g) / n),))


def sum_sq(x: Tensor) -> Tensor:
    out = _make_out(np.sum(x.data * x.data), (x,))
    return _record((x,), out, lambda g: (2.0 * float(g) * x.data,))


def normalize_rows(x: Tensor, eps: float = 0.0) -> Tensor:
    """Scale each row of a 2-D tensor to unit L2 norm."""
    norms = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True) + eps)
    y = x.data / norms
    out = _make_out(y, (x,))

    def bwd(g):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return ((g - y * dot) / norms,)

    return _record((x,), out, bwd)


# ---------------------------------------------------------------------------
# structured ops for the volumetric encoder

_CONV_OFFSETS = [(dz, dy, dx) for dz in range(3) for dy in range(3) for dx in range(3)]


def _im2col3(xp: np.ndarray, g: int, cin: int) -> np.ndarray:
    cols = np.empty((g * g * g, 27 * cin))
    for k, (dz, dy, dx) in enumerate(_CONV_OFFSETS):
        block = xp[dz:dz + g, dy:dy + g, dx:dx + g, :].reshape(g * g * g, cin)
        cols[:, k * cin:(k + 1) * cin] = block
    return cols


def conv3d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Dense 3x3x3 convolution with zero padding over a (G, G, G, Cin) grid.

    Weights are (27 * Cin, Cout) in kernel-offset-major order; bias is (Cout,).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv3d input must be (G, G, G, C), got {x.data.shape}")
    g, cin = x.data.shape[0], x.data.shape[3]
    if x.data.shape[1] != g or x.data.shape[2] != g:
        raise ShapeError(f"conv3d expects a cubic grid, got {x.data.shape}")
    if w.data.shape[0] != 27 * cin:
        raise ShapeError(f"conv3d weight rows {w.data.shape[0]} != 27*Cin ({27 * cin})")
    cout = w.data.shape[1]
    if b.data.shape != (cout,):
        raise ShapeError(f"conv3d bias shape {b.data.shape} != ({cout},)")
    xp = np.zeros((g + 2, g + 2, g + 2, cin))
    xp[1:-1, 1:-1, 1:-1, :] = x.data
    cols = _im2col3(xp, g, cin)
    y = (cols @ w.data + b.data[None, :]).reshape(g, g, g, cout)
    out = _make_out(y, (x, w, b))

    x_needs = x.requires_grad

    def bwd(gy):
        gflat = gy.reshape(g * g * g, cout)
        gw = cols.T @ gflat
        gb = gflat.sum(axis=0)
        gx = None
        if x_needs:
            gcols = gflat @ w.data.T
            gxp = np.zeros((g + 2, g + 2, g + 2, cin))
            for k, (dz, dy, dx) in enumerate(_CONV_OFFSETS):
                gxp[dz:dz + g, dy:dy + g, dx:dx + g, :] += \
                    gcols[:, k * cin:(k + 1) * cin].reshape(g, g, g, cin)
            gx = gxp[1:-1, 1:-1, 1:-1, :]
        return gx, gw, gb

    return _record((x, w, b), out, bwd)


def trilinear(grid: Tensor, positions: Tensor) -> Tensor:
    """Sample a (G, G, G, F) grid at (N, 3) continuous grid coordinates.

    Coordinates are clamped to the valid interpolation range. Differentiable
    in both the grid values and the positions.
    """
    if grid.data.ndim != 4 or positions.data.ndim != 2 or positions.data.shape[1] != 3:
        raise ShapeError(f"trilinear: grid {grid.data.shape}, positions {positions.data.shape}")
    if not np.all(np.isfinite(positions.data)):
        raise ValueError("non-finite sample positions in trilinear interpolation")
    g = grid.data.shape[0]
    f = grid.data.shape[3]
    pos = np.clip(positions.data, 0.0, g - 1.0 - 1e-9)
    clamped = (positions.data <= 0.0) | (positions.data >= g - 1.0 - 1e-9)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i1 = i0 + 1
    flat = grid.data.reshape(g * g * g, f)

    def cell(ix, iy, iz):
        return flat[(ix * g + iy) * g + iz]

    corners = {}
    for az in (0, 1):
        for ay in (0, 1):
            for ax in (0, 1):
                ix = i1[:, 0] if ax else i0[:, 0]
                iy = i1[:, 1] if ay else i0[:, 1]
                iz = i1[:, 2] if az else i0[:, 2]
                corners[(ax, ay, az)] = ((ix * g + iy) * g + iz, cell(ix, iy, iz))

    fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]
    wx = {0: 1.0 - fx, 1: fx}
    wy = {0: 1.0 - fy, 1: fy}
    wz = {0: 1.0 - fz, 1: fz}
    y = np.zeros((pos.shape[0], f))
    for (ax, ay, az), (_, vals) in corners.items():
        y += wx[ax] * wy[ay] * wz[az] * vals
    out = _make_out(y, (grid, positions))

    def bwd(gy):
        ggrid = np.zeros((g * g * g, f))
        gpos = np.zeros(pos.shape)
        for (ax, ay, az), (idx, vals) in corners.items():
            w = wx[ax] * wy[ay] * wz[az]
            np.add.at(ggrid, idx, gy * w)
            vdot = np.sum(gy * vals, axis=1)
            sx = (1.0 if ax else -1.0) * (wy[ay] * wz[az])[:, 0]
            sy = (1.0 if ay else -1.0) * (wx[ax] * wz[az])[:, 0]
            sz = (1.0 if az else -1.0) * (wx[ax] * wy[ay])[:, 0]
            gpos[:, 0] += vdot * sx
            gpos[:, 1] += vdot * sy
            gpos[:, 2] += vdot * sz
        gpos[clamped] = 0.0
        return ggrid.reshape(grid.data.shape), gpos

    return _record((grid, positions), out, bwd)


# ---------------------------------------------------------------------------
# custom differentiable operations

def register_custom(forward, backward_fn):
    """Wrap a (forward, adjoint) pair as a differentiable multi-output op.

    `forward(*input_arrays, **static)` returns an array or tuple of arrays.
    `backward_fn(input_arrays, output_arrays, upstream_arrays, **static)`
    returns one gradient array (or None) per input. Gradient shapes are
    validated on the first backward call.
    """

    def apply(*inputs, **static):
        datas = tuple(t.data for t in inputs)
        result = forward(*datas, **static)
        multi = isinstance(result, tuple)
        out_arrays = result if multi else (result,)
        needs = any(t.requires_grad for t in inputs)
        outs = tuple(Tensor(a, requires_grad=needs) for a in out_arrays)
        tape = _ACTIVE_TAPE
        if tape is not None and needs:
            def bwd(*ups):
                gs = backward_fn(datas, out_arrays, ups, **static)
                gs = tuple(gs)
                for g, t in zip(gs, inputs):
                    if g is not None and g.shape != t.data.shape:
                        raise ShapeError(f"custom adjoint returned shape {g.shape} "
                                         f"for input of shape {t.data.shape}")
                return gs
            tape._record(inputs, outs, bwd)
        return outs if multi else outs[0]

    return apply


# ---------------------------------------------------------------------------
# named-tensor archive (checkpoint format)

ARCHIVE_MAGIC = b"NTA1"


def save_archive(path, tensors: dict, meta: dict | None = None):
    """Named-tensor archive: text metadata, (name, shape) header, float64 payloads."""
    meta = meta or {}
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        meta_blob = "\n".join(f"{k} = {v}" for k, v in meta.items()).encode()
        f.write(struct.pack("<I", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(tensors)))
        names = list(tensors)
        for name in names:
            arr = np.asarray(tensors[name].data if isinstance(tensors[name], Tensor)
                             else tensors[name], dtype=np.float64)
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
        for name in names:
            arr = np.asarray(tensors[name].data if isinstance(tensors[name], Tensor)
                             else tensors[name], dtype=np.float64)
            f.write(arr.astype("<f8").tobytes())


def load_archive(path):
    """Returns (tensors: dict[str, np.ndarray], meta: dict[str, str])."""
    with open(path, "rb") as f:
        if f.read(4) != ARCHIVE_MAGIC:
            raise ValueError(f"not a tensor archive: {path}")
        (mlen,) = struct.unpack("<I", f.read(4))
        meta = {}
        if mlen:
            for line in f.read(mlen).decode().splitlines():
                k, v = line.split(" = ", 1)
                meta[k] = v
        (count,) = struct.unpack("<I", f.read(4))
        headers = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            headers.append((name, shape))
        tensors = {}
        for name, shape in headers:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(n * 8), dtype="<f8").reshape(shape)
            tensors[name] = arr.astype(np.float64)
    return tensors, meta
