"""Dense float64 tensors with reverse-mode automatic differentiation.

Small define-by-run engine: every operation returns a new Tensor holding the
numpy result plus closures that push gradients back to its parents.  The op
set is deliberately tiny (matmul, elementwise arithmetic, relu, softmax,
log1p, sqrt, square, mean, concat, slice, layer_norm) but each op supports
the batched 3-D layouts the sequence model needs, so a full training step
runs as a handful of large BLAS calls instead of thousands of small ones.

Broadcasting is restricted to scalars and trailing row vectors (bias adds,
per-channel scale/shift).  Everything is float64; gradient checks against
central differences are expected to pass at 1e-6, not 1e-2.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = [
    "Tensor", "parameter", "constant", "zero_grads",
    "matmul", "add", "sub", "mul", "relu", "softmax", "log1p", "sqrt",
    "square", "mean", "concat", "slice_last", "layer_norm",
    "windowed_attention", "split_heads", "merge_heads",
    "grad_check", "AdamState", "adam_step",
    "save_tensors", "load_tensors",
]

_EPS_LN = 1e-5  # layer_norm variance floor


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A float64 array plus the bookkeeping needed for backward().

    Leaves are created with parameter() or constant(); interior nodes are
    created by the ops below and hold (parent, vjp) pairs.  grad is only
    populated on nodes reachable from the backward() root that require
    gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjps=()):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    # arithmetic sugar; scalars are treated as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the whole graph.

        self must be scalar-valued (the usual loss root).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.data.shape}")
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
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            g = node.grad
            for p, vjp in zip(node._parents, node._vjps):
                if not p.requires_grad or vjp is None:
                    continue
                contrib = vjp(g)
                if p.grad is None:
                    p.grad = contrib
                else:
                    p.grad = p.grad + contrib


def parameter(data) -> Tensor:
    """Trainable leaf (copies its input)."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    """Non-trainable leaf; shares the input buffer when already float64."""
    return Tensor(data, requires_grad=False)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, vjps) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjps=tuple(vjps))
    return Tensor(data)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# broadcast helpers (scalars and trailing row vectors only)

def _broadcast_ok(sa, sb) -> bool:
    if sa == sb:
        return True
    # row vector over the trailing axis, e.g. (B, n, d) + (d,)
    if len(sb) == 1 and len(sa) >= 1 and sa[-1] == sb[0]:
        return True
    if sb == () or sb == (1,):
        return True
    return False


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to the given operand shape (inverse of the broadcast)."""
    if g.shape == tuple(shape):
        return g
    if shape == () or shape == (1,):
        return np.sum(g).reshape(shape)
    # trailing row vector
    axes = tuple(range(g.ndim - 1))
    return np.sum(g, axis=axes).reshape(shape)


def _binary(a, b, fwd, da, db, name: str) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if not (_broadcast_ok(a.shape, b.shape) or _broadcast_ok(b.shape, a.shape)):
        raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}")
    out = fwd(a.data, b.data)
    vjps = (
        lambda g: _reduce_to(da(g, a.data, b.data), a.shape),
        lambda g: _reduce_to(db(g, a.data, b.data), b.shape),
    )
    return _result(out, (a, b), vjps)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


# ---------------------------------------------------------------------------
# matmul, 2-D or batched 3-D, optionally with the second operand transposed

def matmul(a, b, transpose_b: bool = False) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3):
        raise ValueError(f"matmul: unsupported ranks {ad.shape} and {bd.shape}")
    be = bd.swapaxes(-1, -2) if transpose_b else bd
    ka, kb = ad.shape[-1], be.shape[-2]
    if ka != kb or (ad.ndim == 3 and be.ndim == 3 and ad.shape[0] != be.shape[0]):
        raise ValueError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}"
                         f"{' (transpose_b)' if transpose_b else ''}")
    if ad.ndim == 2 and be.ndim == 3:
        raise ValueError(f"matmul: 2-D by 3-D not supported, {ad.shape} and {bd.shape}")

    if ad.ndim == 3 and bd.ndim == 2:
        # shared weight across the batch: flatten to one large GEMM instead
        # of numpy's per-batch loop (single-core BLAS likes big matrices)
        B, n, k = ad.shape
        a2 = ad.reshape(B * n, k)
        out = (a2 @ be).reshape(B, n, -1)

        def grad_a(g):
            g2 = g.reshape(B * n, -1)
            prod = g2 @ bd if transpose_b else g2 @ bd.T
            return prod.reshape(B, n, k)

        def grad_b(g):
            g2 = g.reshape(B * n, -1)
            return g2.T @ a2 if transpose_b else a2.T @ g2

        return _result(out, (a, b), (grad_a, grad_b))

    out = ad @ be

    def grad_a(g):
        if transpose_b:
            return g @ bd
        return g @ bd.swapaxes(-1, -2)

    def grad_b(g):
        if transpose_b:
            return g.swapaxes(-1, -2) @ ad
        return ad.swapaxes(-1, -2) @ g

    return _result(out, (a, b), (grad_a, grad_b))


def relu(x) -> Tensor:
    x = _coerce(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0
    return _result(out, (x,), (lambda g: g * mask,))


def softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, optionally with an additive mask.

    The mask is a plain array (no gradient) broadcast onto the scores;
    banned positions carry a large negative value rather than -inf so the
    arithmetic stays finite even for all-banned rows.
    """
    x = _coerce(x)
    z = x.data + mask if mask is not None else x.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_x(g):
        return y * (g - np.sum(g * y, axis=-1, keepdims=True))

    return _result(y, (x,), (grad_x,))


def log1p(x) -> Tensor:
    x = _coerce(x)
    out = np.log1p(x.data)
    return _result(out, (x,), (lambda g: g / (1.0 + x.data),))


def sqrt(x) -> Tensor:
    x = _coerce(x)
    out = np.sqrt(x.data)
    return _result(out, (x,), (lambda g: g * 0.5 / out,))


def square(x) -> Tensor:
    x = _coerce(x)
    return _result(x.data * x.data, (x,), (lambda g: g * 2.0 * x.data,))


def mean(x, axes=None) -> Tensor:
    """Mean over the given axes (all axes when None), dimensions dropped."""
    x = _coerce(x)
    if axes is None:
        axes = tuple(range(x.data.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    axes = tuple(a % x.data.ndim for a in axes)
    out = np.mean(x.data, axis=axes)
    n = 1
    for a in axes:
        n *= x.data.shape[a]
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.data.shape))

    def grad_x(g):
        return np.broadcast_to(g.reshape(kept), x.data.shape) / n

    return _result(out, (x,), (grad_x,))


def concat(tensors) -> Tensor:
    """Concatenate along the last axis."""
    ts = [_coerce(t) for t in tensors]
    lead = ts[0].data.shape[:-1]
    for t in ts[1:]:
        if t.data.shape[:-1] != lead:
            raise ValueError(f"concat: leading shapes differ, {ts[0].shape} and {t.shape}")
    out = np.concatenate([t.data for t in ts], axis=-1)
    vjps = []
    off = 0
    for t in ts:
        w = t.data.shape[-1]
        lo = off
        vjps.append(lambda g, lo=lo, w=w: g[..., lo:lo + w])
        off += w
    return _result(out, tuple(ts), tuple(vjps))


def slice_last(x, start: int, stop: int) -> Tensor:
    """x[..., start:stop] with a zero-padding backward."""
    x = _coerce(x)
    w = x.data.shape[-1]
    if not (0 <= start < stop <= w):
        raise ValueError(f"slice_last: [{start}:{stop}] out of range for width {w}")
    out = x.data[..., start:stop]

    def grad_x(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return full

    return _result(out, (x,), (grad_x,))


def split_heads(x, heads: int) -> Tensor:
    """[B, T, heads*w] -> [B*heads, T, w]: fold heads into the batch axis.

    Lets one windowed_attention call cover every head of a layer at once.
    """
    x = _coerce(x)
    if x.data.ndim != 3 or x.data.shape[2] % heads != 0:
        raise ValueError(f"split_heads: cannot split {x.shape} into {heads} heads")
    B, T, hw = x.data.shape
    w = hw // heads
    out = x.data.reshape(B, T, heads, w).transpose(0, 2, 1, 3).reshape(B * heads, T, w)

    def grad_x(g):
        return g.reshape(B, heads, T, w).transpose(0, 2, 1, 3).reshape(B, T, hw)

    return _result(out, (x,), (grad_x,))


def merge_heads(x, heads: int) -> Tensor:
    """[B*heads, T, w] -> [B, T, heads*w]: inverse of split_heads."""
    x = _coerce(x)
    if x.data.ndim != 3 or x.data.shape[0] % heads != 0:
        raise ValueError(f"merge_heads: cannot regroup {x.shape} from {heads} heads")
    Bh, T, w = x.data.shape
    B = Bh // heads
    out = x.data.reshape(B, heads, T, w).transpose(0, 2, 1, 3).reshape(B, T, heads * w)

    def grad_x(g):
        return g.reshape(B, T, heads, w).transpose(0, 2, 1, 3).reshape(Bh, T, w)

    return _result(out, (x,), (grad_x,))


def windowed_attention(q, k, v, delta: int, return_weights: bool = False):
    """Scaled-window attention: position t attends to t-delta .. t+delta.

    q, k are [B, T, r]; v is [B, T, c]; the result is [B, T, c].  Scores are
    raw dot products (scale q beforehand if needed); the softmax runs over
    the 2*delta+1 window slots and is truncated (renormalized) at the
    sequence boundaries.  Equivalent to dense attention under a band mask
    but costs O(T * delta) instead of O(T^2), and positions outside the
    band are unreachable by construction.

    With return_weights=True also returns the [B, T, 2*delta+1] weight
    array (slot w holds the weight on offset w - delta), for diagnostics.
    """
    q, k, v = _coerce(q), _coerce(k), _coerce(v)
    qd, kd, vd = q.data, k.data, v.data
    if qd.ndim != 3 or kd.ndim != 3 or vd.ndim != 3:
        raise ValueError(f"windowed_attention: need 3-D operands, got "
                         f"{qd.shape}, {kd.shape}, {vd.shape}")
    if qd.shape != kd.shape or qd.shape[:2] != vd.shape[:2]:
        raise ValueError(f"windowed_attention: incompatible shapes "
                         f"{qd.shape}, {kd.shape}, {vd.shape}")
    if delta < 1:
        raise ValueError(f"windowed_attention: delta must be >= 1, got {delta}")
    B, T, r = qd.shape
    c = vd.shape[2]
    W = 2 * delta + 1

    def fwd_window(x):
        """[B, T+2*delta, w] zero-padded -> strided view [B, T, W, w]
        where view[b, t, s] = x_padded[b, t+s] = x[b, t+s-delta]."""
        s0, s1, s2 = x.strides
        return np.lib.stride_tricks.as_strided(
            x, (B, T, W, x.shape[2]), (s0, s1, s1, s2), writeable=False)

    def rev_window(x):
        """view[b, t, s] = x_padded[b, t+s, W-1-s]: for target position t,
        slot s gathers the (query row, slot) pairs that referenced t."""
        s0, s1, s2 = x.strides
        return np.lib.stride_tricks.as_strided(
            x[:, :, W - 1:], (B, T, W, 1), (s0, s1, s1 - s2, s2), writeable=False)

    def pad(x):
        out = np.zeros((B, T + 2 * delta, x.shape[2]))
        out[:, delta:delta + T] = x
        return out

    # slots whose absolute position falls outside the sequence are banned
    pos = np.arange(T)[:, None] + np.arange(W)[None, :] - delta
    boundary = np.where((pos >= 0) & (pos < T), 0.0, -1e30)

    k_pad, v_pad = pad(kd), pad(vd)
    scores = (fwd_window(k_pad) @ qd[:, :, :, None])[..., 0] + boundary
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    pi = e / e.sum(axis=-1, keepdims=True)
    out = (pi[:, :, None, :] @ fwd_window(v_pad))[:, :, 0, :]

    def grad_all(g):
        dpi = (fwd_window(v_pad) @ g[:, :, :, None])[..., 0]
        ds = pi * (dpi - np.sum(pi * dpi, axis=-1, keepdims=True))
        dq = (ds[:, :, None, :] @ fwd_window(k_pad))[:, :, 0, :]
        # scatter-free gathers: pad the per-slot factors alongside q/g and
        # read them back through the reversed window
        ds_pad, g_pad, q_pad = pad(ds), pad(g), pad(qd)
        pi_pad = pad(pi)
        dk = (rev_window(ds_pad).swapaxes(2, 3) @ fwd_window(q_pad))[:, :, 0, :]
        dv = (rev_window(pi_pad).swapaxes(2, 3) @ fwd_window(g_pad))[:, :, 0, :]
        return dq, dk, dv

    # the three vjps share one sweep; backward hands all three the same
    # upstream array, so cache the sweep keyed by object identity
    cache = {"g": None, "val": None}

    def part(i):
        def vjp(g):
            if cache["g"] is not g:
                cache["g"] = g
                cache["val"] = grad_all(g)
            return cache["val"][i]
        return vjp

    result = _result(out, (q, k, v), (part(0), part(1), part(2)))
    if return_weights:
        return result, pi
    return result


def layer_norm(x, gamma, beta) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    d = x.data.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError(f"layer_norm: scale/shift {gamma.shape}/{beta.shape} "
                         f"do not match feature width {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _EPS_LN)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def grad_x(g):
        gg = g * gamma.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        return inv * (gg - m1 - xhat * m2)

    def grad_gamma(g):
        return np.sum(g * xhat, axis=tuple(range(g.ndim - 1)))

    def grad_beta(g):
        return np.sum(g, axis=tuple(range(g.ndim - 1)))

    return _result(out, (x, gamma, beta), (grad_x, grad_gamma, grad_beta))


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f is a zero-argument callable rebuilding the scalar graph from params.
    Parameters with requires_grad off are excluded.  The metric per element
    is |a - n| / max(1e-8, |a| + |n|).
    """
    if isinstance(params, Tensor):
        params = [params]
    checked = [p for p in params if p.requires_grad]
    root = f()
    if not np.isfinite(root.data).all():
        raise ValueError("grad_check: objective is not finite")
    zero_grads(checked)
    root.backward()
    worst = 0.0
    for p in checked:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        for idx in np.ndindex(p.data.shape):
            keep = p.data[idx]
            p.data[idx] = keep + eps
            up = f().item()
            p.data[idx] = keep - eps
            dn = f().item()
            p.data[idx] = keep
            if not (np.isfinite(up) and np.isfinite(dn)):
                raise ValueError("grad_check: objective is not finite")
            numeric = (up - dn) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    """Per-parameter first/second moments plus the step counter."""

    def __init__(self, params, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.skipped = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on params.

    A non-finite gradient anywhere skips the whole step (moments untouched)
    and increments state.skipped, so one bad batch cannot poison the moments.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError(f"adam_step: {len(params)} params, {len(grads)} grads, "
                         f"state holds {len(state.m)}")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} "
                             f"does not match parameter {p.data.shape}")
    if not all(np.isfinite(g).all() for g in grads):
        state.skipped += 1
        return
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# named-tensor container: magic, uint32 header length, JSON index, raw
# little-endian float64 payload

_MAGIC = b"NTC1"


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    index = []
    payload = bytearray()
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": len(payload)})
        payload += a.tobytes()
    header = json.dumps({"meta": meta or {}, "tensors": index}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(bytes(payload))


def load_tensors(path):
    """Returns (ordered name->array dict, meta dict)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a tensor container (magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    out = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        off = entry["offset"]
        end = off + 8 * n
        if end > len(payload):
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(
            payload[off:end], dtype="<f8").reshape(shape).astype(np.float64)
    return out, header["meta"]
