"""Small reverse-mode autodiff over numpy arrays.

A :class:`Tape` records every primitive applied during one forward pass.
:func:`backward` replays it in reverse and *adds* parameter gradients into
the owning :class:`ParamStore`. Only the primitives the shipped networks
need are provided. All arithmetic is float64.
"""

from __future__ import annotations

import io
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, UsageError

LOG_2PI = math.log(2.0 * math.pi)


class ParamStore:
    """Named float64 parameter arrays with paired gradient accumulators."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self.version = 0

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ParameterError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def init_glorot(self, name: str, shape, rng: np.random.Generator) -> np.ndarray:
        # fan_in/fan_out from the trailing two axes; leading axes index heads
        fan_out, fan_in = (shape[-2], shape[-1]) if len(shape) >= 2 else (1, shape[0])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self, names: Iterable[str] | None = None):
        for n in (self.params if names is None else names):
            self.grads[n].fill(0.0)

    def grad_norm(self, names: Iterable[str] | None = None) -> float:
        names = self.params if names is None else names
        return math.sqrt(sum(float(np.sum(self.grads[n] ** 2)) for n in names))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, v in self.params.items():
            out.add(n, v.copy())
        out.version = self.version
        return out

    def assign(self, other: "ParamStore"):
        for n in self.params:
            self.params[n][...] = other.params[n]

    def num_values(self) -> int:
        return sum(v.size for v in self.params.values())


# --------------------------------------------------------------------------
# tape

class Tensor:
    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "param")

    def __init__(self, value, tape, parents=(), backward_fn=None, param=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param
        self.index = tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, index={self.index})"


class Tape:
    """Record of one forward pass. Discard after :func:`backward`."""

    def __init__(self, store: ParamStore | None = None, check_kinks: bool = False):
        self.nodes: list[Tensor] = []
        self.store = store
        self._param_nodes: dict[str, Tensor] = {}
        self.check_kinks = check_kinks
        self.kink_signature: list[bytes] = []

    def _register(self, t: Tensor) -> int:
        self.nodes.append(t)
        return len(self.nodes) - 1

    def const(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=np.float64), self)

    def param(self, name: str) -> Tensor:
        if self.store is None:
            raise UsageError("tape has no parameter store")
        if name not in self._param_nodes:
            self._param_nodes[name] = Tensor(self.store.params[name], self, param=name)
        return self._param_nodes[name]

    def _note_kinks(self, mask: np.ndarray):
        if self.check_kinks:
            self.kink_signature.append(np.packbits(mask.ravel()).tobytes())


def _lift(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise UsageError("operation needs at least one tape tensor")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary(a, b, fwd, grad_a, grad_b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    try:
        out = fwd(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def back(g):
        return (_unbroadcast(grad_a(g, a.value, b.value, out), a.value.shape),
                _unbroadcast(grad_b(g, a.value, b.value, out), b.value.shape))
    return Tensor(out, tape, (a, b), back)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * o / y)


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    pick_a = a.value >= b.value
    tape._note_kinks(pick_a)
    return _binary(a, b, np.maximum,
                   lambda g, x, y, o: g * pick_a,
                   lambda g, x, y, o: g * ~pick_a)


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError("matmul needs arrays with at least two axes")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def back(g):
        return (_unbroadcast(np.matmul(g, _swap(b.value)), a.value.shape),
                _unbroadcast(np.matmul(_swap(a.value), g), b.value.shape))
    return Tensor(out, tape, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    return Tensor(_swap(x.value), x.tape, (x,), lambda g: (_swap(g),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.value.shape
    return Tensor(x.value.reshape(shape), x.tape, (x,), lambda g: (g.reshape(old),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.value >= 0   # derivative at 0 taken from the positive side
    x.tape._note_kinks(pos)
    scale = np.where(pos, 1.0, slope)
    return Tensor(x.value * scale, x.tape, (x,), lambda g: (g * scale,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.value)
    return Tensor(out, x.tape, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), x.tape, (x,), lambda g: (g / x.value,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.value >= lo) & (x.value <= hi)
    x.tape._note_kinks(inside)
    return Tensor(np.clip(x.value, lo, hi), x.tape, (x,), lambda g: (g * inside,))


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.value.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return Tensor(np.asarray(out), x.tape, (x,), back)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def take(x: Tensor, idx, axis: int = 0) -> Tensor:
    """Gather along ``axis`` (indices may repeat)."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.value.shape
    ax = axis % x.value.ndim

    def back(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (full,)
    return Tensor(np.take(x.value, idx, axis=ax), x.tape, (x,), back)


def segment_sum(x: Tensor, segment_ids, num_segments: int, axis: int = 0) -> Tensor:
    """Scatter-add slices of ``x`` along ``axis`` into ``num_segments`` bins."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    ax = axis % x.value.ndim
    shape = list(x.value.shape)
    shape[ax] = num_segments
    out = np.zeros(shape)
    np.add.at(np.moveaxis(out, ax, 0), seg, np.moveaxis(x.value, ax, 0))
    return Tensor(out, x.tape, (x,), lambda g: (np.take(g, seg, axis=ax),))


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    ax = axis % xs[0].value.ndim
    sizes = [x.value.shape[ax] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))
    return Tensor(np.concatenate([x.value for x in xs], axis=ax), tape, tuple(xs), back)


def spectral_norm(w: Tensor) -> Tensor:
    """Largest singular value of each trailing matrix of ``w``.

    Gradient of sigma_max is ``u v^T`` for the top singular pair.
    """
    u, s, vt = np.linalg.svd(w.value)
    top_u = u[..., :, 0]
    top_v = vt[..., 0, :]
    out = s[..., 0]

    def back(g):
        return (np.asarray(g)[..., None, None] * top_u[..., :, None] * top_v[..., None, :],)
    return Tensor(out, w.tape, (w,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# --------------------------------------------------------------------------
# layers and densities

def dense(w, x) -> Tensor:
    """``W @ x`` for a vector ``x``; row-wise ``X @ W^T`` for a matrix."""
    tape = _tape_of(w, x)
    w, x = _lift(tape, w), _lift(tape, x)
    if x.value.ndim == 1:
        if w.value.shape[-1] != x.value.shape[0]:
            raise ShapeError(f"dense: {w.value.shape} vs {x.value.shape}")
        out = matmul(reshape(x, (1, -1)), transpose(w))
        return reshape(out, (w.value.shape[0],))
    if w.value.shape[-1] != x.value.shape[-1]:
        raise ShapeError(f"dense: {w.value.shape} vs {x.value.shape}")
    return matmul(x, transpose(w))


def mean_pool(h: Tensor) -> Tensor:
    if h.value.shape[0] == 0:
        raise DomainError("cannot pool an empty embedding")
    return mean(h, axis=0)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.value
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = z - lse
    p = np.exp(out)
    return Tensor(out, logits.tape, (logits,), lambda g: (g - p * g.sum(),))


def masked_log_softmax(logits, valid_mask) -> Tensor:
    """Log-softmax over valid entries; invalid entries are ``-inf`` and
    receive no gradient."""
    tape = logits.tape if isinstance(logits, Tensor) else Tape()
    logits = _lift(tape, logits)
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.shape != logits.value.shape:
        raise ShapeError("mask shape mismatch")
    if not mask.any():
        raise DomainError("no valid entries")
    z = logits.value
    m = z[mask].max()
    lse = m + np.log(np.exp(z[mask] - m).sum())
    out = np.where(mask, z - lse, -np.inf)
    p = np.where(mask, np.exp(np.where(mask, out, 0.0)), 0.0)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (np.where(mask, g - p * g.sum(), 0.0),)
    return Tensor(out, tape, (logits,), back)


def gaussian_log_density(score, mu, sigma):
    """log N(score; mu, sigma). Works on floats/arrays or tape tensors."""
    if not any(isinstance(v, Tensor) for v in (score, mu, sigma)):
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma <= 0):
            raise ParameterError("sigma must be positive")
        z = (np.asarray(score) - mu) / sigma
        out = -np.log(sigma) - 0.5 * LOG_2PI - 0.5 * z * z
        return float(out) if np.ndim(out) == 0 else out
    sig_val = sigma.value if isinstance(sigma, Tensor) else np.asarray(sigma)
    if np.any(sig_val <= 0):
        raise ParameterError("sigma must be positive")
    tape = _tape_of(score, mu, sigma)
    diff = sub(score, mu)
    z = div(diff, sigma)
    return sub(sub(mul(-0.5, mul(z, z)), log(_lift(tape, sigma))), 0.5 * LOG_2PI)


# --------------------------------------------------------------------------
# reverse pass

def backward(loss: Tensor, tape: Tape | None = None, scale: float = 1.0,
             store: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Accumulate d(scale*loss)/d(param) into the store's gradient arrays.

    Returns the per-parameter gradients contributed by this call.
    """
    tape = loss.tape if tape is None else tape
    if loss.tape is not tape or loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise UsageError("loss is not recorded on this tape")
    if np.ndim(loss.value) != 0:
        raise UsageError("loss must be a scalar")
    store = tape.store if store is None else store
    grads: list[np.ndarray | None] = [None] * (loss.index + 1)
    grads[loss.index] = np.asarray(scale, dtype=np.float64)
    contributed = {}
    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape.nodes[i]
        if node.param is not None:
            contributed[node.param] = g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg
    if store is not None:
        for name, g in contributed.items():
            store.grads[name] += g
    return contributed


# --------------------------------------------------------------------------
# finite differences

@dataclass
class GradCheckReport:
    worst_error: float
    per_param: dict[str, float]
    checked: int
    kink_skipped: int
    tolerance: float
    offenders: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.per_param, key=self.per_param.get) if self.per_param else "-"
        return (f"{status} worst_rel_error={self.worst_error:.3e} ({worst}) "
                f"checked={self.checked} kink_skipped={self.kink_skipped} tol={self.tolerance:g}")


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(forward: Callable[[Tape], Tensor], store: ParamStore,
                      step: float = 1e-5, tolerance: float = 1e-4,
                      names: Iterable[str] | None = None, entries_per_param: int | None = None,
                      rng: np.random.Generator | None = None,
                      corrupt: float = 0.0) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``forward(tape)`` must build the scalar loss on the given tape using
    ``tape.param``. Entries whose perturbation flips a nonsmooth branch
    (LeakyReLU sign, max, clamp) are skipped and counted. ``corrupt`` adds a
    deliberate bias to the analytic gradient, used to self-test the checker.
    """
    names = list(store.names() if names is None else names)
    rng = np.random.default_rng(0) if rng is None else rng

    def evaluate():
        tape = Tape(store, check_kinks=True)
        loss = forward(tape)
        return float(loss.value), tape.kink_signature, tape, loss

    _, base_sig, tape, loss = evaluate()
    saved = {n: store.grads[n].copy() for n in names}
    store.zero_grad(names)
    backward(loss, tape)
    analytic = {n: store.grads[n].copy() + corrupt for n in names}
    for n in names:
        store.grads[n][...] = saved[n]

    per_param: dict[str, float] = {}
    checked = skipped = 0
    for n in names:
        arr = store.params[n]
        flat = arr.reshape(-1)
        if entries_per_param is None or entries_per_param >= flat.size:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=entries_per_param, replace=False)
        worst = 0.0
        for k in idxs:
            orig = flat[k]
            flat[k] = orig + step
            fp, sig_p, _, _ = evaluate()
            flat[k] = orig - step
            fm, sig_m, _, _ = evaluate()
            flat[k] = orig
            if sig_p != base_sig or sig_m != base_sig:
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * step)
            err = relative_error(analytic[n].reshape(-1)[k], numeric)
            worst = max(worst, err)
            checked += 1
        per_param[n] = worst
    worst_all = max(per_param.values(), default=0.0)
    offenders = [n for n, e in per_param.items() if e >= tolerance]
    return GradCheckReport(worst_all, per_param, checked, skipped, tolerance, offenders)


# --------------------------------------------------------------------------
# checkpoints

_MAGIC = "aoi-lab-checkpoint 1"


def save_checkpoint(path_or_file, arrays: "OrderedDict[str, np.ndarray] | dict",
                    meta: dict | None = None):
    """Text manifest of ``(name, shape, offset)`` then raw little-endian float64."""
    lines = [_MAGIC, "meta " + json.dumps(meta or {}, sort_keys=True)]
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise ParameterError(f"parameter name {name!r} contains whitespace")
        a = np.asarray(arr, dtype="<f8")
        shape = ",".join(str(s) for s in a.shape)
        lines.append(f"param {name} {shape or '-'} {offset}")
        blob = a.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    payload = ("\n".join(lines) + "\n").encode() + b"".join(blobs)
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "wb") as fh:
            fh.write(payload)
    else:
        path_or_file.write(payload)


def load_checkpoint(path_or_file) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    else:
        data = path_or_file.read()
    buf = io.BytesIO(data)
    if buf.readline().decode().strip() != _MAGIC:
        raise ParameterError("not a checkpoint file")
    meta_line = buf.readline().decode()
    meta = json.loads(meta_line[len("meta "):])
    entries = []
    while True:
        line = buf.readline().decode().strip()
        if line == "end":
            break
        if not line:
            raise ParameterError("truncated checkpoint manifest")
        _, name, shape, offset = line.split()
        dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
        entries.append((name, dims, int(offset)))
    base = buf.tell()
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, dims, offset in entries:
        count = int(np.prod(dims)) if dims else 1
        start = base + offset
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(dims).copy()
    return out, meta
