"""Graph attention layer with symmetric or row-softmax coefficients.

One layer maps node embeddings ``H`` (n x d) and raw features ``x`` to

    out_i = sum_{j in N(i) + i} alpha_ij (W1 h_j + W3 x_j) / ||W1||

with logits ``phi_ij = a . LeakyReLU(W1 (h_i + h_j) + W2 e_ij)`` and
``||W1||`` the spectral norm. In ``sym`` mode ``alpha_ij = exp(phi_ij) /
max(D_i, D_j)`` where ``D_i`` is the row sum of exponentiated logits, which
makes the coefficients symmetric with row sums at most one. Several heads
are averaged.

Everything is evaluated on an :class:`aoi_lab.nn.Tape`, so the same code
serves inference, training and the fuzz checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConvergenceError, ParameterError, ShapeError
from .graph import NetworkGraph

MODES = ("sym", "softmax")
NORM_FLOOR = 1e-12   # keeps all-zero weights at output 0 rather than 0/0


@dataclass
class EdgeIndex:
    """Directed pair list (with self-loops) of an undirected graph.

    Pairs are ordered by (i, j) so the layer output does not depend on the
    order in which edges were inserted.
    """
    n: int
    I: np.ndarray
    J: np.ndarray

    @classmethod
    def from_graph(cls, g: NetworkGraph) -> "EdgeIndex":
        I, J = [], []
        for i in range(g.node_count):
            for j in sorted([i] + g.neighbors(i)):
                I.append(i)
                J.append(j)
        return cls(g.node_count, np.array(I, dtype=np.intp), np.array(J, dtype=np.intp))

    @classmethod
    def self_loops(cls, n: int) -> "EdgeIndex":
        r = np.arange(n, dtype=np.intp)
        return cls(n, r, r.copy())

    def __len__(self):
        return len(self.I)


def edge_features(g: NetworkGraph, index: EdgeIndex, extra=None) -> np.ndarray:
    """Per-pair features: the link cost, plus optional extra columns from
    ``extra(u, v)``. Self-loop rows are zero."""
    width = 1 + (len(extra(0, 0)) if extra is not None else 0)
    out = np.zeros((len(index), width))
    for k, (i, j) in enumerate(zip(index.I, index.J)):
        if i == j:
            continue
        out[k, 0] = g.cost(i, j)
        if extra is not None:
            out[k, 1:] = extra(i, j)
    return out


@dataclass
class GatParams:
    """Weights of one layer. Arrays may carry a leading head axis."""
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    a: np.ndarray
    leaky_slope: float = 0.2

    def __post_init__(self):
        for name in ("W1", "W2", "W3", "a"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} has non-finite entries")
            setattr(self, name, arr)
        if np.linalg.norm(self.W1) == 0:
            raise ParameterError("W1 must be nonzero")

    @property
    def dim(self) -> int:
        return self.W1.shape[-1]

    @classmethod
    def random(cls, d: int, d_e: int, d_x: int, rng: np.random.Generator, heads: int = 1,
               scale: float = 1.0, leaky_slope: float = 0.2) -> "GatParams":
        lead = (heads,) if heads > 1 else ()
        draw = lambda *shape: scale * rng.standard_normal(lead + shape) / np.sqrt(shape[-1])
        return cls(draw(d, d), draw(d, d_e), draw(d, d_x), draw(d), leaky_slope)


def _as_heads(t: nn.Tensor, ndim: int) -> nn.Tensor:
    return t if t.value.ndim == ndim else nn.reshape(t, (1,) + t.value.shape)


def attention_scores(W1, W2, a, H, E, index: EdgeIndex, slope=0.2):
    """Logits ``phi`` (heads x pairs) and the projected embeddings ``H W1^T``."""
    W1, W2, a = _as_heads(W1, 3), _as_heads(W2, 3), _as_heads(a, 2)
    P = nn.matmul(nn.reshape(H, (1,) + H.value.shape), nn.transpose(W1))
    Q = nn.matmul(nn.reshape(E, (1,) + E.value.shape), nn.transpose(W2))
    z = nn.take(P, index.I, axis=1) + nn.take(P, index.J, axis=1) + Q
    phi = nn.sum_(nn.leaky_relu(z, slope) * nn.reshape(a, (a.value.shape[0], 1, -1)), axis=-1)
    return phi, P


def coefficients(phi: nn.Tensor, index: EdgeIndex, mode: str = "sym") -> nn.Tensor:
    """Normalised attention coefficients (heads x pairs), computed in the log
    domain with a per-row shift so large logits cannot underflow a row."""
    if mode not in MODES:
        raise ParameterError(f"unknown attention mode {mode!r}")
    k = phi.value.shape[0]
    rowmax = np.full((k, index.n), -np.inf)
    np.maximum.at(rowmax.T, index.I, phi.value.T)
    shift = rowmax[:, index.I]
    ex = nn.exp(phi - shift)
    S = nn.segment_sum(ex, index.I, index.n, axis=1)
    logD = nn.log(S) + rowmax
    logD_i = nn.take(logD, index.I, axis=1)
    if mode == "softmax":
        return nn.exp(phi - logD_i)
    logD_j = nn.take(logD, index.J, axis=1)
    return nn.exp(phi - nn.maximum(logD_i, logD_j))


def layer(W1, W2, W3, a, H, x, E, index: EdgeIndex, mode="sym", slope=0.2,
          dropout: float = 0.0, rng=None, attend: bool = True) -> nn.Tensor:
    """One multi-head layer on a tape. With ``attend=False`` neighbours are
    ignored (each node keeps only its own term, coefficient one)."""
    W1, W3 = _as_heads(W1, 3), _as_heads(W3, 3)
    d = W1.value.shape[-1]
    if H.value.shape[-1] != d or x.value.shape[-1] != W3.value.shape[-1]:
        raise ShapeError(f"layer input widths {H.value.shape} / {x.value.shape} do not match weights")
    if attend and E.value.shape[-1] != _as_heads(W2, 3).value.shape[-1]:
        raise ShapeError("edge feature width does not match W2")
    H_in = nn.dropout(H, dropout, rng)
    k = W1.value.shape[0]
    if attend:
        phi, P = attention_scores(W1, W2, a, H_in, E, index, slope)
        alpha = coefficients(phi, index, mode)
    else:
        P = nn.matmul(nn.reshape(H_in, (1,) + H_in.value.shape), nn.transpose(W1))
        alpha = H.tape.const(np.ones((k, len(index))))
    M = P + nn.matmul(nn.reshape(x, (1,) + x.value.shape), nn.transpose(W3))
    msg = nn.take(M, index.J, axis=1) * nn.reshape(alpha, alpha.value.shape + (1,))
    agg = nn.segment_sum(msg, index.I, index.n, axis=1)
    norm = nn.maximum(nn.spectral_norm(W1), NORM_FLOOR)
    out = agg / nn.reshape(norm, (k, 1, 1))
    return nn.mean(out, axis=0)


# --------------------------------------------------------------------------
# numpy front end

def _consts(params: GatParams, tape):
    W1 = tape.const(params.W1)
    W2 = tape.const(params.W2)
    W3 = tape.const(params.W3)
    a = tape.const(params.a)
    return W1, W2, W3, a


def _index_of(g) -> EdgeIndex:
    return g if isinstance(g, EdgeIndex) else EdgeIndex.from_graph(g)


def attention_logit(params: GatParams, h_i, h_j, e_ij) -> float:
    """Single-head logit for one pair."""
    h_i, h_j, e_ij = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (h_i, h_j, e_ij))
    W1 = params.W1 if params.W1.ndim == 2 else params.W1[0]
    W2 = params.W2 if params.W2.ndim == 2 else params.W2[0]
    a = params.a if params.a.ndim == 1 else params.a[0]
    if h_i.shape != h_j.shape or h_i.shape[0] != W1.shape[1] or e_ij.shape[0] != W2.shape[1]:
        raise ShapeError("attention_logit: dimension mismatch")
    z = W1 @ (h_i + h_j) + W2 @ e_ij
    return float(a @ np.where(z >= 0, z, params.leaky_slope * z))


def attention_coeffs(params: GatParams, H, E, g, mode: str = "sym") -> np.ndarray:
    """Coefficients per pair of :class:`EdgeIndex` order (heads x pairs, or
    pairs for a single head)."""
    index = _index_of(g)
    tape = nn.Tape()
    W1, W2, _, a = _consts(params, tape)
    phi, _ = attention_scores(W1, W2, a, tape.const(H), tape.const(E), index, params.leaky_slope)
    alpha = coefficients(phi, index, mode).value
    return alpha[0] if params.W1.ndim == 2 else alpha


def coeff_matrix(alpha: np.ndarray, index: EdgeIndex) -> np.ndarray:
    """Dense n x n view of single-head coefficients."""
    m = np.zeros((index.n, index.n))
    m[index.I, index.J] = alpha
    return m


def gat_layer(params: GatParams, H, x, E, g, mode: str = "sym") -> np.ndarray:
    index = _index_of(g)
    H = np.asarray(H, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if H.ndim != 2 or x.ndim != 2 or H.shape[0] != index.n or x.shape[0] != index.n:
        raise ShapeError("H and x must be (n, width) matrices")
    tape = nn.Tape()
    W1, W2, W3, a = _consts(params, tape)
    out = layer(W1, W2, W3, a, tape.const(H), tape.const(x), tape.const(E), index,
                mode, params.leaky_slope)
    return out.value


def embedding_distance(H, H2) -> float:
    """Norm of the summed per-node difference (a pseudometric: differences
    of opposite sign cancel)."""
    H, H2 = np.asarray(H, dtype=np.float64), np.asarray(H2, dtype=np.float64)
    if H.shape != H2.shape:
        raise ShapeError(f"shape mismatch {H.shape} vs {H2.shape}")
    return float(np.linalg.norm(np.sum(H - H2, axis=0)))


@dataclass
class ContractionReport:
    trials: int
    max_ratio: float
    violations: int
    worst_excess: float
    counterexample: dict | None = None
    ratios: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def contraction_check(params: GatParams, g, x, E, trials: int, rng: np.random.Generator,
                      tol: float = 1e-9, scale: float = 1.0) -> ContractionReport:
    """Fuzz ``d(f(H), f(H')) <= d(H, H') + tol`` with Gaussian H, H'."""
    index = _index_of(g)
    d = params.dim
    worst_ratio, worst_excess, bad, example = 0.0, -np.inf, 0, None
    ratios = []
    for _ in range(trials):
        H = scale * rng.standard_normal((index.n, d))
        H2 = scale * rng.standard_normal((index.n, d))
        d_in = embedding_distance(H, H2)
        d_out = embedding_distance(gat_layer(params, H, x, E, index),
                                   gat_layer(params, H2, x, E, index))
        ratio = d_out / d_in if d_in > 0 else (0.0 if d_out == 0 else np.inf)
        ratios.append(ratio)
        worst_ratio = max(worst_ratio, ratio)
        excess = d_out - d_in
        if excess > tol:
            bad += 1
            if excess > worst_excess:
                example = {"H": H, "H_prime": H2, "d_in": d_in, "d_out": d_out}
        worst_excess = max(worst_excess, excess)
    return ContractionReport(trials, worst_ratio, bad, worst_excess, example, ratios)


@dataclass
class FixedPointResult:
    H: np.ndarray
    iterations: int
    residuals: list


def fixed_point_iterate(params: GatParams, g, x, E, H0, tol: float = 1e-6,
                        max_iters: int = 500) -> FixedPointResult:
    """Iterate ``H <- f(H, x)`` until the embedding distance between
    successive iterates is at most ``tol``."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    index = _index_of(g)
    H = np.asarray(H0, dtype=np.float64)
    residuals = []
    for it in range(1, max_iters + 1):
        H_next = gat_layer(params, H, x, E, index)
        r = embedding_distance(H_next, H)
        residuals.append(r)
        H = H_next
        if r <= tol:
            return FixedPointResult(H, it, residuals)
    raise ConvergenceError(f"no fixed point within {max_iters} iterations",
                           residual=residuals[-1], iterations=max_iters)
