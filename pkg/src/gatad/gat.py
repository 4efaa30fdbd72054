"""Single-head graph attention over a complete graph with self-loops.

Every node attends to every node (itself included). The score for an
ordered pair (i, j) is a LeakyReLU of a learned linear form on the
concatenated node vectors; scores are row-softmaxed into attention weights
and each node becomes the sigmoid of its attention-weighted mixture.

Two orientations of a window are used downstream: feature-oriented (each
feature's history is a node) and time-oriented (each timestep is a node).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DimensionError
from .tensor import (
    Tensor,
    leaky_relu,
    matmul,
    outer_sum,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    transpose_last,
)


@dataclass
class GatParams:
    """Pair-scoring weights for one attention layer.

    w has length 2m for node dimension m: the first half scores the source
    node, the second half the attended node.
    """

    w: Tensor
    leaky_slope: float = 0.2


@dataclass
class GatOutput:
    h: Tensor      # (..., N, m) gated mixtures, each component in (0, 1)
    alpha: Tensor  # (..., N, N) row-stochastic attention weights
    scores: Tensor | None = field(repr=False, default=None)  # pre-softmax (..., N, N)


def _split_w(params: GatParams, m: int) -> tuple[Tensor, Tensor]:
    w = params.w
    if w.ndim != 1 or w.shape[0] != 2 * m:
        raise DimensionError(
            f"pair-scoring weights must have length {2 * m} for node "
            f"dimension {m}, got shape {w.shape}")
    w_src = reshape(slice_axis(w, 0, 0, m), (m, 1))
    w_dst = reshape(slice_axis(w, 0, m, 2 * m), (m, 1))
    return w_src, w_dst


def attention_scores(nodes: Tensor, params: GatParams) -> Tensor:
    """Pre-softmax score matrix e with e[i, j] = LeakyReLU(w . (v_i ++ v_j)).

    nodes is (N, m) or batched (B, N, m); the result keeps the leading axes
    with a trailing (N, N). The linear form splits over the concatenation,
    so the full matrix is an outer sum of two projections.
    """
    if nodes.ndim not in (2, 3):
        raise DimensionError(f"nodes must be 2-D or 3-D, got {nodes.shape}")
    m = nodes.shape[-1]
    w_src, w_dst = _split_w(params, m)
    src = matmul(nodes, w_src)  # (..., N, 1)
    dst = matmul(nodes, w_dst)
    lead = nodes.shape[:-1]
    e = outer_sum(reshape(src, lead), reshape(dst, lead))
    return leaky_relu(e, params.leaky_slope)


def gat_forward(nodes: Tensor, params: GatParams) -> GatOutput:
    """Attention weights and gated node mixtures for one layer."""
    e = attention_scores(nodes, params)
    alpha = softmax(e)
    h = sigmoid(matmul(alpha, nodes))
    return GatOutput(h=h, alpha=alpha, scores=e)


def feature_gat(window: Tensor, params: GatParams) -> GatOutput:
    """Attention across features: the window is transposed so each of the k
    features becomes a node carrying its n-step history. h is (..., k, n)."""
    return gat_forward(transpose_last(window), params)


def time_gat(window: Tensor, params: GatParams) -> GatOutput:
    """Attention across timesteps: each of the n rows is a node carrying a
    k-dimensional reading. h is (..., n, k)."""
    return gat_forward(window, params)
