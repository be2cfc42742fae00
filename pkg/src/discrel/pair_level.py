"""Interaction between the two arguments of a pair, layer by layer.

For each encoder depth j, an affine map (shared across all depths) is applied
to the first argument's rows, a bilinear score matrix against the second
argument's rows is built, and each argument is re-expressed as an
attention-weighted mixture of the other:

    M  = affine(v1) v2^T
    w2 = rowsoftmax(M)   v2     (one mixture of v2 rows per v1 position)
    w1 = rowsoftmax(M^T) v1     (one mixture of v1 rows per v2 position)

The two mixtures are 2-max pooled per feature and concatenated, giving a
fixed-size slice per layer; the final pair representation strings the layer
slices together, shallowest first, so every depth contributes directly.

Padding positions take part in attention by default; ``mask_padding`` hides
them from the softmax instead.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .init import uniform_param, zeros_param
from .tensor import Parameter, Tensor

MASK_VALUE = -1e30


class BiAttention:
    """The shared affine map used by every layer's attention."""

    def __init__(self, width: int, rng: np.random.Generator, name: str = "bi_attention"):
        self.width = width
        self.ffn_w = uniform_param(rng, (width, width), f"{name}.ffn_w")
        self.ffn_b = zeros_param((width,), f"{name}.ffn_b")

    def parameters(self) -> list[Parameter]:
        return [self.ffn_w, self.ffn_b]

    def scores(self, v1: Tensor, v2: Tensor) -> Tensor:
        if v1.shape != v2.shape or v1.shape[1] != self.width:
            raise ShapeError(f"bi-attention: arguments {v1.shape} and {v2.shape} "
                             f"must both be (N, {self.width})")
        return T.add_bias(v1 @ self.ffn_w, self.ffn_b) @ T.transpose(v2)


def _key_mask(n: int, n_real: int | None) -> np.ndarray | None:
    if n_real is None or n_real >= n:
        return None
    mask = np.zeros((n, n))
    mask[:, n_real:] = MASK_VALUE
    return mask


def bi_attend(v1: Tensor, v2: Tensor, attention: BiAttention,
              mask_padding: bool = False,
              n_real1: int | None = None,
              n_real2: int | None = None) -> tuple[Tensor, Tensor]:
    """Cross-attended versions of both arguments, shapes preserved."""
    scores = attention.scores(v1, v2)
    scores_t = T.transpose(scores)
    n = v1.shape[0]
    if mask_padding:
        m2 = _key_mask(n, n_real2)
        if m2 is not None:
            scores = scores + T.constant(m2)
        m1 = _key_mask(n, n_real1)
        if m1 is not None:
            scores_t = scores_t + T.constant(m1)
    w2 = T.softmax_rows(scores) @ v2
    w1 = T.softmax_rows(scores_t) @ v1
    return w1, w2


def pool_layer(w1: Tensor, w2: Tensor) -> Tensor:
    """Per-layer slice: 2-max pools of both mixtures, first argument first."""
    if w1.shape != w2.shape:
        raise ShapeError(f"pool_layer: shapes {w1.shape} and {w2.shape} differ")
    return T.concat([T.topk_pool(w1, 2), T.topk_pool(w2, 2)], axis=0)


def build_pair_representation(layers1, layers2, attention: BiAttention,
                              mask_padding: bool = False,
                              n_real1: int | None = None,
                              n_real2: int | None = None) -> Tensor:
    """Flat pair vector of length 4 * len(layers) * width, layer-major."""
    layers1 = list(layers1)
    layers2 = list(layers2)
    if len(layers1) != len(layers2):
        raise ConfigError(f"pair representation: {len(layers1)} vs {len(layers2)} layer outputs")
    if not layers1:
        raise ConfigError("pair representation: no layer outputs")
    slices = []
    for v1, v2 in zip(layers1, layers2):
        w1, w2 = bi_attend(v1, v2, attention, mask_padding, n_real1, n_real2)
        slices.append(pool_layer(w1, w2))
    if len(slices) == 1:
        return slices[0]
    return T.concat(slices, axis=0)


def attention_map(v1, v2, attention: BiAttention,
                  mask_padding: bool = False,
                  n_real2: int | None = None) -> np.ndarray:
    """Softmaxed score matrix (first argument attending over the second),
    for inspection and export; computed off the gradient tape."""
    with T.no_grad():
        scores = attention.scores(T.constant(np.asarray(v1.numpy() if isinstance(v1, Tensor) else v1)),
                                  T.constant(np.asarray(v2.numpy() if isinstance(v2, Tensor) else v2)))
        if mask_padding:
            mask = _key_mask(scores.shape[0], n_real2)
            if mask is not None:
                scores = scores + T.constant(mask)
        return T.softmax_rows(scores).numpy().copy()
