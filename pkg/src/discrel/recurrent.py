"""Gated recurrent sequence processing.

One cell direction maps an (N, d_in) sequence to (N, d_hidden) hidden states
starting from a zero state:

    r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)        (reset gate)
    z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)        (update gate)
    c_t = tanh(x_t W_n + (r_t * h_{t-1}) U_n + b_n)   (candidate)
    h_t = z_t * h_{t-1} + (1 - z_t) * c_t

The reset gate is applied to the previous state *before* the recurrent
projection, and the update gate weighs the previous state (so z_t == 1 copies
it forward unchanged).  Input projections for all three gates are batched
into one (d_in, 3*d_hidden) matrix and computed for the whole sequence up
front; column blocks are ordered [reset | update | candidate].
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .init import uniform_param, zeros_param
from .tensor import Parameter, Tensor


def reverse_rows(x: Tensor) -> Tensor:
    n = x.shape[0]
    return T.gather_rows(x, list(range(n - 1, -1, -1)))


class GRUCell:
    """A single direction of gated recurrence."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, name: str = "gru"):
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.w_gates = uniform_param(rng, (d_in, 3 * d_hidden), f"{name}.w_gates")
        self.u_gates = uniform_param(rng, (d_hidden, 2 * d_hidden), f"{name}.u_gates")
        self.u_cand = uniform_param(rng, (d_hidden, d_hidden), f"{name}.u_cand")
        self.b_gates = zeros_param((3 * d_hidden,), f"{name}.b_gates")

    def parameters(self) -> list[Parameter]:
        return [self.w_gates, self.u_gates, self.u_cand, self.b_gates]

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        if n < 1:
            raise ShapeError("GRUCell: sequence must hold at least one step")
        dh = self.d_hidden
        proj = T.add_bias(x @ self.w_gates, self.b_gates)  # (N, 3h), all steps at once
        h = T.constant(np.zeros((1, dh)))
        ones = T.constant(np.ones((1, dh)))
        states = []
        for t in range(n):
            row = T.gather_rows(proj, [t])
            xr = T.slice_cols(row, 0, dh)
            xz = T.slice_cols(row, dh, 2 * dh)
            xn = T.slice_cols(row, 2 * dh, 3 * dh)
            hu = h @ self.u_gates
            r = T.sigmoid(xr + T.slice_cols(hu, 0, dh))
            z = T.sigmoid(xz + T.slice_cols(hu, dh, 2 * dh))
            cand = T.tanh(xn + (r * h) @ self.u_cand)
            h = z * h + (ones - z) * cand
            states.append(h)
        return T.concat(states, axis=0)


class BiGRU:
    """Forward and backward cells over the same input, states concatenated.

    Output is (N, 2*d_hidden): columns [0, d_hidden) from the forward pass,
    [d_hidden, 2*d_hidden) from the backward pass, both aligned to input
    positions.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, name: str = "bigru"):
        self.d_hidden = d_hidden
        self.fwd = GRUCell(d_in, d_hidden, rng, name=f"{name}.fwd")
        self.bwd = GRUCell(d_in, d_hidden, rng, name=f"{name}.bwd")

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def forward(self, x: Tensor) -> Tensor:
        f = self.fwd.forward(x)
        b = reverse_rows(self.bwd.forward(reverse_rows(x)))
        return T.concat([f, b], axis=1)
