"""Parameter construction helpers shared by the model components."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


def uniform_param(rng: np.random.Generator, shape, name: str = "") -> Parameter:
    """Weight matrix drawn uniformly from +-1/sqrt(fan_in).

    For a 2-D (d_in, d_out) matrix the fan-in is d_in; for a convolution
    kernel (k, d_in, d_out) it is k * d_in.
    """
    shape = tuple(shape)
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name)


def zeros_param(shape, name: str = "") -> Parameter:
    return Parameter(np.zeros(tuple(shape)), name=name)
