"""Central finite-difference gradient checking used across the test suite."""

import numpy as np

from discrel import tensor as T

FD_STEP = 1e-5


def finite_diff(f, arrays, entries_per_array=None, rng=None, step=FD_STEP):
    """Central finite differences of scalar ``f()`` w.r.t. the given arrays.

    ``f`` recomputes the loss from current array contents and returns a float.
    Returns, per array, a list of (flat_index, derivative).  When
    ``entries_per_array`` is set, a seeded random subset of entries is probed;
    otherwise every entry is.
    """
    results = []
    for arr in arrays:
        flat = arr.ravel()
        if entries_per_array is None or flat.size <= entries_per_array:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=entries_per_array, replace=False)
        derivs = []
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            flat[i] = orig
            derivs.append((int(i), (up - down) / (2.0 * step)))
        results.append(derivs)
    return results


def assert_grads_match(f, tensors, entries_per_array=None, seed=0, tol=1e-4):
    """Check analytic grads on ``tensors`` against finite differences of ``f``.

    ``f`` builds the graph from the tensors and returns a scalar Tensor.  The
    criterion is |analytic - numeric| <= tol * max(1, |analytic|, |numeric|),
    i.e. relative for O(1)+ gradients with an absolute floor for tiny ones.
    """
    rng = np.random.default_rng(seed)
    loss = f()
    T.backward(loss)
    grads = []
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        grads.append(t.grad.copy())
        t.grad = None

    def forward_value():
        with T.no_grad():
            return f().item()

    numeric = finite_diff(forward_value, [t.data for t in tensors],
                          entries_per_array=entries_per_array, rng=rng)
    worst = 0.0
    for t, analytic, derivs in zip(tensors, grads, numeric):
        flat = analytic.ravel()
        for i, num in derivs:
            err = abs(flat[i] - num) / max(1.0, abs(flat[i]), abs(num))
            worst = max(worst, err)
            assert err <= tol, (
                f"gradient mismatch at entry {i}: analytic {flat[i]:.8g}, "
                f"numeric {num:.8g}, err {err:.3g}"
            )
    return worst
