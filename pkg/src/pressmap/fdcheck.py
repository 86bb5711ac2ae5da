"""Central finite-difference gradient checking utilities."""

from __future__ import annotations

import numpy as np


def finite_difference_grad(f, arrays, eps=1e-6):
    """Central-difference gradient of scalar ``f(arrays...)`` w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        a = np.asarray(a, dtype=np.float64)
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(*arrays)
            flat[i] = orig - eps
            fm = f(*arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Normwise relative error between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_grad(build, arrays, eps=1e-6):
    """Compare tape gradients against central differences.

    ``build(*tensors) -> scalar Tensor`` constructs the graph from parameter
    tensors created out of ``arrays``.  Returns the worst normwise relative
    error over all inputs.
    """
    from . import autodiff as ad

    tensors = [ad.parameter(a) for a in arrays]
    out = build(*tensors)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.value) for t in tensors]

    def scalar_f(*arrs):
        ts = [ad.constant(a) for a in arrs]
        return float(build(*ts).value)

    numeric = finite_difference_grad(scalar_f, [a.copy() for a in arrays], eps=eps)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))
