"""Shared test helpers: finite-difference gradient checking."""

import numpy as np

from dctnet.tensor import backward


def fd_gradcheck(fn, tensors, eps=1e-6, tol=1e-5, max_entries=None, rng=None):
    """Compare analytic gradients of fn() against central differences.

    `fn` rebuilds the scalar loss Tensor from the current `.data` of the
    given tensors on every call.  Relative error per checked entry must stay
    under `tol`; `max_entries` subsamples large tensors.
    """
    loss = fn()
    for t in tensors:
        t.grad = None
    backward(loss)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "missing gradient"
        assert t.grad.shape == t.data.shape
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            saved = flat[i]
            flat[i] = saved + eps
            lp = fn().item()
            flat[i] = saved - eps
            lm = fn().item()
            flat[i] = saved
            fd = (lp - lm) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-3)
            rel = abs(gflat[i] - fd) / denom
            worst = max(worst, rel)
            assert rel < tol, f"gradient mismatch at flat index {i}: analytic {gflat[i]!r}, numeric {fd!r}, rel {rel:.3e}"
    return worst
