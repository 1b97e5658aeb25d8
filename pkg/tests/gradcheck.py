"""Shared finite-difference oracle for gradient checks."""

import numpy as np

from lscgnn.autodiff import Tensor, no_grad


def finite_diff_grad(fn, t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar returned by fn() w.r.t. t.values.

    fn must rebuild its forward pass from the current tensor values on each
    call; this oracle never touches the autodiff tape.
    """
    grad = np.zeros_like(t.values)
    flat_v = t.values.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_v.size):
        orig = flat_v[i]
        flat_v[i] = orig + h
        with no_grad():
            f_plus = fn().item()
        flat_v[i] = orig - h
        with no_grad():
            f_minus = fn().item()
        flat_v[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(make_loss, tensors, h: float = 1e-5, tol: float = 1e-4,
                allow_missing: bool = False) -> float:
    """Backprop make_loss() once, then compare every tensor's grad against
    the finite-difference oracle; returns the worst relative error.

    With allow_missing, a tensor the loss provably never reads (grad None)
    is compared as an all-zero gradient.
    """
    from lscgnn.autodiff import backward

    for t in tensors:
        t.grad = None
    loss = make_loss()
    backward(loss)
    worst = 0.0
    for t in tensors:
        if t.grad is None:
            assert allow_missing, "parameter missing gradient after backward"
            analytic = np.zeros_like(t.values)
        else:
            analytic = t.grad
        fd = finite_diff_grad(make_loss, t, h=h)
        err = max_rel_err(analytic, fd)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
        worst = max(worst, err)
    return worst
