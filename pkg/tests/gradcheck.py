"""Finite-difference gradient oracle, independent of the autograd engine.

``central_difference`` only ever calls a plain float-valued function of
numpy arrays, so it cannot share bugs with the backward rules it checks.
"""

import numpy as np

from hoidet.autograd import Tensor, backward


def central_difference(fn, arrays, h=1e-5):
    """Numeric gradient of fn(list-of-arrays) -> float via central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for target in arrays:
        grad = np.zeros_like(target)
        flat = target.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(arrays)
            flat[i] = orig - h
            f_minus = fn(arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def analytic_gradients(builder, arrays):
    """Run builder on fresh leaf tensors, backprop, and collect leaf grads."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = builder(leaves)
    backward(loss)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            for leaf in leaves]


def relative_error(analytic, numeric):
    """Max elementwise |a - n| / max(1, |a|, |n|) across all gradients."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_gradients(builder, arrays, tol=1e-6, h=1e-5):
    """Compare analytic vs central-difference gradients; returns the error."""
    def as_float(arrs):
        leaves = [Tensor(a, requires_grad=False) for a in arrs]
        return builder(leaves).item()

    analytic = analytic_gradients(builder, arrays)
    numeric = central_difference(as_float, arrays, h=h)
    err = relative_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: max relative error {err:.3e} >= {tol:.1e}"
    return err
