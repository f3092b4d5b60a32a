import numpy as np
import pytest

from softsurf import autodiff as ad


def finite_difference_grads(make_loss, params: dict, h: float = 1e-3) -> dict:
    """Central-difference gradients of a scalar loss w.r.t. float64 tensors.

    ``make_loss`` must rebuild the computation from the current parameter
    values on every call; the parameters are perturbed in place.
    """
    grads = {}
    for name, p in params.items():
        flat = p.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = make_loss().item()
            flat[i] = orig - h
            lm = make_loss().item()
            flat[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        grads[name] = g.reshape(p.data.shape)
    return grads


def gradcheck(make_loss, params: dict, h: float = 1e-3, rtol: float = 1e-4) -> float:
    """Max normalized deviation between backward and finite differences."""
    for p in params.values():
        p.grad = None
    loss = make_loss()
    ad.backward(loss)
    fd = finite_difference_grads(make_loss, params, h=h)
    worst = 0.0
    for name, p in params.items():
        ref = fd[name]
        got = np.zeros_like(ref) if p.grad is None else p.grad
        scale = max(float(np.max(np.abs(ref))), 1e-8)
        worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
    assert worst < rtol, f"gradient mismatch: normalized error {worst:.3g} >= {rtol}"
    return worst


@pytest.fixture
def fd_gradcheck():
    return gradcheck
