import numpy as np
import pytest

from hide.core import Tensor, backward, clear_tape


@pytest.fixture(autouse=True)
def _fresh_tape():
    clear_tape()
    yield
    clear_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of scalar f(arrays) w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(arrays)
            flat[i] = orig - h
            lo = f(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, arrays, rel_tol=1e-4, h=1e-5):
    """Compare tape gradients of build_loss against central differences.

    build_loss receives a list of Tensors (requires_grad) and must
    return a scalar Tensor.  arrays are float64 numpy arrays.
    """
    clear_tape()
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(tensors)
    backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(a)
                for t, a in zip(tensors, arrays)]

    def f(arrs):
        from hide.core import no_grad
        with no_grad():
            val = build_loss([Tensor(a) for a in arrs])
        return float(val.numpy())

    numeric = numeric_grad(f, [a.copy() for a in arrays], h=h)
    for an, nu in zip(analytic, numeric):
        scale = np.maximum(np.abs(nu), 1.0)
        err = np.max(np.abs(an - nu) / scale)
        assert err < rel_tol, f"gradient mismatch: max rel err {err:.3e}"
