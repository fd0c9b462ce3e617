import numpy as np
import pytest

from dynisp import tensor as T
from dynisp.tensor import Tensor


def gradcheck(fn, tensors, eps=1e-5, rtol=1e-3, atol=1e-8, seed=0, max_coords=24,
              dtype=np.float64):
    """Compare tape gradients of ``loss = sum(w * fn(*tensors))`` against
    central finite differences on a random coordinate subset.

    Inputs are promoted to float64 so the finite-difference quotient itself
    is trustworthy; callers are responsible for choosing evaluation points
    away from any kinks of ``fn``.
    """
    rng = np.random.default_rng(seed)
    tensors = [
        Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, dtype=dtype)
        for t in tensors
    ]
    out0 = fn(*tensors)
    w = rng.normal(size=out0.shape).astype(dtype)

    def loss_value():
        return float((fn(*tensors).data * w).sum())

    with T.tape() as tp:
        out = fn(*tensors)
        loss = T.tsum(out * Tensor(w, dtype=dtype))
        tp.backward(loss)

    for t in tensors:
        if not t.requires_grad:
            continue
        assert t.grad is not None, "missing gradient"
        flat = t.data.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(n, max_coords), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lp = loss_value()
            flat[c] = orig - eps
            lm = loss_value()
            flat[c] = orig
            fd = (lp - lm) / (2 * eps)
            got = t.grad.reshape(-1)[c]
            err = abs(got - fd)
            assert err <= atol + rtol * max(abs(fd), 1e-6), (
                f"grad mismatch at flat index {c}: analytic {got}, fd {fd}"
            )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
