"""Finite-difference verification of the hand-written adjoints."""
import numpy as np


def rel_error(analytic, numeric, floor=1e-7):
    """Element-wise relative error; below ``floor`` magnitude it is absolute."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def tensor_rel_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` over a whole tensor."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0


def numeric_gradient(f, x, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def grad_check(op, inputs, eps=1e-6, seed=0):
    """Max relative error between ``op``'s adjoint and central differences.

    ``op(*inputs)`` must return ``(output, vjp)`` where ``vjp(cotangent)``
    gives one gradient per input. The scalar summary is ``sum(output * R)``
    for a fixed random ``R``, so every output element is exercised.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out, vjp = op(*inputs)
    weights = np.random.default_rng(seed).standard_normal(np.shape(out))
    analytic = vjp(weights)

    worst = 0.0
    for x, a in zip(inputs, analytic):
        num = numeric_gradient(lambda: float(np.sum(op(*inputs)[0] * weights)), x, eps)
        worst = max(worst, float(rel_error(np.asarray(a), num).max(initial=0.0)))
    return worst
