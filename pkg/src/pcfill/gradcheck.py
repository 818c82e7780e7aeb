"""Finite-difference verification of recorded gradients.

The checker rebuilds the graph from scratch for every function evaluation, so
it exercises the same code path users run, and compares analytic gradients
against central differences at 64-bit. Component sampling keeps large graphs
affordable; a directional-derivative probe covers everything the sampling
skips.
"""

import numpy as np

from . import autodiff as ad


class GradcheckError(AssertionError):
    pass


def _as_tensors(arrays):
    return [ad.tensor(a, dtype=np.float64, requires_grad=True) for a in arrays]


def _eval(f, arrays):
    out = f(*_as_tensors(arrays))
    if out.size != 1:
        raise GradcheckError("gradcheck target must return a scalar")
    return float(out.data)


def analytic_grads(f, arrays):
    ts = _as_tensors(arrays)
    out = f(*ts)
    ad.backward(out)
    return [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts
    ]


def gradcheck(f, arrays, rel_tol=1e-6, eps=1e-5, max_components=None, rng=None,
              op_name=None):
    """Compare analytic gradients of scalar f(*tensors) with central differences.

    arrays: list of float64 ndarrays (leaf values). When max_components is
    given, that many components per input are probed (all of them otherwise).
    Returns the worst relative error seen; raises GradcheckError above rel_tol.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = analytic_grads(f, arrays)
    if rng is None:
        rng = np.random.default_rng(0)
    label = f"op '{op_name}'" if op_name else "gradcheck"
    worst = 0.0
    for i, (arr, grad) in enumerate(zip(arrays, grads)):
        flat_n = arr.size
        if max_components is not None and flat_n > max_components:
            picks = rng.choice(flat_n, size=max_components, replace=False)
        else:
            picks = np.arange(flat_n)
        for j in picks:
            idx = np.unravel_index(j, arr.shape)
            step = eps * max(1.0, abs(arr[idx]))
            hi = [a.copy() for a in arrays]
            lo = [a.copy() for a in arrays]
            hi[i][idx] += step
            lo[i][idx] -= step
            fd = (_eval(f, hi) - _eval(f, lo)) / (2 * step)
            an = grad[idx]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
            if rel > rel_tol:
                raise GradcheckError(
                    f"{label}: gradient mismatch on input {i} at {tuple(idx)}: "
                    f"analytic {an:.10g} vs finite-difference {fd:.10g} "
                    f"(rel {rel:.3g} > {rel_tol:g})"
                )
    return worst


def directional_check(f, arrays, rel_tol=1e-4, eps=1e-5, rng=None, op_name=None):
    """Probe grad . v against a central difference along one random direction v.

    Catches errors in components that sampling missed; cheap (two evals).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = analytic_grads(f, arrays)
    if rng is None:
        rng = np.random.default_rng(0)
    vs = [rng.normal(size=a.shape) for a in arrays]
    norm = np.sqrt(sum((v * v).sum() for v in vs))
    vs = [v / norm for v in vs]
    hi = [a + eps * v for a, v in zip(arrays, vs)]
    lo = [a - eps * v for a, v in zip(arrays, vs)]
    fd = (_eval(f, hi) - _eval(f, lo)) / (2 * eps)
    an = sum((g * v).sum() for g, v in zip(grads, vs))
    rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
    if rel > rel_tol:
        label = f"op '{op_name}'" if op_name else "directional check"
        raise GradcheckError(
            f"{label}: directional derivative mismatch: analytic {an:.10g} "
            f"vs finite-difference {fd:.10g} (rel {rel:.3g} > {rel_tol:g})"
        )
    return rel
