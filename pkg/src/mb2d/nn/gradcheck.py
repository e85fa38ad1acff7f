"""Central finite-difference check for tape gradients.

Samples random entries of the parameter dict, perturbs each by +-eps, and
compares the symmetric difference quotient of the loss against the analytic
gradient.  Run in float64; float32 rounding would swamp the comparison.
"""

import numpy as np


def finite_diff_check(loss_fn, params: dict, rng: np.random.Generator, n_samples=200, eps=1e-5):
    """Return (rel_errors, worst) over ``n_samples`` sampled parameter entries.

    ``loss_fn()`` must rebuild the graph from ``params`` and return the scalar
    loss Tensor.  Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator, so entries where both sides vanish count as exact.
    """
    loss = loss_fn()
    loss.backward()
    grads = {k: p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for k, p in params.items()}
    for p in params.values():
        p.grad = None

    keys = sorted(params.keys())
    sizes = np.array([params[k].data.size for k in keys])
    probs = sizes / sizes.sum()
    rel_errors = np.empty(n_samples)
    for s in range(n_samples):
        k = keys[rng.choice(len(keys), p=probs)]
        idx = np.unravel_index(rng.integers(params[k].data.size), params[k].data.shape)
        orig = params[k].data[idx]
        params[k].data[idx] = orig + eps
        lp = float(loss_fn().data)
        params[k].data[idx] = orig - eps
        lm = float(loss_fn().data)
        params[k].data[idx] = orig
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grads[k][idx]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        rel_errors[s] = abs(analytic - numeric) / denom
    return rel_errors, rel_errors.max()
