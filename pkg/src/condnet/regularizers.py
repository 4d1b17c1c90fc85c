"""Sparsity and variance penalties on participation probabilities.

All three operate on the block-level probability matrix (m_b, n) of one
layer and return ``(value, grad)`` where ``grad`` has the same shape. The
norm on the two target-rate penalties is the absolute value by default
(literal reading of the scalar 2-norm); a squared variant is available
behind the ``norm`` switch.
"""

import numpy as np

_NORMS = ("abs", "squared")


def _check(sigma, target=None):
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2:
        raise ValueError(f"expected (examples, units) matrix, got shape {sigma.shape}")
    if target is not None and not 0.0 < target < 1.0:
        raise ValueError(f"target rate must be in (0, 1), got {target}")
    return sigma


def batch_mean_penalty(sigma, target, norm="abs"):
    """Deviation of each unit's batch-mean activation from the target rate,
    summed over units. Subgradient at the kink is 0."""
    sigma = _check(sigma, target)
    if norm not in _NORMS:
        raise ValueError(f"norm must be one of {_NORMS}")
    m = sigma.shape[0]
    dev = sigma.mean(axis=0) - target  # (n,)
    if norm == "abs":
        value = np.abs(dev).sum()
        grad = np.broadcast_to(np.sign(dev) / m, sigma.shape).copy()
    else:
        value = (dev ** 2).sum()
        grad = np.broadcast_to(2.0 * dev / m, sigma.shape).copy()
    return float(value), grad


def example_mean_penalty(sigma, target, norm="abs"):
    """Deviation of each example's mean activation from the target rate,
    averaged over the minibatch."""
    sigma = _check(sigma, target)
    if norm not in _NORMS:
        raise ValueError(f"norm must be one of {_NORMS}")
    m, n = sigma.shape
    dev = sigma.mean(axis=1) - target  # (m,)
    if norm == "abs":
        value = np.abs(dev).mean()
        grad = np.broadcast_to((np.sign(dev) / (m * n))[:, None], sigma.shape).copy()
    else:
        value = (dev ** 2).mean()
        grad = np.broadcast_to((2.0 * dev / (m * n))[:, None], sigma.shape).copy()
    return float(value), grad


def negative_variance_penalty(sigma):
    """Negated per-unit population variance across the minibatch, summed over
    units. Minimizing this spreads each unit's activation over examples."""
    sigma = _check(sigma)
    m = sigma.shape[0]
    if m < 2:
        raise ValueError(f"variance penalty needs at least 2 examples, got {m}")
    centered = sigma - sigma.mean(axis=0)
    value = -float((centered ** 2).sum() / m)
    grad = -(2.0 / m) * centered
    return value, grad
