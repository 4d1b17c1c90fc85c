"""Per-layer sigmoid-Bernoulli block-activation policy.

Each hidden layer owns an independent policy: a linear map from the layer's
input activations to per-block participation probabilities, sampled as a
k-dimensional Bernoulli. The score gradient has the closed form
(mask - probs) with respect to the pre-sigmoid values, which is what
:func:`grad_log_prob` chains into the parameters.
"""

import csv
from dataclasses import dataclass

import numpy as np

from condnet.linalg import BlockMask

# Probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] so log terms stay finite.
PROB_EPS = 1e-7


@dataclass
class PolicyParams:
    """Linear policy head: probs = sigmoid(inputs @ weights.T + bias)."""

    weights: np.ndarray  # (n_blocks, n_inputs)
    bias: np.ndarray     # (n_blocks,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("policy weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError(
                f"policy shapes disagree: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("policy parameters must be finite")

    @property
    def n_blocks(self):
        return self.weights.shape[0]

    def copy(self):
        return PolicyParams(self.weights.copy(), self.bias.copy())


def zero_policy(n_blocks, n_inputs):
    """Fresh policy with zero weights: every block starts at probability 0.5."""
    return PolicyParams(np.zeros((n_blocks, n_inputs)), np.zeros(n_blocks))


@dataclass
class PolicySample:
    """Probabilities and the block mask drawn from them for one minibatch."""

    probs: np.ndarray   # (m_b, n_blocks)
    mask: BlockMask


def compute_probs(params, inputs):
    """Participation probabilities for a minibatch of layer inputs."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.weights.shape[1]:
        raise ValueError(
            f"policy input shape {inputs.shape} incompatible with weights {params.weights.shape}"
        )
    z = inputs @ params.weights.T + params.bias
    probs = 1.0 / (1.0 + np.exp(-z))
    return np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)


def sample_mask(probs, block_size, rng):
    """Bernoulli-sample a block mask.

    One uniform draw per entry, consumed in row-major order; bit = 1 iff the
    draw falls below the probability. Keeping the draw order fixed is what
    makes seeded runs reproducible.
    """
    draws = rng.random(probs.shape)
    return BlockMask((draws < probs).astype(np.uint8), block_size)


def log_prob(probs, mask):
    """Per-example log-probability of the sampled mask under ``probs``."""
    u = mask.bits.astype(np.float64)
    if u.shape != probs.shape:
        raise ValueError(f"mask shape {u.shape} != probs shape {probs.shape}")
    return np.log(probs * u + (1.0 - probs) * (1.0 - u)).sum(axis=1)


def grad_log_prob(params, inputs, sample, weights):
    """Cost-weighted score gradient, averaged over the minibatch.

    Returns ``(d_weights, d_bias)`` equal to
    (1/m) * sum_i weights[i] * d log pi(mask_i | inputs_i) / d params,
    accumulated directly (no per-example Jacobian is ever formed). The
    per-entry score w.r.t. the pre-sigmoid value is (bit - prob).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    m = inputs.shape[0]
    if weights.shape != (m,):
        raise ValueError(f"weights shape {weights.shape} != ({m},)")
    u = sample.mask.bits.astype(np.float64)
    score = weights[:, None] * (u - sample.probs)  # (m, n_blocks)
    d_weights = score.T @ inputs / m
    d_bias = score.sum(axis=0) / m
    return d_weights, d_bias


SIGMA_CSV_HEADER = ["example_id", "class_label", "block_id", "sigma"]


def write_sigma_csv(probs, labels, path):
    """Dump per-example per-block probabilities (scatter-plot source data)."""
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIGMA_CSV_HEADER)
        for i in range(probs.shape[0]):
            for j in range(probs.shape[1]):
                writer.writerow([i, int(labels[i]), j, repr(float(probs[i, j]))])
