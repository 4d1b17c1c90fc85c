"""Masked feed-forward classifier.

Hidden layers are tanh (optionally relu) with per-layer block masks applied
to their outputs; the input mask of layer l is the mask sampled at layer
l-1 (the input itself is never masked). The output layer is a softmax and
carries no mask. The backward pass treats sampled masks as constants: the
classification cost reaches only the network weights, while the sparsity
penalties reach the policy parameters through the probabilities and the
network weights through the probabilities' dependence on earlier activations.
"""

from dataclasses import dataclass

import numpy as np

from condnet import regularizers
from condnet.linalg import BlockMask, expand_mask, masked_matmul, matmul, ones_mask
from condnet.policy import PolicyParams, PolicySample, compute_probs, sample_mask

NLL_EPS = 1e-12


@dataclass
class LayerParams:
    weights: np.ndarray  # (n_in, n_units)
    bias: np.ndarray     # (n_units,)

    def copy(self):
        return LayerParams(self.weights.copy(), self.bias.copy())


@dataclass
class NetworkParams:
    hidden: list        # list[LayerParams]
    out: LayerParams
    block_size: list    # per hidden layer
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.block_size) != len(self.hidden):
            raise ValueError("need one block size per hidden layer")
        for l, (layer, bs) in enumerate(zip(self.hidden, self.block_size)):
            if layer.weights.shape[1] % bs:
                raise ValueError(
                    f"layer {l}: {layer.weights.shape[1]} units not divisible by block size {bs}"
                )

    @property
    def n_blocks(self):
        return [layer.weights.shape[1] // bs
                for layer, bs in zip(self.hidden, self.block_size)]

    @property
    def layer_sizes(self):
        sizes = [self.hidden[0].weights.shape[0]] if self.hidden else [self.out.weights.shape[0]]
        for layer in self.hidden:
            sizes.append(layer.weights.shape[1])
        sizes.append(self.out.weights.shape[1])
        return sizes

    def copy(self):
        return NetworkParams(
            [layer.copy() for layer in self.hidden],
            self.out.copy(),
            list(self.block_size),
            self.activation,
        )


def init_glorot(layer_sizes, block_size, rng, activation="tanh"):
    """Uniform init with bound sqrt(6 / (fan_in + fan_out)); zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least input and output sizes")
    hidden = []
    for fan_in, fan_out in zip(layer_sizes[:-2], layer_sizes[1:-1]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        hidden.append(LayerParams(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)),
            np.zeros(fan_out),
        ))
    fan_in, fan_out = layer_sizes[-2], layer_sizes[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    out = LayerParams(
        rng.uniform(-bound, bound, size=(fan_in, fan_out)),
        np.zeros(fan_out),
    )
    return NetworkParams(hidden, out, list(block_size), activation)


def init_policies(net, n_inputs):
    """One zero-initialized policy per hidden layer (all probabilities 0.5)."""
    policies = []
    fan_in = n_inputs
    for layer, bs in zip(net.hidden, net.block_size):
        n_units = layer.weights.shape[1]
        policies.append(PolicyParams(
            np.zeros((n_units // bs, fan_in)), np.zeros(n_units // bs)
        ))
        fan_in = n_units
    return policies


@dataclass
class LayerCache:
    inputs: np.ndarray    # layer input (already masked by the previous layer)
    sample: PolicySample
    preact: np.ndarray    # masked pre-activation + bias; only active slots meaningful
    output: np.ndarray    # f(preact) * expanded mask


@dataclass
class ForwardCache:
    layers: list
    probs_out: np.ndarray  # softmax output, rows sum to 1

    @property
    def batch_size(self):
        return self.probs_out.shape[0]


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def forward(net, policies, x, rng=None, *, uniform_rate=None, mask_mode="sample",
            masks=None):
    """Run the masked forward pass for a minibatch.

    Modes:
      * ``policies`` given: probabilities from each layer's policy on its
        input activations, then Bernoulli-sampled (``mask_mode="sample"``) or
        thresholded at 0.5 (``mask_mode="threshold"``, diagnostics only).
      * ``uniform_rate`` given (and no policies): input-independent masks at
        that rate, i.e. plain block dropout.
      * neither: dense network, all blocks active, no draws consumed.

    ``masks`` overrides sampling with caller-supplied block masks (used by
    gradient checks and the mask-enumeration tests).
    """
    x = np.asarray(x, dtype=np.float64)
    if policies is not None and uniform_rate is not None:
        raise ValueError("pass either policies or uniform_rate, not both")
    if policies is not None and len(policies) != len(net.hidden):
        raise ValueError("need one policy per hidden layer")
    if mask_mode not in ("sample", "threshold"):
        raise ValueError(f"unknown mask_mode {mask_mode!r}")

    h = x
    m_b = x.shape[0]
    in_mask = ones_mask(m_b, x.shape[1])
    layers = []
    for l, (layer, bs) in enumerate(zip(net.hidden, net.block_size)):
        n_blocks = layer.weights.shape[1] // bs
        if policies is not None:
            probs = compute_probs(policies[l], h)
        elif uniform_rate is not None:
            probs = np.full((m_b, n_blocks), float(uniform_rate))
        else:
            probs = np.ones((m_b, n_blocks))

        if masks is not None:
            mask = masks[l]
            if mask.bits.shape != (m_b, n_blocks) or mask.block_size != bs:
                raise ValueError(f"override mask for layer {l} has wrong shape")
        elif policies is None and uniform_rate is None:
            mask = ones_mask(m_b, n_blocks, bs)
        elif mask_mode == "threshold":
            mask = BlockMask((probs >= 0.5).astype(np.uint8), bs)
        else:
            if rng is None:
                raise ValueError("stochastic forward needs an rng")
            mask = sample_mask(probs, bs, rng)

        preact = masked_matmul(h, layer.weights, in_mask, mask) + layer.bias
        out = _activate(preact, net.activation) * expand_mask(mask)
        layers.append(LayerCache(h, PolicySample(probs, mask), preact, out))
        h = out
        in_mask = mask

    # Output layer: no mask; still skip the inactive input blocks.
    z_out = masked_matmul(h, net.out.weights, in_mask,
                          ones_mask(m_b, net.out.weights.shape[1])) + net.out.bias
    return ForwardCache(layers, softmax(z_out))


def nll(yhat, labels):
    """Per-example negative log-likelihood of the true class."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != yhat.shape[0]:
        raise ValueError(f"labels shape {labels.shape} != ({yhat.shape[0]},)")
    if labels.min() < 0 or labels.max() >= yhat.shape[1]:
        raise ValueError("label out of range")
    picked = yhat[np.arange(yhat.shape[0]), labels]
    return -np.log(np.clip(picked, NLL_EPS, None))


def predictions(yhat):
    return yhat.argmax(axis=1)


@dataclass
class LossBreakdown:
    nll_mean: float
    l_b: float
    l_e: float
    l_v: float
    l2: float
    lambda_s: object
    lambda_v: object
    lambda_l2: float
    weighted_penalties: float  # lambda-weighted regularizer total

    @property
    def total(self):
        return self.nll_mean + self.weighted_penalties + self.lambda_l2 * self.l2


def _per_layer(value, n):
    if np.isscalar(value):
        return [float(value)] * n
    value = list(value)
    if len(value) != n:
        raise ValueError(f"expected {n} per-layer values, got {len(value)}")
    return [float(v) for v in value]


def _activation_grad(cache_layer, kind):
    if kind == "tanh":
        # output equals tanh(preact) on active slots; inactive slots are
        # multiplied by zero downstream, so using output here is safe.
        return 1.0 - cache_layer.output ** 2
    return (cache_layer.preact > 0.0).astype(np.float64)


def backward_nn(net, policies, cache, labels, *, lambda_s=0.0, lambda_v=0.0,
                lambda_l2=0.0, tau=0.5, penalty_norm="abs"):
    """Exact gradient of the regularized loss with masks held constant.

    Returns ``(net_grads, policy_grads, breakdown)``: per-layer ``(dW, db)``
    tuples (hidden layers then output layer), per-layer ``(dZ, dd)`` tuples
    (empty list when there are no policies), and the loss value split into
    its terms. The REINFORCE term is not part of this loss; see the trainer.
    """
    L = len(net.hidden)
    labels = np.asarray(labels)
    m_b = cache.batch_size
    lam_s = _per_layer(lambda_s, L)
    lam_v = _per_layer(lambda_v, L)
    taus = _per_layer(tau, L)

    # Penalty values and their gradients w.r.t. each layer's probabilities.
    l_b_total = l_e_total = l_v_total = 0.0
    weighted = 0.0
    sigma_grads = []
    for l in range(L):
        sigma = cache.layers[l].sample.probs
        b_val, b_grad = regularizers.batch_mean_penalty(sigma, taus[l], penalty_norm)
        e_val, e_grad = regularizers.example_mean_penalty(sigma, taus[l], penalty_norm)
        v_val, v_grad = regularizers.negative_variance_penalty(sigma)
        l_b_total += b_val
        l_e_total += e_val
        l_v_total += v_val
        weighted += lam_s[l] * (b_val + e_val) + lam_v[l] * v_val
        sigma_grads.append(lam_s[l] * (b_grad + e_grad) + lam_v[l] * v_grad)

    onehot = np.zeros_like(cache.probs_out)
    onehot[np.arange(m_b), labels] = 1.0
    delta_out = (cache.probs_out - onehot) / m_b  # softmax + mean NLL

    h_last = cache.layers[-1].output if L else None
    if L == 0:
        raise ValueError("network has no hidden layers")

    dw_out = h_last.T @ delta_out + 2.0 * lambda_l2 * net.out.weights
    db_out = delta_out.sum(axis=0) + 2.0 * lambda_l2 * net.out.bias
    g = delta_out @ net.out.weights.T  # d loss / d h_L

    net_grads = [None] * L + [(dw_out, db_out)]
    policy_grads = [None] * L if policies is not None else []
    l2_value = float((net.out.weights ** 2).sum() + (net.out.bias ** 2).sum())

    for l in range(L - 1, -1, -1):
        layer = net.hidden[l]
        lc = cache.layers[l]
        e = expand_mask(lc.sample.mask)
        dz = g * e * _activation_grad(lc, net.activation)
        dw = lc.inputs.T @ dz + 2.0 * lambda_l2 * layer.weights
        db = dz.sum(axis=0) + 2.0 * lambda_l2 * layer.bias
        net_grads[l] = (dw, db)
        l2_value += float((layer.weights ** 2).sum() + (layer.bias ** 2).sum())
        g = dz @ layer.weights.T

        if policies is not None:
            sigma = lc.sample.probs
            dpre = sigma_grads[l] * sigma * (1.0 - sigma)
            dz_pol = dpre.T @ lc.inputs + 2.0 * lambda_l2 * policies[l].weights
            dd_pol = dpre.sum(axis=0) + 2.0 * lambda_l2 * policies[l].bias
            policy_grads[l] = (dz_pol, dd_pol)
            l2_value += float((policies[l].weights ** 2).sum()
                              + (policies[l].bias ** 2).sum())
            g = g + dpre @ policies[l].weights

    breakdown = LossBreakdown(
        nll_mean=float(nll(cache.probs_out, labels).mean()),
        l_b=l_b_total, l_e=l_e_total, l_v=l_v_total, l2=l2_value,
        lambda_s=lambda_s, lambda_v=lambda_v, lambda_l2=float(lambda_l2),
        weighted_penalties=weighted,
    )
    return net_grads, policy_grads, breakdown
