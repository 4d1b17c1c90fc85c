"""Interleaved optimization of network and policy parameters.

Each minibatch step does one forward pass, then applies two updates from the
same pre-update parameters: plain SGD on the regularized loss (network and
policy parameters, masks constant), and the cost-weighted score-gradient
update on the policy parameters. Constant learning rates, shuffled epochs,
early stopping on validation error.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from condnet import network, policy

MODELS = ("condnet", "bdnn", "dense")

# Disjoint PRNG streams derived from the run seed. Draw order within the
# training stream: one permutation per epoch, then per batch the layer masks
# in ascending layer order, row-major within each layer.
_INIT_STREAM = 0
_TRAIN_STREAM = 1
_EVAL_STREAM = 2
_FINAL_STREAM = 3

EVAL_BATCH = 512


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Hyperparams:
    n_blocks: list
    block_size: list
    learning_rate: float = 1e-3
    policy_learning_rate: object = 5e-5   # scalar or per-layer list
    lambda_s: object = 0.0                # scalar or per-layer list
    lambda_v: object = 0.0
    lambda_l2: float = 0.0
    tau: object = 0.25                    # scalar or per-layer list
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 10
    seed: int = 0
    activation: str = "tanh"
    penalty_norm: str = "abs"
    model: str = "condnet"
    uniform_rate: float = None            # bdnn only; defaults to tau
    use_cost_baseline: bool = False
    baseline_decay: float = 0.9

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if len(self.n_blocks) != len(self.block_size) or not self.n_blocks:
            raise ValueError("n_blocks and block_size must be equal-length, non-empty")
        if any(b < 1 for b in self.n_blocks) or any(b < 1 for b in self.block_size):
            raise ValueError("n_blocks and block_size entries must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for lr in np.atleast_1d(self.policy_learning_rate):
            if lr <= 0:
                raise ValueError("policy_learning_rate must be > 0")
        for lam in (*np.atleast_1d(self.lambda_s), *np.atleast_1d(self.lambda_v),
                    self.lambda_l2):
            if lam < 0:
                raise ValueError("penalty weights must be >= 0")
        for t in np.atleast_1d(self.tau):
            if not 0.0 < t < 1.0:
                raise ValueError("tau must be in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.max_epochs < 1 or self.patience < 0:
            raise ValueError("max_epochs must be >= 1 and patience >= 0")
        if self.penalty_norm not in ("abs", "squared"):
            raise ValueError("penalty_norm must be 'abs' or 'squared'")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must be in [0, 1)")
        if self.model == "bdnn" and self.uniform_rate is None \
                and not np.isscalar(self.tau):
            raise ValueError("bdnn needs a scalar uniform_rate (or scalar tau)")

    @property
    def hidden_sizes(self):
        return [nb * bs for nb, bs in zip(self.n_blocks, self.block_size)]

    @property
    def n_layers(self):
        return len(self.n_blocks)

    def per_layer_policy_lr(self):
        return network._per_layer(self.policy_learning_rate, self.n_layers)

    def mask_rate(self):
        if self.uniform_rate is not None:
            return float(self.uniform_rate)
        return float(self.tau)


@dataclass
class TrainState:
    net: network.NetworkParams
    policies: list                      # None for bdnn/dense
    hyper: Hyperparams
    rng: np.random.Generator
    epoch: int = 0
    best_valid_err: float = np.inf
    best_epoch: int = -1
    best_net: network.NetworkParams = None
    best_policies: list = None
    baseline: float = None
    final_test_err: float = None
    metrics: list = field(default_factory=list)


def stream_rng(seed, stream, *extra):
    return np.random.default_rng(np.random.SeedSequence((seed, stream, *extra)))


def measure_sparsity(cache):
    """Mean fraction of active blocks per layer over the minibatch."""
    return [float(lc.sample.mask.bits.mean()) for lc in cache.layers]


def reinforce_update(policies, cache, costs, alpha_pi, baseline=None):
    """Score-gradient descent step on the policy parameters.

    Per layer: params -= alpha_pi[l] * mean_i(weight_i * grad log pi_i),
    with weight_i the example's cost (optionally baseline-centered).
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.shape[0] != cache.batch_size:
        raise ValueError("costs length does not match the forward cache")
    weights = costs - baseline if baseline is not None else costs
    alpha_pi = network._per_layer(alpha_pi, len(policies))
    for l, pol in enumerate(policies):
        lc = cache.layers[l]
        dw, db = policy.grad_log_prob(pol, lc.inputs, lc.sample, weights)
        pol.weights -= alpha_pi[l] * dw
        pol.bias -= alpha_pi[l] * db
    return policies


def _forward_kwargs(hyper):
    if hyper.model == "bdnn":
        return {"uniform_rate": hyper.mask_rate()}
    return {}


def sgd_step(state, x, labels, hyper):
    """One minibatch update; returns the per-batch metrics.

    Both policy update terms (score gradient on the cost, backprop on the
    penalties) are applied in the same step, from the same pre-update
    parameters as the network update.
    """
    policies = state.policies if hyper.model == "condnet" else None
    cache = network.forward(state.net, policies, x, state.rng,
                            **_forward_kwargs(hyper))
    costs = network.nll(cache.probs_out, labels)
    net_grads, pol_grads, breakdown = network.backward_nn(
        state.net, policies, cache, labels,
        lambda_s=hyper.lambda_s, lambda_v=hyper.lambda_v,
        lambda_l2=hyper.lambda_l2, tau=hyper.tau,
        penalty_norm=hyper.penalty_norm,
    )
    if not np.isfinite(breakdown.total):
        raise TrainingDiverged(
            f"non-finite loss at epoch {state.epoch}: nll={breakdown.nll_mean}, "
            f"penalties={breakdown.weighted_penalties}, l2={breakdown.l2}"
        )

    if policies is not None:
        if hyper.use_cost_baseline:
            mean_cost = float(costs.mean())
            if state.baseline is None:
                state.baseline = mean_cost
            reinforce_update(policies, cache, costs,
                             hyper.policy_learning_rate, baseline=state.baseline)
            state.baseline = (hyper.baseline_decay * state.baseline
                              + (1.0 - hyper.baseline_decay) * mean_cost)
        else:
            reinforce_update(policies, cache, costs, hyper.policy_learning_rate)
        for pol, (dw, db) in zip(policies, pol_grads):
            pol.weights -= hyper.learning_rate * dw
            pol.bias -= hyper.learning_rate * db

    alpha = hyper.learning_rate
    for layer, (dw, db) in zip(state.net.hidden, net_grads[:-1]):
        layer.weights -= alpha * dw
        layer.bias -= alpha * db
    state.net.out.weights -= alpha * net_grads[-1][0]
    state.net.out.bias -= alpha * net_grads[-1][1]

    sparsity = measure_sparsity(cache)
    return {
        "loss": breakdown.total,
        "nll": breakdown.nll_mean,
        "l_b": breakdown.l_b,
        "l_e": breakdown.l_e,
        "l_v": breakdown.l_v,
        "sparsity": sparsity,
    }


def evaluate(net, policies, ds, hyper, rng):
    """Classification error over a dataset, one stochastic masked pass."""
    wrong = 0
    for start in range(0, len(ds), EVAL_BATCH):
        x = ds.x[start:start + EVAL_BATCH]
        y = ds.labels[start:start + EVAL_BATCH]
        cache = network.forward(net, policies, x, rng, **_forward_kwargs(hyper))
        wrong += int((network.predictions(cache.probs_out) != y).sum())
    return wrong / len(ds)


def metrics_header(n_layers):
    return (["epoch", "train_nll", "valid_err", "test_err", "l_b", "l_e", "l_v"]
            + [f"mean_sparsity_l{l + 1}" for l in range(n_layers)]
            + ["epoch_wall_ms"])


def write_metrics_csv(rows, n_layers, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_header(n_layers))
        for row in rows:
            writer.writerow(
                [row["epoch"], repr(row["train_nll"]), repr(row["valid_err"]),
                 repr(row["test_err"]), repr(row["l_b"]), repr(row["l_e"]),
                 repr(row["l_v"])]
                + [repr(s) for s in row["sparsity"]]
                + [repr(row["epoch_wall_ms"])]
            )


def train(hyper, train_ds, valid_ds, test_ds, metrics_path=None, log=None):
    """Full training run with early stopping; restores the best parameters.

    Returns the final TrainState; ``state.final_test_err`` holds the test
    error of the restored parameters from a single seeded stochastic pass.
    Trailing minibatches with fewer than 2 examples are dropped (the
    variance penalty is undefined on them).
    """
    hyper.validate()
    for name, ds in (("train", train_ds), ("valid", valid_ds), ("test", test_ds)):
        if len(ds) == 0:
            raise ValueError(f"{name} dataset is empty")
    if train_ds.n_classes != test_ds.n_classes or train_ds.x.shape[1] != test_ds.x.shape[1]:
        raise ValueError("dataset splits disagree on features or classes")

    n_features = train_ds.x.shape[1]
    init_rng = stream_rng(hyper.seed, _INIT_STREAM)
    net = network.init_glorot(
        [n_features, *hyper.hidden_sizes, train_ds.n_classes],
        hyper.block_size, init_rng, hyper.activation,
    )
    policies = network.init_policies(net, n_features) if hyper.model == "condnet" else None
    state = TrainState(net=net, policies=policies, hyper=hyper,
                       rng=stream_rng(hyper.seed, _TRAIN_STREAM))

    initial_loss = None
    growth_streak = 0
    for epoch in range(hyper.max_epochs):
        state.epoch = epoch
        t0 = time.perf_counter()
        perm = state.rng.permutation(len(train_ds))
        batch_metrics = []
        for start in range(0, len(train_ds), hyper.batch_size):
            idx = perm[start:start + hyper.batch_size]
            if idx.size < 2:
                continue
            batch_metrics.append(
                sgd_step(state, train_ds.x[idx], train_ds.labels[idx], hyper)
            )

        mean_loss = float(np.mean([m["loss"] for m in batch_metrics]))
        if initial_loss is None:
            initial_loss = mean_loss
        growth_streak = growth_streak + 1 if mean_loss > 10.0 * initial_loss else 0
        if growth_streak >= 3:
            raise TrainingDiverged(
                f"loss grew 10x above its initial value ({initial_loss:.4g}) "
                f"for 3 consecutive epochs (now {mean_loss:.4g})"
            )

        valid_err = evaluate(net, policies, valid_ds, hyper,
                             stream_rng(hyper.seed, _EVAL_STREAM, epoch, 0))
        test_err = evaluate(net, policies, test_ds, hyper,
                            stream_rng(hyper.seed, _EVAL_STREAM, epoch, 1))
        row = {
            "epoch": epoch,
            "train_nll": float(np.mean([m["nll"] for m in batch_metrics])),
            "valid_err": valid_err,
            "test_err": test_err,
            "l_b": float(np.mean([m["l_b"] for m in batch_metrics])),
            "l_e": float(np.mean([m["l_e"] for m in batch_metrics])),
            "l_v": float(np.mean([m["l_v"] for m in batch_metrics])),
            "sparsity": [float(np.mean([m["sparsity"][l] for m in batch_metrics]))
                         for l in range(hyper.n_layers)],
            "epoch_wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        state.metrics.append(row)
        if log:
            log(f"epoch {epoch}: train_nll={row['train_nll']:.4f} "
                f"valid_err={valid_err:.4f} test_err={test_err:.4f} "
                f"sparsity={['%.3f' % s for s in row['sparsity']]}")

        if valid_err < state.best_valid_err:
            state.best_valid_err = valid_err
            state.best_epoch = epoch
            state.best_net = net.copy()
            state.best_policies = [p.copy() for p in policies] if policies else None
        elif epoch - state.best_epoch >= hyper.patience:
            break

    state.net = state.best_net if state.best_net is not None else net
    state.policies = state.best_policies if state.best_net is not None else policies
    state.final_test_err = evaluate(
        state.net, state.policies, test_ds, hyper,
        stream_rng(hyper.seed, _FINAL_STREAM),
    )
    if metrics_path is not None:
        write_metrics_csv(state.metrics, hyper.n_layers, metrics_path)
    return state
