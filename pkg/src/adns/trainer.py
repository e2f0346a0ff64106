"""The continual-learning loop: per-task training with projected updates,
covariance accumulation, null-space extraction and merging, and the
intra-task distillation wiring.

One run is sequential by contract; independent runs (seeds, sweep points)
may execute in parallel because every run owns its state exclusively.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .metrics import AccuracyMatrix
from .net import (MlpModel, backward, cross_entropy, distillation_loss, forward,
                  predict_accuracy, record_distill_targets)
from .nullspace import (CovarianceStore, RankPolicy, ThresholdSchedule, alpha_at,
                        extract_null_space, merge_random, merge_shared_low_rank,
                        project_gradient)

log = logging.getLogger("adns")

METHODS = ("Vanilla", "PureNullSpace", "AdNS", "AdNSRandomMerge")
OPTIMIZERS = ("SGD", "AdamProjected")


@dataclass(frozen=True)
class TrainerConfig:
    method: str = "AdNS"
    learning_rate: float = 0.1
    first_task_learning_rate: float | None = None
    epochs: int = 20
    batch_size: int = 32
    beta: float = 0.0
    tau: float = 2.0
    alpha_max: float = 8.0
    alpha_min: float = 2.0
    rank_policy: RankPolicy = field(default_factory=RankPolicy)
    optimizer: str = "SGD"
    seed: int = 0
    hidden: tuple = (64, 64)
    activation: str = "relu"
    use_bias: bool = True
    record_epochs: int = 20
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.first_task_learning_rate is not None and not self.first_task_learning_rate > 0:
            raise ValidationError("first_task_learning_rate must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")
        if self.method == "Vanilla" and self.beta != 0.0:
            raise ValidationError("Vanilla disables distillation: beta must be 0")
        if not len(self.hidden) >= 1:
            raise ValidationError("at least one hidden layer is required")

    def schedule_for(self, total_tasks):
        return ThresholdSchedule(self.alpha_max, self.alpha_min, total_tasks)


@dataclass
class RunState:
    """Everything a sequence run carries between tasks."""

    model: MlpModel
    covariance: CovarianceStore | None
    bases: list | None  # per-backbone-layer LayerNullSpace after task >= 1
    task_index: int  # number of completed tasks
    schedule: ThresholdSchedule


def _task_rng(config, task_id, stream_tag=0):
    return np.random.default_rng([config.seed, stream_tag, task_id])


def init_state(config, input_dim, total_tasks):
    rng = _task_rng(config, 0)
    model = MlpModel(input_dim, config.hidden, rng, activation=config.activation,
                     use_bias=config.use_bias)
    covariance = None
    if config.method != "Vanilla":
        covariance = CovarianceStore(model.feature_dims)
    return RunState(model=model, covariance=covariance, bases=None, task_index=0,
                    schedule=config.schedule_for(total_tasks))


class _AdamState:
    """Per-parameter Adam moments, maintained on raw gradients."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step_direction(self, key, grad):
        if key not in self.m:
            self.m[key] = np.zeros_like(grad)
            self.v[key] = np.zeros_like(grad)
        self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
        self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
        m_hat = self.m[key] / (1 - self.beta1 ** self.t)
        v_hat = self.v[key] / (1 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def advance(self):
        self.t += 1


def apply_update(model, grads, bases, config, lr, adam=None):
    """One parameter update. Backbone weight steps are projected through
    the per-layer bases when given; biases and the active head always take
    the raw step."""
    if bases is not None and len(bases) != len(model.backbone):
        raise ValidationError("need one projection basis per backbone layer")
    use_adam = config.optimizer == "AdamProjected"
    if use_adam:
        if adam is None:
            raise ValidationError("AdamProjected requires optimizer state")
        adam.advance()

    def direction(key, grad):
        return adam.step_direction(key, grad) if use_adam else grad

    for layer_idx, layer in enumerate(model.backbone):
        step = direction(("w", layer_idx), grads.weights[layer_idx])
        if bases is not None:
            step = project_gradient(step, bases[layer_idx])
        layer.weight -= lr * step
        if layer.bias is not None and grads.biases[layer_idx] is not None:
            layer.bias -= lr * direction(("b", layer_idx), grads.biases[layer_idx])
    head = model.heads[grads.task_id]
    head.weight -= lr * direction(("hw", grads.task_id), grads.head_weight)
    head.bias -= lr * direction(("hb", grads.task_id), grads.head_bias)
    model.mark_mutated()
    return model


def _epoch_lr(config, task_number, epoch):
    lr = config.learning_rate
    if task_number == 1 and config.first_task_learning_rate is not None:
        lr = config.first_task_learning_rate
    for boundary in config.lr_decay_epochs:
        if epoch >= boundary:
            lr *= config.lr_decay_factor
    return lr


def collect_features(model, inputs, task_id):
    """Per-layer input features from an evaluation-mode full forward pass."""
    trace = forward(model, inputs, task_id)
    return trace.layer_inputs


def train_task(state, task, config):
    """Train one task in place and refresh the null-space bases.

    The first task trains unprojected; later tasks project every backbone
    weight gradient through the kept bases. After convergence the task's
    features are accumulated into the covariance store, a candidate null
    space is extracted at the scheduled threshold, and the kept bases are
    updated per the configured method.
    """
    t = state.task_index + 1
    if t > state.schedule.total_tasks:
        raise ValidationError("more tasks than the configured schedule allows")
    rng = _task_rng(config, t)
    model = state.model
    project = config.method != "Vanilla" and t > 1
    if project and state.bases is None:
        raise ValidationError("projection requested but no bases are available")

    features = task.features
    labels = task.labels
    distilling = config.beta > 0.0 and t > 1
    if distilling:
        recorded = record_distill_targets(
            model, features, labels, t, task.class_count, rng,
            epochs=config.record_epochs, learning_rate=_epoch_lr(config, t, 0))
    else:
        recorded = None
        model.add_head(t, task.class_count, rng)

    adam = _AdamState() if config.optimizer == "AdamProjected" else None
    n = task.n
    for epoch in range(config.epochs):
        lr = _epoch_lr(config, t, epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        epoch_distill = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            trace = forward(model, features[idx], t)
            target = recorded[idx] if recorded is not None else None
            grads = backward(model, trace, labels[idx], distill_target=target,
                             beta=config.beta, tau=config.tau)
            epoch_loss += cross_entropy(trace.logits, labels[idx])
            if target is not None:
                epoch_distill += distillation_loss(target, trace.logits, config.tau)
            batches += 1
            apply_update(model, grads, state.bases if project else None,
                         config, lr, adam)
        log.info("task=%d epoch=%d loss=%.6f distill=%.6f",
                 t, epoch + 1, epoch_loss / batches, epoch_distill / batches)

    if config.method != "Vanilla":
        state.covariance.add_batch(collect_features(model, features, t))
        state.covariance.finish_task()
        alpha = alpha_at(state.schedule, t)
        current = [
            extract_null_space(state.covariance.matrix(layer), alpha, source_task=t)
            for layer in range(len(model.backbone))
        ]
        if t == 1 or config.method == "PureNullSpace":
            state.bases = current
        elif config.method == "AdNS":
            state.bases = [
                merge_shared_low_rank(pre, cur, config.rank_policy)
                for pre, cur in zip(state.bases, current)
            ]
        else:  # AdNSRandomMerge
            merged = []
            for layer, (pre, cur) in enumerate(zip(state.bases, current)):
                k_l = min(config.rank_policy.target_rank(pre.k, cur.k),
                          pre.k + cur.k)
                seed = np.random.SeedSequence(
                    [config.seed, t, layer, 404]).generate_state(1)[0]
                merged.append(merge_random(pre, cur, k_l, int(seed)))
            state.bases = merged
    state.task_index = t
    return state


def run_sequence(tasks, config):
    """Train the task list in order, evaluating all seen tasks after each
    one; returns the lower-triangular accuracy matrix and the final state."""
    if not tasks:
        raise ValidationError("need at least one task")
    train_sets = [pair[0] for pair in tasks]
    test_sets = [pair[1] for pair in tasks]
    total = len(tasks)
    state = init_state(config, train_sets[0].dim, total)
    matrix = AccuracyMatrix(total)
    for j, train in enumerate(train_sets):
        train_task(state, train, config)
        for i in range(j + 1):
            accuracy = predict_accuracy(state.model, test_sets[i].features,
                                        test_sets[i].labels, i + 1)
            matrix.record(j, i, accuracy)
    return matrix, state
