"""Small multi-head MLP with manual forward/backward passes.

The backbone is a stack of linear layers with a configurable activation
between and after them; every task owns a private linear classifier head.
Forward passes record each linear layer's input batch, which is both what
backpropagation consumes and what the covariance store accumulates.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InternalInvariantError, ValidationError
from .linalg import as_matrix

ACTIVATIONS = ("relu", "identity")


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


class LinearLayer:
    def __init__(self, weight, bias):
        self.weight = weight  # (out, in)
        self.bias = bias  # (out,) or None


def _init_linear(rng, fan_in, fan_out, activation, use_bias):
    gain = 2.0 if activation == "relu" else 1.0
    weight = rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in)
    bias = np.zeros(fan_out) if use_bias else None
    return LinearLayer(weight, bias)


class MlpModel:
    """Shared backbone plus one classifier head per seen task."""

    def __init__(self, input_dim, hidden, rng, activation="relu", use_bias=True,
                 feature_capture_enabled=True):
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        dims = [int(input_dim)] + [int(h) for h in hidden]
        if any(d < 1 for d in dims):
            raise ValidationError("layer widths must be positive")
        self.activation = activation
        self.use_bias = bool(use_bias)
        self.feature_capture_enabled = bool(feature_capture_enabled)
        self.backbone = [
            _init_linear(rng, dims[i], dims[i + 1], activation, use_bias)
            for i in range(len(dims) - 1)
        ]
        self.dims = dims
        self.heads = {}
        self._version = 0

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def feature_dims(self):
        """Input width of each backbone linear layer."""
        return tuple(self.dims[:-1])

    @property
    def head_input_dim(self):
        return self.dims[-1]

    def add_head(self, task_id, n_classes, rng):
        head = _init_linear(rng, self.head_input_dim, int(n_classes), "identity",
                            use_bias=True)
        self.heads[int(task_id)] = head
        self.mark_mutated()
        return head

    def mark_mutated(self):
        self._version += 1

    def backbone_checksum(self):
        parts = []
        for layer in self.backbone:
            parts.append(layer.weight.tobytes())
            if layer.bias is not None:
                parts.append(layer.bias.tobytes())
        return b"".join(parts)


@dataclass
class ForwardTrace:
    """Artifacts of one forward pass: per-layer input batches and logits."""

    layer_inputs: list
    pre_activations: list
    head_input: np.ndarray
    logits: np.ndarray
    task_id: int
    model_version: int


@dataclass
class GradientSet:
    """Gradients for every backbone layer and the active head."""

    weights: list
    biases: list
    head_weight: np.ndarray
    head_bias: np.ndarray
    task_id: int = 0
    extras: dict = field(default_factory=dict)


def forward(model, inputs, task_id):
    """Run the network on a batch, capturing each linear layer's input."""
    x = as_matrix(inputs, "inputs")
    if x.shape[1] != model.input_dim:
        raise ValidationError(
            f"input width {x.shape[1]} does not match model input dim {model.input_dim}"
        )
    task_id = int(task_id)
    if task_id not in model.heads:
        raise ValidationError(f"no head registered for task {task_id}")

    layer_inputs = []
    pre_activations = []
    act = x
    for layer in model.backbone:
        layer_inputs.append(act)
        z = act @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        pre_activations.append(z)
        act = _activate(z, model.activation)
    head = model.heads[task_id]
    logits = act @ head.weight.T + head.bias
    return ForwardTrace(
        layer_inputs=layer_inputs,
        pre_activations=pre_activations,
        head_input=act,
        logits=logits,
        task_id=task_id,
        model_version=model._version,
    )


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _check_labels(labels, n_classes, batch):
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.shape[0] != batch:
        raise ValidationError("labels must be a vector matching the batch size")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ValidationError("labels must be integer class indices")
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    return lab


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class."""
    z = as_matrix(logits, "logits")
    lab = _check_labels(labels, z.shape[1], z.shape[0])
    logp = _log_softmax(z)
    return float(-logp[np.arange(z.shape[0]), lab].mean())


def distillation_loss(recorded, current, tau):
    """Tempered cross-entropy between softened recorded and current outputs."""
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    rec = as_matrix(recorded, "recorded")
    cur = as_matrix(current, "current")
    if rec.shape != cur.shape:
        raise ValidationError(f"shape mismatch {rec.shape} vs {cur.shape}")
    target = softmax(rec / tau)
    logq = _log_softmax(cur / tau)
    return float(-(target * logq).sum(axis=1).mean())


def backward(model, trace, labels, distill_target=None, beta=0.0, tau=2.0):
    """Exact gradients of cross-entropy plus beta times the distillation
    loss, for all backbone parameters and the active head."""
    if trace.model_version != model._version:
        raise ValidationError("stale trace: model mutated since the forward pass")
    if beta < 0:
        raise ValidationError("beta must be >= 0")
    logits = trace.logits
    batch, n_classes = logits.shape
    lab = _check_labels(labels, n_classes, batch)

    probs = softmax(logits)
    probs[np.arange(batch), lab] -= 1.0
    dlogits = probs / batch
    if distill_target is not None and beta != 0.0:
        if tau <= 0:
            raise ValidationError(f"tau must be positive, got {tau}")
        target = as_matrix(distill_target, "distill_target")
        if target.shape != logits.shape:
            raise ValidationError(
                f"distill target shape {target.shape} does not match logits {logits.shape}"
            )
        dlogits = dlogits + beta * (softmax(logits / tau) - softmax(target / tau)) / (tau * batch)

    head = model.heads[trace.task_id]
    head_weight_grad = dlogits.T @ trace.head_input
    head_bias_grad = dlogits.sum(axis=0)

    weight_grads = [None] * len(model.backbone)
    bias_grads = [None] * len(model.backbone)
    dact = dlogits @ head.weight
    for l in range(len(model.backbone) - 1, -1, -1):
        dz = dact * _activate_grad(trace.pre_activations[l], model.activation)
        weight_grads[l] = dz.T @ trace.layer_inputs[l]
        bias_grads[l] = dz.sum(axis=0) if model.use_bias else None
        dact = dz @ model.backbone[l].weight
    return GradientSet(
        weights=weight_grads,
        biases=bias_grads,
        head_weight=head_weight_grad,
        head_bias=head_bias_grad,
        task_id=trace.task_id,
    )


def record_distill_targets(model, inputs, labels, task_id, n_classes, rng,
                           epochs=20, learning_rate=0.1):
    """Train a fresh classifier head on the frozen backbone and record its
    logits for every sample.

    The trained head stays registered for ``task_id`` (joint training
    continues from it). Only meaningful from the second task on.
    """
    task_id = int(task_id)
    if task_id <= 1:
        raise ValidationError("distillation targets are only recorded for tasks > 1")
    x = as_matrix(inputs, "inputs")
    before = model.backbone_checksum()

    model.add_head(task_id, n_classes, rng)
    head = model.heads[task_id]
    for _ in range(int(epochs)):
        trace = forward(model, x, task_id)
        grads = backward(model, trace, labels)
        head.weight -= learning_rate * grads.head_weight
        head.bias -= learning_rate * grads.head_bias
        model.mark_mutated()

    recorded = forward(model, x, task_id).logits.copy()
    if model.backbone_checksum() != before:
        raise InternalInvariantError("backbone mutated during classifier warm-up")
    return recorded


def predict_accuracy(model, inputs, labels, task_id):
    """Fraction of samples whose argmax logit matches the label."""
    trace = forward(model, inputs, task_id)
    lab = _check_labels(labels, trace.logits.shape[1], trace.logits.shape[0])
    return float((trace.logits.argmax(axis=1) == lab).mean())
