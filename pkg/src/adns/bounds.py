"""Numeric verification of the plasticity and stability loss bounds on a
quadratic testbed.

The testbed gives every layer its own least-squares objective over fixed
per-layer features, so the full objective is quadratic in the weights,
its smoothness constant is the exact top Hessian eigenvalue, and
full-batch gradients make the variance term vanish. Both bound sides are
then computable from a recorded training trace, including the sign of
the inner-product premise the stability argument relies on.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import sym_eig, thin_svd
from .metrics import BoundReport
from .nullspace import LayerNullSpace, extract_null_space, project_gradient

PREMISE_TOL = 1e-12


@dataclass
class QuadraticTask:
    """Per-layer least-squares objective: sum_l ||X_l W_l^T - Y_l||^2 / (2n)."""

    features: list
    targets: list

    def loss(self, weights):
        total = 0.0
        for x, y, w in zip(self.features, self.targets, weights):
            resid = x @ w.T - y
            total += float(np.sum(resid * resid)) / (2.0 * x.shape[0])
        return total

    def gradients(self, weights):
        out = []
        for x, y, w in zip(self.features, self.targets, weights):
            resid = x @ w.T - y
            out.append(resid.T @ x / x.shape[0])
        return out

    def layer_smoothness(self):
        """Exact per-layer Hessian top eigenvalues (1/n X^T X blocks)."""
        out = []
        for x in self.features:
            hess = x.T @ x / x.shape[0]
            out.append(float(sym_eig((hess + hess.T) / 2.0).eigenvalues[0]))
        return out


def summed_smoothness(tasks):
    """Exact top Hessian eigenvalue of the summed loss of several tasks."""
    values = []
    n_layers = len(tasks[0].features)
    for layer in range(n_layers):
        hess = sum(t.features[layer].T @ t.features[layer] / t.features[layer].shape[0]
                   for t in tasks)
        values.append(float(sym_eig((hess + hess.T) / 2.0).eigenvalues[0]))
    return max(values)


@dataclass
class QuadraticTrace:
    """Per-step record of a projected run on the quadratic testbed."""

    bases: list
    eta: float
    lf: float
    sigma: float
    loss_current: list = field(default_factory=list)
    loss_old: list = field(default_factory=list)
    grads_current: list = field(default_factory=list)
    grads_old: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.grads_current)


def _check_trace(trace):
    if trace.steps == 0:
        raise ValidationError("trace has no recorded steps")
    if len(trace.loss_current) != trace.steps + 1 or len(trace.loss_old) != trace.steps + 1:
        raise ValidationError("trace losses must cover every step plus the final point")
    if len(trace.grads_old) != trace.steps:
        raise ValidationError("trace is missing old-task gradients")


def projector_spectral_norm(null_space):
    """Spectral norm of U U^T, computed from the top singular value of U."""
    if null_space.k == 0:
        return 0.0
    top = float(thin_svd(null_space.basis).sigma[0])
    return top * top


def verify_plasticity_bound(trace, eta, lf, sigma):
    """Evaluate the current-task loss bound over a recorded trace."""
    _check_trace(trace)
    steps = trace.steps
    complement_term = 0.0
    full_grad_term = 0.0
    for grads in trace.grads_current:
        for g, ns in zip(grads, trace.bases):
            residual = g - project_gradient(g, ns)
            complement_term += float(np.sum(residual * residual))
            full_grad_term += float(np.sum(g * g))
    lhs = trace.loss_current[-1]
    rhs = (trace.loss_current[0]
           + 0.5 * eta * complement_term
           - 0.5 * eta * full_grad_term
           + 0.5 * steps * lf * eta**2 * sigma**2)
    return BoundReport(
        theorem="plasticity",
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        inputs={
            "eta": eta,
            "L_f": lf,
            "sigma": sigma,
            "steps": steps,
            "step_size_ok": bool(eta <= 1.0 / lf),
        },
    )


def verify_stability_bound(trace, eta, lf):
    """Evaluate the old-task forgetting bound over a recorded trace,
    flagging whether the non-positive inner-product premise held at every
    step."""
    _check_trace(trace)
    norms = [projector_spectral_norm(ns) for ns in trace.bases]
    first_order = 0.0
    second_order = 0.0
    premise_held = True
    for grads_cur, grads_old in zip(trace.grads_current, trace.grads_old):
        inner = 0.0
        scale = 0.0
        for ns, p_norm, g_cur, g_old in zip(trace.bases, norms, grads_cur, grads_old):
            g_cur_norm = float(np.linalg.norm(g_cur))
            g_old_norm = float(np.linalg.norm(g_old))
            first_order += p_norm * g_cur_norm * g_old_norm
            second_order += p_norm**2 * g_cur_norm**2
            delta = project_gradient(g_cur, ns)
            inner += float(np.sum(delta * g_old))
            scale += float(np.linalg.norm(delta)) * g_old_norm
        if inner > PREMISE_TOL * (1.0 + scale):
            premise_held = False
    lhs = trace.loss_old[-1] - trace.loss_old[0]
    rhs = eta * first_order + 0.5 * lf * eta**2 * second_order
    return BoundReport(
        theorem="stability",
        lhs=lhs,
        rhs=rhs,
        slack=rhs - lhs,
        inputs={"eta": eta, "L_f": lf, "steps": trace.steps},
        premise_held=premise_held,
    )


@dataclass(frozen=True)
class TestbedSpec:
    """Shape and conditioning of the quadratic verification testbed."""

    samples: int = 60
    layer_dims: tuple = (12, 10)
    layer_outputs: tuple = (8, 6)
    rank_fraction: float = 0.5
    deficiency_noise: float = 0.0
    alpha: float = 3.0
    steps: int = 25
    eta: float | None = None
    eta_scale: float = 0.9
    old_tasks: int = 1
    pretrain_steps: int = 40
    projector: str = "extracted"  # extracted | zero | full

    def __post_init__(self):
        if self.projector not in ("extracted", "zero", "full"):
            raise ValidationError(f"unknown projector mode {self.projector!r}")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if len(self.layer_dims) != len(self.layer_outputs):
            raise ValidationError("layer_dims and layer_outputs must align")


def _make_task(rng, spec, deficient):
    features, targets = [], []
    for d, out in zip(spec.layer_dims, spec.layer_outputs):
        if deficient:
            rank = max(1, int(np.floor(spec.rank_fraction * d)))
            x = rng.standard_normal((spec.samples, rank)) @ rng.standard_normal((rank, d))
            if spec.deficiency_noise > 0:
                x = x + spec.deficiency_noise * rng.standard_normal(x.shape)
        else:
            x = rng.standard_normal((spec.samples, d))
        features.append(x)
        targets.append(rng.standard_normal((spec.samples, out)))
    return QuadraticTask(features, targets)


def run_quadratic_testbed(seed, spec=TestbedSpec()):
    """Pretrain on rank-deficient old tasks, extract the per-layer null
    spaces, then run projected steps on a fresh task while recording the
    trace both bounds need."""
    rng = np.random.default_rng([int(seed), 7919])
    old_tasks = [_make_task(rng, spec, deficient=True) for _ in range(spec.old_tasks)]
    current = _make_task(rng, spec, deficient=False)

    lf_candidates = current.layer_smoothness() + [summed_smoothness(old_tasks)]
    for task in old_tasks:
        lf_candidates.extend(task.layer_smoothness())
    lf = max(lf_candidates)
    eta = spec.eta if spec.eta is not None else spec.eta_scale / lf

    weights = [0.5 * rng.standard_normal((out, d))
               for d, out in zip(spec.layer_dims, spec.layer_outputs)]

    def old_loss(w):
        return sum(task.loss(w) for task in old_tasks)

    def old_grads(w):
        grads = [np.zeros_like(g) for g in weights]
        for task in old_tasks:
            for layer, g in enumerate(task.gradients(w)):
                grads[layer] = grads[layer] + g
        return grads

    eta_pre = 0.9 / lf
    for _ in range(spec.pretrain_steps):
        for layer, g in enumerate(old_grads(weights)):
            weights[layer] = weights[layer] - eta_pre * g

    bases = []
    for layer, d in enumerate(spec.layer_dims):
        if spec.projector == "zero":
            bases.append(LayerNullSpace(np.zeros((d, 0))))
        elif spec.projector == "full":
            bases.append(LayerNullSpace(np.eye(d)))
        else:
            cov = sum(task.features[layer].T @ task.features[layer]
                      for task in old_tasks)
            bases.append(extract_null_space((cov + cov.T) / 2.0, spec.alpha))

    trace = QuadraticTrace(bases=bases, eta=eta, lf=lf, sigma=0.0)
    trace.loss_current.append(current.loss(weights))
    trace.loss_old.append(old_loss(weights))
    for _ in range(spec.steps):
        g_cur = current.gradients(weights)
        g_old = old_grads(weights)
        trace.grads_current.append(g_cur)
        trace.grads_old.append(g_old)
        for layer, (g, ns) in enumerate(zip(g_cur, bases)):
            weights[layer] = weights[layer] - eta * project_gradient(g, ns)
        trace.loss_current.append(current.loss(weights))
        trace.loss_old.append(old_loss(weights))
    return trace


def verify_testbed(seed, spec=TestbedSpec()):
    """Run the testbed once and evaluate both bounds."""
    trace = run_quadratic_testbed(seed, spec)
    plasticity = verify_plasticity_bound(trace, trace.eta, trace.lf, trace.sigma)
    stability = verify_stability_bound(trace, trace.eta, trace.lf)
    return plasticity, stability
