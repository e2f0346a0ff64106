"""Null-space machinery: per-layer uncentered feature covariance
accumulation, threshold-scheduled null-space extraction, shared low-rank
merging of consecutive null spaces, a random-merge ablation, and gradient
projection.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, rank_k_truncate, sym_eig, thin_svd

EIG_ZERO_REL = 1e-12
RANK_REL = 1e-10
DROP_TOL = 1e-10


@dataclass(frozen=True)
class LayerNullSpace:
    """Orthonormal basis of the retained update subspace for one layer.

    ``basis`` is (d, k) with orthonormal columns; k may be 0 (no retained
    directions). ``source_task`` records the task after which the basis
    was generated.
    """

    basis: np.ndarray
    source_task: int = 0

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def k(self):
        return self.basis.shape[1]


@dataclass(frozen=True)
class ThresholdSchedule:
    """Linearly decreasing eigenvalue-threshold multiplier across tasks."""

    alpha_max: float
    alpha_min: float
    total_tasks: int

    def __post_init__(self):
        if not self.alpha_min > 0:
            raise ValidationError("alpha_min must be positive")
        if self.alpha_max < self.alpha_min:
            raise ValidationError("alpha_max must be >= alpha_min")
        if self.total_tasks < 1:
            raise ValidationError("total_tasks must be >= 1")


@dataclass(frozen=True)
class RankPolicy:
    """Rank-selection rule for the merged basis: strategy(p, q) * k0."""

    strategy: str = "Avg"
    k0: float = 0.9

    def __post_init__(self):
        if self.strategy not in ("Max", "Avg", "Min"):
            raise ValidationError(f"unknown rank strategy {self.strategy!r}")
        if not 0.0 < self.k0 <= 1.0:
            raise ValidationError("k0 must lie in (0, 1]")

    def target_rank(self, p, q):
        if self.strategy == "Max":
            base = float(max(p, q))
        elif self.strategy == "Min":
            base = float(min(p, q))
        else:
            base = (p + q) / 2.0
        # Round half up; Python's round() would round halves to even.
        return max(1, int(np.floor(base * self.k0 + 0.5)))


class CovarianceStore:
    """Per-layer running uncentered feature covariance across tasks.

    Batches add their Gram matrix; ``finish_task`` advances the task
    counter once per task regardless of how many batches contributed.
    """

    def __init__(self, layer_dims):
        dims = tuple(int(d) for d in layer_dims)
        if any(d < 1 for d in dims):
            raise ValidationError("layer dimensions must be positive")
        self.layer_dims = dims
        self.matrices = [np.zeros((d, d)) for d in dims]
        self.tasks_accumulated = 0

    def add_batch(self, features):
        if len(features) != len(self.layer_dims):
            raise ValidationError(
                f"expected {len(self.layer_dims)} feature blocks, got {len(features)}"
            )
        grams = []
        for layer, block in enumerate(features):
            mat = as_matrix(block, f"features[{layer}]")
            if mat.shape[1] != self.layer_dims[layer]:
                raise ValidationError(
                    f"features[{layer}] has width {mat.shape[1]}, "
                    f"expected {self.layer_dims[layer]}"
                )
            gram = mat.T @ mat
            grams.append((gram + gram.T) / 2.0)
        for layer, gram in enumerate(grams):
            self.matrices[layer] += gram

    def finish_task(self):
        self.tasks_accumulated += 1

    def matrix(self, layer):
        return self.matrices[layer]


def alpha_at(schedule, task_index):
    """Constraint-strength multiplier for 1-based task ``task_index``."""
    t, total = int(task_index), schedule.total_tasks
    if not 1 <= t <= total:
        raise ValidationError(f"task index {t} outside [1, {total}]")
    if total == 1:
        return float(schedule.alpha_max)
    frac = (t - 1) / (total - 1)
    return float(schedule.alpha_max - frac * (schedule.alpha_max - schedule.alpha_min))


def extract_null_space(covariance, alpha, source_task=0):
    """Eigenvectors of ``covariance`` whose eigenvalues fall at or below
    alpha times the smallest eigenvalue, ordered by ascending eigenvalue.

    Eigenvalues below 1e-12 of the largest (including rounding-level
    negatives) are treated as exact zeros, so rank-deficient covariances
    always yield their whole numerical null cluster.
    """
    if alpha < 1.0:
        raise ValidationError(f"alpha must be >= 1, got {alpha}")
    mat = as_matrix(covariance, "covariance")
    eig = sym_eig(mat)
    values = eig.eigenvalues
    top = float(values[0])
    if float(values[-1]) < -1e-8 * max(top, 0.0):
        raise ValidationError("covariance is not positive semi-definite")
    effective = values.copy()
    floor = EIG_ZERO_REL * max(top, 0.0)
    effective[effective <= floor] = 0.0

    threshold = alpha * float(effective[-1])
    selected = np.nonzero(effective <= threshold)[0]
    basis = eig.eigenvectors[:, selected[::-1]].copy()
    return LayerNullSpace(basis=basis, source_task=int(source_task))


def _check_merge_inputs(u_pre, u_cur):
    if u_pre.dim != u_cur.dim:
        raise ValidationError(
            f"layer dimension mismatch: {u_pre.dim} vs {u_cur.dim}"
        )
    if u_pre.k + u_cur.k == 0:
        raise ValidationError("both null spaces are empty")


def merge_shared_low_rank(u_pre, u_cur, policy):
    """Shared basis from the best low-rank approximation of [U_pre, U_cur].

    The returned columns are the left singular vectors with largest
    singular values; the rank target is strategy(p, q) * k0 rounded half
    up, floored at 1 and capped at the numerical rank of the
    concatenation.
    """
    _check_merge_inputs(u_pre, u_cur)
    concat = np.hstack([u_pre.basis, u_cur.basis])
    svd = thin_svd(concat)
    rank = int(np.count_nonzero(svd.sigma > RANK_REL * svd.sigma[0]))
    k = min(policy.target_rank(u_pre.k, u_cur.k), rank)
    return LayerNullSpace(
        basis=svd.u[:, :k].copy(),
        source_task=max(u_pre.source_task, u_cur.source_task),
    )


def _gram_schmidt(columns):
    """Orthonormalize columns in order, dropping near-dependent ones."""
    d = columns.shape[0]
    kept = np.zeros((d, columns.shape[1]))
    count = 0
    for j in range(columns.shape[1]):
        vec = columns[:, j].copy()
        for _ in range(2):
            vec = vec - kept[:, :count] @ (kept[:, :count].T @ vec)
        norm = np.linalg.norm(vec)
        if norm < DROP_TOL:
            continue
        kept[:, count] = vec / norm
        count += 1
    return kept[:, :count]


def merge_random(u_pre, u_cur, k_l, rng_seed):
    """Ablation merge: random half of the columns from each source basis.

    Takes floor(k_l/2) columns from the previous basis and the remainder
    from the current one; a side with too few columns contributes all of
    them and the shortfall is drawn from the other side. The selection is
    re-orthonormalized, dropping near-dependent columns.
    """
    _check_merge_inputs(u_pre, u_cur)
    p, q = u_pre.k, u_cur.k
    k_l = int(k_l)
    if k_l < 1:
        raise ValidationError(f"k_l must be >= 1, got {k_l}")
    if k_l > p + q:
        raise ValidationError(f"k_l={k_l} exceeds available columns {p + q}")

    want_pre = k_l // 2
    want_cur = k_l - want_pre
    if p < want_pre:
        want_cur = min(q, want_cur + (want_pre - p))
        want_pre = p
    if q < want_cur:
        want_pre = min(p, want_pre + (want_cur - q))
        want_cur = q

    rng = np.random.default_rng(rng_seed)
    idx_pre = np.sort(rng.choice(p, size=want_pre, replace=False)) if want_pre else []
    idx_cur = np.sort(rng.choice(q, size=want_cur, replace=False)) if want_cur else []
    picked = np.hstack(
        [u_pre.basis[:, idx_pre], u_cur.basis[:, idx_cur]]
    )
    return LayerNullSpace(
        basis=_gram_schmidt(picked),
        source_task=max(u_pre.source_task, u_cur.source_task),
    )


def project_gradient(gradient, null_space):
    """Project each row of a (out, d) weight gradient onto span(U)."""
    grad = as_matrix(gradient, "gradient")
    if grad.shape[1] != null_space.dim:
        raise ValidationError(
            f"gradient width {grad.shape[1]} does not match layer dim {null_space.dim}"
        )
    if null_space.k == 0:
        return np.zeros_like(grad)
    basis = null_space.basis
    return (grad @ basis) @ basis.T


def truncation_error(u_pre, u_cur, k):
    """Frobenius distance between [U_pre, U_cur] and its rank-k truncation."""
    concat = np.hstack([u_pre.basis, u_cur.basis])
    svd = thin_svd(concat)
    return float(np.linalg.norm(concat - rank_k_truncate(svd, k)))
