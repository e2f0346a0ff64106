"""Accuracy-matrix bookkeeping, the ACC/BWT/LA summary metrics, and
result emission to CSV or JSON.

All metric values are fractions in [0, 1] internally; the CSV surface
formats them as percentages with two decimals.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricUndefinedError, ValidationError


class AccuracyMatrix:
    """Lower-triangular matrix A[j][i]: accuracy of task i after training
    task j (0-based internally, 1-based in emitted column names)."""

    def __init__(self, total_tasks):
        total_tasks = int(total_tasks)
        if total_tasks < 1:
            raise ValidationError("total_tasks must be >= 1")
        self.total_tasks = total_tasks
        self.values = np.full((total_tasks, total_tasks), np.nan)

    def record(self, after_task, task, accuracy):
        j, i = int(after_task), int(task)
        if not 0 <= i <= j < self.total_tasks:
            raise ValidationError(f"entry ({j}, {i}) outside the lower triangle")
        accuracy = float(accuracy)
        if not 0.0 <= accuracy <= 1.0:
            raise ValidationError(f"accuracy {accuracy} outside [0, 1]")
        self.values[j, i] = accuracy

    def entry(self, after_task, task):
        return float(self.values[int(after_task), int(task)])

    def final_row(self):
        return self.values[self.total_tasks - 1, :]

    def diagonal(self):
        return np.diag(self.values)

    def copy(self):
        out = AccuracyMatrix(self.total_tasks)
        out.values = self.values.copy()
        return out


def acc(matrix):
    """Mean accuracy over all tasks after the last task finished."""
    row = matrix.final_row()
    if np.isnan(row).any():
        raise ValidationError("final row incomplete")
    return float(row.mean())


def bwt(matrix):
    """Mean change of each earlier task's accuracy between its own training
    and the end of the sequence; negative values mean forgetting."""
    t = matrix.total_tasks
    if t < 2:
        raise MetricUndefinedError("backward transfer needs at least 2 tasks")
    final = matrix.final_row()[: t - 1]
    diag = matrix.diagonal()[: t - 1]
    if np.isnan(final).any() or np.isnan(diag).any():
        raise ValidationError("matrix incomplete")
    return float((final - diag).mean())


def la(matrix):
    """Mean accuracy of each task right after it was trained."""
    diag = matrix.diagonal()
    if np.isnan(diag).any():
        raise ValidationError("diagonal incomplete")
    return float(diag.mean())


@dataclass(frozen=True)
class BoundReport:
    """Numeric evaluation of one loss-bound inequality: slack = rhs - lhs.

    A negative slack is a finding to report, never an exception.
    """

    theorem: str
    lhs: float
    rhs: float
    slack: float
    inputs: dict = field(default_factory=dict)
    premise_held: bool | None = None

    def to_dict(self):
        out = {
            "theorem": self.theorem,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "inputs": dict(self.inputs),
        }
        if self.premise_held is not None:
            out["premise_held"] = self.premise_held
        return out


@dataclass
class RunResult:
    """One completed sequence run plus the config summary used to emit it."""

    method: str
    seed: int
    k0: float
    alpha_max: float
    alpha_min: float
    beta: float
    matrix: AccuracyMatrix
    bounds: list = field(default_factory=list)

    @property
    def acc(self):
        return acc(self.matrix)

    @property
    def bwt(self):
        if self.matrix.total_tasks < 2:
            return None
        return bwt(self.matrix)

    @property
    def la(self):
        return la(self.matrix)


def _pct(value):
    return "" if value is None else f"{100.0 * value:.2f}"


def _matrix_columns(total_tasks):
    names = []
    for j in range(1, total_tasks + 1):
        for i in range(1, j + 1):
            names.append(f"A_{j}_{i}")
    return names


def emit_results(runs, fmt, path):
    """Write run results to ``path``. CSV has one row per run with the
    metric columns followed by the flattened lower-triangular accuracy
    block; JSON keeps the full nested structure. Output is byte-stable for
    identical inputs."""
    if not runs:
        raise ValidationError("no runs to emit")
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown format {fmt!r}")
    total_tasks = runs[0].matrix.total_tasks
    if any(r.matrix.total_tasks != total_tasks for r in runs):
        raise ValidationError("all runs must share the same task count")

    if fmt == "csv":
        text = _render_csv(runs, total_tasks)
    else:
        text = _render_json(runs)
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def _render_csv(runs, total_tasks):
    header = ["method", "seed", "k0", "alpha_max", "alpha_min", "beta",
              "ACC", "BWT", "LA"] + _matrix_columns(total_tasks)
    lines = [",".join(header)]
    for run in runs:
        cells = [
            run.method,
            str(run.seed),
            repr(float(run.k0)),
            repr(float(run.alpha_max)),
            repr(float(run.alpha_min)),
            repr(float(run.beta)),
            _pct(run.acc),
            _pct(run.bwt),
            _pct(run.la),
        ]
        for j in range(total_tasks):
            for i in range(j + 1):
                cells.append(_pct(run.matrix.entry(j, i)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _matrix_to_nested(matrix):
    out = []
    for j in range(matrix.total_tasks):
        row = []
        for i in range(matrix.total_tasks):
            value = matrix.values[j, i]
            row.append(None if np.isnan(value) else float(value))
        out.append(row)
    return out


def _render_json(runs):
    payload = {"runs": []}
    for run in runs:
        payload["runs"].append({
            "method": run.method,
            "seed": run.seed,
            "k0": float(run.k0),
            "alpha_max": float(run.alpha_max),
            "alpha_min": float(run.alpha_min),
            "beta": float(run.beta),
            "acc": run.acc,
            "bwt": run.bwt,
            "la": run.la,
            "accuracy_matrix": _matrix_to_nested(run.matrix),
            "bounds": [b.to_dict() for b in run.bounds],
        })
    return json.dumps(payload, indent=2) + "\n"
