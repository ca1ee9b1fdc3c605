"""Central finite-difference check of analytic gradients (run in float64)."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError

STEP = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        worst = max(self.per_param, key=self.per_param.get, default=None)
        return f"grad_check max_rel_error={self.max_rel_error:.3e} tol={self.tol:g} worst={worst}"


def grad_check(fn, params, tol=1e-4, step=STEP, max_entries=40, floor=1e-6, seed=0, order=2):
    """Compare ``fn(params) -> (loss, grads)`` against central differences.

    Up to ``max_entries`` randomly chosen entries of each array are probed.
    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``order=4`` uses the five-point stencil, for high-frequency losses where the
    three-point truncation error is visible at float64 step sizes.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    offsets = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[order]
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss, grads = fn(params)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss in grad_check")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tol)
    for name, arr in params.items():
        analytic = np.asarray(grads.get(name, np.zeros_like(arr)), dtype=np.float64)
        flat = arr.reshape(-1)
        picks = np.arange(flat.size) if flat.size <= max_entries else rng.choice(flat.size, max_entries, replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            numeric = 0.0
            for k, weight in offsets:
                flat[i] = orig + k * step
                value, _ = fn(params)
                if not np.isfinite(value):
                    flat[i] = orig
                    raise NumericError("non-finite loss in grad_check", name=name)
                numeric += weight * value
            flat[i] = orig
            numeric /= step
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        report.per_param[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
