"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wavrefine.autograd.tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def __str__(self):
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.max_rel_error.items())
        return f"{'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:.0e}): {parts}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    fn,
    inputs: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    max_checks: int | None = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop against central differences for every named input.

    ``fn`` takes keyword Tensors and returns a Tensor of any shape. The
    output is contracted with a fixed random weighting so one backward pass
    checks a random direction of the full Jacobian. At most ``max_checks``
    randomly chosen entries per input are differenced.
    """
    rng = np.random.default_rng(seed)
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in arrays.items()}
    out = fn(**tensors)
    weights = rng.standard_normal(out.shape)
    out.backward(weights)

    def objective(values):
        res = fn(**{k: Tensor(v) for k, v in values.items()})
        return float(np.sum(res.data * weights))

    report = GradCheckReport(tolerance)
    for name, base in arrays.items():
        analytic = tensors[name].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        flat = np.arange(base.size)
        if max_checks is not None and base.size > max_checks:
            flat = rng.choice(base.size, size=max_checks, replace=False)
        errs = []
        for i in flat:
            idx = np.unravel_index(i, base.shape)
            vals = dict(arrays)
            plus = base.copy()
            plus[idx] += h
            minus = base.copy()
            minus[idx] -= h
            vals[name] = plus
            fp = objective(vals)
            vals[name] = minus
            fm = objective(vals)
            numeric = (fp - fm) / (2 * h)
            errs.append(relative_error(np.asarray(analytic[idx]), np.asarray(numeric)))
        report.max_rel_error[name] = float(np.max(errs)) if errs else 0.0
    return report
