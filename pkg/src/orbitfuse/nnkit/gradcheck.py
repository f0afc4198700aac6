"""Central finite-difference verification of backward()."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .value import Value, backward, zero_grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    excluded: list[tuple[str, tuple]] = field(default_factory=list)
    worst: tuple[str, tuple] | None = None
    per_parameter: dict[str, float] = field(default_factory=dict)
    raw_max_rel_error: float = 0.0  # before discounting float noise

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:.0e}), "
                f"raw {self.raw_max_rel_error:.3e}, checked={self.checked}, excluded={len(self.excluded)}")


def relative_error(a: float, b: float, noise: float = 0.0) -> float:
    """``|a - b|`` less the finite-difference noise bound, relative to the larger magnitude."""
    return max(abs(a - b) - noise, 0.0) / max(abs(a), abs(b), 1e-8)


def grad_check(closure: Callable[[], Value], params: dict[str, Value], tolerance: float = 1e-4,
               h: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None, kink_tol: float = 1e-2) -> GradCheckReport:
    """Compare analytic gradients of ``closure()`` against central differences.

    ``closure`` must rebuild the graph from the current parameter data on every
    call. With ``max_entries`` set, that many entries per parameter are drawn
    at random instead of checking every entry.

    An entry whose forward and backward one-sided differences disagree by more
    than ``kink_tol`` (relative) sits on a non-differentiable point; it is
    recorded in ``excluded`` and does not count against the check.

    A central difference of a loss ``f`` carries about ``ulp(f) / h`` of
    rounding error; a bound of ``8 eps |f| / h`` is taken off every
    discrepancy before it is made relative. ``raw_max_rel_error`` keeps the
    undiscounted figure.
    """
    rng = rng or np.random.default_rng(0)
    zero_grads(params.values())
    loss = closure()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    f0 = float(loss.data)
    # difference quotients below this are float noise, whatever the gradient scale
    noise = 8 * np.finfo(np.float64).eps * max(abs(f0), 1.0) / h

    worst_err, raw_worst, worst, checked, excluded, per_param = 0.0, 0.0, None, 0, [], {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            indices = np.arange(flat.size)
        param_worst = 0.0
        for i in indices:
            old = flat[i]
            flat[i] = old + h
            f_plus = float(closure().data)
            flat[i] = old - h
            f_minus = float(closure().data)
            flat[i] = old
            fwd, bwd = (f_plus - f0) / h, (f0 - f_minus) / h
            idx = np.unravel_index(i, p.shape)
            if abs(fwd - bwd) > kink_tol * max(abs(fwd), abs(bwd), noise):
                excluded.append((name, idx))
                continue
            numeric = (f_plus - f_minus) / (2 * h)
            exact = float(analytic[name].reshape(-1)[i])
            raw = relative_error(numeric, exact)
            err = relative_error(numeric, exact, noise)
            raw_worst = max(raw_worst, raw)
            checked += 1
            param_worst = max(param_worst, err)
            if err > worst_err:
                worst_err, worst = err, (name, idx)
        per_param[name] = param_worst
    zero_grads(params.values())
    return GradCheckReport(worst_err, tolerance, checked, excluded, worst, per_param, raw_worst)
