"""Central finite differences against the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import backward_gradients


@dataclass
class GradCheckReport:
    errors: dict  # parameter name -> max relative error
    checked: dict  # parameter name -> number of entries perturbed

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def passed(self, tol):
        return self.max_error < tol

    def lines(self):
        width = max((len(n) for n in self.errors), default=4)
        for name, err in self.errors.items():
            yield f"{name:<{width}}  entries={self.checked[name]:<5d} max_rel_err={err:.3e}"


def relative_error(analytic, numeric, abs_floor=0.0):
    """``max|a - n| / max(max|a|, max|n|, abs_floor)``, 0 when both vanish.

    ``abs_floor`` keeps tensors whose true gradient is zero (e.g. a bias that
    a following layer norm cancels) from reporting pure rounding noise as a
    relative error of 1.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), abs_floor)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def finite_difference_check(f, params, h=1e-5, max_entries=None, rng=None, abs_floor=1e-6):
    """Compare autodiff gradients of scalar ``f(params)`` with central differences.

    ``f`` must rebuild its graph from ``params`` on every call. With
    ``max_entries`` set, only that many randomly chosen entries per tensor are
    perturbed (the relative error is then taken over those entries).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    loss = f(params)
    backward_gradients(loss, params)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    errors, checked = {}, {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(params).data)
            flat[i] = orig - h
            down = float(f(params).data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric, abs_floor)
        checked[name] = len(idx)
    return GradCheckReport(errors, checked)
