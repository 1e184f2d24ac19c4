"""Noise schedules, closed-form forward corruption and the ancestral step.

Timesteps are 1-based (``t`` in ``1..T``); internal arrays are 0-based, so
the coefficients for step ``t`` live at index ``t - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

SIGMA_RULES = ("beta", "posterior")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_start: float
    beta_end: float
    sigma_rule: str = "beta"

    def check_t(self, t):
        t_arr = np.asarray(t)
        if t_arr.dtype.kind not in "iu" or np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ContractError(f"timestep {t!r} outside 1..{self.T}")
        return t_arr - 1

    def params(self):
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_rule": self.sigma_rule,
        }


def build_linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02, sigma_rule="beta"):
    """Linearly spaced betas; ``sigma_rule`` picks sigma_t^2 = beta_t or the posterior variance."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ContractError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ContractError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if sigma_rule not in SIGMA_RULES:
        raise ContractError(f"sigma_rule must be one of {SIGMA_RULES}, got {sigma_rule!r}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if sigma_rule == "beta":
        sigma = np.sqrt(beta)
    else:
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = np.sqrt(beta * (1.0 - prev) / (1.0 - alpha_bar))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(int(T), beta, alpha, alpha_bar, sigma, float(beta_start), float(beta_end), sigma_rule)


def schedule_from_params(params):
    return build_linear_schedule(
        int(params["T"]), float(params["beta_start"]), float(params["beta_end"]),
        params.get("sigma_rule", "beta"),
    )


def _per_leading(coef, like):
    # scalar or per-batch-element coefficient broadcast against a [B, ...] array
    coef = np.asarray(coef, dtype=like.dtype)
    if coef.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def forward_diffuse(y0, t, epsilon, schedule):
    """Y_t = sqrt(abar_t) Y_0 + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar or one timestep per leading-axis element.
    """
    y0 = np.asarray(y0)
    epsilon = np.asarray(epsilon, dtype=y0.dtype)
    if y0.shape != epsilon.shape:
        raise ShapeError(f"signal {y0.shape} and noise {epsilon.shape} differ")
    ab = schedule.alpha_bar[schedule.check_t(t)]
    return _per_leading(np.sqrt(ab), y0) * y0 + _per_leading(np.sqrt(1.0 - ab), y0) * epsilon


def ancestral_step(yt, eps_hat, t, z, schedule):
    """One reverse step Y_t -> Y_{t-1}; ``z`` is ignored (treated as 0) at t = 1."""
    yt = np.asarray(yt)
    eps_hat = np.asarray(eps_hat, dtype=yt.dtype)
    if yt.shape != eps_hat.shape:
        raise ShapeError(f"signal {yt.shape} and predicted noise {eps_hat.shape} differ")
    i = int(schedule.check_t(t))
    a = schedule.alpha[i]
    ab = schedule.alpha_bar[i]
    mean = (yt - ((1.0 - a) / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if t == 1 or z is None:
        return mean.astype(yt.dtype, copy=False)
    z = np.asarray(z, dtype=yt.dtype)
    if z.shape != yt.shape:
        raise ShapeError(f"signal {yt.shape} and injected noise {z.shape} differ")
    return (mean + schedule.sigma[i] * z).astype(yt.dtype, copy=False)


def gaussian_optimal_eps(yt, t, schedule, data_mean, data_std):
    """E[eps | Y_t] when every entry of Y_0 is iid N(data_mean, data_std^2)."""
    ab = schedule.alpha_bar[schedule.check_t(t)]
    ab = _per_leading(ab, np.asarray(yt, dtype=np.float64))
    marginal_var = ab * data_std**2 + (1.0 - ab)
    return np.sqrt(1.0 - ab) * (yt - np.sqrt(ab) * data_mean) / marginal_var
