"""Quantitative diagnostics: PSNR, point-set metrics and forward-process moments.

Chamfer distance here is the squared-Euclidean, mean-aggregated form::

    CD(a, b) = mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2

Coverage and MMD use it as the set distance, following the usual
point-cloud generative-model conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .schedule import forward_diffuse

PSNR_CAP = 99.0
SIGNAL_PEAK = 2.0
CHAMFER_CONVENTION = "squared-euclidean, mean per direction, summed"
_CHUNK = 2048


def psnr(a, b, peak=SIGNAL_PEAK):
    """10 log10(peak^2 / MSE) in dB, capped at 99 dB."""
    if a.coords.shape != b.coords.shape or not np.array_equal(a.coords, b.coords):
        raise ShapeError("psnr needs both fields on identical coordinates")
    if a.signals.shape != b.signals.shape:
        raise ShapeError(f"signal shapes differ: {a.signals.shape} vs {b.signals.shape}")
    mse = float(np.mean((np.asarray(a.signals, np.float64) - np.asarray(b.signals, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse))


def _points(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise ContractError(f"point sets must be non-empty [k, d] arrays, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ContractError("point sets must be finite")
    return p


def _nearest_sq(a, b):
    """For each row of a, the squared distance to its nearest row of b."""
    out = np.empty(len(a))
    step = max(1, _CHUNK * 64 // max(len(b), 1))
    for s in range(0, len(a), step):
        diff = a[s:s + step, None, :] - b[None, :, :]
        out[s:s + step] = np.sum(diff * diff, axis=2).min(axis=1)
    return out


def chamfer(a, b):
    """Symmetric squared Chamfer distance (exhaustive search)."""
    a = _points(a)
    b = _points(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return float(_nearest_sq(a, b).mean() + _nearest_sq(b, a).mean())


def chamfer_matrix(generated, reference):
    """[n_generated, n_reference] matrix of Chamfer distances."""
    if len(generated) == 0 or len(reference) == 0:
        raise ContractError("coverage/MMD need non-empty lists of point sets")
    return np.array([[chamfer(g, r) for r in reference] for g in generated])


def coverage(generated, reference, distances=None):
    """Fraction of reference sets that are the nearest reference of some generated set."""
    d = chamfer_matrix(generated, reference) if distances is None else distances
    matched = np.unique(np.argmin(d, axis=1))
    return len(matched) / d.shape[1]


def mmd_chamfer(generated, reference, distances=None):
    """Mean over reference sets of the minimum Chamfer distance to any generated set."""
    d = chamfer_matrix(generated, reference) if distances is None else distances
    return float(np.mean(np.min(d, axis=0)))


def field_points(fld, threshold=0.5):
    """Coordinates whose occupancy (signal mapped from [-1, 1] to [0, 1]) exceeds ``threshold``.

    Multi-channel signals are averaged first. 2D coordinates are padded with
    z = 0 so every point set lives in R^3.
    """
    occupancy = (np.asarray(fld.signals, np.float64).mean(axis=1) + 1.0) / 2.0
    pts = np.asarray(fld.coords, np.float64)[occupancy > threshold]
    if pts.shape[1] < 3:
        pts = np.pad(pts, ((0, 0), (0, 3 - pts.shape[1])))
    return pts


@dataclass
class MomentReport:
    t: int
    expected_mean: np.ndarray
    expected_var: float
    empirical_mean: np.ndarray
    empirical_var: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray

    @property
    def max_abs_z(self):
        return float(max(np.max(np.abs(self.z_mean)), np.max(np.abs(self.z_var))))

    def to_dict(self):
        return {
            "t": self.t,
            "expected_mean": self.expected_mean.tolist(),
            "expected_var": self.expected_var,
            "empirical_mean": self.empirical_mean.tolist(),
            "empirical_var": self.empirical_var.tolist(),
            "z_mean": self.z_mean.tolist(),
            "z_var": self.z_var.tolist(),
            "max_abs_z": self.max_abs_z,
        }


def moment_diagnostics(y0, t, schedule, n_draws, rng):
    """Monte-Carlo mean/variance of forward_diffuse against the closed form.

    z-scores use the standard errors sqrt(v / n) for the mean and
    v * sqrt(2 / (n - 1)) for the variance of a Gaussian sample.
    """
    if n_draws < 100:
        raise ContractError(f"need at least 100 draws, got {n_draws}")
    y0 = np.asarray(y0, dtype=np.float64)
    eps = rng.standard_normal((n_draws,) + y0.shape)
    yt = forward_diffuse(np.broadcast_to(y0, eps.shape), np.full(n_draws, t), eps, schedule)
    ab = schedule.alpha_bar[schedule.check_t(t)]
    exp_mean = np.sqrt(ab) * y0
    exp_var = 1.0 - ab
    emp_mean = yt.mean(axis=0)
    emp_var = yt.var(axis=0, ddof=1)
    z_mean = (emp_mean - exp_mean) / np.sqrt(exp_var / n_draws)
    z_var = (emp_var - exp_var) / (exp_var * np.sqrt(2.0 / (n_draws - 1)))
    return MomentReport(int(t), exp_mean, float(exp_var), emp_mean, emp_var, z_mean, z_var)
