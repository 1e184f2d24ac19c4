"""Coordinate samplers, field containers, positional encodings and pair sampling.

Conventions
-----------
* Grid coordinates are cell centres ``(2i + 1) / n - 1`` per axis, listed
  row-major with the first coordinate (x, the column index) varying fastest.
  A raster of shape ``(h, w)`` therefore maps pixel ``(r, c)`` to
  ``(x_c, y_r)``; a volume ``(d, h, w)`` maps voxel ``(k, r, c)`` to
  ``(x_c, y_r, z_k)``.
* Sphere coordinates follow the Driscoll-Healy equiangular grid, colatitude
  outer and longitude inner, embedded as unit vectors in R^3.
* Signals live in [-1, 1] per channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

KINDS = {"euclidean_grid_2d": 2, "euclidean_grid_3d": 3, "sphere_dh": 3}
OUTSIDE_FILL = -1.0


@dataclass(frozen=True)
class MetricSpaceSpec:
    """Where a field lives: a 2D/3D grid of a given raster shape or a DH sphere grid."""

    kind: str
    resolution: tuple = ()
    bandwidth: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown metric space kind {self.kind!r}")
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if self.kind == "sphere_dh":
            if self.bandwidth < 1:
                raise ContractError(f"sphere bandwidth must be >= 1, got {self.bandwidth}")
        else:
            if len(self.resolution) != KINDS[self.kind] or min(self.resolution) < 1:
                raise ContractError(f"{self.kind} needs {KINDS[self.kind]} positive sizes, got {self.resolution}")

    @property
    def d_m(self):
        return KINDS[self.kind]

    @property
    def raster_shape(self):
        if self.kind == "sphere_dh":
            return (2 * self.bandwidth, 2 * self.bandwidth)
        return self.resolution

    @property
    def n_points(self):
        return math.prod(self.raster_shape)

    def with_resolution(self, side):
        """Same kind at a new side length (grid) or bandwidth (sphere)."""
        if self.kind == "sphere_dh":
            return MetricSpaceSpec(self.kind, bandwidth=int(side))
        return MetricSpaceSpec(self.kind, (int(side),) * self.d_m)

    def to_dict(self):
        return {"kind": self.kind, "resolution": list(self.resolution), "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d.get("resolution", ())), int(d.get("bandwidth", 0)))

    def coordinates(self):
        if self.kind == "sphere_dh":
            return sphere_coordinates(self.bandwidth)
        return grid_coordinates(self)


@dataclass
class FieldSample:
    """One field as a full coordinate/signal table."""

    coords: np.ndarray  # [n, d_m]
    signals: np.ndarray  # [n, d_y]
    spec: MetricSpaceSpec | None = None

    def __post_init__(self):
        if self.coords.ndim != 2 or self.signals.ndim != 2 or len(self.coords) != len(self.signals):
            raise ShapeError(f"coords {self.coords.shape} and signals {self.signals.shape} do not pair up")

    @property
    def d_y(self):
        return self.signals.shape[1]

    def raster(self):
        """Signals reshaped to the spec's raster, channels last."""
        if self.spec is None:
            raise ContractError("field has no metric space spec")
        return self.signals.reshape(self.spec.raster_shape + (self.d_y,))


@dataclass
class PairSet:
    """Row-stacked coordinate/signal pairs at one diffusion step."""

    coords: np.ndarray
    signals: np.ndarray
    t: int = 0

    def __post_init__(self):
        if len(self.coords) != len(self.signals):
            raise ShapeError(f"{len(self.coords)} coordinates vs {len(self.signals)} signals")

    def __len__(self):
        return len(self.coords)

    def matrix(self):
        return np.concatenate([self.coords, self.signals], axis=-1)


ContextSet = PairSet
QuerySet = PairSet


def _axis_centres(n):
    return (2.0 * np.arange(n) + 1.0) / n - 1.0


def grid_coordinates(spec):
    """Cell-centre coordinates in [-1, 1], first axis fastest."""
    if spec.kind not in ("euclidean_grid_2d", "euclidean_grid_3d"):
        raise ContractError(f"grid_coordinates needs a euclidean grid, got {spec.kind}")
    # raster shape is (.., h, w): reverse so x (width) comes first
    axes = [_axis_centres(n) for n in reversed(spec.resolution)]
    mesh = np.meshgrid(*axes[::-1], indexing="ij")  # slowest axis first
    return np.stack([m.reshape(-1) for m in mesh[::-1]], axis=1)


def sphere_angles(b):
    j = np.arange(2 * b)
    theta = np.pi * (2 * j + 1) / (4 * b)
    phi = 2 * np.pi * j / (2 * b)
    return theta, phi


def sphere_coordinates(b):
    """Driscoll-Healy grid of 2b x 2b unit vectors."""
    if b < 1:
        raise ContractError(f"bandwidth must be >= 1, got {b}")
    theta, phi = sphere_angles(b)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    xyz = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    return xyz.reshape(-1, 3)


def plane_to_sphere(uv):
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    r2 = u * u + v * v
    return np.stack([2 * u, 2 * v, 1 - r2], axis=-1) / (1 + r2)[..., None]


def sphere_to_plane(xyz):
    """Inverse of :func:`plane_to_sphere`; the south pole maps to infinity."""
    xyz = np.asarray(xyz, dtype=np.float64)
    denom = 1.0 + xyz[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(denom > 1e-12, xyz[..., 0] / denom, np.inf)
        v = np.where(denom > 1e-12, xyz[..., 1] / denom, np.inf)
    return np.stack([u, v], axis=-1)


def sample_raster(raster, uv, method="bilinear", fill=OUTSIDE_FILL):
    """Sample an (h, w, c) raster at plane points ``uv`` in [-1, 1]^2.

    Points outside the square get ``fill``.
    """
    h, w, c = raster.shape
    u, v = uv[:, 0], uv[:, 1]
    inside = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    out = np.full((len(uv), c), fill, dtype=np.float64)
    if not np.any(inside):
        return out
    # continuous pixel index of the cell centres
    col = (u[inside] + 1.0) * w / 2.0 - 0.5
    row = (v[inside] + 1.0) * h / 2.0 - 0.5
    if method == "nearest":
        ci = np.clip(np.floor(col + 0.5), 0, w - 1).astype(int)
        ri = np.clip(np.floor(row + 0.5), 0, h - 1).astype(int)
        out[inside] = raster[ri, ci]
        return out
    if method != "bilinear":
        raise ContractError(f"unknown sampling method {method!r}")
    col = np.clip(col, 0, w - 1)
    row = np.clip(row, 0, h - 1)
    c0 = np.minimum(np.floor(col).astype(int), max(w - 2, 0))
    r0 = np.minimum(np.floor(row).astype(int), max(h - 2, 0))
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fc = (col - c0)[:, None]
    fr = (row - r0)[:, None]
    top = raster[r0, c0] * (1 - fc) + raster[r0, c1] * fc
    bottom = raster[r1, c0] * (1 - fc) + raster[r1, c1] * fc
    out[inside] = top * (1 - fr) + bottom * fr
    return out


def stereographic_lift(image_field, bandwidth, method="bilinear", fill=OUTSIDE_FILL):
    """Project a 2D grid field onto a DH sphere grid of the given bandwidth."""
    if image_field.spec is None or image_field.spec.kind != "euclidean_grid_2d":
        raise ContractError("stereographic_lift needs a field on a 2D grid")
    spec = MetricSpaceSpec("sphere_dh", bandwidth=bandwidth)
    xyz = sphere_coordinates(bandwidth)
    signals = sample_raster(image_field.raster().astype(np.float64), sphere_to_plane(xyz), method, fill)
    return FieldSample(xyz, signals, spec)


def fourier_encode(coords, num_freqs, ladder="power2"):
    """Sin/cos features per coordinate scalar.

    ``ladder="power2"`` uses frequencies 2^k * pi (k = 0..L-1); ``"linear"``
    uses (k + 1) * pi. Per scalar the output is [sin f0 m, cos f0 m, sin f1 m,
    ...]; scalars are concatenated in column order. Raw coordinates are not
    included here.
    """
    if num_freqs < 1:
        raise ContractError(f"num_freqs must be >= 1, got {num_freqs}")
    coords = np.asarray(coords, dtype=np.float64)
    if ladder == "power2":
        freqs = np.pi * 2.0 ** np.arange(num_freqs)
    elif ladder == "linear":
        freqs = np.pi * (np.arange(num_freqs) + 1.0)
    else:
        raise ContractError(f"unknown frequency ladder {ladder!r}")
    angles = coords[..., :, None] * freqs  # [..., d, L]
    feats = np.stack([np.sin(angles), np.cos(angles)], axis=-1)  # [..., d, L, 2]
    return feats.reshape(coords.shape[:-1] + (-1,))


def field_from_image(pixels):
    """Raster in [0, 255] (integer dtype) or [0, 1] (float dtype) to a field with signals in [-1, 1]."""
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise ContractError("empty raster")
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    if pixels.ndim != 3:
        raise ShapeError(f"expected an (h, w, c) raster, got shape {pixels.shape}")
    if pixels.dtype.kind in "iu":
        unit = pixels.astype(np.float64) / 255.0
    else:
        unit = pixels.astype(np.float64)
    h, w, c = pixels.shape
    spec = MetricSpaceSpec("euclidean_grid_2d", (h, w))
    return FieldSample(grid_coordinates(spec), (2.0 * unit - 1.0).reshape(h * w, c), spec)


def signals_to_bytes(signals):
    """Inverse rescale [-1, 1] -> [0, 255] with rounding and clamping."""
    return np.clip(np.rint((np.asarray(signals, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def subsample_pairs(fld, n_context, n_query, rng, disjoint=False):
    """Uniform context/query subsets of one field at t = 0.

    Context and query rows are drawn independently (overlap allowed) unless
    ``disjoint`` is set, in which case ``n_context + n_query`` must fit.
    """
    n = len(fld.coords)
    if not (1 <= n_context <= n and 1 <= n_query <= n):
        raise ContractError(f"pair counts ({n_context}, {n_query}) must lie in 1..{n}")
    if disjoint:
        if n_context + n_query > n:
            raise ContractError(f"disjoint sampling needs {n_context}+{n_query} <= {n}")
        perm = rng.permutation(n)
        ci, qi = perm[:n_context], perm[n_context:n_context + n_query]
    else:
        ci = rng.permutation(n)[:n_context]
        qi = rng.permutation(n)[:n_query]
    return (
        PairSet(fld.coords[ci], fld.signals[ci], 0),
        PairSet(fld.coords[qi], fld.signals[qi], 0),
    )
