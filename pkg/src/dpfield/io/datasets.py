"""Synthetic field datasets with known ground-truth structure.

Recipes (signals in [-1, 1]):

two_mode_colors
    Solid 3-channel images. A mode m in {-1, +1} is drawn with probability
    1/2; each channel is m * 0.6 + 0.1 * N(0, 1), clipped to [-1, 1].
gaussian_blobs_2d
    One isotropic blob per field, centred on a uniformly drawn cell:
    2 * exp(-d^2 / (2 s^2)) - 1, s uniform in [0.15, 0.35]. 1 channel.
checkerboards
    +-1 checkerboards with a random cell size in {1, 2, 4} pixels and a
    random parity. 1 channel.
spheres_vs_cubes_3d
    16^3 occupancy volumes, label drawn uniformly. Spheres have radius r and
    cubes half-side a, both uniform in [0.4, 0.8] (grid spans [-1, 1]^3),
    centred at the origin. Occupied voxels are +1, empty ones -1.
spherical_blobs
    gaussian_blobs_2d images lifted onto a Driscoll-Healy grid (bandwidth 8)
    by stereographic projection; sphere points outside the image get -1.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..diffusion import FieldDataset
from ..errors import ContractError, FormatError
from ..field_domain import FieldSample, MetricSpaceSpec, grid_coordinates, stereographic_lift
from .formats import read_field_tensor, read_pixmap, write_field_tensor

MODE_MEAN = 0.6
MODE_STD = 0.1
KINDS = ("two_mode_colors", "gaussian_blobs_2d", "checkerboards", "spheres_vs_cubes_3d", "spherical_blobs")
MANIFEST = "manifest.json"


def two_mode_colors(n, rng, side=8, channels=3):
    modes = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    colors = np.clip(modes[:, None] * MODE_MEAN + MODE_STD * rng.standard_normal((n, channels)), -1, 1)
    rasters = np.broadcast_to(colors[:, None, None, :], (n, side, side, channels)).copy()
    return rasters, {"modes": modes}


def gaussian_blobs_2d(n, rng, side=16):
    centres = rng.integers(0, side, size=(n, 2))  # (row, col)
    widths = rng.uniform(0.15, 0.35, size=n)
    axis = (2.0 * np.arange(side) + 1.0) / side - 1.0
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    out = np.empty((n, side, side, 1))
    for i, ((r, c), s) in enumerate(zip(centres, widths)):
        d2 = (yy - axis[r]) ** 2 + (xx - axis[c]) ** 2
        out[i, :, :, 0] = 2.0 * np.exp(-d2 / (2 * s * s)) - 1.0
    return out, {"centres": centres, "widths": widths}


def checkerboards(n, rng, side=16):
    cells = rng.choice([1, 2, 4], size=n)
    parity = rng.integers(0, 2, size=n)
    idx = np.arange(side)
    out = np.empty((n, side, side, 1))
    for i in range(n):
        board = ((idx[:, None] // cells[i]) + (idx[None, :] // cells[i]) + parity[i]) % 2
        out[i, :, :, 0] = 2.0 * board - 1.0
    return out, {"cells": cells, "parity": parity}


def occupancy_volume(shape_kind, size, side=16):
    """Centred sphere (radius) or cube (half-side) on a side^3 grid, as 0/1 occupancy."""
    coords = grid_coordinates(MetricSpaceSpec("euclidean_grid_3d", (side,) * 3))
    if shape_kind == "sphere":
        inside = np.sum(coords**2, axis=1) <= size**2
    elif shape_kind == "cube":
        inside = np.max(np.abs(coords), axis=1) <= size
    else:
        raise ContractError(f"unknown solid {shape_kind!r}")
    return inside.reshape(side, side, side).astype(np.float64)


def spheres_vs_cubes_3d(n, rng, side=16):
    labels = np.where(rng.random(n) < 0.5, "sphere", "cube")
    sizes = rng.uniform(0.4, 0.8, size=n)
    out = np.stack([2.0 * occupancy_volume(k, s, side) - 1.0 for k, s in zip(labels, sizes)])[..., None]
    return out, {"labels": labels, "sizes": sizes}


def spherical_blobs(n, rng, bandwidth=8, side=16):
    images, meta = gaussian_blobs_2d(n, rng, side)
    spec = MetricSpaceSpec("euclidean_grid_2d", (side, side))
    coords = grid_coordinates(spec)
    out = []
    for img in images:
        lifted = stereographic_lift(FieldSample(coords, img.reshape(-1, 1), spec), bandwidth)
        out.append(lifted.raster())
    return np.stack(out), meta


_GENERATORS = {
    "two_mode_colors": (two_mode_colors, lambda: MetricSpaceSpec("euclidean_grid_2d", (8, 8))),
    "gaussian_blobs_2d": (gaussian_blobs_2d, lambda: MetricSpaceSpec("euclidean_grid_2d", (16, 16))),
    "checkerboards": (checkerboards, lambda: MetricSpaceSpec("euclidean_grid_2d", (16, 16))),
    "spheres_vs_cubes_3d": (spheres_vs_cubes_3d, lambda: MetricSpaceSpec("euclidean_grid_3d", (16, 16, 16))),
    "spherical_blobs": (spherical_blobs, lambda: MetricSpaceSpec("sphere_dh", bandwidth=8)),
}


def generate(kind, n, seed):
    """In-memory rasters [n, *raster_shape, d_y], their metric space and recipe metadata."""
    if kind not in _GENERATORS:
        raise ContractError(f"unknown dataset kind {kind!r}; choose from {KINDS}")
    if n < 1:
        raise ContractError(f"dataset size must be >= 1, got {n}")
    fn, spec_fn = _GENERATORS[kind]
    rasters, meta = fn(n, np.random.default_rng(seed))
    return rasters, spec_fn(), meta


def as_dataset(rasters, spec):
    n = len(rasters)
    d_y = rasters.shape[-1]
    return FieldDataset(spec, spec.coordinates(), rasters.reshape(n, -1, d_y).astype(np.float32))


def synthesize_dataset(kind, n, seed, out_dir):
    """Write ``n`` field tensor files plus a manifest with content hashes."""
    rasters, spec, _ = generate(kind, n, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, r in enumerate(rasters):
        name = f"field_{i:05d}.ften"
        write_field_tensor(out / name, r.astype(np.float32))
        entries.append({"file": name, "sha256": _sha256(out / name)})
    manifest = {"kind": kind, "count": n, "seed": seed, "spec": spec.to_dict(), "d_y": int(rasters.shape[-1]),
                "files": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def ingest_pixmaps(src_dir, out_dir):
    """Turn a directory of same-sized .pgm/.ppm files into a dataset directory."""
    paths = sorted(p for p in Path(src_dir).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not paths:
        raise FormatError(f"no .pgm/.ppm files in {src_dir}")
    images = [read_pixmap(p) for p in paths]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise FormatError(f"pixmaps differ in shape: {sorted(shapes)}")
    h, w, c = images[0].shape
    spec = MetricSpaceSpec("euclidean_grid_2d", (h, w))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (src, im) in enumerate(zip(paths, images)):
        name = f"field_{i:05d}.ften"
        write_field_tensor(out / name, (im.astype(np.float32) / 255.0) * 2.0 - 1.0)
        entries.append({"file": name, "sha256": _sha256(out / name), "source": src.name})
    manifest = {"kind": "pixmaps", "count": len(paths), "seed": None, "spec": spec.to_dict(), "d_y": c,
                "files": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(data_dir):
    """Read a dataset directory, verifying every file hash against the manifest."""
    root = Path(data_dir)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except FileNotFoundError:
        raise FormatError(f"no {MANIFEST} in {root}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest in {root}: {exc}") from None
    spec = MetricSpaceSpec.from_dict(manifest["spec"])
    rasters = []
    for entry in manifest["files"]:
        path = root / entry["file"]
        if _sha256(path) != entry["sha256"]:
            raise FormatError(f"hash mismatch for {path}")
        arr = read_field_tensor(path)
        if arr.shape[:-1] != spec.raster_shape:
            raise FormatError(f"{path}: shape {arr.shape} does not fit {spec.raster_shape}")
        rasters.append(arr)
    return as_dataset(np.stack(rasters), spec), manifest


def _sha256(path):
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except FileNotFoundError:
        raise FormatError(f"missing dataset file {path}") from None
