"""Synthetic fields, dataset/checkpoint files and grid export.

Files come in pairs: a JSON manifest and a binary blob of little-endian
float64 values in row-major order.  Manifests are validated in full before
any float is decoded.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import LayoutError, ShapeError, TruncatedError, ValidationError, VersionError
from .graph import FunctionSample
from .model import ModelConfig, ModelParams, param_layout

FORMAT_VERSION = 1
F64 = np.dtype("<f8")


@dataclass
class SyntheticSpec:
    d_f: int = 6
    d_x: int = 2
    n_modes: int = 4
    omega_max: float = 8.0
    amplitude: float = 1.0
    n_points: int = 1000
    n_samples: int = 8

    def __post_init__(self):
        for name in ("d_f", "d_x", "n_modes", "n_points", "n_samples"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.omega_max <= 0 or self.amplitude <= 0:
            raise ValidationError("omega_max and amplitude must be positive")


@dataclass
class CosineField:
    """``f_c(x) = sum_m a[c, m] * cos(omega[c, m] . x + phi[c, m])``."""

    amps: np.ndarray  # (d_f, M)
    freqs: np.ndarray  # (d_f, M, d_x)
    phases: np.ndarray  # (d_f, M)

    def __call__(self, coords) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        arg = np.einsum("cmd,nd->ncm", self.freqs, coords) + self.phases[None]
        return np.sum(self.amps[None] * np.cos(arg), axis=2)

    def lipschitz_bounds(self) -> np.ndarray:
        """Per-channel ``sum_m |a_m| * |omega_m|``."""
        return np.sum(np.abs(self.amps) * np.linalg.norm(self.freqs, axis=2), axis=1)


def _draw_field(spec: SyntheticSpec, rng) -> CosineField:
    shape = (spec.d_f, spec.n_modes)
    amps = spec.amplitude * rng.uniform(-1.0, 1.0, size=shape)
    direction = rng.standard_normal(shape + (spec.d_x,))
    direction /= np.linalg.norm(direction, axis=2, keepdims=True)
    radius = spec.omega_max * rng.uniform(0.0, 1.0, size=shape)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    return CosineField(amps, direction * radius[..., None], phases)


def synthetic_fields(spec: SyntheticSpec, seed: int) -> list[CosineField]:
    """The fields behind ``gen_synthetic(spec, seed)``, one per sample."""
    return [_draw_field(spec, np.random.default_rng(s)) for s in np.random.SeedSequence(seed).spawn(spec.n_samples)]


def gen_synthetic(spec: SyntheticSpec, seed: int) -> list[FunctionSample]:
    """Random sums of cosines sampled at uniform points in the unit box."""
    samples = []
    for n, child in enumerate(np.random.SeedSequence(seed).spawn(spec.n_samples)):
        rng = np.random.default_rng(child)
        fld = _draw_field(spec, rng)
        coords = rng.uniform(0.0, 1.0, size=(spec.n_points, spec.d_x))
        samples.append(FunctionSample(coords, fld(coords), sample_id=f"s{n:04d}"))
    return samples


def _paths(path, suffix: str) -> tuple[str, str]:
    path = os.fspath(path)
    return f"{path}{suffix}.json", f"{path}{suffix}.bin"


def _check_header(manifest: dict, kind: str):
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported {kind} version {manifest.get('version')!r}")
    if manifest.get("kind") != kind:
        raise ShapeError(f"expected a {kind} manifest, found {manifest.get('kind')!r}")
    if manifest.get("dtype") != "f64" or manifest.get("byte_order") != "little-endian":
        raise ShapeError("only little-endian f64 blobs are supported")


def _read_blob(path: str, expected: int) -> bytes:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < expected:
        raise TruncatedError(f"{path}: {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise ShapeError(f"{path}: {len(blob)} bytes, manifest accounts for {expected}")
    return blob


def save_dataset(samples: list[FunctionSample], path) -> None:
    """Write ``<path>.json`` and ``<path>.bin``."""
    if not samples:
        raise ValidationError("cannot save an empty dataset")
    d_x, d_f = samples[0].d_x, samples[0].d_f
    entries, chunks, offset = [], [], 0
    for s in samples:
        if (s.d_x, s.d_f) != (d_x, d_f):
            raise ValidationError("all samples in a dataset must share d_x and d_f")
        entries.append({"id": s.sample_id, "n_points": s.n_points, "offset": offset})
        chunks += [s.coords.astype(F64).tobytes(), s.values.astype(F64).tobytes()]
        offset += s.n_points * (d_x + d_f) * 8
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "dataset",
        "dtype": "f64",
        "byte_order": "little-endian",
        "n_samples": len(samples),
        "d_x": d_x,
        "d_f": d_f,
        "total_bytes": offset,
        "samples": entries,
    }
    jpath, bpath = _paths(path, "")
    with open(bpath, "wb") as fh:
        fh.write(b"".join(chunks))
    with open(jpath, "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_dataset(path) -> list[FunctionSample]:
    jpath, bpath = _paths(path, "")
    with open(jpath) as fh:
        manifest = json.load(fh)
    _check_header(manifest, "dataset")
    d_x, d_f = int(manifest["d_x"]), int(manifest["d_f"])
    entries = manifest["samples"]
    if len(entries) != manifest["n_samples"]:
        raise ShapeError("n_samples disagrees with the sample table")
    offset = 0
    for e in entries:
        if e["offset"] != offset or e["n_points"] < 2:
            raise ShapeError(f"sample {e['id']!r}: offset {e['offset']} inconsistent with declared shapes")
        offset += e["n_points"] * (d_x + d_f) * 8
    if offset != manifest["total_bytes"]:
        raise ShapeError(f"declared shapes need {offset} bytes, manifest says {manifest['total_bytes']}")
    blob = _read_blob(bpath, offset)
    samples = []
    for e in entries:
        n, start = e["n_points"], e["offset"]
        coords = np.frombuffer(blob, F64, n * d_x, start).reshape(n, d_x)
        values = np.frombuffer(blob, F64, n * d_f, start + n * d_x * 8).reshape(n, d_f)
        samples.append(FunctionSample(coords.astype(np.float64), values.astype(np.float64), e["id"]))
    return samples


def save_checkpoint(params: ModelParams, path, train_config=None, seed: int | None = None) -> None:
    """Write ``<path>.ckpt.json`` and ``<path>.ckpt.bin``."""
    layout = param_layout(params.config, params.dual)
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "checkpoint",
        "dtype": "f64",
        "byte_order": "little-endian",
        "model_config": params.config.to_dict(),
        "train_config": asdict(train_config) if train_config is not None else None,
        "seed": seed,
        "dual": params.dual,
        "tensors": [{"name": name, "shape": list(shape)} for name, shape in layout],
    }
    jpath, bpath = _paths(path, ".ckpt")
    with open(bpath, "wb") as fh:
        for name, shape in layout:
            t = params[name]
            if t.shape != shape:
                raise LayoutError(f"{name} has shape {t.shape}, layout expects {shape}")
            fh.write(t.astype(F64).tobytes())
    with open(jpath, "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Returns ``(params, manifest)``; the manifest carries the train config and seed."""
    jpath, bpath = _paths(path, ".ckpt")
    with open(jpath) as fh:
        manifest = json.load(fh)
    _check_header(manifest, "checkpoint")
    cfg = ModelConfig(**manifest["model_config"])
    dual = bool(manifest["dual"])
    layout = param_layout(cfg, dual)
    declared = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    if declared != layout:
        for (dn, ds), (ln, ls) in zip(declared, layout):
            if (dn, ds) != (ln, ls):
                raise LayoutError(f"tensor {dn!r} {ds} found where {ln!r} {ls} expected")
        raise LayoutError(f"{len(declared)} tensors declared, layout has {len(layout)}")
    sizes = [int(np.prod(shape)) for _, shape in layout]
    blob = _read_blob(bpath, 8 * sum(sizes))
    tensors, offset = {}, 0
    for (name, shape), size in zip(layout, sizes):
        tensors[name] = np.frombuffer(blob, F64, size, offset).reshape(shape).astype(np.float64)
        offset += 8 * size
    return ModelParams(cfg, tensors, dual), manifest


def export_grid(coords, embeddings, resolution: int) -> np.ndarray:
    """Nearest-sample values on an R x R grid of cell centres over the bounding box.

    Returns rows ``(gx, gy, z_1, ..., z_dg)`` with x varying fastest.
    """
    coords = np.asarray(coords, dtype=np.float64)
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValidationError("grid export supports 2-D domains only")
    if resolution < 2:
        raise ValidationError("resolution must be >= 2")
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    centres = [lo[d] + (np.arange(resolution) + 0.5) * (hi[d] - lo[d]) / resolution for d in range(2)]
    gx, gy = np.meshgrid(centres[0], centres[1])
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    _, nearest = cKDTree(coords).query(grid, k=1)
    return np.column_stack([grid, z[nearest]])


def write_grid_csv(path, table: np.ndarray) -> None:
    d_g = table.shape[1] - 2
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gx", "gy"] + [f"z_{i + 1}" for i in range(d_g)])
        writer.writerows([[repr(float(v)) for v in row] for row in table])
