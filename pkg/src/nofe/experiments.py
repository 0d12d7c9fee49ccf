"""Embedding helpers and the patch-stitching / gluing / evaluation workflows."""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from .baselines import pca_embed
from .errors import ValidationError
from .graph import FunctionSample, build_dual_graph, build_knn_graph
from .metrics import (
    MetricReport,
    gluing_mse,
    grayscale_correlation,
    lipschitz_ratios,
    patch_stitching_error,
    PatchSplit,
    stress1,
    stress_local,
)
from .model import ModelParams, dual_from_point, forward, forward_dual

log = logging.getLogger(__name__)

Embedder = Callable[[FunctionSample], np.ndarray]


def nofe_embedder(params: ModelParams) -> Embedder:
    def embed(sample: FunctionSample) -> np.ndarray:
        return forward(params, build_knn_graph(sample, params.config.k), sample.values)

    return embed


def pca_embedder(d_g: int) -> Embedder:
    return lambda sample: pca_embed(sample.values, d_g)


def superres_embed(params: ModelParams, source: FunctionSample, query_coords) -> np.ndarray:
    """Embeddings at arbitrary query coordinates from a source sample."""
    dual_params = params if params.dual else dual_from_point(params)
    cfg = params.config
    return forward_dual(dual_params, build_dual_graph(source, query_coords, cfg.k, cfg.k_cross))


def _box(coords, bounds):
    if bounds is None:
        return coords.min(axis=0), coords.max(axis=0)
    lo, hi = bounds
    return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def quadrant_labels(coords, bounds=None) -> tuple[np.ndarray, np.ndarray]:
    """Quadrant id ``(x >= mid_x) + 2 * (y >= mid_y)`` and the split point."""
    lo, hi = _box(coords, bounds)
    mid = 0.5 * (lo + hi)
    return (coords[:, 0] >= mid[0]).astype(int) + 2 * (coords[:, 1] >= mid[1]).astype(int), mid


# (patch a, patch b, split axis) for the four shared quadrant borders
QUADRANT_BORDERS = ((0, 1, 0), (2, 3, 0), (0, 2, 1), (1, 3, 1))


def quadrant_experiment(sample: FunctionSample, embed: Embedder, border_width: float, bounds=None) -> dict:
    """Embed the four quadrants independently and measure stitching across their borders.

    Returns the patch-stitching errors averaged over the four borders.
    """
    coords = sample.coords
    labels, mid = quadrant_labels(coords, bounds)
    z = None
    for q in range(4):
        idx = np.flatnonzero(labels == q)
        zq = embed(sample.subset(idx))
        if z is None:
            z = np.empty((sample.n_points, zq.shape[1]))
        z[idx] = zq
    out = {"se_region": [], "se_local": []}
    for a, b, axis in QUADRANT_BORDERS:
        split = PatchSplit(labels == a, labels == b, axis, float(mid[axis]), border_width)
        try:
            out["se_region"].append(patch_stitching_error(split, coords, z, "region"))
            out["se_local"].append(patch_stitching_error(split, coords, z, "local"))
        except ValidationError as exc:
            log.warning("sample %s, border %d|%d skipped: %s", sample.sample_id, a, b, exc)
    if not out["se_region"]:
        raise ValidationError(f"sample {sample.sample_id!r}: no quadrant border has enough points")
    return {key: float(np.mean(v)) for key, v in out.items()} | {"embedding": z}


def overlap_patches(coords, overlap: float, bounds=None) -> tuple[np.ndarray, np.ndarray]:
    """Index sets of two patches split along x that share a band of width ``overlap``."""
    lo, hi = _box(coords, bounds)
    mid = 0.5 * (lo[0] + hi[0])
    idx_a = np.flatnonzero(coords[:, 0] < mid + 0.5 * overlap)
    idx_b = np.flatnonzero(coords[:, 0] >= mid - 0.5 * overlap)
    return idx_a, idx_b


def gluing_experiment(sample: FunctionSample, embed: Embedder, overlap: float, bounds=None, standardize: bool = True) -> float:
    """Embed two overlapping patches separately and compare the doubly embedded points."""
    idx_a, idx_b = overlap_patches(sample.coords, overlap, bounds)
    za = embed(sample.subset(idx_a))
    zb = embed(sample.subset(idx_b))
    shared = np.intersect1d(idx_a, idx_b)
    ra = np.searchsorted(idx_a, shared)
    rb = np.searchsorted(idx_b, shared)
    return gluing_mse(za[ra], zb[rb], za, zb, standardize=standardize)


def evaluate(
    samples: list[FunctionSample],
    methods: dict[str, Embedder],
    k: int,
    border_width: float = 0.05,
    overlap: float = 0.2,
    bounds=None,
) -> dict[str, MetricReport]:
    """Full metric suite per method, averaged over samples (Lipschitz ratios pooled)."""
    reports = {}
    for name, embed in methods.items():
        acc: dict[str, list] = {key: [] for key in ("stress1", "stress_local", "se_region", "se_local", "gluing", "gray", "lip")}
        for s in samples:
            z = embed(s)
            graph = build_knn_graph(s, k)
            acc["stress1"].append(stress1(s.values, z))
            acc["stress_local"].append(stress_local(graph, s.values, z))
            acc["lip"].append(lipschitz_ratios(graph, s.values, z)[0])
            quad = quadrant_experiment(s, embed, border_width, bounds)
            acc["se_region"].append(quad["se_region"])
            acc["se_local"].append(quad["se_local"])
            acc["gluing"].append(gluing_experiment(s, embed, overlap, bounds))
            acc["gray"].append(grayscale_correlation(z, s.values))
        reports[name] = MetricReport(
            stress1=float(np.mean(acc["stress1"])),
            stress_local=float(np.mean(acc["stress_local"])),
            lipschitz_ratios=np.concatenate(acc["lip"]),
            se_region=float(np.mean(acc["se_region"])),
            se_local=float(np.mean(acc["se_local"])),
            gluing_mse=float(np.mean(acc["gluing"])),
            grayscale_corr=np.mean(acc["gray"], axis=0),
        )
    return reports
