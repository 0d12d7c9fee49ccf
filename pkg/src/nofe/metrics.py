"""Embedding quality metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .baselines import pca_embed
from .errors import ValidationError
from .graph import DomainGraph

TINY = 1e-12
LIPSCHITZ_BIN_WIDTH = 0.1
LIPSCHITZ_MAX = 6.0


def _as2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _stress(dy: np.ndarray, dz: np.ndarray) -> float:
    denom = np.sum(dy * dy)
    if denom < TINY * TINY:
        raise ValidationError("all input distances are zero; stress is undefined")
    return float(np.sqrt(np.sum((dy - dz) ** 2) / denom))


def stress1(values, embeddings) -> float:
    """Kruskal Stress-1 over all unordered pairs."""
    y, z = _as2d(values), _as2d(embeddings)
    if y.shape[0] != z.shape[0] or y.shape[0] < 2:
        raise ValidationError("values and embeddings need the same number (>= 2) of rows")
    return _stress(pdist(y), pdist(z))


def undirected_pairs(graph: DomainGraph) -> np.ndarray:
    """Graph edges reduced to unique unordered pairs ``(min, max)``."""
    e = np.sort(graph.edges, axis=1)
    return np.unique(e, axis=0)


def stress_local(graph: DomainGraph, values, embeddings) -> float:
    """Stress-1 restricted to domain-neighbour pairs (each unordered pair counted once)."""
    y, z = _as2d(values), _as2d(embeddings)
    if y.shape[0] != graph.n_nodes or z.shape[0] != graph.n_nodes:
        raise ValidationError("values/embeddings do not match the graph size")
    i, j = undirected_pairs(graph).T
    return _stress(np.linalg.norm(y[i] - y[j], axis=1), np.linalg.norm(z[i] - z[j], axis=1))


def lipschitz_ratios(graph: DomainGraph, values, embeddings) -> tuple[np.ndarray, int]:
    """``|z_i - z_j| / |y_i - y_j|`` per directed edge.

    Edges with identical input values are skipped; returns ``(ratios, n_skipped)``.
    """
    y, z = _as2d(values), _as2d(embeddings)
    i, j = graph.edges.T
    dy = np.linalg.norm(y[i] - y[j], axis=1)
    dz = np.linalg.norm(z[i] - z[j], axis=1)
    ok = dy > 0
    return dz[ok] / dy[ok], int(np.sum(~ok))


def lipschitz_histogram(ratios) -> np.ndarray:
    """Counts in bins of width 0.1 over [0, 6) plus one overflow bin."""
    n_bins = int(round(LIPSCHITZ_MAX / LIPSCHITZ_BIN_WIDTH))
    ratios = np.asarray(ratios, dtype=np.float64)
    idx = np.minimum(np.floor(ratios / LIPSCHITZ_BIN_WIDTH).astype(np.int64), n_bins)
    return np.bincount(idx, minlength=n_bins + 1)


@dataclass
class PatchSplit:
    """Two patches separated by the axis-aligned line ``x[axis] == position``."""

    in_a: np.ndarray
    in_b: np.ndarray
    axis: int
    position: float
    border_width: float

    def border(self, coords) -> tuple[np.ndarray, np.ndarray]:
        coords = _as2d(coords)
        near = np.abs(coords[:, self.axis] - self.position) <= self.border_width
        return np.flatnonzero(self.in_a & near), np.flatnonzero(self.in_b & near)


def split_by_line(coords, axis: int, position: float, border_width: float) -> PatchSplit:
    coords = _as2d(coords)
    in_a = coords[:, axis] < position
    return PatchSplit(in_a, ~in_a, axis, position, border_width)


def _directional_terms(src, dst, coords, z, mode):
    x_src, x_dst = coords[src], coords[dst]
    cross = np.argmin(cdist(x_src, x_dst), axis=1)
    num = np.linalg.norm(z[src] - z[dst[cross]], axis=1)
    zd = cdist(z[src], z[src])
    if mode == "region":
        den = zd.sum(axis=1) / (len(src) - 1)
    else:
        xd = cdist(x_src, x_src)
        np.fill_diagonal(xd, np.inf)
        den = zd[np.arange(len(src)), np.argmin(xd, axis=1)]
    terms = np.zeros_like(num)
    ok = den >= TINY
    terms[ok] = num[ok] / den[ok]
    # 0/0 means the border is flat and both sides agree, which is perfect stitching
    dropped = (~ok) & (num >= TINY)
    return terms[~dropped], int(np.sum(dropped))


def patch_stitching_error(split: PatchSplit, coords, embeddings, mode: str = "region", return_dropped: bool = False):
    """Symmetrised patch-stitching error across one boundary.

    ``region`` normalises each cross-border embedding distance by the mean
    embedding distance to the other border points of the same patch;
    ``local`` by the embedding distance to the spatially nearest border point
    of the same patch.
    """
    if mode not in ("region", "local"):
        raise ValidationError(f"unknown stitching mode {mode!r}")
    coords, z = _as2d(coords), _as2d(embeddings)
    a_b, b_a = split.border(coords)
    if len(a_b) < 2 or len(b_a) < 2:
        raise ValidationError(f"border sets too small: |A_B|={len(a_b)}, |B_A|={len(b_a)}")
    ab, drop_ab = _directional_terms(a_b, b_a, coords, z, mode)
    ba, drop_ba = _directional_terms(b_a, a_b, coords, z, mode)
    means = [t.mean() for t in (ab, ba) if t.size]
    value = float(np.mean(means)) if means else math.nan
    return (value, drop_ab + drop_ba) if return_dropped else value


def _standardise(rows, stats_from):
    mu = stats_from.mean(axis=0)
    sd = stats_from.std(axis=0)
    return (rows - mu) / np.where(sd < TINY, 1.0, sd), sd >= TINY


def gluing_mse(z_overlap_a, z_overlap_b, patch_a=None, patch_b=None, standardize: bool = True) -> float:
    """Mean squared disagreement of the two embeddings of the overlap points.

    With ``standardize`` each side is shifted and scaled per dimension to mean
    0 and standard deviation 1, using statistics of its full patch
    (``patch_a``/``patch_b``; the overlap rows when omitted).  Dimensions
    with zero spread in either patch are dropped.
    """
    za, zb = _as2d(z_overlap_a), _as2d(z_overlap_b)
    if za.shape != zb.shape:
        raise ValidationError(f"overlap shapes differ: {za.shape} vs {zb.shape}")
    if za.shape[0] < 2:
        raise ValidationError("overlap needs at least 2 points")
    if not standardize:
        return float(np.mean((za - zb) ** 2))
    sa, keep_a = _standardise(za, za if patch_a is None else _as2d(patch_a))
    sb, keep_b = _standardise(zb, zb if patch_b is None else _as2d(patch_b))
    keep = keep_a & keep_b
    if not keep.any():
        raise ValidationError("every embedding dimension is constant")
    return float(np.mean((sa[:, keep] - sb[:, keep]) ** 2))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    n = a.size
    sa = np.sqrt(np.sum(da * da) / (n - 1))
    sb = np.sqrt(np.sum(db * db) / (n - 1))
    if sa < TINY or sb < TINY:
        return math.nan
    return float(np.sum(da * db) / (n - 1) / (sa * sb))


def grayscale_correlation(embeddings, values) -> np.ndarray:
    """|Pearson r| between the first principal score of the embedding and each input channel.

    Constant channels are reported as NaN.
    """
    z, y = _as2d(embeddings), _as2d(values)
    if z.shape[0] != y.shape[0] or z.shape[0] < 3:
        raise ValidationError("need matching embeddings/values with at least 3 rows")
    if np.all(np.std(z, axis=0) < TINY):
        raise ValidationError("embeddings have zero variance")
    gray = pca_embed(z, 1)[:, 0]
    return np.array([abs(pearson(gray, y[:, c])) for c in range(y.shape[1])])


@dataclass
class MetricReport:
    stress1: float = math.nan
    stress_local: float = math.nan
    lipschitz_ratios: np.ndarray = field(default_factory=lambda: np.empty(0))
    se_region: float = math.nan
    se_local: float = math.nan
    gluing_mse: float = math.nan
    grayscale_corr: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        r = np.asarray(self.lipschitz_ratios, dtype=np.float64)
        return {
            "stress1": self.stress1,
            "stress_local": self.stress_local,
            "lipschitz_ratio_mean": float(r.mean()) if r.size else math.nan,
            "lipschitz_ratio_median": float(np.median(r)) if r.size else math.nan,
            "lipschitz_ratio_hist": lipschitz_histogram(r).tolist(),
            "lipschitz_ratios": r.tolist(),
            "se_region": self.se_region,
            "se_local": self.se_local,
            "gluing_mse": self.gluing_mse,
            "grayscale_corr": np.asarray(self.grayscale_corr, dtype=np.float64).tolist(),
        }


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    return value


def reports_to_json(reports: dict[str, MetricReport]) -> str:
    """``{method: {metric: value or vector}}``; undefined values become ``null``."""
    return json.dumps({name: _json_safe(r.to_dict()) for name, r in reports.items()}, indent=2)


def reports_to_text(reports: dict[str, MetricReport]) -> str:
    """One ``method.metric = value`` line per scalar; the raw ratio vector is omitted."""
    lines = []
    for name, report in reports.items():
        for key, value in report.to_dict().items():
            if key == "lipschitz_ratios":
                continue
            if isinstance(value, list):
                value = " ".join(repr(v) for v in value)
            lines.append(f"{name}.{key} = {value}")
    return "\n".join(lines) + "\n"
