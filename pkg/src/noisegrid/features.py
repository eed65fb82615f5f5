"""Per-patch feature extraction from residual images.

For one residual: patches are DCT-encoded, a one-class SVM is fitted per
grid cell, and every patch is scored against every cell's detector. The
resulting likelihood vector is histogrammed (position invariance), extended
with distances to the 8 neighboring histograms (proximity) and with
distances to image-level k-means centroids plus their weights (global
context). Segments from all residuals are concatenated per patch.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import DataError, NoiseGridError, ZeroVarianceError
from . import ocsvm
from .image import build_patch_grid, crop_to_patch_multiple, decompose_patches
from .residuals import Residual, ResidualConfig, build_stack

DEFAULT_BINS = 16
DEFAULT_K = 6
DEFAULT_RESTARTS = 150

# neighbor offsets in fixed order: NW, N, NE, W, E, SW, S, SE
_NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class ExtractorConfig:
    patch_shape: tuple[int, int] = (6, 6)
    grid_shape: tuple[int, int] = (5, 5)
    bins: int = DEFAULT_BINS
    k: int = DEFAULT_K
    restarts: int = DEFAULT_RESTARTS
    nu: float = ocsvm.DEFAULT_NU
    tol: float = ocsvm.DEFAULT_TOL
    residuals: ResidualConfig = field(default_factory=ResidualConfig)

    def __post_init__(self):
        m, n = self.patch_shape
        s, t = self.grid_shape
        if m < 2 or n < 2:
            raise DataError(f"patch dims must be >= 2, got {self.patch_shape}")
        if s < 1 or t < 1:
            raise DataError(f"grid dims must be >= 1, got {self.grid_shape}")
        if self.bins < 2:
            raise DataError(f"need >= 2 histogram bins, got {self.bins}")
        if self.k < 1 or self.restarts < 1:
            raise DataError(f"k and restarts must be >= 1, got {self.k}, {self.restarts}")

    @property
    def segment_len(self) -> int:
        """Per-residual feature segment: histogram + proximity + global."""
        return self.bins + 8 + 2 * self.k


@dataclass(frozen=True)
class ReinterpretationField:
    """values[i, j] = likelihood of patch (i,j) under each cell's detector,
    row-major over grid cells."""

    values: np.ndarray  # (rows, cols, s*t)
    grid_shape: tuple[int, int]


@dataclass(frozen=True)
class HistogramField:
    """Per-patch histograms of the reinterpretation vectors, in [0, 1]."""

    values: np.ndarray  # (rows, cols, B)
    value_range: tuple[float, float]  # per-image [min, max] the bins spanned
    max_count: int  # image-wide maximum raw bin count (the normalizer)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (rows, cols, feature_len)
    # (residual kind, component, offset, length) per segment
    layout: tuple[tuple[str, str, int, int], ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DataError(f"feature values must be rows x cols x len, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def feature_len(self) -> int:
        return self.values.shape[2]


def dct2_patch(patch) -> np.ndarray:
    """Orthonormal type-II 2-D DCT of one patch, flattened row-major."""
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2:
        raise DataError(f"patch must be 2-D, got shape {p.shape}")
    return sfft.dctn(p, type=2, norm="ortho").ravel()


def _dct_all(patches: np.ndarray) -> np.ndarray:
    """DCT of every patch: (rows, cols, m, n) -> (rows*cols, m*n)."""
    rows, cols, m, n = patches.shape
    coeffs = sfft.dctn(patches, type=2, norm="ortho", axes=(2, 3))
    return coeffs.reshape(rows * cols, m * n)


def fit_cell_detectors(residual: Residual, cfg: ExtractorConfig) -> list:
    """One one-class SVM per grid cell, trained on that cell's DCT patches.

    Returns an s-by-t nested list of models. gamma is the scale heuristic
    over the cell's own samples; constant cells fall back to gamma=1.
    """
    m, n = cfg.patch_shape
    s, t = cfg.grid_shape
    cropped = crop_to_patch_multiple(residual.data, m, n)
    patches = decompose_patches(cropped, m, n)
    grid = build_patch_grid(patches, s, t)
    dct = _dct_all(patches).reshape(patches.shape[0], patches.shape[1], m * n)

    detectors = []
    for a in range(s):
        row = []
        for b in range(t):
            ii, jj = grid.patches_in_cell(a, b)
            X = dct[ii, jj]
            try:
                gamma = ocsvm.gamma_scale(X)
            except ZeroVarianceError:
                gamma = 1.0
            try:
                model = ocsvm.fit(X, ocsvm.OcSvmParams(nu=cfg.nu, gamma=gamma, tol=cfg.tol))
            except NoiseGridError as e:
                raise type(e)(f"cell ({a},{b}): {e}") from e
            row.append(model)
        detectors.append(row)
    return detectors


def reinterpret(detectors: list, patches: np.ndarray) -> ReinterpretationField:
    """Score every patch against every cell's detector.

    v(i,j)[a*t+b] = outlier likelihood of patch (i,j) under the detector of
    cell (a,b); each patch is scored against its own cell too.
    """
    s, t = len(detectors), len(detectors[0])
    rows, cols = patches.shape[:2]
    dct = _dct_all(patches)
    values = np.empty((rows * cols, s * t))
    for a in range(s):
        for b in range(t):
            values[:, a * t + b] = -ocsvm.decision_many(detectors[a][b], dct)
    return ReinterpretationField(values=values.reshape(rows, cols, s * t), grid_shape=(s, t))


def histogram_field(fld: ReinterpretationField, bins: int = DEFAULT_BINS) -> HistogramField:
    """Equal-width histograms over the image-wide likelihood range.

    Bins are half-open except the last (closed at the max). Counts are
    scaled by the image-wide maximum bin count, so entries lie in [0, 1]
    and the value 1 is attained somewhere in the image.
    """
    if bins < 2:
        raise DataError(f"need >= 2 bins, got {bins}")
    v = fld.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        idx = ((v - lo) / (hi - lo) * bins).astype(np.int64)
        np.clip(idx, 0, bins - 1, out=idx)
    else:
        idx = np.zeros(v.shape, dtype=np.int64)  # degenerate field: bin 0
    counts = (idx[..., None] == np.arange(bins)).sum(axis=2).astype(np.float64)
    max_count = int(counts.max())
    return HistogramField(values=counts / max_count, value_range=(lo, hi), max_count=max_count)


def proximity_features(hf: HistogramField, i: int, j: int) -> np.ndarray:
    """Distances from patch (i,j)'s histogram to its 8 neighbors' histograms.

    Order NW, N, NE, W, E, SW, S, SE; out-of-bounds neighbors contribute 0.
    """
    rows, cols = hf.values.shape[:2]
    if not (0 <= i < rows and 0 <= j < cols):
        raise DataError(f"patch index ({i},{j}) outside field {rows}x{cols}")
    out = np.zeros(8)
    for m, (di, dj) in enumerate(_NEIGHBOR_OFFSETS):
        ni, nj = i + di, j + dj
        if 0 <= ni < rows and 0 <= nj < cols:
            out[m] = np.linalg.norm(hf.values[i, j] - hf.values[ni, nj])
    return out


def _proximity_all(values: np.ndarray) -> np.ndarray:
    """Vectorized proximity_features over the whole field."""
    rows, cols = values.shape[:2]
    out = np.zeros((rows, cols, 8))
    for m, (di, dj) in enumerate(_NEIGHBOR_OFFSETS):
        i0, i1 = max(0, -di), rows - max(0, di)
        j0, j1 = max(0, -dj), cols - max(0, dj)
        a = values[i0:i1, j0:j1]
        b = values[i0 + di:i1 + di, j0 + dj:j1 + dj]
        out[i0:i1, j0:j1, m] = np.sqrt(((a - b) ** 2).sum(axis=2))
    return out


def kmeans(vectors, k: int, restarts: int = DEFAULT_RESTARTS, seed=0):
    """Best-of-restarts Lloyd clustering.

    Each restart initializes centroids from k distinct samples drawn
    uniformly; iterations stop when assignments repeat (or after 300
    rounds). Returns (centroids, weights) of the restart with minimal
    within-cluster sum of squares. k is reduced if there are fewer vectors.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError(f"vectors must be a non-empty n x d matrix, got shape {X.shape}")
    if k < 1 or restarts < 1:
        raise DataError(f"k and restarts must be >= 1, got {k}, {restarts}")
    n = X.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)

    best = None
    for _ in range(restarts):
        centroids = X[rng.choice(n, size=k, replace=False)].copy()
        assign = np.full(n, -1)
        for _ in range(300):
            d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            new_assign = np.argmin(d2, axis=1)  # ties to lowest index
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for c in range(k):
                members = X[assign == c]
                if len(members):  # empty cluster keeps its old centroid
                    centroids[c] = members.mean(axis=0)
        wcss = float(((X - centroids[assign]) ** 2).sum())
        if best is None or wcss < best[0]:
            counts = np.bincount(assign, minlength=k)
            best = (wcss, centroids, counts / n)
    return best[1], best[2]


def global_features(v_h, centroids, weights) -> np.ndarray:
    """(d_1..d_k, w_1..w_k) against centroids ordered by descending weight,
    ties by ascending first coordinate."""
    v = np.asarray(v_h, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != v.shape[0]:
        raise DataError(f"centroid dims {c.shape} do not match vector length {v.shape[0]}")
    order = np.lexsort((c[:, 0], -w))
    c, w = c[order], w[order]
    dists = np.linalg.norm(c - v[None, :], axis=1)
    return np.concatenate([dists, w])


def extract(image, cfg: ExtractorConfig = ExtractorConfig(), seed=0) -> FeatureMatrix:
    """Full per-patch feature matrix for one RGB image.

    Residuals are processed in stack order; each contributes a histogram,
    proximity and global segment. Deterministic for a fixed seed.
    """
    stack = build_stack(image, cfg.residuals)
    m, n = cfg.patch_shape
    segments = []
    layout = []
    offset = 0
    for ridx, res in enumerate(stack):
        try:
            cropped = crop_to_patch_multiple(res.data, m, n)
            patches = decompose_patches(cropped, m, n)
            detectors = fit_cell_detectors(res, cfg)
            fld = reinterpret(detectors, patches)
            hf = histogram_field(fld, cfg.bins)
            prox = _proximity_all(hf.values)

            rows, cols = hf.values.shape[:2]
            flat_vh = hf.values.reshape(rows * cols, cfg.bins)
            centroids, weights = kmeans(
                flat_vh, cfg.k, restarts=cfg.restarts, seed=(seed, ridx)
            )
            order = np.lexsort((centroids[:, 0], -weights))
            centroids, weights = centroids[order], weights[order]
            k_eff = len(weights)
            glob = np.zeros((rows, cols, 2 * cfg.k))
            diff = flat_vh[:, None, :] - centroids[None, :, :]
            glob[..., :k_eff] = np.sqrt((diff ** 2).sum(axis=2)).reshape(rows, cols, k_eff)
            glob[..., cfg.k:cfg.k + k_eff] = weights
        except NoiseGridError as e:
            raise type(e)(f"residual {res.kind}: {e}") from e

        segments.append(np.concatenate([hf.values, prox, glob], axis=2))
        for comp, length in (("histogram", cfg.bins), ("proximity", 8), ("global", 2 * cfg.k)):
            layout.append((res.kind, comp, offset, length))
            offset += length

    return FeatureMatrix(values=np.concatenate(segments, axis=2), layout=tuple(layout))


# ---------------------------------------------------------------------------
# Serialization: flat binary + text sidecar with the layout and config hash
# ---------------------------------------------------------------------------

_MAGIC = b"NGFM"
_VERSION = 1


def save_feature_matrix(path, fm: FeatureMatrix, config_hash: str = "") -> None:
    rows, cols, flen = fm.values.shape
    header = _MAGIC + struct.pack("<4I", _VERSION, rows, cols, flen)
    data = np.ascontiguousarray(fm.values, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(data)
    lines = [f"config_hash: {config_hash}", f"feature_len: {flen}"]
    for kind, comp, off, length in fm.layout:
        lines.append(f"segment: {kind} {comp} {off} {length}")
    with open(f"{path}.meta", "w") as f:
        f.write("\n".join(lines) + "\n")


def load_feature_matrix(path) -> tuple[FeatureMatrix, str]:
    """Returns (matrix, config_hash); hash is '' when the sidecar is absent."""
    with open(path, "rb") as f:
        head = f.read(4 + 16)
        if len(head) < 20 or head[:4] != _MAGIC:
            raise DataError(f"{path}: not a feature matrix file")
        version, rows, cols, flen = struct.unpack("<4I", head[4:])
        if version != _VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        raw = f.read(rows * cols * flen * 8)
    if len(raw) != rows * cols * flen * 8:
        raise DataError(f"{path}: truncated payload")
    values = np.frombuffer(raw, dtype="<f8").reshape(rows, cols, flen).copy()

    layout = []
    config_hash = ""
    try:
        with open(f"{path}.meta") as f:
            for line in f:
                mo = re.match(r"config_hash:\s*(\S*)", line)
                if mo:
                    config_hash = mo.group(1)
                mo = re.match(r"segment:\s*(\S+)\s+(\S+)\s+(\d+)\s+(\d+)", line)
                if mo:
                    layout.append((mo.group(1), mo.group(2), int(mo.group(3)), int(mo.group(4))))
    except FileNotFoundError:
        pass
    return FeatureMatrix(values=values, layout=tuple(layout)), config_hash
