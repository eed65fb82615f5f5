"""Patch-level evaluation: AUC, F1, genuine accuracy, and a simplified
noise-inconsistency baseline for comparison.

Reports bucket patches by tampering type (removal buckets keyed by their
noise multiplier) plus an overall row across every image including genuine
ones. Undefined metrics are reported as "n/a", never coerced to 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedMetricError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
DEFAULT_NOI_TILE = 8

# report row order; removal buckets keyed by noise multiplier
ROW_ORDER = ("R[0]", "R[0.5σ]", "R[σ]", "R[2σ]", "J", "F", "B", "G", "overall")
_REMOVAL_KEYS = {0.0: "R[0]", 0.5: "R[0.5σ]", 1.0: "R[σ]", 2.0: "R[2σ]"}


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray  # (rows, cols) in [0, 1]
    provenance: str  # "ours" | "noi"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"score map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise DataError("score map values must be finite and in [0, 1]")
        if self.provenance not in ("ours", "noi"):
            raise DataError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MetricsReport:
    provenance: str
    threshold: float
    # row key -> {"auc": float|None, "f1": float|None, "accuracy": float, "n_patches": int}
    rows: dict


def _ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    csum = np.cumsum(counts)
    avg = (csum - counts + 1) + (counts - 1) / 2.0
    return avg[inv]


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic; ties count half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise DataError(f"scores {s.shape} and labels {y.shape} do not align")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    r = _ranks(s)
    return float((r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    """F1 with prediction = score >= threshold."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise DataError(f"scores {s.shape} and labels {y.shape} do not align")
    if (y == 1).sum() == 0:
        raise UndefinedMetricError("F1 needs at least one positive label")
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return 2.0 * tp / (2.0 * tp + fp + fn)


def accuracy_genuine(scores, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of patches scored below the threshold (all-genuine input)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DataError("no scores given")
    return float(np.mean(s < threshold))


# ---------------------------------------------------------------------------
# NOI baseline: local noise level from first-level Haar diagonal details
# ---------------------------------------------------------------------------

def _haar_hh(gray: np.ndarray) -> np.ndarray:
    h2, w2 = gray.shape[0] // 2 * 2, gray.shape[1] // 2 * 2
    g = gray[:h2, :w2]
    return (g[0::2, 0::2] - g[0::2, 1::2] - g[1::2, 0::2] + g[1::2, 1::2]) / 2.0


def noi_score(img, tile: int = DEFAULT_NOI_TILE, patch_shape=None) -> ScoreMap:
    """Per-tile noise sigma estimate, rescaled to [0, 1].

    sigma is the robust median(|HH|)/0.6745 over each tile x tile pixel
    block. When patch_shape=(rows, cols) is given the tile map is first
    resampled to those dims by nearest tile, then rescaled, so the output
    still attains 0 and 1.
    """
    gray = np.asarray(img, dtype=np.float64)
    if gray.ndim != 2:
        raise DataError(f"baseline expects a grayscale image, got shape {gray.shape}")
    if tile < 2 or tile % 2 != 0:
        raise DataError(f"tile must be even and >= 2, got {tile}")
    if min(gray.shape) < 2 * tile:
        raise DataError(f"image {gray.shape} too small for tile {tile}")

    hh = _haar_hh(gray)
    th = tile // 2  # tile size in HH coordinates
    ty, tx = hh.shape[0] // th, hh.shape[1] // th
    blocks = hh[:ty * th, :tx * th].reshape(ty, th, tx, th).swapaxes(1, 2)
    sigma = np.median(np.abs(blocks.reshape(ty, tx, th * th)), axis=2) / 0.6745

    if patch_shape is not None:
        rows, cols = patch_shape
        if rows < 1 or cols < 1:
            raise DataError(f"bad patch shape {patch_shape}")
        yi = np.minimum(((np.arange(rows) + 0.5) * ty / rows).astype(np.int64), ty - 1)
        xi = np.minimum(((np.arange(cols) + 0.5) * tx / cols).astype(np.int64), tx - 1)
        sigma = sigma[np.ix_(yi, xi)]

    lo, hi = float(sigma.min()), float(sigma.max())
    if hi > lo:
        values = (sigma - lo) / (hi - lo)
    else:
        values = np.full_like(sigma, 0.5)  # flat noise field: no signal either way
    return ScoreMap(values=values, provenance="noi")


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------

def bucket_key(record) -> str:
    """Report row for a corpus record (removals split by noise multiplier)."""
    if record.type == "R":
        return _REMOVAL_KEYS[record.params["sigma_multiplier"]]
    return record.type


def evaluate(records, score_fn, threshold: float = DEFAULT_THRESHOLD,
             provenance: str = "ours") -> MetricsReport:
    """Aggregate patch metrics per tampering type and overall.

    score_fn(record) must return (scores, labels) as equal-shaped arrays of
    per-patch tamper scores in [0, 1] and binary ground truth.
    """
    buckets: dict[str, list] = {}
    for rec in records:
        scores, labels = score_fn(rec)
        s = np.asarray(scores, dtype=np.float64).ravel()
        y = np.asarray(labels).ravel().astype(np.int64)
        if s.shape != y.shape:
            raise DataError(f"{rec.image}: scores {s.shape} vs labels {y.shape}")
        buckets.setdefault(bucket_key(rec), []).append((s, y))
        buckets.setdefault("overall", []).append((s, y))

    rows = {}
    for key in ROW_ORDER:
        if key not in buckets:
            if key != "overall":
                log.warning("no images of type %s; row omitted", key)
            continue
        s = np.concatenate([b[0] for b in buckets[key]])
        y = np.concatenate([b[1] for b in buckets[key]])
        try:
            row_auc = auc(s, y)
        except UndefinedMetricError:
            row_auc = None
        try:
            row_f1 = f1(s, y, threshold)
        except UndefinedMetricError:
            row_f1 = None
        rows[key] = {
            "auc": row_auc,
            "f1": row_f1,
            "accuracy": float(np.mean((s >= threshold) == y)),
            "n_patches": int(s.size),
        }
    return MetricsReport(provenance=provenance, threshold=threshold, rows=rows)


def _cell(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def report_to_json(report: MetricsReport) -> str:
    obj = {
        "provenance": report.provenance,
        "threshold": report.threshold,
        "rows": {
            key: {
                "auc": "n/a" if row["auc"] is None else row["auc"],
                "f1": "n/a" if row["f1"] is None else row["f1"],
                "accuracy": row["accuracy"],
                "n_patches": row["n_patches"],
            }
            for key, row in report.rows.items()
        },
    }
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def report_to_text(report: MetricsReport) -> str:
    headers = ("type", "auc", "f1", "accuracy", "n_patches")
    lines = [[key, _cell(row["auc"]), _cell(row["f1"]),
              _cell(row["accuracy"]), str(row["n_patches"])]
             for key, row in report.rows.items()]
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h)
              for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [f"method: {report.provenance}  threshold: {report.threshold}",
           fmt.format(*headers)]
    out.extend(fmt.format(*l) for l in lines)
    return "\n".join(out) + "\n"


def score_heatmap(values: np.ndarray, patch_shape) -> np.ndarray:
    """Nearest-neighbor upsample of a patch score map to pixel dims."""
    m, n = patch_shape
    if m < 1 or n < 1:
        raise DataError(f"bad patch shape {patch_shape}")
    return np.kron(np.asarray(values, dtype=np.float64), np.ones((m, n)))
