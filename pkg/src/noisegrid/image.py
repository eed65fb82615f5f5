"""Image representation, patch decomposition, grid construction, mask labeling.

Images are plain numpy arrays: an RGB image is (h, w, 3) float64 with values
in [0, 1], a grayscale image is (h, w) float64 in [0, 1], and a tamper mask
is (h, w) uint8 with values in {0, 1}. Masks are stored on disk as
single-channel PNGs with values {0, 255}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def as_gray(arr) -> np.ndarray:
    """Validate a 2-D intensity array and return it as float64."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ImageError(f"expected a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ImageError("grayscale values must be finite and in [0, 1]")
    return a


def as_rgb(arr) -> np.ndarray:
    """Validate an (h, w, 3) intensity array and return it as float64."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ImageError(f"expected a (h, w, 3) array, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ImageError("channel values must be finite and in [0, 1]")
    return a


def load_image(path) -> np.ndarray:
    """Load a PNG or JPEG file as an (h, w, 3) float64 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise ImageError(f"unsupported format {im.format!r} for {path}")
            rgb = im.convert("RGB")
            data = np.asarray(rgb, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise ImageError(f"no such image file: {path}") from None
    except UnidentifiedImageError:
        raise ImageError(f"unreadable image file: {path}") from None
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return data


def save_image(path, img) -> None:
    """Write an RGB or grayscale [0, 1] array as an 8-bit PNG."""
    a = np.asarray(img, dtype=np.float64)
    u8 = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG")


def to_grayscale(img) -> np.ndarray:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    rgb = as_rgb(img)
    gray = rgb @ np.asarray(LUMA_WEIGHTS)
    # the weighted sum of in-range channels can exceed 1 only by rounding
    return np.clip(gray, 0.0, 1.0)


def crop_to_patch_multiple(img, m: int, n: int) -> np.ndarray:
    """Crop to the top-left region whose dims are multiples of (m, n)."""
    a = np.asarray(img)
    h, w = a.shape[:2]
    if m < 1 or n < 1:
        raise ImageError(f"patch dims must be >= 1, got ({m}, {n})")
    if m > h or n > w:
        raise ImageError(f"patch ({m}, {n}) larger than image ({h}, {w})")
    return a[: (h // m) * m, : (w // n) * n]


def decompose_patches(img, m: int, n: int) -> np.ndarray:
    """Tile a grayscale image into a (rows, cols, m, n) patch matrix.

    Dimensions must already be divisible by (m, n); crop first if needed.
    Patch (i, j) holds pixels [i*m, (i+1)*m) x [j*n, (j+1)*n).
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    if h % m != 0 or w % n != 0:
        raise ImageError(f"image ({h}, {w}) not divisible by patch ({m}, {n})")
    rows, cols = h // m, w // n
    return a.reshape(rows, m, cols, n).swapaxes(1, 2).copy()


def reassemble_patches(patches) -> np.ndarray:
    """Inverse of decompose_patches."""
    p = np.asarray(patches)
    rows, cols, m, n = p.shape
    return p.swapaxes(1, 2).reshape(rows * m, cols * n)


@dataclass(frozen=True)
class PatchGrid:
    """Partition of a (rows x cols) patch matrix into s x t cells.

    Patch (i, j) belongs to cell (min(i // (rows // s), s-1),
    min(j // (cols // t), t-1)); remainder patches join the last
    row/column of cells, so only edge cells deviate from the
    floor(rows/s) x floor(cols/t) interior size.
    """

    rows: int
    cols: int
    s: int
    t: int

    def __post_init__(self):
        if not (1 <= self.s <= self.rows and 1 <= self.t <= self.cols):
            raise ImageError(
                f"grid ({self.s}, {self.t}) larger than patch matrix "
                f"({self.rows}, {self.cols})"
            )

    def cell_of(self, i: int, j: int) -> tuple[int, int]:
        """Cell index (a, b) owning patch (i, j)."""
        a = min(i // (self.rows // self.s), self.s - 1)
        b = min(j // (self.cols // self.t), self.t - 1)
        return a, b

    def cell_index_map(self) -> np.ndarray:
        """(rows, cols, 2) array of cell indices for every patch."""
        ii = np.minimum(np.arange(self.rows) // (self.rows // self.s), self.s - 1)
        jj = np.minimum(np.arange(self.cols) // (self.cols // self.t), self.t - 1)
        a, b = np.meshgrid(ii, jj, indexing="ij")
        return np.stack([a, b], axis=-1)

    def patches_in_cell(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Row and column patch indices owned by cell (a, b)."""
        cm = self.cell_index_map()
        sel = (cm[..., 0] == a) & (cm[..., 1] == b)
        return np.nonzero(sel)


def build_patch_grid(patches, s: int, t: int) -> PatchGrid:
    """Grid over a (rows, cols, m, n) patch matrix."""
    p = np.asarray(patches)
    return PatchGrid(rows=p.shape[0], cols=p.shape[1], s=s, t=t)


def load_mask(path) -> np.ndarray:
    """Load a single-channel {0, 255} PNG as a {0, 1} uint8 matrix."""
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("L"))
    except FileNotFoundError:
        raise ImageError(f"no such mask file: {path}") from None
    except UnidentifiedImageError:
        raise ImageError(f"unreadable mask file: {path}") from None
    return (data >= 128).astype(np.uint8)


def save_mask(path, mask) -> None:
    """Write a {0, 1} matrix as a single-channel {0, 255} PNG."""
    m = np.asarray(mask)
    Image.fromarray((m > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def mask_to_patch_labels(mask, m: int, n: int, overlap_threshold: float = 0.5) -> np.ndarray:
    """Per-patch binary labels from a pixel mask.

    A patch is labeled 1 iff the fraction of mask-1 pixels inside it is
    >= overlap_threshold. The mask may be larger than the cropped image;
    only the top-left patch-multiple region is considered.
    """
    if not 0.0 < overlap_threshold <= 1.0:
        raise ImageError(f"overlap_threshold must be in (0, 1], got {overlap_threshold}")
    a = np.asarray(mask)
    if a.ndim != 2:
        raise ImageError(f"mask must be 2-D, got shape {a.shape}")
    h, w = a.shape
    if m > h or n > w:
        raise ImageError(f"patch ({m}, {n}) larger than mask ({h}, {w})")
    cropped = (a[: (h // m) * m, : (w // n) * n] > 0).astype(np.float64)
    rows, cols = cropped.shape[0] // m, cropped.shape[1] // n
    frac = cropped.reshape(rows, m, cols, n).mean(axis=(1, 3))
    return (frac >= overlap_threshold).astype(np.uint8)
