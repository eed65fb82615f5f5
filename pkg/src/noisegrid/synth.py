"""Synthetic tampering corpus: removal, splicing, retouching, plus
procedurally generated blot-like backgrounds to stand in for the
unavailable originals.

Every operation is seeded and pixel-exact: outside the ground-truth mask
the output equals the source image bit for bit (after 8-bit quantization),
and regenerating with the same seed reproduces identical bytes.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError
from .image import as_rgb, to_grayscale

TYPE_CODES = ("R", "J", "F", "B", "G")  # removal, jpeg splice, sharpen splice, blur, genuine
REMOVAL_MULTIPLIERS = (0.0, 0.5, 1.0, 2.0)
SPLICE_AREA_RANGE = (0.08, 0.20)
JPEG_QUALITY_RANGE = (50, 85)  # inclusive
BLUR_SIGMA_RANGE = (1.0, 3.0)

_SHARPEN = np.array([[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError(f"rect must have positive size, got {self}")
        if self.x < 0 or self.y < 0:
            raise DataError(f"rect origin must be non-negative, got {self}")

    def check_inside(self, shape) -> None:
        h, w = shape[:2]
        if self.x + self.width > w or self.y + self.height > h:
            raise DataError(f"{self} does not fit inside a {h}x{w} image")

    def overlaps(self, other: "Rect") -> bool:
        return (
            self.x < other.x + other.width
            and other.x < self.x + self.width
            and self.y < other.y + other.height
            and other.y < self.y + self.height
        )

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.y, self.y + self.height), slice(self.x, self.x + self.width))

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.width, self.height]


@dataclass(frozen=True)
class TamperRecord:
    image: str
    mask: str  # "none" for genuine images
    sources: tuple[str, ...]
    type: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.type not in TYPE_CODES:
            raise DataError(f"unknown tamper type {self.type!r}")
        if self.type == "R":
            c = self.params.get("sigma_multiplier")
            if c not in REMOVAL_MULTIPLIERS:
                raise DataError(f"removal record needs a sigma multiplier in "
                                f"{REMOVAL_MULTIPLIERS}, got {c}")
        if self.type == "G" and self.mask != "none":
            raise DataError("genuine records use mask 'none'")


def _rect_mask(shape, rect: Rect) -> np.ndarray:
    mask = np.zeros(shape[:2], dtype=np.uint8)
    mask[rect.slices] = 1
    return mask


def synth_removal(img, removal: Rect, sample: Rect, seed: int = 0, source_id: str = ""):
    """Fill the removal rect with noise matched to the sample region.

    Produces 4 variants with noise scale c*sigma, c in {0, 0.5, 1, 2};
    sigma and mu are the sample region's grayscale statistics. The fill is
    identical across channels.
    """
    rgb = as_rgb(img)
    removal.check_inside(rgb.shape)
    sample.check_inside(rgb.shape)
    if removal.overlaps(sample):
        raise DataError(f"removal {removal} overlaps sample {sample}")

    gray = to_grayscale(rgb)
    region = gray[sample.slices]
    mu, sigma = float(region.mean()), float(region.std())
    mask = _rect_mask(rgb.shape, removal)

    out = []
    for i, c in enumerate(REMOVAL_MULTIPLIERS):
        rng = np.random.default_rng((seed, i))
        fill = np.full((removal.height, removal.width), mu)
        if c > 0.0:
            fill = rng.normal(mu, c * sigma, size=fill.shape)
        fill = np.clip(fill, 0.0, 1.0)
        variant = rgb.copy()
        variant[removal.slices] = fill[..., None]
        rec = TamperRecord(
            image="", mask="", sources=(source_id,) if source_id else (),
            type="R",
            params={
                "sigma_multiplier": c,
                "removal": removal.as_list(),
                "sample": sample.as_list(),
                "mu": mu,
                "sigma": sigma,
            },
            seed=seed,
        )
        out.append((variant, mask, rec))
    return out


def _draw_rect(rng, host_shape) -> Rect:
    """Uniform area fraction in SPLICE_AREA_RANGE, aspect in [0.5, 2]."""
    h, w = host_shape[:2]
    frac = rng.uniform(*SPLICE_AREA_RANGE)
    aspect = rng.uniform(0.5, 2.0)
    area = frac * h * w
    rh = int(np.clip(round(np.sqrt(area * aspect)), 4, h - 1))
    rw = int(np.clip(round(area / rh), 4, w - 1))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    return Rect(x=x, y=y, width=rw, height=rh)


def _jpeg_roundtrip(region: np.ndarray, quality: int) -> np.ndarray:
    u8 = np.round(region * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def synth_splice(background, foreground, seed: int = 0, mode: str = "jpeg",
                 background_id: str = "", foreground_id: str = ""):
    """Paste a foreground region into the background at a random spot.

    jpeg mode re-encodes the region at a random quality before pasting;
    sharpen mode runs it through a 3x3 unsharp kernel.
    """
    bg = as_rgb(background)
    fg = as_rgb(foreground)
    if mode not in ("jpeg", "sharpen"):
        raise DataError(f"splice mode must be 'jpeg' or 'sharpen', got {mode!r}")
    rng = np.random.default_rng(seed)
    rect = _draw_rect(rng, bg.shape)
    if fg.shape[0] < rect.height or fg.shape[1] < rect.width:
        raise DataError(
            f"foreground {fg.shape[:2]} too small for a "
            f"{rect.height}x{rect.width} region"
        )
    sy = int(rng.integers(0, fg.shape[0] - rect.height + 1))
    sx = int(rng.integers(0, fg.shape[1] - rect.width + 1))
    src = fg[sy:sy + rect.height, sx:sx + rect.width]

    params = {
        "rect": rect.as_list(),
        "source_rect": [sx, sy, rect.width, rect.height],
    }
    if mode == "jpeg":
        quality = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
        src = _jpeg_roundtrip(src, quality)
        params["quality"] = quality
        code = "J"
    else:
        src = np.clip(
            np.stack([ndimage.correlate(src[..., c], _SHARPEN, mode="reflect")
                      for c in range(3)], axis=2),
            0.0, 1.0,
        )
        code = "F"

    out = bg.copy()
    out[rect.slices] = src
    sources = tuple(s for s in (background_id, foreground_id) if s)
    rec = TamperRecord(image="", mask="", sources=sources, type=code,
                       params=params, seed=seed)
    return out, _rect_mask(bg.shape, rect), rec


def synth_blur(img, seed: int = 0, source_id: str = ""):
    """Gaussian-blur a random region; pixels outside it are untouched."""
    rgb = as_rgb(img)
    if rgb.shape[0] < 64 or rgb.shape[1] < 64:
        raise DataError(f"image {rgb.shape[:2]} too small to retouch (need 64x64)")
    rng = np.random.default_rng(seed)
    rect = _draw_rect(rng, rgb.shape)
    sigma = float(rng.uniform(*BLUR_SIGMA_RANGE))
    radius = int(np.ceil(3.0 * sigma))

    region = rgb[rect.slices]
    blurred = np.stack(
        [ndimage.gaussian_filter(region[..., c], sigma, mode="reflect", radius=radius)
         for c in range(3)],
        axis=2,
    )
    out = rgb.copy()
    out[rect.slices] = np.clip(blurred, 0.0, 1.0)
    rec = TamperRecord(
        image="", mask="", sources=(source_id,) if source_id else (),
        type="B",
        params={"rect": rect.as_list(), "sigma": sigma, "radius": radius},
        seed=seed,
    )
    return out, _rect_mask(rgb.shape, rect), rec


# ---------------------------------------------------------------------------
# Procedural backgrounds
# ---------------------------------------------------------------------------

def _value_noise(rng, shape, cells: int) -> np.ndarray:
    """Bilinear interpolation of a random lattice; one smooth octave."""
    h, w = shape
    lattice = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1))
    yi = np.linspace(0.0, cells, h)
    xi = np.linspace(0.0, cells, w)
    coords = np.stack(np.meshgrid(yi, xi, indexing="ij"))
    return ndimage.map_coordinates(lattice, coords.reshape(2, -1), order=1).reshape(h, w)


def procedural_background(height: int = 256, width: int = 256, seed: int = 0) -> np.ndarray:
    """Blot-like genuine image: layered smooth texture, dark horizontal
    bands, mild tint, and per-channel sensor-style noise."""
    if height < 32 or width < 32:
        raise DataError(f"background must be at least 32x32, got {height}x{width}")
    rng = np.random.default_rng(seed)

    base = np.zeros((height, width))
    amp_total = 0.0
    for octave, cells in enumerate((4, 8, 16, 32)):
        amp = 0.5 ** octave
        base += amp * _value_noise(rng, (height, width), cells)
        amp_total += amp
    base /= amp_total
    base = 0.55 + 0.35 * (base - 0.5)  # mid-bright, low contrast

    # dark horizontal bands with soft vertical profile and tapered ends
    n_bands = int(rng.integers(2, 6))
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :]
    for _ in range(n_bands):
        cy = rng.uniform(0.1, 0.9) * height
        band_h = rng.uniform(0.02, 0.06) * height
        x0 = rng.uniform(0.0, 0.6) * width
        x1 = x0 + rng.uniform(0.25, 0.6) * width
        depth = rng.uniform(0.25, 0.55)
        profile_y = np.exp(-0.5 * ((ys - cy) / band_h) ** 2)
        taper = 1.0 / (1.0 + np.exp(-(xs - x0) / 3.0)) - 1.0 / (1.0 + np.exp(-(xs - x1) / 3.0))
        base -= depth * profile_y * taper

    tint = np.array([1.0, 0.97, 0.93])
    rgb = np.clip(base, 0.0, 1.0)[..., None] * tint
    noise_sigma = rng.uniform(0.015, 0.03)
    rgb = rgb + rng.normal(0.0, noise_sigma, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _record_to_obj(rec: TamperRecord) -> dict:
    return {
        "image": rec.image,
        "mask": rec.mask,
        "sources": list(rec.sources),
        "type": rec.type,
        "params": rec.params,
        "seed": rec.seed,
    }


def write_manifest(records, path) -> None:
    """JSON array sorted by output path; every referenced file must exist."""
    recs = sorted(records, key=lambda r: r.image)
    base = os.path.dirname(os.fspath(path))
    for rec in recs:
        refs = [rec.image] + ([rec.mask] if rec.mask != "none" else []) + list(rec.sources)
        for ref in refs:
            if ref and not os.path.exists(os.path.join(base, ref)):
                raise DataError(f"manifest references missing file {ref!r}")
    text = json.dumps([_record_to_obj(r) for r in recs], indent=2, sort_keys=True)
    with open(path, "w") as f:
        f.write(text + "\n")


def read_manifest(path) -> list[TamperRecord]:
    try:
        with open(path) as f:
            items = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(items, list):
        raise DataError(f"manifest {path} must be a JSON array")
    out = []
    for obj in items:
        try:
            out.append(TamperRecord(
                image=obj["image"], mask=obj["mask"], sources=tuple(obj["sources"]),
                type=obj["type"], params=obj["params"], seed=obj["seed"],
            ))
        except (KeyError, TypeError) as e:
            raise DataError(f"malformed manifest record {obj!r}: {e}") from e
    return out
