"""Residual image generators: content suppressors that expose noise patterns.

Four families: fixed high-pass (steganalytic) kernels, JPEG error level
analysis, median-filter difference, and wavelet-denoising difference. All
spatial filters use symmetric (reflect) boundary padding so image borders do
not masquerade as tampering. Every generator is deterministic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, ImageError, NoiseGridError
from .image import as_gray, as_rgb, to_grayscale

DEFAULT_ELA_QUALITY = 90
DEFAULT_MEDIAN_WINDOW = 3


@dataclass(frozen=True)
class Kernel:
    """A fixed odd-dimension high-pass convolution kernel."""

    name: str
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ImageError(f"kernel {self.name!r} must have odd dims, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ImageError(f"kernel {self.name!r} has non-finite weights")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class Residual:
    """One residual image: same dims as its source, values may be negative."""

    kind: str
    data: np.ndarray


@dataclass(frozen=True)
class ResidualStack:
    """Ordered residuals derived from one source image."""

    source_id: str
    residuals: tuple[Residual, ...]

    def __post_init__(self):
        kinds = [r.kind for r in self.residuals]
        if len(set(kinds)) != len(kinds):
            raise ImageError(f"duplicate residual kinds in stack: {kinds}")
        shapes = {r.data.shape for r in self.residuals}
        if len(shapes) > 1:
            raise ImageError(f"residual dims disagree: {shapes}")

    def __iter__(self):
        return iter(self.residuals)

    def __len__(self):
        return len(self.residuals)


def default_steganalytic_kernels() -> list[Kernel]:
    """The default high-pass predictor set (all zero-sum).

    d1h/d1v are first-order differences, d2 a second-order difference, kb
    the 3x3 square center-surround predictor familiar from steganalysis
    filter banks. The set is a configurable stand-in; swap in others via
    conv_residual for field-specific tuning.
    """
    return [
        Kernel("d1h", np.array([[0.0, -1.0, 1.0]])),
        Kernel("d1v", np.array([[0.0], [-1.0], [1.0]])),
        Kernel("d2", np.array([[1.0, -2.0, 1.0]])),
        Kernel(
            "kb",
            0.25 * np.array([
                [-1.0, 2.0, -1.0],
                [2.0, -4.0, 2.0],
                [-1.0, 2.0, -1.0],
            ]),
        ),
    ]


def conv_residual(img, kernel) -> Residual:
    """2-D correlation of a grayscale image with a high-pass kernel.

    Symmetric boundary padding, output same size as input. `kernel` may be
    a Kernel or a raw 2-D array.
    """
    gray = as_gray(img)
    if isinstance(kernel, Kernel):
        name, w = kernel.name, kernel.weights
    else:
        w = np.asarray(kernel, dtype=np.float64)
        name = "custom"
    if w.ndim != 2:
        raise ImageError(f"kernel must be 2-D, got shape {w.shape}")
    if w.shape[0] > gray.shape[0] or w.shape[1] > gray.shape[1]:
        raise ImageError(f"kernel {w.shape} larger than image {gray.shape}")
    out = ndimage.correlate(gray, w, mode="reflect")
    return Residual(kind=f"steganalytic:{name}", data=out)


def ela_residual(img, quality: int = DEFAULT_ELA_QUALITY) -> Residual:
    """Error level analysis: JPEG round-trip difference.

    Re-encodes the RGB image as JPEG at `quality`, decodes it, and returns
    the per-pixel mean absolute channel difference in [0, 1]. The reference
    is the 8-bit quantized input so the residual measures compression loss
    only.
    """
    rgb = as_rgb(img)
    if not 1 <= quality <= 100:
        raise ImageError(f"JPEG quality must be in [1, 100], got {quality}")
    u8 = np.round(rgb * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        dec = np.asarray(im.convert("RGB"), dtype=np.float64)
    diff = np.abs(u8.astype(np.float64) - dec).mean(axis=2) / 255.0
    return Residual(kind="ela", data=diff)


def median_residual(img, window: int = DEFAULT_MEDIAN_WINDOW) -> Residual:
    """Difference between the image and its median-filtered version."""
    gray = as_gray(img)
    if window % 2 == 0 or window < 3:
        raise ImageError(f"median window must be odd and >= 3, got {window}")
    if window >= min(gray.shape):
        raise ImageError(f"median window {window} too large for image {gray.shape}")
    filtered = ndimage.median_filter(gray, size=window, mode="reflect")
    return Residual(kind="median", data=gray - filtered)


# ---------------------------------------------------------------------------
# Wavelet denoising residual: 2-level periodized D4 transform + VisuShrink.
# ---------------------------------------------------------------------------

_SQRT3 = np.sqrt(3.0)
# Daubechies 4-tap analysis filters (orthonormal)
_D4_LO = np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]) / (4.0 * np.sqrt(2.0))
_D4_HI = np.array([_D4_LO[3], -_D4_LO[2], _D4_LO[1], -_D4_LO[0]])


def _dwt_axis(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """One periodized D4 analysis step along `axis` (length must be even)."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(4)[None, :]) % n
    windows = x[..., idx]
    lo = windows @ _D4_LO
    hi = windows @ _D4_HI
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _idwt_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    """Inverse of _dwt_axis."""
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    n = 2 * half
    out = np.zeros(lo.shape[:-1] + (n,), dtype=np.float64)
    k2 = 2 * np.arange(half)
    for m in range(4):
        # for fixed m the target indices are distinct, so += is collision-free
        out[..., (k2 + m) % n] += lo * _D4_LO[m] + hi * _D4_HI[m]
    return np.moveaxis(out, -1, axis)


def _dwt2(x: np.ndarray) -> dict[str, np.ndarray]:
    """One separable 2-D level: returns ll, lh, hl, hh subbands."""
    lo, hi = _dwt_axis(x, 0)
    ll, lh = _dwt_axis(lo, 1)
    hl, hh = _dwt_axis(hi, 1)
    return {"ll": ll, "lh": lh, "hl": hl, "hh": hh}


def _idwt2(bands: dict[str, np.ndarray]) -> np.ndarray:
    lo = _idwt_axis(bands["ll"], bands["lh"], 1)
    hi = _idwt_axis(bands["hl"], bands["hh"], 1)
    return _idwt_axis(lo, hi, 0)


def _soft_threshold(c: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(c) * np.maximum(np.abs(c) - thr, 0.0)


def wavelet_denoise(img, levels: int = 2) -> np.ndarray:
    """VisuShrink: soft-threshold D4 detail coefficients at sigma*sqrt(2 ln N).

    sigma is the robust estimate median(|finest diagonal detail|) / 0.6745.
    The image is reflect-padded so both dims divide 2**levels; the result is
    cropped back to the input size.
    """
    gray = np.asarray(img, dtype=np.float64)
    mult = 2 ** levels
    h, w = gray.shape
    if min(h, w) < 16:
        raise ImageError(f"image {gray.shape} too small for {levels}-level denoising")
    pad_h, pad_w = (-h) % mult, (-w) % mult
    padded = np.pad(gray, ((0, pad_h), (0, pad_w)), mode="symmetric")

    pyramid = []
    approx = padded
    for _ in range(levels):
        bands = _dwt2(approx)
        approx = bands.pop("ll")
        pyramid.append(bands)

    sigma = np.median(np.abs(pyramid[0]["hh"])) / 0.6745
    thr = sigma * np.sqrt(2.0 * np.log(padded.size))
    for bands in pyramid:
        for key in ("lh", "hl", "hh"):
            bands[key] = _soft_threshold(bands[key], thr)

    for bands in reversed(pyramid):
        bands["ll"] = approx
        approx = _idwt2(bands)
    return approx[:h, :w]


def wavelet_residual(img) -> Residual:
    """Difference between the image and its wavelet-denoised version."""
    gray = as_gray(img)
    return Residual(kind="wavelet", data=gray - wavelet_denoise(gray))


# ---------------------------------------------------------------------------
# Stack construction
# ---------------------------------------------------------------------------

DEFAULT_GENERATORS = ("steg:d1h", "steg:d1v", "steg:d2", "steg:kb", "ela", "median", "wavelet")


@dataclass(frozen=True)
class ResidualConfig:
    """Which generators run, in which order, with which parameters."""

    generators: tuple[str, ...] = DEFAULT_GENERATORS
    ela_quality: int = DEFAULT_ELA_QUALITY
    median_window: int = DEFAULT_MEDIAN_WINDOW

    def __post_init__(self):
        if len(self.generators) == 0:
            raise ConfigError("residual generator list must be non-empty")
        known = set(DEFAULT_GENERATORS)
        for g in self.generators:
            if g not in known:
                raise ConfigError(f"unknown residual generator {g!r}")
        if len(set(self.generators)) != len(self.generators):
            raise ConfigError("duplicate residual generators")


def build_stack(img, config: ResidualConfig = ResidualConfig(), source_id: str = "") -> ResidualStack:
    """Run the configured generators over one RGB image, in config order."""
    rgb = as_rgb(img)
    gray = to_grayscale(rgb)
    kernels = {k.name: k for k in default_steganalytic_kernels()}
    out = []
    for name in config.generators:
        try:
            if name.startswith("steg:"):
                out.append(conv_residual(gray, kernels[name.split(":", 1)[1]]))
            elif name == "ela":
                out.append(ela_residual(rgb, quality=config.ela_quality))
            elif name == "median":
                out.append(median_residual(gray, window=config.median_window))
            elif name == "wavelet":
                out.append(wavelet_residual(gray))
            else:  # pragma: no cover - blocked by ResidualConfig validation
                raise ConfigError(f"unknown residual generator {name!r}")
        except NoiseGridError as e:
            raise type(e)(f"residual {name}: {e}") from e
    return ResidualStack(source_id=source_id, residuals=tuple(out))
