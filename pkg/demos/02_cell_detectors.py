"""
Per-cell outlier detectors and the reinterpretation vector
==========================================================

The detector core of the method, on one image: split a residual into
6x6 patches, train a one-class SVM on the DCT spectra of each grid
cell's patches, then score every patch against every cell.

The detectors place genuine patches near their decision boundary, so a
genuine patch's likelihoods hover around zero. Tampering pushes a patch
away from that band in either direction: a zero-noise fill is
conspicuously "too normal" (deep inlier, strongly negative), while an
over-noised fill is a plain outlier (positive). The histogram of those
likelihoods is what the classifier consumes.
"""

import numpy as np

from noisegrid.features import (ExtractorConfig, fit_cell_detectors,
                                histogram_field, reinterpret)
from noisegrid.image import crop_to_patch_multiple, decompose_patches, to_grayscale
from noisegrid.residuals import median_residual
from noisegrid.synth import Rect, procedural_background, synth_removal

source = procedural_background(256, 256, seed=21)
removal = Rect(x=36, y=36, width=60, height=48)
sample = Rect(x=150, y=150, width=60, height=48)
# variants use noise scale c*sigma for c in {0, 0.5, 1, 2}
variants = synth_removal(source, removal, sample, seed=5)
flat_img = variants[0][0]
noisy_img = variants[3][0]

cfg = ExtractorConfig(patch_shape=(6, 6), grid_shape=(5, 5), restarts=30)
tampered = ((removal.y + removal.height // 2) // 6,
            (removal.x + removal.width // 2) // 6)
genuine = (30, 30)


def field_of(img):
    residual = median_residual(to_grayscale(img))
    patches = decompose_patches(crop_to_patch_multiple(residual.data, 6, 6), 6, 6)
    # one detector per cell, each trained only on its own cell's patches
    detectors = fit_cell_detectors(residual, cfg)
    return reinterpret(detectors, patches)


flat = field_of(flat_img)
noisy = field_of(noisy_img)
print(f"patch matrix {flat.values.shape[0]}x{flat.values.shape[1]}, "
      f"grid {cfg.grid_shape[0]}x{cfg.grid_shape[1]} cells, "
      f"v length {flat.values.shape[2]}")

# v(i,j) holds patch (i,j)'s outlier likelihood under all 25 detectors
print(f"\nmean outlier likelihood at patch {genuine} (genuine):      "
      f"{flat.values[genuine].mean():+.3f}")
print(f"mean outlier likelihood at patch {tampered} (flat fill):    "
      f"{flat.values[tampered].mean():+.3f}")
print(f"mean outlier likelihood at patch {tampered} (2-sigma fill): "
      f"{noisy.values[tampered].mean():+.3f}")

# the histogram of v is the position-free patch feature
hf = histogram_field(flat, bins=cfg.bins)
print(f"\nhistogram feature, genuine patch:   {np.round(hf.values[genuine], 2)}")
print(f"histogram feature, flat-fill patch: {np.round(hf.values[tampered], 2)}")
