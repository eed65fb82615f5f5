"""
Tiny end-to-end run
===================

Generates a small tampered corpus, extracts features, trains the patch
classifier and prints the evaluation tables for the trained model and
the noise-level baseline, then writes score maps and heatmaps for the
test split. Runs in about a minute on one core; the CLI equivalent is
one `noisegrid <stage> --config cfg.json` call per stage.
"""

import json
import os
import shutil

from noisegrid import pipeline
from noisegrid.config import load_config

base = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out", "e2e")
shutil.rmtree(base, ignore_errors=True)
os.makedirs(base)

# small corpus, reduced residual set and a light classifier: the point is
# the shape of the workflow, not the quality bar
cfg_obj = {
    "seed": 42,
    "synth": {"n_sources": 8, "image_size": [128, 128]},
    "residuals": {"generators": ["steg:d1h", "steg:kb", "median", "wavelet"]},
    "extractor": {"patch_shape": [6, 6], "grid_shape": [5, 5],
                  "bins": 8, "k": 4, "restarts": 10},
    "classifier": {"hidden": [32, 32]},
    "train": {"epochs": 15, "patience": 5},
    "eval": {"heatmaps": True},
}
cfg_path = os.path.join(base, "cfg.json")
with open(cfg_path, "w") as f:
    json.dump(cfg_obj, f, indent=2)
cfg = load_config(cfg_path)

print("--- synth: sources, manipulations, masks, manifest, split")
pipeline.cmd_synth(cfg)

print("\n--- features: one feature matrix per corpus image")
pipeline.cmd_features(cfg)

print("\n--- train: patch classifier on the training split")
pipeline.cmd_train(cfg)

print("\n--- eval: trained model vs noise-level baseline on the test split")
pipeline.cmd_eval(cfg, method="ours")
print()
pipeline.cmd_eval(cfg, method="noi")

print("\n--- predict: per-patch score maps (JSON) and heatmaps (PNG)")
pipeline.cmd_predict(cfg)

print(f"\nartifacts under {pipeline.run_dir(cfg)}")
print("compare reports/heatmaps/*_ours.png against corpus/masks/*.png")
