"""Stage orchestration: synth -> features -> train -> predict -> eval.

Every stage resolves its paths from the config, stamps its outputs with
the config hash, and refuses inputs produced under a different hash. All
randomness derives from the global seed plus stable string tokens (stage
name, image path), so reruns are byte-identical and workers need no shared
state. A lock file makes each run directory single-owner.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

import numpy as np

from .config import PipelineConfig, config_hash
from .errors import ConfigError, DataError, NoiseGridError
from .features import ExtractorConfig, extract, load_feature_matrix, save_feature_matrix
from .image import load_image, load_mask, mask_to_patch_labels, save_image, save_mask, to_grayscale
from .metrics import MetricsReport, ScoreMap, evaluate, noi_score, report_to_json, report_to_text, score_heatmap
from . import mlp
from .synth import (Rect, TamperRecord, procedural_background, read_manifest,
                    synth_blur, synth_removal, synth_splice, write_manifest, _draw_rect)

log = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"
LOCK_NAME = ".lock"
RUN_MANIFEST_NAME = "runmanifest.json"


def derive_seed(*parts) -> int:
    """Stable child seed from arbitrary tokens (global seed, stage, image)."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# ---------------------------------------------------------------------------
# Paths, locking, run manifest
# ---------------------------------------------------------------------------

def run_dir(cfg: PipelineConfig) -> str:
    return os.path.abspath(os.path.join(cfg.base_dir, cfg.paths.run_dir))


def _resolve(cfg: PipelineConfig, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(run_dir(cfg), p)


def corpus_dir(cfg) -> str:
    return _resolve(cfg, cfg.paths.corpus)


def features_dir(cfg) -> str:
    return _resolve(cfg, cfg.paths.features)


def model_path(cfg) -> str:
    return _resolve(cfg, cfg.paths.model)


def reports_dir(cfg) -> str:
    return _resolve(cfg, cfg.paths.reports)


@contextlib.contextmanager
def run_lock(cfg: PipelineConfig):
    """Exclusive ownership of the run directory for one stage."""
    rd = run_dir(cfg)
    os.makedirs(rd, exist_ok=True)
    lock = os.path.join(rd, LOCK_NAME)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(
            f"run directory {rd} is locked by another process "
            f"(remove {lock} if stale)"
        ) from None
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    try:
        yield rd
    finally:
        os.unlink(lock)


def _update_run_manifest(cfg, stage: str, seconds: float, inputs, outputs) -> None:
    path = os.path.join(run_dir(cfg), RUN_MANIFEST_NAME)
    chash = config_hash(cfg)
    data = {"config_hash": chash, "version": TOOL_VERSION, "stages": {}}
    try:
        with open(path) as f:
            old = json.load(f)
        if old.get("config_hash") == chash:
            data = old
    except (OSError, json.JSONDecodeError):
        pass
    data["stages"][stage] = {
        "seconds": round(seconds, 3),
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
    }
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth stage
# ---------------------------------------------------------------------------

def _quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit lattice so in-memory pixels equal the PNG on disk."""
    return np.round(img * 255.0) / 255.0


def _load_user_sources(src_dir: str):
    names = sorted(
        f for f in os.listdir(src_dir)
        if f.lower().endswith((".png", ".jpg", ".jpeg"))
    )
    if len(names) < 2:
        raise DataError(f"source directory {src_dir} needs at least 2 images")
    return [load_image(os.path.join(src_dir, f)) for f in names]


def _removal_rects(rng, shape) -> tuple[Rect, Rect]:
    """Removal rect plus an equal-size, non-overlapping sample rect.

    The sample origin is drawn from the bands guaranteed not to overlap
    the removal. A central near-square draw can leave every band empty
    (no disjoint equal-size spot exists); redraw the removal then.
    """
    H, W = shape[0], shape[1]
    for _ in range(200):
        removal = _draw_rect(rng, shape)
        rh, rw = removal.height, removal.width
        bands = [
            (0, H - rh, 0, removal.x - rw),       # fully left of removal
            (0, H - rh, removal.x + rw, W - rw),  # fully right
            (0, removal.y - rh, 0, W - rw),       # fully above
            (removal.y + rh, H - rh, 0, W - rw),  # fully below
        ]
        bands = [b for b in bands if b[1] >= b[0] and b[3] >= b[2]]
        if not bands:
            continue
        counts = np.array(
            [(yhi - ylo + 1) * (xhi - xlo + 1) for ylo, yhi, xlo, xhi in bands],
            dtype=np.float64,
        )
        ylo, yhi, xlo, xhi = bands[rng.choice(len(bands), p=counts / counts.sum())]
        y = int(rng.integers(ylo, yhi + 1))
        x = int(rng.integers(xlo, xhi + 1))
        return removal, Rect(x=x, y=y, width=rw, height=rh)
    raise DataError("could not place non-overlapping removal/sample rects")


def cmd_synth(cfg: PipelineConfig) -> str:
    """Write the corpus (sources, tampered images, masks, manifest, split)."""
    t0 = time.perf_counter()
    with run_lock(cfg):
        cdir = corpus_dir(cfg)
        for sub in ("sources", "images", "masks"):
            os.makedirs(os.path.join(cdir, sub), exist_ok=True)

        if cfg.paths.sources:
            sources = [_quantize(s) for s in
                       _load_user_sources(os.path.join(cfg.base_dir, cfg.paths.sources))]
        else:
            h, w = cfg.synth.image_size
            sources = [
                _quantize(procedural_background(h, w, seed=derive_seed(cfg.seed, "source", i)))
                for i in range(cfg.synth.n_sources)
            ]
        n = len(sources)
        n_train = int(round(n * cfg.synth.train_fraction))
        if not 1 <= n_train <= n - 1:
            raise DataError(f"split leaves an empty partition ({n_train}/{n - n_train})")
        split_of = ["train" if i < n_train else "test" for i in range(n)]

        records = []
        split_images: dict[str, list] = {"train": [], "test": []}

        def emit(img, mask, rec: TamperRecord, stem: str, src_index: int):
            image_rel = f"images/{stem}.png"
            mask_rel = f"masks/{stem}.png"
            save_image(os.path.join(cdir, image_rel), img)
            save_mask(os.path.join(cdir, mask_rel), mask)
            records.append(dataclasses.replace(rec, image=image_rel, mask=mask_rel))
            split_images[split_of[src_index]].append(image_rel)

        src_rels = []
        for i, src in enumerate(sources):
            rel = f"sources/src_{i:03d}.png"
            save_image(os.path.join(cdir, rel), src)
            src_rels.append(rel)
            records.append(TamperRecord(image=rel, mask="none", sources=(),
                                        type="G", params={}, seed=0))
            split_images[split_of[i]].append(rel)

        cycle = cfg.synth.type_cycle
        for i, src in enumerate(sources):
            ttype = cycle[i % len(cycle)]
            tseed = derive_seed(cfg.seed, "tamper", i)
            if ttype == "R":
                rng = np.random.default_rng(derive_seed(cfg.seed, "rects", i))
                removal, sample = _removal_rects(rng, src.shape)
                for v, (img, mask, rec) in enumerate(
                        synth_removal(src, removal, sample, seed=tseed, source_id=src_rels[i])):
                    emit(img, mask, rec, f"{i:03d}_R{v}", i)
            elif ttype in ("J", "F"):
                same_split = [j for j in range(n) if split_of[j] == split_of[i]]
                fg = same_split[(same_split.index(i) + 1) % len(same_split)]
                img, mask, rec = synth_splice(
                    src, sources[fg], seed=tseed,
                    mode="jpeg" if ttype == "J" else "sharpen",
                    background_id=src_rels[i], foreground_id=src_rels[fg],
                )
                emit(img, mask, rec, f"{i:03d}_{ttype}", i)
            else:
                img, mask, rec = synth_blur(src, seed=tseed, source_id=src_rels[i])
                emit(img, mask, rec, f"{i:03d}_B", i)

        manifest_path = os.path.join(cdir, "manifest.json")
        write_manifest(records, manifest_path)
        with open(os.path.join(cdir, "split.json"), "w") as f:
            json.dump(split_images, f, indent=2, sort_keys=True)
            f.write("\n")

        counts: dict[str, int] = {}
        for rec in records:
            counts[rec.type] = counts.get(rec.type, 0) + 1
        print("synth: " + "  ".join(f"{t}={counts.get(t, 0)}" for t in ("R", "J", "F", "B", "G"))
              + f"  total={len(records)} -> {manifest_path}")
        _update_run_manifest(cfg, "synth", time.perf_counter() - t0,
                             inputs=[cfg.paths.sources or "<procedural>"],
                             outputs=[manifest_path])
    return manifest_path


# ---------------------------------------------------------------------------
# features stage
# ---------------------------------------------------------------------------

def _stem(image_rel: str) -> str:
    return os.path.splitext(os.path.basename(image_rel))[0]


def _feature_paths(fdir: str, image_rel: str) -> tuple[str, str]:
    stem = _stem(image_rel)
    return os.path.join(fdir, f"{stem}.ngfm"), os.path.join(fdir, f"{stem}_labels.npy")


def _is_cached(feat_path: str, labels_path: str, chash: str) -> bool:
    if not (os.path.exists(feat_path) and os.path.exists(labels_path)):
        return False
    try:
        with open(f"{feat_path}.meta") as f:
            for line in f:
                if line.startswith("config_hash:"):
                    return line.split(":", 1)[1].strip() == chash
    except OSError:
        return False
    return False


def _patch_dims(shape, xcfg: ExtractorConfig) -> tuple[int, int]:
    return shape[0] // xcfg.patch_shape[0], shape[1] // xcfg.patch_shape[1]


def _labels_for(rec: TamperRecord, cdir: str, dims, xcfg: ExtractorConfig) -> np.ndarray:
    if rec.mask == "none":
        return np.zeros(dims, dtype=np.uint8)
    mask = load_mask(os.path.join(cdir, rec.mask))
    labels = mask_to_patch_labels(mask, *xcfg.patch_shape)
    if labels.shape != dims:
        raise DataError(f"{rec.image}: labels {labels.shape} vs patches {dims}")
    return labels


def _extract_task(args) -> tuple[str, str, str]:
    """Worker: one image -> feature file + label file. Returns (image, status, detail)."""
    cfg, rec, chash = args
    cdir, fdir = corpus_dir(cfg), features_dir(cfg)
    feat_path, labels_path = _feature_paths(fdir, rec.image)
    try:
        rgb = load_image(os.path.join(cdir, rec.image))
        rows, cols = _patch_dims(rgb.shape, cfg.extractor)
        s, t = cfg.extractor.grid_shape
        if rows < s or cols < t:
            return rec.image, "skipped", f"{rows}x{cols} patches < {s}x{t} grid"
        fm = extract(rgb, cfg.extractor, seed=derive_seed(cfg.seed, "extract", rec.image))
        labels = _labels_for(rec, cdir, fm.values.shape[:2], cfg.extractor)
        save_feature_matrix(feat_path, fm, chash)
        np.save(labels_path, labels)
        return rec.image, "ok", ""
    except NoiseGridError as e:
        return rec.image, "failed", str(e)


def cmd_features(cfg: PipelineConfig, jobs: int = 1) -> None:
    t0 = time.perf_counter()
    with run_lock(cfg):
        cdir, fdir = corpus_dir(cfg), features_dir(cfg)
        os.makedirs(fdir, exist_ok=True)
        chash = config_hash(cfg)
        records = read_manifest(os.path.join(cdir, "manifest.json"))

        stems = {}
        for rec in records:
            stem = _stem(rec.image)
            if stem in stems:
                raise DataError(f"duplicate image stem {stem!r} in manifest")
            stems[stem] = rec

        todo, cached = [], 0
        for rec in records:
            feat_path, labels_path = _feature_paths(fdir, rec.image)
            if _is_cached(feat_path, labels_path, chash):
                cached += 1
            else:
                todo.append((cfg, rec, chash))

        if jobs > 1 and todo:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_extract_task, todo))
        else:
            results = [_extract_task(t) for t in todo]

        ok = sum(1 for _, st, _ in results if st == "ok")
        skipped = [(im, d) for im, st, d in results if st == "skipped"]
        failed = [(im, d) for im, st, d in results if st == "failed"]
        for im, detail in skipped:
            log.warning("skipped %s: %s", im, detail)
        for im, detail in failed:
            log.error("failed %s: %s", im, detail)
        print(f"features: {ok} extracted  {cached} cached  "
              f"{len(skipped)} skipped  {len(failed)} failed -> {fdir}")
        _update_run_manifest(cfg, "features", time.perf_counter() - t0,
                             inputs=[os.path.join(cdir, "manifest.json")], outputs=[fdir])
        if failed:
            raise DataError(
                f"feature extraction failed for {len(failed)} image(s), "
                f"first: {failed[0][0]}: {failed[0][1]}"
            )


# ---------------------------------------------------------------------------
# train stage
# ---------------------------------------------------------------------------

def _read_split(cfg) -> dict:
    path = os.path.join(corpus_dir(cfg), "split.json")
    try:
        with open(path) as f:
            split = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read split file {path}: {e}") from e
    if not isinstance(split, dict) or "train" not in split or "test" not in split:
        raise DataError(f"split file {path} must map 'train' and 'test' to image lists")
    return split


def _load_features_for(cfg, image_rel: str, chash: str):
    """Cached features for one image, or None if absent/size-skipped."""
    feat_path, labels_path = _feature_paths(features_dir(cfg), image_rel)
    if not os.path.exists(feat_path):
        return None
    fm, stored = load_feature_matrix(feat_path)
    if stored != chash:
        raise ConfigError(
            f"{feat_path} was produced under config hash {stored or '<none>'}, "
            f"current is {chash}; rerun the features stage"
        )
    labels = np.load(labels_path)
    return fm, labels


def cmd_train(cfg: PipelineConfig) -> str:
    t0 = time.perf_counter()
    with run_lock(cfg):
        chash = config_hash(cfg)
        split = _read_split(cfg)
        xs, ys = [], []
        missing = 0
        for image_rel in split["train"]:
            got = _load_features_for(cfg, image_rel, chash)
            if got is None:
                missing += 1
                continue
            fm, labels = got
            xs.append(fm.values.reshape(-1, fm.feature_len))
            ys.append(labels.ravel())
        if not xs:
            raise DataError("no feature files for the training split; run features first")
        if missing:
            log.warning("%d training image(s) have no features (skipped or stale)", missing)

        X = np.concatenate(xs, axis=0)
        y = np.concatenate(ys, axis=0)
        if X.shape[1] != cfg.feature_len:
            raise DataError(f"feature length {X.shape[1]} != config-derived {cfg.feature_len}")
        arch = mlp.MlpArchitecture(input_dim=cfg.feature_len, hidden=cfg.hidden)
        spec = dataclasses.replace(cfg.train, seed=derive_seed(cfg.seed, "train"))
        model = mlp.train(X, y, arch, spec)

        mpath = model_path(cfg)
        os.makedirs(os.path.dirname(mpath) or ".", exist_ok=True)
        mlp.save_model(mpath, model, chash)
        print(f"train: {X.shape[0]} patches ({int((y == 1).sum())} tampered) -> {mpath}")
        _update_run_manifest(cfg, "train", time.perf_counter() - t0,
                             inputs=[features_dir(cfg)], outputs=[mpath])
    return mpath


# ---------------------------------------------------------------------------
# predict / eval stages
# ---------------------------------------------------------------------------

def _load_model_checked(cfg, path=None):
    mpath = path or model_path(cfg)
    try:
        model, stored = mlp.load_model(mpath)
    except OSError as e:
        raise DataError(f"cannot read model {mpath}: {e}") from e
    chash = config_hash(cfg)
    if stored and stored != chash:
        raise ConfigError(
            f"model {mpath} was trained under config hash {stored}, "
            f"current is {chash}; retrain or restore the old config"
        )
    return model


def _score_ours(cfg, model, image_path: str, image_rel: str, chash: str) -> ScoreMap:
    got = _load_features_for(cfg, image_rel, chash) if image_rel else None
    if got is not None:
        fm = got[0]
    else:
        rgb = load_image(image_path)
        fm = extract(rgb, cfg.extractor,
                     seed=derive_seed(cfg.seed, "extract", image_rel or image_path))
    return ScoreMap(values=mlp.predict_map(model, fm), provenance="ours")


def _write_score_json(path: str, image_name: str, sm: ScoreMap, cfg) -> None:
    obj = {
        "image": image_name,
        "provenance": sm.provenance,
        "patch_shape": list(cfg.extractor.patch_shape),
        "rows": sm.values.shape[0],
        "cols": sm.values.shape[1],
        "values": sm.values.tolist(),
    }
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True)
        f.write("\n")


def _write_heatmap(path: str, sm: ScoreMap, cfg) -> None:
    save_image(path, score_heatmap(sm.values, cfg.extractor.patch_shape))


def cmd_predict(cfg: PipelineConfig, image: str = None, model: str = None) -> list:
    """Score one image (or the whole test split) with the trained model."""
    t0 = time.perf_counter()
    with run_lock(cfg):
        net = _load_model_checked(cfg, model)
        chash = config_hash(cfg)
        rdir = reports_dir(cfg)
        scores_dir = os.path.join(rdir, "scores")
        os.makedirs(scores_dir, exist_ok=True)

        if image is not None:
            items = [(os.path.abspath(image), "")]
        else:
            cdir = corpus_dir(cfg)
            items = [(os.path.join(cdir, rel), rel) for rel in _read_split(cfg)["test"]]
            if not items:
                raise DataError("test split is empty")

        written = []
        for path, rel in items:
            sm = _score_ours(cfg, net, path, rel, chash)
            stem = _stem(rel or path)
            out = os.path.join(scores_dir, f"{stem}_scores.json")
            _write_score_json(out, rel or os.path.basename(path), sm, cfg)
            written.append(out)
            if cfg.eval.heatmaps:
                hdir = os.path.join(rdir, "heatmaps")
                os.makedirs(hdir, exist_ok=True)
                hpath = os.path.join(hdir, f"{stem}_ours.png")
                _write_heatmap(hpath, sm, cfg)
                written.append(hpath)
        print(f"predict: {len(items)} image(s) -> {scores_dir}")
        _update_run_manifest(cfg, "predict", time.perf_counter() - t0,
                             inputs=[model or model_path(cfg)], outputs=written)
    return written


def cmd_eval(cfg: PipelineConfig, method: str = "ours", jobs: int = 1) -> MetricsReport:
    """Patch metrics over the held-out split; writes JSON + text reports."""
    if method not in ("ours", "noi"):
        raise ConfigError(f"method must be 'ours' or 'noi', got {method!r}")
    t0 = time.perf_counter()
    with run_lock(cfg):
        cdir = corpus_dir(cfg)
        chash = config_hash(cfg)
        records = read_manifest(os.path.join(cdir, "manifest.json"))
        test_set = set(_read_split(cfg)["test"])
        records = [r for r in records if r.image in test_set]
        if not records:
            raise DataError("no test-split records to evaluate")
        net = _load_model_checked(cfg) if method == "ours" else None

        def score_one(rec: TamperRecord):
            path = os.path.join(cdir, rec.image)
            if method == "ours":
                sm = _score_ours(cfg, net, path, rec.image, chash)
            else:
                gray = to_grayscale(load_image(path))
                dims = _patch_dims(gray.shape, cfg.extractor)
                sm = noi_score(gray, tile=cfg.eval.noi_tile, patch_shape=dims)
            labels = _labels_for(rec, cdir, sm.values.shape, cfg.extractor)
            return sm, labels

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                scored = list(pool.map(score_one, records))
        else:
            scored = [score_one(r) for r in records]
        by_image = {r.image: s for r, s in zip(records, scored)}

        report = evaluate(records, lambda r: (by_image[r.image][0].values, by_image[r.image][1]),
                          threshold=cfg.eval.threshold, provenance=method)

        rdir = reports_dir(cfg)
        os.makedirs(rdir, exist_ok=True)
        json_path = os.path.join(rdir, f"{method}_report.json")
        text_path = os.path.join(rdir, f"{method}_report.txt")
        with open(json_path, "w", encoding="utf-8") as f:
            f.write(report_to_json(report))
        text = report_to_text(report)
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(text)
        outputs = [json_path, text_path]
        if cfg.eval.heatmaps:
            hdir = os.path.join(rdir, "heatmaps")
            os.makedirs(hdir, exist_ok=True)
            for rec in records:
                hpath = os.path.join(hdir, f"{_stem(rec.image)}_{method}.png")
                _write_heatmap(hpath, by_image[rec.image][0], cfg)
                outputs.append(hpath)
        print(text, end="")
        _update_run_manifest(cfg, f"eval-{method}", time.perf_counter() - t0,
                             inputs=[os.path.join(cdir, "manifest.json")], outputs=outputs)
    return report
