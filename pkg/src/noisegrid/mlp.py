"""Feed-forward classifier mapping patch features to genuine/tampered.

ReLU hidden layers, softmax output, trained with mini-batch SGD with
momentum on class-weighted cross-entropy. Everything is hand-rolled numpy
so the gradient path is fully visible to the finite-difference check.

Training is deterministic: batches are consumed in data order (no
shuffling) and the validation split takes every round(1/fraction)-th
sample, so a fixed seed and data order give a bitwise-identical model.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DataError
from .features import FeatureMatrix

N_CLASSES = 2


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden: tuple[int, ...] = (200, 200, 200, 200)

    def __post_init__(self):
        if self.input_dim < 1:
            raise DataError(f"input dim must be >= 1, got {self.input_dim}")
        if len(self.hidden) < 1 or any(w < 1 for w in self.hidden):
            raise DataError(f"need >= 1 hidden layer of width >= 1, got {self.hidden}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, N_CLASSES)


@dataclass(frozen=True)
class MlpModel:
    arch: MlpArchitecture
    weights: tuple[np.ndarray, ...]  # (fan_in, fan_out) per layer
    biases: tuple[np.ndarray, ...]
    seed: int = 0

    def __post_init__(self):
        dims = self.arch.dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DataError("parameter count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise DataError(f"layer {i} shape mismatch: {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DataError(f"layer {i} has non-finite parameters")


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 20
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DataError(
                f"validation fraction must be in [0, 1), got {self.validation_fraction}"
            )
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise DataError("batch size, epochs and patience must be >= 1")


def init(arch: MlpArchitecture, seed: int = 0) -> MlpModel:
    """Uniform(-a, a) weights with a = sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    dims = arch.dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        a = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        weights.append(rng.uniform(-a, a, size=(dims[i], dims[i + 1])))
        biases.append(np.zeros(dims[i + 1]))
    return MlpModel(arch=arch, weights=tuple(weights), biases=tuple(biases), seed=seed)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_batch(weights, biases, X: np.ndarray):
    """Returns (probabilities, per-layer activations incl. input).

    Takes raw parameter lists so the training loop can call it on interim
    values without paying model validation per batch.
    """
    acts = [X]
    h = X
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return _softmax(acts[-1]), acts


def forward(m: MlpModel, x) -> np.ndarray:
    """(p_genuine, p_tampered) for one feature vector."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != m.arch.input_dim:
        raise DataError(f"expected {m.arch.input_dim} features, got {x.shape[0]}")
    probs, _ = _forward_batch(m.weights, m.biases, x[None, :])
    return probs[0]


def _backward_batch(weights, acts, probs, y, sample_weights):
    """Gradients of sum_i w_i * CE_i / batch_size w.r.t. all parameters."""
    n = probs.shape[0]
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= (sample_weights / n)[:, None]
    grads_w, grads_b = [], []
    for i in range(len(weights) - 1, -1, -1):
        grads_w.append(acts[i].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ weights[i].T) * (acts[i] > 0.0)
    return grads_w[::-1], grads_b[::-1]


def _weighted_loss(probs, y, sample_weights) -> float:
    p = np.clip(probs[np.arange(len(y)), y], 1e-12, None)
    return float(np.mean(sample_weights * -np.log(p)))


def train(features, labels, arch: MlpArchitecture, spec: TrainSpec = TrainSpec()) -> MlpModel:
    """Mini-batch SGD with momentum on class-weighted cross-entropy.

    Batches run in data order; the validation split (if any) takes every
    round(1/fraction)-th sample and the returned parameters are the best
    validation epoch's. Raises on single-class data or diverging loss.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"features {X.shape} and labels {y.shape} do not align")
    if X.shape[1] != arch.input_dim:
        raise DataError(f"architecture expects {arch.input_dim} features, data has {X.shape[1]}")
    if not np.all(np.isin(y, [0, 1])):
        raise DataError("labels must be 0 (genuine) or 1 (tampered)")
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise DataError("need at least one sample of each class")

    # inverse-frequency class weights, mean-normalized
    class_w = len(y) / (N_CLASSES * counts.astype(np.float64))
    sw = class_w[y]

    if spec.validation_fraction > 0.0:
        step = max(2, round(1.0 / spec.validation_fraction))
        val_mask = np.zeros(len(y), dtype=bool)
        val_mask[::step] = True
        if val_mask.all() or not val_mask.any():
            raise DataError("validation split left an empty partition")
    else:
        val_mask = np.zeros(len(y), dtype=bool)
    Xt, yt, swt = X[~val_mask], y[~val_mask], sw[~val_mask]
    Xv, yv, swv = X[val_mask], y[val_mask], sw[val_mask]

    model = init(arch, spec.seed)
    W = [w.copy() for w in model.weights]
    B = [b.copy() for b in model.biases]
    vel_w = [np.zeros_like(w) for w in W]
    vel_b = [np.zeros_like(b) for b in B]

    best = None  # (val_loss, params)
    stale = 0
    n_train = len(yt)
    # overflow on a diverging run is a handled case, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for _epoch in range(spec.epochs):
            for start in range(0, n_train, spec.batch_size):
                sl = slice(start, start + spec.batch_size)
                probs, acts = _forward_batch(W, B, Xt[sl])
                gw, gb = _backward_batch(W, acts, probs, yt[sl], swt[sl])
                for i in range(len(W)):
                    vel_w[i] = spec.momentum * vel_w[i] - spec.learning_rate * gw[i]
                    vel_b[i] = spec.momentum * vel_b[i] - spec.learning_rate * gb[i]
                    W[i] = W[i] + vel_w[i]
                    B[i] = B[i] + vel_b[i]

            if len(yv):
                probs, _ = _forward_batch(W, B, Xv)
                val_loss = _weighted_loss(probs, yv, swv)
            else:
                probs, _ = _forward_batch(W, B, Xt)
                val_loss = _weighted_loss(probs, yt, swt)
            if not np.isfinite(val_loss):
                raise ConvergenceError(
                    f"loss diverged at epoch {_epoch}; lower the learning rate"
                )
            if best is None or val_loss < best[0]:
                best = (val_loss, [w.copy() for w in W], [b.copy() for b in B])
                stale = 0
            else:
                stale += 1
                if len(yv) and stale >= spec.patience:
                    break

    return MlpModel(
        arch=arch, weights=tuple(best[1]), biases=tuple(best[2]), seed=spec.seed
    )


def _relu_pattern(acts) -> tuple:
    return tuple((a > 0.0).tobytes() for a in acts[1:-1])


def gradient_check(m: MlpModel, x, label: int) -> float:
    """Max relative error between analytic and central-difference gradients.

    Intended for small models; the numeric pass perturbs every parameter.
    A probe whose +-h evaluations flip any hidden unit across the ReLU kink
    is skipped: the loss is piecewise smooth, and a central difference that
    spans two pieces does not estimate the derivative at the point itself.
    Output-layer parameters never flip hidden units, so every check keeps
    a non-trivial set of probed coordinates.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label}")
    one = np.ones(1)
    probs, acts = _forward_batch(m.weights, m.biases, x[None, :])
    gw, gb = _backward_batch(m.weights, acts, probs, np.array([label]), one)
    base = _relu_pattern(acts)

    h = 1e-5
    W = [w.copy() for w in m.weights]
    B = [b.copy() for b in m.biases]

    def loss_at() -> tuple:
        p, a = _forward_batch(W, B, x[None, :])
        return _weighted_loss(p, np.array([label]), one), _relu_pattern(a)

    worst = 0.0
    for li in range(len(W)):
        for arr, grad in ((W[li], gw[li]), (B[li], gb[li])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = arr[ix]
                arr[ix] = orig + h
                lp, pat_p = loss_at()
                arr[ix] = orig - h
                lm, pat_m = loss_at()
                arr[ix] = orig
                if not (pat_p == pat_m == base):
                    continue
                num = (lp - lm) / (2.0 * h)
                ana = grad[ix]
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-4)
                worst = max(worst, rel)
    return worst


def predict_map(m: MlpModel, fm: FeatureMatrix) -> np.ndarray:
    """p_tampered per patch, same rows x cols as the feature matrix."""
    rows, cols, flen = fm.values.shape
    if flen != m.arch.input_dim:
        raise DataError(f"model expects {m.arch.input_dim} features, matrix has {flen}")
    probs, _ = _forward_batch(m.weights, m.biases, fm.values.reshape(rows * cols, flen))
    return probs[:, 1].reshape(rows, cols)


# ---------------------------------------------------------------------------
# Model file: magic, version, config hash, seed, layer dims, parameters.
# ---------------------------------------------------------------------------

_MAGIC = b"NGMLP"
_VERSION = 1


def save_model(path, m: MlpModel, config_hash: str = "") -> None:
    try:
        digest = bytes.fromhex(config_hash) if config_hash else b"\x00" * 32
    except ValueError:
        raise DataError("config hash must be 32 bytes of hex") from None
    if len(digest) != 32:
        raise DataError("config hash must be 32 bytes of hex")
    dims = m.arch.dims
    parts = [
        _MAGIC,
        struct.pack("<I", _VERSION),
        digest,
        struct.pack("<Q", m.seed),
        struct.pack("<I", len(dims)),
        struct.pack(f"<{len(dims)}I", *dims),
    ]
    for w, b in zip(m.weights, m.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_model(path) -> tuple[MlpModel, str]:
    """Returns (model, config hash hex); an all-zero hash loads as ''."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:5] != _MAGIC:
        raise DataError(f"{path}: not a classifier model file")
    off = 5
    (version,) = struct.unpack_from("<I", blob, off); off += 4
    if version != _VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    digest = blob[off:off + 32]; off += 32
    (seed,) = struct.unpack_from("<Q", blob, off); off += 8
    (n_dims,) = struct.unpack_from("<I", blob, off); off += 4
    dims = struct.unpack_from(f"<{n_dims}I", blob, off); off += 4 * n_dims
    if n_dims < 3 or dims[-1] != N_CLASSES:
        raise DataError(f"{path}: bad layer dims {dims}")
    weights, biases = [], []
    for i in range(n_dims - 1):
        wn = dims[i] * dims[i + 1]
        w = np.frombuffer(blob, dtype="<f8", count=wn, offset=off).reshape(dims[i], dims[i + 1])
        off += 8 * wn
        b = np.frombuffer(blob, dtype="<f8", count=dims[i + 1], offset=off)
        off += 8 * dims[i + 1]
        weights.append(w.copy())
        biases.append(b.copy())
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes")
    arch = MlpArchitecture(input_dim=dims[0], hidden=tuple(dims[1:-1]))
    model = MlpModel(arch=arch, weights=tuple(weights), biases=tuple(biases), seed=seed)
    return model, ("" if digest == b"\x00" * 32 else digest.hex())
