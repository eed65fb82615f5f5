import numpy as np
import pytest

from noisegrid import features, mlp
from noisegrid.errors import ConvergenceError, DataError


def blobs(n_per=60, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(-2.0, 0.5, (n_per, d)), rng.normal(2.0, 0.5, (n_per, d))])
    y = np.array([0] * n_per + [1] * n_per)
    return X, y


def test_architecture_dims():
    a = mlp.MlpArchitecture(input_dim=252)
    assert a.dims == (252, 200, 200, 200, 200, 2)
    b = mlp.MlpArchitecture(input_dim=10, hidden=(300, 300, 300, 300))
    assert b.dims == (10, 300, 300, 300, 300, 2)
    with pytest.raises(DataError):
        mlp.MlpArchitecture(input_dim=0)
    with pytest.raises(DataError):
        mlp.MlpArchitecture(input_dim=4, hidden=())


def test_init_bounds_and_zero_biases():
    arch = mlp.MlpArchitecture(input_dim=30, hidden=(20, 10))
    m = mlp.init(arch, seed=3)
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        dims = arch.dims
        bound = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.5 * bound  # actually fills the range
        np.testing.assert_array_equal(b, 0.0)


def test_init_deterministic():
    arch = mlp.MlpArchitecture(input_dim=8, hidden=(5,))
    m1, m2 = mlp.init(arch, seed=11), mlp.init(arch, seed=11)
    for w1, w2 in zip(m1.weights, m2.weights):
        np.testing.assert_array_equal(w1, w2)
    m3 = mlp.init(arch, seed=12)
    assert not np.array_equal(m1.weights[0], m3.weights[0])


def test_forward_hand_computed():
    arch = mlp.MlpArchitecture(input_dim=2, hidden=(2,))
    m = mlp.MlpModel(
        arch=arch,
        weights=(
            np.array([[1.0, 0.0], [0.0, 1.0]]),
            np.array([[1.0, -1.0], [0.0, 1.0]]),
        ),
        biases=(np.array([0.0, -0.5]), np.array([0.5, 0.0])),
    )
    x = np.array([1.0, 2.0])
    # hidden: relu([1, 1.5]) = [1, 1.5]; logits: [1.5, 0.5]
    z = np.array([1.5, 0.5])
    want = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(mlp.forward(m, x), want, atol=1e-12)


def test_forward_is_a_distribution(rng):
    m = mlp.init(mlp.MlpArchitecture(input_dim=6, hidden=(8, 8)), seed=0)
    for _ in range(10):
        p = mlp.forward(m, rng.normal(size=6))
        assert p.shape == (2,)
        np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)
        assert np.all(p > 0.0)


def test_forward_zero_weights_gives_half():
    arch = mlp.MlpArchitecture(input_dim=3, hidden=(4,))
    m = mlp.MlpModel(
        arch=arch,
        weights=(np.zeros((3, 4)), np.zeros((4, 2))),
        biases=(np.zeros(4), np.zeros(2)),
    )
    np.testing.assert_allclose(mlp.forward(m, [1.0, 2.0, 3.0]), [0.5, 0.5], atol=1e-12)


def test_forward_dim_mismatch(rng):
    m = mlp.init(mlp.MlpArchitecture(input_dim=5, hidden=(4,)), seed=0)
    with pytest.raises(DataError):
        mlp.forward(m, np.zeros(4))


def test_model_validation_catches_shape_and_nan():
    arch = mlp.MlpArchitecture(input_dim=2, hidden=(2,))
    with pytest.raises(DataError):
        mlp.MlpModel(arch=arch, weights=(np.zeros((2, 3)), np.zeros((2, 2))),
                     biases=(np.zeros(2), np.zeros(2)))
    with pytest.raises(DataError):
        mlp.MlpModel(arch=arch, weights=(np.full((2, 2), np.nan), np.zeros((2, 2))),
                     biases=(np.zeros(2), np.zeros(2)))


def test_train_separates_blobs():
    X, y = blobs()
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(16, 16))
    m = mlp.train(X, y, arch, mlp.TrainSpec(epochs=40, seed=1))
    probs = np.array([mlp.forward(m, x)[1] for x in X])
    acc = float(np.mean((probs > 0.5) == (y == 1)))
    assert acc >= 0.95


def test_train_reduces_loss():
    X, y = blobs(n_per=40)
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(8,))
    spec = mlp.TrainSpec(epochs=1, seed=2, validation_fraction=0.0)

    m0 = mlp.init(arch, seed=2)
    m1 = mlp.train(X, y, arch, spec)

    def loss(m):
        p = np.array([mlp.forward(m, x) for x in X])
        return float(np.mean(-np.log(p[np.arange(len(y)), y])))

    assert loss(m1) < loss(m0)


def test_train_duplicated_data_double_batch_same_params():
    X, y = blobs(n_per=32)
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(6,))
    m1 = mlp.train(
        X, y, arch,
        mlp.TrainSpec(epochs=5, batch_size=16, seed=3, validation_fraction=0.0),
    )
    X2, y2 = np.repeat(X, 2, axis=0), np.repeat(y, 2)
    m2 = mlp.train(
        X2, y2, arch,
        mlp.TrainSpec(epochs=5, batch_size=32, seed=3, validation_fraction=0.0),
    )
    for w1, w2 in zip(m1.weights, m2.weights):
        np.testing.assert_allclose(w1, w2, atol=1e-10)
    for b1, b2 in zip(m1.biases, m2.biases):
        np.testing.assert_allclose(b1, b2, atol=1e-10)


def test_train_class_weighting_handles_imbalance():
    # 10:1 imbalance; weighting keeps the minority class reachable
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(-1.5, 0.4, (200, 3)), rng.normal(1.5, 0.4, (20, 3))])
    y = np.array([0] * 200 + [1] * 20)
    arch = mlp.MlpArchitecture(input_dim=3, hidden=(12,))
    m = mlp.train(X, y, arch, mlp.TrainSpec(epochs=60, seed=4))
    minority = np.array([mlp.forward(m, x)[1] for x in X[200:]])
    assert float(np.mean(minority > 0.5)) >= 0.9


def test_train_deterministic():
    X, y = blobs(n_per=24)
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(6,))
    spec = mlp.TrainSpec(epochs=8, seed=9)
    m1, m2 = mlp.train(X, y, arch, spec), mlp.train(X, y, arch, spec)
    for w1, w2 in zip(m1.weights, m2.weights):
        np.testing.assert_array_equal(w1, w2)


def test_train_single_class_rejected():
    X = np.zeros((10, 3))
    with pytest.raises(DataError):
        mlp.train(X, np.zeros(10, dtype=int), mlp.MlpArchitecture(input_dim=3))


def test_train_rejects_bad_labels_and_shapes():
    X, y = blobs(n_per=8)
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(4,))
    with pytest.raises(DataError):
        mlp.train(X, np.full(len(y), 2), arch)
    with pytest.raises(DataError):
        mlp.train(X[:, :3], y, arch)
    with pytest.raises(DataError):
        mlp.train(X, y[:-1], arch)


def test_train_divergence_raises():
    X, y = blobs(n_per=30)
    arch = mlp.MlpArchitecture(input_dim=4, hidden=(16, 16))
    with pytest.raises(ConvergenceError):
        mlp.train(X, y, arch, mlp.TrainSpec(learning_rate=1e150, epochs=3, seed=1))


def test_train_spec_validation():
    with pytest.raises(DataError):
        mlp.TrainSpec(learning_rate=0.0)
    with pytest.raises(DataError):
        mlp.TrainSpec(validation_fraction=1.0)
    with pytest.raises(DataError):
        mlp.TrainSpec(batch_size=0)


def test_gradient_check_random_model(rng):
    arch = mlp.MlpArchitecture(input_dim=3, hidden=(4, 3))
    m = mlp.init(arch, seed=7)
    worst = mlp.gradient_check(m, rng.normal(size=3), 1)
    assert worst < 1e-4


def test_gradient_check_saturated_model():
    """A solidly correct prediction has near-zero gradients; the relative
    error stays controlled instead of amplifying rounding noise."""
    arch = mlp.MlpArchitecture(input_dim=2, hidden=(2,))
    m = mlp.MlpModel(
        arch=arch,
        weights=(np.eye(2) * 5.0, np.array([[30.0, -30.0], [0.0, 0.0]])),
        biases=(np.zeros(2), np.zeros(2)),
    )
    assert mlp.forward(m, [1.0, 0.0])[0] > 0.999999
    assert mlp.gradient_check(m, [1.0, 0.0], 0) < 1e-4


def test_gradient_check_label_validation(rng):
    m = mlp.init(mlp.MlpArchitecture(input_dim=2, hidden=(2,)), seed=0)
    with pytest.raises(DataError):
        mlp.gradient_check(m, [0.0, 0.0], 2)


def test_predict_map_shape_and_range(rng):
    m = mlp.init(mlp.MlpArchitecture(input_dim=10, hidden=(6,)), seed=0)
    fm = features.FeatureMatrix(values=rng.normal(size=(4, 5, 10)))
    scores = mlp.predict_map(m, fm)
    assert scores.shape == (4, 5)
    assert np.all((scores > 0.0) & (scores < 1.0))
    # rows match per-vector forward
    for i in range(4):
        for j in range(5):
            np.testing.assert_allclose(
                scores[i, j], mlp.forward(m, fm.values[i, j])[1], atol=1e-12
            )


def test_predict_map_dim_mismatch(rng):
    m = mlp.init(mlp.MlpArchitecture(input_dim=10, hidden=(6,)), seed=0)
    fm = features.FeatureMatrix(values=rng.normal(size=(2, 2, 9)))
    with pytest.raises(DataError):
        mlp.predict_map(m, fm)


def test_model_file_roundtrip(tmp_path):
    arch = mlp.MlpArchitecture(input_dim=7, hidden=(5, 4))
    m = mlp.init(arch, seed=13)
    p = tmp_path / "m.ngmlp"
    mlp.save_model(p, m, config_hash="cd" * 32)
    back, h = mlp.load_model(p)
    assert h == "cd" * 32
    assert back.arch == arch and back.seed == 13
    for w1, w2 in zip(m.weights, back.weights):
        np.testing.assert_array_equal(w1, w2)
    for b1, b2 in zip(m.biases, back.biases):
        np.testing.assert_array_equal(b1, b2)


def test_model_file_empty_hash(tmp_path):
    m = mlp.init(mlp.MlpArchitecture(input_dim=3, hidden=(2,)), seed=0)
    mlp.save_model(tmp_path / "m.ngmlp", m)
    _, h = mlp.load_model(tmp_path / "m.ngmlp")
    assert h == ""


def test_model_file_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ngmlp"
    bad.write_bytes(b"notamodel")
    with pytest.raises(DataError):
        mlp.load_model(bad)

    m = mlp.init(mlp.MlpArchitecture(input_dim=3, hidden=(2,)), seed=0)
    p = tmp_path / "m.ngmlp"
    mlp.save_model(p, m)
    blob = p.read_bytes()
    (tmp_path / "trail.ngmlp").write_bytes(blob + b"\x00")
    with pytest.raises(DataError):
        mlp.load_model(tmp_path / "trail.ngmlp")

    with pytest.raises(DataError):
        mlp.save_model(tmp_path / "x.ngmlp", m, config_hash="zz")
