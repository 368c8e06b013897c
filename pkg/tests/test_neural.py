import numpy as np
import pytest
from numcheck import gradient_error, small_batch

from synplan.errors import CompatibilityError, DimensionError, EmptyCandidateSet, FormatError
from synplan.neural import (
    KINDS,
    MLP,
    TAGS,
    Adam,
    ModelDims,
    TrainConfig,
    TrainHistory,
    brute_force_knn,
    init_model,
    knn_build,
    knn_query,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
    softmax,
    train_network,
)


def tiny_dims(n_templates=5):
    return ModelDims(mlp_bits=16, knn_bits=8, n_templates=n_templates, hidden={t: [12, 10, 9, 7] for t in TAGS})


# -- dimensions -----------------------------------------------------------------


def test_input_output_contract():
    d = ModelDims(n_templates=5)
    assert [d.input_dim(t) for t in TAGS] == [3072, 3072, 4096, 4101]
    assert [d.output_dim(t) for t in TAGS] == [4, 128, 5, 128]
    p = ModelDims.paper()
    assert [p.input_dim(t) for t in TAGS] == [3 * 4096, 3 * 4096, 4 * 4096, 4 * 4096 + 91]
    assert p.output_dim("rt1") == 256 and p.hidden["rxn"] == [3000] * 4


def test_bad_dims():
    with pytest.raises(DimensionError):
        ModelDims(hidden={"act": [4]})
    with pytest.raises(DimensionError):
        MLP(0, [4], 2, "classifier", np.random.default_rng(0))
    net = MLP(6, [4], 2, "classifier", np.random.default_rng(0))
    with pytest.raises(DimensionError):
        net.forward(np.zeros((3, 5)))
    with pytest.raises(DimensionError):
        net.forward(np.zeros((1, 6)), train=True)


# -- gradients ------------------------------------------------------------------


@pytest.mark.parametrize("tag", TAGS)
def test_gradients_match_finite_differences(tag, rng):
    d = tiny_dims()
    net = MLP(d.input_dim(tag), d.hidden[tag], d.output_dim(tag), KINDS[tag], rng, np.float64)
    X, y = small_batch(net, rng)
    assert gradient_error(net, X, y, rng) < 1e-6


def test_regressor_loss_is_mean_squared_error():
    net = MLP(3, [4], 2, "regressor", np.random.default_rng(0), np.float64)
    out = np.array([[1.0, 2.0], [0.0, 0.0]])
    y = np.array([[0.0, 2.0], [1.0, 1.0]])
    loss, _ = net.loss(out, y)
    assert loss == pytest.approx(3 / 4)


def test_classifier_loss_is_cross_entropy():
    net = MLP(3, [4], 3, "classifier", np.random.default_rng(0), np.float64)
    loss, _ = net.loss(np.zeros((2, 3)), np.array([0, 2]))
    assert loss == pytest.approx(np.log(3))


def test_eval_rows_are_independent(rng):
    net = MLP(10, [8, 8], 3, "classifier", rng)
    X = rng.random((6, 10))
    assert np.allclose(net.forward(X)[2:3], net.forward(X[2:3]))


# -- softmax and optimizer ------------------------------------------------------------


def test_masked_softmax_exact_zeros():
    p = softmax(np.array([[3.0, 1.0, 50.0, -2.0]]), np.array([True, True, False, True]))
    assert p[0, 2] == 0.0
    assert p.sum() == pytest.approx(1.0)
    ref = np.exp([3.0, 1.0, -2.0])
    assert np.allclose(p[0, [0, 1, 3]], ref / ref.sum())


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first step exactly lr * sign(g) (up to eps)
    params = {"w": np.array([1.0, -2.0, 0.5])}
    opt = Adam(params, lr=0.01)
    opt.step(params, {"w": np.array([3.0, -0.1, 0.0])})
    assert np.allclose(params["w"], [0.99, -1.99, 0.5])


def test_training_reduces_loss(rng):
    net = MLP(20, [16, 16], 3, "classifier", rng)
    X = (rng.random((256, 20)) < 0.5).astype(np.float32)
    y = (X[:, 0] + 2 * X[:, 1]).astype(int) % 3
    hist = TrainHistory()
    train_network(net, X, y, TrainConfig(lr=1e-2, epochs=30, batch_size=32), rng, "toy", history=hist)
    losses = hist.loss["toy"]
    assert losses[-1] < 0.2 * losses[0]
    assert hist.accuracy["toy"][-1] > 0.95


def test_calibrate_sets_population_moments(rng):
    net = MLP(5, [4], 2, "regressor", rng, np.float64)
    X = rng.random((50, 5))
    net.calibrate(X)
    z = X @ net.params["W0"]
    assert np.allclose(net.buffers["mean0"], z.mean(axis=0))
    assert np.allclose(net.buffers["var0"], z.var(axis=0))


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = init_model(tiny_dims(), seed=3, templates_hash="abc")
    model["act"].buffers["mean0"][:] = 0.25
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, extra={"note": 1})
    back = load_checkpoint(path, templates_hash="abc", n_templates=5)
    assert back.digest() == model.digest()
    for tag in TAGS:
        for (n1, a), (n2, b) in zip(model[tag].tensors(), back[tag].tensors()):
            assert n1 == n2 and np.array_equal(a, b)
    assert read_checkpoint_header(path)["extra"] == {"note": 1}


def test_checkpoint_rejects_corruption(tmp_path):
    model = init_model(tiny_dims(), seed=3, templates_hash="abc")
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_bytes(b"NOTACKPT" + path.read_bytes()[8:])
    with pytest.raises(FormatError):
        load_checkpoint(bad)


def test_checkpoint_template_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(tiny_dims(), templates_hash="abc"), path)
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, templates_hash="xyz")
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, n_templates=6)


def test_init_is_seeded():
    a = init_model(tiny_dims(), seed=1)
    assert a.digest() == init_model(tiny_dims(), seed=1).digest()
    assert a.digest() != init_model(tiny_dims(), seed=2).digest()


# -- nearest neighbours ---------------------------------------------------------------


def test_knn_agrees_with_brute_force(rng):
    fps = (rng.random((300, 32)) < 0.2).astype(float)
    index = knn_build(fps)
    for _ in range(50):
        q = rng.normal(size=32)
        mask = rng.random(300) < 0.5
        for m in (mask, None):
            got, ref = knn_query(index, q, 5, m), brute_force_knn(index, q, 5, m)
            assert [i for i, _ in got] == [i for i, _ in ref]
            assert np.allclose([c for _, c in got], [c for _, c in ref], rtol=0, atol=1e-12)


def test_knn_ties_break_by_id():
    fps = np.array([[1, 0], [0, 1], [1, 0], [1, 0]], dtype=float)
    index = knn_build(fps, ids=[7, 3, 5, 1])
    assert [i for i, _ in knn_query(index, [1, 0], 3)] == [1, 5, 7]


def test_knn_errors():
    index = knn_build(np.eye(4))
    with pytest.raises(DimensionError):
        knn_query(index, np.ones(3))
    with pytest.raises(EmptyCandidateSet):
        knn_query(index, np.ones(4), mask=np.zeros(4, dtype=bool))
    # zero query scores everything 0 and falls back to id order
    assert [i for i, _ in knn_query(index, np.zeros(4), 2)] == [0, 1]
