import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from falldet.errors import MalformedModelFile, ShapeMismatch, SingleClassTraining
from falldet.metrics import roc_auc
from falldet.models import (ModelKind, ModelSpec, TrainedModel, load_model, mlp_gradient, mlp_init, mlp_loss,
                            parse_kind, save_model, score_sample, score_windows, train_model)
from falldet.preprocess import AX_COLS, apply_scaler, fit_scaler

D = 75


def blobs(n, w=1, seed=0, shift=1.5):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, w, D)).astype(np.float32)
    X[:, :, :5] += (shift * (2 * y - 1))[:, None, None]
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = blobs(120, w=2, seed=1)
    Xv, yv = blobs(40, w=2, seed=2)
    out = {}
    for kind in ModelKind:
        spec = ModelSpec(kind, hidden_width=16, epochs=3) if kind == ModelKind.MLP else ModelSpec(kind)
        out[kind] = train_model(spec, (X, y), (Xv, yv))
    return out, Xv


def test_parse_kind_and_spec_validation():
    assert parse_kind("knn") == ModelKind.KNN and parse_kind("MLP") == ModelKind.MLP
    with pytest.raises(ValueError):
        parse_kind("svm")
    with pytest.raises(ValueError):
        ModelSpec(ModelKind.KNN, k=2)
    with pytest.raises(ValueError):
        ModelSpec(ModelKind.MLP, epochs=0)
    s = ModelSpec(ModelKind.MLP, hidden_width=7)
    assert ModelSpec.from_json(s.to_json()) == s


def test_threshold_on_two_windows():
    X = np.zeros((2, 1, D), np.float32)
    X[0, 0, AX_COLS.start] = 500
    X[1, 0, AX_COLS.start + 3] = 3000
    m = train_model(ModelSpec(ModelKind.Threshold), (X, [0, 1]))
    tau = float(m.params["tau"][0])
    assert 500 < tau <= 3000
    s = score_windows(m, X)
    assert s.tolist() == [500.0, 3000.0]
    assert ((s >= tau).astype(int) == [0, 1]).all()


def test_threshold_undoes_scaling():
    rng = np.random.default_rng(0)
    raw = rng.normal(1000, 300, size=(30, 1, D))
    sc = fit_scaler(raw.reshape(-1, D))
    y = (np.arange(30) % 2)
    m = train_model(ModelSpec(ModelKind.Threshold), (apply_scaler(sc, raw).astype(np.float32), y), scaler=sc)
    expect = np.sqrt(raw[:, 0, 13:33] ** 2 + raw[:, 0, 33:53] ** 2 + raw[:, 0, 53:73] ** 2).max(axis=1)
    assert np.allclose(score_windows(m, apply_scaler(sc, raw).astype(np.float32)), expect, rtol=1e-5)


def test_gaussian_nb_hand_means():
    X = np.zeros((4, 1, D), np.float32)
    X[:, 0, :2] = [[1, 2], [3, 4], [10, 20], [30, 40]]
    m = train_model(ModelSpec(ModelKind.GaussianNB), (X, [0, 0, 1, 1]))
    assert m.params["mean0"][:2].tolist() == [2.0, 3.0]
    assert m.params["mean1"][:2].tolist() == [20.0, 30.0]
    assert m.params["var1"][:2].tolist() == [100.0, 100.0]
    assert m.params["var0"][5] == np.float32(1e-9)


def test_gaussian_nb_symmetric_midpoint():
    X = np.zeros((4, 1, D), np.float32)
    X[:, 0, 0] = [-2, 0, 0, 2]
    m = train_model(ModelSpec(ModelKind.GaussianNB), (X, [0, 0, 1, 1]))
    assert score_sample(m, np.zeros((1, D))) == 0.5


def test_knn_vote_fraction():
    X = np.zeros((3, 1, D), np.float32)
    X[:, 0, 0] = [1, 2, 3]
    m = train_model(ModelSpec(ModelKind.KNN, k=3), (X, [1, 1, 0]))
    assert score_sample(m, np.zeros((1, D))) == 2 / 3


def test_linear_regression_constant_model():
    beta = np.zeros(2 * D + 1)
    beta[-1] = 0.4
    m = TrainedModel(ModelSpec(ModelKind.LinearRegression), 2, {"beta": beta})
    probes = np.random.default_rng(0).normal(size=(5, 2, D))
    assert np.all(score_windows(m, probes) == np.float64(np.float32(0.4)))


def test_single_class_training_rejected():
    X, _ = blobs(10)
    for kind in (ModelKind.GaussianNB, ModelKind.LinearRegression, ModelKind.MLP, ModelKind.Threshold):
        with pytest.raises(SingleClassTraining):
            train_model(ModelSpec(kind, epochs=1, hidden_width=4), (X, np.zeros(10)))
    train_model(ModelSpec(ModelKind.KNN), (X, np.zeros(10)))


def test_mlp_learns_linearly_separable_set():
    rng = np.random.default_rng(5)
    n = 200
    X = rng.normal(size=(2 * n, D))
    direction = rng.normal(size=D)
    margin = X @ direction
    keep = np.abs(margin) > 0.5 * np.std(margin)
    X, y = X[keep][:n], (margin[keep][:n] > 0).astype(int)
    assert len(X) == n
    # separability oracle: the least-squares fit already ranks the classes perfectly
    A = np.hstack([X, np.ones((len(X), 1))])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    assert roc_auc(A @ beta, y).auc == 1.0
    m = train_model(ModelSpec(ModelKind.MLP, hidden_width=64, epochs=100), (X[:, None, :].astype(np.float32), y))
    assert roc_auc(score_windows(m, X[:, None, :]), y).auc >= 0.99


def test_gradient_bias_zero_for_balanced_batch():
    p = {k: np.zeros_like(v, dtype=np.float64) for k, v in mlp_init(D, 6, 0).items()}
    X = np.random.default_rng(0).normal(size=(4, D))
    g = mlp_gradient(p, X, [0, 1, 0, 1])
    assert g["b2"][0] == 0.0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = mlp_init(D, 6, seed=3, dtype=np.float64)
    params["b1"] = rng.normal(size=6) * 0.1
    params["b2"] = np.array([0.2])
    X = rng.normal(size=(5, D))
    y = np.array([1, 0, 1, 1, 0])
    wd = 1e-4
    g = mlp_gradient(params, X, y, wd)
    # oracle loss in extended precision so the difference quotient is not swamped by rounding
    ld = {k: v.astype(np.longdouble) for k, v in params.items()}
    Xl = X.astype(np.longdouble)
    h = np.longdouble(1e-4)
    worst = 0.0
    for name, block in ld.items():
        flat = block.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = mlp_loss(ld, Xl, y, wd)
            flat[i] = orig - h
            down = mlp_loss(ld, Xl, y, wd)
            flat[i] = orig
            fd = float((up - down) / (2 * h))
            an = float(g[name].reshape(-1)[i])
            if an == 0.0 and abs(fd) < 1e-12:
                continue
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd)))
    assert worst < 1e-4


def test_weight_decay_adds_lambda_w():
    params = mlp_init(D, 5, seed=1, dtype=np.float64)
    X = np.random.default_rng(1).normal(size=(7, D))
    y = [0, 1, 1, 0, 1, 0, 0]
    a = mlp_gradient(params, X, y, 0.0)
    b = mlp_gradient(params, X, y, 1e-4)
    for name in ("W1", "W2"):
        assert np.allclose(b[name] - a[name], 1e-4 * params[name], rtol=1e-9, atol=1e-18)
    for name in ("b1", "b2"):
        assert np.array_equal(a[name], b[name])


def test_save_load_identical_scores(fitted, tmp_path):
    models, _ = fitted
    probes = np.random.default_rng(9).normal(size=(100, 2, D)).astype(np.float32)
    for kind, m in models.items():
        path = tmp_path / f"{kind.value}.fmod"
        save_model(m, path)
        back = load_model(path)
        assert back.spec == m.spec and back.w == m.w and back.best_epoch == m.best_epoch
        for name in m.params:
            assert np.array_equal(back.params[name].view(np.uint32), m.params[name].view(np.uint32))
        assert np.array_equal(score_windows(back, probes), score_windows(m, probes))


def test_wrong_w_file_fails_on_scoring(fitted, tmp_path):
    models, Xv = fitted
    path = tmp_path / "m.fmod"
    save_model(models[ModelKind.LinearRegression], path)
    lines = path.read_text().split("\n")
    head = json.loads(lines[0])
    head["w"] = 3
    lines[0] = json.dumps(head)
    path.write_text("\n".join(lines))
    bad = load_model(path)
    with pytest.raises(ShapeMismatch):
        score_windows(bad, np.zeros((1, 3, D)))
    with pytest.raises(ShapeMismatch):
        score_sample(models[ModelKind.KNN], np.zeros((3, D)))


def test_truncated_file_rejected(fitted, tmp_path):
    path = tmp_path / "m.fmod"
    save_model(fitted[0][ModelKind.GaussianNB], path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(MalformedModelFile):
        load_model(path)
    path.write_text("")
    with pytest.raises(MalformedModelFile):
        load_model(path)


def test_scores_are_batch_invariant_and_deterministic(fitted):
    models, Xv = fitted
    for kind, m in models.items():
        batch = score_windows(m, Xv)
        assert np.array_equal(batch, score_windows(m, Xv))
        singles = np.array([score_sample(m, x) for x in Xv])
        assert np.array_equal(batch, singles), kind
        rev = score_windows(m, Xv[::-1])[::-1]
        assert np.array_equal(batch, rev), kind


def test_nb_posteriors_are_probabilities(fitted):
    models, Xv = fitted
    for kind in (ModelKind.GaussianNB, ModelKind.BernoulliNB, ModelKind.MLP):
        s = score_windows(models[kind], Xv * 5)
        assert np.all((s >= 0) & (s <= 1))


def test_history_shapes(fitted):
    models, _ = fitted
    assert len(models[ModelKind.MLP].history) == 3
    assert all(len(m.history) == 1 for k, m in models.items() if k != ModelKind.MLP)


def test_knn_k1_returns_own_label():
    X, y = blobs(40, seed=4)
    m = train_model(ModelSpec(ModelKind.KNN, k=1), (X, y))
    assert score_windows(m, X).tolist() == y.astype(float).tolist()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    Xtr = rng.normal(size=(30, 1, D)).astype(np.float32)
    ytr = rng.integers(0, 2, 30)
    Q = rng.normal(size=(8, 1, D)).astype(np.float32)
    Q[0] = Xtr[4]
    m = train_model(ModelSpec(ModelKind.KNN, k=k), (Xtr, ytr))
    a = Xtr.reshape(30, -1).astype(np.float64)
    for q, got in zip(Q.reshape(8, -1).astype(np.float64), score_windows(m, Q)):
        d = [float(((a[i] - q) ** 2).sum()) for i in range(30)]
        nearest = sorted(range(30), key=lambda i: (d[i], i))[:k]
        assert got == sum(ytr[i] for i in nearest) / k


def test_knn_scores_ignore_column_shift():
    rng = np.random.default_rng(11)
    raw = rng.normal(50, 10, size=(60, 2, D))
    probes = rng.normal(50, 10, size=(20, 2, D))
    y = rng.integers(0, 2, 60)

    def scores(tr, pr):
        sc = fit_scaler(tr.reshape(-1, D))
        m = train_model(ModelSpec(ModelKind.KNN), (apply_scaler(sc, tr).astype(np.float32), y))
        return score_windows(m, apply_scaler(sc, pr).astype(np.float32))

    shifted_tr, shifted_pr = raw.copy(), probes.copy()
    shifted_tr[:, :, 7] += 250.0
    shifted_pr[:, :, 7] += 250.0
    assert np.array_equal(scores(raw, probes), scores(shifted_tr, shifted_pr))


def test_mlp_seeded_reproducibility():
    X, y = blobs(80, seed=6)
    spec = ModelSpec(ModelKind.MLP, hidden_width=12, epochs=4, batch=16, seed=2)
    a = train_model(spec, (X, y), (X, y))
    b = train_model(spec, (X, y), (X, y))
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert [h.to_json() for h in a.history] == [h.to_json() for h in b.history]
    c = train_model(ModelSpec(ModelKind.MLP, hidden_width=12, epochs=4, batch=16, seed=3), (X, y), (X, y))
    assert not np.array_equal(a.params["W1"], c.params["W1"])
