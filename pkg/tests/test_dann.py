import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import LogisticRegression

from dinids.dann import (
    DannModel,
    DannTrainConfig,
    TrainHistory,
    domain_gradients,
    domain_loss,
    extract_features,
    label_loss,
    lambda_at,
    predict_domain,
    predict_labels,
    train_dann,
    two_unit_loss,
)
from dinids.dataset import apply_scaler, fit_scaler
from dinids.errors import DataError, DivergenceError, ShapeError
from dinids.evaluation import confusion, metrics
from dinids.nn import DenseNetwork, SgdConfig
from dinids.synthetic import make_blobs, make_shifted_domains

from fd_oracle import domain_check, label_check, random_model

FAST = SgdConfig(learning_rate=0.5, batch_size=32, dropout_ratio=0.2, seed=7)
BLOB = SgdConfig(learning_rate=1.0, batch_size=32, dropout_ratio=0.2, seed=7)


# ---------------------------------------------------------------- losses


@pytest.mark.parametrize("p, expected", [(1.0, 0.0), (0.5, math.log(2)), (math.exp(-3), 3.0)])
def test_label_loss_examples(p, expected):
    assert label_loss(p) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("p, g, expected", [(0.5, 0, math.log(2)), (0.5, 1, math.log(2)), (0.9, 1, 0.1053605)])
def test_domain_loss_examples(p, g, expected):
    assert domain_loss(p, g) == pytest.approx(expected, abs=1e-7)


def test_losses_clamp_extremes():
    assert np.isfinite(label_loss(0.0))
    assert np.isfinite(domain_loss(1.0, 0))
    with pytest.raises(ValueError):
        domain_loss(0.5, 2)


@given(st.floats(0.001, 0.998), st.floats(0.0005, 0.001))
def test_losses_decrease_in_correct_probability(p, dp):
    assert label_loss(p + dp) < label_loss(p)
    assert domain_loss(p + dp, 1) < domain_loss(p, 1)
    assert domain_loss(1 - p - dp, 0) < domain_loss(1 - p, 0)
    assert label_loss(p) >= 0 and domain_loss(p, 0) >= 0


def test_two_unit_loss_modes():
    p = np.array([[0.8, 0.3]])
    one_hot, _ = two_unit_loss(p, np.array([0]))
    assert one_hot == pytest.approx(-math.log(0.8) - math.log(0.7))
    true_class, grad = two_unit_loss(p, np.array([0]), mode="true_class")
    assert true_class == pytest.approx(-math.log(0.8))
    assert grad[0, 1] == 0.0


# ---------------------------------------------------------------- schedule


def test_lambda_schedule_examples():
    cfg = DannTrainConfig()
    assert lambda_at(0.0, cfg) == 0.0
    assert lambda_at(1.0, cfg) == pytest.approx(0.9999092, abs=1e-7)
    fixed = DannTrainConfig(lambda_fixed=0.3)
    assert lambda_at(0.0, fixed) == lambda_at(0.77, fixed) == 0.3


@pytest.mark.parametrize("progress", [-0.1, 1.01])
def test_lambda_schedule_range(progress):
    with pytest.raises(ValueError):
        lambda_at(progress, DannTrainConfig())


@given(st.floats(0, 1), st.floats(0, 1))
def test_lambda_schedule_monotone(a, b):
    cfg = DannTrainConfig()
    lo, hi = sorted((a, b))
    assert 0 <= lambda_at(lo, cfg) <= lambda_at(hi, cfg) < 1


@pytest.mark.parametrize(
    "kwargs", [{"epochs": 0}, {"validation_split": 1.0}, {"lambda_fixed": -1.0}, {"label_loss_mode": "softmax"}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DannTrainConfig(**kwargs)


def test_default_architecture():
    m = DannModel.initialize(DannTrainConfig(), seed=0)
    assert m.g_f.sizes == [39, 10, 10, 10]
    assert m.g_c.sizes == [10, 2]
    assert m.g_d.sizes == [10, 10, 2]


# ---------------------------------------------------------------- gradients


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_label_and_domain_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model, cfg = random_model(rng)
    n = int(rng.integers(2, 6))
    x = rng.normal(size=(n, cfg.input_dim))
    assert label_check(model, cfg, x, rng.integers(0, 2, n)) < 1e-4
    gamma = np.r_[np.zeros(n // 2 or 1, dtype=np.int64), np.ones(n - (n // 2 or 1), dtype=np.int64)]
    assert domain_check(model, x, gamma) < 1e-4


@given(seed=st.integers(0, 10_000), lam=st.floats(0, 5))
def test_reversal_direction(seed, lam):
    rng = np.random.default_rng(seed)
    model, cfg = random_model(rng)
    x = rng.normal(size=(6, cfg.input_dim))
    gamma = np.array([0, 0, 0, 1, 1, 1])
    loss_r, gd_r, gf_r = domain_gradients(model, x, gamma, lam)
    loss_p, gd_p, gf_p = domain_gradients(model, x, gamma, lam, reverse=False)
    assert loss_r == loss_p
    assert np.array_equal(gd_r.flat(), gd_p.flat())
    plain = -lam * gf_p.flat()
    np.testing.assert_allclose(gf_r.flat(), plain, rtol=1e-12, atol=1e-13 * max(np.abs(plain).max(), 1e-300))


def test_domain_batch_needs_both_domains():
    model, cfg = random_model(np.random.default_rng(0))
    with pytest.raises(DataError):
        domain_gradients(model, np.zeros((3, cfg.input_dim)), np.zeros(3, dtype=np.int64), 1.0)


# ---------------------------------------------------------------- inference


def _zero_model():
    cfg = DannTrainConfig()
    return DannModel(DenseNetwork.zeros(cfg.feature_sizes), DenseNetwork.zeros(cfg.label_sizes),
                     DenseNetwork.zeros(cfg.domain_sizes), None)


def test_extract_features_zero_net_and_shape():
    m = _zero_model()
    out = extract_features(m, np.random.default_rng(0).normal(size=(100, 39)))
    assert out.shape == (100, 10)
    assert np.all(out == 0.5)


def test_extract_features_deterministic_and_shape_error():
    m = DannModel.initialize(DannTrainConfig(), seed=3)
    x = np.random.default_rng(0).normal(size=(5, 39))
    assert np.array_equal(extract_features(m, x), extract_features(m, x))
    with pytest.raises(ShapeError):
        extract_features(m, np.zeros((5, 38)))


def test_predict_labels_argmax_and_tie():
    m = _zero_model()
    x = np.zeros((3, 39))
    assert predict_labels(m, x).tolist() == [0, 0, 0]  # tie (0.5, 0.5)
    logit = lambda p: math.log(p / (1 - p))
    m.g_c.layers[0].bias[:] = [logit(0.2), logit(0.9)]
    assert predict_labels(m, x).tolist() == [1, 1, 1]
    m.g_c.layers[0].bias[:] = [logit(0.9), logit(0.2)]
    assert predict_labels(m, x).tolist() == [0, 0, 0]


def test_predict_domain_untrained_and_single_row():
    m = _zero_model()
    assert predict_domain(m, np.ones((4, 39))).tolist() == [0, 0, 0, 0]
    assert predict_domain(m, np.ones(39)).shape == (1,)


# ---------------------------------------------------------------- training


def test_training_input_errors():
    x = np.zeros((10, 39))
    y = np.zeros(10)
    with pytest.raises(DataError):
        train_dann(np.zeros((0, 39)), np.zeros(0), x, DannTrainConfig(epochs=1))
    with pytest.raises(DataError):
        train_dann(x, y, np.zeros((0, 39)), DannTrainConfig(epochs=1))
    with pytest.raises(ShapeError):
        train_dann(x, y, np.zeros((10, 7)), DannTrainConfig(epochs=1))


def test_divergence_names_epoch(monkeypatch):
    import dinids.dann as dann_mod

    real = dann_mod.label_gradients
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        loss, gc, gf = real(*args, **kwargs)
        calls["n"] += 1
        return (float("nan") if calls["n"] > 5 else loss), gc, gf

    monkeypatch.setattr(dann_mod, "label_gradients", poisoned)
    x, y = make_blobs(200, seed=0)
    cfg = DannTrainConfig(epochs=3, sgd=SgdConfig(learning_rate=0.5, batch_size=32))  # 5 batches per epoch
    with pytest.raises(DivergenceError) as info:
        train_dann(x, y, x, cfg)
    assert info.value.epoch == 2 and "epoch 2" in str(info.value)


def test_target_labels_not_accepted():
    params = list(inspect.signature(train_dann).parameters)
    assert params == ["source_x", "source_y", "target_x", "cfg"]


def test_lambda_zero_reduces_to_feed_forward():
    xs, ys, xt, _ = make_shifted_domains(400, 400, seed=1)
    base = DannTrainConfig(epochs=4, sgd=FAST)
    dann, _ = train_dann(xs, ys, xt, DannTrainConfig(epochs=4, sgd=FAST, lambda_fixed=0.0))
    ff, _ = train_dann(xs, ys, None, DannTrainConfig(epochs=4, sgd=FAST, adversarial=False))
    assert dann.g_f.equals(ff.g_f) and dann.g_c.equals(ff.g_c)
    # the domain head did train in the adversarial run
    assert not dann.g_d.equals(DannModel.initialize(base, seed=FAST.seed).g_d)


def test_permuted_target_rows_leave_classifier_unchanged_at_lambda_zero():
    xs, ys, xt, _ = make_shifted_domains(300, 300, seed=2)
    cfg = DannTrainConfig(epochs=3, sgd=FAST, lambda_fixed=0.0)
    a, _ = train_dann(xs, ys, xt, cfg)
    b, _ = train_dann(xs, ys, xt[np.random.default_rng(0).permutation(len(xt))], cfg)
    assert a.g_f.equals(b.g_f) and a.g_c.equals(b.g_c)


def test_same_seed_same_model():
    xs, ys, xt, _ = make_shifted_domains(300, 300, seed=3)
    cfg = DannTrainConfig(epochs=3, sgd=FAST)
    (a, ha), (b, hb) = train_dann(xs, ys, xt, cfg), train_dann(xs, ys, xt, cfg)
    assert a.g_f.equals(b.g_f) and a.g_d.equals(b.g_d)
    assert ha.to_csv() == hb.to_csv()


def test_blob_classifier_reaches_oracle_level():
    x, y = make_blobs(2000, seed=7)
    tr, te = slice(0, 1400), slice(1400, None)
    oracle = LogisticRegression(max_iter=2000).fit(x[tr], y[tr])
    assert metrics(confusion(y[te], oracle.predict(x[te]))).f1 >= 0.99  # separable
    model, hist = train_dann(x[tr], y[tr], x[te], DannTrainConfig(epochs=50, sgd=BLOB))
    assert max(hist.validation_f1) >= 0.95
    assert metrics(confusion(y[te], predict_labels(model, x[te]))).f1 >= 0.95
    assert len(hist) <= 50 and all(np.isfinite(hist.label_loss))


def test_history_csv():
    h = TrainHistory()
    h.append(0.5, 1.25, 0.9, 0.1)
    assert h.to_csv() == "epoch,label_loss,domain_loss,val_f1,lambda\n1,0.5,1.25,0.9,0.1\n"


@pytest.mark.slow
def test_adversarial_training_confuses_domain_head():
    xs, ys, xt, _ = make_shifted_domains(3000, 3000, seed=0)
    scaler = fit_scaler(xs[:2100])
    s, t = apply_scaler(scaler, xs), apply_scaler(scaler, xt)
    model, _ = train_dann(s[:2100], ys[:2100], t[:2100], DannTrainConfig(epochs=100, sgd=FAST))
    held = np.vstack([s[2100:], t[2100:]])
    dom = np.r_[np.zeros(900), np.ones(900)]
    probe = LogisticRegression(max_iter=2000).fit(np.vstack([s[:2100], t[:2100]]), np.r_[np.zeros(2100), np.ones(2100)])
    assert probe.score(held, dom) >= 0.9
    assert np.mean(predict_domain(model, held) == dom) <= 0.65
