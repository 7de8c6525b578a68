import numpy as np
import pytest

import rbr.model as model_mod
from rbr.bitfeatures import FeatureBank, generate_bank
from rbr.dataio import Dataset, StandardizerParams, kfold_split, simulate_sine, standardize_apply
from rbr.model import (FORMAT_VERSION, ModelFormatError, RbrModel, TrainConfig, cross_validate, evaluate,
                       load_model, predict, rmse, save_model, select_lambda, train)
from rbr.solver import LbfgsConfig

from conftest import random_bits


def small_regression(rng, n=80, m=3):
    x = rng.standard_normal((n, m))
    y = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2] + 0.1 * rng.standard_normal(n)
    return Dataset(x, y, [f"c{j}" for j in range(m)])


def small_classification(rng, n=120, m=2):
    x = rng.standard_normal((n, m))
    y = (x[:, 0] ** 2 + x[:, 1] ** 2 < 1.2).astype(float)
    return Dataset(x, y, ["u", "v"], "classification")


def intercept_model(task="regression", b0=2.0, m=1):
    bank = FeatureBank(np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)), np.zeros(0, dtype=np.int64),
                       np.zeros(0), 0, m)
    return RbrModel(task, StandardizerParams(np.zeros(m), np.ones(m)), bank, np.array([b0]), 1.0, 0)


@pytest.mark.parametrize("lam", [0.0, 1.0, 100.0, (0.01, 1.0, 100.0)])
def test_constant_target(rng, lam):
    x = rng.standard_normal((40, 2))
    m = train(Dataset(x, np.full(40, 7.0)), TrainConfig(k=300, lam=lam))
    np.testing.assert_allclose(predict(m, rng.standard_normal((25, 2)) * 5).value, 7.0, rtol=1e-6)


def test_sine_fit_quality():
    tr, te = simulate_sine(1000, 1000, 1)
    m = train(tr, TrainConfig(k=10_000, lam=1.0))
    assert evaluate(m, te) <= 0.15


def test_training_is_deterministic(rng):
    d = small_regression(rng)
    cfg = TrainConfig(k=500, lam=(0.1, 10.0), seed=5)
    a, b = train(d, cfg), train(d, cfg)
    assert a == b
    np.testing.assert_array_equal(a.beta, b.beta)


def test_interpolates_tiny_problem(rng):
    d = small_regression(rng, n=20)
    cfg = TrainConfig(k=2000, lam=0.0, lbfgs=LbfgsConfig(gradient_tolerance=1e-12, max_iterations=5000))
    m = train(d, cfg)
    np.testing.assert_allclose(predict(m, d.x).value, d.y, atol=1e-6)


def test_train_features_match_apply(rng):
    d = small_regression(rng)
    m = train(d, TrainConfig(k=400, lam=1.0))
    _, f = generate_bank(standardize_apply(m.standardizer, d.x), 400, m.seed)
    assert m.features(d.x) == f


def test_constant_classifier(rng):
    m = intercept_model("classification", 0.3, m=2)
    p = predict(m, rng.standard_normal((10, 2)))
    assert np.all(p.value == p.value[0]) and np.all(p.label == 1)
    assert np.all(predict(intercept_model("classification", 0.0), [[1.0]]).label == 1)


def test_probabilities_bounded(rng):
    d = small_classification(rng)
    m = train(d, TrainConfig(k=800, lam=0.01))
    p = predict(m, rng.standard_normal((200, 2)) * 3)
    assert np.all((p.value > 0) & (p.value < 1))
    np.testing.assert_array_equal(p.label, (p.value >= 0.5).astype(int))


def test_classification_learns_circle(rng):
    d = small_classification(rng, n=400)
    m = train(d, TrainConfig(k=3000))
    test = small_classification(np.random.default_rng(99), n=400)
    assert evaluate(m, test) < 10.0


def test_width_mismatch(rng):
    m = train(small_regression(rng), TrainConfig(k=50, lam=1.0))
    with pytest.raises(ValueError, match="3 columns"):
        predict(m, np.zeros((2, 2)))


def test_non_binary_labels_rejected(rng):
    with pytest.raises(ValueError):
        train(Dataset(rng.standard_normal((10, 2)), np.arange(10.0), task="classification"), TrainConfig(k=20))


@pytest.mark.parametrize("kw", [dict(k=1), dict(lam=-1.0), dict(lam=()), dict(lam=float("nan")), dict(inner_folds=1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_save_load_roundtrip(rng, tmp_path):
    d = small_classification(rng)
    m = train(d, TrainConfig(k=700, lam=(0.1, 1.0)), target="label")
    p = tmp_path / "m.rbr"
    save_model(m, p)
    back = load_model(p)
    assert back == m
    assert back.column_names == ("u", "v") and back.target == "label"
    x = rng.standard_normal((50, 2))
    a, b = predict(m, x), predict(back, x)
    np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(a.label, b.label)
    save_model(back, tmp_path / "again.rbr")
    assert (tmp_path / "again.rbr").read_bytes() == p.read_bytes()


def test_intercept_only_model_file(tmp_path):
    p = tmp_path / "one.rbr"
    save_model(intercept_model(b0=2.0), p)
    back = load_model(p)
    assert back.k == 1
    np.testing.assert_array_equal(predict(back, [[3.0], [-1.0]]).value, [2.0, 2.0])


def test_unknown_version(tmp_path):
    p = tmp_path / "m.rbr"
    save_model(intercept_model(), p)
    p.write_text(p.read_text().replace(FORMAT_VERSION, "rbr/9", 1))
    with pytest.raises(ModelFormatError, match="unsupported model format"):
        load_model(p)


def test_truncated_file(rng, tmp_path):
    p = tmp_path / "m.rbr"
    save_model(train(small_regression(rng), TrainConfig(k=30, lam=1.0)), p)
    lines = p.read_text().splitlines()
    (tmp_path / "cut.rbr").write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(tmp_path / "cut.rbr")
    # a line dropped from the middle is caught by the record count
    (tmp_path / "gap.rbr").write_text("\n".join(lines[:15] + lines[16:]) + "\n")
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(tmp_path / "gap.rbr")


def test_corrupt_record(rng, tmp_path):
    p = tmp_path / "m.rbr"
    save_model(train(small_regression(rng), TrainConfig(k=30, lam=1.0)), p)
    lines = p.read_text().splitlines()
    i = lines.index("features 29") + 1
    lines[i] = "4 0 1 2 3 1 1 1 1 0"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ModelFormatError):
        load_model(p)
    p.write_bytes(b"\xff\xfe")
    with pytest.raises(ModelFormatError):
        load_model(p)


def _brute_force_selection(f, y, task, lams, cfg):
    # direct bit-space fits on every inner fold, no Gram shortcut
    old = model_mod.GRAM_MAX_ROWS
    model_mod.GRAM_MAX_ROWS = 0
    try:
        return select_lambda(f, y, task, lams, cfg)
    finally:
        model_mod.GRAM_MAX_ROWS = old


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_gram_selection_matches_bit_space(rng, task):
    f, _ = random_bits(rng, 90, 60, 0.4)
    if task == "regression":
        y = f.to_dense()[:, 1:6].sum(axis=1) + 0.3 * rng.standard_normal(90)
    else:
        y = (f.to_dense()[:, 1:4].sum(axis=1) + 0.5 * rng.standard_normal(90) > 1.5).astype(float)
    lams = (0.01, 0.1, 1.0, 10.0, 100.0)
    cfg = TrainConfig(k=60, lbfgs=LbfgsConfig(gradient_tolerance=1e-11, max_iterations=5000))
    lam_g, sc_g = select_lambda(f, y, task, lams, cfg)
    lam_b, sc_b = _brute_force_selection(f, y, task, lams, cfg)
    assert lam_g == lam_b
    for lam in lams:
        assert sc_g[lam] == pytest.approx(sc_b[lam], rel=1e-5)


def test_selection_ties_go_to_larger_lambda(rng):
    f, _ = random_bits(rng, 30, 10)
    lam, scores = select_lambda(f, np.full(30, 4.0), "regression", (0.1, 1.0, 10.0), TrainConfig(k=10))
    assert lam == 10.0


def test_cv_never_trains_on_held_out_rows(rng, monkeypatch):
    d = small_regression(rng, n=60)
    d = Dataset(np.hstack([d.x, np.arange(60.0)[:, None]]), d.y)  # last column tags the row
    seen = []
    real = model_mod.train

    def spy(data, config=None, target=""):
        seen.append(set(data.x[:, -1].astype(int)))
        return real(data, config, target)

    monkeypatch.setattr(model_mod, "train", spy)
    cross_validate(d, TrainConfig(k=50, lam=1.0), folds=4, seed=3)
    split = kfold_split(60, 4, 3)
    for q in range(4):
        tr, te = split.train_test(q)
        assert seen[q] == set(tr)
        assert not seen[q] & set(te)


def test_cv_metrics(rng):
    d = small_regression(rng, n=100)
    m = cross_validate(d, TrainConfig(k=300), folds=5)
    assert m.metric_name == "rmse" and len(m.per_fold) == 5
    assert m.mean == pytest.approx(np.mean(m.per_fold)) and min(m.per_fold) >= 0
    c = cross_validate(small_classification(rng), TrainConfig(k=300), folds=3)
    assert c.metric_name == "error_percent" and all(0 <= v <= 100 for v in c.per_fold)
    with pytest.raises(ValueError):
        cross_validate(d, folds=1)


def test_more_bits_fit_linear_target_better():
    r = np.random.default_rng(0)
    x = r.standard_normal((3000, 1))
    y = 2.0 * x[:, 0]
    tr, te = Dataset(x[:2000], y[:2000]), Dataset(x[2000:], y[2000:])
    errs = [evaluate(train(tr, TrainConfig(k=k, lam=0.01)), te) for k in (100, 10_000)]
    assert errs[1] < errs[0]


def test_rmse_helper():
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
