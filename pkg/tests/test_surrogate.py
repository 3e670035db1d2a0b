import logging
import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctms_station.ctm import FixedParams, StationDesign
from ctms_station.dataset import DesignRecord, StretchRanges, random_stretch
from ctms_station.design_space import DesignBounds, is_feasible
from ctms_station.errors import ConfigurationError, DomainError
from ctms_station.scenarios import builtin_catalog
from ctms_station.surrogate import (LOSS_FLOOR, MinMaxScaler, MLPModel, TrainConfig,
                                    feature_scaler_from_ranges, featurize, forward,
                                    loss_and_gradients, msle_loss, predict, predict_raw, train)

RANGES = StretchRanges()


def _model(n_cells=2, hidden=5, seed=0):
    inputs = 6 * n_cells + 3
    return MLPModel.initialise(n_cells, MinMaxScaler(np.zeros(inputs), np.ones(inputs)),
                               MinMaxScaler(np.zeros(4), np.ones(4)), hidden, 0.2, seed)


def _synthetic_corpus(count, n_cells=4, seed=0):
    """Records whose target depends smoothly on the stretch (no GA needed)."""
    rng = np.random.default_rng(seed)
    ranges = StretchRanges(n_cells=n_cells)
    records = []
    for k in range(count):
        stretch = random_stretch(ranges, rng)
        caps = stretch.capacities
        i = int(np.argmin(caps[:n_cells - 2])) + 1
        delta = float(np.round(stretch.lengths.sum() * 60, 3))
        ratio = float(np.round(0.2 * (caps[i - 1] - 1500) / 1000, 4))
        records.append(DesignRecord(stretch, FixedParams(), StationDesign(i, i + 2, delta, ratio),
                                    0.0, 0.0, 0.0, k))
    return records


def test_featurize_examples():
    scaler = feature_scaler_from_ranges(RANGES)
    lo, hi = RANGES.feature_bounds()
    a2 = builtin_catalog()["A2"]
    features = featurize(a2.stretch, a2.fixed, scaler)
    assert features.shape == (93,)
    assert features[0] == pytest.approx(0.5, abs=1e-12)
    assert features[-1] == 0.0 and features[5] == 0.0
    np.testing.assert_array_equal(scaler.transform(lo), np.where(hi > lo, 0.0, 0.0))
    np.testing.assert_array_equal(scaler.transform(hi), np.where(hi > lo, 1.0, 0.0))
    with pytest.raises(DomainError):
        featurize(random_stretch(StretchRanges(n_cells=10), 0), FixedParams(), scaler)


def test_forward_examples():
    model = _model()
    model.w1[:] = 0.0
    model.w2[:] = 0.0
    model.b2[:] = [0.1, 0.2, 0.3, 0.4]
    x = np.random.default_rng(0).random(15)
    np.testing.assert_array_equal(forward(model, x), model.b2)
    model = _model(seed=3)
    np.testing.assert_array_equal(forward(model, x), forward(model, x))
    assert not np.array_equal(forward(model, x, training=True, rng=1), forward(model, x))
    with pytest.raises(DomainError):
        forward(model, np.zeros(14))


def test_msle_examples():
    assert msle_loss([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert msle_loss([math.e - 1], [0.0]) == pytest.approx(1.0, rel=1e-15)
    a, b = np.array([0.1, 2.0, 0.5]), np.array([0.4, 0.0, 0.9])
    assert msle_loss(a, b) == msle_loss(b, a)
    with pytest.raises(DomainError):
        msle_loss([-1.0], [0.0])
    with pytest.raises(DomainError):
        msle_loss([0.0, 1.0], [0.0])


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = _model(n_cells=2, hidden=6, seed=seed)
    model.b1[:] = rng.uniform(0.1, 0.3, 6)
    model.b2[:] = 0.5
    x = rng.random((7, 15))
    y = rng.random((7, 4))
    mask = (rng.random((7, 6)) >= 0.2) / 0.8
    _, grads = loss_and_gradients(model, x, y, mask)
    h = 1e-6
    for name, param in model.params().items():
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            keep = param[idx]
            param[idx] = keep + h
            up, _ = loss_and_gradients(model, x, y, mask)
            param[idx] = keep - h
            down, _ = loss_and_gradients(model, x, y, mask)
            param[idx] = keep
            numeric[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-9,
                                   err_msg=name)


def test_loss_continues_linearly_below_floor():
    model = _model()
    model.w2[:] = 0.0
    model.b2[:] = LOSS_FLOOR - 5.0
    loss, grads = loss_and_gradients(model, np.zeros((2, 15)), np.zeros((2, 4)))
    slope = 1.0 / (1.0 + LOSS_FLOOR)
    assert loss == pytest.approx((math.log1p(LOSS_FLOOR) - 5.0 * slope) ** 2, rel=1e-14)
    assert np.all(grads["b2"] < 0.0)
    model.b2[:] = 0.25
    loss, _ = loss_and_gradients(model, np.zeros((2, 15)), np.full((2, 4), 0.5))
    assert loss == msle_loss(np.full((2, 4), 0.25), np.full((2, 4), 0.5))


@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4),
       st.lists(st.floats(0, 1e3), min_size=4, max_size=4),
       st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_normalisation_round_trip(lo, width, t):
    scaler = MinMaxScaler(np.array(lo), np.array(lo) + np.array(width))
    t = np.where(scaler.hi > scaler.lo, t, scaler.lo)
    back = scaler.inverse(scaler.transform(t))
    scale = 1.0 + max(np.abs(t).max(), np.abs(scaler.lo).max(), np.abs(scaler.hi).max())
    np.testing.assert_allclose(back, t, rtol=0, atol=1e-12 * scale)


def test_degenerate_dimension_warns(caplog):
    with caplog.at_level(logging.WARNING):
        scaler = MinMaxScaler.fit(np.array([[1.0, 2.0], [1.0, 3.0]]))
    assert "[0]" in caplog.text
    np.testing.assert_array_equal(scaler.transform([1.0, 2.5]), [0.0, 0.5])
    np.testing.assert_array_equal(scaler.inverse([0.0, 0.5]), [1.0, 2.5])


def test_identical_records_are_memorised():
    record = _synthetic_corpus(1)[0]
    corpus = [record] * 1000
    model, curves = train(corpus, TrainConfig(epochs=20, feature_ranges=StretchRanges(n_cells=4)))
    assert curves.validation[-1] < 1e-4
    assert predict(model, record.stretch, record.fixed, DesignBounds()) == record.target


@pytest.fixture(scope="module")
def trained():
    corpus = _synthetic_corpus(400)
    config = TrainConfig(batch_size=64, epochs=60, rng_seed=2)
    model, curves = train(corpus, config)
    return corpus, config, model, curves


def test_training_is_deterministic_and_improves(trained, tmp_path):
    corpus, config, model, curves = trained
    again, curves_again = train(corpus, config)
    assert again == model and curves_again == curves
    assert len(curves.train) == config.epochs == len(curves.validation)
    assert curves.validation[-1] < curves.validation[0]
    assert curves.train[-1] < curves.train[0]
    path = tmp_path / "loss.csv"
    curves.write_csv(path)
    assert path.read_text().splitlines()[0] == "epoch,train_msle,validation_msle"


def test_model_json_round_trip(trained, tmp_path):
    _, _, model, _ = trained
    path = tmp_path / "model.json"
    model.save(path)
    loaded = MLPModel.load(path)
    assert loaded == model
    x = np.random.default_rng(0).random(model.input_dim)
    np.testing.assert_array_equal(forward(loaded, x), forward(model, x))
    path.write_text("{}")
    with pytest.raises(ConfigurationError):
        MLPModel.load(path)


def test_predictions_feasible_and_fast(trained):
    corpus, _, model, _ = trained
    bounds = DesignBounds()
    rng = np.random.default_rng(5)
    for _ in range(50):
        stretch = random_stretch(StretchRanges(n_cells=4, length_m=(10.0, 5000.0)), rng)
        design = predict(model, stretch, FixedParams(), bounds)
        assert is_feasible(design, bounds, stretch)
    start = time.perf_counter()
    predict(model, corpus[0].stretch, corpus[0].fixed, bounds)
    assert time.perf_counter() - start < 0.2
    assert predict_raw(model, corpus[0].stretch, corpus[0].fixed).shape == (4,)


def test_train_preconditions():
    corpus = _synthetic_corpus(50)
    with pytest.raises(ConfigurationError):
        train(corpus, TrainConfig(batch_size=64))
    with pytest.raises(ConfigurationError):
        train(corpus[:30] + _synthetic_corpus(60, n_cells=5), TrainConfig(batch_size=8))
    with pytest.raises(ConfigurationError):
        train([], TrainConfig())
    with pytest.raises(ConfigurationError):
        TrainConfig(validation_fraction=1.0)
    assert TrainConfig().learning_rate_at(39) == 1e-3
    assert TrainConfig().learning_rate_at(40) == 5e-4
    assert TrainConfig().learning_rate_at(80) == 2.5e-4
