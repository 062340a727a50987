import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endoshift.predictor import (
    PredictorModel,
    constant_velocity,
    fit,
    load_model,
    pad_history,
    predict,
    regression_rows,
    save_model,
    training_residual,
)


def ar1_trajectories(n_traj=20, T=60, coef=0.9, drift=0.05, noise=0.02, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_traj):
        d = np.zeros((T, 2, 2))
        d[0] = rng.normal(0, 0.3, (2, 2))
        for t in range(1, T):
            d[t] = coef * d[t - 1] + drift + rng.normal(0, noise, (2, 2))
        out.append(np.concatenate([np.zeros((1, 2, 2)), np.cumsum(d, axis=0)]))
    return out


def test_regression_rows_count_and_content():
    pos = np.arange(2 * 8 * 2, dtype=float).reshape(8, 2, 2) ** 1.5
    X, Y = regression_rows([pos], window=3)
    d = np.diff(pos, axis=0).reshape(7, 4)
    assert X.shape == (4, 13) and Y.shape == (4, 4)
    assert np.array_equal(X[0, :-1], d[0:3].ravel()) and X[0, -1] == 1.0
    assert np.array_equal(Y[-1], d[6])


def test_fit_matches_augmented_least_squares():
    trajs = ar1_trajectories()
    lam = 1e-3
    model = fit(trajs, window=2, ridge=lam)
    X, Y = regression_rows(trajs, 2)
    n, f = X.shape
    pen = np.sqrt(n * lam) * np.eye(f)[:-1]  # intercept unpenalised
    W, *_ = np.linalg.lstsq(np.vstack([X, pen]), np.vstack([Y, np.zeros((f - 1, Y.shape[1]))]), rcond=None)
    assert np.allclose(model.weights, W, atol=1e-9)


def test_fit_recovers_ar_coefficient():
    model = fit(ar1_trajectories(n_traj=40), window=1, ridge=1e-8)
    lag = model.weights[:4]
    assert np.allclose(np.diag(lag), 0.9, atol=0.02)
    assert np.allclose(lag - np.diag(np.diag(lag)), 0.0, atol=0.02)
    assert np.allclose(model.weights[4], 0.05, atol=0.01)


def test_duplicated_dataset_gives_same_fit():
    trajs = ar1_trajectories(n_traj=5)
    a = fit(trajs, window=3, ridge=1e-2)
    b = fit(trajs + trajs, window=3, ridge=1e-2)
    assert np.allclose(a.weights, b.weights, atol=1e-12)


def test_predict_matches_manual_recursion():
    model = fit(ar1_trajectories(), window=2, ridge=1e-4)
    hist = ar1_trajectories(n_traj=1, T=10, seed=3)[0]
    got = predict(model, hist, 3)
    d = list(np.diff(hist, axis=0).reshape(-1, 4)[-2:])
    pos = hist[-1].ravel().copy()
    for k in range(3):
        nxt = np.concatenate([d[-2], d[-1], [1.0]]) @ model.weights
        pos = pos + nxt
        d.append(nxt)
        assert np.allclose(got[:, k].ravel(), pos, atol=1e-12)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 12))
def test_constant_velocity_extrapolates(vx, vy, H):
    hist = np.array([[[0.0, 0.0], [1.0, 1.0]], [[vx * 0.1, vy * 0.1], [1.0, 1.0]]])
    out = predict(constant_velocity(), hist, H)
    assert np.allclose(out[0, -1], [vx * 0.1 * (H + 1), vy * 0.1 * (H + 1)])
    assert np.allclose(out[1], 1.0)


def test_ar_model_learns_constant_velocity():
    rng = np.random.default_rng(1)
    trajs = []
    for _ in range(30):
        v = rng.uniform(-0.3, 0.3, (2, 2))
        trajs.append(rng.uniform(-5, 5, (1, 2, 2)) + np.arange(40)[:, None, None] * v)
    model = fit(trajs, window=5, ridge=1e-8)
    hist = np.arange(8)[:, None, None] * np.array([[0.1, -0.2], [0.25, 0.0]])
    assert np.allclose(predict(model, hist, 10), predict(constant_velocity(), hist, 10), atol=1e-4)


def test_history_rules():
    model = fit(ar1_trajectories(n_traj=3), window=4)
    assert model.min_history == 5 and constant_velocity().min_history == 2
    with pytest.raises(ValueError):
        predict(model, np.zeros((4, 2, 2)), 3)
    padded = pad_history(np.ones((2, 2, 2)), 5)
    assert padded.shape == (5, 2, 2) and np.all(padded == 1)
    assert predict(model, padded, 0).shape == (2, 0, 2)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit([])
    with pytest.raises(ValueError):
        fit([np.zeros((6, 2, 2))], window=5)
    with pytest.raises(ValueError):
        PredictorModel("lstm")


def test_training_residual_small_on_noise_level():
    trajs = ar1_trajectories(noise=0.02)
    assert training_residual(fit(trajs, window=1), trajs) == pytest.approx(0.02, rel=0.15)


def test_model_json_round_trip(tmp_path):
    model = fit(ar1_trajectories(n_traj=4), window=3, ridge=1e-5)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back == model and np.array_equal(back.weights, model.weights)
    save_model(constant_velocity(), tmp_path / "cv.json")
    assert load_model(tmp_path / "cv.json") == constant_velocity()
