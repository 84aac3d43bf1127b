import math

import numpy as np
import pytest

import tractcloud as tc

COHORT = {"subjects": 10, "streamlines_min": 6, "streamlines_max": 10, "points_min": 10, "points_max": 14, "seed": 3}
TRAIN = {"epochs": 2, "points": 32, "batch_pairs": 2, "eval_every": 1, "seed": 1}


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("py")
    manifest = tc.synth(str(root / "cohort"), COHORT)
    return root, manifest


@pytest.fixture(scope="module")
def model(cohort):
    root, manifest = cohort
    path = root / "model.wmck"
    log = tc.train(str(manifest), str(path), TRAIN)
    return path, log


def first_tract(manifest):
    line = manifest.read_text().splitlines()[1].split(",")
    return manifest.parent / line[1]


def test_synth_and_read_points(cohort):
    _, manifest = cohort
    pts = tc.read_points(str(first_tract(manifest)))
    assert pts.ndim == 2 and pts.shape[1] == 5
    assert np.all(pts[:, 4] == pts[0, 4])


def test_unknown_option_is_rejected(tmp_path):
    with pytest.raises(tc.ConfigError):
        tc.synth(str(tmp_path / "c"), {"subject": 3})


def test_write_tract_round_trip(tmp_path):
    line = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    tc.write_tract(str(tmp_path / "t.wmpc"), [(line, np.array([0.2, 0.4, 0.6]))])
    pts = tc.read_points(str(tmp_path / "t.wmpc"))
    assert pts.shape == (3, 5)
    assert tc.mean_features(str(tmp_path / "t.wmpc"))[0] == pytest.approx(0.4)
    assert tc.tract_profile(str(tmp_path / "t.wmpc"))[99] == pytest.approx(0.6)


def test_train_predict_localize(cohort, model):
    _, manifest = cohort
    path, log = model
    assert [row["epoch"] for row in log] == [1, 2]
    assert math.isfinite(log[-1]["L_total"])
    predictor = tc.Predictor(str(path))
    assert predictor.sample_points == 32
    tract = str(first_tract(manifest))
    assert predictor.predict(tract) == predictor.predict(tract)

    out = tc.localize(str(path), tract, set_size=16, repeats=2, seed=4)
    p = tc.read_points(tract).shape[0]
    assert out["weights"].sum() == 2 * 1024 * math.ceil(p / 16)
    assert out["critical"].sum() == max(1, math.ceil(0.05 * p - 1e-9))


def test_metrics_and_regression():
    assert tc.evaluate([1.0, 2.0], [2.0, 2.0])["mae"] == 0.5
    assert tc.pearson_r([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 3.0
    fit = tc.fit_ols(x, y)
    assert np.allclose(fit["coefficients"], [1.0, -2.0, 0.5], atol=1e-8)
    assert fit["intercept"] == pytest.approx(3.0)
    enet = tc.fit_elastic_net(x, y, alpha=1e3, l1_ratio=1.0)
    assert np.allclose(enet["coefficients"], 0.0)


def test_baseline(cohort):
    _, manifest = cohort
    report = tc.run_baseline(str(manifest), "afq", "enr")
    assert report["n_test"] == 2
    with pytest.raises(tc.ConfigError):
        tc.run_baseline(str(manifest), "median", "lr")
