"""Smoke tests for the biasknn extension module."""

import math
import os

import pytest

import biasknn


@pytest.fixture(scope="module")
def fixture():
    params = biasknn.SyntheticParams()
    params.num_labels = 2
    params.class_angles_deg = [10.0, 30.0]
    params.angle_noise_deg = 3.0
    params.radius_lo = 0.05
    params.radius_hi = 0.40
    params.seed = 7
    made = biasknn.make_synthetic_task(params, 64)
    test = biasknn.make_synthetic_dataset(params, 64, 164, biasknn.Split.test)
    backend = biasknn.make_backend(made.backend)
    return made.task, made.dataset, test, backend


def test_distance_unit_values():
    d = biasknn.distance
    M = biasknn.DistanceMetric
    assert d(M.cosine, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)
    assert d(M.cosine, [0.3, 0.4], [0.9, 1.2]) == pytest.approx(0.0, abs=1e-12)
    assert d(M.manhattan, [1.0, 2.0], [3.0, 5.0]) == pytest.approx(5.0, abs=1e-12)
    assert d(M.chebyshev, [1.0, 2.0], [4.0, 3.0]) == pytest.approx(3.0, abs=1e-12)
    assert d(M.euclidean, [0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0, abs=1e-12)


def test_builtin_task_configs_render():
    tasks_dir = os.environ["BIASKNN_TASKS_DIR"]
    task = biasknn.load_task_config(os.path.join(tasks_dir, "cr.json"))
    example = biasknn.Example()
    example.id = "e1"
    example.fields = {"text": "great phone"}
    assert biasknn.render_prompt(task, example) == "Review: great phone Sentiment:"
    example.gold_label = "Positive"
    assert (
        biasknn.render_demonstration(task, example)
        == "Review: great phone Sentiment: Positive"
    )


def test_feature_extraction(fixture):
    task, train, _, backend = fixture
    features = biasknn.extract_features(
        task, train, backend, biasknn.FeatureKind.probability
    )
    assert len(features) == len(train.examples)
    for f in features[:10]:
        assert len(f.values) == 2
        assert all(0.0 < v < 1.0 for v in f.values)
        # Planted bias: argmax is always the first label.
        assert biasknn.zero_lm_predict(task, f) == "Positive"


def test_end_to_end_eval(fixture):
    task, train, test, backend = fixture
    cfg = biasknn.RunConfig()
    cfg.task = task
    cfg.model_id = "synthetic"
    cfg.method = biasknn.Method.bias_knn
    cfg.m = 4
    cfg.k = 3
    cfg.metric = biasknn.DistanceMetric.cosine
    cfg.num_runs = 5
    report = biasknn.run_eval(cfg, train, test, backend)
    assert report.mean >= 0.95
    assert len(report.per_run_accuracy) == 5

    again = biasknn.run_eval(cfg, train, test, backend)
    assert biasknn.report_json(report) == biasknn.report_json(again)

    cfg.method = biasknn.Method.zero_lm
    zero = biasknn.run_eval(cfg, train, test, backend)
    assert zero.mean == 0.5
    assert zero.std_dev == 0.0


def test_datastore_round_trip(fixture, tmp_path):
    task, train, _, backend = fixture
    features = biasknn.extract_features(
        task, train, backend, biasknn.FeatureKind.probability
    )
    store = biasknn.build_datastore(task, train, features, 3, 11)
    assert len(store) == 6

    path = str(tmp_path / "store.json")
    biasknn.save_datastore(store, path)
    loaded = biasknn.load_datastore(path)
    assert [e.example_id for e in loaded.entries] == [
        e.example_id for e in store.entries
    ]
    assert loaded.entries[0].feature.values == store.entries[0].feature.values

    prediction = biasknn.predict(
        loaded, store.entries[0].feature, 1, biasknn.DistanceMetric.cosine, task
    )
    assert prediction.label == store.entries[0].label


def test_synthetic_probabilities_match_formula():
    params = biasknn.SyntheticParams()
    params.num_labels = 2
    params.class_angles_deg = [10.0, 30.0]
    params.angle_noise_deg = 0.0
    params.radius_lo = 0.2
    params.radius_hi = 0.2 + 1e-9
    params.seed = 7
    probs = biasknn.synthetic_probabilities(params, 0, 0)
    assert probs[0] == pytest.approx(0.2 * math.cos(math.radians(10.0)), abs=1e-6)
    assert probs[1] == pytest.approx(0.2 * math.sin(math.radians(10.0)), abs=1e-6)


def test_errors_translate():
    with pytest.raises(biasknn.Error):
        biasknn.task_from_json_text("{}")
    with pytest.raises(biasknn.Error):
        biasknn.distance(biasknn.DistanceMetric.cosine, [0.0, 0.0], [1.0, 0.0])
