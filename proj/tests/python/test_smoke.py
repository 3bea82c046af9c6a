import numpy as np
import pytest

import hsml


def tiny_episode():
    return hsml.Episode(
        x_labeled=np.array([[0.5]]),
        y_labeled=np.array([[1.0, 0.0]]),
        x_unlabeled=np.array([[0.7]]),
    )


def random_episode(rng, n_per_class=2, unlabeled=5, attrs=3, classes=2):
    xl = rng.uniform(size=(n_per_class * classes, attrs))
    yl = np.eye(classes)[np.repeat(np.arange(classes), n_per_class)]
    xu = rng.uniform(size=(unlabeled, attrs))
    yu = np.eye(classes)[rng.integers(0, classes, size=unlabeled)]
    return hsml.Episode(xl, yl, xu, yu)


def test_input_tensor_slices():
    z = hsml.build_input_tensor(tiny_episode())
    assert z.shape == (2, 3, 4)
    np.testing.assert_array_equal(z[:, :, 0].ravel(), [0.5, 1, 0, 0.7, 0, 0])
    np.testing.assert_array_equal(z[:, :, 1].ravel(), [1, 1, 1, 1, 0, 0])
    np.testing.assert_array_equal(z[:, :, 2].ravel(), [1, 0, 0, 1, 0, 0])
    np.testing.assert_array_equal(z[:, :, 3].ravel(), [0, 1, 1, 0, 1, 1])


def test_bad_episode_raises():
    with pytest.raises(hsml.InvalidEpisode):
        hsml.Episode(np.ones((2, 3)), np.eye(2), np.ones((1, 4)))
    with pytest.raises(hsml.InvalidValue):
        hsml.Episode(np.array([[np.nan]]), np.array([[1.0]]), np.array([[0.0]]))


def test_embeddings_and_posteriors():
    rng = np.random.default_rng(0)
    ep = random_episode(rng)
    model = hsml.Model(seed=1, blocks=2, heads=2, hidden=8, key_dim=8, value_dim=8, ff_hidden=8)
    lab, unl = model.embed(ep)
    assert lab.shape == (4, 3) and unl.shape == (5, 3)
    p = model.predict(ep)
    assert p.shape == (5, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.isfinite(model.loss(ep))


def test_unlabeled_permutation_equivariance():
    rng = np.random.default_rng(3)
    ep = random_episode(rng)
    perm = np.array([4, 2, 0, 3, 1])
    swapped = hsml.Episode(ep.x_labeled, ep.y_labeled, ep.x_unlabeled[perm], ep.y_unlabeled[perm])
    model = hsml.Model(seed=2)
    np.testing.assert_allclose(model.predict(swapped), model.predict(ep)[perm], atol=1e-5)


def test_unknown_model_key():
    with pytest.raises(hsml.InvalidConfig):
        hsml.Model(seed=0, widht=3)


def test_corpus_split_and_sampling():
    corpus = hsml.generate_corpus("circle-spiral", seed=7, tasks=20, split_seed=7)
    sizes = (len(corpus.train), len(corpus.validation), len(corpus.test))
    assert sum(sizes) == 20 and sizes == (14, 2, 4)
    again = hsml.generate_corpus("circle-spiral", seed=7, tasks=20, split_seed=7)
    np.testing.assert_array_equal(corpus.train[0].x, again.train[0].x)
    ep = corpus.train[0].sample_episode(shots=3, unlabeled=5, seed=1)
    classes = corpus.train[0].y.shape[1]
    assert ep.n_labeled == 3 * classes
    np.testing.assert_array_equal(ep.y_labeled.sum(axis=0), np.full(classes, 3.0))


def test_train_save_load(tmp_path):
    corpus = hsml.generate_corpus("circle-spiral", seed=3, tasks=10, split_seed=3)
    overrides = {
        "model.blocks": 2,
        "model.heads": 2,
        "model.hidden": 8,
        "model.key_dim": 8,
        "model.value_dim": 8,
        "model.ff_hidden": 8,
        "train.max_epochs": 2,
        "train.validation_interval": 1,
        "train.validation_trials": 1,
        "train.learning_rate": 1e-3,
        "train.seed": 5,
    }
    model, report = hsml.train(corpus, overrides)
    assert "summary" in report
    _, report2 = hsml.train(corpus, overrides)
    strip = lambda r: [l for l in r.splitlines() if "wall_clock" not in l]
    assert strip(report) == strip(report2)

    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = hsml.Model.load(path)
    assert loaded.config == model.config
    a = model.evaluate(corpus.test, shots=1, trials=2, seed=4)
    b = loaded.evaluate(corpus.test, shots=1, trials=2, seed=4)
    assert a["metric"] == "accuracy" and a["mean"] == b["mean"]

    with pytest.raises(hsml.InvalidConfig):
        hsml.train(corpus, {"train.nonsense": 1})


def test_regression_predict():
    corpus = hsml.generate_corpus("regression", seed=2, tasks=5, split_seed=2)
    ds = corpus.train[0]
    assert ds.kind == "regression"
    rng = np.random.default_rng(0)
    idx = rng.permutation(ds.x.shape[0])
    ep = hsml.Episode(ds.x[idx[:10]], ds.y[idx[:10]], ds.x[idx[10:15]], ds.y[idx[10:15]], kind="regression")
    mean = hsml.Model(seed=0).predict(ep)
    assert mean.shape == (5, ds.y.shape[1]) and np.all(np.isfinite(mean))


def test_selftest_passes():
    results = hsml.selftest(trials=4)
    assert len(results) >= 15
    assert all(r["passed"] for r in results), [r for r in results if not r["passed"]]
