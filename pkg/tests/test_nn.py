import numpy as np
import pytest

from LookupMul.amm.table import AmmOperator, FitConfig
from LookupMul.exceptions import InvalidArgument, LayerStateError, ShapeMismatch
from LookupMul.nn.model import DenseLayer, MlpModel, evaluate, forward, layer_inputs, predict
from LookupMul.nn.replace import incremental_replace_all, replace_layer
from LookupMul.nn.training import TrainConfig, finetune_suffix, train
from LookupMul.utils.datasets import LabeledDataset


def _blobs(rng, n=200, dim=2, classes=2, spread=0.3):
    centers = 4.0 * np.eye(classes, dim)
    labels = np.arange(n) % classes
    features = centers[labels] + spread * rng.normal(size=(n, dim))
    return LabeledDataset(features.astype(np.float32), labels, classes)


class TestModel:
    def test_forward_matches_composition(self, rng):
        model = MlpModel.initialize([5, 4, 3], seed=2)
        x = rng.normal(size=(7, 5))
        l0, l1 = model.layers
        h = np.maximum(x @ l0.weights + l0.bias, 0.0)
        z = h @ l1.weights + l1.bias
        expected = np.exp(z - z.max(axis=1, keepdims=True))
        expected /= expected.sum(axis=1, keepdims=True)
        out, inputs = forward(model, x)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(inputs[1], h)
        np.testing.assert_allclose(layer_inputs(model, x, 1), h)

    def test_initialize_is_seeded(self):
        a = MlpModel.initialize([6, 4, 2], seed=3)
        b = MlpModel.initialize([6, 4, 2], seed=3)
        np.testing.assert_array_equal(a.layers[0].weights, b.layers[0].weights)
        assert a.arch == [6, 4, 2]
        assert [layer.activation for layer in a.layers] == ["relu", "softmax"]

    def test_rejects_bad_chain(self):
        with pytest.raises(ShapeMismatch):
            MlpModel([DenseLayer(np.zeros((3, 4)), np.zeros(4)), DenseLayer(np.zeros((5, 2)), np.zeros(2))])

    def test_softmax_only_on_top(self):
        with pytest.raises(InvalidArgument):
            MlpModel([DenseLayer(np.zeros((3, 4)), np.zeros(4), "softmax"),
                      DenseLayer(np.zeros((4, 2)), np.zeros(2), "softmax")])

    def test_wrong_input_width(self, rng):
        with pytest.raises(ShapeMismatch):
            forward(MlpModel.initialize([4, 2]), rng.normal(size=(3, 5)))

    def test_predict_blocks(self, rng):
        model = MlpModel.initialize([4, 6, 3], seed=0)
        x = rng.normal(size=(25, 4))
        np.testing.assert_array_equal(predict(model, x, block=4), predict(model, x))


class TestTraining:
    def test_zero_learning_rate_changes_nothing(self, rng):
        data = _blobs(rng)
        model = MlpModel.initialize([2, 8, 2], seed=1)
        trained = train(model, data, TrainConfig(epochs=2, learn_rate=0.0))
        for before, after in zip(model.layers, trained.layers):
            np.testing.assert_array_equal(before.weights, after.weights)

    def test_separable_toy_set(self, rng):
        data = _blobs(rng, spread=0.2)
        trained = train(MlpModel.initialize([2, 2], seed=0), data, TrainConfig(epochs=50, seed=0))
        assert evaluate(trained, data) == 1.0
        history = trained.metadata["loss_history"]
        assert min(history) < history[0]

    def test_does_not_mutate_input(self, rng):
        data = _blobs(rng)
        model = MlpModel.initialize([2, 4, 2], seed=1)
        before = model.layers[0].weights.copy()
        train(model, data, TrainConfig(epochs=1))
        np.testing.assert_array_equal(model.layers[0].weights, before)

    def test_finetune_last_layer_is_noop(self, rng):
        model = MlpModel.initialize([2, 4, 2], seed=1)
        assert finetune_suffix(model, 1, _blobs(rng)) is model

    def test_finetune_freezes_prefix(self, rng):
        data = _blobs(rng, dim=3, classes=3)
        model = MlpModel.initialize([3, 5, 4, 3], seed=4)
        tuned = finetune_suffix(model, 0, data, TrainConfig(epochs=2, learn_rate=0.05))
        np.testing.assert_array_equal(tuned.layers[0].weights, model.layers[0].weights)
        assert not np.array_equal(tuned.layers[2].weights, model.layers[2].weights)

    def test_invalid_config(self, rng):
        with pytest.raises(InvalidArgument):
            train(MlpModel.initialize([2, 2]), _blobs(rng), TrainConfig(batch_size=0))


def _pq_exact_data(rng, n=160):
    """Rows drawn from 16 patterns so every chunk has at most 16 distinct subvectors."""
    base = rng.uniform(0.0, 1.0, size=(16, 4))
    labels = np.arange(n) % 2
    return LabeledDataset(base[np.arange(n) % 16].astype(np.float32), labels, 2)


class TestReplace:
    def test_pq_exact_replacement_keeps_outputs(self, rng):
        data = _pq_exact_data(rng)
        model = MlpModel.initialize([4, 6, 2], seed=5)
        cfg = FitConfig(method="prototype", encoder="pq")
        replaced = replace_layer(model, 0, data, 2, "naive", cfg, rng=0)
        assert replaced.replaced() == [True, False]
        assert isinstance(replaced.layers[0], AmmOperator)
        np.testing.assert_allclose(forward(replaced, data.features)[0],
                                   forward(model, data.features)[0], atol=1e-5)
        assert replaced.metadata["replacements"][0]["codebooks"] == 2
        assert model.replaced() == [False, False]

    def test_cannot_replace_twice(self, rng):
        data = _pq_exact_data(rng)
        model = replace_layer(MlpModel.initialize([4, 3, 2]), 1, data, 1, "naive", FitConfig(opt_steps=5))
        with pytest.raises(LayerStateError):
            replace_layer(model, 1, data, 1, "naive")

    def test_layer_index_checked(self, rng):
        with pytest.raises(InvalidArgument):
            replace_layer(MlpModel.initialize([4, 2]), 3, _pq_exact_data(rng), 1, "naive")

    def test_cannot_train_replaced_suffix(self, rng):
        data = _pq_exact_data(rng)
        model = replace_layer(MlpModel.initialize([4, 3, 2]), 1, data, 1, "naive", FitConfig(opt_steps=5))
        with pytest.raises(LayerStateError):
            finetune_suffix(model, 0, data)

    def test_incremental_replace_all(self, rng):
        data = _blobs(rng, n=120, dim=8, classes=3)
        model = train(MlpModel.initialize([8, 6, 3], seed=0), data, TrainConfig(epochs=3))
        fit_cfg = FitConfig(objective="kld", opt_steps=20)
        final, accuracies = incremental_replace_all(model, data, 4, "r2", fit_cfg,
                                                    TrainConfig(epochs=1, learn_rate=0.01), rng=3)
        assert final.replaced() == [True, True]
        assert len(accuracies) == 2
        assert all(0.0 <= acc <= 1.0 for acc in accuracies)
        assert [r["layer"] for r in final.metadata["replacements"]] == [0, 1]

    def test_incremental_clips_codebooks(self, rng):
        data = _blobs(rng, n=64, dim=4, classes=2)
        model = MlpModel.initialize([4, 3, 2], seed=0)
        final, _ = incremental_replace_all(model, data, 16, "naive", FitConfig(opt_steps=2),
                                           finetune=False)
        assert [layer.num_codebooks for layer in final.layers] == [4, 3]

    def test_incremental_fits_on_replaced_prefix(self, rng, monkeypatch):
        import LookupMul.nn.replace as replace_mod
        seen = []
        real_fit = replace_mod.fit_operator

        def recording_fit(a, *args, **kwargs):
            seen.append(np.array(a))
            return real_fit(a, *args, **kwargs)

        monkeypatch.setattr(replace_mod, "fit_operator", recording_fit)
        data = _blobs(rng, n=96, dim=8, classes=3)
        model = MlpModel.initialize([8, 6, 3], seed=2)
        final, _ = incremental_replace_all(model, data, 2, "naive", FitConfig(opt_steps=2),
                                           finetune=False)
        assert len(seen) == 2
        np.testing.assert_allclose(seen[1], layer_inputs(final, data.features, 1))
        assert not np.allclose(seen[1], layer_inputs(model, data.features, 1))

    def test_finetune_leaves_tables_untouched(self, rng):
        data = _blobs(rng, dim=3, classes=3)
        model = MlpModel.initialize([3, 5, 4, 3], seed=4)
        replaced = replace_layer(model, 0, data, 1, "naive", FitConfig(opt_steps=5))
        tuned = finetune_suffix(replaced, 0, data, TrainConfig(epochs=2, learn_rate=0.05))
        assert tuned.layers[0].table.t.tobytes() == replaced.layers[0].table.t.tobytes()
        assert tuned.layers[0].bias.tobytes() == replaced.layers[0].bias.tobytes()
