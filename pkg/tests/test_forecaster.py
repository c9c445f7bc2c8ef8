import datetime as dt

import numpy as np
import pytest

from seaicecast import forecaster
from seaicecast.forecaster import ModelSpec, TrainConfig, build_model, predict, train
from seaicecast.metrics import SsimParams
from seaicecast.series import TrainingPair

ISSUE = dt.date(2010, 1, 1)

SMALL_SPEC = ModelSpec(8, (6, 6, 6, 6, 52), (3, 3, 3, 3, 3))


def one_pair(h=16, w=16, k=8, seed=0, constant=None):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(k, h, w))
    if constant is not None:
        y = np.full((52, h, w), constant)
    else:
        y = rng.uniform(size=(52, h, w))
    return TrainingPair(x, y, ISSUE)


class TestModelSpec:
    def test_five_layers_required(self):
        with pytest.raises(ValueError, match="5"):
            ModelSpec(8, (6, 6, 6, 52), (3, 3, 3, 3))

    def test_final_width_pinned(self):
        with pytest.raises(ValueError, match="52"):
            ModelSpec(8, (6, 6, 6, 6, 50), (3,) * 5)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ModelSpec(8, (6, 6, 6, 6, 52), (4, 3, 3, 3, 3))


class TestBuild:
    def test_seed_determinism(self):
        a = build_model(SMALL_SPEC, seed=3)
        b = build_model(SMALL_SPEC, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
        c = build_model(SMALL_SPEC, seed=4)
        assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)

    def test_default_spec_shapes(self):
        spec = ModelSpec()  # k=104, widths (64,64,64,64,52), 5x5 kernels
        model = build_model(spec, seed=0)
        out = forecaster.predict_raw(model, np.zeros((104, 21, 17)))
        assert out.shape == (52, 21, 17)
        assert model.param_count() == sum(
            layer.weights.size + layer.bias.size for layer in model.layers
        )


class TestPredict:
    def test_output_shape_any_grid(self):
        model = build_model(SMALL_SPEC, seed=0)
        for h, w in ((16, 16), (9, 23), (30, 12)):
            bundle = predict(model, np.zeros((8, h, w)), ISSUE)
            assert bundle.values.shape == (52, h, w)

    def test_clipped_with_extreme_weights(self):
        model = build_model(SMALL_SPEC, seed=0)
        params = [p * 50.0 for p in model.parameters()]
        model.set_parameters(params)
        bundle = predict(model, np.random.default_rng(0).uniform(size=(8, 16, 16)), ISSUE)
        assert bundle.values.min() >= 0.0 and bundle.values.max() <= 1.0

    def test_constant_network(self):
        model = build_model(SMALL_SPEC, seed=0)
        params = [np.zeros_like(p) for p in model.parameters()]
        params[-1] = np.full_like(params[-1], 0.3)  # final bias
        model.set_parameters(params)
        bundle = predict(model, np.random.default_rng(1).uniform(size=(8, 16, 16)), ISSUE)
        assert np.allclose(bundle.values, 0.3)

    def test_channel_mismatch(self):
        model = build_model(SMALL_SPEC, seed=0)
        with pytest.raises(ValueError, match="channels"):
            forecaster.predict_raw(model, np.zeros((9, 16, 16)))


class TestTrain:
    def test_zero_epochs_unchanged(self):
        model = build_model(SMALL_SPEC, seed=0)
        before = [p.copy() for p in model.parameters()]
        trained, history = train(model, [one_pair()], TrainConfig(epochs=0))
        assert history == []
        for a, b in zip(trained.parameters(), before):
            assert np.array_equal(a, b)

    def test_history_length(self):
        model = build_model(SMALL_SPEC, seed=0)
        _, history = train(
            model, [one_pair()], TrainConfig(epochs=7, learning_rate=1e-3)
        )
        assert len(history) == 7

    def test_overfit_constant_target(self):
        model = build_model(SMALL_SPEC, seed=0)
        pair = one_pair(constant=0.5)
        cfg = TrainConfig(loss_kind="mae", epochs=150, learning_rate=0.01, seed=1)
        trained, history = train(model, [pair], cfg)
        pred = forecaster.predict_raw(trained, pair.input)
        assert np.abs(pred - 0.5).mean() < 0.05

    @pytest.mark.parametrize("loss_kind", ["mae", "ssim"])
    def test_loss_halves_on_one_pair(self, loss_kind):
        model = build_model(SMALL_SPEC, seed=0)
        cfg = TrainConfig(
            loss_kind=loss_kind,
            epochs=200,
            learning_rate=0.01,
            seed=2,
            ssim=SsimParams(window_size=7),
        )
        _, history = train(model, [one_pair(seed=5)], cfg)
        assert min(history) < 0.5 * history[0]

    def test_determinism(self):
        cfg = TrainConfig(epochs=5, learning_rate=1e-3, seed=11)
        runs = []
        for _ in range(2):
            model = build_model(SMALL_SPEC, seed=11)
            trained, _ = train(model, [one_pair()], cfg)
            runs.append([p.copy() for p in trained.parameters()])
        for a, b in zip(*runs):
            assert np.array_equal(a, b)

    def test_empty_pairs(self):
        with pytest.raises(ValueError, match="pairs"):
            train(build_model(SMALL_SPEC, seed=0), [], TrainConfig())

    def test_channel_mismatch(self):
        model = build_model(SMALL_SPEC, seed=0)
        bad = TrainingPair(np.zeros((9, 16, 16)), np.zeros((52, 16, 16)), ISSUE)
        with pytest.raises(ValueError, match="channels"):
            train(model, [bad], TrainConfig())


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = build_model(SMALL_SPEC, seed=0)
        path = forecaster.save_checkpoint(model, tmp_path / "m.json")
        loaded, kind = forecaster.load_checkpoint(path)
        assert kind == "cnn"
        assert loaded.spec == model.spec
        for a, b in zip(loaded.parameters(), model.parameters()):
            assert np.array_equal(a, b.astype(np.float32).astype(np.float64))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.json").write_text('{"magic": "nope"}')
        with pytest.raises(ValueError, match="checkpoint"):
            forecaster.load_checkpoint(tmp_path / "x.json")
