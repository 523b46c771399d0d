import numpy as np
import pytest

from dlsvm import models
from dlsvm.exceptions import ConfigError, FormatError, NumericError
from dlsvm.models import (CsvLogSink, ModelSpec, build, checkpoint_bytes, evaluate,
                          load_checkpoint, model_from_bytes, save_checkpoint, train)
from dlsvm.synthetic import gaussian_blobs


def tiny_mlp(**kw):
    base = dict(input_dim=8, mlp_units=(6,), n_classes=3, batch=16, epochs=3)
    base.update(kw)
    return build(ModelSpec.preset("mlp-svm", **base))


def tiny_data(n=96, dim=8, k=3, seed=0, scale=1.0):
    X, y = gaussian_blobs(n, k, dim, center_scale=scale, seed=seed)
    return X.astype(np.float32), y


class TestPresets:
    def test_published_hyperparameters(self):
        cnn, gru, mlp = (ModelSpec.preset(k) for k in models.KINDS)
        assert (cnn.batch, cnn.epochs, cnn.lr, cnn.C, cnn.keep_prob) == (256, 100, 1e-3, 10, 0.85)
        assert (gru.batch, gru.epochs, gru.lr, gru.C, gru.keep_prob) == (256, 100, 1e-3, 10, 0.85)
        assert (mlp.batch, mlp.epochs, mlp.lr, mlp.C, mlp.keep_prob) == (256, 100, 1e-3, 0.5, None)
        assert mlp.mlp_units == (512, 256, 128)
        assert gru.gru_units == 256 and gru.gru_layers == 5

    def test_override_and_none_ignored(self):
        spec = ModelSpec.preset("cnn-svm", epochs=3, C=None)
        assert spec.epochs == 3 and spec.C == 10

    @pytest.mark.parametrize("bad", [dict(kind="svm"), dict(C=0), dict(keep_prob=1.5),
                                     dict(reduction="max"), dict(batch=0)])
    def test_validation(self, bad):
        spec = ModelSpec(**{**ModelSpec.preset("mlp-svm").to_dict(), **bad})
        with pytest.raises(ConfigError):
            spec.validate()

    def test_spec_dict_round_trip(self):
        spec = ModelSpec.preset("gru-svm", gru_layers=2)
        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestShapes:
    def test_cnn_trace(self):
        model = build(ModelSpec.preset("cnn-svm"))
        shapes = {k: v.shape for k, v in model.parameters().items()}
        assert shapes["conv1.K"] == (5, 5, 1, 36) and shapes["conv1.b"] == (36,)
        assert shapes["conv2.K"] == (5, 5, 36, 72)
        assert shapes["fc.W"] == (8 * 8 * 72, 1024)
        assert shapes["head.W"] == (25, 1024)
        counts = {k: int(np.prod(s)) for k, s in shapes.items()}
        assert counts["conv1.K"] + counts["conv1.b"] == 5 * 5 * 1 * 36 + 36
        assert counts["conv2.K"] + counts["conv2.b"] == 5 * 5 * 36 * 72 + 72
        assert counts["fc.W"] + counts["fc.b"] == 4608 * 1024 + 1024
        x = np.zeros((2, 1024), dtype=np.float32)
        assert model.forward(x).shape == (2, 25)

    def test_pool_stride_one_variant(self):
        spec = ModelSpec.preset("cnn-svm", pool_stride=1, input_side=8, conv_filters=(2, 3),
                                dense_units=4)
        model = build(spec)
        assert model.parameters()["fc.W"].shape == (6 * 6 * 3, 4)

    def test_gru_trace(self):
        model = build(ModelSpec.preset("gru-svm"))
        shapes = {k: v.shape for k, v in model.parameters().items()}
        assert shapes["gru1.W_z"] == (256 + 32, 256)
        assert shapes["gru5.W"] == (512, 256)
        assert shapes["head.W"] == (25, 256)

    def test_mlp_trace(self):
        model = build(ModelSpec.preset("mlp-svm"))
        shapes = {k: v.shape for k, v in model.parameters().items()}
        assert [shapes[f"fc{i}.W"] for i in (1, 2, 3)] == [(1024, 512), (512, 256), (256, 128)]
        assert shapes["head.W"] == (25, 128)
        assert not model.dropout_layers()

    def test_zero_weights_zero_scores(self):
        model = build(ModelSpec.preset("mlp-svm"))
        for p in model.parameters().values():
            p[...] = 0
        assert not model.forward(np.zeros((3, 1024))).any()


class TestTraining:
    def test_lr_zero_leaves_params(self):
        model = tiny_mlp(lr=0.0)
        before = {k: v.copy() for k, v in model.parameters().items()}
        train(model, *tiny_data())
        for k, v in model.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_step_count_full_protocol(self):
        # 6400 training rows at batch 256 for 100 epochs
        X = np.random.default_rng(0).standard_normal((6400, 2)).astype(np.float32)
        y = np.arange(6400) % 3
        model = build(ModelSpec.preset("mlp-svm", input_dim=2, mlp_units=(2,), n_classes=3))
        records = train(model, X, y)
        assert len(records) == 2500 == model.step
        assert records[-1]["epoch"] == 100

    def test_partial_last_batch(self):
        model = tiny_mlp(batch=40, epochs=1)
        assert len(train(model, *tiny_data(100))) == 3

    def test_deterministic(self):
        a, b = tiny_mlp(keep_prob=0.8), tiny_mlp(keep_prob=0.8)
        la = [r["loss"] for r in train(a, *tiny_data())]
        lb = [r["loss"] for r in train(b, *tiny_data())]
        assert la == lb
        assert checkpoint_bytes(a) == checkpoint_bytes(b)

    def test_seed_changes_run(self):
        a, b = tiny_mlp(seed=0), tiny_mlp(seed=1)
        assert [r["loss"] for r in train(a, *tiny_data())] != \
            [r["loss"] for r in train(b, *tiny_data())]

    def test_loss_trend_decreases(self):
        X, y = tiny_data(512, scale=2.0)
        model = tiny_mlp(epochs=40, batch=16, lr=3e-3)
        losses = np.array([r["loss"] for r in train(model, X, y)])
        window = 100
        avg = np.convolve(losses, np.ones(window) / window, mode="valid")
        assert avg[-1] < avg[0]
        assert evaluate(model, X, y).accuracy > 0.9

    def test_zero_model_predicts_first_class(self):
        model = tiny_mlp()
        for p in model.parameters().values():
            p[...] = 0
        X, y = tiny_data(90)
        rep = evaluate(model, X, y)
        assert (model.predict(X) == 0).all()
        assert rep.accuracy == pytest.approx(np.mean(y == 0))

    def test_dropout_inactive_at_inference(self):
        model = tiny_mlp(keep_prob=0.5)
        X, _ = tiny_data()
        np.testing.assert_array_equal(model.decision_function(X), model.decision_function(X))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_raises_with_location(self):
        model = tiny_mlp()
        model.parameters()["fc1.W"][0, 0] = np.inf
        with pytest.raises(NumericError, match="step 1"):
            train(model, *tiny_data())

    def test_label_out_of_range(self):
        X, y = tiny_data()
        with pytest.raises(ConfigError):
            train(tiny_mlp(), X, y + 5)

    def test_log_sink(self):
        sink = CsvLogSink()
        train(tiny_mlp(epochs=1), *tiny_data(), sink=sink)
        lines = sink.to_csv().splitlines()
        assert lines[0] == "step,epoch,loss,batch_accuracy,wall_ms"
        assert len(lines) == 1 + 6
        assert all(line.endswith(",0") for line in lines[1:])


class TestCheckpoint:
    @pytest.mark.parametrize("kind", models.KINDS)
    def test_round_trip(self, kind, tmp_path):
        from dlsvm.gradcheck import mini_spec
        model = build(mini_spec(kind))
        X = np.random.default_rng(0).standard_normal((12, model.spec.input_side ** 2))
        y = np.arange(12) % 3
        train(model, X, y, epochs=1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.decision_function(X), model.decision_function(X))
        assert checkpoint_bytes(loaded) == path.read_bytes()
        assert loaded.step == model.step

    def test_resume_matches_uninterrupted(self):
        X, y = tiny_data()
        straight = tiny_mlp(keep_prob=0.7)
        train(straight, X, y, epochs=4)
        first = tiny_mlp(keep_prob=0.7)
        train(first, X, y, epochs=2)
        resumed = model_from_bytes(checkpoint_bytes(first))
        train(resumed, X, y, epochs=2)
        assert checkpoint_bytes(resumed) == checkpoint_bytes(straight)

    def test_truncated(self, tmp_path):
        blob = checkpoint_bytes(tiny_mlp())
        with pytest.raises(FormatError, match="offset"):
            model_from_bytes(blob[:-7])

    def test_wrong_magic(self):
        blob = checkpoint_bytes(tiny_mlp())
        with pytest.raises(FormatError):
            model_from_bytes(b"X" + blob[1:])
