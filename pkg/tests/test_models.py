import dataclasses

import numpy as np
import pytest

from smsfr.errors import CheckpointFormatError, ConfigError, IncompatibleVersionError, ShapeError, TrainingError
from smsfr.market_data import SynthConfig, make_samples, synth_universe
from smsfr.models import (
    Checkpoint,
    ModelConfig,
    MultiScaleNet,
    TrainConfig,
    build_model,
    conv_block,
    encode,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from smsfr.models import training as training_mod
from smsfr.models.verify import toy_batch, toy_config


@pytest.fixture(scope="module")
def toy_sets():
    cfg = toy_config("smsfr")
    universe = synth_universe(0, 3, 140, SynthConfig(planted="reversal"))
    samples = [s for bars in universe.values() for s in make_samples(bars, cfg.n)]
    samples.sort(key=lambda s: (s.end_date, s.symbol))
    data = encode(samples, cfg)
    cut = int(0.7 * len(data))
    return samples, data.take(range(cut)), data.take(range(cut, len(data)))


def small_train(max_epochs=2, seed=0):
    return TrainConfig(lr=1e-3, batch_size=16, max_epochs=max_epochs, seed=seed)


class TestConfigAndShapes:
    def test_block_dims(self):
        assert ModelConfig(n=60).block_dims == [128, 64, 64]
        assert ModelConfig(n=20).block_dims == [128, 128]
        assert ModelConfig(n=5).block_dims == [256]

    @pytest.mark.parametrize("n", [5, 20, 60, 125, 625])
    def test_block_dims_sum(self, n):
        assert sum(ModelConfig(n=n).block_dims) == 256

    def test_ts_shape_chain(self):
        block = conv_block((30, 12, 1), (128, 256), 128, (5, 3), (2, 1), 0.01, np.random.default_rng(0), np.float32)
        shapes, shape = [], (30, 12, 1)
        for name, layer in block.named_layers():
            shape = layer.out_shape(shape)
            if name in ("conv1", "pool1", "conv2", "pool2", "flatten"):
                shapes.append(shape)
        assert shapes == [(26, 10, 128), (13, 10, 128), (9, 8, 256), (4, 8, 256), (8192,)]

    def test_image_shapes(self):
        assert ModelConfig(n=60).image_shapes == [(64, 24, 1), (64, 15, 1), (64, 15, 1)]

    def test_small_block_input(self):
        rng = np.random.default_rng(0)
        block = conv_block((16, 15, 1), (2, 3), 7, (5, 3), (2, 1), 0.01, rng, np.float64)
        out = block.forward(np.zeros((1, 16, 15, 1)))
        assert out.shape == (1, 7)
        # two 5x3 convs with 2x1 pools cannot fit in 12 rows
        with pytest.raises(ShapeError):
            conv_block((12, 15, 1), (2, 3), 7, (5, 3), (2, 1), 0.01, rng, np.float64)

    def test_zero_input_bias_path(self):
        rng = np.random.default_rng(1)
        block = conv_block((16, 15, 1), (2, 3), 4, (5, 3), (2, 1), 0.01, rng, np.float64)
        for _, layer in block.named_layers():
            if "b" in layer.params:
                layer.params["b"][...] = rng.standard_normal(layer.params["b"].shape)
        zero = np.zeros((1, 16, 15, 1))
        before = block.forward(zero)
        block.layers[0][1].params["w"][...] = 0.0
        np.testing.assert_array_equal(block.forward(zero), before)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            ModelConfig(kind="cnn")
        with pytest.raises(ConfigError):
            ModelConfig(lam=-1)
        with pytest.raises(ConfigError):
            ModelConfig(n=7)


class TestForward:
    @pytest.mark.parametrize("kind", ["msr", "smsfr"])
    def test_probabilities(self, kind):
        cfg = toy_config(kind)
        net = MultiScaleNet(cfg)
        images, seq, _, _ = toy_batch(cfg, batch=5)
        p, r = net.predict_proba(images, seq if kind == "smsfr" else None)
        assert p.shape == (5, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((p > 0) & (p < 1))
        assert (r is None) == (kind == "msr")
        if r is not None:
            assert r.shape == (5,)

    def test_block_permutation_identity(self):
        cfg = toy_config("msr")
        net = MultiScaleNet(cfg)
        images, _, _, _ = toy_batch(cfg, batch=4)
        logits, _ = net.forward(images)
        feats = [b.forward(im) for b, im in zip(net.blocks, images)]
        w, b = net.hidden.params["w"], net.hidden.params["b"]
        d1 = feats[0].shape[1]
        swapped = np.concatenate([feats[1], feats[0]], axis=1)
        w_swapped = np.concatenate([w[d1:], w[:d1]], axis=0)
        h = np.where(swapped @ w_swapped + b > 0, swapped @ w_swapped + b, 0.01 * (swapped @ w_swapped + b))
        again = h @ net.cls_head.params["w"] + net.cls_head.params["b"]
        np.testing.assert_allclose(again, logits, rtol=0, atol=1e-12)

    def test_wrong_number_of_images(self):
        cfg = toy_config("msr")
        images, _, _, _ = toy_batch(cfg)
        with pytest.raises(ConfigError):
            MultiScaleNet(cfg).forward(images[:1])

    def test_wrong_image_shape(self):
        cfg = toy_config("msr")
        images, _, _, _ = toy_batch(cfg)
        with pytest.raises(ShapeError):
            MultiScaleNet(cfg).forward([images[0], images[0]])

    def test_smsfr_needs_sequence(self):
        cfg = toy_config("smsfr")
        images, _, _, _ = toy_batch(cfg)
        with pytest.raises(ConfigError):
            MultiScaleNet(cfg).forward(images)


class TestGradientCoupling:
    def test_mse_head_reaches_msf_blocks(self):
        cfg = toy_config("smsfr")
        net = MultiScaleNet(cfg)
        images, seq, _, r = toy_batch(cfg, batch=4)
        _, r_hat = net.forward(images, seq)
        net.zero_grad()
        net.backward(np.zeros((4, 2)), 2 * (r_hat - r) / 4)
        grads = net.gradients()
        for k in range(1, cfg.C + 1):
            assert np.abs(grads[f"msf{k}.conv1.w"]).sum() > 0
            assert np.abs(grads[f"msf{k}.proj.w"]).sum() > 0
        assert not np.any(grads["cls.w"])

    def test_lambda_zero_equals_classification_only(self):
        cfg = toy_config("smsfr")
        net = MultiScaleNet(cfg)
        images, seq, y, r = toy_batch(cfg, batch=4)
        net.zero_grad()
        net.loss(images, seq, y, r, lam=0.0)
        with_zero = {k: g.copy() for k, g in net.gradients().items()}
        net.zero_grad()
        logits, _ = net.forward(images, seq)
        from smsfr.nn import softmax_ce

        net.backward(softmax_ce(logits, y)[2], None)
        for k, g in net.gradients().items():
            if not k.startswith("reg."):
                np.testing.assert_array_equal(with_zero[k], g)


class TestTraining:
    def test_zero_epochs_is_initialization(self, toy_sets):
        _, tr, va = toy_sets
        cfg = toy_config("smsfr")
        ckpt = train(cfg, train_config=small_train(0), train_set=tr, val_set=va)
        init = MultiScaleNet(cfg).parameters()
        assert all(np.array_equal(init[k], ckpt.params[k]) for k in init)
        assert len(ckpt.history) == 1 and ckpt.history[0]["epoch"] == 0
        assert ckpt.history[0]["val_loss"] > 0 and ckpt.best_epoch == 0

    def test_deterministic(self, toy_sets):
        _, tr, va = toy_sets
        cfg = toy_config("smsfr")
        a = train(cfg, train_config=small_train(2), train_set=tr, val_set=va)
        b = train(cfg, train_config=small_train(2), train_set=tr, val_set=va)
        assert a.to_bytes() == b.to_bytes()
        c = train(cfg, train_config=small_train(2, seed=1), train_set=tr, val_set=va)
        assert c.to_bytes() != a.to_bytes()

    def test_history_fields(self, toy_sets):
        _, tr, va = toy_sets
        ckpt = train(toy_config("msr"), train_config=small_train(2), train_set=tr, val_set=va)
        assert [h["epoch"] for h in ckpt.history] == [0, 1, 2]
        assert {"train_loss", "val_loss", "val_ppv", "val_npv", "val_accuracy"} <= set(ckpt.history[1])
        assert ckpt.history[1]["val_mse"] is None

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss(self, toy_sets):
        _, tr, va = toy_sets
        bad = dataclasses.replace(tr, r=np.full(len(tr), np.inf))
        with pytest.raises(TrainingError) as exc:
            train(toy_config("smsfr"), train_config=small_train(1), train_set=bad, val_set=va)
        assert exc.value.epoch == 1 and exc.value.batch == 1

    def test_empty_sets(self, toy_sets):
        _, tr, va = toy_sets
        with pytest.raises(ConfigError):
            train(toy_config("msr"), train_config=small_train(1), train_set=tr.take([]), val_set=va)

    @pytest.mark.parametrize(
        "losses, epochs_run, best",
        [
            ([9, 8, 7, 6, 5, 4, 3, 2, 1, 0.5], 10, 10),  # never stops
            ([9, 8, 7, 6, 5, 6, 7, 8, 9, 9], 8, 5),  # best at 5, patience 3
            ([1, 1, 1, 1, 2, 1.5, 3, 3, 3, 3], 9, 6),  # early epochs ignored
            ([5, 4], 2, 2),  # ends before epoch 5: last epoch
        ],
    )
    def test_early_stopping(self, toy_sets, monkeypatch, losses, epochs_run, best):
        _, tr, va = toy_sets
        script = iter([10.0] + losses)
        monkeypatch.setattr(training_mod, "evaluate",
                            lambda net, data: {"loss": next(script), "accuracy": 0.5})
        ckpt = train(toy_config("msr"), train_config=small_train(len(losses)), train_set=tr.take(range(8)),
                     val_set=va)
        assert ckpt.history[-1]["epoch"] == epochs_run
        assert ckpt.best_epoch == best


@pytest.fixture(scope="module")
def ckpt(toy_sets):
    _, tr, va = toy_sets
    return train(toy_config("smsfr"), train_config=small_train(1), train_set=tr, val_set=va)


class TestPredictAndCheckpoint:
    def test_predict_twice(self, ckpt, toy_sets):
        samples = toy_sets[0][:10]
        a, b = predict(ckpt, samples), predict(ckpt, samples)
        assert a == b
        assert all(p.r_hat is not None and p.label == int(p.p_up > 0.5) for p in a)

    def test_predict_does_not_mutate(self, ckpt, toy_sets):
        before = {k: v.copy() for k, v in ckpt.params.items()}
        predict(ckpt, toy_sets[0][:5])
        assert all(np.array_equal(before[k], ckpt.params[k]) for k in before)

    def test_predict_empty(self, ckpt):
        assert predict(ckpt, []) == []

    def test_predict_wrong_window(self, ckpt):
        universe = synth_universe(0, 1, 140)
        s = make_samples(universe["S000"], 5)[:2]
        with pytest.raises(ShapeError):
            predict(ckpt, s)

    def test_roundtrip(self, ckpt, tmp_path, toy_sets):
        path = tmp_path / "m.ckpt"
        save_checkpoint(ckpt, path)
        again = load_checkpoint(path)
        assert again.to_bytes() == ckpt.to_bytes()
        data = toy_sets[1].take(range(6))
        a = build_model(ckpt).predict_proba(data.images, data.seq)
        b = build_model(again).predict_proba(data.images, data.seq)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    def test_truncated(self, ckpt, tmp_path):
        data = ckpt.to_bytes()
        for cut in (4, 20, len(data) - 3):
            with pytest.raises(CheckpointFormatError):
                Checkpoint.from_bytes(data[:cut])

    def test_cross_config(self, ckpt):
        with pytest.raises(ConfigError):
            Checkpoint.from_bytes(ckpt.to_bytes(), expected=toy_config("msr"))

    def test_version_mismatch(self, ckpt):
        bad = Checkpoint.from_bytes(ckpt.to_bytes())
        head = bad.header()
        head["format_version"] = 99
        import json
        import struct

        from smsfr.models.checkpoint import MAGIC

        blob = ckpt.to_bytes()
        (hlen,) = struct.unpack("<Q", blob[8:16])
        new_head = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
        forged = MAGIC + struct.pack("<Q", len(new_head)) + new_head + blob[16 + hlen :]
        with pytest.raises(IncompatibleVersionError):
            Checkpoint.from_bytes(forged)
