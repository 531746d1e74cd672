#!/usr/bin/env python3

import json
import shutil
import tempfile
import unittest
from types import SimpleNamespace
from pathlib import Path

import numpy as np
import pandas as pd

from dataset import LABELS, ArrayDataset
from errors import CheckpointError, ClassWeightError, ConfigError, RocUndefinedError
from generate_sample_data import imbalanced_dataset, separable_dataset
from models import ConvBlock, ModelConfig, build_model, preset_config
from metrics import classification_report
from tensor import Tensor, parameter
from trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    train_class_weights,
    write_history_csv,
)


def tiny_config(seed=0, shape=(1, 8, 8)):
    return ModelConfig(input_shape=shape, conv_blocks=[ConvBlock(4)], dense_widths=[], seed=seed)


def train_accuracy(model, dataset):
    probs = predict(model, dataset)
    return float(np.mean(probs.argmax(axis=1) == dataset.binary_targets().argmax(axis=1)))


class ScoreModel:
    """Binary stand-in model whose Disease Present probability is a function of pixel (0, 0)"""

    def __init__(self, score):
        self.config = SimpleNamespace(task="binary")
        self.score = score

    def forward(self, x, training=False):
        diseased = self.score(x.data[:, 0, 0, 0])
        return Tensor(np.stack([1.0 - diseased, diseased], axis=1))


def marked_dataset(n=20, seed=0):
    """Diseased samples carry 1 in pixel (0, 0), clean ones 0"""
    rng = np.random.default_rng(seed)
    labels = np.zeros((n, len(LABELS)))
    diseased = np.arange(n) % 3 == 0
    labels[diseased, rng.integers(0, len(LABELS), size=diseased.sum())] = 1.0
    images = rng.random((n, 1, 4, 4))
    images[:, 0, 0, 0] = diseased
    return ArrayDataset(images, labels)


class TestAdam(unittest.TestCase):

    def test_zero_gradient_leaves_parameters(self):
        p = parameter([1.0, -2.0])
        state = AdamState.for_params([p])
        adam_step([p], [np.zeros(2)], state, TrainConfig())
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        self.assertEqual(state.t, 1)

    def test_first_step_size_is_learning_rate(self):
        """Bias correction makes the first step lr * |g| / (|g| + eps) for any scale"""
        config = TrainConfig(learning_rate=0.01)
        for g in (1e-3, 1.0, 250.0):
            p = parameter([0.0])
            adam_step([p], [np.array([g])], AdamState.for_params([p]), config)
            self.assertAlmostEqual(abs(p.data[0]), 0.01 * g / (g + 1e-8), places=12)
            self.assertLess(p.data[0], 0.0)

    def test_mismatch_rejected(self):
        p = parameter(np.zeros((2, 2)))
        with self.assertRaises(ValueError):
            adam_step([p], [np.zeros(3)], AdamState.for_params([p]), TrainConfig())

    def test_config_validation(self):
        for bad in (dict(learning_rate=0.0), dict(beta1=1.0), dict(batch_size=0),
                    dict(epochs=-1), dict(loss_kind="focal"), dict(threshold=1.0)):
            with self.assertRaises(ConfigError):
                TrainConfig(**bad)
        self.assertEqual(TrainConfig.from_dict(TrainConfig(seed=4).to_dict()), TrainConfig(seed=4))


class TestTraining(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_learnability_smoke(self):
        """Default binary CNN fits the 32-sample separable set"""
        data = separable_dataset(32, size=16, seed=0)
        model = build_model(ModelConfig(input_shape=(1, 16, 16), seed=0))
        state = AdamState.for_params(model.parameters())
        config = TrainConfig(epochs=30, batch_size=8, seed=0)
        _, history = train(model, data, None, config, state=state)

        losses = history.to_frame()["train_loss"].to_numpy()
        windows = losses.reshape(3, 10).mean(axis=1)
        self.assertTrue(np.all(np.diff(windows) <= 1e-3), windows)

        while train_accuracy(model, data) < 0.95 and state.epoch < 500:
            train(model, data, None, TrainConfig(epochs=10, batch_size=8, seed=0), state=state)
        self.assertGreaterEqual(train_accuracy(model, data), 0.95)

    def test_history_determinism(self):
        data = separable_dataset(12, size=8, seed=1)
        val = separable_dataset(6, size=8, seed=2)
        config = TrainConfig(epochs=3, batch_size=5, seed=9, learning_rate=0.01)
        runs = []
        for _ in range(2):
            model = build_model(tiny_config(seed=3))
            _, history = train(model, data, val, config)
            runs.append((history, model.state_arrays()))
        self.assertEqual(runs[0][0], runs[1][0])
        self.assertEqual(len(runs[0][0]), 3)
        for name, array in runs[0][1].items():
            self.assertEqual(array.tobytes(), runs[1][1][name].tobytes())

        path = write_history_csv(runs[0][0], self.temp_dir / "history.csv")
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["epoch", "train_loss", "val_loss", "val_accuracy", "val_auc"])
        self.assertEqual(list(frame["epoch"]), [1, 2, 3])

    def test_resume_matches_uninterrupted(self):
        """3 epochs + save/load + 2 epochs equals 5 epochs bit for bit"""
        data = separable_dataset(10, size=8, seed=4)
        config = dict(batch_size=4, seed=2, learning_rate=0.01)

        straight = build_model(preset_config("resnet-tiny", "binary", (1, 8, 8), seed=1))
        train(straight, data, None, TrainConfig(epochs=5, **config))

        model = build_model(preset_config("resnet-tiny", "binary", (1, 8, 8), seed=1))
        state = AdamState.for_params(model.parameters())
        train(model, data, None, TrainConfig(epochs=3, **config), state=state)
        save_checkpoint(model, state, TrainConfig(epochs=3, **config), self.temp_dir / "ckpt")
        resumed, state, _ = load_checkpoint(self.temp_dir / "ckpt")
        self.assertEqual(state.epoch, 3)
        _, history = train(resumed, data, None, TrainConfig(epochs=2, **config), state=state)
        self.assertEqual([r.epoch for r in history.epochs], [4, 5])

        expected = straight.state_arrays()
        for name, array in resumed.state_arrays().items():
            self.assertEqual(array.tobytes(), expected[name].tobytes(), name)

    def test_weighting_helps_minority_recall(self):
        """Inverse-frequency weights raise recall of a 5% minority class"""
        at_least, strictly = 0, 0
        for seed in range(5):
            data = imbalanced_dataset(500, 0.05, seed=seed)
            held_out = imbalanced_dataset(500, 0.05, seed=100 + seed)
            recalls = []
            for weighted in (False, True):
                model = build_model(tiny_config(seed=seed))
                config = TrainConfig(epochs=2, batch_size=50, learning_rate=0.01, seed=seed,
                                     use_class_weights=weighted)
                train(model, data, None, config)
                recalls.append(evaluate(model, held_out, config).labels[0].recall)
            at_least += recalls[1] >= recalls[0]
            strictly += recalls[1] > recalls[0]
        self.assertGreaterEqual(at_least, 4)
        self.assertGreaterEqual(strictly, 3)

    def test_zero_positive_class_with_weights(self):
        data = separable_dataset(8, size=8)
        negatives = data.subset(np.flatnonzero(data.binary_targets()[:, 1] == 0))
        with self.assertRaises(ClassWeightError) as ctx:
            train(build_model(tiny_config()), negatives, None, TrainConfig(epochs=1, use_class_weights=True))
        self.assertEqual(ctx.exception.class_name, "Disease Present")

    def test_loss_must_fit_task(self):
        with self.assertRaises(ConfigError):
            train(build_model(tiny_config()), separable_dataset(4, size=8), None,
                  TrainConfig(epochs=1, loss_kind="weighted-bce"))

    def test_single_class_validation_and_evaluation(self):
        """Validation AUC is NaN for a single-class split; evaluate raises"""
        data = separable_dataset(8, size=8)
        negatives = data.subset(np.flatnonzero(data.binary_targets()[:, 1] == 0))
        model = build_model(tiny_config())
        _, history = train(model, data, negatives, TrainConfig(epochs=1))
        self.assertTrue(np.isnan(history.epochs[0].val_auc))
        with self.assertRaises(RocUndefinedError):
            evaluate(model, negatives, TrainConfig())

    def test_validation_split_does_not_shape_training(self):
        """Weights come from the training split: swapping the validation split changes only val columns"""
        data = separable_dataset(12, size=8, seed=1)
        balanced = separable_dataset(6, size=8, seed=2)
        skewed = balanced.subset([0, 1, 2, 4])
        config = TrainConfig(epochs=3, batch_size=5, seed=9, learning_rate=0.01, use_class_weights=True)
        runs = []
        for val in (balanced, skewed, None):
            model = build_model(tiny_config(seed=3))
            _, history = train(model, data, val, config)
            runs.append((history.to_frame()["train_loss"].tolist(), model.state_arrays()))
        for losses, arrays in runs[1:]:
            self.assertEqual(losses, runs[0][0])
            for name, array in arrays.items():
                self.assertEqual(array.tobytes(), runs[0][1][name].tobytes(), name)

        pooled = ArrayDataset(np.concatenate([data.images, skewed.images]),
                              np.concatenate([data.labels, skewed.labels]))
        self.assertFalse(np.allclose(train_class_weights("binary", data, True).weights,
                                     train_class_weights("binary", pooled, True).weights))

    def test_evaluate_perfect_scorer(self):
        data = marked_dataset()
        report = evaluate(ScoreModel(lambda mark: 0.05 + 0.9 * mark), data, TrainConfig())
        self.assertEqual(report.mean_auc, 1.0)
        self.assertEqual(report.accuracy, 1.0)
        only = report.labels[0]
        self.assertEqual((only.name, only.precision, only.recall, only.f1), ("Disease Present", 1.0, 1.0, 1.0))

    def test_evaluate_constant_scorer(self):
        report = evaluate(ScoreModel(lambda mark: np.full_like(mark, 0.3)), marked_dataset(), TrainConfig())
        self.assertEqual(report.mean_auc, 0.5)
        self.assertEqual(report.labels[0].counts.tp + report.labels[0].counts.fp, 0)

    def test_evaluate_equals_direct_report(self):
        data = separable_dataset(10, size=8, seed=5)
        model = build_model(tiny_config(seed=2))
        config = TrainConfig(threshold=0.4)
        probs = predict(model, data)
        truth = data.binary_targets()
        direct = classification_report(probs[:, 1:2], truth[:, 1:2], 0.4, ["Disease Present"])
        self.assertEqual(evaluate(model, data, config), direct)

    def test_multilabel_evaluation(self):
        rng = np.random.default_rng(0)
        labels = np.tile(np.eye(14), (2, 1))
        data = ArrayDataset(rng.standard_normal((28, 1, 8, 8)), labels)
        model = build_model(ModelConfig(task="multilabel", input_shape=(1, 8, 8),
                                        conv_blocks=[ConvBlock(4)], dense_widths=[]))
        config = TrainConfig(epochs=1, loss_kind="weighted-bce", use_class_weights=True)
        train(model, data, None, config)
        report = evaluate(model, data, config)
        self.assertEqual([m.name for m in report.labels], list(LABELS))


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.model = build_model(preset_config("resnet-tiny", "binary", (1, 8, 8)))
        self.state = AdamState.for_params(self.model.parameters())
        self.path = save_checkpoint(self.model, self.state, TrainConfig(), self.temp_dir / "ckpt")

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_layout_and_round_trip(self):
        files = {p.name for p in self.path.iterdir()}
        self.assertIn("config.json", files)
        self.assertIn("version", files)
        self.assertTrue(any(f.startswith("params_") for f in files))
        self.assertTrue(any(f.startswith("adam_m_") for f in files))
        self.assertTrue(any(f.startswith("adam_v_") for f in files))
        self.assertTrue(any(f.startswith("buffer_") for f in files))

        model, state, config = load_checkpoint(self.path)
        self.assertEqual(config, TrainConfig())
        self.assertEqual(model.config, self.model.config)
        for (name, a), (_, b) in zip(model.named_parameters(), self.model.named_parameters()):
            self.assertEqual(a.data.tobytes(), b.data.tobytes(), name)

    def test_missing_directory(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.temp_dir / "nope")

    def test_version_mismatch(self):
        (self.path / "version").write_text("0\n")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_corrupt_parameter_file(self):
        target = sorted(self.path.glob("params_*.npy"))[0]
        target.write_bytes(target.read_bytes()[:-16])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_broken_sidecar(self):
        sidecar = json.loads((self.path / "config.json").read_text())
        del sidecar["parameters"]
        (self.path / "config.json").write_text(json.dumps(sidecar))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)


if __name__ == "__main__":
    unittest.main()
