#!/usr/bin/env python3

import unittest

import numpy as np

from errors import ConfigError
from gradcheck import grad_check_parameters
from losses import ClassWeights, weighted_bce_multilabel, weighted_cross_entropy
from models import (
    PRESETS,
    BatchNorm2d,
    Conv2d,
    ConvBlock,
    Dense,
    ModelConfig,
    ResidualBlock,
    build_binary_cnn,
    build_model,
    build_multilabel_cnn,
    build_resnet,
    forward,
    param_count,
    preset_config,
)
from tensor import ConvSpec, Tensor, relu


def conv_params(c_in, c_out, k):
    return c_out * c_in * k * k + c_out


def dense_params(d_in, d_out):
    return d_in * d_out + d_out


class TestPlainModels(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_layer_counts(self):
        self.assertEqual(param_count(Dense(4, 3, self.rng)), 15)
        self.assertEqual(param_count(Conv2d(1, ConvSpec(32, 3, 1, 1), self.rng)), 320)

    def test_default_binary_model(self):
        """Three 32-filter blocks on 1x64x64, dense 128, 2-way softmax"""
        expected = (
            conv_params(1, 32, 3) + 2 * conv_params(32, 32, 3)
            + dense_params(32 * 8 * 8, 128) + dense_params(128, 2)
        )
        model = build_binary_cnn(ModelConfig())
        self.assertEqual(param_count(model), expected)

        out = forward(model, self.rng.standard_normal((3, 1, 64, 64)))
        self.assertEqual(out.shape, (3, 2))
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(3), atol=1e-12)

    def test_multilabel_model(self):
        config = preset_config("multilabel", "multilabel", (1, 64, 64))
        expected = (
            conv_params(1, 32, 3) + conv_params(32, 32, 3) + conv_params(32, 64, 3)
            + conv_params(64, 64, 3) + dense_params(64 * 4 * 4, 256)
            + dense_params(256, 128) + dense_params(128, 14)
        )
        model = build_multilabel_cnn(config)
        self.assertEqual(param_count(model), expected)
        out = model(self.rng.standard_normal((2, 1, 64, 64))).data
        self.assertEqual(out.shape, (2, 14))
        self.assertTrue(np.all((out > 0) & (out < 1)))
        self.assertFalse(np.allclose(out.sum(axis=1), 1.0))

    def test_default_multilabel_architecture(self):
        """A bare multilabel config gets four conv blocks and a 256->128 head"""
        model = build_multilabel_cnn(ModelConfig(task="multilabel", input_shape=(1, 64, 64)))
        expected = (
            conv_params(1, 32, 3) + conv_params(32, 32, 3) + conv_params(32, 64, 3)
            + conv_params(64, 64, 3) + dense_params(64 * 4 * 4, 256)
            + dense_params(256, 128) + dense_params(128, 14)
        )
        self.assertEqual(param_count(model), expected)
        self.assertEqual([b.filters for b in model.config.conv_blocks], [32, 32, 64, 64])
        self.assertEqual(ModelConfig().dense_widths, [128])
        self.assertEqual(ModelConfig(residual=True, depth_per_stage=[1], stage_widths=[4]).conv_blocks, [])

    def test_same_seed_same_parameters(self):
        a = build_model(ModelConfig(input_shape=(1, 16, 16), seed=5))
        b = build_model(ModelConfig(input_shape=(1, 16, 16), seed=5))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            self.assertEqual(na, nb)
            self.assertEqual(pa.data.tobytes(), pb.data.tobytes())

    def test_collapsing_feature_map_names_layer(self):
        with self.assertRaises(ConfigError) as ctx:
            build_binary_cnn(ModelConfig(input_shape=(1, 4, 4)))
        self.assertIn("layer", str(ctx.exception))

    def test_batch_shape_mismatch(self):
        model = build_model(ModelConfig(input_shape=(1, 16, 16)))
        with self.assertRaises(ValueError) as ctx:
            model.forward(np.zeros((2, 1, 8, 8)))
        self.assertIn("expected (B, 1, 16, 16)", str(ctx.exception))

    def test_forward_sanity(self):
        """Zeros give finite output; rows follow their samples"""
        model = build_model(ModelConfig(input_shape=(1, 16, 16)))
        self.assertTrue(np.all(np.isfinite(model(np.zeros((2, 1, 16, 16))).data)))
        batch = self.rng.standard_normal((4, 1, 16, 16))
        out = model(batch).data
        perm = [2, 0, 3, 1]
        np.testing.assert_allclose(model(batch[perm]).data, out[perm], atol=1e-12)
        dup = model(batch[[1, 1]]).data
        np.testing.assert_allclose(dup[0], dup[1], atol=1e-12)
        self.assertEqual(model(batch).data.tobytes(), out.tobytes())

    def test_task_validation(self):
        with self.assertRaises(ConfigError):
            ModelConfig(task="segmentation")
        with self.assertRaises(ConfigError):
            ModelConfig(task="binary", output_dim=14)
        with self.assertRaises(ConfigError) as ctx:
            preset_config("baseline", "multilabel", (1, 64, 64))
        self.assertIn("softmax", str(ctx.exception))
        with self.assertRaises(ConfigError):
            preset_config("vgg", "binary", (1, 64, 64))

    def test_config_round_trip(self):
        for name in PRESETS:
            config = preset_config(name, "binary" if name != "multilabel" else "multilabel", (1, 64, 64), seed=3)
            self.assertEqual(ModelConfig.from_dict(config.to_dict()), config)


class TestResidualModels(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_zeroed_branch_is_skip(self):
        block = ResidualBlock(3, 3, 1, self.rng)
        for conv in (block.conv1, block.conv2):
            conv.kernels.data = np.zeros_like(conv.kernels.data)
        x = self.rng.standard_normal((2, 3, 5, 5))
        for training in (True, False):
            np.testing.assert_allclose(block(Tensor(x), training).data, relu(Tensor(x)).data, atol=1e-12)

    def test_projection_on_shape_change(self):
        block = ResidualBlock(4, 8, 2, self.rng)
        self.assertEqual(len(block.projection), 2)
        self.assertEqual(block.output_shape((4, 8, 8)), (8, 4, 4))
        self.assertEqual(block(Tensor(self.rng.standard_normal((1, 4, 8, 8))), True).shape, (1, 8, 4, 4))

    def test_tiny_preset_shapes(self):
        for task, dim in (("binary", 2), ("multilabel", 14)):
            model = build_resnet(preset_config("resnet-tiny", task, (1, 32, 32)))
            self.assertEqual(model(self.rng.standard_normal((3, 1, 32, 32))).shape, (3, dim))

    def test_resnet50_layout(self):
        """Sixteen bottleneck blocks plus stem and head give fifty weighted layers"""
        config = preset_config("resnet50", "binary", (3, 64, 64))
        model = build_resnet(config)
        convs = [name for name, _ in model.named_parameters() if name.endswith("kernels") and "proj" not in name]
        dense = [name for name, _ in model.named_parameters() if name.endswith("weight")]
        self.assertEqual(len(convs) + len(dense), 50)

    def test_running_statistics_named(self):
        model = build_resnet(preset_config("resnet-tiny", "binary", (1, 8, 8)))
        names = [name for name, _ in model.named_buffers()]
        self.assertTrue(names)
        self.assertTrue(all(name.endswith("running") for name in names))

    def test_non_residual_rejected(self):
        with self.assertRaises(ConfigError):
            build_resnet(ModelConfig())
        with self.assertRaises(ConfigError):
            ModelConfig(residual=True)


class TestModelGradients(unittest.TestCase):
    """Every builder passes an end-to-end finite-difference check on two samples"""

    def _check(self, model, loss_fn, weights):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((2,) + model.config.input_shape))
        dim = model.config.output_dim
        y = np.zeros((2, dim))
        y[0, 0] = y[1, dim - 1] = 1.0
        return grad_check_parameters(
            lambda: loss_fn(model.forward(x, training=True), y, weights),
            model.parameters(), eps=1e-5, max_checks=20, seed=0,
        )

    def test_binary_cnn(self):
        config = ModelConfig(input_shape=(1, 8, 8), conv_blocks=[ConvBlock(4), ConvBlock(4)], dense_widths=[8])
        error = self._check(build_binary_cnn(config), weighted_cross_entropy, ClassWeights(np.array([1.0, 3.0])))
        self.assertLess(error, 1e-4)

    def test_multilabel_cnn(self):
        config = ModelConfig(task="multilabel", input_shape=(1, 8, 8), conv_blocks=[ConvBlock(4)], dense_widths=[8])
        error = self._check(build_multilabel_cnn(config), weighted_bce_multilabel, ClassWeights.uniform(14))
        self.assertLess(error, 1e-4)

    def test_tiny_resnet(self):
        model = build_resnet(preset_config("resnet-tiny", "binary", (1, 8, 8)))
        self.assertLess(self._check(model, weighted_cross_entropy, ClassWeights.uniform(2)), 1e-4)

    def test_batchnorm_layer_parameters(self):
        layer = BatchNorm2d(3)
        self.assertEqual([name for name, _ in layer.named_parameters()], ["gamma", "beta"])
        self.assertEqual(param_count(layer), 6)


if __name__ == "__main__":
    unittest.main()
