#!/usr/bin/env python3

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from errors import ConfigError
from generate_sample_data import rank_r_channel
from pca_compress import (
    ChannelPca,
    compress,
    components_for_variance,
    fit_channel_pca,
    load_compressed,
    reconstruct,
    reconstruction_error,
    save_compressed,
    variance_curve,
)


class TestChannelPca(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_constant_channel(self):
        pca = fit_channel_pca(np.full((5, 4), 0.3))
        self.assertEqual(pca.explained_variance_ratio.size, 0)
        np.testing.assert_allclose(pca.mean, np.full(4, 0.3))
        self.assertEqual(components_for_variance(pca, 0.5), 0)
        self.assertEqual(variance_curve(pca), [])

    def test_rank_one(self):
        u = np.arange(6.0)
        v = self.rng.standard_normal(5)
        pca = fit_channel_pca(np.outer(u, v))
        np.testing.assert_allclose(pca.explained_variance_ratio, [1.0])
        self.assertEqual(len(variance_curve(pca)), 1)
        self.assertAlmostEqual(variance_curve(pca)[0][1], 1.0, places=10)

    def test_orthonormal_sorted_and_normalized(self):
        pca = fit_channel_pca(self.rng.standard_normal((20, 12)))
        np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(pca.k_max), atol=1e-8)
        self.assertTrue(np.all(np.diff(pca.singular_values) <= 0))
        self.assertAlmostEqual(pca.explained_variance_ratio.sum(), 1.0, delta=1e-10)

    def test_sign_convention(self):
        """Largest-magnitude entry of every component is non-negative"""
        pca = fit_channel_pca(self.rng.standard_normal((16, 10)))
        pivots = np.abs(pca.components).argmax(axis=1)
        self.assertTrue(np.all(pca.components[np.arange(pca.k_max), pivots] >= 0))

    def test_non_finite_rejected(self):
        channel = np.ones((3, 3))
        channel[1, 1] = np.inf
        with self.assertRaises(ValueError):
            fit_channel_pca(channel)

    def test_variance_curve_monotone(self):
        curve = variance_curve(fit_channel_pca(self.rng.standard_normal((32, 32))))
        ratios = [r for _, r in curve]
        self.assertEqual([k for k, _ in curve], list(range(1, len(curve) + 1)))
        self.assertTrue(np.all(np.diff(ratios) >= -1e-15))
        self.assertAlmostEqual(ratios[-1], 1.0, delta=1e-10)

    def test_variance_curve_arithmetic(self):
        pca = ChannelPca(np.zeros(2), np.eye(2), np.array([1.0, 1.0]))
        self.assertEqual(variance_curve(pca), [(1, 0.5), (2, 1.0)])

    def test_components_for_variance(self):
        sigma = np.sqrt([0.6, 0.3, 0.1])
        pca = ChannelPca(np.zeros(3), np.eye(3), sigma)
        self.assertEqual(components_for_variance(pca, 0.9), 2)
        self.assertEqual(components_for_variance(pca, 1.0), 3)
        for bad in (0.0, 1.5):
            with self.assertRaises(ValueError):
                components_for_variance(pca, bad)

    def test_full_variance_at_constructed_rank(self):
        """A rank-40 channel reaches full variance at exactly 40 components"""
        channel = rank_r_channel(256, 256, 40, seed=4)
        pca = fit_channel_pca(channel)
        self.assertEqual(components_for_variance(pca, 1.0), 40)


class TestCompression(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_full_rank_round_trip(self):
        image = self.rng.standard_normal((3, 64, 64))
        restored = reconstruct(compress(image, 64))
        self.assertLess(np.abs(restored - image).max(), 1e-8)

    def test_low_rank_image(self):
        image = np.stack([rank_r_channel(32, 24, 3, seed=s) for s in range(3)])
        self.assertLess(reconstruction_error(image, compress(image, 3)).max(), 1e-8)

    def test_truncation_error_is_tail_energy(self):
        """Squared error after k components equals the discarded singular-value energy"""
        image = self.rng.standard_normal((3, 32, 32))
        compressed = compress(image, 8)
        errors = reconstruction_error(image, compressed)
        for c in range(3):
            tail = (compressed.channels[c].singular_values[8:] ** 2).sum()
            self.assertAlmostEqual(errors[c], tail, delta=1e-6 * max(tail, 1.0))

    def test_payload_smaller_than_raw(self):
        image = self.rng.random((3, 256, 256))
        compressed = compress(image, 40)
        sigma = sum(p.singular_values.size for p in compressed.channels)
        self.assertEqual(compressed.payload_size(), 3 * (256 * 40 + 40 * 256 + 256) + sigma)
        self.assertLess(compressed.payload_size(), compressed.raw_size())

    def test_zero_coefficients_give_mean(self):
        image = self.rng.standard_normal((1, 6, 5))
        compressed = compress(image, 2)
        compressed.coefficients[0] = np.zeros_like(compressed.coefficients[0])
        restored = reconstruct(compressed)
        np.testing.assert_allclose(restored[0], np.tile(compressed.channels[0].mean, (6, 1)))

    def test_k_out_of_range(self):
        with self.assertRaises(ConfigError) as ctx:
            compress(np.zeros((1, 4, 6)), 5)
        self.assertIn("1..4", str(ctx.exception))
        with self.assertRaises(ConfigError):
            compress(np.zeros((1, 4, 6)), 0)

    def test_inconsistent_shapes(self):
        compressed = compress(self.rng.standard_normal((2, 5, 5)), 2)
        compressed.coefficients.pop()
        with self.assertRaises(ValueError):
            reconstruct(compressed)

    def test_sign_invariant_determinism(self):
        image = self.rng.standard_normal((2, 16, 16))
        first = reconstruct(compress(image, 5))
        second = reconstruct(compress(image.copy(), 5))
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_container_round_trip(self):
        """Saved containers use the per-channel file names and reload identically"""
        image = self.rng.standard_normal((2, 8, 10))
        compressed = compress(image, 3)
        directory = save_compressed(compressed, Path(self.temp_dir) / "img_k3")
        for name in ("mean_c0", "components_c1", "coeffs_c0", "sigma_c1"):
            self.assertTrue((directory / f"{name}.npy").exists())
        self.assertTrue((directory / "header.json").exists())
        loaded = load_compressed(directory)
        self.assertEqual(loaded.shape, (2, 8, 10))
        self.assertEqual(loaded.k, 3)
        np.testing.assert_array_equal(reconstruct(loaded), reconstruct(compressed))


if __name__ == "__main__":
    unittest.main()
