#!/usr/bin/env python3

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from errors import ConfigError, NpyFormatError
from npy_io import read_npy, write_npy
from tensor import Tensor


class TestNpyIO(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_float32_round_trip_bit_exact(self):
        """A 3x256x256 single-precision array survives byte for byte"""
        array = self.rng.standard_normal((3, 256, 256)).astype(np.float32)
        path = self.temp_dir / "image.npy"
        write_npy(array, path)
        loaded = read_npy(path)
        self.assertEqual(loaded.dtype, np.dtype("<f4"))
        self.assertEqual(loaded.tobytes(), array.tobytes())

    def test_random_shapes_and_dtypes(self):
        for case in range(200):
            rank = int(self.rng.integers(0, 5))
            shape = tuple(int(d) for d in self.rng.integers(1, 6, size=rank))
            dtype = np.float32 if case % 2 else np.float64
            array = (self.rng.standard_normal(shape) * 10.0 ** self.rng.integers(-3, 4)).astype(dtype)
            path = self.temp_dir / f"case{case}.npy"
            write_npy(array, path)
            loaded = read_npy(path)
            self.assertEqual(loaded.shape, shape, f"case {case}")
            self.assertEqual(loaded.dtype, np.dtype(dtype).newbyteorder("<"), f"case {case}")
            self.assertEqual(loaded.tobytes(), array.tobytes(), f"case {case}")

    def test_float64_payload_bytes(self):
        """The file is a v1.0 header followed by the raw little-endian samples"""
        array = self.rng.standard_normal((2, 3, 4))
        path = self.temp_dir / "f8.npy"
        write_npy(array, path)
        raw = path.read_bytes()
        payload = array.astype("<f8").tobytes()
        self.assertEqual(raw[:8], b"\x93NUMPY\x01\x00")
        self.assertEqual(raw[-len(payload):], payload)
        header_len = int.from_bytes(raw[8:10], "little")
        self.assertEqual(len(raw), 10 + header_len + len(payload))
        self.assertIn(b"'descr': '<f8'", raw[10 : 10 + header_len])

    def test_scalar_and_tensor(self):
        """0-d arrays keep an empty shape; Tensors are written from their data"""
        write_npy(np.float64(2.5), self.temp_dir / "scalar.npy")
        scalar = read_npy(self.temp_dir / "scalar.npy")
        self.assertEqual(scalar.shape, ())
        self.assertEqual(float(scalar), 2.5)

        write_npy(Tensor([[1.0, 2.0]]), self.temp_dir / "nested" / "tensor.npy")
        np.testing.assert_array_equal(read_npy(self.temp_dir / "nested" / "tensor.npy"), [[1.0, 2.0]])

    def test_readable_by_numpy(self):
        array = self.rng.standard_normal((4, 5))
        write_npy(array, self.temp_dir / "a.npy")
        np.testing.assert_array_equal(np.load(self.temp_dir / "a.npy"), array)

    def test_corrupted_magic_names_offset(self):
        path = self.temp_dir / "bad.npy"
        write_npy(np.ones(3), path)
        raw = bytearray(path.read_bytes())
        raw[2] = ord("X")
        path.write_bytes(bytes(raw))
        with self.assertRaises(NpyFormatError) as ctx:
            read_npy(path)
        self.assertIn("offset 2", str(ctx.exception))
        self.assertIsInstance(ctx.exception, ConfigError)

    def test_fortran_order_rejected(self):
        path = self.temp_dir / "fortran.npy"
        np.save(path, np.asfortranarray(self.rng.standard_normal((3, 4))))
        with self.assertRaises(NpyFormatError):
            read_npy(path)

    def test_unsupported_dtype_rejected(self):
        path = self.temp_dir / "ints.npy"
        np.save(path, np.arange(4, dtype=np.int32))
        with self.assertRaises(NpyFormatError):
            read_npy(path)

    def test_truncated_payload(self):
        path = self.temp_dir / "short.npy"
        write_npy(np.ones(100), path)
        path.write_bytes(path.read_bytes()[:-8])
        with self.assertRaises(NpyFormatError) as ctx:
            read_npy(path)
        self.assertIn("truncated", str(ctx.exception))

    def test_non_finite_refused(self):
        with self.assertRaises(NpyFormatError):
            write_npy(np.array([1.0, np.nan]), self.temp_dir / "nan.npy")


if __name__ == "__main__":
    unittest.main()
