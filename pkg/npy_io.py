"""
NPY v1.0 array files: little-endian float32/float64, C order only.

Header parsing and writing go through numpy.lib.format; this module adds
the stricter acceptance rules (magic/version/dtype/order/length checks with
byte-offset diagnostics).
"""

from pathlib import Path
from typing import Union

import numpy as np
from numpy.lib import format as npy_format

from errors import NpyFormatError

MAGIC = b"\x93NUMPY"
SUPPORTED_DTYPES = {np.dtype("<f4"), np.dtype("<f8")}

PathLike = Union[str, Path]


def write_npy(array, path: PathLike) -> None:
    """Write a float32/float64 array (or Tensor) as NPY v1.0"""
    data = getattr(array, "data", array)
    data = np.asarray(data)
    if data.dtype.kind != "f":
        data = data.astype(np.float64)
    data = np.ascontiguousarray(data.astype(data.dtype.newbyteorder("<"), copy=False))
    if data.dtype not in SUPPORTED_DTYPES:
        raise NpyFormatError(f"unsupported dtype {data.dtype}, expected <f4 or <f8")
    if not np.all(np.isfinite(data)):
        raise NpyFormatError(f"refusing to write non-finite values to {path}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        npy_format.write_array(f, data, version=(1, 0), allow_pickle=False)


def read_npy(path: PathLike) -> np.ndarray:
    """Read an NPY v1.0 file written with a supported dtype in C order"""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        for offset, expected in enumerate(MAGIC):
            if offset >= len(magic) or magic[offset] != expected:
                raise NpyFormatError(
                    f"{path}: bad NPY magic string at byte offset {offset}"
                )
        version = f.read(2)
        if version != b"\x01\x00":
            raise NpyFormatError(
                f"{path}: unsupported NPY version {tuple(version)} at byte offset 6, expected (1, 0)"
            )
        try:
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(f)
        except ValueError as e:
            raise NpyFormatError(f"{path}: malformed NPY header at byte offset 8: {e}") from e
        if fortran_order:
            raise NpyFormatError(f"{path}: fortran_order arrays are not supported")
        if dtype not in SUPPORTED_DTYPES:
            raise NpyFormatError(f"{path}: unsupported dtype {dtype.str}, expected <f4 or <f8")

        payload_offset = f.tell()
        count = int(np.prod(shape, dtype=np.int64))
        expected_bytes = count * dtype.itemsize
        payload = f.read(expected_bytes)
        if len(payload) != expected_bytes:
            raise NpyFormatError(
                f"{path}: truncated payload at byte offset {payload_offset + len(payload)}, "
                f"expected {expected_bytes} bytes"
            )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
