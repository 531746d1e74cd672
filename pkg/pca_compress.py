"""
Per-image, per-channel PCA compression.

Each channel matrix (H x W) is treated as H observations of dimension W:
the column mean is removed and the basis comes from the SVD of the centered
rows. An image compressed to k components stores, per channel, H x k
coefficients, k x W components, the W-vector mean and the singular values.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from errors import ConfigError
from npy_io import read_npy, write_npy

# singular values below this fraction of the largest are numerical noise
NOISE_FLOOR = 1e-12
# slack for cumulative-ratio comparisons so a threshold of 1.0 is reachable
VARIANCE_TOLERANCE = 1e-10


@dataclass
class ChannelPca:
    mean: np.ndarray  # (W,)
    components: np.ndarray  # (k_max, W), orthonormal rows
    singular_values: np.ndarray  # (k_max,), non-increasing

    @property
    def width(self) -> int:
        return self.mean.shape[0]

    @property
    def k_max(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        energy = self.singular_values**2
        total = energy.sum()
        if total <= 0:
            return np.zeros(0)
        return energy / total

    def truncated(self, k: int) -> "ChannelPca":
        """Keep the first k components; singular values stay complete"""
        return ChannelPca(self.mean, self.components[:k], self.singular_values)


@dataclass
class CompressedImage:
    coefficients: List[np.ndarray]  # per channel (H, k)
    channels: List[ChannelPca]
    shape: Tuple[int, int, int]
    k: int = field(default=0)

    def payload_size(self) -> int:
        """Stored value count: coefficients, components, means, singular values"""
        return int(
            np.sum(
                [
                    c.size + p.components.size + p.mean.size + p.singular_values.size
                    for c, p in zip(self.coefficients, self.channels)
                ]
            )
        )

    def raw_size(self) -> int:
        return int(np.prod(self.shape))


def _channel_array(channel) -> np.ndarray:
    x = np.asarray(getattr(channel, "data", channel), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"channel must be a non-empty H x W matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("channel contains non-finite values")
    return x


def _image_array(image) -> np.ndarray:
    x = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"image must be C x H x W, got shape {x.shape}")
    return x


def fit_channel_pca(channel) -> ChannelPca:
    x = _channel_array(channel)
    mean = x.mean(axis=0)
    centered = x - mean
    _, sigma, vt = np.linalg.svd(centered, full_matrices=False)

    if sigma.size == 0 or sigma[0] <= 0:
        return ChannelPca(mean, np.zeros((0, x.shape[1])), np.zeros(0))
    keep = sigma >= NOISE_FLOOR * sigma[0]
    sigma, vt = sigma[keep], vt[keep]

    # largest-magnitude entry of every component is made non-negative
    pivots = np.abs(vt).argmax(axis=1)
    signs = np.where(vt[np.arange(vt.shape[0]), pivots] < 0, -1.0, 1.0)
    return ChannelPca(mean, vt * signs[:, None], sigma)


def compress(image, k: int) -> CompressedImage:
    x = _image_array(image)
    C, H, W = x.shape
    limit = min(H, W)
    if not 1 <= k <= limit:
        raise ConfigError(f"k={k} out of range, valid components are 1..{limit}")

    coefficients, channels = [], []
    for c in range(C):
        pca = fit_channel_pca(x[c]).truncated(k)
        coefficients.append((x[c] - pca.mean) @ pca.components.T)
        channels.append(pca)
    return CompressedImage(coefficients, channels, (C, H, W), k)


def reconstruct(compressed: CompressedImage) -> np.ndarray:
    C, H, W = compressed.shape
    if len(compressed.coefficients) != C or len(compressed.channels) != C:
        raise ValueError(
            f"compressed image has {len(compressed.coefficients)} coefficient sets and "
            f"{len(compressed.channels)} bases for {C} channels"
        )
    out = np.empty((C, H, W))
    for c, (coeffs, pca) in enumerate(zip(compressed.coefficients, compressed.channels)):
        if coeffs.shape[0] != H or coeffs.shape[1] != pca.k_max or pca.width != W:
            raise ValueError(
                f"channel {c}: coefficients {coeffs.shape} inconsistent with "
                f"components {pca.components.shape} for image {compressed.shape}"
            )
        out[c] = coeffs @ pca.components + pca.mean
    return out


def reconstruction_error(image, compressed: CompressedImage) -> np.ndarray:
    """Squared Frobenius error per channel"""
    x = _image_array(image)
    diff = x - reconstruct(compressed)
    return (diff**2).sum(axis=(1, 2))


def components_for_variance(pca: ChannelPca, threshold: float) -> int:
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"variance threshold must be in (0, 1], got {threshold}")
    ratios = pca.explained_variance_ratio
    if ratios.size == 0:
        return 0
    cumulative = np.cumsum(ratios)
    reached = np.nonzero(cumulative >= threshold - VARIANCE_TOLERANCE)[0]
    return int(reached[0]) + 1 if reached.size else int(ratios.size)


def variance_curve(pca: ChannelPca) -> List[Tuple[int, float]]:
    cumulative = np.cumsum(pca.explained_variance_ratio)
    return [(k, float(v)) for k, v in enumerate(cumulative, start=1)]


def save_compressed(compressed: CompressedImage, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for c, (coeffs, pca) in enumerate(zip(compressed.coefficients, compressed.channels)):
        write_npy(pca.mean, directory / f"mean_c{c}.npy")
        write_npy(pca.components, directory / f"components_c{c}.npy")
        write_npy(coeffs, directory / f"coeffs_c{c}.npy")
        write_npy(pca.singular_values, directory / f"sigma_c{c}.npy")
    header = {"shape": list(compressed.shape), "k": compressed.k}
    (directory / "header.json").write_text(json.dumps(header, sort_keys=True))
    return directory


def load_compressed(directory: Union[str, Path]) -> CompressedImage:
    directory = Path(directory)
    header = json.loads((directory / "header.json").read_text())
    C, H, W = header["shape"]
    coefficients, channels = [], []
    for c in range(C):
        channels.append(
            ChannelPca(
                read_npy(directory / f"mean_c{c}.npy"),
                read_npy(directory / f"components_c{c}.npy").reshape(-1, W),
                read_npy(directory / f"sigma_c{c}.npy"),
            )
        )
        coefficients.append(read_npy(directory / f"coeffs_c{c}.npy").reshape(H, -1))
    return CompressedImage(coefficients, channels, (C, H, W), header["k"])
