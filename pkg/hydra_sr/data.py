"""
Synthetic hyperspectral cubes, their RGB projection, dataset splits and the
HSIC cube file.

HSIC layout, little-endian:

	magic "HSIC" | version u32 | H u32 | W u32 | B u32 | H*W*B float32 (band fastest)

Cubes are held as float64 arrays whose values are float32-representable, so
a save -> load round trip is bit-exact. RGB projections are computed in full
float64 and share the float32 payload: saving one rounds every value to the
nearest float32, and loading returns those rounded values.
"""

import glob
import logging
import os
import struct
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from scipy import ndimage

from .errors import (
	BadMagicError,
	ConfigError,
	DataError,
	DimensionError,
	DimensionOverflowError,
	TruncatedPayloadError,
	UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

MAGIC = b"HSIC"
VERSION = 1
MAX_ELEMENTS = 1 << 31
_HEADER = struct.Struct("<4sIIII")

# Sensitivity peaks as a fraction of the band range, in R, G, B row order.
SENSITIVITY_PEAKS = (0.85, 0.50, 0.15)
RGB_SUFFIX = "_rgb.hsic"


@dataclass(eq=False)
class HSICube:
	""" H x W x B cube. Dataset cubes lie in [0,1]; reconstructions may not.
	"""
	values: np.ndarray

	def __post_init__(self):
		self.values = np.asarray(self.values, dtype=np.float64)
		if self.values.ndim != 3:
			raise DimensionError(f"cube must be H x W x B, got shape {self.values.shape}")

	@property
	def shape(self) -> Tuple[int, int, int]:
		return self.values.shape

	@property
	def height(self) -> int:
		return self.values.shape[0]

	@property
	def width(self) -> int:
		return self.values.shape[1]

	@property
	def bands(self) -> int:
		return self.values.shape[2]

	def pixels(self) -> np.ndarray:
		return self.values.reshape(-1, self.bands)

	def clamped(self) -> "HSICube":
		return HSICube(np.clip(self.values, 0.0, 1.0))

	def equals(self, other: "HSICube") -> bool:
		return self.shape == other.shape and np.array_equal(self.values, other.values)


@dataclass(eq=False)
class RGBImage:
	values: np.ndarray

	def __post_init__(self):
		self.values = np.asarray(self.values, dtype=np.float64)
		if self.values.ndim != 3 or self.values.shape[2] != 3:
			raise DimensionError(f"RGB image must be H x W x 3, got shape {self.values.shape}")

	@property
	def shape(self) -> Tuple[int, int, int]:
		return self.values.shape


@dataclass(eq=False)
class Sample:
	""" One cube with its RGB projection, as written by gen-data.
	"""
	name: str
	cube: HSICube
	rgb: RGBImage
	sources: Tuple[str, ...] = ()


def _float32_exact(values: np.ndarray) -> np.ndarray:
	return values.astype(np.float32).astype(np.float64)


##################################################

			##### SYNTHETIC GENERATION #####

##################################################


def _material_spectrum(rng: np.random.Generator, bands: int) -> np.ndarray:
	""" 2-4 Gaussian bumps over the band index on top of a gentle ramp.
	"""
	t = np.linspace(0.0, 1.0, bands)
	spectrum = rng.uniform(0.0, 0.3) + rng.uniform(-0.2, 0.2) * t
	for _ in range(int(rng.integers(2, 5))):
		center = rng.uniform(0.0, 1.0)
		width = rng.uniform(1 / 16, 1 / 4)
		amplitude = rng.uniform(0.1, 0.6)
		spectrum = spectrum + amplitude * np.exp(-0.5 * ((t - center) / width) ** 2)
	return np.clip(spectrum, 0.0, 1.0)


def _abundances(rng: np.random.Generator, height: int, width: int, n_materials: int) -> np.ndarray:
	""" Smooth convex mixing weights, H x W x n.
	"""
	if n_materials == 1:
		return np.ones((height, width, 1))
	sigma = max(1.0, min(height, width) / 8.0)
	fields = np.stack([
		ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=sigma, mode="wrap")
		for _ in range(n_materials)
	], axis=-1)
	fields = fields / (fields.std(axis=(0, 1), keepdims=True) + 1e-12)
	logits = 2.0 * fields
	e = np.exp(logits - logits.max(axis=-1, keepdims=True))
	return e / e.sum(axis=-1, keepdims=True)


def generate_synthetic_cube(seed: int, height: int, width: int, bands: int, n_materials: int,
		noise_sigma: float = 0.0, noise_bands: Optional[Sequence[Tuple[int, int]]] = None) -> HSICube:
	""" Deterministic linear mixture of random material spectra, in [0,1].
	"""
	if n_materials < 1:
		raise ConfigError(f"n_materials must be >= 1, got {n_materials}")
	if min(height, width, bands) < 1:
		raise ConfigError(f"cube dimensions must be positive, got {height}x{width}x{bands}")
	rng = np.random.default_rng(seed)
	materials = np.stack([_material_spectrum(rng, bands) for _ in range(n_materials)])
	weights = _abundances(rng, height, width, n_materials)
	cube = HSICube(np.clip(weights @ materials, 0.0, 1.0))
	if noise_sigma > 0:
		cube = add_band_noise(cube, noise_sigma, noise_bands, seed=int(rng.integers(1 << 31)))
	return HSICube(_float32_exact(cube.values))


def add_band_noise(cube: HSICube, sigma: float, bands: Optional[Sequence[Tuple[int, int]]] = None,
		seed: int = 0) -> HSICube:
	""" Additive Gaussian noise on [start, stop) band ranges (all bands if None), clamped to [0,1].
	"""
	ranges = bands or [(0, cube.bands)]
	rng = np.random.default_rng(seed)
	values = cube.values.copy()
	for start, stop in ranges:
		if not 0 <= start < stop <= cube.bands:
			raise ConfigError(f"noise band range [{start}, {stop}) outside 0..{cube.bands}")
		values[:, :, start:stop] += rng.normal(0.0, sigma, size=values[:, :, start:stop].shape)
	return HSICube(_float32_exact(np.clip(values, 0.0, 1.0)))


def drop_bands(cube: HSICube, bands: Iterable[int]) -> HSICube:
	""" Remove the listed band indices (noisy-region cleanup).
	"""
	drop = sorted(set(int(b) for b in bands))
	if any(not 0 <= b < cube.bands for b in drop):
		raise ConfigError(f"band index out of range 0..{cube.bands - 1}: {drop}")
	keep = [b for b in range(cube.bands) if b not in drop]
	if len(keep) < 4:
		raise ConfigError("dropping these bands leaves fewer than 4")
	return HSICube(cube.values[:, :, keep])


##################################################

			##### RGB PROJECTION #####

##################################################


def sensitivity_matrix(bands: int) -> np.ndarray:
	""" 3 x B row-stochastic Gaussian responses, sigma = B/8.
	"""
	k = np.arange(bands, dtype=np.float64)
	sigma = bands / 8.0
	rows = [np.exp(-0.5 * ((k - peak * (bands - 1)) / sigma) ** 2) for peak in SENSITIVITY_PEAKS]
	matrix = np.stack(rows)
	return matrix / matrix.sum(axis=1, keepdims=True)


def hsi_to_rgb(cube: HSICube, sensitivity: np.ndarray) -> RGBImage:
	sensitivity = np.asarray(sensitivity, dtype=np.float64)
	if sensitivity.shape != (3, cube.bands):
		raise DimensionError(f"sensitivity {sensitivity.shape} does not match {cube.bands} bands")
	return RGBImage(cube.values @ sensitivity.T)


def export_sensitivity_csv(matrix: np.ndarray, path: str) -> None:
	frame = pd.DataFrame(matrix, index=["r", "g", "b"],
						 columns=[f"band_{k}" for k in range(matrix.shape[1])])
	try:
		frame.to_csv(path)
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e


def read_sensitivity_csv(path: str) -> np.ndarray:
	try:
		frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e
	return frame.to_numpy(dtype=np.float64)


##################################################

			##### FILE FORMAT #####

##################################################


def _write_array(values: np.ndarray, path: str) -> None:
	h, w, b = values.shape
	payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
	try:
		with open(path, "wb") as f:
			f.write(_HEADER.pack(MAGIC, VERSION, h, w, b))
			f.write(payload)
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e


def _read_array(path: str) -> np.ndarray:
	try:
		with open(path, "rb") as f:
			raw = f.read()
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e
	if raw[:4] != MAGIC:
		raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
	if len(raw) < _HEADER.size:
		raise TruncatedPayloadError(f"{path}: truncated header ({len(raw)} bytes)")
	_, version, h, w, b = _HEADER.unpack_from(raw)
	if version != VERSION:
		raise UnsupportedVersionError(f"{path}: unsupported HSIC version {version}")
	count = h * w * b
	if min(h, w, b) == 0 or count > MAX_ELEMENTS:
		raise DimensionOverflowError(f"{path}: header dimensions {h}x{w}x{b} out of range")
	expected = _HEADER.size + 4 * count
	if len(raw) < expected:
		raise TruncatedPayloadError(f"{path}: payload has {len(raw) - _HEADER.size} bytes, header claims {4 * count}")
	if len(raw) > expected:
		raise TruncatedPayloadError(f"{path}: {len(raw) - expected} trailing bytes after payload")
	values = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
	return values.astype(np.float64).reshape(h, w, b)


def save_cube(cube: HSICube, path: str) -> None:
	_write_array(cube.values, path)


def load_cube(path: str) -> HSICube:
	return HSICube(_read_array(path))


def save_rgb(image: RGBImage, path: str) -> None:
	_write_array(image.values, path)


def load_rgb(path: str) -> RGBImage:
	values = _read_array(path)
	if values.shape[2] != 3:
		raise DimensionError(f"{path}: expected 3 channels, got {values.shape[2]}")
	return RGBImage(values)


def load_dataset(directory: str) -> List[Sample]:
	""" Cube / RGB pairs written by gen-data, sorted by name.
	"""
	paths = sorted(p for p in glob.glob(os.path.join(directory, "*.hsic")) if not p.endswith(RGB_SUFFIX))
	samples = []
	for path in paths:
		stem = path[:-len(".hsic")]
		rgb_path = stem + RGB_SUFFIX
		if not os.path.exists(rgb_path):
			logger.warning(f"Skipping {path}, no paired {os.path.basename(rgb_path)}.")
			continue
		samples.append(Sample(os.path.basename(stem), load_cube(path), load_rgb(rgb_path), (path, rgb_path)))
	if not samples:
		raise DataError(f"no cube/RGB pairs found in {directory}")
	return samples


Item = TypeVar("Item")


def split_dataset(items: Sequence[Item], fractions: Sequence[float] = (0.8, 0.2),
		seed: int = 0) -> Tuple[List[Item], List[Item]]:
	""" Seeded shuffle, then a (train, val) partition.
	"""
	if len(fractions) != 2 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
		raise ConfigError(f"fractions must be two non-negative values summing to 1, got {fractions}")
	order = np.random.default_rng(seed).permutation(len(items))
	n_train = int(round(fractions[0] * len(items)))
	train = [items[i] for i in order[:n_train]]
	val = [items[i] for i in order[n_train:]]
	if not train or not val:
		raise ConfigError(f"split of {len(items)} items by {tuple(fractions)} leaves an empty side")
	return train, val
