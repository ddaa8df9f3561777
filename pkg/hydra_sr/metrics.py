"""
Reconstruction metrics, error heatmaps, spectral plot data, FLOP counts and
the per-pixel linear baseline.

Conventions: MRAE floors the ground-truth denominator at eps (default 1e-3),
PSNR uses peak 1.0 and is +inf on an exact match (written "inf" in CSV).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from .config import ModelConfig
from .data import HSICube, RGBImage, Sample
from .errors import ContractError, DataError, DimensionError, PixelIndexError

logger = logging.getLogger(__name__)

MRAE_EPS = 1e-3
PSNR_PEAK = 1.0
SPECTRA_COLUMNS = ["pixel", "row", "col", "band_index", "gt", "pred"]

CubeLike = Union[HSICube, np.ndarray, Sequence[float]]


def _pair(gt: CubeLike, pred: CubeLike) -> Tuple[np.ndarray, np.ndarray]:
	g = gt.values if isinstance(gt, HSICube) else np.asarray(gt, dtype=np.float64)
	p = pred.values if isinstance(pred, HSICube) else np.asarray(pred, dtype=np.float64)
	if g.shape != p.shape:
		raise DimensionError(f"ground truth {g.shape} and prediction {p.shape} differ in shape")
	return g, p


def _relative_errors(g: np.ndarray, p: np.ndarray, eps: float) -> np.ndarray:
	if eps <= 0:
		raise ContractError(f"MRAE eps must be positive, got {eps}")
	return np.abs(g - p) / np.maximum(g, eps)


def mrae(gt: CubeLike, pred: CubeLike, eps: float = MRAE_EPS) -> float:
	g, p = _pair(gt, pred)
	return float(np.mean(_relative_errors(g, p, eps)))


def rmse(gt: CubeLike, pred: CubeLike) -> float:
	g, p = _pair(gt, pred)
	return float(np.sqrt(np.mean((g - p) ** 2)))


def psnr(gt: CubeLike, pred: CubeLike, peak: float = PSNR_PEAK) -> float:
	error = rmse(gt, pred)
	if error == 0.0:
		return math.inf
	return float(20.0 * np.log10(peak / error))


def error_heatmap(gt: CubeLike, pred: CubeLike, eps: float = MRAE_EPS) -> np.ndarray:
	""" Per-pixel MRAE over bands, H x W.
	"""
	g, p = _pair(gt, pred)
	if g.ndim != 3:
		raise DimensionError(f"heatmap needs H x W x B cubes, got shape {g.shape}")
	return _relative_errors(g, p, eps).mean(axis=2)


@dataclass
class MetricReport:
	mrae: float
	rmse: float
	psnr: float
	heatmap: Optional[np.ndarray] = field(default=None, repr=False)

	def to_row(self, name: str) -> Dict[str, object]:
		return {"image": name, "mrae": self.mrae, "rmse": self.rmse, "psnr": self.psnr}


def evaluate(gt: HSICube, pred: HSICube, eps: float = MRAE_EPS, peak: float = PSNR_PEAK) -> MetricReport:
	heatmap = error_heatmap(gt, pred, eps)
	return MetricReport(mrae=mrae(gt, pred, eps), rmse=rmse(gt, pred), psnr=psnr(gt, pred, peak), heatmap=heatmap)


def metrics_table(rows: List[Dict[str, object]]) -> pd.DataFrame:
	""" Per-image rows followed by a "mean" aggregate row.
	"""
	if not rows:
		raise DataError("no images to evaluate")
	frame = pd.DataFrame(rows)
	numeric = [c for c in frame.columns if c != "image"]
	aggregate = {"image": "mean"}
	aggregate.update({c: float(frame[c].astype(float).mean()) for c in numeric})
	return pd.concat([frame, pd.DataFrame([aggregate])], ignore_index=True)


def write_table(frame: pd.DataFrame, path: str) -> None:
	try:
		frame.to_csv(path, index=False)
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e


def read_table(path: str) -> pd.DataFrame:
	try:
		return pd.read_csv(path, float_precision="round_trip")
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e


##################################################

			##### HEATMAP IMAGES #####

##################################################


def heatmap_to_gray(heatmap: np.ndarray, max_value: float = 1.0) -> np.ndarray:
	""" Linear scale of [0, max_value] onto 0..255.
	"""
	if max_value <= 0:
		raise ContractError(f"heatmap max must be positive, got {max_value}")
	scaled = np.clip(np.asarray(heatmap, dtype=np.float64) / max_value, 0.0, 1.0)
	return np.rint(scaled * 255.0).astype(np.uint8)


def heatmap_to_color(heatmap: np.ndarray, max_value: float = 1.0) -> np.ndarray:
	""" Blue (no error) to red (max_value and above), H x W x 3.
	"""
	level = heatmap_to_gray(heatmap, max_value).astype(np.int64)
	return np.stack([level, np.zeros_like(level), 255 - level], axis=-1).astype(np.uint8)


def _write_netpbm(path: str, magic: bytes, image: np.ndarray) -> None:
	h, w = image.shape[:2]
	try:
		with open(path, "wb") as f:
			f.write(magic + b"\n%d %d\n255\n" % (w, h))
			f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e


def _read_netpbm(path: str, magic: bytes, channels: int) -> np.ndarray:
	try:
		with open(path, "rb") as f:
			raw = f.read()
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e
	tokens, pos = [], 0
	while len(tokens) < 4:
		while pos < len(raw) and raw[pos:pos + 1].isspace():
			pos += 1
		start = pos
		while pos < len(raw) and not raw[pos:pos + 1].isspace():
			pos += 1
		if start == pos:
			raise DataError(f"{path}: truncated {magic.decode()} header")
		tokens.append(raw[start:pos])
	if tokens[0] != magic:
		raise DataError(f"{path}: expected {magic.decode()} image, got {tokens[0]!r}")
	width, height, maxval = (int(t) for t in tokens[1:])
	if maxval != 255:
		raise DataError(f"{path}: only 8-bit images are supported, maxval {maxval}")
	data = raw[pos + 1:]
	count = width * height * channels
	if len(data) != count:
		raise DataError(f"{path}: payload has {len(data)} bytes, expected {count}")
	shape = (height, width) if channels == 1 else (height, width, channels)
	return np.frombuffer(data, dtype=np.uint8).reshape(shape).copy()


def write_pgm(path: str, image: np.ndarray) -> None:
	if image.ndim != 2:
		raise DimensionError(f"PGM needs an H x W image, got shape {image.shape}")
	_write_netpbm(path, b"P5", image)


def read_pgm(path: str) -> np.ndarray:
	return _read_netpbm(path, b"P5", 1)


def write_ppm(path: str, image: np.ndarray) -> None:
	if image.ndim != 3 or image.shape[2] != 3:
		raise DimensionError(f"PPM needs an H x W x 3 image, got shape {image.shape}")
	_write_netpbm(path, b"P6", image)


def read_ppm(path: str) -> np.ndarray:
	return _read_netpbm(path, b"P6", 3)


##################################################

			##### SPECTRAL PLOTS #####

##################################################


def random_pixels(height: int, width: int, n: int = 6, seed: int = 0) -> List[Tuple[int, int]]:
	""" n distinct seeded (row, col) pairs, fewer if the image is smaller.
	"""
	rng = np.random.default_rng(seed)
	flat = rng.choice(height * width, size=min(n, height * width), replace=False)
	return [(int(i // width), int(i % width)) for i in flat]


def spectral_plot(gt: HSICube, pred: HSICube, pixels: Sequence[Tuple[int, int]],
		path: Optional[str] = None) -> pd.DataFrame:
	""" One block of B rows per pixel: pixel, row, col, band_index, gt, pred.
	"""
	g, p = _pair(gt, pred)
	h, w, bands = g.shape
	blocks = []
	for k, (i, j) in enumerate(pixels):
		if not (0 <= i < h and 0 <= j < w):
			raise PixelIndexError(f"pixel ({i}, {j}) outside {h} x {w} image")
		blocks.append(pd.DataFrame({
			"pixel": k,
			"row": i,
			"col": j,
			"band_index": np.arange(bands),
			"gt": g[i, j],
			"pred": p[i, j],
		}, columns=SPECTRA_COLUMNS))
	frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=SPECTRA_COLUMNS)
	if path is not None:
		write_table(frame, path)
	return frame


##################################################

			##### FLOPS #####

##################################################


@dataclass
class FlopsEstimate:
	""" Raw operation counts per named layer; a multiply-add counts as 2.
	"""
	layers: Dict[str, int] = field(default_factory=dict)

	@property
	def total(self) -> int:
		return int(sum(self.layers.values()))

	def add(self, name: str, count: int) -> None:
		self.layers[name] = self.layers.get(name, 0) + int(count)

	def merge(self, other: "FlopsEstimate", prefix: str) -> "FlopsEstimate":
		for name, count in other.layers.items():
			self.add(f"{prefix}.{name}", count)
		return self


def conv_flops(kernel_elements: int, in_channels: int, out_channels: int, *output_dims: int) -> int:
	return 2 * kernel_elements * in_channels * out_channels * int(np.prod(output_dims, dtype=np.int64))


def teacher_flops(config: ModelConfig, pixels: int = 1, part: str = "all") -> FlopsEstimate:
	""" Per-pixel teacher cost times the pixel count. part: encoder, decoder or all.
	"""
	estimate = FlopsEstimate()
	widths = config.teacher_widths
	levels = config.level_count
	channels = (1,) + widths
	length = config.bands
	if part in ("encoder", "all"):
		for l in range(levels):
			cin, cout = channels[l], channels[l + 1]
			hidden = max(cout // config.se_ratio, 1)
			estimate.add(f"encoder.levels.{l}.conv", conv_flops(3, cin, cout, length) * pixels)
			estimate.add(f"encoder.levels.{l}.se", 2 * 2 * cout * hidden * pixels)
			length //= 2
		estimate.add("encoder.project", 2 * channels[-1] * length * config.latent * pixels)
	if part in ("decoder", "all"):
		top = widths[-1] if widths else 1
		length = config.bands >> levels
		estimate.add("decoder.project", 2 * config.latent * top * length * pixels)
		for i, l in enumerate(reversed(range(levels))):
			cin, cout = widths[l], widths[max(l - 1, 0)]
			hidden = max(cout // config.se_ratio, 1)
			estimate.add(f"decoder.levels.{i}.conv", conv_flops(3, cin, cout, length) * pixels)
			estimate.add(f"decoder.levels.{i}.se", 2 * 2 * cout * hidden * pixels)
			length *= 2
		out = widths[0] if widths else 1
		estimate.add("decoder.output", 2 * out * length * config.bands * pixels)
	if part not in ("encoder", "decoder", "all"):
		raise ContractError(f"unknown teacher part {part!r}")
	return estimate


def _block_flops(estimate: FlopsEstimate, name: str, channels: int, heads: int, expansion: int,
		height: int, width: int) -> None:
	hw = height * width
	hidden = channels * expansion
	per_head = channels // heads
	for branch in ("query", "key", "value"):
		estimate.add(f"{name}.attention.{branch}", conv_flops(1, channels, channels, hw) + conv_flops(9, 1, channels, hw))
	estimate.add(f"{name}.attention.scores", heads * 2 * per_head * per_head * hw)
	estimate.add(f"{name}.attention.project", conv_flops(1, channels, channels, hw))
	for gate in ("gate1", "gate2"):
		estimate.add(f"{name}.{gate}", conv_flops(1, channels, hidden, hw) + conv_flops(9, 1, hidden, hw))
	estimate.add(f"{name}.fusion", conv_flops(1, hidden, channels, hw))


def student_flops(config: ModelConfig, height: int, width: int, out_channels: Optional[int] = None) -> FlopsEstimate:
	estimate = FlopsEstimate()
	channels = config.student_channels
	heads = config.student_heads
	out_channels = out_channels or config.latent
	estimate.add("embedding", conv_flops(1, 3, channels[0], height, width))
	for l in range(4):
		h, w = height >> l, width >> l
		for b in range(config.blocks[l]):
			_block_flops(estimate, f"encoder.{l}.blocks.{b}", channels[l], heads[l], config.ffn_expansion, h, w)
		if l < 3:
			estimate.add(f"down.{l}", conv_flops(1, channels[l], channels[l + 1], h // 2, w // 2))
			estimate.add(f"up.{l}", conv_flops(1, channels[l + 1], channels[l], h, w))
			for b in range(config.blocks[l]):
				_block_flops(estimate, f"decoder.{l}.blocks.{b}", channels[l], heads[l], config.ffn_expansion, h, w)
	estimate.add("refine", conv_flops(1, channels[0], channels[0], height, width))
	estimate.add("head", conv_flops(1, channels[0], out_channels, height, width))
	return estimate


def hydra_flops(config: ModelConfig, height: int, width: int) -> FlopsEstimate:
	""" Inference cost: Student plus the Teacher decoder over every pixel.
	"""
	estimate = FlopsEstimate().merge(student_flops(config, height, width), "student")
	return estimate.merge(teacher_flops(config, height * width, part="decoder"), "teacher")


##################################################

			##### LINEAR BASELINE #####

##################################################


class LinearBaseline:
	""" Per-pixel least-squares affine map RGB -> B bands.
	"""

	def __init__(self):
		self.coef: Optional[np.ndarray] = None

	@staticmethod
	def _design(rgb: np.ndarray) -> np.ndarray:
		return np.hstack([rgb, np.ones((rgb.shape[0], 1))])

	def fit(self, rgb_pixels: np.ndarray, hsi_pixels: np.ndarray) -> "LinearBaseline":
		rgb_pixels = np.asarray(rgb_pixels, dtype=np.float64).reshape(-1, 3)
		hsi_pixels = np.asarray(hsi_pixels, dtype=np.float64)
		hsi_pixels = hsi_pixels.reshape(rgb_pixels.shape[0], -1)
		self.coef, _, _, _ = linalg.lstsq(self._design(rgb_pixels), hsi_pixels)
		return self

	def fit_samples(self, samples: Sequence[Sample]) -> "LinearBaseline":
		rgb = np.concatenate([s.rgb.values.reshape(-1, 3) for s in samples])
		hsi = np.concatenate([s.cube.pixels() for s in samples])
		return self.fit(rgb, hsi)

	def predict(self, image: RGBImage) -> HSICube:
		if self.coef is None:
			raise ContractError("LinearBaseline.predict called before fit")
		h, w, _ = image.shape
		spectra = self._design(image.values.reshape(-1, 3)) @ self.coef
		return HSICube(spectra.reshape(h, w, -1))
