"""
Pixel-wise spectral autoencoder with squeeze-excitation gating.

Encoder level l:  conv1d(k3, p1) -> ReLU -> F * SE(F) -> maxpool(2)
Decoder level l:  conv1d(k3, p1) -> ReLU -> F * SE(F) -> upsample(2)

N = floor(log2(B / L)) levels. A dense projection maps the flattened deepest
features to exactly L values, and the decoder mirrors it back up to B. The
decoder sees only the latent code; there are no encoder skip connections.
"""

import logging
from typing import Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import HSICube
from .errors import ContractError, DimensionError
from .nn import Dense, Module, SpectralConv
from .parallel import map_rows
from .tensor import Tensor, as_tensor, no_grad

logger = logging.getLogger(__name__)


def compression_ratio(bands: int, latent: int) -> float:
	if not 1 <= latent < bands:
		raise ContractError(f"compression needs 1 <= L < B, got B={bands}, L={latent}")
	return bands / latent


class SEBlock(Module):
	""" Squeeze (global average over the spectrum) and excite (bottleneck MLP, sigmoid).
	"""

	def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
		hidden = max(channels // ratio, 1)
		self.reduce = Dense(channels, hidden, rng)
		self.expand = Dense(hidden, channels, rng)

	def forward(self, features: Tensor) -> Tensor:
		return se_excite(features, self)


def se_excite(features, params: SEBlock) -> Tensor:
	""" Channel weights in (0,1): N x C x L -> N x C x 1, or C x L -> C x 1.
	"""
	features = as_tensor(features)
	squeeze = features.ndim == 2
	if squeeze:
		features = features.reshape((1,) + features.shape)
	n, channels = features.shape[:2]
	if channels != params.expand.weight.shape[0]:
		raise DimensionError(f"SE block expects {params.expand.weight.shape[0]} channels, got {channels}")
	pooled = features.mean(axis=-1)
	weights = params.expand(params.reduce(pooled).relu()).sigmoid()
	return weights.reshape(channels, 1) if squeeze else weights.reshape(n, channels, 1)


class EncoderLevel(Module):
	def __init__(self, in_channels: int, out_channels: int, ratio: int, rng: np.random.Generator):
		self.conv = SpectralConv(in_channels, out_channels, rng)
		self.se = SEBlock(out_channels, ratio, rng)

	def forward(self, x: Tensor) -> Tensor:
		features = self.conv(x).relu()
		return T.maxpool1d(features * self.se(features), 2)


class DecoderLevel(Module):
	def __init__(self, in_channels: int, out_channels: int, ratio: int, rng: np.random.Generator):
		self.conv = SpectralConv(in_channels, out_channels, rng)
		self.se = SEBlock(out_channels, ratio, rng)

	def forward(self, x: Tensor) -> Tensor:
		features = self.conv(x).relu()
		return T.upsample1d_nearest(features * self.se(features), 2)


class SpectralEncoder(Module):
	def __init__(self, config: ModelConfig, rng: np.random.Generator):
		channels = (1,) + config.teacher_widths
		levels = config.level_count
		self.levels = [EncoderLevel(channels[l], channels[l + 1], config.se_ratio, rng) for l in range(levels)]
		self.project = Dense(channels[-1] * (config.bands >> levels), config.latent, rng)
		self.bands = config.bands

	def forward(self, spectra: Tensor) -> Tensor:
		n = spectra.shape[0]
		x = spectra.reshape(n, 1, self.bands)
		for level in self.levels:
			x = level(x)
		return self.project(x.reshape(n, -1))


class SpectralDecoder(Module):
	def __init__(self, config: ModelConfig, rng: np.random.Generator):
		widths = config.teacher_widths
		levels = config.level_count
		self.top_channels = widths[-1] if widths else 1
		self.top_length = config.bands >> levels
		self.project = Dense(config.latent, self.top_channels * self.top_length, rng)
		# deepest level first; level l maps widths[l] -> widths[l-1] (widths[0] at l=0)
		self.levels = [
			DecoderLevel(widths[l], widths[max(l - 1, 0)], config.se_ratio, rng)
			for l in reversed(range(levels))
		]
		out_channels = widths[0] if widths else 1
		self.output = Dense(out_channels * (self.top_length << levels), config.bands, rng)

	def forward(self, latent: Tensor) -> Tensor:
		n = latent.shape[0]
		x = self.project(latent).reshape(n, self.top_channels, self.top_length)
		for level in self.levels:
			x = level(x)
		return self.output(x.reshape(n, -1))


class Teacher(Module):
	""" Spectral autoencoder. `encode`/`decode` are differentiable over
	N x B / N x L batches (single vectors are accepted too); the *_pixel and
	*_cube helpers run without gradients and return numpy arrays.
	"""

	def __init__(self, config: ModelConfig, seed: int = 0):
		config.validate()
		rng = np.random.default_rng(seed)
		self.config = config
		self.encoder = SpectralEncoder(config, rng)
		self.decoder = SpectralDecoder(config, rng)
		logger.debug(f"Teacher B={config.bands} L={config.latent} levels={config.level_count} "
					 f"params={self.num_parameters()}")

	@property
	def bands(self) -> int:
		return self.config.bands

	@property
	def latent(self) -> int:
		return self.config.latent

	def encode(self, spectra) -> Tensor:
		spectra = as_tensor(spectra)
		if spectra.shape[-1] != self.bands:
			raise DimensionError(f"teacher expects {self.bands} bands, got {spectra.shape[-1]}")
		if spectra.ndim == 1:
			return self.encoder(spectra.reshape(1, self.bands)).reshape(self.latent)
		return self.encoder(spectra)

	def decode(self, latent) -> Tensor:
		latent = as_tensor(latent)
		if latent.shape[-1] != self.latent:
			raise DimensionError(f"teacher expects latent length {self.latent}, got {latent.shape[-1]}")
		if latent.ndim == 1:
			return self.decoder(latent.reshape(1, self.latent)).reshape(self.bands)
		return self.decoder(latent)

	def forward(self, spectra) -> Tensor:
		return self.decode(self.encode(spectra))

	def encode_pixel(self, spectrum: np.ndarray) -> np.ndarray:
		with no_grad():
			return self.encode(np.asarray(spectrum, dtype=np.float64)).numpy()

	def decode_pixel(self, code: np.ndarray) -> np.ndarray:
		with no_grad():
			return self.decode(np.asarray(code, dtype=np.float64)).numpy()

	def encode_cube(self, cube: HSICube, workers: Optional[int] = None) -> np.ndarray:
		""" H x W x B cube -> H x W x L latent map.
		"""
		if cube.bands != self.bands:
			raise DimensionError(f"cube has {cube.bands} bands, teacher expects {self.bands}")
		codes = map_rows(lambda block: self.encoder(Tensor(block)).data, cube.pixels(), workers=workers)
		return codes.reshape(cube.height, cube.width, self.latent)

	def decode_cube(self, latent_map: np.ndarray, workers: Optional[int] = None) -> HSICube:
		latent_map = np.asarray(latent_map, dtype=np.float64)
		if latent_map.ndim != 3 or latent_map.shape[2] != self.latent:
			raise DimensionError(f"latent map must be H x W x {self.latent}, got {latent_map.shape}")
		h, w, _ = latent_map.shape
		spectra = map_rows(lambda block: self.decoder(Tensor(block)).data,
						   latent_map.reshape(-1, self.latent), workers=workers)
		return HSICube(spectra.reshape(h, w, self.bands))

	def round_trip(self, cube: HSICube, workers: Optional[int] = None) -> HSICube:
		return self.decode_cube(self.encode_cube(cube, workers), workers)
