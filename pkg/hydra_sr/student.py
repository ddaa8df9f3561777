"""
RGB -> latent U-Net built from transposed-attention (MDTA) and dual-gated
feed-forward (DGFN) blocks.

Level l runs at C*2^l channels and H/2^l x W/2^l resolution, l = 0..3.
Encoder levels are joined by stride-2 pointwise convs, decoder levels by a
nearest x2 upsample followed by a pointwise conv; encoder features reach the
decoder through additive skips. The last decoder features pass a residual
refinement against the embedding, then a pointwise head emits the latent map.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import RGBImage
from .errors import ConfigError, DimensionError, InputShapeError
from .nn import ChannelNorm, DepthwiseConv, Module, Parameter, PointwiseConv
from .parallel import map_items
from .tensor import Tensor, as_tensor, no_grad

logger = logging.getLogger(__name__)

LEVELS = 4
# H and W must survive three halvings
SPATIAL_DIVISOR = 2 ** (LEVELS - 1)


def check_image_shape(height: int, width: int) -> None:
	for label, size in (("height", height), ("width", width)):
		if size < SPATIAL_DIVISOR or size % SPATIAL_DIVISOR:
			raise InputShapeError(f"image {label} {size} is not a positive multiple of {SPATIAL_DIVISOR}")


def rgb_batch(images: Sequence[RGBImage]) -> np.ndarray:
	""" Stack H x W x 3 images into an N x 3 x H x W array.
	"""
	shapes = {image.shape for image in images}
	if len(shapes) != 1:
		raise DimensionError(f"images in a batch must share one shape, got {sorted(shapes)}")
	return np.stack([image.values.transpose(2, 0, 1) for image in images])


class DConv(Module):
	""" Pointwise conv followed by a 3x3 depthwise conv.
	"""

	def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
		self.pointwise = PointwiseConv(in_channels, out_channels, rng)
		self.depthwise = DepthwiseConv(out_channels, rng)

	def forward(self, x: Tensor) -> Tensor:
		return self.depthwise(self.pointwise(x))


class MDTA(Module):
	def __init__(self, channels: int, heads: int, rng: np.random.Generator):
		if heads < 1 or channels % heads:
			raise ConfigError(f"{heads} heads do not divide {channels} channels")
		self.norm = ChannelNorm(channels)
		self.query = DConv(channels, channels, rng)
		self.key = DConv(channels, channels, rng)
		self.value = DConv(channels, channels, rng)
		self.project = PointwiseConv(channels, channels, rng)
		# temperature alpha = exp(log_alpha) stays positive under any update
		self.log_alpha = Parameter(np.array(np.log(np.sqrt(channels / heads))))
		self.channels = channels
		self.heads = heads

	@property
	def alpha(self) -> float:
		return float(np.exp(self.log_alpha.data))

	def attention(self, x: Tensor) -> Tuple[Tensor, Tensor]:
		""" Per-head channel attention (N x h x c x c, rows sum to 1) and the
		value tensor (N x h x c x HW) it mixes.
		"""
		n, c, h, w = x.shape
		per_head = c // self.heads
		normed = self.norm(x)

		def split(t: Tensor) -> Tensor:
			return t.reshape(n, self.heads, per_head, h * w)

		q = split(self.query(normed))
		k = split(self.key(normed))
		v = split(self.value(normed))
		scores = (k @ q.transpose(0, 1, 3, 2)) * (-self.log_alpha).exp()
		return T.softmax(scores, axis=-1), v

	def forward(self, x) -> Tensor:
		return mdta(x, self)


def mdta(x, params: MDTA) -> Tensor:
	""" project(attention @ V) + X, for N x C x H x W or C x H x W inputs.
	"""
	x = as_tensor(x)
	squeeze = x.ndim == 3
	if squeeze:
		x = x.reshape((1,) + x.shape)
	if x.ndim != 4 or x.shape[1] != params.channels:
		raise DimensionError(f"MDTA expects {params.channels} channels, got shape {x.shape}")
	attn, v = params.attention(x)
	mixed = (attn @ v).reshape(x.shape)
	out = params.project(mixed) + x
	return out.reshape(out.shape[1:]) if squeeze else out


class DGFN(Module):
	""" One transformer block: MDTA, then two GELU-gated DConv branches whose
	product is fused by a pointwise conv and added back onto the MDTA output.
	"""

	def __init__(self, channels: int, heads: int, expansion: int, rng: np.random.Generator):
		hidden = channels * expansion
		self.attention = MDTA(channels, heads, rng)
		self.gate1 = DConv(channels, hidden, rng)
		self.gate2 = DConv(channels, hidden, rng)
		self.fusion = PointwiseConv(hidden, channels, rng)

	def forward(self, x, skip=None) -> Tensor:
		return dgfn(x, self, skip)


def dgfn(x, params: DGFN, skip=None) -> Tensor:
	""" Encoder form: fusion(g1 * g2) + MDTA(X).
	Decoder form (skip given): fusion(g1 * g2) + MDTA(X~) + X.
	"""
	x = as_tensor(x)
	if skip is not None:
		skip = as_tensor(skip)
		if skip.shape != x.shape:
			raise DimensionError(f"skip shape {skip.shape} does not match features {x.shape}")
	attended = params.attention(x)
	gated = params.gate1(attended).gelu() * params.gate2(attended).gelu()
	out = params.fusion(gated) + attended
	return out if skip is None else out + skip


class Level(Module):
	def __init__(self, channels: int, heads: int, blocks: int, expansion: int, rng: np.random.Generator):
		self.blocks = [DGFN(channels, heads, expansion, rng) for _ in range(blocks)]

	def forward(self, x: Tensor, skip: Optional[Tensor] = None) -> Tensor:
		# only the first block of a decoder level takes the encoder skip
		for i, block in enumerate(self.blocks):
			x = block(x, skip if i == 0 else None)
		return x


class UpsampleConv(Module):
	def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
		self.conv = PointwiseConv(in_channels, out_channels, rng)

	def forward(self, x: Tensor) -> Tensor:
		return self.conv(T.upsample2d_nearest(x, 2))


class Student(Module):
	""" `forward` maps an N x 3 x H x W batch to N x out x H x W, out = L by
	default (B for the student-only variant).
	"""

	def __init__(self, config: ModelConfig, seed: int = 0, out_channels: Optional[int] = None):
		config.validate()
		rng = np.random.default_rng(seed)
		channels = config.student_channels
		heads = config.student_heads
		expansion = config.ffn_expansion
		self.config = config
		self.out_channels = out_channels or config.latent
		self.embedding = PointwiseConv(3, channels[0], rng)
		self.encoder = [Level(channels[l], heads[l], config.blocks[l], expansion, rng) for l in range(LEVELS)]
		self.down = [PointwiseConv(channels[l], channels[l + 1], rng, stride=2) for l in range(LEVELS - 1)]
		self.up = [UpsampleConv(channels[l + 1], channels[l], rng) for l in range(LEVELS - 1)]
		self.decoder = [Level(channels[l], heads[l], config.blocks[l], expansion, rng) for l in range(LEVELS - 1)]
		self.refine = PointwiseConv(channels[0], channels[0], rng)
		self.head = PointwiseConv(channels[0], self.out_channels, rng)
		self.level_shapes: List[Tuple[int, int, int]] = []
		logger.debug(f"Student C={config.student_width} out={self.out_channels} params={self.num_parameters()}")

	def expected_shape(self, level: int, height: int, width: int) -> Tuple[int, int, int]:
		return (self.config.student_width * 2 ** level, height >> level, width >> level)

	def embed(self, images) -> Tensor:
		images = as_tensor(images)
		if images.ndim != 4 or images.shape[1] != 3:
			raise InputShapeError(f"expected an N x 3 x H x W batch, got shape {images.shape}")
		check_image_shape(images.shape[2], images.shape[3])
		return self.embedding(images)

	def _check_level(self, level: int, features: Tensor, height: int, width: int) -> None:
		expected = self.expected_shape(level, height, width)
		if features.shape[1:] != expected:
			raise DimensionError(f"level {level} features {features.shape[1:]} != expected {expected}")

	def forward(self, images) -> Tensor:
		x0 = self.embed(images)
		height, width = x0.shape[2], x0.shape[3]
		skips = []
		x = x0
		for l, level in enumerate(self.encoder):
			x = level(x)
			self._check_level(l, x, height, width)
			skips.append(x)
			if l < LEVELS - 1:
				x = self.down[l](x)
		self.level_shapes = [tuple(s.shape[1:]) for s in skips]
		for l in reversed(range(LEVELS - 1)):
			x = self.decoder[l](self.up[l](x), skips[l])
			self._check_level(l, x, height, width)
		return self.head(x0 + self.refine(x))


def student_forward(image: RGBImage, student: Student) -> np.ndarray:
	""" H x W x 3 image -> H x W x out latent map, without gradients.
	"""
	h, w, _ = image.shape
	check_image_shape(h, w)
	with no_grad():
		out = student(rgb_batch([image]))
	return out.data[0].transpose(1, 2, 0)


def predict_latents(student: Student, images: Sequence[RGBImage], workers: Optional[int] = None) -> List[np.ndarray]:
	return map_items(lambda image: student_forward(image, student), images, workers)
