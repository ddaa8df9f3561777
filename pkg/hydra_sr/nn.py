"""
Parameter containers shared by the Teacher and the Student.

Parameters are addressed by dotted names built from attribute names in
declaration order ("encoder.levels.0.conv.weight"); those names are the
checkpoint record names and the handles for freezing.
"""

import hashlib
import logging
from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
	""" Learnable leaf. Frozen parameters have requires_grad False.
	"""

	def __init__(self, data, name=None):
		super().__init__(data, requires_grad=True, name=name)


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> Parameter:
	""" U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
	"""
	bound = 1.0 / np.sqrt(max(fan_in, 1))
	return Parameter(rng.uniform(-bound, bound, size=shape))


def _matches(name: str, prefix: str) -> bool:
	return prefix == "" or name == prefix or name.startswith(prefix + ".")


class Module:
	""" Base class: walks Parameter, Module and list-of-Module attributes.
	"""

	def __call__(self, *args, **kwargs):
		return self.forward(*args, **kwargs)

	def forward(self, *args, **kwargs):
		raise NotImplementedError

	def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
		for key, value in vars(self).items():
			name = f"{prefix}{key}"
			if isinstance(value, Parameter):
				if value.name is None:
					value.name = name
				yield name, value
			elif isinstance(value, Module):
				yield from value.named_parameters(name + ".")
			elif isinstance(value, (list, tuple)):
				for i, item in enumerate(value):
					if isinstance(item, Module):
						yield from item.named_parameters(f"{name}.{i}.")

	def parameters(self) -> List[Parameter]:
		return [p for _, p in self.named_parameters()]

	def num_parameters(self) -> int:
		return int(sum(p.size for p in self.parameters()))

	def freeze(self, prefix: str = "") -> None:
		for name, p in self.named_parameters():
			if _matches(name, prefix):
				p.requires_grad = False
				p.grad = None

	def unfreeze(self, prefix: str = "") -> None:
		for name, p in self.named_parameters():
			if _matches(name, prefix):
				p.requires_grad = True

	def frozen_names(self) -> List[str]:
		return [name for name, p in self.named_parameters() if not p.requires_grad]

	def zero_grad(self) -> None:
		for p in self.parameters():
			p.zero_grad()

	def state_dict(self) -> Dict[str, np.ndarray]:
		return {name: p.data.copy() for name, p in self.named_parameters()}

	def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
		own = dict(self.named_parameters())
		missing = sorted(set(own) - set(state))
		unknown = sorted(set(state) - set(own))
		if missing or unknown:
			raise ConfigError(f"state does not match model: missing {missing[:3]}, unknown {unknown[:3]}")
		for name, p in own.items():
			value = np.asarray(state[name], dtype=np.float64)
			if value.shape != p.shape:
				raise DimensionError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
			p.data[...] = value

	def fingerprint(self, prefix: str = "") -> str:
		""" SHA-256 over names, shapes and raw bytes of the matching parameters.
		"""
		digest = hashlib.sha256()
		for name, p in self.named_parameters():
			if not _matches(name, prefix):
				continue
			digest.update(name.encode())
			digest.update(np.asarray(p.shape, dtype="<u4").tobytes())
			digest.update(p.data.astype("<f8").tobytes())
		return digest.hexdigest()


##################################################

			##### LAYERS #####

##################################################


class SpectralConv(Module):
	""" 1D convolution along the spectrum, kernel 3 / padding 1 by default.
	"""

	def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
			kernel_size: int = 3, padding: int = 1):
		fan_in = in_channels * kernel_size
		self.weight = init_uniform(rng, (out_channels, in_channels, kernel_size), fan_in)
		self.bias = init_uniform(rng, (out_channels,), fan_in)
		self.padding = padding

	def forward(self, x: Tensor) -> Tensor:
		return T.conv1d(x, self.weight, self.bias, stride=1, padding=self.padding)


class Dense(Module):
	def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
		self.weight = init_uniform(rng, (out_features, in_features), in_features)
		self.bias = init_uniform(rng, (out_features,), in_features)

	def forward(self, x: Tensor) -> Tensor:
		return T.linear(x, self.weight, self.bias)


class PointwiseConv(Module):
	def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, stride: int = 1):
		self.weight = init_uniform(rng, (out_channels, in_channels, 1, 1), in_channels)
		self.bias = init_uniform(rng, (out_channels,), in_channels)
		self.stride = stride

	def forward(self, x: Tensor) -> Tensor:
		return T.conv2d_pointwise(x, self.weight, self.bias, stride=self.stride)


class DepthwiseConv(Module):
	def __init__(self, channels: int, rng: np.random.Generator, kernel_size: int = 3):
		fan_in = kernel_size * kernel_size
		self.weight = init_uniform(rng, (channels, 1, kernel_size, kernel_size), fan_in)
		self.bias = init_uniform(rng, (channels,), fan_in)

	def forward(self, x: Tensor) -> Tensor:
		return T.conv2d_depthwise(x, self.weight, self.bias)


class ChannelNorm(Module):
	""" Layer norm across channels with a learnable affine, gamma=1, beta=0 at init.
	"""

	def __init__(self, channels: int):
		self.gamma = Parameter(np.ones(channels))
		self.beta = Parameter(np.zeros(channels))

	def forward(self, x: Tensor) -> Tensor:
		return T.layernorm(x, self.gamma, self.beta)
