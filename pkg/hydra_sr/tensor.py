"""
Dense float64 tensors with reverse-mode gradients.

Each differentiable operation is a `Function` subclass: `forward` works on
numpy arrays, `backward` maps the gradient of the output to one gradient per
input. `Function.apply` wraps the result in a `Tensor` that remembers its
creator, and `ComputeGraph` replays those creators in reverse topological
order.

Batched layouts are used internally (N x C x L for spectra, N x C x H x W for
images). The public functional wrappers also accept the unbatched layouts
(C x L, C x H x W) and strip the batch axis again on the way out.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

LAYERNORM_EPS = 1e-6
GRAD_CHECK_STEP = 1e-5

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
	return getattr(_grad_mode, "enabled", True)


@contextmanager
def no_grad():
	""" Build no graph inside this block. Thread-local, so inference
	workers never see a trainer's setting.
	"""
	previous = is_grad_enabled()
	_grad_mode.enabled = False
	try:
		yield
	finally:
		_grad_mode.enabled = previous


def as_tensor(value: ArrayLike) -> "Tensor":
	if isinstance(value, Tensor):
		return value
	return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
	""" Sum a broadcast gradient back down to `shape`.
	"""
	while grad.ndim > len(shape):
		grad = grad.sum(axis=0)
	for axis, size in enumerate(shape):
		if size == 1 and grad.shape[axis] != 1:
			grad = grad.sum(axis=axis, keepdims=True)
	return grad


class Function:
	""" Base class for differentiable operations.
	"""

	def __init__(self, *inputs: "Tensor"):
		self.inputs = inputs

	def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
		raise NotImplementedError(f"{type(self).__name__}.forward")

	def backward(self, grad: np.ndarray):
		raise NotImplementedError(f"{type(self).__name__}.backward")

	@classmethod
	def apply(cls, *inputs: ArrayLike, **kwargs) -> "Tensor":
		tensors = tuple(as_tensor(t) for t in inputs)
		func = cls(*tensors)
		out = func.forward(*(t.data for t in tensors), **kwargs)
		if not np.all(np.isfinite(out)):
			if all(np.all(np.isfinite(t.data)) for t in tensors):
				raise NumericError(f"{cls.__name__} produced non-finite values from finite inputs")
			raise NumericError(f"{cls.__name__} received non-finite input")
		requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
		return Tensor._wrap(out, requires_grad, func if requires_grad else None)


class Tensor:
	""" N-dimensional float64 array with optional gradient tracking.

	The data buffer is never mutated by operations; only `grad` is written,
	and only by `backward`.
	"""

	__array_priority__ = 100

	def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
		if isinstance(data, Tensor):
			data = data.data
		self.data = np.array(data, dtype=np.float64)
		self.requires_grad = requires_grad
		self.grad: Optional[np.ndarray] = None
		self.creator: Optional[Function] = None
		self.name = name

	@classmethod
	def _wrap(cls, data: np.ndarray, requires_grad: bool, creator: Optional[Function]) -> "Tensor":
		out = cls.__new__(cls)
		out.data = np.asarray(data, dtype=np.float64)
		out.requires_grad = requires_grad
		out.grad = None
		out.creator = creator
		out.name = None
		return out

	@property
	def shape(self) -> Tuple[int, ...]:
		return self.data.shape

	@property
	def ndim(self) -> int:
		return self.data.ndim

	@property
	def size(self) -> int:
		return self.data.size

	def item(self) -> float:
		if self.data.size != 1:
			raise ContractError(f"tensor of shape {self.shape} is not a scalar")
		return float(self.data.reshape(-1)[0])

	def numpy(self) -> np.ndarray:
		return self.data.copy()

	def __repr__(self) -> str:
		label = f" name={self.name!r}" if self.name else ""
		return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

	# Arithmetic
	def __add__(self, other: ArrayLike) -> "Tensor":
		return Add.apply(self, other)

	def __radd__(self, other: ArrayLike) -> "Tensor":
		return Add.apply(other, self)

	def __sub__(self, other: ArrayLike) -> "Tensor":
		return Sub.apply(self, other)

	def __rsub__(self, other: ArrayLike) -> "Tensor":
		return Sub.apply(other, self)

	def __mul__(self, other: ArrayLike) -> "Tensor":
		return Mul.apply(self, other)

	def __rmul__(self, other: ArrayLike) -> "Tensor":
		return Mul.apply(other, self)

	def __truediv__(self, other: ArrayLike) -> "Tensor":
		return Div.apply(self, other)

	def __rtruediv__(self, other: ArrayLike) -> "Tensor":
		return Div.apply(other, self)

	def __neg__(self) -> "Tensor":
		return Neg.apply(self)

	def __pow__(self, exponent: float) -> "Tensor":
		return Pow.apply(self, exponent=float(exponent))

	def __matmul__(self, other: ArrayLike) -> "Tensor":
		return MatMul.apply(self, other)

	# Reductions and movement
	def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
		return Sum.apply(self, axis=axis, keepdims=keepdims)

	def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
		return Mean.apply(self, axis=axis, keepdims=keepdims)

	def reshape(self, *shape) -> "Tensor":
		if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
			shape = tuple(shape[0])
		return Reshape.apply(self, shape=shape)

	def transpose(self, *axes) -> "Tensor":
		if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
			axes = tuple(axes[0])
		return Transpose.apply(self, axes=axes or None)

	# Elementwise
	def exp(self) -> "Tensor":
		return Exp.apply(self)

	def abs(self) -> "Tensor":
		return Abs.apply(self)

	def relu(self) -> "Tensor":
		return ReLU.apply(self)

	def sigmoid(self) -> "Tensor":
		return Sigmoid.apply(self)

	def gelu(self) -> "Tensor":
		return GELU.apply(self)

	# Gradients
	def zero_grad(self) -> None:
		self.grad = None

	def _accumulate(self, grad: np.ndarray) -> None:
		if self.grad is None:
			self.grad = np.array(grad, dtype=np.float64)
		else:
			self.grad = self.grad + grad

	def backward(self) -> "ComputeGraph":
		if self.ndim != 0:
			raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
		graph = ComputeGraph(self)
		graph.backward()
		return graph


class ComputeGraph:
	""" Topologically ordered record of the tensors that produced `output`.

	`nodes` lists producers before consumers; backward walks it in reverse so
	each node is visited exactly once.
	"""

	def __init__(self, output: Tensor):
		self.output = output
		self.nodes: List[Tensor] = self._toposort(output)

	@staticmethod
	def _toposort(output: Tensor) -> List[Tensor]:
		order: List[Tensor] = []
		visited = set()
		stack = [(output, False)]
		while stack:
			node, expanded = stack.pop()
			if id(node) in visited:
				continue
			if expanded:
				visited.add(id(node))
				order.append(node)
				continue
			stack.append((node, True))
			if node.creator is not None:
				for parent in node.creator.inputs:
					if parent.requires_grad and id(parent) not in visited:
						stack.append((parent, False))
		return order

	@property
	def leaves(self) -> List[Tensor]:
		return [n for n in self.nodes if n.creator is None]

	def backward(self) -> None:
		if not self.output.requires_grad:
			return
		pending = {id(self.output): np.ones_like(self.output.data)}
		for node in reversed(self.nodes):
			grad = pending.pop(id(node), None)
			if grad is None:
				continue
			if node.creator is None:
				node._accumulate(grad)
				if not np.all(np.isfinite(node.grad)):
					label = node.name or repr(node)
					raise NumericError(f"non-finite gradient for {label}")
				continue
			input_grads = node.creator.backward(grad)
			if not isinstance(input_grads, tuple):
				input_grads = (input_grads,)
			for parent, parent_grad in zip(node.creator.inputs, input_grads):
				if parent_grad is None or not parent.requires_grad:
					continue
				key = id(parent)
				pending[key] = pending[key] + parent_grad if key in pending else parent_grad


##################################################

			##### ELEMENTWISE #####

##################################################


class Add(Function):
	def forward(self, a, b):
		return a + b

	def backward(self, grad):
		a, b = self.inputs
		return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Function):
	def forward(self, a, b):
		return a - b

	def backward(self, grad):
		a, b = self.inputs
		return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Function):
	def forward(self, a, b):
		return a * b

	def backward(self, grad):
		a, b = self.inputs
		return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)


class Div(Function):
	def forward(self, a, b):
		return a / b

	def backward(self, grad):
		a, b = self.inputs
		ga = grad / b.data
		gb = -grad * a.data / (b.data * b.data)
		return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Neg(Function):
	def forward(self, a):
		return -a

	def backward(self, grad):
		return -grad


class Pow(Function):
	def forward(self, a, exponent):
		self.exponent = exponent
		return a ** exponent

	def backward(self, grad):
		a = self.inputs[0].data
		return grad * self.exponent * a ** (self.exponent - 1)


class Exp(Function):
	def forward(self, a):
		self.out = np.exp(a)
		return self.out

	def backward(self, grad):
		return grad * self.out


class Abs(Function):
	def forward(self, a):
		return np.abs(a)

	def backward(self, grad):
		return grad * np.sign(self.inputs[0].data)


class ReLU(Function):
	def forward(self, a):
		return np.maximum(a, 0.0)

	def backward(self, grad):
		return grad * (self.inputs[0].data > 0)


class Sigmoid(Function):
	def forward(self, a):
		self.out = special.expit(a)
		return self.out

	def backward(self, grad):
		return grad * self.out * (1.0 - self.out)


class GELU(Function):
	""" Exact GELU, x * Phi(x).
	"""

	def forward(self, a):
		self.cdf = 0.5 * (1.0 + special.erf(a / np.sqrt(2.0)))
		return a * self.cdf

	def backward(self, grad):
		a = self.inputs[0].data
		pdf = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
		return grad * (self.cdf + a * pdf)


class Huber(Function):
	""" Elementwise Huber penalty of an error tensor.
	"""

	def forward(self, e, delta):
		self.delta = delta
		magnitude = np.abs(e)
		return np.where(magnitude <= delta, 0.5 * e * e, delta * (magnitude - 0.5 * delta))

	def backward(self, grad):
		return grad * np.clip(self.inputs[0].data, -self.delta, self.delta)


##################################################

			##### REDUCTION / MOVEMENT #####

##################################################


class MatMul(Function):
	def forward(self, a, b):
		if a.ndim < 2 or b.ndim < 2:
			raise DimensionError("matmul needs operands of rank >= 2")
		if a.shape[-1] != b.shape[-2]:
			raise DimensionError(f"matmul inner sizes differ: {a.shape} @ {b.shape}")
		return np.matmul(a, b)

	def backward(self, grad):
		a, b = self.inputs
		ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
		gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
		return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Sum(Function):
	def forward(self, a, axis, keepdims):
		self.axis, self.keepdims = axis, keepdims
		return np.asarray(a.sum(axis=axis, keepdims=keepdims))

	def backward(self, grad):
		shape = self.inputs[0].shape
		if self.axis is not None and not self.keepdims:
			grad = np.expand_dims(grad, self.axis)
		return np.broadcast_to(grad, shape).copy()


class Mean(Function):
	def forward(self, a, axis, keepdims):
		self.axis, self.keepdims = axis, keepdims
		out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
		self.count = a.size // max(out.size, 1)
		return out

	def backward(self, grad):
		shape = self.inputs[0].shape
		if self.axis is not None and not self.keepdims:
			grad = np.expand_dims(grad, self.axis)
		return np.broadcast_to(grad / self.count, shape).copy()


class Reshape(Function):
	def forward(self, a, shape):
		try:
			return a.reshape(shape)
		except ValueError as e:
			raise DimensionError(f"cannot reshape {a.shape} into {shape}") from e

	def backward(self, grad):
		return grad.reshape(self.inputs[0].shape)


class Transpose(Function):
	def forward(self, a, axes):
		self.axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
		return np.transpose(a, self.axes)

	def backward(self, grad):
		return np.transpose(grad, np.argsort(self.axes))


##################################################

			##### NETWORK OPERATIONS #####

##################################################


class Conv1d(Function):
	""" Cross-correlation over the last axis with zero padding.
	x: N x Cin x L, weight: Cout x Cin x K, bias: Cout.
	"""

	def forward(self, x, weight, bias, stride, padding):
		n, cin, length = x.shape
		cout, wcin, k = weight.shape
		if wcin != cin:
			raise DimensionError(f"conv1d kernel expects {wcin} input channels, got {cin}")
		if stride < 1:
			raise ContractError(f"conv1d stride must be >= 1, got {stride}")
		if k > length + 2 * padding:
			raise DimensionError(f"conv1d kernel size {k} exceeds padded length {length + 2 * padding}")
		xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
		windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
		self.stride, self.padding = stride, padding
		self.padded_shape = xp.shape
		self.windows = windows
		return np.einsum("nclk,ock->nol", windows, weight, optimize=True) + bias[None, :, None]

	def backward(self, grad):
		x, weight, _ = self.inputs
		k = weight.shape[2]
		lout = grad.shape[2]
		gw = np.einsum("nol,nclk->ock", grad, self.windows, optimize=True)
		gb = grad.sum(axis=(0, 2))
		gxp = np.zeros(self.padded_shape)
		span = self.stride * (lout - 1) + 1
		for j in range(k):
			gxp[:, :, j:j + span:self.stride] += np.einsum("nol,oc->ncl", grad, weight.data[:, :, j])
		gx = gxp[:, :, self.padding:self.padding + x.shape[2]]
		return gx, gw, gb


class MaxPool1d(Function):
	""" Non-overlapping max pooling; the L mod window tail is dropped.
	"""

	def forward(self, x, window):
		if window < 1:
			raise ContractError(f"maxpool window must be >= 1, got {window}")
		n, c, length = x.shape
		lout = length // window
		if lout == 0:
			raise DimensionError(f"maxpool window {window} is larger than input length {length}")
		blocks = x[:, :, :lout * window].reshape(n, c, lout, window)
		# argmax keeps the first maximum on ties
		self.index = blocks.argmax(axis=-1)
		self.window = window
		return np.take_along_axis(blocks, self.index[..., None], axis=-1)[..., 0]

	def backward(self, grad):
		n, c, length = self.inputs[0].shape
		lout = grad.shape[2]
		blocks = np.zeros((n, c, lout, self.window))
		np.put_along_axis(blocks, self.index[..., None], grad[..., None], axis=-1)
		gx = np.zeros((n, c, length))
		gx[:, :, :lout * self.window] = blocks.reshape(n, c, lout * self.window)
		return gx


class Upsample1dNearest(Function):
	def forward(self, x, factor):
		if factor < 1:
			raise ContractError(f"upsample factor must be >= 1, got {factor}")
		self.factor = factor
		return np.repeat(x, factor, axis=-1)

	def backward(self, grad):
		shape = self.inputs[0].shape
		return grad.reshape(*shape, self.factor).sum(axis=-1)


class Conv2dPointwise(Function):
	""" 1x1 convolution, optionally strided. x: N x C x H x W, weight: Cout x C x 1 x 1.
	"""

	def forward(self, x, weight, bias, stride):
		if weight.shape[1] != x.shape[1]:
			raise DimensionError(f"pointwise kernel expects {weight.shape[1]} channels, got {x.shape[1]}")
		self.stride = stride
		self.sampled = x[:, :, ::stride, ::stride]
		return np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], self.sampled, optimize=True) + bias[None, :, None, None]

	def backward(self, grad):
		x, weight, _ = self.inputs
		gw = np.einsum("nohw,nchw->oc", grad, self.sampled, optimize=True)[:, :, None, None]
		gb = grad.sum(axis=(0, 2, 3))
		gs = np.einsum("nohw,oc->nchw", grad, weight.data[:, :, 0, 0], optimize=True)
		gx = np.zeros(x.shape)
		gx[:, :, ::self.stride, ::self.stride] = gs
		return gx, gw, gb


class Conv2dDepthwise(Function):
	""" One k x k filter per channel, stride 1, 'same' zero padding.
	x: N x C x H x W, weight: C x 1 x k x k.
	"""

	def forward(self, x, weight, bias):
		n, c, h, w = x.shape
		if weight.shape[0] != c or weight.shape[1] != 1:
			raise DimensionError(f"depthwise kernel {weight.shape} does not match {c} channels")
		k = weight.shape[2]
		p = k // 2
		xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
		out = np.zeros(x.shape)
		for i in range(k):
			for j in range(k):
				out += weight[None, :, 0, i, j, None, None] * xp[:, :, i:i + h, j:j + w]
		self.padded = xp
		return out + bias[None, :, None, None]

	def backward(self, grad):
		x, weight, _ = self.inputs
		n, c, h, w = x.shape
		k = weight.shape[2]
		p = k // 2
		gw = np.zeros(weight.shape)
		gxp = np.zeros(self.padded.shape)
		for i in range(k):
			for j in range(k):
				gw[:, 0, i, j] = np.einsum("nchw,nchw->c", grad, self.padded[:, :, i:i + h, j:j + w])
				gxp[:, :, i:i + h, j:j + w] += grad * weight.data[None, :, 0, i, j, None, None]
		gb = grad.sum(axis=(0, 2, 3))
		return gxp[:, :, p:p + h, p:p + w], gw, gb


class Upsample2dNearest(Function):
	def forward(self, x, factor):
		self.factor = factor
		return x.repeat(factor, axis=2).repeat(factor, axis=3)

	def backward(self, grad):
		n, c, h, w = self.inputs[0].shape
		f = self.factor
		return grad.reshape(n, c, h, f, w, f).sum(axis=(3, 5))


class LayerNorm(Function):
	""" Normalize over the channel axis (axis 1) at every position.
	"""

	def forward(self, x, gamma, beta, eps):
		c = x.shape[1]
		if gamma.shape != (c,) or beta.shape != (c,):
			raise DimensionError(f"layernorm affine shape {gamma.shape} does not match {c} channels")
		self.affine_shape = (1, c) + (1,) * (x.ndim - 2)
		mu = x.mean(axis=1, keepdims=True)
		centered = x - mu
		var = (centered * centered).mean(axis=1, keepdims=True)
		self.inv_std = 1.0 / np.sqrt(var + eps)
		self.xhat = centered * self.inv_std
		return gamma.reshape(self.affine_shape) * self.xhat + beta.reshape(self.affine_shape)

	def backward(self, grad):
		_, gamma, _ = self.inputs
		gxhat = grad * gamma.data.reshape(self.affine_shape)
		gx = self.inv_std * (
			gxhat
			- gxhat.mean(axis=1, keepdims=True)
			- self.xhat * (gxhat * self.xhat).mean(axis=1, keepdims=True)
		)
		axes = tuple(i for i in range(grad.ndim) if i != 1)
		return gx, (grad * self.xhat).sum(axis=axes), grad.sum(axis=axes)


class Softmax(Function):
	def forward(self, x, axis):
		self.axis = axis
		e = np.exp(x - x.max(axis=axis, keepdims=True))
		self.out = e / e.sum(axis=axis, keepdims=True)
		return self.out

	def backward(self, grad):
		y = self.out
		return y * (grad - (grad * y).sum(axis=self.axis, keepdims=True))


##################################################

			##### FUNCTIONAL API #####

##################################################


def _zeros_bias(channels: int) -> Tensor:
	return Tensor(np.zeros(channels))


def _batched(x: Tensor, rank: int) -> Tuple[Tensor, bool]:
	""" Add a leading batch axis to an unbatched input of the given rank.
	"""
	if x.ndim == rank - 1:
		return x.reshape((1,) + x.shape), True
	if x.ndim != rank:
		raise DimensionError(f"expected a rank {rank - 1} or {rank} tensor, got shape {x.shape}")
	return x, False


def _unbatched(out: Tensor, squeeze: bool) -> Tensor:
	return out.reshape(out.shape[1:]) if squeeze else out


def conv1d(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None,
		stride: int = 1, padding: int = 0) -> Tensor:
	x, squeeze = _batched(as_tensor(x), 3)
	weight = as_tensor(weight)
	bias = _zeros_bias(weight.shape[0]) if bias is None else as_tensor(bias)
	return _unbatched(Conv1d.apply(x, weight, bias, stride=stride, padding=padding), squeeze)


def maxpool1d(x: ArrayLike, window: int) -> Tensor:
	x, squeeze = _batched(as_tensor(x), 3)
	return _unbatched(MaxPool1d.apply(x, window=window), squeeze)


def upsample1d_nearest(x: ArrayLike, factor: int) -> Tensor:
	return Upsample1dNearest.apply(x, factor=factor)


def conv2d_pointwise(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None,
		stride: int = 1) -> Tensor:
	x, squeeze = _batched(as_tensor(x), 4)
	weight = as_tensor(weight)
	bias = _zeros_bias(weight.shape[0]) if bias is None else as_tensor(bias)
	return _unbatched(Conv2dPointwise.apply(x, weight, bias, stride=stride), squeeze)


def conv2d_depthwise(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
	x, squeeze = _batched(as_tensor(x), 4)
	weight = as_tensor(weight)
	bias = _zeros_bias(weight.shape[0]) if bias is None else as_tensor(bias)
	return _unbatched(Conv2dDepthwise.apply(x, weight, bias), squeeze)


def upsample2d_nearest(x: ArrayLike, factor: int) -> Tensor:
	x, squeeze = _batched(as_tensor(x), 4)
	return _unbatched(Upsample2dNearest.apply(x, factor=factor), squeeze)


def layernorm(x: ArrayLike, gamma: ArrayLike, beta: ArrayLike, eps: float = LAYERNORM_EPS) -> Tensor:
	""" Channel layer norm. Rank-4 inputs are N x C x H x W; lower ranks are
	unbatched with channels first.
	"""
	x = as_tensor(x)
	squeeze = x.ndim < 4
	if squeeze:
		x = x.reshape((1,) + x.shape)
	return _unbatched(LayerNorm.apply(x, gamma, beta, eps=eps), squeeze)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
	return Softmax.apply(x, axis=axis)


def linear(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
	""" x @ weight.T + bias, weight stored as (out, in).
	"""
	out = as_tensor(x) @ as_tensor(weight).transpose()
	return out if bias is None else out + bias


def huber(error: ArrayLike, delta: float = 1.0) -> Tensor:
	return Huber.apply(error, delta=float(delta))


##################################################

			##### GRADIENT CHECKING #####

##################################################


def grad_check(f: Callable[[Tensor], Tensor], point: ArrayLike, tol: float = 1e-4,
		step: float = GRAD_CHECK_STEP) -> float:
	""" Max over coordinates of |analytic - numeric| / max(1, |numeric|),
	with central differences at `point`.
	"""
	base = as_tensor(point).numpy()
	x = Tensor(base, requires_grad=True)
	f(x).backward()
	analytic = np.zeros_like(base) if x.grad is None else x.grad
	numeric = np.zeros_like(base)
	with no_grad():
		for i in range(base.size):
			plus, minus = base.copy(), base.copy()
			plus.flat[i] += step
			minus.flat[i] -= step
			numeric.flat[i] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * step)
	error = _relative_error(analytic, numeric)
	if error >= tol:
		logger.warning(f"grad_check error {error:.3e} exceeds tolerance {tol:.1e}")
	return error


def grad_check_params(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], tol: float = 1e-4,
		step: float = GRAD_CHECK_STEP, max_coords: Optional[int] = None, seed: int = 0) -> float:
	""" Same oracle as grad_check, over the leaves a closure depends on.
	With max_coords, only that many seeded coordinates per parameter are checked.
	"""
	params = list(params)
	for p in params:
		p.zero_grad()
	loss_fn().backward()
	rng = np.random.default_rng(seed)
	worst = 0.0
	with no_grad():
		for p in params:
			analytic = np.zeros_like(p.data) if p.grad is None else p.grad
			coords = np.arange(p.data.size)
			if max_coords is not None and coords.size > max_coords:
				coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
			flat = p.data.reshape(-1)
			numeric, sampled = [], []
			for i in coords:
				original = flat[i]
				flat[i] = original + step
				up = loss_fn().item()
				flat[i] = original - step
				down = loss_fn().item()
				flat[i] = original
				numeric.append((up - down) / (2.0 * step))
				sampled.append(analytic.reshape(-1)[i])
			worst = max(worst, _relative_error(np.array(sampled), np.array(numeric)))
	if worst >= tol:
		logger.warning(f"grad_check_params error {worst:.3e} exceeds tolerance {tol:.1e}")
	return worst


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
	if analytic.size == 0:
		return 0.0
	return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
