import numpy as np
import pytest

from hydra_sr import tensor as T
from hydra_sr.errors import ContractError, DimensionError, NumericError
from hydra_sr.tensor import Tensor, grad_check, grad_check_params, no_grad

TOL = 1e-4


def weighted(op, shape, seed=0):
	""" Scalar test function sum(op(x) * R) with a fixed random R of the output shape.
	"""
	cache = {}

	def f(x):
		out = op(x)
		if "r" not in cache:
			cache["r"] = np.random.default_rng(seed).normal(size=out.shape)
		return (out * cache["r"]).sum()
	return f


class TestGraph:

	def test_shared_node_accumulates(self):
		x = Tensor([1.5, -2.0], requires_grad=True)
		(x * x + x).sum().backward()
		assert np.allclose(x.grad, 2 * x.data + 1)

	def test_backward_requires_scalar(self):
		x = Tensor(np.ones(3), requires_grad=True)
		with pytest.raises(ContractError):
			(x * 2).backward()

	def test_item_requires_single_element(self):
		with pytest.raises(ContractError):
			Tensor([1.0, 2.0]).item()

	def test_non_finite_forward_raises(self):
		with pytest.raises(NumericError):
			Tensor([1.0]) / Tensor([0.0])

	def test_non_finite_gradient_raises(self):
		x = Tensor(0.0, requires_grad=True)
		with pytest.raises(NumericError):
			(x ** 0.5).backward()

	def test_no_grad_builds_no_graph(self):
		x = Tensor([1.0], requires_grad=True)
		with no_grad():
			y = x * 3
		assert not y.requires_grad
		assert y.creator is None

	def test_toposort_lists_producers_first(self):
		x = Tensor(2.0, requires_grad=True)
		y = x * 3
		z = (y + x).sum()
		graph = z.backward()
		order = [id(n) for n in graph.nodes]
		assert order.index(id(x)) < order.index(id(y)) < order.index(id(z))
		assert x.grad == pytest.approx(4.0)

	def test_broadcast_gradient_is_reduced(self):
		x = Tensor(np.ones((2, 3)), requires_grad=True)
		b = Tensor(np.ones(3), requires_grad=True)
		(x + b).sum().backward()
		assert b.grad.shape == (3,)
		assert np.allclose(b.grad, 2.0)


class TestElementwiseGradients:

	@pytest.mark.parametrize("seed", range(10))
	def test_arithmetic(self, seed):
		point = np.random.default_rng(seed).uniform(0.5, 2.0, size=(3, 4))
		other = np.random.default_rng(seed + 100).uniform(0.5, 2.0, size=(4,))
		assert grad_check(weighted(lambda x: x * other + x / other - x ** 3.0, point.shape), point) < TOL

	@pytest.mark.parametrize("name", ["exp", "sigmoid", "gelu", "relu", "abs"])
	def test_unary(self, name):
		point = np.random.default_rng(1).normal(size=(5,))
		assert grad_check(weighted(lambda x: getattr(x, name)(), point.shape), point) < TOL

	def test_huber_both_regions(self):
		point = np.array([-2.5, -0.4, 0.3, 1.7])
		assert grad_check(lambda x: T.huber(x, 1.0).sum(), point) < TOL

	def test_huber_piecewise_values(self):
		assert T.huber(Tensor([0.5, 2.0]), 1.0).mean().item() == pytest.approx(0.8125)

	def test_matmul_and_reductions(self):
		rng = np.random.default_rng(3)
		w = rng.normal(size=(4, 2))
		point = rng.normal(size=(3, 4))
		assert grad_check(lambda x: (x @ w).mean() + x.sum(axis=0).exp().sum(), point) < TOL

	def test_reshape_transpose(self):
		point = np.random.default_rng(4).normal(size=(2, 3, 4))
		op = lambda x: x.transpose(0, 2, 1).reshape(2, 12)
		assert grad_check(weighted(op, point.shape), point) < TOL


class TestNetworkOperations:

	def test_conv1d_is_cross_correlation(self):
		out = T.conv1d(np.array([[1.0, 2.0, 3.0]]), np.array([[[1.0, 0.0, -1.0]]]), padding=1)
		assert np.allclose(out.data, [[-2.0, -2.0, 2.0]])

	@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1)])
	def test_conv1d_gradients(self, stride, padding):
		rng = np.random.default_rng(stride + padding)
		weight = Tensor(rng.normal(size=(3, 2, 3)), requires_grad=True)
		bias = Tensor(rng.normal(size=(3,)), requires_grad=True)
		point = rng.normal(size=(2, 2, 7))
		op = lambda x: T.conv1d(x, weight, bias, stride=stride, padding=padding)
		assert grad_check(weighted(op, point.shape), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=op(x).shape)
		assert grad_check_params(lambda: (op(x) * r).sum(), [weight, bias]) < TOL

	def test_maxpool_first_max_on_ties_and_tail_dropped(self):
		x = Tensor([[[1.0, 1.0, 2.0, 0.0, 5.0]]], requires_grad=True)
		out = T.maxpool1d(x, 2)
		assert np.array_equal(out.data, [[[1.0, 2.0]]])
		out.sum().backward()
		assert np.array_equal(x.grad, [[[1.0, 0.0, 1.0, 0.0, 0.0]]])

	def test_maxpool_gradient(self):
		point = np.random.default_rng(5).normal(size=(2, 3, 9))
		assert grad_check(weighted(lambda x: T.maxpool1d(x, 2), point.shape), point) < TOL

	def test_upsample1d(self):
		point = np.random.default_rng(6).normal(size=(2, 3, 4))
		out = T.upsample1d_nearest(Tensor(point), 2)
		assert out.shape == (2, 3, 8)
		assert np.array_equal(out.data[..., ::2], point)
		assert grad_check(weighted(lambda x: T.upsample1d_nearest(x, 2), point.shape), point) < TOL

	@pytest.mark.parametrize("stride", [1, 2])
	def test_pointwise_conv(self, stride):
		rng = np.random.default_rng(stride)
		weight = Tensor(rng.normal(size=(5, 3, 1, 1)), requires_grad=True)
		bias = Tensor(rng.normal(size=(5,)), requires_grad=True)
		point = rng.normal(size=(2, 3, 4, 4))
		op = lambda x: T.conv2d_pointwise(x, weight, bias, stride=stride)
		assert op(Tensor(point)).shape == (2, 5, 4 // stride, 4 // stride)
		assert grad_check(weighted(op, point.shape), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=op(x).shape)
		assert grad_check_params(lambda: (op(x) * r).sum(), [weight, bias]) < TOL

	def test_depthwise_conv(self):
		rng = np.random.default_rng(7)
		weight = Tensor(rng.normal(size=(3, 1, 3, 3)), requires_grad=True)
		bias = Tensor(rng.normal(size=(3,)), requires_grad=True)
		point = rng.normal(size=(2, 3, 4, 5))
		op = lambda x: T.conv2d_depthwise(x, weight, bias)
		assert op(Tensor(point)).shape == point.shape
		assert grad_check(weighted(op, point.shape), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=point.shape)
		assert grad_check_params(lambda: (op(x) * r).sum(), [weight, bias]) < TOL

	def test_depthwise_centre_tap_is_identity(self):
		weight = np.zeros((2, 1, 3, 3))
		weight[:, 0, 1, 1] = 1.0
		x = np.random.default_rng(8).normal(size=(2, 4, 4))
		assert np.array_equal(T.conv2d_depthwise(x, weight).data, x)

	def test_upsample2d(self):
		point = np.random.default_rng(9).normal(size=(1, 2, 2, 3))
		assert T.upsample2d_nearest(Tensor(point), 2).shape == (1, 2, 4, 6)
		assert grad_check(weighted(lambda x: T.upsample2d_nearest(x, 2), point.shape), point) < TOL

	def test_layernorm_normalizes_channels(self):
		x = np.random.default_rng(10).normal(size=(2, 4, 3, 3))
		out = T.layernorm(x, np.ones(4), np.zeros(4)).data
		centered = x - x.mean(axis=1, keepdims=True)
		expected = centered / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + T.LAYERNORM_EPS)
		assert np.allclose(out, expected)
		assert np.allclose(out.mean(axis=1), 0.0, atol=1e-12)

	def test_layernorm_gradients(self):
		rng = np.random.default_rng(11)
		gamma = Tensor(rng.normal(size=(4,)), requires_grad=True)
		beta = Tensor(rng.normal(size=(4,)), requires_grad=True)
		point = rng.normal(size=(2, 4, 2, 3))
		op = lambda x: T.layernorm(x, gamma, beta)
		assert grad_check(weighted(op, point.shape), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=point.shape)
		assert grad_check_params(lambda: (op(x) * r).sum(), [gamma, beta]) < TOL

	def test_softmax_rows_sum_to_one(self):
		x = np.random.default_rng(12).normal(size=(3, 5)) * 50
		out = T.softmax(x, axis=-1).data
		assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)

	def test_softmax_gradient(self):
		point = np.random.default_rng(13).normal(size=(2, 3, 4))
		assert grad_check(weighted(lambda x: T.softmax(x, axis=-1), point.shape), point) < TOL

	def test_shape_errors(self):
		with pytest.raises(DimensionError):
			T.conv1d(np.ones((1, 2, 5)), np.ones((1, 3, 3)))
		with pytest.raises(DimensionError):
			Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
		with pytest.raises(DimensionError):
			T.maxpool1d(np.ones((1, 1, 1)), 2)


class TestInvariants:

	def test_softmax_of_large_equal_logits(self):
		out = T.softmax(np.array([1000.0, 1000.0])).data
		assert np.all(np.isfinite(out))
		assert np.array_equal(out, [0.5, 0.5])

	@pytest.mark.parametrize("shift", [-50.0, 3.0, 700.0])
	def test_softmax_shift_invariance(self, shift):
		x = np.random.default_rng(20).normal(size=(3, 6))
		assert np.allclose(T.softmax(x + shift).data, T.softmax(x).data, atol=1e-12)

	@pytest.mark.parametrize("factor", [1, 2, 3])
	def test_maxpool_undoes_upsample(self, factor):
		x = np.random.default_rng(21).normal(size=(2, 3, 5))
		out = T.maxpool1d(T.upsample1d_nearest(Tensor(x), factor), factor)
		assert np.array_equal(out.data, x)

	def test_composite_conv_norm_softmax_gradient(self):
		rng = np.random.default_rng(22)
		weight = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
		bias = Tensor(rng.normal(size=(4,)), requires_grad=True)
		gamma = Tensor(rng.uniform(0.5, 1.5, size=(4,)), requires_grad=True)
		beta = Tensor(rng.normal(size=(4,)), requires_grad=True)
		point = rng.normal(size=(2, 8))

		def op(x):
			features = T.conv1d(x, weight, bias, padding=1)
			return T.softmax(T.layernorm(features, gamma, beta), axis=-1)

		assert grad_check(weighted(op, point.shape), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=(4, 8))
		assert grad_check_params(lambda: (op(x) * r).sum(), [weight, bias, gamma, beta]) < TOL


@pytest.mark.parametrize("seed", range(10))
class TestGradientsAcrossSeeds:

	def test_conv1d(self, seed):
		rng = np.random.default_rng(100 + seed)
		weight = Tensor(rng.normal(size=(3, 2, 3)), requires_grad=True)
		point = rng.normal(size=(2, 2, 6))
		op = lambda x: T.conv1d(x, weight, padding=1)
		assert grad_check(weighted(op, point.shape, seed), point) < TOL
		x = Tensor(point)
		r = rng.normal(size=(2, 3, 6))
		assert grad_check_params(lambda: (op(x) * r).sum(), [weight]) < TOL

	def test_maxpool1d(self, seed):
		point = np.random.default_rng(200 + seed).normal(size=(2, 3, 8))
		assert grad_check(weighted(lambda x: T.maxpool1d(x, 2), point.shape, seed), point) < TOL

	def test_layernorm(self, seed):
		rng = np.random.default_rng(300 + seed)
		gamma, beta = rng.normal(size=(4,)), rng.normal(size=(4,))
		point = rng.normal(size=(2, 4, 2, 2))
		assert grad_check(weighted(lambda x: T.layernorm(x, gamma, beta), point.shape, seed), point) < TOL

	def test_softmax(self, seed):
		point = np.random.default_rng(400 + seed).normal(size=(3, 5)) * 3
		assert grad_check(weighted(lambda x: T.softmax(x, axis=-1), point.shape, seed), point) < TOL
