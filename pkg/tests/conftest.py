import numpy as np
import pytest

from hydra_sr.config import ModelConfig, StageConfig
from hydra_sr.data import Sample, generate_synthetic_cube, hsi_to_rgb, sensitivity_matrix


@pytest.fixture
def rng():
	return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
	""" B=8, L=2: two teacher levels (8 -> 4 -> 2), student widths 4..32.
	"""
	return ModelConfig(bands=8, latent=2, teacher_width=4, se_ratio=2, student_width=4,
					   heads=1, blocks=(1, 1, 1, 1), ffn_expansion=1)


def make_samples(n, height=8, width=8, bands=8, materials=2, seed=0):
	sensitivity = sensitivity_matrix(bands)
	samples = []
	for i in range(n):
		cube = generate_synthetic_cube(seed + i, height, width, bands, materials)
		samples.append(Sample(f"cube_{i:03d}", cube, hsi_to_rgb(cube, sensitivity)))
	return samples


@pytest.fixture
def tiny_samples():
	return make_samples(3)


@pytest.fixture
def fast_stages():
	""" Two-epoch schedules for every stage, seeded like a run with seed 0.
	"""
	stages = {s: StageConfig.default(s, seed=0) for s in (1, 2, 3)}
	for stage in stages.values():
		stage.epochs = 2
		stage.batch_size = 64 if stage.stage == 1 else 2
		stage.learning_rate = 1e-3
	return stages
