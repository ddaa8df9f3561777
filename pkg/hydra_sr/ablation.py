"""
Latent-size sweep and training-variant comparison.
"""

import dataclasses
import logging
from typing import Callable, Dict, List, Mapping, Sequence

import numpy as np
import pandas as pd

from .config import ModelConfig, StageConfig
from .data import HSICube, Sample
from .errors import DataError
from .metrics import MRAE_EPS, evaluate
from .student import Student
from .teacher import Teacher, compression_ratio
from .training import VARIANTS, reconstruct, run_pipeline, stage2_targets, train_stage1, train_stage2, train_stage3

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["mrae", "rmse", "psnr"]


def mean_metrics(predict: Callable[[Sample], HSICube], samples: Sequence[Sample],
		eps: float = MRAE_EPS) -> Dict[str, float]:
	""" Per-image metrics of clamped predictions, averaged over the samples.
	"""
	if not samples:
		raise DataError("no evaluation samples")
	reports = [evaluate(s.cube, predict(s).clamped(), eps) for s in samples]
	return {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_COLUMNS}


def latent_sweep(train: Sequence[Sample], val: Sequence[Sample], model: ModelConfig, latents: Sequence[int],
		configs: Mapping[int, StageConfig], seed: int = 0, eps: float = MRAE_EPS) -> pd.DataFrame:
	""" For each latent size: teacher round trip after stage 1, then the full
	pipeline after stage 2 and after stage 3.
	"""
	rows: List[Dict[str, object]] = []
	for latent in latents:
		config = dataclasses.replace(model, latent=latent).validate()
		ratio = compression_ratio(config.bands, latent)
		teacher = Teacher(config, seed)
		student = Student(config, seed)
		logger.info(f"Latent sweep L={latent} (CR {ratio:.2f})")

		train_stage1(teacher, [s.cube for s in train], configs[1])
		rows.append({"latent": latent, "compression_ratio": ratio, "stage": 1,
					 **mean_metrics(lambda s: teacher.round_trip(s.cube), val, eps)})

		train_stage2(student, teacher, train, configs[2], targets=stage2_targets(teacher, train))
		rows.append({"latent": latent, "compression_ratio": ratio, "stage": 2,
					 **mean_metrics(lambda s: reconstruct(s.rgb, student, teacher), val, eps)})

		train_stage3(student, teacher, train, configs[3])
		rows.append({"latent": latent, "compression_ratio": ratio, "stage": 3,
					 **mean_metrics(lambda s: reconstruct(s.rgb, student, teacher), val, eps)})
	return pd.DataFrame(rows, columns=["latent", "compression_ratio", "stage"] + METRIC_COLUMNS)


def training_variants(train: Sequence[Sample], val: Sequence[Sample], model: ModelConfig,
		configs: Mapping[int, StageConfig], seed: int = 0, variants: Sequence[str] = VARIANTS,
		eps: float = MRAE_EPS) -> pd.DataFrame:
	rows: List[Dict[str, object]] = []
	for variant in variants:
		logger.info(f"Training variant {variant}")
		if variant == "student_only":
			teacher, student = None, Student(model, seed, out_channels=model.bands)
		else:
			teacher, student = Teacher(model, seed), Student(model, seed)
		result = run_pipeline(variant, teacher, student, train, configs)
		rows.append({"variant": variant, **mean_metrics(lambda s: result.reconstruct(s.rgb), val, eps)})
	return pd.DataFrame(rows, columns=["variant"] + METRIC_COLUMNS)
