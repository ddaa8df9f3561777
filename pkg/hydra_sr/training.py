"""
Three-stage training.

	stage 1  teacher autoencoding, Huber loss on pixel spectra
	stage 2  student -> frozen-teacher latents, MAE
	stage 3  decode(student(rgb)) -> ground-truth cube, MSE; teacher
	         decoder unfrozen, teacher encoder frozen

Every stage runs the same loop: per-epoch shuffles from a generator seeded
by (rng_seed, stage, epoch), Adam with bias correction, cosine decay of the
learning rate over the stage's epochs. A TrainState holding the epoch
counter, step counter and moment buffers is enough to resume a stage.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import tensor as T
from .config import StageConfig
from .data import HSICube, RGBImage, Sample
from .errors import ConfigError, ContractError, DimensionError, FreezeViolationError, NumericError
from .nn import Module, Parameter
from .student import Student, rgb_batch, student_forward
from .teacher import Teacher
from .tensor import Tensor

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

VARIANTS = ("three_stage", "stage13", "student_only")


##################################################

			##### LOSSES #####

##################################################


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
	return T.huber(pred - target, delta).mean()


def mae_loss(pred: Tensor, target) -> Tensor:
	return (pred - target).abs().mean()


def mse_loss(pred: Tensor, target) -> Tensor:
	diff = pred - target
	return (diff * diff).mean()


def stage_loss(cfg: StageConfig) -> Callable[[Tensor, Tensor], Tensor]:
	if cfg.loss == "huber":
		return lambda pred, target: huber_loss(pred, target, cfg.huber_delta)
	if cfg.loss == "mae":
		return mae_loss
	if cfg.loss == "mse":
		return mse_loss
	raise ConfigError(f"unknown loss {cfg.loss!r}")


##################################################

			##### OPTIMIZER #####

##################################################


def cosine_lr(epoch: int, epochs: int, lr: float, lr_min: float) -> float:
	""" lr at the first epoch, lr_min at the last.
	"""
	if epochs <= 1:
		return lr
	return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


@dataclass
class TrainState:
	stage: int
	epoch: int = 0
	step: int = 0
	rng_seed: int = 0
	history: List[float] = field(default_factory=list)
	moments: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def optimizer_step(params: Iterable[Tuple[str, Parameter]], state: TrainState, lr: float,
		grads: Optional[Mapping[str, np.ndarray]] = None) -> None:
	""" One Adam update over named parameters. Frozen parameters and
	parameters without a gradient are skipped; `grads` overrides p.grad.
	"""
	state.step += 1
	t = state.step
	for name, p in params:
		grad = p.grad if grads is None else grads.get(name)
		if not p.requires_grad or grad is None:
			continue
		m, v = state.moments.get(name, (np.zeros(p.shape), np.zeros(p.shape)))
		if grad.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
			raise ContractError(f"{name}: gradient {grad.shape} / moments {m.shape} do not match parameter {p.shape}")
		m = BETA1 * m + (1.0 - BETA1) * grad
		v = BETA2 * v + (1.0 - BETA2) * grad * grad
		m_hat = m / (1.0 - BETA1 ** t)
		v_hat = v / (1.0 - BETA2 ** t)
		p.data[...] = p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
		state.moments[name] = (m, v)


##################################################

			##### TRAINING LOOP #####

##################################################


class HydraModel(Module):
	""" Joint namespace so stage freeze sets read "teacher.encoder", "student", ...
	"""

	def __init__(self, teacher: Optional[Teacher] = None, student: Optional[Student] = None):
		self.teacher = teacher
		self.student = student


def epoch_order(count: int, rng_seed: int, stage: int, epoch: int) -> np.ndarray:
	return np.random.default_rng([rng_seed, stage, epoch]).permutation(count)


def _check_stage(cfg: StageConfig, stage: int) -> None:
	if cfg.stage != stage:
		raise ContractError(f"stage {stage} trainer called with a stage {cfg.stage} config")


def _new_state(cfg: StageConfig, state: Optional[TrainState]) -> TrainState:
	if state is None:
		return TrainState(stage=cfg.stage, rng_seed=cfg.rng_seed)
	if state.stage != cfg.stage or state.rng_seed != cfg.rng_seed:
		raise ContractError(f"train state is for stage {state.stage} seed {state.rng_seed}, "
							f"config is stage {cfg.stage} seed {cfg.rng_seed}")
	return state


def run_epochs(model: HydraModel, cfg: StageConfig, state: TrainState, count: int,
		batch_loss: Callable[[np.ndarray], Tensor], until_epoch: Optional[int] = None) -> TrainState:
	""" Train until state.epoch reaches min(until_epoch, cfg.epochs).

	Frozen sets are applied first and fingerprinted; any change to them by
	the end raises FreezeViolationError.
	"""
	if count < 1:
		raise ConfigError(f"stage {cfg.stage} has no training items")
	model.unfreeze()
	for prefix in cfg.frozen_sets:
		model.freeze(prefix)
	fingerprints = {prefix: model.fingerprint(prefix) for prefix in cfg.frozen_sets}
	trainable = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
	stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)

	while state.epoch < stop:
		epoch = state.epoch
		lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.min_learning_rate)
		order = epoch_order(count, cfg.rng_seed, cfg.stage, epoch)
		total = 0.0
		for batch, start in enumerate(range(0, count, cfg.batch_size)):
			index = order[start:start + cfg.batch_size]
			model.zero_grad()
			try:
				loss = batch_loss(index)
				value = loss.item()
				if not math.isfinite(value):
					raise NumericError(f"loss is {value}")
				loss.backward()
			except NumericError as e:
				raise NumericError(f"stage {cfg.stage} epoch {epoch} batch {batch}: {e}") from e
			optimizer_step(trainable, state, lr)
			total += value * len(index)
		mean = total / count
		state.history.append(mean)
		state.epoch += 1
		logger.info(f"stage {cfg.stage} epoch {epoch + 1}/{cfg.epochs} lr {lr:.3e} loss {mean:.6g}")

	for prefix, before in fingerprints.items():
		if model.fingerprint(prefix) != before:
			raise FreezeViolationError(f"frozen parameters under {prefix!r} changed during stage {cfg.stage}")
	return state


##################################################

			##### STAGES #####

##################################################


def _images(pairs: Sequence[Sample]) -> np.ndarray:
	if not pairs:
		raise ConfigError("no training pairs")
	return rgb_batch([s.rgb for s in pairs])


def _cubes(pairs: Sequence[Sample], bands: int) -> np.ndarray:
	for s in pairs:
		if s.cube.bands != bands:
			raise DimensionError(f"{s.name}: cube has {s.cube.bands} bands, model expects {bands}")
	return np.stack([s.cube.values for s in pairs])


def train_stage1(teacher: Teacher, cubes: Sequence[HSICube], cfg: StageConfig,
		state: Optional[TrainState] = None, until_epoch: Optional[int] = None) -> TrainState:
	""" Teacher autoencoding over every pixel of every cube.
	"""
	_check_stage(cfg, 1)
	for cube in cubes:
		if cube.bands != teacher.bands:
			raise DimensionError(f"cube has {cube.bands} bands, teacher expects {teacher.bands}")
	pixels = np.concatenate([cube.pixels() for cube in cubes]) if cubes else np.zeros((0, teacher.bands))
	loss_fn = stage_loss(cfg)

	def batch_loss(index: np.ndarray) -> Tensor:
		batch = Tensor(pixels[index])
		return loss_fn(teacher(batch), batch)

	state = _new_state(cfg, state)
	return run_epochs(HydraModel(teacher), cfg, state, len(pixels), batch_loss, until_epoch)


def stage2_targets(teacher: Teacher, pairs: Sequence[Sample], workers: Optional[int] = None) -> np.ndarray:
	""" Frozen-teacher latents, N x L x H x W, computed once.
	"""
	return np.stack([teacher.encode_cube(s.cube, workers).transpose(2, 0, 1) for s in pairs])


def train_stage2(student: Student, teacher: Teacher, pairs: Sequence[Sample], cfg: StageConfig,
		state: Optional[TrainState] = None, targets: Optional[np.ndarray] = None,
		until_epoch: Optional[int] = None) -> TrainState:
	""" Student distillation onto the frozen teacher's latent maps.
	"""
	_check_stage(cfg, 2)
	images = _images(pairs)
	_cubes(pairs, teacher.bands)
	if targets is None:
		targets = stage2_targets(teacher, pairs)
	loss_fn = stage_loss(cfg)

	def batch_loss(index: np.ndarray) -> Tensor:
		return loss_fn(student(images[index]), Tensor(targets[index]))

	state = _new_state(cfg, state)
	return run_epochs(HydraModel(teacher, student), cfg, state, len(pairs), batch_loss, until_epoch)


def train_stage3(student: Student, teacher: Teacher, pairs: Sequence[Sample], cfg: StageConfig,
		state: Optional[TrainState] = None, until_epoch: Optional[int] = None) -> TrainState:
	""" End-to-end refinement through the teacher decoder.
	"""
	_check_stage(cfg, 3)
	images = _images(pairs)
	cubes = _cubes(pairs, teacher.bands)
	loss_fn = stage_loss(cfg)

	def batch_loss(index: np.ndarray) -> Tensor:
		latent = student(images[index])
		n, channels, h, w = latent.shape
		spectra = teacher.decode(latent.transpose(0, 2, 3, 1).reshape(n * h * w, channels))
		return loss_fn(spectra, Tensor(cubes[index].reshape(n * h * w, teacher.bands)))

	state = _new_state(cfg, state)
	return run_epochs(HydraModel(teacher, student), cfg, state, len(pairs), batch_loss, until_epoch)


def train_student_only(student: Student, pairs: Sequence[Sample], cfg: StageConfig,
		state: Optional[TrainState] = None, until_epoch: Optional[int] = None) -> TrainState:
	""" Ablation: a B-channel student regressed straight onto the cubes with MSE.
	"""
	images = _images(pairs)
	cubes = _cubes(pairs, student.out_channels).transpose(0, 3, 1, 2)
	cfg = dataclasses.replace(cfg, loss="mse", frozen_sets=())

	def batch_loss(index: np.ndarray) -> Tensor:
		return mse_loss(student(images[index]), Tensor(cubes[index]))

	state = _new_state(cfg, state)
	return run_epochs(HydraModel(student=student), cfg, state, len(pairs), batch_loss, until_epoch)


##################################################

			##### PIPELINE #####

##################################################


def reconstruct(image: RGBImage, student: Student, teacher: Optional[Teacher] = None,
		workers: Optional[int] = None) -> HSICube:
	""" RGB -> cube. Without a teacher the student output is already spectral.
	"""
	latent = student_forward(image, student)
	if teacher is None:
		return HSICube(latent)
	return teacher.decode_cube(latent, workers)


@dataclass
class PipelineResult:
	variant: str
	teacher: Optional[Teacher]
	student: Student
	states: Dict[int, TrainState] = field(default_factory=dict)

	def reconstruct(self, image: RGBImage, workers: Optional[int] = None) -> HSICube:
		return reconstruct(image, self.student, self.teacher, workers)


def run_pipeline(variant: str, teacher: Optional[Teacher], student: Student, pairs: Sequence[Sample],
		configs: Mapping[int, StageConfig], workers: Optional[int] = None) -> PipelineResult:
	""" three_stage runs 1 -> 2 -> 3; stage13 skips distillation; student_only
	trains a B-channel student with the stage 3 schedule and no teacher.
	"""
	if variant not in VARIANTS:
		raise ConfigError(f"unknown training variant {variant!r}, expected one of {VARIANTS}")
	result = PipelineResult(variant, teacher if variant != "student_only" else None, student)
	if variant == "student_only":
		result.states[3] = train_student_only(student, pairs, configs[3])
		return result
	if teacher is None:
		raise ConfigError(f"variant {variant} needs a teacher")
	result.states[1] = train_stage1(teacher, [s.cube for s in pairs], configs[1])
	if variant == "three_stage":
		result.states[2] = train_stage2(student, teacher, pairs, configs[2],
										targets=stage2_targets(teacher, pairs, workers))
	result.states[3] = train_stage3(student, teacher, pairs, configs[3])
	return result


def history_frame(states: Mapping[int, TrainState]) -> pd.DataFrame:
	""" Loss history rows (epoch, stage, loss), epochs counted from 1.
	"""
	rows = [
		{"epoch": epoch + 1, "stage": stage, "loss": loss}
		for stage, state in sorted(states.items())
		for epoch, loss in enumerate(state.history)
	]
	return pd.DataFrame(rows, columns=["epoch", "stage", "loss"])
