"""
Run configuration.

Settings come from three layers, later ones winning:
	dataclass defaults  <  key=value config file  <  command-line flags

Config file example:

	# model
	bands=31
	latent=6
	blocks=1,1,2,2
	stage1.epochs=300
	stage2.learning_rate=2e-4
"""

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

STAGE_LOSSES = {1: "huber", 2: "mae", 3: "mse"}
STAGE_FROZEN = {
	1: ("student",),
	2: ("teacher.encoder", "teacher.decoder"),
	3: ("teacher.encoder",),
}


@dataclass
class ModelConfig:
	bands: int = 31
	latent: int = 6
	teacher_width: int = 16
	se_ratio: int = 4
	student_width: int = 16
	heads: int = 2
	blocks: Tuple[int, ...] = (1, 1, 2, 2)
	ffn_expansion: int = 2

	@property
	def level_count(self) -> int:
		""" Stride-2 teacher stages: floor(log2(B / L)).
		"""
		return max(int(math.floor(math.log2(self.bands / self.latent))), 0)

	@property
	def teacher_widths(self) -> Tuple[int, ...]:
		return tuple(self.teacher_width * 2 ** l for l in range(self.level_count))

	@property
	def student_channels(self) -> Tuple[int, ...]:
		return tuple(self.student_width * 2 ** l for l in range(4))

	@property
	def student_heads(self) -> Tuple[int, ...]:
		return tuple(self.heads * 2 ** l for l in range(4))

	def validate(self) -> "ModelConfig":
		if self.bands < 4:
			raise ConfigError(f"band count must be >= 4, got {self.bands}")
		if not 1 <= self.latent < self.bands:
			raise ConfigError(f"latent size must satisfy 1 <= L < B, got L={self.latent}, B={self.bands}")
		if min(self.teacher_width, self.student_width, self.heads, self.se_ratio, self.ffn_expansion) < 1:
			raise ConfigError("widths, heads, se_ratio and ffn_expansion must be positive")
		for width in self.teacher_widths:
			if width % self.se_ratio:
				raise ConfigError(f"SE ratio {self.se_ratio} does not divide teacher width {width}")
		if self.student_width % self.heads:
			raise ConfigError(f"{self.heads} heads do not divide student width {self.student_width}")
		if len(self.blocks) != 4 or min(self.blocks) < 1:
			raise ConfigError(f"blocks needs four positive counts, got {self.blocks}")
		return self


@dataclass
class StageConfig:
	stage: int = 1
	epochs: int = 200
	batch_size: int = 256
	learning_rate: float = 4e-4
	min_learning_rate: float = 1e-6
	loss: str = "huber"
	huber_delta: float = 1.0
	frozen_sets: Tuple[str, ...] = ()
	rng_seed: int = 0

	@classmethod
	def default(cls, stage: int, seed: int = 0) -> "StageConfig":
		if stage not in STAGE_LOSSES:
			raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
		return cls(
			stage=stage,
			epochs=200 if stage == 1 else 50 if stage == 2 else 20,
			batch_size=256 if stage == 1 else 4,
			loss=STAGE_LOSSES[stage],
			frozen_sets=STAGE_FROZEN[stage],
			rng_seed=seed + stage,
		)

	def validate(self) -> "StageConfig":
		if self.stage not in STAGE_LOSSES:
			raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
		if self.loss not in ("huber", "mae", "mse"):
			raise ConfigError(f"unknown loss {self.loss!r}")
		if self.epochs < 0 or self.batch_size < 1:
			raise ConfigError("epochs must be >= 0 and batch_size >= 1")
		if not 0 <= self.min_learning_rate <= self.learning_rate:
			raise ConfigError("need 0 <= min_learning_rate <= learning_rate")
		if self.huber_delta <= 0:
			raise ConfigError("huber_delta must be positive")
		frozen = set(self.frozen_sets)
		if self.stage == 1 and any(s.startswith("teacher") for s in frozen):
			raise ConfigError("stage 1 trains the teacher; it cannot be frozen")
		if self.stage == 2 and not {"teacher.encoder", "teacher.decoder"} <= frozen and "teacher" not in frozen:
			raise ConfigError("stage 2 requires the whole teacher frozen")
		if self.stage == 3 and "teacher.encoder" not in frozen and "teacher" not in frozen:
			raise ConfigError("stage 3 requires the teacher encoder frozen")
		if self.stage == 3 and ("teacher" in frozen or "teacher.decoder" in frozen):
			raise ConfigError("stage 3 trains the teacher decoder; it cannot be frozen")
		return self


def _default_stages() -> Dict[int, StageConfig]:
	return {s: StageConfig.default(s) for s in (1, 2, 3)}


@dataclass
class RunConfig:
	subcommand: str = ""
	data_dir: Optional[str] = None
	out_dir: str = "."
	seed: int = 0
	model: ModelConfig = field(default_factory=ModelConfig)
	stages: Dict[int, StageConfig] = field(default_factory=_default_stages)
	train_fraction: float = 0.8
	mrae_eps: float = 1e-3
	heatmap_max: float = 1.0
	pixels: int = 6

	def to_dict(self) -> Dict[str, Any]:
		out = dataclasses.asdict(self)
		out["stages"] = {str(k): v for k, v in out["stages"].items()}
		return out


##################################################

			##### CONFIG FILES #####

##################################################


def read_config_file(path: str) -> Dict[str, str]:
	""" Parse key=value lines. '#' starts a comment.
	"""
	settings = {}
	try:
		with open(path, "r") as f:
			lines = f.readlines()
	except OSError as e:
		raise ConfigError(f"cannot read config file {path}: {e}") from e
	for number, raw in enumerate(lines, start=1):
		line = raw.split("#", 1)[0].strip()
		if not line:
			continue
		if "=" not in line:
			raise ConfigError(f"{path}:{number}: expected key=value, got {raw.strip()!r}")
		key, value = (part.strip() for part in line.split("=", 1))
		settings[key] = value
	return settings


def _convert(current: Any, value: Any, key: str) -> Any:
	if not isinstance(value, str):
		return value
	try:
		if isinstance(current, bool):
			return value.lower() in ("1", "true", "yes")
		if isinstance(current, int):
			return int(value)
		if isinstance(current, float):
			return float(value)
		if isinstance(current, tuple):
			items = [v.strip() for v in value.split(",") if v.strip()]
			if current and isinstance(current[0], int):
				return tuple(int(v) for v in items)
			return tuple(items)
	except ValueError as e:
		raise ConfigError(f"bad value for {key}: {value!r}") from e
	return value


def apply_settings(config: RunConfig, settings: Dict[str, Any]) -> RunConfig:
	""" Apply flat settings (file entries or flag overrides) onto a RunConfig.
	"""
	model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
	run_fields = {f.name for f in dataclasses.fields(RunConfig)} - {"model", "stages"}
	stage_fields = {f.name for f in dataclasses.fields(StageConfig)} - {"stage"}
	for key, value in settings.items():
		if value is None:
			continue
		if key.startswith("stage") and "." in key:
			head, name = key.split(".", 1)
			try:
				stage = int(head[len("stage"):])
			except ValueError:
				raise ConfigError(f"unknown config key {key!r}")
			if stage not in config.stages or name not in stage_fields:
				raise ConfigError(f"unknown config key {key!r}")
			target = config.stages[stage]
			setattr(target, name, _convert(getattr(target, name), value, key))
		elif key in model_fields:
			setattr(config.model, key, _convert(getattr(config.model, key), value, key))
		elif key in run_fields:
			current = getattr(config, key)
			setattr(config, key, value if current is None else _convert(current, value, key))
		else:
			raise ConfigError(f"unknown config key {key!r}")
	return config


def load_run_config(subcommand: str, path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
	config = RunConfig(subcommand=subcommand)
	settings = read_config_file(path) if path else {}
	settings.update({k: v for k, v in overrides.items() if v is not None})
	apply_settings(config, settings)
	for stage, stage_config in config.stages.items():
		# stage seeds follow the run seed unless pinned explicitly
		if f"stage{stage}.rng_seed" not in settings:
			stage_config.rng_seed = config.seed + stage
		stage_config.validate()
	config.model.validate()
	return config


##################################################

			##### ENVIRONMENT / MANIFESTS #####

##################################################


def resolve_workers() -> int:
	""" Worker count: HYDRA_THREADS if set, else the CPU count.
	"""
	raw = os.environ.get("HYDRA_THREADS")
	if raw is None or raw == "":
		return max(os.cpu_count() or 1, 1)
	try:
		return max(int(raw), 1)
	except ValueError:
		raise ConfigError(f"HYDRA_THREADS must be an integer, got {raw!r}")


def file_sha256(path: str) -> str:
	digest = hashlib.sha256()
	try:
		with open(path, "rb") as f:
			for chunk in iter(lambda: f.read(1 << 20), b""):
				digest.update(chunk)
	except OSError as e:
		raise DataError(f"cannot hash {path}: {e}") from e
	return digest.hexdigest()


def input_hashes(paths: Iterable[str]) -> Dict[str, str]:
	return {os.path.basename(p): file_sha256(p) for p in sorted(paths)}


def write_manifest(out_dir: str, config: RunConfig, inputs: Iterable[str] = (),
		outputs: Iterable[str] = (), extra: Optional[Dict[str, Any]] = None,
		hashed: Optional[Mapping[str, str]] = None) -> str:
	""" Write manifest_<subcommand>.json: resolved config, seeds and input hashes.
	`hashed` carries hashes taken earlier, for inputs a command later overwrites.
	"""
	from . import __version__

	manifest = {
		"version": __version__,
		"subcommand": config.subcommand,
		"config": config.to_dict(),
		"inputs": {**(hashed or {}), **input_hashes(inputs)},
		"outputs": sorted(os.path.basename(p) for p in outputs),
	}
	if extra:
		manifest.update(extra)
	name = config.subcommand.replace("-", "_") or "run"
	path = os.path.join(out_dir, f"manifest_{name}.json")
	try:
		with open(path, "w") as f:
			json.dump(manifest, f, indent=2, sort_keys=True)
	except OSError as e:
		raise DataError(f"cannot write manifest {path}: {e}") from e
	return path
