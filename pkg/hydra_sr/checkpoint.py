"""
"HYDT" parameter checkpoints and msgpack TrainState files.

HYDT layout, little-endian:

	magic "HYDT" | version u32 | meta length u32 | msgpack meta
	section count u32
	per section:  tag length u32 | tag | record count u32
	per record:   name length u32 | name | ndim u32 | ndim x u32 dims | float64 values

Meta carries the model config, the stage that produced the file, the seed
and the student output width, enough to rebuild the models.
"""

import dataclasses
import logging
import struct
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import msgpack
import numpy as np

from .config import ModelConfig
from .errors import (
	BadMagicError,
	ConfigError,
	CubeFormatError,
	DataError,
	DimensionOverflowError,
	TruncatedPayloadError,
	UnsupportedVersionError,
)
from .nn import Module
from .student import Student
from .teacher import Teacher
from .training import TrainState

logger = logging.getLogger(__name__)

MAGIC = b"HYDT"
VERSION = 1
MAX_NDIM = 8
_U32 = struct.Struct("<I")

Section = Union[Module, Mapping[str, np.ndarray]]


def model_meta(config: ModelConfig, stage: int, seed: int, student_out: Optional[int] = None,
		variant: str = "three_stage") -> Dict[str, Any]:
	model = dataclasses.asdict(config)
	model["blocks"] = list(config.blocks)
	return {"model": model, "stage": stage, "seed": seed, "student_out": student_out, "variant": variant}


def _u32(value: int) -> bytes:
	return _U32.pack(value)


def encode_checkpoint(sections: Mapping[str, Section], meta: Mapping[str, Any]) -> bytes:
	meta_bytes = msgpack.packb(dict(meta), use_bin_type=True)
	parts = [MAGIC, _u32(VERSION), _u32(len(meta_bytes)), meta_bytes, _u32(len(sections))]
	for tag, section in sections.items():
		records = section.state_dict() if isinstance(section, Module) else dict(section)
		tag_bytes = tag.encode()
		parts += [_u32(len(tag_bytes)), tag_bytes, _u32(len(records))]
		for name, values in records.items():
			values = np.asarray(values, dtype=np.float64)
			name_bytes = name.encode()
			parts += [_u32(len(name_bytes)), name_bytes, _u32(values.ndim)]
			parts += [_u32(d) for d in values.shape]
			parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
	return b"".join(parts)


class _Reader:
	def __init__(self, raw: bytes, path: str):
		self.raw = raw
		self.path = path
		self.pos = 0

	def take(self, n: int, what: str) -> bytes:
		if self.pos + n > len(self.raw):
			raise TruncatedPayloadError(f"{self.path}: truncated while reading {what}")
		chunk = self.raw[self.pos:self.pos + n]
		self.pos += n
		return chunk

	def u32(self, what: str) -> int:
		return _U32.unpack(self.take(4, what))[0]

	def text(self, what: str) -> str:
		blob = self.take(self.u32(f"{what} length"), what)
		try:
			return blob.decode()
		except UnicodeDecodeError as e:
			raise CubeFormatError(f"{self.path}: {what} is not UTF-8: {e}") from e

	def meta(self) -> Dict[str, Any]:
		blob = self.take(self.u32("meta length"), "meta")
		try:
			meta = msgpack.unpackb(blob, raw=False)
		except (ValueError, msgpack.exceptions.UnpackException) as e:
			raise CubeFormatError(f"{self.path}: unreadable meta: {e}") from e
		if not isinstance(meta, dict):
			raise CubeFormatError(f"{self.path}: meta is {type(meta).__name__}, expected a map")
		return meta


def decode_checkpoint(raw: bytes, path: str = "<bytes>") -> Tuple[Dict[str, Any], Dict[str, Dict[str, np.ndarray]]]:
	if raw[:4] != MAGIC:
		raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
	reader = _Reader(raw, path)
	reader.take(4, "magic")
	version = reader.u32("version")
	if version != VERSION:
		raise UnsupportedVersionError(f"{path}: unsupported HYDT version {version}")
	meta = reader.meta()
	sections = {}
	for _ in range(reader.u32("section count")):
		tag = reader.text("tag")
		records = {}
		for _ in range(reader.u32(f"{tag} record count")):
			name = reader.text("record name")
			ndim = reader.u32(f"{name} ndim")
			if ndim > MAX_NDIM:
				raise DimensionOverflowError(f"{path}: record {name} claims {ndim} dimensions")
			shape = tuple(reader.u32(f"{name} dims") for _ in range(ndim))
			count = int(np.prod(shape, dtype=np.int64))
			if count * 8 > len(raw):
				raise DimensionOverflowError(f"{path}: record {name} shape {shape} exceeds file size")
			values = np.frombuffer(reader.take(8 * count, f"{name} values"), dtype="<f8")
			records[name] = values.astype(np.float64).reshape(shape)
		sections[tag] = records
	if reader.pos != len(raw):
		raise TruncatedPayloadError(f"{path}: {len(raw) - reader.pos} trailing bytes")
	return meta, sections


def save_checkpoint(path: str, sections: Mapping[str, Section], meta: Mapping[str, Any]) -> None:
	payload = encode_checkpoint(sections, meta)
	try:
		with open(path, "wb") as f:
			f.write(payload)
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e
	logger.debug(f"Wrote {path} ({len(payload)} bytes, sections {list(sections)})")


def load_checkpoint(path: str) -> Tuple[Dict[str, Any], Dict[str, Dict[str, np.ndarray]]]:
	try:
		with open(path, "rb") as f:
			raw = f.read()
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e
	return decode_checkpoint(raw, path)


def config_from_meta(meta: Mapping[str, Any]) -> ModelConfig:
	try:
		model = dict(meta["model"])
		model["blocks"] = tuple(model["blocks"])
		return ModelConfig(**model).validate()
	except (KeyError, TypeError) as e:
		raise ConfigError(f"checkpoint meta has no usable model config: {e}") from e


def build_models(meta: Mapping[str, Any], sections: Mapping[str, Mapping[str, np.ndarray]]
		) -> Tuple[Optional[Teacher], Optional[Student]]:
	""" Rebuild the models a checkpoint holds; absent sections come back as None.
	"""
	config = config_from_meta(meta)
	seed = int(meta.get("seed", 0))
	teacher = student = None
	if "teacher" in sections:
		teacher = Teacher(config, seed)
		teacher.load_state_dict(sections["teacher"])
	if "student" in sections:
		student = Student(config, seed, out_channels=meta.get("student_out"))
		student.load_state_dict(sections["student"])
	return teacher, student


##################################################

			##### TRAIN STATE #####

##################################################


def _pack_array(values: np.ndarray) -> Dict[str, Any]:
	return {"shape": list(values.shape), "data": np.ascontiguousarray(values, dtype="<f8").tobytes()}


def _unpack_array(packed: Mapping[str, Any]) -> np.ndarray:
	return np.frombuffer(packed["data"], dtype="<f8").astype(np.float64).reshape(packed["shape"])


def save_train_state(path: str, state: TrainState) -> None:
	payload = msgpack.packb({
		"stage": state.stage,
		"epoch": state.epoch,
		"step": state.step,
		"rng_seed": state.rng_seed,
		"history": list(state.history),
		"moments": {name: {"m": _pack_array(m), "v": _pack_array(v)} for name, (m, v) in state.moments.items()},
	}, use_bin_type=True)
	try:
		with open(path, "wb") as f:
			f.write(payload)
	except OSError as e:
		raise DataError(f"cannot write {path}: {e}") from e


def load_train_state(path: str) -> TrainState:
	try:
		with open(path, "rb") as f:
			packed = msgpack.unpackb(f.read(), raw=False)
	except OSError as e:
		raise DataError(f"cannot read {path}: {e}") from e
	except (ValueError, msgpack.exceptions.ExtraData) as e:
		raise DataError(f"{path}: not a train state file: {e}") from e
	return TrainState(
		stage=packed["stage"],
		epoch=packed["epoch"],
		step=packed["step"],
		rng_seed=packed["rng_seed"],
		history=[float(x) for x in packed["history"]],
		moments={name: (_unpack_array(mv["m"]), _unpack_array(mv["v"])) for name, mv in packed["moments"].items()},
	)
