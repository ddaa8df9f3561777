"""
Exception hierarchy. Every error carries the process exit code the
command line reports for it:

	0 success, 2 config error, 3 data error, 4 numeric failure.
"""


class HydraError(Exception):
	exit_code = 1


class ConfigError(HydraError):
	exit_code = 2


class PipelineOrderError(ConfigError):
	""" A training stage was requested before its prerequisite checkpoint exists.
	"""


class ContractError(HydraError):
	""" A caller broke an operation's precondition (non-scalar backward,
	L >= B, mismatched optimizer state, ...).
	"""
	exit_code = 2


class DimensionError(HydraError, ValueError):
	exit_code = 2


class InputShapeError(DimensionError):
	pass


class DataError(HydraError):
	exit_code = 3


class CubeFormatError(DataError):
	pass


class BadMagicError(CubeFormatError):
	pass


class TruncatedPayloadError(CubeFormatError):
	pass


class DimensionOverflowError(CubeFormatError):
	pass


class UnsupportedVersionError(CubeFormatError):
	pass


class NumericError(HydraError, ArithmeticError):
	exit_code = 4


class FreezeViolationError(HydraError):
	""" A frozen parameter group changed during training.
	"""
	exit_code = 4


class PixelIndexError(HydraError, IndexError):
	exit_code = 2
