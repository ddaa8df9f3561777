"""
Thread fan-out for inference. Chunk boundaries depend only on the row
count, never on the worker count, so results are identical for any
HYDRA_THREADS value.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from .config import resolve_workers
from .tensor import no_grad

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 4096

Item = TypeVar("Item")


def _run(fn: Callable, items: Sequence, workers: Optional[int]) -> List:
	workers = resolve_workers() if workers is None else max(int(workers), 1)

	def task(item):
		# grad mode is thread-local; each worker opts out itself
		with no_grad():
			return fn(item)

	if workers == 1 or len(items) <= 1:
		return [task(item) for item in items]
	with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
		return list(pool.map(task, items))


def map_rows(fn: Callable[[np.ndarray], np.ndarray], rows: np.ndarray,
		chunk: int = DEFAULT_CHUNK, workers: Optional[int] = None) -> np.ndarray:
	""" Apply fn to consecutive row blocks and stack the results in row order.
	"""
	chunks = [rows[i:i + chunk] for i in range(0, len(rows), chunk)]
	return np.concatenate(_run(fn, chunks, workers), axis=0)


def map_items(fn: Callable[[Item], object], items: Sequence[Item], workers: Optional[int] = None) -> List:
	""" Apply fn to every item; output order follows input order.
	"""
	return _run(fn, list(items), workers)
