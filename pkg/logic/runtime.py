"""
Seed derivation and worker fan-out shared by every stage.

All randomness is keyed off one master seed. A stream is identified by
(master_seed, stage, index) and built from numpy's SeedSequence, so sample
k of the dataset gets the same generator no matter which worker draws it.
"""

from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np
from joblib import Parallel, delayed

from config.settings import settings

DATASET_STREAM = 1
SPLIT_STREAM = 2
TRAIN_STREAM = 3
CV_STREAM = 4
DESIGN_STREAM = 5

T = TypeVar("T")
R = TypeVar("R")


def rng_stream(master_seed: int, stage: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stage), int(index)]))


def int_seed(master_seed: int, stage: int, index: int = 0) -> int:
    """32-bit integer seed for libraries that take `random_state`."""
    state = np.random.SeedSequence([int(master_seed), int(stage), int(index)]).generate_state(1)
    return int(state[0])


def resolve_threads(threads: Optional[int] = None) -> int:
    n = settings.FIBRIL_THREADS if threads is None else threads
    return max(1, int(n))


def parallel_map(fn: Callable[..., R], items: Iterable[T], threads: Optional[int] = None,
                 prefer: Optional[str] = None) -> List[R]:
    """Apply fn to each item, returning results in submission order."""
    items = list(items)
    n_jobs = resolve_threads(threads)
    if n_jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return Parallel(n_jobs=n_jobs, prefer=prefer)(delayed(fn)(item) for item in items)
