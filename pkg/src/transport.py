"""Точное эмпирическое расстояние W1 между облаками точек и его оценка по батчам."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from itertools import permutations
from typing import Optional, Protocol

import numpy as np
from loguru import logger
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .config import BRUTE_FORCE_MAX_POINTS, OT_PRACTICAL_CEILING
from .schemas import ConfigError, DataError, PairedDataset, TransportEstimate


class CloudSizeError(DataError):
    """Облака разного размера или размерности."""
    pass


class EmptyCloudError(DataError):
    """Пустое облако точек."""
    pass


class OracleSizeError(ConfigError):
    """Полный перебор запрошен для слишком большого облака."""
    pass


class InsufficientDataError(DataError):
    """Данных меньше, чем нужно для батча."""
    pass


class Sampler(Protocol):
    """Источник сгенерированных точек (например, TrainedModel)."""

    def sample(
        self,
        count: int,
        rng: np.random.Generator,
        condition: Optional[np.ndarray] = None
    ) -> np.ndarray:
        ...


def _as_clouds(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("облако точек пустое")
    if a.shape != b.shape:
        raise CloudSizeError(f"облака формы {a.shape} и {b.shape} не совпадают")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise CloudSizeError("облако содержит нечисловые координаты")
    return a, b


def exact_w1(a, b) -> float:
    """(1/n)·min_π Σ |a_i - b_π(i)|₂ через точный решатель задачи о назначениях."""
    a, b = _as_clouds(a, b)
    if len(a) > OT_PRACTICAL_CEILING:
        logger.warning(
            f"Облако из {len(a)} точек больше практического потолка {OT_PRACTICAL_CEILING}"
        )
    cost = cdist(a, b, metric="euclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def brute_force_w1(a, b) -> float:
    """Тот же минимум полным перебором n! перестановок (n <= 8)."""
    a, b = _as_clouds(a, b)
    n = len(a)
    if n > BRUTE_FORCE_MAX_POINTS:
        raise OracleSizeError(f"перебор допустим для n <= {BRUTE_FORCE_MAX_POINTS}, получено {n}")
    cost = cdist(a, b, metric="euclidean")
    rows = np.arange(n)
    best = min(cost[rows, list(perm)].sum() for perm in permutations(range(n)))
    return float(best / n)


def ot_report(
    real: PairedDataset,
    generator: Sampler,
    batch_size: int,
    repetitions: int,
    rng: np.random.Generator,
    fixed_batch: bool = False,
    workers: int = 1
) -> TransportEstimate:
    """Среднее и стандартное отклонение W1 между реальными и сгенерированными батчами.

    В условном случае генератор получает условия реального батча, сравниваются
    совместные векторы (X, Y). При fixed_batch один реальный батч сравнивается
    с repetitions свежими сгенерированными батчами.
    """
    if batch_size < 1 or repetitions < 1:
        raise ValueError("batch_size и repetitions должны быть >= 1")
    if len(real) < batch_size:
        raise InsufficientDataError(f"в выборке {len(real)} точек, нужен батч {batch_size}")

    joint = real.joint()
    shared = rng.choice(len(real), size=batch_size, replace=False) if fixed_batch else None
    streams = rng.spawn(repetitions)

    def one_repetition(stream: np.random.Generator) -> float:
        idx = shared if shared is not None else stream.choice(len(real), size=batch_size, replace=False)
        if real.conditional:
            cond = real.Y[idx]
            fake = np.concatenate([generator.sample(batch_size, stream, cond), cond], axis=1)
        else:
            fake = generator.sample(batch_size, stream)
        return exact_w1(joint[idx], fake)

    if workers > 1 and repetitions > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one_repetition, streams))
    else:
        values = [one_repetition(stream) for stream in streams]

    values = np.asarray(values)
    std = float(values.std(ddof=1)) if repetitions > 1 else 0.0
    estimate = TransportEstimate(
        mean=float(values.mean()),
        std=std,
        repetitions=repetitions,
        batch_size=batch_size
    )
    logger.info(f"OT: {estimate.mean:.4f} ± {estimate.std:.4f} ({repetitions} × {batch_size})")
    return estimate
