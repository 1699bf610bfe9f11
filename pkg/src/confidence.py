"""Доверительные интервалы по эмпирической функции распределения и их покрытие."""

import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .data import Statistic, StatisticError
from .schemas import CoverageReport, DataError, Interval
from .transport import Sampler


class EmptySampleError(DataError):
    """Выборка пуста или слишком мала."""
    pass


class LengthMismatchError(DataError):
    """Списки интервалов и истинных значений разной длины."""
    pass


def _sorted_sample(samples: Sequence[float], minimum: int = 1) -> np.ndarray:
    values = np.asarray(samples, dtype=np.float64).ravel()
    if len(values) < minimum:
        raise EmptySampleError(f"нужно минимум {minimum} значений, получено {len(values)}")
    return np.sort(values)


def empirical_cdf(samples: Sequence[float], x: float) -> float:
    """F(x) = доля значений выборки, не превосходящих x."""
    values = _sorted_sample(samples)
    return float(np.searchsorted(values, x, side="right") / len(values))


def _order_index(n: int, q: float) -> int:
    """1-based индекс порядковой статистики ⌈n·q⌉ в пределах [1, n]."""
    # допуск гасит ошибку округления вроде 100 * 0.975 = 97.50000000000001
    k = math.ceil(n * q - 1e-9)
    if not 1 <= k <= n:
        logger.warning(f"Индекс квантили {k} вне [1, {n}], обрезан")
        k = min(max(k, 1), n)
    return k


def quantile_interval(samples: Sequence[float], alpha: float) -> Interval:
    """Интервал (s_(⌈Nα/2⌉), s_(⌈N(1-α/2)⌉)] = {x : F(x) ∈ (α/2, 1-α/2]}."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha должен лежать в (0, 1), получено {alpha}")
    values = _sorted_sample(samples, minimum=2)
    n = len(values)
    lower = values[_order_index(n, alpha / 2) - 1]
    upper = values[_order_index(n, 1 - alpha / 2) - 1]
    return Interval(lower=float(lower), upper=float(upper), alpha=alpha)


def coverage(intervals: Sequence[Interval], truths: Sequence[float]) -> CoverageReport:
    """Доля истинных значений внутри своих интервалов (lower, upper]."""
    if len(intervals) != len(truths):
        raise LengthMismatchError(f"{len(intervals)} интервалов и {len(truths)} значений")
    flags = [interval.contains(float(t)) for interval, t in zip(intervals, truths)]
    total = len(flags)
    covered = sum(flags)
    return CoverageReport(
        total=total,
        covered=covered,
        rate=covered / total if total else 0.0,
        flags=flags
    )


def sigma_band(samples: Sequence[float], k: float = 3.0) -> Tuple[float, float, float]:
    """Полоса mean ± k·std (только для отчета, не для покрытия)."""
    values = _sorted_sample(samples)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return mean, mean - k * std, mean + k * std


def generated_interval(
    generator: Sampler,
    condition: Optional[np.ndarray],
    statistic: Statistic,
    count: int,
    alpha: float,
    rng: np.random.Generator,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None
) -> Tuple[Interval, np.ndarray]:
    """Интервал по T(g(Z*_j[, y])), j = 1..count, со свежими латентными векторами.

    transform применяется к сгенерированным точкам до статистики (например,
    обратная нормализация). Возвращает интервал и значения статистики.
    """
    if not statistic.is_scalar:
        raise StatisticError(f"интервалы строятся только для скалярной статистики, получено {statistic.name}")
    generated = generator.sample(count, rng, condition)
    if transform is not None:
        generated = transform(generated)
    values = statistic(generated)
    return quantile_interval(values, alpha), values


def intervals_for_conditions(
    generator: Sampler,
    conditions: np.ndarray,
    statistic: Statistic,
    count: int,
    alpha: float,
    rng: np.random.Generator,
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    sigma_k: float = 3.0
) -> Tuple[List[Interval], List[Tuple[float, float, float]]]:
    """Интервалы и полосы mean ± k·sigma для каждой строки условий."""
    intervals, bands = [], []
    for stream, condition in zip(rng.spawn(len(conditions)), conditions):
        interval, values = generated_interval(
            generator, condition, statistic, count, alpha, stream, transform
        )
        intervals.append(interval)
        bands.append(sigma_band(values, sigma_k))
    return intervals, bands
