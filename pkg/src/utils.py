"""Утилиты: именованные потоки случайности, батчинг по эпохам, прогресс."""

import time
from typing import List, Optional

import numpy as np
from loguru import logger

from .config import RNG_STREAMS


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Независимый генератор для именованного подпотока корневого seed."""
    if stream not in RNG_STREAMS:
        raise ValueError(f"Неизвестный поток случайности: {stream}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(RNG_STREAMS[stream],))
    return np.random.default_rng(sequence)


def batch_items(items: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Разделить массив на полные батчи заданного размера (остаток отбрасывается)."""
    if batch_size <= 0:
        raise ValueError("batch_size должен быть больше 0")

    full = len(items) // batch_size
    return [items[i * batch_size:(i + 1) * batch_size] for i in range(full)]


class EpochBatcher:
    """Выборка батчей без возвращения внутри эпохи.

    Каждая эпоха начинается с перемешивания индексов; когда полных батчей
    не остается, индексы перемешиваются заново.
    """

    def __init__(self, size: int, batch_size: int, rng: np.random.Generator):
        if batch_size > size:
            raise ValueError(f"batch_size {batch_size} больше размера выборки {size}")
        self.size = size
        self.batch_size = batch_size
        self.rng = rng
        self.passes = 0
        self._batches: List[np.ndarray] = []

    def next(self) -> np.ndarray:
        """Следующий батч индексов."""
        if not self._batches:
            order = self.rng.permutation(self.size)
            self._batches = batch_items(order, self.batch_size)
            self._batches.reverse()
            self.passes += 1
        return self._batches.pop()


class ProgressTracker:
    """Отслеживание прогресса длинных циклов."""

    def __init__(self, total: int, description: str = "Обработка", log_every: Optional[int] = None):
        self.total = total
        self.processed = 0
        self.start_time = time.time()
        self.description = description
        self.log_every = log_every or max(1, total // 10)

    def update(self, message: str = ""):
        """Обновить счетчик."""
        self.processed += 1

        if self.processed % self.log_every == 0 or self.processed == self.total:
            self._log_progress(message)

    def _log_progress(self, message: str):
        """Логирование прогресса."""
        elapsed = time.time() - self.start_time
        rate = self.processed / elapsed if elapsed > 0 else 0

        logger.info(
            f"{self.description}: {self.processed}/{self.total} "
            f"({self.processed/self.total*100:.1f}%) "
            f"Скорость: {rate:.1f}/сек {message}"
        )

    def finish(self):
        """Финальная статистика."""
        elapsed = time.time() - self.start_time
        logger.info(
            f"{self.description} завершено: {self.processed}/{self.total} "
            f"за {elapsed:.1f}сек."
        )
