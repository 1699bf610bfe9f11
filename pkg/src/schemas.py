"""Схемы данных и типы для обучения WGAN и оценки прогнозов."""

from __future__ import annotations

from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class WGANError(Exception):
    """Базовая ошибка проекта."""
    pass


class ConfigError(WGANError):
    """Ошибка конфигурации: ключи, значения, архитектуры."""
    pass


class DataError(WGANError):
    """Ошибка входных данных."""
    pass


class NumericError(WGANError):
    """Численная ошибка во время вычислений."""
    pass


class LatentDistribution(str, Enum):
    """Распределение латентного шума."""
    UNIFORM = "uniform"
    NORMAL = "normal"


class DatasetKind(str, Enum):
    """Происхождение выборки."""
    SYNTHETIC_UNCONDITIONAL = "synthetic-unconditional"
    SYNTHETIC_CONDITIONAL = "synthetic-conditional"
    LAG_EMBEDDED = "lag-embedded"
    FILE = "file"


class ExperimentKind(str, Enum):
    """Тип эксперимента."""
    UNCONDITIONAL = "unconditional"
    CONDITIONAL = "conditional"
    SERIES = "series"


class ValueKind(str, Enum):
    """Тип значения ключа конфигурации."""
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    STR = "str"
    CHOICE = "choice"
    INT_LIST = "int_list"
    FLOAT_LIST = "float_list"
    STR_LIST = "str_list"


class ConfigKeySpec(BaseModel):
    """Описание допустимого ключа файла эксперимента."""
    kind: ValueKind
    default: str
    choices: Optional[List[str]] = None
    description: Optional[str] = None


class Architecture(BaseModel):
    """Архитектура (L, p) ReLU-сети."""
    model_config = ConfigDict(frozen=True)

    widths: List[int] = Field(..., description="p_0, ..., p_{L+1}")
    output_bound: Optional[float] = Field(None, description="Граница F для выхода")
    clamp: bool = False
    sparsity_budget: Optional[int] = Field(None, ge=1, description="Бюджет s ненулевых параметров (только диагностика)")

    @field_validator("widths")
    @classmethod
    def _check_widths(cls, widths: List[int]) -> List[int]:
        if len(widths) < 2:
            raise ValueError("нужны как минимум входная и выходная ширина")
        if any(w < 1 for w in widths):
            raise ValueError(f"все ширины должны быть >= 1: {widths}")
        return widths

    @model_validator(mode="after")
    def _check_bound(self) -> "Architecture":
        if self.output_bound is not None and self.output_bound <= 0:
            raise ValueError("граница F должна быть положительной")
        if self.clamp and self.output_bound is None:
            raise ValueError("для ограничения выхода нужна граница F")
        return self

    @property
    def depth(self) -> int:
        """Число скрытых слоев L."""
        return len(self.widths) - 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def from_hidden(
        cls,
        input_dim: int,
        hidden: List[int],
        output_dim: int,
        output_bound: Optional[float] = None,
        clamp: bool = False,
        sparsity_budget: Optional[int] = None
    ) -> "Architecture":
        """Собрать архитектуру из входной размерности, скрытых слоев и выхода."""
        return cls(
            widths=[input_dim, *hidden, output_dim],
            output_bound=output_bound,
            clamp=clamp,
            sparsity_budget=sparsity_budget
        )


class LatentConfig(BaseModel):
    """Распределение и размерность латентного пространства."""
    distribution: LatentDistribution = LatentDistribution.UNIFORM
    dim: int = Field(3, ge=1)


class WarmupConfig(BaseModel):
    """Расписание разогрева критика."""
    initial_iters: int = Field(25, ge=0)
    every: int = Field(100, ge=0)
    critic_iters: int = Field(100, ge=1)


class TrainConfig(BaseModel):
    """Гиперпараметры WGAN-GP."""
    learning_rate: float = Field(1e-4, gt=0)
    penalty_weight: float = Field(0.1, ge=0)
    batch_size: int = Field(64, ge=1)
    n_critic: int = Field(5, ge=1)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.9, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    decay_biases: bool = True
    epochs: int = Field(700, ge=1)
    warmup: WarmupConfig = Field(default_factory=WarmupConfig)
    latent: LatentConfig = Field(default_factory=LatentConfig)
    seed: int = 0
    conditional: bool = False
    log_every: int = Field(100, ge=1)


class IterationRecord(BaseModel):
    """Запись истории на одну итерацию генератора."""
    iteration: int
    epoch: int
    critic_iterations: int
    critic_objective: float
    penalty: float
    generator_objective: float
    latent_draws: int


class OTCurvePoint(BaseModel):
    """Точка кривой OT во время обучения."""
    epoch: int
    split: str
    mean: float
    std: float


class TransportEstimate(BaseModel):
    """Среднее и стандартное отклонение эмпирического W1 по повторам."""
    mean: float
    std: float = Field(..., ge=0)
    repetitions: int = Field(..., ge=1)
    batch_size: int = Field(..., ge=1)


class Interval(BaseModel):
    """Доверительный интервал (lower, upper]."""
    lower: float
    upper: float
    alpha: float = Field(..., gt=0, lt=1)

    @model_validator(mode="after")
    def _check_order(self) -> "Interval":
        if self.lower > self.upper:
            raise ValueError(f"lower > upper: {self.lower} > {self.upper}")
        return self

    def contains(self, value: float) -> bool:
        """Полуоткрытое правило принадлежности; вырожденный (c, c] содержит только c."""
        if self.lower == self.upper:
            return value == self.upper
        return self.lower < value <= self.upper


class CoverageReport(BaseModel):
    """Статистика покрытия интервалами."""
    total: int = Field(..., ge=0)
    covered: int = Field(..., ge=0)
    rate: float = Field(..., ge=0, le=1)
    flags: List[bool] = Field(default_factory=list)


class NetworkDiagnostics(BaseModel):
    """Диагностика ограничений класса сетей."""
    max_norm: float
    sparsity: int
    parameter_count: int
    sparsity_budget: Optional[int] = None
    within_budget: Optional[bool] = None


class RunReport(BaseModel):
    """Отчет о запуске команды."""
    command: str
    seed: int
    config: Dict[str, str] = Field(default_factory=dict)
    history: Dict[str, float] = Field(default_factory=dict)
    transport: Dict[str, TransportEstimate] = Field(default_factory=dict)
    coverage: Dict[str, CoverageReport] = Field(default_factory=dict)
    diagnostics: Dict[str, NetworkDiagnostics] = Field(default_factory=dict)
    wall_clock: float = 0.0

    def numeric_fields(self) -> Dict[str, Any]:
        """Все числовые поля кроме времени выполнения."""
        data = self.model_dump()
        data.pop("wall_clock")
        return data


class ExperimentConfig(BaseModel):
    """Плоская конфигурация эксперимента с ключами через точку."""
    values: Dict[str, Any] = Field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]


class PairedDataset(BaseModel):
    """Выборка (X_i, Y_i); Y отсутствует в безусловном случае."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    X: np.ndarray
    Y: Optional[np.ndarray] = None
    kind: DatasetKind

    @model_validator(mode="after")
    def _check_shapes(self) -> "PairedDataset":
        if self.X.ndim != 2:
            raise ValueError("X должен быть матрицей n×d")
        if self.Y is not None:
            if self.Y.ndim != 2 or len(self.Y) != len(self.X):
                raise ValueError("Y должен быть матрицей с тем же числом строк, что и X")
            if not np.all(np.isfinite(self.Y)):
                raise ValueError("Y содержит нечисловые значения")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X содержит нечисловые значения")
        return self

    def __len__(self) -> int:
        return len(self.X)

    @property
    def conditional(self) -> bool:
        return self.Y is not None

    @property
    def x_dim(self) -> int:
        return self.X.shape[1]

    @property
    def y_dim(self) -> int:
        return 0 if self.Y is None else self.Y.shape[1]

    def joint(self) -> np.ndarray:
        """Совместные векторы (X, Y)."""
        if self.Y is None:
            return self.X
        return np.concatenate([self.X, self.Y], axis=1)


class SeriesFrame(BaseModel):
    """Многомерный временной ряд."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    timestamps: List[Any]
    values: np.ndarray
    columns: List[str]

    @model_validator(mode="after")
    def _check_frame(self) -> "SeriesFrame":
        if self.values.ndim != 2:
            raise ValueError("values должен быть матрицей n×p")
        if len(self.timestamps) != len(self.values):
            raise ValueError("число меток времени не совпадает с числом строк")
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("число имен колонок не совпадает с числом колонок")
        for prev, cur in zip(self.timestamps, self.timestamps[1:]):
            if not prev < cur:
                raise ValueError(f"метки времени должны строго возрастать: {prev} >= {cur}")
        return self

    def __len__(self) -> int:
        return len(self.values)

    def column_index(self, name: str) -> int:
        if name not in self.columns:
            raise KeyError(name)
        return self.columns.index(name)
