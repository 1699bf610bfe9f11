"""Синтетические модели, латентный шум, лаговое вложение рядов, нормализация и CSV."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from .config import CONDITIONAL_DIMS, UNCONDITIONAL_DIMS
from .schemas import (
    ConfigError,
    DataError,
    DatasetKind,
    LatentConfig,
    LatentDistribution,
    PairedDataset,
    SeriesFrame
)


class UnsupportedDistributionError(ConfigError):
    """Неизвестное распределение латентного шума."""
    pass


class StatisticError(ConfigError):
    """Неизвестная или неприменимая статистика."""
    pass


class SeriesTooShortError(DataError):
    """Ряд короче r + 1."""
    pass


class ConstantColumnError(DataError):
    """Колонка постоянна на обучающем диапазоне."""
    pass


class CsvFormatError(DataError):
    """Ошибка формата CSV."""
    pass


# --- латентный шум ----------------------------------------------------------------

def sample_latent(
    spec: Union[LatentConfig, Tuple[str, int]],
    count: int,
    rng: np.random.Generator
) -> np.ndarray:
    """Матрица (count, d_Z) i.i.d. латентных векторов."""
    if isinstance(spec, LatentConfig):
        name, dim = spec.distribution, spec.dim
    else:
        name, dim = spec
    if count < 1:
        raise ValueError(f"count должен быть >= 1, получено {count}")

    try:
        distribution = LatentDistribution(name)
    except ValueError:
        raise UnsupportedDistributionError(f"Неподдерживаемое распределение: {name}")

    if distribution == LatentDistribution.UNIFORM:
        return rng.uniform(0.0, 1.0, size=(count, dim))
    return rng.standard_normal(size=(count, dim))


# --- синтетические модели ------------------------------------------------------

def g_star(z: np.ndarray) -> np.ndarray:
    """Порождающее отображение R^3 -> R^10 безусловной модели."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    s = z1 + z2 + z3
    p = z1 * z2 * z3
    return np.stack([
        np.sin(z1),
        np.sin(z2),
        np.sin(z3),
        np.exp(z1),
        z2 ** 2 + 2 * z3 ** 3,
        np.cos(2 * np.pi * p),
        p,
        s ** 2,
        s,
        # аргумент последней компоненты - z
        2 * z1 ** 4 - z2 ** 3,
    ], axis=1)


def h_map(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Кодировщик (z_1..z_7, y_1..y_3) -> R^3 условной модели."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return np.stack([
        z[:, 0] + z[:, 1] ** 2 + z[:, 2] ** 3,
        z[:, 3] * z[:, 4] + z[:, 5] * z[:, 6],
        np.sin(y[:, 0]) - y[:, 1] * y[:, 2],
    ], axis=1)


def synth_unconditional(n: int, rng: np.random.Generator) -> PairedDataset:
    """X_i = g*(Z_i), Z_i ~ U[0,1]^3."""
    if n < 1:
        raise ValueError("n должен быть >= 1")
    z = rng.uniform(0.0, 1.0, size=(n, UNCONDITIONAL_DIMS["z"]))
    return PairedDataset(X=g_star(z), kind=DatasetKind.SYNTHETIC_UNCONDITIONAL)


def synth_conditional(n: int, rng: np.random.Generator) -> PairedDataset:
    """X_i = g*(h(Z_i, Y_i)), (Z_i, Y_i) ~ U[0,1]^10."""
    if n < 1:
        raise ValueError("n должен быть >= 1")
    d_z, d_y = CONDITIONAL_DIMS["z"], CONDITIONAL_DIMS["y"]
    u = rng.uniform(0.0, 1.0, size=(n, d_z + d_y))
    z, y = u[:, :d_z], u[:, d_z:]
    return PairedDataset(X=g_star(h_map(z, y)), Y=y, kind=DatasetKind.SYNTHETIC_CONDITIONAL)


def sample_true_conditional(y: Sequence[float], count: int, rng: np.random.Generator) -> np.ndarray:
    """Выборка X | Y = y условной модели со свежими Z."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (CONDITIONAL_DIMS["y"],):
        raise ValueError(f"условие должно иметь размерность {CONDITIONAL_DIMS['y']}")
    z = rng.uniform(0.0, 1.0, size=(count, CONDITIONAL_DIMS["z"]))
    return g_star(h_map(z, np.tile(y, (count, 1))))


# --- статистики ------------------------------------------------------------------

class Statistic:
    """Именованное отображение T: 'sum', 'component:<k>' или 'all'."""

    def __init__(self, name: str):
        self.name = name.strip()
        self.component: Optional[int] = None

        if self.name == "sum" or self.name == "all":
            return
        if self.name.startswith("component:"):
            try:
                self.component = int(self.name.split(":", 1)[1])
            except ValueError:
                raise StatisticError(f"Некорректный номер компоненты: {name}")
            if self.component < 0:
                raise StatisticError(f"Номер компоненты должен быть >= 0: {name}")
            return
        raise StatisticError(f"Неизвестная статистика: {name}. Допустимы sum, component:<k>, all")

    @property
    def is_scalar(self) -> bool:
        return self.name != "all"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Применить к строкам матрицы (n, d); скалярные статистики дают (n,)."""
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if self.name == "sum":
            return values.sum(axis=1)
        if self.name == "all":
            return values
        if self.component >= values.shape[1]:
            raise StatisticError(
                f"Компонента {self.component} вне размерности {values.shape[1]}"
            )
        return values[:, self.component]

    def __repr__(self) -> str:
        return f"Statistic({self.name!r})"


# --- ряды --------------------------------------------------------------------------

def lag_embed(
    series: SeriesFrame,
    r: int,
    statistic: Union[Statistic, str],
    condition_columns: Optional[Sequence[str]] = None
) -> PairedDataset:
    """Пары (T(A_i), (A_{i-1}, ..., A_{i-r})) для i = r..n-1; первые r строк не прогнозируются."""
    if r < 1:
        raise ValueError("r должен быть >= 1")
    if len(series) < r + 1:
        raise SeriesTooShortError(f"ряд длины {len(series)} короче r + 1 = {r + 1}")
    if isinstance(statistic, str):
        statistic = Statistic(statistic)

    values = series.values
    if condition_columns:
        try:
            cols = [series.column_index(name) for name in condition_columns]
        except KeyError as e:
            raise DataError(f"Колонка условия не найдена: {e}")
        conditioning = values[:, cols]
    else:
        conditioning = values

    target = statistic(values[r:])
    X = target[:, None] if target.ndim == 1 else target
    lags = pd.DataFrame(conditioning)
    Y = pd.concat([lags.shift(k) for k in range(1, r + 1)], axis=1).iloc[r:].to_numpy(dtype=np.float64)
    return PairedDataset(X=X, Y=Y, kind=DatasetKind.LAG_EMBEDDED)


def split_frame(frame: SeriesFrame, n_train: int) -> Tuple[SeriesFrame, SeriesFrame]:
    """Первые n_train строк - обучение, остаток - тест."""
    if not 0 < n_train < len(frame):
        raise DataError(f"n_train = {n_train} вне диапазона (0, {len(frame)})")
    train = SeriesFrame(
        timestamps=frame.timestamps[:n_train],
        values=frame.values[:n_train],
        columns=frame.columns
    )
    test = SeriesFrame(
        timestamps=frame.timestamps[n_train:],
        values=frame.values[n_train:],
        columns=frame.columns
    )
    return train, test


class Normalizer:
    """Покоординатное min-max отображение в [0,1], подогнанное на обучающих строках."""

    def __init__(self, mins: np.ndarray, maxs: np.ndarray, columns: Optional[List[str]] = None):
        self.mins = np.asarray(mins, dtype=np.float64)
        self.maxs = np.asarray(maxs, dtype=np.float64)
        self.columns = columns
        if np.any(self.maxs < self.mins):
            raise ValueError("max < min в нормализаторе")

    @classmethod
    def fit(cls, values: np.ndarray, columns: Optional[List[str]] = None) -> "Normalizer":
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if len(values) == 0:
            raise DataError("пустой обучающий диапазон")
        mins = values.min(axis=0)
        maxs = values.max(axis=0)
        constant = np.flatnonzero(maxs == mins)
        if len(constant):
            names = [columns[i] if columns else str(i) for i in constant]
            raise ConstantColumnError(f"Постоянные колонки на обучающем диапазоне: {names}")
        return cls(mins, maxs, columns)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Без обрезки: тестовые значения могут выйти за [0,1]."""
        return (np.asarray(values, dtype=np.float64) - self.mins) / (self.maxs - self.mins)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * (self.maxs - self.mins) + self.mins

    def apply_frame(self, frame: SeriesFrame) -> SeriesFrame:
        return SeriesFrame(timestamps=frame.timestamps, values=self.apply(frame.values), columns=frame.columns)

    def to_document(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(), "columns": self.columns}

    @classmethod
    def from_document(cls, document: dict) -> "Normalizer":
        return cls(np.asarray(document["mins"]), np.asarray(document["maxs"]), document.get("columns"))


def fit_normalizer(frame: SeriesFrame, train_range: Union[slice, Tuple[int, int]]) -> Normalizer:
    """Подогнать нормализатор по строкам train_range."""
    rows = train_range if isinstance(train_range, slice) else slice(*train_range)
    values = frame.values[rows]
    if len(values) == 0:
        raise DataError("пустой обучающий диапазон")
    return Normalizer.fit(values, frame.columns)


# --- CSV ---------------------------------------------------------------------------

def _parse_timestamps(raw: pd.Series, path: Path) -> list:
    try:
        return [int(v) for v in raw]
    except ValueError:
        pass
    try:
        return list(pd.to_datetime(raw, format="ISO8601"))
    except (ValueError, TypeError) as e:
        raise CsvFormatError(f"{path}: первая колонка не является датой или индексом: {e}")


def load_csv(path: Union[str, Path], schema: Optional[Sequence[str]] = None) -> SeriesFrame:
    """Загрузить ряд: первая колонка - метка времени, остальные - числовые каналы.

    schema - ожидаемые имена числовых колонок; при указании берутся в этом порядке.
    """
    path = Path(path)
    if not path.exists():
        raise CsvFormatError(f"Файл не найден: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise CsvFormatError(f"{path}: пустой файл")
    except pd.errors.ParserError as e:
        raise CsvFormatError(f"{path}: рваные строки: {e}")
    except UnicodeDecodeError as e:
        raise CsvFormatError(f"{path}: файл не в кодировке UTF-8: {e}")

    columns = [str(c).strip() for c in df.columns]
    if len(columns) < 2 or any(not c or c.startswith("Unnamed") for c in columns):
        raise CsvFormatError(f"{path}: некорректная строка заголовка: {columns}")
    df.columns = columns

    # недостающие поля в коротких строках pandas заполняет NaN
    missing = df.isna().any(axis=1).to_numpy()
    if missing.any():
        row = int(np.flatnonzero(missing)[0]) + 1
        raise CsvFormatError(f"{path}: строка {row} содержит меньше полей, чем заголовок")

    value_columns = columns[1:]
    if schema is not None:
        absent = [c for c in schema if c not in value_columns]
        if absent:
            raise CsvFormatError(f"{path}: нет колонок {absent}")
        value_columns = list(schema)

    numeric = df[value_columns].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = (~np.isfinite(numeric.to_numpy(dtype=np.float64))).any(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        logger.error(f"Нечисловое значение в {path}, строка данных {row}")
        raise CsvFormatError(f"{path}: строка {row} содержит нечисловое значение")

    timestamps = _parse_timestamps(df[columns[0]].str.strip(), path)
    try:
        frame = SeriesFrame(
            timestamps=timestamps,
            values=numeric.to_numpy(dtype=np.float64),
            columns=value_columns
        )
    except ValidationError as e:
        raise CsvFormatError(f"{path}: {e}")

    logger.info(f"Загружен ряд {path}: {len(frame)} строк, {len(value_columns)} колонок")
    return frame


def write_dataset_csv(dataset: PairedDataset, path: Union[str, Path]):
    """Записать выборку: колонки x1..xd, затем y1..yk."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [f"x{j + 1}" for j in range(dataset.x_dim)]
    columns += [f"y{j + 1}" for j in range(dataset.y_dim)]
    pd.DataFrame(dataset.joint(), columns=columns).to_csv(path, index=False)
    logger.info(f"Выборка записана: {path} ({len(dataset)} строк)")


def read_dataset_csv(path: Union[str, Path]) -> PairedDataset:
    """Прочитать выборку write_dataset_csv."""
    path = Path(path)
    if not path.exists():
        raise CsvFormatError(f"Файл не найден: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CsvFormatError(f"{path}: {e}")
    except UnicodeDecodeError as e:
        raise CsvFormatError(f"{path}: файл не в кодировке UTF-8: {e}")

    x_cols = [c for c in df.columns if str(c).startswith("x")]
    y_cols = [c for c in df.columns if str(c).startswith("y")]
    if not x_cols or len(x_cols) + len(y_cols) != len(df.columns):
        raise CsvFormatError(f"{path}: ожидаются колонки x1..xd[, y1..yk], получено {list(df.columns)}")

    try:
        X = df[x_cols].to_numpy(dtype=np.float64)
        Y = df[y_cols].to_numpy(dtype=np.float64) if y_cols else None
        return PairedDataset(X=X, Y=Y, kind=DatasetKind.FILE)
    except (ValueError, ValidationError) as e:
        raise CsvFormatError(f"{path}: {e}")
