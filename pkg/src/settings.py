"""Настройки приложения и загрузка переменных окружения."""

import os
from typing import Optional

from dotenv import load_dotenv
from loguru import logger

from .config import DEFAULT_CONCURRENCY_LIMITS

# Загрузка переменных окружения
load_dotenv()


def get_env_var(name: str, default: Optional[str] = None, required: bool = True) -> str:
    """Получить переменную окружения с валидацией."""
    value = os.getenv(name, default)
    if required and not value:
        raise ValueError(f"Переменная окружения {name} обязательна")
    return value


def get_env_int(name: str, default: int) -> int:
    """Получить целочисленную переменную окружения."""
    raw = get_env_var(name, str(default), False)
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"Переменная окружения {name} должна быть целым числом, получено '{raw}'")
    if value < 1:
        raise ValueError(f"Переменная окружения {name} должна быть >= 1")
    return value


# Каталог отчетов по умолчанию
REPORT_DIR = get_env_var("WGAN_REPORT_DIR", "reports", False)

# Потоки для параллельных повторов OT
WORKERS = get_env_int("WGAN_WORKERS", DEFAULT_CONCURRENCY_LIMITS["ot_repetitions"])

# Настройка логирования
LOG_LEVEL = get_env_var("LOG_LEVEL", "INFO", False)
LOG_FILE = get_env_var("LOG_FILE", "wgan_forecast.log", False)


def configure_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE):
    """Пересобрать sinks loguru."""
    logger.remove()
    if log_file:
        logger.add(
            log_file,
            rotation="10 MB",
            retention="30 days",
            level=level,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}"
        )
    logger.add(
        lambda msg: print(msg, end=""),
        level=level,
        format="{time:HH:mm:ss} | {level} | {message}"
    )


configure_logging()
