"""Общие фикстуры тестов."""

import os

# без файлового sink при тестах; задается до импорта src.settings
os.environ.setdefault("LOG_FILE", "")

import numpy as np
import pytest

from src.schemas import Architecture, TrainConfig, WarmupConfig


def pytest_addoption(parser):
    parser.addoption(
        "--full-scale",
        action="store_true",
        default=False,
        help="запустить полномасштабные воспроизведения"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-scale"):
        return
    skip = pytest.mark.skip(reason="нужен --full-scale")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_arch():
    """3 -> 4 -> 4 -> 1."""
    return Architecture(widths=[3, 4, 4, 1])


@pytest.fixture
def fast_config():
    """Короткое обучение без разогрева."""
    return TrainConfig(
        batch_size=16,
        n_critic=2,
        epochs=2,
        warmup=WarmupConfig(initial_iters=0, every=0),
        seed=7,
        log_every=1000
    )


@pytest.fixture
def write_config(tmp_path):
    """Записать файл конфигурации key = value."""
    def _write(lines, name="experiment.cfg"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    return _write
