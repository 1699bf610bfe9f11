"""Командный интерфейс: simulate, train, evaluate, forecast, sweep."""

import sys
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import click
from loguru import logger

from .config import EXIT_CODES, EXPERIMENT_PRESETS
from .pipeline import ExperimentPipeline, format_summary, simulate
from .schemas import ConfigError, DataError, ExperimentConfig, NumericError
from .settings import REPORT_DIR, configure_logging
from .validators import ConfigValidator, parse_override


def _overrides(items: Sequence[str], seed: Optional[int]) -> Dict[str, str]:
    values = dict(parse_override(item) for item in items)
    if seed is not None:
        values["experiment.seed"] = str(seed)
    return values


def build_config(
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int],
    overrides: Sequence[str],
    fallback: Optional[Path] = None
) -> Tuple[ConfigValidator, ExperimentConfig]:
    """Конфигурация: файл (или config.txt модели), пресет, переопределения key=value."""
    validator = ConfigValidator()
    file_values = {}
    if config_path:
        file_values = validator.load_file(config_path)
    elif fallback is not None and fallback.exists():
        file_values = validator.load_file(fallback)
        logger.info(f"Конфигурация модели: {fallback}")
    config = validator.build(file_values, _overrides(overrides, seed), preset)
    return validator, config


def _out_dir(out: Optional[str], config: ExperimentConfig) -> Path:
    return Path(out or config["report.out"] or REPORT_DIR)


def config_options(func):
    """Общие опции команд с конфигурацией."""
    func = click.argument("overrides", nargs=-1)(func)
    func = click.option("--out", type=click.Path(), default=None, help="Каталог результатов")(func)
    func = click.option("--seed", type=int, default=None, help="Корневой seed")(func)
    func = click.option(
        "--preset", type=click.Choice(sorted(EXPERIMENT_PRESETS)), default=None, help="Пресет эксперимента"
    )(func)
    func = click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
        help="Файл key = value"
    )(func)
    return func


@click.group()
@click.option("--log-level", default=None, help="Уровень логирования (по умолчанию LOG_LEVEL)")
def cli(log_level: Optional[str]):
    """Условный WGAN-GP: обучение, OT и доверительные интервалы."""
    if log_level:
        configure_logging(level=log_level.upper())


@cli.command("simulate")
@click.option("--kind", type=click.Choice(["unconditional", "conditional"]), default="unconditional")
@click.option("--n", type=int, default=3200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV выборки")
def simulate_command(kind: str, n: int, seed: int, out: Optional[str]):
    """Синтетическая выборка в CSV."""
    if n < 1:
        raise ConfigError("--n должен быть >= 1")
    path = simulate(kind, n, seed, out or Path(REPORT_DIR) / f"{kind}_{n}_{seed}.csv")
    click.echo(f"Выборка записана: {path}")


@cli.command("train")
@config_options
@click.option("--repeats", type=int, default=None, help="Повторы с seed, seed+1, ...")
@click.option("--progress/--no-progress", default=False, help="Показать полосу прогресса")
def train_command(config_path, preset, seed, out, overrides, repeats, progress):
    """Обучить модель и записать сети, историю и отчет."""
    validator, config = build_config(config_path, preset, seed, overrides)
    pipeline = ExperimentPipeline(config, _out_dir(out, config), validator, show_progress=progress)
    click.echo(pipeline.describe())
    for report in pipeline.train(repeats):
        click.echo(format_summary(report))


@cli.command("evaluate")
@config_options
@click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None)
def evaluate_command(config_path, preset, seed, out, overrides, model_dir, data_path):
    """OT и покрытие интервалами для сохраненной модели."""
    extra = list(overrides) + ([f"data.path={data_path}"] if data_path else [])
    validator, config = build_config(config_path, preset, seed, extra, Path(model_dir) / "config.txt")
    pipeline = ExperimentPipeline(config, _out_dir(out, config), validator)
    report = pipeline.evaluate(model_dir)
    click.echo(format_summary(report))


@cli.command("forecast")
@config_options
@click.option("--model", "model_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--series", "series_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--alpha", type=float, default=None, help="Уровень интервалов")
@click.option("--r", "lags", type=int, default=None, help="Число лагов")
@click.option("--statistic", type=str, default=None, help="Статистика T для интервалов")
def forecast_command(config_path, preset, seed, out, overrides, model_dir, series_path, alpha, lags, statistic):
    """Интервалы на каждый прогнозируемый день ряда."""
    extra = list(overrides)
    if alpha is not None:
        extra.append(f"eval.alpha={alpha}")
    if lags is not None:
        extra.append(f"data.r={lags}")
    if statistic is not None:
        extra.append(f"eval.statistic={statistic}")
    validator, config = build_config(config_path, preset, seed, extra, Path(model_dir) / "config.txt")
    pipeline = ExperimentPipeline(config, _out_dir(out, config), validator)
    path, report = pipeline.forecast(model_dir, series_path)
    click.echo(f"Прогноз записан: {path}; покрытие {report.rate * 100:.2f}% ({report.covered}/{report.total})")


@cli.command("sweep")
@config_options
@click.option("--sizes", type=str, default="64,960,3200", show_default=True, help="Размеры выборки через запятую")
@click.option("--repeats", type=int, default=5, show_default=True)
def sweep_command(config_path, preset, seed, out, overrides, sizes, repeats):
    """Покрытие и OT по размерам выборки, mean (std) по повторам."""
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes: ожидаются целые числа через запятую, получено '{sizes}'")
    if repeats < 1 or not size_list:
        raise ConfigError("--repeats должен быть >= 1, --sizes не пуст")
    validator, config = build_config(config_path, preset, seed, overrides)
    pipeline = ExperimentPipeline(config, _out_dir(out, config), validator)
    table = pipeline.sweep(size_list, repeats)
    click.echo(table.to_string(index=False))


def exit_code_for(error: BaseException) -> int:
    """Код выхода по категории ошибки."""
    if isinstance(error, ConfigError):
        return EXIT_CODES["config"]
    if isinstance(error, DataError):
        return EXIT_CODES["data"]
    if isinstance(error, NumericError):
        return EXIT_CODES["numeric"]
    return EXIT_CODES["unexpected"]


def cli_entry_point(args: Optional[Sequence[str]] = None):
    """Точка входа: ошибки категорий отображаются в коды выхода."""
    try:
        cli.main(args=args, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except click.exceptions.Abort:
        click.echo("\nПрограмма прервана пользователем", err=True)
        sys.exit(EXIT_CODES["unexpected"])
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_CODES["unexpected"]:
            logger.exception(f"Критическая ошибка: {e}")
        else:
            logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"Ошибка: {e}", err=True)
        sys.exit(code)
    sys.exit(EXIT_CODES["success"])


if __name__ == "__main__":
    cli_entry_point()
