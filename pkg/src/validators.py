"""Модуль для валидации конфигурации экспериментов."""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from loguru import logger
from pydantic import ValidationError

from .config import CONFIG_KEYS, EXPERIMENT_PRESETS
from .schemas import (
    Architecture,
    ConfigError,
    ConfigKeySpec,
    ExperimentConfig,
    LatentConfig,
    PairedDataset,
    TrainConfig,
    ValueKind,
    WarmupConfig
)


class ConfigKeyError(ConfigError):
    """Неизвестный ключ конфигурации."""
    pass


class ConfigValueError(ConfigError):
    """Значение ключа не разбирается или недопустимо."""
    pass


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _split_list(raw: str) -> List[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


class ConfigValidator:
    """Разбор, проверка и сериализация плоской конфигурации key = value."""

    def __init__(self, keys: Optional[Mapping[str, ConfigKeySpec]] = None):
        self.keys = dict(keys or CONFIG_KEYS)

    # --- текст ----------------------------------------------------------------

    def parse_text(self, text: str, source: str = "<config>") -> Dict[str, str]:
        """Строки 'key = value'; '#' начинает комментарий."""
        raw: Dict[str, str] = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigValueError(f"{source}:{number}: ожидается 'key = value', получено '{line}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in raw:
                raise ConfigKeyError(f"{source}:{number}: ключ '{key}' задан повторно")
            raw[key] = value
        return raw

    def load_file(self, path: Union[str, Path]) -> Dict[str, str]:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Файл конфигурации не найден: {path}")
        return self.parse_text(path.read_text(encoding="utf-8"), str(path))

    # --- значения --------------------------------------------------------------

    def coerce(self, key: str, raw: str) -> Any:
        """Привести строковое значение к типу ключа."""
        if key not in self.keys:
            raise ConfigKeyError(f"Неизвестный ключ конфигурации: {key}")
        spec = self.keys[key]
        raw = str(raw).strip()

        try:
            if spec.kind == ValueKind.INT:
                return int(raw)
            if spec.kind == ValueKind.FLOAT:
                return float(raw)
            if spec.kind == ValueKind.BOOL:
                lowered = raw.lower()
                if lowered in _TRUE:
                    return True
                if lowered in _FALSE:
                    return False
                raise ValueError(raw)
            if spec.kind == ValueKind.CHOICE:
                if raw not in spec.choices:
                    raise ValueError(f"допустимо: {spec.choices}")
                return raw
            if spec.kind == ValueKind.INT_LIST:
                return [int(item) for item in _split_list(raw)]
            if spec.kind == ValueKind.FLOAT_LIST:
                return [float(item) for item in _split_list(raw)]
            if spec.kind == ValueKind.STR_LIST:
                return _split_list(raw)
            return raw
        except ValueError as e:
            raise ConfigValueError(f"Ключ {key} ({spec.kind.value}): некорректное значение '{raw}': {e}")

    def format_value(self, key: str, value: Any) -> str:
        """Каноническая строка значения."""
        kind = self.keys[key].kind
        if kind == ValueKind.BOOL:
            return "true" if value else "false"
        if kind == ValueKind.FLOAT:
            return repr(float(value))
        if kind in (ValueKind.INT_LIST, ValueKind.STR_LIST):
            return ",".join(str(item) for item in value)
        if kind == ValueKind.FLOAT_LIST:
            return ",".join(repr(float(item)) for item in value)
        return str(value)

    def build(
        self,
        file_values: Optional[Mapping[str, str]] = None,
        overrides: Optional[Mapping[str, str]] = None,
        preset: Optional[str] = None
    ) -> ExperimentConfig:
        """Значения по умолчанию <- пресет <- файл <- переопределения."""
        merged = {key: spec.default for key, spec in self.keys.items()}
        if preset:
            if preset not in EXPERIMENT_PRESETS:
                raise ConfigError(f"Неизвестный пресет: {preset}. Доступны: {sorted(EXPERIMENT_PRESETS)}")
            merged.update(EXPERIMENT_PRESETS[preset])

        for layer in (file_values or {}, overrides or {}):
            unknown = sorted(set(layer) - set(self.keys))
            if unknown:
                raise ConfigKeyError(f"Неизвестные ключи конфигурации: {unknown}")
            merged.update(layer)

        values = {key: self.coerce(key, raw) for key, raw in sorted(merged.items())}
        config = ExperimentConfig(values=values)
        self.validate(config)
        return config

    def validate(self, config: ExperimentConfig):
        """Межключевые проверки."""
        v = config.values
        if v["experiment.repeats"] < 1:
            raise ConfigValueError("experiment.repeats должен быть >= 1")
        if v["data.n"] < 1:
            raise ConfigValueError("data.n должен быть >= 1")
        if v["data.r"] < 1:
            raise ConfigValueError("data.r должен быть >= 1")
        if not 0 < v["eval.alpha"] < 1:
            raise ConfigValueError("eval.alpha должен лежать в (0, 1)")
        for key in ("eval.N", "eval.N_train", "eval.N_test", "eval.ot_batch", "eval.ot_repetitions"):
            if v[key] < 1:
                raise ConfigValueError(f"{key} должен быть >= 1")
        if v["eval.every_epochs"] < 0:
            raise ConfigValueError("eval.every_epochs должен быть >= 0")
        for key in ("arch.gen.widths", "arch.critic.widths"):
            if any(w < 1 for w in v[key]):
                raise ConfigValueError(f"{key}: ширины должны быть >= 1")
        for key in ("arch.gen.clamp", "arch.critic.clamp"):
            if v[key] < 0:
                raise ConfigValueError(f"{key}: граница должна быть >= 0")
        for key in ("arch.gen.sparsity_budget", "arch.critic.sparsity_budget"):
            if v[key] < 0:
                raise ConfigValueError(f"{key}: бюджет должен быть >= 0")

    def serialize(self, config: ExperimentConfig) -> str:
        """Текст конфигурации с отсортированными ключами; разбор дает ту же конфигурацию."""
        lines = [f"{key} = {self.format_value(key, value)}" for key, value in sorted(config.values.items())]
        return "\n".join(lines) + "\n"

    def as_strings(self, config: ExperimentConfig) -> Dict[str, str]:
        return {key: self.format_value(key, value) for key, value in sorted(config.values.items())}

    # --- модели ---------------------------------------------------------------

    def train_config(self, config: ExperimentConfig, seed: Optional[int] = None) -> TrainConfig:
        """TrainConfig из ключей train.* и latent.*."""
        v = config.values
        try:
            return TrainConfig(
                learning_rate=v["train.learning_rate"],
                penalty_weight=v["train.lambda"],
                batch_size=v["train.batch_size"],
                n_critic=v["train.n_critic"],
                beta1=v["train.beta1"],
                beta2=v["train.beta2"],
                eps=v["train.eps"],
                weight_decay=v["train.weight_decay"],
                decay_biases=v["train.decay_biases"],
                epochs=v["train.epochs"],
                warmup=WarmupConfig(
                    initial_iters=v["train.warmup_initial"],
                    every=v["train.warmup_every"],
                    critic_iters=v["train.warmup_critic_iters"]
                ),
                latent=LatentConfig(distribution=v["latent.distribution"], dim=v["latent.dim"]),
                seed=v["experiment.seed"] if seed is None else seed,
                conditional=v["experiment.kind"] != "unconditional",
                log_every=v["train.log_every"]
            )
        except ValidationError as e:
            raise ConfigValueError(f"Некорректные параметры обучения: {e}")

    def architectures(self, config: ExperimentConfig, x_dim: int, y_dim: int) -> Tuple[Architecture, Architecture]:
        """Архитектуры генератора и критика; входные и выходные ширины выводятся из данных."""
        v = config.values
        gen_bound = v["arch.gen.clamp"] or None
        critic_bound = v["arch.critic.clamp"] or None
        gen_budget = v["arch.gen.sparsity_budget"] or None
        critic_budget = v["arch.critic.sparsity_budget"] or None
        try:
            gen = Architecture.from_hidden(
                v["latent.dim"] + y_dim, v["arch.gen.widths"], x_dim,
                output_bound=gen_bound, clamp=gen_bound is not None, sparsity_budget=gen_budget
            )
            critic = Architecture.from_hidden(
                x_dim + y_dim, v["arch.critic.widths"], 1,
                output_bound=critic_bound, clamp=critic_bound is not None,
                sparsity_budget=critic_budget
            )
        except ValidationError as e:
            raise ConfigValueError(f"Некорректная архитектура: {e}")
        return gen, critic

    def check_dataset(self, config: ExperimentConfig, dataset: PairedDataset):
        """Проверить согласованность вида эксперимента и выборки."""
        kind = config["experiment.kind"]
        if kind == "unconditional" and dataset.conditional:
            raise ConfigError("безусловный эксперимент получил выборку с Y")
        if kind != "unconditional" and not dataset.conditional:
            raise ConfigError(f"эксперимент '{kind}' требует выборку с Y")
        if len(dataset) < config["train.batch_size"]:
            raise ConfigError(
                f"выборка размера {len(dataset)} меньше батча {config['train.batch_size']}"
            )
        logger.debug(f"Выборка согласована с конфигурацией: n={len(dataset)}, d={dataset.x_dim}, d_Y={dataset.y_dim}")

    def describe(self, config: ExperimentConfig) -> str:
        """Текстовый отчет о конфигурации."""
        lines = ["=== КОНФИГУРАЦИЯ ЭКСПЕРИМЕНТА ==="]
        for key, value in sorted(config.values.items()):
            default = self.coerce(key, self.keys[key].default)
            mark = "" if value == default else "  *"
            lines.append(f"{key} = {self.format_value(key, value)}{mark}")
        return "\n".join(lines)


def parse_override(item: str) -> Tuple[str, str]:
    """'train.lambda=0.2' -> ('train.lambda', '0.2')."""
    if "=" not in item:
        raise ConfigValueError(f"Переопределение должно иметь вид key=value: '{item}'")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()
