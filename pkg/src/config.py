"""Константы, значения по умолчанию, ключи конфигурации и пресеты экспериментов."""

from typing import Dict

from .schemas import ConfigKeySpec, ValueKind

# Сглаживание нормы градиента внутри штрафа: sqrt(sum x^2 + eps)
NORM_EPS = 1e-12

# Формат файла сети
NETWORK_FORMAT = "wgan-network/1"

# Полный перебор перестановок допустим только для малых облаков
BRUTE_FORCE_MAX_POINTS = 8

# Практический потолок точного решателя назначений
OT_PRACTICAL_CEILING = 2000

# Именованные подпотоки случайности от одного корневого seed
RNG_STREAMS = {
    "data": 0,
    "init": 1,
    "shuffle": 2,
    "latent": 3,
    "mixing": 4,
    "evaluation": 5,
}

# Коды выхода CLI
EXIT_CODES = {
    "success": 0,
    "unexpected": 1,
    "config": 2,
    "data": 3,
    "numeric": 4,
}

# Размерности синтетических моделей
UNCONDITIONAL_DIMS = {"x": 10, "z": 3}
CONDITIONAL_DIMS = {"x": 10, "z": 7, "y": 3}


def _key(kind: ValueKind, default: str, description: str, choices=None) -> ConfigKeySpec:
    return ConfigKeySpec(kind=kind, default=default, description=description, choices=choices)


# Все допустимые ключи файла эксперимента
CONFIG_KEYS: Dict[str, ConfigKeySpec] = {
    "experiment.kind": _key(
        ValueKind.CHOICE, "unconditional", "Тип эксперимента",
        ["unconditional", "conditional", "series"]
    ),
    "experiment.seed": _key(ValueKind.INT, "0", "Корневой seed"),
    "experiment.repeats": _key(ValueKind.INT, "1", "Число повторов с seed, seed+1, ..."),

    "data.n": _key(ValueKind.INT, "3200", "Размер синтетической выборки"),
    "data.path": _key(ValueKind.STR, "", "CSV с выборкой или рядом"),
    "data.r": _key(ValueKind.INT, "1", "Число лагов"),
    "data.statistic": _key(ValueKind.STR, "component:0", "Целевая статистика T для ряда"),
    "data.condition_columns": _key(ValueKind.STR_LIST, "", "Колонки условия (пусто = все)"),
    "data.n_train": _key(ValueKind.INT, "4300", "Число строк ряда для обучения"),

    "train.learning_rate": _key(ValueKind.FLOAT, "0.0001", "Шаг alpha"),
    "train.lambda": _key(ValueKind.FLOAT, "0.1", "Вес штрафа на градиент"),
    "train.batch_size": _key(ValueKind.INT, "64", "Размер батча m"),
    "train.n_critic": _key(ValueKind.INT, "5", "Итераций критика на итерацию генератора"),
    "train.beta1": _key(ValueKind.FLOAT, "0.5", "Adam beta1"),
    "train.beta2": _key(ValueKind.FLOAT, "0.9", "Adam beta2"),
    "train.eps": _key(ValueKind.FLOAT, "1e-08", "Adam eps"),
    "train.weight_decay": _key(ValueKind.FLOAT, "0.01", "L2 weight decay обеих сетей"),
    "train.decay_biases": _key(ValueKind.BOOL, "true", "Применять decay к смещениям"),
    "train.epochs": _key(ValueKind.INT, "700", "Число эпох"),
    "train.warmup_initial": _key(ValueKind.INT, "25", "Первые итерации генератора с разогревом"),
    "train.warmup_every": _key(ValueKind.INT, "100", "Каждая k-я итерация с разогревом (0 = выкл)"),
    "train.warmup_critic_iters": _key(ValueKind.INT, "100", "Итераций критика при разогреве"),
    "train.log_every": _key(ValueKind.INT, "100", "Период логирования итераций"),

    "latent.distribution": _key(ValueKind.CHOICE, "uniform", "Латентный шум", ["uniform", "normal"]),
    "latent.dim": _key(ValueKind.INT, "3", "Размерность шума d_Z"),

    "arch.gen.widths": _key(ValueKind.INT_LIST, "32,32,32", "Скрытые слои генератора"),
    "arch.critic.widths": _key(ValueKind.INT_LIST, "128,128,128,128,128", "Скрытые слои критика"),
    "arch.gen.clamp": _key(ValueKind.FLOAT, "0", "Граница F выхода генератора (0 = без ограничения)"),
    "arch.critic.clamp": _key(ValueKind.FLOAT, "0", "Граница F выхода критика (0 = без ограничения)"),
    "arch.gen.sparsity_budget": _key(ValueKind.INT, "0", "Бюджет s ненулевых параметров генератора (0 = не задан)"),
    "arch.critic.sparsity_budget": _key(ValueKind.INT, "0", "Бюджет s ненулевых параметров критика (0 = не задан)"),

    "eval.alpha": _key(ValueKind.FLOAT, "0.05", "Уровень alpha интервалов"),
    "eval.statistic": _key(ValueKind.STR, "sum", "Статистика для интервалов"),
    "eval.N": _key(ValueKind.INT, "1000", "Сгенерированных точек для синтетических интервалов"),
    "eval.N_train": _key(ValueKind.INT, "1000", "Сгенерированных точек на обучающее наблюдение"),
    "eval.N_test": _key(ValueKind.INT, "10000", "Сгенерированных точек на тестовое наблюдение"),
    "eval.ot_batch": _key(ValueKind.INT, "1000", "Размер батча для OT"),
    "eval.ot_repetitions": _key(ValueKind.INT, "1", "Повторов OT"),
    "eval.ot_fixed_batch": _key(ValueKind.BOOL, "false", "Один реальный батч на все повторы"),
    "eval.condition": _key(ValueKind.FLOAT_LIST, "0.5,0.5,0.5", "Условие y для условных интервалов"),
    "eval.sigma_k": _key(ValueKind.FLOAT, "3", "Ширина полосы mean ± k·sigma"),
    "eval.every_epochs": _key(ValueKind.INT, "0", "Период OT-кривой в эпохах (0 = выкл)"),

    "report.out": _key(ValueKind.STR, "", "Каталог результатов (пусто = WGAN_REPORT_DIR)"),
}

# Пресеты: синтетические модели и три модели температур
EXPERIMENT_PRESETS: Dict[str, Dict[str, str]] = {
    "synthetic-unconditional": {
        "experiment.kind": "unconditional",
        "latent.dim": "3",
        "eval.statistic": "sum",
    },
    "synthetic-conditional": {
        "experiment.kind": "conditional",
        "latent.dim": "7",
        "eval.statistic": "sum",
    },
    "temps-m1": {
        "experiment.kind": "series",
        "data.statistic": "component:0",
        "data.condition_columns": "Berlin,Braunschweig,Bremen",
        "eval.statistic": "component:0",
        "latent.distribution": "normal",
        "latent.dim": "4",
        "arch.gen.widths": "10,10,10",
        "arch.critic.widths": "32,32,32,32,32",
        "train.epochs": "1000",
        "eval.ot_repetitions": "10",
        "eval.ot_batch": "64",
        "eval.ot_fixed_batch": "true",
    },
    "temps-m2": {
        "experiment.kind": "series",
        "data.statistic": "component:0",
        "eval.statistic": "component:0",
        "latent.distribution": "normal",
        "latent.dim": "4",
        "arch.gen.widths": "10,10,10",
        "arch.critic.widths": "32,32,32,32,32",
        "train.epochs": "1000",
        "eval.ot_repetitions": "10",
        "eval.ot_batch": "64",
        "eval.ot_fixed_batch": "true",
    },
    "temps-m3": {
        "experiment.kind": "series",
        "data.statistic": "all",
        "eval.statistic": "component:0",
        "latent.distribution": "normal",
        "latent.dim": "4",
        "arch.gen.widths": "10,10,10",
        "arch.critic.widths": "32,32,32,32,32",
        "train.epochs": "1000",
        "eval.ot_repetitions": "10",
        "eval.ot_batch": "64",
        "eval.ot_fixed_batch": "true",
    },
}

# Параллелизм
DEFAULT_CONCURRENCY_LIMITS = {
    "ot_repetitions": 1,
}
