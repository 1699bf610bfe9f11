"""Основной пайплайн экспериментов: данные, обучение, оценка, прогноз, серии запусков."""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .artifacts import ArtifactStore
from .confidence import coverage, generated_interval, intervals_for_conditions, sigma_band
from .data import (
    Normalizer,
    Statistic,
    lag_embed,
    load_csv,
    read_dataset_csv,
    sample_true_conditional,
    split_frame,
    synth_conditional,
    synth_unconditional,
    write_dataset_csv
)
from .gan import TrainedModel, train
from .network import Network
from .schemas import (
    ConfigError,
    CoverageReport,
    DataError,
    DatasetKind,
    ExperimentConfig,
    ExperimentKind,
    Interval,
    LatentConfig,
    OTCurvePoint,
    PairedDataset,
    RunReport,
    TransportEstimate
)
from .settings import WORKERS
from .transport import ot_report
from .utils import make_rng
from .validators import ConfigValidator


@dataclass
class PreparedData:
    """Обучающая и тестовая выборки в пространстве обучения и исходные целевые значения."""
    kind: ExperimentKind
    train: PairedDataset
    test: Optional[PairedDataset] = None
    train_targets: Optional[np.ndarray] = None
    test_targets: Optional[np.ndarray] = None
    target_normalizer: Optional[Normalizer] = None
    condition_normalizer: Optional[Normalizer] = None

    def to_original(self, generated: np.ndarray) -> np.ndarray:
        if self.target_normalizer is None:
            return generated
        return self.target_normalizer.invert(generated)


def simulate(kind: str, n: int, seed: int, out_path: Union[str, Path]) -> Path:
    """Синтетическая выборка в CSV (x1..x10[, y1..y3])."""
    rng = make_rng(seed, "data")
    if kind == ExperimentKind.UNCONDITIONAL.value:
        dataset = synth_unconditional(n, rng)
    elif kind == ExperimentKind.CONDITIONAL.value:
        dataset = synth_conditional(n, rng)
    else:
        raise ConfigError(f"simulate поддерживает unconditional и conditional, получено {kind}")
    out_path = Path(out_path)
    write_dataset_csv(dataset, out_path)
    return out_path


class ExperimentPipeline:
    """Оркестрация эксперимента по конфигурации."""

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: Union[str, Path],
        validator: Optional[ConfigValidator] = None,
        workers: int = WORKERS,
        show_progress: bool = False
    ):
        self.config = config
        self.validator = validator or ConfigValidator()
        self.store = ArtifactStore(out_dir)
        self.workers = workers
        self.show_progress = show_progress
        self.kind = ExperimentKind(config["experiment.kind"])

    # --- данные -------------------------------------------------------------------

    def prepare_data(self, seed: int, normalizers: Optional[Dict[str, Any]] = None) -> PreparedData:
        """Выборка для обучения по виду эксперимента.

        normalizers - метаданные обученной модели; для рядов берется их нормализация.
        """
        c = self.config
        path = c["data.path"]

        if self.kind != ExperimentKind.SERIES:
            if path:
                dataset = read_dataset_csv(path)
            elif self.kind == ExperimentKind.UNCONDITIONAL:
                dataset = synth_unconditional(c["data.n"], make_rng(seed, "data"))
            else:
                dataset = synth_conditional(c["data.n"], make_rng(seed, "data"))
            logger.info(f"Выборка {dataset.kind.value}: n={len(dataset)}, d={dataset.x_dim}, d_Y={dataset.y_dim}")
            return PreparedData(kind=self.kind, train=dataset)

        if not path:
            raise ConfigError("для эксперимента series нужен data.path")
        frame = load_csv(path)
        train_frame, test_frame = split_frame(frame, c["data.n_train"])
        columns = c["data.condition_columns"] or None
        train_raw = lag_embed(train_frame, c["data.r"], c["data.statistic"], columns)
        test_raw = lag_embed(test_frame, c["data.r"], c["data.statistic"], columns)
        if normalizers and "target_normalizer" in normalizers:
            return self._normalize(
                train_raw,
                test_raw,
                Normalizer.from_document(normalizers["target_normalizer"]),
                Normalizer.from_document(normalizers["condition_normalizer"])
            )
        return self._normalize(train_raw, test_raw)

    def _normalize(
        self,
        train_raw: PairedDataset,
        test_raw: PairedDataset,
        target_normalizer: Optional[Normalizer] = None,
        condition_normalizer: Optional[Normalizer] = None
    ) -> PreparedData:
        """Min-max по обучающим парам для цели и условий; тест не обрезается."""
        target_normalizer = target_normalizer or Normalizer.fit(train_raw.X)
        condition_normalizer = condition_normalizer or Normalizer.fit(train_raw.Y)

        def scaled(raw: PairedDataset) -> PairedDataset:
            return PairedDataset(
                X=target_normalizer.apply(raw.X),
                Y=condition_normalizer.apply(raw.Y),
                kind=DatasetKind.LAG_EMBEDDED
            )

        logger.info(f"Пары для обучения: {len(train_raw)}, для теста: {len(test_raw)}")
        return PreparedData(
            kind=ExperimentKind.SERIES,
            train=scaled(train_raw),
            test=scaled(test_raw),
            train_targets=train_raw.X,
            test_targets=test_raw.X,
            target_normalizer=target_normalizer,
            condition_normalizer=condition_normalizer
        )

    # --- обучение -------------------------------------------------------------------

    def train(self, repeats: Optional[int] = None) -> List[RunReport]:
        """Обучение и оценка с seed, seed+1, ..., seed+repeats-1."""
        repeats = repeats or self.config["experiment.repeats"]
        base = self.config["experiment.seed"]
        reports = []
        for k in range(repeats):
            seed = base + k
            store = self.store if repeats == 1 else self.store.child(f"seed_{seed}")
            reports.append(self.run_once(seed, store))

        if repeats > 1:
            self._write_repeat_summary(reports)
        return reports

    def run_once(self, seed: int, store: Optional[ArtifactStore] = None) -> RunReport:
        """Один запуск: данные, обучение, сохранение, оценка."""
        store = store or self.store
        start = time.perf_counter()
        logger.info(f"Запуск {self.kind.value} с seed={seed} в {store.root}")

        prepared = self.prepare_data(seed)
        self.validator.check_dataset(self.config, prepared.train)
        train_config = self.validator.train_config(self.config, seed)
        gen_arch, critic_arch = self.validator.architectures(
            self.config, prepared.train.x_dim, prepared.train.y_dim
        )

        model = train(
            train_config,
            prepared.train,
            gen_arch,
            critic_arch,
            on_epoch_end=self._ot_curve_callback(prepared, train_config.latent, seed),
            show_progress=self.show_progress
        )
        self.save_model(model, prepared, store)

        report = self.evaluate_model(model, prepared, seed, store, command="train")
        report.wall_clock = time.perf_counter() - start
        self._finish(report, store)
        return report

    def _ot_curve_callback(self, prepared: PreparedData, latent: LatentConfig, seed: int):
        every = self.config["eval.every_epochs"]
        if every <= 0:
            return None
        # третий подпоток оценки, первые два заняты итоговой оценкой
        curve_rng = make_rng(seed, "evaluation").spawn(3)[2]
        splits = {"train": prepared.train}
        if prepared.test is not None:
            splits["test"] = prepared.test

        def on_epoch_end(epoch: int, generator: Network, critic: Network) -> List[OTCurvePoint]:
            if epoch % every:
                return []
            snapshot = TrainedModel(generator=generator, critic=critic, latent=latent)
            points = []
            for split, dataset in splits.items():
                estimate = self._ot(dataset, snapshot, curve_rng)
                points.append(OTCurvePoint(epoch=epoch, split=split, mean=estimate.mean, std=estimate.std))
            return points

        return on_epoch_end

    def save_model(self, model: TrainedModel, prepared: PreparedData, store: ArtifactStore):
        """Сети, история, кривые и параметры нормализации."""
        store.save_network("generator", model.generator)
        store.save_network("critic", model.critic)
        meta: Dict[str, Any] = {
            "kind": self.kind.value,
            "latent": model.latent.model_dump(mode="json"),
        }
        if prepared.target_normalizer is not None:
            meta["target_normalizer"] = prepared.target_normalizer.to_document()
            meta["condition_normalizer"] = prepared.condition_normalizer.to_document()
        store.save_json("model", meta)
        store.save_history(model.history)
        store.write_training_curve(model.history)
        store.write_ot_curve(model.ot_curve)
        store.save_config(self.validator.serialize(self.config))

    @staticmethod
    def load_model(model_dir: Union[str, Path]) -> Tuple[TrainedModel, Dict[str, Any]]:
        """Модель и метаданные из каталога запуска."""
        store = ArtifactStore(model_dir)
        meta = store.load_json("model")
        if meta is None:
            raise DataError(f"В каталоге {model_dir} нет model.json")
        model = TrainedModel(
            generator=store.load_network("generator"),
            critic=store.load_network("critic"),
            latent=LatentConfig(**meta["latent"]),
            history=store.load_history()
        )
        return model, meta

    # --- оценка ---------------------------------------------------------------------

    def _ot(self, real: PairedDataset, model: TrainedModel, rng: np.random.Generator) -> TransportEstimate:
        c = self.config
        return ot_report(
            real,
            model,
            batch_size=min(c["eval.ot_batch"], len(real)),
            repetitions=c["eval.ot_repetitions"],
            rng=rng,
            fixed_batch=c["eval.ot_fixed_batch"],
            workers=self.workers
        )

    def evaluate_model(
        self,
        model: TrainedModel,
        prepared: PreparedData,
        seed: int,
        store: ArtifactStore,
        command: str = "evaluate"
    ) -> RunReport:
        """OT и покрытие интервалами для вида эксперимента."""
        self._check_model(model, prepared.train)
        ot_rng, interval_rng = make_rng(seed, "evaluation").spawn(2)

        if prepared.kind == ExperimentKind.SERIES:
            transport, cover = self._evaluate_series(model, prepared, ot_rng, interval_rng, store)
        else:
            transport, cover = self._evaluate_synthetic(model, prepared, ot_rng, interval_rng, store)

        return RunReport(
            command=command,
            seed=seed,
            config=self.validator.as_strings(self.config),
            history=model.history_summary(),
            transport=transport,
            coverage=cover,
            diagnostics={
                "generator": model.generator.diagnostics(),
                "critic": model.critic.diagnostics(),
            }
        )

    def _check_model(self, model: TrainedModel, dataset: PairedDataset):
        arch = model.generator.arch
        if arch.output_dim != dataset.x_dim or arch.input_dim != model.latent.dim + dataset.y_dim:
            raise ConfigError(
                f"Генератор {arch.widths} не согласован с данными d={dataset.x_dim}, d_Y={dataset.y_dim}"
            )

    def _evaluate_synthetic(
        self,
        model: TrainedModel,
        prepared: PreparedData,
        ot_rng: np.random.Generator,
        interval_rng: np.random.Generator,
        store: ArtifactStore
    ) -> Tuple[Dict[str, TransportEstimate], Dict[str, CoverageReport]]:
        """OT и покрытие для синтетических видов.

        Выборка из файла сама служит эталоном: OT считается против нее, истинные значения
        статистики берутся из ее строк. Для смоделированной выборки эталон - свежие точки
        той же модели данных.
        """
        if prepared.train.kind == DatasetKind.FILE:
            return self._evaluate_file(model, prepared, ot_rng, interval_rng, store)

        c = self.config
        statistic = Statistic(c["eval.statistic"])
        count = c["eval.N"]
        batch = c["eval.ot_batch"]
        reference_size = batch if c["eval.ot_fixed_batch"] else batch * c["eval.ot_repetitions"]
        truth_rng, reference_rng, gen_rng = interval_rng.spawn(3)

        if prepared.kind == ExperimentKind.CONDITIONAL:
            reference = synth_conditional(reference_size, reference_rng)
            condition = np.asarray(c["eval.condition"], dtype=np.float64)
            truths = statistic(sample_true_conditional(condition, count, truth_rng))
        else:
            reference = synth_unconditional(reference_size, reference_rng)
            condition = None
            truths = statistic(synth_unconditional(count, truth_rng).X)

        estimate = self._ot(reference, model, ot_rng)
        report = self._shared_interval(model, condition, truths, gen_rng, store)
        return {"ot": estimate}, {prepared.kind.value: report}

    def _evaluate_file(
        self,
        model: TrainedModel,
        prepared: PreparedData,
        ot_rng: np.random.Generator,
        interval_rng: np.random.Generator,
        store: ArtifactStore
    ) -> Tuple[Dict[str, TransportEstimate], Dict[str, CoverageReport]]:
        """OT против строк файла; условная модель получает интервал на каждую строку."""
        c = self.config
        dataset = prepared.train
        truths = Statistic(c["eval.statistic"])(dataset.X)
        estimate = self._ot(dataset, model, ot_rng)

        if dataset.conditional:
            report, rows = self.interval_rows(model, dataset.Y, truths, c["eval.N"], prepared, interval_rng)
            store.write_intervals(rows)
            logger.info(f"{prepared.kind.value}: покрытие {report.rate * 100:.2f}% на {report.total} строках файла")
        else:
            report = self._shared_interval(model, None, truths, interval_rng, store)
        return {"ot": estimate}, {prepared.kind.value: report}

    def _shared_interval(
        self,
        model: TrainedModel,
        condition: Optional[np.ndarray],
        truths: np.ndarray,
        rng: np.random.Generator,
        store: ArtifactStore
    ) -> CoverageReport:
        """Один интервал из N сгенерированных точек, проверенный на всех истинных значениях."""
        c = self.config
        interval, values = generated_interval(
            model, condition, Statistic(c["eval.statistic"]), c["eval.N"], c["eval.alpha"], rng
        )
        band = sigma_band(values, c["eval.sigma_k"])
        report = coverage([interval] * len(truths), truths)
        rows = [
            self._interval_row(i, interval, truth, flag, band)
            for i, (truth, flag) in enumerate(zip(truths, report.flags))
        ]
        store.write_intervals(rows)
        logger.info(
            f"покрытие {report.rate * 100:.2f}% на {report.total} точках, "
            f"интервал ({interval.lower:.4f}, {interval.upper:.4f}]"
        )
        return report

    def _evaluate_series(
        self,
        model: TrainedModel,
        prepared: PreparedData,
        ot_rng: np.random.Generator,
        interval_rng: np.random.Generator,
        store: ArtifactStore
    ) -> Tuple[Dict[str, TransportEstimate], Dict[str, CoverageReport]]:
        """OT и покрытие на обучающих (N_train) и тестовых (N_test) днях."""
        c = self.config
        statistic = Statistic(c["eval.statistic"])
        train_ot, test_ot = ot_rng.spawn(2)
        train_rng, test_rng = interval_rng.spawn(2)

        transport = {"train": self._ot(prepared.train, model, train_ot)}
        splits = [("train", prepared.train, prepared.train_targets, c["eval.N_train"], train_rng)]
        if prepared.test is not None and len(prepared.test):
            transport["test"] = self._ot(prepared.test, model, test_ot)
            splits.append(("test", prepared.test, prepared.test_targets, c["eval.N_test"], test_rng))

        cover = {}
        for split, dataset, targets, count, rng in splits:
            report, rows = self.interval_rows(model, dataset.Y, statistic(targets), count, prepared, rng)
            cover[split] = report
            path = store.intervals_path if split == "test" else store.root / f"intervals_{split}.csv"
            store.write_intervals(rows, path)
            logger.info(f"{split}: покрытие {report.rate * 100:.2f}% на {report.total} днях")
        return transport, cover

    def interval_rows(
        self,
        model: TrainedModel,
        conditions: np.ndarray,
        truths: np.ndarray,
        count: int,
        prepared: PreparedData,
        rng: np.random.Generator,
        labels: Optional[Sequence[Any]] = None
    ) -> Tuple[CoverageReport, List[Dict[str, Any]]]:
        """Интервал на каждое наблюдение, покрытие и строки для CSV."""
        c = self.config
        intervals, bands = intervals_for_conditions(
            model,
            conditions,
            Statistic(c["eval.statistic"]),
            count,
            c["eval.alpha"],
            rng,
            transform=prepared.to_original,
            sigma_k=c["eval.sigma_k"]
        )
        report = coverage(intervals, truths)
        labels = labels if labels is not None else range(len(intervals))
        rows = [
            self._interval_row(label, interval, truth, flag, band)
            for label, interval, truth, flag, band in zip(labels, intervals, truths, report.flags, bands)
        ]
        return report, rows

    @staticmethod
    def _interval_row(label: Any, interval: Interval, truth: float, covered: bool, band) -> Dict[str, Any]:
        mean, band_lower, band_upper = band
        return {
            "index": str(label),
            "lower": interval.lower,
            "upper": interval.upper,
            "truth": float(truth),
            "covered": bool(covered),
            "mean": mean,
            "band_lower": band_lower,
            "band_upper": band_upper,
        }

    def evaluate(self, model_dir: Union[str, Path], seed: Optional[int] = None) -> RunReport:
        """Оценить сохраненную модель на данных текущей конфигурации."""
        start = time.perf_counter()
        seed = self.config["experiment.seed"] if seed is None else seed
        model, meta = self.load_model(model_dir)
        prepared = self.prepare_data(seed, meta)

        report = self.evaluate_model(model, prepared, seed, self.store, command="evaluate")
        report.wall_clock = time.perf_counter() - start
        self._finish(report, self.store)
        return report

    # --- прогноз --------------------------------------------------------------------

    def forecast(self, model_dir: Union[str, Path], series_path: Union[str, Path]) -> Tuple[Path, CoverageReport]:
        """Интервал на каждый прогнозируемый день ряда (длина ряда − r строк)."""
        c = self.config
        model, meta = self.load_model(model_dir)
        if "target_normalizer" not in meta:
            raise ConfigError("прогноз требует модель, обученную на ряде")

        frame = load_csv(series_path)
        r = c["data.r"]
        raw = lag_embed(frame, r, c["data.statistic"], c["data.condition_columns"] or None)
        target_normalizer = Normalizer.from_document(meta["target_normalizer"])
        condition_normalizer = Normalizer.from_document(meta["condition_normalizer"])
        if raw.Y.shape[1] != len(condition_normalizer.mins):
            raise DataError(
                f"ряд {series_path} дает условия размерности {raw.Y.shape[1]}, "
                f"модель обучена на {len(condition_normalizer.mins)}"
            )
        prepared = PreparedData(
            kind=ExperimentKind.SERIES,
            train=PairedDataset(
                X=target_normalizer.apply(raw.X),
                Y=condition_normalizer.apply(raw.Y),
                kind=DatasetKind.LAG_EMBEDDED
            ),
            target_normalizer=target_normalizer,
            condition_normalizer=condition_normalizer
        )
        self._check_model(model, prepared.train)

        report, rows = self.interval_rows(
            model,
            prepared.train.Y,
            Statistic(c["eval.statistic"])(raw.X),
            c["eval.N_test"],
            prepared,
            make_rng(c["experiment.seed"], "evaluation"),
            labels=frame.timestamps[r:]
        )
        path = self.store.write_intervals(rows, self.store.root / "forecast.csv")
        logger.info(f"Прогноз: {len(rows)} дней, покрытие {report.rate * 100:.2f}%")
        return path, report

    # --- серии запусков ------------------------------------------------------------------

    def sweep(self, sizes: Sequence[int], repeats: int) -> pd.DataFrame:
        """Покрытие и OT, mean (std) по повторам для каждого размера выборки."""
        if self.kind == ExperimentKind.SERIES:
            raise ConfigError("sweep поддерживает только синтетические эксперименты")
        base_values = dict(self.config.values)
        base_seed = base_values["experiment.seed"]
        rows = []

        for size in sizes:
            config = ExperimentConfig(values={**base_values, "data.n": size})
            self.validator.validate(config)
            runner = ExperimentPipeline(config, self.store.root, self.validator, self.workers, self.show_progress)
            rates, ot_means = [], []
            for k in range(repeats):
                seed = base_seed + k
                report = runner.run_once(seed, self.store.child(f"n_{size}").child(f"seed_{seed}"))
                rates.append(next(iter(report.coverage.values())).rate)
                ot_means.append(report.transport["ot"].mean)
            rows.append(self._aggregate(size, rates, ot_means))
            logger.info(
                f"n={size}: покрытие {rows[-1]['coverage_mean'] * 100:.2f} "
                f"({rows[-1]['coverage_std'] * 100:.2f}), OT {rows[-1]['ot_mean']:.3f} ({rows[-1]['ot_std']:.3f})"
            )

        table = pd.DataFrame(rows)
        table.to_csv(self.store.root / "sweep.csv", index=False)
        return table

    @staticmethod
    def _aggregate(size: int, rates: List[float], ot_means: List[float]) -> Dict[str, float]:
        def std(values: List[float]) -> float:
            return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0

        return {
            "n": size,
            "repeats": len(rates),
            "coverage_mean": float(np.mean(rates)),
            "coverage_std": std(rates),
            "ot_mean": float(np.mean(ot_means)),
            "ot_std": std(ot_means),
        }

    def _write_repeat_summary(self, reports: List[RunReport]):
        rates = [next(iter(r.coverage.values())).rate for r in reports if r.coverage]
        ot_means = [next(iter(r.transport.values())).mean for r in reports if r.transport]
        row = self._aggregate(self.config["data.n"], rates, ot_means)
        pd.DataFrame([row]).to_csv(self.store.root / "repeats.csv", index=False)
        logger.info(
            f"{len(reports)} повторов: покрытие {row['coverage_mean'] * 100:.2f} "
            f"({row['coverage_std'] * 100:.2f}), OT {row['ot_mean']:.3f} ({row['ot_std']:.3f})"
        )

    # --- отчеты ---------------------------------------------------------------------------

    def _finish(self, report: RunReport, store: ArtifactStore):
        store.append_report(report)
        store.write_summary(format_summary(report))

    def describe(self) -> str:
        return self.validator.describe(self.config)


def format_summary(report: RunReport) -> str:
    """Человекочитаемый отчет о запуске."""
    lines = [
        f"=== ОТЧЕТ: {report.command} ===",
        f"Seed: {report.seed}",
        f"Время: {report.wall_clock:.1f} сек.",
    ]
    if report.history:
        h = report.history
        lines.append(
            f"Итераций генератора: {int(h['iterations'])}, эпох: {int(h['epochs'])}, "
            f"латентных выборок: {int(h['latent_draws'])}"
        )
        lines.append(
            f"Последняя итерация: critic={h['critic_objective']:.5f}, "
            f"penalty={h['penalty']:.5f}, generator={h['generator_objective']:.5f}"
        )
    for name, estimate in report.transport.items():
        lines.append(f"OT [{name}]: {estimate.mean:.4f} ± {estimate.std:.4f} ({estimate.repetitions} × {estimate.batch_size})")
    for name, cover in report.coverage.items():
        lines.append(f"Покрытие [{name}]: {cover.rate * 100:.2f}% ({cover.covered}/{cover.total})")
    for name, diag in report.diagnostics.items():
        line = f"Сеть [{name}]: max|θ|={diag.max_norm:.4f}, ненулевых={diag.sparsity}/{diag.parameter_count}"
        if diag.sparsity_budget is not None:
            line += f", бюджет s={diag.sparsity_budget} ({'соблюден' if diag.within_budget else 'превышен'})"
        lines.append(line)
    return "\n".join(lines)
