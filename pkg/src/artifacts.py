"""Модуль для сохранения результатов запусков: сети, история, отчеты, CSV для графиков."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import pandas as pd
from loguru import logger

from .network import Network, load_network, save_network
from .schemas import DataError, IterationRecord, OTCurvePoint, RunReport


class ArtifactError(DataError):
    """Ошибка чтения артефакта."""
    pass


class ArtifactStore:
    """Каталог результатов одного запуска."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

        self.history_path = self.root / "history.jsonl"
        self.report_path = self.root / "report.jsonl"
        self.summary_path = self.root / "summary.txt"
        self.config_path = self.root / "config.txt"
        self.training_curve_path = self.root / "training_curve.csv"
        self.ot_curve_path = self.root / "ot_curve.csv"
        self.intervals_path = self.root / "intervals.csv"

    def child(self, name: str) -> "ArtifactStore":
        """Подкаталог (например, для повтора с другим seed)."""
        return ArtifactStore(self.root / name)

    # --- сети -------------------------------------------------------------------

    def network_path(self, name: str) -> Path:
        return self.root / f"{name}.json"

    def save_network(self, name: str, net: Network) -> Path:
        path = self.network_path(name)
        save_network(net, path)
        return path

    def load_network(self, name: str) -> Network:
        return load_network(self.network_path(name))

    def save_json(self, name: str, document: Dict[str, Any]) -> Path:
        path = self.root / f"{name}.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, ensure_ascii=False, indent=2)
        return path

    def load_json(self, name: str) -> Optional[Dict[str, Any]]:
        path = self.root / f"{name}.json"
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ArtifactError(f"Поврежденный файл {path}: {e}")

    # --- история ------------------------------------------------------------------

    def save_history(self, history: Sequence[IterationRecord]):
        """Одна JSON-запись на итерацию генератора."""
        with open(self.history_path, "w", encoding="utf-8") as f:
            for record in history:
                f.write(record.model_dump_json() + "\n")
        logger.debug(f"История сохранена: {len(history)} записей")

    def load_history(self) -> List[IterationRecord]:
        if not self.history_path.exists():
            return []
        records = []
        with open(self.history_path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(IterationRecord.model_validate_json(line))
                except ValueError as e:
                    raise ArtifactError(f"{self.history_path}:{number}: {e}")
        return records

    # --- отчеты ---------------------------------------------------------------------

    def append_report(self, report: RunReport):
        """Дописать отчет одной строкой в report.jsonl."""
        with open(self.report_path, "a", encoding="utf-8") as f:
            f.write(report.model_dump_json() + "\n")

    def load_reports(self) -> List[RunReport]:
        if not self.report_path.exists():
            return []
        with open(self.report_path, "r", encoding="utf-8") as f:
            return [RunReport.model_validate_json(line) for line in f if line.strip()]

    def write_summary(self, text: str):
        self.summary_path.write_text(text + "\n", encoding="utf-8")

    def save_config(self, text: str):
        self.config_path.write_text(text, encoding="utf-8")

    # --- CSV для графиков ---------------------------------------------------------------

    def write_training_curve(self, history: Iterable[IterationRecord]):
        columns = ["iteration", "epoch", "critic_objective", "penalty", "generator_objective"]
        rows = [record.model_dump(include=set(columns)) for record in history]
        pd.DataFrame(rows, columns=columns).to_csv(self.training_curve_path, index=False)

    def write_ot_curve(self, points: Iterable[OTCurvePoint]):
        columns = ["epoch", "split", "mean", "std"]
        rows = [point.model_dump() for point in points]
        pd.DataFrame(rows, columns=columns).to_csv(self.ot_curve_path, index=False)

    def write_intervals(self, rows: Sequence[Dict[str, Any]], path: Optional[Path] = None) -> Path:
        """Интервалы по наблюдениям: lower, upper, truth, covered, mean, band."""
        path = path or self.intervals_path
        pd.DataFrame(list(rows)).to_csv(path, index=False)
        logger.info(f"Интервалы записаны: {path} ({len(rows)} строк)")
        return path

    def stats(self) -> Dict[str, Any]:
        """Статистика каталога."""
        files = [p for p in self.root.rglob("*") if p.is_file()]
        return {
            "root": str(self.root),
            "files": len(files),
            "size_mb": sum(p.stat().st_size for p in files) / (1024 * 1024),
            "reports": len(self.load_reports()),
        }
