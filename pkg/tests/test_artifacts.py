import pandas as pd
import pytest

from src.artifacts import ArtifactError, ArtifactStore
from src.network import init
from src.schemas import (
    Architecture,
    CoverageReport,
    IterationRecord,
    OTCurvePoint,
    RunReport,
    TransportEstimate
)


def records(count):
    return [
        IterationRecord(
            iteration=i,
            epoch=(i - 1) // 2 + 1,
            critic_iterations=5,
            critic_objective=0.1 * i,
            penalty=0.01,
            generator_objective=-0.2 * i,
            latent_draws=6 * 64 * i
        )
        for i in range(1, count + 1)
    ]


def test_network_round_trip(tmp_path, rng):
    store = ArtifactStore(tmp_path / "run")
    net = init(Architecture(widths=[3, 5, 1]), rng)
    store.save_network("critic", net)
    loaded = store.load_network("critic")
    assert loaded.weights[0].tobytes() == net.weights[0].tobytes()


def test_history_jsonl(tmp_path):
    store = ArtifactStore(tmp_path)
    store.save_history(records(4))
    lines = store.history_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert store.load_history() == records(4)


def test_corrupted_history(tmp_path):
    store = ArtifactStore(tmp_path)
    store.history_path.write_text('{"iteration": 1}\n', encoding="utf-8")
    with pytest.raises(ArtifactError, match=":1"):
        store.load_history()


def test_reports_are_appended(tmp_path):
    store = ArtifactStore(tmp_path)
    report = RunReport(
        command="train",
        seed=3,
        transport={"ot": TransportEstimate(mean=0.4, std=0.0, repetitions=1, batch_size=100)},
        coverage={"unconditional": CoverageReport(total=2, covered=1, rate=0.5, flags=[True, False])}
    )
    store.append_report(report)
    store.append_report(report)
    loaded = store.load_reports()
    assert len(loaded) == 2
    assert loaded[1].numeric_fields() == report.numeric_fields()
    assert store.stats()["reports"] == 2


def test_plot_csvs(tmp_path):
    store = ArtifactStore(tmp_path)
    store.write_training_curve(records(3))
    store.write_ot_curve([OTCurvePoint(epoch=5, split="train", mean=0.3, std=0.01)])
    curve = pd.read_csv(store.training_curve_path)
    assert list(curve.columns) == ["iteration", "epoch", "critic_objective", "penalty", "generator_objective"]
    assert len(curve) == 3
    ot = pd.read_csv(store.ot_curve_path)
    assert ot.loc[0, "split"] == "train"


def test_empty_ot_curve_has_header(tmp_path):
    store = ArtifactStore(tmp_path)
    store.write_ot_curve([])
    assert store.ot_curve_path.read_text(encoding="utf-8").strip() == "epoch,split,mean,std"


def test_intervals_csv(tmp_path):
    store = ArtifactStore(tmp_path)
    rows = [{"index": "0", "lower": 0.1, "upper": 0.9, "truth": 0.5, "covered": True}]
    path = store.write_intervals(rows)
    table = pd.read_csv(path)
    assert bool(table.loc[0, "covered"])
    assert store.write_intervals(rows, tmp_path / "other.csv").exists()


def test_json_documents(tmp_path):
    store = ArtifactStore(tmp_path)
    assert store.load_json("model") is None
    store.save_json("model", {"kind": "series", "values": [1.0, 2.0]})
    assert store.load_json("model")["values"] == [1.0, 2.0]
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    with pytest.raises(ArtifactError):
        store.load_json("broken")


def test_child_store(tmp_path):
    child = ArtifactStore(tmp_path).child("seed_4")
    assert child.root == tmp_path / "seed_4"
    assert child.root.is_dir()
    child.write_summary("итог")
    assert child.summary_path.read_text(encoding="utf-8") == "итог\n"
    assert ArtifactStore(tmp_path).stats()["files"] == 1
