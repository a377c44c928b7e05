import json

import pytest

from fractalgen.errors import EmptyResultsError, UnknownModelError
from fractalgen.report import (
    MISSING,
    export_epoch_distribution,
    export_loss_curves,
    read_epoch_distribution,
    summarize,
    summarize_results,
)
from fractalgen.runner import EpochRecord, ModelRunResult, write_result


def _result(mid, accs, status="ok"):
    epochs = [EpochRecord(i + 1, 1.0 / (i + 1), a, 0.5, 100) for i, a in enumerate(accs)]
    return ModelRunResult(mid, f"name-{mid}", status, epochs)


def test_mean_and_top():
    s = summarize_results([_result("a", [0.5]), _result("b", [0.7]), _result("c", [0.2, 0.9])])
    assert s.mean_val_accuracy == pytest.approx(0.7)
    assert s.top_val_accuracy == 0.9
    assert s.top_model_id == "c"
    assert s.mean_epoch_duration == 0.5


def test_top_tie_breaks_on_id():
    s = summarize_results([_result("z", [0.8]), _result("m", [0.8])])
    assert s.top_model_id == "m"


def test_success_rate():
    rs = [_result(f"m{i}", [0.5]) for i in range(8)]
    rs.append(_result("deg", [0.1], "degenerate"))
    rs.append(ModelRunResult("bad", "bad", "construction_failed"))
    s = summarize_results(rs)
    assert s.success_rate == 0.9
    assert s.evaluated_count == 9
    assert s.status_counts == {"construction_failed": 1, "degenerate": 1, "ok": 8}


def test_failed_models_excluded_from_accuracy():
    s = summarize_results([_result("a", [0.4]), _result("b", [0.9], "training_failed")])
    assert s.mean_val_accuracy == 0.4
    assert s.per_epoch_accuracy == [[0.4, 0.9]]


def test_empty():
    with pytest.raises(EmptyResultsError):
        summarize_results([])


def test_summarize_dir_counts_malformed(tmp_path):
    for r in (_result("a", [0.5]), _result("b", [0.7])):
        write_result(tmp_path / r.model_id, r)
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "result.json").write_text('{"model_id": "x"}')
    s = summarize(tmp_path)
    assert s.model_count == 2 and s.skipped_records == 1
    assert json.loads(s.to_json())["metadata"]
    with pytest.raises(EmptyResultsError):
        summarize(tmp_path / "missing")


def test_epoch_distribution(tmp_path):
    rs = [_result("b", [0.1, 0.2, 0.3, 0.4, 0.5]), _result("a", [0.25], "training_failed")]
    text = export_epoch_distribution(rs, tmp_path / "d.csv")
    assert text.splitlines() == ["model_id,acc_epoch1,acc_epoch5", f"a,0.25,{MISSING}", "b,0.1,0.5"]
    assert "\r" not in (tmp_path / "d.csv").read_text()
    assert export_epoch_distribution(reversed(rs)) == text
    rows = read_epoch_distribution(tmp_path / "d.csv")
    assert rows[0] == {"model_id": "a", "acc_epoch1": 0.25, "acc_epoch5": None}


def test_reexport_reaggregates(tmp_path):
    rs = [_result(f"m{i}", [0.1 * i, 0.05 + 0.1 * i]) for i in range(5)]
    text = export_epoch_distribution(rs, epochs=(2,))
    back = [r["acc_epoch2"] for r in read_epoch_distribution(text)]
    s = summarize_results(rs)
    assert sum(back) / len(back) == pytest.approx(s.mean_val_accuracy)


def test_loss_curves():
    rs = [_result("a", [0.1] * 5), _result("b", [0.2] * 5)]
    one = export_loss_curves(rs, model_ids=["b"]).splitlines()
    assert len(one) == 6 and one[1] == "b,1,1.0"
    two = export_loss_curves(rs, model_ids=["b", "a"]).splitlines()[1:]
    assert len(two) == 10
    assert [r.split(",")[0] for r in two] == ["b"] * 5 + ["a"] * 5
    with pytest.raises(UnknownModelError):
        export_loss_curves(rs, model_ids=["nope"])
