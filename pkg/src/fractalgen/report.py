"""Campaign aggregation and CSV exports of accuracy distributions and loss curves."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import EmptyResultsError, UnknownModelError
from .runner import RESULT_FILE, SUCCESS_STATUSES, ModelRunResult, read_result

log = logging.getLogger(__name__)

MISSING = "NA"

SLICING_NOTES = {
    "accuracy_population": "final-epoch val accuracy of models with status ok or degenerate",
    "success_population": "all result records; ok and degenerate count as successes",
    "per_epoch_population": "every model that has a record for that epoch, sorted by model_id",
}


@dataclass
class CampaignSummary:
    model_count: int
    evaluated_count: int
    mean_val_accuracy: float | None
    top_val_accuracy: float | None
    top_model_id: str | None
    success_rate: float
    mean_epoch_duration: float | None
    per_epoch_accuracy: list[list[float]]
    status_counts: dict[str, int]
    skipped_records: int = 0
    metadata: dict[str, str] = field(default_factory=lambda: dict(SLICING_NOTES))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_results(results_dir: str | os.PathLike) -> tuple[list[ModelRunResult], int]:
    """All readable ``*/result.json`` records sorted by model_id, plus the count of unreadable ones."""
    root = Path(results_dir)
    results, skipped = [], 0
    for path in sorted(root.glob(f"*/{RESULT_FILE}")):
        try:
            results.append(read_result(path))
        except (ValueError, KeyError, TypeError) as exc:
            log.warning("skipping malformed result record %s: %s", path, exc)
            skipped += 1
    results.sort(key=lambda r: r.model_id)
    return results, skipped


def _as_results(results: str | os.PathLike | Iterable[ModelRunResult]) -> list[ModelRunResult]:
    if isinstance(results, (str, os.PathLike)):
        return load_results(results)[0]
    return sorted(results, key=lambda r: r.model_id)


def summarize_results(results: Sequence[ModelRunResult], skipped: int = 0) -> CampaignSummary:
    if not results:
        raise EmptyResultsError("no result records to summarize")
    results = sorted(results, key=lambda r: r.model_id)
    finals = [(r.final_accuracy, r.model_id) for r in results if r.status in SUCCESS_STATUSES and r.epochs]
    counts: dict[str, int] = {}
    for r in results:
        counts[r.status] = counts.get(r.status, 0) + 1
    durations = [e.duration_s for r in results for e in r.epochs]
    max_epoch = max((e.epoch for r in results for e in r.epochs), default=0)
    per_epoch = [
        [e.val_accuracy for r in results for e in r.epochs if e.epoch == k] for k in range(1, max_epoch + 1)
    ]
    if finals:
        mean = sum(a for a, _ in finals) / len(finals)
        top = max(a for a, _ in finals)
        top_id = min(m for a, m in finals if a == top)
    else:
        mean = top = top_id = None
    return CampaignSummary(
        model_count=len(results),
        evaluated_count=len(finals),
        mean_val_accuracy=mean,
        top_val_accuracy=top,
        top_model_id=top_id,
        success_rate=sum(r.status in SUCCESS_STATUSES for r in results) / len(results),
        mean_epoch_duration=sum(durations) / len(durations) if durations else None,
        per_epoch_accuracy=per_epoch,
        status_counts=dict(sorted(counts.items())),
        skipped_records=skipped,
    )


def summarize(results_dir: str | os.PathLike) -> CampaignSummary:
    """Summary over every result record under ``results_dir``; malformed records are counted, not fatal."""
    results, skipped = load_results(results_dir)
    if not results:
        raise EmptyResultsError(f"no result records under {results_dir}")
    return summarize_results(results, skipped)


def _csv_text(header: list[str], rows: Iterable[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: str | os.PathLike | None, text: str) -> str:
    if path is not None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def _fmt(v: float) -> str:
    return repr(float(v))


def export_epoch_distribution(
    results: str | os.PathLike | Iterable[ModelRunResult],
    path: str | os.PathLike | None = None,
    epochs: Sequence[int] = (1, 5),
) -> str:
    """One row per model (sorted by model_id) with val accuracy at each requested epoch."""
    rows = []
    for r in _as_results(results):
        by_epoch = {e.epoch: e.val_accuracy for e in r.epochs}
        rows.append([r.model_id] + [_fmt(by_epoch[k]) if k in by_epoch else MISSING for k in epochs])
    return _write(path, _csv_text(["model_id"] + [f"acc_epoch{k}" for k in epochs], rows))


def export_loss_curves(
    results: str | os.PathLike | Iterable[ModelRunResult],
    path: str | os.PathLike | None = None,
    model_ids: Sequence[str] | None = None,
) -> str:
    """Long-format (model_id, epoch, train_loss) rows, grouped by model in ``model_ids`` order."""
    by_id = {r.model_id: r for r in _as_results(results)}
    ids = list(model_ids) if model_ids is not None else sorted(by_id)
    unknown = [m for m in ids if m not in by_id]
    if unknown:
        raise UnknownModelError(f"unknown model ids: {unknown}")
    rows = [[m, e.epoch, _fmt(e.train_loss)] for m in ids for e in by_id[m].epochs]
    return _write(path, _csv_text(["model_id", "epoch", "train_loss"], rows))


def read_epoch_distribution(path_or_text: str | os.PathLike) -> list[dict[str, float | None | str]]:
    text = path_or_text if isinstance(path_or_text, str) and "\n" in path_or_text else Path(path_or_text).read_text()
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append({k: (v if k == "model_id" else (None if v == MISSING else float(v))) for k, v in row.items()})
    return out
