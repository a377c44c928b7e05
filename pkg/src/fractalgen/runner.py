"""Per-model verify -> train -> log pipeline and multi-model campaigns with resume."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .arch import OP_NORM, ComputationGraph, ConvUnitSpec, ModelSpec, build_model
from .data import Dataset, TransformConfig, batches, load_cifar10, norm_flip, synthetic_dataset
from .errors import EmptyDatasetError, ShapeError
from .generator import ManifestEntry, model_name
from .nncore import MemoryLedger, ModelState, forward_backward, init_state, run_graph, sgd_step
from .nncore.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_CONSTRUCTION_FAILED = "construction_failed"
STATUS_TRAINING_FAILED = "training_failed"
STATUS_DEGENERATE = "degenerate"
SUCCESS_STATUSES = (STATUS_OK, STATUS_DEGENERATE)

DEGENERATE_MARGIN = 0.02
RESULT_FILE = "result.json"
PROGRESS_FILE = "progress.json"
LOG_FILE = "campaign_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters shared by every model of a campaign.

    ``dropout`` overrides the rate of every active dropout op (``None`` keeps the
    per-spec rate); units without dropout are left alone.  ``dataset`` is
    ``"cifar10"`` (read from ``data_dir``) or ``"synthetic:<kind>"``;
    ``train_count``/``val_count`` truncate CIFAR-10 or size the synthetic sets.
    """

    lr: float = 0.01
    batch_size: int = 16
    dropout: float | None = 0.2
    momentum: float = 0.9
    epochs: int = 5
    transform: str = "norm_flip"
    seed: int = 0
    checkpointing: bool = True
    dataset: str = "synthetic:separable_blobs"
    data_dir: str | None = None
    train_count: int | None = 2000
    val_count: int | None = 500
    synthetic_noise: float = 0.1
    flip_p: float = 0.5
    eval_batch_size: int = 250
    keep_checkpoints: int = 2

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size and epochs must be positive")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.transform not in ("norm_flip", "normalize", "none"):
            raise ValueError(f"unknown transform {self.transform!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    duration_s: float
    peak_activations: int

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EpochRecord:
        return cls(
            int(d["epoch"]),
            float(d["train_loss"]),
            float(d["val_accuracy"]),
            float(d["duration_s"]),
            int(d["peak_activations"]),
        )


@dataclass
class ModelRunResult:
    model_id: str
    name: str
    status: str
    epochs: list[EpochRecord] = field(default_factory=list)
    reason: str = ""
    checkpoint: str | None = None
    """Final checkpoint, relative to the model's result directory."""
    num_params: int | None = None
    spec: dict[str, Any] | None = None

    @property
    def final_accuracy(self) -> float | None:
        return self.epochs[-1].val_accuracy if self.epochs else None

    @property
    def succeeded(self) -> bool:
        return self.status in SUCCESS_STATUSES

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "name": self.name,
            "status": self.status,
            "reason": self.reason,
            "checkpoint": self.checkpoint,
            "num_params": self.num_params,
            "epochs": [r.to_dict() for r in self.epochs],
            "spec": self.spec,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelRunResult:
        return cls(
            model_id=str(d["model_id"]),
            name=str(d["name"]),
            status=str(d["status"]),
            epochs=[EpochRecord.from_dict(r) for r in d.get("epochs", [])],
            reason=str(d.get("reason", "")),
            checkpoint=d.get("checkpoint"),
            num_params=d.get("num_params"),
            spec=d.get("spec"),
        )


@dataclass(frozen=True)
class Verification:
    ok: bool
    reason: str = ""


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- stage 1: verification -----------------------------------------------------


def verify(spec: ModelSpec, state: ModelState | None = None, batch: int = 2) -> Verification:
    """Build the graph and push a dummy batch through it in eval mode."""
    try:
        graph = build_model(spec)
    except ShapeError as exc:
        return Verification(False, f"ShapeError: {exc}")
    state = state if state is not None else init_state(graph, 0, spec.model_id)
    x = np.random.default_rng(0).random((batch, *spec.input_shape), dtype=np.float32)
    try:
        out, _ = run_graph(graph, x, state, "eval")
    except Exception as exc:  # noqa: BLE001 - any failure is a construction failure
        return Verification(False, f"{type(exc).__name__}: {exc}")
    if out.shape != (batch, spec.num_classes):
        return Verification(False, f"output shape {out.shape}, expected {(batch, spec.num_classes)}")
    if not np.isfinite(out).all():
        return Verification(False, "non-finite output on dummy batch")
    return Verification(True)


# -- stage 2: training and evaluation ------------------------------------------


def training_spec(spec: ModelSpec, config: TrainConfig) -> ModelSpec:
    """Apply the config's dropout override to units that already use dropout."""
    u = spec.unit
    if config.dropout is None or u.dropout_p == 0.0 or config.dropout == u.dropout_p:
        return spec
    if config.dropout == 0.0:
        order = tuple(op for op in u.post_conv_order if op != "dropout")
    else:
        order = u.post_conv_order
    unit = ConvUnitSpec(u.kernel_size, u.norm, u.activation, config.dropout, order)
    return dataclasses.replace(spec, unit=unit)


def transform_for(config: TrainConfig, train: Dataset) -> TransformConfig | None:
    if config.transform == "none":
        return None
    return TransformConfig.fit(train, config.flip_p if config.transform == "norm_flip" else 0.0)


def predict(
    graph: ComputationGraph,
    state: ModelState,
    images: np.ndarray,
    batch_size: int = 250,
    transform: TransformConfig | None = None,
) -> np.ndarray:
    """Eval-mode argmax class per image."""
    out = []
    for start in range(0, len(images), batch_size):
        x = images[start : start + batch_size]
        if transform is not None:
            x = norm_flip(x, transform, None, "eval")
        logits, _ = run_graph(graph, x, state, "eval")
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, np.int64)


def evaluate(
    graph: ComputationGraph,
    state: ModelState,
    val: Dataset,
    batch_size: int = 250,
    transform: TransformConfig | None = None,
) -> float:
    """Fraction of ``val`` classified correctly (dropout off, running BN stats)."""
    if len(val) == 0:
        raise EmptyDatasetError("cannot evaluate on an empty dataset")
    pred = predict(graph, state, val.images, batch_size, transform)
    return int((pred == val.labels).sum()) / len(val)


def _load_progress(model_dir: Path, model_id: str) -> tuple[ModelState | None, list[EpochRecord]]:
    path = model_dir / PROGRESS_FILE
    if not path.exists():
        return None, []
    try:
        prog = json.loads(path.read_text(encoding="utf-8"))
        records = [EpochRecord.from_dict(r) for r in prog["epochs"]]
        state = load_checkpoint(model_dir / prog["checkpoint"])
    except Exception as exc:  # noqa: BLE001 - unreadable progress restarts the model
        log.warning("ignoring unreadable progress in %s: %s", model_dir, exc)
        return None, []
    if state.model_id != model_id or state.epoch != len(records):
        log.warning("progress in %s does not match its checkpoint; restarting", model_dir)
        return None, []
    return state, records


def _save_progress(model_dir: Path, state: ModelState, records: list[EpochRecord], keep: int) -> str:
    ckpt_dir = model_dir / "checkpoints"
    rel = f"checkpoints/epoch_{state.epoch:03d}.ckpt"
    save_checkpoint(model_dir / rel, state)
    prog = {"checkpoint": rel, "epochs": [r.to_dict() for r in records]}
    _atomic_write_text(model_dir / PROGRESS_FILE, json.dumps(prog, indent=1, sort_keys=True) + "\n")
    old = sorted(ckpt_dir.glob("epoch_*.ckpt"))
    for stale in old[: max(len(old) - keep, 0)]:
        stale.unlink()
    return rel


def train_model(
    spec: ModelSpec,
    config: TrainConfig,
    datasets: tuple[Dataset, Dataset] | None = None,
    model_dir: str | os.PathLike | None = None,
    resume: bool = True,
    on_epoch_end: Callable[[EpochRecord], None] | None = None,
    state: ModelState | None = None,
) -> ModelRunResult:
    """Verify, then train for ``config.epochs`` epochs with per-epoch validation.

    Failures are reported through ``status``.  With ``model_dir`` set, a
    checkpoint and the epoch records so far are written after every epoch and
    an interrupted run continues from them when ``resume`` is true.
    """
    name = model_name(spec)
    result = ModelRunResult(spec.model_id, name, STATUS_OK, spec=spec.to_dict())
    check = verify(spec, state)
    if not check.ok:
        result.status, result.reason = STATUS_CONSTRUCTION_FAILED, check.reason
        return result
    try:
        train, val = datasets if datasets is not None else load_datasets(config, spec)
        if train.images.shape[1:] != spec.input_shape or train.num_classes != spec.num_classes:
            raise ValueError(
                f"dataset ({train.images.shape[1:]}, {train.num_classes} classes) does not fit "
                f"spec ({spec.input_shape}, {spec.num_classes} classes)"
            )
        graph = build_model(training_spec(spec, config))
        result.num_params = graph.param_count
        mdir = Path(model_dir) if model_dir is not None else None
        records: list[EpochRecord] = []
        if state is None and mdir is not None and resume:
            state, records = _load_progress(mdir, spec.model_id)
            if records:
                result.checkpoint = f"checkpoints/epoch_{state.epoch:03d}.ckpt"
        if state is None:
            state = init_state(graph, config.seed, spec.model_id)
        result.epochs = records
        tf = transform_for(config, train)
        has_norm = any(n.op == OP_NORM for n in graph.nodes)
        for epoch in range(len(records), config.epochs):
            t0 = time.perf_counter()
            ledger = MemoryLedger()
            rng = np.random.default_rng([config.seed, epoch])
            loss_sum, seen = 0.0, 0
            for images, labels in batches(train, config.batch_size, rng, shuffle=True):
                if has_norm and len(labels) < 2:
                    continue
                x = norm_flip(images, tf, rng, "train") if tf is not None else images
                with np.errstate(over="ignore", invalid="ignore"):
                    # divergence is reported through the finiteness check below
                    loss, grads, _ = forward_backward(graph, x, labels, state, config.checkpointing, ledger)
                if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                    result.status = STATUS_TRAINING_FAILED
                    result.reason = f"non-finite loss or gradient in epoch {epoch + 1}"
                    return result
                sgd_step(state, grads, config.lr, config.momentum)
                loss_sum += loss * len(labels)
                seen += len(labels)
            if not state.all_finite():
                result.status = STATUS_TRAINING_FAILED
                result.reason = f"non-finite parameters after epoch {epoch + 1}"
                return result
            with np.errstate(over="ignore", invalid="ignore"):
                acc = evaluate(graph, state, val, config.eval_batch_size, tf)
            state.epoch = epoch + 1
            rec = EpochRecord(epoch + 1, loss_sum / max(seen, 1), acc, time.perf_counter() - t0, ledger.peak)
            records.append(rec)
            if mdir is not None:
                result.checkpoint = _save_progress(mdir, state, records, config.keep_checkpoints)
            if on_epoch_end is not None:
                on_epoch_end(rec)
    except Exception as exc:  # noqa: BLE001 - campaign must survive bad variants
        result.status = STATUS_TRAINING_FAILED
        result.reason = f"{type(exc).__name__}: {exc}"
        return result
    if result.final_accuracy <= 1.0 / spec.num_classes + DEGENERATE_MARGIN:
        result.status = STATUS_DEGENERATE
    return result


@lru_cache(maxsize=4)
def _cached_datasets(
    dataset: str,
    data_dir: str | None,
    train_count: int | None,
    val_count: int | None,
    noise: float,
    seed: int,
    classes: int,
    shape: tuple[int, int, int],
) -> tuple[Dataset, Dataset]:
    if dataset == "cifar10":
        if data_dir is None:
            raise ValueError("dataset 'cifar10' needs data_dir")
        train, val = load_cifar10(data_dir)
        if train_count is not None:
            train = train.head(train_count)
        if val_count is not None:
            val = val.head(val_count)
        return train, val
    if dataset.startswith("synthetic:"):
        kind = dataset.split(":", 1)[1]
        ntrain = train_count or 2000
        nval = val_count or 500
        train = synthetic_dataset(kind, ntrain, classes, np.random.default_rng([seed, 1]), shape, noise, "train")
        val = synthetic_dataset(kind, nval, classes, np.random.default_rng([seed, 2]), shape, noise, "val")
        return train, val
    raise ValueError(f"unknown dataset selector {dataset!r}")


def load_datasets(config: TrainConfig, spec: ModelSpec) -> tuple[Dataset, Dataset]:
    """Datasets for ``config``; synthetic sets take their shape and classes from ``spec``."""
    return _cached_datasets(
        config.dataset,
        config.data_dir,
        config.train_count,
        config.val_count,
        config.synthetic_noise,
        config.seed,
        spec.num_classes,
        tuple(spec.input_shape),
    )


# -- campaigns -----------------------------------------------------------------


def read_result(path: str | os.PathLike) -> ModelRunResult:
    return ModelRunResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_result(model_dir: Path, result: ModelRunResult) -> Path:
    path = model_dir / RESULT_FILE
    _atomic_write_text(path, json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


class _CampaignLog:
    def __init__(self, path: Path) -> None:
        self.path = path

    def emit(self, event: str, **fields: Any) -> None:
        rec = {"time": time.time(), "event": event, **fields}
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


_WORKER_DATA: tuple[Dataset, Dataset] | None = None


def _init_worker(datasets: tuple[Dataset, Dataset] | None) -> None:
    global _WORKER_DATA
    _WORKER_DATA = datasets


def _run_entry(entry: dict[str, Any], config: dict[str, Any], model_dir: str, resume: bool) -> dict[str, Any]:
    e = ManifestEntry.from_dict(entry)
    mdir = Path(model_dir)
    if not resume and mdir.exists():
        shutil.rmtree(mdir)
    cfg = TrainConfig.from_dict({**config, **e.train_overrides})
    result = train_model(e.spec, cfg, _WORKER_DATA, mdir, resume)
    result.name = e.name
    write_result(mdir, result)
    return result.to_dict()


def run_campaign(
    manifest: Sequence[ManifestEntry],
    config: TrainConfig,
    out_dir: str | os.PathLike,
    parallelism: int = 1,
    resume: bool = False,
    datasets: tuple[Dataset, Dataset] | None = None,
) -> list[ModelRunResult]:
    """Train every manifest entry; one result record per model under ``out_dir/<name>/``.

    With ``resume``, models that already have a result record are skipped and
    partially trained models continue from their last checkpoint.  Results
    come back in manifest order regardless of ``parallelism``.
    """
    names = [e.name for e in manifest]
    if len(set(names)) != len(names):
        raise ValueError("manifest contains duplicate model names")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events = _CampaignLog(out / LOG_FILE)
    _atomic_write_text(
        out / "campaign.json",
        json.dumps({"config": config.to_dict(), "manifest_size": len(manifest)}, indent=2, sort_keys=True) + "\n",
    )
    events.emit("campaign_start", models=len(manifest), parallelism=parallelism, resume=resume)
    results: dict[str, ModelRunResult] = {}
    todo: list[ManifestEntry] = []
    for e in manifest:
        path = out / e.name / RESULT_FILE
        if resume and path.exists():
            try:
                results[e.name] = read_result(path)
                events.emit("model_skipped", model_id=e.model_id, name=e.name)
                continue
            except (ValueError, KeyError) as exc:
                log.warning("re-running %s: unreadable result record (%s)", e.name, exc)
        todo.append(e)
    cfg = config.to_dict()
    jobs = [(e.to_dict(), cfg, str(out / e.name), resume) for e in todo]

    def _done(d: dict[str, Any]) -> None:
        r = ModelRunResult.from_dict(d)
        results[r.name] = r
        events.emit("model_finished", model_id=r.model_id, name=r.name, status=r.status, reason=r.reason)

    for e in todo:
        events.emit("model_started", model_id=e.model_id, name=e.name)
    if parallelism <= 1 or len(jobs) <= 1:
        _init_worker(datasets)
        try:
            for job in jobs:
                _done(_run_entry(*job))
        finally:
            _init_worker(None)
    else:
        with ProcessPoolExecutor(parallelism, initializer=_init_worker, initargs=(datasets,)) as pool:
            futures = [pool.submit(_run_entry, *job) for job in jobs]
            for fut in futures:
                _done(fut.result())
    ordered = [results[n] for n in names]
    ok = sum(r.succeeded for r in ordered)
    events.emit("campaign_finished", models=len(ordered), succeeded=ok)
    return ordered


def success_rate(results: Iterable[ModelRunResult]) -> float:
    results = list(results)
    if not results:
        raise ValueError("no results")
    return sum(r.succeeded for r in results) / len(results)
