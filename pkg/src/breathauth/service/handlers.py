"""Pipeline handlers behind the service endpoints.

Each handler is a plain function (request model in, response model out) so
the CLI can call it in process and the FastAPI routes can expose it over
HTTP. All outputs are deterministic given the request: no timestamps, files
are overwritten whole.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .. import __version__
from ..dataset import load_manifest, make_scenario, make_split
from ..errors import ConfigError, DataError
from ..models import CnnLstmConfig, TcnConfig, load_model, save_model
from ..pipeline import compute_features, make_bundle, manifest_source
from ..synth import SynthSpec, write_dataset
from ..training import (
    TrainConfig,
    evaluate_identification,
    run_experiment,
    train_on_split,
    _subject_embeddings,
)
from ..verification import compute_centroids, compute_eer, score_trials
from .schemas import (
    EvalRequest,
    EvalResponse,
    HealthResponse,
    ModelOverrides,
    ReportRequest,
    ReportResponse,
    SynthRequest,
    SynthResponse,
    TrainOverrides,
    TrainRequest,
    TrainResponse,
)

_CNN_KEYS = {"n_filters", "kernel", "stride", "hidden", "forget_bias"}
_TCN_KEYS = {"stage1_filters", "stage2_filters", "kernel", "dropout"}


def build_model_config(arch: str, overrides: ModelOverrides):
    given = overrides.model_dump(exclude_none=True)
    keys = _CNN_KEYS if arch == "cnn-lstm" else _TCN_KEYS
    foreign = set(given) - keys
    if foreign:
        raise ConfigError(f"model overrides {sorted(foreign)} do not apply to arch {arch!r}")
    cls = CnnLstmConfig if arch == "cnn-lstm" else TcnConfig
    return cls(**given)


def build_train_config(overrides: TrainOverrides, seed: int) -> TrainConfig:
    return TrainConfig(**overrides.model_dump(exclude_none=True), seed=seed)


def handle_health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def handle_synth(req: SynthRequest) -> SynthResponse:
    spec = SynthSpec(req.subjects, req.seed, req.noise, (req.sessions_min, req.sessions_max))
    root = Path(req.root)
    manifest = write_dataset(spec, root, force=req.force)
    return SynthResponse(
        manifest_path=str(root / "manifest.json"),
        n_subjects=len(manifest.subjects),
        n_instances=len(manifest.records),
        instances_per_subject=manifest.counts_per_subject(),
    )


def _prefix(req) -> str:
    return f"{req.arch}_{req.mode}_{req.breath_type}"


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def _fmt(v) -> str:
    return "" if v is None else f"{v:.9g}"


_SUMMARY_FIELDS = [
    "breath_type", "arch", "mode", "n_repetitions",
    "accuracy_mean", "accuracy_std",
    "eer_scenario1_mean", "eer_scenario1_std",
    "eer_scenario2_mean", "eer_scenario2_std",
]


def write_summary_csv(path: Path, breath_type: str, arch: str, mode: str, summary: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_SUMMARY_FIELDS)
        writer.writerow([
            breath_type, arch, mode, summary.get("n_repetitions", 1),
            _fmt(summary.get("accuracy_mean")), _fmt(summary.get("accuracy_std")),
            _fmt(summary.get("eer_scenario1_mean")), _fmt(summary.get("eer_scenario1_std")),
            _fmt(summary.get("eer_scenario2_mean")), _fmt(summary.get("eer_scenario2_std")),
        ])


def _write_metrics_csv(path: Path, repetitions, summary: dict) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["repetition", "seed", "accuracy", "eer_scenario1", "eer_scenario2", "epochs", "stop_reason"])
        for r in repetitions:
            writer.writerow([r.repetition, r.seed, _fmt(r.accuracy), _fmt(r.eer_scenario1),
                             _fmt(r.eer_scenario2), r.epochs, r.stop_reason])
        writer.writerow(["mean", "", _fmt(summary["accuracy_mean"]), _fmt(summary["eer_scenario1_mean"]),
                         _fmt(summary["eer_scenario2_mean"]), "", ""])
        writer.writerow(["std", "", _fmt(summary["accuracy_std"]), _fmt(summary["eer_scenario1_std"]),
                         _fmt(summary["eer_scenario2_std"]), "", ""])


def _write_embeddings_csv(path: Path, embeddings: dict) -> None:
    """One row per instance: subject, instance, then the m embedding values."""
    ids = sorted(embeddings)
    m = len(embeddings[ids[0]])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "instance_id"] + [f"e{i}" for i in range(m)])
        for instance_id in ids:
            subject = instance_id.split("/")[0]
            writer.writerow([subject, instance_id] + [f"{v:.9g}" for v in embeddings[instance_id]])


def handle_train(req: TrainRequest) -> TrainResponse:
    manifest = load_manifest(req.dataset)
    model_cfg = build_model_config(req.arch, req.model)
    train_cfg = build_train_config(req.training, req.seed)
    features = compute_features(manifest.of_type(req.breath_type), manifest_source(manifest))
    split = make_split(manifest, req.breath_type, req.seed)
    model, history, subject_index, astats, mstats = train_on_split(
        manifest, split, features, req.arch, req.mode, model_cfg, train_cfg, req.seed)
    test_b = make_bundle(features, split.test, subject_index, astats, mstats)
    test_accuracy = evaluate_identification(model, test_b)

    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = _prefix(req)
    checkpoint_path = out / f"{prefix}_model.json"
    history_path = out / f"{prefix}_history.json"
    summary_path = out / f"summary_{prefix}.csv"
    save_model(model, checkpoint_path)
    _write_json(history_path, history.to_json())
    write_summary_csv(summary_path, req.breath_type, req.arch, req.mode, {
        "n_repetitions": 1,
        "accuracy_mean": test_accuracy,
        "accuracy_std": 0.0,
    })
    return TrainResponse(
        checkpoint_path=str(checkpoint_path),
        history_path=str(history_path),
        summary_path=str(summary_path),
        epochs=history.n_epochs,
        stop_reason=history.stop_reason,
        best_val_loss=min(history.val_loss),
        val_accuracy=history.val_accuracy[history.best_epoch],
        test_accuracy=test_accuracy,
    )


def _eval_checkpoint(req: EvalRequest, manifest, features, out: Path):
    """Evaluate one saved model: accuracy and scenario-1 EER. Scenario 2 is
    reported as null because a checkpoint trained on every subject cannot
    honestly score unseen-subject impostors."""
    model = load_model(req.checkpoint)
    notes = []
    if not model.trained:
        raise DataError(f"checkpoint {req.checkpoint} is untrained")
    if model.subjects is None or model.feature_stats is None:
        raise DataError(f"checkpoint {req.checkpoint} lacks subjects/feature stats")
    stored_type = getattr(model, "breath_type", None)
    if stored_type is not None and stored_type != req.breath_type:
        raise ConfigError(
            f"checkpoint was trained on {stored_type!r} breaths, request says {req.breath_type!r}")

    split = make_split(manifest, req.breath_type, req.seed)
    subject_index = {s: k for k, s in enumerate(model.subjects)}
    split_subjects = tuple(sorted({i.split("/")[0] for i in split.all_ids()}))
    if split_subjects != tuple(model.subjects):
        raise DataError("dataset subjects do not match the checkpoint's training subjects")
    astats, mstats = model.feature_stats.audio, model.feature_stats.motion

    test_b = make_bundle(features, split.test, subject_index, astats, mstats)
    accuracy = evaluate_identification(model, test_b)

    eer1 = None
    by_id = manifest.by_id()
    if 1 in req.scenarios:
        scenario = make_scenario(manifest, split, 1, req.seed)
        train_emb = _subject_embeddings(model, features, split.train, astats, mstats)
        centroids = compute_centroids(train_emb, {i: by_id[i].subject_id for i in train_emb})
        test_emb = _subject_embeddings(model, features, split.test, astats, mstats)
        eer1 = compute_eer(score_trials(scenario.trials, test_emb, centroids)).eer
    if 2 in req.scenarios:
        notes.append("scenario-2 EER omitted: checkpoint saw all subjects during training; "
                     "use the repetition harness (no --checkpoint) for honest scenario-2 numbers")

    embeddings_path = None
    if req.export_embeddings:
        test_emb = _subject_embeddings(model, features, split.test, astats, mstats)
        embeddings_path = out / f"{_prefix(req)}_embeddings.csv"
        _write_embeddings_csv(embeddings_path, test_emb)

    summary = {
        "n_repetitions": 1, "n_failures": 0,
        "accuracy_mean": accuracy, "accuracy_std": 0.0,
        "eer_scenario1_mean": eer1, "eer_scenario1_std": 0.0 if eer1 is not None else None,
        "eer_scenario2_mean": None, "eer_scenario2_std": None,
    }
    payload = {
        "checkpoint": req.checkpoint,
        "breath_type": req.breath_type, "arch": model.arch, "mode": model.mode,
        "seed": req.seed, "accuracy": accuracy, "eer_scenario1": eer1, "eer_scenario2": None,
        "notes": notes,
    }
    return summary, payload, [], embeddings_path, notes


def handle_eval(req: EvalRequest) -> EvalResponse:
    manifest = load_manifest(req.dataset)
    features = compute_features(manifest.of_type(req.breath_type), manifest_source(manifest))
    out = Path(req.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = _prefix(req)
    notes: list[str] = []

    if req.checkpoint is not None:
        summary, payload, reps, embeddings_path, notes = _eval_checkpoint(req, manifest, features, out)
    else:
        model_cfg = build_model_config(req.arch, req.model)
        train_cfg = build_train_config(req.training, req.seed)
        result = run_experiment(
            manifest, req.breath_type, req.arch, req.mode, req.repetitions, req.seed,
            model_config=model_cfg, train_config=train_cfg,
            features=features, scenarios=tuple(req.scenarios),
        )
        summary = result.summary
        payload = result.to_json()
        reps = result.repetitions
        embeddings_path = None
        if req.export_embeddings:
            # Embeddings from a model trained at the base seed (identical to
            # repetition 0 by construction), on the test split.
            split = make_split(manifest, req.breath_type, req.seed)
            model, _, _, astats, mstats = train_on_split(
                manifest, split, features, req.arch, req.mode, model_cfg, train_cfg, req.seed)
            test_emb = _subject_embeddings(model, features, split.test, astats, mstats)
            embeddings_path = out / f"{prefix}_embeddings.csv"
            _write_embeddings_csv(embeddings_path, test_emb)
            notes.append("embeddings exported from the base-seed model on its test split")

    metrics_json_path = out / f"eval_{prefix}.json"
    metrics_csv_path = out / f"eval_{prefix}.csv"
    summary_path = out / f"summary_{prefix}.csv"
    _write_json(metrics_json_path, payload)
    _write_metrics_csv(metrics_csv_path, reps, summary)
    write_summary_csv(summary_path, req.breath_type, req.arch, req.mode, summary)

    return EvalResponse(
        metrics_json_path=str(metrics_json_path),
        metrics_csv_path=str(metrics_csv_path),
        summary_path=str(summary_path),
        embeddings_path=None if embeddings_path is None else str(embeddings_path),
        n_repetitions=summary["n_repetitions"],
        n_failures=summary.get("n_failures", 0),
        accuracy_mean=summary["accuracy_mean"],
        accuracy_std=summary["accuracy_std"],
        eer_scenario1_mean=summary["eer_scenario1_mean"],
        eer_scenario1_std=summary["eer_scenario1_std"],
        eer_scenario2_mean=summary["eer_scenario2_mean"],
        eer_scenario2_std=summary["eer_scenario2_std"],
        notes=notes,
    )


def _collect_summary_rows(inputs: list[str]) -> list[dict]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("**/summary_*.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise DataError(f"report input {p} does not exist")
    if not paths:
        raise DataError("no summary CSV files found in the given inputs")
    rows = []
    for p in paths:
        with open(p, newline="") as f:
            for row in csv.DictReader(f):
                rows.append(row)
    return rows


def _pct(row: dict, mean_key: str, std_key: str) -> str:
    mean = row.get(mean_key) or ""
    if mean == "":
        return "-"
    std = row.get(std_key) or ""
    if std == "":
        return f"{float(mean) * 100:.2f}%"
    return f"{float(mean) * 100:.2f}% +/- {float(std) * 100:.2f}"


def handle_report(req: ReportRequest) -> ReportResponse:
    """Aggregate summary rows into per-metric tables: one row per
    (arch, breath type), one column per modality."""
    rows = _collect_summary_rows(req.inputs)
    cells: dict[tuple, dict[str, str]] = {}
    for row in rows:
        for metric, mkey, skey in (
            ("accuracy", "accuracy_mean", "accuracy_std"),
            ("eer_scenario1", "eer_scenario1_mean", "eer_scenario1_std"),
            ("eer_scenario2", "eer_scenario2_mean", "eer_scenario2_std"),
        ):
            key = (metric, row["arch"], row["breath_type"])
            cells.setdefault(key, {})[row["mode"]] = _pct(row, mkey, skey)

    modes = ["motion", "audio", "multimodal"]
    lines = []
    for metric, title in (
        ("accuracy", "identification accuracy"),
        ("eer_scenario1", "verification EER, scenario 1"),
        ("eer_scenario2", "verification EER, scenario 2"),
    ):
        block = {k: v for k, v in cells.items() if k[0] == metric}
        if not block:
            continue
        lines.append(f"== {title} ==")
        lines.append(f"{'arch':<10} {'breath':<8} " + " ".join(f"{m:<20}" for m in modes))
        for (_, arch, breath) in sorted(block):
            vals = block[(metric, arch, breath)]
            lines.append(f"{arch:<10} {breath:<8} " + " ".join(f"{vals.get(m, '-'):<20}" for m in modes))
        lines.append("")
    table = "\n".join(lines).rstrip() + "\n"

    out_path = None
    if req.out:
        out_path = Path(req.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(table)
    return ReportResponse(table=table, n_rows=len(rows), out_path=None if out_path is None else str(out_path))
