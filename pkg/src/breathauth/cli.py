"""Command-line client for the pipeline service.

Subcommands mirror the service endpoints (`synth`, `train`, `eval`,
`report`, plus `serve`). By default each command calls the handler in
process; with --server URL it POSTs the same request to a running instance.

A plain key = value config file can supply any flag's value; explicit flags
take precedence over the file, the file over built-in defaults.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BreathAuthError, ConfigError, DataError, NumericalError
from .service import handlers
from .service.schemas import (
    EvalRequest,
    ModelOverrides,
    ReportRequest,
    SynthRequest,
    TrainOverrides,
    TrainRequest,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_MODEL_KEYS = ("n_filters", "kernel", "stride", "hidden", "forget_bias",
               "stage1_filters", "stage2_filters", "dropout")
_TRAIN_KEYS = ("batch_size", "max_epochs", "lr0", "halvings_max", "plateau_patience", "min_delta")


def read_config_file(path: str) -> dict:
    """Parse `key = value` lines; # starts a comment, values are JSON-ish."""
    values = {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value
    return values


def _merge(args: argparse.Namespace, file_values: dict, keys) -> dict:
    """Flags beat the config file; unset keys fall back to schema defaults."""
    merged = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in file_values:
            merged[key] = file_values[key]
    return merged


def _add_common(parser):
    parser.add_argument("--config", help="key = value config file; flags override it")
    parser.add_argument("--server", help="base URL of a running service; run remotely instead of in process")
    parser.add_argument("--seed", type=int, default=None, help="master seed; all randomness flows from it")


def _add_model_flags(parser):
    group = parser.add_argument_group("model hyperparameters")
    group.add_argument("--n-filters", dest="n_filters", type=int, default=None)
    group.add_argument("--kernel", type=int, default=None)
    group.add_argument("--stride", type=int, default=None)
    group.add_argument("--hidden", type=int, default=None)
    group.add_argument("--forget-bias", dest="forget_bias", type=float, default=None)
    group.add_argument("--stage1-filters", dest="stage1_filters", type=int, default=None)
    group.add_argument("--stage2-filters", dest="stage2_filters", type=int, default=None)
    group.add_argument("--dropout", type=float, default=None)
    group = parser.add_argument_group("training hyperparameters")
    group.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    group.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    group.add_argument("--lr0", type=float, default=None)
    group.add_argument("--halvings-max", dest="halvings_max", type=int, default=None)
    group.add_argument("--plateau-patience", dest="plateau_patience", type=int, default=None)
    group.add_argument("--min-delta", dest="min_delta", type=float, default=None)


def _add_run_flags(parser):
    parser.add_argument("--dataset", default=None, help="dataset root (holds manifest.json)")
    parser.add_argument("--out-dir", dest="out_dir", default=None, help="output directory")
    parser.add_argument("--breath-type", dest="breath_type", default=None,
                        choices=["normal", "deep", "strong"])
    parser.add_argument("--arch", default=None, choices=["cnn-lstm", "tcn"])
    parser.add_argument("--mode", default=None, choices=["multimodal", "audio", "motion"])
    _add_model_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="breathauth",
                                     description="Multimodal breath biometrics pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort on disk")
    p.add_argument("--root", default=None, help="target dataset directory")
    p.add_argument("--subjects", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--sessions-min", dest="sessions_min", type=int, default=None)
    p.add_argument("--sessions-max", dest="sessions_max", type=int, default=None)
    p.add_argument("--force", action="store_true", default=None,
                   help="overwrite a non-empty target directory")
    _add_common(p)

    p = sub.add_parser("train", help="train one identification model")
    _add_run_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="repeated-split evaluation, or single-checkpoint evaluation")
    _add_run_flags(p)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--scenarios", default=None,
                   help="comma-separated verification scenarios to run (e.g. 1,2 or none)")
    p.add_argument("--checkpoint", default=None, help="evaluate this saved model instead of retraining")
    p.add_argument("--export-embeddings", dest="export_embeddings", action="store_true", default=None)
    _add_common(p)

    p = sub.add_parser("report", help="aggregate summary CSVs into one table")
    p.add_argument("inputs", nargs="+", help="summary CSV files or directories to scan")
    p.add_argument("--out", default=None, help="write the table to this file")
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _parse_scenarios(value) -> list[int]:
    if isinstance(value, list):
        return [int(v) for v in value]
    text = str(value).strip().lower()
    if text in ("", "none"):
        return []
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --scenarios value {value!r}; expected e.g. 1,2 or none")


def build_request(args: argparse.Namespace, file_values: dict):
    if args.command == "synth":
        fields = _merge(args, file_values, ("root", "subjects", "seed", "noise",
                                            "sessions_min", "sessions_max", "force"))
        if "root" not in fields:
            raise ConfigError("synth requires --root (or root = ... in the config file)")
        return "/synth", SynthRequest(**fields)

    if args.command in ("train", "eval"):
        keys = ["dataset", "out_dir", "breath_type", "arch", "mode", "seed"]
        if args.command == "eval":
            keys += ["repetitions", "scenarios", "checkpoint", "export_embeddings"]
        fields = _merge(args, file_values, keys)
        for required in ("dataset", "out_dir"):
            if required not in fields:
                raise ConfigError(f"{args.command} requires --{required.replace('_', '-')}")
        if "scenarios" in fields:
            fields["scenarios"] = _parse_scenarios(fields["scenarios"])
        fields["model"] = ModelOverrides(**_merge(args, file_values, _MODEL_KEYS))
        fields["training"] = TrainOverrides(**_merge(args, file_values, _TRAIN_KEYS))
        if args.command == "train":
            return "/train", TrainRequest(**fields)
        return "/eval", EvalRequest(**fields)

    if args.command == "report":
        fields = _merge(args, file_values, ("out",))
        return "/report", ReportRequest(inputs=list(args.inputs), **fields)

    raise ConfigError(f"unknown command {args.command!r}")


def call_remote(server: str, path: str, request):
    import httpx

    response = httpx.post(server.rstrip("/") + path, json=request.model_dump(), timeout=None)
    if response.status_code == 200:
        return response.json()
    try:
        body = response.json()
    except json.JSONDecodeError:
        raise DataError(f"server error {response.status_code}: {response.text[:200]}")
    error = body.get("error", "")
    detail = body.get("detail", response.text[:200])
    if error == "ConfigError":
        raise ConfigError(detail)
    if error == "NumericalError":
        raise NumericalError(detail)
    raise DataError(detail)


_HANDLERS = {
    "/synth": handlers.handle_synth,
    "/train": handlers.handle_train,
    "/eval": handlers.handle_eval,
    "/report": handlers.handle_report,
}


def _print_response(command: str, payload: dict) -> None:
    if command == "synth":
        print(f"wrote {payload['n_instances']} instances for {payload['n_subjects']} subjects")
        print(f"manifest: {payload['manifest_path']}")
        print("instances per subject:")
        for subject, count in sorted(payload["instances_per_subject"].items()):
            print(f"  {subject}: {count}")
    elif command == "report":
        print(payload["table"], end="")
        if payload.get("out_path"):
            print(f"table written to {payload['out_path']}")
    else:
        for key, value in payload.items():
            if value is None:
                continue
            if isinstance(value, list):
                for item in value:
                    print(f"{key}: {item}")
            else:
                print(f"{key}: {value}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    try:
        file_values = read_config_file(args.config) if args.config else {}
        path, request = build_request(args, file_values)
        if args.server:
            payload = call_remote(args.server, path, request)
        else:
            payload = _HANDLERS[path](request).model_dump()
        _print_response(args.command, payload)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, BreathAuthError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
