"""Command-line entry point: ``eecfl validate|run|report``.

The output directory may also come from the ``EECFL_OUT`` environment
variable; nothing else is read from the environment.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

from . import agglomerator, telemetry
from .config import ConfigError, MODES, load_text

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class RunManifest:
    config_path: str
    config_sha256: str
    output_dir: str
    seed: int
    mode: str
    timestamp: str


class ArtifactMissingError(FileNotFoundError):
    pass


def _read_config(path: str):
    raw = Path(path).read_bytes()
    return raw, load_text(raw.decode("utf-8"))


def cmd_validate(args) -> int:
    try:
        _, cfg = _read_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 1
    print(f"ok: {args.config} ({cfg.mode}, topology {cfg.topology}, {cfg.rounds} rounds)")
    return 0


def cmd_run(args) -> int:
    out = args.out or os.environ.get("EECFL_OUT")
    if not out:
        print("error: no output directory (use --out or EECFL_OUT)", file=sys.stderr)
        return 2
    try:
        raw, cfg = _read_config(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return 1
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    cfg = cfg.with_overrides(**overrides) if overrides else cfg
    try:
        result = agglomerator.run(cfg)
    except agglomerator.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out_dir = agglomerator.write_run(result, out)
    (out_dir / "config.snapshot").write_bytes(raw)
    manifest = RunManifest(str(args.config), hashlib.sha256(raw).hexdigest(), str(out_dir),
                           cfg.seed, cfg.mode, _dt.datetime.now(_dt.timezone.utc).isoformat())
    (out_dir / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
    print(f"{cfg.mode}: best cloud accuracy {result.best_accuracy:.4f} over {cfg.rounds} rounds -> {out_dir}")
    return 0


def load_run_dir(path) -> dict:
    d = Path(path)
    metrics_path, snap, manifest = d / "metrics.jsonl", d / "config.snapshot", d / "manifest.json"
    for p in (metrics_path, snap, manifest):
        if not p.exists():
            raise ArtifactMissingError(f"{d}: missing {p.name}")
    metrics = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
    if not metrics:
        raise ArtifactMissingError(f"{d}: metrics.jsonl is empty")
    return {"config": tomllib.loads(snap.read_text()), "seed": json.loads(manifest.read_text())["seed"],
            "metrics": metrics, "path": str(d)}


def cmd_report(args) -> int:
    try:
        runs = [load_run_dir(p) for p in args.runs]
        rows = telemetry.summarize(runs)
    except (ArtifactMissingError, telemetry.IncompatibleRunsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    csv_text = telemetry.rows_to_csv(rows)
    target = Path(args.out) if args.out else Path(args.runs[0]).parent / "summary.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(csv_text)
    print(telemetry.format_table(rows))
    print(f"summary written to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eecfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one experiment and write its artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: $EECFL_OUT)")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--mode", choices=MODES, help="override mode.name")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize run directories into a CSV table")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--out", help="CSV path (default: summary.csv next to the first run)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
