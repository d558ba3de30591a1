"""Command-line entry point: ``stimtm {synth,run,cost,analyze,export-maps}``.

Exit codes: 0 ok, 1 configuration error, 2 runtime error. ``STIMTM_THREADS``
caps the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from threadpoolctl import threadpool_limits

from .core import ConfigError
from .cost import schedule_cost
from .encoder import Encoder
from .experiment import (
    ExperimentConfig,
    apply_overrides,
    dumps_report,
    error_report,
    export_merge_maps,
    load_input,
    make_hooks,
    run_experiment,
)
from .synth import SyntheticVideoSpec, synth_generate
from .tensorfile import write_tensor

THREADS_ENV = "STIMTM_THREADS"


def _load_config(args) -> tuple[dict, ExperimentConfig]:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("unreadable config", str(exc)) from None
    raw = apply_overrides(raw, args.set)
    args.raw_config = raw
    return raw, ExperimentConfig.from_dict(raw).validate()


def _emit(text: str, path) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    spec = {}
    if args.spec:
        spec = json.loads(Path(args.spec).read_text())
    spec = apply_overrides(spec, args.set)
    vid = synth_generate(SyntheticVideoSpec.from_dict(spec), args.seed)
    write_tensor(args.out, vid.frames)
    if args.mask_out:
        write_tensor(args.mask_out, vid.mask.astype("float32"))
    return 0


def cmd_run(args) -> int:
    _, config = _load_config(args)
    if args.maps_dir:
        config.outputs["maps_dir"] = args.maps_dir
    if args.csv_dir:
        config.outputs["csv_dir"] = args.csv_dir
    _emit(dumps_report(run_experiment(config)), args.report or config.outputs.get("report"))
    return 0


def cmd_cost(args) -> int:
    _, config = _load_config(args)
    report = {"schema": 1, "status": "ok", "config": config.to_dict(),
              "cost": schedule_cost(config.model, config.merge_schedule()).to_dict()}
    _emit(dumps_report(report), args.report)
    return 0


def cmd_analyze(args) -> int:
    _, config = _load_config(args)
    analyses = dict(config.analyses)
    if args.similarity:
        analyses.setdefault("similarity", {})
    if args.static_dynamic:
        analyses["static_dynamic"] = True
    if args.ib:
        analyses.setdefault("ib", {})
    if not analyses:
        raise ConfigError("nothing to analyze", "pass --similarity, --static-dynamic or --ib")
    config.analyses = analyses
    if args.csv_dir:
        config.outputs["csv_dir"] = args.csv_dir
    report = run_experiment(config)
    _emit(dumps_report({k: report[k] for k in ("schema", "status", "config", "analyses")}), args.report)
    return 0


def cmd_export_maps(args) -> int:
    _, config = _load_config(args)
    encoder = Encoder(config.model, config.seed)
    video, _ = load_input(config)
    result = encoder.forward(encoder.tokenize(video), config.merge_schedule(), make_hooks(config.flags),
                             proportional_attention=config.flags.proportional_attention,
                             keep_artifacts=False)
    layers = set(args.layers) if args.layers else None
    for p in export_merge_maps(result.snapshots, args.out, layers):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stimtm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, value parsed as JSON when possible")

    p = sub.add_parser("synth", help="write a synthetic video as a tensor file")
    p.add_argument("--spec", help="synthetic video spec (JSON)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run an experiment and print its report")
    config_args(p)
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--maps-dir")
    p.add_argument("--csv-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("cost", help="analytic FLOPs of a schedule")
    config_args(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("analyze", help="redundancy and IB analyses")
    config_args(p)
    p.add_argument("--similarity", action="store_true")
    p.add_argument("--static-dynamic", action="store_true")
    p.add_argument("--ib", action="store_true")
    p.add_argument("--report")
    p.add_argument("--csv-dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-maps", help="per-layer merge-map CSVs")
    config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, nargs="*", help="1-based layers (default all)")
    p.set_defaults(func=cmd_export_maps)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get(THREADS_ENV)
    limit = threadpool_limits(int(threads)) if threads else nullcontext()
    report_path = getattr(args, "report", None)
    try:
        with limit:
            return args.func(args)
    except ConfigError as exc:
        code = 1
        err = exc
    except Exception as exc:  # noqa: BLE001 - every failure becomes a report stub
        code = 2
        err = exc
    stub = dumps_report(error_report(err, getattr(args, "raw_config", None)))
    if report_path:
        Path(report_path).write_text(stub)
    sys.stderr.write(stub)
    return code


if __name__ == "__main__":
    sys.exit(main())
