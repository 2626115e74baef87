"""Command-line entry point: ``dbfsim {scenarios,calibrate,run,sweep}``.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 a pipeline stage
failed, 4 output could not be written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .pipeline import (
    STAGE_ERRORS,
    SWEEP_AXES,
    OutputError,
    PipelineOptions,
    emit_outputs,
    run_calibration,
    run_monte_carlo,
)
from .scenario import (
    Mode,
    ScenarioConfig,
    ScenarioError,
    ValidationError,
    builtin_scenario,
    builtin_scenarios,
    load_scenario,
)
from .sync import exchange_record

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_STAGE = 3
EXIT_IO = 4

log = logging.getLogger("dbfsim")


def resolve_scenario(ref: str, mode: str | None = None, seed: int | None = None) -> ScenarioConfig:
    """A builtin name or a path to a scenario JSON file."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as err:
            raise ScenarioError(f"cannot read scenario {ref}: {err.strerror}") from err
        config = load_scenario(text)
    else:
        try:
            config = builtin_scenario(ref)
        except KeyError:
            raise ScenarioError(f"{ref!r} is neither a scenario file nor a builtin name") from None
    if mode is not None:
        config = replace(config, mode=Mode(mode))
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbfsim", description="Distributed beamforming array simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("scenarios", help="list builtin scenarios")

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--scenario", required=True, help="builtin name or scenario JSON path")
        sp.add_argument("--mode", choices=[m.value for m in Mode])
        sp.add_argument("--seed", type=int, help="master seed (defaults to the scenario's)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    cal = sub.add_parser("calibrate", help="estimate system delays at the calibration layout")
    common(cal)
    cal.add_argument("--epochs", type=int, default=16, help="exchanges per pair")

    for name, text in (("run", "Monte-Carlo pipeline trials"), ("sweep", "trials over a parameter grid")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--trials", type=int, default=1)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--dump-waveforms", action="store_true", help="also write I/Q waveform files")
        sp.add_argument("--normalize", action="store_true", help="scale weights to max |w| = 1")
        if name == "sweep":
            sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
            sp.add_argument("--values", required=True, type=_parse_values, help="comma-separated")
    return p


def _cmd_scenarios() -> int:
    for cfg in builtin_scenarios():
        n2 = cfg.node(2).true_position
        rx = ", ".join(f"RX{r.id}={r.objective.value}({r.true_position.x:g}, {r.true_position.y:g})"
                       for r in cfg.receivers)
        print(f"{cfg.name:<12} node2=({n2.x:g}, {n2.y:g})  {rx}")
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = resolve_scenario(args.scenario, args.mode, args.seed)
    opts = PipelineOptions(calibration_epochs=args.epochs)
    record, quads = run_calibration(cfg, cfg.seed, opts)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        doc = {f"{a}-{b}": t for (a, b), t in sorted(record.tau_cal_s.items())}
        (out / "calibration.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        with open(out / "exchanges.jsonl", "w", encoding="utf-8") as fh:
            for q in quads:
                fh.write(json.dumps(exchange_record(q, cfg.mode, cfg.seed, record), sort_keys=True) + "\n")
    except OSError as err:
        raise OutputError(f"cannot write {err.filename or out}: {err.strerror}") from err
    for (a, b), t in sorted(record.tau_cal_s.items()):
        print(f"tau_cal {a}-{b}: {t * 1e9:.6f} ns")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace, sweep: bool) -> int:
    cfg = resolve_scenario(args.scenario, args.mode, args.seed)
    if args.trials < 1 or args.jobs < 1:
        raise ValidationError("--trials and --jobs must be at least 1")
    opts = PipelineOptions(normalize_weights=args.normalize)
    grid = {args.axis: args.values} if sweep else None
    result = run_monte_carlo(cfg, args.trials, grid, seed=cfg.seed, options=opts, jobs=args.jobs)
    manifest = emit_outputs(result, args.out, dump_waveforms=args.dump_waveforms)
    failed = [r for r in result.reports if not r.ok]
    for p in result.points:
        ok = p.successful()
        label = "" if p.axis is None else f"{p.axis}={p.value:g}  "
        if ok:
            loc = p.localization(cfg)
            beam = p.beam_summary()
            print(
                f"{label}trials={len(p.reports)} range_rmse_mm="
                f"{1e3 * max(loc[k].rmse for k in ('d01', 'd02', 'd12')):.2f} "
                f"coord_rmse_mm={1e3 * max(loc[k].rmse for k in ('y1', 'x2', 'y2')):.2f} "
                f"null_depth_db={beam['null_depth_db_median']:.1f} "
                f"coherent_gain={beam['coherent_gain_median']:.3f}"
            )
    print(f"manifest: {manifest}")
    for r in failed[:5]:
        log.error("trial %d failed at %s: %s", r.trial, r.failed_stage, r.error)
    return EXIT_STAGE if failed else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "scenarios":
            return _cmd_scenarios()
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        return _cmd_run(args, sweep=args.command == "sweep")
    except (ScenarioError, ValidationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except STAGE_ERRORS as err:
        print(f"stage failure: {err}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
