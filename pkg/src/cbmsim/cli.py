"""Command line entry point.

Exit codes: 0 success, 1 validation or safety failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import cm as cmmod
from .core import CellDefinitionError, cell_from_json, firing_from_json, validate_cell, validate_monotone
from .engine import ConfigError, SystemConfig, Trace, run
from .harness import ExperimentSpec, SafetyViolation, run_experiment, write_summary

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_json(path: str, flag: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{flag}: no such file {path!r}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag}: {path} is not valid JSON ({exc})") from None


def cmd_run(args) -> int:
    config = SystemConfig.from_json(_load_json(args.config, "config"))
    if args.max_rounds < 1:
        raise UsageError("--max-rounds: must be at least 1")
    trace = run(config, args.seed, args.max_rounds, args.stop, record=bool(args.trace))
    if args.trace:
        trace.write(args.trace)
    final = trace.final
    expressed = [(v, s.label) for v, s in enumerate(final.statuses) if s.kind == "expressed"]
    print(f"stop: {trace.stop_reason} after round {final.round - 1}")
    print(f"expressed: {expressed if expressed else 'none'}")
    return OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_json(_load_json(args.spec, "spec"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = run_experiment(spec)
    except SafetyViolation as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return FAILED
    write_summary(rows, out / f"summary.{args.format}", args.format, spec)
    for r in rows:
        lo, hi = r.interval
        print(f"{json.dumps(r.point, sort_keys=True)}  {r.successes}/{r.trials}  "
              f"[{lo:.4f}, {hi:.4f}]  safety={r.safety_violations}")
    return FAILED if any(r.safety_violations for r in rows) else OK


def _machine(path: str, counter1: Optional[int]) -> cmmod.CounterMachine:
    machine = cmmod.CounterMachine.from_json(_load_json(path, "cm"))
    if counter1 is not None:
        if not machine.counters:
            raise UsageError("--counter1: the machine has no counters")
        if counter1 < 0:
            raise UsageError("--counter1: must be non-negative")
        machine = machine.with_counters({0: counter1})
    return machine


def cmd_compile_cm(args) -> int:
    machine = _machine(args.cm, args.counter1)
    try:
        wf = cmmod.well_formed(machine)
    except cmmod.CmError as exc:
        for v in getattr(exc, "violations", [exc]):
            print(f"violation: {v}", file=sys.stderr)
        return FAILED
    compiled = cmmod.compile_cm(wf)
    Path(args.out).write_text(json.dumps(compiled.config.to_json(), indent=2, sort_keys=True) + "\n")
    print(f"{compiled.config.n} cells: {len(compiled.counter_cells)} counter, "
          f"{len(compiled.state_cells)} state, {len(compiled.transition_cells)} transition")
    return OK


def cmd_decode_cm(args) -> int:
    machine = _machine(args.cm, args.counter1)
    wf = cmmod.well_formed(machine)
    compiled = cmmod.compile_cm(wf)
    trace = Trace.from_jsonl(Path(args.trace).read_text())
    decoded = cmmod.decode(trace, compiled)
    for e in decoded.entries:
        print(f"{e.step}\t{e.state}\t{' '.join(map(str, e.counters))}")
    oracle = cmmod.interpret(wf, decoded.steps)
    if oracle.entries != decoded.entries:
        print("decoded trace differs from the interpreter", file=sys.stderr)
        return FAILED
    print("halted" if decoded.halted else "not halted")
    return OK


def _validate_doc(doc: dict) -> list[str]:
    if "transitions" in doc:
        return [str(v) for v in cmmod.check_well_formed(cmmod.expand_wildcards(
            cmmod.CounterMachine.from_json(doc)))]
    if "experiment" in doc:
        ExperimentSpec.from_json(doc)
        return []
    if "topology" in doc:
        SystemConfig.from_json(doc)
        return []
    if "events" in doc or "membrane" in doc:
        return validate_cell(cell_from_json(doc))
    if "breakpoints" in doc or "below" in doc:
        v = validate_monotone(firing_from_json(doc))
        return [] if v is None else [str(v)]
    raise UsageError("validate: cannot tell what kind of document this is")


def cmd_validate(args) -> int:
    doc = _load_json(args.file, "file")
    try:
        problems = _validate_doc(doc)
    except (CellDefinitionError, ConfigError, cmmod.CmError, ValueError, KeyError) as exc:
        problems = [f"{type(exc).__name__}: {exc}"]
    for p in problems:
        print(f"violation: {p}")
    if not problems:
        print("ok")
    return FAILED if problems else OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbmsim", description="Bioelectric cell network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one seed of a system config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-rounds", type=int, default=1000)
    r.add_argument("--stop", default="first-expression",
                   help="first-expression[:label], all-inactive, fixed-point[:W] or budget")
    r.add_argument("--trace", help="write a JSONL trace here")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="run an experiment spec and write a summary")
    e.add_argument("spec")
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("compile-cm", help="compile a counter machine into a system config")
    c.add_argument("cm")
    c.add_argument("--counter1", type=int, help="initial value of the first counter (the input)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compile_cm)

    d = sub.add_parser("decode-cm", help="decode a trace of a compiled machine")
    d.add_argument("cm")
    d.add_argument("trace")
    d.add_argument("--counter1", type=int)
    d.set_defaults(func=cmd_decode_cm)

    v = sub.add_parser("validate", help="check a cell, firing function, config, spec or machine file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (ConfigError, CellDefinitionError, cmmod.CmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
