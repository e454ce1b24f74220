"""Counter machines: well-formedness, a reference interpreter, and the
compiler that turns a machine into a single-hop system of counter, state and
transition cells.

Counters are indexed from 0. One machine step takes two rounds of the
compiled system: in the "a" round the current state cell and every counter
cell announce themselves and exactly one transition cell charges up; in the
"b" round that transition cell activates the next state and updates a
counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .core import (
    NON_INCREASING,
    BioelectricEvent,
    CellDefinition,
    Condition,
    ExpressionRule,
    FiringFunction,
    MembraneFunction,
    MembraneRule,
    Step,
)
from .engine import SystemConfig, Trace, run
from .topology import complete

ZERO, POSITIVE = "0", ">0"
INC, DEC = "INC", "DEC"
HALT = "halt"

#: floor for compiled cells; unreachable for well-formed machines
CELL_FLOOR = -1


class CmError(ValueError):
    pass


class DecrementAtZero(CmError):
    pass


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Transition:
    state: str
    counter: Optional[int]      # None is the wildcard
    status: Optional[str]       # ZERO / POSITIVE; None with the wildcard
    to: str
    op_counter: int
    op: str

    @property
    def wildcard(self) -> bool:
        return self.counter is None

    def __str__(self):
        pre = f"({self.state}, *)" if self.wildcard else \
            f"({self.state}, c{self.counter}, {self.status})"
        return f"{pre} -> ({self.to}, c{self.op_counter}, {self.op})"


@dataclass(frozen=True)
class CounterMachine:
    counters: tuple[int, ...]
    states: tuple[str, ...]
    start: str
    halt: frozenset[str]
    transitions: tuple[Transition, ...]

    def __post_init__(self):
        object.__setattr__(self, "counters", tuple(int(c) for c in self.counters))
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "halt", frozenset(self.halt))
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def with_counters(self, values: Mapping[int, int]) -> "CounterMachine":
        counters = list(self.counters)
        for i, v in values.items():
            counters[i] = int(v)
        return CounterMachine(tuple(counters), self.states, self.start, self.halt,
                              self.transitions)

    def to_json(self) -> dict:
        return {
            "counters": list(self.counters),
            "states": [{"name": s, "halt": s in self.halt} for s in self.states],
            "start": self.start,
            "transitions": [
                {"state": t.state, "counter": "*" if t.wildcard else t.counter,
                 "status": t.status, "to": t.to, "op_counter": t.op_counter, "op": t.op}
                for t in self.transitions
            ],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "CounterMachine":
        states, halt = [], set()
        for s in d["states"]:
            if isinstance(s, str):
                states.append(s)
            else:
                states.append(s["name"])
                if s.get("halt"):
                    halt.add(s["name"])
        ts = []
        for t in d["transitions"]:
            wild = t.get("counter", "*") == "*"
            ts.append(Transition(t["state"], None if wild else int(t["counter"]),
                                 None if wild else str(t["status"]), t["to"],
                                 int(t["op_counter"]), str(t["op"]).upper()))
        return cls(tuple(d["counters"]), tuple(states), d["start"], frozenset(halt), tuple(ts))


def expand_wildcards(cm: CounterMachine) -> CounterMachine:
    if not cm.counters:
        raise CmError("a machine without counters cannot expand wildcards")
    out = []
    for t in cm.transitions:
        if t.wildcard:
            out.append(Transition(t.state, 0, ZERO, t.to, t.op_counter, t.op))
            out.append(Transition(t.state, 0, POSITIVE, t.to, t.op_counter, t.op))
        else:
            out.append(t)
    return CounterMachine(cm.counters, cm.states, cm.start, cm.halt, tuple(out))


@dataclass(frozen=True)
class CmViolation:
    property: str    # "structure", "P1", "P2", "P3"
    detail: str

    def __str__(self):
        return f"{self.property}: {self.detail}"


class NotWellFormed(CmError):
    def __init__(self, violations: Sequence[CmViolation]):
        self.violations = list(violations)
        super().__init__("; ".join(map(str, self.violations)))


@dataclass(frozen=True)
class WellFormedCM:
    machine: CounterMachine
    table: Mapping[str, tuple[int, Mapping[str, Transition]]] = field(compare=False)

    def enabled(self, state: str, counters: Sequence[int]) -> Transition:
        counter, by_status = self.table[state]
        return by_status[ZERO if counters[counter] == 0 else POSITIVE]


def check_well_formed(cm: CounterMachine) -> list[CmViolation]:
    v: list[CmViolation] = []
    states = set(cm.states)
    if len(states) != len(cm.states):
        v.append(CmViolation("structure", "duplicate state names"))
    if cm.start not in states:
        v.append(CmViolation("structure", f"start state {cm.start!r} is not a state"))
    for h in cm.halt - states:
        v.append(CmViolation("structure", f"halt state {h!r} is not a state"))
    if any(c < 0 for c in cm.counters):
        v.append(CmViolation("structure", "counters start at non-negative values"))
    k = len(cm.counters)
    by_state: dict[str, list[Transition]] = {}
    for t in cm.transitions:
        if t.state not in states or t.to not in states:
            v.append(CmViolation("structure", f"{t}: unknown state"))
            continue
        if t.state in cm.halt:
            v.append(CmViolation("structure", f"{t}: halt state {t.state!r} has an outgoing transition"))
        if t.wildcard:
            v.append(CmViolation("structure", f"{t}: wildcard not expanded"))
            continue
        if not 0 <= t.counter < k:
            v.append(CmViolation("structure", f"{t}: tests unknown counter c{t.counter}"))
            continue
        if t.status not in (ZERO, POSITIVE):
            v.append(CmViolation("structure", f"{t}: status must be '0' or '>0'"))
            continue
        if t.op not in (INC, DEC) or not 0 <= t.op_counter < k:
            v.append(CmViolation("P2", f"{t}: needs exactly one INC or DEC on a known counter"))
            continue
        by_state.setdefault(t.state, []).append(t)
    for s in cm.states:
        if s in cm.halt:
            continue
        ts = by_state.get(s, [])
        tested = sorted({t.counter for t in ts})
        if len(tested) > 1:
            v.append(CmViolation("P1", f"state {s!r} tests counters {tested}"))
            continue
        for status in (ZERO, POSITIVE):
            n = sum(t.status == status for t in ts)
            if n == 0:
                v.append(CmViolation("P3", f"state {s!r} incomplete: no transition for status {status}"))
            elif n > 1:
                v.append(CmViolation("P3", f"state {s!r} ambiguous: {n} transitions for status {status}"))
    return v


def validate_well_formed(cm: CounterMachine) -> WellFormedCM:
    problems = check_well_formed(cm)
    if problems:
        raise NotWellFormed(problems)
    table: dict[str, tuple[int, dict[str, Transition]]] = {}
    for t in cm.transitions:
        table.setdefault(t.state, (t.counter, {}))[1][t.status] = t
    return WellFormedCM(cm, table)


def well_formed(cm: CounterMachine) -> WellFormedCM:
    return validate_well_formed(expand_wildcards(cm))


# -- reference interpreter ------------------------------------------------------------

@dataclass(frozen=True)
class CmEntry:
    step: int
    state: str
    counters: tuple[int, ...]


@dataclass(frozen=True)
class CmTrace:
    entries: tuple[CmEntry, ...]
    halted: bool

    @property
    def steps(self) -> int:
        return self.entries[-1].step if self.entries else 0

    @property
    def final(self) -> CmEntry:
        return self.entries[-1]


def interpret(wf: WellFormedCM, max_steps: int) -> CmTrace:
    cm = wf.machine
    state, counters = cm.start, list(cm.counters)
    entries = [CmEntry(0, state, tuple(counters))]
    for step in range(1, max_steps + 1):
        if state in cm.halt:
            break
        t = wf.enabled(state, counters)
        if t.op == DEC:
            if counters[t.op_counter] == 0:
                raise DecrementAtZero(f"step {step}: {t} decrements c{t.op_counter} at 0")
            counters[t.op_counter] -= 1
        else:
            counters[t.op_counter] += 1
        state = t.to
        entries.append(CmEntry(step, state, tuple(counters)))
    return CmTrace(tuple(entries), state in cm.halt)


# -- compilation ------------------------------------------------------------------

def _at_least_one(threshold=1) -> FiringFunction:
    return FiringFunction.step_at(threshold)


def counter_cell(i: int, initial: int) -> CellDefinition:
    zero = FiringFunction(1, (Step(0, 0, strict=True),), NON_INCREASING)
    nonzero = FiringFunction(0, (Step(0, 1, strict=True),))
    g = MembraneFunction(1, (
        MembraneRule((Condition(f"INC_{i}"),), 1),
        MembraneRule((Condition(f"DEC_{i}"),), -1),
    ))
    return CellDefinition(
        name=f"counter_{i}", q0=initial, sigma=0, lam=0, omega=CELL_FLOOR, membrane=g,
        events=(BioelectricEvent(zero, 0, f"ZERO_{i}"),
                BioelectricEvent(nonzero, 0, f"NONZERO_{i}")),
    )


def state_cell(name: str, start: bool, halt: bool) -> CellDefinition:
    q0 = 1 if start else 0
    g = MembraneFunction(1, (MembraneRule((Condition(f"ASTATE_{name}"),), 1),))
    return CellDefinition(
        name=f"state_{name}", q0=q0, sigma=q0, lam=0, omega=CELL_FLOOR, membrane=g,
        events=(BioelectricEvent(_at_least_one(), -1, f"STATE_{name}"),),
        expression=ExpressionRule(HALT, 1) if halt else None,
    )


def transition_cell(index: int, t: Transition) -> CellDefinition:
    status_ligand = f"ZERO_{t.counter}" if t.status == ZERO else f"NONZERO_{t.counter}"
    g = MembraneFunction(1, (
        MembraneRule((Condition(f"STATE_{t.state}"), Condition(status_ligand)), 1),
    ))
    return CellDefinition(
        name=f"transition_{index}", q0=0, sigma=0, lam=1, omega=CELL_FLOOR, membrane=g,
        events=(BioelectricEvent(_at_least_one(), 0, f"ASTATE_{t.to}"),
                BioelectricEvent(_at_least_one(), 0, f"{t.op}_{t.op_counter}")),
    )


@dataclass(frozen=True)
class CompiledSystem:
    config: SystemConfig
    machine: CounterMachine
    counter_cells: tuple[int, ...]
    state_cells: Mapping[str, int] = field(compare=False)
    transition_cells: tuple[int, ...]

    @property
    def halt_cells(self) -> dict[str, int]:
        return {s: v for s, v in self.state_cells.items() if s in self.machine.halt}


def compile_cm(wf: WellFormedCM) -> CompiledSystem:
    cm = wf.machine
    cells: list[CellDefinition] = []
    counter_v = []
    for i, init in enumerate(cm.counters):
        counter_v.append(len(cells))
        cells.append(counter_cell(i, init))
    state_v = {}
    for s in cm.states:
        state_v[s] = len(cells)
        cells.append(state_cell(s, s == cm.start, s in cm.halt))
    trans_v = []
    for idx, t in enumerate(cm.transitions):
        trans_v.append(len(cells))
        cells.append(transition_cell(idx, t))
    config = SystemConfig(complete(len(cells)), tuple(cells))
    return CompiledSystem(config, cm, tuple(counter_v), state_v, tuple(trans_v))


# -- decoding ------------------------------------------------------------------

def _start_potentials(trace: Trace):
    """Yield ``(round, potentials, expressed_labels)`` for every round start
    covered by the trace, the final state included."""
    pots = list(trace.config.initial_state().potentials)
    for report in trace.reports:
        yield report.round, tuple(pots), report
        for c in report.cells:
            pots[c.vertex] = c.end
    yield trace.final.round, tuple(trace.final.potentials), None


def decode(trace: Trace, compiled: CompiledSystem) -> CmTrace:
    cm = compiled.machine
    state_of = {v: s for s, v in compiled.state_cells.items()}
    entries: list[CmEntry] = []
    halted = False
    for rnd, pots, report in _start_potentials(trace):
        if report is not None:
            _check_b_round_inputs(report, compiled)
        if rnd % 2 == 0:
            if report is not None:
                charged = [v for v in compiled.transition_cells if pots[v] >= 1]
                if len(charged) != 1:
                    raise DecodeError(f"round {rnd}: {len(charged)} transition cells charged")
            continue
        if entries and entries[-1].step == (rnd - 1) // 2:
            continue
        live = [state_of[v] for v in compiled.state_cells.values() if pots[v] >= 1]
        if len(live) != 1:
            raise DecodeError(f"round {rnd}: {len(live)} state cells hold potential >= 1")
        counters = []
        for v in compiled.counter_cells:
            x = pots[v]
            if x.denominator != 1 or x < 0:
                raise DecodeError(f"round {rnd}: counter cell {v} holds {x}")
            counters.append(int(x))
        entries.append(CmEntry((rnd - 1) // 2, live[0], tuple(counters)))
        if report is not None and any(label == HALT for _, label in report.expressions):
            halted = True
            break
        if live[0] in cm.halt:
            halted = True
            break
    return CmTrace(tuple(entries), halted)


def _check_b_round_inputs(report, compiled: CompiledSystem) -> None:
    for v in compiled.counter_cells:
        c = report.cell(v)
        if c is None:
            continue
        got = dict(c.received)
        i = compiled.counter_cells.index(v)
        if got.get(f"INC_{i}") and got.get(f"DEC_{i}"):
            raise DecodeError(f"round {report.round}: counter {i} got INC and DEC together")


@dataclass(frozen=True)
class EquivalenceReport:
    agree: bool
    oracle: CmTrace
    decoded: CmTrace
    first_divergence: Optional[int]
    halt_round: Optional[int]
    rounds: int

    def __str__(self):
        if self.agree:
            tail = f"halted at round {self.halt_round}" if self.halt_round else "budget reached"
            return f"agree over {len(self.oracle.entries)} entries ({tail})"
        return f"diverge at entry {self.first_divergence}"


def verify_equivalence(cm: CounterMachine, max_steps: int, seed: int = 0) -> EquivalenceReport:
    wf = well_formed(cm)
    oracle = interpret(wf, max_steps)
    compiled = compile_cm(wf)
    trace = run(compiled.config, seed, 2 * max_steps, stop="first-expression:" + HALT)
    decoded = decode(trace, compiled)
    first = None
    for i, (a, b) in enumerate(zip(oracle.entries, decoded.entries)):
        if a != b:
            first = i
            break
    if first is None and len(oracle.entries) != len(decoded.entries):
        first = min(len(oracle.entries), len(decoded.entries))
    if first is None and oracle.halted != decoded.halted:
        first = len(oracle.entries) - 1
    halt_round = None
    for r in trace.reports:
        if any(label == HALT for _, label in r.expressions):
            halt_round = r.round
            break
    return EquivalenceReport(first is None, oracle, decoded, first, halt_round, len(trace.reports))


# -- sample machines ------------------------------------------------------------------

def _t(state, counter, status, to, op_counter, op) -> Transition:
    return Transition(state, counter, status, to, op_counter, op)


def decrement_loop(c0: int = 2) -> CounterMachine:
    """Counts c0 down to zero, then increments it once and halts."""
    return CounterMachine((c0,), ("q0", "h"), "q0", {"h"}, (
        _t("q0", 0, POSITIVE, "q0", 0, DEC),
        _t("q0", 0, ZERO, "h", 0, INC),
    ))


def adder(a: int = 3, b: int = 2) -> CounterMachine:
    """Moves c0 into c1 (c1 ends at a + b, c0 at 1)."""
    return CounterMachine((a, b), ("q0", "q1", "h"), "q0", {"h"}, (
        _t("q0", 0, POSITIVE, "q1", 0, DEC),
        _t("q0", 0, ZERO, "h", 0, INC),
        _t("q1", None, None, "q0", 1, INC),
    ))


def copier(a: int = 3) -> CounterMachine:
    """Copies c0 into c1 through the scratch counter c2; c0 is restored."""
    return CounterMachine((a, 0, 0), ("q0", "q1", "q2", "q3", "q4", "q5", "q6", "h"), "q0", {"h"}, (
        _t("q0", 0, POSITIVE, "q1", 0, DEC),
        _t("q0", 0, ZERO, "q3", 0, INC),
        _t("q1", None, None, "q2", 1, INC),
        _t("q2", None, None, "q0", 2, INC),
        _t("q3", None, None, "q4", 0, DEC),
        _t("q4", 2, POSITIVE, "q5", 2, DEC),
        _t("q4", 2, ZERO, "q6", 2, INC),
        _t("q5", None, None, "q4", 0, INC),
        _t("q6", None, None, "h", 2, DEC),
    ))


def parity(a: int = 5) -> CounterMachine:
    """Halts in ``even`` or ``odd`` according to the parity of c0."""
    return CounterMachine((a, 0), ("qe", "qo", "even", "odd"), "qe", {"even", "odd"}, (
        _t("qe", 0, POSITIVE, "qo", 0, DEC),
        _t("qe", 0, ZERO, "even", 1, INC),
        _t("qo", 0, POSITIVE, "qe", 0, DEC),
        _t("qo", 0, ZERO, "odd", 1, INC),
    ))


def forever(a: int = 0) -> CounterMachine:
    """Never halts: c0 oscillates between 0 and 1 while c1 counts steps."""
    return CounterMachine((a, 0), ("q0", "q1"), "q0", frozenset(), (
        _t("q0", 0, ZERO, "q1", 0, INC),
        _t("q0", 0, POSITIVE, "q1", 0, DEC),
        _t("q1", None, None, "q0", 1, INC),
    ))


MACHINES = {
    "decrement-loop": decrement_loop,
    "adder": adder,
    "copier": copier,
    "parity": parity,
    "forever": forever,
}
