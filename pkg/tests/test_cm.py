import pytest
from hypothesis import assume, given, strategies as st

from cbmsim import cm
from cbmsim.cm import (
    DEC,
    INC,
    POSITIVE,
    ZERO,
    CmError,
    CounterMachine,
    DecrementAtZero,
    NotWellFormed,
    Transition,
    check_well_formed,
    compile_cm,
    decode,
    expand_wildcards,
    interpret,
    verify_equivalence,
    well_formed,
)
from cbmsim.engine import run, step
from cbmsim.enumeration import firing_probabilities, express


def test_wildcard_expansion():
    m = CounterMachine((0,), ("q0", "h"), "q0", {"h"}, (Transition("q0", None, None, "h", 0, INC),))
    ts = expand_wildcards(m).transitions
    assert ts == (Transition("q0", 0, ZERO, "h", 0, INC), Transition("q0", 0, POSITIVE, "h", 0, INC))
    plain = cm.decrement_loop()
    assert expand_wildcards(plain) == plain
    two = CounterMachine((0,), ("a", "b", "h"), "a", {"h"}, (
        Transition("a", None, None, "b", 0, INC), Transition("b", None, None, "h", 0, INC)))
    assert len(expand_wildcards(two).transitions) == 4
    with pytest.raises(CmError):
        expand_wildcards(CounterMachine((), ("q",), "q", set(), (Transition("q", None, None, "q", 0, INC),)))


def _props(m):
    return {v.property for v in check_well_formed(m)}


def test_well_formedness_violations():
    incomplete = CounterMachine((0,), ("q", "h"), "q", {"h"}, (Transition("q", 0, ZERO, "h", 0, INC),))
    assert _props(incomplete) == {"P3"}
    assert "incomplete" in str(check_well_formed(incomplete)[0])
    two_counters = CounterMachine((0, 0), ("q", "h"), "q", {"h"}, (
        Transition("q", 0, ZERO, "h", 0, INC), Transition("q", 1, POSITIVE, "h", 0, INC)))
    assert "P1" in _props(two_counters)
    ambiguous = CounterMachine((0,), ("q", "h"), "q", {"h"}, (
        Transition("q", 0, ZERO, "h", 0, INC), Transition("q", 0, ZERO, "q", 0, INC),
        Transition("q", 0, POSITIVE, "h", 0, DEC)))
    assert _props(ambiguous) == {"P3"}
    bad_op = CounterMachine((0,), ("q", "h"), "q", {"h"}, (
        Transition("q", 0, ZERO, "h", 0, "NOP"), Transition("q", 0, POSITIVE, "h", 0, DEC)))
    assert "P2" in _props(bad_op)
    halting_out = CounterMachine((0,), ("q",), "q", {"q"}, (
        Transition("q", 0, ZERO, "q", 0, INC), Transition("q", 0, POSITIVE, "q", 0, DEC)))
    assert _props(halting_out) == {"structure"}
    assert check_well_formed(cm.decrement_loop()) == []
    with pytest.raises(NotWellFormed):
        cm.validate_well_formed(incomplete)


def test_interpreter():
    t = interpret(well_formed(cm.decrement_loop(2)), 100)
    assert t.halted and t.steps == 3 and t.final.counters == (1,)
    assert [e.counters for e in t.entries] == [(2,), (1,), (0,), (1,)]
    t = interpret(well_formed(cm.decrement_loop(0)), 100)
    assert t.halted and t.steps == 1 and t.final.counters == (1,)
    bad = CounterMachine((0,), ("q", "h"), "q", {"h"}, (
        Transition("q", 0, ZERO, "h", 0, DEC), Transition("q", 0, POSITIVE, "h", 0, DEC)))
    with pytest.raises(DecrementAtZero):
        interpret(well_formed(bad), 10)
    t = interpret(well_formed(cm.forever()), 25)
    assert not t.halted and t.steps == 25


def test_compiled_layout():
    c = compile_cm(well_formed(cm.decrement_loop(2)))
    assert c.config.n == 5 and c.config.topology.is_complete
    cells = c.config.cells
    assert cells[c.state_cells["q0"]].q0 == 1 and cells[c.state_cells["h"]].q0 == 0
    assert cells[c.state_cells["h"]].expression.label == "halt"
    assert not cells[c.state_cells["h"]].expression.suppress_neighbors
    assert cells[c.counter_cells[0]].q0 == 2
    assert set(c.config.ligands) == {"ZERO_0", "NONZERO_0", "STATE_q0", "STATE_h", "ASTATE_q0",
                                     "ASTATE_h", "INC_0", "DEC_0"}


def test_compiled_cells_are_deterministic():
    c = compile_cm(well_formed(cm.copier(2)))
    state = c.config.initial_state()
    for _ in range(30):
        statuses, _, _ = express(c.config, state)
        assert set(firing_probabilities(c.config, state, statuses).values()) <= {0, 1}
        state, _ = step(c.config, state, 0)
    a = run(c.config, 1, 60)
    b = run(c.config, 999, 60)
    assert a.reports == b.reports


def test_transition_cell_returns_to_zero():
    c = compile_cm(well_formed(cm.decrement_loop(2)))
    t = run(c.config, 0, 4)
    fired_one = c.transition_cells[0]
    assert t.reports[0].cell(fired_one).end == 1
    assert t.reports[1].cell(fired_one).end == 0


def test_decode_matches_interpreter_and_round_accounting():
    wf = well_formed(cm.decrement_loop(2))
    compiled = compile_cm(wf)
    trace = run(compiled.config, 0, 100, stop="first-expression:halt")
    decoded = decode(trace, compiled)
    assert decoded == interpret(wf, 100)
    assert decoded.entries[0].state == "q0" and decoded.entries[0].counters == (2,)
    assert trace.reports[-1].round == 2 * decoded.steps + 1
    assert trace.reports[-1].expressions == ((compiled.state_cells["h"], "halt"),)


@pytest.mark.parametrize("name", sorted(cm.MACHINES))
def test_library_machines_agree(name):
    rep = verify_equivalence(cm.MACHINES[name](), 300)
    assert rep.agree, rep
    if rep.oracle.halted:
        assert rep.halt_round == 2 * rep.oracle.steps + 1
    else:
        assert rep.halt_round is None and len(rep.oracle.entries) == 301


def test_adder_and_copier_results():
    rep = verify_equivalence(cm.adder(4, 3), 100)
    assert rep.decoded.final.counters[1] == 7
    rep = verify_equivalence(cm.copier(5), 200)
    assert rep.decoded.final.counters == (5, 5, 0)
    odd = verify_equivalence(cm.parity(5), 100).decoded.final.state
    even = verify_equivalence(cm.parity(6), 100).decoded.final.state
    assert (odd, even) == ("odd", "even")


def test_json_round_trip():
    m = cm.copier(3)
    assert CounterMachine.from_json(m.to_json()) == m
    assert m.with_counters({0: 9}).counters == (9, 0, 0)


@st.composite
def machines(draw):
    k = draw(st.integers(1, 3))
    n_states = draw(st.integers(1, 4))
    states = [f"q{i}" for i in range(n_states)] + ["h"]
    ts = []
    for s in states[:-1]:
        if draw(st.booleans()):
            ts.append(Transition(s, None, None, draw(st.sampled_from(states)),
                                 draw(st.integers(0, k - 1)), INC))
            continue
        c = draw(st.integers(0, k - 1))
        for status in (ZERO, POSITIVE):
            op_counter = draw(st.integers(0, k - 1))
            # only decrement the counter known to be positive, so P4 holds
            op = DEC if status == POSITIVE and op_counter == c and draw(st.booleans()) else INC
            ts.append(Transition(s, c, status, draw(st.sampled_from(states)), op_counter, op))
    counters = tuple(draw(st.integers(0, 3)) for _ in range(k))
    return CounterMachine(counters, tuple(states), "q0", {"h"}, tuple(ts))


@given(machines())
def test_random_machines_agree(m):
    try:
        interpret(well_formed(m), 40)
    except DecrementAtZero:
        assume(False)
    rep = verify_equivalence(m, 40)
    assert rep.agree
