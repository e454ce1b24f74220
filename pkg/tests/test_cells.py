from fractions import Fraction as F

import pytest

from cbmsim.cells import (
    TEMPLATES,
    from_template,
    general_threshold,
    knockback,
    majority_alpha,
    majority_pair,
    small_threshold,
)
from cbmsim.core import CellDefinitionError, apply_membrane, validate_cell
from cbmsim.engine import uniform_system
from cbmsim.enumeration import enumerate_outcomes
from cbmsim.harness import NET_POTENTIAL


def test_knockback_parameters():
    kb = knockback()
    assert (kb.q0, kb.sigma, kb.lam, kb.omega) == (0, 2, F(1, 2), -2)
    assert kb.events[0].firing(F(1, 4)) == 0
    assert kb.events[0].offset == F(1, 2)
    assert apply_membrane(kb.membrane, ["m", "m"]) == F(-3, 2)
    assert kb.expression.threshold == 2 and kb.expression.suppress_neighbors


def test_small_threshold():
    c = small_threshold(3)
    assert c.events[0].offset == 0
    assert c.membrane.binding_bound == 3
    assert apply_membrane(c.membrane, ["m"] * 2) == 0
    assert apply_membrane(c.membrane, ["m"] * 3) == 2
    with pytest.raises(CellDefinitionError):
        small_threshold(65)
    assert small_threshold(100, max_binding_bound=128).membrane.binding_bound == 100


def test_general_threshold():
    c = general_threshold(7)
    assert c.events[0].firing(F(1)) == F(1, 7)
    assert c.events[0].firing(F(0)) == 0
    assert c.events[0].offset == 2
    assert apply_membrane(c.membrane, ["m"] * 4) == 2


def test_majority_parameters():
    assert majority_alpha(F(1, 5)) == 5
    a, b = majority_pair(8, F(1, 5))
    f = a.events[0].firing
    assert f(F(0)) == F(1, 8) and f(F(5)) == F(1, 4)
    span = 5 * 3
    assert f(F(span - 1)) == F(1, 2)
    assert f(F(span)) == 1 and f(F(span + 1)) == 1 and f(F(-1)) == 0
    assert a.sigma == 3 * span and a.lam == 1 and a.expression.threshold == 3 * span
    assert apply_membrane(a.membrane, ["m_B"]) == -2 * span
    assert apply_membrane(a.membrane, ["m_A"] * 3) == 0
    assert apply_membrane(b.membrane, ["m_B"]) == 0
    assert (a.expression.label, b.expression.label) == ("A", "B")


def test_majority_rounds_n_up_to_a_power_of_two():
    a, _ = majority_pair(100, F(1, 5))
    assert a.events[0].firing(F(0)) == F(1, 128)


@pytest.mark.parametrize("name, params", [
    ("knockback", {}), ("small_threshold", {"k": 4}), ("general_threshold", {"k": 9}),
    ("majority_A", {"N": 16, "epsilon": "1/10"}), ("majority_B", {"N": 16, "epsilon": "1/10"}),
])
def test_templates_pass_validation(name, params):
    assert name in TEMPLATES
    assert validate_cell(from_template(name, **params)) == []


def test_unknown_template():
    with pytest.raises(CellDefinitionError):
        from_template("nope")


def _table_mismatches(n, rounds=16):
    mismatches = []

    def track(before, fired, after):
        senders = {v for v, _ in fired}
        for v in range(n):
            if not after.statuses[v].active:
                continue
            case = (v in senders, bool(senders - {v}))
            d = after.potentials[v] - before.potentials[v]
            if d != NET_POTENTIAL[case]:
                mismatches.append((before.potentials[v], case, d))
        return None

    enumerate_outcomes(uniform_system(knockback(), n), rounds, stop="all-inactive", track=track)
    return mismatches


@pytest.mark.parametrize("n", [1, 2, 3])
def test_net_potential_table_on_every_reachable_path(n):
    bad = _table_mismatches(n)
    # inside [0, 2) the table is exact
    assert not [m for m in bad if 0 <= m[0] < 2]
    # outside it, the only departures are floor clamps of a cell that is hit at -3/2 or -2
    for start, case, d in bad:
        assert case == (False, True)
        assert max(start - 1, -2) - start == d
