"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and repeated in pytest's terminal
summary. Run directly (``python tests/test_acceptance.py``) to print them
without pytest.
"""

from __future__ import annotations

import math
import time
from fractions import Fraction as F

import pytest

from cbmsim import cm
from cbmsim.cells import general_threshold, knockback, majority_alpha, small_threshold
from cbmsim.engine import run, run_batch, uniform_system
from cbmsim.enumeration import enumerate_outcomes
from cbmsim.harness import (
    MIS_GRID,
    TRAINING_SEED,
    ExperimentSpec,
    leader_election_stats,
    liveness_fit,
    majority_error_rate,
    mis_stabilize_stats,
    mis_stats,
    random_potentials,
    threshold_error_rate,
    threshold_tau,
    trial_seed,
)

RESULTS: dict[int, str] = {}
ACCEPTANCE_SEED = 2024


def report(number: int, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{elapsed:.1f}s of {limit:g}s]"
    RESULTS[number] = line
    print(line)


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# -- 1 --------------------------------------------------------------------------------

def test_golden_small_threshold_trace():
    with Clock() as c:
        trace = run(uniform_system(small_threshold(2), 3), 0, 10, stop="first-expression")
        first = trace.reports[0]
        arithmetic = all(
            (x.start, x.event_offset, x.membrane_offset, x.gradient_offset, x.end) == (1, 0, 2, -1, 2)
            for x in first.cells) and len(first.cells) == 3
        last = trace.reports[-1]
        expressed = last.round == 2 and [v for v, _ in last.expressions] == [0, 1, 2]
    ok = arithmetic and expressed and c.elapsed < 1
    report(1, ok, f"round 1 each cell 1+2-1=2: {arithmetic}; all express at round 2: {expressed}",
           c.elapsed, 1)
    assert ok


# -- 2 and 4 share one set of runs --------------------------------------------------------

_SAFETY = {}


def _safety_rows():
    if "rows" not in _SAFETY:
        spec = ExperimentSpec("leader-election", {"n": [2, 4, 8, 16, 32, 64]}, 10_000,
                              ACCEPTANCE_SEED, 10_000, {"abort_on_safety": False})
        with Clock() as c:
            _SAFETY["rows"] = leader_election_stats(spec)
        _SAFETY["elapsed"] = c.elapsed
    return _SAFETY["rows"], _SAFETY["elapsed"]


def test_safety_single_leader():
    rows, elapsed = _safety_rows()
    unsafe = sum(r.safety_violations for r in rows)
    elected = sum(r.successes for r in rows)
    ok = unsafe == 0 and elapsed < 120
    report(2, ok, f"{unsafe} multi-leader trials in {sum(r.trials for r in rows)} "
                  f"({elected} elected exactly one)", elapsed, 120)
    assert ok


@pytest.mark.xfail(strict=True, reason="the floor clamp at omega = -2 changes the delta of "
                                       "non-senders hit at -3/2 or -2; see the decisions ledger")
def test_net_potential_table():
    rows, elapsed = _safety_rows()
    checked = sum(r.extra["table_checked"] for r in rows)
    bad = sum(r.extra["table_violations"] for r in rows)
    in_range = sum(r.extra["table_violations_in_range"] for r in rows)
    clamped = sum(r.extra["table_violations_clamped"] for r in rows)
    per_n = ", ".join(f"n={r.point['n']}:{r.extra['table_violations']}" for r in rows)
    ok = bad == 0
    report(4, ok, f"{bad} of {checked} active-cell deltas off the table ({per_n}); "
                  f"{clamped} of them floor clamps; {in_range} with start in [0, 2)", elapsed, 120)
    # the part that does hold: every departure is a clamp outside [0, 2)
    assert in_range == 0 and clamped == bad
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_liveness_shape():
    spec = ExperimentSpec("leader-election", {"n": [2 ** j for j in range(1, 11)]}, 1000,
                          ACCEPTANCE_SEED, 10_000, {"check_table": False})
    with Clock() as c:
        rows = leader_election_stats(spec)
    means = [r.rounds.mean for r in rows]
    monotone = all(a <= b for a, b in zip(means, means[1:]))
    fit = liveness_fit(rows)
    within = []
    for r in rows:
        bound = fit(math.log(r.point["n"] / 0.05))
        within.append(sum(x <= bound for x in r.samples) / r.trials)
    all_elected = all(r.successes == r.trials for r in rows)
    ok = monotone and fit.r2 >= 0.9 and min(within) >= 0.95 and all_elected and c.elapsed < 300
    report(3, ok, f"means monotone: {monotone}; fit {fit.slope:.3f} ln n + {fit.intercept:.3f}, "
                  f"R^2 = {fit.r2:.4f}; worst share within a ln(n/0.05) + b: {min(within):.3f}",
           c.elapsed, 300)
    assert ok


# -- 5 ---------------------------------------------------------------------------------

def test_mis_validity():
    spec = ExperimentSpec("mis", MIS_GRID, 20, ACCEPTANCE_SEED)
    assert spec.base_seed != TRAINING_SEED
    with Clock() as c:
        rows = mis_stats(spec)
    outcomes = [o for r in rows for o in r.samples]
    valid = sum(o.valid for o in outcomes)
    independence = sum(o.independence_violations for o in outcomes)
    n_max = max(o.n for o in outcomes)
    ok = (len(outcomes) == 200 and n_max <= 300 and valid >= 0.99 * len(outcomes)
          and independence == 0 and c.elapsed < 600)
    report(5, ok, f"{valid}/{len(outcomes)} valid within budget; {independence} independence "
                  f"violations; max delta {max(o.delta for o in outcomes)}", c.elapsed, 600)
    assert ok


# -- 6 ---------------------------------------------------------------------------------

def test_self_stabilization():
    spec = ExperimentSpec("mis-stabilize", MIS_GRID, 10, ACCEPTANCE_SEED)
    with Clock() as c:
        rows = mis_stabilize_stats(spec)
    outcomes = [o for r in rows for o in r.samples]
    stable = sum(o.valid for o in outcomes)
    adjacent = sum(o.independence_violations > 0 for o in outcomes)
    # the sampled starts include both half-grid and off-grid potentials
    pots = [p for r in rows for s in spec.seeds(r.point)[:1]
            for p in random_potentials(r.point["n"], s ^ 0x5EED)]
    mixed = any(p.denominator > 2 for p in pots) and any(p.denominator <= 2 for p in pots)
    ok = len(outcomes) == 100 and stable >= 95 and adjacent == 0 and mixed and c.elapsed < 600
    report(6, ok, f"{stable}/{len(outcomes)} reached a 50-round-stable valid MIS; "
                  f"{adjacent} ended with adjacent members", c.elapsed, 600)
    assert ok


# -- 7 ---------------------------------------------------------------------------------

def test_threshold_detection():
    with Clock() as c:
        wrong = []
        for k in range(1, 9):
            for n in range(1, 13):
                t = run(uniform_system(small_threshold(k), n), trial_seed(ACCEPTANCE_SEED, {"k": k, "n": n}, 0),
                        6, stop="first-expression")
                got = sum(s.kind == "expressed" for s in t.final.statuses)
                late = any(s.kind == "expressed" and s.round != 2 for s in t.final.statuses)
                if got != (n if n > k else 0) or late:
                    wrong.append((k, n, got))
        eps = 0.1
        spec = ExperimentSpec("threshold", {"n": [2, 1000]}, 2000, ACCEPTANCE_SEED,
                              params={"k": 50, "epsilon": eps})
        low, high = threshold_error_rate(spec)
    tau = threshold_tau(eps)
    sides_ok = high.point["n"] > tau * 50 and low.point["n"] <= 50 / tau
    ok = (not wrong and sides_ok and high.interval[1] >= 1 - eps and low.interval[0] <= eps
          and c.elapsed < 180)
    report(7, ok, f"small exhaustive mismatches: {len(wrong)}; general n=1000 rate {high.rate:.4f} "
                  f"[{high.interval[0]:.4f}, {high.interval[1]:.4f}], n=2 rate {low.rate:.4f} "
                  f"[{low.interval[0]:.4f}, {low.interval[1]:.4f}]", c.elapsed, 180)
    assert ok


# -- 8 ---------------------------------------------------------------------------------

def test_majority_detection():
    eps, N = 0.2, 128
    alpha = majority_alpha(eps)
    with Clock() as c:
        rows = []
        for n_a, n_b in ((101, 1), (1, 101)):
            spec = ExperimentSpec("majority", {"n_A": [n_a], "n_B": [n_b]}, 2000, ACCEPTANCE_SEED,
                                  10_000, {"N": N, "epsilon": eps})
            rows += majority_error_rate(spec)
    gap_ok = all(max(r.point.values()) > min(r.point.values()) * 4 * alpha / eps for r in rows)
    ok = gap_ok and all(r.interval[1] >= 1 - eps for r in rows) and c.elapsed < 180
    detail = "; ".join(f"(n_A, n_B) = ({r.point['n_A']}, {r.point['n_B']}): {r.rate:.4f} "
                       f"[{r.interval[0]:.4f}, {r.interval[1]:.4f}]" for r in rows)
    report(8, ok, f"majority first {detail}", c.elapsed, 180)
    assert ok


# -- 9 ---------------------------------------------------------------------------------

CM_SUITE = {
    "decrement-loop": cm.decrement_loop(1000),
    "adder": cm.adder(600, 3),
    "copier": cm.copier(150),
    "parity": cm.parity(1001),
    "forever": cm.forever(),
}


def test_counter_machine_simulation():
    results = {}
    with Clock() as c:
        for name, machine in CM_SUITE.items():
            rep = cm.verify_equivalence(machine, 3000 if name != "forever" else 1000)
            long_enough = rep.oracle.steps >= 1000 or rep.oracle.halted
            halt_ok = rep.halt_round == 2 * rep.oracle.steps + 1 if rep.oracle.halted else rep.halt_round is None
            results[name] = (rep.agree and long_enough and halt_ok, rep.oracle.steps, rep.oracle.halted)
    ok = all(r[0] for r in results.values()) and c.elapsed < 60
    detail = ", ".join(f"{k}: {'ok' if v[0] else 'MISMATCH'} ({v[1]} steps{', halted' if v[2] else ''})"
                       for k, v in results.items())
    report(9, ok, detail, c.elapsed, 60)
    assert ok


# -- 10 --------------------------------------------------------------------------------

ORACLE_SYSTEMS = {
    "knockback n=1": (knockback(), 1),
    "knockback n=2": (knockback(), 2),
    "knockback n=3": (knockback(), 3),
    "general_threshold(2) n=1": (general_threshold(2), 1),
    "general_threshold(2) n=2": (general_threshold(2), 2),
    "general_threshold(3) n=3": (general_threshold(3), 3),
}
ORACLE_ROUNDS = 8
ORACLE_TRIALS = 100_000


def _oracle_classes(cell, n):
    cfg = uniform_system(cell, n)
    exact = enumerate_outcomes(cfg, ORACLE_ROUNDS, stop="first-expression").marginal(
        lambda o: (o.round, len(o.expressed())) if o.reason != "budget" else ("budget", 0))
    seeds = [trial_seed(ACCEPTANCE_SEED, {"oracle": cell.name, "n": n}, i) for i in range(ORACLE_TRIALS)]
    counts: dict = {}
    for r in run_batch(cfg, seeds, ORACLE_ROUNDS, "first-expression"):
        key = (r.first_expression_round(), len(r.expressed())) if r.stop_reason != "budget" else ("budget", 0)
        counts[key] = counts.get(key, 0) + 1
    return exact, counts


def test_oracle_cross_check():
    worst = 0.0
    failures = []
    with Clock() as c:
        for name, (cell, n) in ORACLE_SYSTEMS.items():
            exact, counts = _oracle_classes(cell, n)
            for key in set(exact) | set(counts):
                p = float(exact.get(key, F(0)))
                freq = counts.get(key, 0) / ORACLE_TRIALS
                se = math.sqrt(p * (1 - p) / ORACLE_TRIALS)
                if se == 0:
                    if freq != p:
                        failures.append((name, key, p, freq))
                    continue
                z = abs(freq - p) / se
                worst = max(worst, z)
                if z > 3:
                    failures.append((name, key, p, freq))
    ok = not failures and c.elapsed < 180
    report(10, ok, f"{len(ORACLE_SYSTEMS)} systems, worst deviation {worst:.2f} SE; "
                   f"outside 3 SE: {failures}", c.elapsed, 180)
    assert ok


if __name__ == "__main__":
    import sys
    tests = [test_golden_small_threshold_trace, test_safety_single_leader, test_liveness_shape,
             test_net_potential_table, test_mis_validity, test_self_stabilization,
             test_threshold_detection, test_majority_detection, test_counter_machine_simulation,
             test_oracle_cross_check]
    for t in tests:
        try:
            t.__wrapped__() if hasattr(t, "__wrapped__") else t()
        except AssertionError:
            pass
    print()
    for k in sorted(RESULTS):
        print(RESULTS[k])
    sys.exit(0 if all("PASS" in v for v in RESULTS.values()) else 1)
