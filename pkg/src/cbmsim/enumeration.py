"""Exact outcome distributions for small systems.

This is a second, independent implementation of the round semantics: plain
Fractions, per-cell loops and the evaluators from :mod:`cbmsim.core`, with no
sharing of the vectorised engine code. Tests use it both as a reference step
(feed it the engine's firing decisions, compare states) and as an exact
probability oracle (every firing combination, weighted).
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Mapping, Optional

from .core import apply_membrane, evaluate_firing, gradient_delta
from .engine import CellStatus, SystemConfig, SystemState


class EnumerationBudgetExceeded(RuntimeError):
    pass


def express(config: SystemConfig, state: SystemState):
    """Expression check at the start of ``state.round``.

    Returns ``(statuses, expressed, suppressed)`` where the last two are lists
    of ``(vertex, label)``.
    """
    rules = config.expression_rules
    statuses = list(state.statuses)
    pots = state.potentials
    crossers = []
    for v, cell in enumerate(config.cells):
        rule = cell.expression
        if statuses[v].active and rule is not None and rule.label in rules \
                and pots[v] >= rule.threshold:
            crossers.append(v)
    for v in crossers:
        statuses[v] = CellStatus("expressed", config.cells[v].expression.label, state.round)
    suppressed = []
    cross_set = set(crossers)
    for label, rule in rules.items():
        if not rule.suppress_neighbors:
            continue
        for v in crossers:
            if config.cells[v].expression.label != label:
                continue
            for u in sorted(config.topology.neighbors(v)):
                if u in cross_set or not statuses[u].active or pots[u] >= rule.threshold:
                    continue
                statuses[u] = CellStatus("suppressed", label, state.round)
                suppressed.append((u, label))
    expressed = [(v, config.cells[v].expression.label) for v in crossers]
    return tuple(statuses), expressed, suppressed


def firing_probabilities(config: SystemConfig, state: SystemState,
                         statuses: Iterable[CellStatus]) -> dict[tuple[int, int], Fraction]:
    out = {}
    for v, (cell, status) in enumerate(zip(config.cells, statuses)):
        if not status.active:
            continue
        for e, event in enumerate(cell.events):
            out[(v, e)] = evaluate_firing(event.firing, state.potentials[v])
    return out


def advance(config: SystemConfig, state: SystemState,
            fired: Mapping[int, Iterable[int]]) -> SystemState:
    """One round with the firing decisions given explicitly.

    ``fired`` maps a vertex to the indices of its events that fire.
    """
    statuses, _, _ = express(config, state)
    return _advance(config, state, statuses, {v: set(es) for v, es in fired.items()})


def _advance(config, state, statuses, fired) -> SystemState:
    n = config.n
    received = [Counter() for _ in range(n)]
    event_offset = [Fraction(0)] * n
    for v in range(n):
        if not statuses[v].active:
            continue
        for e in sorted(fired.get(v, ())):
            event = config.cells[v].events[e]
            event_offset[v] += event.offset
            for u in config.topology.neighbors(v):
                if statuses[u].active:
                    received[u][event.ligand] += 1
    pots = []
    for v, cell in enumerate(config.cells):
        start = state.potentials[v]
        if not statuses[v].active:
            pots.append(start)
            continue
        p = start + event_offset[v] + apply_membrane(cell.membrane, received[v])
        p += gradient_delta(start, cell.sigma, cell.lam, config.paper_literal_gradient)
        pots.append(max(p, cell.omega))
    return SystemState(state.round + 1, tuple(pots), statuses)


@dataclass(frozen=True)
class Outcome:
    state: SystemState
    reason: str
    tags: tuple = ()

    @property
    def round(self) -> int:
        """Index of the last executed round."""
        return self.state.round - 1

    def expressed(self, label: Optional[str] = None) -> list[int]:
        return [v for v, s in enumerate(self.state.statuses)
                if s.kind == "expressed" and (label is None or s.label == label)]


class Distribution:
    def __init__(self, weights: Mapping[Outcome, Fraction]):
        self.weights = dict(weights)

    def __iter__(self):
        return iter(self.weights.items())

    def __len__(self):
        return len(self.weights)

    @property
    def total(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def probability(self, predicate: Callable[[Outcome], bool]) -> Fraction:
        return sum((p for o, p in self.weights.items() if predicate(o)), Fraction(0))

    def marginal(self, key: Callable[[Outcome], Hashable]) -> dict:
        out: dict = {}
        for o, p in self.weights.items():
            k = key(o)
            out[k] = out.get(k, Fraction(0)) + p
        return out


def _stop_reason(stop: Optional[str], expressed, statuses) -> Optional[str]:
    for part in (stop or "budget").split(","):
        name, _, arg = part.strip().partition(":")
        if name == "budget":
            continue
        if name == "first-expression":
            if any(arg in ("", label) for _, label in expressed):
                return part.strip()
        elif name == "all-inactive":
            if all(not s.active for s in statuses):
                return name
        else:
            raise ValueError(f"stop condition {name!r} is not supported by enumeration")
    return None


Tracker = Callable[[SystemState, frozenset, SystemState], Optional[Hashable]]


def enumerate_outcomes(config: SystemConfig, max_rounds: int, depth_budget: int = 1_000_000,
                       stop: Optional[str] = None, state: Optional[SystemState] = None,
                       track: Optional[Tracker] = None) -> Distribution:
    """Exact distribution over outcomes after at most ``max_rounds`` rounds.

    Every combination of stochastic firings is explored and identical
    states are merged. ``track(before, fired, after)`` may return a tag that
    is appended to the outcome, making outcomes path-sensitive. Raises
    :class:`EnumerationBudgetExceeded` once more than ``depth_budget``
    branches would be evaluated.
    """
    start = state or config.initial_state()
    frontier: dict[tuple[SystemState, tuple], Fraction] = {(start, ()): Fraction(1)}
    done: dict[Outcome, Fraction] = {}
    branches = 0
    for _ in range(max_rounds):
        nxt: dict[tuple[SystemState, tuple], Fraction] = {}
        for (st, tags), mass in frontier.items():
            statuses, expressed, _ = express(config, st)
            probs = firing_probabilities(config, st, statuses)
            certain = [ve for ve, p in probs.items() if p == 1]
            coins = [ve for ve, p in probs.items() if 0 < p < 1]
            branches += 2 ** len(coins)
            if branches > depth_budget:
                raise EnumerationBudgetExceeded(
                    f"more than {depth_budget} branches needed (last state had "
                    f"{len(coins)} stochastic events)")
            for outcome in itertools.product((False, True), repeat=len(coins)):
                w = mass
                fired_pairs = list(certain)
                for ve, hit in zip(coins, outcome):
                    p = probs[ve]
                    w *= p if hit else 1 - p
                    if hit:
                        fired_pairs.append(ve)
                fired: dict[int, set] = {}
                for v, e in fired_pairs:
                    fired.setdefault(v, set()).add(e)
                after = _advance(config, st, statuses, fired)
                t = tags
                if track is not None:
                    tag = track(st, frozenset(fired_pairs), after)
                    if tag is not None:
                        t = tags + (tag,)
                reason = _stop_reason(stop, expressed, after.statuses)
                if reason is not None:
                    o = Outcome(after, reason, t)
                    done[o] = done.get(o, Fraction(0)) + w
                else:
                    nxt[(after, t)] = nxt.get((after, t), Fraction(0)) + w
        frontier = nxt
        if not frontier:
            break
    for (st, tags), mass in frontier.items():
        o = Outcome(st, "budget", tags)
        done[o] = done.get(o, Fraction(0)) + mass
    return Distribution(done)
