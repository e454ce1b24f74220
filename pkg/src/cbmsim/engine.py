"""Synchronous round execution.

A :class:`SystemConfig` binds one cell definition to every vertex of a
topology. :class:`Simulator` runs a batch of independent trials of one
config in lock-step: potentials are scaled by the least common denominator of
every rational constant in the config and held as ``int64`` arrays, which
keeps the arithmetic exact while letting numpy carry the work.

Round order (for each active cell):

0. expression check on the start-of-round potential;
1. copy the start potential, clear the ligand multiset;
2. each event fires with probability ``f(start)``, adds its offset and sends
   its ligand to every neighbour (quiescent neighbours drop it);
3. the membrane function adds its offset for the received multiset;
4. the gradient drift is added, computed from the start potential;
5. the result is clamped from below at ``omega``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import rng as rngmod
from .cells import from_template
from .core import (
    AT_LEAST,
    CellDefinition,
    CellDefinitionError,
    ExpressionRule,
    cell_from_json,
    cell_to_json,
    format_rational,
    ligand_namespace,
    rational,
    validate_cell,
)
from .topology import Topology, complete

FORMAT_VERSION = 1

EXPRESSION = "expression"
RAW = "raw"

ACTIVE, EXPRESSED, SUPPRESSED = 0, 1, 2
_KINDS = ("active", "expressed", "suppressed")


class ConfigError(ValueError):
    pass


class NondeterminismError(RuntimeError):
    pass


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    topology: Topology
    cells: tuple[CellDefinition, ...]
    mode: str = EXPRESSION
    initial_potentials: Optional[tuple[Optional[Fraction], ...]] = None
    paper_literal_gradient: bool = False

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) != self.topology.n:
            raise ConfigError(f"{len(self.cells)} cells for {self.topology.n} vertices")
        if self.mode not in (EXPRESSION, RAW):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.initial_potentials is not None:
            init = tuple(None if q is None else rational(q) for q in self.initial_potentials)
            if len(init) != self.topology.n:
                raise ConfigError("one initial potential (or None) per vertex")
            object.__setattr__(self, "initial_potentials", init)
        by_name: dict[str, CellDefinition] = {}
        labels: dict[str, ExpressionRule] = {}
        for cell in self.cells:
            seen = by_name.setdefault(cell.name, cell)
            if seen is not cell and seen != cell:
                raise ConfigError(f"two different cell definitions are both named {cell.name!r}")
        for cell in by_name.values():
            problems = validate_cell(cell)
            if problems:
                raise ConfigError("; ".join(problems))
            rule = cell.expression
            if rule is not None and labels.setdefault(rule.label, rule) != rule:
                raise ConfigError(f"expression label {rule.label!r} bound to two different rules")

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def ligands(self) -> tuple[str, ...]:
        return ligand_namespace(self.definitions.values())

    @property
    def definitions(self) -> dict[str, CellDefinition]:
        return {c.name: c for c in self.cells}

    @property
    def expression_rules(self) -> dict[str, ExpressionRule]:
        if self.mode == RAW:
            return {}
        return {c.expression.label: c.expression for c in self.cells if c.expression}

    def initial_state(self) -> "SystemState":
        init = self.initial_potentials or (None,) * self.n
        pots = tuple(c.q0 if q is None else q for c, q in zip(self.cells, init))
        return SystemState(1, pots, (CellStatus(),) * self.n)

    def to_json(self) -> dict:
        top = self.topology
        if top.is_complete and top.coordinates is None:
            topo_json = {"kind": "complete", "n": top.n}
        else:
            topo_json = top.to_json()
        d = {
            "format_version": FORMAT_VERSION,
            "topology": topo_json,
            "cells": {name: cell_to_json(c) for name, c in self.definitions.items()},
            "assignment": [c.name for c in self.cells],
            "mode": self.mode,
            "paper_literal_gradient": self.paper_literal_gradient,
        }
        if self.initial_potentials is not None:
            d["initial_potentials"] = {str(v): format_rational(q)
                                       for v, q in enumerate(self.initial_potentials)
                                       if q is not None}
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "SystemConfig":
        topology = Topology.from_json(d["topology"])
        defs = {}
        for name, spec in d["cells"].items():
            if "template" in spec:
                defs[name] = from_template(spec["template"], **spec.get("params", {}))
            else:
                defs[name] = cell_from_json({"name": name, **spec})
        assignment = d.get("assignment")
        if assignment is None and len(defs) == 1:
            assignment = next(iter(defs))
        if isinstance(assignment, str):
            assignment = [assignment] * topology.n
        try:
            cells = tuple(defs[a] for a in assignment)
        except KeyError as exc:
            raise ConfigError(f"assignment names unknown cell {exc.args[0]!r}") from None
        init = None
        if d.get("initial_potentials"):
            init = [None] * topology.n
            for v, q in d["initial_potentials"].items():
                init[int(v)] = rational(q)
            init = tuple(init)
        return cls(topology, cells, d.get("mode", EXPRESSION), init,
                   bool(d.get("paper_literal_gradient", False)))


def uniform_system(cell: CellDefinition, topology: Topology | int, **kwargs) -> SystemConfig:
    if isinstance(topology, int):
        topology = complete(topology)
    return SystemConfig(topology, (cell,) * topology.n, **kwargs)


# -- state ----------------------------------------------------------------------

@dataclass(frozen=True)
class CellStatus:
    kind: str = "active"
    label: Optional[str] = None
    round: Optional[int] = None

    @property
    def active(self) -> bool:
        return self.kind == "active"

    def to_json(self):
        if self.active:
            return "active"
        return {"kind": self.kind, "label": self.label, "round": self.round}


@dataclass(frozen=True)
class SystemState:
    round: int
    potentials: tuple[Fraction, ...]
    statuses: tuple[CellStatus, ...]

    def to_json(self) -> dict:
        return {"round": self.round,
                "potentials": [format_rational(p) for p in self.potentials],
                "statuses": [s.to_json() for s in self.statuses]}


# -- compiled form ----------------------------------------------------------------

class Kernel:
    """Integer-scaled, array-shaped view of a SystemConfig."""

    def __init__(self, config: SystemConfig, extra: Iterable[Fraction] = ()):
        self.config = config
        n = self.n = config.n
        cells = config.cells
        self.ligands = config.ligands
        lig = {name: i for i, name in enumerate(self.ligands)}
        n_lig = self.n_lig = len(self.ligands)

        dens = [1]
        for c in config.definitions.values():
            dens += [c.q0.denominator, c.sigma.denominator, c.lam.denominator,
                     c.omega.denominator]
            dens += [e.offset.denominator for e in c.events]
            dens += [s.threshold.denominator for e in c.events for s in e.firing.steps]
            dens += [r.offset.denominator for r in c.membrane.rules]
            if c.expression:
                dens.append(c.expression.threshold.denominator)
        dens += [q.denominator for q in (config.initial_potentials or ()) if q is not None]
        dens += [q.denominator for q in extra]
        self.scale = D = math.lcm(*dens)

        def scaled(values) -> np.ndarray:
            return np.array([int(v * D) for v in values], dtype=np.int64)

        self.q0 = scaled(c.q0 for c in cells)
        self.sigma = scaled(c.sigma for c in cells)
        self.lam = scaled(c.lam for c in cells)
        self.omega = scaled(c.omega for c in cells)
        self.literal_gradient = config.paper_literal_gradient

        # event slots
        slot_vertex, slot_event, slot_delta, slot_lig, slot_group = [], [], [], [], []
        groups: dict = {}
        for v, c in enumerate(cells):
            for i, e in enumerate(c.events):
                slot_vertex.append(v)
                slot_event.append(i)
                slot_delta.append(int(e.offset * D))
                slot_lig.append(lig[e.ligand])
                slot_group.append(groups.setdefault(e.firing, len(groups)))
        self.n_slots = S = len(slot_vertex)
        self.slot_vertex = np.array(slot_vertex, dtype=np.int64)
        self.slot_event = np.array(slot_event, dtype=np.int64)
        self.slot_lig = np.array(slot_lig, dtype=np.int64)
        self.firing_groups = []
        slot_group = np.array(slot_group, dtype=np.int64)
        for f, gid in groups.items():
            # integer potentials: x > b  <=>  x >= b + 1
            thr = np.array([int(s.threshold * D) + (1 if s.strict else 0) for s in f.steps],
                           dtype=np.int64)
            ks = np.array([rngmod.fire_threshold(p) for p in f.probabilities], dtype=np.int64)
            self.firing_groups.append((np.nonzero(slot_group == gid)[0], thr, ks))
        rows = np.arange(S)
        self.slot_to_vertex = sp.csr_matrix(
            (np.array(slot_delta, dtype=np.int64), (rows, self.slot_vertex)), shape=(S, n))
        self.slot_emit = sp.csr_matrix(
            (np.ones(S, dtype=np.int64), (rows, self.slot_vertex * n_lig + self.slot_lig)),
            shape=(S, n * n_lig))

        # membrane rules
        cv, cl, cge, ccount, cbound, crule = [], [], [], [], [], []
        rule_vertex, rule_offset = [], []
        for v, c in enumerate(cells):
            for r in c.membrane.rules:
                rid = len(rule_vertex)
                rule_vertex.append(v)
                rule_offset.append(int(r.offset * D))
                for cond in r.conditions:
                    cv.append(v)
                    cl.append(lig[cond.ligand])
                    cge.append(cond.op == AT_LEAST)
                    ccount.append(cond.count)
                    cbound.append(c.membrane.binding_bound)
                    crule.append(rid)
        self.cond_vertex = np.array(cv, dtype=np.int64)
        self.cond_lig = np.array(cl, dtype=np.int64)
        self.cond_ge = np.array(cge, dtype=bool)
        self.cond_count = np.array(ccount, dtype=np.int64)
        self.cond_bound = np.array(cbound, dtype=np.int64)
        n_rules = len(rule_vertex)
        self.cond_to_rule = sp.csr_matrix(
            (np.ones(len(cv), dtype=np.int64), (np.arange(len(cv)), np.array(crule, dtype=np.int64))),
            shape=(len(cv), n_rules))
        self.rule_to_vertex = sp.csr_matrix(
            (np.array(rule_offset, dtype=np.int64),
             (np.arange(n_rules), np.array(rule_vertex, dtype=np.int64))),
            shape=(n_rules, n))
        self.n_rules = n_rules

        # expression rules
        rules = list(config.expression_rules.values())
        self.rule_labels = [r.label for r in rules]
        index = {r.label: i for i, r in enumerate(rules)}
        self.expr_rule = np.array(
            [index[c.expression.label] if c.expression and c.expression.label in index else -1
             for c in cells], dtype=np.int64)
        self.expr_threshold = np.array(
            [int(c.expression.threshold * D) if self.expr_rule[v] >= 0 else 0
             for v, c in enumerate(cells)], dtype=np.int64)
        self.rule_threshold = [int(r.threshold * D) for r in rules]
        self.rule_suppress = [r.suppress_neighbors for r in rules]
        self.has_expression = bool((self.expr_rule >= 0).any())

        self.complete = config.topology.is_complete
        self.adjacency = config.topology.adjacency()

    def to_scaled(self, values: Sequence[Fraction]) -> np.ndarray:
        D = self.scale
        out = []
        for q in values:
            x = q * D
            if x.denominator != 1:
                raise ConfigError(f"potential {q} not representable at scale {D}")
            out.append(int(x))
        return np.array(out, dtype=np.int64)

    def to_fraction(self, x) -> Fraction:
        return Fraction(int(x), self.scale)

    def neighbor_sum(self, x: np.ndarray) -> np.ndarray:
        """Sum of ``x`` over graph neighbours; ``x`` has shape (T, n[, k])."""
        if self.complete:
            return x.sum(axis=1, keepdims=True) - x
        T = x.shape[0]
        if x.ndim == 2:
            return np.asarray(self.adjacency @ x.T).T
        k = x.shape[2]
        flat = x.transpose(1, 0, 2).reshape(self.n, T * k)
        return np.asarray(self.adjacency @ flat).reshape(self.n, T, k).transpose(1, 0, 2)


def kernel_for(config: SystemConfig) -> Kernel:
    k = config.__dict__.get("_kernel")
    if k is None:
        k = Kernel(config)
        object.__setattr__(config, "_kernel", k)
    return k


# -- one round ---------------------------------------------------------------------

@dataclass
class StepData:
    """Everything computed during one round, for every trial in the batch."""

    round: int
    start: np.ndarray          # (T, n) scaled potentials at round start
    end: np.ndarray            # (T, n)
    active: np.ndarray         # (T, n) active after the expression check
    fired: np.ndarray          # (T, S)
    emitted: np.ndarray        # (T, n, L)
    received: np.ndarray       # (T, n, L) delivered counts (quiescent receivers zeroed)
    event_offset: np.ndarray   # (T, n)
    membrane_offset: np.ndarray
    gradient_offset: np.ndarray
    clamped: np.ndarray        # (T, n) bool
    expressed: np.ndarray      # (T, n) bool, newly expressed this round
    suppressed: np.ndarray     # (T, n) bool, newly suppressed this round

    @property
    def sent(self) -> np.ndarray:
        return self.emitted.sum(axis=2) > 0

    @property
    def received_any(self) -> np.ndarray:
        return self.received.sum(axis=2) > 0


class Simulator:
    """Lock-step batch of trials of one configuration, one seed per trial."""

    def __init__(self, config: SystemConfig, seeds: Sequence[int],
                 state: Optional[SystemState] = None, kernel: Optional[Kernel] = None):
        if kernel is None:
            kernel = kernel_for(config)
            if state is not None and any((q * kernel.scale).denominator != 1
                                         for q in state.potentials):
                kernel = Kernel(config, state.potentials)
        self.k = k = kernel
        self.config = config
        self.seeds = np.array([int(s) & rngmod.MASK64 for s in seeds], dtype=np.uint64)
        T = len(self.seeds)
        self.trial = np.arange(T)
        self.keys = rngmod.substream_keys([int(s) for s in self.seeds], k.slot_vertex, k.slot_event)
        if state is None:
            state = config.initial_state()
        self.round = state.round
        self.P = np.tile(k.to_scaled(state.potentials), (T, 1))
        status, label, when = [], [], []
        labels = {name: i for i, name in enumerate(k.rule_labels)}
        for s in state.statuses:
            status.append(_KINDS.index(s.kind))
            label.append(labels.get(s.label, -1) if s.label is not None else -1)
            when.append(s.round if s.round is not None else 0)
        self.status = np.tile(np.array(status, dtype=np.int8), (T, 1))
        self.label = np.tile(np.array(label, dtype=np.int64), (T, 1))
        self.status_round = np.tile(np.array(when, dtype=np.int64), (T, 1))

    @property
    def size(self) -> int:
        return len(self.seeds)

    def keep(self, mask: np.ndarray) -> None:
        """Drop every trial whose entry in ``mask`` is False."""
        for name in ("seeds", "trial", "keys", "P", "status", "label", "status_round"):
            setattr(self, name, getattr(self, name)[mask])

    def state(self, i: int = 0) -> SystemState:
        k = self.k
        statuses = []
        for s, lab, r in zip(self.status[i], self.label[i], self.status_round[i]):
            if s == ACTIVE:
                statuses.append(CellStatus())
            else:
                statuses.append(CellStatus(_KINDS[s], k.rule_labels[lab], int(r)))
        return SystemState(self.round, tuple(k.to_fraction(x) for x in self.P[i]), tuple(statuses))

    def _express(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.k
        T, n = self.P.shape
        expressed = np.zeros((T, n), dtype=bool)
        suppressed = np.zeros((T, n), dtype=bool)
        if not k.has_expression:
            return expressed, suppressed
        active = self.status == ACTIVE
        cross = active & (k.expr_rule >= 0) & (self.P >= k.expr_threshold)
        if not cross.any():
            return expressed, suppressed
        expressed = cross
        self.status[cross] = EXPRESSED
        self.label[cross] = np.broadcast_to(k.expr_rule, cross.shape)[cross]
        self.status_round[cross] = self.round
        for rid, thr in enumerate(k.rule_threshold):
            if not k.rule_suppress[rid]:
                continue
            src = cross & (k.expr_rule == rid)
            if not src.any():
                continue
            near = k.neighbor_sum(src.astype(np.int64)) > 0
            victims = near & (self.status == ACTIVE) & (self.P < thr)
            self.status[victims] = SUPPRESSED
            self.label[victims] = rid
            self.status_round[victims] = self.round
            suppressed |= victims
        return expressed, suppressed

    def step(self) -> StepData:
        k = self.k
        T, n = self.P.shape
        expressed, suppressed = self._express()
        active = self.status == ACTIVE
        start = self.P

        # events
        probs_k = np.zeros((T, k.n_slots), dtype=np.int64)
        for slots, thr, ks in k.firing_groups:
            pos = np.searchsorted(thr, start[:, k.slot_vertex[slots]], side="right")
            probs_k[:, slots] = ks[pos]
        u = rngmod.draws_array(self.keys, self.round)
        fired = (u < probs_k) & active[:, k.slot_vertex]
        fired_i = fired.astype(np.int64)
        event_offset = np.asarray(fired_i @ k.slot_to_vertex).reshape(T, n)
        emitted = np.asarray(fired_i @ k.slot_emit).reshape(T, n, k.n_lig)

        # ligands and membrane
        received = k.neighbor_sum(emitted) * active[:, :, None]
        if k.n_rules:
            counts = received[:, k.cond_vertex, k.cond_lig]
            capped = np.minimum(counts, k.cond_bound)
            ok = np.where(k.cond_ge, capped >= k.cond_count, capped == 0)
            fails = np.asarray((~ok).astype(np.int64) @ k.cond_to_rule).reshape(T, k.n_rules)
            membrane = np.asarray((fails == 0).astype(np.int64) @ k.rule_to_vertex).reshape(T, n)
        else:
            membrane = np.zeros((T, n), dtype=np.int64)

        # gradient from the start-of-round potential
        z = start - k.sigma
        lam = k.lam
        small_neg = z if k.literal_gradient else -z
        gradient = np.where(z >= lam, -lam,
                   np.where(z > 0, -z,
                   np.where(z == 0, 0,
                   np.where(z > -lam, small_neg, lam))))

        raw = start + event_offset + membrane + gradient
        end = np.maximum(raw, k.omega)
        clamped = raw < k.omega
        zero = np.zeros_like(start)
        event_offset = np.where(active, event_offset, zero)
        membrane = np.where(active, membrane, zero)
        gradient = np.where(active, gradient, zero)
        end = np.where(active, end, start)
        clamped &= active

        data = StepData(self.round, start, end, active, fired, emitted, received,
                        event_offset, membrane, gradient, clamped, expressed, suppressed)
        self.P = end
        self.round += 1
        return data


# -- reports and traces ------------------------------------------------------------------

@dataclass(frozen=True)
class CellRound:
    vertex: int
    start: Fraction
    end: Fraction
    fired: tuple[int, ...]
    emitted: tuple[str, ...]
    received: tuple[tuple[str, int], ...]
    received_capped: tuple[tuple[str, int], ...]
    event_offset: Fraction
    membrane_offset: Fraction
    gradient_offset: Fraction
    clamped: bool

    def to_json(self) -> dict:
        f = format_rational
        return {"vertex": self.vertex, "start": f(self.start), "end": f(self.end),
                "fired": list(self.fired), "emitted": list(self.emitted),
                "received": dict(self.received), "received_capped": dict(self.received_capped),
                "event_offset": f(self.event_offset), "membrane_offset": f(self.membrane_offset),
                "gradient_offset": f(self.gradient_offset), "clamped": self.clamped}

    @classmethod
    def from_json(cls, d: Mapping) -> "CellRound":
        r = rational
        return cls(d["vertex"], r(d["start"]), r(d["end"]), tuple(d["fired"]),
                   tuple(d["emitted"]), tuple(d["received"].items()),
                   tuple(d["received_capped"].items()), r(d["event_offset"]),
                   r(d["membrane_offset"]), r(d["gradient_offset"]), d["clamped"])


@dataclass(frozen=True)
class RoundReport:
    round: int
    cells: tuple[CellRound, ...]
    expressions: tuple[tuple[int, str], ...] = ()
    suppressions: tuple[tuple[int, str], ...] = ()

    def cell(self, v: int) -> Optional[CellRound]:
        for c in self.cells:
            if c.vertex == v:
                return c
        return None

    def to_json(self) -> dict:
        return {"kind": "round", "round": self.round,
                "expressions": [list(e) for e in self.expressions],
                "suppressions": [list(s) for s in self.suppressions],
                "cells": [c.to_json() for c in self.cells]}

    @classmethod
    def from_json(cls, d: Mapping) -> "RoundReport":
        return cls(d["round"], tuple(CellRound.from_json(c) for c in d["cells"]),
                   tuple(tuple(e) for e in d["expressions"]),
                   tuple(tuple(s) for s in d["suppressions"]))


def build_report(k: Kernel, data: StepData, i: int, labels: np.ndarray) -> RoundReport:
    """RoundReport for trial ``i`` of a step; ``labels`` is the label array
    after the step (needed to name expressions)."""
    frac = k.to_fraction
    cells = k.config.cells
    slots_of = {}
    for s, v in enumerate(k.slot_vertex.tolist()):
        slots_of.setdefault(v, []).append(s)
    out = []
    for v in np.nonzero(data.active[i])[0].tolist():
        fired = tuple(int(k.slot_event[s]) for s in slots_of.get(v, ()) if data.fired[i, s])
        emitted = tuple(cells[v].events[e].ligand for e in fired)
        recv = tuple((k.ligands[l], int(c)) for l, c in enumerate(data.received[i, v]) if c)
        bound = cells[v].membrane.binding_bound
        capped = tuple((lig, min(c, bound)) for lig, c in recv)
        out.append(CellRound(v, frac(data.start[i, v]), frac(data.end[i, v]), fired, emitted,
                             recv, capped, frac(data.event_offset[i, v]),
                             frac(data.membrane_offset[i, v]), frac(data.gradient_offset[i, v]),
                             bool(data.clamped[i, v])))
    expr = tuple((v, k.rule_labels[labels[i, v]]) for v in np.nonzero(data.expressed[i])[0].tolist())
    supp = tuple((v, k.rule_labels[labels[i, v]]) for v in np.nonzero(data.suppressed[i])[0].tolist())
    return RoundReport(data.round, tuple(out), expr, supp)


# -- stop conditions ------------------------------------------------------------------

class StopCondition:
    """Vectorised stop test evaluated after every round."""

    reason = "stop"

    def check(self, sim: Simulator, data: StepData) -> np.ndarray:
        raise NotImplementedError

    def keep(self, mask: np.ndarray) -> None:
        pass


class FirstExpression(StopCondition):
    def __init__(self, label: Optional[str] = None):
        self.label = label
        self.reason = "first-expression" + (f":{label}" if label else "")

    def check(self, sim, data):
        hit = data.expressed
        if self.label is not None:
            try:
                rid = sim.k.rule_labels.index(self.label)
            except ValueError:
                return np.zeros(sim.size, dtype=bool)
            hit = hit & (sim.label == rid)
        return hit.any(axis=1)


class AllInactive(StopCondition):
    reason = "all-inactive"

    def check(self, sim, data):
        return (sim.status != ACTIVE).all(axis=1)


class StatusFixedPoint(StopCondition):
    """Statuses unchanged for ``window`` consecutive rounds."""

    def __init__(self, window: int = 1):
        self.window = window
        self.reason = f"fixed-point:{window}"
        self._prev = None
        self._count = None

    def check(self, sim, data):
        if self._prev is None:
            self._prev = sim.status.copy()
            self._count = np.zeros(sim.size, dtype=np.int64)
            return np.zeros(sim.size, dtype=bool)
        same = (sim.status == self._prev).all(axis=1)
        self._count = np.where(same, self._count + 1, 0)
        self._prev = sim.status.copy()
        return self._count >= self.window

    def keep(self, mask):
        if self._prev is not None:
            self._prev = self._prev[mask]
            self._count = self._count[mask]


def parse_stop(spec: Optional[str]) -> list[StopCondition]:
    """``"first-expression[:label]"``, ``"all-inactive"``, ``"fixed-point[:W]"``,
    ``"budget"`` (or None); comma separated for several."""
    out: list[StopCondition] = []
    for part in (spec or "budget").split(","):
        name, _, arg = part.strip().partition(":")
        if name == "budget":
            continue
        if name == "first-expression":
            out.append(FirstExpression(arg or None))
        elif name == "all-inactive":
            out.append(AllInactive())
        elif name == "fixed-point":
            out.append(StatusFixedPoint(int(arg or 1)))
        else:
            raise ValueError(f"unknown stop condition {name!r}")
    return out


# -- batch runner -------------------------------------------------------------------

@dataclass
class TrialResult:
    index: int
    seed: int
    stop_reason: str
    rounds: int              # number of rounds executed
    final_round: int         # round index of the final state
    potentials: np.ndarray   # scaled
    status: np.ndarray
    label: np.ndarray
    status_round: np.ndarray
    scale: int
    labels: Sequence[str] = field(default_factory=list)

    def expressed(self, label: Optional[str] = None) -> list[int]:
        mask = self.status == EXPRESSED
        if label is not None:
            if label not in self.labels:
                return []
            mask &= self.label == list(self.labels).index(label)
        return np.nonzero(mask)[0].tolist()

    def first_expression_round(self) -> Optional[int]:
        rounds = self.status_round[self.status == EXPRESSED]
        return int(rounds.min()) if rounds.size else None

    def potential(self, v: int) -> Fraction:
        return Fraction(int(self.potentials[v]), self.scale)


def run_batch(config: SystemConfig, seeds: Sequence[int], max_rounds: int,
              stop: Sequence[StopCondition] | str | None = None,
              observer: Optional[Callable[[Simulator, StepData], None]] = None,
              state: Optional[SystemState] = None) -> list[TrialResult]:
    """Run one trial per seed; finished trials leave the batch immediately."""
    if isinstance(stop, str) or stop is None:
        stop = parse_stop(stop)
    sim = Simulator(config, seeds, state)
    results: list[Optional[TrialResult]] = [None] * len(seeds)
    start_round = sim.round

    def finish(mask: np.ndarray, reason: str):
        for j in np.nonzero(mask)[0].tolist():
            idx = int(sim.trial[j])
            results[idx] = TrialResult(
                idx, int(sim.seeds[j]), reason, sim.round - start_round, sim.round,
                sim.P[j].copy(), sim.status[j].copy(), sim.label[j].copy(),
                sim.status_round[j].copy(), sim.k.scale, sim.k.rule_labels)

    for _ in range(max_rounds):
        if sim.size == 0:
            break
        data = sim.step()
        if observer is not None:
            observer(sim, data)
        done = np.zeros(sim.size, dtype=bool)
        for cond in stop:
            hit = cond.check(sim, data) & ~done
            if hit.any():
                finish(hit, cond.reason)
                done |= hit
        if done.any():
            live = ~done
            sim.keep(live)
            for cond in stop:
                cond.keep(live)
    if sim.size:
        finish(np.ones(sim.size, dtype=bool), "budget")
    return results  # type: ignore[return-value]


# -- single traced runs -----------------------------------------------------------------

@dataclass(frozen=True)
class Trace:
    config: SystemConfig
    seed: int
    max_rounds: int
    stop: str
    reports: tuple[RoundReport, ...]
    stop_reason: str
    final: SystemState
    rng_algorithm: str = rngmod.ALGORITHM

    def header(self) -> dict:
        return {"kind": "header", "format_version": FORMAT_VERSION,
                "config": self.config.to_json(), "seed": self.seed,
                "rng": self.rng_algorithm, "max_rounds": self.max_rounds, "stop": self.stop}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r.to_json(), sort_keys=True) for r in self.reports]
        lines.append(json.dumps({"kind": "end", "stop_reason": self.stop_reason,
                                 "final": self.final.to_json()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        head, end = records[0], records[-1]
        if head.get("kind") != "header" or end.get("kind") != "end":
            raise ValueError("trace must start with a header and finish with an end record")
        config = SystemConfig.from_json(head["config"])
        reports = tuple(RoundReport.from_json(r) for r in records[1:-1])
        fin = end["final"]
        statuses = tuple(CellStatus() if s == "active" else CellStatus(s["kind"], s["label"], s["round"])
                         for s in fin["statuses"])
        final = SystemState(fin["round"], tuple(rational(p) for p in fin["potentials"]), statuses)
        return cls(config, head["seed"], head["max_rounds"], head["stop"], reports,
                   end["stop_reason"], final, head["rng"])


def step(config: SystemConfig, state: SystemState, rng) -> tuple[SystemState, RoundReport]:
    """Advance ``state`` by one round. ``rng`` is a CounterRng or an int seed."""
    seed = rng.seed if isinstance(rng, rngmod.CounterRng) else int(rng)
    sim = Simulator(config, [seed], state)
    data = sim.step()
    return sim.state(0), build_report(sim.k, data, 0, sim.label)


def iterate(config: SystemConfig, seed: int,
            state: Optional[SystemState] = None) -> Iterator[tuple[StepData, Simulator]]:
    sim = Simulator(config, [seed], state)
    while True:
        yield sim.step(), sim


def run(config: SystemConfig, seed: int, max_rounds: int, stop: Optional[str] = None,
        record: bool = True) -> Trace:
    conditions = parse_stop(stop)
    sim = Simulator(config, [seed])
    reports = []
    reason = "budget"
    for _ in range(max_rounds):
        data = sim.step()
        if record:
            reports.append(build_report(sim.k, data, 0, sim.label))
        hit = [c.reason for c in conditions if c.check(sim, data)[0]]
        if hit:
            reason = hit[0]
            break
    return Trace(config, int(seed) & rngmod.MASK64, max_rounds, stop or "budget",
                 tuple(reports), reason, sim.state(0))


def replay(trace: Trace) -> Trace:
    again = run(trace.config, trace.seed, trace.max_rounds, trace.stop)
    if again != trace:
        raise NondeterminismError("replaying the trace's seed produced a different trace")
    return again
