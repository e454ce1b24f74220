"""Experiment runners and the statistics they report.

Every trial gets its own seed, derived from the experiment's base seed, the
parameter point and the trial index by :func:`trial_seed`, so any subset of a
grid can be re-run on its own and a summary is a pure function of its spec.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats as sstats

from .cells import LEADER, THRESHOLD_EXCEEDED, general_threshold, knockback, majority_pair, small_threshold
from .engine import (
    EXPRESSED,
    RAW,
    AllInactive,
    FirstExpression,
    StopCondition,
    SystemConfig,
    kernel_for,
    run_batch,
    uniform_system,
)
from .topology import Topology, UbgParams, complete, max_degree, side_for_degree, ubg_random, validate_mis

FORMAT_VERSION = 1
EXPERIMENTS = ("leader-election", "mis", "mis-stabilize", "threshold", "majority")

Z95 = NormalDist().inv_cdf(0.975)

#: rounds budget factor for MIS from clean starts; the output of
#: calibrate_mis_constants() on the training seeds, frozen
MIS_BUDGET_C = 1.0
#: same for stabilization from arbitrary potentials (confirmation window excluded)
STABILIZE_BUDGET_C = 1.0
STABLE_WINDOW = 50

#: KnockBack per-round change keyed by (sent, received)
NET_POTENTIAL = {
    (True, False): Fraction(1),
    (True, True): Fraction(-1, 2),
    (False, True): Fraction(-1),
    (False, False): Fraction(1, 2),
}


class SafetyViolation(RuntimeError):
    pass


# -- statistics ------------------------------------------------------------------

def wilson(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class RoundStats:
    mean: float
    median: float
    p95: float
    max: int

    @classmethod
    def of(cls, values: Sequence[int]) -> Optional["RoundStats"]:
        if not len(values):
            return None
        a = np.asarray(values, dtype=float)
        return cls(float(a.mean()), float(np.median(a)),
                   float(np.percentile(a, 95, method="inverted_cdf")), int(a.max()))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept


def fit_line(x: Sequence[float], y: Sequence[float]) -> LinearFit:
    res = sstats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return LinearFit(float(res.slope), float(res.intercept), float(res.rvalue ** 2))


def trial_seed(base_seed: int, point: Mapping[str, Any], index: int) -> int:
    """sha256 of ``"<base>|<canonical JSON of point>|<index>"``, first 8 bytes
    read big-endian."""
    text = f"{base_seed}|{json.dumps(point, sort_keys=True, separators=(',', ':'))}|{index}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


# -- specs and rows ------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    grid: Mapping[str, Sequence[Any]]
    trials: int = 1000
    base_seed: int = 0
    max_rounds: int = 10_000
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; known: {', '.join(EXPERIMENTS)}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def points(self) -> list[dict]:
        keys = sorted(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    def seeds(self, point: Mapping[str, Any]) -> list[int]:
        return [trial_seed(self.base_seed, point, i) for i in range(self.trials)]

    def to_json(self) -> dict:
        return {"format_version": FORMAT_VERSION, "experiment": self.experiment,
                "grid": {k: list(v) for k, v in self.grid.items()}, "trials": self.trials,
                "base_seed": self.base_seed, "max_rounds": self.max_rounds,
                "params": dict(self.params)}

    @classmethod
    def from_json(cls, d: Mapping) -> "ExperimentSpec":
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported experiment format_version {version}")
        return cls(d["experiment"], {k: list(v) for k, v in d["grid"].items()},
                   int(d.get("trials", 1000)), int(d.get("base_seed", 0)),
                   int(d.get("max_rounds", 10_000)), dict(d.get("params", {})))


@dataclass
class SummaryRow:
    point: dict
    trials: int
    successes: int
    safety_violations: int = 0
    rounds: Optional[RoundStats] = None
    extra: dict = field(default_factory=dict)
    samples: list = field(default_factory=list, repr=False)

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    @property
    def interval(self) -> tuple[float, float]:
        return wilson(self.successes, self.trials)

    def to_json(self) -> dict:
        lo, hi = self.interval
        r = self.rounds
        return {
            "point": self.point, "trials": self.trials, "successes": self.successes,
            "rate": self.rate, "wilson_lo": lo, "wilson_hi": hi,
            "safety_violations": self.safety_violations,
            "rounds_mean": r.mean if r else None, "rounds_median": r.median if r else None,
            "rounds_p95": r.p95 if r else None, "rounds_max": r.max if r else None,
            "extra": self.extra,
        }


CSV_COLUMNS = ("point", "trials", "successes", "rate", "wilson_lo", "wilson_hi",
               "safety_violations", "rounds_mean", "rounds_median", "rounds_p95",
               "rounds_max", "extra")


def write_summary(rows: Sequence[SummaryRow], path, fmt: str = "csv",
                  spec: Optional[ExperimentSpec] = None) -> None:
    """CSV has a ``# format_version`` comment line and then the fixed
    :data:`CSV_COLUMNS`; JSON wraps the rows with the version and spec."""
    records = [r.to_json() for r in rows]
    if fmt == "json":
        doc = {"format_version": FORMAT_VERSION, "spec": spec.to_json() if spec else None,
               "rows": records}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown summary format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            row = []
            for col in CSV_COLUMNS:
                v = rec[col]
                if isinstance(v, dict):
                    v = json.dumps(v, sort_keys=True, separators=(",", ":"))
                elif isinstance(v, float):
                    v = repr(v)
                elif v is None:
                    v = ""
                row.append(v)
            w.writerow(row)


# -- leader election ------------------------------------------------------------------

class NetPotentialCheck:
    """Observer comparing every active KnockBack cell's round delta with
    :data:`NET_POTENTIAL`.

    Mismatches are also counted separately for cells that started the round
    in ``[0, 2)`` and for rounds where the floor clamp fired.
    """

    def __init__(self, scale: int):
        self.scale = scale
        self.expected = {k: int(v * scale) for k, v in NET_POTENTIAL.items()}
        self.checked = 0
        self.violations = 0
        self.in_range_violations = 0
        self.clamped_violations = 0
        self.example: Optional[tuple] = None

    def __call__(self, sim, data) -> None:
        active = data.active
        if not active.any():
            return
        delta = data.end - data.start
        sent, got = data.sent, data.received_any
        want = np.where(sent, np.where(got, self.expected[(True, True)], self.expected[(True, False)]),
                        np.where(got, self.expected[(False, True)], self.expected[(False, False)]))
        bad = active & (delta != want)
        self.checked += int(active.sum())
        n_bad = int(bad.sum())
        if n_bad:
            self.violations += n_bad
            in_range = (data.start >= 0) & (data.start < 2 * self.scale)
            self.in_range_violations += int((bad & in_range).sum())
            self.clamped_violations += int((bad & data.clamped).sum())
            if self.example is None:
                t, v = map(int, np.argwhere(bad)[0])
                self.example = (data.round, int(sim.trial[t]), v,
                                Fraction(int(data.start[t, v]), self.scale),
                                Fraction(int(delta[t, v]), self.scale))

    def summary(self) -> dict:
        return {"table_checked": self.checked, "table_violations": self.violations,
                "table_violations_in_range": self.in_range_violations,
                "table_violations_clamped": self.clamped_violations}


def leader_election_stats(spec: ExperimentSpec) -> list[SummaryRow]:
    """Rows per ``n``. Raises :class:`SafetyViolation` if any trial elects two
    leaders (unless ``params.abort_on_safety`` is false)."""
    cell = knockback()
    check_table = spec.params.get("check_table", True)
    rows = []
    for point in spec.points():
        n = int(point["n"])
        config = uniform_system(cell, complete(n))
        observer = NetPotentialCheck(kernel_for(config).scale) if check_table else None
        results = run_batch(config, spec.seeds(point), spec.max_rounds, [AllInactive()],
                            observer=observer)
        leaders = [len(r.expressed(LEADER)) for r in results]
        rounds = [r.first_expression_round() for r in results if len(r.expressed(LEADER)) == 1]
        unsafe = sum(c > 1 for c in leaders)
        extra = {"no_leader": sum(c == 0 for c in leaders)}
        if observer is not None:
            extra.update(observer.summary())
        rows.append(SummaryRow(point, spec.trials, sum(c == 1 for c in leaders), unsafe,
                               RoundStats.of(rounds), extra, rounds))
        if unsafe and spec.params.get("abort_on_safety", True):
            raise SafetyViolation(f"n={n}: {unsafe} trial(s) elected more than one leader")
    return rows


def liveness_fit(rows: Sequence[SummaryRow]) -> LinearFit:
    """Least-squares line of mean rounds-to-leader against ln n."""
    return fit_line([math.log(r.point["n"]) for r in rows], [r.rounds.mean for r in rows])


# -- MIS ---------------------------------------------------------------------------------

def _log2(x: float) -> float:
    return math.log2(x)


def mis_budget(n: int, delta: int, c: float = MIS_BUDGET_C) -> int:
    """``ceil(c * log2(delta + 2)**2 * log2(n + 1))``; ``n + 1`` keeps the
    single-vertex budget positive."""
    return math.ceil(c * _log2(delta + 2) ** 2 * _log2(n + 1))


def stabilize_budget(n: int, delta: int, c: float = STABILIZE_BUDGET_C,
                     window: int = STABLE_WINDOW) -> int:
    return mis_budget(n, delta, c) + window


def ubg_instance(n: int, degree: float, seed: int, dim: int = 2) -> Topology:
    return ubg_random(UbgParams(n, dim, side_for_degree(n, degree, dim), seed))


def _point_instances(spec: ExperimentSpec, point: Mapping) -> list[Topology]:
    degree = float(point.get("degree", spec.params.get("degree", 8)))
    dim = int(point.get("dim", spec.params.get("dim", 2)))
    return [ubg_instance(int(point["n"]), degree, s, dim) for s in spec.seeds(point)]


@dataclass(frozen=True)
class MisOutcome:
    n: int
    delta: int
    budget: int
    rounds: Optional[int]    # rounds to completion, None if the budget ran out
    members: tuple[int, ...]
    violation: Optional[str]
    independence_violations: int

    @property
    def valid(self) -> bool:
        return self.rounds is not None and self.violation is None


def _independence_violations(t: Topology, members) -> int:
    members = set(members)
    return sum(1 for u, v in t.edges if u in members and v in members)


def run_mis(topology: Topology, seed: int, budget: int) -> MisOutcome:
    config = uniform_system(knockback(), topology)
    [res] = run_batch(config, [seed], budget, [AllInactive()])
    leaders = res.expressed(LEADER)
    bad = validate_mis(topology, leaders)
    done = res.stop_reason == "all-inactive"
    return MisOutcome(topology.n, max_degree(topology), budget, res.rounds if done else None,
                      tuple(leaders), None if bad is None else str(bad),
                      _independence_violations(topology, leaders))


def _mis_row(point, outcomes: Sequence[MisOutcome]) -> SummaryRow:
    done = [o.rounds for o in outcomes if o.valid]
    failures = [{"n": o.n, "delta": o.delta, "rounds": o.rounds, "violation": o.violation}
                for o in outcomes if not o.valid]
    extra = {"max_delta": max(o.delta for o in outcomes), "failures": failures[:10],
             "budget_exhausted": sum(o.rounds is None for o in outcomes)}
    return SummaryRow(dict(point), len(outcomes), len(done),
                      sum(o.independence_violations for o in outcomes),
                      RoundStats.of(done), extra, list(outcomes))


def mis_stats(spec: ExperimentSpec) -> list[SummaryRow]:
    """KnockBack from clean starts on random connected unit ball graphs, one
    graph per trial."""
    c = float(spec.params.get("budget_c", MIS_BUDGET_C))
    rows = []
    for point in spec.points():
        outcomes = []
        for topo, seed in zip(_point_instances(spec, point), spec.seeds(point)):
            budget = min(spec.max_rounds, mis_budget(topo.n, max_degree(topo), c))
            outcomes.append(run_mis(topo, seed, budget))
        rows.append(_mis_row(point, outcomes))
    return rows


class StableMembership(StopCondition):
    """Raw-mode stop: the set of cells at potential >= ``threshold`` is a
    valid MIS and has not changed for ``window`` rounds."""

    def __init__(self, window: int = STABLE_WINDOW, threshold: Fraction = Fraction(2)):
        self.window = window
        self.threshold = threshold
        self.reason = f"stable-mis:{window}"
        self._prev = None
        self._streak = None
        self._since = None
        self.stable_since: dict[int, int] = {}

    def check(self, sim, data):
        member = sim.P >= int(self.threshold * sim.k.scale)
        near = sim.k.neighbor_sum(member.astype(np.int64)) > 0
        valid = ~(member & near).any(axis=1) & (member | near).all(axis=1)
        if self._prev is None:
            self._prev = member
            self._streak = np.zeros(sim.size, dtype=np.int64)
            self._since = np.full(sim.size, sim.round, dtype=np.int64)
        same = (member == self._prev).all(axis=1)
        grow = valid & same
        self._since = np.where(grow, self._since, sim.round)
        self._streak = np.where(grow, self._streak + 1, 0)
        self._prev = member
        hit = self._streak >= self.window
        for j in np.nonzero(hit)[0].tolist():
            self.stable_since[int(sim.trial[j])] = int(self._since[j])
        return hit

    def keep(self, mask):
        if self._prev is not None:
            self._prev, self._streak, self._since = self._prev[mask], self._streak[mask], self._since[mask]


def random_potentials(n: int, seed: int, low: Fraction = Fraction(-3), high: Fraction = Fraction(3),
                      denominator: int = 100) -> tuple[Fraction, ...]:
    """Half the cells on the 1/2 grid, the rest on the 1/``denominator`` grid
    (mostly off the half grid), all within ``[low, high]``."""
    rng = np.random.default_rng(seed)
    out = []
    for half_grid in rng.random(n) < 0.5:
        d = 2 if half_grid else denominator
        lo, hi = math.ceil(low * d), math.floor(high * d)
        out.append(Fraction(int(rng.integers(lo, hi + 1)), d))
    return tuple(out)


def run_stabilize(topology: Topology, seed: int, budget: int,
                  initial: Sequence[Fraction], window: int = STABLE_WINDOW) -> MisOutcome:
    config = SystemConfig(topology, (knockback(),) * topology.n, RAW, tuple(initial))
    cond = StableMembership(window)
    [res] = run_batch(config, [seed], budget, [cond])
    members = np.nonzero(res.potentials >= 2 * res.scale)[0].tolist()
    bad = validate_mis(topology, members)
    stable = res.stop_reason == cond.reason
    rounds = cond.stable_since.get(0) - 1 if stable else None
    return MisOutcome(topology.n, max_degree(topology), budget, rounds, tuple(members),
                      None if bad is None else str(bad), _independence_violations(topology, members))


def mis_stabilize_stats(spec: ExperimentSpec) -> list[SummaryRow]:
    """Raw dynamics from random initial potentials; a trial succeeds once the
    potential >= 2 set is a valid MIS that holds for the confirmation window.
    ``rounds`` is the round the stable window started in."""
    c = float(spec.params.get("budget_c", STABILIZE_BUDGET_C))
    window = int(spec.params.get("window", STABLE_WINDOW))
    low = Fraction(spec.params.get("low", "-3"))
    high = Fraction(spec.params.get("high", "3"))
    rows = []
    for point in spec.points():
        outcomes = []
        for topo, seed in zip(_point_instances(spec, point), spec.seeds(point)):
            budget = min(spec.max_rounds, stabilize_budget(topo.n, max_degree(topo), c, window))
            init = random_potentials(topo.n, seed ^ 0x5EED, low, high)
            outcomes.append(run_stabilize(topo, seed, budget, init, window))
        rows.append(_mis_row(point, outcomes))
    return rows


def calibrate_budget_c(outcomes: Sequence[MisOutcome], margin: float = 1.5) -> float:
    """Smallest multiple of 1/2 covering ``margin`` times the worst observed
    ``rounds / (log2(delta + 2)**2 * log2(n + 1))``."""
    worst = max(o.rounds / (_log2(o.delta + 2) ** 2 * _log2(o.n + 1)) for o in outcomes)
    return math.ceil(2 * margin * worst) / 2


# -- threshold and majority ---------------------------------------------------------------

def threshold_tau(epsilon) -> float:
    return 8 * math.log(1 / float(epsilon))


def threshold_error_rate(spec: ExperimentSpec) -> list[SummaryRow]:
    """Expression rate per ``n``; ``params.kind`` is ``general`` (default) or
    ``small``. ``successes`` counts trials in which some cell expressed."""
    k = int(spec.params["k"])
    kind = spec.params.get("kind", "general")
    cell = general_threshold(k) if kind == "general" else small_threshold(k)
    rows = []
    for point in spec.points():
        n = int(point["n"])
        config = uniform_system(cell, complete(n))
        results = run_batch(config, spec.seeds(point), min(spec.max_rounds, 2),
                            [FirstExpression(THRESHOLD_EXCEEDED)])
        hits = [bool(r.expressed(THRESHOLD_EXCEEDED)) for r in results]
        extra = {"k": k, "kind": kind}
        if "epsilon" in spec.params:
            tau = threshold_tau(spec.params["epsilon"])
            extra["tau"] = tau
            extra["side"] = "above" if n > tau * k else "below" if n <= k / tau else "gap"
        rows.append(SummaryRow(point, spec.trials, sum(hits), extra=extra))
    return rows


def majority_config(n_a: int, n_b: int, N: int, epsilon, b_first: bool = False) -> SystemConfig:
    a, b = majority_pair(N, epsilon)
    if n_a + n_b > N:
        raise ValueError(f"{n_a} + {n_b} cells exceed N = {N}")
    cells = (b,) * n_b + (a,) * n_a if b_first else (a,) * n_a + (b,) * n_b
    return SystemConfig(complete(n_a + n_b), cells)


def majority_first(results, majority: str) -> list[bool]:
    """True where only ``majority`` cells expressed in the first expression
    round (ties count as failure)."""
    out = []
    for r in results:
        first = r.first_expression_round()
        if first is None:
            out.append(False)
            continue
        labels = {r.labels[r.label[v]] for v in np.nonzero((r.status == EXPRESSED)
                                                          & (r.status_round == first))[0]}
        out.append(labels == {majority})
    return out


def majority_error_rate(spec: ExperimentSpec) -> list[SummaryRow]:
    N = int(spec.params["N"])
    eps = spec.params["epsilon"]
    rows = []
    for point in spec.points():
        n_a, n_b = int(point["n_A"]), int(point["n_B"])
        config = majority_config(n_a, n_b, N, eps)
        results = run_batch(config, spec.seeds(point), spec.max_rounds, [FirstExpression()])
        majority = "A" if n_a >= n_b else "B"
        ok = majority_first(results, majority)
        rounds = [r.first_expression_round() for r in results if r.first_expression_round()]
        extra = {"majority": majority,
                 "no_expression": sum(r.first_expression_round() is None for r in results)}
        rows.append(SummaryRow(point, spec.trials, sum(ok), rounds=RoundStats.of(rounds), extra=extra))
    return rows


RUNNERS: Mapping[str, Callable[[ExperimentSpec], list[SummaryRow]]] = {
    "leader-election": leader_election_stats,
    "mis": mis_stats,
    "mis-stabilize": mis_stabilize_stats,
    "threshold": threshold_error_rate,
    "majority": majority_error_rate,
}


def run_experiment(spec: ExperimentSpec) -> list[SummaryRow]:
    return RUNNERS[spec.experiment](spec)


# -- budget calibration ---------------------------------------------------------------------

#: instance grid shared by calibration and validation of the MIS budgets
MIS_GRID = {"n": [25, 50, 100, 200, 300], "degree": [8, 12]}
TRAINING_SEED = 101


def calibrate_mis_constants(trials: int = 20, base_seed: int = TRAINING_SEED,
                            margin: float = 1.5) -> tuple[float, float]:
    """Budget factors for clean-start MIS and for stabilization, fitted on the
    training seeds with an effectively unlimited budget."""
    out = []
    for name, runner in (("mis", mis_stats), ("mis-stabilize", mis_stabilize_stats)):
        spec = ExperimentSpec(name, MIS_GRID, trials, base_seed, params={"budget_c": 1e6})
        outcomes = [o for row in runner(spec) for o in row.samples]
        out.append(calibrate_budget_c([o for o in outcomes if o.rounds is not None], margin))
    return out[0], out[1]
