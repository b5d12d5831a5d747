"""Online execution engine: arrival semantics, legality enforcement, traces,
and exact / Monte-Carlo performance measurement.

Agents arrive one at a time.  At each arrival a policy returns a distribution
over decisions; a decision optionally dissolves one existing coalition (free
dissolution mode only) and then places the newcomer into an existing
coalition or a fresh singleton.  The engine, not the policy, enforces
legality; illegal decisions abort the run with a structured error.

Policies see only revealed information (an :class:`Observation`).  Randomized
policies expose their full decision distribution with exact rational
probabilities, which makes exact expectations over (arrival order x policy
randomness) possible for small n.

Seeding: runs take one 64-bit master seed; the order stream and the decision
stream are derived with ``derive_seed(master, label, ...)`` (SHA-256 over the
repr of the label tuple), and all uniform draws go through rejection sampling
on ``getrandbits``, so results are reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .core import FHGError, InstanceTooLarge, Partition, UnknownAgent
from .rationals import Scalar, scalar_to_str

EXACT_EXPECTATION_CAP = 8


class EngineViolation(FHGError):
    """A policy emitted a decision the online model does not allow."""


class IrrevocabilityViolation(EngineViolation):
    pass


class DissolutionInStrictMode(EngineViolation):
    pass


class MultipleDissolutions(EngineViolation):
    pass


@dataclass(frozen=True)
class OnlineDecision:
    """One arrival's decision: optionally dissolve one coalition, then place
    the newcomer (``join`` names an existing coalition by its members;
    ``join=None`` starts a new singleton)."""

    join: frozenset[int] | None = None
    dissolve: frozenset[int] | tuple[frozenset[int], ...] | None = None

    def to_json(self) -> dict:
        d = self.dissolve
        if isinstance(d, tuple):
            d_json = [sorted(c) for c in d]
        else:
            d_json = sorted(d) if d is not None else None
        return {"join": sorted(self.join) if self.join is not None else None,
                "dissolve": d_json}


SINGLETON = OnlineDecision()


@dataclass(frozen=True)
class Branch:
    """One outcome of a policy's randomized decision."""

    decision: OnlineDecision
    prob: Fraction
    state: object = None


class OnlinePolicy:
    """Base class for online policies.

    ``decide`` maps (per-run state, observation) to a list of Branches whose
    probabilities are exact rationals summing to 1.  Deterministic policies
    return a single branch.  Policies must depend only on the observation
    (revealed weights in arrival coordinates), never on unrevealed agents.
    """

    policy_id: str = "?"

    def fresh_state(self):
        return None

    def decide(self, state, obs: "Observation") -> Sequence[Branch]:
        raise NotImplementedError

    def __repr__(self):
        return f"<policy {self.policy_id}>"


class Observation:
    """Read-only view of one arrival: who has arrived (in order), the
    newcomer, the revealed weights, and the current partition.

    ``arrived`` may be a tuple or a range (the adversary drivers number
    agents in arrival order, which keeps position lookups O(1))."""

    __slots__ = ("mode", "arrived", "newcomer", "_G", "_run", "_set", "_pos")

    def __init__(self, mode, arrived, newcomer, G, run):
        self.mode = mode
        self.arrived = arrived
        self.newcomer = newcomer
        self._G = G
        self._run = run
        self._set = None
        self._pos = None

    @property
    def k(self) -> int:
        return len(self.arrived)

    def is_revealed(self, agent: int) -> bool:
        if type(self.arrived) is range:
            return 0 <= agent < len(self.arrived)
        if self._set is None:
            self._set = frozenset(self.arrived)
        return agent in self._set

    @property
    def arrived_set(self) -> frozenset[int]:
        if self._set is None:
            self._set = frozenset(self.arrived)
        return self._set

    def position(self, agent: int) -> int:
        """Arrival position of an arrived agent (0-based)."""
        if type(self.arrived) is range:
            return agent
        if self._pos is None:
            self._pos = {a: i for i, a in enumerate(self.arrived)}
        return self._pos[agent]

    def w(self, i: int, j: int) -> Scalar:
        if not (self.is_revealed(i) and self.is_revealed(j)):
            raise UnknownAgent(f"weight ({i},{j}) not revealed yet")
        return self._G.w(i, j)

    def coalitions(self) -> list[frozenset[int]]:
        return [members for members, _ in self._run.coals.values()]

    def coalition_of(self, agent: int) -> frozenset[int]:
        return self._run.coals[self._run.of[agent]][0]

    def positive_neighbors(self, agent: int) -> list[tuple[int, Scalar]]:
        hook = getattr(self._G, "positive_neighbors", None)
        if hook is not None:
            return [(j, w) for j, w in hook(agent) if self.is_revealed(j)]
        out = []
        for j in sorted(self.arrived):
            if j != agent:
                w = self._G.w(agent, j)
                if w > 0:
                    out.append((j, w))
        return out

    def coalition_welfare(self, members: Iterable[int]) -> Scalar:
        members = list(members)
        k = len(members)
        if k <= 1:
            return Fraction(0)
        tot: Scalar = Fraction(0)
        for a in range(k):
            for b in range(a + 1, k):
                tot = tot + self.w(members[a], members[b])
        return (2 * tot) / k

    def mwm_pairs(self) -> list[tuple[int, int]]:
        """Exact maximum weight matching of the revealed subgraph, with ties
        broken by arrival position (engine-provided so the subset DP table is
        shared across runs on the same instance)."""
        from .oracles import mwm_pairs_on

        return mwm_pairs_on(self._G, self.arrived_set, priority=self.arrived)


class _Run:
    """Mutable partition state with incremental exact welfare."""

    __slots__ = ("coals", "of", "welfare", "next_cid")

    def __init__(self):
        self.coals: dict[int, tuple[frozenset[int], Scalar]] = {}  # cid -> (members, pair-sum)
        self.of: dict[int, int] = {}
        self.welfare: Scalar = Fraction(0)
        self.next_cid = 0

    def copy(self) -> "_Run":
        r = _Run.__new__(_Run)
        r.coals = dict(self.coals)
        r.of = dict(self.of)
        r.welfare = self.welfare
        r.next_cid = self.next_cid
        return r

    def _sw(self, members: frozenset[int], esum: Scalar) -> Scalar:
        return (2 * esum) / len(members) if len(members) >= 2 else Fraction(0)

    def add_singleton(self, z: int) -> None:
        cid = self.next_cid
        self.next_cid += 1
        self.coals[cid] = (frozenset((z,)), Fraction(0))
        self.of[z] = cid

    def dissolve(self, members: frozenset[int]) -> None:
        if not members:
            raise IrrevocabilityViolation("cannot dissolve an empty coalition")
        cid = self.of.get(next(iter(members)))
        if cid is None or self.coals.get(cid, (None,))[0] != members:
            raise IrrevocabilityViolation(
                f"dissolve target {sorted(members)} is not a current coalition"
            )
        old_members, esum = self.coals.pop(cid)
        self.welfare = self.welfare - self._sw(old_members, esum)
        for a in old_members:
            self.add_singleton(a)

    def join(self, G, z: int, members: frozenset[int]) -> None:
        if not members:
            raise IrrevocabilityViolation("cannot join an empty coalition")
        cid = self.of.get(next(iter(members)))
        if cid is None or self.coals.get(cid, (None,))[0] != members:
            raise IrrevocabilityViolation(
                f"join target {sorted(members)} is not a current coalition"
            )
        old_members, esum = self.coals[cid]
        delta: Scalar = Fraction(0)
        for y in old_members:
            delta = delta + G.w(z, y)
        new_members = old_members | {z}
        new_esum = esum + delta
        self.welfare = (
            self.welfare - self._sw(old_members, esum) + self._sw(new_members, new_esum)
        )
        self.coals[cid] = (new_members, new_esum)
        self.of[z] = cid

    def partition(self) -> Partition:
        return Partition.of([members for members, _ in self.coals.values()])

    def canonical(self) -> tuple[tuple[int, ...], ...]:
        return tuple(sorted(tuple(sorted(m)) for m, _ in self.coals.values()))


def _apply_decision(G, run: _Run, z: int, decision: OnlineDecision, mode: str) -> None:
    d = decision.dissolve
    if d is not None:
        if isinstance(d, tuple):
            if len(d) > 1:
                raise MultipleDissolutions("at most one coalition may dissolve per arrival")
            d = d[0] if d else None
        if d is not None:
            if mode != "dissolution":
                raise DissolutionInStrictMode("dissolution is not allowed in strict mode")
            run.dissolve(d)
    if decision.join is None:
        run.add_singleton(z)
    else:
        if z in decision.join:
            raise IrrevocabilityViolation("newcomer cannot already be in the join target")
        run.join(G, z, decision.join)


@dataclass
class TraceEvent:
    t: int
    agent: int
    decision: OnlineDecision
    welfare: Scalar

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "agent": self.agent,
            "decision": self.decision.to_json(),
            "welfare": scalar_to_str(self.welfare),
        }


@dataclass
class Trace:
    mode: str
    order: tuple[int, ...]
    events: list[TraceEvent] = field(default_factory=list)
    snapshots: list[tuple[tuple[int, ...], ...]] | None = None

    def to_jsonl(self) -> str:
        import json

        return "\n".join(json.dumps(e.to_json(), sort_keys=True) for e in self.events)

    def verify(self) -> None:
        """Check the prefix property: each snapshot restricted to the previous
        arrivals equals the previous snapshot, up to one dissolved coalition in
        dissolution mode."""
        if self.snapshots is None:
            raise ValueError("trace was recorded without snapshots")
        for k in range(1, len(self.snapshots)):
            prev = {frozenset(c) for c in self.snapshots[k - 1]}
            seen = set(self.order[:k])
            restricted = set()
            for c in self.snapshots[k]:
                kept = frozenset(a for a in c if a in seen)
                if kept:
                    restricted.add(kept)
            if restricted == prev:
                continue
            if self.mode != "dissolution":
                raise IrrevocabilityViolation(f"prefix property violated at arrival {k + 1}")
            extra = prev - restricted
            added = restricted - prev
            if len(extra) == 1 and all(len(c) == 1 for c in added) and frozenset().union(*added) == next(iter(extra)):
                continue
            raise IrrevocabilityViolation(
                f"snapshot {k + 1} is not the previous one with a single dissolution"
            )


def derive_seed(master: int, *parts) -> int:
    """Documented splitting function: SHA-256 of (master, *parts)."""
    blob = repr((int(master),) + tuple(parts)).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def _rand_below(rng: random.Random, k: int) -> int:
    """Uniform integer in [0, k) from getrandbits (platform-stable)."""
    if k <= 1:
        return 0
    bits = (k - 1).bit_length()
    while True:
        v = rng.getrandbits(bits)
        if v < k:
            return v


def _shuffled(rng: random.Random, items: list) -> list:
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = _rand_below(rng, i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def _pick_branch(rng: random.Random, branches: Sequence[Branch]) -> Branch:
    if len(branches) == 1:
        return branches[0]
    u = Fraction(rng.getrandbits(64), 1 << 64)
    acc = Fraction(0)
    for br in branches:
        acc += br.prob
        if u < acc:
            return br
    return branches[-1]


def _check_branches(branches: Sequence[Branch]) -> None:
    total = Fraction(0)
    for br in branches:
        if br.prob < 0:
            raise EngineViolation("negative branch probability")
        total += br.prob
    if total != 1:
        raise EngineViolation(f"branch probabilities sum to {total}, not 1")


def run_online(
    G,
    order: Sequence[int],
    policy: OnlinePolicy,
    mode: str = "strict",
    seed: int = 0,
    record_snapshots: bool = True,
) -> tuple[Partition, Trace]:
    """Execute one online run; randomness is fully determined by `seed`."""
    if mode not in ("strict", "dissolution"):
        raise ValueError(f"unknown mode {mode!r}")
    order = tuple(order)
    if sorted(order) != list(range(G.n)):
        raise ValueError("order must be a permutation of the agents")
    rng = random.Random(derive_seed(seed, "decisions", order))
    run = _Run()
    state = policy.fresh_state()
    trace = Trace(mode=mode, order=order, snapshots=[] if record_snapshots else None)
    for k, z in enumerate(order, start=1):
        obs = Observation(mode, order[:k], z, G, run)
        branches = policy.decide(state, obs)
        _check_branches(branches)
        br = _pick_branch(rng, branches)
        state = br.state
        _apply_decision(G, run, z, br.decision, mode)
        trace.events.append(TraceEvent(k, z, br.decision, run.welfare))
        if record_snapshots:
            trace.snapshots.append(run.canonical())
    if record_snapshots:
        trace.verify()
    return run.partition(), trace


# -- exact expectation over orders x randomness -------------------------------


def exact_order_statistics(
    G,
    policy: OnlinePolicy,
    mode: str,
    stat: Callable[[_Run], object],
    cap: int = EXACT_EXPECTATION_CAP,
) -> dict:
    """Distribution of ``stat(final run state)`` under a uniformly random
    arrival order and the policy's randomization, as exact probabilities.

    Enumerates all n! orders and branches on every randomized decision.
    """
    n = G.n
    if n > cap:
        raise InstanceTooLarge(f"exact expectation: n={n} exceeds cap {cap}")
    out: dict = {}
    denom = Fraction(1, math.factorial(n)) if n else Fraction(1)
    for order in itertools.permutations(range(n)):
        stack = [(0, _Run(), policy.fresh_state(), Fraction(1))]
        while stack:
            k, run, state, prob = stack.pop()
            if k == n:
                v = stat(run)
                out[v] = out.get(v, Fraction(0)) + prob * denom
                continue
            z = order[k]
            obs = Observation(mode, order[: k + 1], z, G, run)
            branches = policy.decide(state, obs)
            _check_branches(branches)
            live = [br for br in branches if br.prob > 0]
            for idx, br in enumerate(live):
                nxt = run if idx == len(live) - 1 else run.copy()
                _apply_decision(G, nxt, z, br.decision, mode)
                stack.append((k + 1, nxt, br.state, prob * br.prob))
    return out


def exact_outcome_distribution(G, policy, mode, cap: int = EXACT_EXPECTATION_CAP) -> dict:
    """Exact distribution over canonical final partitions."""
    return exact_order_statistics(G, policy, mode, lambda run: run.canonical(), cap=cap)


def expected_welfare_exact(G, policy, mode, cap: int = EXACT_EXPECTATION_CAP) -> Scalar:
    dist = exact_order_statistics(G, policy, mode, lambda run: run.welfare, cap=cap)
    total: Scalar = Fraction(0)
    for value, prob in dist.items():
        total = total + value * prob
    return total


def exact_pooled_statistics(
    G,
    policy: OnlinePolicy,
    mode: str,
    stat: Callable[[_Run], object],
    cap: int = 14,
) -> dict:
    """Like :func:`exact_order_statistics` but pooled over arrival sets.

    Valid only when the policy's decision distribution is a function of
    (arrived set, current partition, policy state) — i.e. no tie-breaking on
    arrival positions can trigger on this instance.  The star/bi-star
    families satisfy this because all positive weights are distinct.  Runs in
    time ~ 2^n * (reachable states) instead of n!.
    """
    n = G.n
    if n > cap:
        raise InstanceTooLarge(f"pooled exact expectation: n={n} exceeds cap {cap}")
    # layer: key = (frozen arrived tuple-sorted, partition canonical, state) -> (prob, run, state)
    layer: dict = {((), (), None): (Fraction(1), _Run(), policy.fresh_state())}
    for k in range(n):
        nxt_layer: dict = {}
        share = Fraction(1, n - k)
        for (arrived, _canon, _skey), (prob, run, state) in layer.items():
            remaining = [a for a in range(n) if a not in arrived]
            for z in remaining:
                obs = Observation(mode, arrived + (z,), z, G, run)
                branches = policy.decide(state, obs)
                _check_branches(branches)
                for br in branches:
                    if br.prob == 0:
                        continue
                    nr = run.copy()
                    _apply_decision(G, nr, z, br.decision, mode)
                    key = (
                        tuple(sorted(arrived + (z,))),
                        nr.canonical(),
                        _state_key(br.state),
                    )
                    p = prob * share * br.prob
                    if key in nxt_layer:
                        nxt_layer[key] = (nxt_layer[key][0] + p, nxt_layer[key][1], nxt_layer[key][2])
                    else:
                        nxt_layer[key] = (p, nr, br.state)
        layer = nxt_layer
    out: dict = {}
    for (_, _, _), (prob, run, _state) in layer.items():
        v = stat(run)
        out[v] = out.get(v, Fraction(0)) + prob
    return out


def _state_key(state):
    if state is None or isinstance(state, (int, str, tuple, frozenset, Fraction)):
        return state
    key_fn = getattr(state, "pool_key", None)
    if key_fn is not None:
        return key_fn()
    raise TypeError(f"policy state {type(state).__name__} is not poolable")


# -- Monte Carlo ---------------------------------------------------------------


def expected_welfare_mc(
    G, policy: OnlinePolicy, mode: str, samples: int, seed: int = 0
) -> tuple[float, float]:
    """Unbiased Monte-Carlo estimate of expected welfare over uniformly random
    orders; returns (mean, standard error).  Reproducible per seed."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    n = G.n
    order_rng = random.Random(derive_seed(seed, "orders"))
    dec_rng = random.Random(derive_seed(seed, "decisions"))
    agents = list(range(n))
    acc = 0.0
    acc2 = 0.0
    for _ in range(samples):
        order = _shuffled(order_rng, agents)
        run = _Run()
        state = policy.fresh_state()
        for k, z in enumerate(order, start=1):
            obs = Observation(mode, tuple(order[:k]), z, G, run)
            branches = policy.decide(state, obs)
            br = _pick_branch(dec_rng, branches)
            state = br.state
            _apply_decision(G, run, z, br.decision, mode)
        v = float(run.welfare)
        acc += v
        acc2 += v * v
    mean = acc / samples
    if samples == 1:
        return mean, 0.0
    var = max(0.0, (acc2 - samples * mean * mean) / (samples - 1))
    return mean, math.sqrt(var / samples)


# -- competitive reports ---------------------------------------------------------


def ratio_of(welfare, opt):
    """Competitive ratio with the conventions 0/0 = 1 and negative/0 = 0."""
    if opt == 0:
        if welfare == 0:
            return Fraction(1) if not isinstance(welfare, float) else 1.0
        return Fraction(0) if not isinstance(welfare, float) else 0.0
    return welfare / opt if not isinstance(welfare, float) else welfare / float(opt)


@dataclass
class CompetitiveReport:
    instance: str
    alg: str
    mode: str
    arrival: str
    welfare: object
    opt: object
    ratio: object
    samples: int | None = None
    stderr: float | None = None
    seed: int | None = None

    CSV_COLUMNS = ("instance_id", "alg", "mode", "arrival", "welfare", "opt",
                   "ratio", "samples", "stderr", "seed")

    def _fmt(self, v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (int, str)):
            return str(v)
        return scalar_to_str(v)

    def to_csv_row(self) -> str:
        vals = [self.instance, self.alg, self.mode, self.arrival, self.welfare,
                self.opt, self.ratio, self.samples, self.stderr, self.seed]
        return ",".join(self._fmt(v) for v in vals)

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance,
            "alg": self.alg,
            "mode": self.mode,
            "arrival": self.arrival,
            "welfare": self._fmt(self.welfare),
            "opt": self._fmt(self.opt),
            "ratio": self._fmt(self.ratio),
            "samples": self.samples,
            "stderr": self.stderr,
            "seed": self.seed,
        }


def competitive_ratio(
    G,
    policy: OnlinePolicy,
    mode: str,
    arrival,
    *,
    instance: str = "",
    expect: str = "exact",
    samples: int = 10000,
    seed: int = 0,
    partition_cap: int = 12,
    exact_cap: int = EXACT_EXPECTATION_CAP,
) -> CompetitiveReport:
    """Measure a policy against the exact offline optimum.

    ``arrival`` is either a concrete order (sequence of agent ids, the
    adversarial case) or the string "random"; random arrival uses the exact
    expectation for n within cap (``expect="exact"``) or seeded Monte Carlo.
    """
    from .oracles import optimal_partition

    _, opt = optimal_partition(G, cap=partition_cap)
    if arrival == "random":
        if expect == "exact":
            welfare = expected_welfare_exact(G, policy, mode, cap=exact_cap)
            return CompetitiveReport(instance, policy.policy_id, mode, "random",
                                     welfare, opt, ratio_of(welfare, opt), seed=seed)
        mean, stderr = expected_welfare_mc(G, policy, mode, samples, seed)
        return CompetitiveReport(instance, policy.policy_id, mode, "random",
                                 mean, opt, ratio_of(mean, opt),
                                 samples=samples, stderr=stderr, seed=seed)
    order = tuple(arrival)
    partition, _trace = run_online(G, order, policy, mode, seed=seed)
    from .core import partition_welfare

    welfare = partition_welfare(G, partition)
    label = "order:" + "-".join(map(str, order))
    return CompetitiveReport(instance, policy.policy_id, mode, label,
                             welfare, opt, ratio_of(welfare, opt), seed=seed)
