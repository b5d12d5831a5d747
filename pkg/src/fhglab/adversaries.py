"""Adversarial instance families and drivers.

Three kinds of machinery live here:

* generators for the star / bi-star families (geometric leaf weights
  (1/eps)^i around a center, a dominant center-center edge in bi-stars, and
  uniformly hostile negative fill) plus random tree-domain instances;

* exact probability calculators for the canonical star policies: the
  recursive formulas for h (center matched at all) and r (maximum weight edge
  matched) cross-checked against direct expectation enumeration through the
  online engine, and the max-edge conversion slack check;

* the interactive phased dissolution adversary.  It plays against any policy
  in free-dissolution mode, growing star structures around the endpoints of
  the policy's single positive pair and escalating edge weights in waves
  until the pair is dissolved; phase bookkeeping yields an exactly-audited
  upper bound on the policy's competitive ratio.  All phase arithmetic runs
  in Q(sqrt2), so the defining identities hold exactly rather than to
  floating-point tolerance.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable

from .core import FHGError, SymmetricFHG, UnknownAgent
from .engine import (
    Observation,
    Trace,
    TraceEvent,
    _apply_decision,
    _check_branches,
    _pick_branch,
    _rand_below,
    _Run,
    derive_seed,
    exact_order_statistics,
    exact_pooled_statistics,
)
from .oracles import max_weight_matching
from .policies import (
    OnlinePolicy,
    StarMaxEdgePolicy,
    StarView,
    make_policy,
    probability_bank,
)
from .rationals import FHG_DISSOLUTION_BOUND, Quad, Scalar, scalar_to_str


class InvalidSpec(FHGError):
    pass


class RecursionEnumerationMismatch(FHGError):
    pass


def scalar_ceil(x: Scalar) -> int:
    """Exact ceiling of a Fraction or Q(sqrt2) value."""
    if isinstance(x, Quad):
        g = math.ceil(float(x))
        while g < x:
            g += 1
        while g - 1 >= x:
            g -= 1
        return g
    return math.ceil(Fraction(x))


# -- star / bi-star specs and generators --------------------------------------


@dataclass(frozen=True)
class StarSpec:
    """Parameters of the adversarial star families.

    I indexes the leaf weights (1/eps)^i at center a, J those at center b
    (bi-stars only), x sets the negative fill -(1/eps)^x.
    """

    I: frozenset[int]
    J: frozenset[int]
    x: int
    eps: Fraction

    @staticmethod
    def of(I: Iterable[int], J: Iterable[int] = (), x: int | None = None,
           eps: Fraction = Fraction(1, 2)) -> "StarSpec":
        I, J = frozenset(I), frozenset(J)
        eps = Fraction(eps)
        if not I:
            raise InvalidSpec("I must be nonempty")
        if any(i < 1 for i in I | J):
            raise InvalidSpec("leaf indices must be positive integers")
        if I & J:
            raise InvalidSpec("I and J must be disjoint")
        if not (0 < eps <= Fraction(1, 2)):
            raise InvalidSpec("eps must be in (0, 1/2]")
        t_b = max(I | J)
        if x is None:
            x = t_b + 3
        if x <= t_b + 2:
            raise InvalidSpec(f"x must exceed max(I u J) + 2 = {t_b + 2}")
        return StarSpec(I, J, int(x), eps)

    @property
    def t_s(self) -> int:
        return max(self.I)

    @property
    def t_b(self) -> int:
        return max(self.I | self.J)

    @property
    def q(self) -> Fraction:
        return 1 / self.eps

    def n_agents(self) -> int:
        return 2 + len(self.I) + len(self.J)

    def agent_layout(self):
        """a=0, b=1, then leaves for sorted(I) and sorted(J)."""
        leaf_index: dict[int, int] = {}
        leaf_center: dict[int, int] = {}
        nxt = 2
        for i in sorted(self.I):
            leaf_index[nxt] = i
            leaf_center[nxt] = 0
            nxt += 1
        for j in sorted(self.J):
            leaf_index[nxt] = j
            leaf_center[nxt] = 1
            nxt += 1
        return leaf_index, leaf_center

    def to_json(self, kind: str) -> dict:
        return {
            "kind": kind,
            "I": sorted(self.I),
            "J": sorted(self.J),
            "x": self.x,
            "eps": f"{self.eps.numerator}/{self.eps.denominator}",
        }

    @staticmethod
    def from_json(doc: dict) -> tuple["StarSpec", str]:
        spec = StarSpec.of(doc["I"], doc.get("J", ()), doc["x"], Fraction(doc["eps"]))
        return spec, doc.get("kind", "star")


def _family_instance(spec: StarSpec, kind: str) -> SymmetricFHG:
    n = spec.n_agents()
    q = spec.q
    neg = -(q ** spec.x)
    leaf_index, leaf_center = spec.agent_layout()
    entries = []
    for i in range(n):
        for j in range(i + 1, n):
            w = neg
            if i == 0 and leaf_center.get(j) == 0:
                w = q ** leaf_index[j]
            elif kind == "bistar":
                if i == 1 and leaf_center.get(j) == 1:
                    w = q ** leaf_index[j]
                elif i == 0 and j == 1:
                    w = q ** (spec.t_b + 1)
            entries.append((i, j, w))
    return SymmetricFHG(n, entries)


def gen_star(spec: StarSpec) -> SymmetricFHG:
    """Star instance: positive edges (1/eps)^i from a to its leaves; b, the
    J-leaves and every other pair sit at -(1/eps)^x."""
    return _family_instance(spec, "star")


def gen_bistar(spec: StarSpec) -> SymmetricFHG:
    """Bi-star instance: both centers carry their stars and the dominant
    center-center edge (1/eps)^(t_B + 1)."""
    return _family_instance(spec, "bistar")


def star_view(spec: StarSpec, kind: str) -> StarView:
    leaf_index, leaf_center = spec.agent_layout()
    return StarView(
        a=0,
        b=1,
        leaf_index=leaf_index,
        leaf_center=leaf_center,
        bridge_index=spec.t_b + 1 if kind == "bistar" else None,
        x=spec.x,
    )


def _reduced_star(spec: StarSpec) -> tuple[SymmetricFHG, StarView]:
    """The star restricted to the matching-relevant agents {a} u I-leaves.

    Decisions of the canonical policies are independent of b and the J-side,
    so match probabilities agree with the full instance; the reduction keeps
    exact order enumeration cheap.
    """
    leaves = sorted(spec.I)
    n = 1 + len(leaves)
    q = spec.q
    neg = -(q ** spec.x)
    entries = []
    leaf_index = {}
    for k, i in enumerate(leaves, start=1):
        entries.append((0, k, q ** i))
        leaf_index[k] = i
    for u in range(1, n):
        for v in range(u + 1, n):
            entries.append((u, v, neg))
    view = StarView(a=0, b=None, leaf_index=leaf_index,
                    leaf_center={k: 0 for k in leaf_index}, bridge_index=None,
                    x=spec.x)
    return SymmetricFHG(n, entries), view


# -- random tree-domain instances ----------------------------------------------


def gen_random_tree_domain(
    n: int,
    seed: int,
    weight_range: tuple[Fraction, Fraction] = (Fraction(1), Fraction(10)),
    max_denominator: int = 8,
) -> SymmetricFHG:
    """Random tree-domain instance: a seeded random spanning tree (Pruefer
    decode) thinned to a forest, positive rational weights from
    `weight_range` on the kept edges, and -(1 + total positive weight) on
    every other pair."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(derive_seed(seed, "tree-domain", n))
    lo, hi = Fraction(weight_range[0]), Fraction(weight_range[1])
    if not 0 < lo <= hi:
        raise ValueError("weight_range must be positive")

    edges: list[tuple[int, int]] = []
    if n == 2:
        edges = [(0, 1)]
    elif n > 2:
        seq = [_rand_below(rng, n) for _ in range(n - 2)]
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        import heapq

        leaves = [v for v in range(n) if degree[v] == 1]
        heapq.heapify(leaves)
        for v in seq:
            u = heapq.heappop(leaves)
            edges.append((min(u, v), max(u, v)))
            degree[v] -= 1
            if degree[v] == 1:
                heapq.heappush(leaves, v)
        u, v = heapq.heappop(leaves), heapq.heappop(leaves)
        edges.append((min(u, v), max(u, v)))

    kept = [e for e in edges if _rand_below(rng, 4) > 0]  # forest: 3/4 keep rate

    def rand_weight() -> Fraction:
        den = 1 + _rand_below(rng, max_denominator)
        lo_num = scalar_ceil(lo * den)
        hi_num = math.floor(hi * den)
        return Fraction(lo_num + _rand_below(rng, hi_num - lo_num + 1), den)

    weighted = [(i, j, rand_weight()) for i, j in kept]
    pos_sum = sum((w for _, _, w in weighted), Fraction(0))
    fill = -(1 + pos_sum)
    entries = list(weighted)
    kept_pairs = {(i, j) for i, j, _ in weighted}
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in kept_pairs:
                entries.append((i, j, fill))
    return SymmetricFHG(n, entries)


# -- h / r probabilities on stars ------------------------------------------------


def _resolve_f(f) -> tuple[Callable, str]:
    if callable(f):
        return f, getattr(f, "__name__", "f")
    bank = probability_bank()
    if f not in bank:
        raise ValueError(f"unknown probability function {f!r}")
    return bank[f], f


def hr_recursion(f, I: Iterable[int], x: int) -> tuple[Fraction, Fraction]:
    """(h, r) for the canonical policy with probability function f on the
    star with leaf exponents I, by the last-arrival recursion.

    With k = |I| + 1 and t = max I:
      h(I) = [sum_i h(I-i)] / k - f(I,x) h(I-t) / k + 2 f(I,x) / k
      r(I) = [sum_{i != t} r(I-i)] / k - f(I,x) h(I-t) / k + 2 f(I,x) / k
    and h = r = f({i}, x) on single-leaf stars.
    """
    f, _ = _resolve_f(f)
    memo: dict[frozenset[int], tuple[Fraction, Fraction]] = {}

    def hr(S: frozenset[int]) -> tuple[Fraction, Fraction]:
        got = memo.get(S)
        if got is not None:
            return got
        p = Fraction(f(S, x))
        if not 0 <= p <= 1:
            raise ValueError(f"f({sorted(S)}, {x}) = {p} is not a probability")
        if len(S) == 1:
            memo[S] = (p, p)
            return memo[S]
        k = len(S) + 1
        t = max(S)
        h_minus_t = hr(S - {t})[0]
        h_sum = sum((hr(S - {i})[0] for i in S), Fraction(0))
        r_sum = sum((hr(S - {i})[1] for i in S if i != t), Fraction(0))
        h = h_sum / k - p * h_minus_t / k + 2 * p / k
        r = r_sum / k - p * h_minus_t / k + 2 * p / k
        memo[S] = (h, r)
        return memo[S]

    return hr(frozenset(I))


def hr_enumeration(f, spec: StarSpec, cap: int = 9) -> tuple[Fraction, Fraction]:
    """(h, r) by exact expectation over all arrival orders of the reduced
    star, through the online engine."""
    f, name = _resolve_f(f)
    G, view = _reduced_star(spec)
    policy = StarMaxEdgePolicy(f, view, name=name)
    top_agent = max(view.leaf_index, key=lambda d: view.leaf_index[d])

    def stat(run: _Run) -> tuple[bool, bool]:
        members = run.coals[run.of[0]][0]
        return len(members) == 2, members == frozenset((0, top_agent))

    dist = exact_order_statistics(G, policy, "strict", stat, cap=cap)
    h = sum((p for (m, _), p in dist.items() if m), Fraction(0))
    r = sum((p for (_, t), p in dist.items() if t), Fraction(0))
    return h, r


def star_match_probabilities(f, spec: StarSpec, cap: int = 8) -> tuple[Fraction, Fraction]:
    """Exact (h, r) for a star policy, computed two independent ways
    (recursion and engine enumeration) and asserted equal."""
    if len(spec.I) > cap:
        raise InvalidSpec(f"|I| = {len(spec.I)} exceeds cap {cap}")
    rec = hr_recursion(f, spec.I, spec.x)
    enum = hr_enumeration(f, spec)
    if rec != enum:
        raise RecursionEnumerationMismatch(
            f"recursion {tuple(map(str, rec))} != enumeration {tuple(map(str, enum))}"
        )
    return rec


def max_edge_conversion_check(
    policy, spec: StarSpec, kind: str, cap: int = 12
) -> tuple[Fraction, Fraction, Fraction]:
    """(ratio, pMax, slack) for the max-edge conversion inequality.

    ratio is the exact expected matching welfare over the optimal matching
    weight; pMax the exact probability that the maximum weight edge ends up
    matched; slack = pMax + eps - ratio on stars (2 eps on bi-stars) and must
    be nonnegative for every policy.
    """
    if kind not in ("star", "bistar"):
        raise ValueError("kind must be 'star' or 'bistar'")
    G = gen_star(spec) if kind == "star" else gen_bistar(spec)
    view = star_view(spec, kind)
    if isinstance(policy, str):
        policy = make_policy(policy, star_context=view)
    _, opt = max_weight_matching(G)
    if kind == "star":
        top_agent = max(
            (d for d, c in view.leaf_center.items() if c == 0),
            key=lambda d: view.leaf_index[d],
        )
        top_pair = frozenset((0, top_agent))
    else:
        top_pair = frozenset((0, 1))

    def stat(run: _Run):
        return run.welfare, top_pair in {m for m, _ in run.coals.values()}

    dist = exact_pooled_statistics(G, policy, "strict", stat, cap=cap)
    expected = sum((w * p for (w, _), p in dist.items()), Fraction(0))
    pmax = sum((p for (_, hit), p in dist.items() if hit), Fraction(0))
    ratio = expected / opt
    slack = pmax + (spec.eps if kind == "star" else 2 * spec.eps) - ratio
    return ratio, pmax, slack


def bistar_prefix_multisets_match(spec: StarSpec) -> bool:
    """Every arrival prefix of the bi-star lacking one of the two centers has
    the same revealed weight multiset as the matching star instance."""
    from itertools import combinations

    B = gen_bistar(spec)
    S = gen_star(spec)
    n = B.n
    # prefixes lacking b read exactly like the star with the same parameters
    others = [v for v in range(n) if v != 1]
    for size in range(0, n):
        for A in combinations(others, size):
            for u, v in combinations(A, 2):
                if B.w(u, v) != S.w(u, v):
                    return False
    # prefixes lacking a read like the mirrored star (roles of the centers
    # and of I/J swapped); with empty J the original star already matches
    if spec.J:
        mirror = StarSpec.of(spec.J, spec.I, spec.x, spec.eps)
        S2 = gen_star(mirror)
        leaf_index, _ = spec.agent_layout()
        m_index, _ = mirror.agent_layout()
        by_exp = {i: d for d, i in m_index.items()}
        phi = {1: 0}
        phi.update({d: by_exp[i] for d, i in leaf_index.items()})
    else:
        S2 = S
        phi = {v: v for v in range(n) if v != 0}
        phi[1] = 1
    others = [v for v in range(n) if v != 0]
    for size in range(0, n):
        for A in combinations(others, size):
            got = sorted(scalar_to_str(B.w(u, v)) for u, v in combinations(A, 2))
            want = sorted(scalar_to_str(S2.w(phi[u], phi[v])) for u, v in combinations(A, 2))
            if got != want:
                return False
    return True


# -- the phased dissolution adversary ----------------------------------------------


@dataclass(frozen=True)
class AdversaryBudget:
    max_phases: int = 3
    max_agents_per_phase: int = 200_000
    max_waves: int = 1000

    def __post_init__(self):
        if min(self.max_phases, self.max_agents_per_phase, self.max_waves) < 1:
            raise ValueError("budget components must be positive")


@dataclass
class PhaseRecord:
    index: int
    y: Scalar  # pair weight at phase start
    eps: Scalar  # exact escalation step, in Q(sqrt2)
    ell: int  # leaves per star
    jstar: int | None  # wave at which the pair was dissolved
    y_next: Scalar | None  # pair weight after the dissolution
    C: tuple[int, ...] = ()  # retired center's star
    D: tuple[int, ...] = ()  # surviving center's star
    sw_star: Scalar | None = None  # welfare of C and of D (equal by symmetry)
    bound: Scalar | None = None  # y / welfare of the comparison partition

    def to_json(self) -> dict:
        enc = lambda v: None if v is None else scalar_to_str(v)
        return {
            "index": self.index,
            "y": enc(self.y),
            "eps": enc(self.eps),
            "ell": self.ell,
            "jstar": self.jstar,
            "y_next": enc(self.y_next),
            "C": list(self.C),
            "D": list(self.D),
            "sw_star": enc(self.sw_star),
            "bound": enc(self.bound),
        }


class AdversaryInstance:
    """Sparse symmetric instance built agent-by-agent by the adversary.

    Each non-initial agent has at most one positive edge (to its target
    center), weight zero to its wave-mates (same `group`), and a fill of
    -(1 + positive weight revealed so far) to everyone else; the fill for a
    pair is the one fixed at the later agent's arrival.
    """

    def __init__(self):
        self.n = 0
        self.pos: dict[tuple[int, int], Scalar] = {}
        self.adj: list[list[tuple[int, Scalar]]] = []
        self.group: list[int | None] = []
        self.negfill: list[Scalar] = []
        self.pos_sum: Scalar = Fraction(0)

    def add_agent(self, target: int | None = None, weight: Scalar | None = None,
                  group: int | None = None) -> int:
        z = self.n
        self.n += 1
        self.adj.append([])
        self.group.append(group)
        if target is not None:
            if weight is None or weight <= 0:
                raise ValueError("positive edge weight required")
            key = (target, z) if target < z else (z, target)
            self.pos[key] = weight
            self.adj[z].append((target, weight))
            self.adj[target].append((z, weight))
            self.pos_sum = self.pos_sum + weight
        self.negfill.append(-(1 + self.pos_sum))
        return z

    def w(self, i: int, j: int) -> Scalar:
        if i == j or not (0 <= i < self.n and 0 <= j < self.n):
            raise UnknownAgent(f"pair ({i},{j}) invalid for n={self.n}")
        key = (i, j) if i < j else (j, i)
        got = self.pos.get(key)
        if got is not None:
            return got
        gi, gj = self.group[i], self.group[j]
        if gi is not None and gi == gj:
            return Fraction(0)
        return self.negfill[key[1]]

    def positive_neighbors(self, i: int) -> list[tuple[int, Scalar]]:
        return self.adj[i]

    def to_symmetric_fhg(self, cap: int = 512) -> SymmetricFHG:
        if self.n > cap:
            raise InstanceTooLargeForDense(self.n)
        entries = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                entries.append((i, j, self.w(i, j)))
        return SymmetricFHG(self.n, entries)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "positive": [[i, j, scalar_to_str(w)] for (i, j), w in sorted(self.pos.items())],
            "groups": [g if g is not None else -1 for g in self.group],
            "neg_fill": [scalar_to_str(v) for v in self.negfill],
        }


class InstanceTooLargeForDense(FHGError):
    pass


@dataclass
class AdversaryResult:
    instance: AdversaryInstance
    trace: Trace
    phases: list[PhaseRecord]
    bounds: list[Scalar]
    ratio_upper_bound: Scalar
    outcome: str  # completed | policy-never-dissolves | non-matching-positive-structure | degenerate | budget-agents
    gamma: Fraction

    def to_json(self) -> dict:
        return {
            "gamma": scalar_to_str(self.gamma),
            "outcome": self.outcome,
            "ratio_upper_bound": scalar_to_str(self.ratio_upper_bound),
            "bounds": [scalar_to_str(b) for b in self.bounds],
            "phases": [p.to_json() for p in self.phases],
            "instance": self.instance.to_json(),
            "trace": [e.to_json() for e in self.trace.events],
        }


def run_dissolution_adversary(
    policy: OnlinePolicy,
    gamma: Fraction,
    budget: AdversaryBudget,
    seed: int = 0,
) -> AdversaryResult:
    """Play the phased escalation adversary against `policy` in
    free-dissolution mode.

    The driver observes only the policy's legal decisions.  As long as the
    policy maintains exactly one positive coalition, a pair {a', b'} of
    weight y, each phase first grows fresh stars of ell leaves at weight y
    around both endpoints, then escalates new wave stars by eps per wave
    until the policy dissolves the pair for a new partner.  Comparing the
    pair's welfare with the star partition that was already available yields
    a certified upper bound y / (SW(D) + sum SW(C_j)) on the policy's
    competitive ratio; the adversary returns the minimum over phases.

    Escalation parameters, with c = 1/(6+4 sqrt2) exact:
      eps_i = ((gamma - c) / (2 gamma)) * 2^-i,  ell_i = ceil((1-eps_i)/eps_i).
    """
    gamma = Fraction(gamma)
    c = FHG_DISSOLUTION_BOUND
    if not gamma > c:
        raise InvalidSpec("gamma must exceed 1/(6+4*sqrt2)")
    inst = AdversaryInstance()
    run = _Run()
    rng = random.Random(derive_seed(seed, "adversary"))
    trace = Trace(mode="dissolution", order=(), snapshots=None)
    state = policy.fresh_state()
    multi_cids: set[int] = set()
    next_group = 0

    def fresh_group() -> int:
        nonlocal next_group
        next_group += 1
        return next_group

    def arrive(target, weight, group):
        nonlocal state
        z = inst.add_agent(target, weight, group)
        obs = Observation("dissolution", range(inst.n), z, inst, run)
        branches = policy.decide(state, obs)
        _check_branches(branches)
        br = _pick_branch(rng, branches)
        state = br.state
        d = br.decision.dissolve
        if isinstance(d, tuple):
            d = d[0] if d else None
        dissolved_cid = None
        if d:
            dissolved_cid = run.of.get(next(iter(d)))
        _apply_decision(inst, run, z, br.decision, "dissolution")
        if dissolved_cid is not None:
            multi_cids.discard(dissolved_cid)
        zc = run.of[z]
        if len(run.coals[zc][0]) > 1:
            multi_cids.add(zc)
        trace.events.append(TraceEvent(inst.n, z, br.decision, run.welfare))
        return z

    def positive_structure():
        """("pair", members) | ("none", None) | ("big", members) | ("many", None)"""
        pos = []
        for cid in multi_cids:
            members, esum = run.coals[cid]
            if len(members) >= 2 and (2 * esum) / len(members) > 0:
                pos.append(members)
        if not pos:
            return "none", None
        if len(pos) > 1:
            return "many", None
        if len(pos[0]) > 2:
            return "big", pos[0]
        return "pair", pos[0]

    factor = (gamma - c) / (2 * gamma)
    phases: list[PhaseRecord] = []
    bounds: list[Scalar] = []
    c_welfares: list[Scalar] = []  # welfare of retired stars C_1..C_i

    def finish(outcome: str, extra_bound: Scalar | None = None) -> AdversaryResult:
        trace.order = tuple(range(inst.n))
        all_bounds = list(bounds)
        if extra_bound is not None:
            all_bounds.append(extra_bound)
        ratio = min(all_bounds) if all_bounds else Fraction(1)
        return AdversaryResult(inst, trace, phases, all_bounds, ratio, outcome, gamma)

    # opening: the policy must pair the first two agents or forfeit
    a_c = arrive(None, None, None)
    b_c = arrive(a_c, Fraction(1), None)
    kind, members = positive_structure()
    if kind != "pair" or members != frozenset((a_c, b_c)):
        return finish("degenerate", Fraction(0))
    y: Scalar = Fraction(1)

    for i in range(1, budget.max_phases + 1):
        eps = factor * Fraction(1, 2 ** i)
        ell = scalar_ceil((1 - eps) / eps)
        record = PhaseRecord(index=i, y=y, eps=eps, ell=ell, jstar=None, y_next=None)
        agents_this_phase = 0
        star_leaves: dict[int, list[int]] = {a_c: [], b_c: []}
        star_group: dict[int, int] = {a_c: fresh_group(), b_c: fresh_group()}

        def over_agent_budget():
            return agents_this_phase >= budget.max_agents_per_phase

        # part 1: fresh stars of ell leaves at weight y around both endpoints
        degenerate = False
        while len(star_leaves[b_c]) < ell or len(star_leaves[a_c]) < ell:
            if over_agent_budget():
                phases.append(record)
                return finish("budget-agents")
            target = b_c if len(star_leaves[b_c]) < ell else a_c
            z = arrive(target, y, star_group[target])
            agents_this_phase += 1
            kind, members = positive_structure()
            if kind == "big":
                phases.append(record)
                return finish("non-matching-positive-structure")
            if kind in ("none", "many"):
                degenerate = True
                break
            if members == frozenset((a_c, b_c)):
                star_leaves[target].append(z)
            elif members == frozenset((target, z)):
                # chase: the old pair was dissolved for the newcomer
                if target == b_c:
                    a_c, b_c = b_c, z
                else:
                    b_c = z
                star_leaves[z] = []
                star_group[z] = fresh_group()
            else:
                degenerate = True
                break
        if degenerate:
            phases.append(record)
            return finish("degenerate", Fraction(0))

        # part 2: escalate wave stars by eps per wave until the pair dissolves.
        # `prev_leaves` always holds both stars of the last fully completed
        # wave (wave 0 = the part-1 stars), which is what the comparison
        # partition is built from.
        prev_leaves = {a_c: tuple(star_leaves[a_c]), b_c: tuple(star_leaves[b_c])}
        prev_weight: Scalar = y
        dissolved_at = None  # (winner, newcomer, wave weight, wave index)
        wave = 0
        while dissolved_at is None and wave < budget.max_waves:
            wave += 1
            wave_weight = y + wave * eps
            pending: dict[int, tuple[int, ...]] = {}
            for side in (a_c, b_c):
                group = fresh_group()
                current: list[int] = []
                for _ in range(ell):
                    if over_agent_budget():
                        phases.append(record)
                        stall = _stall_bound(y, ell, prev_weight, c_welfares)
                        return finish("budget-agents", stall)
                    z = arrive(side, wave_weight, group)
                    agents_this_phase += 1
                    kind, members = positive_structure()
                    if kind == "big":
                        phases.append(record)
                        return finish("non-matching-positive-structure")
                    if kind in ("none", "many"):
                        phases.append(record)
                        return finish("degenerate", Fraction(0))
                    if members == frozenset((a_c, b_c)):
                        current.append(z)
                        continue
                    if members == frozenset((side, z)):
                        dissolved_at = (side, z, wave_weight, wave)
                        break
                    phases.append(record)
                    return finish("degenerate", Fraction(0))
                if dissolved_at is not None:
                    break
                pending[side] = tuple(current)
            if dissolved_at is None:
                prev_leaves = pending
                prev_weight = wave_weight

        if dissolved_at is None:
            # the policy sat through every wave: its pair is still worth y
            # while both escalated stars are in plain sight
            stall = _stall_bound(y, ell, prev_weight, c_welfares)
            phases.append(record)
            return finish("policy-never-dissolves", stall)

        winner, newcomer, y_next, jstar = dissolved_at
        loser = b_c if winner == a_c else a_c
        D = (winner,) + prev_leaves[winner]
        C = (loser,) + prev_leaves[loser]
        sw_star = Fraction(2 * ell, ell + 1) * (y_next - eps)
        c_welfares.append(sw_star)
        denom = sw_star + sum(c_welfares, Fraction(0))  # SW(D_i) + sum_j SW(C_j)
        bound = y / denom
        bounds.append(bound)
        record.jstar = jstar
        record.y_next = y_next
        record.C, record.D = tuple(sorted(C)), tuple(sorted(D))
        record.sw_star = sw_star
        record.bound = bound
        phases.append(record)
        a_c, b_c = winner, newcomer
        y = y_next

    return finish("completed")


def replay_on_instance(inst, policy: OnlinePolicy, mode: str = "dissolution",
                       seed: int = 0) -> Scalar:
    """Run a policy over an adversary-built instance in its construction
    order (agents are numbered by arrival) and return the final welfare.

    Equivalent to run_online but with O(1) per-arrival bookkeeping, which the
    six-figure agent counts of deep adversary runs require.
    """
    run = _Run()
    state = policy.fresh_state()
    rng = random.Random(derive_seed(seed, "replay"))
    for z in range(inst.n):
        obs = Observation(mode, range(z + 1), z, inst, run)
        branches = policy.decide(state, obs)
        _check_branches(branches)
        br = _pick_branch(rng, branches)
        state = br.state
        _apply_decision(inst, run, z, br.decision, mode)
    return run.welfare


def forest_mwm_weight(inst) -> Scalar:
    """Exact maximum weight matching over the positive edges of an adversary
    instance.  Tree DP per component; valid because every agent there has at
    most one positive edge to an earlier agent, so positive edges form a
    forest (checked)."""
    n = inst.n
    adj: list[list[tuple[int, Scalar]]] = [list(inst.positive_neighbors(v)) for v in range(n)]
    for v in range(n):
        earlier = [u for u, _ in adj[v] if u < v]
        if len(earlier) > 1:
            raise ValueError("positive edges do not form a forest")
    seen = [False] * n
    total: Scalar = Fraction(0)
    for root in range(n):
        if seen[root] or not adj[root]:
            seen[root] = True
            continue
        # iterative post-order over the component
        order = []
        parent = {root: None}
        stack = [root]
        seen[root] = True
        while stack:
            v = stack.pop()
            order.append(v)
            for u, _ in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    parent[u] = v
                    stack.append(u)
        unmatched: dict[int, Scalar] = {}
        matched: dict[int, Scalar] = {}
        for v in reversed(order):
            children = [(u, w) for u, w in adj[v] if parent.get(u) == v]
            base: Scalar = Fraction(0)
            for u, _ in children:
                base = base + max(unmatched[u], matched[u])
            unmatched[v] = base
            best = base
            for u, w in children:
                cand = base - max(unmatched[u], matched[u]) + unmatched[u] + w
                if cand > best:
                    best = cand
            matched[v] = best
        total = total + max(unmatched[root], matched[root])
    return total


def _stall_bound(y, ell, last_weight, c_welfares) -> Scalar:
    """Ratio bound when a phase stalls: the policy still holds y while both
    current stars (at the last completed wave weight) and all retired stars
    are available to the comparison partition."""
    star = Fraction(2 * ell, ell + 1) * last_weight
    denom = 2 * star + sum(c_welfares, Fraction(0))
    return y / denom
