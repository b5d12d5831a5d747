"""Online policies: greedy maximal matching, threshold dissolution matching,
sample-then-match under random arrival, the two matching/coalition adapters,
and the canonical probability-function policies for star instances.

Tie-breaking is always by earliest arrival position (never by raw agent id),
so relabeling agents while preserving revealed weights cannot change a
policy's decisions — the prefix-consistency contract of the online model.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .core import FHGError
from .engine import (
    SINGLETON,
    Branch,
    Observation,
    OnlineDecision,
    OnlinePolicy,
    _Run,
)
from .rationals import OPT_THRESHOLD_BETA, THRESHOLD_BETA, Scalar


class NotMatchingValued(FHGError):
    pass


class NotAStarShapedInstance(FHGError):
    pass


class KTooLargeForInstance(UserWarning):
    """Sampling phase covers the whole instance; the run degrades to the
    empty matching.  A warning, not a failure."""


def _best_positive_edge(obs: Observation, agent: int, *, require_single: bool):
    """(partner, weight) of the best positive revealed edge at `agent`;
    ties go to the earliest-arrived partner."""
    best = None
    for j, w in sorted(obs.positive_neighbors(agent), key=lambda t: obs.position(t[0])):
        if require_single and len(obs.coalition_of(j)) != 1:
            continue
        if best is None or w > best[1]:
            best = (j, w)
    return best


class GreedyMaximalMatching(OnlinePolicy):
    """Match the newcomer to the unmatched agent with the largest strictly
    positive revealed weight; otherwise start a singleton.  Never dissolves."""

    policy_id = "greedy"

    def decide(self, state, obs):
        best = _best_positive_edge(obs, obs.newcomer, require_single=True)
        if best is None:
            return [Branch(SINGLETON, Fraction(1))]
        return [Branch(OnlineDecision(join=obs.coalition_of(best[0])), Fraction(1))]


class ThresholdDissolutionMatching(OnlinePolicy):
    """Dissolution-mode matching with an exact improvement threshold.

    The newcomer z looks at its best positive edge {z, y}.  If y is single,
    match.  If y sits in a pair e, dissolve e and match {z, y} iff
    w(z, y) > beta * w(e) — an exact comparison in Q(sqrt2).  Otherwise z
    stays single.  At most one dissolution per arrival, and the held matching
    weight never decreases.

    beta defaults to 1 + sqrt(2).  ``OPT_THRESHOLD_BETA`` (1 + sqrt(2)/2) is
    the factor whose geometric-escalation worst case meets the
    1/(3+2 sqrt2) matching target exactly; see the acceptance suite.
    """

    def __init__(self, beta: Scalar = THRESHOLD_BETA, *, variant: str = ""):
        self.beta = beta
        self.policy_id = "dissolve-threshold" + variant

    def decide(self, state, obs):
        best = _best_positive_edge(obs, obs.newcomer, require_single=False)
        if best is None:
            return [Branch(SINGLETON, Fraction(1))]
        y, w = best
        C = obs.coalition_of(y)
        if len(C) == 1:
            return [Branch(OnlineDecision(join=C), Fraction(1))]
        if obs.mode == "dissolution" and len(C) == 2:
            held = obs.coalition_welfare(C)
            if w > self.beta * held:
                return [
                    Branch(
                        OnlineDecision(join=frozenset((y,)), dissolve=C),
                        Fraction(1),
                    )
                ]
        return [Branch(SINGLETON, Fraction(1))]


class SampledMwmEdge(OnlinePolicy):
    """Random-arrival matching with a fixed-size sampling phase.

    The first k arrivals are never matched at their own arrival.  Afterwards
    the policy computes an exact maximum weight matching of the revealed
    graph; if that matching pairs the newcomer with a currently single agent,
    the pair is formed, otherwise the newcomer stays single.  Agents from the
    sampling phase may be picked as partners later.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("sampling phase must have k >= 1")
        self.k = k
        self.policy_id = f"sample-mwm:k={k}"

    def decide(self, state, obs):
        if obs.k <= self.k:
            return [Branch(SINGLETON, Fraction(1))]
        for i, j in obs.mwm_pairs():
            u = None
            if i == obs.newcomer:
                u = j
            elif j == obs.newcomer:
                u = i
            if u is not None:
                if len(obs.coalition_of(u)) == 1:
                    return [Branch(OnlineDecision(join=obs.coalition_of(u)), Fraction(1))]
                break
        return [Branch(SINGLETON, Fraction(1))]


def _single_dissolve(decision: OnlineDecision) -> frozenset[int] | None:
    d = decision.dissolve
    if isinstance(d, tuple):
        return d[0] if d else None
    return d


class LiftedPolicy(OnlinePolicy):
    """A matching policy read as a coalition-formation policy.

    Matchings are partitions, so this is the identity embedding; it only adds
    a registry name and a guard that the wrapped policy really is
    matching-valued.
    """

    def __init__(self, inner: OnlinePolicy):
        self.inner = inner
        self.policy_id = f"lift:{inner.policy_id}"

    def fresh_state(self):
        return self.inner.fresh_state()

    def decide(self, state, obs):
        branches = self.inner.decide(state, obs)
        for br in branches:
            tgt = br.decision.join
            if tgt is not None and len(tgt) >= 2:
                raise NotMatchingValued(
                    f"{self.inner.policy_id} joined a coalition of size {len(tgt)}"
                )
        return branches


@dataclass
class _RestrictState:
    inner_state: object
    inner_run: _Run
    pair_of: dict[int, frozenset[int]]  # inner coalition id -> live wrapper pair


class RestrictToMatching(OnlinePolicy):
    """Run a coalition-formation policy, but emit only matchings.

    The wrapped policy is simulated on the side.  Whenever it puts the
    newcomer into a coalition of size two with positive welfare, the wrapper
    forms the same pair; in every other case the newcomer stays single.  A
    wrapper pair lives exactly as long as the simulated coalition it was
    copied from: when the wrapped policy dissolves that coalition, the
    wrapper dissolves the pair.  On tree-domain instances the wrapper's final
    welfare is at least the wrapped policy's (size >= 3 coalitions there have
    negative welfare), which the test suite checks exhaustively.
    """

    def __init__(self, inner: OnlinePolicy):
        self.inner = inner
        self.policy_id = f"restrict:{inner.policy_id}"

    def fresh_state(self):
        return _RestrictState(self.inner.fresh_state(), _Run(), {})

    def decide(self, state, obs):
        from .engine import _apply_decision

        z = obs.newcomer
        inner_obs = Observation(obs.mode, obs.arrived, z, obs._G, state.inner_run)
        out = []
        for br in self.inner.decide(state.inner_state, inner_obs):
            inner_run = state.inner_run.copy()
            pair_of = dict(state.pair_of)
            my_dissolve = None
            dissolved = _single_dissolve(br.decision)
            if dissolved is not None:
                cid = inner_run.of.get(next(iter(dissolved)))
                if cid is not None and inner_run.coals.get(cid, (None,))[0] == dissolved:
                    my_dissolve = pair_of.pop(cid, None)
            _apply_decision(obs._G, inner_run, z, br.decision, obs.mode)
            my_join = None
            new_cid = inner_run.of[z]
            members = inner_run.coals[new_cid][0]
            if len(members) == 2:
                (y,) = members - {z}
                if obs.w(z, y) > 0:
                    my_join = frozenset((y,))
                    pair_of[new_cid] = members
            decision = OnlineDecision(join=my_join, dissolve=my_dissolve)
            out.append(
                Branch(decision, br.prob, _RestrictState(br.state, inner_run, pair_of))
            )
        return out

    @staticmethod
    def inner_final_welfare(state: _RestrictState) -> Scalar:
        """Welfare the wrapped policy's simulated partition ended with."""
        return state.inner_run.welfare


class NaiveJoinBestNeighbor(OnlinePolicy):
    """Deliberately coalition-forming baseline: the newcomer joins whatever
    coalition contains its most-valued positive neighbor, regardless of the
    coalition's other members.  Grows large coalitions; never dissolves."""

    policy_id = "naive-join"

    def decide(self, state, obs):
        best = _best_positive_edge(obs, obs.newcomer, require_single=False)
        if best is None:
            return [Branch(SINGLETON, Fraction(1))]
        return [Branch(OnlineDecision(join=obs.coalition_of(best[0])), Fraction(1))]


# -- canonical star policies ---------------------------------------------------


@dataclass(frozen=True)
class StarView:
    """Role labels for a star / bi-star instance: centers, leaf weight
    exponents, and the negative-weight exponent x."""

    a: int
    b: int | None
    leaf_index: dict[int, int]  # agent -> exponent i (weight (1/eps)^i)
    leaf_center: dict[int, int]  # agent -> its center
    bridge_index: int | None  # exponent of the a-b edge, if present
    x: int


ProbabilityFunction = Callable[[frozenset[int], int], Fraction]


class StarMaxEdgePolicy(OnlinePolicy):
    """The canonical restricted policy on star-shaped instances.

    Fully specified by a probability function f(I, x): whenever the adopted
    center has arrived and is unmatched and the newcomer completes the
    current maximum weight positive edge at that center, the edge is matched
    with probability f(revealed exponent set, x).  Only the current maximum
    weight edge is ever matched, never a negative edge, and the second
    center's star is ignored (decisions are independent of it).

    The adopted center is the first of the two center agents to arrive, which
    on any prefix where only one center is present coincides with the star
    reading of the revealed weights.
    """

    def __init__(self, f: ProbabilityFunction, view: StarView, name: str = "f"):
        self.f = f
        self.view = view
        self.policy_id = f"star:f={name}"

    def fresh_state(self):
        return None  # adopted center id, None until one arrives

    def decide(self, state, obs):
        view = self.view
        z = obs.newcomer
        center = state
        if center is None:
            if z == view.a:
                center = z
            elif view.b is not None and z == view.b and view.bridge_index is not None:
                # in a bi-star either center can be adopted; in a plain star
                # the second center carries only negative edges and never is
                center = z
        stay = [Branch(SINGLETON, Fraction(1), center)]
        if center is None or not obs.is_revealed(center):
            return stay
        if center != z and len(obs.coalition_of(center)) != 1:
            return stay
        other = view.b if center == view.a else view.a
        revealed: dict[int, int] = {}
        for d in obs.arrived:
            if d in view.leaf_index and view.leaf_center[d] == center:
                revealed[view.leaf_index[d]] = d
        if other is not None and obs.is_revealed(other) and view.bridge_index is not None:
            revealed[view.bridge_index] = other
        if not revealed:
            return stay
        top = max(revealed)
        partner = revealed[top]
        if z != partner and z != center:
            return stay
        p = Fraction(self.f(frozenset(revealed), view.x))
        if not 0 <= p <= 1:
            raise ValueError(f"probability function returned {p}")
        mate = partner if z == center else center
        match = Branch(OnlineDecision(join=obs.coalition_of(mate)), p, center)
        if p == 1:
            return [match]
        if p == 0:
            return stay
        return [match, Branch(SINGLETON, 1 - p, center)]


def probability_bank() -> dict[str, ProbabilityFunction]:
    """Named probability functions used across the verification suites."""
    return {
        "zero": lambda I, x: Fraction(0),
        "one": lambda I, x: Fraction(1),
        "half": lambda I, x: Fraction(1, 2),
        "twothirds": lambda I, x: Fraction(2, 3),
        "adaptive": lambda I, x: Fraction(len(I), len(I) + 1),
    }


# -- registry --------------------------------------------------------------------


def make_policy(alg_id: str, *, star_context=None) -> OnlinePolicy:
    """Build a policy from its registry id.

    Ids: "greedy", "dissolve-threshold", "dissolve-threshold:opt",
    "sample-mwm:k=<int>", "naive-join", "lift:<id>", "restrict:<id>",
    "star:f=<name>" (requires `star_context`, a StarView).
    """
    if alg_id == "greedy":
        return GreedyMaximalMatching()
    if alg_id == "dissolve-threshold":
        return ThresholdDissolutionMatching()
    if alg_id == "dissolve-threshold:opt":
        return ThresholdDissolutionMatching(OPT_THRESHOLD_BETA, variant=":opt")
    if alg_id == "naive-join":
        return NaiveJoinBestNeighbor()
    if alg_id.startswith("sample-mwm:k="):
        return SampledMwmEdge(int(alg_id.split("=", 1)[1]))
    if alg_id.startswith("lift:"):
        return LiftedPolicy(make_policy(alg_id[5:], star_context=star_context))
    if alg_id.startswith("restrict:"):
        return RestrictToMatching(make_policy(alg_id[9:], star_context=star_context))
    if alg_id.startswith("star:f="):
        name = alg_id.split("=", 1)[1]
        bank = probability_bank()
        if name not in bank:
            raise ValueError(f"unknown probability function {name!r}")
        if star_context is None:
            raise ValueError("star policies need a star/bi-star instance context")
        return StarMaxEdgePolicy(bank[name], star_context, name=name)
    raise ValueError(f"unknown algorithm id {alg_id!r}")
