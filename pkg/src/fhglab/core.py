"""Exact data model for symmetric fractional hedonic games.

An instance is a weighted graph on agents 0..n-1.  An agent's utility in a
coalition is the sum of her valuations of the other members divided by the
coalition size; social welfare is the sum of utilities.  Everything here is
exact rational arithmetic (Fractions, or Q(sqrt2) scalars for the adversarial
constructions); floats never enter welfare computations.

Weights may be stored densely (:class:`SymmetricFHG`, fine up to n ~ 512) or
behind any object matching :class:`WeightOracle`; the welfare operations only
need ``n`` and ``w(i, j)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Protocol, Sequence

from .rationals import Quad, Scalar, parse_scalar, scalar_to_str


class FHGError(Exception):
    """Base class for domain errors raised by this package."""


class UnknownAgent(FHGError):
    pass


class AgentNotInCoalition(FHGError):
    pass


class InvalidPartition(FHGError):
    pass


class NotAMatching(FHGError):
    pass


class InstanceTooLarge(FHGError):
    pass


def _as_weight(w) -> Scalar:
    if isinstance(w, Quad):
        return w
    return Fraction(w)


class WeightOracle(Protocol):
    n: int

    def w(self, i: int, j: int) -> Scalar: ...


class SymmetricFHG:
    """A symmetric FHG on agents 0..n-1 with exact weights, absent pairs = 0."""

    __slots__ = ("n", "entries", "_rows", "_hash", "_cache")

    def __init__(self, n: int, entries: Iterable[tuple[int, int, Scalar]] = ()):
        if n < 0:
            raise ValueError("agent count must be nonnegative")
        self.n = n
        canon: dict[tuple[int, int], Scalar] = {}
        for i, j, w in entries:
            if i == j:
                raise ValueError(f"self-valuation on agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise UnknownAgent(f"edge ({i},{j}) outside [0,{n})")
            key = (i, j) if i < j else (j, i)
            w = _as_weight(w)
            if key in canon and canon[key] != w:
                raise ValueError(f"conflicting weights for pair {key}")
            if w != 0:
                canon[key] = w
        self.entries = tuple(sorted(canon.items()))
        rows: list[dict[int, Scalar]] = [dict() for _ in range(n)]
        for (i, j), w in self.entries:
            rows[i][j] = w
            rows[j][i] = w
        self._rows = rows
        self._hash = None
        self._cache = {}

    def w(self, i: int, j: int) -> Scalar:
        if i == j or not (0 <= i < self.n and 0 <= j < self.n):
            raise UnknownAgent(f"pair ({i},{j}) invalid for n={self.n}")
        return self._rows[i].get(j, Fraction(0))

    def neighbors(self, i: int) -> dict[int, Scalar]:
        return self._rows[i]

    def positive_neighbors(self, i: int) -> list[tuple[int, Scalar]]:
        return [(j, w) for j, w in self._rows[i].items() if w > 0]

    def agents(self) -> range:
        return range(self.n)

    def __eq__(self, other):
        return (
            isinstance(other, SymmetricFHG)
            and self.n == other.n
            and self.entries == other.entries
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.n, self.entries))
        return self._hash

    def __repr__(self):
        return f"SymmetricFHG(n={self.n}, edges={len(self.entries)})"


class DirectedFHG:
    """A (possibly asymmetric) FHG given by per-agent valuations v_i(j)."""

    __slots__ = ("n", "entries", "_rows")

    def __init__(self, n: int, entries: Iterable[tuple[int, int, Scalar]] = ()):
        if n < 0:
            raise ValueError("agent count must be nonnegative")
        self.n = n
        canon: dict[tuple[int, int], Scalar] = {}
        for i, j, w in entries:
            if i == j:
                raise ValueError(f"self-valuation on agent {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise UnknownAgent(f"valuation ({i},{j}) outside [0,{n})")
            w = _as_weight(w)
            if w != 0:
                canon[(i, j)] = w
        self.entries = tuple(sorted(canon.items()))
        rows: list[dict[int, Scalar]] = [dict() for _ in range(n)]
        for (i, j), w in self.entries:
            rows[i][j] = w
        self._rows = rows

    def v(self, i: int, j: int) -> Scalar:
        if i == j or not (0 <= i < self.n and 0 <= j < self.n):
            raise UnknownAgent(f"pair ({i},{j}) invalid for n={self.n}")
        return self._rows[i].get(j, Fraction(0))

    # uniform access for the welfare helpers: w(i,j) is i's valuation of j
    def w(self, i: int, j: int) -> Scalar:
        return self.v(i, j)

    def agents(self) -> range:
        return range(self.n)

    def __repr__(self):
        return f"DirectedFHG(n={self.n}, arcs={len(self.entries)})"


def _is_symmetric(G) -> bool:
    return isinstance(G, SymmetricFHG) or not isinstance(G, DirectedFHG)


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty coalitions covering a ground set of agents."""

    coalitions: tuple[frozenset[int], ...]
    ground: frozenset[int]

    @staticmethod
    def of(coalitions: Iterable[Iterable[int]], ground: Iterable[int] | None = None) -> "Partition":
        coals = tuple(sorted((frozenset(c) for c in coalitions), key=lambda c: sorted(c)))
        seen: set[int] = set()
        for c in coals:
            if not c:
                raise InvalidPartition("empty coalition")
            if seen & c:
                raise InvalidPartition(f"overlapping coalition {sorted(c)}")
            seen |= c
        g = frozenset(seen if ground is None else ground)
        if seen != g:
            raise InvalidPartition("coalitions do not cover the ground set")
        return Partition(coals, g)

    @staticmethod
    def singletons(agents: Iterable[int]) -> "Partition":
        return Partition.of([{a} for a in agents])

    def canonical(self) -> tuple[tuple[int, ...], ...]:
        return tuple(sorted(tuple(sorted(c)) for c in self.coalitions))

    def is_matching(self) -> bool:
        return all(len(c) <= 2 for c in self.coalitions)

    def __iter__(self):
        return iter(self.coalitions)


def _check_coalition(G, C: frozenset[int]) -> None:
    if not C:
        raise InvalidPartition("empty coalition")
    for a in C:
        if not (0 <= a < G.n):
            raise UnknownAgent(f"agent {a} not in instance of size {G.n}")


def utility(G, i: int, C: Iterable[int]) -> Scalar:
    """Exact utility of agent i in coalition C: sum of i's valuations of the
    other members divided by |C|.  Zero for singletons."""
    C = frozenset(C)
    _check_coalition(G, C)
    if i not in C:
        raise AgentNotInCoalition(f"agent {i} not in coalition {sorted(C)}")
    if len(C) == 1:
        return Fraction(0)
    total: Scalar = Fraction(0)
    for j in C:
        if j != i:
            total = total + G.w(i, j)
    return total / len(C)


def coalition_welfare(G, C: Iterable[int]) -> Scalar:
    """Sum of member utilities.  For a symmetric pair {i,j} this equals w(i,j)."""
    C = frozenset(C)
    _check_coalition(G, C)
    k = len(C)
    if k == 1:
        return Fraction(0)
    members = sorted(C)
    total: Scalar = Fraction(0)
    if _is_symmetric(G):
        for ai in range(k):
            for aj in range(ai + 1, k):
                total = total + G.w(members[ai], members[aj])
        return (2 * total) / k
    for i in members:
        for j in members:
            if i != j:
                total = total + G.w(i, j)
    return total / k


def partition_welfare(G, pi: Partition) -> Scalar:
    """Social welfare of a partition: additive over its coalitions."""
    for C in pi.coalitions:
        _check_coalition(G, C)
    total: Scalar = Fraction(0)
    for C in pi.coalitions:
        total = total + coalition_welfare(G, C)
    return total


def matching_weight(G, M: Partition) -> Scalar:
    """Weight of a matching: the sum of its pair weights.

    Equals partition_welfare for matchings; raises NotAMatching otherwise.
    """
    if not M.is_matching():
        raise NotAMatching("partition has a coalition of size > 2")
    total: Scalar = Fraction(0)
    for C in M.coalitions:
        if len(C) == 2:
            i, j = sorted(C)
            total = total + G.w(i, j)
    return total


def symmetrize(G: DirectedFHG) -> SymmetricFHG:
    """Average reciprocal valuations.  Preserves the welfare of every partition."""
    pairs: dict[tuple[int, int], Scalar] = {}
    for (i, j), w in G.entries:
        key = (i, j) if i < j else (j, i)
        pairs[key] = pairs.get(key, Fraction(0)) + w
    return SymmetricFHG(G.n, [(i, j, s / 2) for (i, j), s in pairs.items()])


def is_tree_domain(G: SymmetricFHG) -> bool:
    """Positive edges form a forest and all other pairs are more negative than
    the total positive weight (zero pairs outside the forest fail this)."""
    parent = list(range(G.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    pos_sum: Scalar = Fraction(0)
    positive: set[tuple[int, int]] = set()
    for (i, j), w in G.entries:
        if w > 0:
            ri, rj = find(i), find(j)
            if ri == rj:
                return False  # cycle among positive edges
            parent[ri] = rj
            pos_sum = pos_sum + w
            positive.add((i, j))
    for i in range(G.n):
        for j in range(i + 1, G.n):
            if (i, j) not in positive and not (G.w(i, j) < -pos_sum):
                return False
    return True


# -- instance files ---------------------------------------------------------
#
# {"n": <int>, "weights": [{"i": .., "j": .., "w": "p/q"}, ...]}   symmetric
# {"n": <int>, "v":       [{"i": .., "j": .., "w": "p/q"}, ...]}   directed
# pairs omitted from the list have weight 0; symmetric entries use i < j.


def instance_to_json(G) -> dict:
    if isinstance(G, DirectedFHG):
        return {
            "n": G.n,
            "v": [
                {"i": i, "j": j, "w": scalar_to_str(w)} for (i, j), w in G.entries
            ],
        }
    return {
        "n": G.n,
        "weights": [
            {"i": i, "j": j, "w": scalar_to_str(w)} for (i, j), w in G.entries
        ],
    }


def instance_from_json(doc: dict):
    n = int(doc["n"])
    if "v" in doc:
        return DirectedFHG(
            n, [(int(e["i"]), int(e["j"]), parse_scalar(str(e["w"]))) for e in doc["v"]]
        )
    entries = []
    for e in doc.get("weights", []):
        i, j = int(e["i"]), int(e["j"])
        if not i < j:
            raise ValueError("symmetric instance files must use i < j")
        entries.append((i, j, parse_scalar(str(e["w"]))))
    return SymmetricFHG(n, entries)


def save_instance(G, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_json(G), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_instance(path):
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def instance_id(G) -> str:
    """Short stable identifier derived from the canonical instance encoding."""
    import hashlib

    blob = json.dumps(instance_to_json(G), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
