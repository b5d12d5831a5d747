"""Exact offline baselines: optimal partitions, maximum weight matchings,
the average-edge bound, the star-welfare closed form, and the feasibility
horizon of the dissolution lower-bound sequence.

These are the trusted references everything online is measured against, so
they favour transparent brute force over cleverness.  Set partitions are
enumerated via restricted-growth strings; matchings via subset DP.  When all
weights are plain rationals the search runs on a common-denominator integer
grid, which keeps comparisons exact and fast; instances carrying Q(sqrt2)
weights fall back to generic exact scalar arithmetic.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .core import FHGError, InstanceTooLarge, Partition, SymmetricFHG, UnknownAgent
from .rationals import MATCHING_DISSOLUTION_BOUND, Quad, Scalar

PARTITION_CAP = 12
MWM_CAP = 20


class InvalidBeta(FHGError):
    pass


# -- set partition enumeration (restricted growth strings) ------------------


def restricted_growth_strings(n: int) -> Iterator[tuple[int, ...]]:
    """All RGS of length n in lexicographic order (Knuth 7.2.1.5, Algorithm H)."""
    if n == 0:
        yield ()
        return
    if n == 1:
        yield (0,)
        return
    a = [0] * n
    b = [1] * n
    while True:
        yield tuple(a)
        if a[n - 1] < b[n - 1]:
            a[n - 1] += 1
            continue
        j = n - 2
        while j > 0 and a[j] == b[j]:
            j -= 1
        if j == 0:
            return
        a[j] += 1
        m = b[j] + (1 if a[j] == b[j] else 0)
        for k in range(j + 1, n):
            a[k] = 0
            b[k] = m


def _blocks_from_rgs(rgs: Sequence[int], agents: Sequence[int]) -> list[list[int]]:
    blocks: list[list[int]] = []
    for pos, label in enumerate(rgs):
        if label == len(blocks):
            blocks.append([agents[pos]])
        else:
            blocks[label].append(agents[pos])
    return blocks


def all_partitions(n: int) -> Iterator[Partition]:
    agents = range(n)
    for rgs in restricted_growth_strings(n):
        yield Partition.of(_blocks_from_rgs(rgs, agents))


def all_matchings(n: int) -> Iterator[Partition]:
    """Every partition with coalitions of size <= 2 (singletons included)."""

    def rec(remaining: tuple[int, ...]):
        if not remaining:
            yield []
            return
        i, rest = remaining[0], remaining[1:]
        for tail in rec(rest):
            yield [[i]] + tail
        for k, j in enumerate(rest):
            pair_rest = rest[:k] + rest[k + 1 :]
            for tail in rec(pair_rest):
                yield [[i, j]] + tail

    for blocks in rec(tuple(range(n))):
        yield Partition.of(blocks)


# -- integer fast path -------------------------------------------------------


def _int_grid(G: SymmetricFHG):
    """(dense int matrix, denominator) when all weights are rational, else None."""
    den = 1
    for (_, _), w in G.entries:
        if isinstance(w, Quad):
            return None
        den = den * w.denominator // math.gcd(den, w.denominator)
    W = [[0] * G.n for _ in range(G.n)]
    for (i, j), w in G.entries:
        v = int(w * den)
        W[i][j] = v
        W[j][i] = v
    return W, den


# -- optimal partition --------------------------------------------------------


def optimal_partition(G: SymmetricFHG, cap: int = PARTITION_CAP) -> tuple[Partition, Scalar]:
    """Welfare-maximizing partition by exhaustive search.

    Ties go to the lexicographically smallest canonical encoding.  Complexity
    is the Bell number of n, hence the hard cap.
    """
    n = G.n
    if n > cap:
        raise InstanceTooLarge(f"optimal_partition: n={n} exceeds cap {cap}")
    if n == 0:
        return Partition.of([]), Fraction(0)

    grid = _int_grid(G)
    agents = list(range(n))
    best_key = None
    best_val = None
    if grid is not None:
        W, den = grid
        L = math.lcm(*range(1, n + 1))
        for rgs in restricted_growth_strings(n):
            blocks = _blocks_from_rgs(rgs, agents)
            val = 0
            for blk in blocks:
                size = len(blk)
                if size == 1:
                    continue
                e = 0
                for ai in range(size):
                    wi = W[blk[ai]]
                    for aj in range(ai + 1, size):
                        e += wi[blk[aj]]
                val += 2 * e * (L // size)
            key = tuple(sorted(tuple(sorted(b)) for b in blocks))
            if best_val is None or val > best_val or (val == best_val and key < best_key):
                best_val, best_key = val, key
        return Partition.of(best_key), Fraction(best_val, L * den)

    # generic exact-scalar path (instances with Q(sqrt2) weights)
    for rgs in restricted_growth_strings(n):
        blocks = _blocks_from_rgs(rgs, agents)
        val: Scalar = Fraction(0)
        for blk in blocks:
            size = len(blk)
            if size == 1:
                continue
            e: Scalar = Fraction(0)
            for ai in range(size):
                for aj in range(ai + 1, size):
                    e = e + G.w(blk[ai], blk[aj])
            val = val + (2 * e) / size
        key = tuple(sorted(tuple(sorted(b)) for b in blocks))
        if best_val is None or val > best_val or (val == best_val and key < best_key):
            best_val, best_key = val, key
    return Partition.of(best_key), best_val


# -- maximum weight matching --------------------------------------------------


def _mwm_value_table(G: SymmetricFHG) -> list:
    """f[mask] = exact MWM weight of the sub-instance on `mask` (cached).

    Only strictly positive pairs are ever matched: leaving both endpoints
    single weakly dominates any pair of weight <= 0.
    """
    cached = G._cache.get("mwm_table")
    if cached is not None:
        return cached
    n = G.n
    grid = _int_grid(G)
    if grid is not None:
        W, den = grid
        f: list = [0] * (1 << n)
        for mask in range(1, 1 << n):
            i = (mask & -mask).bit_length() - 1
            rest = mask ^ (1 << i)
            best = f[rest]
            Wi = W[i]
            sub = rest
            while sub:
                jbit = sub & -sub
                j = jbit.bit_length() - 1
                sub ^= jbit
                if Wi[j] > 0:
                    cand = f[rest ^ jbit] + Wi[j]
                    if cand > best:
                        best = cand
            f[mask] = best
        table = (f, den)
    else:
        f = [Fraction(0)] * (1 << n)
        for mask in range(1, 1 << n):
            i = (mask & -mask).bit_length() - 1
            rest = mask ^ (1 << i)
            best = f[rest]
            sub = rest
            while sub:
                jbit = sub & -sub
                j = jbit.bit_length() - 1
                sub ^= jbit
                w = G.w(i, j)
                if w > 0:
                    cand = f[rest ^ jbit] + w
                    if cand > best:
                        best = cand
            f[mask] = best
        table = (f, None)
    G._cache["mwm_table"] = table
    return table


def mwm_weight_on(G: SymmetricFHG, members: Iterable[int], cap: int = MWM_CAP) -> Scalar:
    """Exact MWM weight of the induced sub-instance on `members`."""
    if G.n > cap:
        raise InstanceTooLarge(f"max_weight_matching: n={G.n} exceeds cap {cap}")
    mask = 0
    for a in members:
        if not (0 <= a < G.n):
            raise UnknownAgent(f"agent {a} not in instance of size {G.n}")
        mask |= 1 << a
    f, den = _mwm_value_table(G)
    return Fraction(f[mask], den) if den is not None else f[mask]


def mwm_pairs_on(
    G: SymmetricFHG,
    members: Iterable[int],
    priority: Sequence[int] | None = None,
    cap: int = MWM_CAP,
) -> list[tuple[int, int]]:
    """Deterministic optimal pair set on `members`.

    Ties prefer leaving the earliest-priority agent single, then the
    earliest-priority partner; `priority` defaults to ascending agent index.
    """
    if G.n > cap:
        raise InstanceTooLarge(f"max_weight_matching: n={G.n} exceeds cap {cap}")
    f, den = _mwm_value_table(G)
    member_set = set(members)
    prio = [a for a in (priority if priority is not None else range(G.n)) if a in member_set]
    if set(prio) != member_set:
        raise ValueError("priority must cover all members")
    mask = 0
    for a in member_set:
        mask |= 1 << a
    pairs: list[tuple[int, int]] = []
    pos = {a: k for k, a in enumerate(prio)}
    while mask:
        i = min((a for a in member_set if mask & (1 << a)), key=lambda a: pos[a])
        rest = mask ^ (1 << i)
        if f[rest] == f[mask]:
            mask = rest
            continue
        for j in sorted((a for a in member_set if rest & (1 << a)), key=lambda a: pos[a]):
            w = G.w(i, j)
            if w > 0:
                target = f[mask] - (int(w * den) if den is not None else w)
                if f[rest ^ (1 << j)] == target:
                    pairs.append((min(i, j), max(i, j)))
                    mask = rest ^ (1 << j)
                    break
        else:  # pragma: no cover - DP guarantees a witness
            raise AssertionError("matching reconstruction failed")
    return pairs


def max_weight_matching(G: SymmetricFHG, cap: int = MWM_CAP) -> tuple[Partition, Scalar]:
    """Exact maximum weight matching over all agents, unmatched as singletons."""
    pairs = mwm_pairs_on(G, range(G.n), cap=cap)
    matched = {a for p in pairs for a in p}
    blocks: list[Iterable[int]] = [p for p in pairs]
    blocks += [{a} for a in range(G.n) if a not in matched]
    return Partition.of(blocks), mwm_weight_on(G, range(G.n), cap=cap)


# -- average-edge bound -------------------------------------------------------


def average_edge_bound(
    G: SymmetricFHG, C: Iterable[int], cap: int = MWM_CAP
) -> tuple[Scalar, Scalar, bool]:
    """(sum of C's internal weights / |C|, MWM weight on C, lhs <= rhs).

    The boolean is a theorem for every coalition; a False return means a bug.
    """
    members = sorted(set(C))
    if not members:
        raise UnknownAgent("empty coalition")
    total: Scalar = Fraction(0)
    for ai in range(len(members)):
        for aj in range(ai + 1, len(members)):
            total = total + G.w(members[ai], members[aj])
    lhs = total / len(members)
    rhs = mwm_weight_on(G, members, cap=cap)
    return lhs, rhs, lhs <= rhs


# -- star welfare closed form -------------------------------------------------


def star_welfare(leaves: int, x: Scalar) -> Scalar:
    """Welfare of a star coalition: `leaves` agents valued x by a common
    center, zero among themselves: 2 * leaves/(leaves+1) * x."""
    if leaves < 1:
        raise ValueError("a star needs at least one leaf")
    return Fraction(2 * leaves, leaves + 1) * x


# -- dissolution lower-bound sequence ------------------------------------------


def sequence_horizon(beta: Fraction, max_steps: int) -> int | None:
    """Feasibility horizon of the recursive sequence behind the dissolution
    lower bound: x_1 = 1 and x_i >= beta * (x_{i+1} + sum_{j<=i+1} x_j).

    Greedily takes the pointwise-maximal next term
    x_{i+1} = (x_i/beta - sum_{j<=i} x_j) / 2 (each constraint caps the next
    term by a downward-closed interval, so the maximal choice dominates every
    feasible sequence).  Returns the first index whose maximal term is
    negative, or None if the sequence survives `max_steps` terms.

    Runs on integers: with beta = p/q and x_i = X_i/(2p)^(i-1),
    X_{i+1} = q*X_i - p*T_i and T_{i+1} = 2p*T_i + X_{i+1}, where T tracks the
    scaled prefix sum.  Signs are preserved, so no rational reductions needed.
    """
    beta = Fraction(beta)
    if beta <= 0:
        raise InvalidBeta("beta must be positive")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    p, q = beta.numerator, beta.denominator
    X, T = 1, 1
    for i in range(1, max_steps):
        X = q * X - p * T
        if X < 0:
            return i + 1
        T = 2 * p * T + X
    return None


def beta_above_sequence_threshold(beta: Fraction) -> bool:
    """Exact test beta > 1/(3+2 sqrt2); above it the sequence must die."""
    return Fraction(beta) > MATCHING_DISSOLUTION_BOUND
