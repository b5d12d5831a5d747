import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from fhglab.core import InstanceTooLarge, SymmetricFHG, coalition_welfare, partition_welfare
from fhglab.oracles import (
    InvalidBeta,
    all_matchings,
    all_partitions,
    average_edge_bound,
    beta_above_sequence_threshold,
    max_weight_matching,
    mwm_pairs_on,
    optimal_partition,
    restricted_growth_strings,
    sequence_horizon,
    star_welfare,
)

BELL = {0: 1, 1: 1, 2: 2, 3: 5, 4: 15, 5: 52, 6: 203, 7: 877, 8: 4140}


def small_instance(n, weights):
    return SymmetricFHG(n, [(i, j, Fraction(w)) for i, j, w in weights])


def test_rgs_counts_are_bell_numbers():
    for n, bell in BELL.items():
        assert sum(1 for _ in restricted_growth_strings(n)) == bell


def test_all_matchings_counts_are_involutions():
    # number of matchings on n agents = telephone numbers
    telephone = {1: 1, 2: 2, 3: 4, 4: 10, 5: 26, 6: 76}
    for n, t in telephone.items():
        assert sum(1 for _ in all_matchings(n)) == t


def test_optimal_partition_path_example():
    G = small_instance(3, [(0, 1, 3), (0, 2, 3)])
    pi, w = optimal_partition(G)
    assert pi.canonical() == ((0, 1, 2),)
    assert w == 4


def test_optimal_partition_all_negative_and_pair():
    G = small_instance(3, [(0, 1, -2), (0, 2, -1), (1, 2, -5)])
    pi, w = optimal_partition(G)
    assert w == 0 and pi.canonical() == ((0,), (1,), (2,))
    G2 = small_instance(2, [(0, 1, 5)])
    pi2, w2 = optimal_partition(G2)
    assert w2 == 5 and pi2.canonical() == ((0, 1),)


def test_optimal_partition_cap():
    with pytest.raises(InstanceTooLarge):
        optimal_partition(SymmetricFHG(13), cap=12)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.randoms(use_true_random=False))
def test_optimal_partition_dominates_full_enumeration(n, rnd):
    entries = []
    for i in range(n):
        for j in range(i + 1, n):
            entries.append((i, j, Fraction(rnd.randint(-60, 60), rnd.randint(1, 6))))
    G = SymmetricFHG(n, entries)
    _, best = optimal_partition(G)
    assert best == max(partition_welfare(G, pi) for pi in all_partitions(n))


def test_mwm_triangle_and_negative():
    G = small_instance(3, [(0, 1, 3), (0, 2, 3)])
    m, w = max_weight_matching(G)
    assert w == 3 and any(len(c) == 2 for c in m)
    G2 = small_instance(3, [(0, 1, -2), (0, 2, -3), (1, 2, -4)])
    m2, w2 = max_weight_matching(G2)
    assert w2 == 0 and m2.canonical() == ((0,), (1,), (2,))


def test_mwm_never_matches_nonpositive_pairs():
    G = small_instance(4, [(0, 1, 0), (2, 3, -1)])
    m, w = max_weight_matching(G)
    assert w == 0
    assert all(len(c) == 1 for c in m)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.randoms(use_true_random=False))
def test_mwm_dominates_all_matchings(n, rnd):
    entries = []
    for i in range(n):
        for j in range(i + 1, n):
            entries.append((i, j, Fraction(rnd.randint(-60, 60), rnd.randint(1, 6))))
    G = SymmetricFHG(n, entries)
    from fhglab.core import matching_weight

    _, w = max_weight_matching(G)
    assert w == max(matching_weight(G, m) for m in all_matchings(n))


def test_mwm_priority_tiebreak_is_deterministic():
    # two equal-weight options for agent 0: priority decides the partner
    G = small_instance(3, [(0, 1, 5), (0, 2, 5)])
    assert mwm_pairs_on(G, range(3), priority=[0, 1, 2]) == [(0, 1)]
    assert mwm_pairs_on(G, range(3), priority=[0, 2, 1]) == [(0, 2)]


def test_half_approximation_on_random_instances():
    import random

    rng = random.Random(11)
    for _ in range(60):
        n = rng.randint(2, 6)
        entries = [
            (i, j, Fraction(rng.randint(-40, 40), rng.randint(1, 4)))
            for i in range(n)
            for j in range(i + 1, n)
        ]
        G = SymmetricFHG(n, entries)
        _, opt = optimal_partition(G)
        _, mwm = max_weight_matching(G)
        assert 2 * mwm >= opt


def test_average_edge_bound_examples():
    G = small_instance(3, [(0, 1, 3), (0, 2, 3)])
    lhs, rhs, ok = average_edge_bound(G, {0, 1, 2})
    assert (lhs, rhs, ok) == (2, 3, True)
    lhs, rhs, ok = average_edge_bound(G, {1})
    assert (lhs, rhs, ok) == (0, 0, True)
    G2 = small_instance(2, [(0, 1, 5)])
    lhs, rhs, ok = average_edge_bound(G2, {0, 1})
    assert (lhs, rhs, ok) == (Fraction(5, 2), 5, True)


def test_star_welfare_closed_form():
    assert star_welfare(1, Fraction(5)) == 5
    assert star_welfare(2, Fraction(3)) == 4
    assert star_welfare(6, Fraction(1)) == Fraction(12, 7)
    with pytest.raises(ValueError):
        star_welfare(0, Fraction(1))


def test_star_welfare_matches_direct_computation():
    for leaves in range(1, 12):
        x = Fraction(7, 3)
        G = SymmetricFHG(leaves + 1, [(0, k, x) for k in range(1, leaves + 1)])
        assert star_welfare(leaves, x) == coalition_welfare(G, range(leaves + 1))


def test_sequence_horizon_examples():
    assert sequence_horizon(Fraction(1, 2), 100) == 3
    assert sequence_horizon(Fraction(18, 100), 10_000) is not None
    assert sequence_horizon(Fraction(17, 100), 10_000) is None
    with pytest.raises(InvalidBeta):
        sequence_horizon(Fraction(0), 10)
    with pytest.raises(InvalidBeta):
        sequence_horizon(Fraction(-1, 2), 10)


def test_sequence_horizon_greedy_matches_fraction_reference():
    # reference implementation on plain Fractions
    def reference(beta, steps):
        x, total = Fraction(1), Fraction(1)
        for i in range(1, steps):
            nxt = (x / beta - total) / 2
            if nxt < 0:
                return i + 1
            x, total = nxt, total + nxt
        return None

    for beta in (Fraction(1, 2), Fraction(1, 4), Fraction(1, 5), Fraction(3, 10)):
        assert sequence_horizon(beta, 200) == reference(beta, 200)


def test_sequence_threshold_boundary():
    # 1/(3+2 sqrt2) ~ 0.17157287...; horizons are finite strictly above it
    assert beta_above_sequence_threshold(Fraction(18, 100))
    assert not beta_above_sequence_threshold(Fraction(17, 100))
    for num, den in ((18, 100), (1, 5), (1, 4), (172, 1000)):
        beta = Fraction(num, den)
        assert beta_above_sequence_threshold(beta)
        assert sequence_horizon(beta, 10_000) is not None
