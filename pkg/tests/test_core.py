import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from fhglab.core import (
    AgentNotInCoalition,
    DirectedFHG,
    InvalidPartition,
    NotAMatching,
    Partition,
    SymmetricFHG,
    UnknownAgent,
    coalition_welfare,
    instance_from_json,
    instance_to_json,
    is_tree_domain,
    matching_weight,
    partition_welfare,
    symmetrize,
    utility,
)
from fhglab.oracles import all_partitions


def pair_instance(w=Fraction(5)):
    return SymmetricFHG(2, [(0, 1, w)])


def test_utility_pair_splits_weight():
    G = SymmetricFHG(2, [(0, 1, Fraction(4))])
    assert utility(G, 0, {0, 1}) == 2
    assert utility(G, 1, {0, 1}) == 2


def test_utility_triangle_average():
    G = SymmetricFHG(3, [(0, 1, Fraction(3)), (0, 2, Fraction(3))])
    assert utility(G, 0, {0, 1, 2}) == 2  # (3+3)/3


def test_utility_singleton_is_zero():
    G = pair_instance()
    assert utility(G, 0, {0}) == 0


def test_utility_errors():
    G = pair_instance()
    with pytest.raises(AgentNotInCoalition):
        utility(G, 0, {1})
    with pytest.raises(UnknownAgent):
        utility(G, 0, {0, 7})


def test_coalition_welfare_star_and_pair():
    G = SymmetricFHG(3, [(0, 1, Fraction(3)), (0, 2, Fraction(3))])
    assert coalition_welfare(G, {0, 1, 2}) == 4  # 2 * (2/3) * 3
    assert coalition_welfare(G, {0, 1}) == 3
    assert coalition_welfare(G, {2}) == 0


def test_partition_welfare_additive():
    G = SymmetricFHG(3, [(0, 1, Fraction(5))])
    assert partition_welfare(G, Partition.singletons(range(3))) == 0
    pi = Partition.of([{0, 1}, {2}])
    assert partition_welfare(G, pi) == 5
    star = SymmetricFHG(3, [(0, 1, Fraction(3)), (0, 2, Fraction(3))])
    assert partition_welfare(star, Partition.of([{0, 1, 2}])) == 4


def test_partition_validation():
    with pytest.raises(InvalidPartition):
        Partition.of([{0, 1}, {1, 2}])
    with pytest.raises(InvalidPartition):
        Partition.of([set()])
    with pytest.raises(InvalidPartition):
        Partition.of([{0}], ground={0, 1})


def test_matching_weight_examples():
    G = SymmetricFHG(4, [(0, 1, Fraction(3)), (2, 3, Fraction(-1))])
    assert matching_weight(G, Partition.singletons(range(4))) == 0
    m = Partition.of([{0, 1}, {2}, {3}])
    assert matching_weight(G, m) == 3
    both = Partition.of([{0, 1}, {2, 3}])
    assert matching_weight(G, both) == 2
    assert matching_weight(G, both) == partition_welfare(G, both)
    with pytest.raises(NotAMatching):
        matching_weight(G, Partition.of([{0, 1, 2}, {3}]))


def test_symmetrize_rule_and_fixed_point():
    D = DirectedFHG(2, [(0, 1, Fraction(4))])
    S = symmetrize(D)
    assert S.w(0, 1) == 2
    D2 = DirectedFHG(2, [(0, 1, Fraction(3)), (1, 0, Fraction(3))])
    assert symmetrize(D2).w(0, 1) == 3


@settings(max_examples=25, deadline=None)
@given(st.lists(st.fractions(min_value=-9, max_value=9, max_denominator=6),
                min_size=12, max_size=12))
def test_symmetrize_preserves_every_partition_welfare(vals):
    # n=4 directed instance; compare all 15 partitions before and after
    arcs = [(i, j) for i in range(4) for j in range(4) if i != j]
    D = DirectedFHG(4, [(i, j, w) for (i, j), w in zip(arcs, vals)])
    S = symmetrize(D)
    for pi in all_partitions(4):
        assert partition_welfare(D, pi) == partition_welfare(S, pi)


def test_tree_domain_predicate():
    # star: positives {2, 4}, fill -32
    entries = [(0, 2, Fraction(2)), (0, 3, Fraction(4))]
    entries += [(i, j, Fraction(-32)) for i in range(4) for j in range(i + 1, 4)
                if (i, j) not in ((0, 2), (0, 3))]
    assert is_tree_domain(SymmetricFHG(4, entries)) is True
    # positive triangle: cycle
    tri = SymmetricFHG(3, [(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    assert is_tree_domain(tri) is False
    # one zero off-tree pair is not "sufficiently negative"
    entries2 = [(0, 1, Fraction(2)), (0, 2, Fraction(-10))]  # (1,2) absent = 0
    assert is_tree_domain(SymmetricFHG(3, entries2)) is False


def test_tree_domain_coalitions_of_three_or_more_are_negative():
    from fhglab.adversaries import gen_random_tree_domain
    from fhglab.oracles import all_partitions

    for seed in range(5):
        G = gen_random_tree_domain(6, seed)
        assert is_tree_domain(G)
        for pi in all_partitions(6):
            for C in pi:
                if len(C) >= 3:
                    assert coalition_welfare(G, C) < 0


def test_empty_and_tiny_instances_are_legal():
    G0 = SymmetricFHG(0)
    assert partition_welfare(G0, Partition.of([])) == 0
    G1 = SymmetricFHG(1)
    assert partition_welfare(G1, Partition.singletons([0])) == 0
    assert is_tree_domain(G1) is True


def test_instance_construction_errors():
    with pytest.raises(ValueError):
        SymmetricFHG(2, [(0, 0, Fraction(1))])
    with pytest.raises(UnknownAgent):
        SymmetricFHG(2, [(0, 5, Fraction(1))])
    with pytest.raises(ValueError):
        SymmetricFHG(2, [(0, 1, Fraction(1)), (1, 0, Fraction(2))])


def test_instance_json_roundtrip(tmp_path):
    G = SymmetricFHG(3, [(0, 1, Fraction(5, 3)), (1, 2, Fraction(-7, 2))])
    doc = instance_to_json(G)
    assert doc["weights"][0]["w"] == "5/3"
    G2 = instance_from_json(json.loads(json.dumps(doc)))
    assert G2 == G
    D = DirectedFHG(2, [(0, 1, Fraction(4)), (1, 0, Fraction(1))])
    D2 = instance_from_json(instance_to_json(D))
    assert D2.v(0, 1) == 4 and D2.v(1, 0) == 1
