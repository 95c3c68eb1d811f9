"""Layout construction, balance checking, and membership indexing.

Claims under test:
    - source enumeration is deterministic: mains in declaration order,
      interactions lexicographic, residual last, nesting suppresses
      parent-child interactions
    - balance detection handles unequal counts, empty cells, and uneven
      nested structures
    - membership indices are contiguous, lexicographic, and injective on
      the defining level combinations
"""

import numpy as np
import pytest

from vclab.design import (
    Dataset,
    FactorDecl,
    Observation,
    build_layout,
    is_balanced,
    membership,
    refines,
)
from vclab.errors import DesignError


def obs(response, **labels):
    return Observation(response, {k: str(v) for k, v in labels.items()})


def one_way(values_by_group):
    rows = []
    for g, vals in values_by_group.items():
        rows.extend(obs(v, group=g) for v in vals)
    layout = build_layout([FactorDecl("group")], rows)
    return Dataset(tuple(rows), layout)


def crossed(cells, reps=1, value=0.0):
    rows = []
    for a, b in cells:
        rows.extend(obs(value, a=a, b=b) for _ in range(reps))
    layout = build_layout([FactorDecl("a"), FactorDecl("b")], rows)
    return Dataset(tuple(rows), layout)


def nested_rs(pairs, reps=1):
    rows = []
    for r, s in pairs:
        rows.extend(obs(0.0, region=r, state=s) for _ in range(reps))
    layout = build_layout(
        [FactorDecl("region"), FactorDecl("state", nested_in="region")], rows
    )
    return Dataset(tuple(rows), layout)


# -- source enumeration -------------------------------------------------------


def test_single_factor_sources():
    ds = one_way({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    assert ds.layout.source_names() == ("group", "residual")


def test_two_crossed_factors_enumerate_interaction():
    ds = crossed([("a0", "b0"), ("a0", "b1"), ("a1", "b0"), ("a1", "b1")], reps=2)
    assert ds.layout.source_names() == ("a", "b", "a:b", "residual")


def test_nesting_forbids_parent_child_interaction():
    ds = nested_rs([("r0", "s0"), ("r0", "s1"), ("r1", "s0"), ("r1", "s1")], reps=2)
    assert ds.layout.source_names() == ("region", "state", "residual")


def test_explicit_interactions_override_auto():
    rows = [obs(float(i), a=f"a{i%2}", b=f"b{i%3}") for i in range(12)]
    layout = build_layout(["a", "b"], rows, interactions=[])
    assert tuple(s.name for s in layout.sources) == ("a", "b", "residual")


def test_explicit_ancestor_interaction_rejected():
    rows = [
        obs(0.0, region=r, state=s)
        for r in ("r0", "r1")
        for s in ("s0", "s1")
    ]
    with pytest.raises(DesignError, match="ancestor"):
        build_layout(
            [FactorDecl("region"), FactorDecl("state", nested_in="region")],
            rows,
            interactions=[("region", "state")],
        )


def test_source_list_invariant_to_observation_order():
    rows = [obs(float(i), a=f"a{i%2}", b=f"b{i%3}") for i in range(12)]
    fwd = build_layout(["a", "b"], rows)
    rev = build_layout(["a", "b"], rows[::-1])
    assert fwd == rev


def test_levels_sorted_lexicographically():
    rows = [obs(0.0, group=g) for g in ("zeta", "alpha", "mid", "alpha")]
    layout = build_layout(["group"], rows)
    assert layout.levels["group"] == ("alpha", "mid", "zeta")


# -- construction errors ------------------------------------------------------


def test_unknown_parent_rejected():
    rows = [obs(0.0, a="x"), obs(0.0, a="y")]
    with pytest.raises(DesignError, match="undeclared"):
        build_layout([FactorDecl("a", nested_in="ghost")], rows)


def test_cyclic_nesting_rejected():
    rows = [obs(0.0, a="x", b="u"), obs(0.0, a="y", b="v")]
    with pytest.raises(DesignError, match="cyclic"):
        build_layout(
            [FactorDecl("a", nested_in="b"), FactorDecl("b", nested_in="a")], rows
        )


def test_single_level_factor_rejected():
    rows = [obs(0.0, group="only"), obs(1.0, group="only")]
    with pytest.raises(DesignError, match="single"):
        build_layout(["group"], rows)


def test_missing_label_rejected():
    rows = [obs(0.0, group="a"), Observation(1.0, {})]
    with pytest.raises(DesignError, match="missing"):
        build_layout(["group"], rows)


def test_non_finite_response_rejected():
    with pytest.raises(DesignError):
        Observation(float("nan"), {"g": "a"})


def test_dataset_requires_two_observations():
    rows = [obs(0.0, group="a"), obs(0.0, group="b")]
    layout = build_layout(["group"], rows)
    with pytest.raises(DesignError):
        Dataset((rows[0],), layout)


# -- balance ------------------------------------------------------------------


def test_balanced_equal_replicates():
    ds = one_way({"a": [1, 2, 3], "b": [4, 5, 6]})
    check = is_balanced(ds)
    assert check and check.replicates == 3 and not check.empty_cells


def test_unbalanced_counts():
    ds = one_way({"a": [1, 2, 3], "b": [4, 5]})
    assert not is_balanced(ds)


def test_empty_cell_sets_flag():
    ds = crossed([("a0", "b0"), ("a0", "b1"), ("a1", "b0")], reps=2)
    check = is_balanced(ds)
    assert not check and check.empty_cells


def test_uneven_nested_children_unbalanced():
    ds = nested_rs(
        [("r0", "s0"), ("r0", "s1"), ("r1", "s0")], reps=2
    )
    assert not is_balanced(ds)


# -- membership ---------------------------------------------------------------


def test_one_way_membership_in_order():
    rows = [obs(0.0, g="a"), obs(0.0, g="a"), obs(0.0, g="b"), obs(0.0, g="b")]
    ds = Dataset(tuple(rows), build_layout(["g"], rows))
    assert membership(ds, "g").tolist() == [0, 0, 1, 1]


def test_nested_membership_distinct_per_parent_pair():
    ds = nested_rs(
        [("r0", "s0"), ("r0", "s1"), ("r1", "s0"), ("r1", "s1")], reps=1
    )
    idx = membership(ds, "state")
    # labels s0/s1 are reused across regions yet each (region, state)
    # pair gets its own effect
    assert sorted(idx.tolist()) == [0, 1, 2, 3]


def test_interaction_membership_full_cross():
    ds = crossed([("a0", "b0"), ("a0", "b1"), ("a1", "b0"), ("a1", "b1")], reps=2)
    idx = membership(ds, "a:b")
    assert idx.max() == 3 and len(set(idx.tolist())) == 4


def test_membership_residual_rejected():
    ds = one_way({"a": [1, 2], "b": [3, 4]})
    with pytest.raises(DesignError):
        membership(ds, "residual")


def test_membership_injective_on_level_combos():
    rng = np.random.default_rng(4)
    rows = [
        obs(float(v), a=f"a{rng.integers(3)}", b=f"b{rng.integers(3)}")
        for v in rng.normal(size=60)
    ]
    ds = Dataset(tuple(rows), build_layout(["a", "b"], rows))
    for source in ("a", "b", "a:b"):
        idx = membership(ds, source)
        keys = {}
        key_factors = ds.layout.key_factors(ds.layout.source(source))
        for i, o in enumerate(ds.observations):
            key = tuple(o.labels[f] for f in key_factors)
            assert keys.setdefault(key, idx[i]) == idx[i]
        assert len(set(keys.values())) == len(keys)


def test_effect_counts_match_factorial_levels():
    ds = crossed(
        [(f"a{i}", f"b{j}") for i in range(3) for j in range(4)], reps=2
    )
    assert ds.effect_count("a") == 3
    assert ds.effect_count("b") == 4
    assert ds.effect_count("a:b") == 12


def test_refines_partial_order():
    ds = crossed([("a0", "b0"), ("a0", "b1"), ("a1", "b0"), ("a1", "b1")], reps=2)
    assert refines(ds, "a:b", "a")
    assert refines(ds, "a:b", "b")
    assert not refines(ds, "a", "b")
    assert refines(ds, "residual", "a")
    assert not refines(ds, "a", "residual")


def test_nested_single_label_factor_allowed():
    # one MSA per state: the factor has one label but one effect per chain
    rows = []
    for r in ("r0", "r1"):
        for s in ("s0", "s1"):
            rows.extend(obs(0.0, region=r, state=s, msa="m0") for _ in range(2))
    layout = build_layout(
        [
            FactorDecl("region"),
            FactorDecl("state", nested_in="region"),
            FactorDecl("msa", nested_in="state"),
        ],
        rows,
    )
    ds = Dataset(tuple(rows), layout)
    assert ds.effect_count("msa") == 4
