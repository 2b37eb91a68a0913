import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treetrans.data import canonical
from treetrans.tree import (
    BOTTOM_UP,
    TOP_DOWN,
    canonical_code,
    CycleDetected,
    InconsistentEdges,
    MultipleRoots,
    NodeLabel,
    NullLabelNotAllowed,
    OutdegreeExceeded,
    from_nested,
    from_parents,
    is_isomorphic,
    ordered_code,
    schedule,
    skeleton,
    validate,
)

from helpers import random_tree


def test_single_node_tree():
    t = validate([7], [], {7: "a"})
    assert t.size == 1
    assert t.root == 1
    assert t.labels[1] == NodeLabel.categorical("a")


def test_two_node_cycle():
    with pytest.raises(CycleDetected):
        validate([1, 2], [(1, 2), (2, 1)])


def test_outdegree_exceeded():
    with pytest.raises(OutdegreeExceeded) as err:
        validate(range(1, 6), [(1, 2), (1, 3), (1, 4), (1, 5)], max_outdegree=3)
    assert err.value.degree == 4


def test_multiple_roots():
    with pytest.raises(MultipleRoots):
        validate([1, 2, 3], [(1, 2)])


def test_two_parents_is_inconsistent():
    with pytest.raises(InconsistentEdges):
        validate([1, 2, 3], [(1, 3), (2, 3), (1, 2)])


def test_unknown_node_in_edge():
    with pytest.raises(InconsistentEdges):
        validate([1, 2], [(1, 9)])


def test_detached_cycle():
    with pytest.raises(CycleDetected):
        validate([1, 2, 3, 4], [(1, 2), (3, 4), (4, 3)])


def test_null_labels_need_permission():
    with pytest.raises(NullLabelNotAllowed):
        validate([1], [], {1: None})
    assert validate([1], [], {1: None}, allow_null=True).labels[1].is_null


def test_renumbering_puts_root_first_and_ignores_sibling_order():
    a = validate(["r", "x", "y"], [("r", "x"), ("r", "y")], {"r": "R", "x": "X", "y": "Y"})
    b = validate(["r", "x", "y"], [("r", "y"), ("r", "x")], {"r": "R", "x": "X", "y": "Y"})
    assert a.labels[1].value == "R"
    assert {a.labels[u].value for u in (2, 3)} == {"X", "Y"}
    assert a.labels == b.labels
    assert a.children[1] == (2, 3) and b.children[1] == (3, 2)


def test_skeleton_ignores_labels():
    a = from_nested(("S", ["a", "b"]))
    b = from_nested(("X", ["c", "d"]))
    assert skeleton(a) == skeleton(b)


def test_skeleton_of_leaf_and_chain():
    leaf = skeleton(from_nested("a"))
    assert leaf.size == 1 and leaf.edges == ()
    chain = skeleton(from_parents([None, 1, 2]))
    assert set(chain.edges) == {(1, 2), (2, 3)}


def test_isomorphic_to_itself():
    t = from_nested(("S", [("A", ["x", "y"]), "z"]))
    assert is_isomorphic(t, t, ordered=True)
    assert is_isomorphic(t, t, ordered=False)


def test_sibling_swap():
    a = from_nested(("r", [("A", ["x"]), ("B", ["y", "z"])]))
    b = from_nested(("r", [("B", ["y", "z"]), ("A", ["x"])]))
    assert not is_isomorphic(a, b, ordered=True)
    assert is_isomorphic(a, b, ordered=False)


def test_schedule_chain():
    t = from_parents([None, 1, 2], ["root", "a", "b"])
    assert [t.labels[u].value for u in schedule(t, TOP_DOWN)] == ["root", "a", "b"]
    assert [t.labels[u].value for u in schedule(t, BOTTOM_UP)] == ["b", "a", "root"]


def _precedence_ok(tree, order, direction):
    pos = {u: k for k, u in enumerate(order)}
    for u, v in tree.edges:  # u parent of v
        if direction == TOP_DOWN and not pos[u] < pos[v]:
            return False
        if direction == BOTTOM_UP and not pos[v] < pos[u]:
            return False
    return True


def test_schedule_precedence_on_random_trees():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 21))
        t = random_tree(rng, n, max_outdegree=4)
        for direction in (TOP_DOWN, BOTTOM_UP):
            order = schedule(t, direction)
            assert sorted(order) == list(t.nodes)
            assert _precedence_ok(t, order, direction)
            assert schedule(t, direction) == order


@st.composite
def trees(draw, max_nodes=12):
    n = draw(st.integers(1, max_nodes))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(np.random.default_rng(seed), n, max_outdegree=3)


@settings(max_examples=200, deadline=None)
@given(trees())
def test_edge_count(t):
    assert len(t.edges) == t.size - 1


@settings(max_examples=200, deadline=None)
@given(trees(), trees())
def test_skeleton_equality_matches_ordered_isomorphism(a, b):
    a, b = canonical(a), canonical(b)
    assert (skeleton(a) == skeleton(b)) == is_isomorphic(a, b, ordered=True)
    if is_isomorphic(a, b, ordered=True):
        assert is_isomorphic(a, b, ordered=False)


def _all_trees(n):
    # parent arrays where node k attaches to some earlier node: every rooted shape appears
    for tail in itertools.product(*[range(1, k) for k in range(2, n + 1)]):
        yield from_parents([None] + list(tail))


@pytest.mark.parametrize("n, unordered, ordered", [(1, 1, 1), (2, 1, 1), (3, 2, 2), (4, 4, 5), (5, 9, 14), (6, 20, 42)])
def test_shape_class_counts(n, unordered, ordered):
    # unordered rooted trees: 1, 1, 2, 4, 9, 20; ordered: Catalan numbers
    trees = list(_all_trees(n))
    reps = []
    for t in trees:
        if not any(is_isomorphic(t, r, ordered=False) for r in reps):
            reps.append(t)
    assert len(reps) == unordered
    assert len({canonical_code(t) for t in trees}) == unordered
    assert len({ordered_code(t) for t in trees}) == ordered


def test_permute_children_keeps_ids():
    t = from_nested(("r", ["a", "b", "c"]))
    p = t.permute_children({1: (4, 2, 3)})
    assert p.children[1] == (4, 2, 3)
    assert p.labels == t.labels
    with pytest.raises(InconsistentEdges):
        t.permute_children({1: (2, 3)})
