import io

import pytest
from hypothesis import given, strategies as st

from brickcraft.assembly import (WORLD32, AssemblyGraph, BrickAction, ConfigError, InvalidAction,
                                 StepEntry, init_state, initial_graph, parse_log, place, replay,
                                 transition, write_log)
from brickcraft.geometry import BrickPose, OffsetSetId, apply_offset, connects, enumerate_offsets, overlaps
from brickcraft.targets import random_construction
from conftest import build

FULL = enumerate_offsets(OffsetSetId.FULL)


def test_init_state():
    s = init_state(None, 10)
    assert s.graph.nodes == (BrickPose(0, 0, 0, 0),)
    assert s.graph.edges() == []
    assert not s.at_budget
    assert init_state("t", 1).at_budget
    with pytest.raises(ConfigError):
        init_state(None, 0)


def test_edge_feature_example_and_non_edge():
    g = AssemblyGraph([BrickPose(0, 0, 0, 0), BrickPose(2, 0, 1, 1)])
    assert g.edge_feature(0, 1) == (-2, 0, -1, 1)
    assert g.edge_feature(1, 0) == (2, 0, 1, 1)
    far = AssemblyGraph([BrickPose(0, 0, 0, 0), BrickPose(10, 0, 1, 0)])
    with pytest.raises(ValueError):
        far.edge_feature(0, 1)


def test_transition_adds_node_and_both_edge_directions():
    s = init_state(None, 5)
    up = FULL.index(next(o for o in FULL.offsets if (o.dx, o.dy, o.dz, o.ddir) == (0, 0, 1, 0)))
    s2 = transition(s, BrickAction(0, up), FULL, WORLD32)
    assert len(s2.graph) == 2
    assert s2.graph.edges() == [(0, 1), (1, 0)]
    assert len(s.graph) == 1      # the old state is untouched


def test_overlap_and_bounds_raise_invalid_action():
    g = build(3, 4, bounds=WORLD32)
    # find any candidate that lands on an existing brick
    for k, o in enumerate(FULL.offsets):
        for i, p in enumerate(g.nodes):
            cand = apply_offset(p, o)
            if not g.is_free(cand):
                with pytest.raises(InvalidAction) as exc:
                    place(g, BrickAction(i, k), FULL, WORLD32)
                assert exc.value.pose == cand
                return
    pytest.fail("no overlapping candidate found")


def test_outside_bounds_raises():
    down = next(k for k, o in enumerate(FULL.offsets) if o.dz == -1)
    with pytest.raises(InvalidAction):
        place(initial_graph(), BrickAction(0, down), FULL, WORLD32)


@given(st.integers(0, 10_000), st.integers(1, 25))
def test_graph_invariants_on_random_assemblies(seed, n):
    g = build(seed, n)
    nodes = g.nodes
    assert g.is_connected()
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            assert not overlaps(nodes[i], nodes[j])
            assert (j in g.adjacency[i]) == connects(nodes[i], nodes[j])
    for i, j in g.edges():
        a, b = g.edge_feature(i, j), g.edge_feature(j, i)
        assert a[:3] == tuple(-v for v in b[:3]) and a[3] == b[3]
    src, dst, feat = g.edge_arrays()
    assert [tuple(f) for f in feat] == [g.edge_feature(i, j) for i, j in zip(src, dst)]


@given(st.integers(0, 10_000), st.integers(-5, 5), st.integers(-5, 5), st.integers(-3, 3))
def test_edge_features_translation_invariant(seed, dx, dy, dz):
    g = build(seed, 6)
    moved = AssemblyGraph(p.translated(dx, dy, dz) for p in g.nodes)
    assert moved.edges() == g.edges()
    assert [moved.edge_feature(i, j) for i, j in moved.edges()] == \
           [g.edge_feature(i, j) for i, j in g.edges()]


def test_replay_reproduces_graph(rng):
    g, actions = random_construction(rng, 12, FULL, WORLD32)
    assert replay(actions, FULL, WORLD32) == g


def test_log_round_trip():
    steps = [StepEntry(1, 0, 5, BrickPose(1, 2, 1, 1), 0.25, {"masked": 3}),
             StepEntry(2, 1, 7, BrickPose(-1, 0, 2, 0), 0.0)]
    buf = io.StringIO()
    write_log(buf, {"seed": 3}, steps)
    head, back = parse_log(buf.getvalue())
    assert head == {"seed": 3}
    assert back == steps
