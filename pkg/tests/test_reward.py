import numpy as np
import pytest
from hypothesis import given, strategies as st

from brickcraft.assembly import WORLD32, AssemblyGraph, initial_graph
from brickcraft.geometry import BrickPose
from brickcraft.reward import IouTracker, RewardConfig, delta_iou, iou, step_reward
from brickcraft.targets import brick_cells, voxelize
from conftest import build


def grid(cells, shape=(6, 6, 2)):
    g = np.zeros(shape, bool)
    for c in cells:
        g[c] = True
    return g


def test_iou_examples():
    a = grid([(0, 0, 0), (1, 0, 0)])
    assert iou(a, a) == 1.0
    assert iou(a, grid([(3, 3, 1)])) == 0.0
    b = np.zeros((4, 4, 1), bool)
    b[:, :, 0] = True          # 16 cells
    s = b.copy()
    s[2:] = False              # 8 of them
    assert iou(s, b) == 0.5
    assert iou(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 0.0
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


def test_delta_for_stacked_target():
    bottom = initial_graph()
    both = bottom.add(BrickPose(0, 0, 1, 0))
    target = voxelize(both, WORLD32)
    assert delta_iou(voxelize(bottom, WORLD32), voxelize(both, WORLD32), target) == 0.5


def test_delta_can_be_negative():
    target = voxelize(initial_graph(), WORLD32)
    prev = voxelize(initial_graph(), WORLD32)
    cur = voxelize(initial_graph().add(BrickPose(0, 0, 1, 0)), WORLD32)
    assert delta_iou(prev, cur, target) == -0.5


def _gate_case(on):
    """Target: initial brick plus ``on`` cells of the brick above it."""
    above = BrickPose(0, 0, 1, 0)
    cells = brick_cells(above, WORLD32)
    t = voxelize(initial_graph(), WORLD32).bits.copy()
    for c in cells[:on]:
        t[tuple(c)] = True
    prev = voxelize(initial_graph(), WORLD32)
    cur = voxelize(initial_graph().add(above), WORLD32)
    return prev, cur, cells, t


def test_gate_threshold():
    prev, cur, cells, t = _gate_case(3)
    assert delta_iou(prev, cur, t) != 0.0
    assert step_reward(prev, cur, cells, t) == 0.0
    prev, cur, cells, t = _gate_case(4)
    r = step_reward(prev, cur, cells, t)
    assert r == delta_iou(prev, cur, t) and r >= 0.0
    prev, cur, cells, t = _gate_case(8)
    assert step_reward(prev, cur, cells, t) > 0.0


def test_gate_fraction_bounds():
    with pytest.raises(ValueError):
        RewardConfig(gate_fraction=1.5)


@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_iou_symmetric_and_bounded(s1, s2):
    a = np.random.default_rng(s1).random((5, 5, 5)) < 0.3
    b = np.random.default_rng(s2).random((5, 5, 5)) < 0.3
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(st.integers(0, 10_000), st.integers(1, 15), st.integers(1, 15))
def test_tracker_matches_recompute(seed, n_target, n_build):
    target = voxelize(build(seed, n_target, bounds=WORLD32), WORLD32)
    g = build(seed + 1, n_build, bounds=WORLD32)
    tr = IouTracker(target)
    total = 0.0
    for k, p in enumerate(g.nodes):
        before = iou(voxelize(AssemblyGraph(g.nodes[:k]), WORLD32), target) if k else 0.0
        d, on = tr.add(brick_cells(p, WORLD32))
        after = iou(voxelize(AssemblyGraph(g.nodes[:k + 1]), WORLD32), target)
        assert tr.iou() == after
        assert d == pytest.approx(after - before, abs=1e-12)
        total += d
        cells = brick_cells(p, WORLD32)
        assert on == int(target.bits[tuple(cells.T)].sum())
    assert total == pytest.approx(tr.iou(), abs=1e-12)
