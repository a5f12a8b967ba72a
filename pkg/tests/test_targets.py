import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brickcraft import formats
from brickcraft.assembly import WORLD32, AssemblyGraph, ConfigError, initial_graph
from brickcraft.formats import FormatError
from brickcraft.geometry import OffsetSetId, enumerate_offsets
from brickcraft.targets import (MNIST_BOUNDS, EmptyTarget, TargetMode, VoxelGrid, brick_budget,
                                gen_random_assembly, load_target, mnist_image14, mnist_to_target,
                                normalize_bottom_center, project_views, save_target, tower_target,
                                voxel_target, voxelize)
from conftest import build


def test_single_brick_voxelizes_to_eight_cells():
    assert voxelize(initial_graph(), WORLD32).volume() == 8


@given(st.integers(0, 10_000), st.integers(1, 20))
def test_volume_is_eight_per_brick(seed, n):
    g = build(seed, n, bounds=WORLD32)
    assert voxelize(g, WORLD32).volume() == 8 * n


def test_front_view_of_one_brick():
    front, right, top = project_views(voxelize(initial_graph(), WORLD32))
    rows = np.flatnonzero(front.any(axis=1))
    assert len(rows) == 1
    assert front[rows[0]].sum() == 4
    assert right.sum() == 2
    assert top.sum() == 8


def test_empty_grid_gives_blank_views():
    views = project_views(VoxelGrid.empty(WORLD32.dims))
    assert all(v.shape == (14, 14) and not v.any() for v in views)


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_projection_is_monotone(seed, n):
    g = build(seed, n, bounds=WORLD32)
    big = voxelize(g, WORLD32)
    sub = voxelize(AssemblyGraph(g.nodes[:n - 1]), WORLD32)
    for axis in (0, 1, 2):
        assert (sub.bits.any(axis=axis) <= big.bits.any(axis=axis)).all()
    big_views, clipped = project_views(big, return_clipped=True)
    if not clipped:
        # nothing cropped away, so each view holds the whole silhouette
        for a, b in zip(project_views(sub), big_views):
            assert a.sum() <= b.sum()


def test_mnist_all_on():
    t = mnist_to_target(np.full((28, 28), 255, np.uint8))
    assert t.meta["on_pixels"] == 196
    assert t.budget == 216
    assert t.exact_volume.volume() == 196 * 4
    assert t.bounds == MNIST_BOUNDS
    assert len(t.views) == 1


def test_mnist_all_off_raises():
    with pytest.raises(EmptyTarget):
        mnist_to_target(np.zeros((28, 28), np.uint8))


def test_mnist_single_block():
    img = np.zeros((28, 28), np.uint8)
    img[:2, :2] = 255
    small = mnist_image14(img)
    assert small.sum() == 1 and small[0, 0]
    t = mnist_to_target(img)
    assert t.budget == 2
    assert t.exact_volume.volume() == 4


def test_mnist_volume_sits_on_the_floor():
    img = np.zeros((28, 28), np.uint8)
    img[4:12, 10:14] = 200
    v = mnist_to_target(img).exact_volume
    occ = v.occupied()
    assert occ[:, 2].min() == 0
    assert set(occ[:, 0]) == {0, 1, 2, 3}


def test_budget_rules():
    assert brick_budget("mnist", on_pixels=60) == 66
    assert brick_budget("random_assembly", brick_count=12) == 12
    assert brick_budget("modelnet", configured=58) == 58
    with pytest.raises(ConfigError):
        brick_budget("modelnet", configured=61)
    with pytest.raises(ConfigError):
        brick_budget("modelnet")


@given(st.integers(1, 196))
def test_mnist_budget_is_ceiling(n):
    assert brick_budget("mnist", on_pixels=n) == math.ceil(Fraction(11, 10) * n)


@given(st.integers(0, 2**32 - 1), st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6)))
def test_bbvox_round_trip(seed, dims):
    bits = np.random.default_rng(seed).random(dims) < 0.4
    assert np.array_equal(formats.decode_bbvox(formats.encode_bbvox(bits)), bits)


def test_bbvox_layout_is_x_fastest():
    bits = np.zeros((2, 3, 1), bool)
    bits[1, 0, 0] = True
    assert formats.encode_bbvox(bits) == b"BBVOX1 2 3 1\n010000"


def test_bbvox_empty_and_malformed():
    empty = np.zeros((0, 3, 2), bool)
    assert formats.decode_bbvox(formats.encode_bbvox(empty)).shape == (0, 3, 2)
    data = formats.encode_bbvox(np.ones((3, 3, 3), bool))
    with pytest.raises(FormatError) as exc:
        formats.decode_bbvox(data[:-5])
    assert exc.value.offset == len(data) - 5
    with pytest.raises(FormatError):
        formats.decode_bbvox(b"BBVOX2 1 1 1\n1")
    with pytest.raises(FormatError):
        formats.decode_bbvox(b"BBVOX1 1 1 1\n2")
    with pytest.raises(FormatError):
        formats.decode_bbvox(b"BBVOX1 1 1")


def test_pbm_round_trip(tmp_path, rng):
    img = rng.random((14, 14)) < 0.3
    formats.write_pbm(tmp_path / "a.pbm", img)
    assert np.array_equal(formats.read_pbm(tmp_path / "a.pbm"), img)


def test_idx_round_trip(tmp_path, rng):
    arr = rng.integers(0, 256, (3, 28, 28)).astype(np.uint8)
    formats.write_idx(tmp_path / "x.idx", arr)
    assert np.array_equal(formats.read_idx(tmp_path / "x.idx"), arr)


@given(st.integers(0, 10_000))
def test_bottom_centre_normalisation(seed):
    rng = np.random.default_rng(seed)
    bits = np.zeros(WORLD32.dims, bool)
    lo = rng.integers(0, 20, 3)
    size = rng.integers(1, 10, 3)
    bits[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1], lo[2]:lo[2] + size[2]] = True
    v = normalize_bottom_center(VoxelGrid(bits))
    occ = v.occupied()
    assert v.volume() == bits.sum()
    assert occ[:, 2].min() == 0
    for a in (0, 1):
        centre2 = occ[:, a].min() + occ[:, a].max() + 1      # twice the box centre
        assert abs(centre2 - 32) <= 1
    # idempotent
    assert normalize_bottom_center(v) == v


def test_generated_assemblies_respect_range():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = gen_random_assembly(rng, (10, 15))
        assert 10 <= len(a.graph) <= 15
        assert a.target.budget == len(a.graph)
        assert a.volume.volume() == 8 * len(a.graph)
        assert a.target.mode is TargetMode.RANDOM_ASSEMBLY
    one = gen_random_assembly(rng, (1, 1))
    assert len(one.graph) == 1


def test_generated_target_is_reachable_from_the_initial_brick():
    rng = np.random.default_rng(7)
    a = gen_random_assembly(rng, (10, 12))
    shifted = [p.translated(*a.shift) for p in a.graph.nodes]
    assert voxelize(AssemblyGraph(shifted), WORLD32) == a.volume


def test_target_save_load(tmp_path):
    t = tower_target(3)
    rec = save_target(t, tmp_path)
    back = load_target(rec, tmp_path)
    assert back.exact_volume == t.exact_volume
    assert all(np.array_equal(a, b) for a, b in zip(back.views, t.views))
    assert back.budget == t.budget and back.mode == t.mode and back.bounds == t.bounds


def test_voxel_target_checks():
    with pytest.raises(EmptyTarget):
        voxel_target(VoxelGrid.empty(WORLD32.dims), 10)
    bits = np.zeros(WORLD32.dims, bool)
    bits[3:9, 3:5, 2:4] = True
    t = voxel_target(VoxelGrid(bits), 20)
    assert t.budget == 20 and t.exact_volume.occupied()[:, 2].min() == 0
    with pytest.raises(ConfigError):
        voxel_target(VoxelGrid(bits), 61)


def test_offset_set_follows_mode():
    assert tower_target().offset_set_id is OffsetSetId.RANDOM_ASSEMBLY
    assert len(enumerate_offsets(mnist_to_target(np.full((28, 28), 255)).offset_set_id)) == 6
