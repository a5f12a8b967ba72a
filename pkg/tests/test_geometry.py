import itertools

from hypothesis import given, strategies as st

from brickcraft.geometry import (BrickPose, Offset, OffsetSetId, apply_offset, connects,
                                 enumerate_offsets, footprint, overlaps, rotate90, shared_studs)

poses = st.builds(BrickPose, st.integers(-20, 20), st.integers(-20, 20), st.integers(-5, 5),
                  st.integers(0, 1))


def brute_studs(a, b):
    """Shared xy cells, straight from the footprints."""
    return len({c[:2] for c in footprint(a)} & {c[:2] for c in footprint(b)})


def test_footprints():
    assert footprint(BrickPose(0, 0, 0, 0)) == {(x, y, 0) for x in range(4) for y in range(2)}
    assert footprint(BrickPose(0, 0, 0, 1)) == {(x, y, 0) for x in range(2) for y in range(4)}
    moved = {(x + 2, y - 1, 5) for (x, y, _) in footprint(BrickPose(0, 0, 0, 0))}
    assert footprint(BrickPose(2, -1, 5, 0)) == moved


@given(poses)
def test_footprint_has_eight_cells_in_one_layer(p):
    f = footprint(p)
    assert len(f) == 8
    assert {c[2] for c in f} == {p.z}


def test_overlap_cases():
    o = BrickPose(0, 0, 0, 0)
    assert overlaps(o, o)
    assert not overlaps(o, BrickPose(4, 0, 0, 0))
    assert not overlaps(o, BrickPose(0, 0, 1, 0))


def test_connect_cases():
    o = BrickPose(0, 0, 0, 0)
    assert connects(o, BrickPose(0, 0, 1, 0)) and shared_studs(o, BrickPose(0, 0, 1, 0)) == 8
    assert connects(o, BrickPose(3, 1, 1, 0)) and shared_studs(o, BrickPose(3, 1, 1, 0)) == 1
    assert not connects(o, BrickPose(4, 0, 1, 0))


@given(poses, poses)
def test_predicates_match_cell_sets(a, b):
    studs = brute_studs(a, b)
    assert shared_studs(a, b) == studs
    assert overlaps(a, b) == bool(footprint(a) & footprint(b))
    assert connects(a, b) == (abs(a.z - b.z) == 1 and studs > 0)
    assert overlaps(a, b) == overlaps(b, a)
    assert connects(a, b) == connects(b, a)


def test_offset_counts_and_splits():
    full = enumerate_offsets(OffsetSetId.FULL)
    assert len(full) == 92
    assert sum(o.dz == 1 for o in full.offsets) == 46
    assert sum(o.dz == -1 for o in full.offsets) == 46
    ra = enumerate_offsets(OffsetSetId.RANDOM_ASSEMBLY)
    assert len(ra) == 16
    assert sum(o.ddir == 0 for o in ra.offsets) == 7
    assert sum(o.ddir == 1 for o in ra.offsets) == 9
    assert len(enumerate_offsets(OffsetSetId.MODELNET)) == 32
    assert len(enumerate_offsets(OffsetSetId.MNIST)) == 6


def test_full_set_is_brute_force_contact_set():
    pivot = BrickPose(0, 0, 0, 0)
    found = set()
    for dx, dy, dz, d in itertools.product(range(-6, 7), range(-6, 7), (-2, -1, 0, 1, 2), (0, 1)):
        cand = BrickPose(dx, dy, dz, d)
        if connects(pivot, cand):
            found.add(Offset(dx, dy, dz, d))
    assert found == set(enumerate_offsets(OffsetSetId.FULL).offsets)


def test_offsets_sorted_and_unique():
    for sid in OffsetSetId:
        offs = enumerate_offsets(sid).offsets
        assert list(offs) == sorted(offs, key=lambda o: (o.dz, o.dx, o.dy, o.ddir))
        assert len(set(offs)) == len(offs)


def test_full_closed_under_z_negation_and_half_turn():
    full = set(enumerate_offsets(OffsetSetId.FULL).offsets)
    assert {Offset(o.dx, o.dy, -o.dz, o.ddir) for o in full} == full
    pivot = BrickPose(0, 0, 0, 0)
    # a dir-0 brick is symmetric under a half turn about its own centre
    t = rotate90(pivot, 2)
    sx, sy = pivot.x - t.x, pivot.y - t.y
    for o in full:
        r = rotate90(apply_offset(pivot, o), 2)
        assert Offset(r.x + sx, r.y + sy, r.z, r.dir) in full


def test_apply_offset_examples():
    assert apply_offset(BrickPose(0, 0, 0, 0), Offset(1, -1, 1, 1)) == BrickPose(1, -1, 1, 1)
    assert apply_offset(BrickPose(5, 2, 3, 1), Offset(0, 0, -1, 0)) == BrickPose(5, 2, 2, 1)
    p = apply_offset(BrickPose(0, 0, 0, 0), Offset(0, 0, 1, 1))
    assert p == BrickPose(0, 0, 1, 1)
    assert connects(BrickPose(0, 0, 0, 0), p)


@given(poses, st.sampled_from(list(OffsetSetId)), st.data())
def test_every_offset_connects_from_any_pivot(pivot, sid, data):
    offs = enumerate_offsets(sid)
    o = offs[data.draw(st.integers(0, len(offs) - 1))]
    new = apply_offset(pivot, o)
    assert connects(pivot, new)
    assert not overlaps(pivot, new)
    assert new.dir == pivot.dir ^ o.ddir


@given(poses, st.integers(0, 3))
def test_rotation_preserves_cells(p, k):
    r = rotate90(p, k)
    rot = set(footprint(p))
    for _ in range(k):
        rot = {(-y, x, z) for (x, y, z) in rot}
    assert footprint(r) == rot
    assert rotate90(p, 4) == p
