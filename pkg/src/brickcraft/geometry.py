"""2x4 brick footprints, contact predicates and the offset tables.

Coordinates are integer lattice cells: one stud horizontally, one brick
height vertically.  A pose is stored by its minimum corner (``anchor``) so
every coordinate stays integral.  ``dir == 0`` lays the long side along x,
``dir == 1`` along y.

Offsets are expressed in the pivot's local frame, i.e. as if the pivot had
``dir == 0``.  For a ``dir == 1`` pivot the horizontal components are
swapped (the x/y reflection maps a dir-0 footprint at anchor ``(a, b)``
exactly onto the dir-1 footprint at ``(b, a)``), which is what makes every
offset produce a connected brick regardless of pivot orientation.
"""
from __future__ import annotations

import enum
from functools import lru_cache
from typing import NamedTuple

LONG, SHORT = 4, 2


class BrickPose(NamedTuple):
    x: int
    y: int
    z: int
    dir: int = 0

    @property
    def anchor(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)

    def spans(self) -> tuple[int, int]:
        """Extent along x and y."""
        return (LONG, SHORT) if self.dir == 0 else (SHORT, LONG)

    def translated(self, dx: int, dy: int, dz: int) -> "BrickPose":
        return BrickPose(self.x + dx, self.y + dy, self.z + dz, self.dir)

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.z, self.dir]


class Offset(NamedTuple):
    dx: int
    dy: int
    dz: int
    ddir: int

    @property
    def delta(self) -> tuple[int, int, int]:
        return (self.dx, self.dy, self.dz)


class OffsetSetId(str, enum.Enum):
    FULL = "full"
    RANDOM_ASSEMBLY = "random_assembly"
    MODELNET = "modelnet"
    MNIST = "mnist"


class OffsetSet(NamedTuple):
    id: OffsetSetId
    offsets: tuple[Offset, ...]

    def __len__(self) -> int:
        return len(self.offsets)

    def __getitem__(self, k: int) -> Offset:
        return self.offsets[k]

    def index(self, off: Offset) -> int:
        return self.offsets.index(off)


def footprint(pose: BrickPose) -> frozenset[tuple[int, int, int]]:
    sx, sy = pose.spans()
    return frozenset(
        (pose.x + i, pose.y + j, pose.z) for i in range(sx) for j in range(sy)
    )


def _xy_overlap(a: BrickPose, b: BrickPose) -> int:
    """Number of shared studs between the xy projections."""
    ax, ay = a.spans()
    bx, by = b.spans()
    ox = min(a.x + ax, b.x + bx) - max(a.x, b.x)
    oy = min(a.y + ay, b.y + by) - max(a.y, b.y)
    if ox <= 0 or oy <= 0:
        return 0
    return ox * oy


def overlaps(a: BrickPose, b: BrickPose) -> bool:
    return a.z == b.z and _xy_overlap(a, b) > 0


def connects(a: BrickPose, b: BrickPose) -> bool:
    return abs(a.z - b.z) == 1 and _xy_overlap(a, b) > 0


def shared_studs(a: BrickPose, b: BrickPose) -> int:
    return _xy_overlap(a, b)


def local_to_world(pivot_dir: int, dx: int, dy: int) -> tuple[int, int]:
    return (dx, dy) if pivot_dir == 0 else (dy, dx)


def apply_offset(pivot: BrickPose, off: Offset) -> BrickPose:
    wx, wy = local_to_world(pivot.dir, off.dx, off.dy)
    return BrickPose(pivot.x + wx, pivot.y + wy, pivot.z + off.dz, pivot.dir ^ off.ddir)


def _all_contacts(min_studs: int, levels: tuple[int, ...]) -> list[Offset]:
    pivot = BrickPose(0, 0, 0, 0)
    found = []
    for dz in levels:
        for ddir in (0, 1):
            for dx in range(-LONG, LONG + 1):
                for dy in range(-LONG, LONG + 1):
                    cand = BrickPose(dx, dy, dz, ddir)
                    if shared_studs(pivot, cand) >= min_studs:
                        found.append(Offset(dx, dy, dz, ddir))
    return found


@lru_cache(maxsize=None)
def enumerate_offsets(set_id: OffsetSetId | str) -> OffsetSet:
    """Build one of the four offset tables, sorted by (dz, dx, dy, ddir)."""
    set_id = OffsetSetId(set_id)
    if set_id is OffsetSetId.FULL:
        offs = _all_contacts(1, (-1, 1))
    elif set_id is OffsetSetId.RANDOM_ASSEMBLY:
        offs = _all_contacts(4, (1,))
    elif set_id is OffsetSetId.MODELNET:
        offs = _all_contacts(4, (-1, 1))
    else:
        # long axis pinned to the extrusion depth, lateral shift within the
        # 2-stud width, one level up or down
        offs = [Offset(0, dy, dz, 0) for dz in (-1, 1) for dy in (-1, 0, 1)]
    offs.sort(key=lambda o: (o.dz, o.dx, o.dy, o.ddir))
    return OffsetSet(set_id, tuple(offs))


def rotate90(pose: BrickPose, k: int = 1) -> BrickPose:
    """Rotate about the vertical axis by ``k`` quarter turns, (x, y) -> (-y, x)."""
    for _ in range(k % 4):
        sx, sy = pose.spans()
        # the cell block [x, x+sx) x [y, y+sy) maps to [-y-sy+1, -y] x [x, x+sx)
        pose = BrickPose(-pose.y - sy + 1, pose.x, pose.z, pose.dir ^ 1)
    return pose
