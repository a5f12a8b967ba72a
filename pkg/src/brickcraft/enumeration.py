"""Counting distinct n-brick buildings up to translation and vertical-axis rotation."""
from __future__ import annotations

import itertools
from typing import Iterable

import numpy as np

from .actions import candidate_poses, compute_masks
from .assembly import AssemblyGraph, initial_graph
from .geometry import LONG, SHORT, BrickPose, OffsetSetId, enumerate_offsets
from .targets import _OPEN


class EnumerationLimit(MemoryError):
    def __init__(self, level: int, counts: list[int], limit: int):
        super().__init__(f"more than {limit} buildings at level {level}; counts so far {counts}")
        self.level, self.counts, self.limit = level, counts, limit


def _rotate(poses: np.ndarray) -> np.ndarray:
    """Quarter turn (x, y) -> (-y, x) of (n, 4) anchor/dir rows; anchors stay min corners."""
    x, y, z, d = poses.T
    sy = np.where(d == 0, SHORT, LONG)
    return np.stack([-y - sy + 1, x, z, 1 - d], axis=1)


def canonical_key(building) -> bytes:
    """Smallest of the four rotated, origin-translated, sorted pose lists."""
    p = np.array([list(q) for q in getattr(building, "nodes", building)], dtype=np.int64).reshape(-1, 4)
    best = None
    for _ in range(4):
        q = p.copy()
        q[:, :3] -= q[:, :3].min(axis=0)
        q = q[np.lexsort(q.T[::-1])]
        b = q.tobytes()
        if best is None or b < best:
            best = b
        p = _rotate(p)
    return best


def key_to_poses(key: bytes) -> np.ndarray:
    return np.frombuffer(key, dtype=np.int64).reshape(-1, 4)


def expand(key: bytes, offsets) -> Iterable[bytes]:
    """Keys of every building reachable by one valid placement."""
    g = AssemblyGraph(BrickPose(*map(int, r)) for r in key_to_poses(key))
    valid = compute_masks(g, offsets, _OPEN).offset_valid
    poses, _ = candidate_poses(g, offsets)
    base = key_to_poses(key)
    for p in poses[valid]:
        yield canonical_key(np.vstack([base, p[None]]))


def count_buildings(n: int, offset_set=OffsetSetId.FULL, max_keys: int = 20_000_000,
                    return_levels: bool = False):
    """Breadth-first growth from one brick with per-level deduplication."""
    if n < 1:
        raise ValueError("n must be at least 1")
    offsets = enumerate_offsets(OffsetSetId(offset_set))
    level = {canonical_key(initial_graph())}
    counts = [1]
    for k in range(2, n + 1):
        nxt: set[bytes] = set()
        for key in level:
            nxt.update(expand(key, offsets))
            if len(nxt) > max_keys:
                raise EnumerationLimit(k, counts, max_keys)
        level = nxt
        counts.append(len(level))
    return counts if return_levels else counts[-1]


# -- independent oracles -------------------------------------------------------

def _cells(x, y, z, d):
    sx, sy = (LONG, SHORT) if d == 0 else (SHORT, LONG)
    return frozenset((x + i, y + j, z) for i in range(sx) for j in range(sy))


def _touch(a: frozenset, b: frozenset) -> bool:
    return any((x, y, z + dz) in b for (x, y, z) in a for dz in (-1, 1))


def _rot_cells(cells):
    return frozenset((-y, x, z) for (x, y, z) in cells)


def _norm(bricks):
    allc = [c for b in bricks for c in b]
    mx = min(c[0] for c in allc)
    my = min(c[1] for c in allc)
    mz = min(c[2] for c in allc)
    return frozenset(frozenset((x - mx, y - my, z - mz) for (x, y, z) in b) for b in bricks)


def _sym_key(bricks):
    forms = []
    cur = list(bricks)
    for _ in range(4):
        forms.append(_norm(cur))
        cur = [_rot_cells(b) for b in cur]
    return min(forms, key=lambda s: sorted(tuple(sorted(b)) for b in s))


def naive_count(n: int) -> int:
    """Grow cell sets brick by brick with brute-force contact tests; dedup under rotations.

    Shares nothing with the offset tables; practical up to n = 3.
    """
    start = (_cells(0, 0, 0, 0),)
    level = {_sym_key(start): start}
    for _ in range(n - 1):
        nxt = {}
        for bricks in level.values():
            occ = set().union(*bricks)
            xs = [c[0] for c in occ]
            ys = [c[1] for c in occ]
            zs = [c[2] for c in occ]
            for x, y, z, d in itertools.product(range(min(xs) - LONG, max(xs) + 2),
                                                range(min(ys) - LONG, max(ys) + 2),
                                                range(min(zs) - 1, max(zs) + 2), (0, 1)):
                c = _cells(x, y, z, d)
                if c & occ or not any(_touch(c, b) for b in bricks):
                    continue
                new = bricks + (c,)
                nxt.setdefault(_sym_key(new), new)
        level = nxt
    return len(level)


def burnside_two() -> tuple[int, int, int]:
    """(placements above a fixed brick, those fixed by a half turn, orbit count)."""
    base = _cells(0, 0, 0, 0)
    above = [_cells(x, y, 1, d) for x in range(-4, 5) for y in range(-4, 5) for d in (0, 1)]
    above = [c for c in above if _touch(c, base)]
    # the half turn about the base's centre maps (x, y) -> (3 - x, 1 - y)
    fixed = sum(frozenset((3 - x, 1 - y, z) for (x, y, z) in c) == c for c in above)
    return len(above), fixed, (len(above) + fixed) // 2
