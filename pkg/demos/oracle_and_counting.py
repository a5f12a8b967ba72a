"""Walk through the action space and the validity oracle on a small assembly.

Run:  python demos/oracle_and_counting.py
"""
import time

import numpy as np

from brickcraft.actions import compute_masks
from brickcraft.assembly import initial_graph
from brickcraft.enumeration import burnside_two, count_buildings
from brickcraft.geometry import BrickPose, OffsetSetId, enumerate_offsets
from brickcraft.targets import _OPEN, random_construction

full = enumerate_offsets(OffsetSetId.FULL)
print("offset sets:", {s.value: len(enumerate_offsets(s)) for s in OffsetSetId})

# Start from the single brick and look at what can attach to it.
g = initial_graph()
m = compute_masks(g, full, _OPEN)
print(f"one brick: {int(m.offset_valid.sum())} of {m.offset_valid.size} offsets are legal")

# Stack a second brick exactly on top.  Anything else at that level would collide
# with it, so the lower brick only accepts bricks below and the upper one only above.
g = g.add(BrickPose(0, 0, 1, 0))
m = compute_masks(g, full, _OPEN)
print("two-brick stack, legal offsets per pivot:", m.offset_valid.sum(axis=1).tolist())

# Both oracles agree, the accelerated one is much faster on a larger build.
rng = np.random.default_rng(0)
big = None
while big is None:
    big = random_construction(rng, 100, full, _OPEN)
big = big[0]
for mode in ("naive", "accelerated"):
    t0 = time.perf_counter()
    mm = compute_masks(big, full, _OPEN, mode)
    print(f"{mode:12s} 100 bricks: {1e3 * (time.perf_counter() - t0):7.2f} ms, "
          f"{int(mm.offset_valid.sum())} legal actions")

# Counting distinct buildings up to rotation and translation.
print("orbit count for two bricks (Burnside):", burnside_two()[2])
print("buildings with 1..3 bricks:", count_buildings(3, return_levels=True))
