"""Ground-truth action validity, masks and masked sampling."""
from __future__ import annotations

from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .assembly import AssemblyGraph, BrickAction, Bounds
from .geometry import BrickPose, OffsetSet, apply_offset, footprint, overlaps


class NoValidAction(Exception):
    """Every pivot is masked out; the caller ends the episode."""


class ActionMasks(NamedTuple):
    pivot_valid: np.ndarray   # (t,) bool
    offset_valid: np.ndarray  # (t, n_off) bool

    @property
    def any_valid(self) -> bool:
        return bool(self.pivot_valid.any())

    def count_valid(self) -> int:
        return int(self.offset_valid.sum())

    @classmethod
    def from_offsets(cls, offset_valid: np.ndarray) -> "ActionMasks":
        offset_valid = np.asarray(offset_valid, dtype=bool)
        return cls(offset_valid.any(axis=1), offset_valid)


def _naive(graph: AssemblyGraph, offsets: OffsetSet, bounds: Bounds) -> np.ndarray:
    nodes = graph.nodes
    out = np.zeros((len(nodes), len(offsets)), dtype=bool)
    for i, pivot in enumerate(nodes):
        for k, off in enumerate(offsets.offsets):
            cand = apply_offset(pivot, off)
            if not bounds.contains(cand):
                continue
            ok = True
            for other in nodes:
                if overlaps(cand, other):
                    ok = False
                    break
            out[i, k] = ok
    return out


@lru_cache(maxsize=None)
def _offset_tables(offsets: OffsetSet):
    """Per pivot dir: new-brick cell deltas (K, 8, 3), anchor deltas (K, 3), spans (K, 2)."""
    cells, anchors, spans = [], [], []
    for d in (0, 1):
        cd, ad, sd = [], [], []
        for off in offsets.offsets:
            new = apply_offset(BrickPose(0, 0, 0, d), off)
            cd.append(sorted(footprint(new)))
            ad.append(new.anchor)
            sd.append(new.spans())
        cells.append(np.array(cd, dtype=np.int64))
        anchors.append(np.array(ad, dtype=np.int64))
        spans.append(np.array(sd, dtype=np.int64))
    return np.stack(cells), np.stack(anchors), np.stack(spans)


# Margin around the occupied box that contains every candidate cell of every
# pivot inside it (a new brick reaches at most 7 studs and one level away).
_PAD = np.array([8, 8, 1])


def _accelerated(graph: AssemblyGraph, offsets: OffsetSet, bounds: Bounds) -> np.ndarray:
    # Occupied cells go into a direct-address table over their padded bounding
    # box; every candidate cell is then one flat-index lookup, all pivots at once.
    occ_cells = np.array(list(graph.cells), dtype=np.int64)
    lo = occ_cells.min(axis=0) - _PAD
    shape = occ_cells.max(axis=0) + _PAD - lo + 1
    strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    table = np.zeros(int(shape.prod()), dtype=bool)
    table[(occ_cells - lo) @ strides] = True

    cell_d, anchor_d, span_d = _offset_tables(offsets)
    nf = graph.node_features()
    dirs = nf[:, 3]
    base = (nf[:, :3] - lo) @ strides
    flat = base[:, None, None] + (cell_d @ strides)[dirs]       # (t, K, 8)
    free = ~table[flat].any(axis=2)

    anchor = nf[:, None, :3] + anchor_d[dirs]                   # (t, K, 3)
    span = span_d[dirs]
    blo = np.asarray(bounds.lo)
    bhi = np.asarray(bounds.hi)
    inside = (
        (anchor >= blo).all(axis=2)
        & (anchor[..., 0] + span[..., 0] <= bhi[0])
        & (anchor[..., 1] + span[..., 1] <= bhi[1])
        & (anchor[..., 2] < bhi[2])
    )
    return free & inside


def candidate_poses(graph: AssemblyGraph, offsets: OffsetSet) -> tuple[np.ndarray, np.ndarray]:
    """Poses (t, K, 4) and world cells (t, K, 8, 3) of every (pivot, offset) candidate."""
    cell_d, anchor_d, _ = _offset_tables(offsets)
    nf = graph.node_features()
    dirs = nf[:, 3]
    anchor = nf[:, None, :3] + anchor_d[dirs]
    new_dir = dirs[:, None] ^ np.array([o.ddir for o in offsets.offsets], dtype=np.int64)[None, :]
    poses = np.concatenate([anchor, new_dir[..., None]], axis=2)
    cells = nf[:, None, None, :3] + cell_d[dirs]
    return poses, cells


def compute_masks(graph: AssemblyGraph, offsets: OffsetSet, bounds: Bounds,
                  mode: str = "accelerated") -> ActionMasks:
    """Validity of every (pivot, offset) pair.

    ``naive`` tests each candidate against every placed brick, O(K t^2);
    ``accelerated`` looks every candidate cell up in an occupancy table, O(K t).
    """
    if mode == "naive":
        valid = _naive(graph, offsets, bounds)
    elif mode == "accelerated":
        valid = _accelerated(graph, offsets, bounds)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return ActionMasks.from_offsets(valid)


def is_valid_action(graph: AssemblyGraph, action: BrickAction, offsets: OffsetSet,
                    bounds: Bounds) -> bool:
    pivot, k = action
    if not (0 <= pivot < len(graph)) or not (0 <= k < len(offsets)):
        raise IndexError(f"action {tuple(action)} out of range")
    cand = apply_offset(graph.nodes[pivot], offsets[k])
    return bounds.contains(cand) and graph.is_free(cand)


def masked_probs(scores, valid) -> np.ndarray:
    """Softmax over the valid entries; invalid entries get exactly zero."""
    scores = np.asarray(scores, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise NoValidAction("all entries masked")
    z = np.where(valid, scores, -np.inf)
    z = z - z[valid].max()
    p = np.where(valid, np.exp(z), 0.0)
    return p / p.sum()


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(p)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    i = min(i, len(p) - 1)
    # never land on a zero-probability entry through rounding at the edges
    while p[i] == 0.0:
        i -= 1
    return i


def masked_sample(pivot_scores, offset_scores_fn: Callable[[int], np.ndarray],
                  masks: ActionMasks, rng: np.random.Generator):
    """Sample a pivot, then an offset for it; returns (action, log-probability)."""
    t = len(masks.pivot_valid)
    pp = masked_probs(np.asarray(pivot_scores)[:t], masks.pivot_valid)
    i = _draw(pp, rng)
    po = masked_probs(offset_scores_fn(i), masks.offset_valid[i])
    k = _draw(po, rng)
    return BrickAction(i, k), float(np.log(pp[i]) + np.log(po[k]))
