"""Voxel IoU, its one-step change and the overlap-gated step reward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RewardConfig:
    gate_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gate_fraction <= 1.0:
            raise ValueError(f"gate_fraction must lie in [0, 1], got {self.gate_fraction}")


def _bits(g) -> np.ndarray:
    return g.bits if hasattr(g, "bits") else np.asarray(g, dtype=bool)


def iou(a, b) -> float:
    """Intersection over union of two occupancy grids; 0 when both are empty."""
    a, b = _bits(a), _bits(b)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def delta_iou(prev, cur, target) -> float:
    return iou(cur, target) - iou(prev, target)


def gate_passes(on_target: int, n_cells: int = 8, cfg: RewardConfig = RewardConfig()) -> bool:
    return on_target >= cfg.gate_fraction * n_cells


def step_reward(prev, cur, new_brick_cells, target, cfg: RewardConfig = RewardConfig()) -> float:
    """ΔIoU when at least ``gate_fraction`` of the new brick lies on the target, else 0."""
    t = _bits(target)
    cells = np.asarray(new_brick_cells)
    on = int(t[tuple(cells.T)].sum())
    if not gate_passes(on, len(cells), cfg):
        return 0.0
    return delta_iou(prev, cur, target)


class IouTracker:
    """Running |C ∩ T| and |C ∪ T| for an append-only construction.

    Each brick updates both counters from its own 8 cells, so a step costs
    O(8) instead of a full grid scan.
    """

    def __init__(self, target, initial_cells=()):
        self.target = _bits(target)
        self.inter = 0
        self.union = int(np.count_nonzero(self.target))
        for cells in initial_cells:
            self.add(cells)

    def iou(self) -> float:
        return self.inter / self.union if self.union else 0.0

    def preview(self, cells) -> tuple[int, int, int]:
        """(on-target cells, new intersection, new union) if ``cells`` were added."""
        cells = np.asarray(cells)
        on = int(self.target[tuple(cells.T)].sum())
        return on, self.inter + on, self.union + len(cells) - on

    def add(self, cells) -> tuple[float, int]:
        """Add a brick's (disjoint, previously empty) cells; returns (ΔIoU, on-target count)."""
        before = self.iou()
        on, self.inter, self.union = self.preview(cells)
        return self.iou() - before, on

    def copy(self) -> "IouTracker":
        other = IouTracker.__new__(IouTracker)
        other.target, other.inter, other.union = self.target, self.inter, self.union
        return other
