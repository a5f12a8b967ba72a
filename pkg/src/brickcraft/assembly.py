"""Assembly graph, the construction state and its deterministic transition."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, NamedTuple

import numpy as np

from .geometry import BrickPose, OffsetSet, apply_offset, footprint


class InvalidAction(Exception):
    """The requested placement overlaps an existing brick or leaves the world."""

    def __init__(self, pose: BrickPose, reason: str):
        super().__init__(f"invalid placement {tuple(pose)}: {reason}")
        self.pose = pose
        self.reason = reason


class ConfigError(ValueError):
    pass


class Bounds(NamedTuple):
    """Half-open integer box ``lo <= cell < hi``."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def contains(self, pose: BrickPose) -> bool:
        sx, sy = pose.spans()
        lo, hi = self.lo, self.hi
        return (
            lo[0] <= pose.x and pose.x + sx <= hi[0]
            and lo[1] <= pose.y and pose.y + sy <= hi[1]
            and lo[2] <= pose.z < hi[2]
        )

    def to_list(self) -> list[list[int]]:
        return [list(self.lo), list(self.hi)]

    @classmethod
    def from_list(cls, v) -> "Bounds":
        return cls(tuple(int(a) for a in v[0]), tuple(int(a) for a in v[1]))


# 32^3 world; the initial brick (anchor at the origin, dir 0) covers cells
# x 14..17, y 15..16, z 0 so its centre sits on the grid's bottom centre.
WORLD32 = Bounds((-14, -15, 0), (18, 17, 32))


class BrickAction(NamedTuple):
    pivot: int
    offset: int


class AssemblyGraph:
    """Bricks as nodes in placement order; undirected contacts stored both ways.

    Treated as immutable: :meth:`add` returns a new graph.
    """

    __slots__ = ("nodes", "adjacency", "_cells")

    def __init__(self, nodes: Iterable[BrickPose], adjacency=None, cells=None):
        self.nodes: tuple[BrickPose, ...] = tuple(nodes)
        if cells is None:
            cells = {}
            for i, p in enumerate(self.nodes):
                for c in footprint(p):
                    cells[c] = i
        self._cells: dict = cells
        if adjacency is None:
            adjacency = tuple(
                tuple(sorted(self._contacts(p) - {i})) for i, p in enumerate(self.nodes)
            )
        self.adjacency: tuple[tuple[int, ...], ...] = adjacency

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return isinstance(other, AssemblyGraph) and self.nodes == other.nodes

    def __hash__(self):
        return hash(self.nodes)

    def __repr__(self):
        return f"AssemblyGraph({list(map(tuple, self.nodes))})"

    @property
    def cells(self) -> dict:
        """Occupied cell -> owning node index (read-only view by convention)."""
        return self._cells

    def _contacts(self, pose: BrickPose) -> set[int]:
        out = set()
        for (x, y, z) in footprint(pose):
            for zz in (z - 1, z + 1):
                j = self._cells.get((x, y, zz))
                if j is not None:
                    out.add(j)
        return out

    def is_free(self, pose: BrickPose) -> bool:
        cells = self._cells
        return not any(c in cells for c in footprint(pose))

    def add(self, pose: BrickPose) -> "AssemblyGraph":
        """Append ``pose`` without validity checks; contacts to every touching brick."""
        n = len(self.nodes)
        nbrs = sorted(self._contacts(pose))
        adjacency = list(self.adjacency)
        for j in nbrs:
            adjacency[j] = adjacency[j] + (n,)
        adjacency.append(tuple(nbrs))
        cells = dict(self._cells)
        for c in footprint(pose):
            cells[c] = n
        return AssemblyGraph(self.nodes + (pose,), tuple(adjacency), cells)

    def edges(self) -> list[tuple[int, int]]:
        """Directed edge list (both directions), sorted."""
        return sorted((i, j) for i, nb in enumerate(self.adjacency) for j in nb)

    def edge_feature(self, i: int, j: int) -> tuple[int, int, int, int]:
        if j not in self.adjacency[i]:
            raise ValueError(f"({i}, {j}) is not an edge")
        a, b = self.nodes[i], self.nodes[j]
        return (a.x - b.x, a.y - b.y, a.z - b.z, a.dir ^ b.dir)

    def node_features(self) -> np.ndarray:
        return np.array([list(p) for p in self.nodes], dtype=np.int64).reshape(-1, 4)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src, dst, features) with features[k] = e_{src,dst}; src receives the message."""
        e = self.edges()
        if not e:
            return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 4), np.int64))
        src = np.array([i for i, _ in e], np.int64)
        dst = np.array([j for _, j in e], np.int64)
        nf = self.node_features()
        feat = nf[src] - nf[dst]
        feat[:, 3] = nf[src, 3] ^ nf[dst, 3]
        return src, dst, feat

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in self.adjacency[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == len(self.nodes)


def initial_graph() -> AssemblyGraph:
    return AssemblyGraph([BrickPose(0, 0, 0, 0)])


@dataclass(frozen=True)
class ConstructionState:
    graph: AssemblyGraph
    target: Any
    budget: int

    @property
    def bricks_placed(self) -> int:
        return len(self.graph)

    @property
    def at_budget(self) -> bool:
        return self.bricks_placed >= self.budget


def init_state(target, budget: int) -> ConstructionState:
    if budget < 1:
        raise ConfigError(f"brick budget must be >= 1, got {budget}")
    return ConstructionState(initial_graph(), target, int(budget))


def place(graph: AssemblyGraph, action: BrickAction, offsets: OffsetSet, bounds: Bounds):
    """Validated append; returns (new graph, new pose)."""
    if not (0 <= action.pivot < len(graph)) or not (0 <= action.offset < len(offsets)):
        raise IndexError(f"action {tuple(action)} out of range")
    pose = apply_offset(graph.nodes[action.pivot], offsets[action.offset])
    if not bounds.contains(pose):
        raise InvalidAction(pose, "outside world bounds")
    if not graph.is_free(pose):
        raise InvalidAction(pose, "overlaps an existing brick")
    return graph.add(pose), pose


def transition(state: ConstructionState, action: BrickAction, offsets: OffsetSet,
               bounds: Bounds) -> ConstructionState:
    graph, _ = place(state.graph, action, offsets, bounds)
    return ConstructionState(graph, state.target, state.budget)


def replay(actions: Iterable[BrickAction], offsets: OffsetSet, bounds: Bounds,
           graph: AssemblyGraph | None = None) -> AssemblyGraph:
    g = initial_graph() if graph is None else graph
    for a in actions:
        g, _ = place(g, BrickAction(*a), offsets, bounds)
    return g


# -- JSON-lines logs ---------------------------------------------------------

@dataclass
class StepEntry:
    t: int
    pivot: int
    offset: int
    pose: BrickPose
    reward: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"t": self.t, "pivot": self.pivot, "offset": self.offset,
             "pose": self.pose.as_list(), "reward": self.reward}
        d.update(self.extra)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "StepEntry":
        d = dict(d)
        return cls(int(d.pop("t")), int(d.pop("pivot")), int(d.pop("offset")),
                   BrickPose(*map(int, d.pop("pose"))), float(d.pop("reward", 0.0)), d)


def write_log(dest: str | Path | IO[str], header: dict, steps: Iterable[StepEntry]) -> None:
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(s.to_json(), sort_keys=True) for s in steps]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def parse_log(text: str) -> tuple[dict, list[StepEntry]]:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty log")
    return rows[0], [StepEntry.from_json(r) for r in rows[1:]]


def read_log(src: str | Path) -> tuple[dict, list[StepEntry]]:
    return parse_log(Path(src).read_text())
