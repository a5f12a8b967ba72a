"""Voxel targets: voxelization, orthographic views, MNIST digits and random assemblies."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import formats
from .actions import compute_masks
from .assembly import WORLD32, AssemblyGraph, BrickAction, Bounds, ConfigError, initial_graph, place
from .geometry import OffsetSet, OffsetSetId, enumerate_offsets, footprint

VIEW = 14
MAX_MODELNET_BUDGET = 60

# MNIST world: x is the 4-cell extrusion depth (a dir-0 brick's long axis),
# y the image columns, z the image rows counted from the bottom.  The initial
# brick covers y 6..7, i.e. the centre of the 14 columns.
MNIST_BOUNDS = Bounds((0, -6, 0), (4, 8, 14))


class EmptyTarget(ValueError):
    pass


class TargetMode(str, enum.Enum):
    MNIST = "mnist"
    RANDOM_ASSEMBLY = "random_assembly"
    MODELNET = "modelnet"


@dataclass(eq=False)
class VoxelGrid:
    """Dense binary occupancy; serialised x-fastest, then y, then z."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 3:
            raise ValueError(f"voxel grid must be 3-D, got shape {self.bits.shape}")

    @classmethod
    def empty(cls, dims) -> "VoxelGrid":
        return cls(np.zeros(tuple(dims), dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.bits.shape)

    def volume(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return (isinstance(other, VoxelGrid) and self.dims == other.dims
                and bool((self.bits == other.bits).all()))

    def occupied(self) -> np.ndarray:
        return np.argwhere(self.bits)

    def shifted(self, shift) -> "VoxelGrid":
        """Translate the content by an integer vector (content must stay inside)."""
        idx = self.occupied() + np.asarray(shift)
        if idx.size and ((idx < 0).any() or (idx >= self.dims).any()):
            raise ValueError("shift moves content outside the grid")
        out = np.zeros(self.dims, dtype=bool)
        out[tuple(idx.T)] = True
        return VoxelGrid(out)


def read_voxel(path) -> VoxelGrid:
    return VoxelGrid(formats.read_bbvox(path))


def write_voxel(path, grid: VoxelGrid) -> None:
    formats.write_bbvox(path, grid.bits)


def voxelize(graph: AssemblyGraph, bounds: Bounds) -> VoxelGrid:
    bits = np.zeros(bounds.dims, dtype=bool)
    lo = np.asarray(bounds.lo)
    for p in graph.nodes:
        if not bounds.contains(p):
            raise ValueError(f"brick {tuple(p)} lies outside {bounds}")
        idx = np.array(sorted(footprint(p))) - lo
        bits[tuple(idx.T)] = True
    return VoxelGrid(bits)


def brick_cells(pose, bounds: Bounds) -> np.ndarray:
    """Grid indices (8, 3) of one brick."""
    return np.array(sorted(footprint(pose))) - np.asarray(bounds.lo)


def bottom_center_shift(grid: VoxelGrid) -> np.ndarray:
    """Shift putting min z at 0 and the xy bounding-box centre on the grid centre."""
    occ = grid.occupied()
    if not len(occ):
        return np.zeros(3, dtype=np.int64)
    mn, mx = occ.min(axis=0), occ.max(axis=0)
    dims = np.asarray(grid.dims)
    shift = np.zeros(3, dtype=np.int64)
    for a in (0, 1):
        # bbox centre (mn + mx + 1) / 2 onto dims / 2, rounded down
        shift[a] = (dims[a] - (mn[a] + mx[a] + 1)) // 2
    shift[2] = -mn[2]
    return shift


def normalize_bottom_center(grid: VoxelGrid) -> VoxelGrid:
    return grid.shifted(bottom_center_shift(grid))


def _window(lo: int, hi: int, size: int, n: int = VIEW) -> tuple[int, bool]:
    """Start of an n-wide window centred on [lo, hi], clamped to [0, size)."""
    centre = (lo + hi + 1) // 2
    start = min(max(centre - n // 2, 0), max(size - n, 0))
    return start, (hi - lo + 1) > n


def _crop(img: np.ndarray, n: int = VIEW) -> tuple[np.ndarray, bool]:
    out = np.zeros((n, n), dtype=bool)
    on = np.argwhere(img)
    if not len(on):
        return out, False
    (r0, c0), (r1, c1) = on.min(axis=0), on.max(axis=0)
    rs, rclip = _window(r0, r1, img.shape[0], n)
    cs, cclip = _window(c0, c1, img.shape[1], n)
    patch = img[rs:rs + n, cs:cs + n]
    out[:patch.shape[0], :patch.shape[1]] = patch
    return out, rclip or cclip


def project_views(grid: VoxelGrid, return_clipped: bool = False):
    """Front (+y), right (+x) and top (-z) orthographic silhouettes, 14x14 each.

    Image rows run top to bottom (decreasing z; decreasing y for the top
    view), columns left to right.  Each view is cropped to a window centred
    on its occupied bounding box and clamped to the grid edges.
    """
    b = grid.bits
    front = b.any(axis=1).T[::-1]        # (z, x)
    right = b.any(axis=0).T[::-1]        # (z, y)
    top = b.any(axis=2).T[::-1]          # (y, x)
    views, clipped = [], False
    for img in (front, right, top):
        v, c = _crop(np.ascontiguousarray(img))
        views.append(v)
        clipped |= c
    return (views, clipped) if return_clipped else views


@dataclass
class TargetInfo:
    views: list
    budget: int
    mode: TargetMode
    exact_volume: VoxelGrid | None = None
    bounds: Bounds = WORLD32
    target_id: str = ""
    clipped: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = TargetMode(self.mode)
        want = 1 if self.mode is TargetMode.MNIST else 3
        if len(self.views) != want:
            raise ValueError(f"{self.mode.value} targets carry {want} view(s), got {len(self.views)}")
        self.views = [np.asarray(v, dtype=bool) for v in self.views]
        for v in self.views:
            if v.shape != (VIEW, VIEW):
                raise ValueError(f"views must be {VIEW}x{VIEW}, got {v.shape}")

    @property
    def offset_set_id(self) -> OffsetSetId:
        return {TargetMode.MNIST: OffsetSetId.MNIST,
                TargetMode.RANDOM_ASSEMBLY: OffsetSetId.RANDOM_ASSEMBLY,
                TargetMode.MODELNET: OffsetSetId.MODELNET}[self.mode]


def mnist_budget(on_pixels: int) -> int:
    # ceil(1.1 * n) in integer arithmetic: 1.1 * 60 is 66.00000000000001 in floats
    return (11 * int(on_pixels) + 9) // 10


def brick_budget(mode, *, on_pixels: int | None = None, brick_count: int | None = None,
                 configured: int | None = None) -> int:
    mode = TargetMode(mode)
    if mode is TargetMode.MNIST:
        if on_pixels is None:
            raise ConfigError("MNIST budget needs the on-pixel count")
        return mnist_budget(on_pixels)
    if mode is TargetMode.RANDOM_ASSEMBLY:
        if brick_count is None:
            raise ConfigError("random-assembly budget needs the generated brick count")
        return int(brick_count)
    if configured is None:
        raise ConfigError("ModelNet targets need a configured brick budget")
    if not 1 <= configured <= MAX_MODELNET_BUDGET:
        raise ConfigError(f"ModelNet budget must be in [1, {MAX_MODELNET_BUDGET}], got {configured}")
    return int(configured)


def mnist_image14(image28) -> np.ndarray:
    img = np.asarray(image28)
    if img.shape != (28, 28):
        raise ValueError(f"MNIST images are 28x28, got {img.shape}")
    on = img >= 128
    return on.reshape(14, 2, 14, 2).any(axis=(1, 3))


def mnist_to_target(image28, target_id: str = "") -> TargetInfo:
    """Binarise, 2x2 max-pool to 14x14, extrude 4 deep and seat at the bottom centre."""
    img = mnist_image14(image28)
    n_on = int(img.sum())
    if n_on == 0:
        raise EmptyTarget("image has no pixels >= 128")
    dims = MNIST_BOUNDS.dims                       # (4, 14, 14)
    bits = np.zeros(dims, dtype=bool)
    # image row r (top = 0) becomes z = 13 - r; column c becomes y = c
    bits[:, :, :] = img.T[None, :, ::-1]
    shift = bottom_center_shift(VoxelGrid(bits))
    shift[0] = 0      # depth is always full
    vol = VoxelGrid(bits).shifted(shift)
    return TargetInfo(views=[img], budget=mnist_budget(n_on), mode=TargetMode.MNIST,
                      exact_volume=vol, bounds=MNIST_BOUNDS, target_id=target_id,
                      meta={"on_pixels": n_on})


def voxel_target(grid: VoxelGrid, budget: int, target_id: str = "",
                 mode=TargetMode.MODELNET) -> TargetInfo:
    """Wrap a pre-voxelised 32^3 grid (e.g. a ModelNet object) as a target."""
    if grid.dims != WORLD32.dims:
        raise ValueError(f"expected a {WORLD32.dims} grid, got {grid.dims}")
    if grid.volume() == 0:
        raise EmptyTarget("target grid is empty")
    vol = normalize_bottom_center(grid)
    views, clipped = project_views(vol, return_clipped=True)
    budget = brick_budget(mode, configured=budget, brick_count=budget)
    return TargetInfo(views=views, budget=budget, mode=mode, exact_volume=vol,
                      bounds=WORLD32, target_id=target_id, clipped=clipped)


class GeneratedAssembly(NamedTuple):
    graph: AssemblyGraph
    volume: VoxelGrid
    target: TargetInfo
    actions: tuple
    shift: tuple
    attempts: int


_OPEN = Bounds((-10_000, -10_000, -10_000), (10_000, 10_000, 10_000))


def random_construction(rng: np.random.Generator, n_bricks: int, offsets: OffsetSet,
                        bounds: Bounds = _OPEN):
    """Grow an assembly by uniform draws over all valid (pivot, offset) pairs.

    Returns (graph, actions), or None on a dead end.
    """
    g = initial_graph()
    actions = []
    while len(g) < n_bricks:
        valid = compute_masks(g, offsets, bounds).offset_valid
        flat = np.flatnonzero(valid.ravel())
        if not flat.size:
            return None
        j = int(flat[rng.integers(flat.size)])
        a = BrickAction(*divmod(j, len(offsets)))
        g, _ = place(g, a, offsets, bounds)
        actions.append(a)
    return g, tuple(actions)


def gen_random_assembly(rng: np.random.Generator, brick_count_range=(10, 15),
                        offset_set=OffsetSetId.RANDOM_ASSEMBLY, target_id: str = "",
                        max_attempts: int = 1000) -> GeneratedAssembly:
    """One random target: bricks, its normalised 32^3 volume and three views.

    Episodes that dead-end or do not fit the 32^3 world are resampled.
    """
    offsets = offset_set if isinstance(offset_set, OffsetSet) else enumerate_offsets(offset_set)
    lo, hi = brick_count_range
    dims = np.asarray(WORLD32.dims)
    for attempt in range(1, max_attempts + 1):
        n = int(rng.integers(lo, hi + 1))
        built = random_construction(rng, n, offsets)
        if built is None:
            continue
        g, actions = built
        cells = np.array([c for p in g.nodes for c in footprint(p)])
        if ((cells.max(axis=0) - cells.min(axis=0) + 1) > dims).any():
            continue
        raw = np.zeros(WORLD32.dims, dtype=bool)
        raw[tuple((cells - cells.min(axis=0)).T)] = True
        grid = VoxelGrid(raw)
        shift = bottom_center_shift(grid)
        vol = grid.shifted(shift)
        # translation taking the generated (origin-based) bricks onto the target
        world_shift = tuple(int(v) for v in cells.min(axis=0) * -1 + shift + np.asarray(WORLD32.lo))
        views, clipped = project_views(vol, return_clipped=True)
        target = TargetInfo(views=views, budget=len(g), mode=TargetMode.RANDOM_ASSEMBLY,
                            exact_volume=vol, bounds=WORLD32, target_id=target_id,
                            clipped=clipped, meta={"world_shift": list(world_shift)})
        return GeneratedAssembly(g, vol, target, actions, world_shift, attempt)
    raise RuntimeError(f"no valid assembly after {max_attempts} attempts")


def tower_target(levels: int = 4) -> TargetInfo:
    """A straight stack of ``levels`` aligned bricks rising from the initial brick."""
    g = initial_graph()
    for z in range(1, levels):
        g = g.add(g.nodes[0].translated(0, 0, z))
    vol = voxelize(g, WORLD32)
    return TargetInfo(views=project_views(vol), budget=levels, mode=TargetMode.RANDOM_ASSEMBLY,
                      exact_volume=vol, bounds=WORLD32, target_id=f"tower{levels}")


# -- dataset records --------------------------------------------------------

def save_target(target: TargetInfo, directory: str | Path, extra: dict | None = None) -> dict:
    """Write views (PBM) and volume (BBVOX1) next to each other; return the JSON record."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tid = target.target_id or "target"
    view_paths = []
    for i, v in enumerate(target.views):
        p = d / f"{tid}_view{i}.pbm"
        formats.write_pbm(p, v)
        view_paths.append(p.name)
    rec = {"target_id": tid, "mode": target.mode.value, "budget": target.budget,
           "views": view_paths, "bounds": target.bounds.to_list(), "clipped": bool(target.clipped),
           "offset_set": target.offset_set_id.value}
    if target.exact_volume is not None:
        vp = d / f"{tid}.bbvox"
        write_voxel(vp, target.exact_volume)
        rec["volume"] = vp.name
    rec.update(target.meta)
    if extra:
        rec.update(extra)
    return rec


_RECORD_KEYS = {"target_id", "mode", "budget", "views", "bounds", "clipped", "offset_set", "volume"}


def load_target(record: dict, directory: str | Path) -> TargetInfo:
    d = Path(directory)
    views = [formats.read_pbm(d / p) for p in record["views"]]
    vol = read_voxel(d / record["volume"]) if record.get("volume") else None
    meta = {k: v for k, v in record.items() if k not in _RECORD_KEYS}
    return TargetInfo(views=views, budget=int(record["budget"]), mode=record["mode"],
                      exact_volume=vol, bounds=Bounds.from_list(record["bounds"]),
                      target_id=record["target_id"], clipped=bool(record.get("clipped", False)),
                      meta=meta)
