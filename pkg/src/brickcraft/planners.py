"""Volume-oracle baselines: random, greedy, beam search and GP/EI sequential search."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.stats import norm

from .actions import candidate_poses, compute_masks
from .assembly import AssemblyGraph, BrickAction, initial_graph, place
from .env import BrickEnv, EnvConfig, EpisodeRecord
from .reward import IouTracker
from .targets import TargetInfo, brick_cells


class _Scored(NamedTuple):
    valid: np.ndarray       # (t, K) bool
    reward: np.ndarray      # (t, K) gated ΔIoU, -inf where invalid
    poses: np.ndarray       # (t, K, 4)


class _Search:
    """Shared scoring context for one target."""

    def __init__(self, target: TargetInfo, cfg: EnvConfig):
        if target.exact_volume is None:
            raise ValueError("planners need target.exact_volume")
        self.env = BrickEnv(cfg)
        self.target = target
        self.bounds = cfg.bounds or target.bounds
        self.offsets = self.env.offsets
        self.bits = target.exact_volume.bits
        self.gate = cfg.reward.gate_fraction

    def start(self):
        g = initial_graph()
        return g, IouTracker(self.bits, [brick_cells(g.nodes[0], self.bounds)])

    def score(self, graph: AssemblyGraph, tracker: IouTracker) -> _Scored:
        valid = compute_masks(graph, self.offsets, self.bounds).offset_valid
        poses, cells = candidate_poses(graph, self.offsets)
        g = cells - np.asarray(self.bounds.lo)
        inside = ((g >= 0) & (g < np.asarray(self.bits.shape))).all(axis=-1)
        gc = np.where(inside[..., None], g, 0)
        on = (self.bits[gc[..., 0], gc[..., 1], gc[..., 2]] & inside).sum(axis=-1)
        n = cells.shape[2]
        new_iou = (tracker.inter + on) / (tracker.union + n - on)
        delta = new_iou - tracker.iou()
        gated = np.where(on >= self.gate * n, delta, 0.0)
        return _Scored(valid, np.where(valid, gated, -np.inf), poses)

    def advance(self, graph, tracker, action: BrickAction):
        graph, pose = place(graph, action, self.offsets, self.bounds)
        tracker = tracker.copy()
        tracker.add(brick_cells(pose, self.bounds))
        return graph, tracker

    def record(self, actions, seed) -> EpisodeRecord:
        self.env.reset(self.target, seed)
        for a in actions:
            if self.env.done:
                break
            self.env.step(a)
        return self.env.record()


def _steps(target: TargetInfo) -> int:
    return target.budget - 1


def random_plan(target: TargetInfo, cfg: EnvConfig = EnvConfig(), seed: int = 0) -> EpisodeRecord:
    """Uniform draws over all oracle-valid (pivot, offset) pairs."""
    s = _Search(target, cfg)
    rng = np.random.default_rng(seed)
    g, tr = s.start()
    actions = []
    for _ in range(_steps(target)):
        valid = compute_masks(g, s.offsets, s.bounds).offset_valid
        flat = np.flatnonzero(valid.ravel())
        if not flat.size:
            break
        a = BrickAction(*divmod(int(flat[rng.integers(flat.size)]), len(s.offsets)))
        g, tr = s.advance(g, tr, a)
        actions.append(a)
    return s.record(actions, seed)


def greedy_plan(target: TargetInfo, cfg: EnvConfig = EnvConfig(), seed: int = 0) -> EpisodeRecord:
    """Best one-step gated reward; ties go to the lowest (pivot, offset)."""
    s = _Search(target, cfg)
    g, tr = s.start()
    actions = []
    for _ in range(_steps(target)):
        sc = s.score(g, tr)
        if not sc.valid.any():
            break
        a = BrickAction(*divmod(int(np.argmax(sc.reward.ravel())), len(s.offsets)))
        g, tr = s.advance(g, tr, a)
        actions.append(a)
    return s.record(actions, seed)


def beam_plan(target: TargetInfo, cfg: EnvConfig = EnvConfig(), width: int = 8,
              seed: int = 0) -> EpisodeRecord:
    """Width-W beam on cumulative gated reward; returns the best final IoU in the beam.

    Candidates are ranked by score, then parent rank, pivot and offset, so a
    width of 1 walks exactly the greedy path.
    """
    if width < 1:
        raise ValueError("beam width must be at least 1")
    s = _Search(target, cfg)
    g, tr = s.start()
    beam = [(0.0, g, tr, [])]
    k = len(s.offsets)
    for _ in range(_steps(target)):
        cand_score, cand_parent, cand_flat = [], [], []
        for rank, (score, g, tr, _) in enumerate(beam):
            sc = s.score(g, tr)
            flat = np.flatnonzero(sc.valid.ravel())
            cand_score.append(score + sc.reward.ravel()[flat])
            cand_parent.append(np.full(flat.size, rank))
            cand_flat.append(flat)
        scores = np.concatenate(cand_score)
        if not scores.size:
            break
        parents = np.concatenate(cand_parent)
        flats = np.concatenate(cand_flat)
        order = np.lexsort((flats, parents, -scores))[:width]
        nxt = []
        for j in order:
            _, g, tr, acts = beam[parents[j]]
            a = BrickAction(*divmod(int(flats[j]), k))
            g2, tr2 = s.advance(g, tr, a)
            nxt.append((float(scores[j]), g2, tr2, acts + [a]))
        beam = nxt
    best = max(range(len(beam)), key=lambda i: (beam[i][2].iou(), -i))
    return s.record(beam[best][3], seed)


# -- GP / expected improvement -------------------------------------------------

@dataclass
class GpModel:
    x: np.ndarray
    y: np.ndarray
    length_scale: float = 2.0
    signal: float = 1.0
    jitter: float = 1e-8
    max_jitter: float = 1e-4

    def kernel(self, a, b) -> np.ndarray:
        return matern52(a, b, self.length_scale, self.signal)

    def factor(self):
        k = self.kernel(self.x, self.x)
        jit = self.jitter
        while True:
            try:
                return cho_factor(k + jit * np.eye(len(k)), lower=True)
            except LinAlgError:
                jit *= 10
                if jit > self.max_jitter:
                    raise np.linalg.LinAlgError("kernel matrix not positive definite after jitter")


def matern52(a, b, length_scale: float = 2.0, signal: float = 1.0) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d = np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0)) / length_scale
    s5 = np.sqrt(5.0) * d
    return signal * (1 + s5 + 5.0 / 3.0 * d ** 2) * np.exp(-s5)


def gp_posterior(model: GpModel, query) -> tuple[np.ndarray, np.ndarray]:
    if len(model.x) == 0:
        raise ValueError("GP needs at least one training point")
    c = model.factor()
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    ks = model.kernel(model.x, q)
    mean = ks.T @ cho_solve(c, np.asarray(model.y, dtype=np.float64))
    v = cho_solve(c, ks)
    var = model.signal - np.einsum("ij,ij->j", ks, v)
    return mean, np.maximum(var, 0.0)


def expected_improvement(mean, variance, best: float) -> np.ndarray:
    """Closed-form EI for maximisation."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    imp = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, imp / sd, 0.0)
        ei = np.where(sd > 0, imp * norm.cdf(z) + sd * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def bo_step(poses: np.ndarray, evaluate, rng, init_points: int = 5, budget: int = 10,
            gp_kwargs=None) -> tuple[int, float]:
    """Pick one candidate index by GP/EI search; ``evaluate(i)`` gives its true score."""
    n = len(poses)
    if n <= init_points + budget:
        ys = np.array([evaluate(i) for i in range(n)])
        return int(np.argmax(ys)), float(ys.max())
    seen = [int(i) for i in rng.choice(n, size=init_points, replace=False)]
    ys = [evaluate(i) for i in seen]
    x = poses.astype(np.float64)
    for _ in range(budget):
        mean, var = gp_posterior(GpModel(x[seen], np.array(ys), **(gp_kwargs or {})), x)
        ei = expected_improvement(mean, var, max(ys))
        ei[seen] = -1.0
        i = int(np.argmax(ei))
        seen.append(i)
        ys.append(evaluate(i))
    best = max(range(len(seen)), key=lambda j: (ys[j], -seen[j]))
    return seen[best], float(ys[best])


def bo_plan(target: TargetInfo, cfg: EnvConfig = EnvConfig(), init_points: int = 5,
            budget: int = 10, seed: int = 0) -> EpisodeRecord:
    """Per construction step, search the valid candidates (embedded as resulting poses) with GP/EI."""
    s = _Search(target, cfg)
    rng = np.random.default_rng(seed)
    g, tr = s.start()
    actions = []
    k = len(s.offsets)
    for _ in range(_steps(target)):
        sc = s.score(g, tr)
        flat = np.flatnonzero(sc.valid.ravel())
        if not flat.size:
            break
        rewards = sc.reward.ravel()[flat]
        poses = sc.poses.reshape(-1, 4)[flat]
        i, _ = bo_step(poses, lambda j: float(rewards[j]), rng, init_points, budget)
        a = BrickAction(*divmod(int(flat[i]), k))
        g, tr = s.advance(g, tr, a)
        actions.append(a)
    return s.record(actions, seed)


PLANNERS = {"random": random_plan, "greedy": greedy_plan, "beam": beam_plan, "bo": bo_plan}
