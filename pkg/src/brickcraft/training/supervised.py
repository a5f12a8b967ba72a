"""Teacher-forced imitation of generating sequences (the supervised baseline)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .. import autodiff as ad
from ..actions import compute_masks
from ..assembly import initial_graph, place
from ..geometry import OffsetSetId, enumerate_offsets
from ..models import ModelConfig, init_policy, make_batch, policy_forward
from ..targets import _OPEN, GeneratedAssembly
from .avn import TrainingDiverged
from .ppo import _pick, _pivot_mask


class SlSample(NamedTuple):
    graph: object
    views: list
    pivot_mask: np.ndarray
    offset_mask: np.ndarray
    pivot: int
    offset: int


def teacher_samples(assemblies: Sequence[GeneratedAssembly], cfg: ModelConfig,
                    offset_set=OffsetSetId.RANDOM_ASSEMBLY) -> list[SlSample]:
    """One (state, next action) pair per step of every generating sequence.

    Masks are taken in unbounded space, so the recorded action is always
    among the valid ones.
    """
    offsets = enumerate_offsets(OffsetSetId(offset_set))
    out = []
    for asm in assemblies:
        g = initial_graph()
        for a in asm.actions:
            m = compute_masks(g, offsets, _OPEN)
            out.append(SlSample(g, asm.target.views, _pivot_mask(m, cfg.n_max),
                                m.offset_valid[a.pivot], a.pivot, a.offset))
            g, _ = place(g, a, offsets, _OPEN)
    return out


@dataclass
class SlConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 0.5


def sl_loss(params, cfg: ModelConfig, samples: Sequence[SlSample]):
    """Cross-entropy of the pivot and offset heads; the value head is unused."""
    batch = make_batch([s.graph for s in samples], [s.views for s in samples])
    out = policy_forward(params, cfg, batch)
    piv = np.array([s.pivot for s in samples])
    off = np.array([s.offset for s in samples])
    pm = np.array([s.pivot_mask for s in samples])
    om = np.array([s.offset_mask for s in samples])
    lp_piv = ad.masked_log_softmax(out.pivot_logits, pm)
    rows = ad.gather_rows(out.offset_logits, batch.starts + piv)
    lp_off = ad.masked_log_softmax(rows, om)
    nll = ad.mul(ad.mean(ad.add(_pick(lp_piv, piv), _pick(lp_off, off))), -1.0)
    # masked log-probs read 0, so argmax only over the valid entries
    hit = ((np.where(pm, lp_piv.data, -np.inf).argmax(axis=1) == piv)
           & (np.where(om, rows.data, -np.inf).argmax(axis=1) == off))
    return nll, float(hit.mean())


def train_supervised(samples: Sequence[SlSample], cfg: ModelConfig, sc: SlConfig = SlConfig(),
                     params=None):
    """Returns (params, [(loss, accuracy)] per step)."""
    if not samples:
        raise ValueError("no teacher samples")
    rng = np.random.default_rng(sc.seed)
    params = params if params is not None else init_policy(cfg, sc.seed)
    opt = ad.Adam(params, lr=sc.lr, clip_norm=sc.clip_norm)
    curve = []
    for _ in range(sc.epochs):
        order = rng.permutation(len(samples))
        for s in range(0, len(samples), sc.batch_size):
            chunk = [samples[i] for i in order[s:s + sc.batch_size]]
            loss, acc = sl_loss(params, cfg, chunk)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged("non-finite supervised loss")
            params.zero_grad()
            ad.backward(loss)
            opt.step()
            curve.append((loss.item(), acc))
    return params, curve


def sl_accuracy(params, cfg: ModelConfig, samples: Sequence[SlSample]) -> float:
    """Fraction of steps where the argmax action equals the recorded one."""
    return sl_loss(params, cfg, samples)[1]
