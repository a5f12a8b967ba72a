"""Target CNN, graph-network encoders, policy/value heads and the validity network."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .actions import ActionMasks
from .assembly import AssemblyGraph
from .autodiff import ParamStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 192
    view_dim: int = 64
    gnn_layers: int = 2
    n_max: int = 45
    n_off: int = 92
    views_count: int = 3
    cnn_channels: tuple = (32, 64)
    message_passing: bool = True     # False: GN layers replaced by node-wise MLPs

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.view_dim <= 0:
            raise ValueError("hidden_dim and view_dim must be positive")
        object.__setattr__(self, "cnn_channels", tuple(self.cnn_channels))

    @property
    def z_dim(self) -> int:
        return self.views_count * self.view_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def for_task(cls, task: str, **kw) -> "ModelConfig":
        """Defaults per benchmark: 64 hidden / 1 view for MNIST, 192 / 3 views otherwise."""
        base = {
            "mnist": dict(hidden_dim=64, views_count=1, n_max=45, n_off=6),
            "random_assembly": dict(hidden_dim=192, views_count=3, n_max=45, n_off=16),
            "modelnet": dict(hidden_dim=192, views_count=3, n_max=70, n_off=32),
            "full": dict(hidden_dim=192, views_count=3, n_max=45, n_off=92),
        }[task]
        base.update(kw)
        return cls(**base)


# -- batching ---------------------------------------------------------------

class GraphBatch(NamedTuple):
    nodes: np.ndarray        # (N, 4) float
    graph_of: np.ndarray     # (N,) graph index of each node
    local: np.ndarray        # (N,) index of the node within its graph
    counts: np.ndarray       # (B,)
    starts: np.ndarray       # (B,) first node of each graph
    src: np.ndarray          # (E,) receiving node (global)
    dst: np.ndarray          # (E,) sending node (global)
    edges: np.ndarray        # (E, 4) float, e_{src,dst}
    views: np.ndarray | None  # (B, V, 14, 14) float

    @property
    def size(self) -> int:
        return len(self.counts)


def make_batch(graphs: Sequence[AssemblyGraph], views: Sequence | None = None) -> GraphBatch:
    nodes, gid, local, src, dst, efeat = [], [], [], [], [], []
    counts = np.array([len(g) for g in graphs], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    for b, g in enumerate(graphs):
        nf = g.node_features()
        nodes.append(nf)
        gid.append(np.full(len(g), b))
        local.append(np.arange(len(g)))
        s, d, e = g.edge_arrays()
        src.append(s + starts[b])
        dst.append(d + starts[b])
        efeat.append(e)
    v = None
    if views is not None:
        v = np.stack([np.stack([np.asarray(x, dtype=np.float32) for x in vs]) for vs in views])
    cat = np.concatenate
    return GraphBatch(cat(nodes).astype(np.float32), cat(gid), cat(local), counts, starts,
                      cat(src).astype(np.int64), cat(dst).astype(np.int64),
                      cat(efeat).astype(np.float32).reshape(-1, 4), v)


# -- parameter construction ---------------------------------------------------

def _dense(ps: ParamStore, name: str, fan_in: int, fan_out: int, rng, gain: float = np.sqrt(2)):
    lim = gain * np.sqrt(3.0 / fan_in)
    ps.add(f"{name}.w", rng.uniform(-lim, lim, size=(fan_in, fan_out)))
    ps.add(f"{name}.b", np.zeros(fan_out))


def _mlp3(ps, name, fan_in, h, rng):
    _dense(ps, f"{name}.0", fan_in, h, rng)
    _dense(ps, f"{name}.1", h, h, rng)
    _dense(ps, f"{name}.2", h, h, rng, gain=1.0)


def _cnn_params(ps: ParamStore, cfg: ModelConfig, rng):
    c1, c2 = cfg.cnn_channels
    chans = [1, c1, c1, c1, c1, c1, c2, c2, c2, c2, c2]
    for i in range(10):
        cin, cout = chans[i], chans[i + 1]
        lim = np.sqrt(2) * np.sqrt(3.0 / (9 * cin))
        ps.add(f"cnn.conv{i}.w", rng.uniform(-lim, lim, size=(3, 3, cin, cout)))
        ps.add(f"cnn.conv{i}.b", np.zeros(cout))
    _dense(ps, "cnn.fc", 16 * c2, cfg.view_dim, rng, gain=1.0)


def _gnn_params(ps, prefix, cfg: ModelConfig, rng):
    h = cfg.hidden_dim
    for layer in range(cfg.gnn_layers):
        if cfg.message_passing:
            _dense(ps, f"{prefix}.{layer}.edge", 3 * h, h, rng)
            _dense(ps, f"{prefix}.{layer}.node", 2 * h, h, rng)
        else:
            _dense(ps, f"{prefix}.{layer}.node", h, h, rng)


def init_policy(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    h, z = cfg.hidden_dim, cfg.z_dim
    _cnn_params(ps, cfg, rng)
    _mlp3(ps, "embed_v", 4 + z, h, rng)
    _mlp3(ps, "embed_e", 4 + z, h, rng)
    _gnn_params(ps, "gnn_piv", cfg, rng)
    _gnn_params(ps, "gnn_off", cfg, rng)
    _dense(ps, "head_piv", h + z, 1, rng, gain=0.01)
    _dense(ps, "head_off", h + z, cfg.n_off, rng, gain=0.01)
    _dense(ps, "head_val", 2 * h + z, 1, rng, gain=0.01)
    return ps


def init_avn(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    h = cfg.hidden_dim
    _mlp3(ps, "embed_v", 4, h, rng)
    _mlp3(ps, "embed_e", 4, h, rng)
    _gnn_params(ps, "gnn_piv", cfg, rng)
    _gnn_params(ps, "gnn_off", cfg, rng)
    _dense(ps, "head_piv", h, 1, rng, gain=1.0)
    _dense(ps, "head_off", h, cfg.n_off, rng, gain=1.0)
    return ps


# -- forward pieces -----------------------------------------------------------

def _fc(ps, name, x):
    return ad.linear(x, ps[f"{name}.w"], ps[f"{name}.b"])


def _mlp3_fwd(ps, name, x):
    x = ad.relu(_fc(ps, f"{name}.0", x))
    x = ad.relu(_fc(ps, f"{name}.1", x))
    return _fc(ps, f"{name}.2", x)


def encode_target(ps: ParamStore, cfg: ModelConfig, views) -> Tensor:
    """Shared CNN over each 14x14 view, outputs concatenated: (B, V * view_dim)."""
    v = np.asarray(views.data if isinstance(views, Tensor) else views)
    if v.ndim != 4 or v.shape[1] != cfg.views_count or v.shape[2:] != (14, 14):
        raise ValueError(f"expected views of shape (B, {cfg.views_count}, 14, 14), got {v.shape}")
    b = v.shape[0]
    x = views if isinstance(views, Tensor) else Tensor(v)
    x = ad.reshape(x, (b * cfg.views_count, 14, 14, 1))

    def conv(i, x):
        return ad.conv2d(x, ps[f"cnn.conv{i}.w"], ps[f"cnn.conv{i}.b"])
    x = conv(0, x)
    x = ad.relu(ad.maxpool2d(x))
    for i in (1, 2, 3):
        x = ad.relu(conv(i, x))
    x = conv(4, x)
    x = conv(5, x)
    x = ad.relu(ad.maxpool2d(x))
    for i in (6, 7, 8, 9):
        x = ad.relu(conv(i, x))
    x = _fc(ps, "cnn.fc", ad.flatten(x))
    return ad.reshape(x, (b, cfg.views_count * cfg.view_dim))


def gn_layer(ps, name, v: Tensor, e: Tensor, src, dst):
    """Edge update from (v_i, v_j, e_ij), sum of incoming messages, node update."""
    n = v.shape[0]
    e_new = ad.relu(_fc(ps, f"{name}.edge",
                        ad.concat([ad.gather_rows(v, src), ad.gather_rows(v, dst), e], axis=1)))
    m = ad.segment_sum(e_new, src, n)
    v_new = ad.relu(_fc(ps, f"{name}.node", ad.concat([v, m], axis=1)))
    return v_new, e_new


def _gnn(ps, prefix, cfg: ModelConfig, v, e, batch: GraphBatch):
    for layer in range(cfg.gnn_layers):
        name = f"{prefix}.{layer}"
        if cfg.message_passing:
            v, e = gn_layer(ps, name, v, e, batch.src, batch.dst)
        else:
            v = ad.relu(_fc(ps, f"{name}.node", v))
    return v


def embed_graph(ps, batch: GraphBatch, z: Tensor | None):
    nodes = Tensor(batch.nodes)
    edges = Tensor(batch.edges)
    if z is not None:
        nodes = ad.concat([nodes, ad.gather_rows(z, batch.graph_of)], axis=1)
        edges = ad.concat([edges, ad.gather_rows(z, batch.graph_of[batch.src])], axis=1)
    return _mlp3_fwd(ps, "embed_v", nodes), _mlp3_fwd(ps, "embed_e", edges)


class PolicyOutput(NamedTuple):
    pivot_logits: Tensor     # (B, n_max), padding entries are 0 and masked by pivot_pad
    pivot_pad: np.ndarray    # (B, n_max) True where a node exists
    offset_logits: Tensor    # (N, n_off) per node; row of the chosen pivot is used
    value: Tensor            # (B,)


def policy_forward(ps: ParamStore, cfg: ModelConfig, batch: GraphBatch) -> PolicyOutput:
    if batch.counts.max() > cfg.n_max:
        raise ValueError(f"graph with {batch.counts.max()} bricks exceeds n_max={cfg.n_max}")
    z = encode_target(ps, cfg, batch.views)
    v0, e0 = embed_graph(ps, batch, z)
    v_piv = _gnn(ps, "gnn_piv", cfg, v0, e0, batch)
    v_off = _gnn(ps, "gnn_off", cfg, v0, e0, batch)
    zn = ad.gather_rows(z, batch.graph_of)
    piv = ad.reshape(_fc(ps, "head_piv", ad.concat([v_piv, zn], axis=1)), (-1,))
    b = batch.size
    pivot_logits = ad.scatter_dense(piv, batch.graph_of, batch.local, (b, cfg.n_max))
    pad = np.zeros((b, cfg.n_max), dtype=bool)
    pad[batch.graph_of, batch.local] = True
    off = _fc(ps, "head_off", ad.concat([v_off, zn], axis=1))
    pooled = ad.concat([ad.segment_mean(v_piv, batch.graph_of, b),
                        ad.segment_mean(v_off, batch.graph_of, b), z], axis=1)
    value = ad.reshape(_fc(ps, "head_val", pooled), (-1,))
    return PolicyOutput(pivot_logits, pad, off, value)


class AvnOutput(NamedTuple):
    pivot_logits: Tensor     # (N,)
    offset_logits: Tensor    # (N, n_off)

    def confidences(self) -> tuple[np.ndarray, np.ndarray]:
        sig = lambda x: 1.0 / (1.0 + np.exp(-x.astype(np.float64)))  # noqa: E731
        return sig(self.pivot_logits.data), sig(self.offset_logits.data)


def avn_forward(ps: ParamStore, cfg: ModelConfig, batch: GraphBatch) -> AvnOutput:
    """Validity logits per node and per (node, offset); sigmoid gives confidences."""
    v0, e0 = embed_graph(ps, batch, None)
    v_piv = _gnn(ps, "gnn_piv", cfg, v0, e0, batch)
    v_off = _gnn(ps, "gnn_off", cfg, v0, e0, batch)
    piv = ad.reshape(_fc(ps, "head_piv", v_piv), (-1,))
    off = _fc(ps, "head_off", v_off)
    return AvnOutput(piv, off)


def avn_predict(ps: ParamStore, cfg: ModelConfig, graphs: Sequence[AssemblyGraph]):
    """Per-graph (pivot confidences (t,), offset confidences (t, n_off))."""
    batch = make_batch(graphs)
    pc, oc = avn_forward(ps, cfg, batch).confidences()
    out = []
    for s, c in zip(batch.starts, batch.counts):
        out.append((pc[s:s + c], oc[s:s + c]))
    return out


@dataclass
class AvnMasks:
    """Mask source backed by a trained validity network."""

    params: ParamStore
    cfg: ModelConfig
    threshold: float = 0.5
    name: str = "avn"

    def masks(self, graph, offsets=None, bounds=None) -> ActionMasks:
        pc, oc = avn_predict(self.params, self.cfg, [graph])[0]
        off = oc >= self.threshold
        # a pivot is usable only if the pivot head and at least one offset agree
        off &= (pc >= self.threshold)[:, None]
        return ActionMasks(off.any(axis=1), off)

    def describe(self) -> str:
        return f"{self.name}@{self.threshold}"
