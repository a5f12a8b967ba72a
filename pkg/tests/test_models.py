import numpy as np
import pytest

from brickcraft import autodiff as ad
from brickcraft.assembly import AssemblyGraph, initial_graph
from brickcraft.autodiff import ParamStore, Tensor
from brickcraft.geometry import BrickPose
from brickcraft.models import (AvnMasks, ModelConfig, avn_forward, avn_predict, encode_target,
                               gn_layer, init_avn, init_policy, make_batch, policy_forward)
from brickcraft.targets import tower_target
from conftest import build

SMALL = ModelConfig(hidden_dim=8, view_dim=4, cnn_channels=(2, 3), n_max=12, n_off=92)


def jitter(ps, seed, scale=0.05):
    r = np.random.default_rng(seed)
    for v in ps.values():
        v.data = v.data + r.normal(0, scale, v.data.shape).astype(v.data.dtype)
    return ps


def test_task_defaults():
    assert ModelConfig().z_dim == 192
    m = ModelConfig.for_task("mnist")
    assert (m.hidden_dim, m.views_count, m.n_off, m.z_dim) == (64, 1, 6, 64)
    assert ModelConfig.for_task("modelnet").n_off == 32
    assert ModelConfig.for_task("random_assembly").n_off == 16


def test_encoder_output_and_weight_sharing():
    cfg = ModelConfig(hidden_dim=8, cnn_channels=(2, 3))
    ps = jitter(init_policy(cfg, 0), 1)
    rng = np.random.default_rng(0)
    v = rng.random((14, 14)) < 0.3
    z = encode_target(ps, cfg, np.stack([np.stack([v, v, v])]).astype(np.float32)).data
    assert z.shape == (1, 192)
    assert np.array_equal(z[0, :64], z[0, 64:128]) and np.array_equal(z[0, :64], z[0, 128:])
    blank = np.zeros((2, 3, 14, 14), np.float32)
    zb = encode_target(ps, cfg, blank).data
    assert np.array_equal(zb[0], zb[1])
    with pytest.raises(ValueError):
        encode_target(ps, cfg, np.zeros((1, 2, 14, 14)))


def test_policy_shapes_and_padding():
    t = tower_target()
    graphs = [initial_graph(), build(1, 5)]
    b = make_batch(graphs, [t.views, t.views])
    out = policy_forward(init_policy(SMALL, 0), SMALL, b)
    assert out.pivot_logits.shape == (2, SMALL.n_max)
    assert out.offset_logits.shape == (6, 92)
    assert out.value.shape == (2,)
    assert out.pivot_pad.sum(axis=1).tolist() == [1, 5]
    assert (out.pivot_logits.data[~out.pivot_pad] == 0).all()


def test_single_node_pivot_is_degenerate():
    t = tower_target()
    out = policy_forward(init_policy(SMALL, 3), SMALL, make_batch([initial_graph()], [t.views]))
    lp = ad.masked_log_softmax(out.pivot_logits, out.pivot_pad).data
    assert lp[0, 0] == 0.0


def test_too_many_bricks_rejected():
    t = tower_target()
    with pytest.raises(ValueError):
        policy_forward(init_policy(SMALL, 0), SMALL, make_batch([build(0, 13)], [t.views]))


def test_one_node_embedding_has_no_edges():
    b = make_batch([initial_graph()])
    assert b.nodes.shape == (1, 4) and b.edges.shape == (0, 4) and b.src.shape == (0,)
    out = avn_forward(init_avn(SMALL, 0), SMALL, b)
    assert out.pivot_logits.shape == (1,) and out.offset_logits.shape == (1, 92)


def test_permutation_equivariance():
    g = build(4, 7)
    perm = np.random.default_rng(0).permutation(7)
    gp = AssemblyGraph([g.nodes[i] for i in perm])
    t = tower_target()
    ps = jitter(init_policy(SMALL, 1), 2)
    a = policy_forward(ps, SMALL, make_batch([g], [t.views]))
    b = policy_forward(ps, SMALL, make_batch([gp], [t.views]))
    assert np.allclose(a.offset_logits.data[perm], b.offset_logits.data, atol=1e-5)
    assert np.allclose(a.pivot_logits.data[0, perm], b.pivot_logits.data[0, :7], atol=1e-5)
    assert np.allclose(a.value.data, b.value.data, atol=1e-5)
    pa = avn_forward(init_avn(SMALL, 0), SMALL, make_batch([g]))
    pb = avn_forward(init_avn(SMALL, 0), SMALL, make_batch([gp]))
    assert np.allclose(pa.offset_logits.data[perm], pb.offset_logits.data, atol=1e-5)


def _relu(x):
    return np.maximum(x, 0)


def test_gn_layer_by_hand():
    rng = np.random.default_rng(0)
    with ad.precision(np.float64):
        ps = ParamStore()
        h = 3
        ps.add("g.edge.w", rng.normal(size=(2 * h + 4, h)))
        ps.add("g.edge.b", rng.normal(size=h))
        ps.add("g.node.w", rng.normal(size=(2 * h, h)))
        ps.add("g.node.b", rng.normal(size=h))
        g = AssemblyGraph([BrickPose(0, 0, 0, 0), BrickPose(2, 0, 1, 1), BrickPose(10, 0, 0, 0)])
        src, dst, e = g.edge_arrays()
        v = rng.normal(size=(3, h))
        vn, en = gn_layer(ps, "g", Tensor(v), Tensor(e), src, dst)
    W, B = ps["g.edge.w"].data, ps["g.edge.b"].data
    U, C = ps["g.node.w"].data, ps["g.node.b"].data
    e01 = _relu(np.r_[v[0], v[1], [-2, 0, -1, 1]] @ W + B)
    e10 = _relu(np.r_[v[1], v[0], [2, 0, 1, 1]] @ W + B)
    want = np.stack([_relu(np.r_[v[0], e01] @ U + C), _relu(np.r_[v[1], e10] @ U + C),
                     _relu(np.r_[v[2], np.zeros(h)] @ U + C)])     # node 2 is isolated
    assert np.allclose(vn.data, want, atol=1e-12)
    assert np.allclose(en.data, np.stack([e01, e10]), atol=1e-12)


def test_avn_confidences_in_unit_interval_and_masks():
    cfg = ModelConfig(hidden_dim=8, n_off=92)
    ps = jitter(init_avn(cfg, 0), 1)
    (pc, oc), = avn_predict(ps, cfg, [build(2, 6)])
    # open interval mathematically; float rounding may touch the ends for huge logits
    assert ((pc >= 0) & (pc <= 1)).all() and ((oc >= 0) & (oc <= 1)).all()
    assert 0 < pc.min() and pc.max() < 1
    m = AvnMasks(ps, cfg, 0.5).masks(build(2, 6))
    assert np.array_equal(m.pivot_valid, m.offset_valid.any(axis=1))
    assert not (m.offset_valid & ~(pc >= 0.5)[:, None]).any()


def test_mlp_variant_ignores_edges():
    cfg = ModelConfig(hidden_dim=8, n_off=92, message_passing=False)
    ps = init_avn(cfg, 0)
    g = AssemblyGraph([BrickPose(0, 0, 0, 0), BrickPose(0, 0, 1, 0)])
    far = AssemblyGraph([BrickPose(0, 0, 0, 0)])
    a = avn_forward(ps, cfg, make_batch([g])).offset_logits.data[0]
    b = avn_forward(ps, cfg, make_batch([far])).offset_logits.data[0]
    assert np.allclose(a, b)


def _model_grad_check(which):
    g = initial_graph().add(BrickPose(1, 0, 1, 0)).add(BrickPose(0, -1, 2, 1))
    t = tower_target()
    with ad.precision(np.float64):
        cfg = ModelConfig(hidden_dim=6, view_dim=3, cnn_channels=(2, 2), n_max=4, n_off=92)
        if which == "policy":
            ps = jitter(init_policy(cfg, 0).astype(np.float64), 5)
            b = make_batch([g, initial_graph()], [t.views, t.views])

            def loss():
                o = policy_forward(ps, cfg, b)
                return ad.add(ad.add(ad.sum(ad.square(o.pivot_logits)),
                                     ad.mul(ad.sum(ad.square(o.offset_logits)), 0.1)),
                              ad.sum(ad.square(o.value)))
        else:
            ps = jitter(init_avn(cfg, 1).astype(np.float64), 6)
            b = make_batch([g])

            def loss():
                o = avn_forward(ps, cfg, b)
                return ad.add(ad.sum(ad.square(o.offset_logits)), ad.sum(ad.square(o.pivot_logits)))
        return ad.grad_check(loss, ps, max_entries=3)


@pytest.mark.parametrize("which", ["policy", "avn"])
def test_model_gradients(which):
    rep = _model_grad_check(which)
    assert rep["ok"], sorted(rep["per_param"].items(), key=lambda kv: -kv[1])[:3]
