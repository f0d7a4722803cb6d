import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from motionkit import ipi
from motionkit.errors import ArgumentError, ShapeError
from motionkit.ipi import IPIConfig


# ---------------------------------------------------------------------------
# scalar-loop reference implementation


def ref_softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def ref_matmul(a, b):
    return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))]
            for i in range(len(a))]


def ref_attention(Q, KV, w, heads):
    Q, KV = Q.tolist(), KV.tolist()
    d = len(Q[0])
    dh = d // heads
    q = ref_matmul(Q, w["wq"].tolist())
    k = ref_matmul(KV, w["wk"].tolist())
    v = ref_matmul(KV, w["wv"].tolist())
    o = [[0.0] * d for _ in Q]
    for h in range(heads):
        cols = range(h * dh, (h + 1) * dh)
        for i in range(len(Q)):
            logits = [sum(q[i][c] * k[j][c] for c in cols) / math.sqrt(dh) for j in range(len(KV))]
            p = ref_softmax(logits)
            for c in cols:
                o[i][c] = sum(p[j] * v[j][c] for j in range(len(KV)))
    return np.array(ref_matmul(o, w["wo"].tolist()))


def ref_layer_norm(x, g, b):
    out = []
    for row in x.tolist():
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out.append([(v - mu) / math.sqrt(var + 1e-5) * g[c] + b[c] for c, v in enumerate(row)])
    return np.array(out)


def ref_gelu(x):
    return np.vectorize(lambda v: 0.5 * v * (1 + math.erf(v / math.sqrt(2))))(x)


def ref_forward(q_m, f, params, cfg):
    x = np.array(q_m)
    for i in range(cfg.depth):
        w = params.layer(i)
        x1 = ref_layer_norm(x + ref_attention(x, f, w, cfg.num_heads), w["ln1_g"], w["ln1_b"])
        ffn = np.array(ref_matmul(ref_gelu(np.array(ref_matmul(x1.tolist(), w["w1"].tolist())) + w["b1"]).tolist(),
                                  w["w2"].tolist())) + w["b2"]
        x = ref_layer_norm(x1 + ffn, w["ln2_g"], w["ln2_b"])
    return x


def small_setup(depth=2, d=4, heads=2, m=18, kv=3, seed=1):
    cfg = IPIConfig(depth=depth, model_dim=d, num_heads=heads, query_tokens=m)
    params = ipi.init_params(cfg, seed, randomize_all=True)
    rng = np.random.default_rng(seed)
    return cfg, params, rng.normal(size=(m, d)), rng.normal(size=(kv, d))


def attn_of(params, i=0):
    return {k: params[f"layers.{i}.{k}"] for k in ipi.ATTN_KEYS}


# ---------------------------------------------------------------------------
# attention


def test_cross_attention_brute_force_m2_d2(rng):
    w = {k: rng.normal(size=(2, 2)) for k in ipi.ATTN_KEYS}
    Q, KV = rng.normal(size=(2, 2)), rng.normal(size=(3, 2))
    assert np.allclose(ipi.cross_attention(Q, KV, w), ref_attention(Q, KV, w, 1), atol=1e-13)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_cross_attention_matches_loops(heads, rng):
    w = {k: rng.normal(size=(8, 8)) for k in ipi.ATTN_KEYS}
    Q, KV = rng.normal(size=(5, 8)), rng.normal(size=(4, 8))
    assert np.allclose(ipi.cross_attention(Q, KV, w, heads), ref_attention(Q, KV, w, heads), atol=1e-12)


def test_singleton_kv_broadcasts_value(rng):
    w = {k: rng.normal(size=(4, 4)) for k in ipi.ATTN_KEYS}
    kv = rng.normal(size=(1, 4))
    out = ipi.cross_attention(rng.normal(size=(6, 4)), kv, w, 2)
    assert np.allclose(out, np.broadcast_to(kv @ w["wv"] @ w["wo"], (6, 4)), atol=1e-14)


def test_attention_rows_are_distributions(rng):
    w = {k: rng.normal(size=(6, 6)) for k in ipi.ATTN_KEYS}
    for p in ipi.attention_weights(rng.normal(size=(5, 6)), rng.normal(size=(7, 6)), w, 3):
        assert p.shape == (5, 7) and (p >= 0).all()
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_permutation_behaviour():
    cfg, params, q_m, f = small_setup(kv=5)
    out = ipi.ipi_forward(q_m, f, params)
    perm_kv = np.random.default_rng(3).permutation(5)
    assert np.allclose(ipi.ipi_forward(q_m, f[perm_kv], params), out, atol=1e-12)
    perm_q = np.random.default_rng(4).permutation(18)
    assert np.allclose(ipi.ipi_forward(q_m[perm_q], f, params), out[perm_q], atol=1e-12)


def test_motion_attention_alpha(rng):
    w = {k: rng.normal(size=(4, 4)) for k in ipi.ATTN_KEYS}
    x, f = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    assert np.array_equal(ipi.motion_attention(x, f, w, alpha=0.0), x)
    ca = ref_attention(x, f, w, 1)
    assert np.allclose(ipi.motion_attention(x, f, w, alpha=1.0), x + ca, atol=1e-13)
    for a in (0.25, 0.5, 2.0):
        assert np.allclose(ipi.motion_attention(x, f, w, alpha=a) - x, a * ca, atol=1e-12)
    with pytest.raises(ShapeError):
        ipi.motion_attention(x, rng.normal(size=(2, 3)), w)


# ---------------------------------------------------------------------------
# encoder and extractor


def test_encoder_collapses_with_zero_weights():
    cfg = IPIConfig(depth=1, model_dim=8, num_heads=2)
    params = ipi.init_params(cfg, 0)
    params = params.with_tensor("embed", np.zeros((3, 8))).with_tensor("pos", np.zeros((18, 8)))
    b = np.linspace(-1, 1, 8)
    params = params.with_tensor("enc_ln_b", b)
    body = np.random.default_rng(0).uniform(size=(18, 3))
    assert np.allclose(ipi.encode_keypoints(body, params), np.broadcast_to(b, (18, 8)), atol=1e-15)


def test_encoder_matches_scalar_reference(rng):
    cfg = IPIConfig(depth=1, model_dim=6, num_heads=2)
    params = ipi.init_params(cfg, 9, randomize_all=True)
    body = rng.uniform(size=(18, 3))
    body[[2, 7], 2] = 0.1  # below the confidence floor
    kp = body.copy()
    kp[kp[:, 2] < 0.3] = 0.0
    e = np.array(ref_matmul(kp.tolist(), params["embed"].tolist())) + params["pos"]
    expect = ref_layer_norm(e, params["enc_ln_g"], params["enc_ln_b"])
    assert np.allclose(ipi.encode_keypoints(body, params), expect, atol=1e-12)


def test_missing_keypoint_tokens_depend_only_on_position(rng):
    cfg = IPIConfig(depth=1, model_dim=8, num_heads=2)
    params = ipi.init_params(cfg, 2)
    a, b = rng.uniform(size=(18, 3)), rng.uniform(size=(18, 3))
    a[4, 2] = b[4, 2] = 0.0
    assert np.array_equal(ipi.encode_keypoints(a, params)[4], ipi.encode_keypoints(b, params)[4])


def test_residual_collapse_is_double_layer_norm(rng):
    cfg = IPIConfig(depth=1, model_dim=8, num_heads=2)
    p = ipi.init_params(cfg, 0)
    p = p.with_tensor("layers.0.wo", np.zeros((8, 8))).with_tensor("layers.0.w2", np.zeros((32, 8)))
    p = p.with_tensor("layers.0.b2", np.zeros(8))
    q_m, f = rng.normal(size=(18, 8)), rng.normal(size=(3, 8))
    one = np.ones(8)
    zero = np.zeros(8)
    expect = ref_layer_norm(ref_layer_norm(q_m, one, zero), one, zero)
    assert np.allclose(ipi.ipi_forward(q_m, f, p), expect, atol=1e-12)


def test_layer_by_layer_reference():
    cfg, params, q_m, f = small_setup(depth=2, d=4, heads=2, kv=3)
    assert np.allclose(ipi.ipi_forward(q_m, f, params), ref_forward(q_m, f, params, cfg), atol=1e-12)


def test_pipeline_is_encoder_then_extractor(rng):
    cfg, params, _, f = small_setup(d=8, heads=2)
    body = rng.uniform(size=(18, 3))
    q_m = ipi.encode_keypoints(body, params) + params["q_l"]
    assert np.allclose(ipi.pipeline_forward(body, f, params), ref_forward(q_m, f, params, cfg), atol=1e-12)


def test_output_shape_and_errors(rng):
    cfg, params, q_m, f = small_setup()
    assert ipi.ipi_forward(q_m, f, params).shape == (18, 4)
    with pytest.raises(ShapeError):
        ipi.ipi_forward(q_m, rng.normal(size=(3, 5)), params)
    with pytest.raises(ShapeError):
        ipi.merge_query(np.zeros((18, 4)), np.zeros((17, 4)))
    with pytest.raises(ArgumentError):
        IPIConfig(model_dim=6, num_heads=4)
    with pytest.raises(ShapeError):
        params.with_tensor("embed", np.zeros((2, 4)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariant(s, c):
    p = ipi.softmax(s)
    assert np.allclose(p, ipi.softmax(s + c), atol=1e-12)
    assert np.allclose(p.sum(axis=1), 1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 8), elements=st.floats(-10, 10)))
def test_layer_norm_standardizes(x):
    y, _ = ipi.layer_norm(x, np.ones(8), np.zeros(8))
    assert np.allclose(y.mean(axis=1), 0.0, atol=1e-9)
    var = x.var(axis=1)
    assert np.allclose(y.var(axis=1), var / (var + 1e-5), atol=1e-9)


# ---------------------------------------------------------------------------
# gradients


def test_central_difference_and_relative_error():
    x = np.array([0.5, -1.0, 2.0])
    g = ipi.central_difference(lambda v: float(np.sum(v ** 3)), x, 1e-5)
    assert np.allclose(g, 3 * x ** 2, rtol=1e-8)
    assert x.tolist() == [0.5, -1.0, 2.0]
    assert ipi.relative_error([1.0, 2.0], [1.0, 2.1]) == pytest.approx(0.1 / 2.1)
    assert ipi.relative_error([0.0], [0.0]) == 0.0


def test_gelu_grad_matches_difference():
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    assert np.allclose(ipi.gelu_grad(x), (ipi.gelu(x + h) - ipi.gelu(x - h)) / (2 * h), atol=1e-8)


def test_zero_upstream_gives_zero_gradients():
    cfg, params, _, f = small_setup()
    body = np.random.default_rng(0).uniform(size=(18, 3))
    grads = ipi.pipeline_backward(body, f, params, np.zeros((18, 4)))
    assert set(grads) == set(ipi.tensor_shapes(cfg)) | {"f_phi_d"}
    assert all(not np.any(g) for g in grads.values())


def test_zero_feature_column_zeroes_key_value_rows(rng):
    cfg, params, q_m, f = small_setup(d=8, heads=2)
    f[:, 3] = 0.0
    grads = ipi.ipi_backward(q_m, f, params, upstream_grad=rng.normal(size=(18, 8)))
    for i in range(cfg.depth):
        assert not np.any(grads[f"layers.{i}.wk"][3])
        assert not np.any(grads[f"layers.{i}.wv"][3])
        assert np.any(grads[f"layers.{i}.wk"][2])


def test_gradient_shapes_match_params():
    cfg, params, q_m, f = small_setup()
    grads = ipi.pipeline_backward(np.random.default_rng(1).uniform(size=(18, 3)), f, params,
                                  np.ones((18, 4)))
    for k, shape in ipi.tensor_shapes(cfg).items():
        assert grads[k].shape == shape


@pytest.mark.parametrize("d,depth,heads", [(4, 1, 1), (4, 2, 2), (8, 2, 2), (8, 1, 4)])
def test_gradcheck_passes(d, depth, heads):
    cfg = IPIConfig(depth=depth, model_dim=d, num_heads=heads)
    rep = ipi.gradcheck(cfg, seed=7)
    assert len(rep.max_rel_error) == len(ipi.tensor_shapes(cfg)) + 2
    assert rep.passed, rep.worst()


def test_gradcheck_is_deterministic():
    cfg = IPIConfig(depth=1, model_dim=4, num_heads=2)
    assert ipi.gradcheck(cfg, 3).max_rel_error == ipi.gradcheck(cfg, 3).max_rel_error


def test_gradcheck_catches_a_broken_backward(monkeypatch):
    def bad(x):
        return 0.5 * (1.0 + ipi.erf(x / math.sqrt(2.0)))  # drops the density term
    monkeypatch.setattr(ipi, "gelu_grad", bad)
    rep = ipi.gradcheck(IPIConfig(depth=1, model_dim=4, num_heads=1), seed=0)
    assert not rep.passed


def test_init_is_seeded():
    cfg = IPIConfig(depth=1, model_dim=4, num_heads=1)
    a, b, c = ipi.init_params(cfg, 1), ipi.init_params(cfg, 1), ipi.init_params(cfg, 2)
    assert all(np.array_equal(a[k], b[k]) for k in a.tensors)
    assert not np.array_equal(a["embed"], c["embed"])
    assert np.all(a["enc_ln_g"] == 1) and np.all(a["q_l"] == 0)
    assert np.abs(a["embed"]).max() <= 0.1
