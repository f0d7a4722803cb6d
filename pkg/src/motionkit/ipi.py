"""Toy-scale implicit pose extractor.

Keypoints are embedded into query tokens ``q_p``; a learnable query ``q_l``
is added (``q_m = q_p + q_l``) and the merged query attends over feature
tokens (keys and values) through ``depth`` post-norm layers of multi-head
cross-attention plus a GELU feed-forward block. Every forward op has a
hand-written backward so gradients can be checked against finite
differences.

All matrices act on row vectors: tokens are rows, ``y = x @ W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import ArgumentError, NumericError, ShapeError
from .pose_model import MIN_CONFIDENCE, NUM_BODY, FullPose
from .rng import SplitMix64

LN_EPS = 1e-5
INIT_RANGE = 0.1
ATTN_KEYS = ("wq", "wk", "wv", "wo")


@dataclass(frozen=True)
class IPIConfig:
    depth: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: Optional[int] = None
    query_tokens: int = NUM_BODY

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.model_dim)
        if self.depth < 1 or self.model_dim < 1 or self.num_heads < 1 or self.ffn_dim < 1:
            raise ArgumentError("depth, model_dim, num_heads and ffn_dim must be positive")
        if self.model_dim % self.num_heads:
            raise ArgumentError("model_dim must be divisible by num_heads")
        if self.query_tokens < 1:
            raise ArgumentError("query_tokens must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def tensor_shapes(config: IPIConfig) -> dict:
    """Name -> shape for every parameter tensor, in canonical order."""
    d, f, m = config.model_dim, config.ffn_dim, config.query_tokens
    shapes = {"embed": (3, d), "pos": (m, d), "enc_ln_g": (d,), "enc_ln_b": (d,), "q_l": (m, d)}
    for i in range(config.depth):
        p = f"layers.{i}."
        shapes.update({p + k: (d, d) for k in ATTN_KEYS})
        shapes.update({
            p + "ln1_g": (d,), p + "ln1_b": (d,),
            p + "w1": (d, f), p + "b1": (f,), p + "w2": (f, d), p + "b2": (d,),
            p + "ln2_g": (d,), p + "ln2_b": (d,),
        })
    return shapes


@dataclass(eq=False)
class IPIParams:
    config: IPIConfig
    tensors: dict = field(repr=False)

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ShapeError(f"parameter names differ: missing {sorted(missing)}, extra {sorted(extra)}")
        for k, shape in expected.items():
            t = np.asarray(self.tensors[k], dtype=np.float64)
            if t.shape != shape:
                raise ShapeError(f"{k}: expected shape {shape}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise NumericError(f"{k}: non-finite entries")
            self.tensors[k] = t

    def __getitem__(self, name):
        return self.tensors[name]

    def layer(self, i: int) -> dict:
        p = f"layers.{i}."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def with_tensor(self, name, value) -> "IPIParams":
        t = dict(self.tensors)
        t[name] = value
        return IPIParams(self.config, t)


def init_params(config: IPIConfig, seed: int = 0, randomize_all: bool = False) -> IPIParams:
    """Weights and biases ~ U(-0.1, 0.1) from splitmix64 in canonical tensor order.

    Layer-norm gains start at 1, their biases and ``q_l`` at 0, unless
    ``randomize_all`` (used by gradient checks) perturbs those too.
    """
    rng = SplitMix64(seed)
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g") and "ln" in leaf:
            t = np.ones(shape)
            if randomize_all:
                t = t + rng.uniform_array(shape, -INIT_RANGE, INIT_RANGE)
        elif (leaf.endswith("_b") and "ln" in leaf) or name == "q_l":
            t = rng.uniform_array(shape, -INIT_RANGE, INIT_RANGE) if randomize_all else np.zeros(shape)
        else:
            t = rng.uniform_array(shape, -INIT_RANGE, INIT_RANGE)
        tensors[name] = t
    return IPIParams(config, tensors)


# ---------------------------------------------------------------------------
# primitives with backward passes


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a token matrix, got shape {a.shape}")
    return a


def _attention(x, kv, w, num_heads):
    d = w["wq"].shape[0]
    if x.shape[1] != d or kv.shape[1] != d:
        raise ShapeError(f"query/key-value width must be {d}, got {x.shape[1]} and {kv.shape[1]}")
    if d % num_heads:
        raise ShapeError("model width not divisible by num_heads")
    dh = d // num_heads
    q, k, v = x @ w["wq"], kv @ w["wk"], kv @ w["wv"]
    scale = 1.0 / math.sqrt(dh)
    o = np.empty_like(q)
    probs = []
    for h in range(num_heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = (q[:, sl] @ k[:, sl].T) * scale
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite attention logits")
        p = softmax(logits)
        probs.append(p)
        o[:, sl] = p @ v[:, sl]
    y = o @ w["wo"]
    return y, (x, kv, q, k, v, o, probs, w, num_heads, scale)


def _attention_backward(dy, cache):
    x, kv, q, k, v, o, probs, w, num_heads, scale = cache
    dh = q.shape[1] // num_heads
    grads = {"wo": o.T @ dy}
    do = dy @ w["wo"].T
    dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
    for h, p in enumerate(probs):
        sl = slice(h * dh, (h + 1) * dh)
        dp = do[:, sl] @ v[:, sl].T
        dv[:, sl] = p.T @ do[:, sl]
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True)) * scale
        dq[:, sl] = ds @ k[:, sl]
        dk[:, sl] = ds.T @ q[:, sl]
    grads["wq"] = x.T @ dq
    grads["wk"] = kv.T @ dk
    grads["wv"] = kv.T @ dv
    dx = dq @ w["wq"].T
    dkv = dk @ w["wk"].T + dv @ w["wv"].T
    return dx, dkv, grads


def attention_weights(Q, KV, attn: dict, num_heads: int = 1) -> list[np.ndarray]:
    """Per-head softmax maps, each of shape (queries, keys)."""
    _, cache = _attention(_as_matrix(Q, "Q"), _as_matrix(KV, "KV"), attn, num_heads)
    return cache[6]


def cross_attention(Q, KV, attn: dict, num_heads: int = 1) -> np.ndarray:
    """Multi-head attention of query tokens over key/value tokens; output shaped like ``Q``."""
    y, _ = _attention(_as_matrix(Q, "Q"), _as_matrix(KV, "KV"), attn, num_heads)
    return y


def motion_attention(x, f_i, attn: dict, num_heads: int = 1, alpha: float = 1.0) -> np.ndarray:
    """Residual injection ``x + alpha * CrossAttn(x, f_i)``."""
    x = _as_matrix(x, "x")
    f_i = _as_matrix(f_i, "f_i")
    if x.shape[1] != f_i.shape[1]:
        raise ShapeError(f"x has width {x.shape[1]} but f_i has {f_i.shape[1]}")
    if alpha == 0:
        return x.copy()
    return x + alpha * cross_attention(x, f_i, attn, num_heads)


# ---------------------------------------------------------------------------
# keypoint encoder


def keypoint_inputs(pose, min_confidence: float = MIN_CONFIDENCE) -> np.ndarray:
    """``[x, y, c]`` rows with missing keypoints zeroed."""
    body = pose.body if isinstance(pose, FullPose) else np.asarray(pose, dtype=np.float64)
    kp = np.array(body, dtype=np.float64)
    kp[kp[:, 2] < min_confidence] = 0.0
    return kp


def _encode(kp, params):
    if kp.shape[0] != params["pos"].shape[0]:
        raise ShapeError(f"{kp.shape[0]} keypoints but {params['pos'].shape[0]} query tokens")
    e = kp @ params["embed"] + params["pos"]
    return layer_norm(e, params["enc_ln_g"], params["enc_ln_b"])


def encode_keypoints(pose, params: IPIParams, config: Optional[IPIConfig] = None,
                     min_confidence: float = MIN_CONFIDENCE) -> np.ndarray:
    """q_p: one LayerNorm(embed([x, y, c]) + pos) token per body keypoint."""
    q_p, _ = _encode(keypoint_inputs(pose, min_confidence), params)
    return q_p


def merge_query(q_p, q_l) -> np.ndarray:
    q_p, q_l = np.asarray(q_p, dtype=np.float64), np.asarray(q_l, dtype=np.float64)
    if q_p.shape != q_l.shape:
        raise ShapeError(f"q_p {q_p.shape} and q_l {q_l.shape} differ")
    return q_p + q_l


# ---------------------------------------------------------------------------
# extractor


def _forward(q_m, f_phi_d, params, config):
    x = _as_matrix(q_m, "q_m")
    kv = _as_matrix(f_phi_d, "f_phi_d")
    caches = []
    for i in range(config.depth):
        w = params.layer(i)
        a, c_attn = _attention(x, kv, w, config.num_heads)
        x1, c_ln1 = layer_norm(x + a, w["ln1_g"], w["ln1_b"])
        hpre = x1 @ w["w1"] + w["b1"]
        f = gelu(hpre) @ w["w2"] + w["b2"]
        x, c_ln2 = layer_norm(x1 + f, w["ln2_g"], w["ln2_b"])
        caches.append((c_attn, c_ln1, x1, hpre, c_ln2))
    return x, caches


def ipi_forward(q_m, f_phi_d, params: IPIParams, config: Optional[IPIConfig] = None) -> np.ndarray:
    """Implicit pose feature f_i, one token per query token."""
    config = config or params.config
    out, _ = _forward(q_m, f_phi_d, params, config)
    return out


def ipi_backward(q_m, f_phi_d, params: IPIParams, config: Optional[IPIConfig] = None,
                 upstream_grad=None) -> dict:
    """Gradients of ``sum(f_i * upstream_grad)`` for every layer tensor, ``q_m`` and ``f_phi_d``."""
    config = config or params.config
    out, caches = _forward(q_m, f_phi_d, params, config)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != out.shape:
        raise ShapeError(f"upstream_grad shape {g.shape} != output shape {out.shape}")
    grads = {}
    dkv_total = np.zeros(np.shape(f_phi_d))
    dx = g
    for i in reversed(range(config.depth)):
        w = params.layer(i)
        c_attn, c_ln1, x1, hpre, c_ln2 = caches[i]
        p = f"layers.{i}."
        dsum, grads[p + "ln2_g"], grads[p + "ln2_b"] = layer_norm_backward(dx, c_ln2)
        act = gelu(hpre)
        grads[p + "w2"] = act.T @ dsum
        grads[p + "b2"] = dsum.sum(axis=0)
        dh = (dsum @ w["w2"].T) * gelu_grad(hpre)
        grads[p + "w1"] = x1.T @ dh
        grads[p + "b1"] = dh.sum(axis=0)
        dx1 = dsum + dh @ w["w1"].T
        dsum1, grads[p + "ln1_g"], grads[p + "ln1_b"] = layer_norm_backward(dx1, c_ln1)
        dxa, dkv, attn_grads = _attention_backward(dsum1, c_attn)
        for k, v in attn_grads.items():
            grads[p + k] = v
        dkv_total += dkv
        dx = dsum1 + dxa
    grads["q_m"] = dx
    grads["f_phi_d"] = dkv_total
    return grads


def pipeline_forward(pose, f_phi_d, params: IPIParams,
                     min_confidence: float = MIN_CONFIDENCE) -> np.ndarray:
    """Keypoints -> q_p -> q_m = q_p + q_l -> f_i."""
    q_p = encode_keypoints(pose, params, min_confidence=min_confidence)
    return ipi_forward(merge_query(q_p, params["q_l"]), f_phi_d, params)


def pipeline_backward(pose, f_phi_d, params: IPIParams, upstream_grad,
                      min_confidence: float = MIN_CONFIDENCE) -> dict:
    """Gradients of ``sum(f_i * upstream_grad)`` for every parameter tensor and ``f_phi_d``."""
    kp = keypoint_inputs(pose, min_confidence)
    q_p, c_enc = _encode(kp, params)
    grads = ipi_backward(merge_query(q_p, params["q_l"]), f_phi_d, params, upstream_grad=upstream_grad)
    dq_m = grads.pop("q_m")
    grads["q_l"] = dq_m
    de, grads["enc_ln_g"], grads["enc_ln_b"] = layer_norm_backward(dq_m, c_enc)
    grads["embed"] = kp.T @ de
    grads["pos"] = de
    return grads


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradcheckReport:
    config: IPIConfig
    seed: int
    max_rel_error: dict
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    def worst(self):
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]


def relative_error(analytic, numeric) -> float:
    """Max elementwise deviation over the larger of the two tensors' max magnitudes."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def central_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``fn(x)`` by central differences; ``x`` is restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def random_inputs(config: IPIConfig, seed: int, kv_tokens: int = 3):
    """Random pose (a few joints missing), feature tokens and upstream gradient."""
    rng = SplitMix64(seed ^ 0x5DEECE66D)
    body = np.empty((NUM_BODY, 3))
    body[:, :2] = rng.uniform_array((NUM_BODY, 2), 0.0, 1.0)
    body[:, 2] = rng.uniform_array((NUM_BODY,), 0.0, 1.0)
    f_phi_d = rng.uniform_array((kv_tokens, config.model_dim), -1.0, 1.0)
    upstream = rng.uniform_array((config.query_tokens, config.model_dim), -1.0, 1.0)
    return body, f_phi_d, upstream


def gradcheck(config: IPIConfig, seed: int = 0, step: float = 1e-5,
              tolerance: float = 1e-5, kv_tokens: int = 3) -> GradcheckReport:
    """Compare analytic gradients with central differences for every tensor.

    Covers all parameter tensors (through the full keypoint pipeline) plus the
    two extractor inputs ``q_m`` and ``f_phi_d``.
    """
    params = init_params(config, seed, randomize_all=True)
    body, f_phi_d, upstream = random_inputs(config, seed, kv_tokens)
    analytic = pipeline_backward(body, f_phi_d, params, upstream)
    errors = {}
    tensors = {k: np.array(v) for k, v in params.tensors.items()}
    work = IPIParams(config, tensors)  # wraps the same arrays, perturbed in place
    f_phi_d_w = np.array(f_phi_d)

    def objective(_):
        return float(np.sum(pipeline_forward(body, f_phi_d_w, work) * upstream))

    for name in tensor_shapes(config):
        numeric = central_difference(objective, work.tensors[name], step)
        errors[name] = relative_error(analytic[name], numeric)
    numeric = central_difference(objective, f_phi_d_w, step)
    errors["f_phi_d"] = relative_error(analytic["f_phi_d"], numeric)

    q_m = merge_query(encode_keypoints(body, params), params["q_l"])
    direct = ipi_backward(q_m, f_phi_d, params, upstream_grad=upstream)
    numeric = central_difference(
        lambda x: float(np.sum(ipi_forward(x, f_phi_d, params) * upstream)), np.array(q_m), step)
    errors["q_m"] = relative_error(direct["q_m"], numeric)
    return GradcheckReport(config, seed, errors, tolerance)
