"""Gated long/short two-stream video transformer.

Token layout, per batch element:

* long stream  ``z_lt``: ``N * n_lt`` patch tokens, frame-major (token ``t*N + p``)
* short stream ``z_st``: cls token followed by ``N * n_st`` patch tokens

Per-head projections are laid out as ``[A, 3, K_h]`` along the output
axis, so a ``[B, T, 3K]`` projection reshapes to ``[B, A, T, 3K_h]`` with
query, key and value in consecutive ``K_h`` blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ConfigError, GatingMode, ModelConfig
from .tensor import Tensor


# --- parameters -----------------------------------------------------------


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor's name and shape; a pure function of ``cfg``."""
    K, Kh, N, C = cfg.K, cfg.head_dim, cfg.N, cfg.num_classes
    hidden = cfg.mlp_ratio * K
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed": (K, cfg.patch_dim),
        "cls": (K,),
        "pos_st": (N * cfg.n_st + 1, K),
    }
    if cfg.uses_long_stream:
        shapes["pos_lt"] = (N * cfg.n_lt, K)
    for i in range(cfg.L):
        b = f"blocks.{i}."
        shapes[b + "qkv_st"] = (K, 3 * K)
        if cfg.uses_long_stream:
            shapes[b + "qkv_lt"] = (K, 3 * K)
            shapes[b + "qkv_joint"] = (K, 3 * K)
        for stream in ("st", "lt"):
            if cfg.gating_mode is GatingMode.FEATURE:
                shapes[b + f"gate_{stream}.weight"] = (6 * Kh, 2)
                shapes[b + f"gate_{stream}.bias"] = (2,)
            elif cfg.gating_mode is GatingMode.FIXED_PARAM:
                shapes[b + f"gate_{stream}.logits"] = (cfg.A, 2)
        shapes[b + "msa.weight"] = (K, K)
        shapes[b + "msa.bias"] = (K,)
        for ln in ("ln_t", "ln_s", "ln_mlp"):
            shapes[b + ln + ".gamma"] = (K,)
            shapes[b + ln + ".beta"] = (K,)
        shapes[b + "mlp.fc1.weight"] = (K, hidden)
        shapes[b + "mlp.fc1.bias"] = (hidden,)
        shapes[b + "mlp.fc2.weight"] = (hidden, K)
        shapes[b + "mlp.fc2.bias"] = (K,)
    shapes["ln_final.gamma"] = (K,)
    shapes["ln_final.beta"] = (K,)
    shapes["head.hidden.weight"] = (K, K)
    shapes["head.hidden.bias"] = (K,)
    shapes["head.out.weight"] = (K, C)
    shapes["head.out.bias"] = (C,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(cfg).values())


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Truncated-normal(0.02) weights, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith((".bias", ".beta")) or name.endswith(".logits"):
            data = np.zeros(shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = _trunc_normal(rng, shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


# --- tracing --------------------------------------------------------------


@dataclass
class AttentionRecord:
    block: int
    kind: str  # "temporal" | "spatial"
    query: str  # "patch" | "cls"
    probs: np.ndarray  # [B, A, ..., n_queries, n_keys]


@dataclass
class ForwardTrace:
    """Optional instrumentation filled in by :func:`forward`."""

    attention: list[AttentionRecord] = field(default_factory=list)
    gates: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    logit_counts: dict[tuple[int, str], int] = field(default_factory=dict)

    def add(self, rec: AttentionRecord) -> None:
        self.attention.append(rec)
        # count logits for a single batch element and a single head
        q, k = rec.probs.shape[-2:]
        per_group = int(np.prod(rec.probs.shape[2:-2], dtype=np.int64))
        key = (rec.block, rec.kind)
        self.logit_counts[key] = self.logit_counts.get(key, 0) + per_group * q * k


def temporal_logit_count(cfg: ModelConfig) -> int:
    Tf, N = cfg.frames_total, cfg.N
    return N * Tf * (1 + Tf) + (1 + N * Tf)


def spatial_logit_count(cfg: ModelConfig) -> int:
    Tf, N = cfg.frames_total, cfg.N
    return Tf * N * (1 + N) + (1 + N)


def joint_logit_count(cfg: ModelConfig) -> int:
    return cfg.tokens_total**2


# --- building blocks ------------------------------------------------------


# pixels in [0, 1] are centred before projection; without this the shared
# mean-grey component swamps the patch embeddings and training stalls
PIXEL_MEAN = 0.5
PIXEL_STD = 0.25


def patchify(frames: np.ndarray, Q: int) -> np.ndarray:
    """``[B, n, H, W, C]`` -> ``[B, n*N, Q*Q*C]`` with frame-major, row-major patches."""
    B, n, H, W, C = frames.shape
    x = frames.reshape(B, n, H // Q, Q, W // Q, Q, C).transpose(0, 1, 2, 4, 3, 5, 6)
    return x.reshape(B, n * (H // Q) * (W // Q), Q * Q * C)


def _normalised_patches(frames: np.ndarray, Q: int) -> np.ndarray:
    return (patchify(frames, Q) - PIXEL_MEAN) / PIXEL_STD


def _check_frames(frames: np.ndarray, n: int, cfg: ModelConfig, label: str) -> None:
    want = (n, cfg.H, cfg.W, cfg.C)
    if frames.ndim != 5 or frames.shape[1:] != want:
        raise T.DimensionError(f"{label} frames: expected [B, {n}, {cfg.H}, {cfg.W}, {cfg.C}], got {frames.shape}")


def embed(frames_st: np.ndarray, frames_lt: np.ndarray | None, params, cfg: ModelConfig):
    """Patch projection of centred pixels plus positional embeddings.

    The cls token is prepended to the short stream.
    """
    _check_frames(frames_st, cfg.n_st, cfg, "short-stream")
    B = frames_st.shape[0]
    E_t = T.swap_last(params["patch_embed"])
    z_st = T.matmul(Tensor(_normalised_patches(frames_st, cfg.Q)), E_t)
    cls = T.broadcast_to(T.reshape(params["cls"], (1, 1, cfg.K)), (B, 1, cfg.K))
    z_st = T.concat([cls, z_st], axis=1)
    z_st = T.add(z_st, T.broadcast_to(params["pos_st"], z_st.shape))
    if not cfg.uses_long_stream:
        return z_st, None
    if frames_lt is None:
        raise ConfigError(f"gating mode {cfg.gating_mode} needs long-stream frames")
    _check_frames(frames_lt, cfg.n_lt, cfg, "long-stream")
    z_lt = T.matmul(Tensor(_normalised_patches(frames_lt, cfg.Q)), E_t)
    z_lt = T.add(z_lt, T.broadcast_to(params["pos_lt"], z_lt.shape))
    return z_st, z_lt


def _ln(x: Tensor, params, prefix: str, cfg: ModelConfig) -> Tensor:
    return T.layer_norm(x, params[prefix + ".gamma"], params[prefix + ".beta"], cfg.ln_eps)


def to_heads(x: Tensor, cfg: ModelConfig) -> Tensor:
    """``[B, T, 3K]`` -> ``[B, A, T, 3K_h]``."""
    B, n, _ = x.shape
    return T.permute(T.reshape(x, (B, n, cfg.A, 3 * cfg.head_dim)), (0, 2, 1, 3))


def compute_qkv(h_st: Tensor, h_lt: Tensor | None, params, cfg: ModelConfig, block: int):
    """Per-stream and joint projections of already-normalised tokens.

    Returns ``(st, lt, joint)``, each ``[B, A, tokens, 3K_h]``; ``lt`` and
    ``joint`` are ``None`` without a long stream. Joint tokens are ordered
    long stream first, then the short stream (cls included).
    """
    b = f"blocks.{block}."
    st = to_heads(T.matmul(h_st, params[b + "qkv_st"]), cfg)
    if h_lt is None:
        return st, None, None
    lt = to_heads(T.matmul(h_lt, params[b + "qkv_lt"]), cfg)
    joint = to_heads(T.matmul(T.concat([h_lt, h_st], axis=1), params[b + "qkv_joint"]), cfg)
    return st, lt, joint


def split_joint(joint: Tensor, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Joint QKV -> (long slice ``[:lt]``, short slice ``[lt:lt+st]``)."""
    n_lt = cfg.N * cfg.n_lt
    return (
        T.slice_axis(joint, 2, 0, n_lt),
        T.slice_axis(joint, 2, n_lt, joint.shape[2]),
    )


def compute_gates(qkv_ind: Tensor, qkv_joint: Tensor, params, cfg: ModelConfig, block: int, stream: str):
    """Joint-stream weight ``g`` per batch element and head, shape ``[B, A]``.

    Returns ``None`` in OnlyShortTerm mode, where nothing is gated.
    """
    if qkv_ind.shape != qkv_joint.shape:
        raise ConfigError(f"gate inputs differ in shape: {qkv_ind.shape} vs {qkv_joint.shape}")
    mode = cfg.gating_mode
    B = qkv_ind.shape[0]
    b = f"blocks.{block}.gate_{stream}"
    if mode is GatingMode.ONLY_SHORT_TERM:
        return None
    if mode is GatingMode.NO_GATING:
        return Tensor(np.full((B, cfg.A), 0.5))
    if mode is GatingMode.FIXED_PARAM:
        logits = T.broadcast_to(params[b + ".logits"], (B, cfg.A, 2))
    else:
        pooled = T.concat([T.mean(qkv_ind, axis=2), T.mean(qkv_joint, axis=2)], axis=-1)
        logits = T.linear(pooled, params[b + ".weight"], params[b + ".bias"])
    probs = T.softmax_last(logits)
    return T.reshape(T.slice_axis(probs, -1, 0, 1), (B, cfg.A))


def gate_qkv(qkv_ind: Tensor, qkv_joint: Tensor, g: Tensor) -> Tensor:
    """``(1 - g) * ind + g * joint`` with ``g`` broadcast per batch element and head."""
    if qkv_ind.shape != qkv_joint.shape:
        raise T.DimensionError(f"gate_qkv: {qkv_ind.shape} vs {qkv_joint.shape}")
    B, A = qkv_ind.shape[:2]
    gb = T.broadcast_to(T.reshape(g, (B, A, 1, 1)), qkv_ind.shape)
    return T.add(T.mul(T.one_minus(gb), qkv_ind), T.mul(gb, qkv_joint))


def _qkv_parts(x: Tensor, kh: int) -> tuple[Tensor, Tensor, Tensor]:
    return (
        T.slice_axis(x, -1, 0, kh),
        T.slice_axis(x, -1, kh, 2 * kh),
        T.slice_axis(x, -1, 2 * kh, 3 * kh),
    )


def _attend(q: Tensor, k: Tensor, v: Tensor, kh: int) -> tuple[Tensor, Tensor]:
    logits = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(kh))
    probs = T.softmax_last(logits)
    return T.matmul(probs, v), probs


def temporal_attention(gated_st: Tensor, gated_lt: Tensor | None, cfg: ModelConfig,
                       block: int = 0, trace: ForwardTrace | None = None):
    """Attention across frames at a fixed spatial position.

    Each patch query sees the cls key plus the keys at its spatial position
    in every long- and short-stream frame. The cls query sees every key.
    Returns per-head outputs ``(out_st, out_lt)`` in the input token layouts.
    """
    B, A, _, d3 = gated_st.shape
    kh, N = d3 // 3, cfg.N
    cls_tok = T.slice_axis(gated_st, 2, 0, 1)
    patches = T.slice_axis(gated_st, 2, 1, gated_st.shape[2])
    if gated_lt is not None:
        patches = T.concat([gated_lt, patches], axis=2)
    Tf = patches.shape[2] // N
    # [B, A, N, Tf, 3Kh]: group by spatial position
    by_pos = T.permute(T.reshape(patches, (B, A, Tf, N, d3)), (0, 1, 3, 2, 4))
    q, k, v = _qkv_parts(by_pos, kh)
    cq, ck, cv = _qkv_parts(cls_tok, kh)
    ck_b = T.broadcast_to(T.reshape(ck, (B, A, 1, 1, kh)), (B, A, N, 1, kh))
    cv_b = T.broadcast_to(T.reshape(cv, (B, A, 1, 1, kh)), (B, A, N, 1, kh))
    out, probs = _attend(q, T.concat([ck_b, k], axis=3), T.concat([cv_b, v], axis=3), kh)

    # cls sees everything
    _, pk, pv = _qkv_parts(patches, kh)
    cls_out, cls_probs = _attend(cq, T.concat([ck, pk], axis=2), T.concat([cv, pv], axis=2), kh)

    if trace is not None:
        trace.add(AttentionRecord(block, "temporal", "patch", probs.data))
        trace.add(AttentionRecord(block, "temporal", "cls", cls_probs.data))

    out = T.reshape(T.permute(out, (0, 1, 3, 2, 4)), (B, A, Tf * N, kh))
    if gated_lt is None:
        return T.concat([cls_out, out], axis=2), None
    n_lt = gated_lt.shape[2]
    out_lt = T.slice_axis(out, 2, 0, n_lt)
    out_st = T.concat([cls_out, T.slice_axis(out, 2, n_lt, Tf * N)], axis=2)
    return out_st, out_lt


def msa_project(out_st: Tensor, out_lt: Tensor | None, params, cfg: ModelConfig, block: int,
                res_st: Tensor, res_lt: Tensor | None):
    """Merge heads, apply the output projection and add the residual."""
    heads = out_st if out_lt is None else T.concat([out_lt, out_st], axis=2)
    B, A, n, kh = heads.shape
    merged = T.reshape(T.permute(heads, (0, 2, 1, 3)), (B, n, A * kh))
    b = f"blocks.{block}.msa"
    proj = T.linear(merged, params[b + ".weight"], params[b + ".bias"])
    if res_lt is None:
        return T.add(proj, res_st), None
    n_lt = res_lt.shape[1]
    return (
        T.add(T.slice_axis(proj, 1, n_lt, n), res_st),
        T.add(T.slice_axis(proj, 1, 0, n_lt), res_lt),
    )


def spatial_attention(z_st: Tensor, z_lt: Tensor | None, params, cfg: ModelConfig,
                      block: int = 0, trace: ForwardTrace | None = None):
    """Attention within each frame, reusing the per-stream QKV projections.

    Patch queries see cls plus the N patches of their own frame; the cls
    query sees cls plus the patches of the newest short-stream frame.
    """
    b = f"blocks.{block}."
    h_st = _ln(z_st, params, b + "ln_s", cfg)
    qkv_st = to_heads(T.matmul(h_st, params[b + "qkv_st"]), cfg)
    B, A, _, d3 = qkv_st.shape
    kh, N = d3 // 3, cfg.N
    cls_tok = T.slice_axis(qkv_st, 2, 0, 1)
    patches = T.slice_axis(qkv_st, 2, 1, qkv_st.shape[2])
    if z_lt is not None:
        h_lt = _ln(z_lt, params, b + "ln_s", cfg)
        qkv_lt = to_heads(T.matmul(h_lt, params[b + "qkv_lt"]), cfg)
        patches = T.concat([qkv_lt, patches], axis=2)
    Tf = patches.shape[2] // N
    by_frame = T.reshape(patches, (B, A, Tf, N, d3))
    q, k, v = _qkv_parts(by_frame, kh)
    cq, ck, cv = _qkv_parts(cls_tok, kh)
    ck_b = T.broadcast_to(T.reshape(ck, (B, A, 1, 1, kh)), (B, A, Tf, 1, kh))
    cv_b = T.broadcast_to(T.reshape(cv, (B, A, 1, 1, kh)), (B, A, Tf, 1, kh))
    out, probs = _attend(q, T.concat([ck_b, k], axis=3), T.concat([cv_b, v], axis=3), kh)

    last = T.slice_axis(by_frame, 2, Tf - 1, Tf)
    _, lk, lv = _qkv_parts(T.reshape(last, (B, A, N, d3)), kh)
    cls_out, cls_probs = _attend(cq, T.concat([ck, lk], axis=2), T.concat([cv, lv], axis=2), kh)

    if trace is not None:
        trace.add(AttentionRecord(block, "spatial", "patch", probs.data))
        trace.add(AttentionRecord(block, "spatial", "cls", cls_probs.data))

    out = T.reshape(out, (B, A, Tf * N, kh))
    if z_lt is None:
        out_st, out_lt = T.concat([cls_out, out], axis=2), None
    else:
        n_lt = z_lt.shape[1]
        out_lt = T.slice_axis(out, 2, 0, n_lt)
        out_st = T.concat([cls_out, T.slice_axis(out, 2, n_lt, Tf * N)], axis=2)
    return msa_project(out_st, out_lt, params, cfg, block, z_st, z_lt)


def mlp_block(z_st: Tensor, z_lt: Tensor | None, params, cfg: ModelConfig, block: int):
    """Pre-norm two-layer GELU MLP with residual, applied to both streams."""
    b = f"blocks.{block}."
    z = z_st if z_lt is None else T.concat([z_lt, z_st], axis=1)
    h = _ln(z, params, b + "ln_mlp", cfg)
    h = T.gelu(T.linear(h, params[b + "mlp.fc1.weight"], params[b + "mlp.fc1.bias"]))
    h = T.linear(h, params[b + "mlp.fc2.weight"], params[b + "mlp.fc2.bias"])
    z = T.add(z, h)
    if z_lt is None:
        return z, None
    n_lt = z_lt.shape[1]
    return T.slice_axis(z, 1, n_lt, z.shape[1]), T.slice_axis(z, 1, 0, n_lt)


def gated_temporal_block(z_st: Tensor, z_lt: Tensor | None, params, cfg: ModelConfig,
                         block: int, trace: ForwardTrace | None = None):
    b = f"blocks.{block}."
    h_st = _ln(z_st, params, b + "ln_t", cfg)
    h_lt = _ln(z_lt, params, b + "ln_t", cfg) if z_lt is not None else None
    st, lt, joint = compute_qkv(h_st, h_lt, params, cfg, block)
    if joint is not None:
        j_lt, j_st = split_joint(joint, cfg)
        g_st = compute_gates(st, j_st, params, cfg, block, "st")
        g_lt = compute_gates(lt, j_lt, params, cfg, block, "lt")
        if trace is not None:
            trace.gates[(block, "st")] = g_st.data.copy()
            trace.gates[(block, "lt")] = g_lt.data.copy()
        st = gate_qkv(st, j_st, g_st)
        lt = gate_qkv(lt, j_lt, g_lt)
    out_st, out_lt = temporal_attention(st, lt, cfg, block, trace)
    return msa_project(out_st, out_lt, params, cfg, block, z_st, z_lt)


def head(z_st: Tensor, params, cfg: ModelConfig) -> Tensor:
    B = z_st.shape[0]
    y = _ln(T.reshape(T.slice_axis(z_st, 1, 0, 1), (B, cfg.K)), params, "ln_final", cfg)
    y = T.gelu(T.linear(y, params["head.hidden.weight"], params["head.hidden.bias"]))
    return T.linear(y, params["head.out.weight"], params["head.out.bias"])


def forward(frames_st, frames_lt, params, cfg: ModelConfig, trace: ForwardTrace | None = None) -> Tensor:
    """Class logits for one window (``[n, H, W, C]`` inputs) or a batch (``[B, n, H, W, C]``)."""
    frames_st = np.asarray(frames_st, dtype=np.float64)
    single = frames_st.ndim == 4
    if single:
        frames_st = frames_st[None]
    if frames_lt is not None:
        frames_lt = np.asarray(frames_lt, dtype=np.float64)
        if single:
            frames_lt = frames_lt[None]
    z_st, z_lt = embed(frames_st, frames_lt, params, cfg)
    for i in range(cfg.L):
        z_st, z_lt = gated_temporal_block(z_st, z_lt, params, cfg, i, trace)
        z_st, z_lt = spatial_attention(z_st, z_lt, params, cfg, i, trace)
        z_st, z_lt = mlp_block(z_st, z_lt, params, cfg, i)
    logits = head(z_st, params, cfg)
    return T.reshape(logits, (cfg.num_classes,)) if single else logits


class GatedStreamTransformer:
    """Configuration plus parameters, with a batched forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = parameter_shapes(config)
        if set(self.params) != set(expected):
            raise ConfigError(f"parameter names do not match config: {sorted(set(self.params) ^ set(expected))}")

    def __call__(self, frames_st, frames_lt=None, trace: ForwardTrace | None = None) -> Tensor:
        return forward(frames_st, frames_lt, self.params, self.config, trace)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return parameter_count(self.config)
