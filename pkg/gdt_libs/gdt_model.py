# gdt_libs/gdt_model.py
"""
Group Diffusion Transformer forward pass.

Both variants start from a plain single-image DiT and only change how self-attention sees the
group:

    encoder-decoder  image tokens of all members are concatenated for self-attention, split back,
                     then each member cross-attends to its own context embeddings.
    encoder-only     context and image tokens of all members form one joint sequence and
                     self-attention runs under the group mask.

No parameter depends on the group size, so the parameter manifest is identical for every
max_group and a checkpoint trained on single images loads into a group model unchanged.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import truncnorm

from .config import ModelConfig
from .errors import ConfigError, ContractError, LoadError
from .group_attention import (
    AttentionMask,
    AttentionWeights,
    CrossAttentionWeights,
    GroupLayout,
    build_group_mask,
    concat_joint_tokens,
    cross_attention,
    grouped_self_attention,
    masked_joint_attention,
    split_joint_tokens,
)
from .tensor_engine import (
    Tensor,
    embedding,
    gelu,
    get_default_dtype,
    layer_norm,
    matmul,
    reshape,
    silu,
    split,
    transpose,
)

logger = logging.getLogger(__name__)

INIT_STD = 0.02


def null_token(cfg: ModelConfig) -> int:
    """The last vocabulary id is reserved for dropped (unconditional) contexts."""
    return cfg.vocab - 1


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    D, P = cfg.dim, cfg.patch * cfg.patch
    hidden = cfg.mlp_ratio * D
    spec = OrderedDict()
    spec["x_embed.weight"] = ((P * cfg.channels_in, D), "normal")
    spec["x_embed.bias"] = ((D,), "zeros")
    spec["ctx_embed.table"] = ((cfg.vocab, D), "normal")
    spec["ctx_embed.pos"] = ((cfg.context_len, D), "normal")
    spec["t_embed.fc1.weight"] = ((D, D), "normal")
    spec["t_embed.fc1.bias"] = ((D,), "zeros")
    spec["t_embed.fc2.weight"] = ((D, D), "normal")
    spec["t_embed.fc2.bias"] = ((D,), "zeros")
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        spec[pre + "ada.weight"] = ((D, 6 * D), "zeros")
        spec[pre + "ada.bias"] = ((6 * D,), "zeros")
        spec[pre + "attn.qkv.weight"] = ((D, 3 * D), "normal")
        spec[pre + "attn.qkv.bias"] = ((3 * D,), "zeros")
        spec[pre + "attn.proj.weight"] = ((D, D), "normal")
        spec[pre + "attn.proj.bias"] = ((D,), "zeros")
        if cfg.variant == "encoder-decoder":
            spec[pre + "cross.norm.gain"] = ((D,), "ones")
            spec[pre + "cross.norm.bias"] = ((D,), "zeros")
            spec[pre + "cross.q.weight"] = ((D, D), "normal")
            spec[pre + "cross.q.bias"] = ((D,), "zeros")
            spec[pre + "cross.kv.weight"] = ((D, 2 * D), "normal")
            spec[pre + "cross.kv.bias"] = ((2 * D,), "zeros")
            spec[pre + "cross.proj.weight"] = ((D, D), "zeros")
            spec[pre + "cross.proj.bias"] = ((D,), "zeros")
        spec[pre + "mlp.fc1.weight"] = ((D, hidden), "normal")
        spec[pre + "mlp.fc1.bias"] = ((hidden,), "zeros")
        spec[pre + "mlp.fc2.weight"] = ((hidden, D), "normal")
        spec[pre + "mlp.fc2.bias"] = ((D,), "zeros")
    spec["final.ada.weight"] = ((D, 2 * D), "zeros")
    spec["final.ada.bias"] = ((2 * D,), "zeros")
    spec["final.linear.weight"] = ((D, P * cfg.channels_out), "zeros")
    spec["final.linear.bias"] = ((P * cfg.channels_out,), "zeros")
    return spec


def expected_param_count(cfg: ModelConfig) -> int:
    D, P, r = cfg.dim, cfg.patch * cfg.patch, cfg.mlp_ratio
    embed = P * cfg.channels_in * D + D + cfg.vocab * D + cfg.context_len * D + 2 * (D * D + D)
    block = 10 * D * D + 10 * D + 2 * r * D * D + r * D + D
    if cfg.variant == "encoder-decoder":
        block += 4 * D * D + 6 * D
    final = 2 * D * D + 2 * D + (D + 1) * P * cfg.channels_out
    return embed + cfg.depth * block + final


def param_init(cfg: ModelConfig, seed: int) -> "OrderedDict[str, Tensor]":
    cfg.validate()
    rng = np.random.default_rng(seed)
    dtype = get_default_dtype()
    params = OrderedDict()
    for name, (shape, kind) in param_shapes(cfg).items():
        if kind == "normal":
            values = truncnorm.rvs(-2.0, 2.0, scale=INIT_STD, size=shape, random_state=rng)
        elif kind == "ones":
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        params[name] = Tensor(values.astype(dtype), requires_grad=True, name=name)
    return params


def load_params(arrays: Dict[str, np.ndarray], cfg: ModelConfig) -> "OrderedDict[str, Tensor]":
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in arrays]
    unexpected = [k for k in arrays if k not in expected]
    misshaped = [f"{k} {tuple(arrays[k].shape)} != {shape}" for k, (shape, _) in expected.items()
                 if k in arrays and tuple(arrays[k].shape) != shape]
    if missing or unexpected or misshaped:
        problems = []
        if missing:
            problems.append(f"missing: {missing}")
        if unexpected:
            problems.append(f"unexpected: {unexpected}")
        if misshaped:
            problems.append(f"misshaped: {misshaped}")
        raise LoadError("Checkpoint does not match model config; " + "; ".join(problems))
    dtype = get_default_dtype()
    return OrderedDict(
        (name, Tensor(np.asarray(arrays[name]).astype(dtype), requires_grad=True, name=name))
        for name in expected
    )


def parameter_manifest(params: Dict[str, Tensor]) -> pd.DataFrame:
    rows = [{"name": k, "shape": "x".join(str(d) for d in v.shape), "count": int(v.size)}
            for k, v in params.items()]
    return pd.DataFrame(rows, columns=["name", "shape", "count"])


def _sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = positions.reshape(-1)[:, None] * omega[None, :]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


@lru_cache(maxsize=16)
def _positional_table(image_size: int, patch: int, dim: int) -> np.ndarray:
    side = image_size // patch
    rows, cols = np.meshgrid(np.arange(side, dtype=np.float64), np.arange(side, dtype=np.float64),
                             indexing="ij")
    table = np.concatenate([_sincos_1d(dim // 2, rows), _sincos_1d(dim // 2, cols)], axis=1)
    table.setflags(write=False)
    return table


@dataclass
class PatchGrid:
    tokens_per_image: int
    table: np.ndarray


def patch_grid(cfg: ModelConfig) -> PatchGrid:
    return PatchGrid(cfg.tokens_per_image, _positional_table(cfg.image_size, cfg.patch, cfg.dim))


def patchify(image: Tensor, cfg: ModelConfig) -> Tensor:
    C, H, W = image.shape
    if H != cfg.image_size or W != cfg.image_size:
        raise ConfigError(f"Image of {H}x{W} does not match image_size {cfg.image_size}")
    p, side = cfg.patch, cfg.image_size // cfg.patch
    grid = transpose(reshape(image, (C, side, p, side, p)), (1, 3, 2, 4, 0))
    return reshape(grid, (side * side, p * p * C))


def unpatchify(tokens: Tensor, cfg: ModelConfig, channels: Optional[int] = None) -> Tensor:
    C = channels or cfg.channels_out
    p, side = cfg.patch, cfg.image_size // cfg.patch
    grid = transpose(reshape(tokens, (side, side, p, p, C)), (4, 0, 2, 1, 3))
    return reshape(grid, (C, cfg.image_size, cfg.image_size))


def embed_context(tokens: Sequence[int], cfg: ModelConfig, params: Dict[str, Tensor]) -> Tensor:
    ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if ids.size > cfg.context_len:
        raise ContractError(f"Context of {ids.size} tokens exceeds context_len {cfg.context_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab):
        raise ContractError(f"Context token ids {ids.tolist()} outside vocabulary of {cfg.vocab}")
    table = params["ctx_embed.table"]
    if ids.size == 0:
        return Tensor(np.zeros((0, cfg.dim), dtype=table.dtype))
    return embedding(table, ids) + embedding(params["ctx_embed.pos"], np.arange(ids.size))


def timestep_embedding(t: float, dim: int, dtype=None) -> Tensor:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    feats = np.concatenate([np.cos(args), np.sin(args), np.zeros(dim - 2 * half)])
    return Tensor(feats.astype(dtype or get_default_dtype()))


def embed_timestep(t: float, cfg: ModelConfig, params: Dict[str, Tensor]) -> Tensor:
    feats = reshape(timestep_embedding(t, cfg.dim, params["t_embed.fc1.weight"].dtype), (1, cfg.dim))
    h = silu(matmul(feats, params["t_embed.fc1.weight"]) + params["t_embed.fc1.bias"])
    return matmul(h, params["t_embed.fc2.weight"]) + params["t_embed.fc2.bias"]


@dataclass
class BlockWeights:
    ada_w: Tensor
    ada_b: Tensor
    attn: AttentionWeights
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    cross: Optional[CrossAttentionWeights] = None
    cross_gain: Optional[Tensor] = None
    cross_bias: Optional[Tensor] = None


def block_weights(params: Dict[str, Tensor], index: int, cfg: ModelConfig) -> BlockWeights:
    p = lambda name: params[f"blocks.{index}.{name}"]  # noqa: E731
    weights = BlockWeights(
        ada_w=p("ada.weight"), ada_b=p("ada.bias"),
        attn=AttentionWeights(p("attn.qkv.weight"), p("attn.qkv.bias"),
                              p("attn.proj.weight"), p("attn.proj.bias"), cfg.heads),
        fc1_w=p("mlp.fc1.weight"), fc1_b=p("mlp.fc1.bias"),
        fc2_w=p("mlp.fc2.weight"), fc2_b=p("mlp.fc2.bias"),
    )
    if cfg.variant == "encoder-decoder":
        weights.cross = CrossAttentionWeights(
            p("cross.q.weight"), p("cross.q.bias"), p("cross.kv.weight"), p("cross.kv.bias"),
            p("cross.proj.weight"), p("cross.proj.bias"), cfg.heads)
        weights.cross_gain, weights.cross_bias = p("cross.norm.gain"), p("cross.norm.bias")
    return weights


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (scale + 1.0) + shift


def _modulation(cond: Tensor, w: Tensor, b: Tensor, chunks: int) -> List[Tensor]:
    dim = w.shape[0]
    out = reshape(matmul(cond, w) + b, (chunks * dim,))
    return split(out, [dim] * chunks, axis=0)


def _mlp(x: Tensor, w: BlockWeights) -> Tensor:
    return matmul(gelu(matmul(x, w.fc1_w) + w.fc1_b), w.fc2_w) + w.fc2_b


def encdec_block(per_member_img_tokens: Sequence[Tensor], per_member_ctx: Sequence[Tensor],
                 cond: Tensor, w: BlockWeights) -> List[Tensor]:
    if w.cross is None:
        raise ConfigError("encdec_block needs encoder-decoder weights")
    shift1, scale1, gate1, shift2, scale2, gate2 = _modulation(cond, w.ada_w, w.ada_b, 6)
    normed = [modulate(layer_norm(x), shift1, scale1) for x in per_member_img_tokens]
    attended = grouped_self_attention(normed, w.attn)
    tokens = [x + gate1 * a for x, a in zip(per_member_img_tokens, attended)]
    tokens = [x + cross_attention(layer_norm(x, w.cross_gain, w.cross_bias), ctx, w.cross)
              for x, ctx in zip(tokens, per_member_ctx)]
    return [x + gate2 * _mlp(modulate(layer_norm(x), shift2, scale2), w) for x in tokens]


def enconly_block(joint_tokens: Tensor, mask: AttentionMask, cond: Tensor, w: BlockWeights) -> Tensor:
    shift1, scale1, gate1, shift2, scale2, gate2 = _modulation(cond, w.ada_w, w.ada_b, 6)
    x = joint_tokens + gate1 * masked_joint_attention(
        modulate(layer_norm(joint_tokens), shift1, scale1), mask, w.attn)
    return x + gate2 * _mlp(modulate(layer_norm(x), shift2, scale2), w)


def final_layer(tokens: Tensor, cond: Tensor, params: Dict[str, Tensor]) -> Tensor:
    shift, scale = _modulation(cond, params["final.ada.weight"], params["final.ada.bias"], 2)
    return matmul(modulate(layer_norm(tokens), shift, scale), params["final.linear.weight"]) \
        + params["final.linear.bias"]


def embed_images(members: Sequence, cfg: ModelConfig, params: Dict[str, Tensor]) -> List[Tensor]:
    dtype = params["x_embed.weight"].dtype
    pos = Tensor(patch_grid(cfg).table.astype(dtype))
    tokens = []
    for x in members:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)
        if x.shape[0] != cfg.channels_in:
            raise ConfigError(f"Member has {x.shape[0]} channels, model expects {cfg.channels_in}")
        tokens.append(matmul(patchify(x, cfg), params["x_embed.weight"]) + params["x_embed.bias"] + pos)
    return tokens


def model_forward(members: Sequence, contexts: Sequence[Sequence[int]], t: float, cfg: ModelConfig,
                  params: Dict[str, Tensor]) -> List[Tensor]:
    """
    Predict the denoising target for every member of a group.

    members:  n arrays/tensors of shape [channels_in, H, W]
    contexts: n token id sequences, one per member
    t:        timestep on the embedding scale (see diffusion_process.model_time)
    """
    n = len(members)
    if not 1 <= n <= cfg.max_group:
        raise ContractError(f"Group of {n} members outside the supported range 1..{cfg.max_group}")
    if len(contexts) != n:
        raise ContractError(f"{len(contexts)} contexts for {n} members")
    shapes = {tuple(np.shape(m.data if isinstance(m, Tensor) else m)) for m in members}
    if len(shapes) != 1:
        raise ConfigError(f"Group members have different shapes {sorted(shapes)}")

    tokens = embed_images(members, cfg, params)
    ctx = [embed_context(c, cfg, params) for c in contexts]
    cond = silu(embed_timestep(t, cfg, params))

    if cfg.variant == "encoder-decoder":
        for i in range(cfg.depth):
            tokens = encdec_block(tokens, ctx, cond, block_weights(params, i, cfg))
    else:
        layout = GroupLayout(n, cfg.tokens_per_image, tuple(c.shape[0] for c in ctx), joint=True)
        mask = build_group_mask(layout)
        joint = concat_joint_tokens(ctx, tokens)
        for i in range(cfg.depth):
            joint = enconly_block(joint, mask, cond, block_weights(params, i, cfg))
        _, tokens = split_joint_tokens(joint, layout)

    return [unpatchify(final_layer(tok, cond, params), cfg) for tok in tokens]
