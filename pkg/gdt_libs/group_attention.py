# gdt_libs/group_attention.py
"""
Token concatenation across group members and the group attention mask.

Joint sequences are ordered (c_1, x_1, c_2, x_2, ...). In the joint (encoder-only) form a pair
of tokens may attend to each other iff they belong to the same member or both are image tokens.
In the encoder-decoder form only image tokens are concatenated and attention is dense.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, InvalidMaskError
from .tensor_engine import (
    Tensor,
    concat,
    masked_softmax,
    matmul,
    reshape,
    split,
    transpose,
)

logger = logging.getLogger(__name__)


@dataclass
class GroupLayout:
    n: int
    L_img: int
    L_ctx: Tuple[int, ...] = ()
    joint: bool = True

    def __post_init__(self):
        self.L_ctx = tuple(int(c) for c in self.L_ctx) if self.L_ctx else (0,) * self.n
        if self.n < 1 or self.L_img < 1:
            raise ContractError(f"Group layout needs n >= 1 and L_img >= 1, got n={self.n}, L_img={self.L_img}")
        if len(self.L_ctx) != self.n or min(self.L_ctx) < 0:
            raise ContractError(f"Need {self.n} non-negative context lengths, got {list(self.L_ctx)}")

    @property
    def member_lengths(self) -> List[int]:
        if self.joint:
            return [c + self.L_img for c in self.L_ctx]
        return [self.L_img] * self.n

    @property
    def member_offsets(self) -> List[int]:
        return [int(x) for x in np.concatenate([[0], np.cumsum(self.member_lengths)[:-1]])]

    @property
    def total_length(self) -> int:
        return int(sum(self.member_lengths))

    def token_members(self) -> np.ndarray:
        return np.repeat(np.arange(self.n), self.member_lengths)

    def token_is_image(self) -> np.ndarray:
        if not self.joint:
            return np.ones(self.total_length, dtype=bool)
        parts = [np.concatenate([np.zeros(c, dtype=bool), np.ones(self.L_img, dtype=bool)])
                 for c in self.L_ctx]
        return np.concatenate(parts)


@dataclass
class AttentionMask:
    bits: np.ndarray

    @property
    def shape(self):
        return self.bits.shape

    def validate(self, length: Optional[int] = None):
        if self.bits.ndim != 2 or self.bits.shape[0] != self.bits.shape[1]:
            raise InvalidMaskError(f"Attention mask must be square, got {self.bits.shape}")
        if length is not None and self.bits.shape[0] != length:
            raise InvalidMaskError(f"Mask covers {self.bits.shape[0]} tokens, sequence has {length}")
        if not self.bits.any(axis=1).all():
            raise InvalidMaskError("Attention mask has a fully masked row")
        return self

    def dump(self) -> str:
        return "\n".join("".join("1" if b else "0" for b in row) for row in self.bits)


def build_group_mask(layout: GroupLayout) -> AttentionMask:
    members = layout.token_members()
    image = layout.token_is_image()
    same_member = members[:, None] == members[None, :]
    both_image = image[:, None] & image[None, :]
    return AttentionMask(same_member | both_image)


@dataclass
class AttentionWeights:
    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    heads: int


@dataclass
class CrossAttentionWeights:
    q_w: Tensor
    q_b: Tensor
    kv_w: Tensor
    kv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    heads: int


def _split_heads(x: Tensor, heads: int) -> Tensor:
    length, dim = x.shape
    if heads < 1 or dim % heads:
        raise ConfigError(f"Width {dim} is not divisible by {heads} heads")
    return transpose(reshape(x, (length, heads, dim // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, length, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (length, heads * dh))


def _attend(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    dh = q.shape[-1]
    logits = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    return matmul(masked_softmax(logits, mask), v)


def multi_head_attention(x: Tensor, weights: AttentionWeights, mask: Optional[np.ndarray] = None) -> Tensor:
    dim = x.shape[-1]
    qkv = matmul(x, weights.qkv_w) + weights.qkv_b
    q, k, v = (_split_heads(part, weights.heads) for part in split(qkv, [dim, dim, dim], axis=1))
    out = _merge_heads(_attend(q, k, v, mask))
    return matmul(out, weights.proj_w) + weights.proj_b


def cross_attention(x: Tensor, ctx: Tensor, weights: CrossAttentionWeights) -> Tensor:
    dim = x.shape[-1]
    if ctx.shape[0] == 0:
        return Tensor(np.zeros(x.shape, dtype=x.dtype))
    q = _split_heads(matmul(x, weights.q_w) + weights.q_b, weights.heads)
    kv = matmul(ctx, weights.kv_w) + weights.kv_b
    k, v = (_split_heads(part, weights.heads) for part in split(kv, [dim, dim], axis=1))
    out = _merge_heads(_attend(q, k, v, None))
    return matmul(out, weights.proj_w) + weights.proj_b


def concat_image_tokens(per_member: Sequence[Tensor]) -> Tensor:
    shapes = {tuple(t.shape) for t in per_member}
    if len(shapes) != 1:
        raise DimensionError(f"Group members have ragged token shapes {sorted(shapes)}")
    return concat(list(per_member), axis=0)


def split_image_tokens(joint: Tensor, layout: GroupLayout) -> List[Tensor]:
    if joint.shape[0] != layout.n * layout.L_img:
        raise DimensionError(
            f"Joint sequence of {joint.shape[0]} tokens does not match {layout.n} x {layout.L_img}"
        )
    return split(joint, [layout.L_img] * layout.n, axis=0)


def grouped_self_attention(per_member_tokens: Sequence[Tensor], weights: AttentionWeights,
                           layout: Optional[GroupLayout] = None) -> List[Tensor]:
    joint = concat_image_tokens(per_member_tokens)
    if layout is None:
        layout = GroupLayout(len(per_member_tokens), per_member_tokens[0].shape[0], joint=False)
    return split_image_tokens(multi_head_attention(joint, weights), layout)


def masked_joint_attention(joint_tokens: Tensor, mask: AttentionMask, weights: AttentionWeights) -> Tensor:
    mask.validate(joint_tokens.shape[0])
    return multi_head_attention(joint_tokens, weights, mask.bits)


def concat_joint_tokens(contexts: Sequence[Tensor], images: Sequence[Tensor]) -> Tensor:
    if len(contexts) != len(images):
        raise DimensionError(f"{len(contexts)} contexts for {len(images)} image token sets")
    pieces = []
    for ctx, img in zip(contexts, images):
        pieces.extend([ctx, img])
    return concat(pieces, axis=0)


def split_joint_tokens(joint: Tensor, layout: GroupLayout) -> Tuple[List[Tensor], List[Tensor]]:
    if joint.shape[0] != layout.total_length:
        raise DimensionError(f"Joint sequence of {joint.shape[0]} tokens, layout expects {layout.total_length}")
    sizes = []
    for c in layout.L_ctx:
        sizes.extend([c, layout.L_img])
    parts = split(joint, sizes, axis=0)
    return parts[0::2], parts[1::2]
