import itertools
import os

import numpy as np
import pytest

from gdt_libs.errors import ContractError, DimensionError, InvalidMaskError
from gdt_libs.group_attention import (
    AttentionMask,
    AttentionWeights,
    CrossAttentionWeights,
    GroupLayout,
    build_group_mask,
    concat_joint_tokens,
    cross_attention,
    grouped_self_attention,
    masked_joint_attention,
    multi_head_attention,
    split_image_tokens,
    split_joint_tokens,
)
from gdt_libs.tensor_engine import Tensor

from conftest import GOLDEN_DIR

DIM, HEADS = 8, 2


def brute_force_mask(n, L_img, L_ctx):
    # allowed iff same member, or both image tokens
    members = np.concatenate([np.full(L_ctx[i] + L_img, i) for i in range(n)])
    image = np.concatenate([np.arange(L_ctx[i] + L_img) >= L_ctx[i] for i in range(n)])
    return (members[:, None] == members[None, :]) | (image[:, None] & image[None, :])


def test_brute_force_reference_on_a_small_layout():
    labels = [(0, "ctx"), (0, "img"), (0, "img"), (1, "img"), (1, "img")]
    expected = np.array([[a[0] == b[0] or a[1] == b[1] == "img" for b in labels] for a in labels])
    np.testing.assert_array_equal(brute_force_mask(2, 2, (1, 0)), expected)


def attention_weights(rng, dim=DIM, heads=HEADS):
    return AttentionWeights(
        qkv_w=Tensor(rng.standard_normal((dim, 3 * dim)) * 0.3),
        qkv_b=Tensor(rng.standard_normal(3 * dim) * 0.1),
        proj_w=Tensor(rng.standard_normal((dim, dim)) * 0.3),
        proj_b=Tensor(rng.standard_normal(dim) * 0.1),
        heads=heads,
    )


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_mask_matches_brute_force(n):
    checked = 0
    for L_img in range(1, 9):
        for L_ctx in itertools.product(range(5), repeat=n):
            mask = build_group_mask(GroupLayout(n, L_img, L_ctx))
            np.testing.assert_array_equal(mask.bits, brute_force_mask(n, L_img, L_ctx))
            checked += 1
    assert checked == 8 * 5 ** n


def test_mask_is_symmetric_and_has_full_diagonal():
    bits = build_group_mask(GroupLayout(3, 4, (2, 0, 3))).bits
    np.testing.assert_array_equal(bits, bits.T)
    assert bits.diagonal().all()


def test_mask_golden_for_two_members():
    with open(os.path.join(GOLDEN_DIR, "mask_n2.txt")) as f:
        expected = f.read().strip()
    assert build_group_mask(GroupLayout(2, 1, (1, 1))).dump() == expected


def test_context_tokens_of_different_members_never_see_each_other():
    layout = GroupLayout(3, 2, (2, 2, 2))
    bits = build_group_mask(layout).bits
    members, image = layout.token_members(), layout.token_is_image()
    cross = members[:, None] != members[None, :]
    assert not bits[cross & ~image[:, None]].any()
    assert not bits[cross & ~image[None, :]].any()


def test_layout_offsets_and_lengths():
    layout = GroupLayout(3, 4, (2, 0, 1))
    assert layout.member_lengths == [6, 4, 5]
    assert layout.member_offsets == [0, 6, 10]
    assert layout.total_length == 15
    dense = GroupLayout(3, 4, joint=False)
    assert dense.member_lengths == [4, 4, 4]


def test_layout_rejects_bad_sizes():
    with pytest.raises(ContractError):
        GroupLayout(0, 4)
    with pytest.raises(ContractError):
        GroupLayout(2, 4, (1,))


def test_mask_validation():
    with pytest.raises(InvalidMaskError):
        AttentionMask(np.ones((2, 3), dtype=bool)).validate()
    with pytest.raises(InvalidMaskError):
        AttentionMask(np.eye(3, dtype=bool)).validate(4)
    with pytest.raises(InvalidMaskError):
        AttentionMask(np.array([[1, 0], [0, 0]], dtype=bool)).validate()


def test_grouped_attention_equals_dense_attention_on_concatenation(rng):
    w = attention_weights(rng)
    members = [Tensor(rng.standard_normal((4, DIM))) for _ in range(3)]
    grouped = grouped_self_attention(members, w)
    dense = multi_head_attention(Tensor(np.concatenate([m.data for m in members])), w)
    np.testing.assert_allclose(np.concatenate([g.data for g in grouped]), dense.data, atol=1e-5)


def test_single_member_reduces_to_per_image_attention(rng):
    w = attention_weights(rng)
    tokens = Tensor(rng.standard_normal((5, DIM)))
    (out,) = grouped_self_attention([tokens], w)
    np.testing.assert_allclose(out.data, multi_head_attention(tokens, w).data, atol=1e-6)


def test_grouped_attention_is_permutation_equivariant(rng):
    w = attention_weights(rng)
    members = [Tensor(rng.standard_normal((3, DIM))) for _ in range(4)]
    out = grouped_self_attention(members, w)
    perm = [2, 0, 3, 1]
    out_perm = grouped_self_attention([members[p] for p in perm], w)
    for k, p in enumerate(perm):
        np.testing.assert_allclose(out_perm[k].data, out[p].data, atol=1e-5)


def test_masked_joint_attention_isolates_contexts(rng):
    w = attention_weights(rng)
    layout = GroupLayout(2, 3, (2, 2))
    ctx = [Tensor(rng.standard_normal((2, DIM))) for _ in range(2)]
    img = [Tensor(rng.standard_normal((3, DIM))) for _ in range(2)]
    mask = build_group_mask(layout)
    base = masked_joint_attention(concat_joint_tokens(ctx, img), mask, w)

    # member 0 never sees member 1's context, image tokens included
    ctx_changed = [ctx[0], Tensor(rng.standard_normal((2, DIM)))]
    moved = masked_joint_attention(concat_joint_tokens(ctx_changed, img), mask, w)
    np.testing.assert_allclose(moved.data[:5], base.data[:5], atol=1e-6)
    assert not np.allclose(moved.data[5:], base.data[5:])


def test_joint_split_inverts_concat(rng):
    layout = GroupLayout(3, 2, (1, 0, 2))
    ctx = [Tensor(rng.standard_normal((c, DIM))) for c in layout.L_ctx]
    img = [Tensor(rng.standard_normal((2, DIM))) for _ in range(3)]
    back_ctx, back_img = split_joint_tokens(concat_joint_tokens(ctx, img), layout)
    for a, b in zip(ctx + img, back_ctx + back_img):
        np.testing.assert_array_equal(a.data, b.data)


def test_split_errors():
    with pytest.raises(DimensionError):
        split_image_tokens(Tensor(np.zeros((7, DIM))), GroupLayout(2, 4, joint=False))
    with pytest.raises(DimensionError):
        split_joint_tokens(Tensor(np.zeros((7, DIM))), GroupLayout(2, 3, (1, 1)))


def test_ragged_members_are_rejected(rng):
    w = attention_weights(rng)
    with pytest.raises(DimensionError):
        grouped_self_attention([Tensor(np.zeros((3, DIM))), Tensor(np.zeros((4, DIM)))], w)


def test_cross_attention_with_empty_context_is_zero(rng):
    weights = CrossAttentionWeights(
        q_w=Tensor(rng.standard_normal((DIM, DIM))), q_b=Tensor(np.zeros(DIM)),
        kv_w=Tensor(rng.standard_normal((DIM, 2 * DIM))), kv_b=Tensor(np.zeros(2 * DIM)),
        proj_w=Tensor(rng.standard_normal((DIM, DIM))), proj_b=Tensor(np.zeros(DIM)), heads=HEADS,
    )
    x = Tensor(rng.standard_normal((4, DIM)))
    assert not cross_attention(x, Tensor(np.zeros((0, DIM))), weights).data.any()
    assert cross_attention(x, Tensor(rng.standard_normal((3, DIM))), weights).shape == (4, DIM)
