"""Plain numpy single-image DiT, written independently of the tensor engine."""

import numpy as np


def _ln(x, gain=None, bias=None, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    return y if gain is None else y * gain + bias


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _softmax(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def _heads(x, h):
    L, D = x.shape
    return x.reshape(L, h, D // h).transpose(1, 0, 2)


def _mha(q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, h):
    q, k, v = _heads(q_in @ wq + bq, h), _heads(kv_in @ wk + bk, h), _heads(kv_in @ wv + bv, h)
    att = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(q.shape[-1]))
    out = (att @ v).transpose(1, 0, 2).reshape(q_in.shape[0], -1)
    return out @ wo + bo


def _sincos(dim, pos):
    omega = 1.0 / 10000 ** (np.arange(dim // 2) / (dim / 2.0))
    out = pos.reshape(-1)[:, None] * omega[None]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def vanilla_dit(image, context, t, cfg, params):
    """Predicted target for one image; `params` maps names to numpy arrays."""
    P = {k: np.asarray(getattr(v, "data", v), dtype=np.float64) for k, v in params.items()}
    D, p, S, h = cfg.dim, cfg.patch, cfg.image_size, cfg.heads
    side = S // p
    x = np.asarray(image, dtype=np.float64)
    C = x.shape[0]

    tokens = np.zeros((side * side, p * p * C))
    for r in range(side):
        for c in range(side):
            patch = x[:, r * p:(r + 1) * p, c * p:(c + 1) * p]
            tokens[r * side + c] = patch.transpose(1, 2, 0).reshape(-1)
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    pos = np.concatenate([_sincos(D // 2, rows.astype(float)), _sincos(D // 2, cols.astype(float))], axis=1)
    x = tokens @ P["x_embed.weight"] + P["x_embed.bias"] + pos

    ids = np.asarray(context, dtype=int)
    ctx = P["ctx_embed.table"][ids] + P["ctx_embed.pos"][: len(ids)]

    half = D // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    feats = np.concatenate([np.cos(t * freqs), np.sin(t * freqs)])
    temb = _silu(feats @ P["t_embed.fc1.weight"] + P["t_embed.fc1.bias"]) @ P["t_embed.fc2.weight"] + P["t_embed.fc2.bias"]
    c = _silu(temb)

    for i in range(cfg.depth):
        b = lambda name: P[f"blocks.{i}.{name}"]  # noqa: E731
        mod = c @ b("ada.weight") + b("ada.bias")
        sh1, sc1, g1, sh2, sc2, g2 = np.split(mod, 6)
        wqkv, bqkv = b("attn.qkv.weight"), b("attn.qkv.bias")
        attn_w = (wqkv[:, :D], bqkv[:D], wqkv[:, D:2 * D], bqkv[D:2 * D], wqkv[:, 2 * D:], bqkv[2 * D:],
                  b("attn.proj.weight"), b("attn.proj.bias"))
        mlp = lambda y: _gelu(y @ b("mlp.fc1.weight") + b("mlp.fc1.bias")) @ b("mlp.fc2.weight") + b("mlp.fc2.bias")  # noqa: E731
        if cfg.variant == "encoder-decoder":
            y = _ln(x) * (1 + sc1) + sh1
            x = x + g1 * _mha(y, y, *attn_w, h)
            wkv, bkv = b("cross.kv.weight"), b("cross.kv.bias")
            y = _ln(x, b("cross.norm.gain"), b("cross.norm.bias"))
            x = x + _mha(y, ctx, b("cross.q.weight"), b("cross.q.bias"), wkv[:, :D], bkv[:D], wkv[:, D:], bkv[D:],
                         b("cross.proj.weight"), b("cross.proj.bias"), h)
            x = x + g2 * mlp(_ln(x) * (1 + sc2) + sh2)
        else:
            joint = np.concatenate([ctx, x])
            y = _ln(joint) * (1 + sc1) + sh1
            joint = joint + g1 * _mha(y, y, *attn_w, h)
            joint = joint + g2 * mlp(_ln(joint) * (1 + sc2) + sh2)
            ctx, x = joint[: len(ctx)], joint[len(ctx):]

    sh, sc = np.split(c @ P["final.ada.weight"] + P["final.ada.bias"], 2)
    out = (_ln(x) * (1 + sc) + sh) @ P["final.linear.weight"] + P["final.linear.bias"]

    image_out = np.zeros((3, S, S))
    for r in range(side):
        for cc in range(side):
            image_out[:, r * p:(r + 1) * p, cc * p:(cc + 1) * p] = out[r * side + cc].reshape(p, p, 3).transpose(2, 0, 1)
    return image_out
