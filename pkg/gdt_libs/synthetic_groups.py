# gdt_libs/synthetic_groups.py
"""
Procedural image groups with known factors.

Every group shares an identity (shape), a palette and a style; each member draws its own
position quadrant, scale and background shade. Captions are six tokens in a fixed slot order

    [identity, palette, style, position, scale, background]

so the shared slots repeat in every member's caption. Rendering uses integer coordinates only,
which keeps (config, index) -> group bit-exact and lets factor_oracle_decode invert clean
renders exactly.
"""

import argparse
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage
from tqdm import tqdm

from .config import DatasetConfig, load_config
from .errors import CapacityError, ContractError
from .image_tools import from_uint8, save_group_images, to_uint8

logger = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle", "cross")
PALETTES = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 200, 40),
    "magenta": (200, 60, 200),
    "cyan": (40, 200, 210),
    "orange": (240, 130, 30),
    "purple": (120, 60, 180),
}
STYLES = ("filled", "outline")
POSITIONS = ("top-left", "top-right", "bottom-left", "bottom-right")
SCALES = ("small", "medium", "large")
BACKGROUNDS = {
    "dark": (20, 20, 20),
    "dim": (80, 80, 80),
    "light": (160, 160, 160),
    "white": (235, 235, 235),
}

SLOTS = ("identity", "palette", "style", "position", "scale", "background")
SLOT_NAMES = (SHAPES, tuple(PALETTES), STYLES, POSITIONS, SCALES, tuple(BACKGROUNDS))
SLOT_SIZES = tuple(len(names) for names in SLOT_NAMES)
SLOT_OFFSETS = tuple(int(x) for x in np.concatenate([[0], np.cumsum(SLOT_SIZES)[:-1]]))
NULL_TOKEN = int(sum(SLOT_SIZES))
VOCAB_SIZE = NULL_TOKEN + 1

SPLIT_CODES = {"train": 0, "val": 1, "quality": 2}
QUALITY_PALETTES = (0, 1, 2, 4)
QUALITY_CONTRAST = 80.0
MAX_REJECTIONS = 256
MIN_IMAGE_SIZE = 16
FOREGROUND_DISTANCE = 40.0

_PALETTE_RGB = np.array(list(PALETTES.values()), dtype=np.float64)
_BACKGROUND_RGB = np.array(list(BACKGROUNDS.values()), dtype=np.float64)
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Factors:
    identity: int
    palette: int
    style: int
    position: int
    scale: int
    background: int

    def values(self) -> Tuple[int, ...]:
        return tuple(getattr(self, slot) for slot in SLOTS)

    def names(self) -> Tuple[str, ...]:
        return tuple(names[v] for names, v in zip(SLOT_NAMES, self.values()))


@dataclass
class FactorSpec:
    identity: int
    palette: int
    style: int
    members: List[Tuple[int, int, int]] = field(default_factory=list)  # (position, scale, background)

    @property
    def n(self) -> int:
        return len(self.members)

    def member(self, i: int) -> Factors:
        return Factors(self.identity, self.palette, self.style, *self.members[i])


@dataclass
class GroupSample:
    images: List[np.ndarray]
    captions: List[List[int]]
    seed: int
    factors: FactorSpec

    @property
    def n(self) -> int:
        return len(self.images)


def encode_caption(factors: Factors) -> List[int]:
    return [offset + v for offset, v in zip(SLOT_OFFSETS, factors.values())]


def decode_caption(tokens: Sequence[int]) -> Factors:
    tokens = [int(t) for t in tokens]
    if len(tokens) != len(SLOTS):
        raise ContractError(f"Caption needs {len(SLOTS)} tokens, got {tokens}")
    values = []
    for slot, offset, size, tok in zip(SLOTS, SLOT_OFFSETS, SLOT_SIZES, tokens):
        if not offset <= tok < offset + size:
            raise ContractError(f"Token {tok} is not a valid {slot} token")
        values.append(tok - offset)
    return Factors(*values)


def parse_caption(text: str) -> List[int]:
    names = [part.strip().lower() for part in text.split(",") if part.strip()]
    if len(names) != len(SLOTS):
        raise ContractError(f"Caption '{text}' needs {len(SLOTS)} comma separated factors")
    values = []
    for slot, options, name in zip(SLOTS, SLOT_NAMES, names):
        if name not in options:
            raise ContractError(f"Unknown {slot} '{name}', expected one of {list(options)}")
        values.append(options.index(name))
    return encode_caption(Factors(*values))


def format_caption(tokens: Sequence[int]) -> str:
    return ",".join(decode_caption(tokens).names())


def _radius(scale: int, size: int) -> int:
    return (size // 16) * (2 + scale)


def _center(position: int, size: int) -> Tuple[int, int]:
    row, col = divmod(position, 2)
    return size // 4 + row * (size // 2), size // 4 + col * (size // 2)


@lru_cache(maxsize=4096)
def shape_mask(identity: int, style: int, scale: int, position: int, size: int,
               shift: Tuple[int, int] = (0, 0)) -> np.ndarray:
    cy, cx = _center(position, size)
    cy, cx = cy + shift[0], cx + shift[1]
    r = _radius(scale, size)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    shape = SHAPES[identity]
    if shape == "circle":
        mask = dx * dx + dy * dy <= r * r
    elif shape == "square":
        mask = np.maximum(np.abs(dx), np.abs(dy)) <= r
    elif shape == "triangle":
        mask = (dy >= -r) & (dy <= r) & (2 * np.abs(dx) <= dy + r)
    else:
        w = max(1, r // 3)
        mask = ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    if STYLES[style] == "outline":
        mask = mask & ~ndimage.binary_erosion(mask, iterations=max(1, r // 4))
    mask.setflags(write=False)
    return mask


def render_member(factors: Factors, size: int) -> np.ndarray:
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = _BACKGROUND_RGB[factors.background].astype(np.uint8)
    mask = shape_mask(factors.identity, factors.style, factors.scale, factors.position, size)
    canvas[mask] = _PALETTE_RGB[factors.palette].astype(np.uint8)
    return from_uint8(canvas)


def render_group(factors: FactorSpec, n: int, size: int, seed: int) -> GroupSample:
    if n < 1 or n != factors.n:
        raise ContractError(f"Factor spec describes {factors.n} members, asked to render {n}")
    if size < MIN_IMAGE_SIZE:
        raise ContractError(f"Renderer needs image_size >= {MIN_IMAGE_SIZE}, got {size}")
    members = [factors.member(i) for i in range(n)]
    return GroupSample(
        images=[render_member(f, size) for f in members],
        captions=[encode_caption(f) for f in members],
        seed=int(seed),
        factors=factors,
    )


def sample_group_size(max_group: int, rng: np.random.Generator) -> int:
    if max_group < 1:
        raise ContractError(f"max_group must be >= 1, got {max_group}")
    return int(rng.integers(1, max_group + 1))


def dynamic_batcher(token_budget: int, n: int, L_img: int, L_ctx_total: int) -> int:
    tokens = n * L_img + L_ctx_total
    if tokens > token_budget:
        raise CapacityError(f"One group of {n} members needs {tokens} tokens, budget is {token_budget}")
    return token_budget // tokens


def _contrast(palette: int, background: int) -> float:
    return float(abs(_LUMA @ _PALETTE_RGB[palette] - _LUMA @ _BACKGROUND_RGB[background]))


def is_high_contrast(factors: FactorSpec) -> bool:
    return all(_contrast(factors.palette, bg) >= QUALITY_CONTRAST for _, _, bg in factors.members)


def sample_factors(n: int, rng: np.random.Generator, copy_prob: float = 0.0, quality: bool = False) -> FactorSpec:
    for _ in range(MAX_REJECTIONS):
        palettes = QUALITY_PALETTES if quality else range(len(PALETTES))
        spec = FactorSpec(
            identity=int(rng.integers(len(SHAPES))),
            palette=int(rng.choice(list(palettes))),
            style=int(rng.integers(len(STYLES))),
        )
        for i in range(n):
            if i > 0 and rng.random() < copy_prob:
                spec.members.append(spec.members[0])
            else:
                spec.members.append((int(rng.integers(len(POSITIONS))), int(rng.integers(len(SCALES))),
                                     int(rng.integers(len(BACKGROUNDS)))))
        if not quality or is_high_contrast(spec):
            return spec
    raise ContractError(f"No high-contrast group found after {MAX_REJECTIONS} draws")


def group_rng(config: DatasetConfig, index: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, SPLIT_CODES[config.split], index])


def get_group(config: DatasetConfig, index: int, n: Optional[int] = None) -> GroupSample:
    if index < 0 or (config.split == "train" and index >= config.corpus_size):
        raise ContractError(f"Group index {index} outside the corpus of {config.corpus_size}")
    rng = group_rng(config, index)
    if n is None:
        n = sample_group_size(config.max_group, rng)
    factors = sample_factors(n, rng, config.copy_prob, quality=config.split == "quality")
    seed = int(rng.integers(2 ** 31))
    return render_group(factors, n, config.image_size, seed)


@dataclass
class OracleResult:
    factors: Factors
    confidence: float


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def factor_oracle_decode(image: np.ndarray) -> OracleResult:
    """Nearest factor assignment for one image, with IoU-based confidence."""
    pixels = to_uint8(image).astype(np.float64)
    size = pixels.shape[0]
    bg_color = np.median(pixels.reshape(-1, 3), axis=0)
    background = int(np.argmin(np.linalg.norm(_BACKGROUND_RGB - bg_color, axis=1)))
    fg = np.linalg.norm(pixels - bg_color, axis=2) > FOREGROUND_DISTANCE
    if not fg.any():
        return OracleResult(Factors(0, 0, 0, 0, 0, background), 0.0)

    palette = int(np.argmin(np.linalg.norm(_PALETTE_RGB - pixels[fg].mean(axis=0), axis=1)))
    cy, cx = ndimage.center_of_mass(fg)
    position = 2 * int(cy >= size / 2) + int(cx >= size / 2)

    best, best_iou = (0, 0, 0), -1.0
    shifts = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    shifts.sort(key=lambda s: abs(s[0]) + abs(s[1]))
    for identity in range(len(SHAPES)):
        for style in range(len(STYLES)):
            for scale in range(len(SCALES)):
                for shift in shifts:
                    score = _iou(fg, shape_mask(identity, style, scale, position, size, shift))
                    if score > best_iou:
                        best, best_iou = (identity, style, scale), score
    identity, style, scale = best
    return OracleResult(Factors(identity, palette, style, position, scale, background), float(best_iou))


def export_split(config: DatasetConfig, out_dir: str, count: int, formats: Sequence[str] = ("png", "ppm")) -> str:
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for index in tqdm(range(count), desc=f"export {config.split}"):
        group = get_group(config, index)
        paths = save_group_images(group.images, out_dir, f"g{index:06d}", formats)
        for member, (path, caption) in enumerate(zip(paths, group.captions)):
            rows.append({
                "index": index,
                "n": group.n,
                "member": member,
                "file": os.path.basename(path),
                "tokens": " ".join(str(t) for t in caption),
                "caption": format_caption(caption),
            })
    manifest = os.path.join(out_dir, "manifest.tsv")
    pd.DataFrame(rows).to_csv(manifest, sep="\t", index=False)
    logger.info(f"Exported {count} {config.split} groups to {out_dir}")
    return manifest


def main_cli(args):
    parser = argparse.ArgumentParser(prog="gdt data", description="Export synthetic image groups")
    parser.add_argument("--config", help="Config file (YAML or key=value)")
    parser.add_argument("--split", default="train", choices=list(SPLIT_CODES))
    parser.add_argument("--count", type=int, default=100, help="Number of groups to export")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--seed", type=int, help="Override data.seed")
    parser.add_argument("--formats", default="png,ppm", help="Comma separated image formats")
    opts = parser.parse_args(args)

    overrides = {"data": {"seed": opts.seed}} if opts.seed is not None else None
    cfg = load_config(opts.config, overrides)
    manifest = export_split(cfg.dataset(opts.split), opts.out, opts.count,
                            [f.strip() for f in opts.formats.split(",") if f.strip()])
    print("\n" + "=" * 40)
    print(f"Manifest: {manifest}")
    print("=" * 40 + "\n")
    return manifest
