# image_tools.py

import logging
import os
from typing import List, Sequence

import numpy as np
from PIL import Image

from .errors import ContractError, LoadError

logger = logging.getLogger(__name__)

IMAGE_FORMATS = {"png": "PNG", "ppm": "PPM"}


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[3,H,W] in [-1, 1] -> [H,W,3] uint8."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"Expected an image of shape [3,H,W], got {arr.shape}")
    pixels = np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(pixels.transpose(1, 2, 0))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"Expected pixels of shape [H,W,3], got {arr.shape}")
    return arr.transpose(2, 0, 1).astype(np.float64) / 127.5 - 1.0


def save_image(image: np.ndarray, path: str) -> str:
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext not in IMAGE_FORMATS:
        raise ContractError(f"Unsupported image extension '.{ext}', expected one of {list(IMAGE_FORMATS)}")
    Image.fromarray(to_uint8(image)).save(path, IMAGE_FORMATS[ext])
    return path


def load_image(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise LoadError(f"Image file does not exist: {path}")
    try:
        with Image.open(path) as img:
            return from_uint8(np.asarray(img.convert("RGB")))
    except OSError as e:
        raise LoadError(f"Cannot read image {path}: {e}") from e


def save_group_images(images: Sequence[np.ndarray], out_dir: str, stem: str,
                      formats: Sequence[str] = ("ppm", "png")) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i, image in enumerate(images):
        for k, fmt in enumerate(formats):
            path = save_image(image, os.path.join(out_dir, f"{stem}_m{i}.{fmt}"))
            if k == 0:
                written.append(path)
    return written


def print_image_info(paths: Sequence[str]):
    print("\n" + "=" * 40)
    for path in paths:
        with Image.open(path) as img:
            print(f"{path}: {img.format} {img.size[0]} x {img.size[1]} {img.mode}")
    print("=" * 40 + "\n")
