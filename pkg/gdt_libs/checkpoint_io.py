# gdt_libs/checkpoint_io.py
"""
Binary tensor container and checkpoint directories.

Container layout (little-endian): magic b"GDT0", u8 dtype code, u32 rank, rank x u64 dims,
raw row-major buffer. A checkpoint directory holds:

    tensors.bin   concatenated containers
    manifest.tsv  name, shape, offset of every container in tensors.bin
    meta.yaml     step counter, rng state, config hash and the full run config
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Optional

import numpy as np
import pandas as pd
import yaml

from .errors import LoadError

logger = logging.getLogger(__name__)

MAGIC = b"GDT0"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}

PARAM_PREFIX = "param/"
MOMENT_PREFIXES = ("adam_m/", "adam_v/")


def write_tensor(fh: BinaryIO, array) -> int:
    arr = np.asarray(array)
    code = _CODE_FOR.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise LoadError(f"Cannot store dtype {arr.dtype} in a tensor container")
    header = MAGIC + struct.pack("<BI", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes()
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise LoadError(f"Bad tensor container magic {magic!r}")
    code, rank = struct.unpack("<BI", fh.read(5))
    if code not in DTYPE_CODES:
        raise LoadError(f"Unknown tensor dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    dtype = DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    buf = fh.read(count * dtype.itemsize)
    if len(buf) != count * dtype.itemsize:
        raise LoadError("Truncated tensor container")
    return np.frombuffer(buf, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def save_tensor(path: str, array):
    with open(path, "wb") as f:
        write_tensor(f, array)


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    step: int = 0
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None
    config: dict = field(default_factory=dict)
    config_hash: str = ""


def _format_shape(shape) -> str:
    return ",".join(str(d) for d in shape)


def _parse_shape(text: str):
    return tuple(int(d) for d in text.split(",")) if text else ()


def save_checkpoint(ckpt: Checkpoint, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    rows = []
    with open(os.path.join(directory, "tensors.bin"), "wb") as f:
        offset = 0
        entries = [(PARAM_PREFIX + k, v) for k, v in ckpt.params.items()]
        entries += list(ckpt.moments.items())
        for name, arr in entries:
            rows.append({"name": name, "shape": _format_shape(np.shape(arr)), "offset": offset})
            offset += write_tensor(f, arr)
    pd.DataFrame(rows, columns=["name", "shape", "offset"]).to_csv(
        os.path.join(directory, "manifest.tsv"), sep="\t", index=False
    )
    meta = {
        "step": int(ckpt.step),
        "config_hash": ckpt.config_hash,
        "rng_state": ckpt.rng_state,
        "config": ckpt.config,
    }
    with open(os.path.join(directory, "meta.yaml"), "w", encoding="utf-8") as f:
        yaml.safe_dump(meta, f, sort_keys=True)
    logger.info(f"Saved checkpoint at step {ckpt.step} to {directory}")
    return directory


def read_manifest(directory: str) -> pd.DataFrame:
    path = os.path.join(directory, "manifest.tsv")
    if not os.path.exists(path):
        raise LoadError(f"No checkpoint manifest at {path}")
    return pd.read_csv(path, sep="\t", dtype={"name": str, "shape": str}, keep_default_na=False)


def load_checkpoint(directory: str, expected_hash: Optional[str] = None, force: bool = False) -> Checkpoint:
    manifest = read_manifest(directory)
    meta_path = os.path.join(directory, "meta.yaml")
    if not os.path.exists(meta_path):
        raise LoadError(f"No checkpoint metadata at {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as f:
        meta = yaml.safe_load(f)

    stored_hash = meta.get("config_hash", "")
    if expected_hash is not None and stored_hash != expected_hash:
        if not force:
            raise LoadError(
                f"Checkpoint config hash {stored_hash[:12]} does not match the model config "
                f"{expected_hash[:12]} (use --force to override)"
            )
        logger.warning("Config hash mismatch ignored because --force was given")

    params, moments = {}, {}
    with open(os.path.join(directory, "tensors.bin"), "rb") as f:
        for row in manifest.itertuples(index=False):
            f.seek(int(row.offset))
            arr = read_tensor(f)
            if arr.shape != _parse_shape(row.shape):
                raise LoadError(f"Tensor '{row.name}' has shape {arr.shape}, manifest says {row.shape}")
            if row.name.startswith(PARAM_PREFIX):
                params[row.name[len(PARAM_PREFIX):]] = arr
            else:
                moments[row.name] = arr
    return Checkpoint(
        params=params,
        step=int(meta.get("step", 0)),
        moments=moments,
        rng_state=meta.get("rng_state"),
        config=meta.get("config") or {},
        config_hash=stored_hash,
    )
