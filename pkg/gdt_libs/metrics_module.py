# gdt_libs/metrics_module.py
"""
Group metrics on hand-crafted image features.

    content consistency  mean pairwise feature cosine inside a group
    prompt adherence     per-slot agreement between the factor oracle and each member's caption
    fidelity             unbiased squared MMD (RBF kernel, median bandwidth) between image sets

Reference members never count twice: image pairs with both endpoints references are skipped
(or every pair touching a reference, with exclude_any_reference), and references are left out
of adherence.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial.distance import cdist, pdist

from .conditioning import sample_group
from .errors import ContractError, LoadError, UndefinedMetricError
from .image_tools import to_uint8
from .synthetic_groups import SLOT_SIZES, SLOTS, decode_caption, factor_oracle_decode

logger = logging.getLogger(__name__)

HIST_BINS = 4
EDGE_GRID = 8
MIN_FIDELITY_SET = 50


def _edge_map(image: np.ndarray) -> np.ndarray:
    gray = np.asarray(image, dtype=np.float64).mean(axis=0)
    magnitude = np.hypot(ndimage.sobel(gray, axis=0), ndimage.sobel(gray, axis=1))
    rows = np.array_split(np.arange(magnitude.shape[0]), EDGE_GRID)
    cols = np.array_split(np.arange(magnitude.shape[1]), EDGE_GRID)
    return np.array([[magnitude[np.ix_(r, c)].mean() for c in cols] for r in rows]).reshape(-1)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def feature_vector(image: np.ndarray) -> np.ndarray:
    """Coarse RGB histogram and downsampled edge map, each unit-normalised, concatenated, unit-normalised."""
    pixels = to_uint8(image).reshape(-1, 3) // (256 // HIST_BINS)
    codes = pixels[:, 0] * HIST_BINS * HIST_BINS + pixels[:, 1] * HIST_BINS + pixels[:, 2]
    hist = np.bincount(codes.astype(np.int64), minlength=HIST_BINS ** 3).astype(np.float64)
    return _unit(np.concatenate([_unit(hist), _unit(_edge_map(image))]))


def feature_matrix(images) -> np.ndarray:
    arr = np.asarray(images)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    return np.stack([feature_vector(x) for x in images])


@dataclass
class MetricValue:
    value: float
    count: int


def _flags(n: int, refs) -> List[bool]:
    if refs is None:
        return [False] * n
    flags = list(refs.flags)
    if len(flags) != n:
        raise ContractError(f"Reference flags cover {len(flags)} members, group has {n}")
    return flags


def counted_pairs(flags: Sequence[bool], exclude_any_reference: bool = False) -> List[tuple]:
    pairs = []
    for i, j in combinations(range(len(flags)), 2):
        if flags[i] and flags[j]:
            continue
        if exclude_any_reference and (flags[i] or flags[j]):
            continue
        pairs.append((i, j))
    return pairs


def content_consistency(images: Sequence[np.ndarray], refs=None, exclude_any_reference: bool = False) -> MetricValue:
    n = len(images)
    if n < 2:
        raise UndefinedMetricError(f"Content consistency needs at least 2 images, got {n}")
    pairs = counted_pairs(_flags(n, refs), exclude_any_reference)
    if not pairs:
        raise UndefinedMetricError("Every image pair of the group is excluded")
    feats = feature_matrix(images)
    cosines = [float(np.clip(feats[i] @ feats[j], -1.0, 1.0)) for i, j in pairs]
    return MetricValue(float(np.mean(cosines)), len(pairs))


def prompt_adherence(images: Sequence[np.ndarray], captions: Sequence[Sequence[int]], refs=None,
                     slots: Sequence[str] = SLOTS) -> MetricValue:
    n = len(images)
    if len(captions) != n:
        raise ContractError(f"{len(captions)} captions for {n} images")
    flags = _flags(n, refs)
    unknown = [s for s in slots if s not in SLOTS]
    if unknown:
        raise ContractError(f"Unknown caption slots {unknown}")
    scores = []
    for image, caption, is_ref in zip(images, captions, flags):
        if is_ref:
            continue
        wanted, decoded = decode_caption(caption), factor_oracle_decode(image).factors
        scores.append(np.mean([getattr(wanted, s) == getattr(decoded, s) for s in slots]))
    if not scores:
        raise UndefinedMetricError("Every member of the group is a reference")
    return MetricValue(float(np.mean(scores)), len(scores))


def chance_adherence(slots: Sequence[str] = SLOTS) -> float:
    sizes = dict(zip(SLOTS, SLOT_SIZES))
    return float(np.mean([1.0 / sizes[s] for s in slots]))


def rbf_gamma(features: np.ndarray) -> float:
    median = float(np.median(pdist(features))) if len(features) > 1 else 0.0
    return 1.0 / (2.0 * median ** 2) if median > 0 else 1.0


def fidelity_mmd(generated, reference, min_size: int = MIN_FIDELITY_SET) -> float:
    """Unbiased MMD^2 estimate; accepts images or precomputed feature rows."""
    X, Y = feature_matrix(generated), feature_matrix(reference)
    if len(X) < min_size or len(Y) < min_size:
        raise ContractError(f"Fidelity needs at least {min_size} images per set, got {len(X)} and {len(Y)}")
    gamma = rbf_gamma(np.concatenate([X, Y]))
    kxx = np.exp(-gamma * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(X, Y, "sqeuclidean"))
    m, n = len(X), len(Y)
    xx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    yy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(xx + yy - 2.0 * kxy.mean())


def joint_vs_independent(cfg, params, groups_contexts: Sequence[Sequence[Sequence[int]]], sched, steps: int,
                         seed: int, guidance_scale: float = 1.0) -> Dict[str, float]:
    joint, independent = [], []
    for g, contexts in enumerate(groups_contexts):
        rng = np.random.default_rng([seed, g, 0])
        members = sample_group(cfg, params, contexts, steps, rng, sched, guidance_scale).members
        joint.append(content_consistency(members).value)
        singles = []
        for i, ctx in enumerate(contexts):
            rng = np.random.default_rng([seed, g, i + 1])
            singles.extend(sample_group(cfg, params, [ctx], steps, rng, sched, guidance_scale).members)
        independent.append(content_consistency(singles).value)
    result = {"joint": float(np.mean(joint)), "independent": float(np.mean(independent))}
    result["margin"] = result["joint"] - result["independent"]
    return result


@dataclass
class EvalReport:
    groups: int = 0
    content_consistency: Optional[float] = None
    consistency_pairs: int = 0
    prompt_adherence: Optional[float] = None
    adherence_pairs: int = 0
    chance_adherence: Optional[float] = None
    fidelity_mmd: Optional[float] = None
    joint_margin: Optional[float] = None
    extra: Dict[str, float] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        row = asdict(self)
        row.update(row.pop("extra"))
        return pd.DataFrame([row])

    def save(self, out_dir: str, stem: str = "eval_report") -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        tsv = os.path.join(out_dir, f"{stem}.tsv")
        js = os.path.join(out_dir, f"{stem}.json")
        self.to_frame().to_csv(tsv, sep="\t", index=False, float_format="%.6f")
        with open(js, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        return {"tsv": tsv, "json": js}

    def print_summary(self, title: str = "EVALUATION REPORT"):
        print("\n" + "=" * 40)
        print(title)
        print("=" * 40)
        for key, value in asdict(self).items():
            if key == "extra":
                for k, v in value.items():
                    print(f"{k:22} {v:.4f}")
            elif isinstance(value, float):
                print(f"{key:22} {value:.4f}")
            elif value is not None:
                print(f"{key:22} {value}")
        print("=" * 40 + "\n")


def ablation_report(rows: Dict[str, str], evaluate: Callable[[str], EvalReport], out_dir: str) -> pd.DataFrame:
    """
    Evaluate each named checkpoint and collect one row per name, sorted by name.

    A checkpoint directory that does not exist is reported as an absent row, one that fails to
    load as an unreadable row.
    """
    records = []
    for key in sorted(rows):
        path = rows[key]
        if not os.path.isdir(path):
            logger.warning(f"Ablation row '{key}': checkpoint {path} is missing")
            records.append({"row": key, "checkpoint": path, "status": "absent"})
            continue
        try:
            report = evaluate(path)
        except LoadError as e:
            logger.warning(f"Ablation row '{key}': {e}")
            records.append({"row": key, "checkpoint": path, "status": "unreadable"})
            continue
        record = {"row": key, "checkpoint": path, "status": "ok"}
        record.update(report.to_frame().iloc[0].to_dict())
        records.append(record)

    table = pd.DataFrame(records)
    os.makedirs(out_dir, exist_ok=True)
    table.to_csv(os.path.join(out_dir, "ablation.tsv"), sep="\t", index=False, float_format="%.6f")
    with open(os.path.join(out_dir, "ablation.txt"), "w", encoding="utf-8") as f:
        f.write(table.to_string(index=False) + "\n")
    table.to_json(os.path.join(out_dir, "ablation.json"), orient="records", indent=2)
    return table
