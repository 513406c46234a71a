# gdt_libs/conditioning.py
"""
Reference-based group generation.

A group of n members may carry m < n clean reference images. Two ways to use them:

    inpaint  the model was trained with 7 input channels [x_t | reference-or-zeros | indicator];
             references stay fixed in the middle channels for the whole chain.
    sdedit   a plain 3-channel model; before each model call the reference members are
             overwritten with their clean image noised to the current level.

With no references both modes reduce to plain joint sampling and consume the random stream in
exactly the same order, so identical seeds give identical outputs.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import IMAGE_CHANNELS, SAMPLE_MODES, ModelConfig
from .diffusion_process import (
    FLOW,
    NoiseSchedule,
    ddpm_ancestral_step,
    flow_euler_step,
    model_time,
    respace,
    sampling_positions,
    sdedit_replace,
)
from .errors import ConfigError, ContractError
from .gdt_model import model_forward, null_token
from .tensor_engine import no_grad

logger = logging.getLogger(__name__)


@dataclass
class ReferenceSpec:
    flags: List[bool]
    images: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def none(cls, n: int) -> "ReferenceSpec":
        return cls([False] * n)

    @property
    def m(self) -> int:
        return int(sum(bool(f) for f in self.flags))

    @property
    def indices(self) -> List[int]:
        return [i for i, f in enumerate(self.flags) if f]

    def validate(self, n: int) -> "ReferenceSpec":
        if len(self.flags) != n:
            raise ContractError(f"Reference flags cover {len(self.flags)} members, group has {n}")
        if self.m >= n:
            raise ContractError(f"{self.m} references leave nothing to generate in a group of {n}")
        missing = [i for i in self.indices if i not in self.images]
        if missing:
            raise ContractError(f"Reference members {missing} have no image")
        return self

    def with_images(self, images: Sequence[np.ndarray]) -> "ReferenceSpec":
        return ReferenceSpec(list(self.flags), {i: np.asarray(images[i]) for i in self.indices})


def make_inpaint_input(noised: Sequence[np.ndarray], refs: ReferenceSpec) -> List[np.ndarray]:
    if len(refs.flags) != len(noised):
        raise ContractError(f"Reference flags cover {len(refs.flags)} members, group has {len(noised)}")
    missing = [i for i in refs.indices if i not in refs.images]
    if missing:
        raise ContractError(f"Reference members {missing} have no image")
    out = []
    for i, x in enumerate(noised):
        x = np.asarray(x)
        if i in refs.indices:
            ref = np.asarray(refs.images[i], dtype=x.dtype)
            if ref.shape != x.shape:
                raise ContractError(f"Reference {i} has shape {ref.shape}, member has {x.shape}")
            indicator = np.ones((1,) + x.shape[1:], dtype=x.dtype)
        else:
            ref = np.zeros_like(x)
            indicator = np.zeros((1,) + x.shape[1:], dtype=x.dtype)
        out.append(np.concatenate([x, ref, indicator], axis=0))
    return out


def sample_references_for_training(n: int, rng: np.random.Generator) -> ReferenceSpec:
    if n < 1:
        raise ContractError(f"Group size must be >= 1, got {n}")
    m = int(rng.integers(0, n))
    chosen = set(int(i) for i in rng.choice(n, size=m, replace=False)) if m else set()
    return ReferenceSpec([i in chosen for i in range(n)])


@dataclass
class GroupGeneration:
    members: List[np.ndarray]
    refs: ReferenceSpec

    @property
    def generations(self) -> List[np.ndarray]:
        return [x for i, x in enumerate(self.members) if not self.refs.flags[i]]


def _check_mode(cfg: ModelConfig, mode: str):
    if mode not in SAMPLE_MODES:
        raise ConfigError(f"Unknown sampling mode '{mode}', expected one of {SAMPLE_MODES}")
    if mode == "inpaint" and not cfg.inpaint:
        raise ConfigError("inpaint sampling needs a model trained with channels_in = 7")
    if mode == "sdedit" and cfg.inpaint:
        raise ConfigError("sdedit sampling runs on a 3-channel model, this one has channels_in = 7")


def guided_prediction(inputs: Sequence[np.ndarray], contexts: Sequence[Sequence[int]], t: float,
                      cfg: ModelConfig, params, guidance_scale: float = 1.0) -> List[np.ndarray]:
    cond = [y.numpy() for y in model_forward(inputs, contexts, t, cfg, params)]
    if guidance_scale == 1.0:
        return cond
    null = [[null_token(cfg)] for _ in contexts]
    uncond = [y.numpy() for y in model_forward(inputs, null, t, cfg, params)]
    return [u + guidance_scale * (c - u) for c, u in zip(cond, uncond)]


def conditional_sample(cfg: ModelConfig, params, contexts: Sequence[Sequence[int]],
                       refs: Optional[ReferenceSpec], mode: str, steps: int, rng: np.random.Generator,
                       sched: NoiseSchedule, guidance_scale: float = 1.0) -> GroupGeneration:
    """
    Denoise all n members jointly from pure noise.

    sched is the training schedule; it is respaced to `steps`. Reference members come back
    as their clean images.
    """
    n = len(contexts)
    refs = refs if refs is not None else ReferenceSpec.none(n)
    refs.validate(n)
    _check_mode(cfg, mode)
    if refs.m and mode == "none":
        raise ConfigError("References were given but sampling mode is 'none'")

    sampling = respace(sched, steps)
    shape = (IMAGE_CHANNELS, cfg.image_size, cfg.image_size)
    latents = [rng.standard_normal(shape) for _ in range(n)]
    positions = sampling_positions(sampling)
    logger.debug(f"Sampling group of {n} ({refs.m} references, mode {mode}) over {len(positions)} steps")

    with no_grad():
        for k, pos in enumerate(positions):
            if mode == "sdedit":
                latents = sdedit_replace(latents, refs, pos, sampling, rng)
            inputs = make_inpaint_input(latents, refs) if cfg.inpaint else latents
            preds = guided_prediction(inputs, contexts, model_time(pos, sampling), cfg, params, guidance_scale)
            if sampling.kind == FLOW:
                nxt = positions[k + 1] if k + 1 < len(positions) else 0.0
                latents = [flow_euler_step(x, v, pos, pos - nxt) for x, v in zip(latents, preds)]
            else:
                latents = [ddpm_ancestral_step(x, e, pos, sampling, rng) for x, e in zip(latents, preds)]

    members = [refs.images[i].astype(np.float64) if refs.flags[i] else np.clip(x, -1.0, 1.0)
               for i, x in enumerate(latents)]
    return GroupGeneration(members, refs)


def sample_group(cfg: ModelConfig, params, contexts: Sequence[Sequence[int]], steps: int,
                 rng: np.random.Generator, sched: NoiseSchedule, guidance_scale: float = 1.0) -> GroupGeneration:
    return conditional_sample(cfg, params, contexts, None, "none", steps, rng, sched, guidance_scale)
