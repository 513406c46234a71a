# gdt_libs/diffusion_process.py
"""
Noise schedules, forward noising, training targets and the two samplers.

ddpm-linear: linear betas, epsilon-prediction, ancestral sampling.
flow-linear: rectified flow on the straight path x_t = (1 - t) x0 + t eps, velocity target
             eps - x0, Euler integration from t = 1 down to t = 0.

All functions work on numpy arrays; randomness always comes from an explicit Generator.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

DDPM = "ddpm-linear"
FLOW = "flow-linear"
EPSILON = "epsilon-prediction"
VELOCITY = "velocity-flow"
FLOW_TIME_SCALE = 1000.0


@dataclass
class NoiseSchedule:
    kind: str
    T: int
    betas: Optional[np.ndarray] = None
    alpha_bars: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    model_times: Optional[np.ndarray] = None

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])


def build_schedule(kind: str, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ContractError(f"Schedule needs T >= 1, got {T}")
    if kind == DDPM:
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ContractError(f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        alpha_bars = np.cumprod(1.0 - betas)
        return NoiseSchedule(kind, T, betas=betas, alpha_bars=alpha_bars,
                             model_times=np.arange(1, T + 1, dtype=np.float64))
    if kind == FLOW:
        return NoiseSchedule(kind, T, times=np.linspace(0.0, 1.0, T + 1, dtype=np.float64))
    raise ContractError(f"Unknown schedule kind '{kind}'")


def respace(sched: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Sampling schedule with `steps` steps; ddpm keeps alpha_bar at the retained timesteps."""
    if steps < 1:
        raise ContractError(f"Need at least one sampling step, got {steps}")
    if sched.kind == FLOW:
        return NoiseSchedule(FLOW, steps, times=np.linspace(0.0, 1.0, steps + 1, dtype=np.float64))
    if steps > sched.T:
        raise ContractError(f"Cannot respace {sched.T} training steps into {steps} sampling steps")
    # counted down from T so that a single step still starts from pure noise
    keep = np.round(np.linspace(sched.T, 1, steps))[::-1].astype(np.int64)
    alpha_bars = sched.alpha_bars[keep - 1]
    previous = np.concatenate([[1.0], alpha_bars[:-1]])
    betas = 1.0 - alpha_bars / previous
    model_times = sched.model_times[keep - 1]
    return NoiseSchedule(DDPM, steps, betas=betas, alpha_bars=alpha_bars, model_times=model_times)


def model_time(t, sched: NoiseSchedule) -> float:
    if sched.kind == FLOW:
        return float(t) * FLOW_TIME_SCALE
    return float(sched.model_times[int(t) - 1])


def _check_time(t, sched: NoiseSchedule):
    if sched.kind == FLOW:
        if not 0.0 <= float(t) <= 1.0:
            raise ContractError(f"Flow time {t} outside [0, 1]")
    elif int(t) != t or not 1 <= int(t) <= sched.T:
        raise ContractError(f"Timestep {t} outside [1, {sched.T}]")


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    if np.shape(eps) != np.shape(x0):
        raise DimensionError(f"noise shape {np.shape(eps)} does not match x0 shape {np.shape(x0)}")
    _check_time(t, sched)
    if sched.kind == FLOW:
        t = float(t)
        return (1.0 - t) * x0 + t * eps
    ab = sched.alpha_bar(int(t))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def training_target(x0: np.ndarray, eps: np.ndarray, t, objective: str) -> np.ndarray:
    if objective == EPSILON:
        return eps
    if objective == VELOCITY:
        return eps - x0
    raise ContractError(f"Unknown objective '{objective}'")


def ddpm_ancestral_step(x_t: np.ndarray, model_eps: np.ndarray, t: int, sched: NoiseSchedule,
                        rng: np.random.Generator) -> np.ndarray:
    if t < 1:
        raise ContractError(f"Ancestral step needs t >= 1, got {t}")
    beta = sched.beta(t)
    alpha = 1.0 - beta
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t - 1)
    mean = (x_t - beta / np.sqrt(1.0 - ab) * model_eps) / np.sqrt(alpha)
    if t == 1:
        return mean
    posterior_var = (1.0 - ab_prev) / (1.0 - ab) * beta
    return mean + np.sqrt(posterior_var) * rng.standard_normal(np.shape(x_t))


def flow_euler_step(x_t: np.ndarray, model_v: np.ndarray, t: float, dt: float) -> np.ndarray:
    if not 0.0 < dt <= t:
        raise ContractError(f"Euler step needs 0 < dt <= t, got dt={dt}, t={t}")
    return x_t - dt * model_v


def sampling_positions(sched: NoiseSchedule) -> List:
    if sched.kind == FLOW:
        return list(sched.times[::-1][:-1])
    return list(range(sched.T, 0, -1))


def sdedit_replace(latents: Sequence[np.ndarray], refs, t, sched: NoiseSchedule,
                   rng: np.random.Generator) -> List[np.ndarray]:
    flags = list(refs.flags) if refs is not None else []
    if flags and len(flags) != len(latents):
        raise ContractError(f"Reference flags cover {len(flags)} members, group has {len(latents)}")
    missing = [i for i, flag in enumerate(flags) if flag and i not in refs.images]
    if missing:
        raise ContractError(f"Reference members {missing} have no stored image")
    out = list(latents)
    for i, flag in enumerate(flags):
        if flag:
            ref = refs.images[i]
            out[i] = q_sample(ref, t, rng.standard_normal(np.shape(ref)), sched)
    return out


def schedule_table(sched: NoiseSchedule) -> pd.DataFrame:
    if sched.kind == FLOW:
        return pd.DataFrame({"step": np.arange(sched.T + 1), "time": sched.times})
    return pd.DataFrame({
        "t": np.arange(1, sched.T + 1),
        "beta": sched.betas,
        "alpha_bar": sched.alpha_bars,
    })


def dump_schedule(sched: NoiseSchedule) -> str:
    return schedule_table(sched).to_csv(sep="\t", index=False, float_format="%.10g")
