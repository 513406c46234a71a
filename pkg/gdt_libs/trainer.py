# gdt_libs/trainer.py
"""
Training stages, sampling, evaluation and inspection, plus the argument parsers behind the
`gdt` subcommands.

Run directory layout:

    <out>/config.yaml            resolved config of the run
    <out>/train_log.tsv          one row per optimizer step (append-only)
    <out>/gdt.log                log file
    <out>/checkpoints/step_N/    periodic checkpoints
    <out>/checkpoint/            final checkpoint
"""

import argparse
import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from .checkpoint_io import Checkpoint, load_checkpoint, save_checkpoint
from .conditioning import (
    ReferenceSpec,
    conditional_sample,
    make_inpaint_input,
    sample_references_for_training,
)
from .config import GDTConfig, config_from_dict, config_hash, load_config, save_config
from .diffusion_process import build_schedule, dump_schedule, model_time, q_sample, respace, training_target
from .errors import ConfigError, ContractError, LoadError, TrainingDivergedError, UndefinedMetricError, UsageError
from .gdt_model import (
    expected_param_count,
    load_params,
    model_forward,
    null_token,
    param_init,
    parameter_manifest,
)
from .group_attention import GroupLayout, build_group_mask
from .image_tools import load_image, print_image_info, save_group_images
from .metrics_module import (
    EvalReport,
    ablation_report,
    chance_adherence,
    content_consistency,
    fidelity_mmd,
    joint_vs_independent,
    prompt_adherence,
)
from .synthetic_groups import (
    SLOTS,
    VOCAB_SIZE,
    dynamic_batcher,
    format_caption,
    get_group,
    parse_caption,
    sample_group_size,
)
from .tensor_engine import ComputationTape, backward, mse, precision

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
ADAM_STEP_KEY = "adam_t"


class AdamW:

    def __init__(self, params: "OrderedDict", betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            if p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)

    def state(self) -> Dict[str, np.ndarray]:
        out = {f"adam_m/{k}": v for k, v in self.m.items()}
        out.update({f"adam_v/{k}": v for k, v in self.v.items()})
        out[ADAM_STEP_KEY] = np.array(self.t, dtype=np.int64)
        return out

    def load_state(self, moments: Dict[str, np.ndarray]):
        if ADAM_STEP_KEY not in moments:
            return
        for name, p in self.params.items():
            self.m[name] = moments[f"adam_m/{name}"].astype(p.data.dtype)
            self.v[name] = moments[f"adam_v/{name}"].astype(p.data.dtype)
        self.t = int(moments[ADAM_STEP_KEY])


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def attach_run_log(out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.abspath(os.path.join(out_dir, "gdt.log"))
    root = logging.getLogger()
    if any(isinstance(h, logging.FileHandler) and h.baseFilename == path for h in root.handlers):
        return
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)


def _check_vocabulary(cfg: GDTConfig):
    if cfg.model.vocab < VOCAB_SIZE:
        raise ConfigError(f"model.vocab {cfg.model.vocab} is smaller than the caption vocabulary {VOCAB_SIZE}")
    if cfg.model.context_len < len(SLOTS):
        raise ConfigError(f"model.context_len {cfg.model.context_len} cannot hold a {len(SLOTS)} token caption")


def _schedule(cfg: GDTConfig):
    d = cfg.diffusion
    return build_schedule(d.kind, d.train_steps, d.beta_start, d.beta_end)


def _draw_time(sched, rng: np.random.Generator):
    if sched.kind == "flow-linear":
        return 1.0 - float(rng.random())
    return int(rng.integers(1, sched.T + 1))


def _append_log(path: str, row: dict):
    pd.DataFrame([row]).to_csv(path, sep="\t", index=False, mode="a", header=not os.path.exists(path),
                               float_format="%.8g")


def _dump_divergence(out_dir: str, step: int, info: dict) -> str:
    path = os.path.join(out_dir, f"diverged_step{step}.yaml")
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(dict(info, step=step), f, sort_keys=True)
    return path


@dataclass
class StageState:
    params: "OrderedDict"
    optimizer: AdamW
    rng: np.random.Generator
    step: int = 0


def group_loss(cfg: GDTConfig, params, group, sched, t, rng: np.random.Generator):
    model = cfg.model
    contexts = group.captions
    if rng.random() < cfg.train.context_dropout:
        contexts = [[null_token(model)] for _ in contexts]
    eps = [rng.standard_normal(x.shape) for x in group.images]
    noised = [q_sample(x, t, e, sched) for x, e in zip(group.images, eps)]
    inputs = noised
    if model.inpaint:
        refs = sample_references_for_training(group.n, rng).with_images(group.images)
        inputs = make_inpaint_input(noised, refs)
    preds = model_forward(inputs, contexts, model_time(t, sched), model, params)
    losses = [mse(p, training_target(x, e, t, model.objective)) for p, x, e in zip(preds, group.images, eps)]
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * (1.0 / group.n)


def train_step(cfg: GDTConfig, state: StageState, data, sched, lr: float) -> dict:
    model = cfg.model
    rng = state.rng
    n = sample_group_size(model.max_group, rng)
    batch = dynamic_batcher(cfg.train.token_budget, n, model.tokens_per_image, n * len(SLOTS))
    indices = [int(i) for i in rng.integers(0, data.corpus_size, size=batch)]

    state.optimizer.zero_grad()
    batch_loss, times = 0.0, []
    for index in indices:
        group = get_group(data, index, n)
        t = _draw_time(sched, rng)
        times.append(t)
        with ComputationTape() as tape:
            loss = group_loss(cfg, state.params, group, sched, t, rng) * (1.0 / batch)
            batch_loss += loss.item()
            if np.isfinite(loss.item()):
                backward(loss)
        tape.clear()

    if not np.isfinite(batch_loss):
        return {"loss": batch_loss, "n": n, "batch": batch, "indices": indices, "times": times}
    state.optimizer.step(lr)
    state.step += 1
    return {"loss": batch_loss, "n": n, "batch": batch, "indices": indices, "times": times}


def run_stage(cfg: GDTConfig, state: StageState, data, total_steps: int, base_lr: float, out_dir: str,
              warmup_steps: int, desc: str) -> Checkpoint:
    sched = _schedule(cfg)
    log_path = os.path.join(out_dir, "train_log.tsv")
    start = state.step
    for step in tqdm(range(start, total_steps), desc=desc):
        lr = lr_at(step, base_lr, warmup_steps, total_steps)
        info = train_step(cfg, state, data, sched, lr)
        if not np.isfinite(info["loss"]):
            dump = _dump_divergence(out_dir, step, {
                "group_indices": info["indices"], "n": info["n"], "batch": info["batch"],
                "times": [float(t) for t in info["times"]], "data_seed": data.seed, "split": data.split,
            })
            raise TrainingDivergedError(f"Loss became {info['loss']} at step {step}; batch dumped to {dump}")
        _append_log(log_path, {"step": state.step, "loss": info["loss"], "lr": lr, "n": info["n"],
                               "batch": info["batch"]})
        if state.step % cfg.train.log_every == 0:
            logger.info(f"{desc} step {state.step}: loss {info['loss']:.5f} lr {lr:.2e} n={info['n']} batch={info['batch']}")
        if cfg.train.checkpoint_every and state.step % cfg.train.checkpoint_every == 0:
            save_checkpoint(make_checkpoint(cfg, state),
                            os.path.join(out_dir, "checkpoints", f"step_{state.step:06d}"))
    ckpt = make_checkpoint(cfg, state)
    save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint"))
    return ckpt


def make_checkpoint(cfg: GDTConfig, state: StageState) -> Checkpoint:
    return Checkpoint(
        params={k: p.data.copy() for k, p in state.params.items()},
        step=state.step,
        moments={k: v.copy() for k, v in state.optimizer.state().items()},
        rng_state=state.rng.bit_generator.state,
        config=cfg.to_dict(),
        config_hash=config_hash(cfg.model),
    )


def _new_optimizer(cfg: GDTConfig, params) -> AdamW:
    return AdamW(params, cfg.train.betas, cfg.train.adam_eps, cfg.train.weight_decay)


def restore_state(cfg: GDTConfig, ckpt: Checkpoint, keep_optimizer: bool) -> StageState:
    params = load_params(ckpt.params, cfg.model)
    optimizer = _new_optimizer(cfg, params)
    rng = np.random.default_rng(cfg.train.seed)
    if keep_optimizer:
        optimizer.load_state(ckpt.moments)
        if ckpt.rng_state:
            rng.bit_generator.state = ckpt.rng_state
    return StageState(params, optimizer, rng, ckpt.step if keep_optimizer else 0)


def train(cfg: GDTConfig, out_dir: str, resume: Optional[str] = None, init_from: Optional[str] = None,
          force: bool = False) -> Checkpoint:
    """
    Pretraining stage. `resume` continues a run from its checkpoint (optimizer and rng included);
    `init_from` starts a fresh run from another run's weights, e.g. a single-image model.
    """
    cfg.validate()
    _check_vocabulary(cfg)
    os.makedirs(out_dir, exist_ok=True)
    attach_run_log(out_dir)
    save_config(cfg, os.path.join(out_dir, "config.yaml"))

    with precision(cfg.train.precision):
        if resume:
            state = restore_state(cfg, load_checkpoint(resume, config_hash(cfg.model), force), keep_optimizer=True)
            logger.info(f"Resuming from {resume} at step {state.step}")
        elif init_from:
            state = restore_state(cfg, load_checkpoint(init_from, config_hash(cfg.model), force), keep_optimizer=False)
            logger.info(f"Initialised from {init_from}")
        else:
            params = param_init(cfg.model, cfg.train.seed)
            state = StageState(params, _new_optimizer(cfg, params), np.random.default_rng(cfg.train.seed))
        logger.info(f"Training {cfg.model.variant} ({sum(p.size for p in state.params.values())} params) "
                    f"for {cfg.train.steps} steps")
        return run_stage(cfg, state, cfg.dataset("train"), cfg.train.steps, cfg.train.lr, out_dir,
                         cfg.train.warmup_steps, "train")


def load_model(ckpt_dir: str, settings: Optional[GDTConfig] = None, force: bool = False):
    """
    Load (config, params, checkpoint). The run config stored in the checkpoint describes the
    model; `settings` contributes its sample and eval sections, and its model section too when
    the architecture hash matches (so max_group may grow).
    """
    ckpt = load_checkpoint(ckpt_dir)
    cfg = config_from_dict(ckpt.config)
    if ckpt.config_hash != config_hash(cfg.model) and not force:
        raise LoadError(f"Checkpoint {ckpt_dir} metadata does not match its stored config (use --force to override)")
    if settings is not None:
        cfg.sample, cfg.eval = settings.sample, settings.eval
        if config_hash(settings.model) == config_hash(cfg.model):
            cfg.model = settings.model
            cfg.data.max_group = settings.model.max_group
    with precision(cfg.train.precision):
        params = load_params(ckpt.params, cfg.model)
    return cfg, params, ckpt


def finetune(cfg: GDTConfig, base_ckpt: str, out_dir: str, force: bool = False) -> Checkpoint:
    cfg.validate()
    _check_vocabulary(cfg)
    os.makedirs(out_dir, exist_ok=True)
    attach_run_log(out_dir)
    save_config(cfg, os.path.join(out_dir, "config.yaml"))
    with precision(cfg.train.precision):
        base = load_checkpoint(base_ckpt, config_hash(cfg.model), force)
        state = restore_state(cfg, base, keep_optimizer=False)
        if cfg.finetune.eval_groups:
            before = evaluate_params(cfg, state.params, "quality", cfg.finetune.eval_groups)
            before.save(out_dir, "finetune_before")
        ckpt = run_stage(cfg, state, cfg.dataset("quality"), cfg.finetune.steps,
                         cfg.train.lr * cfg.finetune.lr_scale, out_dir, 0, "finetune")
        if cfg.finetune.eval_groups:
            after = evaluate_params(cfg, state.params, "quality", cfg.finetune.eval_groups)
            after.save(out_dir, "finetune_after")
            logger.info(f"Quality tuning consistency {before.content_consistency} -> {after.content_consistency}")
    return ckpt


def _default_mode(cfg: GDTConfig, mode: str) -> str:
    # inpaint models always sample with the reference channels
    return "inpaint" if cfg.model.inpaint and mode == "none" else mode


def sample(cfg: GDTConfig, params, captions: Sequence[Sequence[int]], out_dir: str,
           refs: Optional[ReferenceSpec] = None, mode: Optional[str] = None, steps: Optional[int] = None,
           seed: Optional[int] = None) -> List[str]:
    mode = mode or _default_mode(cfg, cfg.sample.mode)
    steps = steps or cfg.sample.steps
    seed = cfg.sample.seed if seed is None else seed
    if len(captions) > cfg.model.max_group:
        raise ContractError(f"{len(captions)} captions exceed max_group {cfg.model.max_group}")
    rng = np.random.default_rng(seed)
    gen = conditional_sample(cfg.model, params, captions, refs, mode, steps, rng, _schedule(cfg),
                             cfg.sample.guidance_scale)
    paths = save_group_images(gen.members, out_dir, "sample")
    flags = gen.refs.flags
    pd.DataFrame({
        "member": range(len(paths)),
        "file": [os.path.basename(p) for p in paths],
        "caption": [format_caption(c) for c in captions],
        "tokens": [" ".join(str(t) for t in c) for c in captions],
        "reference": [bool(f) for f in flags],
        "seed": seed,
        "mode": mode,
        "steps": steps,
    }).to_csv(os.path.join(out_dir, "manifest.tsv"), sep="\t", index=False)
    logger.info(f"Wrote {len(paths)} images to {out_dir}")
    return paths


def evaluate_params(cfg: GDTConfig, params, split: Optional[str] = None, groups: Optional[int] = None,
                    metrics: Optional[Sequence[str]] = None) -> EvalReport:
    e = cfg.eval
    split = split or e.split
    groups = e.groups if groups is None else groups
    metrics = list(metrics or e.metrics)
    data = cfg.dataset(split)
    sched = _schedule(cfg)
    mode = _default_mode(cfg, e.mode)

    consistency, c_pairs, adherence, a_pairs = [], 0, [], 0
    generated, real, joint_contexts = [], [], []
    for g in tqdm(range(groups), desc=f"eval {split}"):
        group = get_group(data, g)
        rng = np.random.default_rng([e.seed, g])
        refs = None
        if mode != "none":
            refs = sample_references_for_training(group.n, rng).with_images(group.images)
        gen = conditional_sample(cfg.model, params, group.captions, refs, mode, cfg.sample.steps, rng, sched,
                                 cfg.sample.guidance_scale)
        if "consistency" in metrics and group.n >= 2:
            try:
                value = content_consistency(gen.members, gen.refs, e.exclude_any_reference)
                consistency.append(value.value)
                c_pairs += value.count
            except UndefinedMetricError as err:
                logger.debug(f"group {g}: {err}")
        if "adherence" in metrics:
            value = prompt_adherence(gen.members, group.captions, gen.refs)
            adherence.append(value.value)
            a_pairs += value.count
        if group.n >= 2:
            joint_contexts.append(group.captions)
        generated.extend(gen.generations)
        real.extend(group.images)

    report = EvalReport(groups=groups, consistency_pairs=c_pairs, adherence_pairs=a_pairs)
    if consistency:
        report.content_consistency = float(np.mean(consistency))
    if adherence:
        report.prompt_adherence = float(np.mean(adherence))
        report.chance_adherence = chance_adherence()
    if "fidelity" in metrics:
        try:
            report.fidelity_mmd = fidelity_mmd(generated, real)
        except ContractError as err:
            logger.warning(f"Fidelity skipped: {err}")
    if "joint-margin" in metrics and joint_contexts and not cfg.model.inpaint:
        result = joint_vs_independent(cfg.model, params, joint_contexts, sched, cfg.sample.steps, e.seed,
                                      cfg.sample.guidance_scale)
        report.joint_margin = result["margin"]
        report.extra.update({"joint_consistency": result["joint"], "independent_consistency": result["independent"]})
    return report


def evaluate(ckpt_dir: str, out_dir: str, cfg: Optional[GDTConfig] = None, force: bool = False) -> EvalReport:
    cfg, params, _ = load_model(ckpt_dir, cfg, force)
    with precision(cfg.train.precision):
        report = evaluate_params(cfg, params)
    report.save(out_dir)
    return report


def inspect(target: str, cfg: Optional[GDTConfig] = None, ckpt_dir: Optional[str] = None,
            n: int = 2, L_img: int = 1, L_ctx: int = 1, steps: Optional[int] = None) -> str:
    if target == "checkpoint":
        if not ckpt_dir:
            raise UsageError("inspect checkpoint needs --checkpoint")
        cfg, params, ckpt = load_model(ckpt_dir, cfg, force=True)
        table = parameter_manifest(params)
        total = int(table["count"].sum())
        lines = [table.to_string(index=False), "",
                 f"total parameters: {total}",
                 f"expected from config: {expected_param_count(cfg.model)}",
                 f"step: {ckpt.step}",
                 f"config hash: {ckpt.config_hash}"]
        return "\n".join(lines)
    if target == "mask":
        layout = GroupLayout(n, L_img, (L_ctx,) * n, joint=True)
        return build_group_mask(layout).dump()
    if target == "schedule":
        cfg = cfg or load_config()
        sched = _schedule(cfg)
        return dump_schedule(respace(sched, steps) if steps else sched)
    raise UsageError(f"Unknown inspect target '{target}', expected checkpoint, mask or schedule")


def _base_parser(prog: str, description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=prog, description=description)
    parser.add_argument("--config", help="Config file (YAML or key=value)")
    parser.add_argument("--seed", type=int, help="Override the seed of this command")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--force", action="store_true", help="Ignore config hash mismatches")
    return parser


def _load_cli_config(opts, seed_section: Optional[str] = None, mode_section: Optional[str] = None) -> GDTConfig:
    overrides = {}
    if seed_section and opts.seed is not None:
        overrides.setdefault(seed_section, {})["seed"] = opts.seed
    if mode_section and getattr(opts, "mode", None):
        overrides.setdefault(mode_section, {})["mode"] = opts.mode
    return load_config(opts.config, overrides or None)


def parse_refs(text: Optional[str], n: int) -> Optional[ReferenceSpec]:
    """'0:ref.png,2:other.ppm' -> ReferenceSpec over n members."""
    if not text:
        return None
    flags, images = [False] * n, {}
    for item in text.split(","):
        if ":" not in item:
            raise UsageError(f"Reference '{item}' must look like idx:file")
        idx, path = item.split(":", 1)
        try:
            i = int(idx)
        except ValueError:
            raise UsageError(f"Reference index '{idx}' is not an integer") from None
        if not 0 <= i < n:
            raise UsageError(f"Reference index {i} outside the group of {n}")
        flags[i] = True
        images[i] = load_image(path.strip())
    return ReferenceSpec(flags, images)


def train_cli(args):
    parser = _base_parser("gdt train", "Pretrain a group diffusion transformer")
    parser.add_argument("--resume", help="Checkpoint directory to resume from")
    parser.add_argument("--init-from", help="Checkpoint directory to initialise weights from")
    opts = parser.parse_args(args)
    cfg = _load_cli_config(opts, seed_section="train")
    ckpt = train(cfg, opts.out or "runs/train", opts.resume, opts.init_from, opts.force)
    print("\n" + "=" * 40)
    print(f"Finished at step {ckpt.step}; checkpoint in {os.path.join(opts.out or 'runs/train', 'checkpoint')}")
    print("=" * 40 + "\n")


def finetune_cli(args):
    parser = _base_parser("gdt finetune", "Quality-tune a pretrained checkpoint")
    parser.add_argument("--checkpoint", required=True, help="Base checkpoint directory")
    opts = parser.parse_args(args)
    cfg = _load_cli_config(opts, seed_section="train")
    finetune(cfg, opts.checkpoint, opts.out or "runs/finetune", opts.force)


def sample_cli(args):
    parser = _base_parser("gdt sample", "Jointly sample one image group")
    parser.add_argument("--checkpoint", required=True, help="Checkpoint directory")
    parser.add_argument("--caption", action="append", required=True,
                        help="Caption per member, e.g. circle,red,filled,top-left,small,dark")
    parser.add_argument("--mode", choices=["none", "inpaint", "sdedit"])
    parser.add_argument("--refs", help="Reference images as idx:file,...")
    parser.add_argument("--steps", type=int, help="Sampling steps")
    opts = parser.parse_args(args)
    settings = _load_cli_config(opts, seed_section="sample", mode_section="sample")
    cfg, params, _ = load_model(opts.checkpoint, settings, opts.force)
    captions = [parse_caption(c) for c in opts.caption]
    refs = parse_refs(opts.refs, len(captions))
    with precision(cfg.train.precision):
        paths = sample(cfg, params, captions, opts.out or "samples", refs, steps=opts.steps)
    print_image_info(paths)


def eval_cli(args):
    parser = _base_parser("gdt eval", "Score a checkpoint on freshly sampled groups")
    parser.add_argument("--checkpoint", required=True, help="Checkpoint directory")
    parser.add_argument("--mode", choices=["none", "inpaint", "sdedit"])
    parser.add_argument("--metrics", help="Comma separated subset of consistency,adherence,fidelity,joint-margin")
    parser.add_argument("--split", choices=["train", "val", "quality"])
    parser.add_argument("--groups", type=int, help="Number of groups")
    opts = parser.parse_args(args)
    cfg = _load_cli_config(opts, seed_section="eval", mode_section="eval")
    if opts.metrics:
        cfg.eval.metrics = [m.strip() for m in opts.metrics.split(",") if m.strip()]
    if opts.split:
        cfg.eval.split = opts.split
    if opts.groups is not None:
        cfg.eval.groups = opts.groups
    cfg.eval.validate()
    report = evaluate(opts.checkpoint, opts.out or "eval", cfg, opts.force)
    report.print_summary()


def inspect_cli(args):
    parser = _base_parser("gdt inspect", "Print a checkpoint manifest, group mask or schedule")
    parser.add_argument("target", help="checkpoint | mask | schedule")
    parser.add_argument("--checkpoint", help="Checkpoint directory")
    parser.add_argument("--n", type=int, default=2, help="Group size for mask dumps")
    parser.add_argument("--l-img", type=int, default=1, help="Image tokens per member for mask dumps")
    parser.add_argument("--l-ctx", type=int, default=1, help="Context tokens per member for mask dumps")
    parser.add_argument("--steps", type=int, help="Respace the schedule to this many steps")
    opts = parser.parse_args(args)
    cfg = load_config(opts.config)
    text = inspect(opts.target, cfg, opts.checkpoint, opts.n, opts.l_img, opts.l_ctx, opts.steps)
    print(text)
    return text


def ablation_cli(args):
    parser = _base_parser("gdt ablation", "Evaluate a list of checkpoints into one table")
    parser.add_argument("--rows", required=True, help="YAML mapping of row name -> checkpoint directory")
    opts = parser.parse_args(args)
    cfg = load_config(opts.config)
    with open(opts.rows, "r", encoding="utf-8") as f:
        rows = yaml.safe_load(f) or {}
    if not isinstance(rows, dict):
        raise UsageError("--rows must be a YAML mapping of row name to checkpoint directory")
    out_dir = opts.out or "ablation"
    table = ablation_report({str(k): str(v) for k, v in rows.items()},
                            lambda path: evaluate(path, os.path.join(out_dir, os.path.basename(path)), cfg, opts.force),
                            out_dir)
    print("\n" + "=" * 40)
    print(table.to_string(index=False))
    print("=" * 40 + "\n")
