"""AdamW + cosine schedule training loop over class-aware crops."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .datamodel import IGNORE_ID, DatasetIndex
from .losses import DiceConfig, OhemConfig, cross_entropy_loss, total_loss
from .model import ModelConfig, SegModel, init_parameters, to_batch
from .sampler import AugConfig, SamplePolicy, augment, sample_crop

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "loss_total", "loss_ohem", "loss_dice", "kept_pixels")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    lr0: float = 6e-5
    lr_min: float = 0.0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    crops_per_image: int = 1
    checkpoint_every: int = 10  # epochs; 0 disables periodic checkpoints
    clip_norm: float | None = None
    objective: str = "ohem_dice"  # or "ce" for the plain cross-entropy control
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.lr0 > self.lr_min >= 0:
            raise ValueError(f"need lr0 > lr_min >= 0, got lr0={self.lr0}, lr_min={self.lr_min}")
        if self.epochs < 1 or self.batch_size < 1 or self.crops_per_image < 1:
            raise ValueError("epochs, batch_size and crops_per_image must be >= 1")
        if self.objective not in ("ohem_dice", "ce"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def steps_per_epoch(self, num_images: int) -> int:
        return math.ceil(num_images * self.crops_per_image / self.batch_size)


def cosine_lr(t: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, torch.Tensor]) -> "OptimizerState":
        return cls({n: torch.zeros_like(p) for n, p in params.items()},
                   {n: torch.zeros_like(p) for n, p in params.items()})


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: OptimizerState,
               lr: float, cfg: TrainConfig) -> None:
    """One in-place AdamW update with decoupled weight decay."""
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        update = (m / c1) / ((v / c2).sqrt() + cfg.eps) + cfg.weight_decay * p
        p.sub_(lr * update)


def _crop_for(scenes, idx, rng, policy, aug, ignore_id):
    image, mask = scenes[idx]
    crop = sample_crop(image, mask, policy, rng, ignore_id)
    return augment(crop.image, crop.mask, aug, rng)


class BatchPlan:
    """Maps a global step to its crops; every crop has its own seeded stream.

    Epoch ``e`` visits a seeded permutation of scenes (``crops_per_image``
    times); crop ``j`` of that epoch draws from ``default_rng([seed, e, j])``.
    A step's batch therefore depends only on (seed, step), which makes
    resumed and multi-worker runs reproduce single-worker runs exactly.
    """

    def __init__(self, num_scenes: int, cfg: TrainConfig):
        self.n = num_scenes
        self.cfg = cfg
        self.per_epoch = num_scenes * cfg.crops_per_image
        self.steps_per_epoch = cfg.steps_per_epoch(num_scenes)
        self.total_steps = self.steps_per_epoch * cfg.epochs

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.cfg.seed, epoch, 0xE90C])
        return np.concatenate([rng.permutation(self.n) for _ in range(self.cfg.crops_per_image)])

    def slots(self, step: int) -> list[tuple[int, int, int]]:
        """(epoch, slot, scene index) triples for ``step``."""
        epoch, within = divmod(step, self.steps_per_epoch)
        order = self.epoch_order(epoch)
        lo = within * self.cfg.batch_size
        hi = min(lo + self.cfg.batch_size, self.per_epoch)
        return [(epoch, j, int(order[j])) for j in range(lo, hi)]


def _model_tensors(model: SegModel) -> dict[str, torch.Tensor]:
    return dict(model.named_parameters())


def save_training_checkpoint(path, model: SegModel, state: OptimizerState, meta: dict) -> None:
    tensors = {n: p.detach().cpu().numpy() for n, p in model.named_parameters()}
    for n in state.m:
        tensors[f"optim.m.{n}"] = state.m[n].cpu().numpy()
        tensors[f"optim.v.{n}"] = state.v[n].cpu().numpy()
    save_checkpoint(path, tensors, model.config.to_dict(), model.config.fingerprint(),
                    dict(meta, optimizer_step=state.step))


def model_config_from_header(header: dict) -> ModelConfig:
    return ModelConfig(**header["model_config"])


def load_model(path, config: ModelConfig | None = None) -> tuple[SegModel, OptimizerState | None, dict]:
    """Rebuild a model (and optimizer state, when present) from a checkpoint."""
    tensors, header = load_checkpoint(path)
    cfg = config or model_config_from_header(header)
    if cfg.fingerprint() != header["fingerprint"]:
        raise TrainingError(f"{path}: checkpoint was written for a different model config")
    model = SegModel(cfg)
    params = _model_tensors(model)
    missing = [n for n in params if n not in tensors]
    if missing:
        raise TrainingError(f"{path}: missing parameters {missing[:3]}")
    with torch.no_grad():
        for n, p in params.items():
            p.copy_(torch.from_numpy(tensors[n]))
    state = None
    if all(f"optim.m.{n}" in tensors for n in params):
        state = OptimizerState(
            {n: torch.from_numpy(tensors[f"optim.m.{n}"]) for n in params},
            {n: torch.from_numpy(tensors[f"optim.v.{n}"]) for n in params},
            int(header["meta"].get("optimizer_step", 0)),
        )
    return model, state, header["meta"]


@dataclass
class TrainResult:
    model: SegModel
    log: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    steps: int = 0


def load_scenes(index: DatasetIndex) -> list[tuple[np.ndarray, np.ndarray]]:
    return [index.load(i) for i in range(len(index))]


def train(
    scenes: Sequence[tuple[np.ndarray, np.ndarray]] | DatasetIndex,
    model_cfg: ModelConfig = ModelConfig(),
    cfg: TrainConfig = TrainConfig(),
    ohem: OhemConfig = OhemConfig(),
    dice: DiceConfig = DiceConfig(),
    policy: SamplePolicy = SamplePolicy(),
    aug: AugConfig = AugConfig(),
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    max_steps: int | None = None,
    ignore_id: int = IGNORE_ID,
) -> TrainResult:
    """Train from scratch (or from ``resume``) and return the final model and step log.

    With ``out_dir`` set, writes ``checkpoints/epoch_XXXX.ckpt`` every
    ``checkpoint_every`` epochs, ``checkpoints/final.ckpt`` and ``logs/train.csv``.
    ``max_steps`` stops early without changing the learning-rate schedule.
    """
    if isinstance(scenes, DatasetIndex):
        scenes = load_scenes(scenes)
    if not scenes:
        raise TrainingError("no training scenes")
    plan = BatchPlan(len(scenes), cfg)
    k = ohem.resolve(policy.crop_size ** 2)

    if resume is not None:
        model, state, meta = load_model(resume, model_cfg)
        if state is None:
            raise TrainingError(f"{resume}: checkpoint has no optimizer state to resume from")
    else:
        model = init_parameters(model_cfg, cfg.seed)
        state = OptimizerState.zeros_like(_model_tensors(model))
    params = _model_tensors(model)
    model.train()

    ckpt_dir = log_path = None
    if out_dir is not None:
        ckpt_dir = Path(out_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "logs").mkdir(parents=True, exist_ok=True)
        log_path = Path(out_dir) / "logs" / "train.csv"

    result = TrainResult(model)
    end = plan.total_steps if max_steps is None else min(plan.total_steps, state.step + max_steps)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "a" if resume is not None else "w", newline="")
        writer = csv.writer(log_fh)
        if resume is None:
            writer.writerow(LOG_COLUMNS)
    try:
        while state.step < end:
            step = state.step
            slots = plan.slots(step)
            jobs = [(idx, np.random.default_rng([cfg.seed, e, j])) for e, j, idx in slots]
            fn = lambda job: _crop_for(scenes, job[0], job[1], policy, aug, ignore_id)  # noqa: E731
            crops = list(pool.map(fn, jobs)) if pool else [fn(j) for j in jobs]
            images = np.stack([c[0] for c in crops])
            labels = np.stack([c[1] for c in crops])

            for p in params.values():
                p.grad = None
            logits = model(to_batch(images))
            lg = logits.detach().permute(0, 2, 3, 1).double().numpy()
            try:
                if cfg.objective == "ce":
                    l_ce, grad, kept = cross_entropy_loss(lg, labels, ignore_id)
                    row_vals = (l_ce, l_ce, 0.0, kept)
                else:
                    rep, grad = total_loss(lg, labels, k, dice, ignore_id)
                    row_vals = (rep.loss_total, rep.loss_ohem, rep.loss_dice, rep.kept_pixels)
            except ValueError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            if not math.isfinite(row_vals[0]):
                raise TrainingError(f"non-finite loss at step {step}")
            logits.backward(torch.from_numpy(grad).permute(0, 3, 1, 2).to(logits.dtype))

            grads = {n: p.grad for n, p in params.items()}
            if cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(list(params.values()), cfg.clip_norm)
            lr = cosine_lr(step, plan.total_steps, cfg.lr0, cfg.lr_min)
            adamw_step(params, grads, state, lr, cfg)

            row = dict(zip(LOG_COLUMNS, (step, lr) + tuple(row_vals)))
            result.log.append(row)
            if log_fh is not None:
                writer.writerow([step, repr(lr)] + [repr(float(v)) for v in row_vals[:3]] + [row_vals[3]])

            done_epoch, rem = divmod(state.step, plan.steps_per_epoch)
            if (ckpt_dir is not None and rem == 0 and cfg.checkpoint_every
                    and done_epoch % cfg.checkpoint_every == 0 and state.step < plan.total_steps):
                path = ckpt_dir / f"epoch_{done_epoch:04d}.ckpt"
                save_training_checkpoint(path, model, state, {"epoch": done_epoch, "seed": cfg.seed})
                result.checkpoints.append(path)
    finally:
        if pool is not None:
            pool.shutdown()
        if log_fh is not None:
            log_fh.close()

    if ckpt_dir is not None:
        path = ckpt_dir / "final.ckpt"
        save_training_checkpoint(path, model, state,
                                 {"epoch": state.step / plan.steps_per_epoch, "seed": cfg.seed})
        result.checkpoints.append(path)
    result.steps = state.step
    log.info("trained %d steps", state.step)
    return result
