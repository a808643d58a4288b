"""Training recipe: AdamW, one-cycle LR, parameter EMA, metrics, k-fold harness."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import torch

from .augment import AugmentPipeline
from .losses import loss_fn
from .mix import LabeledSample, MixPolicy
from .model import EatConfig, EatModel, build, value_and_grad
from .signal import Waveform

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_lr: float = 5e-4
    weight_decay: float = 1e-5
    ema_decay: float = 0.995
    label_smoothing: float = 0.1
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    loss_kind: str = "smoothed_ce"
    warmup_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # ramp the EMA decay as min(ema_decay, (1 + t) / (10 + t)) so short runs are not dominated by init
    ema_warmup: bool = True
    repeats: int = 1

    def __post_init__(self):
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in (0, 1), got {self.ema_decay}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.max_lr <= 0:
            raise ValueError(f"max_lr must be positive, got {self.max_lr}")
        if self.epochs < 1 or self.batch_size < 1 or self.repeats < 1:
            raise ValueError("epochs, batch_size and repeats must be >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.loss_kind not in ("smoothed_ce", "bce"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    ema: dict[str, torch.Tensor]
    step: int = 0
    total_steps: int = 0

    @classmethod
    def init(cls, model: torch.nn.Module, total_steps: int = 0) -> "TrainState":
        params = dict(model.named_parameters())
        return cls(
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
            ema={k: p.detach().clone() for k, p in params.items()},
            total_steps=total_steps,
        )


# ---------------------------------------------------------------- optimizer


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: TrainState,
               lr: float, wd: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step with weight decay decoupled from the gradient.

    Updates ``params`` and ``state`` in place and returns both.
    """
    for name, g in grads.items():
        if not torch.all(torch.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
        m, v = state.m[name], state.v[name]
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.sub_(lr * wd * p)
        p.sub_(lr * m_hat / (v_hat.sqrt() + eps))
    return params, state


def one_cycle_lr(step: float, total_steps: int, max_lr: float = 5e-4, warmup_fraction: float = 0.3,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Cosine ramp max_lr/div -> max_lr, then cosine anneal -> max_lr/final_div."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    start, end = max_lr / div_factor, max_lr / final_div_factor
    warm = warmup_fraction * total_steps
    if step <= warm:
        frac = step / warm
        return start + (max_lr - start) * (1 - math.cos(math.pi * frac)) / 2
    frac = (step - warm) / (total_steps - warm)
    return end + (max_lr - end) * (1 + math.cos(math.pi * frac)) / 2


@torch.no_grad()
def ema_update(shadow: dict[str, torch.Tensor], params: dict[str, torch.Tensor], decay: float = 0.995):
    for name, p in params.items():
        s = shadow[name]
        if s.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(s.shape)} vs {tuple(p.shape)}")
        s.mul_(decay).add_(p.detach(), alpha=1 - decay)
    return shadow


def effective_ema_decay(cfg: "TrainConfig", step: int) -> float:
    if not cfg.ema_warmup:
        return cfg.ema_decay
    return min(cfg.ema_decay, (1.0 + step) / (10.0 + step))


def ema_model(model: EatModel, state: TrainState) -> EatModel:
    """Copy of ``model`` carrying the EMA shadow weights, in eval mode."""
    shadow = copy.deepcopy(model)
    with torch.no_grad():
        for name, p in shadow.named_parameters():
            p.copy_(state.ema[name])
    return shadow.eval()


# ---------------------------------------------------------------- metrics


def accuracy(logits, labels) -> float:
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    return float(np.mean(logits.argmax(axis=1) == labels))


def average_precision(scores, positives) -> float:
    """Precision averaged over the ranks of the positives (ties keep input order)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives).astype(bool)
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def mean_average_precision(scores, labels) -> float:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    if scores.shape[0] == 0:
        raise ValueError("empty batch")
    aps = []
    for c in range(scores.shape[1]):
        if not labels[:, c].any():
            log.info("class %d has no positives; skipped in mAP", c)
            continue
        aps.append(average_precision(scores[:, c], labels[:, c]))
    if not aps:
        raise ValueError("no class has a positive label")
    return float(np.mean(aps))


# ---------------------------------------------------------------- training loop


@dataclass
class Split:
    """Equal-length waveforms ``x`` (N, L) or (N, C_in, L) with soft labels ``y`` (N, C)."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: int
    folds: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y disagree on the number of samples")
        if self.folds is not None:
            self.folds = np.asarray(self.folds)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Split":
        return Split(self.x[idx], self.y[idx], self.sample_rate,
                     None if self.folds is None else self.folds[idx])


@dataclass
class EpochResult:
    epoch: int
    loss: float
    lr: float
    stage_log: list[dict] = field(default_factory=list)


def objective(cfg: TrainConfig, mix: MixPolicy | None, multi_label: bool) -> str:
    """Mixing produces soft multi-label targets, which are trained with BCE."""
    if multi_label or (mix is not None and mix.enabled):
        return "bce"
    return cfg.loss_kind


def augment_batch(split: Split, idx: np.ndarray, pipeline: AugmentPipeline | None, mix: MixPolicy | None,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    xs, ys, stage_log = [], [], []
    seeds = rng.integers(0, 2**63, size=(len(idx), 3))
    for (i, (s_aug, s_partner, s_mix)) in zip(idx, seeds):
        x, y = split.x[i], split.y[i]
        if x.ndim == 1 and (pipeline is not None or mix is not None):
            wav = Waveform(x, split.sample_rate)
            record = {"index": int(i), "stages": []}
            if pipeline is not None:
                wav, stages = pipeline(wav, s_aug)
                record["stages"].extend(stages)
            if mix is not None and mix.enabled:
                j = int(np.random.default_rng(s_partner).integers(len(split)))
                partner = LabeledSample(Waveform(split.x[j], split.sample_rate), split.y[j])
                mixed, info = mix(LabeledSample(wav, y), partner, s_mix)
                if info is not None:
                    record["stages"].append({**info, "partner": j})
                wav, y = mixed.waveform, mixed.label
            x = wav.samples
            stage_log.append(record)
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys), stage_log


def train_epoch(model: EatModel, data: Split, pipeline: AugmentPipeline | None, mix: MixPolicy | None,
                cfg: TrainConfig, state: TrainState, rng: np.random.Generator, epoch: int = 0) -> EpochResult:
    """One pass over ``data``: augment, mix, step AdamW on the one-cycle LR, update the EMA."""
    model.train()
    kind = objective(cfg, mix, model.config.multi_label)
    order = rng.permutation(len(data))
    params = dict(model.named_parameters())
    losses, weights, stage_log = [], [], []
    lr = 0.0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        xb, yb, batch_log = augment_batch(data, idx, pipeline, mix, rng)
        stage_log.extend(batch_log)
        vg = value_and_grad(model, xb, yb, kind, cfg.label_smoothing)
        lr = one_cycle_lr(min(state.step, state.total_steps), state.total_steps, cfg.max_lr,
                          cfg.warmup_fraction, cfg.div_factor, cfg.final_div_factor)
        adamw_step({k: p.data for k, p in params.items()}, vg.grads, state, lr, cfg.weight_decay,
                   cfg.beta1, cfg.beta2, cfg.adam_eps)
        ema_update(state.ema, params, effective_ema_decay(cfg, state.step))
        losses.append(vg.value)
        weights.append(len(idx))
    loss = float(np.dot(losses, weights) / np.sum(weights))
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite epoch loss {loss}")
    return EpochResult(epoch, loss, lr, stage_log)


@torch.no_grad()
def predict(model: EatModel, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    out = [model(torch.as_tensor(x[i : i + batch_size], dtype=dtype)).double().numpy()
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def evaluate(model: EatModel, data: Split, cfg: TrainConfig | None = None) -> dict:
    cfg = cfg or TrainConfig()
    logits = predict(model, data.x)
    multi = model.config.multi_label
    kind = "bce" if multi else "smoothed_ce"
    loss = loss_fn(kind, torch.as_tensor(logits), data.y, cfg.label_smoothing).item()
    if multi:
        return {"loss": loss, "mAP": mean_average_precision(1 / (1 + np.exp(-logits)), data.y > 0.5)}
    return {"loss": loss, "accuracy": accuracy(logits, data.y)}


def fit(model_cfg: EatConfig, cfg: TrainConfig, train: Split, test: Split | None = None,
        pipeline: AugmentPipeline | None = None, mix: MixPolicy | None = None,
        on_epoch: Callable[[dict], None] | None = None, model: EatModel | None = None,
        state: TrainState | None = None, start_epoch: int = 0, seed: int | None = None,
        on_epoch_end: Callable[[int, EatModel, TrainState], None] | None = None, stop_epoch: int | None = None):
    """Train from scratch (or resume from ``model``/``state``). Returns (model, state, history).

    Each epoch draws from its own generator seeded by (seed, epoch), so a run resumed
    at ``start_epoch`` is bitwise identical to an uninterrupted one. ``stop_epoch``
    ends early without changing the schedule.
    """
    seed = cfg.seed if seed is None else seed
    if model is None:
        model = build(model_cfg, seed)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    if state is None:
        state = TrainState.init(model, cfg.epochs * steps_per_epoch)
    history = []
    end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
    for epoch in range(start_epoch, end):
        rng = np.random.default_rng([seed, epoch])
        res = train_epoch(model, train, pipeline, mix, cfg, state, rng, epoch)
        rec = {"epoch": epoch, "split": "train", "loss": res.loss, "lr": res.lr}
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if test is not None:
            rec = {"epoch": epoch, "split": "eval", **evaluate(ema_model(model, state), test, cfg), "lr": res.lr}
            history.append(rec)
            if on_epoch:
                on_epoch(rec)
        if on_epoch_end:
            on_epoch_end(epoch, model, state)
    return model, state, history


def fold_partition(folds: np.ndarray) -> dict[int, np.ndarray]:
    """Evaluation indices per fold; every sample lands in exactly one fold."""
    folds = np.asarray(folds)
    out = {int(f): np.flatnonzero(folds == f) for f in np.unique(folds)}
    for f, idx in out.items():
        if idx.size == 0:
            raise ValueError(f"fold {f} has no samples")
    return out


def kfold_run(data: Split, model_cfg: EatConfig, cfg: TrainConfig, pipeline: AugmentPipeline | None = None,
              mix: MixPolicy | None = None, on_epoch: Callable[[dict], None] | None = None,
              on_fold: Callable[[int, int, EatModel, TrainState], None] | None = None) -> dict:
    """Leave-one-fold-out training, repeated ``cfg.repeats`` times; evaluates EMA weights."""
    if data.folds is None:
        raise ValueError("k-fold run needs per-sample fold assignments")
    parts = fold_partition(data.folds)
    metric = "mAP" if model_cfg.multi_label else "accuracy"
    runs = []
    for rep in range(cfg.repeats):
        per_fold = {}
        for f, eval_idx in parts.items():
            train_idx = np.flatnonzero(data.folds != f)
            if train_idx.size == 0:
                raise ValueError(f"no training samples outside fold {f}")
            seed = cfg.seed + 1000 * rep + f

            def tagged(rec, f=f, rep=rep):
                if on_epoch:
                    on_epoch({**rec, "fold": f, "repeat": rep})

            model, state, _ = fit(model_cfg, cfg, data.subset(train_idx), None, pipeline, mix, tagged, seed=seed)
            shadow = ema_model(model, state)
            per_fold[f] = evaluate(shadow, data.subset(eval_idx), cfg)[metric]
            if on_fold:
                on_fold(rep, f, shadow, state)
        runs.append(per_fold)
    means = [float(np.mean(list(r.values()))) for r in runs]
    return {"metric": metric, "per_fold": runs, "mean_per_repeat": means, "mean": float(np.mean(means))}
