"""Optimisation of the three deployment modes: relative-Lp rollout loss over
short windows, Adam with a step-decay schedule, and deterministic batching
driven by a single root seed.

All three modes consume identical window sequences for a given seed, so the
deployment mode is the only variable in a comparison run.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .integrators import BlowUpError, IntegratorConfig, _guard, advance_frame
from .validation import check_finite

MODES = ("ar", "node", "opssplit")


@dataclass
class TrainConfig:
    mode: str = "opssplit"
    epochs: int = 60
    lr: float = 1e-3
    lr_halving_period: int = 20
    rollout_length: int = 5
    batch_size: int = 4
    windows_per_epoch: int = 32
    loss_p: float = 2.0
    loss_eps: float = 1e-6
    scheme: str = "euler"
    substeps: int = 1
    seed: int = 0
    test_windows: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rollout_length < 1:
            raise ValueError("rollout_length must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class LossRecord:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def rows(self):
        return [
            (e, self.train_loss[e], self.test_loss[e], self.lr[e], self.seconds[e])
            for e in range(len(self.train_loss))
        ]


def lr_at_epoch(lr0, period, epoch):
    """Step decay: half the rate every `period` epochs, exactly."""
    return lr0 * 2.0 ** (-(epoch // period))


def norm_p(x, p, axes):
    """(sum |x|^p)^(1/p) over the given axes of a Variable."""
    if p == 2.0:
        return ad.sqrt(ad.sum_axes(ad.mul(x, x), axes))
    return ad.pow_scalar(ad.sum_axes(ad.pow_scalar(ad.absval(x), p), axes), 1.0 / p)


def relative_lp_loss(pred, target, p=2.0, eps=1e-6):
    """||pred - target||_p / (||target||_p + eps), averaged over any batch.

    Accepts Variables (differentiable in pred) or plain arrays; norms run
    over the trailing field axes [C, H, W].
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not isinstance(pred, ad.Variable):
        tape = ad.Tape(record=False)
        pred = tape.variable(pred)
        target = tape.variable(np.asarray(target, dtype=np.float64))
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {target.data.shape}")
    axes = (-3, -2, -1)
    tape = pred.tape
    num = norm_p(ad.sub(pred, target), p, axes)
    den = ad.add(norm_p(target, p, axes), tape.constant(np.float64(eps)))
    ratio = ad.div(num, den)
    return mean_of(ratio)


def mean_of(x):
    n = x.data.size
    return ad.total_sum(x) * (1.0 / n) if n > 1 else ad.total_sum(x)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update in place; skips (with a warning) on NaN."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            warnings.warn("NaN/Inf gradient; skipping optimiser step")
            return False
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        p -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)
    return True


class WindowSampler:
    """Deterministic random training windows, identical across modes."""

    def __init__(self, n_traj, n_frames, window, seed):
        if n_frames < window:
            raise ValueError(f"trajectories have {n_frames} frames, need >= {window}")
        self.n_traj = n_traj
        self.max_start = n_frames - window
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A31]))

    def epoch_windows(self, count):
        traj = self.rng.integers(0, self.n_traj, size=count)
        start = self.rng.integers(0, self.max_start + 1, size=count)
        return list(zip(traj.tolist(), start.tolist()))


def make_bindings(mode, models, rhs, tape, trainable=True):
    """Bind every model of the mode onto one tape, sharing duplicates."""
    if mode == "opssplit":
        bound_rhs = rhs.bind(tape, trainable=trainable)
        return bound_rhs.bound_models, bound_rhs
    m = models["dynamics"]
    return {id(m): m.bind(tape, trainable=trainable)}, None


def _predict_window(mode, models, bound_models, bound_rhs, u0_var, n_steps, cfg, dt):
    """Roll n_steps predicted frames from u0 using pre-bound parameters."""
    icfg = IntegratorConfig(scheme=cfg.scheme, dt=dt, substeps=cfg.substeps)
    frames = []
    u = u0_var
    if mode == "ar":
        m = models["dynamics"]
        bound = bound_models[id(m)]
        for k in range(n_steps):
            u = m.forward(bound, u)
            _guard(k + 1, u)
            frames.append(u)
    elif mode == "node":
        m = models["dynamics"]
        bound = bound_models[id(m)]
        f = lambda x: m.forward(bound, x)
        for k in range(n_steps):
            u = advance_frame(f, u, icfg)
            _guard(k + 1, u)
            frames.append(u)
    else:
        parts = None
        if cfg.scheme == "strang":
            parts = (
                lambda x: bound_rhs(x, kinds=("learned",)),
                lambda x: bound_rhs(x, kinds=("fixed-linear",)),
            )
        for k in range(n_steps):
            u = advance_frame(bound_rhs, u, icfg, strang_parts=parts)
            _guard(k + 1, u)
            frames.append(u)
    return frames


def window_loss(mode, models, rhs, window, cfg, dt, tape=None, bindings=None):
    """Mean relative-Lp loss over the rollout frames of one window batch.

    `window` is [B, rollout+1, C, H, W]; gradients flow through every step
    when a recording tape is supplied.
    """
    n_steps = window.shape[1] - 1
    if n_steps != cfg.rollout_length:
        raise ValueError(f"window holds {n_steps} steps, config wants {cfg.rollout_length}")
    tape = tape or ad.Tape(record=False)
    if bindings is None:
        bindings = make_bindings(mode, models, rhs, tape, trainable=tape.record)
    bound_models, bound_rhs = bindings
    u = tape.variable(window[:, 0])
    frames = _predict_window(mode, models, bound_models, bound_rhs, u, n_steps, cfg, dt)
    loss = None
    for k, f in enumerate(frames, start=1):
        term = relative_lp_loss(f, tape.constant(window[:, k]), cfg.loss_p, cfg.loss_eps)
        loss = term if loss is None else ad.add(loss, term)
    return loss * (1.0 / n_steps)


def _gather_params(models):
    """Flat name -> array view over every trainable model, deduplicated."""
    flat = {}
    seen = set()
    for slot, model in models.items():
        if id(model) in seen:
            continue
        seen.add(id(model))
        for k, p in model.params.items():
            flat[f"{slot}.{k}"] = p
    return flat


def _flat_grads(models, bound_ids, grad_map):
    flat = {}
    seen = set()
    for slot, model in models.items():
        if id(model) in seen:
            continue
        seen.add(id(model))
        bound = bound_ids[id(model)]
        for k in model.params:
            nid = bound[k].node_id
            g = grad_map.get(nid)
            flat[f"{slot}.{k}"] = np.zeros_like(model.params[k]) if g is None else g
    return flat


def train(ds_train, ds_test, models, cfg, rhs=None, on_epoch=None):
    """Optimise the mode's models on normalised datasets.

    Returns a LossRecord; parameters are updated in place. `models` maps slot
    names to OperatorModel ("dynamics" for ar/node; the rhs's learned slots
    for opssplit). `on_epoch(epoch, record)` runs after each epoch.
    """
    if not ds_train.normalized or (len(ds_test) and not ds_test.normalized):
        raise ValueError("datasets must be normalised before training")
    if cfg.mode == "opssplit" and rhs is None:
        raise ValueError("opssplit training needs a SplitRHS")
    dt = ds_train.frame_interval
    window = cfg.rollout_length + 1
    frames = ds_train.stacked()
    sampler = WindowSampler(frames.shape[0], frames.shape[1], window, cfg.seed)
    params = _gather_params(models)
    state = AdamState.for_params(params)
    record = LossRecord()

    test_batches = _test_batches(ds_test, cfg, window)

    for epoch in range(cfg.epochs):
        t0 = time.time()
        lr = lr_at_epoch(cfg.lr, cfg.lr_halving_period, epoch)
        windows = sampler.epoch_windows(cfg.windows_per_epoch)
        losses = []
        invalid = 0
        for i in range(0, len(windows), cfg.batch_size):
            chunk = windows[i : i + cfg.batch_size]
            batch = np.stack([frames[tr, s : s + window] for tr, s in chunk])
            tape = ad.Tape()
            bindings = make_bindings(cfg.mode, models, rhs, tape)
            try:
                loss = window_loss(cfg.mode, models, rhs, batch, cfg, dt, tape, bindings)
            except (BlowUpError, FloatingPointError):
                invalid += len(chunk)
                continue
            grad_map = tape.backward(loss)
            flat = _flat_grads(models, bindings[0], grad_map)
            adam_step(params, flat, state, lr)
            losses.append(float(loss.data))
        if invalid > 0.5 * len(windows):
            raise RuntimeError(
                f"epoch {epoch}: {invalid}/{len(windows)} windows diverged; aborting"
            )
        record.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        record.test_loss.append(_eval_test_loss(test_batches, models, rhs, cfg, dt))
        record.lr.append(lr)
        record.seconds.append(time.time() - t0)
        if on_epoch is not None:
            on_epoch(epoch, record)
    return record


def _test_batches(ds_test, cfg, window):
    if not len(ds_test):
        return []
    frames = ds_test.stacked()
    n = min(cfg.test_windows, frames.shape[0])
    batches = []
    for i in range(0, n, cfg.batch_size):
        idx = range(i, min(i + cfg.batch_size, n))
        batches.append(np.stack([frames[j, 0:window] for j in idx]))
    return batches


def _eval_test_loss(test_batches, models, rhs, cfg, dt):
    if not test_batches:
        return float("nan")
    vals = []
    for batch in test_batches:
        try:
            loss = window_loss(cfg.mode, models, rhs, batch, cfg, dt)
            vals.append(float(loss.data))
        except (BlowUpError, FloatingPointError):
            vals.append(float("nan"))
    return float(np.nanmean(vals)) if not all(np.isnan(vals)) else float("nan")
