"""Time integration of learned dynamics: the three deployment modes.

All steppers operate on Variables so the same code path serves training
(recording tape) and inference (non-recording tape).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

BLOWUP_THRESHOLD = 1e6  # normalised fields live in [-1, 1]; 1e6 is unambiguous

SCHEMES = ("euler", "rk4", "strang")


class BlowUpError(RuntimeError):
    """Raised when a rolled-out state leaves the plausible range."""

    def __init__(self, frame, value):
        super().__init__(f"rollout diverged at frame {frame}: max |value| = {value:.3e}")
        self.frame = frame
        self.value = value


@dataclass
class IntegratorConfig:
    scheme: str = "euler"
    dt: float = 1.0
    substeps: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def _check_rhs(out):
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("rhs produced NaN or Inf")
    return out


def euler_step(rhs_fn, u, h):
    """u + h * f(u)."""
    k = _check_rhs(rhs_fn(u))
    return ad.add(u, ad.mul(k, u.tape.constant(np.float64(h))))


def rk4_step(rhs_fn, u, h):
    """Classical four-stage Runge-Kutta step."""
    tape = u.tape
    half = tape.constant(np.float64(0.5 * h))
    k1 = _check_rhs(rhs_fn(u))
    k2 = _check_rhs(rhs_fn(ad.add(u, ad.mul(k1, half))))
    k3 = _check_rhs(rhs_fn(ad.add(u, ad.mul(k2, half))))
    k4 = _check_rhs(rhs_fn(ad.add(u, ad.mul(k3, tape.constant(np.float64(h))))))
    ksum = ad.add(ad.add(k1, ad.mul(k2, tape.constant(2.0))), ad.add(ad.mul(k3, tape.constant(2.0)), k4))
    return ad.add(u, ad.mul(ksum, tape.constant(np.float64(h / 6.0))))


_STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def advance_frame(rhs_fn, u, cfg, strang_parts=None):
    """Advance one data-frame interval with the configured scheme."""
    h = cfg.dt / cfg.substeps
    for _ in range(cfg.substeps):
        if cfg.scheme == "strang":
            if strang_parts is None:
                raise ValueError("strang scheme needs (rhs_a, rhs_b) sub-dynamics")
            fa, fb = strang_parts
            u = euler_step(fb, u, 0.5 * h)
            u = euler_step(fa, u, h)
            u = euler_step(fb, u, 0.5 * h)
        else:
            u = _STEPPERS[cfg.scheme](rhs_fn, u, h)
    return u


def _guard(frame_index, u):
    m = float(np.max(np.abs(u.data)))
    if not np.isfinite(m) or m > BLOWUP_THRESHOLD:
        raise BlowUpError(frame_index, m)


def rollout_ode(rhs_fn, u0, n_frames, cfg, strang_parts=None):
    """Integrate a dynamics function through n_frames data intervals.

    Returns the list of frame Variables at t = k*dt, k = 1..n_frames.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    frames = []
    u = u0
    for k in range(1, n_frames + 1):
        u = advance_frame(rhs_fn, u, cfg, strang_parts)
        _guard(k, u)
        frames.append(u)
    return frames


def rollout_next_state(model_fn, u0, n_frames):
    """Autoregressive rollout: one next-state map application per frame."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    frames = []
    u = u0
    for k in range(1, n_frames + 1):
        u = model_fn(u)
        _guard(k, u)
        frames.append(u)
    return frames
