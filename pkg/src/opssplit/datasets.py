"""Trajectory and dataset containers, normalisation, and persistence.

On disk a dataset is a raw little-endian float64 block `<name>.fields` with
layout [N, T, C, H, W] plus a JSON sidecar `<name>.meta.json` carrying the
schema, generating parameters and normalisation statistics.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .validation import check_finite

FORMAT_TAG = "opssplit-fields"
SCHEMA_VERSION = "1"

SPLITS = ("train", "test", "t-extrapolate", "ood", "ood-t-extrapolate")


@dataclass
class SimParams:
    """Generating parameters of one simulation."""

    system: str  # "incompressible" | "compressible"
    alpha: float
    beta: float
    nu: float | None = None
    gamma: float | None = None
    grid_n: int = 64
    dt: float = 1e-3
    t_final: float = 0.25

    def __post_init__(self):
        if self.system not in ("incompressible", "compressible"):
            raise ValueError(f"unknown system {self.system!r}")

    def coefficient(self):
        """The injectable physical coefficient of this system."""
        return self.nu if self.system == "incompressible" else self.gamma

    def to_dict(self):
        return {
            "system": self.system,
            "alpha": self.alpha,
            "beta": self.beta,
            "nu": self.nu,
            "gamma": self.gamma,
            "grid_n": self.grid_n,
            "dt": self.dt,
            "t_final": self.t_final,
        }


@dataclass
class Trajectory:
    frames: np.ndarray  # [T, C, H, W]
    frame_interval: float
    params: SimParams
    channels: tuple
    spacing: tuple

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be [T, C, H, W], got shape {self.frames.shape}")
        if self.frames.shape[1] != len(self.channels):
            raise ValueError("channel count does not match schema")
        check_finite(self.frames, "trajectory frames")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class NormStats:
    """Per-channel bounds of the training split driving the [-1, 1] map."""

    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self):
        return {"mins": list(map(float, self.mins)), "maxs": list(map(float, self.maxs))}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mins"], dtype=float), np.asarray(d["maxs"], dtype=float))

    def scales(self):
        """Half ranges per channel; zero marks a degenerate channel."""
        return 0.5 * (self.maxs - self.mins)

    def mids(self):
        return 0.5 * (self.maxs + self.mins)


@dataclass
class Dataset:
    trajectories: list
    split: str
    stats: NormStats | None = None
    seed: int | None = None
    normalized: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        if self.trajectories:
            ref = self.trajectories[0]
            for tr in self.trajectories[1:]:
                if tr.channels != ref.channels or tr.frames.shape[1:] != ref.frames.shape[1:]:
                    raise ValueError("all trajectories must share schema and grid")

    def __len__(self):
        return len(self.trajectories)

    @property
    def channels(self):
        return self.trajectories[0].channels

    @property
    def spacing(self):
        return self.trajectories[0].spacing

    @property
    def frame_interval(self):
        return self.trajectories[0].frame_interval

    def system(self):
        return self.trajectories[0].params.system

    def coefficient(self):
        """The shared injectable coefficient of this split's generating runs."""
        values = {t.params.coefficient() for t in self.trajectories}
        if len(values) != 1:
            raise ValueError(f"split carries mixed coefficients: {values}")
        return values.pop()

    def stacked(self):
        return np.stack([t.frames for t in self.trajectories])


def subsample(traj, t_stride, x_stride):
    """Strided selection in time and space; strides must divide the extents."""
    t, c, h, w = traj.frames.shape
    if t_stride < 1 or x_stride < 1:
        raise ValueError("strides must be >= 1")
    if (t - 1) % t_stride:
        raise ValueError(f"time stride {t_stride} does not divide {t - 1} intervals")
    if h % x_stride or w % x_stride:
        raise ValueError(f"spatial stride {x_stride} does not divide {h}x{w}")
    frames = traj.frames[::t_stride, :, ::x_stride, ::x_stride]
    return Trajectory(
        frames=np.ascontiguousarray(frames),
        frame_interval=traj.frame_interval * t_stride,
        params=traj.params,
        channels=traj.channels,
        spacing=(traj.spacing[0] * x_stride, traj.spacing[1] * x_stride),
    )


def compute_norm_stats(ds):
    """Per-channel min/max over every frame of a dataset (the training split)."""
    stacked = ds.stacked()
    mins = stacked.min(axis=(0, 1, 3, 4))
    maxs = stacked.max(axis=(0, 1, 3, 4))
    return NormStats(mins=mins, maxs=maxs)


def _affine(stats):
    scales = stats.scales()
    mids = stats.mids()
    degenerate = scales == 0
    if np.any(degenerate):
        warnings.warn("degenerate channel (max == min); mapping it to 0")
    safe = np.where(degenerate, 1.0, scales)
    return safe[:, None, None], mids[:, None, None], degenerate[:, None, None]


def normalize(ds, stats=None):
    """Map each channel affinely to [-1, 1] using training-split statistics."""
    if ds.normalized:
        raise ValueError("dataset is already normalised")
    if stats is None:
        if ds.split != "train":
            raise ValueError("statistics must come from the training split")
        stats = compute_norm_stats(ds)
    scale, mid, degenerate = _affine(stats)
    out = []
    for tr in ds.trajectories:
        frames = (tr.frames - mid) / scale
        frames = np.where(degenerate, 0.0, frames)
        out.append(
            Trajectory(frames, tr.frame_interval, tr.params, tr.channels, tr.spacing)
        )
    return Dataset(out, ds.split, stats=stats, seed=ds.seed, normalized=True), stats


def denormalize(ds, stats=None):
    stats = stats or ds.stats
    if stats is None:
        raise ValueError("no statistics available to denormalise with")
    scale, mid, _ = _affine(stats)
    out = []
    for tr in ds.trajectories:
        frames = tr.frames * scale + mid
        out.append(Trajectory(frames, tr.frame_interval, tr.params, tr.channels, tr.spacing))
    return Dataset(out, ds.split, stats=stats, seed=ds.seed, normalized=False)


def denormalize_frames(frames, stats):
    """Denormalise a bare [..., C, H, W] array."""
    scale, mid, _ = _affine(stats)
    return frames * scale + mid


def normalize_frames(frames, stats):
    scale, mid, degenerate = _affine(stats)
    return np.where(degenerate, 0.0, (frames - mid) / scale)


def write_dataset(ds, base_path):
    """Persist as `<base>.fields` + `<base>.meta.json`; bit-exact round trip."""
    base = str(base_path)
    stacked = ds.stacked()
    meta = {
        "format": FORMAT_TAG,
        "schema_version": SCHEMA_VERSION,
        "split": ds.split,
        "shape": list(stacked.shape),
        "channels": list(ds.channels),
        "grid": {
            "h": stacked.shape[3],
            "w": stacked.shape[4],
            "dx": ds.spacing[0],
            "dy": ds.spacing[1],
        },
        "frame_interval": ds.frame_interval,
        "params": [t.params.to_dict() for t in ds.trajectories],
        "stats": ds.stats.to_dict() if ds.stats else None,
        "seed": ds.seed,
        "normalized": ds.normalized,
    }
    with open(base + ".meta.json", "w") as f:
        json.dump(meta, f, indent=1)
    with open(base + ".fields", "wb") as f:
        f.write(np.ascontiguousarray(stacked, dtype="<f8").tobytes())


def read_dataset(base_path):
    base = str(base_path)
    with open(base + ".meta.json") as f:
        meta = json.load(f)
    if meta.get("format") != FORMAT_TAG:
        raise ValueError(f"{base}: not an opssplit dataset (bad format tag)")
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{base}: unsupported schema version {meta.get('schema_version')}")
    shape = tuple(meta["shape"])
    expected = int(np.prod(shape)) * 8
    actual = os.path.getsize(base + ".fields")
    if actual != expected:
        raise ValueError(f"{base}.fields: expected {expected} bytes, found {actual}")
    raw = np.fromfile(base + ".fields", dtype="<f8").reshape(shape)
    spacing = (meta["grid"]["dx"], meta["grid"]["dy"])
    channels = tuple(meta["channels"])
    trajectories = [
        Trajectory(
            frames=np.ascontiguousarray(raw[i]),
            frame_interval=meta["frame_interval"],
            params=SimParams(**meta["params"][i]),
            channels=channels,
            spacing=spacing,
        )
        for i in range(shape[0])
    ]
    stats = NormStats.from_dict(meta["stats"]) if meta.get("stats") else None
    return Dataset(
        trajectories,
        meta["split"],
        stats=stats,
        seed=meta.get("seed"),
        normalized=meta.get("normalized", False),
    )
