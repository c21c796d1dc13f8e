"""Declarative run configuration: a flat `key = value` text format with
dotted sections, strict key validation, and a stable content hash that every
artifact embeds.
"""

from __future__ import annotations

import hashlib

DEFAULTS = {
    "system": "incompressible",
    "seed": 0,
    # data generation
    "data.n_train": 64,
    "data.n_eval": 16,
    "data.grid_n": 64,
    "data.solver_dt": None,  # per-system default when unset
    "data.t_final": None,
    "data.t_stride": None,
    "data.x_stride": 1,
    # model
    "model.architecture": "spectral",
    "model.modes": 8,
    "model.width": 16,
    "model.n_layers": 3,
    # training
    "train.mode": "opssplit",
    "train.epochs": 60,
    "train.lr": 1e-3,
    "train.lr_halving_period": 20,
    "train.rollout_length": 5,
    "train.batch_size": 4,
    "train.windows_per_epoch": 32,
    "train.scheme": "euler",
    "train.substeps": 1,
    "train.fd_order": 2,
    "train.density_weight": "ln-density",
    # optional explicit term list for the split dynamics; see README for the
    # entry grammar (kind:operator:in:out:coefficient[:weight@channel])
    "rhs.terms": "",
    # evaluation
    "eval.residual_order": 2,
    "eval.horizon": None,
    # theorem harness
    "theorem.shifts": "0.01,0.0147,0.0215,0.0316,0.0464,0.0681,0.1",
    "theorem.grid_n": 64,
    "theorem.fd_order": 2,
    "theorem.lam_train": 1.0,
}

_SYSTEM_DATA_DEFAULTS = {
    "incompressible": {"data.solver_dt": 1e-3, "data.t_final": 0.25, "data.t_stride": 10},
    "compressible": {"data.solver_dt": 5e-4, "data.t_final": 1.0, "data.t_stride": 40},
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None}
_TYPES.update(
    {
        "data.solver_dt": float,
        "data.t_final": float,
        "data.t_stride": int,
        "eval.horizon": int,
        "train.lr": float,
        "theorem.lam_train": float,
    }
)


class ConfigError(ValueError):
    pass


def _coerce(key, raw):
    t = _TYPES.get(key, str)
    try:
        if t is bool:
            return raw.lower() in ("1", "true", "yes")
        return t(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None


def parse_config_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config(path=None, overrides=None):
    """Resolve defaults <- file <- overrides, filling per-system data values."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path) as f:
            cfg.update(parse_config_text(f.read()))
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown override key {key!r}")
        cfg[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    system = cfg["system"]
    if system not in _SYSTEM_DATA_DEFAULTS:
        raise ConfigError(f"unknown system {system!r}")
    for key, value in _SYSTEM_DATA_DEFAULTS[system].items():
        if cfg[key] is None:
            cfg[key] = value
    return cfg


def canonical_text(cfg):
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if value is None:
            continue
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]
