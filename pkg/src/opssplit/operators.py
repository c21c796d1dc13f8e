"""Trainable operator networks: a spectral-convolution operator and a plain
convolutional operator, both grid-shape preserving.

Parameters are raw float64 arrays owned by the model; each forward pass binds
them onto a fresh tape, so the graph never outlives one training step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

_MAGIC = b"OPSCKPT1"

ACTIVATIONS = {"gelu": ad.gelu, "tanh": ad.tanh}


@dataclass(frozen=True)
class SpectralOperatorConfig:
    in_channels: int
    out_channels: int
    modes: int
    width: int
    n_layers: int
    activation: str = "gelu"

    arch = "spectral"


@dataclass(frozen=True)
class ConvOperatorConfig:
    in_channels: int
    out_channels: int
    width: int
    n_layers: int
    kernel_size: int = 3
    activation: str = "gelu"

    arch = "conv"


def expected_param_count(cfg):
    """Closed-form parameter count for a config."""
    w = cfg.width
    lift = cfg.in_channels * w + w
    proj = w * cfg.out_channels + cfg.out_channels
    if cfg.arch == "spectral":
        per_layer = 4 * w * w * cfg.modes * cfg.modes + w * w + w
    else:
        per_layer = w * w * cfg.kernel_size**2 + w
    return lift + cfg.n_layers * per_layer + proj


class OperatorModel:
    """A configured operator network with named float64 parameter arrays."""

    def __init__(self, config, params, seed):
        self.config = config
        self.params = params  # ordered name -> ndarray
        self.seed = seed

    @property
    def arch(self):
        return self.config.arch

    def count_params(self):
        return sum(p.size for p in self.params.values())

    def bind(self, tape, trainable=True):
        """Create tape leaves for every parameter of this model."""
        return {k: tape.variable(v, requires_grad=trainable, name=k) for k, v in self.params.items()}

    def forward(self, bound, x):
        """Run the network on a field Variable [..., C_in, H, W]."""
        cfg = self.config
        if x.data.shape[-3] != cfg.in_channels:
            raise ValueError(
                f"expected {cfg.in_channels} input channels, got {x.data.shape[-3]}"
            )
        act = ACTIVATIONS[cfg.activation]
        h = ad.channel_linear(x, bound["lift.w"], bound["lift.b"])
        for i in range(cfg.n_layers):
            if cfg.arch == "spectral":
                y = ad.spectral_conv(
                    h,
                    bound[f"layer{i}.w1r"],
                    bound[f"layer{i}.w1i"],
                    bound[f"layer{i}.w2r"],
                    bound[f"layer{i}.w2i"],
                    cfg.modes,
                    cfg.modes,
                )
                y = ad.add(y, ad.channel_linear(h, bound[f"layer{i}.pw.w"], bound[f"layer{i}.pw.b"]))
            else:
                y = ad.conv2d_periodic(h, bound[f"layer{i}.conv.w"], bound[f"layer{i}.conv.b"])
            h = act(y) if i < cfg.n_layers - 1 else y
        return ad.channel_linear(h, bound["proj.w"], bound["proj.b"])

    def forward_array(self, x):
        """Inference fast path on a plain ndarray."""
        tape = ad.Tape(record=False)
        bound = self.bind(tape, trainable=False)
        return self.forward(bound, tape.variable(x)).data

    # -- persistence ------------------------------------------------------

    def save(self, path):
        header = {
            "format": "opssplit-checkpoint",
            "version": 1,
            "arch": self.config.arch,
            "config": asdict(self.config),
            "seed": self.seed,
            "names": [{"name": k, "shape": list(v.shape)} for k, v in self.params.items()],
        }
        blob = json.dumps(header).encode()
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for v in self.params.values():
                f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())

    @staticmethod
    def _read(path):
        with open(path, "rb") as f:
            magic = f.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not an opssplit checkpoint")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode())
            params = {}
            for entry in header["names"]:
                shape = tuple(entry["shape"])
                n = int(np.prod(shape)) if shape else 1
                raw = f.read(n * 8)
                if len(raw) != n * 8:
                    raise ValueError(f"{path}: truncated checkpoint")
                params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            if f.read(1):
                raise ValueError(f"{path}: trailing bytes after checkpoint payload")
        return header, params

    @classmethod
    def load(cls, path):
        header, params = cls._read(path)
        cfg_dict = dict(header["config"])
        cfg = (SpectralOperatorConfig if header["arch"] == "spectral" else ConvOperatorConfig)(
            **cfg_dict
        )
        return cls(cfg, params, header["seed"])

    def load_params(self, path):
        """Warm-start this model from a checkpoint; shapes must match."""
        header, params = self._read(path)
        if set(params) != set(self.params):
            raise ValueError("checkpoint parameter names do not match this model")
        for k, v in params.items():
            if v.shape != self.params[k].shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {k}: {v.shape} vs {self.params[k].shape}"
                )
        self.params = params


def build_model(cfg, seed, grid_extent=None):
    """Deterministically initialise an operator network from a seed.

    `grid_extent`, when known, lets the spectral mode count be validated
    against the grid Nyquist limit up front instead of at first forward.
    """
    if cfg.arch == "spectral" and grid_extent is not None and cfg.modes > grid_extent // 2:
        raise ValueError(
            f"modes {cfg.modes} exceed Nyquist limit {grid_extent // 2} of a {grid_extent}-point grid"
        )
    rng = np.random.default_rng(seed)
    w = cfg.width
    params = {}

    def uniform_fan(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params["lift.w"] = uniform_fan((cfg.in_channels, w), cfg.in_channels)
    params["lift.b"] = uniform_fan((w,), cfg.in_channels)
    for i in range(cfg.n_layers):
        if cfg.arch == "spectral":
            if cfg.modes < 1:
                raise ValueError("modes must be >= 1")
            scale = 1.0 / (w * w)
            for block in ("w1", "w2"):
                params[f"layer{i}.{block}r"] = scale * rng.random((w, w, cfg.modes, cfg.modes))
                params[f"layer{i}.{block}i"] = scale * rng.random((w, w, cfg.modes, cfg.modes))
            params[f"layer{i}.pw.w"] = uniform_fan((w, w), w)
            params[f"layer{i}.pw.b"] = uniform_fan((w,), w)
        else:
            k = cfg.kernel_size
            params[f"layer{i}.conv.w"] = uniform_fan((w, w, k, k), w * k * k)
            params[f"layer{i}.conv.b"] = uniform_fan((w,), w * k * k)
    params["proj.w"] = uniform_fan((w, cfg.out_channels), w)
    params["proj.b"] = uniform_fan((cfg.out_channels,), w)

    model = OperatorModel(cfg, params, seed)
    assert model.count_params() == expected_param_count(cfg)
    return model
