"""Scikit-learn style surrogate estimators for the three deployment modes.

Estimators own normalisation, model construction with matched parameter
budgets, training, and physical-space rollout prediction, so downstream code
composes with the usual fit/predict/get_params machinery.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .datasets import denormalize_frames, normalize, normalize_frames
from .integrators import BlowUpError, IntegratorConfig, advance_frame
from .operators import ConvOperatorConfig, OperatorModel, SpectralOperatorConfig, build_model
from .rhs import build_compressible_rhs, build_incompressible_rhs
from .training import TrainConfig, train

COEFFICIENT_NAMES = {"incompressible": "nu", "compressible": "gamma"}


def _model_config(architecture, in_channels, out_channels, modes, width, n_layers):
    if architecture == "spectral":
        return SpectralOperatorConfig(
            in_channels=in_channels,
            out_channels=out_channels,
            modes=modes,
            width=width,
            n_layers=n_layers,
        )
    if architecture == "conv":
        return ConvOperatorConfig(
            in_channels=in_channels, out_channels=out_channels, width=width, n_layers=n_layers
        )
    raise ValueError(f"unknown architecture {architecture!r}")


class PdeSurrogateBase(BaseEstimator):
    """Shared plumbing; subclasses fix the deployment mode."""

    mode = None

    def __init__(
        self,
        system="incompressible",
        architecture="spectral",
        modes=8,
        width=16,
        n_layers=3,
        epochs=60,
        lr=1e-3,
        lr_halving_period=20,
        rollout_length=5,
        batch_size=4,
        windows_per_epoch=32,
        scheme="euler",
        substeps=1,
        fd_order=2,
        density_weight="ln-density",
        rhs_spec=None,
        seed=0,
        warm_start=None,
    ):
        self.system = system
        self.architecture = architecture
        self.modes = modes
        self.width = width
        self.n_layers = n_layers
        self.epochs = epochs
        self.lr = lr
        self.lr_halving_period = lr_halving_period
        self.rollout_length = rollout_length
        self.batch_size = batch_size
        self.windows_per_epoch = windows_per_epoch
        self.scheme = scheme
        self.substeps = substeps
        self.fd_order = fd_order
        self.density_weight = density_weight
        self.rhs_spec = rhs_spec
        self.seed = seed
        self.warm_start = warm_start

    # -- construction ------------------------------------------------------

    def _seeds(self):
        ss = np.random.SeedSequence(self.seed)
        init_ss, shuffle_ss = ss.spawn(2)
        return [int(s.generate_state(1)[0]) for s in (init_ss, shuffle_ss)]

    def _n_channels(self):
        return 2 if self.system == "incompressible" else 4

    def _dynamics_layers(self):
        # two learned slots in the compressible split, so the monolithic
        # modes double their depth to keep parameter budgets matched
        return self.n_layers if self.system == "incompressible" else 2 * self.n_layers

    def _build_models(self, grid_extent, init_seed):
        c = self._n_channels()
        if self.mode in ("ar", "node"):
            cfg = _model_config(
                self.architecture, c, c, self.modes, self.width, self._dynamics_layers()
            )
            return {"dynamics": build_model(cfg, init_seed, grid_extent)}
        if self.rhs_spec:
            from .rhs import parse_term_spec

            slots = {}
            for e in parse_term_spec(self.rhs_spec):
                if e["kind"] != "learned":
                    continue
                shape = (len(e["in_channels"]), len(e["out_channels"]))
                if slots.setdefault(e["operator"], shape) != shape:
                    raise ValueError(
                        f"slot {e['operator']!r} used with inconsistent channel counts"
                    )
            return {
                name: build_model(
                    _model_config(self.architecture, ci, co, self.modes, self.width, self.n_layers),
                    init_seed + i,
                    grid_extent,
                )
                for i, (name, (ci, co)) in enumerate(sorted(slots.items()))
            }
        if self.system == "incompressible":
            cfg = _model_config(self.architecture, 2, 2, self.modes, self.width, self.n_layers)
            return {"conv": build_model(cfg, init_seed, grid_extent)}
        conv_cfg = _model_config(self.architecture, 2, 2, self.modes, self.width, self.n_layers)
        div_cfg = _model_config(self.architecture, 3, 1, self.modes, self.width, self.n_layers)
        return {
            "conv": build_model(conv_cfg, init_seed, grid_extent),
            "div": build_model(div_cfg, init_seed + 1, grid_extent),
        }

    def _build_rhs(self, models, coefficient, spacing, stats):
        if self.rhs_spec:
            from .rhs import build_rhs_from_spec

            name = COEFFICIENT_NAMES[self.system]
            return build_rhs_from_spec(
                self.rhs_spec,
                models,
                self.channels_,
                spacing,
                fd_order=self.fd_order,
                stats=stats,
                coefficients={name: coefficient},
            )
        if self.system == "incompressible":
            return build_incompressible_rhs(
                models["conv"], coefficient, spacing, fd_order=self.fd_order, stats=stats
            )
        return build_compressible_rhs(
            models["div"],
            models["conv"],
            coefficient,
            spacing,
            fd_order=self.fd_order,
            stats=stats,
            density_weight=self.density_weight,
        )

    def count_parameters(self):
        """Total trainable parameters implied by the current configuration."""
        from .operators import expected_param_count

        c = self._n_channels()
        if self.mode in ("ar", "node"):
            return expected_param_count(
                _model_config(self.architecture, c, c, self.modes, self.width, self._dynamics_layers())
            )
        if self.system == "incompressible":
            return expected_param_count(
                _model_config(self.architecture, 2, 2, self.modes, self.width, self.n_layers)
            )
        return expected_param_count(
            _model_config(self.architecture, 2, 2, self.modes, self.width, self.n_layers)
        ) + expected_param_count(
            _model_config(self.architecture, 3, 1, self.modes, self.width, self.n_layers)
        )

    # -- fitting -----------------------------------------------------------

    def fit(self, dataset, test_dataset=None, on_epoch=None):
        """Train on a raw (physical-units) training Dataset."""
        if dataset.split != "train":
            raise ValueError("fit expects the training split")
        if dataset.system() != self.system:
            raise ValueError(
                f"estimator is configured for {self.system}, dataset holds {dataset.system()}"
            )
        init_seed, shuffle_seed = self._seeds()
        if dataset.normalized and dataset.stats is None:
            raise ValueError("normalised dataset is missing its statistics")
        ds_norm, stats = (dataset, dataset.stats) if dataset.normalized else normalize(dataset)
        self.stats_ = stats
        self.spacing_ = ds_norm.spacing
        self.frame_interval_ = ds_norm.frame_interval
        self.channels_ = ds_norm.channels
        grid = ds_norm.trajectories[0].frames.shape[-1]
        self.coefficient_ = ds_norm.trajectories[0].params.coefficient()
        self.models_ = self._build_models(grid, init_seed)
        for slot, path in (self.warm_start or {}).items():
            if slot not in self.models_:
                raise ValueError(f"no such warm-start slot {slot!r}")
            self.models_[slot].load_params(path)
        self.rhs_ = (
            self._build_rhs(self.models_, self.coefficient_, self.spacing_, stats)
            if self.mode == "opssplit"
            else None
        )
        cfg = TrainConfig(
            mode=self.mode,
            epochs=self.epochs,
            lr=self.lr,
            lr_halving_period=self.lr_halving_period,
            rollout_length=self.rollout_length,
            batch_size=self.batch_size,
            windows_per_epoch=self.windows_per_epoch,
            scheme=self.scheme,
            substeps=self.substeps,
            seed=shuffle_seed,
        )
        if test_dataset is not None and not test_dataset.normalized:
            test_dataset, _ = normalize(test_dataset, stats=stats)
        empty = _EmptyDataset()
        self.loss_record_ = train(
            ds_norm, test_dataset if test_dataset is not None else empty,
            self.models_, cfg, rhs=self.rhs_, on_epoch=on_epoch,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise ValueError("estimator is not fitted")

    # -- prediction --------------------------------------------------------

    def predict_rollout(self, u0, n_frames, coefficients=None):
        """Roll a physical-space initial field forward n_frames.

        Returns (frames [n_frames, C, H, W] in physical units, n_valid);
        n_valid < n_frames means the rollout hit the divergence guard and the
        remaining frames are NaN.
        """
        self._check_fitted()
        if coefficients and self.mode in ("ar", "node"):
            raise ValueError(f"{self.mode} has no injectable coefficients")
        u = normalize_frames(np.asarray(u0, dtype=np.float64), self.stats_)
        tape = ad.Tape(record=False)
        icfg = IntegratorConfig(scheme=self.scheme, dt=self.frame_interval_, substeps=self.substeps)
        out = np.full((n_frames,) + u.shape, np.nan)
        n_valid = 0
        if self.mode == "opssplit":
            bound = self.rhs_.bind(tape, trainable=False)
            parts = None
            if self.scheme == "strang":
                parts = (
                    lambda y: bound(y, coefficients, kinds=("learned",)),
                    lambda y: bound(y, coefficients, kinds=("fixed-linear",)),
                )
            step = lambda x: advance_frame(
                lambda y: bound(y, coefficients), x, icfg, strang_parts=parts
            )
        elif self.mode == "node":
            model = self.models_["dynamics"]
            bm = model.bind(tape, trainable=False)
            step = lambda x: advance_frame(lambda y: model.forward(bm, y), x, icfg)
        else:
            model = self.models_["dynamics"]
            bm = model.bind(tape, trainable=False)
            step = lambda x: model.forward(bm, x)
        var = tape.variable(u)
        for k in range(n_frames):
            try:
                var = step(var)
            except (BlowUpError, FloatingPointError, ValueError):
                break
            m = float(np.max(np.abs(var.data)))
            if not np.isfinite(m) or m > 1e6:
                break
            out[k] = var.data
            n_valid = k + 1
        return denormalize_frames(out, self.stats_), n_valid

    def predict(self, u0, n_frames, coefficients=None):
        """Physical-space rollout; raises if the trajectory diverges."""
        frames, n_valid = self.predict_rollout(u0, n_frames, coefficients)
        if n_valid < n_frames:
            raise BlowUpError(n_valid + 1, float("inf"))
        return frames

    def score(self, dataset, coefficients=None):
        """Negative pooled NRMSE over a raw dataset (higher is better)."""
        from .metrics import nrmse

        self._check_fitted()
        preds, targets = [], []
        for tr in dataset.trajectories:
            n = tr.n_frames - 1
            frames, n_valid = self.predict_rollout(tr.frames[0], n, coefficients)
            preds.append(frames[:n_valid])
            targets.append(tr.frames[1 : 1 + n_valid])
        return -nrmse(np.concatenate(preds), np.concatenate(targets))


class _EmptyDataset:
    normalized = True

    def __len__(self):
        return 0


class AutoregressiveSurrogate(PdeSurrogateBase):
    """Learns the next-state map u_t -> u_{t+dt}."""

    mode = "ar"


class NeuralOdeSurrogate(PdeSurrogateBase):
    """Learns the full dynamics du/dt as one operator."""

    mode = "node"


class OperatorSplitSurrogate(PdeSurrogateBase):
    """Learns non-linear terms; fixed stencils carry the linear physics.

    The physical coefficient of the fixed term (viscosity or adiabatic index)
    can be injected at prediction time via `coefficients`.
    """

    mode = "opssplit"

    def save_operators(self, directory):
        """Persist each learned slot as its own checkpoint file."""
        import os

        self._check_fitted()
        paths = {}
        for slot, model in self.models_.items():
            path = os.path.join(directory, f"{slot}.ckpt")
            model.save(path)
            paths[slot] = path
        return paths


MODE_CLASSES = {
    "ar": AutoregressiveSurrogate,
    "node": NeuralOdeSurrogate,
    "opssplit": OperatorSplitSurrogate,
}


def make_surrogate(mode, **params):
    return MODE_CLASSES[mode](**params)


def save_fitted(estimator, directory, extra_meta=None):
    """Persist a fitted estimator: per-slot checkpoints plus a JSON manifest."""
    import json
    import os

    estimator._check_fitted()
    os.makedirs(directory, exist_ok=True)
    slots = {}
    seen = {}
    for slot, model in estimator.models_.items():
        if id(model) in seen:
            slots[slot] = seen[id(model)]
            continue
        path = os.path.join(directory, f"{slot}.ckpt")
        model.save(path)
        slots[slot] = f"{slot}.ckpt"
        seen[id(model)] = slots[slot]
    manifest = {
        "format": "opssplit-estimator",
        "mode": estimator.mode,
        "params": estimator.get_params(),
        "slots": slots,
        "stats": estimator.stats_.to_dict(),
        "spacing": list(estimator.spacing_),
        "frame_interval": estimator.frame_interval_,
        "channels": list(estimator.channels_),
        "coefficient": estimator.coefficient_,
    }
    manifest.update(extra_meta or {})
    with open(os.path.join(directory, "estimator.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_fitted(directory):
    """Rebuild a fitted estimator from `save_fitted` output."""
    import json
    import os

    from .datasets import NormStats

    with open(os.path.join(directory, "estimator.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != "opssplit-estimator":
        raise ValueError(f"{directory}: not an estimator directory")
    est = make_surrogate(manifest["mode"], **manifest["params"])
    est.stats_ = NormStats.from_dict(manifest["stats"])
    est.spacing_ = tuple(manifest["spacing"])
    est.frame_interval_ = manifest["frame_interval"]
    est.channels_ = tuple(manifest["channels"])
    est.coefficient_ = manifest["coefficient"]
    models = {}
    loaded = {}
    for slot, rel in manifest["slots"].items():
        if rel in loaded:
            models[slot] = loaded[rel]
            continue
        models[slot] = OperatorModel.load(os.path.join(directory, rel))
        loaded[rel] = models[slot]
    est.models_ = models
    est.rhs_ = (
        est._build_rhs(models, est.coefficient_, est.spacing_, est.stats_)
        if est.mode == "opssplit"
        else None
    )
    return est, manifest
