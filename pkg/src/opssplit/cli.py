"""Command-line pipeline: data generation, training, evaluation, ablation
sweeps, the coefficient-shift harness, and operator comparison dumps.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 partial
results. Every artifact embeds the resolved configuration hash; CSV files
carry it on a leading `# config_hash:` comment line.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import simulate
from .config import ConfigError, config_hash, load_config
from .datasets import Dataset, normalize, read_dataset, subsample, write_dataset
from .estimators import load_fitted, make_surrogate, save_fitted
from .integrators import BlowUpError
from .metrics import run_scenarios, theorem_shift_harness, ShiftHarnessSetup
from .simulate import CFLError

SPLIT_FILES = {
    "train": "train",
    "test": "test",
    "t-extrapolate": "t_extrapolate",
    "ood": "ood",
    "ood-t-extrapolate": "ood_t_extrapolate",
}


def _workers():
    env = os.environ.get("OPSSPLIT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_csv(path, header, rows, cfg_hash):
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash: {cfg_hash}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# gen


def _solve_one(args):
    params, t_stride, x_stride = args
    if params.system == "incompressible":
        traj = simulate.solve_incompressible(params)
    else:
        traj = simulate.solve_compressible(params)
    return subsample(traj, t_stride, x_stride)


def _generate_split(system, regime, split, n, seed, cfg, t_scale=1.0):
    params = simulate.sample_params(
        system,
        n,
        seed,
        regime=regime,
        grid_n=cfg["data.grid_n"],
        dt=cfg["data.solver_dt"],
        t_final=cfg["data.t_final"] * t_scale,
    )
    jobs = [(p, cfg["data.t_stride"], cfg["data.x_stride"]) for p in params]
    workers = min(_workers(), n)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_solve_one, jobs))
    else:
        trajs = [_solve_one(j) for j in jobs]
    return Dataset(trajs, split, seed=seed)


def cmd_gen(args):
    cfg = load_config(args.config, _overrides(args))
    chash = config_hash(cfg)
    system = cfg["system"]
    out = args.out
    os.makedirs(out, exist_ok=True)
    for split, fname in SPLIT_FILES.items():
        if os.path.exists(os.path.join(out, fname + ".fields")) and not args.force:
            raise FileExistsError(f"{out}/{fname}.fields exists; pass --force to overwrite")
    seed0 = cfg["seed"]
    n_train, n_eval = cfg["data.n_train"], cfg["data.n_eval"]
    plan = [
        ("train", "train", n_train, seed0, 1.0),
        ("test", "train", n_eval, seed0 + 1, 1.0),
        ("t-extrapolate", "train", n_eval, seed0 + 1, 2.0),
        ("ood", "ood", n_eval, seed0 + 2, 1.0),
        ("ood-t-extrapolate", "ood", n_eval, seed0 + 2, 2.0),
    ]
    from .datasets import compute_norm_stats

    for split, regime, n, seed, t_scale in plan:
        ds = _generate_split(system, regime, split, n, seed, cfg, t_scale)
        if split == "train":
            ds.stats = compute_norm_stats(ds)
        write_dataset(ds, os.path.join(out, SPLIT_FILES[split]))
        print(f"wrote {split}: {len(ds)} trajectories, {ds.trajectories[0].n_frames} frames")
    with open(os.path.join(out, "gen_meta.json"), "w") as f:
        json.dump({"config_hash": chash, "system": system, "seed": seed0}, f, indent=1)
    return 0


def _load_splits(data_dir, required=("train",)):
    splits = {}
    for split, fname in SPLIT_FILES.items():
        base = os.path.join(data_dir, fname)
        if os.path.exists(base + ".fields"):
            splits[split] = read_dataset(base)
    missing = [s for s in required if s not in splits]
    if missing:
        raise FileNotFoundError(f"{data_dir}: missing required splits {missing}")
    return splits


# ---------------------------------------------------------------------------
# train


def _estimator_from_config(cfg, mode, seed=None, warm_start=None, **overrides):
    params = dict(
        system=cfg["system"],
        architecture=cfg["model.architecture"],
        modes=cfg["model.modes"],
        width=cfg["model.width"],
        n_layers=cfg["model.n_layers"],
        epochs=cfg["train.epochs"],
        lr=cfg["train.lr"],
        lr_halving_period=cfg["train.lr_halving_period"],
        rollout_length=cfg["train.rollout_length"],
        batch_size=cfg["train.batch_size"],
        windows_per_epoch=cfg["train.windows_per_epoch"],
        scheme=cfg["train.scheme"],
        substeps=cfg["train.substeps"],
        fd_order=cfg["train.fd_order"],
        density_weight=cfg["train.density_weight"],
        rhs_spec=cfg["rhs.terms"] or None,
        seed=cfg["seed"] if seed is None else seed,
        warm_start=warm_start,
    )
    params.update(overrides)
    return make_surrogate(mode, **params)


def _train_once(cfg, mode, splits, out, warm_start=None, chash=""):
    est = _estimator_from_config(cfg, mode, warm_start=warm_start)
    train_ds = splits["train"]
    test_ds = splits.get("test")
    best = {"loss": float("inf"), "epoch": -1}

    train_horizon = train_ds.trajectories[0].n_frames - 1

    def on_epoch(epoch, record):
        if record.test_loss and np.isfinite(record.test_loss[-1]):
            if record.test_loss[-1] < best["loss"]:
                best["loss"] = record.test_loss[-1]
                best["epoch"] = epoch
                save_fitted(
                    est,
                    os.path.join(out, "best"),
                    {"config_hash": chash, "epoch": epoch, "train_horizon": train_horizon},
                )

    est.fit(train_ds, test_ds, on_epoch=on_epoch)
    save_fitted(
        est,
        os.path.join(out, "final"),
        {
            "config_hash": chash,
            "epoch": est.epochs - 1,
            "train_horizon": train_horizon,
            "best_epoch": best["epoch"],
        },
    )
    _write_csv(
        os.path.join(out, "loss.csv"),
        ["epoch", "train_loss", "test_loss", "lr", "seconds"],
        [tuple(map(_fmt, row)) for row in est.loss_record_.rows()],
        chash,
    )
    return est


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    if args.mode:
        cfg["train.mode"] = args.mode
    chash = config_hash(cfg)
    splits = _load_splits(args.data, required=("train", "test"))
    warm = dict(kv.split("=", 1) for kv in args.warm_start) if args.warm_start else None
    os.makedirs(args.out, exist_ok=True)
    est = _train_once(cfg, cfg["train.mode"], splits, args.out, warm_start=warm, chash=chash)
    print(
        f"trained {cfg['train.mode']}: final train loss "
        f"{est.loss_record_.train_loss[-1]:.6f}, checkpoints in {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    cfg = load_config(args.config, _overrides(args))
    chash = config_hash(cfg)
    est, manifest = load_fitted(args.checkpoints)
    splits = _load_splits(args.data, required=())
    train_horizon = manifest.get("train_horizon") or cfg["eval.horizon"]
    if train_horizon is None:
        raise ConfigError("no train horizon available (checkpoint meta or eval.horizon)")
    os.makedirs(args.out, exist_ok=True)
    eval_splits = {k: v for k, v in splits.items() if k != "train"}
    report = run_scenarios(
        est,
        eval_splits,
        train_horizon,
        metadata={"config_hash": chash, "seed": est.seed, "architecture": est.architecture},
        residual_order=cfg["eval.residual_order"],
    )
    with open(os.path.join(args.out, "report.json"), "w") as f:
        f.write(report.to_json())
    for split, curvename in (("t-extrapolate", "rollout_error.csv"),
                             ("ood-t-extrapolate", "rollout_error_ood.csv")):
        curve = report.per_step.get(split)
        if curve:
            rows = list(
                zip(
                    curve["frame"],
                    map(_fmt, curve["nrmse_mean"]),
                    map(_fmt, curve["nrmse_std"]),
                    (int(f) for f in curve["extrapolation_flag"]),
                )
            )
            _write_csv(
                os.path.join(args.out, curvename),
                ["frame", "nrmse_mean", "nrmse_std", "extrapolation_flag"],
                rows,
                chash,
            )
    _write_residual_csv(args.out, report, splits, est, cfg, chash, train_horizon)
    print(json.dumps(report.nrmse, indent=1))
    return 4 if report.gaps else 0


def _write_residual_csv(out, report, splits, est, cfg, chash, train_horizon):
    if est.system != "incompressible":
        return
    split = "t-extrapolate" if "t-extrapolate" in report.residual else None
    if split is None and report.residual:
        split = next(iter(report.residual))
    if split is None:
        return
    from .metrics import continuity_residual

    series = report.residual[split]
    ref = np.mean(
        [
            continuity_residual(tr.frames[1:], splits[split].spacing,
                                order=cfg["eval.residual_order"])
            for tr in splits[split].trajectories
        ],
        axis=0,
    )
    rows = [
        (k, _fmt(float(series[k])), _fmt(float(ref[k])), int(k >= train_horizon))
        for k in range(min(len(series), len(ref)))
    ]
    _write_csv(
        os.path.join(out, "residual.csv"),
        ["frame", "residual_mean", "residual_reference", "extrapolation_flag"],
        rows,
        chash,
    )


# ---------------------------------------------------------------------------
# ablate


ABLATION_AXES = {
    "rollout-length": ("train.rollout_length", int, ("ar", "node", "opssplit")),
    "substeps": ("train.substeps", int, ("node", "opssplit")),
    "width": ("model.width", int, ("ar", "node", "opssplit")),
    "n-train": ("data.n_train", int, ("ar", "node", "opssplit")),
    "fd-order": ("train.fd_order", int, ("opssplit",)),
}


def cmd_ablate(args):
    cfg = load_config(args.config, _overrides(args))
    if args.axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {args.axis!r}")
    key, typ, modes = ABLATION_AXES[args.axis]
    try:
        values = [typ(v) for v in args.values.split(",")]
    except ValueError as e:
        raise ConfigError(f"bad --values: {e}") from None
    splits = _load_splits(args.data, required=("train", "test"))
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        leg_cfg = dict(cfg)
        leg_cfg[key] = value
        leg_hash = config_hash(leg_cfg)
        for mode in modes:
            train_ds = splits["train"]
            if args.axis == "n-train":
                train_ds = Dataset(
                    splits["train"].trajectories[:value], "train", seed=splits["train"].seed
                )
            status, test_nrmse, ood_nrmse = "ok", "", ""
            try:
                est = _estimator_from_config(
                    leg_cfg, mode,
                    **{
                        "rollout_length": leg_cfg["train.rollout_length"],
                        "substeps": leg_cfg["train.substeps"],
                        "width": leg_cfg["model.width"],
                        "fd_order": leg_cfg["train.fd_order"],
                    },
                )
                est.fit(train_ds, splits.get("test"))
                horizon = train_ds.trajectories[0].n_frames - 1
                report = run_scenarios(
                    est,
                    {k: v for k, v in splits.items() if k in ("test", "ood")},
                    horizon,
                )
                test_nrmse = _fmt(report.nrmse.get("test", float("nan")))
                ood_nrmse = _fmt(report.nrmse.get("ood", float("nan")))
            except (CFLError, BlowUpError, FloatingPointError, RuntimeError, ValueError) as e:
                status = f"error: {e}"
            rows.append((args.axis, value, mode, test_nrmse, ood_nrmse, status, leg_hash))
            print(f"{args.axis}={value} mode={mode}: {status} test={test_nrmse} ood={ood_nrmse}")
    _write_csv(
        os.path.join(args.out, "ablation.csv"),
        ["axis", "value", "mode", "test_nrmse", "ood_nrmse", "status", "config_hash"],
        rows,
        config_hash(cfg),
    )
    return 0


# ---------------------------------------------------------------------------
# theorem and operator comparison


def cmd_theorem(args):
    cfg = load_config(args.config, _overrides(args))
    chash = config_hash(cfg)
    shifts = [float(s) for s in cfg["theorem.shifts"].split(",")]
    setup = ShiftHarnessSetup(
        grid_n=cfg["theorem.grid_n"],
        fd_order=cfg["theorem.fd_order"],
        lam_train=cfg["theorem.lam_train"],
        seed=cfg["seed"],
    )
    out = theorem_shift_harness(shifts, setup)
    os.makedirs(args.out, exist_ok=True)
    slopes = out["slopes"]
    rows = [
        (
            _fmt(r["shift"]),
            _fmt(r["err_ar"]),
            _fmt(r["err_node"]),
            _fmt(r["err_opssplit"]),
            _fmt(slopes["err_ar"]),
            _fmt(slopes["err_node"]),
            _fmt(slopes["err_opssplit"]),
        )
        for r in out["rows"]
    ]
    _write_csv(
        os.path.join(args.out, "theorem.csv"),
        ["shift", "err_ar", "err_node", "err_opssplit", "slope_ar", "slope_node", "slope_opssplit"],
        rows,
        chash,
    )
    print(
        "fitted log-log slopes: "
        f"AR={slopes['err_ar']:.3f} NODE={slopes['err_node']:.3f} "
        f"OpsSplit={slopes['err_opssplit']:.3f}"
    )
    return 0


def cmd_compare_ops(args):
    cfg = load_config(args.config, _overrides(args))
    chash = config_hash(cfg)
    est, manifest = load_fitted(args.checkpoints)
    if est.mode != "opssplit":
        raise ConfigError("compare-ops needs an operator-split checkpoint")
    splits = _load_splits(args.data, required=("test",))
    tr = splits["test"].trajectories[args.trajectory]
    frame = tr.frames[args.frame]
    from .datasets import normalize_frames
    from .metrics import operator_compare

    if est.system == "incompressible":
        state_norm = normalize_frames(frame, est.stats_)
        learned = est.models_["conv"].forward_array(state_norm)
        numerical = -simulate.convection_pressure_operator(frame, *tr.spacing)
        channel_base = ("u", "v")
        state = frame
    else:
        state_norm = normalize_frames(frame, est.stats_)
        learned = est.models_["conv"].forward_array(state_norm[1:3])
        from .stencils import apply_stencil, make_stencil

        gx = make_stencil("grad-x", cfg["train.fd_order"], tr.spacing)
        gy = make_stencil("grad-y", cfg["train.fd_order"], tr.spacing)
        u, v = frame[1], frame[2]
        numerical = np.stack(
            [
                u * apply_stencil(u, gx) + v * apply_stencil(u, gy),
                u * apply_stencil(v, gx) + v * apply_stencil(v, gy),
            ]
        )
        channel_base = ("u", "v")
        state = frame[1:3]
    rec = operator_compare(learned, numerical)
    os.makedirs(os.path.join(args.out, "opcompare"), exist_ok=True)
    dump = np.concatenate([state, rec["learned"], rec["numerical"]])[None]  # [1, 3C, H, W]
    channels = (
        [f"state_{c}" for c in channel_base]
        + [f"learned_{c}" for c in channel_base]
        + [f"numerical_{c}" for c in channel_base]
    )
    from .datasets import Trajectory

    ds = Dataset(
        [Trajectory(dump, tr.frame_interval, tr.params, tuple(channels), tr.spacing)],
        "test",
    )
    write_dataset(ds, os.path.join(args.out, "opcompare", "convection"))
    with open(os.path.join(args.out, "opcompare", "correlation.json"), "w") as f:
        json.dump(
            {
                "config_hash": chash,
                "correlation": rec["correlation"],
                "qualitative": True,
                "trajectory": args.trajectory,
                "frame": args.frame,
            },
            f,
            indent=1,
        )
    print("per-channel correlation:", rec["correlation"])
    return 0


# ---------------------------------------------------------------------------
# wiring


def _overrides(args):
    out = {}
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise ConfigError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        out[k.strip()] = v.strip()
    if getattr(args, "system", None):
        out["system"] = args.system
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        out["data.n_train"] = args.n
    if getattr(args, "n_eval", None) is not None:
        out["data.n_eval"] = args.n_eval
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="opssplit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="run-config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override (repeatable; flags win)")
        sp.add_argument("--seed", type=int, default=None)

    g = sub.add_parser("gen", help="generate the five dataset splits")
    common(g)
    g.add_argument("--system", choices=("incompressible", "compressible"))
    g.add_argument("--n", type=int, default=None, help="training trajectories")
    g.add_argument("--n-eval", dest="n_eval", type=int, default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train one deployment mode")
    common(t)
    t.add_argument("--mode", choices=("ar", "node", "opssplit"))
    t.add_argument("--data", required=True, help="directory from `gen`")
    t.add_argument("--out", required=True)
    t.add_argument("--warm-start", action="append", metavar="SLOT=CKPT",
                   help="warm-start a learned slot from a checkpoint")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint over the scenario splits")
    common(e)
    e.add_argument("--checkpoints", required=True, help="estimator directory (train output)")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="sweep one axis, one train+eval per value per mode")
    common(a)
    a.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    a.add_argument("--values", required=True, help="comma-separated values")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_ablate)

    th = sub.add_parser("theorem", help="coefficient-shift harness with oracle operators")
    common(th)
    th.add_argument("--out", required=True)
    th.set_defaults(fn=cmd_theorem)

    c = sub.add_parser("compare-ops", help="dump learned vs numerical operator fields")
    common(c)
    c.add_argument("--checkpoints", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--trajectory", type=int, default=0)
    c.add_argument("--frame", type=int, default=0)
    c.set_defaults(fn=cmd_compare_ops)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except FileExistsError as e:
        print(f"refusing to overwrite: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 2
    except (CFLError, BlowUpError, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except RuntimeError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
