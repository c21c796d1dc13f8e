import numpy as np
import pytest

from opssplit import autodiff as ad
from opssplit.datasets import Dataset, SimParams, Trajectory, normalize
from opssplit.integrators import IntegratorConfig, advance_frame
from opssplit.operators import SpectralOperatorConfig, build_model
from opssplit.rhs import (
    build_incompressible_rhs,
    build_rhs_from_spec,
    eval_rhs,
    parse_term_spec,
)

INCOMPRESSIBLE_SPEC = "learned:conv:0+1:0+1:-1; fixed:laplacian:0+1:0+1:nu"
COMPRESSIBLE_SPEC = (
    "learned:div:0+1+2:0:-1; learned:conv:1+2:1+2:-1;"
    "fixed:grad-x:3:1:-1:ln-density@0; fixed:grad-y:3:2:-1:ln-density@0;"
    "learned:div:3+1+2:3:-1*gamma"
)


class TestTermSpec:
    def test_parse_entries(self):
        entries = parse_term_spec(COMPRESSIBLE_SPEC)
        assert len(entries) == 5
        assert entries[0] == {
            "kind": "learned", "operator": "div", "in_channels": (0, 1, 2),
            "out_channels": (0,), "coefficient": -1.0, "coefficient_name": None,
            "state_weight": "none", "weight_channel": None,
        }
        assert entries[2]["state_weight"] == "ln-density"
        assert entries[2]["weight_channel"] == 0
        assert entries[4]["coefficient"] == -1.0
        assert entries[4]["coefficient_name"] == "gamma"

    def test_named_coefficient_shorthand(self):
        e = parse_term_spec("fixed:laplacian:0:0:nu")[0]
        assert e["coefficient"] == 1.0 and e["coefficient_name"] == "nu"

    @pytest.mark.parametrize(
        "bad",
        ["", "fixed:laplacian:0:0", "maybe:laplacian:0:0:1", "fixed:laplacian:0:0:1:density@0"],
    )
    def test_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            parse_term_spec(bad)

    def test_spec_matches_builder(self, rng):
        conv = build_model(
            SpectralOperatorConfig(in_channels=2, out_channels=2, modes=2, width=4, n_layers=1),
            seed=3,
        )
        u = rng.standard_normal((2, 16, 16))
        built = build_incompressible_rhs(conv, 0.004, (0.1, 0.1))
        from_spec = build_rhs_from_spec(
            INCOMPRESSIBLE_SPEC, {"conv": conv}, ("u", "v"), (0.1, 0.1),
            coefficients={"nu": 0.004},
        )
        assert np.array_equal(eval_rhs(built, u), eval_rhs(from_spec, u))

    def test_unknown_slot_rejected(self):
        with pytest.raises(ValueError):
            build_rhs_from_spec("learned:ghost:0:0:1", {}, ("u",), (0.1, 0.1))


class TestStrangSplitDynamics:
    def test_strang_rollout_runs_and_tracks_euler(self, rng):
        conv = build_model(
            SpectralOperatorConfig(in_channels=2, out_channels=2, modes=2, width=4, n_layers=1),
            seed=1,
        )
        rhs = build_incompressible_rhs(conv, 0.001, (1 / 16, 1 / 16))
        u0 = 0.1 * rng.standard_normal((2, 16, 16))

        def run(scheme, substeps):
            tape = ad.Tape(record=False)
            bound = rhs.bind(tape, trainable=False)
            parts = (
                lambda x: bound(x, kinds=("learned",)),
                lambda x: bound(x, kinds=("fixed-linear",)),
            )
            cfg = IntegratorConfig(scheme=scheme, dt=0.01, substeps=substeps)
            u = tape.variable(u0)
            for _ in range(3):
                u = advance_frame(bound, u, cfg, strang_parts=parts)
            return u.data

        strang = run("strang", 4)
        euler = run("euler", 64)
        assert np.max(np.abs(strang - euler)) < 1e-4

    def test_estimator_strang_scheme(self, rng):
        from opssplit.estimators import OperatorSplitSurrogate

        params = SimParams(system="incompressible", alpha=0.7, beta=0.7, nu=0.001)
        trajs = [
            Trajectory(
                np.cumsum(0.01 * rng.standard_normal((8, 2, 16, 16)), axis=0),
                0.01, params, ("u", "v"), (1 / 16, 1 / 16),
            )
            for _ in range(2)
        ]
        ds = Dataset(trajs, "train", seed=0)
        est = OperatorSplitSurrogate(
            scheme="strang", modes=2, width=4, n_layers=1, epochs=1,
            windows_per_epoch=2, batch_size=2, seed=0,
        )
        est.fit(ds)
        frames, n_valid = est.predict_rollout(trajs[0].frames[0], 3)
        assert n_valid == 3


class TestExactFlowSemigroup:
    def test_step_h_twice_equals_one_2h_step(self):
        import scipy.linalg

        m = np.array([[0.0, 1.0], [-1.0, -0.5]])
        flow = lambda u, h: scipy.linalg.expm(m * h) @ u
        u0 = np.array([1.0, 2.0])
        once = flow(flow(u0, 0.1), 0.1)
        twice = flow(u0, 0.2)
        assert np.max(np.abs(once - twice)) < 1e-12


class TestTrainerDivergenceAbort:
    def test_majority_invalid_windows_abort(self, rng):
        from opssplit.operators import OperatorModel
        from opssplit.training import TrainConfig, train

        params = SimParams(system="incompressible", alpha=0.7, beta=0.7, nu=0.001)
        trajs = [
            Trajectory(
                rng.standard_normal((8, 2, 8, 8)), 0.01, params, ("u", "v"), (0.25, 0.25)
            )
            for _ in range(2)
        ]
        ds, stats = normalize(Dataset(trajs, "train", seed=0))
        model = build_model(
            SpectralOperatorConfig(in_channels=2, out_channels=2, modes=2, width=4, n_layers=1),
            seed=0,
        )
        # amplify weights so every window blows past the divergence guard
        model.params = {k: v * 1e8 for k, v in model.params.items()}
        cfg = TrainConfig(mode="ar", epochs=1, windows_per_epoch=4, batch_size=2, seed=0)
        with pytest.raises(RuntimeError, match="diverged"):
            train(ds, Dataset([], "test"), {"dynamics": model}, cfg)
