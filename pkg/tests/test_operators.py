import numpy as np
import pytest

from opssplit import autodiff as ad
from opssplit.operators import (
    ConvOperatorConfig,
    OperatorModel,
    SpectralOperatorConfig,
    build_model,
    expected_param_count,
)

from conftest import max_rel_grad_error

SPECTRAL_CFG = SpectralOperatorConfig(in_channels=2, out_channels=2, modes=3, width=4, n_layers=2)
CONV_CFG = ConvOperatorConfig(in_channels=2, out_channels=2, width=4, n_layers=2)


class TestBuild:
    def test_spectral_param_count_formula(self):
        cfg = SpectralOperatorConfig(in_channels=2, out_channels=2, modes=8, width=16, n_layers=2)
        model = build_model(cfg, seed=0)
        lift = 2 * 16 + 16
        per_layer = 2 * (16 * 16 * 8 * 8) * 2 + 16 * 16 + 16
        proj = 16 * 2 + 2
        assert model.count_params() == lift + 2 * per_layer + proj
        assert model.count_params() == expected_param_count(cfg)

    def test_conv_param_count_formula(self):
        model = build_model(CONV_CFG, seed=0)
        assert model.count_params() == expected_param_count(CONV_CFG)
        assert model.count_params() == (2 * 4 + 4) + 2 * (4 * 4 * 9 + 4) + (4 * 2 + 2)

    def test_deterministic_init(self):
        a = build_model(SPECTRAL_CFG, seed=5)
        b = build_model(SPECTRAL_CFG, seed=5)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])
        c = build_model(SPECTRAL_CFG, seed=6)
        assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)

    def test_modes_beyond_nyquist_rejected(self):
        cfg = SpectralOperatorConfig(in_channels=2, out_channels=2, modes=5, width=4, n_layers=1)
        with pytest.raises(ValueError):
            build_model(cfg, seed=0, grid_extent=8)
        model = build_model(cfg, seed=0)
        with pytest.raises(ValueError):
            model.forward_array(np.zeros((2, 8, 8)))


class TestForward:
    @pytest.mark.parametrize("cfg", [SPECTRAL_CFG, CONV_CFG])
    def test_zero_weights_give_zero_field(self, cfg, rng):
        model = build_model(cfg, seed=0)
        model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
        out = model.forward_array(rng.standard_normal((2, 8, 8)))
        assert np.array_equal(out, np.zeros((2, 8, 8)))

    @pytest.mark.parametrize("cfg", [SPECTRAL_CFG, CONV_CFG])
    def test_shape_preserved_and_batched(self, cfg, rng):
        model = build_model(cfg, seed=1)
        assert model.forward_array(rng.standard_normal((2, 8, 8))).shape == (2, 8, 8)
        assert model.forward_array(rng.standard_normal((5, 2, 8, 8))).shape == (5, 2, 8, 8)

    def test_channel_mismatch(self, rng):
        model = build_model(SPECTRAL_CFG, seed=1)
        with pytest.raises(ValueError):
            model.forward_array(rng.standard_normal((3, 8, 8)))

    @pytest.mark.parametrize("cfg", [SPECTRAL_CFG, CONV_CFG])
    def test_shift_equivariance(self, cfg, rng):
        model = build_model(cfg, seed=2)
        u = rng.standard_normal((2, 16, 16))
        shifted = np.roll(u, (3, 5), axis=(-2, -1))
        lhs = model.forward_array(shifted)
        rhs = np.roll(model.forward_array(u), (3, 5), axis=(-2, -1))
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_forward_deterministic(self, rng):
        model = build_model(SPECTRAL_CFG, seed=3)
        u = rng.standard_normal((2, 8, 8))
        assert np.array_equal(model.forward_array(u), model.forward_array(u))

    def test_spectral_truncation(self, rng):
        # single spectral layer with zeroed pointwise path: spectrum above the
        # kept modes must carry no energy
        cfg = SpectralOperatorConfig(in_channels=1, out_channels=1, modes=2, width=1, n_layers=1)
        model = build_model(cfg, seed=0)
        model.params["lift.w"] = np.ones((1, 1))
        model.params["lift.b"] = np.zeros(1)
        model.params["proj.w"] = np.ones((1, 1))
        model.params["proj.b"] = np.zeros(1)
        model.params["layer0.pw.w"] = np.zeros((1, 1))
        model.params["layer0.pw.b"] = np.zeros(1)
        out = model.forward_array(rng.standard_normal((1, 16, 16)))
        spec = np.fft.rfft2(out[0])
        # zero energy above the kept mode magnitude on either axis (the real
        # output projects the DC column onto its Hermitian part, which mirrors
        # row -k to +k, so the mask is magnitude-based)
        k1 = np.abs(np.fft.fftfreq(16) * 16)[:, None]
        k2 = np.arange(spec.shape[1])[None, :]
        kept = (k1 <= 2) & (k2 <= 2)
        assert np.max(np.abs(spec[~kept])) < 1e-12

    @pytest.mark.parametrize("cfg", [SPECTRAL_CFG, CONV_CFG])
    def test_all_parameter_gradients_match_fd(self, cfg, rng):
        model = build_model(cfg, seed=4)
        u = rng.uniform(-1, 1, size=(2, 8, 8))
        names = list(model.params)
        arrays = [model.params[k] for k in names]

        def run(arrs):
            m = OperatorModel(cfg, dict(zip(names, arrs)), seed=4)
            tape = ad.Tape()
            bound = m.bind(tape)
            out = m.forward(bound, tape.variable(u))
            loss = ad.total_sum(ad.mul(out, out))
            gmap = tape.backward(loss)
            return float(loss.data), [gmap[bound[k].node_id] for k in names]

        assert max_rel_grad_error(run, arrays, samples_per_array=3, h=1e-6) < 1e-5


class TestPersistence:
    def test_save_load_bitwise(self, tmp_path, rng):
        model = build_model(SPECTRAL_CFG, seed=7)
        u = rng.standard_normal((2, 8, 8))
        path = tmp_path / "model.ckpt"
        model.save(path)
        loaded = OperatorModel.load(path)
        assert loaded.config == model.config
        assert np.array_equal(loaded.forward_array(u), model.forward_array(u))
        for k in model.params:
            assert np.array_equal(loaded.params[k], model.params[k])

    def test_warm_start_same_config_accepted(self, tmp_path):
        donor = build_model(SPECTRAL_CFG, seed=8)
        path = tmp_path / "donor.ckpt"
        donor.save(path)
        receiver = build_model(SPECTRAL_CFG, seed=9)
        receiver.load_params(path)
        for k in donor.params:
            assert np.array_equal(receiver.params[k], donor.params[k])

    def test_mismatched_width_refused(self, tmp_path):
        donor = build_model(SPECTRAL_CFG, seed=8)
        path = tmp_path / "donor.ckpt"
        donor.save(path)
        other = build_model(
            SpectralOperatorConfig(in_channels=2, out_channels=2, modes=3, width=8, n_layers=2),
            seed=9,
        )
        with pytest.raises(ValueError):
            other.load_params(path)

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(ValueError):
            OperatorModel.load(path)

    def test_truncated_file_rejected(self, tmp_path):
        model = build_model(SPECTRAL_CFG, seed=7)
        path = tmp_path / "model.ckpt"
        model.save(path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 100])
        with pytest.raises(ValueError):
            OperatorModel.load(path)
