import numpy as np
import pytest
import scipy.linalg

from opssplit.operators import ConvOperatorConfig, SpectralOperatorConfig, build_model
from opssplit.rhs import (
    OperatorTerm,
    SplitRHS,
    build_compressible_rhs,
    build_incompressible_rhs,
    eval_rhs,
    lie_compose,
    strang_compose,
)


def zeroed(model):
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    return model


def conv_model(seed=0, zero=False):
    m = build_model(
        SpectralOperatorConfig(in_channels=2, out_channels=2, modes=3, width=4, n_layers=1),
        seed=seed,
    )
    return zeroed(m) if zero else m


def div_model(seed=0, zero=False):
    m = build_model(
        SpectralOperatorConfig(in_channels=3, out_channels=1, modes=3, width=4, n_layers=1),
        seed=seed,
    )
    return zeroed(m) if zero else m


class TestEval:
    def test_empty_terms_give_zero(self, rng):
        rhs = SplitRHS([], ("u", "v"), (0.1, 0.1))
        out = eval_rhs(rhs, rng.standard_normal((2, 8, 8)))
        assert np.array_equal(out, np.zeros((2, 8, 8)))

    def test_diffusion_only_matches_heat_oracle(self):
        n = 64
        h = 1.0 / n
        x = np.arange(n) * h
        xx, _ = np.meshgrid(x, x, indexing="xy")
        f = np.sin(2 * np.pi * xx)
        u = np.stack([f, f])
        nu = 0.01
        rhs = build_incompressible_rhs(conv_model(zero=True), nu, (h, h), fd_order=2)
        out = eval_rhs(rhs, u)
        target = -nu * (2 * np.pi) ** 2 * u
        assert np.max(np.abs(out - target)) < nu * (2 * np.pi) ** 4 * h**2

    def test_additivity_over_terms(self, rng):
        u = rng.standard_normal((2, 16, 16))
        model = conv_model()
        full = build_incompressible_rhs(model, 0.003, (0.1, 0.1))
        only_learned = SplitRHS(full.terms[:1], ("u", "v"), (0.1, 0.1))
        only_fixed = SplitRHS(full.terms[1:], ("u", "v"), (0.1, 0.1), coefficients={"nu": 0.003})
        combined = eval_rhs(only_learned, u) + eval_rhs(only_fixed, u)
        assert np.max(np.abs(eval_rhs(full, u) - combined)) < 1e-12

    def test_nu_zero_isolates_learned_term(self, rng):
        u = rng.standard_normal((2, 16, 16))
        model = conv_model()
        rhs = build_incompressible_rhs(model, 0.001, (0.1, 0.1))
        out = eval_rhs(rhs, u, coefficients={"nu": 0.0})
        assert np.max(np.abs(out + model.forward_array(u))) < 1e-14

    def test_injected_nu_scales_only_fixed_term(self, rng):
        u = rng.standard_normal((2, 16, 16))
        rhs = build_incompressible_rhs(conv_model(), 0.001, (0.1, 0.1))
        base = eval_rhs(rhs, u)
        tenx = eval_rhs(rhs, u, coefficients={"nu": 0.01})
        fixed_only = eval_rhs(rhs, u, coefficients={"nu": 0.001}) - eval_rhs(
            rhs, u, coefficients={"nu": 0.0}
        )
        assert np.max(np.abs(tenx - base - 9.0 * fixed_only)) < 1e-11

    def test_homogeneity_in_lambda(self, rng):
        u = rng.standard_normal((2, 16, 16))
        rhs = build_incompressible_rhs(conv_model(), 0.002, (0.1, 0.1))
        doubled = eval_rhs(rhs, u, coefficients={"nu": 0.004})
        base = eval_rhs(rhs, u)
        isolated = base - eval_rhs(rhs, u, coefficients={"nu": 0.0})
        assert np.max(np.abs((doubled - base) - isolated)) < 1e-12

    def test_schema_mismatch(self, rng):
        rhs = build_incompressible_rhs(conv_model(), 0.001, (0.1, 0.1))
        with pytest.raises(ValueError):
            eval_rhs(rhs, rng.standard_normal((3, 8, 8)))


class TestCompressible:
    def state(self, rng, n=16):
        rho = 1.5 + 0.2 * rng.random((n, n))
        u = rng.standard_normal((n, n))
        v = rng.standard_normal((n, n))
        p = 2.0 + 0.1 * rng.random((n, n))
        return np.stack([rho, u, v, p])

    def test_gamma_zero_freezes_pressure(self, rng):
        s = self.state(rng)
        rhs = build_compressible_rhs(div_model(), conv_model(), 5 / 3, (0.1, 0.1))
        out = eval_rhs(rhs, s, coefficients={"gamma": 0.0})
        # pressure channel gets only the gamma-scaled divergence term
        assert np.array_equal(out[3], np.zeros_like(out[3]))

    def test_doubling_gamma_doubles_pressure_rate(self, rng):
        s = self.state(rng)
        rhs = build_compressible_rhs(div_model(), conv_model(), 5 / 3, (0.1, 0.1))
        one = eval_rhs(rhs, s, coefficients={"gamma": 1.0})
        two = eval_rhs(rhs, s, coefficients={"gamma": 2.0})
        zero = eval_rhs(rhs, s, coefficients={"gamma": 0.0})
        assert np.max(np.abs((two[3] - zero[3]) - 2.0 * (one[3] - zero[3]))) < 1e-12

    def test_zero_models_uniform_pressure_static_velocity(self, rng):
        s = self.state(rng)
        s[3] = 4.0  # uniform P: grad P == 0, so ln(rho) weighting is moot
        rhs = build_compressible_rhs(div_model(zero=True), conv_model(zero=True), 5 / 3, (0.1, 0.1))
        out = eval_rhs(rhs, s)
        assert np.max(np.abs(out[1:3])) < 1e-12

    def test_nonpositive_density_rejected(self, rng):
        s = self.state(rng)
        s[0] -= 5.0
        rhs = build_compressible_rhs(div_model(), conv_model(), 5 / 3, (0.1, 0.1))
        with pytest.raises(ValueError):
            eval_rhs(rhs, s)

    def test_inv_density_switch(self, rng):
        s = self.state(rng)
        base = build_compressible_rhs(div_model(zero=True), conv_model(zero=True), 5 / 3, (0.1, 0.1))
        inv = build_compressible_rhs(
            div_model(zero=True), conv_model(zero=True), 5 / 3, (0.1, 0.1),
            density_weight="inv-density",
        )
        a = eval_rhs(base, s)
        b = eval_rhs(inv, s)
        # same pressure-gradient field, different density weighting
        ratio = a[1] / b[1]
        expected = np.log(s[0]) * s[0]
        assert np.max(np.abs(ratio - expected)) < 1e-9

    def test_shared_divergence_model(self, rng):
        s = self.state(rng)
        dm = div_model()
        rhs = build_compressible_rhs(dm, conv_model(zero=True), 1.0, (0.1, 0.1))
        out = eval_rhs(rhs, s)
        assert np.allclose(out[0], -dm.forward_array(s[(0, 1, 2), :, :])[0])
        assert np.allclose(out[3], -dm.forward_array(s[(3, 1, 2), :, :])[0])


class TestNormalisedCoefficients:
    def test_fixed_term_matches_physical_dynamics(self, rng):
        # normalising fields must not change what a physical nu means:
        # d(norm u)/dt from the rhs equals norm-scale * d(u)/dt of physics
        from opssplit.datasets import NormStats

        n = 32
        h = 1.0 / n
        x = np.arange(n) * h
        xx, yy = np.meshgrid(x, x, indexing="xy")
        u_phys = np.stack([np.sin(2 * np.pi * xx), np.cos(2 * np.pi * yy)])
        mins = np.array([-2.0, -0.5])
        maxs = np.array([4.0, 0.5])
        stats = NormStats(mins=mins, maxs=maxs)
        scale = (maxs - mins) / 2.0
        u_norm = (u_phys - (maxs + mins)[:, None, None] / 2.0) / scale[:, None, None]

        nu = 0.02
        rhs_norm = build_incompressible_rhs(conv_model(zero=True), nu, (h, h), stats=stats)
        out_norm = eval_rhs(rhs_norm, u_norm)

        rhs_phys = build_incompressible_rhs(conv_model(zero=True), nu, (h, h))
        out_phys = eval_rhs(rhs_phys, u_phys)
        assert np.max(np.abs(out_norm - out_phys / scale[:, None, None])) < 1e-12

    def test_pressure_gradient_cross_channel_scaling(self, rng):
        from opssplit.datasets import NormStats

        n = 16
        h = 1.0 / n
        s_phys = np.stack(
            [
                1.0 + 0.5 * rng.random((n, n)),
                rng.standard_normal((n, n)),
                rng.standard_normal((n, n)),
                3.0 + rng.random((n, n)),
            ]
        )
        mins = s_phys.min(axis=(1, 2)) - 0.1
        maxs = s_phys.max(axis=(1, 2)) + 0.1
        stats = NormStats(mins=mins, maxs=maxs)
        scale = (maxs - mins) / 2.0
        mid = (maxs + mins) / 2.0
        s_norm = (s_phys - mid[:, None, None]) / scale[:, None, None]

        rhs_norm = build_compressible_rhs(
            div_model(zero=True), conv_model(zero=True), 5 / 3, (h, h), stats=stats
        )
        rhs_phys = build_compressible_rhs(
            div_model(zero=True), conv_model(zero=True), 5 / 3, (h, h)
        )
        out_norm = eval_rhs(rhs_norm, s_norm)
        out_phys = eval_rhs(rhs_phys, s_phys)
        assert np.max(np.abs(out_norm - out_phys / scale[:, None, None])) < 1e-10


class TestComposition:
    def test_commuting_scalar_flows(self):
        a, b = -0.7, 0.3
        flow_a = lambda u, h: np.exp(a * h) * u
        flow_b = lambda u, h: np.exp(b * h) * u
        h = 0.05
        u0 = np.array(1.3)
        exact = np.exp((a + b) * h) * u0
        got = strang_compose(flow_a, flow_b, h)(u0)
        assert abs(got - exact) < 1e-14

    def test_identity_second_flow(self, rng):
        flow_a = lambda u, h: u * (1.0 + h)
        identity = lambda u, h: u
        u0 = rng.standard_normal(3)
        h = 0.125
        assert np.array_equal(strang_compose(flow_a, identity, h)(u0), flow_a(u0, h))

    def _matrix_orders(self):
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        B = np.array([[-1.0, 0.0], [0.5, -2.0]])
        u0 = np.array([1.0, 0.4])
        T = 1.0
        exact = scipy.linalg.expm((A + B) * T) @ u0
        errs_strang, errs_lie, hs = [], [], []
        for nsteps in (16, 32, 64, 128, 256):
            h = T / nsteps
            fa = lambda u, hh: scipy.linalg.expm(A * hh) @ u
            fb = lambda u, hh: scipy.linalg.expm(B * hh) @ u
            s = strang_compose(fa, fb, h)
            l = lie_compose(fa, fb, h)
            us, ul = u0.copy(), u0.copy()
            for _ in range(nsteps):
                us = s(us)
                ul = l(ul)
            errs_strang.append(np.linalg.norm(us - exact))
            errs_lie.append(np.linalg.norm(ul - exact))
            hs.append(h)
        slope_s = np.polyfit(np.log(hs), np.log(errs_strang), 1)[0]
        slope_l = np.polyfit(np.log(hs), np.log(errs_lie), 1)[0]
        return slope_s, slope_l

    def test_noncommuting_orders(self):
        slope_s, slope_l = self._matrix_orders()
        assert slope_s >= 1.8
        assert 0.8 <= slope_l <= 1.2
