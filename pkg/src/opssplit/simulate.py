"""Reference numerical solvers and Latin-hypercube parameter sampling.

Incompressible flow: pseudo-spectral with 2/3-rule dealiasing, pressure
projection in Fourier space and implicit viscous update, on the periodic
square [-1, 1]^2. Compressible flow: fourth-order central differences with
RK4 stepping and a spectral low-pass each step, on the periodic unit square,
seeded with two opposing streams under a sinusoidal perturbation.
"""

from __future__ import annotations

import numpy as np

from .datasets import SimParams, Trajectory

CFL_LIMIT = 0.5

# desk-scale defaults (paper scale: incompressible 400^2/dt 1e-3/T 0.5,
# compressible 128^2/dt 5e-4/T 2.0); the compressible dt keeps the sharp
# shear interface inside the CFL budget through roll-up
DESK_INCOMPRESSIBLE = {"grid_n": 64, "dt": 1e-3, "t_final": 0.25}
DESK_COMPRESSIBLE = {"grid_n": 64, "dt": 5e-4, "t_final": 1.0}

PARAM_RANGES = {
    "incompressible": {
        "train": {"alpha": (0.5, 1.0), "beta": (0.5, 1.0), "nu": 0.001},
        "ood": {"alpha": (0.1, 0.5), "beta": (0.1, 0.5), "nu": 0.01},
    },
    "compressible": {
        "train": {"alpha": (0.1, 0.5), "beta": (1.0, 5.0), "gamma": 5.0 / 3.0},
        "ood": {"alpha": (0.5, 1.0), "beta": (5.0, 10.0), "gamma": 2.0 / 3.0},
    },
}


class CFLError(RuntimeError):
    pass


def latin_hypercube(n, dims, rng):
    """One sample per stratum per dimension, shuffled independently."""
    out = np.empty((n, dims))
    for d in range(dims):
        strata = rng.permutation(n)
        out[:, d] = (strata + rng.random(n)) / n
    return out


def sample_params(system, n, seed, regime="train", ranges=None, **overrides):
    """Latin-hypercube draw of simulation parameters for one split regime."""
    if n < 1:
        raise ValueError("n must be >= 1")
    table = dict((ranges or PARAM_RANGES[system])[regime])
    for key in ("alpha", "beta"):
        lo, hi = table[key]
        if hi <= lo:
            raise ValueError(f"empty range for {key}: {table[key]}")
    rng = np.random.default_rng(seed)
    unit = latin_hypercube(n, 2, rng)
    defaults = DESK_INCOMPRESSIBLE if system == "incompressible" else DESK_COMPRESSIBLE
    sims = []
    for i in range(n):
        a_lo, a_hi = table["alpha"]
        b_lo, b_hi = table["beta"]
        kwargs = dict(defaults)
        kwargs.update(overrides)
        sims.append(
            SimParams(
                system=system,
                alpha=a_lo + (a_hi - a_lo) * unit[i, 0],
                beta=b_lo + (b_hi - b_lo) * unit[i, 1],
                nu=table.get("nu") if system == "incompressible" else None,
                gamma=table.get("gamma") if system == "compressible" else None,
                **kwargs,
            )
        )
    return sims


# ---------------------------------------------------------------------------
# incompressible reference solver


def _spectral_setup(n, length):
    k1 = 2.0 * np.pi / length * np.fft.fftfreq(n) * n
    kx, ky = np.meshgrid(k1, k1, indexing="xy")  # kx varies along axis -1
    ksq = kx**2 + ky**2
    ksq_inv = np.where(ksq == 0, 1.0, 1.0 / np.where(ksq == 0, 1.0, ksq))
    kmax = np.max(np.abs(k1))
    dealias = (np.abs(kx) < (2.0 / 3.0) * kmax) & (np.abs(ky) < (2.0 / 3.0) * kmax)
    return kx, ky, ksq, ksq_inv, dealias


def _grad(f_hat, kx, ky):
    return (
        np.real(np.fft.ifft2(1j * kx * f_hat)),
        np.real(np.fft.ifft2(1j * ky * f_hat)),
    )


def spectral_divergence(u, v, dx, dy):
    """Exact-in-band divergence of a velocity field, pointwise in space."""
    n = u.shape[-1]
    k1x = 2.0 * np.pi * np.fft.fftfreq(n, d=dx) * 1.0
    k1y = 2.0 * np.pi * np.fft.fftfreq(u.shape[-2], d=dy)
    kx, ky = np.meshgrid(k1x, k1y, indexing="xy")
    return np.real(np.fft.ifft2(1j * kx * np.fft.fft2(u) + 1j * ky * np.fft.fft2(v)))


def solve_incompressible(params, store_every=1):
    """Pseudo-spectral solve of the incompressible momentum equation.

    Returns a solver-rate trajectory with channels (u, v); subsample for the
    model-facing frame interval.
    """
    n = params.grid_n
    length = 2.0  # domain [-1, 1]^2
    dx = length / n
    xlin = -1.0 + dx * np.arange(n)
    xx, yy = np.meshgrid(xlin, xlin, indexing="xy")
    u = -np.sin(2.0 * np.pi * params.alpha * yy)
    v = -np.sin(4.0 * np.pi * params.beta * xx)
    nu = params.nu
    dt = params.dt
    nsteps = int(round(params.t_final / dt))
    kx, ky, ksq, ksq_inv, dealias = _spectral_setup(n, length)
    visc = 1.0 / (1.0 + dt * nu * ksq)

    frames = [np.stack([u, v])]
    for step in range(nsteps):
        vmax = max(np.max(np.abs(u)), np.max(np.abs(v)))
        if dt * vmax / dx > CFL_LIMIT:
            raise CFLError(f"CFL violated at step {step}: {dt * vmax / dx:.3f}")
        u_hat = np.fft.fft2(u)
        v_hat = np.fft.fft2(v)
        ux, uy = _grad(u_hat, kx, ky)
        vx, vy = _grad(v_hat, kx, ky)
        rhs_x = -(u * ux + v * uy)
        rhs_y = -(u * vx + v * vy)
        rhs_x_hat = dealias * np.fft.fft2(rhs_x)
        rhs_y_hat = dealias * np.fft.fft2(rhs_y)
        u_hat = u_hat + dt * rhs_x_hat
        v_hat = v_hat + dt * rhs_y_hat
        # pressure projection: solve lap P = div(rhs) in the zero-mean gauge,
        # i.e. P_hat = -div_hat / k^2, then subtract dt * grad P
        p_hat = -(1j * kx * rhs_x_hat + 1j * ky * rhs_y_hat) * ksq_inv
        p_hat[0, 0] = 0.0
        u_hat = u_hat - dt * 1j * kx * p_hat
        v_hat = v_hat - dt * 1j * ky * p_hat
        u = np.real(np.fft.ifft2(visc * u_hat))
        v = np.real(np.fft.ifft2(visc * v_hat))
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError(f"incompressible solve produced NaN at step {step}")
        if (step + 1) % store_every == 0:
            frames.append(np.stack([u, v]))

    return Trajectory(
        frames=np.array(frames),
        frame_interval=dt * store_every,
        params=params,
        channels=("u", "v"),
        spacing=(dx, dx),
    )


def convection_pressure_operator(state, dx, dy):
    """Spectral evaluation of the combined convection and pressure terms.

    For velocity channels (u, v), returns -(v . grad)v - grad P with the
    pressure recovered from the zero-mean Poisson solve. This is the
    numerical counterpart of the learned incompressible operator and the
    oracle for its comparison studies. Sign convention: this is the full
    contribution to dv/dt, i.e. the negated convection operator.
    """
    u = state[..., -2, :, :]
    v = state[..., -1, :, :]
    n = u.shape[-1]
    length = n * dx
    kx, ky, ksq, ksq_inv, dealias = _spectral_setup(n, length)
    u_hat = np.fft.fft2(u)
    v_hat = np.fft.fft2(v)
    ux, uy = _grad(u_hat, kx, ky)
    vx, vy = _grad(v_hat, kx, ky)
    rhs_x_hat = dealias * np.fft.fft2(-(u * ux + v * uy))
    rhs_y_hat = dealias * np.fft.fft2(-(u * vx + v * vy))
    p_hat = -(1j * kx * rhs_x_hat + 1j * ky * rhs_y_hat) * ksq_inv
    p_hat[..., 0, 0] = 0.0
    out_x = np.real(np.fft.ifft2(rhs_x_hat - 1j * kx * p_hat))
    out_y = np.real(np.fft.ifft2(rhs_y_hat - 1j * ky * p_hat))
    return np.stack([out_x, out_y], axis=-3)


def kinetic_energy(frames, dx, dy):
    """Per-frame total kinetic energy of a velocity trajectory [T, 2, H, W]."""
    return 0.5 * np.sum(frames**2, axis=(1, 2, 3)) * dx * dy


# ---------------------------------------------------------------------------
# compressible reference solver


def _d4(f, h, axis):
    """Fourth-order central first derivative; exactly zero on constants."""
    return (
        8.0 * (np.roll(f, -1, axis) - np.roll(f, 1, axis))
        - (np.roll(f, -2, axis) - np.roll(f, 2, axis))
    ) / (12.0 * h)


def _compressible_rhs(state, gamma, h):
    rho, u, v, p = state
    ux = _d4(u, h, -1)
    uy = _d4(u, h, -2)
    vx = _d4(v, h, -1)
    vy = _d4(v, h, -2)
    px = _d4(p, h, -1)
    py = _d4(p, h, -2)
    drho = -(_d4(rho * u, h, -1) + _d4(rho * v, h, -2))
    du = -(u * ux + v * uy) - px / rho
    dv = -(u * vx + v * vy) - py / rho
    dp = -(u * px + v * py) - gamma * p * (ux + vy)
    return np.stack([drho, du, dv, dp])


def _lowpass_mask(n):
    """Spectral filter: zero above 2/3 of Nyquist, exponential taper below.

    DC gain is exactly 1, so uniform states pass through bit-exactly on
    power-of-two grids.
    """
    idx = np.abs(np.fft.fftfreq(n) * n)
    kxr = np.arange(n // 2 + 1, dtype=float)
    cutoff = n // 3
    r = np.maximum(idx[:, None] / cutoff, kxr[None, :] / cutoff)
    mask = np.exp(-36.0 * r**36)
    mask[(idx[:, None] > cutoff) | (kxr[None, :] > cutoff)] = 0.0
    return mask


def _lowpass(state, mask):
    return np.fft.irfft2(np.fft.rfft2(state) * mask, s=state.shape[-2:])


def kelvin_helmholtz_ic(n, alpha, beta, interface_cells=2.0):
    """Two opposing streams with a perturbed interface.

    The continuum initial condition is a hard density/velocity band; its grid
    realisation smooths the jump over ~`interface_cells` cells with a tanh
    profile, which the non-dissipative central scheme needs to avoid Gibbs
    undershoot in the density.
    """
    h = 1.0 / n
    x = h * np.arange(n)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    w = interface_cells * h
    band = 0.5 * (np.tanh((yy - 0.25) / w) - np.tanh((yy - 0.75) / w))
    rho = 1.0 + band
    u = -0.5 + band
    sigma = 0.05 / np.sqrt(2.0)
    v = (
        alpha
        * np.sin(4.0 * np.pi * xx)
        * (
            np.exp(-((yy - 0.25) ** 2) / (2.0 * sigma**2))
            + np.exp(-((yy - 0.75) ** 2) / (2.0 * sigma**2))
        )
    )
    p = np.full_like(rho, beta)
    return np.stack([rho, u, v, p])


def solve_compressible(params, store_every=1, initial_state=None):
    """Fourth-order FD + RK4 solve of the adiabatic compressible equations."""
    n = params.grid_n
    h = 1.0 / n
    dt = params.dt
    gamma = params.gamma
    nsteps = int(round(params.t_final / dt))
    state = kelvin_helmholtz_ic(n, params.alpha, params.beta) if initial_state is None else initial_state.copy()
    mask = _lowpass_mask(n)

    frames = [state.copy()]
    for step in range(nsteps):
        rho, u, v, p = state
        if np.any(rho <= 0):
            raise FloatingPointError(f"density went non-positive at step {step}")
        sound = np.sqrt(gamma * p / rho)
        speed = np.max(np.sqrt(u * u + v * v) + sound)
        if dt * speed / h > CFL_LIMIT:
            raise CFLError(f"CFL violated at step {step}: {dt * speed / h:.3f}")
        k1 = _compressible_rhs(state, gamma, h)
        k2 = _compressible_rhs(state + 0.5 * dt * k1, gamma, h)
        k3 = _compressible_rhs(state + 0.5 * dt * k2, gamma, h)
        k4 = _compressible_rhs(state + dt * k3, gamma, h)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state = _lowpass(state, mask)
        if not np.all(np.isfinite(state)):
            raise FloatingPointError(f"compressible solve produced NaN at step {step}")
        if (step + 1) % store_every == 0:
            frames.append(state.copy())

    return Trajectory(
        frames=np.array(frames),
        frame_interval=dt * store_every,
        params=params,
        channels=("rho", "u", "v", "P"),
        spacing=(h, h),
    )


def total_mass(frames, dx, dy):
    """Per-frame integral of density for a [T, 4, H, W] trajectory."""
    return np.sum(frames[:, 0], axis=(-2, -1)) * dx * dy
