"""2-D FFT utilities on uniform periodic grids.

Convention throughout the package: forward transforms are unscaled, inverse
transforms carry the 1/(H*W) factor (numpy's "backward" norm). The reference
solvers and the spectral model layers both rely on this agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_even_grid


@dataclass
class Spectrum:
    """Half-complex Fourier coefficients of a real field, [..., H, W//2+1]."""

    coeffs: np.ndarray
    height: int
    width: int
    dx: float
    dy: float

    @property
    def shape(self):
        return self.coeffs.shape


def fft2(field, dx=1.0, dy=1.0):
    """Real-to-complex 2-D transform of the trailing two axes."""
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape[-2], field.shape[-1]
    check_even_grid(h, w)
    return Spectrum(np.fft.rfft2(field), h, w, dx, dy)


def ifft2(spec):
    """Inverse of :func:`fft2`; round trips to within 1e-12 relative."""
    out = np.fft.irfft2(spec.coeffs, s=(spec.height, spec.width))
    return out


def wavenumbers(h, w, dx=1.0, dy=1.0):
    """Angular wavenumber grids (ky, kx) matching full fft2 layout [h, w]."""
    ky = 2.0 * np.pi * np.fft.fftfreq(h, d=dy)
    kx = 2.0 * np.pi * np.fft.fftfreq(w, d=dx)
    return np.meshgrid(ky, kx, indexing="ij")


def rfft_wavenumbers(h, w, dx=1.0, dy=1.0):
    """Angular wavenumber grids matching the half-complex layout [h, w//2+1]."""
    ky = 2.0 * np.pi * np.fft.fftfreq(h, d=dy)
    kx = 2.0 * np.pi * np.fft.rfftfreq(w, d=dx)
    return np.meshgrid(ky, kx, indexing="ij")


def spectral_energy(spec):
    """Sum of |f|^2 over the spatial grid, evaluated from the half spectrum."""
    c = spec.coeffs
    weights = np.full(c.shape[-1], 2.0)
    weights[0] = 1.0
    if spec.width % 2 == 0:
        weights[-1] = 1.0
    return np.sum((c.real**2 + c.imag**2) * weights, axis=(-2, -1)) / (spec.height * spec.width)


def spatial_energy(field):
    field = np.asarray(field, dtype=np.float64)
    return np.sum(field * field, axis=(-2, -1))
