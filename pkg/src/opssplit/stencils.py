"""Finite-difference stencil kernels applied as fixed periodic convolutions.

Coefficients solve the Taylor-moment system exactly (rational arithmetic),
so symmetry holds bit-for-bit and the coefficient sum is forced to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .validation import check_spacing_match

SUPPORTED_ORDERS = (2, 4, 6, 8)
OPERATOR_KINDS = ("grad-x", "grad-y", "laplacian", "divergence")


def _solve_moments(derivative, npoints):
    """Exact centred-stencil coefficients for d^derivative/dx^derivative."""
    m = npoints // 2
    offsets = list(range(-m, m + 1))
    # rows r: sum_j c_j * j^r = r! * delta_{r,derivative}
    a = [[Fraction(j) ** r for j in offsets] for r in range(npoints)]
    b = [Fraction(0)] * npoints
    fact = 1
    for k in range(1, derivative + 1):
        fact *= k
    b[derivative] = Fraction(fact)
    # Gaussian elimination with partial pivoting over the rationals
    for col in range(npoints):
        piv = max(range(col, npoints), key=lambda r: abs(a[r][col]))
        if a[piv][col] == 0:
            raise ValueError("singular moment system")
        a[col], a[piv] = a[piv], a[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, npoints):
            f = a[r][col] / a[col][col]
            if f:
                b[r] -= f * b[col]
                for c in range(col, npoints):
                    a[r][c] -= f * a[col][c]
    coeffs = [Fraction(0)] * npoints
    for r in range(npoints - 1, -1, -1):
        s = b[r] - sum(a[r][c] * coeffs[c] for c in range(r + 1, npoints))
        coeffs[r] = s / a[r][r]
    return offsets, coeffs


def axis_coefficients(derivative, order):
    """Float row of centred coefficients (spacing 1) with an exact zero sum."""
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported accuracy order {order}; pick one of {SUPPORTED_ORDERS}")
    npoints = order + 1
    _, fracs = _solve_moments(derivative, npoints)
    row = np.array([float(c) for c in fracs])
    centre = len(row) // 2
    if derivative % 2 == 0:
        row[centre] -= row.sum()  # pin the zero-sum invariant against rounding
    else:
        # exact rationals are antisymmetric; keep the float row that way too
        row[centre] = 0.0
        row = 0.5 * (row - row[::-1])
    return row


@dataclass(frozen=True)
class StencilKernel:
    """A named differential operator discretised at a given accuracy order."""

    kind: str
    order: int
    spacing: tuple
    coefficients: np.ndarray = field(repr=False)
    # divergence pairs two kernels applied to the two vector channels
    partner: "StencilKernel | None" = None

    @property
    def taps(self):
        return self.coefficients.shape


def make_stencil(kind, order, spacing):
    """Build a stencil kernel for one of the supported operators."""
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported accuracy order {order}; pick one of {SUPPORTED_ORDERS}")
    dx, dy = float(spacing[0]), float(spacing[1])

    if kind == "grad-x":
        row = axis_coefficients(1, order) / dx
        return StencilKernel(kind, order, (dx, dy), row[None, :])
    if kind == "grad-y":
        row = axis_coefficients(1, order) / dy
        return StencilKernel(kind, order, (dx, dy), row[:, None])
    if kind == "laplacian":
        rx = axis_coefficients(2, order) / dx**2
        ry = axis_coefficients(2, order) / dy**2
        n = len(rx)
        coeffs = np.zeros((n, n))
        coeffs[n // 2, :] += rx
        coeffs[:, n // 2] += ry
        return StencilKernel(kind, order, (dx, dy), coeffs)
    # divergence: grad-x applied to the x-channel plus grad-y on the y-channel
    gx = make_stencil("grad-x", order, spacing)
    return StencilKernel("divergence", order, (dx, dy), gx.coefficients, partner=make_stencil("grad-y", order, spacing))


def apply_stencil(f, kernel, spacing=None):
    """Periodic cross-correlation of a field with a stencil kernel.

    For a divergence kernel, `f` must carry two trailing-channel components
    [..., 2, H, W]; other kernels apply channel-wise to any leading shape.
    """
    from .autodiff import periodic_correlate

    f = np.asarray(f, dtype=np.float64)
    if spacing is not None:
        check_spacing_match(tuple(spacing), kernel.spacing)
    if kernel.kind == "divergence":
        if f.shape[-3] != 2:
            raise ValueError("divergence expects a 2-channel vector field [..., 2, H, W]")
        return periodic_correlate(f[..., 0, :, :], kernel.coefficients) + periodic_correlate(
            f[..., 1, :, :], kernel.partner.coefficients
        )
    return periodic_correlate(f, kernel.coefficients)


def measure_order(kind, order, test_fn, grid_sizes, analytic_fn, length=1.0):
    """Least-squares convergence slope of log(max error) against log(h).

    `test_fn(x, y)` samples the smooth periodic test function and
    `analytic_fn(x, y)` its exact derivative on the same grid. Returns
    (slope, errors, monotone) where a non-monotone error sequence is
    reported rather than fatal.
    """
    if len(grid_sizes) < 3:
        raise ValueError("need at least three grid sizes")
    if kind == "divergence":
        raise ValueError("measure_order takes scalar-field kernels; use grad-x/grad-y/laplacian")
    errors = []
    hs = []
    for n in grid_sizes:
        h = length / n
        x = np.arange(n) * h
        xx, yy = np.meshgrid(x, x, indexing="xy")
        f = test_fn(xx, yy)
        kernel = make_stencil(kind, order, (h, h))
        approx = apply_stencil(f, kernel)
        err = np.max(np.abs(approx - analytic_fn(xx, yy)))
        errors.append(err)
        hs.append(h)
    errors = np.asarray(errors)
    monotone = bool(np.all(np.diff(errors) < 0))
    if np.any(errors <= 1e-13):
        # error at the round-off floor: slope is meaningless
        return float("nan"), errors, monotone
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope), errors, monotone
