"""Gaussian free field, Ornstein-Uhlenbeck modes and Wick calculus.

The massive free field has covariance (1 - Laplacian)^{-1}: under the
orthonormal basis of :mod:`sqe2d.spectral` its coefficients are independent
with ``E|phihat(l)|^2 = 1/(1+|l|^2)``, the zero mode real, and each conjugate
pair split into real and imaginary parts of variance ``1/(2(1+|l|^2))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .spectral import TWO_PI, Grid, SpectralCutoff, Spectrum, forward_transform, inverse_transform, project

DEFAULT_CLAMP = 50.0


@dataclass
class Diagnostics:
    """Counters filled in by the clamped exponential."""

    clamped: int = 0
    evaluated: int = 0


def clamped_exp(arg: np.ndarray, bound: float = DEFAULT_CLAMP, diagnostics: Diagnostics | None = None) -> np.ndarray:
    if diagnostics is not None:
        diagnostics.clamped += int(np.count_nonzero(np.abs(arg) > bound))
        diagnostics.evaluated += int(np.size(arg))
    return np.exp(np.clip(arg, -bound, bound))


def renorm_constant(c: SpectralCutoff) -> float:
    """C_N = (2 pi)^-2 sum_{|l| <= A^N} 1/(1+|l|^2), summed over the lattice directly."""
    l = c.modes()
    return float(np.sum(1.0 / (1.0 + (l**2).sum(axis=1))) / TWO_PI**2)


def white_noise(rng, grid: Grid, size=None) -> np.ndarray:
    """Fourier coefficients of grid white noise scaled to unit variance per mode.

    Conjugate pairs come from a single real draw, so Hermitian symmetry holds
    by construction.
    """
    shape = grid.shape if size is None else tuple(np.atleast_1d(size)) + grid.shape
    return sfft.fft2(rng.standard_normal(shape)) / grid.M


def sample_gff(rng, c: SpectralCutoff, grid: Grid | None = None, size=None) -> Spectrum:
    """Draw P_N phi with phi distributed as the massive free field."""
    grid = grid or Grid.for_cutoff(c)
    scale = np.where(c.mask(grid), 1.0 / np.sqrt(1.0 + grid.abs2()), 0.0)
    return Spectrum(white_noise(rng, grid, size) * scale)


@lru_cache(maxsize=32)
def ou_propagator(M: int, K: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode decay factor and stochastic-convolution standard deviation over dt.

    The noise acts only on the modes |l| <= K.
    """
    grid = Grid(M)
    lam = 1.0 + grid.abs2()
    decay = np.exp(-0.5 * dt * lam)
    noise = np.sqrt(-np.expm1(-dt * lam) / lam)
    noise = np.where(grid.abs2() <= K**2 * (1 + 1e-12), noise, 0.0)
    decay.setflags(write=False)
    noise.setflags(write=False)
    return decay, noise


@dataclass(frozen=True)
class OUState:
    time: float
    field: Spectrum
    cutoff: SpectralCutoff


def ou_noise(rng, grid: Grid, c: SpectralCutoff, dt: float, size=None) -> np.ndarray:
    """Exact stochastic convolution increment over one step, restricted to the cutoff."""
    _, scale = ou_propagator(grid.M, c.K, dt)
    return white_noise(rng, grid, size) * scale


def ou_step(state: OUState, dt: float, rng=None, noise: np.ndarray | None = None) -> OUState:
    """Advance X^N = P_N X exactly in law over one step of length dt."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt!r}")
    grid = state.field.grid
    decay, _ = ou_propagator(grid.M, state.cutoff.K, dt)
    if noise is None:
        size = state.field.batch_shape or None
        noise = ou_noise(rng, grid, state.cutoff, dt, size)
    return OUState(state.time + dt, Spectrum(state.field.coeffs * decay + noise), state.cutoff)


def hermite(n: int, x, c: float):
    """H_n(x; c), defined by exp(t x - c t^2 / 2) = sum_k t^k / k! H_k(x; c)."""
    if n < 0:
        raise ValueError("Hermite degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    h_prev, h = np.ones_like(x), x
    if n == 0:
        return h_prev
    for k in range(1, n):
        h_prev, h = h, x * h - c * k * h_prev
    return h


def wick_power(phi: Spectrum, n: int, c: SpectralCutoff, grid: Grid | None = None) -> np.ndarray:
    """:(P_N phi)^n: = H_n(P_N phi; C_N) on the grid."""
    u = inverse_transform(project(phi, c), grid)
    return hermite(n, u, renorm_constant(c))


def wick_exp(
    phi: Spectrum,
    alpha: float,
    c: SpectralCutoff,
    grid: Grid | None = None,
    clamp: float = DEFAULT_CLAMP,
    diagnostics: Diagnostics | None = None,
) -> np.ndarray:
    """exp(alpha P_N phi - alpha^2 C_N / 2) on the grid, exponent clamped to [-clamp, clamp]."""
    if alpha == 0:
        grid = grid or phi.grid
        return np.ones(phi.batch_shape + grid.shape)
    u = inverse_transform(project(phi, c), grid)
    return clamped_exp(alpha * u - 0.5 * alpha**2 * renorm_constant(c), clamp, diagnostics)


def covariance_kernel(c: SpectralCutoff, grid: Grid) -> np.ndarray:
    """K_N(z) = (2 pi)^-2 sum_{|l| <= A^N} exp(i l.z) / (1+|l|^2) on the grid."""
    if not grid.resolves(c):
        raise ValueError(f"grid M={grid.M} does not resolve cutoff K={c.K}")
    coeffs = np.where(c.mask(grid), 1.0 / (TWO_PI * (1.0 + grid.abs2())), 0.0)
    return inverse_transform(Spectrum(coeffs))


def wick_exp_diff_norm_oracle(alpha: float, c: SpectralCutoff, beta: float, grid: Grid) -> float:
    """Exact E||exp_{N+1}(alpha phi) - exp_N(alpha phi)||^2 in H^{-beta} under the free field.

    The difference D has covariance E[D(x) D(y)] = G(x - y) with
    G = exp(alpha^2 K_{N+1}) - exp(alpha^2 K_N), since P_N P_{N+1} = P_N.
    Integrating against the basis gives E|Dhat(l)|^2 = 2 pi Ghat(l), so the
    result is 2 pi sum_l (1+|l|^2)^-beta Ghat(l) over the grid modes, which is
    exactly the expectation of the same norm computed from grid samples.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta!r}")
    fine = c.next()
    g = np.exp(alpha**2 * covariance_kernel(fine, grid)) - np.exp(alpha**2 * covariance_kernel(c, grid))
    ghat = forward_transform(g).coeffs.real
    return float(TWO_PI * np.sum((1.0 + grid.abs2()) ** (-beta) * ghat))
