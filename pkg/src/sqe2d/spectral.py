"""Fourier-side algebra on the torus (R/2piZ)^2.

Fields are stored as Fourier coefficients in FFT layout, shape ``(..., M, M)``,
with respect to the orthonormal basis ``e_l(x) = exp(i l.x) / (2 pi)``:

    f = sum_l fhat(l) e_l,        fhat(l) = int f(x) conj(e_l(x)) dx.

With this normalisation Parseval carries no constants,
``||f||_{L^2}^2 = sum_l |fhat(l)|^2``. Leading axes are batch axes; every
operation here broadcasts over them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
AREA = TWO_PI**2


@lru_cache(maxsize=64)
def _wavenumbers(M: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.rint(sfft.fftfreq(M, 1.0 / M)).astype(np.int64)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    k1.setflags(write=False)
    k2.setflags(write=False)
    return k1, k2


@lru_cache(maxsize=64)
def _abs2(M: int) -> np.ndarray:
    k1, k2 = _wavenumbers(M)
    out = (k1**2 + k2**2).astype(float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform M x M collocation grid on the torus."""

    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2 or self.M % 2:
            raise ValueError(f"grid size must be a positive even integer, got {self.M!r}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.M

    @property
    def cell_area(self) -> float:
        return self.spacing**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.M)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.M) * self.spacing
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        return _wavenumbers(self.M)

    def abs2(self) -> np.ndarray:
        """|l|^2 for every stored mode."""
        return _abs2(self.M)

    def nyquist_mask(self) -> np.ndarray:
        k1, k2 = _wavenumbers(self.M)
        h = self.M // 2
        return (np.abs(k1) == h) | (np.abs(k2) == h)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoidal quadrature over the last two axes."""
        return self.cell_area * values.sum(axis=(-2, -1))

    def resolves(self, cutoff: "SpectralCutoff") -> bool:
        return self.M >= 2 * math.floor(cutoff.K + 1e-9) + 2

    @classmethod
    def for_cutoff(cls, cutoff: "SpectralCutoff", oversample: float = 4) -> "Grid":
        """Smallest power-of-two grid with ``M >= oversample * K`` that also resolves the cutoff."""
        need = max(oversample * cutoff.K, 2 * math.floor(cutoff.K + 1e-9) + 2, 2)
        return cls(1 << max(1, math.ceil(math.log2(need) - 1e-12)))


@dataclass(frozen=True)
class SpectralCutoff:
    """The Euclidean-ball projection onto modes |l| <= A**N."""

    A: float
    N: int

    def __post_init__(self):
        if not self.A > 1:
            raise ValueError(f"cutoff base A must exceed 1, got {self.A!r}")
        if int(self.N) != self.N or self.N < 0:
            raise ValueError(f"cutoff level N must be a nonnegative integer, got {self.N!r}")

    @property
    def K(self) -> float:
        return float(self.A) ** int(self.N)

    def next(self) -> "SpectralCutoff":
        return SpectralCutoff(self.A, self.N + 1)

    def mask(self, grid: Grid) -> np.ndarray:
        # ties |l| = K belong to the mode set
        return grid.abs2() <= self.K**2 * (1 + 1e-12)

    def modes(self) -> np.ndarray:
        """All lattice points of the mode set, shape (n, 2), independent of any grid."""
        r = math.floor(self.K + 1e-9)
        k = np.arange(-r, r + 1)
        l1, l2 = np.meshgrid(k, k, indexing="ij")
        keep = l1**2 + l2**2 <= self.K**2 * (1 + 1e-12)
        return np.stack([l1[keep], l2[keep]], axis=-1)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Fourier coefficients of a (batch of) real field(s), FFT layout."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim < 2 or c.shape[-1] != c.shape[-2] or c.shape[-1] % 2:
            raise ValueError(f"coefficient array must end in (M, M) with M even, got {c.shape}")
        if not np.iscomplexobj(c):
            c = c.astype(complex)
        object.__setattr__(self, "coeffs", c)

    @property
    def grid(self) -> Grid:
        return Grid(self.coeffs.shape[-1])

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-2]

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple[int, ...] = ()) -> "Spectrum":
        return cls(np.zeros(batch + grid.shape, dtype=complex))

    @classmethod
    def from_modes(cls, grid: Grid, modes: dict) -> "Spectrum":
        c = np.zeros(grid.shape, dtype=complex)
        h = grid.M // 2
        for (l1, l2), v in modes.items():
            if abs(l1) >= h or abs(l2) >= h:
                raise ValueError(f"mode {(l1, l2)} exceeds Nyquist for M={grid.M}")
            c[l1 % grid.M, l2 % grid.M] = v
        return cls(c)

    def mode(self, l) -> np.ndarray | complex:
        M = self.coeffs.shape[-1]
        return self.coeffs[..., l[0] % M, l[1] % M]

    def __getitem__(self, idx) -> "Spectrum":
        return Spectrum(self.coeffs[idx])

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __add__(self, other: "Spectrum") -> "Spectrum":
        return Spectrum(self.coeffs + other.coeffs)

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        return Spectrum(self.coeffs - other.coeffs)

    def __neg__(self) -> "Spectrum":
        return Spectrum(-self.coeffs)

    def __mul__(self, factor) -> "Spectrum":
        return Spectrum(self.coeffs * factor)

    __rmul__ = __mul__

    def hermitian_defect(self) -> float:
        """max |fhat(-l) - conj(fhat(l))|; zero for real fields."""
        c = self.coeffs
        flipped = np.roll(np.flip(c, axis=(-2, -1)), 1, axis=(-2, -1))
        return float(np.max(np.abs(flipped - np.conj(c)), initial=0.0))


def forward_transform(values: np.ndarray, grid: Grid | None = None) -> Spectrum:
    values = np.asarray(values, dtype=float)
    if values.ndim < 2 or values.shape[-1] != values.shape[-2]:
        raise ValueError(f"grid values must end in a square (M, M) block, got {values.shape}")
    if grid is not None and values.shape[-2:] != grid.shape:
        raise ValueError(f"grid values of shape {values.shape[-2:]} do not match M={grid.M}")
    M = values.shape[-1]
    return Spectrum(sfft.fft2(values) * (TWO_PI / M**2))


def inverse_transform(s: Spectrum, grid: Grid | None = None) -> np.ndarray:
    if grid is not None and grid.M != s.grid.M:
        s = resample(s, grid)
    M = s.coeffs.shape[-1]
    return sfft.ifft2(s.coeffs).real * (M**2 / TWO_PI)


def resample(s: Spectrum, grid: Grid, tol: float = 0.0) -> Spectrum:
    """Move a spectrum onto a grid of another size by zero padding or truncation.

    Every mode carrying weight above ``tol`` must satisfy |l_i| < M/2 on both
    the source and the target grid.
    """
    src = s.grid
    if src.M == grid.M:
        return s
    c = s.coeffs
    small = min(src.M, grid.M)
    h = small // 2
    if src.M > grid.M:
        k1, k2 = _wavenumbers(src.M)
        outside = (np.abs(k1) >= h) | (np.abs(k2) >= h)
    else:
        outside = src.nyquist_mask()
    if np.max(np.abs(c[..., outside]), initial=0.0) > tol:
        raise ValueError(f"spectrum has modes beyond the Nyquist limit of M={small}")
    # modes with |l_i| < h, addressed in source and target layouts
    src_idx = np.r_[0:h, src.M - h + 1:src.M]
    dst_idx = np.r_[0:h, grid.M - h + 1:grid.M]
    out = np.zeros(c.shape[:-2] + grid.shape, dtype=complex)
    out[..., dst_idx[:, None], dst_idx[None, :]] = c[..., src_idx[:, None], src_idx[None, :]]
    return Spectrum(out)


def project(s: Spectrum, c: SpectralCutoff) -> Spectrum:
    return Spectrum(np.where(c.mask(s.grid), s.coeffs, 0.0))


def pairing(f: Spectrum, g: Spectrum) -> np.ndarray:
    """L^2 pairing <f, g> of real fields, computed on the Fourier side."""
    return np.real(np.sum(f.coeffs * np.conj(g.coeffs), axis=(-2, -1)))


def sobolev_norm(s: Spectrum, sigma: float) -> np.ndarray | float:
    w = (1.0 + s.grid.abs2()) ** sigma
    out = np.sqrt(np.sum(w * np.abs(s.coeffs) ** 2, axis=(-2, -1)))
    return float(out) if out.ndim == 0 else out


def besov_norm(s: Spectrum, sigma: float, p: float, grid: Grid | None = None) -> np.ndarray | float:
    """Dyadic B^sigma_{p,p} norm with blocks {|l| <= 1} and {2^(j-1) < |l| <= 2^j}.

    Block L^p norms use equal-weight quadrature on ``grid`` (default: the
    spectrum's own grid).
    """
    if not p >= 1:
        raise ValueError(f"Besov exponent p must be >= 1, got {p!r}")
    if grid is not None and grid.M != s.grid.M:
        s = resample(s, grid)
    grid = s.grid
    r = np.sqrt(grid.abs2())
    jmax = max(0, math.ceil(math.log2(max(r.max(), 1.0)) - 1e-12))
    total = np.zeros(s.batch_shape)
    for j in range(jmax + 1):
        block = r <= 1 if j == 0 else (r > 2.0 ** (j - 1)) & (r <= 2.0**j)
        if not block.any():
            continue
        piece = inverse_transform(Spectrum(np.where(block, s.coeffs, 0.0)))
        lp = grid.integrate(np.abs(piece) ** p)
        total = total + 2.0 ** (j * sigma * p) * lp
    out = total ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out


def heat_multiplier(grid: Grid, t: float) -> np.ndarray:
    return np.exp(-0.5 * t * (1.0 + grid.abs2()))


def heat_semigroup(s: Spectrum, t: float) -> Spectrum:
    """Apply exp((t/2)(Laplacian - 1))."""
    if t < 0:
        raise ValueError(f"heat semigroup time must be nonnegative, got {t!r}")
    return Spectrum(s.coeffs * heat_multiplier(s.grid, t))
