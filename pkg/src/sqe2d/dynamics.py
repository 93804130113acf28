"""Weighted exponential interaction and time stepping of the quantization equation.

The truncated equation is

    dPhi = 1/2 (Laplacian - 1) Phi dt - 1/2 int alpha exp(alpha u - alpha^2 C_N / 2) nu(d alpha) dt + P_N dW,

with ``u = P_N Phi`` (default) or ``u = Phi``. Steps are exponential Euler:
the linear part and the stochastic convolution are exact per mode, the drift
is frozen over the step.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

from .gaussian import (
    DEFAULT_CLAMP,
    Diagnostics,
    OUState,
    clamped_exp,
    ou_noise,
    ou_propagator,
    ou_step,
    renorm_constant,
    sample_gff,
    wick_exp,
)
from .rng import ReplicaStreams, stream
from .spectral import (
    Grid,
    SpectralCutoff,
    Spectrum,
    forward_transform,
    inverse_transform,
    project,
    resample,
)

FOUR_PI = 4.0 * math.pi


class NumericalAbort(RuntimeError):
    """Raised when a trajectory produces NaN or Inf."""


class _ConstantDensity:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, a):
        return np.full_like(np.asarray(a, dtype=float), self.value)

    def __repr__(self):
        return f"constant({self.value!r})"


class _Reflected:
    def __init__(self, density):
        self.density = density

    def __call__(self, a):
        return self.density(-np.asarray(a, dtype=float))

    def __repr__(self):
        return f"reflected({self.density!r})"


@dataclass(frozen=True)
class WeightedMeasure:
    """Finite nonnegative measure nu on [-alpha0, alpha0]: atoms plus an optional density.

    The density part is integrated with Gauss-Legendre quadrature on
    ``quad_nodes`` points and afterwards treated exactly like atoms.
    """

    alpha0: float
    atoms: tuple[tuple[float, float], ...] = ()
    density: Callable | None = None
    quad_nodes: int = 16

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        for a, w in atoms:
            if abs(a) > self.alpha0 * (1 + 1e-12):
                raise ValueError(f"atom at {a} lies outside [-{self.alpha0}, {self.alpha0}]")
            if w < 0 or not math.isfinite(w):
                raise ValueError(f"atom weight {w} must be finite and nonnegative")
        if self.density is not None:
            _, w = self._quadrature()
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("density must be finite and nonnegative on the quadrature nodes")

    def _quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.quad_nodes)
        a = self.alpha0 * x
        return a, self.alpha0 * w * np.asarray(self.density(a), dtype=float)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Couplings and weights with positive mass."""
        a = [x for x, _ in self.atoms]
        w = [y for _, y in self.atoms]
        if self.density is not None:
            qa, qw = self._quadrature()
            a.extend(qa)
            w.extend(qw)
        a, w = np.array(a, dtype=float), np.array(w, dtype=float)
        keep = w > 0
        return a[keep], w[keep]

    @property
    def mass(self) -> float:
        return float(self.nodes()[1].sum())

    @property
    def is_zero(self) -> bool:
        return self.mass == 0

    @property
    def l2_regime(self) -> bool:
        return self.alpha0**2 < FOUR_PI

    @property
    def l1_regime(self) -> bool:
        return self.alpha0**2 < 2 * FOUR_PI

    @property
    def one_signed(self) -> bool:
        a, _ = self.nodes()
        return bool(np.all(a >= 0) or np.all(a <= 0))

    @property
    def sign(self) -> int:
        """+1 if supported in [0, alpha0], -1 if in [-alpha0, 0], 0 otherwise."""
        a, _ = self.nodes()
        if np.all(a >= 0):
            return 1
        if np.all(a <= 0):
            return -1
        return 0

    def reflected(self) -> "WeightedMeasure":
        dens = None if self.density is None else _Reflected(self.density)
        return replace(self, atoms=tuple((-a, w) for a, w in self.atoms), density=dens)

    def describe(self) -> str:
        a, w = self.nodes()
        pairs = ",".join(f"{x:.17g}:{y:.17g}" for x, y in zip(a, w))
        return f"alpha0={self.alpha0:.17g};nodes={pairs}"

    def digest(self) -> bytes:
        return hashlib.sha256(self.describe().encode()).digest()


def exp_model(alpha: float, weight: float = 1.0) -> WeightedMeasure:
    return WeightedMeasure(abs(alpha), ((alpha, weight),))


def sinh_model(alpha: float, weight: float = 1.0) -> WeightedMeasure:
    """(delta_alpha + delta_-alpha) / 2, scaled by ``weight``."""
    return WeightedMeasure(abs(alpha), ((alpha, 0.5 * weight), (-alpha, 0.5 * weight)))


def uniform_model(alpha0: float, mass: float = 1.0, quad_nodes: int = 16) -> WeightedMeasure:
    return WeightedMeasure(alpha0, (), _ConstantDensity(mass / (2 * alpha0)), quad_nodes)


def zero_model(alpha0: float = 1.0) -> WeightedMeasure:
    return WeightedMeasure(alpha0)


@dataclass(frozen=True)
class RunConfig:
    M: int | None = None
    A: float = 2.0
    N: int = 2
    dt: float | None = None
    T: float = 1.0
    beta: float = 0.5
    epsilon: float = 0.1
    lam: float = 0.5
    seed: int = 0
    replicas: int = 1
    block_size: int = 1
    drift_projected: bool = False
    project_exponent: bool = True
    clamp: float = DEFAULT_CLAMP
    eta: Spectrum | None = field(default=None, compare=False)
    init: str = "gff"
    output_every: float = 0.01
    oversample: float = 4

    @property
    def cutoff(self) -> SpectralCutoff:
        return SpectralCutoff(self.A, self.N)

    @property
    def grid(self) -> Grid:
        return Grid(self.M) if self.M else Grid.for_cutoff(self.cutoff, self.oversample)

    @property
    def time_step(self) -> float:
        if self.dt is not None:
            return self.dt
        # 1e-3 up to K = 8, halved with every doubling of K beyond that
        return 1e-3 * min(1.0, 8.0 / self.cutoff.K)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.time_step))

    @property
    def output_stride(self) -> int:
        return max(1, int(round(self.output_every / self.time_step)))

    def validate(self, nu: WeightedMeasure) -> None:
        dt = self.time_step
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if self.T < dt:
            raise ValueError(f"horizon T={self.T} shorter than one step dt={dt}")
        if not self.grid.resolves(self.cutoff):
            raise ValueError(f"grid M={self.grid.M} does not resolve cutoff K={self.cutoff.K}")
        if self.init not in ("gff", "zero"):
            raise ValueError(f"init must be 'gff' or 'zero', got {self.init!r}")
        if nu.l2_regime and not nu.is_zero and not (nu.alpha0**2 / FOUR_PI < self.beta < 1):
            raise ValueError(f"beta={self.beta} outside ({nu.alpha0**2 / FOUR_PI:.4g}, 1)")
        if not nu.l1_regime:
            raise ValueError(f"alpha0^2={nu.alpha0**2:.4g} outside the L^1 regime alpha0^2 < 8 pi")


@dataclass(frozen=True)
class SqeState:
    time: float
    phi: Spectrum
    x_part: OUState | None = None
    y_part: Spectrum | None = None


def smooth_field(grid: Grid, seed: int, radius: float = 3.0, sup: float = 1.0) -> Spectrum:
    """Random band-limited field normalised to max |f| = sup on the grid."""
    rng = stream(seed, 7919)
    c = SpectralCutoff(radius + 1e-9, 1) if radius > 1 else SpectralCutoff(2.0, 0)
    s = sample_gff(rng, c, grid)
    v = inverse_transform(s)
    return s * (sup / np.max(np.abs(v)))


def drift(
    phi: Spectrum,
    nu: WeightedMeasure,
    c: SpectralCutoff,
    grid: Grid | None = None,
    projected: bool = False,
    project_exponent: bool = True,
    clamp: float = DEFAULT_CLAMP,
    diagnostics: Diagnostics | None = None,
) -> Spectrum:
    """Spectrum of -1/2 int alpha exp(alpha u - alpha^2 C_N / 2) nu(d alpha)."""
    if grid is not None and grid.M != phi.grid.M:
        phi = resample(phi, grid)
    if nu.is_zero:
        return Spectrum.zeros(phi.grid, phi.batch_shape)
    alphas, weights = nu.nodes()
    u = inverse_transform(project(phi, c) if project_exponent else phi)
    C = renorm_constant(c)
    g = np.zeros_like(u)
    for a, w in zip(alphas, weights):
        if a != 0:
            g += (w * a) * clamped_exp(a * u - 0.5 * a * a * C, clamp, diagnostics)
    s = forward_transform(-0.5 * g)
    return project(s, c) if projected else s


@lru_cache(maxsize=32)
def _phi1(M: int, dt: float) -> np.ndarray:
    """int_0^dt exp(-s (1+|l|^2) / 2) ds, the exponential-Euler weight of a frozen forcing."""
    lam = 1.0 + Grid(M).abs2()
    out = -np.expm1(-0.5 * dt * lam) / (0.5 * lam)
    out.setflags(write=False)
    return out


def _check_finite(coeffs: np.ndarray, time: float) -> None:
    if not np.all(np.isfinite(coeffs)):
        raise NumericalAbort(f"non-finite field at t={time:.6g}")


def step_full(
    state: SqeState,
    cfg: RunConfig,
    nu: WeightedMeasure,
    rng=None,
    noise: np.ndarray | None = None,
    diagnostics: Diagnostics | None = None,
) -> SqeState:
    grid = state.phi.grid
    c, dt = cfg.cutoff, cfg.time_step
    decay, _ = ou_propagator(grid.M, c.K, dt)
    if noise is None:
        noise = ou_noise(rng, grid, c, dt, state.phi.batch_shape or None)
    d = drift(state.phi, nu, c, None, cfg.drift_projected, cfg.project_exponent, cfg.clamp, diagnostics)
    new = state.phi.coeffs * decay + _phi1(grid.M, dt) * d.coeffs + noise
    t = state.time + dt
    _check_finite(new, t)
    return SqeState(t, Spectrum(new))


def wick_fields(x: Spectrum, nu: WeightedMeasure, c: SpectralCutoff, clamp: float = DEFAULT_CLAMP, diagnostics=None) -> list[np.ndarray]:
    """exp_N(alpha X) on the grid for every node of nu."""
    return [wick_exp(x, a, c, None, clamp, diagnostics) for a in nu.nodes()[0]]


def step_remainder(
    y: Spectrum,
    fields: Sequence[np.ndarray],
    cfg: RunConfig,
    nu: WeightedMeasure,
    diagnostics: Diagnostics | None = None,
) -> Spectrum:
    """Exponential-Euler step of dY = 1/2 (Laplacian - 1) Y - 1/2 int alpha e^{alpha Y} X^alpha nu(d alpha)."""
    grid, dt = y.grid, cfg.time_step
    decay, _ = ou_propagator(grid.M, cfg.cutoff.K, dt)
    new = y.coeffs * decay
    alphas, weights = nu.nodes()
    if len(fields) != len(alphas):
        raise ValueError(f"got {len(fields)} Wick fields for {len(alphas)} nodes of nu")
    if len(alphas):
        yv = inverse_transform(y)
        g = np.zeros_like(yv)
        for a, w, xf in zip(alphas, weights, fields):
            if a != 0:
                g += (w * a) * clamped_exp(a * yv, cfg.clamp, diagnostics) * xf
        new = new + _phi1(grid.M, dt) * forward_transform(-0.5 * g).coeffs
    _check_finite(new, math.nan)
    return Spectrum(new)


def step_decomposed(
    state: SqeState,
    cfg: RunConfig,
    nu: WeightedMeasure,
    rng=None,
    noise: np.ndarray | None = None,
    diagnostics: Diagnostics | None = None,
) -> SqeState:
    """Advance X by the exact OU step and Y by :func:`step_remainder` driven by exp_N(alpha X)."""
    x = state.x_part
    fields = wick_fields(x.field, nu, cfg.cutoff, cfg.clamp, diagnostics)
    y = step_remainder(state.y_part, fields, cfg, nu, diagnostics)
    x = ou_step(x, cfg.time_step, rng, noise)
    return SqeState(state.time + cfg.time_step, x.field + y, x, y)


def initial_state(cfg: RunConfig, nu: WeightedMeasure, mode: str, rng) -> SqeState:
    grid, c, R = cfg.grid, cfg.cutoff, cfg.replicas
    if cfg.init == "gff":
        xi = sample_gff(rng, c, grid, size=R)
    else:
        xi = Spectrum.zeros(grid, (R,))
    if cfg.eta is None:
        eta = Spectrum.zeros(grid, (R,))
    else:
        eta = Spectrum(np.broadcast_to(resample(cfg.eta, grid).coeffs, (R,) + grid.shape).copy())
    if mode == "full":
        return SqeState(0.0, xi + eta)
    if mode == "decomposed":
        return SqeState(0.0, xi + eta, OUState(0.0, xi, c), eta)
    raise ValueError(f"mode must be 'full' or 'decomposed', got {mode!r}")


def trajectory(
    cfg: RunConfig,
    nu: WeightedMeasure,
    mode: str = "full",
    diagnostics: Diagnostics | None = None,
    initial: Spectrum | None = None,
) -> Iterator[SqeState]:
    """Yield states at t = 0 and every ``cfg.output_every`` up to ``cfg.T``.

    Replica r draws from the stream keyed by (seed, block of r), so two runs
    with the same seed, grid and dt see identical noise on shared modes; this
    is how runs at different cutoffs are coupled. ``initial`` replaces
    P_N xi + eta in full mode.
    """
    cfg.validate(nu)
    grid, c, dt = cfg.grid, cfg.cutoff, cfg.time_step
    rng = ReplicaStreams(cfg.seed, cfg.replicas, cfg.block_size)
    state = initial_state(cfg, nu, mode, rng)
    if initial is not None:
        if mode != "full":
            raise ValueError("an explicit initial field is only supported in full mode")
        state = SqeState(0.0, resample(initial, grid))
    step = step_full if mode == "full" else step_decomposed
    yield state
    n, stride = cfg.n_steps, cfg.output_stride
    for k in range(1, n + 1):
        noise = ou_noise(rng, grid, c, dt, size=cfg.replicas)
        state = step(state, cfg, nu, noise=noise, diagnostics=diagnostics)
        state = replace(state, time=k * dt)
        if k % stride == 0 or k == n:
            yield state


def simulate(cfg: RunConfig, nu: WeightedMeasure, mode: str = "full", diagnostics: Diagnostics | None = None) -> list[SqeState]:
    return list(trajectory(cfg, nu, mode, diagnostics))


def coupled_cutoff_differences(cfg: RunConfig, nu: WeightedMeasure, levels: Sequence[int], sigma: float | None = None) -> np.ndarray:
    """sup_t ||Phi^{N+1}_t - Phi^N_t||_{H^sigma} for consecutive levels, shape (replicas, len(levels) - 1).

    All levels share the grid and time step of the finest one, hence the same
    white noise; the run at level N sees the restriction of that noise to its
    own mode set.
    """
    from .spectral import sobolev_norm

    sigma = -cfg.beta if sigma is None else sigma
    finest = replace(cfg, N=max(levels))
    common = replace(cfg, M=finest.grid.M, dt=finest.time_step)
    runs = [trajectory(replace(common, N=n), nu) for n in levels]
    sup = np.zeros((cfg.replicas, len(levels) - 1))
    for states in zip(*runs):
        for i in range(len(levels) - 1):
            d = sobolev_norm(states[i + 1].phi - states[i].phi, sigma)
            sup[:, i] = np.maximum(sup[:, i], d)
    return sup


def coupled_remainders(cfg: RunConfig, nu: WeightedMeasure, etas: Sequence[Spectrum]) -> Iterator[tuple[float, Spectrum, list[Spectrum]]]:
    """Evolve several remainders Y^(i), Y^(i)_0 = eta_i, against one OU path X.

    Yields (t, X_t, [Y^(i)_t]) at the output cadence.
    """
    cfg.validate(nu)
    grid, c, dt = cfg.grid, cfg.cutoff, cfg.time_step
    R = cfg.replicas
    rng = ReplicaStreams(cfg.seed, R, cfg.block_size)
    xi = sample_gff(rng, c, grid, size=R) if cfg.init == "gff" else Spectrum.zeros(grid, (R,))
    x = OUState(0.0, xi, c)
    ys = [Spectrum(np.broadcast_to(resample(e, grid).coeffs, (R,) + grid.shape).copy()) for e in etas]
    yield 0.0, x.field, ys
    n, stride = cfg.n_steps, cfg.output_stride
    for k in range(1, n + 1):
        fields = wick_fields(x.field, nu, c, cfg.clamp)
        ys = [step_remainder(y, fields, cfg, nu) for y in ys]
        x = ou_step(x, dt, noise=ou_noise(rng, grid, c, dt, size=R))
        if k % stride == 0 or k == n:
            yield k * dt, x.field, ys
