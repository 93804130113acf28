import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqe2d.dynamics import (
    NumericalAbort,
    RunConfig,
    SqeState,
    WeightedMeasure,
    coupled_cutoff_differences,
    drift,
    exp_model,
    initial_state,
    simulate,
    sinh_model,
    smooth_field,
    step_decomposed,
    step_full,
    step_remainder,
    uniform_model,
    wick_fields,
    zero_model,
)
from sqe2d.gaussian import OUState, ou_noise, ou_step, renorm_constant, sample_gff
from sqe2d.rng import ReplicaStreams, stream
from sqe2d.spectral import Grid, SpectralCutoff, Spectrum, heat_semigroup, inverse_transform, sobolev_norm
from sqe2d.verification import MCEstimate


# --- weighted measure ---------------------------------------------------------


def test_measure_validation():
    with pytest.raises(ValueError):
        WeightedMeasure(1.0, ((1.5, 1.0),))
    with pytest.raises(ValueError):
        WeightedMeasure(1.0, ((0.5, -1.0),))
    with pytest.raises(ValueError):
        WeightedMeasure(0.0)
    with pytest.raises(ValueError):
        WeightedMeasure(1.0, (), lambda a: a)


def test_measure_flags():
    assert sinh_model(1.0).l2_regime and not sinh_model(1.0).one_signed
    assert exp_model(1.0).sign == 1 and exp_model(-1.0).sign == -1
    assert exp_model(-1.0).reflected().sign == 1
    assert not exp_model(3.6).l2_regime and exp_model(3.6).l1_regime
    assert not exp_model(5.1).l1_regime
    assert zero_model().is_zero and zero_model().mass == 0
    assert uniform_model(2.0, 3.0).mass == pytest.approx(3.0)
    assert sinh_model(1.0, 2.0).mass == pytest.approx(2.0)


def test_measure_digest_stable():
    assert sinh_model(1.0).digest() == sinh_model(1.0).digest()
    assert sinh_model(1.0).digest() != sinh_model(1.1).digest()
    assert len(uniform_model(1.0).digest()) == 32


@given(st.floats(0.1, 3.0), st.floats(0.0, 5.0))
def test_reflection_flips_nodes(alpha, w):
    nu = WeightedMeasure(alpha, ((alpha, w), (-alpha / 2, 1.0)))
    a, ww = nu.nodes()
    ra, rw = nu.reflected().nodes()
    np.testing.assert_allclose(ra, -a)
    np.testing.assert_allclose(rw, ww)


# --- configuration ----------------------------------------------------------------


def test_run_config_validation():
    nu = sinh_model(1.0)
    RunConfig().validate(nu)
    with pytest.raises(ValueError):
        RunConfig(beta=0.05).validate(nu)
    with pytest.raises(ValueError):
        RunConfig(beta=1.0).validate(nu)
    with pytest.raises(ValueError):
        RunConfig(T=1e-4, dt=1e-3).validate(nu)
    with pytest.raises(ValueError):
        RunConfig(dt=-1e-3).validate(nu)
    with pytest.raises(ValueError):
        RunConfig(M=8, N=2).validate(nu)
    with pytest.raises(ValueError):
        RunConfig(init="hot").validate(nu)
    with pytest.raises(ValueError):
        RunConfig().validate(exp_model(5.1))


def test_run_config_defaults():
    cfg = RunConfig()
    assert cfg.grid.M == 16 and cfg.cutoff.K == 4
    assert cfg.time_step == 1e-3 and cfg.n_steps == 1000 and cfg.output_stride == 10
    assert RunConfig(N=5).time_step == pytest.approx(2.5e-4)


# --- drift --------------------------------------------------------------------------

C4 = SpectralCutoff(2.0, 2)
G16 = Grid(16)


def test_drift_examples():
    zero = Spectrum.zeros(G16)
    assert np.abs(drift(zero, sinh_model(1.3), C4).coeffs).max() < 1e-15
    a = 1.7
    v = inverse_transform(drift(zero, exp_model(a), C4))
    np.testing.assert_allclose(v, -0.5 * a * math.exp(-0.5 * a * a * renorm_constant(C4)), rtol=1e-13)
    assert not drift(zero, zero_model(), C4).coeffs.any()


@given(st.integers(0, 10**6))
def test_sinh_drift_is_odd(seed):
    phi = sample_gff(stream(seed), C4, G16)
    nu = sinh_model(1.0)
    np.testing.assert_allclose(drift(-phi, nu, C4).coeffs, -drift(phi, nu, C4).coeffs, atol=1e-13)


def test_drift_projection_modes():
    phi = sample_gff(stream(1), C4, G16)
    d = drift(phi, exp_model(1.0), C4, projected=True)
    assert not d.coeffs[~C4.mask(G16)].any()


# --- steps --------------------------------------------------------------------------


def test_zero_measure_step_is_ou():
    cfg = RunConfig()
    grid, c, dt = cfg.grid, cfg.cutoff, cfg.time_step
    phi = sample_gff(stream(2), SpectralCutoff(7.0, 1), grid)  # carries modes beyond the cutoff
    noise = ou_noise(stream(3), grid, c, dt)
    full = step_full(SqeState(0.0, phi), cfg, zero_model(), noise=noise)
    ou = ou_step(OUState(0.0, phi, c), dt, noise=noise)
    np.testing.assert_allclose(full.phi.coeffs, ou.field.coeffs, atol=1e-15)
    outside = ~c.mask(grid)
    np.testing.assert_allclose(full.phi.coeffs[outside], heat_semigroup(phi, dt).coeffs[outside])


def test_projected_drift_stays_band_limited():
    cfg = RunConfig(drift_projected=True, T=0.05, replicas=2)
    for s in simulate(cfg, exp_model(1.0)):
        assert not s.phi.coeffs[:, ~cfg.cutoff.mask(cfg.grid)].any()


def test_dt_refinement_noise_free():
    """One step of size h against two of size h/2; the gap shrinks like h^2."""
    nu = sinh_model(1.0)
    phi = sample_gff(stream(4), C4, G16) + smooth_field(G16, 4)
    hs = [0.04, 0.02, 0.01, 0.005]
    gaps = []
    for h in hs:
        zero = np.zeros(G16.shape)
        one = step_full(SqeState(0.0, phi), RunConfig(dt=h), nu, noise=zero)
        half = RunConfig(dt=h / 2)
        two = step_full(step_full(SqeState(0.0, phi), half, nu, noise=zero), half, nu, noise=zero)
        gaps.append(sobolev_norm(one.phi - two.phi, -0.5))
    slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
    assert slope >= 1.9


def test_nan_aborts():
    cfg = RunConfig(dt=0.5, T=5, clamp=1000, project_exponent=False, init="zero", eta=smooth_field(G16, 0, sup=200))
    with pytest.raises(NumericalAbort):
        with np.errstate(all="ignore"):
            simulate(cfg, exp_model(5.0))


def test_step_remainder_zero_fields_is_heat_flow():
    cfg = RunConfig()
    y = smooth_field(G16, 5)
    nu = exp_model(1.0)
    out = step_remainder(y, [np.zeros(G16.shape)], cfg, nu)
    np.testing.assert_allclose(out.coeffs, heat_semigroup(y, cfg.time_step).coeffs)
    with pytest.raises(ValueError):
        step_remainder(y, [], cfg, nu)


def test_remainder_below_heat_flow():
    # alpha > 0, eta <= 0 and positive Wick fields: Y never rises above the heat flow of eta
    cfg = RunConfig(dt=1e-3)
    nu = exp_model(1.0)
    eta = smooth_field(G16, 6)
    eta = eta - Spectrum.from_modes(G16, {(0, 0): 2 * np.pi * inverse_transform(eta).max()})
    assert inverse_transform(eta).max() <= 1e-12
    rng = stream(6)
    x = OUState(0.0, sample_gff(rng, C4, G16), C4)
    y = eta
    for k in range(1, 301):
        y = step_remainder(y, wick_fields(x.field, nu, C4), cfg, nu)
        x = ou_step(x, cfg.time_step, rng)
        bound = inverse_transform(heat_semigroup(eta, k * cfg.time_step)).max()
        assert inverse_transform(y).max() <= bound + 10 * cfg.time_step * k * cfg.time_step


def test_decomposed_matches_full():
    cfg = RunConfig(project_exponent=False, drift_projected=False, replicas=3, init="zero", eta=smooth_field(G16, 7))
    nu = sinh_model(1.0)
    rng_a = ReplicaStreams(cfg.seed, 3)
    rng_b = ReplicaStreams(cfg.seed, 3)
    a = initial_state(cfg, nu, "full", rng_a)
    b = initial_state(cfg, nu, "decomposed", rng_b)
    cfg_x = replace(cfg, init="gff")
    rng_x = ReplicaStreams(11, 3)
    xi = sample_gff(rng_x, cfg.cutoff, G16, size=3)
    a = SqeState(0.0, a.phi + xi)
    b = SqeState(0.0, b.phi + xi, OUState(0.0, xi, cfg.cutoff), b.y_part)
    for _ in range(200):
        noise = ou_noise(rng_x, G16, cfg_x.cutoff, cfg.time_step, size=3)
        a = step_full(a, cfg, nu, noise=noise)
        b = step_decomposed(b, cfg, nu, noise=noise)
        np.testing.assert_allclose(b.phi.coeffs, (b.x_part.field + b.y_part).coeffs)
    gap = sobolev_norm(a.phi - b.phi, -0.5)
    assert np.all(gap <= 10 * cfg.time_step)
    assert np.all(gap < 1e-10)


# --- trajectories -----------------------------------------------------------------


def test_free_field_stationary_under_simulation():
    cfg = RunConfig(replicas=4000, block_size=100, T=0.3, output_every=0.1)
    states = simulate(cfg, zero_model())
    assert len(states) == 4
    for s in states:
        for l in [(0, 0), (1, 0), (2, 2)]:
            target = 1 / (1 + l[0] ** 2 + l[1] ** 2)
            assert MCEstimate.from_samples(np.abs(s.phi.mode(l)) ** 2).within(target)


def test_simulate_deterministic_and_replica_local():
    cfg = RunConfig(replicas=3, T=0.05)
    nu = sinh_model(1.0)
    a = simulate(cfg, nu)
    b = simulate(cfg, nu)
    assert all(np.array_equal(x.phi.coeffs, y.phi.coeffs) for x, y in zip(a, b))
    # replica 0 does not depend on how many replicas run alongside it
    c = simulate(replace(cfg, replicas=1), nu)
    np.testing.assert_array_equal(c[-1].phi.coeffs[0], a[-1].phi.coeffs[0])
    assert [s.time for s in a] == pytest.approx([0, 0.01, 0.02, 0.03, 0.04, 0.05])


def test_noise_is_coupled_across_cutoffs():
    grid = Grid(32)
    lo, hi = SpectralCutoff(2.0, 2), SpectralCutoff(2.0, 3)
    a = ou_noise(stream(5), grid, lo, 1e-3)
    b = ou_noise(stream(5), grid, hi, 1e-3)
    np.testing.assert_array_equal(a, np.where(lo.mask(grid), b, 0))


def test_coupled_cutoff_differences_shape_and_trend():
    cfg = RunConfig(N=1, T=0.2, replicas=2)
    d = coupled_cutoff_differences(cfg, sinh_model(1.0), [1, 2, 3, 4])
    assert d.shape == (2, 3)
    assert np.all(d > 0)
    assert np.all(d[:, -1] < d[:, 0])


def test_smooth_field():
    f = smooth_field(G16, 3, radius=3, sup=1.0)
    assert np.abs(inverse_transform(f)).max() == pytest.approx(1.0)
    assert f.hermitian_defect() < 1e-12
    assert not f.coeffs[G16.abs2() > 9].any()
