import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sqe2d.dynamics import RunConfig, WeightedMeasure, coupled_remainders, exp_model, sinh_model, smooth_field, zero_model
from sqe2d.gaussian import sample_gff
from sqe2d.rng import ReplicaStreams, stream
from sqe2d.spectral import AREA, Grid, SpectralCutoff, Spectrum, inverse_transform
from sqe2d.verification import (
    AcceptanceCollapse,
    Constant,
    Cos,
    CylindricalFunctional,
    Linear,
    MCEstimate,
    Sin,
    SnConfig,
    comparison_bound_check,
    contraction_check,
    contraction_functional,
    dirichlet_ibp_check,
    energy_floor,
    fit_ratio,
    interaction_energy,
    invariance_observables,
    invariance_test,
    mode_direction,
    rejection_sample_gibbs,
    sn_oracle,
    sn_statistic,
)

K1 = SpectralCutoff(2.0, 0)
G4 = Grid(4)


def test_mc_estimate():
    e = MCEstimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5 and e.replicas == 4
    assert e.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert e.within(2.5) and not e.within(100)
    with pytest.raises(ValueError):
        MCEstimate.from_samples([1.0])


# --- S_N --------------------------------------------------------------------------


def test_sn_config_validation():
    nu = sinh_model(1.0)
    SnConfig().validate(nu)
    with pytest.raises(ValueError):
        SnConfig(p=1.5).validate(nu)
    with pytest.raises(ValueError):
        SnConfig(p=math.sqrt(16 * math.pi) + 0.1).validate(nu)
    with pytest.raises(ValueError):
        SnConfig().validate(exp_model(3.6))
    with pytest.raises(ValueError):
        SnConfig(epsilon=0).validate(nu)


def test_sn_trivial_cases():
    nu = sinh_model(1.0)
    same = SnConfig(A=1.01, N_min=1, N_max=2, replicas=8, block_size=4, oversample=4)
    r = sn_statistic(same, nu)
    assert all(e.mean == 0 for e in r.estimates)
    assert all(o == pytest.approx(0, abs=1e-15) for o in r.oracle)
    r = sn_statistic(SnConfig(kappa=0.0, N_max=2, replicas=8, block_size=4), nu)
    assert all(e.mean == 0 for e in r.estimates)


def test_sn_matches_oracle_small():
    cfg = SnConfig(A=2.0, N_min=1, N_max=2, replicas=400, oversample=4)
    r = sn_statistic(cfg, sinh_model(1.0), seed=3)
    for e, o in zip(r.estimates, r.oracle):
        assert e.within(o)
        assert e.std_error < 0.1 * o


def test_sn_oracle_needs_p_two():
    nu = WeightedMeasure(1.0, ((1.0, 0.5), (0.5, 0.5)))
    assert sn_oracle(SnConfig(), nu, 1) is None
    assert sn_oracle(SnConfig(), sinh_model(1.0), 1) > 0


def test_fit_ratio_recovers_geometric_sequence():
    rng = np.random.default_rng(0)
    samples = [rng.exponential(0.5**n, size=4000) for n in range(1, 5)]
    r, se = fit_ratio([1, 2, 3, 4], samples, stream(1))
    assert abs(r - 0.5) < 3 * se + 0.02
    assert r + 2 * se < 1


# --- rejection sampling -------------------------------------------------------------


def test_rejection_zero_measure_accepts_everything():
    phi, rate = rejection_sample_gibbs(zero_model(), K1, G4, stream(0), 500)
    assert rate == 1.0 and len(phi) == 500


def test_interaction_energy_mean():
    n = 10_000
    phi = sample_gff(ReplicaStreams(1, n, 1000), K1, G4, size=n)
    for nu in (sinh_model(1.0), exp_model(-1.5, 0.3)):
        v = MCEstimate.from_samples(interaction_energy(phi, nu, K1))
        assert v.within(AREA * nu.mass)


def test_energy_floor_is_a_lower_bound():
    nu = sinh_model(1.0)
    floor = energy_floor(nu, K1)
    phi = sample_gff(stream(2), K1, G4, size=2000)
    assert np.all(interaction_energy(phi, nu, K1) >= floor - 1e-9)
    assert energy_floor(exp_model(1.0), K1) == 0.0


def test_rejection_collapse():
    with pytest.raises(AcceptanceCollapse):
        rejection_sample_gibbs(exp_model(1.0), K1, G4, stream(0), 10, floor=0.5, batch=256)


# --- invariance and IBP --------------------------------------------------------------


def test_invariance_free_field_self_test():
    cfg = RunConfig(A=2.0, N=0, dt=1e-2, T=0.5, drift_projected=True)
    res = invariance_test(zero_model(), cfg, invariance_observables(cfg.grid), seed=1, replicas=2000, block_size=500)
    assert len(res) == 5
    assert all(r.agrees() for r in res)


def test_invariance_requires_projected_drift():
    cfg = RunConfig(A=2.0, N=0)
    with pytest.raises(ValueError):
        invariance_test(zero_model(), cfg, invariance_observables(cfg.grid), replicas=10)


def test_invariance_detects_wrong_initial_law():
    # start from the free field instead of the Gibbs measure: the zero mode drifts
    cfg = RunConfig(A=2.0, N=0, dt=1e-2, T=1.0, drift_projected=True)
    from sqe2d.dynamics import SqeState, step_full
    from sqe2d.gaussian import ou_noise

    obs = invariance_observables(cfg.grid)[0]
    n = 2000
    phi = sample_gff(stream(4), cfg.cutoff, cfg.grid, size=n)
    f0 = obs(phi)
    s = SqeState(0.0, phi)
    rng = stream(5)
    for _ in range(cfg.n_steps):
        s = step_full(s, cfg, sinh_model(1.0), noise=ou_noise(rng, cfg.grid, cfg.cutoff, cfg.time_step, size=n))
    assert not MCEstimate.from_samples(obs(s.phi) - f0).within(0.0)


def test_cylindrical_functional_validation():
    d = mode_direction(G4, (1, 0))
    with pytest.raises(ValueError):
        CylindricalFunctional(Linear(), ())
    with pytest.raises(ValueError):
        CylindricalFunctional(Linear(), (d, d * 2.0))
    e0 = mode_direction(G4, (0, 0))
    phi = Spectrum.from_modes(G4, {(0, 0): 0.3})
    assert CylindricalFunctional(Sin(), (e0,))(phi) == pytest.approx(math.sin(0.3))


def test_ibp_gaussian_linear():
    l = mode_direction(G4, (1, 0))
    F = CylindricalFunctional(Linear(), (l,))
    r = dirichlet_ibp_check(F, F, zero_model(), K1, G4, replicas=10_000)
    assert r.energy.mean == pytest.approx(0.5) and r.energy.std_error == 0
    assert r.defect.within(0.0)


def test_ibp_constant_functional():
    l = mode_direction(G4, (0, 1))
    F = CylindricalFunctional(Constant(2.0), (l,))
    G = CylindricalFunctional(Cos(), (l,))
    r = dirichlet_ibp_check(F, G, sinh_model(1.0), K1, G4, replicas=2000)
    assert r.defect.mean == 0 and r.energy.mean == 0


def test_ibp_half_prefactor_is_rejected():
    # E(F, F) = 1/2 while E[F L F] = -1/2: the defect with a 1/2 in front of the generator term is far from zero
    l = mode_direction(G4, (1, 0))
    F = CylindricalFunctional(Linear(), (l,))
    r = dirichlet_ibp_check(F, F, zero_model(), K1, G4, replicas=10_000)
    halved = r.energy.mean + 0.5 * r.generator_term.mean
    assert abs(halved) > 10 * r.defect.std_error


def test_ibp_sinh_pair():
    l1 = mode_direction(G4, (1, 0))
    l2 = Spectrum((l1.coeffs + mode_direction(G4, (0, 0)).coeffs) / math.sqrt(2))
    F = CylindricalFunctional(Sin(), (l1,))
    G = CylindricalFunctional(Cos(), (l2,))
    assert dirichlet_ibp_check(F, G, sinh_model(1.0), K1, G4, replicas=20_000).defect.within(0.0)
    # sin against cos has zero energy by the phi -> -phi symmetry; sin against sin does not
    G = CylindricalFunctional(Sin(), (l2,))
    r = dirichlet_ibp_check(F, G, sinh_model(1.0), K1, G4, replicas=20_000)
    assert r.defect.within(0.0)
    assert abs(r.energy.mean) > 10 * r.energy.std_error


# --- contraction and comparison --------------------------------------------------------


def test_contraction_examples():
    g = Grid(8)
    assert contraction_functional(np.zeros(g.shape)) == 0
    assert contraction_functional(np.ones(g.shape)) == pytest.approx(AREA * math.pi / 4)
    assert contraction_functional(np.ones(g.shape)) == pytest.approx(math.pi**3)


@given(arrays(float, (8, 8), elements=st.floats(-50, 50)), st.floats(0, 1))
def test_contraction_functional_properties(z, shrink):
    v = contraction_functional(z)
    assert v >= 0
    assert contraction_functional(-z) == pytest.approx(v)
    assert contraction_functional(shrink * z) <= v + 1e-9


def test_contraction_check_tolerance():
    t = np.linspace(0, 1, 11)
    ok = contraction_check(t, 5 - t, dt=1e-3)
    assert ok.ok
    bad = contraction_check(t, np.r_[5 - t[:-1], 10.0], dt=1e-3)
    assert not bad.ok and bad.max_violation > 5


def _remainder_path(nu, eta, seed, T=0.3):
    cfg = RunConfig(seed=seed, T=T)
    ts, ys = [], []
    for t, _, (y,) in coupled_remainders(cfg, nu, [eta]):
        ts.append(t)
        ys.append(y)
    return cfg, ts, ys


def test_comparison_zero_datum():
    nu = exp_model(1.0)
    eta = Spectrum.zeros(Grid(16))
    cfg, ts, ys = _remainder_path(nu, eta, 0)
    r = comparison_bound_check(ts, ys, nu, eta, cfg.time_step)
    assert r.ok
    assert max(inverse_transform(y).max() for y in ys[1:]) < 0


def test_comparison_mirrored():
    nu = exp_model(-1.0)
    eta = smooth_field(Grid(16), 2)
    cfg, ts, ys = _remainder_path(nu, eta, 1)
    assert comparison_bound_check(ts, ys, nu, eta, cfg.time_step).ok
    assert min(inverse_transform(y).min() for y in ys) >= -1 - 1e-12


def test_comparison_heat_bound():
    nu = exp_model(1.0)
    eta = smooth_field(Grid(16), 3)
    cfg, ts, ys = _remainder_path(nu, eta, 2)
    assert comparison_bound_check(ts, ys, nu, eta, cfg.time_step, heat_bound=True).ok


def test_comparison_refuses_mixed_sign():
    with pytest.raises(ValueError):
        comparison_bound_check([0.0], [Spectrum.zeros(Grid(4))], sinh_model(1.0), Spectrum.zeros(Grid(4)), 1e-3)


def test_worker_count_does_not_change_results():
    cfg = SnConfig(A=2.0, N_min=1, N_max=1, replicas=12, block_size=4)
    one = sn_statistic(cfg, sinh_model(1.0), seed=9, workers=1)
    two = sn_statistic(cfg, sinh_model(1.0), seed=9, workers=2)
    np.testing.assert_array_equal(one.samples[0], two.samples[0])
