import numpy as np
import pytest

from dispersio.dynamics import ForcingSignal, admittance_from_triplet, simulate_extended
from dispersio.extension import block_admittance, build_from_density, reconstruct_kernel_freq, reduced_representation
from dispersio.models import (
    MaxwellModeParams,
    OscillatorParams,
    damped_oscillator_admittance,
    damped_oscillator_extension,
    damped_oscillator_system,
    lorentz_mode_system,
    lorentz_scalar_resonances,
    lorentz_scalar_system,
    maxwell_extended_mode,
    polarization_series,
    scalar_system_extension,
    synthetic_density,
)
from dispersio.spectra import (
    HerglotzEvaluator,
    LorentzParams,
    SpectralGrid,
    lorentz_friction_transform,
    lorentz_susceptibility,
)

LP = LorentzParams(1.0, 1.0, 0.5)


def test_oscillator_admittance_closed_form_matches_triplet():
    p = OscillatorParams(2.0, 0.5, 0.3)
    closed = damped_oscillator_admittance(p)
    trip = admittance_from_triplet(damped_oscillator_system(p))
    for z in (1j, 0.5 + 0.1j, -3 + 2j):
        assert np.allclose(closed(z), trip(z))


def test_oscillator_parameter_validation():
    with pytest.raises(ValueError):
        OscillatorParams(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        OscillatorParams(1.0, 1.0, -0.1)


def test_oscillator_extension_admittance_converges():
    p = OscillatorParams(1.0, 1.0, 0.2)
    z = 0.9 + 0.3j
    exact = damped_oscillator_admittance(p)(z)[0, 0]
    errs = [abs(block_admittance(damped_oscillator_extension(p, R=R, K=int(40 * R) + 1), z)[0, 0] - exact)
            for R in (25.0, 50.0, 100.0)]
    assert errs[-1] < 1e-2 * abs(exact)
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_undamped_oscillator_has_no_hidden_space():
    blk = damped_oscillator_extension(OscillatorParams(1.0, 1.0, 0.0))
    assert blk.ext.hidden_dim == 0
    blk = damped_oscillator_extension(OscillatorParams(1.0, 1.0, 0.2), K=0)
    assert blk.ext.hidden_dim == 0


def test_lorentz_resonances_are_zeros_of_the_inverse_admittance():
    m, A = 1.3, 3.0
    poles = lorentz_scalar_resonances(LP, m, A)
    assert poles.size == 3
    assert np.all(poles.imag < 0)
    # m z - A + 4 pi z chi(z) vanishes at every pole
    inv = m * poles - A + 4 * np.pi * poles * lorentz_susceptibility(LP, poles)
    assert np.abs(inv).max() < 1e-10


def test_lorentz_scalar_admittance_is_passive():
    adm = admittance_from_triplet(lorentz_scalar_system(LP, 1.0, 3.0))
    z = np.array([0.1 + 0.01j, 3 + 0.1j, -2 + 1j])
    assert all(np.real(adm(zz)[0, 0]) >= 0 for zz in z)


def test_scalar_system_extension_for_lorentzian():
    adm = HerglotzEvaluator(lambda z: np.array([[1j / (2 * z - 1 + 0.3j)]]), 1, "admittance")
    grid = SpectralGrid.graded(400, (0.5,), 0.5, 2e-3, 1.02)
    blk = scalar_system_extension(adm, grid, etas=(4e-3, 2e-3), mass_tol=1e-2)
    # the readout row is a unit vector and the mass is the inverse spectral mass
    assert np.allclose(blk.T @ blk.T.conj().T, 1.0)
    assert blk.mu == pytest.approx(2.0, rel=5e-3)
    z = 0.4 + 0.5j
    assert abs(block_admittance(blk, z)[0, 0] - adm(z)[0, 0]) < 5e-3 * abs(adm(z)[0, 0])


def test_scalar_system_extension_reports_missing_mass():
    adm = HerglotzEvaluator(lambda z: np.array([[1j / (2 * z - 1 + 0.3j)]]), 1, "admittance")
    with pytest.raises(ValueError, match="defect"):
        scalar_system_extension(adm, SpectralGrid.uniform(-1, 2, 600), etas=(1e-2, 5e-3))


def test_maxwell_mode_extension():
    p = MaxwellModeParams(k=0.7, lorentz=LP, R=1000.0, spacing=0.01, growth=1.04)
    blk = maxwell_extended_mode(p)
    assert blk.info["density_mass"] == pytest.approx(4 * np.pi, rel=2e-3)
    # the medium only couples to the electric component
    assert np.all(blk.ext.gamma[1] == 0)
    z = 1.0 + 0.3j
    ref = lorentz_friction_transform(LP, z)
    got = reconstruct_kernel_freq(blk.ext, z)
    assert abs(got[0, 0] - ref) < 5e-3 * abs(ref)
    assert np.allclose(got[1], 0) and np.allclose(got[:, 1], 0)
    assert np.allclose(blk.A, lorentz_mode_system(p).A)


def test_maxwell_mode_rejects_coarse_grid():
    p = MaxwellModeParams(lorentz=LP, spacing=0.5, growth=1.0, R=20.0)
    with pytest.raises(ValueError, match="resonance"):
        maxwell_extended_mode(p)


def test_polarization_routes_agree():
    p = MaxwellModeParams(lorentz=LP, R=200.0, spacing=0.02, growth=1.05)
    blk = maxwell_extended_mode(p)
    f = ForcingSignal.gaussian([1.0, 0.0], 5.0, 1.5, carrier=1.0)
    tr = simulate_extended(blk, f, 20.0, 0.01, record_hidden=True)
    from_states = polarization_series(tr, blk)
    from_memory = polarization_series(tr)
    assert np.allclose(from_states.P, from_memory.P, atol=1e-10)
    assert np.allclose(from_states.D, from_states.E + 4 * np.pi * from_states.P)


def test_synthetic_density_rank_profile():
    dens = synthetic_density(seed=0)
    ranks = dens.ranks()
    counts = {r: int(np.sum(ranks == r)) for r in range(4)}
    assert counts == {0: 500, 1: 350, 2: 200, 3: 150}
    assert np.all(np.linalg.eigvalsh(dens.values).min(axis=1) >= -1e-14)
    ext = build_from_density(dens)
    assert np.array_equal(ext.node_ranks(len(dens)), ranks)
    assert reduced_representation(ext).rank == 3


def test_synthetic_density_with_two_directions():
    ext = build_from_density(synthetic_density(seed=0, directions=2))
    assert reduced_representation(ext).rank == 2


def test_synthetic_density_is_seeded():
    a, b = synthetic_density(seed=4), synthetic_density(seed=4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, synthetic_density(seed=5).values)
