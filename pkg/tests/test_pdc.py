import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispersio.dynamics import admittance_from_triplet
from dispersio.models import OscillatorParams, damped_oscillator_system
from dispersio.pdc import (
    check_admittance_pdc,
    check_freq_pdc,
    check_time_pdc,
    time_gram,
    upper_half_plane_probes,
)
from dispersio.spectra import (
    DispersiveSystem,
    FrictionKernel,
    HerglotzEvaluator,
    LorentzParams,
    kernel_transform,
    lorentz_friction_transform,
    lorentz_kernel,
)

LP = LorentzParams(1.0, 1.0, 0.5)


def scalar_kernel(func, sup=1.0, rate=0.0):
    return FrictionKernel.from_function(lambda t: func(np.asarray(t))[:, None, None], np.zeros((1, 1)),
                                        alpha_sup=sup, decay_rate=rate)


def const(value, d=1):
    return HerglotzEvaluator(lambda z: value * np.eye(d), d)


# --------------------------------------------------------------------------
# time domain
# --------------------------------------------------------------------------

def test_pure_atom_gram_is_diagonal_and_passes():
    k = FrictionKernel.instantaneous([[1.0]])
    t = np.linspace(0, 1, 11)
    G = time_gram(k, t)
    assert np.allclose(G, np.diag(np.diag(G)))
    rep = check_time_pdc(k, t)
    assert rep.passed and rep.worst_value > 0


def test_cosine_kernel_passes_and_matches_explicit_gram():
    t = np.linspace(0, 10, 50)
    k = scalar_kernel(np.cos)
    # explicit Gram matrix as the oracle
    G = np.cos(t[:, None] - t[None, :])
    vals = np.linalg.eigvalsh(G)
    assert np.allclose(time_gram(k, t), G, atol=1e-14)
    rep = check_time_pdc(k, t)
    assert rep.worst_value == pytest.approx(vals[0] / np.abs(vals).max(), abs=1e-14)
    assert rep.passed


def test_negative_exponential_fails():
    k = scalar_kernel(lambda t: -np.exp(-t), rate=1.0)
    t = np.array([0.0, 0.1])
    # brute force: [[-1, -e^-0.1], [-e^-0.1, -1]]
    G = -np.exp(-np.abs(t[:, None] - t[None, :]))
    assert np.linalg.eigvalsh(G)[0] < 0
    rep = check_time_pdc(k, t)
    assert not rep.passed and rep.worst_value < -rep.tol


def test_time_check_rejects_bad_grids():
    k = scalar_kernel(np.cos)
    with pytest.raises(ValueError):
        check_time_pdc(k, [])
    with pytest.raises(ValueError):
        check_time_pdc(k, [1.0, 0.5])


def test_random_subsets_are_reproducible():
    k = lorentz_kernel(LP)
    t = np.sort(np.random.default_rng(0).uniform(0, 20, 60))
    a = check_time_pdc(k, t, trials=5, seed=3)
    b = check_time_pdc(k, t, trials=5, seed=3)
    assert a.worst_value == b.worst_value
    assert np.array_equal(a.worst_location, b.worst_location)


def test_worst_location_is_probed():
    k = scalar_kernel(lambda t: -np.exp(-t), rate=1.0)
    t = np.linspace(0, 3, 20)
    rep = check_time_pdc(k, t, trials=4)
    assert set(np.asarray(rep.worst_location)).issubset(set(t))


@given(st.floats(1e-3, 1e3))
def test_verdict_is_scale_invariant(c):
    t = np.linspace(0, 8, 30)
    good = scalar_kernel(lambda s: c * np.exp(-s) * np.cos(s), sup=c, rate=1.0)
    bad = scalar_kernel(lambda s: -c * np.exp(-s), sup=c, rate=1.0)
    assert check_time_pdc(good, t).passed
    assert not check_time_pdc(bad, t).passed


def test_report_json_has_type_fields():
    rep = check_time_pdc(lorentz_kernel(LP), np.linspace(0, 5, 10))
    obj = json.loads(rep.to_json())
    for key in ("kind", "worst_value", "worst_location", "pass", "samples"):
        assert key in obj


# --------------------------------------------------------------------------
# frequency domain
# --------------------------------------------------------------------------

def test_constant_positive_transform_passes_with_unit_score():
    rep = check_freq_pdc(const(0.3), upper_half_plane_probes(20))
    assert rep.passed and rep.worst_value == pytest.approx(1.0)


def test_constant_negative_transform_fails():
    assert not check_freq_pdc(const(-1.0), upper_half_plane_probes(20)).passed


def test_lorentz_transform_passes_on_dense_grid():
    x, y = np.meshgrid(np.linspace(-10, 10, 40), np.logspace(-3, 2, 25))
    z = (x + 1j * y).ravel()
    rep = check_freq_pdc(kernel_transform(lorentz_kernel(LP)), z)
    assert rep.passed and rep.samples == 1000


def test_freq_check_rejects_lower_half_plane():
    with pytest.raises(ValueError):
        check_freq_pdc(const(1.0), [1 - 1j])


def test_admittance_of_free_particle_at_i():
    adm = HerglotzEvaluator(lambda z: np.array([[1j / z]]), 1, "admittance")
    assert np.real(adm(1j)[0, 0]) == pytest.approx(1.0)
    assert check_admittance_pdc(adm, [1j]).passed


def test_damped_oscillator_admittance_passes():
    adm = admittance_from_triplet(damped_oscillator_system(OscillatorParams(1.0, 1.0, 0.2)))
    assert check_admittance_pdc(adm, upper_half_plane_probes(1000, seed=5)).passed


def test_negative_admittance_fails():
    assert not check_admittance_pdc(const(-1.0), upper_half_plane_probes(10)).passed


def test_time_and_frequency_verdicts_agree():
    t = np.linspace(0, 15, 80)
    z = upper_half_plane_probes(200, seed=1)
    lor = lorentz_kernel(LP)
    bad = FrictionKernel.from_function(lambda s: -np.exp(-np.asarray(s))[:, None, None], np.zeros((1, 1)),
                                       alpha_sup=1.0, decay_rate=1.0,
                                       transform=lambda zz: np.array([[-1j / (zz + 1j)]]))
    for k in (lor, bad):
        assert check_time_pdc(k, t).passed == check_freq_pdc(kernel_transform(k), z).passed


@given(st.floats(-5, 5), st.floats(0.05, 10))
def test_admittance_dissipation_identity(x, y):
    # Re A - A [Im(zeta) m + Re a_hat] A^H = 0 for the admittance of a triplet
    rng = np.random.default_rng(int(1000 * abs(x)))
    m = np.array([[2.0, 0.3], [0.3, 1.0]])
    A = np.array([[0.5, 0.2 - 0.1j], [0.2 + 0.1j, -0.4]])
    k = FrictionKernel.from_function(
        lambda t: np.exp(-np.asarray(t))[:, None, None] * np.diag([1.0, 0.5])[None], np.diag([0.1, 0.0]),
        alpha_sup=1.0, decay_rate=1.0,
        transform=lambda zz: np.diag([0.1, 0.0]) + np.diag([1.0, 0.5]) * (1j / (zz + 1j)))
    sys = DispersiveSystem(m, A, k)
    z = x + 1j * y
    adm = admittance_from_triplet(sys)(z)
    ah = kernel_transform(k)(z)
    lhs = 0.5 * (adm + adm.conj().T) - adm @ (y * m + 0.5 * (ah + ah.conj().T)) @ adm.conj().T
    assert np.linalg.norm(lhs) <= 1e-10 * np.linalg.norm(adm) ** 2
    del rng


def test_lorentz_closed_form_used_for_transform():
    z = 0.4 + 0.2j
    assert kernel_transform(lorentz_kernel(LP))(z)[0, 0] == pytest.approx(lorentz_friction_transform(LP, z))
