import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dispersio.spectra import (
    DispersiveSystem,
    FrictionKernel,
    HerglotzEvaluator,
    LorentzParams,
    SpectralDensity,
    SpectralGrid,
    SpectralInversionError,
    cauchy_transform,
    extend_kernel,
    kernel_transform,
    laplace_kernel,
    lorentz_chi_time,
    lorentz_density,
    lorentz_friction_transform,
    lorentz_kernel,
    lorentz_susceptibility,
    stieltjes_invert,
)

LP = LorentzParams(1.0, 1.0, 0.5)

# frozen oracle values (mpmath, 30 digits)
LAPLACE_EXP_COS = 0.257560975609756097560975609756 + 0.00195121951219512195121951219512j
LORENTZ_MASS_1000 = 12.5623706120258379705161776993
LORENTZ_KERNEL_T13 = 0.556652119054023551930657641133
LORENTZ_LAPLACE_03_07 = 5.17879594309659479670408263016 - 0.46742714099582456918804946355j


def exp_kernel(coef=1.0):
    return FrictionKernel.from_function(lambda t: coef * np.exp(-t)[:, None, None], np.zeros((1, 1)),
                                        alpha_sup=abs(coef), decay_rate=1.0)


# --------------------------------------------------------------------------
# kernel type
# --------------------------------------------------------------------------

def test_alpha_inf_is_clipped_to_psd():
    k = FrictionKernel.instantaneous(np.array([[1.0, 0.0], [0.0, -1e-14]]))
    assert np.linalg.eigvalsh(k.alpha_inf).min() >= 0.0


def test_alpha_inf_not_psd_rejected():
    with pytest.raises(ValueError):
        FrictionKernel.instantaneous(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_sampled_alpha_sup_covers_samples():
    t = np.linspace(0, 5, 51)
    k = FrictionKernel.from_samples(t, 3.0 * np.cos(t))
    assert k.alpha_sup >= 3.0 - 1e-12
    assert np.all(np.abs(k(t)[:, 0, 0]) <= k.alpha_sup)


def test_dispersive_system_rejects_non_hermitian_generator():
    with pytest.raises(ValueError):
        DispersiveSystem(np.eye(2), np.array([[0, 1], [0, 0]]), FrictionKernel.zero(2))


def test_dispersive_system_rejects_indefinite_mass():
    with pytest.raises(ValueError):
        DispersiveSystem(np.diag([1.0, -1.0]), np.zeros((2, 2)), FrictionKernel.zero(2))


# --------------------------------------------------------------------------
# extend_kernel
# --------------------------------------------------------------------------

def test_extend_kernel_real_scalar_reflection():
    assert extend_kernel(exp_kernel(), -1.0)[0, 0, 0] == pytest.approx(np.exp(-1.0))


def test_extend_kernel_adjoint_is_conjugate():
    k = FrictionKernel.from_function(lambda t: 1j * np.exp(-t)[:, None, None], np.zeros((1, 1)),
                                     alpha_sup=1.0, decay_rate=1.0)
    assert extend_kernel(k, -1.0)[0, 0, 0] == pytest.approx(-1j * np.exp(-1.0))


def test_extend_kernel_origin_takes_real_part():
    k = FrictionKernel.from_function(lambda t: np.full((np.size(t), 1, 1), 1 + 2j), np.zeros((1, 1)),
                                     alpha_sup=3.0)
    assert extend_kernel(k, 0.0)[0, 0, 0] == pytest.approx(1.0)


@given(st.floats(0.0, 30.0), st.integers(0, 10_000))
def test_extend_kernel_hermitian_symmetry(t, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    k = FrictionKernel.from_function(lambda s: np.exp(-(1 + 1j) * s)[:, None, None] * B[None],
                                     np.zeros((2, 2)), alpha_sup=np.linalg.norm(B, 2), decay_rate=1.0)
    plus = extend_kernel(k, t)[0]
    minus = extend_kernel(k, -t)[0]
    if t == 0:
        plus = 0.5 * (plus + plus.conj().T)
    assert np.linalg.norm(minus - plus.conj().T) <= 1e-12 * (1 + np.linalg.norm(plus))


# --------------------------------------------------------------------------
# laplace_kernel
# --------------------------------------------------------------------------

@pytest.mark.parametrize("zeta", [1j, 3 + 0.5j, -2 + 10j])
def test_laplace_of_instantaneous_kernel_is_constant(zeta):
    k = FrictionKernel.instantaneous([[0.2]])
    assert laplace_kernel(k, zeta)[0, 0] == pytest.approx(0.2)


def test_laplace_exponential_at_i():
    assert laplace_kernel(exp_kernel(), 1j)[0, 0] == pytest.approx(0.5, abs=1e-6)


def test_laplace_zero_kernel():
    assert np.all(laplace_kernel(FrictionKernel.zero(3), 2j) == 0)


def test_laplace_sampled_kernel_matches_oracle():
    t = np.linspace(0.0, 60.0, 6001)
    k = FrictionKernel.from_samples(t, np.exp(-t) * np.cos(2 * t))
    val = laplace_kernel(k, 0.5 + 1j, tol=1e-8)[0, 0]
    # piecewise-linear interpolation error is O(h^2)
    assert abs(val - LAPLACE_EXP_COS) < 1e-4


def test_laplace_closed_form_lorentz_matches_oracle():
    k = lorentz_kernel(LP)
    # the numerical path, bypassing the closed-form transform
    bare = FrictionKernel.from_function(k.func, k.alpha_inf, alpha_sup=k.alpha_sup, decay_rate=k.decay_rate)
    val = laplace_kernel(bare, 0.3 + 0.7j)[0, 0]
    assert abs(val - LORENTZ_LAPLACE_03_07) < 1e-8


def test_laplace_rejects_real_axis():
    with pytest.raises(ValueError):
        laplace_kernel(exp_kernel(), 1.0)


def test_laplace_rejects_short_horizon():
    t = np.linspace(0.0, 1.0, 11)
    k = FrictionKernel.from_samples(t, np.ones(11))
    with pytest.raises(ValueError):
        laplace_kernel(k, 0.01j, tol=1e-6)


@given(st.floats(1.0, 1e3))
def test_laplace_decay_at_infinity(eta):
    k = exp_kernel(2.0)
    val = laplace_kernel(k, 1j * eta)
    assert np.linalg.norm(val - k.alpha_inf) <= k.alpha_sup / eta * (1 + 1e-9)


@given(st.floats(-5, 5), st.floats(1e-3, 1e3))
def test_lorentz_transform_has_nonnegative_real_part(x, y):
    k = lorentz_kernel(LP)
    assert np.real(kernel_transform(k)(x + 1j * y)[0, 0]) >= -1e-8 * abs(lorentz_friction_transform(LP, x + 1j * y))


# --------------------------------------------------------------------------
# Cauchy transform and inversion
# --------------------------------------------------------------------------

def test_cauchy_single_node():
    dens = SpectralDensity(np.array([0.0]), np.array([1.0]), np.ones((1, 1, 1)))
    assert cauchy_transform(dens, 1j)[0, 0] == pytest.approx(1j)


def test_cauchy_flat_density_tends_to_i_gamma():
    g0 = 0.3
    for R, tol in [(100.0, 0.01), (1000.0, 0.001)]:
        grid = SpectralGrid.uniform(-R, R, int(40 * R))
        dens = SpectralDensity.from_function(grid, lambda s: np.full(s.size, g0 / np.pi))
        val = cauchy_transform(dens, 1j)[0, 0]
        assert abs(val - 1j * g0) < tol * g0


def test_cauchy_rejects_real_points():
    dens = SpectralDensity(np.array([0.0]), np.array([1.0]), np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        cauchy_transform(dens, 0.5)


def _lorentz_grid():
    return SpectralGrid.graded(1000.0, [-1.0, 1.0], 1.5, 0.005, 1.04)


def test_cauchy_of_lorentz_density_matches_closed_form():
    dens = SpectralDensity.from_function(_lorentz_grid(), lambda s: lorentz_density(LP, s))
    for z in [2j, 0.5 + 0.1j, -1 + 0.3j, 3 + 1j]:
        c = cauchy_transform(dens, z)[0, 0]
        # a_hat = -i C
        expect = lorentz_friction_transform(LP, z)
        assert abs(-1j * c - expect) <= 1e-3 * abs(expect)


def test_stieltjes_of_instantaneous_kernel_is_flat():
    h = kernel_transform(FrictionKernel.instantaneous([[0.2]]))
    dens = stieltjes_invert(h, SpectralGrid.uniform(-3, 3, 30))
    assert np.allclose(dens.values[:, 0, 0], 0.2 / np.pi, rtol=1e-12)


def test_stieltjes_recovers_lorentz_density():
    h = kernel_transform(lorentz_kernel(LP))
    grid = SpectralGrid.uniform(0.1, 3.0, 500)
    dens = stieltjes_invert(h, grid)
    exact = lorentz_density(LP, grid.nodes)
    assert np.max(np.abs(dens.values[:, 0, 0].real - exact) / exact) < 1e-2


def test_stieltjes_of_zero_function():
    h = HerglotzEvaluator(lambda z: np.zeros((2, 2)), 2)
    dens = stieltjes_invert(h, SpectralGrid.uniform(-1, 1, 10))
    assert np.all(dens.values == 0)


def test_stieltjes_flags_point_masses():
    h = HerglotzEvaluator(lambda z: np.array([[1j / z]]), 1, "admittance")
    with pytest.raises(SpectralInversionError):
        stieltjes_invert(h, SpectralGrid.uniform(-0.5, 0.5, 11))


def test_stieltjes_needs_two_etas():
    h = HerglotzEvaluator(lambda z: np.zeros((1, 1)), 1)
    with pytest.raises(ValueError):
        stieltjes_invert(h, SpectralGrid.uniform(-1, 1, 4), etas=(1e-3,))


def _smooth_density(seed, n=800):
    rng = np.random.default_rng(seed)
    grid = SpectralGrid.uniform(-4, 4, n)
    s = grid.nodes
    vecs = rng.normal(size=(2, 2, 2)) + 1j * rng.normal(size=(2, 2, 2))
    vals = np.zeros((n, 2, 2), complex)
    for c, v in zip(rng.uniform(-1, 1, 2), vecs):
        vals += np.exp(-((s - c) / 0.7) ** 2)[:, None, None] * (v @ v.conj().T)[None]
    return SpectralDensity(grid.nodes, grid.weights, vals)


@given(st.integers(0, 1000))
def test_invert_cauchy_round_trip(seed):
    dens = _smooth_density(seed)
    h = HerglotzEvaluator(lambda z: -1j * cauchy_transform(dens, z), 2, "kernel")
    step = dens.weights[0]
    back = stieltjes_invert(h, dens.grid, (2 * step, 3 * step, 4 * step))
    inner = np.abs(dens.nodes) < 2.5
    err = np.linalg.norm(back.values[inner] - dens.values[inner], axis=(1, 2))
    ref = np.linalg.norm(dens.values[inner], axis=(1, 2)).max()
    assert err.max() <= 1e-3 * ref


def test_three_offsets_remove_quadratic_bias():
    dens = _smooth_density(3)
    h = HerglotzEvaluator(lambda z: -1j * cauchy_transform(dens, z), 2, "kernel")
    step = dens.weights[0]
    two = stieltjes_invert(h, dens.grid, (2 * step, 4 * step), residual_cap=np.inf)
    three = stieltjes_invert(h, dens.grid, (2 * step, 3 * step, 4 * step))
    e2 = np.abs(two.values - dens.values).max()
    e3 = np.abs(three.values - dens.values).max()
    assert e3 < 0.2 * e2


# --------------------------------------------------------------------------
# grids and densities
# --------------------------------------------------------------------------

def test_uniform_grid_cells():
    g = SpectralGrid.uniform(-1, 1, 4)
    assert np.allclose(g.nodes, [-0.75, -0.25, 0.25, 0.75])
    assert np.allclose(g.weights, 0.5)


def test_graded_grid_is_fine_near_centers():
    g = SpectralGrid.graded(100.0, [1.0], 0.5, 0.01, 1.05)
    near = np.abs(g.nodes - 1.0) < 0.5
    assert np.allclose(g.weights[near], 0.01, rtol=1e-6)
    assert g.weights.max() > 1.0
    assert g.nodes[0] > -100 and g.nodes[-1] < 100
    assert np.isclose(g.weights.sum(), 200.0)


def test_density_ranks():
    vals = np.zeros((3, 2, 2))
    vals[1] = np.diag([1.0, 0.0])
    vals[2] = np.eye(2)
    dens = SpectralDensity(np.arange(3.0), np.ones(3), vals)
    assert dens.ranks().tolist() == [0, 1, 2]


def test_density_rejects_negative_values():
    with pytest.raises(ValueError):
        SpectralDensity(np.arange(2.0), np.ones(2), np.array([1.0, -1.0]))


# --------------------------------------------------------------------------
# Lorentz closed forms
# --------------------------------------------------------------------------

def test_susceptibility_static_value():
    p = LorentzParams(2.0, 0.5, 0.1)
    assert lorentz_susceptibility(p, 0.0) == pytest.approx(16.0)


def test_susceptibility_high_frequency_limit():
    eta = 1e5
    assert eta ** 2 * lorentz_susceptibility(LP, 1j * eta) == pytest.approx(LP.omega_p ** 2, rel=1e-4)


def test_zeta_chi_is_herglotz_on_random_points():
    rng = np.random.default_rng(0)
    z = rng.uniform(-10, 10, 10_000) + 1j * 10 ** rng.uniform(-4, 2, 10_000)
    assert np.all(np.imag(z * lorentz_susceptibility(LP, z)) >= 0)


def test_density_values():
    assert lorentz_density(LP, 0.0) == 0.0
    assert lorentz_density(LP, LP.omega_0) == pytest.approx(4 * LP.omega_p ** 2 / LP.gamma)


def test_density_mass_on_graded_grid():
    g = _lorentz_grid()
    total = np.sum(lorentz_density(LP, g.nodes) * g.weights)
    assert total == pytest.approx(4 * np.pi, rel=1e-2)
    assert total == pytest.approx(LORENTZ_MASS_1000, rel=2e-3)


def test_lorentz_kernel_time_value():
    assert lorentz_kernel(LP)(1.3)[0, 0, 0] == pytest.approx(LORENTZ_KERNEL_T13, rel=1e-12)
    assert lorentz_kernel(LP)(0.0)[0, 0, 0] == pytest.approx(4 * np.pi * LP.omega_p ** 2)


def test_lorentz_chi_time_is_zero_at_origin():
    assert lorentz_chi_time(LP, 0.0) == pytest.approx(0.0)


def test_lorentz_params_validation():
    with pytest.raises(ValueError):
        LorentzParams(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        LorentzParams(1.0, 1.0, -0.1)
