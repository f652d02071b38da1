import numpy as np
import pytest
from scipy.linalg import expm

from dispersio.dynamics import (
    ForcingSignal,
    SimulationError,
    decay_report,
    energy_ledger,
    simulate_direct,
    simulate_extended,
)
from dispersio.extension import Extension, assemble_block
from dispersio.models import OscillatorParams, damped_oscillator_extension, damped_oscillator_system
from dispersio.spectra import DispersiveSystem, FrictionKernel


def free_system(m=2.0):
    return DispersiveSystem(np.array([[m]]), np.array([[0.0]]), FrictionKernel.zero(1))


def exp_kernel_system(m=1.5, A=0.7, c=0.8, kappa=0.6):
    k = FrictionKernel.from_function(lambda t: c * np.exp(-kappa * np.asarray(t))[:, None, None],
                                     np.zeros((1, 1)), alpha_sup=c, decay_rate=kappa,
                                     transform=lambda z: np.array([[1j * c / (z + 1j * kappa)]]))
    return DispersiveSystem(np.array([[m]]), np.array([[A]]), k)


def exp_kernel_exact(t, v0, m=1.5, A=0.7, c=0.8, kappa=0.6):
    # auxiliary u = int e^{-kappa(t-s)} v(s) ds turns the memory into an ODE
    L = np.array([[-1j * A / m, -c / m], [1.0, -kappa]])
    return np.array([(expm(L * s) @ np.array([v0, 0.0]))[0] for s in t])


# --------------------------------------------------------------------------
# forcing
# --------------------------------------------------------------------------

def test_forcing_validation():
    with pytest.raises(ValueError):
        ForcingSignal(1, t_on=2.0, t_off=1.0)
    with pytest.raises(ValueError):
        ForcingSignal.from_samples([0.0, 1.0, 3.0], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        ForcingSignal.from_samples([0.0, 1.0, 2.0], [1.0, 1.0, 1.0], t_on=0.5)
    with pytest.raises(ValueError):
        ForcingSignal(2, impulse=[1.0])


def test_forcing_is_zero_outside_support():
    f = ForcingSignal.from_function(lambda t: np.ones((np.size(t), 1)), 1, t_on=1.0, t_off=2.0)
    vals = f(np.array([0.5, 1.5, 2.5]))[:, 0]
    assert np.array_equal(vals, [0, 1, 0])


def test_gaussian_forcing_shape():
    f = ForcingSignal.gaussian([1.0, 0.0], center=5.0, width=1.0, carrier=2.0)
    assert f.t_on == 0.0 and f.t_off == 13.0
    v = f(np.array([5.0]))[0]
    assert v[0] == pytest.approx(np.exp(-10j))
    assert v[1] == 0


def test_sampled_forcing_interpolates():
    f = ForcingSignal.from_samples([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
    assert f(np.array([0.5]))[0, 0] == pytest.approx(1.0)


# --------------------------------------------------------------------------
# direct simulator
# --------------------------------------------------------------------------

def test_free_particle_pulse():
    tr = simulate_direct(free_system(2.0), ForcingSignal.pulse([3.0], t_on=1.0), 5.0, 0.1)
    assert np.allclose(tr.v[tr.t < 0.95], 0)
    assert np.allclose(tr.v[tr.t > 0.95, 0], 1.5)


def test_zero_forcing_from_rest_stays_at_rest():
    tr = simulate_direct(exp_kernel_system(), None, 2.0, 0.01)
    assert np.all(tr.v == 0) and np.all(tr.energy == 0)


def test_damped_oscillator_second_order():
    p = OscillatorParams(1.0, 1.0, 0.2)
    sys = damped_oscillator_system(p)
    errs = []
    for dt in (0.02, 0.01):
        tr = simulate_direct(sys, ForcingSignal.pulse([1.0]), 10.0, dt)
        exact = np.exp(-(1j * p.Omega_o + p.gamma_o) * tr.t)
        errs.append(np.abs(tr.v[:, 0] - exact).max())
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_memory_kernel_against_auxiliary_ode():
    sys = exp_kernel_system()
    tr = simulate_direct(sys, None, 10.0, 0.005, v0=[1.0])
    exact = exp_kernel_exact(tr.t, 1.0)
    assert np.abs(tr.v[:, 0] - exact).max() < 1e-4
    assert tr.meta["v0_override"]


def test_direct_ledger_closes_to_second_order():
    sys = exp_kernel_system()
    f = ForcingSignal.gaussian([1.0], 3.0, 1.0, 1.0)
    res = []
    for dt in (0.02, 0.01):
        led = energy_ledger(simulate_direct(sys, f, 20.0, dt), sys)
        res.append(np.abs(led.residual).max() / led.energy.max())
        # friction only removes energy
        assert np.all(led.work_fric <= 0)
    assert res[1] < 1e-4
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.15)


def test_direct_rejects_bad_grids():
    with pytest.raises(ValueError):
        simulate_direct(free_system(), None, 1.05, 0.1)
    with pytest.raises(ValueError):
        simulate_direct(free_system(), None, 1.0, -0.1)
    with pytest.raises(ValueError):
        simulate_direct(free_system(), ForcingSignal.pulse([1.0], t_on=0.05), 1.0, 0.1)


def test_direct_rejects_coarse_step():
    sys = DispersiveSystem(np.array([[1.0]]), np.array([[100.0]]), FrictionKernel.zero(1))
    with pytest.raises(SimulationError):
        simulate_direct(sys, None, 1.0, 0.1)


# --------------------------------------------------------------------------
# extended simulator
# --------------------------------------------------------------------------

def small_block():
    rng = np.random.default_rng(2)
    ext = Extension(np.linspace(-2, 2, 15), 0.2 * (rng.normal(size=(2, 15)) + 0j))
    return assemble_block(np.diag([1.0, 2.0]), np.array([[0.3, 0.1], [0.1, -0.2]]), ext, m1=1.3)


@pytest.mark.parametrize("method", ["eigen", "trapezoid"])
def test_energy_is_conserved_without_forcing(method):
    blk = small_block()
    tr = simulate_extended(blk, None, 100.0, 0.01, method=method, v0=[1.0, 0.5j], record_hidden=True)
    led = energy_ledger(tr, blk)
    assert np.abs(led.energy - led.energy[0]).max() <= 1e-12 * led.energy[0]


def test_eigen_is_exact_against_dense_expm():
    blk = small_block()
    tr = simulate_extended(blk, None, 5.0, 0.5, v0=[1.0, 0.0])
    Minv = np.linalg.inv(blk.mass)
    V0 = np.zeros(blk.size, complex)
    V0[0] = 1.0
    for k, s in enumerate(tr.t):
        ref = (expm(-1j * s * Minv @ blk.generator) @ V0)[:2]
        assert np.allclose(tr.v[k], ref, atol=1e-12)


def test_trapezoid_converges_to_eigen():
    blk = small_block()
    f = ForcingSignal.gaussian([1.0, 0.0], 4.0, 1.0)
    ref = simulate_extended(blk, f, 10.0, 0.01)
    errs = [np.abs(simulate_extended(blk, f, 10.0, dt, method="trapezoid").v[::int(0.1 / dt)]
                   - ref.v[::10]).max() for dt in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_forced_extended_ledger_closes():
    blk = small_block()
    f = ForcingSignal.gaussian([1.0, 1.0], 4.0, 1.0, carrier=0.5)
    res = []
    for dt in (0.02, 0.01):
        led = energy_ledger(simulate_extended(blk, f, 20.0, dt, record_hidden=True), blk)
        res.append(np.abs(led.residual).max() / led.energy.max())
    # exact propagation: only the trapezoid external work carries an O(h^2) error
    assert res[1] < 1e-5
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.15)


def test_extended_matches_direct_for_damped_oscillator():
    p = OscillatorParams(1.0, 1.0, 0.2)
    f = ForcingSignal.gaussian([1.0], 3.0, 0.5)
    direct = simulate_direct(damped_oscillator_system(p), f, 20.0, 0.005)
    ext = simulate_extended(damped_oscillator_extension(p, R=100, K=4001), f, 20.0, 0.005)
    assert np.abs(direct.v - ext.v).max() < 1e-2 * np.abs(direct.v).max()


def test_memory_cap():
    with pytest.raises(MemoryError):
        simulate_extended(small_block(), None, 100.0, 0.01, record_hidden=True, memory_cap=1000)


def test_unknown_method():
    with pytest.raises(ValueError):
        simulate_extended(small_block(), None, 1.0, 0.1, method="rk4")


def test_hidden_stride():
    tr = simulate_extended(small_block(), None, 1.0, 0.1, v0=[1.0, 0.0], record_hidden=True, hidden_stride=5)
    assert list(tr.w_index) == [0, 5, 10]
    assert tr.w.shape == (3, 15)


# --------------------------------------------------------------------------
# decay
# --------------------------------------------------------------------------

def test_decay_passes_for_damped_oscillator():
    tr = simulate_direct(damped_oscillator_system(OscillatorParams(1.0, 1.0, 0.2)),
                         ForcingSignal.pulse([1.0]), 60.0, 0.01)
    rep = decay_report(tr, 20.0)
    assert rep.passed and rep.monotone and rep.envelope_rate > 0
    assert rep.envelope_rate == pytest.approx(0.2, rel=0.05)
    edges = np.array(rep.window_edges)
    assert edges[0, 0] == 20.0 and edges[-1, 1] == 60.0
    assert np.all(np.diff(edges[:, 0]) > 0)


def test_decay_fails_for_pure_rotation():
    tr = simulate_direct(damped_oscillator_system(OscillatorParams(1.0, 1.0, 0.0)),
                         ForcingSignal.pulse([1.0]), 60.0, 0.01)
    rep = decay_report(tr, 20.0)
    assert not rep.passed
    assert rep.tail_sup == pytest.approx(1.0)


def test_decay_report_validates_start():
    tr = simulate_direct(free_system(), ForcingSignal.pulse([1.0]), 1.0, 0.1)
    with pytest.raises(ValueError):
        decay_report(tr, 2.0)
