"""Ready-made systems: damped oscillator, scalar admittances, Lorentz modes.

The Maxwell mode builders reduce a homogeneous Lorentz dielectric to one
transverse plane wave of wavenumber ``k``. The state is ``(E, B)`` with unit
mass, generator ``[[0, -k], [-k, 0]]`` and a friction kernel acting on ``E``
only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Trajectory
from .extension import (
    BlockSystem,
    Extension,
    SpectralBlockSystem,
    assemble_block,
    build_from_density,
)
from .pdc import check_admittance_pdc, upper_half_plane_probes
from .spectra import (
    DispersiveSystem,
    FrictionKernel,
    HerglotzEvaluator,
    LorentzParams,
    SpectralDensity,
    SpectralGrid,
    lorentz_density,
    lorentz_friction_transform,
    lorentz_kernel,
    stieltjes_invert,
)

__all__ = [
    "OscillatorParams",
    "MaxwellModeParams",
    "Polarization",
    "damped_oscillator_system",
    "damped_oscillator_extension",
    "damped_oscillator_admittance",
    "scalar_system_extension",
    "lorentz_scalar_system",
    "lorentz_scalar_resonances",
    "lorentz_mode_system",
    "lorentz_mode_grid",
    "maxwell_extended_mode",
    "synthetic_density",
    "polarization_series",
]


# --------------------------------------------------------------------------
# damped oscillator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorParams:
    """``m_o v' = -i m_o Omega_o v - gamma_o v + f``.

    ``gamma_o = 0`` is accepted as the conservative limit.
    """

    m_o: float = 1.0
    Omega_o: float = 1.0
    gamma_o: float = 0.2

    def __post_init__(self):
        if not self.m_o > 0:
            raise ValueError("oscillator mass must be positive")
        if not self.gamma_o >= 0:
            raise ValueError("oscillator damping must be nonnegative")
        if not np.isfinite(self.Omega_o):
            raise ValueError("oscillator frequency must be finite")


def damped_oscillator_system(p: OscillatorParams) -> DispersiveSystem:
    """Scalar system with purely instantaneous friction ``gamma_o delta(t)``."""
    return DispersiveSystem(np.array([[p.m_o]]), np.array([[p.m_o * p.Omega_o]]),
                            FrictionKernel.instantaneous(np.array([[p.gamma_o]])))


def damped_oscillator_admittance(p: OscillatorParams) -> HerglotzEvaluator:
    """Closed form ``i / (m_o zeta - m_o Omega_o + i gamma_o)``."""
    def adm(z):
        return np.array([[1j / (p.m_o * z - p.m_o * p.Omega_o + 1j * p.gamma_o)]])
    return HerglotzEvaluator(adm, 1, "admittance")


def damped_oscillator_extension(p: OscillatorParams, R: float = 100.0, K: int = 4001) -> BlockSystem:
    """Conservative extension with a flat density ``gamma_o / pi`` on ``[-R, R]``.

    ``K`` midpoint cells give couplings ``sqrt(gamma_o dsigma / pi)``; ``K = 0``
    (or ``gamma_o = 0``) leaves the hidden space empty.
    """
    m = np.array([[p.m_o]])
    A = np.array([[p.m_o * p.Omega_o]])
    if K == 0 or p.gamma_o == 0:
        return assemble_block(m, A, Extension.empty(1))
    if R <= 0 or K < 0:
        raise ValueError("R and K must be positive")
    ext = build_from_density(SpectralDensity.empty(1), alpha_inf=np.array([[p.gamma_o]]),
                             R_tail=R, tail_nodes=int(K))
    return assemble_block(m, A, ext)


# --------------------------------------------------------------------------
# scalar systems from their admittance
# --------------------------------------------------------------------------

def scalar_system_extension(adm: HerglotzEvaluator, grid: SpectralGrid, etas=(1e-3, 5e-4),
                            probes=None, mass_tol: float = 1e-2) -> SpectralBlockSystem:
    """Scalar system realised on the spectrum of its admittance.

    With ``n`` the boundary density of ``adm`` the extension is multiplication
    by ``sigma`` on the grid, with mass ``m_A = (sum_k n_k dsigma_k)^{-1}`` and
    readout row ``sqrt(m_A n_k dsigma_k)``. Point masses in the spectrum are
    rejected by the inversion.

    The quadrature mass is compared with ``lim eta adm(i eta)``; a relative
    defect above ``mass_tol`` means the grid misses part of the spectrum
    (a resonance narrower than the cells, or tails beyond the grid) and is
    reported as an error.
    """
    if adm.dim != 1 or adm.kind != "admittance":
        raise ValueError("scalar_system_extension needs a scalar admittance evaluator")
    if probes is None:
        probes = upper_half_plane_probes(40, seed=11)
    rep = check_admittance_pdc(adm, probes)
    if not rep.passed:
        raise ValueError(f"admittance has negative real part (worst {rep.worst_value:.3e})")
    dens = stieltjes_invert(adm, grid, etas)
    cell = np.real(dens.masses()[:, 0, 0])
    total = float(cell.sum())
    if not total > 0:
        raise ValueError("recovered spectral mass is zero; the admittance has no usable spectrum")
    e1, e2 = 1e4, 2e4
    limit = float(np.real(2 * e2 * adm(1j * e2)[0, 0] - e1 * adm(1j * e1)[0, 0]))
    defect = abs(total - limit) / limit
    if defect > mass_tol:
        raise ValueError(f"grid captures spectral mass {total:.6g} but the admittance has "
                         f"{limit:.6g} (defect {defect:.2%}); refine the grid near narrow "
                         f"resonances or extend it")
    keep = cell > 0
    mu = 1.0 / total
    T = np.sqrt(mu * cell[keep])[None, :].astype(complex)
    info = {"mass": mu, "mass_defect": defect, "dropped_nodes": int((~keep).sum())}
    return SpectralBlockSystem(mu, dens.nodes[keep], T, info)


def lorentz_scalar_system(p: LorentzParams, m: float = 1.0, A: float = 0.0) -> DispersiveSystem:
    """Scalar system ``m v' = -i A v - (a_s * v) + f`` with the Lorentz kernel."""
    return DispersiveSystem(np.array([[m]]), np.array([[A]]), lorentz_kernel(p))


def lorentz_scalar_resonances(p: LorentzParams, m: float = 1.0, A: float = 0.0) -> np.ndarray:
    """Complex poles of the scalar Lorentz admittance, sorted by real part.

    They are the roots of ``(m zeta - A)(omega_0^2 - zeta^2 - i gamma zeta)
    + 4 pi omega_p^2 zeta``. Poles close to the real axis produce narrow
    spectral peaks that an inversion grid must resolve.
    """
    w0, g, wp = p.omega_0, p.gamma, p.omega_p
    # (m z - A)(w0^2 - z^2 - i g z) + 4 pi wp^2 z
    coeffs = [-m, A - 1j * g * m, m * w0 ** 2 + 1j * g * A + 4 * np.pi * wp ** 2, -A * w0 ** 2]
    roots = np.roots(coeffs)
    return roots[np.argsort(roots.real)]


# --------------------------------------------------------------------------
# Maxwell modes in a Lorentz dielectric
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxwellModeParams:
    """One transverse plane-wave mode and the grid for its hidden medium.

    The default grid is graded: cells of width ``spacing`` within
    ``3 gamma`` of the resonances and growing outwards to ``R``.
    """

    k: float = 0.7
    lorentz: LorentzParams = field(default_factory=LorentzParams)
    R: float = 1000.0
    spacing: float = 0.01
    growth: float = 1.04
    grid: Optional[SpectralGrid] = None

    def __post_init__(self):
        if not np.isfinite(self.k):
            raise ValueError("wavenumber must be finite")
        if self.grid is None and not (self.R > self.lorentz.omega_0 and self.spacing > 0 and self.growth >= 1):
            raise ValueError("grid needs R > omega_0, spacing > 0 and growth >= 1")


def lorentz_mode_grid(p: MaxwellModeParams) -> SpectralGrid:
    if p.grid is not None:
        return p.grid
    lp = p.lorentz
    return SpectralGrid.graded(p.R, (-lp.omega_0, lp.omega_0), 3 * lp.gamma, p.spacing, p.growth)


def lorentz_mode_system(p: MaxwellModeParams) -> DispersiveSystem:
    """``(E, B)`` mode with kernel ``a_s(t) diag(1, 0)`` and no instantaneous part."""
    scalar = lorentz_kernel(p.lorentz)
    proj = np.diag([1.0, 0.0])

    def alpha(t):
        return scalar(t)[:, 0, 0][:, None, None] * proj[None]

    def transform(z):
        return lorentz_friction_transform(p.lorentz, z) * proj

    kern = FrictionKernel.from_function(alpha, np.zeros((2, 2)), alpha_sup=scalar.alpha_sup,
                                        decay_rate=scalar.decay_rate, transform=transform,
                                        bandwidth=scalar.bandwidth)
    A = np.array([[0.0, -p.k], [-p.k, 0.0]])
    return DispersiveSystem(np.eye(2), A, kern)


def maxwell_extended_mode(p: MaxwellModeParams, min_resonance_nodes: int = 8) -> BlockSystem:
    """Conservative extension of a Lorentz mode: a string of hidden dipoles on E.

    The hidden couplings are ``sqrt(n(sigma_k) dsigma_k)`` on the E row and zero
    on the B row, with ``n`` the spectral density of the Lorentz kernel. The
    quadrature ``sum_k n_k dsigma_k`` should equal ``4 pi omega_p^2``; it is
    stored in ``info["density_mass"]``.
    """
    lp = p.lorentz
    grid = lorentz_mode_grid(p)
    sys = lorentz_mode_system(p)
    core = (grid.nodes >= lp.omega_0 - lp.gamma) & (grid.nodes <= lp.omega_0 + lp.gamma)
    if core.sum() < min_resonance_nodes:
        raise ValueError(f"grid puts {int(core.sum())} nodes within gamma of the resonance; "
                         f"need at least {min_resonance_nodes}")
    if lp.omega_p == 0:
        blk = assemble_block(sys.m, sys.A, Extension.empty(2))
        return BlockSystem(blk.m, blk.A, blk.ext, blk.m1, {"density_mass": 0.0})

    def dens(s):
        out = np.zeros((s.size, 2, 2))
        out[:, 0, 0] = lorentz_density(lp, s)
        return out

    density = SpectralDensity.from_function(grid, dens)
    ext = build_from_density(density)
    mass = float(np.real(density.mass()[0, 0]))
    return BlockSystem(sys.m, sys.A, ext, 1.0, {"density_mass": mass,
                                                "expected_mass": 4 * np.pi * lp.omega_p ** 2,
                                                "nodes": len(grid)})


@dataclass(frozen=True)
class Polarization:
    """Polarisation ``P`` and displacement ``D = E + 4 pi P`` on the trajectory grid."""

    t: np.ndarray
    dP: np.ndarray
    P: np.ndarray
    E: np.ndarray
    D: np.ndarray


def polarization_series(traj: Trajectory, blk: Optional[BlockSystem] = None,
                        component: int = 0) -> Polarization:
    """Polarisation of the medium from the hidden dipoles.

    ``dP/dt = (a * E) / (4 pi)``, the memory force on the E component. With
    a block system and hidden states recorded at every step, the force is
    rebuilt from the states as ``i sqrt(m1) (Gamma w)_E``; otherwise the
    memory series stored in the trajectory is used. ``P`` is integrated by
    the cumulative trapezoid rule from rest.
    """
    t = traj.t
    if blk is not None and traj.w is not None:
        if traj.w_index.size != t.size:
            raise ValueError("polarisation needs hidden states at every step")
        force = 1j * np.sqrt(blk.m1) * (traj.w @ blk.ext.gamma[component])
    elif traj.memory is not None:
        force = traj.memory[:, component]
    else:
        raise ValueError("trajectory carries neither hidden states nor a memory series")
    dP = force / (4 * np.pi)
    P = np.zeros_like(dP)
    if t.size > 1:
        P[1:] = np.cumsum(0.5 * np.diff(t) * (dP[1:] + dP[:-1]))
    E = traj.v[:, component]
    return Polarization(t, dP, P, E, E + 4 * np.pi * P)


# --------------------------------------------------------------------------
# synthetic matrix density
# --------------------------------------------------------------------------

def synthetic_density(seed: int = 0, n: int = 1200, R: float = 6.0, directions: int = 3) -> SpectralDensity:
    """3x3 density made of smooth bumps on orthonormal directions.

    Bump ``k`` lives on direction ``q_k`` (a random unitary column) with
    profile ``(1 - ((sigma - c_k)/w_k)^2)_+^4``. The supports overlap partly,
    so node ranks run through 0..``directions``; with ``directions < 3`` the
    density never touches the remaining directions and the reduced dimension
    drops accordingly.
    """
    if directions not in (1, 2, 3):
        raise ValueError("directions must be 1, 2 or 3")
    rng = np.random.default_rng(seed)
    grid = SpectralGrid.uniform(-R, R, n)
    s = grid.nodes
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    vals = np.zeros((n, 3, 3), dtype=complex)
    for k, (c, w) in enumerate([(-1.0, 3.0), (1.0, 2.0), (1.5, 1.0)][:directions]):
        bump = np.clip(1.0 - ((s - c) / w) ** 2, 0.0, None) ** 4
        vals += bump[:, None, None] * np.outer(q[:, k], q[:, k].conj())[None]
    return SpectralDensity(grid.nodes, grid.weights, vals)
