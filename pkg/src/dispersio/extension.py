"""Conservative extensions of dissipative systems.

A friction kernel with spectral density ``N`` is realised by hidden
oscillators: ``a(t) = Gamma exp(-i Omega_1 t) Gamma^H`` with a diagonal
frequency list ``Omega_1`` and coupling ``Gamma``. Coupled to the observable
coordinates this gives the block system

    M = diag(m, m1 I),   Acal = [[A, sqrt(m1) Gamma], [sqrt(m1) Gamma^H, m1 Omega_1]],

whose first ``d`` coordinates obey the original dissipative equation while
the whole system conserves ``(V, M V) / 2``. The hidden mass ``m1`` is a free
scale; the observable dynamics do not depend on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .pdc import check_admittance_pdc, upper_half_plane_probes
from .secular import bordered_eigh, compression_eigh
from .spectra import (
    HerglotzEvaluator,
    SpectralDensity,
    SpectralGrid,
    SpectralInversionError,
    hermitian_part,
    stieltjes_invert,
)

__all__ = [
    "EPS_RANK",
    "FlatTail",
    "Extension",
    "BlockSystem",
    "SpectralBlockSystem",
    "ReducedForm",
    "PolarFactors",
    "ModalForm",
    "build_from_density",
    "reconstruct_kernel_freq",
    "reconstruct_kernel_time",
    "assemble_block",
    "reduced_representation",
    "polar_truncation",
    "build_from_admittance",
    "admittance_recover",
    "RecoveredTriplet",
    "block_admittance",
    "modal_form",
    "herm_sqrt",
    "herm_inv_sqrt",
]

EPS_RANK = 1e-10


def herm_sqrt(x: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix via its eigendecomposition."""
    vals, vecs = np.linalg.eigh(hermitian_part(np.asarray(x, dtype=complex)))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def herm_inv_sqrt(x: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(hermitian_part(np.asarray(x, dtype=complex)))
    if vals.min() <= 0:
        raise ValueError("matrix is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


# --------------------------------------------------------------------------
# extension data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlatTail:
    """Marker for an instantaneous part realised by a flat density on [-R, R].

    ``error_constant`` is the fitted ``C`` in
    ``||a_hat_tail(zeta) - alpha_inf|| <= C (1 + |zeta|) / R``.
    """

    alpha_inf: np.ndarray
    R: float
    nodes: int
    error_constant: float


@dataclass(frozen=True)
class Extension:
    """Hidden frequencies and couplings realising a friction kernel.

    Attributes
    ----------
    omega1 : ndarray, shape (M,)
        Hidden frequencies, one per column of ``gamma``.
    gamma : ndarray, shape (d, M)
        Coupling matrix.
    node : ndarray, shape (M,)
        Index of the density node each column came from (-1 for flat tail
        columns and for columns built directly).
    flat_tail : FlatTail or None
    """

    omega1: np.ndarray
    gamma: np.ndarray
    node: Optional[np.ndarray] = None
    flat_tail: Optional[FlatTail] = None

    def __post_init__(self):
        om = np.asarray(self.omega1, dtype=float).ravel()
        gm = np.asarray(self.gamma, dtype=complex)
        if gm.ndim == 1:
            gm = gm[None, :]
        if gm.shape[1] != om.size:
            raise ValueError(f"gamma has {gm.shape[1]} columns but there are {om.size} frequencies")
        node = np.full(om.size, -1) if self.node is None else np.asarray(self.node, dtype=int)
        object.__setattr__(self, "omega1", om)
        object.__setattr__(self, "gamma", gm)
        object.__setattr__(self, "node", node)

    @classmethod
    def empty(cls, d: int) -> "Extension":
        return cls(np.zeros(0), np.zeros((d, 0)))

    @property
    def d(self) -> int:
        return self.gamma.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.omega1.size

    def node_ranks(self, n_nodes: int) -> np.ndarray:
        """Number of columns per density node."""
        sel = self.node[self.node >= 0]
        return np.bincount(sel, minlength=n_nodes)


def _factor_psd(mass: np.ndarray, eps_rank: float, floor: float):
    """Columns ``U sqrt(L)`` of a PSD matrix, keeping eigenvalues above ``eps_rank * max``.

    Columns come in decreasing-eigenvalue order.
    """
    vals, vecs = np.linalg.eigh(hermitian_part(mass))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = vals[0] if vals.size else 0.0
    if top <= floor:
        return np.zeros((mass.shape[0], 0), dtype=complex)
    keep = vals >= eps_rank * top
    return vecs[:, keep] * np.sqrt(vals[keep])


def _flat_tail_error(gamma_t, omega_t, alpha_inf, R):
    """Fitted constant of the 1/R law on a fixed probe set."""
    probes = np.array([x + 1j * y for x in (-5.0, -1.0, 0.0, 1.0, 5.0) for y in (0.5, 1.0, 5.0)])
    probes = probes[np.abs(probes) < 0.2 * R]
    if probes.size == 0:
        return np.inf
    vals = _freq_sum(gamma_t, omega_t, probes)
    err = np.linalg.norm(vals - alpha_inf[None], ord=2, axis=(1, 2))
    return float(np.max(err * R / (1.0 + np.abs(probes))))


def build_from_density(density: SpectralDensity, alpha_inf=None, R_tail: Optional[float] = None,
                       tail_nodes: Optional[int] = None, eps_rank: float = EPS_RANK,
                       tail_tol: Optional[float] = None) -> Extension:
    """Realise a spectral density (and optional instantaneous part) by hidden modes.

    Each node contributes the columns of ``U_k L_k^{1/2}`` where
    ``N_k dsigma_k = U_k L_k U_k^H``, dropping eigenvalues below
    ``eps_rank`` times the node's largest. A nonzero ``alpha_inf`` is realised
    by a flat density ``alpha_inf / pi`` on ``[-R_tail, R_tail]`` discretised
    with ``tail_nodes`` midpoint cells.

    Parameters
    ----------
    density : SpectralDensity
    alpha_inf : array_like, optional
        Hermitian PSD instantaneous coefficient.
    R_tail : float, optional
        Half-width of the flat tail; required when ``alpha_inf`` is nonzero.
    tail_nodes : int, optional
        Number of tail cells, default ``max(2001, 20 R_tail + 1)``.
    tail_tol : float, optional
        Reject the tail if the fitted error at ``|zeta| = 1`` exceeds this.
    """
    d = density.dim
    cols, omegas, nodes = [], [], []
    if len(density):
        scale = float(np.max(np.linalg.norm(density.masses(), ord=2, axis=(1, 2))))
        floor = 1e-15 * scale
        for k, mk in enumerate(density.masses()):
            f = _factor_psd(mk, eps_rank, floor)
            cols.append(f)
            omegas.append(np.full(f.shape[1], density.nodes[k]))
            nodes.append(np.full(f.shape[1], k))
    tail = None
    ainf = None if alpha_inf is None else hermitian_part(np.atleast_2d(np.asarray(alpha_inf, dtype=complex)))
    if ainf is not None and np.any(ainf != 0):
        if ainf.shape != (d, d):
            raise ValueError(f"alpha_inf must be {d}x{d}")
        if R_tail is None or R_tail <= 0:
            raise ValueError("a nonzero alpha_inf needs a positive R_tail")
        if len(density) and R_tail <= np.max(np.abs(density.nodes)):
            raise ValueError("R_tail must exceed the largest density node")
        K = int(tail_nodes) if tail_nodes is not None else max(2001, int(20 * R_tail) + 1)
        if K < 1:
            raise ValueError("tail_nodes must be positive")
        tgrid = SpectralGrid.uniform(-R_tail, R_tail, K)
        base = _factor_psd(ainf / np.pi, 1e-14, 0.0)
        tcols = (base[:, None, :] * np.sqrt(tgrid.weights)[None, :, None]).reshape(d, -1)
        tom = np.repeat(tgrid.nodes, base.shape[1])
        C = _flat_tail_error(tcols, tom, ainf, R_tail)
        if tail_tol is not None and 2.0 * C / R_tail > tail_tol:
            raise ValueError(f"flat tail with R={R_tail:g} gives error {2 * C / R_tail:.3e} "
                             f"above tail_tol={tail_tol:.3e}; increase R_tail")
        cols.append(tcols)
        omegas.append(tom)
        nodes.append(np.full(tom.size, -1))
        tail = FlatTail(ainf, float(R_tail), K, C)
    if not cols:
        return Extension(np.zeros(0), np.zeros((d, 0)), flat_tail=tail)
    gamma = np.concatenate(cols, axis=1)
    omega = np.concatenate(omegas)
    node = np.concatenate(nodes)
    return Extension(omega, gamma, node, tail)


def _freq_sum(gamma, omega, zetas):
    z = np.atleast_1d(np.asarray(zetas, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("reconstruct_kernel_freq needs Im zeta > 0")
    d = gamma.shape[0]
    out = np.empty((z.size, d, d), dtype=complex)
    for i, zz in enumerate(z):
        out[i] = 1j * (gamma / (zz - omega)[None, :]) @ gamma.conj().T
    return out


def reconstruct_kernel_freq(ext: Extension, zeta) -> np.ndarray:
    """``a_hat(zeta) = i Gamma (zeta - Omega_1)^{-1} Gamma^H`` (scalar or array of zeta)."""
    scalar = np.ndim(zeta) == 0
    out = _freq_sum(ext.gamma, ext.omega1, zeta)
    return out[0] if scalar else out


def reconstruct_kernel_time(ext: Extension, t) -> np.ndarray:
    """``a(t) = Gamma exp(-i Omega_1 t) Gamma^H``; not defined with a flat tail."""
    if ext.flat_tail is not None:
        raise ValueError("kernel with a flat tail has a delta part; use reconstruct_kernel_freq")
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    ph = np.exp(-1j * np.outer(tt, ext.omega1))
    out = np.einsum("im,nm,jm->nij", ext.gamma, ph, ext.gamma.conj())
    return out[0] if scalar else out


# --------------------------------------------------------------------------
# block systems
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSystem:
    """Observable block ``(m, A)`` coupled to the hidden modes of ``ext``.

    Dense operators are built on demand; large systems are simulated through
    :func:`modal_form` without ever forming them.
    """

    m: np.ndarray
    A: np.ndarray
    ext: Extension
    m1: float = 1.0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = self.ext.d
        m = np.atleast_2d(np.asarray(self.m, dtype=complex))
        A = np.atleast_2d(np.asarray(self.A, dtype=complex))
        if m.shape != (d, d) or A.shape != (d, d):
            raise ValueError(f"m and A must be {d}x{d} to match the extension")
        if not np.allclose(m, m.conj().T, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValueError("m must be Hermitian")
        if not np.allclose(A, A.conj().T, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be Hermitian")
        m = hermitian_part(m)
        if np.linalg.eigvalsh(m).min() <= 0:
            raise ValueError("m must be positive definite")
        if not self.m1 > 0:
            raise ValueError("hidden mass m1 must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "A", hermitian_part(A))
        object.__setattr__(self, "m1", float(self.m1))

    @property
    def d(self) -> int:
        return self.ext.d

    @property
    def size(self) -> int:
        return self.d + self.ext.hidden_dim

    @property
    def mass(self) -> np.ndarray:
        """Block-diagonal mass ``diag(m, m1 I)``."""
        out = np.zeros((self.size, self.size), dtype=complex)
        out[: self.d, : self.d] = self.m
        idx = np.arange(self.d, self.size)
        out[idx, idx] = self.m1
        return out

    @property
    def generator(self) -> np.ndarray:
        """Hermitian generator, assembled from Hermitian blocks."""
        d = self.d
        out = np.zeros((self.size, self.size), dtype=complex)
        out[:d, :d] = self.A
        cpl = np.sqrt(self.m1) * self.ext.gamma
        out[:d, d:] = cpl
        out[d:, :d] = cpl.conj().T
        idx = np.arange(d, self.size)
        out[idx, idx] = self.m1 * self.ext.omega1
        return out

    @property
    def truncation(self) -> np.ndarray:
        """``T = [I 0]`` selecting the observable coordinates."""
        out = np.zeros((self.d, self.size), dtype=complex)
        out[:, : self.d] = np.eye(self.d)
        return out

    @property
    def observable_mass(self) -> np.ndarray:
        return self.m

    def kernel_transform(self) -> HerglotzEvaluator:
        return HerglotzEvaluator(lambda z: reconstruct_kernel_freq(self.ext, z), self.d, "kernel")


@dataclass(frozen=True)
class SpectralBlockSystem:
    """Block system given in its own eigenbasis.

    ``M = mu I`` and ``Acal = mu diag(frequencies)`` on ``C^N`` with an isometric
    truncation ``T`` (``T T^H = I``). This is the natural output of the scalar
    admittance construction.
    """

    mu: float
    frequencies: np.ndarray
    T: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        fr = np.asarray(self.frequencies, dtype=float).ravel()
        T = np.atleast_2d(np.asarray(self.T, dtype=complex))
        if T.shape[1] != fr.size:
            raise ValueError("truncation width must match the number of frequencies")
        if not self.mu > 0:
            raise ValueError("mass scale must be positive")
        err = np.abs(T @ T.conj().T - np.eye(T.shape[0])).max()
        if err > 1e-10:
            raise ValueError(f"truncation is not isometric (error {err:.2e})")
        object.__setattr__(self, "frequencies", fr)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def d(self) -> int:
        return self.T.shape[0]

    @property
    def size(self) -> int:
        return self.frequencies.size

    @property
    def mass(self) -> np.ndarray:
        return self.mu * np.eye(self.size, dtype=complex)

    @property
    def generator(self) -> np.ndarray:
        return np.diag(self.mu * self.frequencies).astype(complex)

    @property
    def truncation(self) -> np.ndarray:
        return self.T

    @property
    def observable_mass(self) -> np.ndarray:
        return self.mu * np.eye(self.d)

    def kernel_transform(self) -> HerglotzEvaluator:
        # a_hat from the admittance: i(zeta m - A) + adm^{-1} with m = mu and
        # A the compressed generator
        m = self.observable_mass
        A = hermitian_part(self.mu * (self.T * self.frequencies[None, :]) @ self.T.conj().T)

        def ahat(z):
            return 1j * (z * m - A) + np.linalg.inv(block_admittance(self, z))
        return HerglotzEvaluator(ahat, self.d, "kernel")


def assemble_block(m, A, ext: Extension, m1: float = 1.0) -> BlockSystem:
    """Block system ``diag(m, m1 I)``, ``[[A, sqrt(m1) Gamma], [., m1 Omega_1]]``."""
    return BlockSystem(m, A, ext, m1)


def block_admittance(blk, zeta) -> np.ndarray:
    """``i T (zeta M - Acal)^{-1} T^H`` evaluated without dense inverses."""
    z = complex(zeta)
    if isinstance(blk, SpectralBlockSystem):
        T = blk.T
        return 1j * (T / (blk.mu * (z - blk.frequencies))[None, :]) @ T.conj().T
    ext = blk.ext
    schur = z * blk.m - blk.A - (ext.gamma / (z - ext.omega1)[None, :]) @ ext.gamma.conj().T
    return 1j * np.linalg.inv(schur)


# --------------------------------------------------------------------------
# reduction and polar factors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedForm:
    """Restriction of an extension to the closure of ``Ran Gamma``."""

    projector: np.ndarray
    basis: np.ndarray
    rank: int
    ext: Extension
    singular_values: np.ndarray

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """Express a ``d x d`` matrix in the reduced basis."""
        return self.basis.conj().T @ x @ self.basis


def reduced_representation(ext: Extension, eps_rank: float = EPS_RANK) -> ReducedForm:
    """Projector onto the column space of ``Gamma`` and the reduced couplings."""
    d = ext.d
    if ext.hidden_dim == 0:
        u = np.zeros((d, 0), dtype=complex)
        sv = np.zeros(0)
    else:
        u, sv, _ = np.linalg.svd(ext.gamma, full_matrices=False)
        keep = sv > eps_rank * sv[0] if sv.size and sv[0] > 0 else np.zeros(sv.size, bool)
        u = u[:, keep]
    proj = hermitian_part(u @ u.conj().T)
    red = Extension(ext.omega1, u.conj().T @ ext.gamma, ext.node, ext.flat_tail)
    return ReducedForm(proj, u, u.shape[1], red, sv)


@dataclass(frozen=True)
class PolarFactors:
    """Factors of ``Gamma = m_G^{-1/2} T`` with ``T T^H = I``.

    ``T = (Gamma Gamma^H)^{-1/2} Gamma`` and ``m_G = (Gamma Gamma^H)^{-1}``,
    so that ``T M^{-1/2} = Gamma`` for ``M = diag(m_G, m1)`` in coordinates
    where ``T = [I 0]``. ``kernel_basis`` spans ``Ker Gamma``.
    """

    T: np.ndarray
    m_G: np.ndarray
    gram: np.ndarray
    kernel_basis: Optional[np.ndarray] = None


def polar_truncation(gamma, eps: float = 1e-12, kernel_basis: bool = False) -> PolarFactors:
    """Polar factors of a coupling matrix with full row rank.

    Parameters
    ----------
    gamma : array_like, shape (d, M)
    eps : float
        Smallest admissible eigenvalue of ``Gamma Gamma^H`` relative to the
        largest.
    kernel_basis : bool
        Also return an orthonormal basis of ``Ker Gamma`` (costs a full QR).
    """
    g = np.atleast_2d(np.asarray(gamma, dtype=complex))
    gram = hermitian_part(g @ g.conj().T)
    vals, vecs = np.linalg.eigh(gram)
    if vals.size == 0 or vals[-1] <= 0 or vals[0] < eps * vals[-1]:
        raise ValueError("Gamma Gamma^H is not uniformly positive; "
                         "reduce to the range of Gamma first")
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.conj().T
    T = inv_sqrt @ g
    m_G = hermitian_part((vecs / vals) @ vecs.conj().T)
    kb = None
    if kernel_basis:
        q = np.linalg.qr(T.conj().T, mode="complete")[0]
        kb = q[:, g.shape[0]:]
    return PolarFactors(T, m_G, gram, kb)


# --------------------------------------------------------------------------
# modal form used by the simulators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModalForm:
    """A block system written in the eigenbasis of ``M^{-1/2} Acal M^{-1/2}``.

    With ``c = Q^H M^{1/2} V`` the dynamics read ``c' = -i diag(freqs) c + R^H f``,
    the observable is ``v = R c`` and the energy is ``|c|^2 / 2``.

    Attributes
    ----------
    freqs : ndarray (n,)
    readout : ndarray (d, n)
        ``R``.
    memory_readout : ndarray (d, n)
        ``K`` with ``(a * v)(t) = i K c(t)``: the memory force acting on the
        observable coordinates (``i sqrt(m1) Gamma w`` in the block layout).
    mass : ndarray (d, d)
        Observable mass, used to map an initial velocity to ``c``.
    hidden : ndarray (M, n) or None
        ``w = hidden @ c`` when requested.
    """

    freqs: np.ndarray
    readout: np.ndarray
    memory_readout: np.ndarray
    mass: np.ndarray
    hidden: Optional[np.ndarray] = None
    method: str = "dense"

    def initial_state(self, v0) -> np.ndarray:
        """Modal coordinates of ``V = (v0, 0)`` (``T^H v0`` for spectral systems)."""
        v0 = np.asarray(v0, dtype=complex).ravel()
        return self.readout.conj().T @ (self.mass @ v0)


def _arrowhead_layout(At: np.ndarray, G: np.ndarray):
    """Find an observable index whose removal leaves a diagonal matrix."""
    d = At.shape[0]
    for h in range(d):
        others = [i for i in range(d) if i != h]
        sub = At[np.ix_(others, others)]
        if np.any(sub - np.diag(np.diag(sub)) != 0):
            continue
        if others and np.any(G[others] != 0):
            continue
        return h, others
    return None


def modal_form(blk, hidden: bool = False) -> ModalForm:
    """Eigen-structure of a block system for exact propagation.

    Standard block systems whose scaled generator is an arrowhead matrix (one
    observable coordinate couples to everything else) are diagonalised with
    the O(n^2) secular solver; other layouts fall back to a dense Hermitian
    eigendecomposition.
    """
    if isinstance(blk, SpectralBlockSystem):
        R = blk.T / np.sqrt(blk.mu)
        lam = blk.frequencies.copy()
        A = blk.mu * (blk.T * lam[None, :]) @ blk.T.conj().T
        # from v' = R(-i lam c + R^H f) and m = mu: mu v' = -i A v - i K c + f
        K = blk.mu * R * lam[None, :] - A @ R
        hid = np.eye(blk.size, dtype=complex) / np.sqrt(blk.mu) if hidden else None
        return ModalForm(lam, R, K, blk.observable_mass, hid, "diagonal")

    d, M = blk.d, blk.ext.hidden_dim
    mis = herm_inv_sqrt(blk.m)
    msq = herm_sqrt(blk.m)
    At = hermitian_part(mis @ blk.A @ mis)
    G = mis @ blk.ext.gamma                       # scaled hidden coupling
    gam = blk.ext.gamma
    s1 = np.sqrt(blk.m1)
    layout = _arrowhead_layout(At, G) if M > 0 else None

    if layout is not None:
        h, others = layout
        tail_w = np.concatenate([np.real(np.diag(At)[others]), blk.ext.omega1])
        tail_g = np.concatenate([At[others, h], G[h].conj()])
        eig = bordered_eigh(float(np.real(At[h, h])), tail_g, tail_w)
        n = eig.values.size
        no = len(others)
        obs = np.zeros((d, n), dtype=complex)
        obs[h] = eig.head
        if no:
            sel = np.zeros((no, tail_w.size))
            sel[np.arange(no), np.arange(no)] = 1.0
            obs[others] = eig.tail_dot(sel)
        R = mis @ obs
        row = np.concatenate([np.zeros(no), G[h]])
        gq = np.zeros((d, n), dtype=complex)
        gq[h] = eig.tail_dot(row[None, :])[0]
        Gr = msq @ gq
        hid = None
        if hidden:
            sel = np.zeros((M, tail_w.size))
            sel[np.arange(M), no + np.arange(M)] = 1.0
            hid = eig.tail_dot(sel) / s1
        return ModalForm(eig.values, R, Gr, blk.m, hid, "arrowhead")

    # dense fallback on the scaled generator
    n = d + M
    Am = np.zeros((n, n), dtype=complex)
    Am[:d, :d] = At
    Am[:d, d:] = G
    Am[d:, :d] = G.conj().T
    Am[np.arange(d, n), np.arange(d, n)] = blk.ext.omega1
    if np.all(Am.imag == 0):
        lam, Q = sla.eigh(Am.real)
        Q = Q.astype(complex)
    else:
        lam, Q = sla.eigh(Am)
    R = mis @ Q[:d]
    Gr = gam @ Q[d:] if M else np.zeros((d, n), dtype=complex)
    hid = Q[d:] / s1 if hidden else None
    return ModalForm(lam, R, Gr, blk.m, hid, "dense")


# --------------------------------------------------------------------------
# admittance scheme
# --------------------------------------------------------------------------

def _richardson_inf(func, etas):
    """Limit of ``func(eta)`` as ``eta -> inf`` assuming a series in ``1/eta``."""
    vals = [func(e) for e in etas]
    if len(vals) == 1:
        return vals[0], np.inf
    e1, e2 = etas[-2], etas[-1]
    lim = (e2 * vals[-1] - e1 * vals[-2]) / (e2 - e1)
    change = np.linalg.norm(lim - vals[-1], ord=2) / max(np.linalg.norm(lim, ord=2), 1e-300)
    return lim, change


def _locate_atoms(adm: HerglotzEvaluator, grid: SpectralGrid, bad: np.ndarray, etas):
    """Positions and weights of point masses near flagged grid nodes."""
    from scipy.optimize import minimize_scalar

    # a much smaller offset sharpens the peak, so the maximiser is more precise
    eta = 1e-3 * min(etas)
    atoms = []
    if bad.size == 0:
        return atoms
    # group consecutive flagged nodes
    groups = np.split(bad, np.flatnonzero(np.diff(bad) > 1) + 1)
    for grp in groups:
        lo = grid.nodes[grp[0]] - grid.weights[grp[0]]
        hi = grid.nodes[grp[-1]] + grid.weights[grp[-1]]

        def neg_peak(s):
            return -np.linalg.norm(hermitian_part(adm(s + 1j * eta)), ord=2)

        s0 = grid.nodes[grp][np.argmin([neg_peak(s) for s in grid.nodes[grp]])]
        res = minimize_scalar(neg_peak, bounds=(max(lo, s0 - grid.weights[grp].max()),
                                                min(hi, s0 + grid.weights[grp].max())),
                              method="bounded", options={"xatol": 1e-13 * max(1.0, abs(s0))})
        s0 = float(res.x)
        e1, e2 = min(etas) * 2, min(etas)
        for _ in range(3):
            w1 = e1 * hermitian_part(adm(s0 + 1j * e1))
            w2 = e2 * hermitian_part(adm(s0 + 1j * e2))
            weight = hermitian_part(2 * w2 - w1)
            # near the atom adm ~ i W / (zeta - s0): solve for s0 from the traces
            zeta = s0 + 1j * eta
            s0 = float(np.real(zeta - 1j * np.trace(weight) / np.trace(adm(zeta))))
        atoms.append((s0, weight))
    return atoms


def build_from_admittance(adm: HerglotzEvaluator, grid: SpectralGrid, etas=(1e-3, 5e-4),
                          m1: float = 1.0, mass_etas=(1e4, 2e4), probes=None,
                          tol_build: float = 1e-2, eps_rank: float = EPS_RANK,
                          max_atoms: int = 8) -> BlockSystem:
    """Block system whose observable admittance is ``adm``.

    The admittance is written as ``i sum_k W_k / (zeta - sigma_k)`` from its
    boundary density (point masses are located and split off first), the
    couplings ``Gamma_A`` of that sum are polar-decomposed, and the result is
    expressed in the standard block layout with ``m = (Gamma_A Gamma_A^H)^{-1}``.

    Parameters
    ----------
    adm : HerglotzEvaluator
        Admittance-kind evaluator.
    grid : SpectralGrid
        Cells for the continuous part of the spectrum.
    etas : sequence of float
        Offsets for the boundary extrapolation.
    m1 : float
        Hidden mass scale.
    mass_etas : sequence of float
        Large offsets used to check ``eta * adm(i eta) -> m^{-1}``.
    probes : array_like, optional
        Points where the factorisation is checked (a fixed random set by
        default).
    tol_build : float
        Largest accepted relative factorisation error on the probes.
    max_atoms : int
        Most point masses split off before the inversion is given up.
    """
    if adm.kind != "admittance":
        raise ValueError("build_from_admittance needs an admittance-kind evaluator")
    if probes is None:
        probes = upper_half_plane_probes(40, seed=7, log_im_range=(-0.5, 1.0))
    rep = check_admittance_pdc(adm, probes)
    if not rep.passed:
        raise ValueError(f"admittance violates Re >= 0 (worst {rep.worst_value:.3e} "
                         f"at {rep.worst_location})")
    minv_lim, _ = _richardson_inf(lambda e: e * adm(1j * e), list(mass_etas))
    minv_lim = hermitian_part(minv_lim)
    if np.linalg.eigvalsh(minv_lim).min() <= 1e-12 * max(np.abs(minv_lim).max(), 1e-300):
        raise ValueError("lim eta*adm(i eta) is not positive definite; reduce first")

    # typical density if the whole mass were spread over the grid
    span = grid.nodes[-1] - grid.nodes[0] + grid.weights[0] if len(grid) else 1.0
    dscale = float(np.linalg.norm(minv_lim, ord=2)) / span
    # split off point masses one at a time, strongest first: cells next to an
    # atom are flagged too and would otherwise yield spurious small atoms
    atoms = []
    for _ in range(max_atoms + 1):
        shifted = HerglotzEvaluator(
            lambda z, _at=tuple(atoms): adm(z) - sum(1j * w / (z - s) for s, w in _at),
            adm.dim, "admittance")
        try:
            dens = stieltjes_invert(shifted, grid, etas, scale=dscale)
            break
        except SpectralInversionError as exc:
            found = _locate_atoms(shifted, grid, exc.bad_nodes, etas)
            strength = [np.linalg.eigvalsh(w).max() for _, w in found]
            if not found or max(strength) <= 0 or len(atoms) == max_atoms:
                raise
            atoms.append(found[int(np.argmax(strength))])
    # nodes carrying a negligible share of the total mass are round-off
    cell = np.linalg.norm(dens.masses(), ord=2, axis=(1, 2)) if len(dens) else np.zeros(0)
    keep = cell > 1e-9 * float(np.linalg.norm(minv_lim, ord=2))
    dens = SpectralDensity(dens.nodes[keep], dens.weights[keep], dens.values[keep])

    d = adm.dim
    ext = build_from_density(dens, eps_rank=eps_rank)
    cols = [ext.gamma]
    oms = [ext.omega1]
    for s0, w in atoms:
        f = _factor_psd(w, eps_rank, 0.0)
        cols.append(f)
        oms.append(np.full(f.shape[1], s0))
    gam = np.concatenate(cols, axis=1)
    om = np.concatenate(oms)
    order = np.argsort(om, kind="stable")
    gam, om = gam[:, order], om[order]
    blk = _block_from_spectral(gam, om, m1)

    zs = np.asarray(probes)
    errs = [np.linalg.norm(adm(z) - block_admittance(blk, z), ord=2) / np.linalg.norm(adm(z), ord=2)
            for z in zs]
    mass_err = np.linalg.norm(np.linalg.inv(blk.m) - minv_lim, ord=2) / np.linalg.norm(minv_lim, ord=2)
    info = {"factorization_error": float(max(errs)), "mass_limit_error": float(mass_err),
            "atoms": [(float(s), np.asarray(w).tolist()) for s, w in atoms],
            "continuous_nodes": int(len(dens))}
    if max(errs) > tol_build:
        raise ValueError(f"admittance factorisation error {max(errs):.3e} exceeds {tol_build:.1e}")
    return BlockSystem(blk.m, blk.A, blk.ext, blk.m1, info)


def _block_from_spectral(gam: np.ndarray, om: np.ndarray, m1: float) -> BlockSystem:
    """Standard block layout of ``c' = -i diag(om) c + Gamma^H f``, ``v = Gamma c``."""
    d, n = gam.shape
    pol = polar_truncation(gam)
    m = pol.m_G
    msq = herm_sqrt(m)
    if n == d:
        # no hidden space: Omega' is the full generator
        W = pol.T.conj().T
        A = hermitian_part(msq @ (W.conj().T * om[None, :]) @ W @ msq)
        return BlockSystem(m, A, Extension.empty(d), m1)
    if d == 1:
        q = pol.T[0].conj()                       # unit vector, first column of W
        z = np.abs(q) ** 2
        a00 = float(np.sum(z * om))
        A = msq @ np.array([[a00]]) @ msq
        live = z > 1e-300
        if np.count_nonzero(live) < n or np.any(np.diff(om) <= 0):
            return _block_dense(pol, om, m, msq, m1)
        mu, cpl, _ = compression_eigh(q, om)
        gamma = msq @ cpl[None, :].astype(complex)
        return BlockSystem(m, A, Extension(mu, gamma), m1)
    return _block_dense(pol, om, m, msq, m1)


def _block_dense(pol: PolarFactors, om, m, msq, m1) -> BlockSystem:
    d = pol.T.shape[0]
    q = np.linalg.qr(pol.T.conj().T, mode="complete")[0]
    W0 = pol.T.conj().T                               # first d columns
    Wp = q[:, d:]                                     # orthonormal complement
    # make sure the complement is orthogonal to W0 exactly
    Wp = Wp - W0 @ (W0.conj().T @ Wp)
    Wp = np.linalg.qr(Wp)[0]
    o00 = hermitian_part((W0.conj().T * om[None, :]) @ W0)
    o01 = (W0.conj().T * om[None, :]) @ Wp
    o11 = hermitian_part((Wp.conj().T * om[None, :]) @ Wp)
    lam, Y = np.linalg.eigh(o11)
    A = hermitian_part(msq @ o00 @ msq)
    gamma = msq @ o01 @ Y
    return BlockSystem(m, A, Extension(lam, gamma), m1)


@dataclass(frozen=True)
class RecoveredTriplet:
    """``(m, A, a_hat)`` read off an admittance, with convergence diagnostics."""

    m: np.ndarray
    A: np.ndarray
    kernel: HerglotzEvaluator
    info: dict = field(default_factory=dict, compare=False)


def admittance_recover(adm: HerglotzEvaluator, etas=(1e3, 2e3), tol: float = 1e-3,
                       probes=None) -> RecoveredTriplet:
    """Recover mass, generator and kernel transform from an admittance.

    Along the imaginary axis ``adm(i eta)^{-1} = eta m + i A + a_hat(i eta)``,
    so ``eta adm(i eta) -> m^{-1}`` and the anti-Hermitian part of the inverse
    tends to ``i A``. Both limits are Richardson-extrapolated in ``1/eta``;
    the kernel transform is then ``a_hat(zeta) = i (zeta m - A) + adm(zeta)^{-1}``.

    Parameters
    ----------
    adm : HerglotzEvaluator
        Admittance-kind evaluator.
    etas : sequence of float
        Increasing large offsets; the last two drive the extrapolation.
    tol : float
        Largest accepted relative change between the extrapolated limit and
        the last raw estimate.
    probes : array_like, optional
        Points where the identity ``adm = i [zeta m - A + i a_hat]^{-1}`` is
        re-checked.
    """
    etas = sorted(float(e) for e in etas)
    if len(etas) < 2 or etas[0] <= 0:
        raise ValueError("need at least two positive offsets")

    def scaled(e):
        return e * adm(1j * e)

    minv, ch_m = _richardson_inf(scaled, etas)
    minv = hermitian_part(minv)
    top = float(np.linalg.norm(minv, ord=2))
    if top == 0.0 or np.linalg.eigvalsh(minv).min() <= 1e-12 * top:
        raise ValueError("eta*adm(i eta) has no invertible limit; admittance vanishes or is singular")
    if ch_m > tol:
        raise ValueError(f"mass limit not converged (relative change {ch_m:.2e} > {tol:.1e})")

    def anti(e):
        try:
            inv = np.linalg.inv(adm(1j * e))
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"admittance singular at i*{e:g}") from exc
        return -1j * 0.5 * (inv - inv.conj().T)

    A_raw = anti(etas[-1])
    A, _ = _richardson_inf(anti, etas)
    A = hermitian_part(A)
    m = hermitian_part(np.linalg.inv(minv))
    # A may vanish, so its change is measured against max(|A|, |m| * unit frequency)
    ch_a = float(np.linalg.norm(A - A_raw, ord=2)
                 / max(np.linalg.norm(A, ord=2), np.linalg.norm(m, ord=2)))
    if ch_a > tol:
        raise ValueError(f"generator limit not converged (relative change {ch_a:.2e} > {tol:.1e})")

    def a_hat(zeta):
        return 1j * (zeta * m - A) + np.linalg.inv(adm(zeta))

    kernel = HerglotzEvaluator(a_hat, adm.dim, "kernel")
    if probes is None:
        probes = upper_half_plane_probes(20, seed=3)
    resid = 0.0
    for z in np.asarray(probes):
        back = 1j * np.linalg.inv(z * m - A + 1j * a_hat(z))
        ref = adm(z)
        resid = max(resid, float(np.linalg.norm(back - ref, ord=2) / np.linalg.norm(ref, ord=2)))
    info = {"mass_change": float(ch_m), "generator_change": float(ch_a),
            "identity_residual": resid, "etas": etas}
    return RecoveredTriplet(m, A, kernel, info)
