"""Time-domain simulation of dissipative systems and their extensions.

Two independent routes compute the same observable motion:

* :func:`simulate_direct` integrates ``m v' = -i A v - (a * v) + f`` with the
  memory convolution evaluated on the time grid;
* :func:`simulate_extended` propagates a conservative block system, either
  exactly in its eigenbasis or with the energy-conserving trapezoid rule.

Both produce a :class:`Trajectory` carrying the energy and work ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .extension import BlockSystem, ModalForm, SpectralBlockSystem, modal_form
from .spectra import DispersiveSystem, HerglotzEvaluator

__all__ = [
    "SimulationError",
    "ForcingSignal",
    "Trajectory",
    "Ledger",
    "DecayReport",
    "admittance_from_triplet",
    "simulate_direct",
    "simulate_extended",
    "energy_ledger",
    "decay_report",
    "DEFAULT_MEMORY_CAP",
]

DEFAULT_MEMORY_CAP = 512 * 2 ** 20   # bytes of recorded hidden states
GROWTH_LIMIT = 1e6
_CHUNK = 256


class SimulationError(RuntimeError):
    """Raised when a run becomes unstable or violates its step-size contract."""


# --------------------------------------------------------------------------
# forcing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForcingSignal:
    """External force on the observable coordinates.

    The force is either a closed form ``func(t) -> (n, d)`` or uniform samples
    interpolated linearly; outside ``[t_on, t_off]`` it is zero. An optional
    impulse ``F0 delta(t - t_on)`` models a pulse.
    """

    dim: int
    t_on: float = 0.0
    t_off: float = np.inf
    func: Optional[Callable] = None
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    impulse: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("forcing dimension must be positive")
        if not self.t_off >= self.t_on:
            raise ValueError("forcing support must satisfy t_on <= t_off")
        if self.func is not None and self.values is not None:
            raise ValueError("give either a closed form or samples, not both")
        if self.values is not None:
            t = np.asarray(self.times, dtype=float)
            vals = np.asarray(self.values, dtype=complex).reshape(t.size, -1)
            if vals.shape[1] != self.dim:
                raise ValueError(f"forcing samples must have {self.dim} components")
            if t.size < 2:
                raise ValueError("need at least two forcing samples")
            step = np.diff(t)
            if np.any(step <= 0) or np.ptp(step) > 1e-9 * step.mean():
                raise ValueError("forcing samples must lie on a uniform increasing grid")
            outside = (t < self.t_on) | (t > self.t_off)
            if np.any(vals[outside] != 0):
                raise ValueError("forcing samples are nonzero outside the declared support")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", vals)
        if self.impulse is not None:
            imp = np.asarray(self.impulse, dtype=complex).ravel()
            if imp.size != self.dim:
                raise ValueError(f"impulse must have {self.dim} components")
            object.__setattr__(self, "impulse", imp)

    @classmethod
    def zero(cls, dim: int) -> "ForcingSignal":
        return cls(dim, 0.0, 0.0)

    @classmethod
    def from_samples(cls, times, values, t_on=None, t_off=None) -> "ForcingSignal":
        t = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=complex)
        if vals.ndim == 1:
            vals = vals[:, None]
        t_on = float(t[0]) if t_on is None else float(t_on)
        t_off = float(t[-1]) if t_off is None else float(t_off)
        return cls(vals.shape[1], t_on, t_off, times=t, values=vals)

    @classmethod
    def from_function(cls, func, dim: int, t_on: float = 0.0, t_off: float = np.inf) -> "ForcingSignal":
        return cls(dim, float(t_on), float(t_off), func=func)

    @classmethod
    def pulse(cls, F0, t_on: float = 0.0) -> "ForcingSignal":
        """Impulse ``F0 delta(t - t_on)`` and nothing else."""
        F0 = np.atleast_1d(np.asarray(F0, dtype=complex))
        return cls(F0.size, float(t_on), float(t_on), impulse=F0)

    @classmethod
    def gaussian(cls, direction, center: float, width: float, carrier: float = 0.0,
                 cutoff: float = 8.0) -> "ForcingSignal":
        """``direction * exp(-i carrier t) * exp(-((t - center)/width)^2)``.

        The support is cut at ``cutoff`` widths from the centre (and at t=0),
        where the envelope is below ``exp(-cutoff^2)``.
        """
        u = np.atleast_1d(np.asarray(direction, dtype=complex))
        lo = max(0.0, center - cutoff * width)
        hi = center + cutoff * width

        def func(t):
            t = np.asarray(t, dtype=float)
            env = np.exp(-(((t - center) / width) ** 2)) * np.exp(-1j * carrier * t)
            return env[:, None] * u[None, :]

        return cls(u.size, lo, hi, func=func)

    @property
    def is_pulse(self) -> bool:
        return self.impulse is not None and self.func is None and self.values is None

    def __call__(self, t) -> np.ndarray:
        """Regular part of the force at times ``t`` as ``(n, d)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t.size, self.dim), dtype=complex)
        inside = (t >= self.t_on) & (t <= self.t_off)
        if not np.any(inside):
            return out
        if self.func is not None:
            out[inside] = np.asarray(self.func(t[inside]), dtype=complex).reshape(-1, self.dim)
        elif self.values is not None:
            ti = t[inside]
            for k in range(self.dim):
                col = self.values[:, k]
                out[inside, k] = (np.interp(ti, self.times, col.real, left=0.0, right=0.0)
                                  + 1j * np.interp(ti, self.times, col.imag, left=0.0, right=0.0))
        return out


# --------------------------------------------------------------------------
# trajectories and ledgers
# --------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled motion on the uniform grid ``t = n * dt``.

    Attributes
    ----------
    t : ndarray (n,)
    v : ndarray (n, d)
        Observable velocity; at an impulse time the post-jump value.
    f : ndarray (n, d)
        Regular part of the force on the grid.
    memory : ndarray (n, d)
        Friction force ``(a * v)(t)`` including the instantaneous part.
    energy : ndarray (n,)
        ``(v, m v)/2`` for direct runs, ``(V, M V)/2`` for extended runs.
    work_ext, work_fric : ndarray (n,)
        Cumulative work of the external force and of friction.
    w : ndarray (k, M), optional
        Hidden coordinates at ``t[w_index]``.
    impulses : list of (int, ndarray, ndarray)
        Grid index, strength ``F0`` and velocity jump of every impulse.
    """

    t: np.ndarray
    v: np.ndarray
    f: np.ndarray
    memory: np.ndarray
    energy: np.ndarray
    work_ext: np.ndarray
    work_fric: np.ndarray
    method: str
    w: Optional[np.ndarray] = None
    w_index: Optional[np.ndarray] = None
    impulses: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.t.size
        for name in ("v", "f", "memory", "energy", "work_ext", "work_fric"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"trajectory field {name} has the wrong length")
        if self.w is not None and (self.w_index is None or self.w.shape[0] != self.w_index.size):
            raise ValueError("hidden states and their indices disagree")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def dim(self) -> int:
        return self.v.shape[1]

    def speed(self) -> np.ndarray:
        """``||v(t)||`` on the grid."""
        return np.linalg.norm(self.v, axis=1)


def _n_steps(t_end: float, dt: float) -> int:
    if not dt > 0 or not t_end >= 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be an integer multiple of dt")
    return n


def _impulse_index(forcing: ForcingSignal, dt: float, n: int):
    if forcing.impulse is None:
        return None
    k = int(round(forcing.t_on / dt))
    if abs(k * dt - forcing.t_on) > 1e-9 * max(1.0, forcing.t_on) or k > n:
        raise ValueError("impulse time must lie on the simulation grid")
    return k


def _work_series(t, v, f, memory, impulses):
    """Cumulative external and friction work on the grid.

    External work uses the trapezoid rule plus ``Re(F0, (v- + v+)/2)`` at
    impulses. The friction work is ``-(D_{n-1} + D_n)/2`` with the rectangle
    sums ``D_n = h sum_{k=1..n} Re(v_k, memory_k)``. For the direct scheme
    started from rest ``D_n`` is a Gram form of the kernel, so a dissipative
    kernel makes it nonnegative, and the average is second order accurate.
    """
    n = t.size
    h = float(t[1] - t[0]) if n > 1 else 0.0
    pw = np.real(np.sum(v.conj() * f, axis=1))
    wext = np.zeros(n)
    wfr = np.zeros(n)
    if n > 1:
        wext[1:] = np.cumsum(0.5 * h * (pw[1:] + pw[:-1]))
        pf = np.real(np.sum(v.conj() * memory, axis=1))
        D = np.concatenate([[0.0], np.cumsum(h * pf[1:])])
        wfr[1:] = -0.5 * (D[:-1] + D[1:])
    for k, F0, dv in impulses:
        wext[k:] += float(np.real(np.vdot(F0, v[k] - 0.5 * dv)))
    return wext, wfr


@dataclass(frozen=True)
class Ledger:
    """Energy bookkeeping recomputed from a trajectory.

    ``residual = energy - energy[0] - work_ext - work_fric`` for direct runs
    and ``energy - energy[0] - work_ext`` for extended runs, whose energy
    already includes the hidden part.
    """

    energy: np.ndarray
    observable_energy: np.ndarray
    work_ext: np.ndarray
    work_fric: np.ndarray
    residual: np.ndarray


def _system_mass(system) -> np.ndarray:
    if isinstance(system, (BlockSystem, SpectralBlockSystem)):
        return system.observable_mass
    return system.m


def _quad_energy(v, m):
    return 0.5 * np.real(np.einsum("na,ab,nb->n", v.conj(), m, v))


def energy_ledger(traj: Trajectory, system) -> Ledger:
    """Recompute the energy and work series of ``traj`` from its states.

    Parameters
    ----------
    traj : Trajectory
    system : DispersiveSystem, BlockSystem or SpectralBlockSystem
        The system that produced ``traj``. For extended runs the total energy
        is rebuilt from the hidden states when every step was recorded,
        otherwise the stored series is used.
    """
    m = _system_mass(system)
    obs = _quad_energy(traj.v, m)
    wext, wfr = _work_series(traj.t, traj.v, traj.f, traj.memory, traj.impulses)
    extended = isinstance(system, (BlockSystem, SpectralBlockSystem))
    if not extended:
        energy = obs
        residual = energy - energy[0] - wext - wfr
    else:
        full = traj.w is not None and traj.w_index.size == traj.t.size
        if full and isinstance(system, BlockSystem):
            energy = obs + 0.5 * system.m1 * np.sum(np.abs(traj.w) ** 2, axis=1)
        elif full:
            energy = 0.5 * system.mu * np.sum(np.abs(traj.w) ** 2, axis=1)
        else:
            energy = traj.energy.copy()
        residual = energy - energy[0] - wext
    return Ledger(energy, obs, wext, wfr, residual)


# --------------------------------------------------------------------------
# admittance of a triplet
# --------------------------------------------------------------------------

def admittance_from_triplet(sys: DispersiveSystem) -> HerglotzEvaluator:
    """Admittance ``i [zeta m - A + i a_hat(zeta)]^{-1}`` of a dispersive system.

    The kernel transform comes from the kernel's closed form when present,
    otherwise from numerical Laplace integration.
    """
    from .spectra import kernel_transform

    ahat = kernel_transform(sys.kernel)
    m, A = sys.m, sys.A

    def adm(zeta):
        mat = zeta * m - A + 1j * ahat(zeta)
        try:
            return 1j * np.linalg.inv(mat)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"zeta*m - A + i*a_hat is singular at zeta={zeta}; "
                             "the kernel probably violates the dissipation condition") from exc

    return HerglotzEvaluator(adm, sys.dim, "admittance")


# --------------------------------------------------------------------------
# direct simulation
# --------------------------------------------------------------------------

def _direct_max_frequency(sys: DispersiveSystem) -> float:
    minv = np.linalg.inv(sys.m)
    mmin = float(np.linalg.eigvalsh(sys.m).min())
    rot = float(np.max(np.abs(np.linalg.eigvals(minv @ sys.A)))) if sys.dim else 0.0
    k = sys.kernel
    a0 = float(np.linalg.norm(k(0.0)[0], ord=2)) if k.has_memory else 0.0
    damp = float(np.linalg.norm(k.alpha_inf, ord=2)) / mmin
    return max(rot, k.bandwidth, np.sqrt(max(a0, k.alpha_sup if k.has_memory else 0.0) / mmin), damp)


def simulate_direct(sys: DispersiveSystem, forcing: Optional[ForcingSignal], t_end: float,
                    dt: float, v0=None, max_step_phase: float = 0.1,
                    kernel_tol: float = 1e-14) -> Trajectory:
    """Integrate the memory equation with the implicit trapezoid rule.

    The convolution is discretised with trapezoid weights on the same grid,
    so the implicit step only involves ``alpha(0)``; the instantaneous part
    ``alpha_inf`` enters algebraically. The run starts from rest at ``t = 0``
    unless ``v0`` is given (flagged in ``meta``).

    Parameters
    ----------
    sys : DispersiveSystem
    forcing : ForcingSignal or None
    t_end, dt : float
        ``t_end`` must be a multiple of ``dt``.
    v0 : array_like, optional
        Velocity at ``t = 0`` overriding the rest start.
    max_step_phase : float
        Largest accepted ``dt * max_frequency``.
    kernel_tol : float
        The memory is truncated where the declared kernel envelope falls
        below this fraction of ``alpha_sup``.
    """
    d = sys.dim
    forcing = ForcingSignal.zero(d) if forcing is None else forcing
    if forcing.dim != d:
        raise ValueError("forcing dimension does not match the system")
    n = _n_steps(t_end, dt)
    fmax = _direct_max_frequency(sys)
    if dt * fmax > max_step_phase:
        raise SimulationError(f"dt={dt:g} too coarse: dt*max_frequency={dt * fmax:.3g} "
                              f"exceeds {max_step_phase:g}")
    h = float(dt)
    t = h * np.arange(n + 1)
    f = forcing(t)
    kern = sys.kernel
    m, A, ainf = sys.m, sys.A, kern.alpha_inf
    B = 1j * A + ainf

    # memory horizon in steps
    hor = kern.horizon
    if kern.has_memory and np.isinf(hor) and kern.decay_rate > 0:
        hor = np.log(1.0 / kernel_tol) / kern.decay_rate
    nh = n if np.isinf(hor) else min(n, int(np.ceil(hor / h)))
    alpha = kern(h * np.arange(nh + 1)) if kern.has_memory else np.zeros((nh + 1, d, d), complex)
    tail = kern.tail_bound(0.0, hor) if kern.has_memory and not np.isinf(hor) else 0.0
    a0 = alpha[0]

    lhs = m + 0.5 * h * B + 0.25 * h * h * a0
    lhs_inv = np.linalg.inv(lhs)
    v = np.zeros((n + 1, d), dtype=complex)
    mem = np.zeros((n + 1, d), dtype=complex)
    impulses = []
    kimp = _impulse_index(forcing, h, n)
    minv = np.linalg.inv(m)
    override = v0 is not None
    if override:
        v[0] = np.asarray(v0, dtype=complex).ravel()
    if kimp == 0:
        dv = minv @ forcing.impulse
        v[0] += dv
        impulses.append((0, forcing.impulse.copy(), dv))
    mem[0] = ainf @ v[0]
    # reversed copy so that alpha_{a}, ..., alpha_{1} is the contiguous arev[nh-a:nh]
    arev = np.ascontiguousarray(alpha[::-1])
    scalar = d == 1
    ref = float(np.linalg.norm(v[0]))
    forced_until = forcing.t_off if (forcing.func is not None or forcing.values is not None) else -1.0
    conv_prev = np.zeros(d, dtype=complex)       # C_n
    for k in range(n):
        # known part of C_{k+1}: h [alpha_{k+1} v_0 / 2 + sum_{j=1..k} alpha_{k+1-j} v_j]
        k1 = k + 1
        known = np.zeros(d, dtype=complex)
        if k1 <= nh:
            known += 0.5 * (alpha[k1] @ v[0])
        lo = max(1, k1 - nh)
        if k >= lo:
            seg = arev[nh - (k1 - lo): nh]
            if scalar:
                known[0] += np.dot(seg[:, 0, 0], v[lo:k1, 0])
            else:
                known += np.einsum("jab,jb->a", seg, v[lo:k1])
        known *= h
        rhs = m @ v[k] + 0.5 * h * (-(B @ v[k]) - conv_prev + f[k] - known + f[k1])
        v[k1] = lhs_inv @ rhs
        if kimp is not None and kimp == k1:
            dv = minv @ forcing.impulse
            v[k1] += dv
            impulses.append((k1, forcing.impulse.copy(), dv))
        conv_prev = known + 0.5 * h * (a0 @ v[k1])
        mem[k1] = conv_prev + ainf @ v[k1]
        nv = float(np.linalg.norm(v[k1]))
        if not np.isfinite(nv):
            raise SimulationError(f"non-finite state at t={t[k1]:g}")
        if t[k1] <= forced_until or (kimp is not None and k1 <= kimp):
            ref = max(ref, nv)
        elif nv > GROWTH_LIMIT * max(ref, 1e-300) and ref > 0:
            raise SimulationError(f"norm grew by more than {GROWTH_LIMIT:g}x after forcing ended "
                                  f"(t={t[k1]:g}); the kernel is probably not dissipative")
    energy = _quad_energy(v, m)
    wext, wfr = _work_series(t, v, f, mem, impulses)
    meta = {"v0_override": bool(override), "memory_steps": int(nh), "memory_tail_bound": float(tail),
            "max_frequency": float(fmax)}
    return Trajectory(t, v, f, mem, energy, wext, wfr, "direct", impulses=impulses, meta=meta)


# --------------------------------------------------------------------------
# extended simulation
# --------------------------------------------------------------------------

def _phi12(z: np.ndarray):
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2`` without cancellation."""
    small = np.abs(z) < 0.1
    zs = np.where(small, 0.1, z)
    e = np.exp(zs)
    p1 = (e - 1.0) / zs
    p2 = (e - 1.0 - zs) / zs ** 2
    if np.any(small):
        zz = z[small]
        s1 = np.zeros_like(zz)
        s2 = np.zeros_like(zz)
        term1 = np.ones_like(zz)           # z^j / (j+1)!
        term2 = 0.5 * np.ones_like(zz)     # z^j / (j+2)!
        for j in range(12):
            s1 += term1
            s2 += term2
            term1 = term1 * zz / (j + 2)
            term2 = term2 * zz / (j + 3)
        p1[small] = s1
        p2[small] = s2
    return p1, p2


def simulate_extended(blk, forcing: Optional[ForcingSignal], t_end: float, dt: float,
                      method: str = "eigen", v0=None, record_hidden: bool = False,
                      hidden_stride: int = 1, memory_cap: int = DEFAULT_MEMORY_CAP,
                      modal: Optional[ModalForm] = None) -> Trajectory:
    """Propagate a conservative block system from rest.

    Parameters
    ----------
    blk : BlockSystem or SpectralBlockSystem
    forcing : ForcingSignal or None
        Acts on the observable coordinates through ``T^H``.
    t_end, dt : float
    method : {"eigen", "trapezoid"}
        ``eigen`` propagates exactly in the eigenbasis, with the forced term
        integrated in closed form for piecewise-linear forcing. ``trapezoid``
        is the Cayley (implicit midpoint) step, second order and exactly
        energy conserving.
    v0 : array_like, optional
        Initial observable velocity with the hidden part at rest (flagged in
        ``meta``).
    record_hidden : bool
        Keep the hidden coordinates every ``hidden_stride`` steps.
    memory_cap : int
        Largest allowed size in bytes of the recorded hidden states.
    modal : ModalForm, optional
        Precomputed eigen-structure for repeated runs of ``eigen``.
    """
    if method not in ("eigen", "trapezoid"):
        raise ValueError(f"unknown method {method!r}; use 'eigen' or 'trapezoid'")
    d = blk.d
    forcing = ForcingSignal.zero(d) if forcing is None else forcing
    if forcing.dim != d:
        raise ValueError("forcing dimension does not match the system")
    n = _n_steps(t_end, dt)
    hidden_stride = max(1, int(hidden_stride))
    rec_idx = np.arange(0, n + 1, hidden_stride) if record_hidden else None
    if record_hidden:
        M = blk.size if isinstance(blk, SpectralBlockSystem) else blk.ext.hidden_dim
        need = rec_idx.size * M * 16
        if need > memory_cap:
            raise MemoryError(f"recording {M} hidden states at {rec_idx.size} times needs "
                              f"{need / 2**20:.0f} MiB, above the cap of {memory_cap / 2**20:.0f} MiB")
    t = dt * np.arange(n + 1)
    f = forcing(t)
    kimp = _impulse_index(forcing, dt, n)

    if method == "eigen" or isinstance(blk, SpectralBlockSystem):
        mf = modal if modal is not None else modal_form(blk, hidden=record_hidden)
        if record_hidden and mf.hidden is None:
            raise ValueError("the supplied modal form carries no hidden readout")
        out = _run_modal(mf, f, t, dt, kimp, forcing.impulse, v0, rec_idx,
                         exact=(method == "eigen"))
    else:
        out = _run_cayley(blk, f, t, dt, kimp, forcing.impulse, v0, rec_idx)
    v, mem, energy, w, impulses = out
    wext, wfr = _work_series(t, v, f, mem, impulses)
    meta = {"v0_override": v0 is not None, "hidden_stride": hidden_stride if record_hidden else 0,
            "size": int(blk.size)}
    return Trajectory(t, v, f, mem, energy, wext, wfr, method, w=w,
                      w_index=rec_idx, impulses=impulses, meta=meta)


def _run_modal(mf: ModalForm, f, t, dt, kimp, F0, v0, rec_idx, exact: bool):
    n = t.size - 1
    d = f.shape[1]
    lam = mf.freqs
    R = mf.readout
    Rh = R.conj().T
    KT = mf.memory_readout.T
    RT = R.T
    c = np.zeros(lam.size, dtype=complex)
    if v0 is not None:
        c = mf.initial_state(v0)
    impulses = []
    v = np.zeros((n + 1, d), dtype=complex)
    mem = np.zeros((n + 1, d), dtype=complex)
    energy = np.zeros(n + 1)
    w = None
    if rec_idx is not None:
        w = np.zeros((rec_idx.size, mf.hidden.shape[0]), dtype=complex)
        hid_T = mf.hidden.T

    def kick(k):
        nonlocal c
        dv = np.linalg.solve(mf.mass, F0)
        c = c + Rh @ F0
        impulses.append((k, F0.copy(), dv))

    def record(k0, cs):
        # cs holds states for steps k0 .. k0 + len(cs) - 1
        v[k0:k0 + cs.shape[0]] = cs @ RT
        mem[k0:k0 + cs.shape[0]] = 1j * (cs @ KT)
        energy[k0:k0 + cs.shape[0]] = 0.5 * np.sum(np.abs(cs) ** 2, axis=1)
        if w is not None:
            sel = rec_idx[(rec_idx >= k0) & (rec_idx < k0 + cs.shape[0])]
            if sel.size:
                pos = np.searchsorted(rec_idx, sel)
                w[pos] = cs[sel - k0] @ hid_T

    if kimp == 0:
        kick(0)
    forced = np.any(f != 0, axis=1)
    z = -1j * lam * dt
    if exact:
        steps = np.arange(1, _CHUNK + 1)
        phase = np.exp(np.outer(steps, z))          # e^{z k}, k = 1..L
        p1, p2 = _phi12(z)
    else:
        # Cayley factor and forcing weight of the trapezoid rule
        cay = (1.0 + 0.5 * z) / (1.0 - 0.5 * z)
        wgt = 0.5 * dt / (1.0 - 0.5 * z)
        steps = np.arange(1, _CHUNK + 1)
        phase = cay[None, :] ** steps[:, None]
    record(0, c[None, :])
    k = 0
    while k < n:
        L = min(_CHUNK, n - k)
        if kimp is not None and k < kimp <= k + L:
            L = kimp - k
        g_force = np.any(forced[k:k + L + 1])
        if g_force:
            g = f[k:k + L + 1] @ Rh.T                  # (L+1, n) = (R^H f_j)^T
            if exact:
                b = dt * (p1[None, :] * g[:-1] + p2[None, :] * (g[1:] - g[:-1]))
            else:
                b = wgt[None, :] * (g[:-1] + g[1:])
            acc = np.cumsum(b / phase[:L], axis=0)    # sum_j e^{-z (j+1)} b_j
            cs = phase[:L] * (c[None, :] + acc)
        else:
            cs = phase[:L] * c[None, :]
        c = cs[-1].copy()
        k += L
        if kimp is not None and k == kimp:
            kick(k)
            cs[-1] = c
        record(k - L + 1, cs)
    return v, mem, energy, w, impulses


def _run_cayley(blk: BlockSystem, f, t, dt, kimp, F0, v0, rec_idx):
    """Trapezoid rule with the hidden block eliminated by a Schur complement.

    In scaled hidden coordinates ``u = sqrt(m1) w`` the step reads
    ``[m + i h A/2 + h^2 S/4] v1 = [m - i h A/2 - h^2 S/4] v0 - i h Gamma D^{-1} u0 + h (f0 + f1)/2``
    with ``D = 1 + i h Omega/2`` and ``S = Gamma D^{-1} Gamma^H``.
    """
    n = t.size - 1
    d = blk.d
    h = dt
    G = blk.ext.gamma
    om = blk.ext.omega1
    s1 = np.sqrt(blk.m1)
    Dinv = 1.0 / (1.0 + 0.5j * h * om)
    Dbar = 1.0 - 0.5j * h * om
    S = (G * Dinv[None, :]) @ G.conj().T
    m, A = blk.m, blk.A
    lhs_inv = np.linalg.inv(m + 0.5j * h * A + 0.25 * h * h * S)
    rmat = m - 0.5j * h * A - 0.25 * h * h * S
    GD = G * Dinv[None, :]
    Gh = G.conj().T
    minv = np.linalg.inv(m)

    v = np.zeros((n + 1, d), dtype=complex)
    mem = np.zeros((n + 1, d), dtype=complex)
    energy = np.zeros(n + 1)
    u = np.zeros(om.size, dtype=complex)
    w = None
    if rec_idx is not None:
        w = np.zeros((rec_idx.size, om.size), dtype=complex)
    impulses = []
    if v0 is not None:
        v[0] = np.asarray(v0, dtype=complex).ravel()
    if kimp == 0:
        dv = minv @ F0
        v[0] += dv
        impulses.append((0, F0.copy(), dv))
    rpos = 0

    def store(k):
        nonlocal rpos
        mem[k] = 1j * (G @ u)
        energy[k] = 0.5 * float(np.real(np.vdot(v[k], m @ v[k]))) + 0.5 * float(np.real(np.vdot(u, u)))
        if w is not None and rpos < rec_idx.size and rec_idx[rpos] == k:
            w[rpos] = u / s1
            rpos += 1

    store(0)
    for k in range(n):
        v1 = lhs_inv @ (rmat @ v[k] - 1j * h * (GD @ u) + 0.5 * h * (f[k] + f[k + 1]))
        u = Dinv * (Dbar * u - 0.5j * h * (Gh @ (v[k] + v1)))
        if kimp is not None and kimp == k + 1:
            dv = minv @ F0
            v1 = v1 + dv
            impulses.append((k + 1, F0.copy(), dv))
        v[k + 1] = v1
        store(k + 1)
    return v, mem, energy, w, impulses


# --------------------------------------------------------------------------
# decay diagnostics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    """Tail behaviour of ``||v(t)||``.

    Attributes
    ----------
    peak : float
        Global maximum of ``||v||``.
    window_sups : list of float
        Sup of ``||v||`` over dyadic windows ending at the last time.
    window_edges : list of (float, float)
    tail_sup : float
        Sup over the last window, relative to ``peak``.
    envelope_rate : float
        Least-squares rate of ``log`` of the window sups against the window
        starts, where a decaying envelope attains its sup (positive for
        decay).
    monotone : bool
        Whether the window sups never increase.
    passed : bool
        ``tail_sup <= fraction``.
    """

    peak: float
    window_sups: list
    window_edges: list
    tail_sup: float
    envelope_rate: float
    monotone: bool
    fraction: float
    passed: bool

    def to_dict(self) -> dict:
        return {"peak": self.peak, "window_sups": list(self.window_sups),
                "window_edges": [list(e) for e in self.window_edges],
                "tail_sup": self.tail_sup, "envelope_rate": self.envelope_rate,
                "monotone": self.monotone, "fraction": self.fraction, "pass": self.passed}


def decay_report(traj: Trajectory, t_tail_start: float, fraction: float = 0.01,
                 windows: int = 4) -> DecayReport:
    """Check that ``||v||`` has died down after ``t_tail_start``.

    The interval from ``t_tail_start`` to the end is split dyadically:
    the last window is the final half, the one before it the preceding
    quarter, and so on (``windows`` pieces in total).
    """
    t = traj.t
    if not (t[0] <= t_tail_start < t[-1]):
        raise ValueError("t_tail_start must lie inside the trajectory")
    speed = traj.speed()
    peak = float(speed.max())
    T0, T1 = float(t_tail_start), float(t[-1])
    span = T1 - T0
    edges = []
    right = T1
    for j in range(windows):
        left = T0 + span / 2 ** (j + 1) if j < windows - 1 else T0
        edges.append((left, right))
        right = left
    edges = edges[::-1]
    sups = []
    for lo, hi in edges:
        sel = (t >= lo) & (t <= hi)
        sups.append(float(speed[sel].max()) if np.any(sel) else 0.0)
    starts = np.array([lo for lo, _ in edges])
    logs = np.log(np.maximum(np.array(sups), 1e-300))
    rate = float(-np.polyfit(starts, logs, 1)[0]) if len(sups) > 1 else 0.0
    tail = sups[-1] / peak if peak > 0 else 0.0
    monotone = bool(np.all(np.diff(sups) <= 1e-12 * max(peak, 1e-300)))
    return DecayReport(peak, sups, edges, float(tail), rate, monotone, float(fraction),
                       bool(peak > 0 and tail <= fraction))
