"""Friction kernels, their transforms and spectral densities.

Conventions
-----------
Velocities evolve as ``m v' = -i A v - (a * v) + f`` with the causal kernel
``a(t) = alpha_inf * delta(t) + alpha(t)``. Its Laplace transform is

    a_hat(zeta) = alpha_inf + int_0^inf exp(i zeta t) alpha(t) dt,  Im zeta > 0,

and a kernel is dissipative exactly when ``Re a_hat >= 0`` in the upper half
plane. A spectral density ``N(sigma)`` is stored as cell values on a grid of
nodes with widths, so that ``N_k * dsigma_k`` is the cell mass. Its Cauchy
transform is ``C(zeta) = sum_k N_k dsigma_k / (sigma_k - zeta)`` and the
density of a kernel satisfies ``a_hat = -i C``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "FrictionKernel",
    "DispersiveSystem",
    "HerglotzEvaluator",
    "SpectralGrid",
    "SpectralDensity",
    "SpectralInversionError",
    "LorentzParams",
    "extend_kernel",
    "laplace_kernel",
    "kernel_transform",
    "cauchy_transform",
    "stieltjes_invert",
    "boundary_density",
    "lorentz_susceptibility",
    "lorentz_chi_time",
    "lorentz_density",
    "lorentz_kernel",
    "lorentz_friction_transform",
    "hermitian_part",
    "anti_hermitian_part",
]

PSD_CLIP = 1e-12      # relative level below which negative eigenvalues are zeroed
PSD_HARD = 1e-6       # relative level beyond which a matrix is rejected


class SpectralInversionError(ValueError):
    """Raised when boundary values cannot be extrapolated to a density."""

    def __init__(self, message, bad_nodes=None):
        super().__init__(message)
        self.bad_nodes = np.asarray([] if bad_nodes is None else bad_nodes)


def hermitian_part(x: np.ndarray) -> np.ndarray:
    """``(x + x^H) / 2`` over the last two axes."""
    return 0.5 * (x + np.swapaxes(x, -1, -2).conj())


def anti_hermitian_part(x: np.ndarray) -> np.ndarray:
    """``(x - x^H) / 2i`` over the last two axes (the "imaginary part")."""
    return (x - np.swapaxes(x, -1, -2).conj()) / 2j


def _as_square(x, name: str, d: Optional[int] = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=complex))
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ValueError(f"{name} must be {d}x{d}, got {x.shape}")
    return x


def _clip_psd(x: np.ndarray, name: str, scale: Optional[float] = None) -> np.ndarray:
    """Hermitize a stack of matrices and zero tiny negative eigenvalues.

    Negative eigenvalues larger than ``PSD_HARD * scale`` in magnitude are an
    error, anything above that is treated as round-off.
    """
    h = hermitian_part(x)
    vals, vecs = np.linalg.eigh(h)
    if scale is None:
        scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    if scale == 0.0:
        return np.zeros_like(h)
    worst = float(vals.min())
    if worst < -PSD_HARD * scale:
        raise ValueError(f"{name} is not positive semidefinite "
                         f"(eigenvalue {worst:.3e}, scale {scale:.3e})")
    if worst >= 0:
        return h
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2).conj()


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FrictionKernel:
    """Causal friction kernel ``alpha_inf * delta + alpha(t)``.

    The regular part is either a closed-form function (``func``) or samples
    on an increasing time grid, linearly interpolated between samples and
    taken as zero after the last sample. Build instances with the class
    methods rather than the raw constructor.

    Attributes
    ----------
    alpha_inf : ndarray
        Hermitian PSD coefficient of the instantaneous part.
    func : callable, optional
        ``func(t) -> (n, d, d)`` for an array of nonnegative times.
    times, samples : ndarray, optional
        Sample grid and values ``(n, d, d)``.
    alpha_sup : float
        Bound on ``sup_t ||alpha(t)||``.
    decay_rate : float
        Declared envelope ``||alpha(t)|| <= alpha_sup * exp(-decay_rate t)``.
    transform : callable, optional
        Exact ``a_hat(zeta)``, including ``alpha_inf``, when known.
    compact : bool
        Sampled kernels only: the kernel really vanishes after the last
        sample, so the horizon adds no tail error.
    bandwidth : float
        Highest angular frequency present in ``alpha``; used for step-size
        checks.
    """

    alpha_inf: np.ndarray
    func: Optional[Callable] = None
    times: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    alpha_sup: float = 0.0
    decay_rate: float = 0.0
    transform: Optional[Callable] = None
    compact: bool = False
    bandwidth: float = 0.0

    def __post_init__(self):
        ainf = _as_square(self.alpha_inf, "alpha_inf")
        object.__setattr__(self, "alpha_inf", _clip_psd(ainf, "alpha_inf"))
        if self.func is not None and self.samples is not None:
            raise ValueError("give either a closed form or samples, not both")
        if self.samples is not None:
            t = np.asarray(self.times, dtype=float)
            a = np.asarray(self.samples, dtype=complex)
            if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0) or t[0] < 0:
                raise ValueError("kernel sample times must be increasing, nonnegative, >= 2 points")
            if a.shape != (t.size, self.dim, self.dim):
                raise ValueError(f"kernel samples must have shape {(t.size, self.dim, self.dim)}")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "samples", a)
            sup = float(np.max(np.linalg.norm(a, ord=2, axis=(1, 2))))
            object.__setattr__(self, "alpha_sup", max(float(self.alpha_sup), sup))
        if self.alpha_sup < 0 or self.decay_rate < 0:
            raise ValueError("alpha_sup and decay_rate must be nonnegative")

    # constructors -------------------------------------------------------
    @classmethod
    def instantaneous(cls, alpha_inf) -> "FrictionKernel":
        """Pure ``alpha_inf * delta`` kernel (no memory)."""
        ainf = _as_square(alpha_inf, "alpha_inf")
        return cls(ainf, transform=lambda z, _a=hermitian_part(ainf): _a.copy())

    @classmethod
    def zero(cls, dim: int) -> "FrictionKernel":
        return cls.instantaneous(np.zeros((dim, dim)))

    @classmethod
    def from_function(cls, func, alpha_inf, *, alpha_sup=None, decay_rate=0.0,
                      transform=None, bandwidth=0.0) -> "FrictionKernel":
        """Closed-form kernel.

        When ``alpha_sup`` is omitted it is estimated by sampling ``func``
        densely over the decay window.
        """
        ainf = _as_square(alpha_inf, "alpha_inf")
        if alpha_sup is None:
            span = 40.0 / decay_rate if decay_rate > 0 else 200.0
            t = np.linspace(0.0, span, 8001)
            vals = np.asarray(func(t), dtype=complex)
            alpha_sup = 1.05 * float(np.max(np.linalg.norm(vals, ord=2, axis=(1, 2))))
        return cls(ainf, func=func, alpha_sup=float(alpha_sup), decay_rate=float(decay_rate),
                   transform=transform, bandwidth=float(bandwidth))

    @classmethod
    def from_samples(cls, times, samples, alpha_inf=None, *, compact=False,
                     bandwidth=0.0) -> "FrictionKernel":
        samples = np.asarray(samples, dtype=complex)
        if samples.ndim == 1:
            samples = samples[:, None, None]
        d = samples.shape[-1]
        if alpha_inf is None:
            alpha_inf = np.zeros((d, d))
        return cls(_as_square(alpha_inf, "alpha_inf", d), times=times, samples=samples,
                   compact=compact, bandwidth=float(bandwidth))

    # queries --------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.alpha_inf.shape[0]

    @property
    def is_sampled(self) -> bool:
        return self.samples is not None

    @property
    def has_memory(self) -> bool:
        return self.func is not None or self.samples is not None

    @property
    def horizon(self) -> float:
        """Last time at which the regular part is known (inf for closed forms)."""
        if self.samples is not None:
            return float(self.times[-1])
        return np.inf

    def __call__(self, t) -> np.ndarray:
        """Regular part ``alpha(t)`` for ``t >= 0`` as an ``(n, d, d)`` array."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d = self.dim
        if self.func is not None:
            out = np.asarray(self.func(t), dtype=complex).reshape(t.size, d, d)
        elif self.samples is not None:
            flat = self.samples.reshape(len(self.times), -1)
            re = np.stack([np.interp(t, self.times, c, right=0.0) for c in flat.real.T], axis=-1)
            im = np.stack([np.interp(t, self.times, c, right=0.0) for c in flat.imag.T], axis=-1)
            out = (re + 1j * im).reshape(t.size, d, d)
        else:
            out = np.zeros((t.size, d, d), dtype=complex)
        return out

    def tail_bound(self, eta: float, T: Optional[float] = None) -> float:
        """Bound on ``||int_T^inf exp(i zeta t) alpha(t) dt||`` for ``Im zeta = eta``."""
        if T is None:
            T = self.horizon
        if not self.has_memory or (self.is_sampled and self.compact) or np.isinf(T):
            return 0.0
        rate = eta + self.decay_rate
        if rate <= 0:
            # no decay information: the tail cannot be bounded
            return np.inf if self.alpha_sup > 0 else 0.0
        return self.alpha_sup * np.exp(-rate * T) / rate


@dataclass(frozen=True)
class DispersiveSystem:
    """Triplet ``(m, A, a)`` of mass, Hermitian generator and friction kernel."""

    m: np.ndarray
    A: np.ndarray
    kernel: FrictionKernel

    def __post_init__(self):
        d = self.kernel.dim
        m = hermitian_part(_as_square(self.m, "m", d))
        A = _as_square(self.A, "A", d)
        if not np.allclose(A, A.conj().T, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be Hermitian")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise ValueError("mass matrix must be positive definite")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "A", hermitian_part(A))

    @property
    def dim(self) -> int:
        return self.kernel.dim


def extend_kernel(kernel: FrictionKernel, t) -> np.ndarray:
    """Hermitian extension of the regular part of a kernel to all real times.

    Returns ``alpha(t)`` for ``t > 0``, ``Re alpha(0)`` (the Hermitian part) at
    ``t = 0`` and ``alpha(-t)^H`` for ``t < 0``. The atom ``2 alpha_inf delta``
    of the extended kernel is carried separately by ``kernel.alpha_inf``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    vals = kernel(np.abs(t))
    neg = t < 0
    vals[neg] = np.swapaxes(vals[neg], -1, -2).conj()
    zero = t == 0
    vals[zero] = hermitian_part(vals[zero])
    return vals


# --------------------------------------------------------------------------
# Laplace transform
# --------------------------------------------------------------------------

def _linear_segment_weights(x: np.ndarray):
    """Integrals of ``exp(x u)`` against the two hat functions on [0, 1]."""
    small = np.abs(x) < 1e-2
    xs = np.where(small, 1.0, x)
    em1 = np.expm1(xs)
    w1 = (em1 * (xs - 1.0) + xs) / xs ** 2          # int u e^{xu}
    w0 = (em1 - xs) / xs ** 2                        # int (1-u) e^{xu}
    x1 = np.where(small, x, 0.0)
    w0s = 0.5 + x1 / 6 + x1 ** 2 / 24 + x1 ** 3 / 120 + x1 ** 4 / 720
    w1s = 0.5 + x1 / 3 + x1 ** 2 / 8 + x1 ** 3 / 30 + x1 ** 4 / 144
    return np.where(small, w0s, w0), np.where(small, w1s, w1)


def laplace_kernel(kernel: FrictionKernel, zeta: complex, tol: Optional[float] = None,
                   full_output: bool = False):
    """Numerical ``a_hat(zeta)`` for ``Im zeta > 0``.

    Sampled kernels are integrated exactly as piecewise-linear functions
    against ``exp(i zeta t)`` up to their horizon; the tail beyond it is
    bounded by ``alpha_sup * exp(-Im(zeta) T) / Im(zeta)`` (zero for compact
    kernels). Closed forms are integrated adaptively up to the time where the
    same bound drops below the tolerance.

    Parameters
    ----------
    kernel : FrictionKernel
    zeta : complex
    tol : float, optional
        Absolute tolerance. Sampled kernels whose tail bound exceeds it are
        rejected. Defaults to ``1e-10 * max(1, alpha_sup / Im zeta)``.
    full_output : bool
        Also return the error estimate.
    """
    zeta = complex(zeta)
    eta = zeta.imag
    if eta <= 0:
        raise ValueError("laplace_kernel needs Im zeta > 0")
    d = kernel.dim
    if tol is None:
        tol = 1e-10 * max(1.0, kernel.alpha_sup / eta)
    value = kernel.alpha_inf.astype(complex)
    err = 0.0
    if kernel.is_sampled:
        tail = kernel.tail_bound(eta)
        if tail > tol:
            raise ValueError(f"kernel horizon {kernel.horizon:g} leaves tail bound "
                             f"{tail:.3e} above tolerance {tol:.3e}")
        t = kernel.times
        h = np.diff(t)
        x = 1j * zeta * h
        w0, w1 = _linear_segment_weights(x)
        e0 = np.exp(1j * zeta * t[:-1]) * h
        a = kernel.samples
        value = value + np.einsum("k,kij->ij", e0 * w0, a[:-1]) + np.einsum("k,kij->ij", e0 * w1, a[1:])
        err = tail
    elif kernel.func is not None:
        rate = eta + kernel.decay_rate
        T = max(np.log(max(kernel.alpha_sup, 1e-300) / (rate * 0.5 * tol)) / rate, 1.0)

        def integrand(s):
            v = kernel(np.array([s]))[0] * np.exp(1j * zeta * s)
            return np.concatenate((v.real.ravel(), v.imag.ravel()))

        # split so that each panel holds a bounded number of oscillations
        freq = abs(zeta.real) + kernel.bandwidth + 1.0
        npan = int(min(max(np.ceil(T * freq / (4 * np.pi)), 1), 4000))
        pts = np.linspace(0.0, T, npan + 1)
        total = np.zeros(2 * d * d)
        qerr = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            res, e = integrate.quad_vec(integrand, lo, hi, epsabs=0.5 * tol / npan, epsrel=1e-12)
            total += res
            qerr += e
        value = value + (total[: d * d] + 1j * total[d * d:]).reshape(d, d)
        err = qerr + kernel.tail_bound(eta, T)
    if full_output:
        return value, float(err)
    return value


def kernel_transform(kernel: FrictionKernel) -> "HerglotzEvaluator":
    """``a_hat`` as a kernel-kind evaluator, exact when a closed form exists."""
    if kernel.transform is not None:
        return HerglotzEvaluator(kernel.transform, kernel.dim, "kernel")
    return HerglotzEvaluator(lambda z: laplace_kernel(kernel, z), kernel.dim, "kernel")


# --------------------------------------------------------------------------
# Herglotz functions and densities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HerglotzEvaluator:
    """Matrix function analytic in the upper half plane.

    ``kind`` fixes which boundary part carries the density:

    * ``"kernel"`` and ``"admittance"``: ``N = Re h(sigma + i0) / pi``;
    * ``"generic"`` (Cauchy transforms, ``Im h >= 0``): ``N = Im h / pi``.
    """

    func: Callable
    dim: int
    kind: str = "kernel"

    def __post_init__(self):
        if self.kind not in ("kernel", "admittance", "generic"):
            raise ValueError(f"unknown Herglotz kind {self.kind!r}")

    def __call__(self, zeta) -> np.ndarray:
        return np.asarray(self.func(complex(zeta)), dtype=complex).reshape(self.dim, self.dim)

    def batch(self, zetas) -> np.ndarray:
        zetas = np.atleast_1d(np.asarray(zetas, dtype=complex))
        return np.stack([self(z) for z in zetas]) if zetas.size else np.zeros((0, self.dim, self.dim), complex)

    def positive_part(self, values: np.ndarray) -> np.ndarray:
        """The part of ``values`` that is PSD in the upper half plane."""
        if self.kind == "generic":
            return anti_hermitian_part(values)
        return hermitian_part(values)


@dataclass(frozen=True)
class SpectralGrid:
    """Quadrature cells: node positions and widths."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if s.ndim != 1 or s.shape != w.shape:
            raise ValueError("grid nodes and weights must be 1-D of equal length")
        if s.size and np.any(np.diff(s) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("grid weights must be positive")
        object.__setattr__(self, "nodes", s)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.nodes.size

    @classmethod
    def from_breaks(cls, breaks) -> "SpectralGrid":
        b = np.asarray(breaks, dtype=float)
        return cls(0.5 * (b[1:] + b[:-1]), np.diff(b))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "SpectralGrid":
        """Midpoint cells of equal width covering ``[lo, hi]``."""
        if n < 1 or not hi > lo:
            raise ValueError("uniform grid needs n >= 1 and hi > lo")
        return cls.from_breaks(np.linspace(lo, hi, n + 1))

    @classmethod
    def graded(cls, R: float, centers: Sequence[float], halfwidth: float,
               spacing: float, growth: float = 1.04) -> "SpectralGrid":
        """Symmetric-in-spirit grid on ``[-R, R]`` refined near resonances.

        Cells have width ``spacing`` within ``halfwidth`` of any center and
        grow geometrically by ``growth`` per cell further out, which suits
        densities with algebraic tails.
        """
        if R <= 0 or spacing <= 0 or growth < 1:
            raise ValueError("graded grid needs R > 0, spacing > 0 and growth >= 1")
        centers = np.asarray(list(centers), dtype=float)

        def width(x):
            dist = np.min(np.abs(x - centers)) - halfwidth if centers.size else abs(x)
            if dist <= 0:
                return spacing
            # geometric growth away from the core, by distance
            return spacing + (growth - 1.0) * dist

        breaks = [-R]
        x = -R
        # march from the left; the width is evaluated at the cell midpoint estimate
        while x < R:
            h = width(x + 0.5 * width(x))
            x = min(x + h, R)
            breaks.append(x)
        if breaks[-1] - breaks[-2] < 0.25 * spacing and len(breaks) > 2:
            breaks.pop(-2)
        return cls.from_breaks(breaks)


@dataclass(frozen=True)
class SpectralDensity:
    """PSD matrix density sampled on grid cells.

    ``values[k]`` is the density at ``nodes[k]``; the cell mass is
    ``values[k] * weights[k]``. ``residual`` holds per-node extrapolation
    residuals when the density came from :func:`stieltjes_invert`.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    residual: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        grid = SpectralGrid(self.nodes, self.weights)
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim == 1:
            vals = vals[:, None, None]
        if vals.ndim != 3 or vals.shape[0] != grid.nodes.size or vals.shape[1] != vals.shape[2]:
            raise ValueError("density values must have shape (K, d, d)")
        if vals.shape[0]:
            scale = float(np.max(np.linalg.norm(vals, ord=2, axis=(1, 2))))
            vals = _clip_psd(vals, "density", scale) if scale > 0 else np.zeros_like(vals)
        object.__setattr__(self, "nodes", grid.nodes)
        object.__setattr__(self, "weights", grid.weights)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(cls, dim: int) -> "SpectralDensity":
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, dim, dim)))

    @classmethod
    def from_function(cls, grid: SpectralGrid, func) -> "SpectralDensity":
        """Sample ``func(sigma) -> (K, d, d)`` (or ``(K,)``) on a grid."""
        return cls(grid.nodes, grid.weights, func(grid.nodes))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> SpectralGrid:
        return SpectralGrid(self.nodes, self.weights)

    def __len__(self):
        return self.nodes.size

    def masses(self) -> np.ndarray:
        return self.values * self.weights[:, None, None]

    def mass(self) -> np.ndarray:
        """Total mass ``sum_k N_k dsigma_k``."""
        return self.masses().sum(axis=0)

    def ranks(self, eps_rank: float = 1e-10) -> np.ndarray:
        """Numerical rank of each node (eigenvalues above ``eps_rank * max``)."""
        vals = np.linalg.eigvalsh(self.values) if len(self) else np.zeros((0, self.dim))
        top = np.max(vals) if vals.size else 0.0
        return (vals > eps_rank * top).sum(axis=1) if top > 0 else np.zeros(len(self), int)


def cauchy_transform(density: SpectralDensity, zeta) -> np.ndarray:
    """``C(zeta) = sum_k N_k dsigma_k / (sigma_k - zeta)``.

    Accepts a scalar or an array of points; an array gives ``(n, d, d)``.
    """
    z = np.asarray(zeta, dtype=complex)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z.imag == 0):
        raise ValueError("cauchy_transform is undefined on the real axis")
    coef = density.weights[None, :] / (density.nodes[None, :] - z[:, None])
    out = np.einsum("nk,kij->nij", coef, density.values)
    return out[0] if scalar else out


def boundary_density(h: HerglotzEvaluator, nodes, eta: float) -> np.ndarray:
    """``(1/pi) * positive part of h(sigma + i eta)`` at each node."""
    vals = h.batch(np.asarray(nodes, dtype=float) + 1j * eta)
    return h.positive_part(vals) / np.pi


def _extrapolate_zero(xs, values):
    """Value at 0 of the polynomial through ``(xs[i], values[i])`` (Lagrange form)."""
    out = np.zeros_like(values[0])
    for i, xi in enumerate(xs):
        w = 1.0
        for j, xj in enumerate(xs):
            if j != i:
                w *= xj / (xj - xi)
        out = out + w * values[i]
    return out


def stieltjes_invert(h: HerglotzEvaluator, grid: SpectralGrid, etas=(1e-3, 5e-4),
                     residual_cap: float = 0.2, bad_fraction: float = 0.02,
                     floor: float = 1e-3, scale: Optional[float] = None) -> SpectralDensity:
    """Recover a spectral density from boundary values of a Herglotz function.

    The boundary part is evaluated at ``sigma_k + i eta`` for each ``eta`` and
    extrapolated to ``eta -> 0`` by the polynomial through all samples. With
    two offsets this is Richardson extrapolation (the leading error is linear
    in ``eta`` for smooth densities); three or more also remove the quadratic
    term, which matters when ``eta`` cannot be small, e.g. when the transform
    is itself a sum of atoms on a grid and ``eta`` must exceed the spacing.

    Parameters
    ----------
    h : HerglotzEvaluator
    grid : SpectralGrid
    etas : sequence of float
        At least two distinct positive offsets.
    residual_cap : float
        A node is flagged when the extrapolation moved it by more than this
        fraction of its value. The reference is the smallest-eta sample, or
        the two-point estimate when three or more offsets are given. Values
        below ``floor * max`` are measured against that floor instead. With
        two offsets in ratio 2 a point mass gives exactly 1/3, while a smooth
        density gives a change of order ``eta``.
    bad_fraction : float
        Largest tolerated fraction of flagged nodes.
    scale : float, optional
        Typical density magnitude used with ``floor``; defaults to the
        largest boundary value seen on the grid.

    Raises
    ------
    SpectralInversionError
        If too many nodes are flagged, which typically means point masses
        sit on the grid.
    """
    etas = sorted({float(e) for e in etas}, reverse=True)
    if len(etas) < 2 or etas[-1] <= 0:
        raise ValueError("stieltjes_invert needs at least two distinct positive etas")
    samples = [boundary_density(h, grid.nodes, e) for e in etas]
    if len(etas) == 2:
        n2 = samples[-1]
        rich = _extrapolate_zero(etas, samples)
    else:
        # higher order: the reference is the two-point estimate from the smallest etas
        n2 = _extrapolate_zero(etas[-2:], samples[-2:])
        rich = _extrapolate_zero(etas, samples)
    size = np.linalg.norm(rich, ord=2, axis=(1, 2)) if len(grid) else np.zeros(0)
    raw = np.linalg.norm(n2, ord=2, axis=(1, 2)) if len(grid) else np.zeros(0)
    top = float(max(raw.max(initial=0.0), size.max(initial=0.0)))
    if scale is not None:
        top = max(top, float(scale))
    change = np.linalg.norm(rich - n2, ord=2, axis=(1, 2)) if len(grid) else np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        resid = np.where(top > 0, change / np.maximum(size, floor * top), 0.0)
    bad = np.flatnonzero(resid > residual_cap)
    if bad.size > bad_fraction * max(len(grid), 1):
        raise SpectralInversionError(
            f"boundary extrapolation failed at {bad.size} of {len(grid)} nodes "
            f"(first at sigma={grid.nodes[bad[0]]:.6g}); point masses on the grid?", bad)
    # negative eigenvalues within the extrapolation error of a node are clipped
    rich = hermitian_part(rich)
    if top > 0:
        vals, vecs = np.linalg.eigh(rich)
        allowed = PSD_HARD * top * 10 + change
        bad = np.flatnonzero(vals.min(axis=1) < -allowed)
        if bad.size:
            raise SpectralInversionError("extrapolated density is not positive", bad)
        vals = np.clip(vals, 0.0, None)
        rich = (vecs * vals[:, None, :]) @ np.swapaxes(vecs, -1, -2).conj()
    return SpectralDensity(grid.nodes, grid.weights, rich, residual=resid)


# --------------------------------------------------------------------------
# Lorentz medium
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LorentzParams:
    """Single-resonance Lorentz medium."""

    omega_p: float = 1.0
    omega_0: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        # omega_p = 0 is allowed: the medium is then absent
        if not (self.omega_p >= 0 and self.omega_0 > 0 and self.gamma > 0):
            raise ValueError("Lorentz parameters must be positive (omega_p may be zero)")

    @property
    def nu(self) -> complex:
        """Damped oscillation frequency (imaginary when overdamped)."""
        return np.sqrt(complex(self.omega_0 ** 2 - 0.25 * self.gamma ** 2))


def lorentz_susceptibility(p: LorentzParams, zeta):
    """``chi_hat(zeta) = omega_p^2 / (omega_0^2 - zeta^2 - i gamma zeta)``."""
    z = np.asarray(zeta, dtype=complex)
    return p.omega_p ** 2 / (p.omega_0 ** 2 - z * z - 1j * p.gamma * z)


def _sin_over(nu: complex, t):
    # sin(nu t) / nu, continuous through nu = 0
    if abs(nu) < 1e-12:
        return t.astype(complex)
    return np.sin(nu * t) / nu


def lorentz_chi_time(p: LorentzParams, t):
    """Time-domain susceptibility ``omega_p^2 exp(-gamma t/2) sin(nu t)/nu``, zero for t < 0."""
    t = np.asarray(t, dtype=float)
    val = p.omega_p ** 2 * np.exp(-0.5 * p.gamma * t) * _sin_over(p.nu, t)
    return np.where(t >= 0, val.real, 0.0)


def lorentz_density(p: LorentzParams, sigma):
    """Spectral density of the medium's friction kernel.

    ``n(sigma) = 4 omega_p^2 sigma^2 gamma / ((omega_0^2 - sigma^2)^2 + sigma^2 gamma^2)``;
    its total mass is ``4 pi omega_p^2``.
    """
    s = np.asarray(sigma, dtype=float)
    return 4 * p.omega_p ** 2 * s ** 2 * p.gamma / ((p.omega_0 ** 2 - s ** 2) ** 2 + s ** 2 * p.gamma ** 2)


def lorentz_friction_transform(p: LorentzParams, zeta):
    """``a_hat(zeta) = -4 pi i zeta chi_hat(zeta)``."""
    z = np.asarray(zeta, dtype=complex)
    return -4j * np.pi * z * lorentz_susceptibility(p, z)


def lorentz_kernel(p: LorentzParams) -> FrictionKernel:
    """Scalar friction kernel ``a(t) = 4 pi d/dt chi(t)`` of a Lorentz medium.

    ``a(t) = 4 pi omega_p^2 exp(-gamma t/2) (cos(nu t) - gamma/(2 nu) sin(nu t))``
    with no instantaneous part.
    """
    nu = p.nu
    amp = 4 * np.pi * p.omega_p ** 2

    def alpha(t):
        t = np.asarray(t, dtype=float)
        val = amp * np.exp(-0.5 * p.gamma * t) * (np.cos(nu * t) - 0.5 * p.gamma * _sin_over(nu, t))
        return val.real[:, None, None]

    # |cos - c sin| <= sqrt(1 + c^2) = omega_0 / |nu| for real nu
    if abs(nu.imag) < 1e-14 and abs(nu) > 0:
        sup = amp * p.omega_0 / abs(nu)
        rate = 0.5 * p.gamma
    else:
        sup, rate = None, 0.5 * p.gamma - abs(nu.imag)
    return FrictionKernel.from_function(
        alpha, np.zeros((1, 1)), alpha_sup=sup, decay_rate=max(rate, 0.0),
        transform=lambda z: np.array([[lorentz_friction_transform(p, z)]]),
        bandwidth=float(abs(nu.real)) + p.gamma)
