"""Power dissipation checks in the time and frequency domains.

A kernel dissipates power for every input exactly when the Gram form built
from its Hermitian extension is positive, equivalently when ``Re a_hat >= 0``
in the upper half plane. Both checks here are sampling checks: a pass means
no violation was found on the probes, a failure exhibits one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .spectra import FrictionKernel, HerglotzEvaluator, extend_kernel, hermitian_part

__all__ = [
    "PdcReport",
    "time_gram",
    "check_time_pdc",
    "check_freq_pdc",
    "check_admittance_pdc",
    "upper_half_plane_probes",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class PdcReport:
    """Outcome of a dissipation check.

    ``worst_value`` is normalised so that it is scale free: the smallest
    eigenvalue divided by the largest eigenvalue magnitude seen. The check
    passes when ``worst_value >= -tol``.
    """

    kind: str
    worst_value: float
    worst_location: object
    passed: bool
    samples: int
    tol: float = DEFAULT_TOL
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        loc = self.worst_location
        if isinstance(loc, complex):
            out["worst_location"] = [loc.real, loc.imag]
        elif isinstance(loc, np.ndarray):
            out["worst_location"] = loc.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    w = np.zeros_like(t)
    h = np.diff(t)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def time_gram(kernel: FrictionKernel, times) -> np.ndarray:
    """Hermitian block Gram matrix ``[a_e(t_j - t_l)]`` of size ``nd x nd``.

    The delta part ``2 alpha_inf`` enters on the diagonal blocks divided by
    the trapezoid weight of each time, the discrete analogue of the atom.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("Gram times must be strictly increasing with at least two points")
    n, d = t.size, kernel.dim
    diff = t[:, None] - t[None, :]
    blocks = extend_kernel(kernel, diff.ravel()).reshape(n, n, d, d)
    if np.any(kernel.alpha_inf != 0):
        w = _trapezoid_weights(t)
        idx = np.arange(n)
        blocks[idx, idx] += 2.0 * kernel.alpha_inf[None] / w[:, None, None]
    gram = blocks.transpose(0, 2, 1, 3).reshape(n * d, n * d)
    return hermitian_part(gram)


def _scaled_min_eig(gram: np.ndarray):
    vals, vecs = np.linalg.eigh(gram)
    scale = float(np.max(np.abs(vals)))
    if scale == 0.0:
        return 0.0, vecs[:, 0]
    return float(vals[0]) / scale, vecs[:, 0]


def check_time_pdc(kernel: FrictionKernel, times, trials: int = 0, seed: int = 0,
                   tol: float = DEFAULT_TOL, subset_fraction: float = 0.5) -> PdcReport:
    """Time-domain check on the Gram matrix over ``times``.

    Parameters
    ----------
    kernel : FrictionKernel
    times : array_like
        Strictly increasing probe times.
    trials : int
        Extra checks on random subsets of the times (drawn with ``seed``).
    tol : float
        Pass threshold on the normalised smallest eigenvalue.

    Returns
    -------
    PdcReport
        ``worst_location`` holds the probe times of the worst Gram matrix
        (the full set unless a subset was worse).
    """
    t = np.asarray(times, dtype=float)
    gram = time_gram(kernel, t)
    worst, _ = _scaled_min_eig(gram)
    where = t
    d = kernel.dim
    rng = np.random.default_rng(seed)
    size = max(2, int(round(subset_fraction * t.size)))
    for _ in range(int(trials)):
        pick = np.sort(rng.choice(t.size, size=min(size, t.size), replace=False))
        if pick.size < 2:
            continue
        idx = (pick[:, None] * d + np.arange(d)[None, :]).ravel()
        # the atom term depends on the local weights, so rebuild for subsets
        sub = time_gram(kernel, t[pick]) if np.any(kernel.alpha_inf != 0) else gram[np.ix_(idx, idx)]
        val, _ = _scaled_min_eig(sub)
        if val < worst:
            worst, where = val, t[pick]
    return PdcReport("time", worst, np.asarray(where), bool(worst >= -tol), t.size,
                     tol, {"trials": int(trials), "seed": int(seed)})


def _freq_check(h: HerglotzEvaluator, zetas, tol: float, kind: str) -> PdcReport:
    z = np.atleast_1d(np.asarray(zetas, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("frequency probes must lie in the open upper half plane")
    vals = h.batch(z)
    re = hermitian_part(vals)
    mins = np.linalg.eigvalsh(re)[:, 0]
    scale = float(np.max(np.linalg.norm(vals, ord=2, axis=(1, 2))))
    if scale == 0.0:
        return PdcReport(kind, 0.0, complex(z[0]), True, z.size, tol)
    norm = mins / scale
    k = int(np.argmin(norm))
    worst = float(norm[k])
    return PdcReport(kind, worst, complex(z[k]), bool(worst >= -tol), z.size, tol)


def check_freq_pdc(h: HerglotzEvaluator, zetas, tol: float = DEFAULT_TOL) -> PdcReport:
    """Check ``Re h(zeta) >= 0`` on probes in the upper half plane.

    ``worst_value`` is the smallest eigenvalue of ``Re h`` over all probes,
    divided by the largest ``||h(zeta)||``.
    """
    return _freq_check(h, zetas, tol, "freq")


def check_admittance_pdc(adm: HerglotzEvaluator, zetas, tol: float = DEFAULT_TOL) -> PdcReport:
    """Same test as :func:`check_freq_pdc`, for an admittance function."""
    return _freq_check(adm, zetas, tol, "admittance")


def upper_half_plane_probes(n: int, seed: int = 0, re_range=(-5.0, 5.0),
                            log_im_range=(-2.0, 1.0)) -> np.ndarray:
    """Random probe points with log-uniform imaginary parts."""
    rng = np.random.default_rng(seed)
    re = rng.uniform(*re_range, size=n)
    im = 10.0 ** rng.uniform(*log_im_range, size=n)
    return re + 1j * im
