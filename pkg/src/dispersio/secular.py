"""Secular-equation eigensolvers for bordered diagonal matrices.

Two structured Hermitian eigenproblems show up when a block system has a
diagonal hidden frequency list:

* the arrowhead matrix ``[[a, g^H], [g, diag(w)]]`` (one observable row
  coupled to many diagonal modes), whose eigenvalues are the roots of
  ``f(x) = x - a - sum |g_j|^2 / (x - w_j)``;
* the compression of ``diag(w)`` onto the orthogonal complement of a unit
  vector ``q``, whose eigenvalues are the roots of
  ``sum |q_j|^2 / (x - w_j) = 0``.

Both reduce to one root per pole interval. Roots are located relative to the
nearer pole, so the differences ``x - w_j`` keep full relative accuracy even
when a root sits extremely close to a pole. The cost is O(n^2) instead of the
O(n^3) of a dense factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

_CHUNK = 2_000_000  # matrix entries per vectorised block


@dataclass(frozen=True)
class SecularRoots:
    """Roots of a secular equation stored relative to a pole.

    ``values[k] == poles[origin[k]] + tau[k]`` but differences to the poles
    should be formed with :meth:`differences`, which avoids cancellation.
    """

    poles: np.ndarray
    origin: np.ndarray
    tau: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.poles[self.origin] + self.tau

    def differences(self, rows=slice(None)) -> np.ndarray:
        """Return ``values[rows, None] - poles[None, :]`` accurately."""
        org = self.origin[rows]
        return (self.poles[org][:, None] - self.poles[None, :]) + self.tau[rows][:, None]


def _row_blocks(n_rows: int, n_cols: int):
    step = max(1, _CHUNK // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def solve_secular(poles, weights, rho: float = 1.0, shift: float = 0.0,
                  maxiter: int = 80) -> SecularRoots:
    """Find every root of ``rho*(x - shift) - sum_j weights_j / (x - poles_j)``.

    Parameters
    ----------
    poles : array_like
        Strictly increasing real poles.
    weights : array_like
        Strictly positive residue weights (``|g_j|^2``).
    rho : float
        1 for the arrowhead problem, 0 for the compression problem.
    shift : float
        Diagonal entry of the arrowhead head.

    Returns
    -------
    SecularRoots
        ``len(poles) + 1`` roots when ``rho > 0``, ``len(poles) - 1`` when
        ``rho == 0``, in increasing order.
    """
    w = np.asarray(poles, dtype=float)
    z = np.asarray(weights, dtype=float)
    n = w.size
    if n == 0:
        raise ValueError("secular equation needs at least one pole")
    if np.any(np.diff(w) <= 0):
        raise ValueError("poles must be strictly increasing (deflate first)")
    if np.any(z <= 0):
        raise ValueError("weights must be positive (deflate first)")

    # brackets [lo, hi] for each root, plus the adjacent poles
    if rho > 0:
        s = np.sqrt(z.sum() / rho)
        lo_edge = min(shift, w[0]) - s - 1e-300
        hi_edge = max(shift, w[-1]) + s + 1e-300
        left = np.concatenate(([-np.inf], w))
        right = np.concatenate((w, [np.inf]))
    else:
        if n < 2:
            return SecularRoots(w, np.zeros(0, int), np.zeros(0))
        left, right = w[:-1], w[1:]
    nroot = left.size

    # choose the origin pole: the one on the side of the root
    origin = np.empty(nroot, dtype=int)
    lo_t = np.empty(nroot)
    hi_t = np.empty(nroot)
    for blk in _row_blocks(nroot, n):
        idx = np.arange(nroot)[blk]
        a, b = left[blk], right[blk]
        finite = np.isfinite(a) & np.isfinite(b)
        mid = np.where(finite, 0.5 * (np.where(finite, a, 0.0) + np.where(finite, b, 0.0)), 0.0)
        f_mid = np.full(idx.size, np.nan)
        if finite.any():
            x = mid[finite]
            f_mid[finite] = rho * (x - shift) - (z[None, :] / (x[:, None] - w[None, :])).sum(axis=1)
        for k, j in enumerate(idx):
            if np.isinf(left[j]):
                origin[j] = j          # pole w[0], root below it
                lo_t[j] = lo_edge - w[j]
                hi_t[j] = 0.0
            elif np.isinf(right[j]):
                origin[j] = j - 1      # pole w[-1], root above it
                lo_t[j] = 0.0
                hi_t[j] = hi_edge - w[j - 1]
            else:
                pl = j - 1 if rho > 0 else j
                half = 0.5 * (right[j] - left[j])
                if f_mid[k] >= 0:      # root in left half
                    origin[j] = pl
                    lo_t[j], hi_t[j] = 0.0, half
                else:
                    origin[j] = pl + 1
                    lo_t[j], hi_t[j] = -half, 0.0

    side = np.where(hi_t > 0, 1.0, -1.0)  # sign of tau
    tau = 0.5 * (lo_t + hi_t)
    active = np.ones(nroot, dtype=bool)
    eps = np.finfo(float).eps
    for _ in range(maxiter):
        ids = np.flatnonzero(active)
        if ids.size == 0:
            break
        for blk in _row_blocks(ids.size, n):
            k = ids[blk]
            o = origin[k]
            t = tau[k]
            delta = (w[None, :] - w[o][:, None]) - t[:, None]   # w_j - x
            delta[np.arange(k.size), o] = np.inf                 # own pole handled apart
            inv = z[None, :] / delta
            # f = rho*(x - shift) + sum_{j != o} z_j/(w_j - x) - z_o/t
            r = rho * (w[o] + t - shift) + inv.sum(axis=1)
            inv /= delta
            rp = rho + inv.sum(axis=1)
            zo = z[o]
            f = r - zo / t
            # tighten the bracket from the sign of f (f is increasing)
            pos = f > 0
            hi_t[k] = np.where(pos, np.minimum(hi_t[k], t), hi_t[k])
            lo_t[k] = np.where(~pos, np.maximum(lo_t[k], t), lo_t[k])
            # one-pole model: rp*T^2 + (r - rp*t)*T - zo = 0
            bq = r - rp * t
            disc = np.sqrt(bq * bq + 4.0 * rp * zo)
            sgn = side[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_pos = np.where(bq < 0, (disc - bq) / (2.0 * rp), 2.0 * zo / (bq + disc))
                t_neg = np.where(bq > 0, -(bq + disc) / (2.0 * rp), -2.0 * zo / (disc - bq))
            new = np.where(sgn > 0, t_pos, t_neg)
            bad = ~np.isfinite(new) | (new <= lo_t[k]) | (new >= hi_t[k])
            new = np.where(bad, 0.5 * (lo_t[k] + hi_t[k]), new)
            done = np.abs(new - t) <= 4 * eps * np.abs(new) + 1e-300
            done |= (hi_t[k] - lo_t[k]) <= 4 * eps * np.maximum(np.abs(lo_t[k]), np.abs(hi_t[k]))
            tau[k] = new
            active[k[done]] = False
    return SecularRoots(w, origin, tau)


@dataclass(frozen=True)
class ArrowheadEigen:
    """Eigen-data of ``[[a, g^H], [g, diag(w)]]``.

    ``head[k]`` is the (real, positive) head component of eigenvector k and
    ``coupling`` holds the corrected tail couplings that make the
    eigenvectors exactly orthonormal.
    """

    values: np.ndarray
    head: np.ndarray
    roots: SecularRoots
    coupling: np.ndarray

    def tail_vectors(self, rows=slice(None)) -> np.ndarray:
        """Tail components ``g_j * head_k / (lambda_k - w_j)`` as (n_tail, n_eig)."""
        diff = self.roots.differences(rows)
        return (self.coupling[None, :] * self.head[rows][:, None] / diff).T


def arrowhead_eigh(a: float, g, w) -> ArrowheadEigen:
    """Eigendecomposition of a Hermitian arrowhead matrix.

    The tail weights are recomputed from the computed eigenvalues (the
    Gu-Eisenstat correction), which keeps the eigenvectors orthonormal to
    working precision even for clustered spectra.

    Parameters
    ----------
    a : float
        Head diagonal entry.
    g : array_like
        Complex coupling column, all entries nonzero.
    w : array_like
        Strictly increasing tail diagonal.
    """
    g = np.asarray(g, dtype=complex)
    w = np.asarray(w, dtype=float)
    z = np.abs(g) ** 2
    roots = solve_secular(w, z, rho=1.0, shift=a)
    lam = roots.values
    n = w.size

    # corrected weights: zhat_j = prod_k (lambda_k - w_j) / prod_{i != j} (w_i - w_j)
    logz = np.zeros(n)
    for blk in _row_blocks(n + 1, n):
        logz += np.log(np.abs(roots.differences(blk))).sum(axis=0)
    dw = w[None, :] - w[:, None]
    np.fill_diagonal(dw, 1.0)
    logz -= np.log(np.abs(dw)).sum(axis=0)
    zhat = np.exp(logz)
    phase = g / np.abs(g)
    ghat = np.sqrt(zhat) * phase

    norm2 = np.ones(n + 1)
    for blk in _row_blocks(n + 1, n):
        diff = roots.differences(blk)
        norm2[blk] += (zhat[None, :] / diff ** 2).sum(axis=1)
    head = 1.0 / np.sqrt(norm2)
    return ArrowheadEigen(lam, head, roots, ghat)


def compression_eigh(q, w):
    """Eigenvalues and couplings of ``diag(w)`` compressed off the unit vector ``q``.

    Returns
    -------
    mu : ndarray
        The ``n - 1`` eigenvalues of ``P diag(w) P`` on ``span(q)^perp``.
    coupling : ndarray
        ``q^H diag(w) y_k`` for the normalised eigenvectors ``y_k``; these are
        real and positive with the phase convention used here.
    roots : SecularRoots
    """
    q = np.asarray(q, dtype=complex)
    w = np.asarray(w, dtype=float)
    z = np.abs(q) ** 2
    roots = solve_secular(w, z, rho=0.0)
    mu = roots.values
    cpl = np.empty(mu.size)
    for blk in _row_blocks(mu.size, w.size):
        diff = roots.differences(blk)
        cpl[blk] = 1.0 / np.sqrt((z[None, :] / diff ** 2).sum(axis=1))
    return mu, cpl * z.sum(), roots



@dataclass(frozen=True)
class BorderedEigen:
    """Full eigen-data of ``[[a, g^H], [g, diag(w)]]`` after deflation.

    Eigenvectors come in two families. Coupled vectors (``coupled[k]``) have
    head component ``head[k]`` and tail components
    ``gt_j * head[k] / (values[k] - w_j)``. Decoupled vectors have no head
    component and live on a set of equal (or uncoupled) tail poles; their
    tail components are listed in ``free`` as ``(indices, vector)`` pairs.
    """

    values: np.ndarray
    head: np.ndarray
    coupled: np.ndarray
    gt: np.ndarray
    members: np.ndarray
    member_col: np.ndarray
    roots: Optional[SecularRoots]
    free: list

    def tail_dot(self, c) -> np.ndarray:
        """``c @ tail`` where ``tail`` is the ``(n_tail, n)`` eigenvector block."""
        c = np.atleast_2d(np.asarray(c, dtype=complex))
        out = np.zeros((c.shape[0], self.values.size), dtype=complex)
        kc = np.flatnonzero(self.coupled)
        if self.roots is not None and self.members.size:
            cg = c[:, self.members] * self.gt[None, self.members]
            for blk in _row_blocks(kc.size, self.members.size):
                diff = self.roots.differences(blk)[:, self.member_col]
                out[:, kc[blk]] = (cg @ (1.0 / diff).T) * self.head[kc[blk]][None, :]
        for k, (idx, vec) in zip(np.flatnonzero(~self.coupled), self.free):
            out[:, k] = c[:, idx] @ vec
        return out

    def tail_matrix(self) -> np.ndarray:
        """Dense tail block of the eigenvector matrix, shape ``(n_tail, n)``."""
        return self.tail_dot(np.eye(self.gt.size))


def bordered_eigh(a: float, g, w, rtol: float = 1e-14) -> BorderedEigen:
    """Eigendecomposition of a Hermitian arrowhead matrix with deflation.

    Couplings below ``rtol`` times the matrix scale are treated as zero and
    groups of equal tail poles are rotated so that only one member couples.
    The remaining problem is solved with :func:`arrowhead_eigh`.
    """
    g = np.asarray(g, dtype=complex)
    w = np.asarray(w, dtype=float)
    n = w.size
    scale = max(abs(a), np.max(np.abs(w), initial=0.0), np.linalg.norm(g), 1e-300)
    order = np.argsort(w, kind="stable")
    ws, gs = w[order], g[order]
    tol_w = 8 * np.finfo(float).eps * scale

    gt = np.zeros(n, dtype=complex)
    col = np.full(n, -1)
    free_vals, free = [], []
    live_w, live_g, live_pos = [], [], []
    i = 0
    while i < n:
        j = i + 1
        while j < n and ws[j] - ws[i] <= tol_w:
            j += 1
        idx = order[i:j]
        grp = gs[i:j]
        nrm = np.linalg.norm(grp)
        wmean = float(np.mean(w[idx]))
        if nrm <= rtol * scale:
            for p in idx:
                free_vals.append(w[p])
                free.append((np.array([p]), np.array([1.0 + 0j])))
        else:
            u = grp / nrm
            if idx.size > 1:
                # orthonormal complement of u inside the group
                basis = np.linalg.qr(np.column_stack([u, np.eye(idx.size)]))[0]
                for c in range(1, idx.size):
                    free_vals.append(wmean)
                    free.append((idx, basis[:, c]))
            col[idx] = len(live_w)
            gt[idx] = u
            live_w.append(wmean)
            live_g.append(nrm)
            live_pos.append(idx)
        i = j

    if live_w:
        eig = arrowhead_eigh(a, np.asarray(live_g), np.asarray(live_w))
        for pos, gh in zip(live_pos, eig.coupling):
            gt[pos] *= abs(gh)
        lam_c, head_c, roots = eig.values, eig.head, eig.roots
    else:
        lam_c, head_c, roots = np.array([float(a)]), np.array([1.0]), None
    members = np.flatnonzero(col >= 0)
    values = np.concatenate([lam_c, np.asarray(free_vals, dtype=float)])
    head = np.concatenate([head_c, np.zeros(len(free_vals))])
    coupled = np.concatenate([np.ones(lam_c.size, bool), np.zeros(len(free_vals), bool)])
    return BorderedEigen(values, head, coupled, gt, members, col[members], roots, free)
