import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from dispersio.secular import arrowhead_eigh, bordered_eigh, compression_eigh, solve_secular


def _arrow(a, g, w):
    n = w.size
    M = np.zeros((n + 1, n + 1), complex)
    M[0, 0] = a
    M[1:, 0] = g
    M[0, 1:] = g.conj()
    M[np.arange(1, n + 1), np.arange(1, n + 1)] = w
    return M


def _random_arrow(seed, n):
    rng = np.random.default_rng(seed)
    w = np.sort(rng.uniform(-3, 3, n))
    g = (rng.normal(size=n) + 1j * rng.normal(size=n)) * 0.3
    return float(rng.normal()), g, w


@given(st.integers(0, 10_000), st.integers(1, 40))
def test_arrowhead_matches_dense(seed, n):
    a, g, w = _random_arrow(seed, n)
    eig = arrowhead_eigh(a, g, w)
    ref = np.linalg.eigvalsh(_arrow(a, g, w))
    assert np.allclose(np.sort(eig.values), ref, atol=1e-12 * max(1, np.abs(ref).max()))


@given(st.integers(0, 10_000), st.integers(2, 30))
def test_arrowhead_vectors_are_orthonormal(seed, n):
    a, g, w = _random_arrow(seed, n)
    eig = arrowhead_eigh(a, g, w)
    V = np.vstack([eig.head[None, :], eig.tail_vectors()])
    assert np.allclose(V.conj().T @ V, np.eye(n + 1), atol=1e-11)
    M = _arrow(a, eig.coupling, w)
    assert np.allclose(M @ V, V * eig.values[None, :], atol=1e-10)


def test_secular_roots_interlace_poles():
    w = np.array([-1.0, 0.0, 2.0])
    r = solve_secular(w, np.array([0.5, 0.1, 0.2]), rho=1.0, shift=0.3).values
    r = np.sort(r)
    assert r[0] < w[0] < r[1] < w[1] < r[2] < w[2] < r[3]


def test_secular_root_close_to_pole_keeps_accuracy():
    # tiny weight: the root sits ~1e-20 away from the pole
    w = np.array([0.0, 1.0])
    roots = solve_secular(w, np.array([1e-20, 1.0]), rho=1.0, shift=0.5)
    d = roots.differences()
    k = int(np.argmin(np.abs(d[:, 0])))
    assert 0 < abs(d[k, 0]) < 1e-18


@given(st.integers(0, 10_000), st.integers(2, 30))
def test_compression_matches_dense(seed, n):
    rng = np.random.default_rng(seed)
    w = np.sort(rng.uniform(-2, 2, n))
    q = rng.normal(size=n) + 1j * rng.normal(size=n)
    q /= np.linalg.norm(q)
    mu, cpl, _ = compression_eigh(q, w)
    P = np.eye(n) - np.outer(q, q.conj())
    # the dense compression carries one extra zero eigenvalue on span(q)
    ref = np.linalg.eigvalsh(P @ np.diag(w) @ P)
    assert mu.size == n - 1
    assert np.allclose(np.sort(np.append(mu, 0.0)), ref, atol=1e-10)
    assert np.all(cpl > 0)


def test_bordered_handles_repeated_poles_and_zero_couplings():
    w = np.array([0.0, 1.0, 1.0, 2.0, 3.0])
    g = np.array([0.5, 0.3, 0.4j, 0.0, 0.2])
    a = 0.1
    eig = bordered_eigh(a, g, w)
    ref = np.linalg.eigvalsh(_arrow(a, g, w))
    assert np.allclose(np.sort(eig.values), ref, atol=1e-12)
    V = np.vstack([eig.head[None, :], eig.tail_matrix()])
    assert np.allclose(V.conj().T @ V, np.eye(6), atol=1e-11)
    assert np.allclose(_arrow(a, g, w) @ V, V * eig.values[None, :], atol=1e-11)


def test_bordered_without_couplings():
    eig = bordered_eigh(0.7, np.zeros(3), np.array([1.0, 2.0, 3.0]))
    assert np.allclose(np.sort(eig.values), [0.7, 1.0, 2.0, 3.0])
