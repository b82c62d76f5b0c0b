"""Homogeneous linear model machinery.

Generic pieces of the fit that do not know about conics: weighted scatter
assembly, Schur reduction of a partitioned constraint, the reduced
symmetric-definite eigenproblem, eigenvector reconstruction, generalized
inverses and coefficient covariances.  Model dimension ``M`` and constraint
rank ``R`` are arbitrary; the conic code uses ``M = 6``, ``R = 5``.

Matrix sums are accumulated with :func:`math.fsum`, which is exactly
rounded, so results do not depend on the order of the input points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class FitError(ValueError):
    """Raised when data or intermediate quantities make a fit ill-defined."""


def _fsum_columns(rows: np.ndarray) -> np.ndarray:
    # rows: (n_terms, n_entries); exact-rounded column sums.
    return np.array([math.fsum(col) for col in rows.T.tolist()], dtype=float)


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise FitError(f"expected {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise FitError("invalid weight")
    return w


def build_scatter(designs, weights=None) -> np.ndarray:
    """Weighted scatter matrix ``S = sum_i w_i D_i D_i^T``.

    Parameters
    ----------
    designs : array_like, shape (N, M)
        One design vector per row.
    weights : array_like, shape (N,), optional
        Strictly positive weights; unit weights when omitted.

    Returns
    -------
    ndarray, shape (M, M)
        Exactly symmetric (upper triangle summed, then mirrored).
    """
    d = np.asarray(designs, dtype=float)
    if d.ndim != 2 or d.shape[0] == 0:
        raise FitError("no data")
    n = d.shape[0]
    w = np.ones(n) if weights is None else _check_weights(weights, n)
    return _outer_sum(d, w)


def _outer_sum(d: np.ndarray, w: np.ndarray) -> np.ndarray:
    m = d.shape[1]
    iu, ju = np.triu_indices(m)
    terms = w[:, None] * (d[:, iu] * d[:, ju])
    s = np.zeros((m, m))
    s[iu, ju] = _fsum_columns(terms)
    s[ju, iu] = s[iu, ju]
    return s


def build_gradient_constraint(gradients, weights=None) -> np.ndarray:
    """``sum_i w_i sum_mu D_{i,mu} D_{i,mu}^T`` from design gradients.

    ``gradients`` has shape (N, L, M): for each point, the derivative of the
    design vector along each of the L data coordinates.
    """
    g = np.asarray(gradients, dtype=float)
    if g.ndim != 3 or g.shape[0] == 0:
        raise FitError("no data")
    n, lam, m = g.shape
    w = np.ones(n) if weights is None else _check_weights(weights, n)
    iu, ju = np.triu_indices(m)
    wr = np.repeat(w, lam)
    flat = g.reshape(n * lam, m)
    terms = wr[:, None] * (flat[:, iu] * flat[:, ju])
    c = np.zeros((m, m))
    c[iu, ju] = _fsum_columns(terms)
    c[ju, iu] = c[iu, ju]
    return c


def schur_reduce(s, rank_r: int):
    """Eliminate the trailing ``M - R`` block of ``s``.

    Returns ``(s_tilde, s21, s22_inv)`` where
    ``s_tilde = S11 - S12 S22^-1 S21`` is the reduced scatter matrix.
    """
    s = np.asarray(s, dtype=float)
    m = s.shape[0]
    if not 0 < rank_r <= m:
        raise FitError(f"rank {rank_r} out of range for dimension {m}")
    s11 = s[:rank_r, :rank_r]
    if rank_r == m:
        return s11.copy(), np.zeros((0, m)), np.zeros((0, 0))
    s21 = s[rank_r:, :rank_r]
    s22 = s[rank_r:, rank_r:]
    if not np.all(np.isfinite(s22)) or np.linalg.cond(s22) >= 1e12:
        raise FitError("degenerate data for reduction")
    s22_inv = np.linalg.inv(s22)
    s_tilde = s11 - s21.T @ s22_inv @ s21
    s_tilde = 0.5 * (s_tilde + s_tilde.T)
    return s_tilde, s21, s22_inv


def jacobi_eigh(a, max_sweeps: int = 60):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi.

    Returns ``(values, vectors)`` sorted ascending, eigenvectors in columns.
    Pure Python on nested lists: for n <= 6 this beats numpy call overhead
    and is bit-reproducible.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    A = a.tolist()
    V = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            Ap = A[p]
            for q in range(p + 1, n):
                apq = Ap[q]
                if apq == 0.0:
                    continue
                app = Ap[p]
                aqq = A[q][q]
                if abs(apq) < 1e-18 * (abs(app) + abs(aqq)):
                    Ap[q] = 0.0
                    A[q][p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for row in A:
                    akp = row[p]
                    akq = row[q]
                    row[p] = c * akp - s * akq
                    row[q] = s * akp + c * akq
                Aq = A[q]
                for k in range(n):
                    apk = Ap[k]
                    aqk = Aq[k]
                    Ap[k] = c * apk - s * aqk
                    Aq[k] = s * apk + c * aqk
                Ap[q] = 0.0
                Aq[p] = 0.0
                for row in V:
                    vkp = row[p]
                    vkq = row[q]
                    row[p] = c * vkp - s * vkq
                    row[q] = s * vkp + c * vkq
                rotated = True
        if not rotated:
            break
    else:
        raise FitError("Jacobi iteration did not converge")
    values = np.array([A[i][i] for i in range(n)])
    vectors = np.array(V)
    order = np.argsort(values, kind="stable")
    return values[order], vectors[:, order]


def canonical_sign(g: np.ndarray) -> np.ndarray:
    """Flip ``g`` so its first largest-magnitude component is positive.

    Magnitudes within a relative 1e-9 of the largest count as ties, so
    roundoff cannot flip the sign of vectors with equal components.
    """
    g = np.asarray(g, dtype=float)
    a = np.abs(g)
    k = int(np.argmax(a >= (1 - 1e-9) * a.max()))
    return -g if g[k] < 0 else g


def solve_reduced_eigen(s_tilde, c_tilde):
    """All eigenpairs of ``S~ G = lambda C~ G`` with ``C~`` positive definite.

    ``C~`` is Cholesky-factored as ``J J^T``; the symmetric standard problem
    ``J^-1 S~ J^-T`` is solved by :func:`jacobi_eigh` and mapped back with
    ``J^-T``.  Eigenvectors come back as rows, ascending in lambda, and are
    C~-orthonormal.
    """
    s_tilde = np.asarray(s_tilde, dtype=float)
    c_tilde = np.asarray(c_tilde, dtype=float)
    if not (np.all(np.isfinite(c_tilde)) and np.all(np.isfinite(s_tilde))):
        raise FitError("non-finite matrix in eigenproblem")
    ev = np.linalg.eigvalsh(c_tilde)
    if ev[0] <= 1e-12 * np.trace(c_tilde):
        raise FitError("invalid normalization matrix")
    j = np.linalg.cholesky(c_tilde)
    jinv = np.linalg.inv(j)
    a = jinv @ s_tilde @ jinv.T
    a = 0.5 * (a + a.T)
    lambdas, u = jacobi_eigh(a)
    vecs = (jinv.T @ u).T
    return lambdas, vecs


def reconstruct_full(g_tilde, s21, s22_inv) -> np.ndarray:
    """Full model vector ``(G~, H~)`` with ``H~ = -S22^-1 S21 G~``."""
    g_tilde = np.asarray(g_tilde, dtype=float)
    s21 = np.asarray(s21, dtype=float)
    s22_inv = np.asarray(s22_inv, dtype=float)
    if s21.shape[0] == 0:
        return g_tilde.copy()
    if s21.shape[1] != g_tilde.shape[0] or s22_inv.shape[0] != s21.shape[0]:
        raise FitError("dimension mismatch in reconstruction")
    h = -s22_inv @ (s21 @ g_tilde)
    return np.concatenate([g_tilde, h])


@dataclass(frozen=True)
class EigenSolution:
    """Solved pencil ``S G = lambda C G`` with partitioned ``C``.

    ``vectors[m]`` is the full M-component eigenvector for ``lambdas[m]``.
    """

    lambdas: np.ndarray
    vectors: np.ndarray
    s21: np.ndarray
    s22_inv: np.ndarray
    rank_r: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def solve_partitioned(s, c, rank_r: int) -> EigenSolution:
    """Reduce, solve and reconstruct: the whole generalized eigensolve."""
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    m = s.shape[0]
    if c.shape != (m, m):
        raise FitError("scatter and constraint shapes differ")
    if np.any(c[rank_r:, :] != 0.0) or np.any(c[:, rank_r:] != 0.0):
        raise FitError("constraint matrix is not in partitioned form")
    s_tilde, s21, s22_inv = schur_reduce(s, rank_r)
    lambdas, red = solve_reduced_eigen(s_tilde, c[:rank_r, :rank_r])
    full = np.array([canonical_sign(reconstruct_full(g, s21, s22_inv)) for g in red])
    return EigenSolution(lambdas, full, s21, s22_inv, rank_r)


def corner_block(sol: EigenSolution) -> np.ndarray:
    m = sol.dim
    out = np.zeros((m, m))
    out[sol.rank_r:, sol.rank_r:] = sol.s22_inv
    return out


def generalized_inverse(sol: EigenSolution, n: int = 0) -> np.ndarray:
    """``Y_n = sum_{m != n} G_m G_m^T / (lambda_m - lambda_n) + corner``.

    For ``n = 0`` on measured data the smallest eigenvalue is retained in
    the denominators, so ``Y_0`` is the generalized inverse of
    ``S - lambda_0 C`` on the complement of ``G_0``.
    """
    lam = sol.lambdas
    if n == 0 and len(lam) > 1 and lam[1] - lam[0] < 1e-10 * abs(lam[-1]):
        raise FitError("degenerate fit direction")
    y = corner_block(sol)
    for m, (lm, gm) in enumerate(zip(lam, sol.vectors)):
        if m == n:
            continue
        gap = lm - lam[n]
        if gap == 0.0:
            raise FitError("degenerate fit direction")
        y += np.outer(gm, gm) / gap
    return 0.5 * (y + y.T)


def generalized_inverse_y0(sol: EigenSolution) -> np.ndarray:
    return generalized_inverse(sol, 0)


def estimate_sigma2(sol: EigenSolution, n: int | None = None) -> float:
    """Noise variance estimate from the smallest eigenvalue, clamped at zero.

    Valid only when the constraint is the self-normalizing one.  With ``n``
    given, ``lambda0`` is scaled by ``n / (n - R)``: the fit absorbs ``R``
    degrees of freedom, so ``lambda0`` alone averages ``(n - R) / n`` of the
    noise variance.
    """
    lam = max(float(sol.lambdas[0]), 0.0)
    if n is None:
        return lam
    if n <= sol.rank_r:
        raise FitError("underdetermined: no residual degrees of freedom")
    return lam * n / (n - sol.rank_r)


def coefficient_covariance(y0, sigma2: float, n: int, *, designs=None,
                           gradients=None, weights=None, g0=None) -> np.ndarray:
    """Covariance of the fitted model vector.

    With only ``y0``, ``sigma2`` and ``n`` this is the optimally-weighted
    result ``sigma2 * Y0 / N``.  Supplying ``designs`` (N, M), ``gradients``
    (N, L, M), ``weights`` (N,) and ``g0`` gives the general expression

        sigma2 * Y0 [sum_i w_i^2 D_i |grad Z_i|^2 D_i^T] Y0

    needed when the weights are not the optimal ones.
    """
    y0 = np.asarray(y0, dtype=float)
    if sigma2 < 0:
        raise FitError("negative variance")
    if designs is None:
        if n <= 0:
            raise FitError("no data")
        return sigma2 * y0 / n
    d = np.asarray(designs, dtype=float)
    grads = np.asarray(gradients, dtype=float)
    w = np.ones(d.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    gz2 = np.sum((grads @ np.asarray(g0, dtype=float)) ** 2, axis=1)
    mid = _outer_sum(d, w * w * gz2)
    v = sigma2 * (y0 @ mid @ y0)
    return 0.5 * (v + v.T)
