"""Compiled inner loops for HOLMES shape functions.

Everything here works on plain arrays so the numba kernels stay simple; the
public surface lives in :mod:`maxent_doe.holmes`.
"""

import numpy as np
from numba import njit

# reassociation lets LLVM vectorize the reductions; NaN/inf semantics are kept
# so the finiteness checks stay meaningful
_FAST = {"reassoc", "contract", "arcp"}

STATUS_OK = 0
STATUS_MAXITER = 1
STATUS_RANK = 2
STATUS_NONFINITE = 3


@njit(cache=True)
def _pnorm_p(x, y, p):
    acc = 0.0
    if p == 2.0:
        for i in range(x.shape[0]):
            t = x[i] - y[i]
            acc += t * t
    elif p == 3.0:
        for i in range(x.shape[0]):
            t = abs(x[i] - y[i])
            acc += t * t * t
    else:
        for i in range(x.shape[0]):
            acc += abs(x[i] - y[i]) ** p
    return acc


@njit(cache=True, nogil=True)
def find_neighbors(queries, nodes, beta, p, log_cutoff):
    """CSR neighbour lists: nodes with ``exp(-beta_a |x - x_a|_p^p) >= cutoff``.

    A query with no node inside any support falls back to its nearest node.
    """
    nq = queries.shape[0]
    nn = nodes.shape[0]
    counts = np.zeros(nq, dtype=np.int64)
    for q in range(nq):
        c = 0
        for a in range(nn):
            if beta[a] * _pnorm_p(queries[q], nodes[a], p) <= log_cutoff:
                c += 1
        counts[q] = max(c, 1)
    offsets = np.zeros(nq + 1, dtype=np.int64)
    for q in range(nq):
        offsets[q + 1] = offsets[q] + counts[q]
    indices = np.empty(offsets[nq], dtype=np.int64)
    for q in range(nq):
        pos = offsets[q]
        for a in range(nn):
            if beta[a] * _pnorm_p(queries[q], nodes[a], p) <= log_cutoff:
                indices[pos] = a
                pos += 1
        if pos == offsets[q]:
            best = 0
            best_d = np.inf
            for a in range(nn):
                dd = 0.0
                for i in range(queries.shape[1]):
                    diff = queries[q, i] - nodes[a, i]
                    dd += diff * diff
                if dd < best_d:
                    best_d = dd
                    best = a
            indices[pos] = best
    return offsets, indices


@njit(cache=True, fastmath=_FAST)
def _fill_monomials(y, exps, order, powers, out):
    d = y.shape[0]
    for i in range(d):
        powers[i, 0] = 1.0
        for e in range(1, order + 1):
            powers[i, e] = powers[i, e - 1] * y[i]
    for j in range(exps.shape[0]):
        v = 1.0
        for i in range(d):
            v *= powers[i, exps[j, i]]
        out[j] = v


@njit(cache=True, fastmath=_FAST)
def _residual(E, Mt, D, lam, wp, wm, t, r):
    """Weights ``w^+-`` and consistency residual ``r`` for multipliers ``lam``.

    ``Mt`` holds the monomials transposed, one row per multi-index; the
    first ``D`` rows are the consistency basis.
    """
    K = Mt.shape[1]
    for k in range(K):
        t[k] = 0.0
    for j in range(D):
        lj = lam[j]
        for k in range(K):
            t[k] += lj * Mt[j, k]
    for k in range(K):
        et = np.exp(t[k])
        wp[k] = E[k] / et
        wm[k] = E[k] * et
        t[k] = wp[k] - wm[k]
    for j in range(D):
        acc = 0.0
        for k in range(K):
            acc += t[k] * Mt[j, k]
        r[j] = -acc
    r[0] += 1.0
    rn = 0.0
    for j in range(D):
        rn += r[j] * r[j]
    rn = np.sqrt(rn)
    return rn, np.isfinite(rn)


@njit(cache=True, fastmath=_FAST)
def _newton_step(Mt, pair, wp, wm, r, rn, lam, J, mu):
    """``lam -= (J + rn I)^-1 r``.

    ``J_ij = sum_k (w+ + w-) m_i m_j`` only depends on the summed exponent,
    so the moments ``mu`` over all multi-indices of twice the order are
    formed once and scattered through ``pair``.
    """
    D = pair.shape[0]
    D2, K = Mt.shape
    for b in range(D2):
        acc = 0.0
        for k in range(K):
            acc += (wp[k] + wm[k]) * Mt[b, k]
        mu[b] = acc
    for i in range(D):
        for j in range(D):
            J[i, j] = mu[pair[i, j]]
        J[i, i] += rn
    step = _spd_solve(J, r)
    for j in range(D):
        lam[j] -= step[j]


@njit(cache=True, fastmath=_FAST)
def _spd_solve(A, b):
    """Cholesky solve; pseudo-inverse when ``A`` is not numerically SPD."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return np.linalg.pinv(A) @ b
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    z = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True, fastmath=_FAST, nogil=True)
def solve_batch(queries, nodes, beta, p, h_g, exps2, pair, order, offsets, indices,
                tol, max_iters, polish):
    """Regularized Newton solve for every query.

    Returns weights aligned with ``indices`` plus per-query multipliers,
    iteration counts, final residual norms and a status code.
    """
    nq, d = queries.shape
    D = pair.shape[0]
    D2 = exps2.shape[0]
    weights = np.zeros(indices.shape[0])
    lams = np.zeros((nq, D))
    iters = np.zeros(nq, dtype=np.int64)
    resid = np.zeros(nq)
    status = np.zeros(nq, dtype=np.int64)
    powers = np.empty((d, 2 * order + 1))
    y = np.empty(d)
    J = np.empty((D, D))
    r = np.empty(D)
    r2 = np.empty(D)
    lam = np.empty(D)
    lam2 = np.empty(D)
    kmax = 0
    for q in range(nq):
        kmax = max(kmax, offsets[q + 1] - offsets[q])
    Ebuf = np.empty(kmax)
    Mbuf = np.empty((D2, kmax))
    mrow = np.empty(D2)
    tbuf = np.empty(kmax)
    mu = np.empty(D2)
    wpbuf = np.empty(kmax)
    wmbuf = np.empty(kmax)
    wp2buf = np.empty(kmax)
    wm2buf = np.empty(kmax)
    for q in range(nq):
        start = offsets[q]
        K = offsets[q + 1] - start
        if K < D:
            status[q] = STATUS_RANK
            resid[q] = np.inf
            continue
        E = Ebuf[:K]
        Mt = Mbuf[:, :K]
        tk = tbuf[:K]
        wp = wpbuf[:K]
        wm = wmbuf[:K]
        for k in range(K):
            a = indices[start + k]
            for i in range(d):
                y[i] = (queries[q, i] - nodes[a, i]) / h_g
            E[k] = np.exp(-1.0 - beta[a] * _pnorm_p(queries[q], nodes[a], p))
            _fill_monomials(y, exps2, 2 * order, powers, mrow)
            for j in range(D2):
                Mt[j, k] = mrow[j]
        for j in range(D):
            lam[j] = 0.0
        it = 0
        rn, ok = _residual(E, Mt, D, lam, wp, wm, tk, r)
        while ok and rn > tol and it < max_iters:
            _newton_step(Mt, pair, wp, wm, r, rn, lam, J, mu)
            it += 1
            rn, ok = _residual(E, Mt, D, lam, wp, wm, tk, r)
        if not ok:
            status[q] = STATUS_NONFINITE
        elif rn > tol:
            status[q] = STATUS_MAXITER
        elif polish:
            # one extra step drives the constraints to round-off for finite differences
            for j in range(D):
                lam2[j] = lam[j]
            wp2 = wp2buf[:K]
            wm2 = wm2buf[:K]
            _newton_step(Mt, pair, wp, wm, r, rn, lam2, J, mu)
            rn2, ok2 = _residual(E, Mt, D, lam2, wp2, wm2, tk, r2)
            if ok2 and rn2 <= rn:
                for j in range(D):
                    lam[j] = lam2[j]
                for k in range(K):
                    wp[k] = wp2[k]
                    wm[k] = wm2[k]
                rn = rn2
        iters[q] = it
        resid[q] = rn
        for j in range(D):
            lams[q, j] = lam[j]
        for k in range(K):
            weights[start + k] = wp[k] - wm[k]
    return weights, lams, iters, resid, status


@njit(cache=True, nogil=True)
def csr_dot(offsets, indices, weights, values):
    """``sum_a w_a(x) v_a`` for every query row of a CSR weight matrix."""
    nq = offsets.shape[0] - 1
    out = np.zeros(nq)
    for q in range(nq):
        acc = 0.0
        for k in range(offsets[q], offsets[q + 1]):
            acc += weights[k] * values[indices[k]]
        out[q] = acc
    return out
