"""Compiled cyclic coordinate descent for L1-penalised GLMs on binary columns.

The design matrix is passed as CSC ``indptr``/``indices`` with implicit unit
entries. The smooth part of the objective is ``(1/2n)||y - eta||^2`` for the
gaussian family and the mean negative log-likelihood for the binomial family.
"""

from __future__ import annotations

import numba
import numpy as np

STATUS_OK = 0
STATUS_MAX_ITER = 1

HISTORY_EVERY = 100
PIVOT_EPS = 1e-10


@numba.njit(cache=True)
def _softplus(t):
    if t > 0.0:
        return t + np.log1p(np.exp(-t))
    return np.log1p(np.exp(t))


@numba.njit(cache=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True)
def _linpred(indptr, indices, b0, beta, eta):
    eta[:] = b0
    for j in range(beta.shape[0]):
        bj = beta[j]
        if bj != 0.0:
            for k in range(indptr[j], indptr[j + 1]):
                eta[indices[k]] += bj


@numba.njit(cache=True)
def _objective(y, eta, binomial, lam, pen_int, b0, beta):
    n = y.shape[0]
    s = 0.0
    if binomial:
        for i in range(n):
            s += _softplus(eta[i]) - y[i] * eta[i]
        s /= n
    else:
        for i in range(n):
            r = y[i] - eta[i]
            s += r * r
        s /= 2.0 * n
    pen = 0.0
    for j in range(beta.shape[0]):
        pen += abs(beta[j])
    if pen_int:
        pen += abs(b0)
    return s + lam * pen


@numba.njit(cache=True)
def _gradient_residual(y, eta, binomial, res):
    for i in range(y.shape[0]):
        if binomial:
            res[i] = y[i] - _sigmoid(eta[i])
        else:
            res[i] = y[i] - eta[i]


@numba.njit(cache=True)
def _kkt(indptr, indices, res, lam, pen_int, fix_int, b0, beta, grad):
    """Fill grad with X^T res / n and return the largest KKT violation."""
    n = res.shape[0]
    p = beta.shape[0]
    g0 = 0.0
    for i in range(n):
        g0 += res[i]
    g0 /= n
    if fix_int:
        viol = 0.0
    elif pen_int:
        if b0 == 0.0:
            viol = max(abs(g0) - lam, 0.0)
        else:
            viol = abs(-g0 + lam * np.sign(b0))
    else:
        viol = abs(g0)
    for j in range(p):
        g = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            g += res[indices[k]]
        g /= n
        grad[j] = g
        if beta[j] == 0.0:
            v = max(abs(g) - lam, 0.0)
        else:
            v = abs(-g + lam * np.sign(beta[j]))
        if v > viol:
            viol = v
    return viol


@numba.njit(cache=True)
def _pinned_cholesky(h, rel_eps):
    """In-order Cholesky of symmetric PSD h that skips dependent columns.

    A column whose pivot collapses below rel_eps * h_kk is a combination of
    earlier ones and is left out. Returns the factor of the kept block
    (compacted) and the kept mask.
    """
    m = h.shape[0]
    u = np.zeros((m, m))
    for k in range(m):
        for r in range(k, m):
            u[k, r] = h[k, r]
    keep = np.ones(m, dtype=np.bool_)
    for k in range(m):
        s = u[k, k]
        if s <= rel_eps * h[k, k] or s <= 0.0:
            keep[k] = False
            continue
        piv = np.sqrt(s)
        for r in range(k, m):
            u[k, r] /= piv
        for c in range(k + 1, m):
            lc = u[k, c]
            if lc != 0.0:
                for r in range(c, m):
                    u[c, r] -= lc * u[k, r]
    idx = np.flatnonzero(keep)
    q = idx.shape[0]
    low = np.zeros((q, q))
    for a in range(q):
        for b in range(a + 1):
            low[a, b] = u[idx[b], idx[a]]
    return low, keep


@numba.njit(cache=True)
def _gram_reset(slot, slot_col, meta):
    for t in range(meta[0]):
        slot[slot_col[t]] = -1
    meta[0] = 0


@numba.njit(cache=True)
def _gram_add(indptr, indices, w, j, slot, slot_col, gram, meta, scratch):
    """Append column j to the Gram cache (weighted inner products)."""
    if meta[0] == slot_col.shape[0]:
        _gram_reset(slot, slot_col, meta)
    s = meta[0]
    for q in range(indptr[j], indptr[j + 1]):
        scratch[indices[q]] = w[indices[q]]
    slot[j] = s
    slot_col[s] = j
    for t in range(s + 1):
        jt = slot_col[t]
        v = 0.0
        for q in range(indptr[jt], indptr[jt + 1]):
            v += scratch[indices[q]]
        gram[s, t] = v
        gram[t, s] = v
    for q in range(indptr[j], indptr[j + 1]):
        scratch[indices[q]] = 0.0
    meta[0] = s + 1


@numba.njit(cache=True)
def _chol_solve(low, m, rhs):
    """Solve (L L') x = rhs with L the leading m x m block of low."""
    z = np.empty(m)
    for k in range(m):
        v = rhs[k]
        for t in range(k):
            v -= low[k, t] * z[t]
        z[k] = v / low[k, k]
    x = np.empty(m)
    for k in range(m - 1, -1, -1):
        v = z[k]
        for t in range(k + 1, m):
            v -= low[t, k] * x[t]
        x[k] = v / low[k, k]
    return x


@numba.njit(cache=True)
def _chol_delete(low, m, r):
    """Drop row/column r from the factor held in the leading m x m block."""
    x = low[r + 1:m, r].copy()
    for i in range(r, m - 1):
        for t in range(m):
            low[i, t] = low[i + 1, t]
    for t in range(r, m - 1):
        for i in range(m - 1):
            low[i, t] = low[i, t + 1]
    for i in range(m):
        low[m - 1, i] = 0.0
        low[i, m - 1] = 0.0
    # the trailing block absorbs the removed column as a rank-one update
    q = m - 1 - r
    for k in range(q):
        kk = r + k
        lkk = low[kk, kk]
        rr = np.sqrt(lkk * lkk + x[k] * x[k])
        c = rr / lkk
        s = x[k] / lkk
        low[kk, kk] = rr
        for i in range(k + 1, q):
            ii = r + i
            low[ii, kk] = (low[ii, kk] + s * x[i]) / c
            x[i] = c * x[i] - s * low[ii, kk]


@numba.njit(cache=True)
def _newton_face(indptr, indices, w, wr, wsum, nlam, pen_int, fix_int, b0, beta, scratch,
                 slot, slot_col, gram, meta):
    """Move (b0, beta) towards the minimiser of the quadratic subproblem over
    the face fixed by the current support and signs.

    Active-set loop: solve on the face, truncate the step at the first sign
    change, drop that variable and re-solve. Every accepted move stays on a
    face containing the current point, so the objective never increases.
    Updates wr in place and returns the new intercept.
    """
    n = wr.shape[0]
    p = beta.shape[0]
    k = 0
    for j in range(p):
        if beta[j] != 0.0:
            k += 1
    use_b0 = not fix_int and ((not pen_int) or b0 != 0.0)
    off = 1 if use_b0 else 0
    m = k + off
    if m == 0 or k > slot_col.shape[0]:
        return b0
    var = np.empty(m, dtype=np.int64)  # -1 is the intercept
    if use_b0:
        var[0] = -1
    t = off
    for j in range(p):
        if beta[j] != 0.0:
            var[t] = j
            t += 1
    for a in range(off, m):
        if slot[var[a]] < 0:
            _gram_add(indptr, indices, w, var[a], slot, slot_col, gram, meta, scratch)
    for a in range(off, m):
        if slot[var[a]] < 0:
            # cache overflowed part way; rebuild it for the support only
            _gram_reset(slot, slot_col, meta)
            for b in range(off, m):
                _gram_add(indptr, indices, w, var[b], slot, slot_col, gram, meta, scratch)
            break

    h = np.empty((m, m))
    for a in range(m):
        for b in range(m):
            ja = var[a]
            jb = var[b]
            if ja < 0 and jb < 0:
                h[a, b] = wsum
            elif ja < 0:
                # binary columns: <1, w x_j> equals the diagonal entry
                h[a, b] = gram[slot[jb], slot[jb]]
            elif jb < 0:
                h[a, b] = gram[slot[ja], slot[ja]]
            else:
                h[a, b] = gram[slot[ja], slot[jb]]
    try:
        low = np.linalg.cholesky(h)
    except Exception:
        # dependent columns on this face stay where they are
        low, keep = _pinned_cholesky(h, PIVOT_EPS)
        t = 0
        for a in range(m):
            if keep[a]:
                var[t] = var[a]
                t += 1
        m = t
        if m == 0:
            return b0

    rhs = np.empty(m)
    for _ in range(m):
        for a in range(m):
            ja = var[a]
            g = 0.0
            if ja < 0:
                for i in range(n):
                    g += wr[i]
                rhs[a] = g - (nlam * np.sign(b0) if pen_int else 0.0)
            else:
                for q in range(indptr[ja], indptr[ja + 1]):
                    g += wr[indices[q]]
                rhs[a] = g - nlam * np.sign(beta[ja])
        delta = _chol_solve(low, m, rhs)

        step = 1.0
        hit = -1
        for a in range(m):
            ja = var[a]
            if ja < 0 and not pen_int:
                continue
            cur = b0 if ja < 0 else beta[ja]
            da = delta[a]
            if da != 0.0 and (cur + da) * cur <= 0.0:
                tt = -cur / da
                if tt < step:
                    step = tt
                    hit = a
        if not step > 0.0:
            break

        for i in range(n):
            scratch[i] = 0.0
        for a in range(m):
            ja = var[a]
            if ja < 0:
                d = -b0 if a == hit else step * delta[a]
                b0 = 0.0 if a == hit else b0 + d
                for i in range(n):
                    scratch[i] += w[i] * d
            else:
                d = -beta[ja] if a == hit else step * delta[a]
                beta[ja] = 0.0 if a == hit else beta[ja] + d
                if d != 0.0:
                    for q in range(indptr[ja], indptr[ja + 1]):
                        i = indices[q]
                        scratch[i] += w[i] * d
        for i in range(n):
            wr[i] -= scratch[i]
            scratch[i] = 0.0

        if hit < 0:
            break
        _chol_delete(low, m, hit)
        for a in range(hit, m - 1):
            var[a] = var[a + 1]
        m -= 1
        if m == 0:
            break
    return b0


@numba.njit(cache=True)
def coordinate_descent(indptr, indices, y, binomial, lam, pen_int, fix_int, b0, beta,
                       kkt_tol, coef_tol, max_iter, w_floor, face_steps,
                       slot, slot_col, gram, meta):
    """Minimise the penalised objective from the warm start (b0, beta).

    Returns (b0, beta, sweeps, kkt_violation, status, objective_history).
    With fix_int the intercept is held at its starting value.
    The history holds the objective every HISTORY_EVERY sweeps (gaussian)
    or after every reweighting step (binomial), plus the final value.

    With face_steps enabled, a sweep that leaves the support and signs
    unchanged is followed by a Newton step on that face of the quadratic
    subproblem; coordinate sweeps still decide which variables enter/leave.
    slot/slot_col/gram/meta form a Gram-row cache that persists across
    calls on the same design (see GramCache); it is reset whenever the
    binomial weights change.
    """
    n = y.shape[0]
    p = beta.shape[0]
    beta = beta.copy()
    eta = np.empty(n)
    res = np.empty(n)
    w = np.ones(n)
    wr = np.empty(n)
    grad = np.empty(p)
    c = np.zeros(p)
    scratch = np.zeros(n)
    old_beta = np.empty(p)
    active = np.zeros(p, dtype=np.bool_)
    for j in range(p):
        if beta[j] != 0.0:
            active[j] = True
    history = np.empty(max_iter // HISTORY_EVERY + 1002)
    nhist = 0
    nlam = n * lam

    _linpred(indptr, indices, b0, beta, eta)
    obj = _objective(y, eta, binomial, lam, pen_int, b0, beta)
    history[nhist] = obj
    nhist += 1
    sweeps = 0
    status = STATUS_OK
    viol = 0.0

    while True:
        _gradient_residual(y, eta, binomial, res)
        viol = _kkt(indptr, indices, res, lam, pen_int, fix_int, b0, beta, grad)
        if viol <= kkt_tol:
            break
        if sweeps >= max_iter:
            status = STATUS_MAX_ITER
            break
        for j in range(p):
            if not active[j] and abs(grad[j]) > lam:
                active[j] = True

        if binomial:
            for i in range(n):
                mu = _sigmoid(eta[i])
                w[i] = max(mu * (1.0 - mu), w_floor)
            _gram_reset(slot, slot_col, meta)
        wsum = 0.0
        for i in range(n):
            wsum += w[i]
            wr[i] = res[i]
        for j in range(p):
            if active[j]:
                cj = 0.0
                for k in range(indptr[j], indptr[j + 1]):
                    cj += w[indices[k]]
                c[j] = cj
        old_b0 = b0
        old_beta[:] = beta

        # cyclic sweeps over the active set on the quadratic subproblem
        while True:
            maxch = 0.0
            moved_face = False
            g0 = 0.0
            for i in range(n):
                g0 += wr[i]
            if fix_int:
                d = 0.0
            elif pen_int:
                new = _soft(wsum * b0 + g0, nlam) / wsum
                d = new - b0
                if d != 0.0 and new * b0 <= 0.0:
                    moved_face = True
            else:
                d = g0 / wsum
            if d != 0.0:
                b0 += d
                for i in range(n):
                    wr[i] -= w[i] * d
                maxch = abs(d)
            for j in range(p):
                if not active[j] or c[j] == 0.0:
                    continue
                g = 0.0
                for k in range(indptr[j], indptr[j + 1]):
                    g += wr[indices[k]]
                new = _soft(c[j] * beta[j] + g, nlam) / c[j]
                d = new - beta[j]
                if d != 0.0:
                    if new * beta[j] <= 0.0:
                        moved_face = True
                    beta[j] = new
                    for k in range(indptr[j], indptr[j + 1]):
                        i = indices[k]
                        wr[i] -= w[i] * d
                    if abs(d) > maxch:
                        maxch = abs(d)
            sweeps += 1
            if not binomial and sweeps % HISTORY_EVERY == 0 and nhist < history.shape[0] - 1:
                _linpred(indptr, indices, b0, beta, eta)
                history[nhist] = _objective(y, eta, binomial, lam, pen_int, b0, beta)
                nhist += 1
            if maxch < coef_tol or sweeps >= max_iter:
                break
            if face_steps and not moved_face:
                b0 = _newton_face(indptr, indices, w, wr, wsum, nlam, pen_int, fix_int, b0, beta,
                                  scratch, slot, slot_col, gram, meta)

        _linpred(indptr, indices, b0, beta, eta)
        new_obj = _objective(y, eta, binomial, lam, pen_int, b0, beta)
        if binomial:
            # step halving keeps the reweighting steps monotone
            halvings = 0
            while new_obj > obj and halvings < 40:
                halvings += 1
                b0 = old_b0 + 0.5 * (b0 - old_b0)
                for j in range(p):
                    beta[j] = old_beta[j] + 0.5 * (beta[j] - old_beta[j])
                _linpred(indptr, indices, b0, beta, eta)
                new_obj = _objective(y, eta, binomial, lam, pen_int, b0, beta)
            if nhist < history.shape[0] - 1:
                history[nhist] = new_obj
                nhist += 1
        obj = new_obj

    history[nhist] = obj
    nhist += 1
    return b0, beta, sweeps, viol, status, history[:nhist]


class GramCache:
    """Gram rows of previously active columns, reused across warm starts."""

    def __init__(self, n_rows: int, n_cols: int, capacity: int | None = None):
        cap = min(n_cols, 2 * n_rows + 2) if capacity is None else min(capacity, n_cols)
        cap = max(cap, 1)
        self.slot = np.full(n_cols, -1, dtype=np.int64)
        self.slot_col = np.zeros(cap, dtype=np.int64)
        self.gram = np.zeros((cap, cap))
        self.meta = np.zeros(1, dtype=np.int64)

    def arrays(self):
        return self.slot, self.slot_col, self.gram, self.meta
