"""Optional numba kernel for the q=1 mixed-model evaluation.

The policy model (one fixed slope, one random slope, shared predictor) is
refit once per held-out choice during cross-validation; this fused kernel
computes the Laplace value and gradient in one pass-structured loop. The
numpy implementation in glmm.py is the reference; the two are equivalence-
tested, and everything works (slower) when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap(args[0]) if args and callable(args[0]) else wrap


@njit(cache=True)
def _ev_neg2(t, s, e, e_safe, uu2, resid0, n_obs):
    d = e.shape[0]
    c = np.exp(t + s)
    logdet = 0.0
    s1 = 0.0
    for k in range(d):
        denom = e[k] + c
        logdet += np.log(denom)
        s1 += uu2[k] / (e_safe[k] * denom)
    quad = np.exp(-s) * (resid0 + c * s1)
    return (
        n_obs * np.log(2.0 * np.pi)
        + (n_obs - d) * s
        - d * t
        + logdet
        + quad
    )


@njit(cache=True)
def _ev_grad_hess(t, s, e, e_safe, uu2, resid0, n_obs):
    d = e.shape[0]
    c = np.exp(t + s)
    T1 = 0.0
    T2 = 0.0
    S1 = 0.0
    U2 = 0.0
    U3 = 0.0
    for k in range(d):
        inv = 1.0 / (e[k] + c)
        T1 += inv
        T2 += inv * inv
        S1 += uu2[k] * inv / e_safe[k]
        U2 += uu2[k] * inv * inv
        U3 += uu2[k] * inv * inv * inv
    es = np.exp(-s)
    R = resid0 + c * S1
    cT1 = c * T1
    g_t = -d + cT1 + es * c * U2
    g_s = (n_obs - d) + cT1 - es * R + es * c * U2
    base = cT1 - c * c * T2
    h_tt = base + es * (c * U2 - 2.0 * c * c * U3)
    h_ts = base - 2.0 * es * c * c * U3
    h_ss = base + es * R - es * c * U2 - 2.0 * es * c * c * U3
    return g_t, g_s, h_tt, h_ts, h_ss


@njit(cache=True)
def evidence_lm(e, e_safe, uu2, resid0, n_obs, starts, max_iter, grad_tol, log_bound):
    """Multistart damped-Newton evidence maximization (see learners module).

    Runs every start to convergence/stall and returns (t, s, -2 log ev,
    converged) for the best terminal point.
    """
    P = starts.shape[0]
    pts = starts.copy()
    B = np.empty(P)
    mu = np.full(P, 1e-2)
    stall = np.zeros(P, dtype=np.int64)
    done = np.zeros(P, dtype=np.bool_)
    for p in range(P):
        for j in range(2):
            if pts[p, j] < -log_bound:
                pts[p, j] = -log_bound
            elif pts[p, j] > log_bound:
                pts[p, j] = log_bound
        B[p] = _ev_neg2(pts[p, 0], pts[p, 1], e, e_safe, uu2, resid0, n_obs)
    for _ in range(max_iter):
        n_open = 0
        for p in range(P):
            if done[p]:
                continue
            g_t, g_s, h_tt, h_ts, h_ss = _ev_grad_hess(
                pts[p, 0], pts[p, 1], e, e_safe, uu2, resid0, n_obs
            )
            pg_t = g_t
            pg_s = g_s
            if pts[p, 0] <= -log_bound + 1e-12 and g_t > 0:
                pg_t = 0.0
            if pts[p, 0] >= log_bound - 1e-12 and g_t < 0:
                pg_t = 0.0
            if pts[p, 1] <= -log_bound + 1e-12 and g_s > 0:
                pg_s = 0.0
            if pts[p, 1] >= log_bound - 1e-12 and g_s < 0:
                pg_s = 0.0
            if (abs(pg_t) < grad_tol and abs(pg_s) < grad_tol) or stall[p] >= 8:
                done[p] = True
                continue
            n_open += 1
            scale = 1.0 + max(abs(h_tt), abs(h_ss))
            lam = mu[p] * scale
            for _ in range(14):
                d00 = h_tt + lam
                d11 = h_ss + lam
                det = d00 * d11 - h_ts * h_ts
                if det > 0.0 and d00 > 0.0:
                    break
                lam *= 10.0
            mu[p] = lam / scale
            dt_ = -(d11 * pg_t - h_ts * pg_s) / det
            ds_ = -(d00 * pg_s - h_ts * pg_t) / det
            ct = pts[p, 0] + dt_
            cs = pts[p, 1] + ds_
            if ct < -log_bound:
                ct = -log_bound
            elif ct > log_bound:
                ct = log_bound
            if cs < -log_bound:
                cs = -log_bound
            elif cs > log_bound:
                cs = log_bound
            Bc = _ev_neg2(ct, cs, e, e_safe, uu2, resid0, n_obs)
            if np.isfinite(Bc) and Bc <= B[p] + 1e-11 * (1.0 + abs(B[p])):
                pts[p, 0] = ct
                pts[p, 1] = cs
                B[p] = Bc
                mu[p] = max(mu[p] * 0.25, 1e-12)
                stall[p] = 0
            else:
                mu[p] = min(mu[p] * 8.0, 1e14)
                stall[p] += 1
        if n_open == 0:
            break
    best = 0
    for p in range(1, P):
        if B[p] < B[best]:
            best = p
    g_t, g_s, h_tt, h_ts, h_ss = _ev_grad_hess(
        pts[best, 0], pts[best, 1], e, e_safe, uu2, resid0, n_obs
    )
    pg_t = g_t
    pg_s = g_s
    if pts[best, 0] <= -log_bound + 1e-12 and g_t > 0:
        pg_t = 0.0
    if pts[best, 0] >= log_bound - 1e-12 and g_t < 0:
        pg_t = 0.0
    if pts[best, 1] <= -log_bound + 1e-12 and g_s > 0:
        pg_s = 0.0
    if pts[best, 1] >= log_bound - 1e-12 and g_s < 0:
        pg_s = 0.0
    conv = abs(pg_t) < 10.0 * grad_tol and abs(pg_s) < 10.0 * grad_tol
    return pts[best, 0], pts[best, 1], B[best], conv


@njit(cache=True)
def q1_value_grad(xs, y, g, m, w, beta, log_sd, b, inner_gtol, max_iter):
    """Laplace value and (d/dbeta, d/dtheta) for the q=1 slope-only model.

    xs doubles as fixed and random design column. b is updated in place to
    the posterior modes. Mirrors LaplaceProblem._grad_q1 exactly.
    """
    n = xs.shape[0]
    sd = np.exp(log_sd)
    P00 = 1.0 / (sd * sd)

    # inner Newton for the group modes (capped steps; each group objective is
    # strictly concave, so a converged gradient certifies the unique mode)
    inner_ok = False
    for _ in range(max_iter):
        grad_max = 0.0
        gsum = np.zeros(m)
        hsum = np.zeros(m)
        for j in range(n):
            eta = xs[j] * (beta + b[g[j]])
            mu = 1.0 / (1.0 + np.exp(-eta))
            gsum[g[j]] += w[j] * (y[j] - mu) * xs[j]
            hsum[g[j]] += w[j] * mu * (1.0 - mu) * xs[j] * xs[j]
        for i in range(m):
            gi = gsum[i] - P00 * b[i]
            if abs(gi) > grad_max:
                grad_max = abs(gi)
        if grad_max < inner_gtol:
            inner_ok = True
            break
        for i in range(m):
            step = (gsum[i] - P00 * b[i]) / (hsum[i] + P00)
            if step > 1.5:
                step = 1.5
            elif step < -1.5:
                step = -1.5
            b[i] += step

    # value, H at modes, and gradient pieces in two fused passes
    loglik = 0.0
    H1 = np.zeros(m)
    for j in range(n):
        eta = xs[j] * (beta + b[g[j]])
        if eta > 0.0:
            loglik += w[j] * (y[j] * eta - (eta + np.log1p(np.exp(-eta))))
        else:
            loglik += w[j] * (y[j] * eta - np.log1p(np.exp(eta)))
        mu = 1.0 / (1.0 + np.exp(-eta))
        H1[g[j]] += w[j] * mu * (1.0 - mu) * xs[j] * xs[j]
    bb = 0.0
    logdet_H = 0.0
    hinv_sum = 0.0
    for i in range(m):
        H1[i] += P00
        bb += b[i] * b[i]
        logdet_H += np.log(H1[i])
        hinv_sum += 1.0 / H1[i]
    value = loglik - 0.5 * P00 * bb - m * log_sd - 0.5 * logdet_H

    v = np.zeros(m)
    grad_beta = 0.0
    for j in range(n):
        eta = xs[j] * (beta + b[g[j]])
        mu = 1.0 / (1.0 + np.exp(-eta))
        c = xs[j] * xs[j] / H1[g[j]]
        s = w[j] * mu * (1.0 - mu) * (1.0 - 2.0 * mu) * c
        v[g[j]] += s * xs[j]
        grad_beta += xs[j] * (w[j] * (y[j] - mu) - 0.5 * s)
    ba = 0.0
    for i in range(m):
        ba += b[i] * v[i] / H1[i]
    for j in range(n):
        eta = xs[j] * (beta + b[g[j]])
        mu = 1.0 / (1.0 + np.exp(-eta))
        u = xs[j] * v[g[j]] / H1[g[j]]
        grad_beta += 0.5 * xs[j] * w[j] * mu * (1.0 - mu) * u
    Q = (
        0.5 * P00 * P00 * bb
        - 0.5 * m * P00
        + 0.5 * P00 * P00 * hinv_sum
        - 0.5 * P00 * P00 * ba
    )
    grad_theta = 2.0 * Q / P00
    return -value, -grad_beta, -grad_theta, inner_ok
