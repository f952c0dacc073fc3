"""Mixed-effects logistic regression via the Laplace approximation.

The marginal likelihood of a logistic GLMM with Gaussian random effects has
no closed form; this module maximizes its Laplace approximation over the
fixed effects and the log-Cholesky parameterization of the random-effects
covariance, with analytic gradients throughout (the log-determinant term is
differentiated through the inner modes, not dropped).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import expit, ndtr

from ._fastpath import HAVE_NUMBA, q1_value_grad
from .errors import NumericalError, ValidationError

# Random-effect standard deviations live in [SD_MIN, SD_MAX]; a fitted sd at
# or below SD_BOUNDARY marks a boundary (effectively singular) covariance.
SD_MIN = 1e-6
SD_MAX = 1e3
SD_BOUNDARY = 1e-4
_LOG_SD_MIN = float(np.log(SD_MIN))
_LOG_SD_MAX = float(np.log(SD_MAX))


@dataclass(frozen=True)
class GlmmSpec:
    """Model specification against a design table.

    fixed_effects / random_effects name predictor columns (categorical
    columns are dummy-encoded, first level dropped); intercepts are implicit
    unless suppressed via the flags. The grouping factor is `group`.
    """

    response: str
    fixed_effects: tuple[str, ...]
    random_effects: tuple[str, ...]
    group: str = "participant"
    fixed_intercept: bool = True
    random_intercept: bool = True
    standardize_predictors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fixed_effects", tuple(self.fixed_effects))
        object.__setattr__(self, "random_effects", tuple(self.random_effects))


@dataclass
class GlmmFit:
    fixed_names: list[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    random_names: list[str]
    chol: np.ndarray  # lower-triangular factor L, Sigma = L L'
    cov_re: np.ndarray
    loglik: float
    converged: bool
    boundary: bool
    modes: np.ndarray  # (m, q) posterior modes of the random effects
    group_levels: list
    n_obs: int
    n_groups: int
    theta: np.ndarray
    scaling: dict
    categorical_levels: dict
    spec: GlmmSpec

    def coefficient_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "term": self.fixed_names,
                "estimate": self.beta,
                "se": self.se,
                "z": self.z,
                "p": self.p,
            }
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "fixed": [
                    {
                        "term": t,
                        "estimate": float(b),
                        "se": float(s),
                        "z": float(z),
                        "p": float(p),
                    }
                    for t, b, s, z, p in zip(
                        self.fixed_names, self.beta, self.se, self.z, self.p
                    )
                ],
                "random_effects": {
                    "terms": self.random_names,
                    "cholesky_factor": self.chol.tolist(),
                    "covariance": self.cov_re.tolist(),
                },
                "loglik": self.loglik,
                "converged": self.converged,
                "boundary": self.boundary,
                "n_obs": self.n_obs,
                "n_groups": self.n_groups,
            },
            indent=2,
        )


# ---------------------------------------------------------------------------
# Core arrays problem


def _unpack_chol(theta: np.ndarray, q: int) -> np.ndarray:
    L = np.zeros((q, q))
    k = 0
    for r in range(q):
        for c in range(r + 1):
            L[r, c] = np.exp(theta[k]) if r == c else theta[k]
            k += 1
    return L


def _chol_grad_scale(theta: np.ndarray, q: int, QL: np.ndarray) -> np.ndarray:
    """d loglik / d theta_k from QL = sym(Q) @ L (see _grad_theta)."""
    out = np.empty(theta.shape)
    k = 0
    for r in range(q):
        for c in range(r + 1):
            if r == c:
                out[k] = 2.0 * np.exp(theta[k]) * QL[r, c]
            else:
                out[k] = 2.0 * QL[r, c]
            k += 1
    return out


def theta_dim(q: int) -> int:
    return q * (q + 1) // 2


def theta_bounds(q: int) -> list[tuple]:
    bounds = []
    k = 0
    for r in range(q):
        for c in range(r + 1):
            bounds.append((_LOG_SD_MIN, _LOG_SD_MAX) if r == c else (None, None))
            k += 1
    return bounds


def _default_theta(q: int, sd: float = 0.3) -> np.ndarray:
    theta = np.zeros(theta_dim(q))
    k = 0
    for r in range(q):
        for c in range(r + 1):
            if r == c:
                theta[k] = np.log(sd)
            k += 1
    return theta


class LaplaceProblem:
    """Laplace-approximated negative marginal log-likelihood on raw arrays.

    Supports 0/1 row weights so leave-one-out folds reuse the same design
    without copying; inner modes are cached across evaluations.
    """

    def __init__(self, X, Z, y, groups, n_groups, *, fast_q1: bool = True):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.Z = np.ascontiguousarray(Z, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.g = np.asarray(groups, dtype=np.intp)
        self.m = int(n_groups)
        self.n, self.p = self.X.shape
        self.q = self.Z.shape[1]
        self.w = np.ones(self.n)
        self._b_cache = np.zeros((self.m, self.q))
        self.fast_q1 = fast_q1 and self.q == 1
        # the jit kernel covers the policy-model shape: one shared column
        self._jit_ok = (
            HAVE_NUMBA
            and self.fast_q1
            and self.p == 1
            and np.array_equal(self.X, self.Z)
        )

    def set_weights(self, w):
        self.w = np.asarray(w, dtype=np.float64)
        self._q1_consts = None

    def seed_modes(self, modes):
        self._b_cache = np.array(modes, dtype=np.float64).reshape(self.m, self.q)

    def _q1_cached(self):
        # weight/design products reused across evaluations of one fold
        if getattr(self, "_q1_consts", None) is None:
            z = self.Z[:, 0]
            wz = self.w * z
            self._q1_consts = (
                z,
                wz,
                self.w * z * z,
                np.bincount(self.g, weights=wz * self.y, minlength=self.m),
            )
        return self._q1_consts

    # -- inner problem ------------------------------------------------------

    def _group_quad(self, b, P):
        return 0.5 * np.einsum("ij,jk,ik->i", b, P, b)

    def _inner_modes(self, beta, P, b0, gtol=1e-9, max_iter=60):
        X, Z, y, g, w = self.X, self.Z, self.y, self.g, self.w
        m, q = self.m, self.q
        xb = X @ beta
        b = b0.copy()
        eta = xb + np.einsum("nq,nq->n", Z, b[g])
        mu = expit(eta)
        row_ll = w * (y * eta - np.logaddexp(0.0, eta))
        ll = np.bincount(g, weights=row_ll, minlength=m)
        obj = ll - self._group_quad(b, P)
        for _ in range(max_iter):
            resid = w * (y - mu)
            grad = np.empty((m, q))
            for j in range(q):
                grad[:, j] = np.bincount(g, weights=resid * Z[:, j], minlength=m)
            grad -= b @ P
            if np.max(np.abs(grad)) < gtol:
                break
            wW = w * mu * (1.0 - mu)
            H = np.empty((m, q, q))
            for r in range(q):
                for c in range(r + 1):
                    v = np.bincount(g, weights=wW * Z[:, r] * Z[:, c], minlength=m)
                    H[:, r, c] = v
                    H[:, c, r] = v
            H += P
            delta = np.linalg.solve(H, grad[:, :, None])[:, :, 0]
            step = np.ones(m)
            active = np.ones(m, dtype=bool)
            for _ in range(30):
                b_try = b + step[:, None] * delta
                eta = xb + np.einsum("nq,nq->n", Z, b_try[g])
                mu_try = expit(eta)
                row_ll = w * (y * eta - np.logaddexp(0.0, eta))
                ll = np.bincount(g, weights=row_ll, minlength=m)
                obj_try = ll - self._group_quad(b_try, P)
                bad = active & (obj_try < obj - 1e-12)
                if not bad.any():
                    b = b_try
                    obj = obj_try
                    mu = mu_try
                    break
                step[bad] *= 0.5
                active = bad
            else:
                b = b_try
                obj = obj_try
                mu = mu_try
        # final state at the modes
        eta = xb + np.einsum("nq,nq->n", Z, b[g])
        mu = expit(eta)
        wW = w * mu * (1.0 - mu)
        H = np.empty((m, q, q))
        for r in range(q):
            for c in range(r + 1):
                v = np.bincount(g, weights=wW * Z[:, r] * Z[:, c], minlength=m)
                H[:, r, c] = v
                H[:, c, r] = v
        H += P
        return b, eta, mu, H

    # -- q = 1 fast path ------------------------------------------------------

    def _inner_modes_q1(self, beta, P00, b0, gtol=1e-9, max_iter=60):
        X, y, g, w = self.X, self.y, self.g, self.w
        z, wz, wzz, swzy = self._q1_cached()
        m = self.m
        xb = X @ beta
        b = b0[:, 0].copy()
        eta = xb + z * b[g]
        mu = expit(eta)
        for _ in range(max_iter):
            grad = swzy - np.bincount(g, weights=wz * mu, minlength=m) - P00 * b
            if np.max(np.abs(grad)) < gtol:
                break
            h = np.bincount(g, weights=wzz * (mu - mu * mu), minlength=m) + P00
            delta = grad / h
            if np.max(np.abs(delta)) <= 0.5:
                # small Newton steps on the strictly concave inner objective
                # contract; the safeguarded branch handles large ones
                b = b + delta
                eta = xb + z * b[g]
                mu = expit(eta)
                continue
            obj = np.bincount(
                g, weights=w * (y * eta - np.logaddexp(0.0, eta)), minlength=m
            ) - 0.5 * P00 * b * b
            step = np.ones(m)
            for _ in range(30):
                b_try = b + step * delta
                eta = xb + z * b_try[g]
                mu_try = expit(eta)
                obj_try = np.bincount(
                    g, weights=w * (y * eta - np.logaddexp(0.0, eta)), minlength=m
                ) - 0.5 * P00 * b_try * b_try
                bad = obj_try < obj - 1e-12
                if not bad.any():
                    b, mu = b_try, mu_try
                    break
                step[bad] *= 0.5
            else:
                b, mu = b_try, mu_try
            eta = xb + z * b[g]
        H1 = np.bincount(g, weights=wzz * (mu - mu * mu), minlength=m) + P00
        return b, eta, mu, H1

    def _pieces_q1(self, params, b0):
        beta = params[: self.p]
        log_sd = params[self.p]
        sd = np.exp(log_sd)
        P00 = 1.0 / (sd * sd)
        b, eta, mu, H1 = self._inner_modes_q1(beta, P00, b0)
        self._b_cache = b[:, None]
        w, y = self.w, self.y
        loglik = float((w * (y * eta - np.logaddexp(0.0, eta))).sum())
        quad = 0.5 * P00 * float(b @ b)
        value = (
            loglik
            - quad
            - self.m * log_sd
            - 0.5 * float(np.log(H1).sum())
        )
        return value, beta, log_sd, P00, b, eta, mu, H1

    def _grad_q1(self, params, b0):
        value, beta, log_sd, P00, b, eta, mu, H1 = self._pieces_q1(params, b0)
        X, y, g, w = self.X, self.y, self.g, self.w
        z = self.Z[:, 0]
        hinv = 1.0 / H1
        c = z * z * hinv[g]
        wprime = w * mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        s = wprime * c
        v = np.bincount(g, weights=s * z, minlength=self.m)
        a = hinv * v
        u = z * a[g]
        wW = w * mu * (1.0 - mu)
        resid = w * (y - mu)
        grad_beta = X.T @ (resid - 0.5 * s + 0.5 * wW * u)
        Q = 0.5 * float(P00 * P00 * (b @ b)) - 0.5 * self.m * P00
        Q += 0.5 * P00 * P00 * float(hinv.sum()) - 0.5 * P00 * P00 * float(b @ a)
        grad_theta = 2.0 * Q / P00  # tr(dSigma Q) with dSigma = 2 sd^2
        grad = np.concatenate([grad_beta, [grad_theta]])
        return -value, -grad

    # -- generic path ---------------------------------------------------------

    def _laplace_pieces(self, params, b0=None):
        beta = params[: self.p]
        L = _unpack_chol(params[self.p :], self.q)
        P = cho_solve((L, True), np.eye(self.q))
        b0 = self._b_cache if b0 is None else b0
        b, eta, mu, H = self._inner_modes(beta, P, b0)
        self._b_cache = b
        w, y, g = self.w, self.y, self.g
        row_ll = w * (y * eta - np.logaddexp(0.0, eta))
        loglik = float(row_ll.sum())
        quad = float(self._group_quad(b, P).sum())
        logdet_sigma = 2.0 * float(np.log(np.diag(L)).sum())
        chol_H = np.linalg.cholesky(H)
        logdet_H = 2.0 * float(
            np.log(np.diagonal(chol_H, axis1=1, axis2=2)).sum()
        )
        value = loglik - quad - 0.5 * self.m * logdet_sigma - 0.5 * logdet_H
        return value, beta, L, P, b, eta, mu, H, chol_H

    def _grad_q1_jit(self, params, b0):
        b = b0[:, 0].copy()
        f, gb, gt, inner_ok = q1_value_grad(
            self.X[:, 0],
            self.y,
            self.g,
            self.m,
            self.w,
            float(params[0]),
            float(params[1]),
            b,
            1e-9,
            60,
        )
        if not inner_ok:
            return self._grad_q1(params, b0)
        self._b_cache = b[:, None]
        return f, np.array([gb, gt])

    def neg_loglik(self, params, b0=None) -> float:
        if self.fast_q1:
            return -self._pieces_q1(params, self._b_cache if b0 is None else b0)[0]
        return -self._laplace_pieces(params, b0)[0]

    def neg_loglik_and_grad(self, params, b0=None):
        if self.fast_q1:
            b0 = self._b_cache if b0 is None else b0
            if self._jit_ok:
                return self._grad_q1_jit(params, b0)
            return self._grad_q1(params, b0)
        value, beta, L, P, b, eta, mu, H, chol_H = self._laplace_pieces(params, b0)
        X, Z, y, g, w = self.X, self.Z, self.y, self.g, self.w
        m, q = self.m, self.q
        ident = np.eye(q)
        Hinv = np.linalg.solve(H, np.broadcast_to(ident, (m, q, q)).copy())
        # c_j = z_j' Hinv_{g_j} z_j ; s_j = w'_j c_j with w' = mu(1-mu)(1-2mu)
        Hg = Hinv[g]
        c = np.einsum("nq,nqr,nr->n", Z, Hg, Z)
        wprime = w * mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        s = wprime * c
        v = np.empty((m, q))
        for j in range(q):
            v[:, j] = np.bincount(g, weights=s * Z[:, j], minlength=m)
        a = np.einsum("mqr,mr->mq", Hinv, v)
        u = np.einsum("nq,nq->n", Z, a[g])
        wW = w * mu * (1.0 - mu)
        resid = w * (y - mu)
        grad_beta = X.T @ (resid - 0.5 * s + 0.5 * wW * u)
        # theta gradient: Q = 1/2 Sp - m/2 P + 1/2 P SH P - 1/2 P SA P
        pb = b @ P
        Sp = pb.T @ pb
        SH = Hinv.sum(axis=0)
        SA = b.T @ a
        Q = 0.5 * Sp - 0.5 * self.m * P + 0.5 * (P @ SH @ P) - 0.5 * (P @ SA @ P)
        Q = 0.5 * (Q + Q.T)
        grad_theta = _chol_grad_scale(params[self.p :], q, Q @ L)
        grad = np.concatenate([grad_beta, grad_theta])
        return -value, -grad


def _pooled_logistic_start(X, y, w):
    """Quick ridge-stabilized Newton fit for starting values."""
    n, p = X.shape
    beta = np.zeros(p)
    for _ in range(25):
        mu = expit(X @ beta)
        grad = X.T @ (w * (mu - y)) + 1e-8 * beta
        if np.max(np.abs(grad)) < 1e-8:
            break
        wW = w * mu * (1.0 - mu) + 1e-10
        H = (X.T * wW) @ X
        H[np.diag_indices_from(H)] += 1e-8
        try:
            beta = beta - np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
    return beta


@dataclass
class ArrayFit:
    beta: np.ndarray
    theta: np.ndarray
    params: np.ndarray
    loglik: float
    converged: bool
    boundary: bool
    modes: np.ndarray
    grad_norm: float
    message: str


def _projected_grad_norm(params, grad, bounds):
    pg = grad.copy()
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and params[i] <= lo + 1e-12 and grad[i] > 0:
            pg[i] = 0.0
        if hi is not None and params[i] >= hi - 1e-12 and grad[i] < 0:
            pg[i] = 0.0
    return float(np.max(np.abs(pg)))


def fit_glmm_arrays(
    problem: LaplaceProblem,
    *,
    start: np.ndarray | None = None,
    gtol: float = 1e-6,
    maxiter: int = 500,
) -> ArrayFit:
    """Full fit from arrays with L-BFGS-B over (beta, theta)."""
    p, q = problem.p, problem.q
    if start is None:
        beta0 = _pooled_logistic_start(problem.X, problem.y, problem.w)
        start = np.concatenate([beta0, _default_theta(q)])
    bounds = [(None, None)] * p + theta_bounds(q)
    res = minimize(
        problem.neg_loglik_and_grad,
        start,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": maxiter, "ftol": 1e-13, "gtol": gtol},
    )
    f, grad = problem.neg_loglik_and_grad(res.x)
    pg = _projected_grad_norm(res.x, grad, bounds)
    L = _unpack_chol(res.x[p:], q)
    boundary = bool(np.any(np.diag(L) <= SD_BOUNDARY))
    converged = bool(res.success or pg < 10 * gtol)
    return ArrayFit(
        beta=res.x[:p].copy(),
        theta=res.x[p:].copy(),
        params=res.x.copy(),
        loglik=-f,
        converged=converged,
        boundary=boundary,
        modes=problem._b_cache.copy(),
        grad_norm=pg,
        message=str(res.message),
    )


def numerical_hessian(problem: LaplaceProblem, params: np.ndarray, h: float = 1e-5):
    """Central-difference Hessian of the negative log-likelihood from the
    analytic gradient (used for Wald SEs and as the fold preconditioner)."""
    k = params.size
    H = np.empty((k, k))
    for j in range(k):
        dp = np.zeros(k)
        dp[j] = h * (1.0 + abs(params[j]))
        _, gp = problem.neg_loglik_and_grad(params + dp)
        _, gm = problem.neg_loglik_and_grad(params - dp)
        H[:, j] = (gp - gm) / (2.0 * dp[j])
    return 0.5 * (H + H.T)


def refit_warm(
    problem: LaplaceProblem,
    start: np.ndarray,
    hess_factor,
    *,
    gtol: float = 1e-6,
    max_steps: int = 30,
) -> ArrayFit:
    """Refit after a small data perturbation (one held-out row).

    Newton iteration preconditioned by the full-data Hessian factor; each
    accepted point is verified against the same gradient tolerance a cold
    start uses, so the result is a converged optimum, not an approximation.
    Falls back to L-BFGS-B if the quadratic model misbehaves.
    """
    p, q = problem.p, problem.q
    bounds = [(None, None)] * p + theta_bounds(q)
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    params = np.clip(start, lo, hi)
    f, grad = problem.neg_loglik_and_grad(params)
    for _ in range(max_steps):
        pg = _projected_grad_norm(params, grad, bounds)
        if pg < gtol:
            L = _unpack_chol(params[p:], q)
            return ArrayFit(
                beta=params[:p].copy(),
                theta=params[p:].copy(),
                params=params.copy(),
                loglik=-f,
                converged=True,
                boundary=bool(np.any(np.diag(L) <= SD_BOUNDARY)),
                modes=problem._b_cache.copy(),
                grad_norm=pg,
                message="warm newton",
            )
        delta = cho_solve(hess_factor, -grad)
        step = 1.0
        accepted = False
        slope = float(grad @ delta)
        if slope < 0:
            for _ in range(25):
                cand = np.clip(params + step * delta, lo, hi)
                fc, gc = problem.neg_loglik_and_grad(cand)
                if fc <= f + 1e-4 * step * slope:
                    params, f, grad = cand, fc, gc
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            break
    return fit_glmm_arrays(problem, start=params, gtol=gtol)


# ---------------------------------------------------------------------------
# DataFrame-facing layer


def _expand_columns(df, cols, levels_map, collect_levels):
    mats, names = [], []
    for c in cols:
        s = df[c]
        if pd.api.types.is_numeric_dtype(s) and not isinstance(
            s.dtype, pd.CategoricalDtype
        ):
            mats.append(s.to_numpy(dtype=np.float64)[:, None])
            names.append(c)
        else:
            if collect_levels:
                levels = sorted(map(str, s.unique()))
                levels_map[c] = levels
            else:
                levels = levels_map[c]
            values = s.astype(str).to_numpy()
            for lev in levels[1:]:
                mats.append((values == lev).astype(np.float64)[:, None])
                names.append(f"{c}[{lev}]")
    if mats:
        return np.hstack(mats), names
    return np.zeros((len(df), 0)), names


def build_design(data: pd.DataFrame, spec: GlmmSpec, *, scaling=None, levels=None):
    """Design matrices (X, Z, y, groups) for a spec against a table.

    Returns the scaling/levels dictionaries so a fit can rebuild identical
    designs for new data at prediction time.
    """
    for col in (spec.response, spec.group, *spec.fixed_effects, *spec.random_effects):
        if col not in data.columns:
            raise ValidationError(f"column {col!r} missing from design table")
        if data[col].isna().any():
            raise ValidationError(f"column {col!r} has missing values")
    y = data[spec.response].to_numpy()
    uniq = set(np.unique(y).tolist())
    if not uniq <= {0, 1, 0.0, 1.0, False, True}:
        raise ValidationError("response must be binary in {0, 1}")
    y = y.astype(np.float64)

    collect = levels is None
    levels_map = {} if collect else dict(levels)
    Xf, fixed_names = _expand_columns(data, spec.fixed_effects, levels_map, collect)
    Zr, random_names = _expand_columns(data, spec.random_effects, levels_map, collect)

    fit_scaling = scaling is None
    scaling_map = {} if fit_scaling else dict(scaling)
    if spec.standardize_predictors:
        for mat, names in ((Xf, fixed_names), (Zr, random_names)):
            for j, name in enumerate(names):
                col = mat[:, j]
                if fit_scaling:
                    if name in scaling_map:
                        continue
                    uniq_vals = np.unique(col)
                    if uniq_vals.size <= 2:  # dummies and constants stay raw
                        continue
                    sd = col.std(ddof=1)
                    scaling_map[name] = (float(col.mean()), float(sd if sd > 0 else 1.0))
        for mat, names in ((Xf, fixed_names), (Zr, random_names)):
            for j, name in enumerate(names):
                if name in scaling_map:
                    mean, sd = scaling_map[name]
                    mat[:, j] = (mat[:, j] - mean) / sd

    if spec.fixed_intercept:
        Xf = np.hstack([np.ones((len(data), 1)), Xf])
        fixed_names = ["(intercept)", *fixed_names]
    if spec.random_intercept:
        Zr = np.hstack([np.ones((len(data), 1)), Zr])
        random_names = ["(intercept)", *random_names]
    if Xf.shape[1] == 0:
        raise ValidationError("model has no fixed effects")
    if Zr.shape[1] == 0:
        raise ValidationError("model has no random effects")

    group_series = data[spec.group].astype(str)
    group_levels = sorted(group_series.unique())
    if len(group_levels) < 2:
        raise ValidationError("grouping factor needs >= 2 levels")
    codes = group_series.map({g: i for i, g in enumerate(group_levels)}).to_numpy()
    return (
        Xf,
        Zr,
        y,
        codes.astype(np.intp),
        fixed_names,
        random_names,
        group_levels,
        scaling_map,
        levels_map,
    )


def fit_glmm(
    data: pd.DataFrame,
    spec: GlmmSpec,
    *,
    start: np.ndarray | None = None,
    gtol: float = 1e-6,
    maxiter: int = 500,
) -> GlmmFit:
    """Maximize the Laplace-approximated marginal likelihood.

    Wald z statistics and two-sided p-values come from the numerical
    information matrix of the fixed effects at the optimum. A singular
    random-effects covariance sets the boundary flag; failure to reach the
    gradient tolerance raises a NumericalError with the optimizer trace.
    """
    (
        X,
        Z,
        y,
        codes,
        fixed_names,
        random_names,
        group_levels,
        scaling_map,
        levels_map,
    ) = build_design(data, spec)
    problem = LaplaceProblem(X, Z, y, codes, len(group_levels))
    fit = fit_glmm_arrays(problem, start=start, gtol=gtol, maxiter=maxiter)
    if not fit.converged:
        raise NumericalError(
            f"GLMM did not converge: {fit.message} (projected grad {fit.grad_norm:.3e})"
        )
    p = problem.p
    H = numerical_hessian(problem, fit.params)
    H_bb = H[:p, :p]
    se = np.empty(p)
    try:
        cov = np.linalg.inv(H_bb)
        diag = np.diag(cov).copy()
    except np.linalg.LinAlgError:
        diag = np.diag(np.linalg.pinv(H_bb)).copy()
    with np.errstate(invalid="ignore"):
        se = np.sqrt(np.clip(diag, 0.0, None))
    se[se <= 1e-150] = np.inf
    z = np.divide(fit.beta, se, out=np.zeros_like(se), where=np.isfinite(se))
    pvals = 2.0 * ndtr(-np.abs(z))
    L = _unpack_chol(fit.theta, problem.q)
    return GlmmFit(
        fixed_names=fixed_names,
        beta=fit.beta,
        se=se,
        z=z,
        p=pvals,
        random_names=random_names,
        chol=L,
        cov_re=L @ L.T,
        loglik=fit.loglik,
        converged=fit.converged,
        boundary=fit.boundary,
        modes=fit.modes,
        group_levels=group_levels,
        n_obs=problem.n,
        n_groups=problem.m,
        theta=fit.theta,
        scaling=scaling_map,
        categorical_levels=levels_map,
        spec=spec,
    )


def predict_prob(fit: GlmmFit, data: pd.DataFrame, *, use_random: bool = True):
    """Fitted response probabilities for new rows (conditional on the
    posterior-mode random effects of known groups; unknown groups get 0)."""
    spec = fit.spec
    df = data.copy()
    if spec.response not in df.columns:
        df[spec.response] = 0
    X, Z, _, _, _, _, _, _, _ = build_design(
        df, spec, scaling=fit.scaling, levels=fit.categorical_levels
    )
    eta = X @ fit.beta
    if use_random:
        lookup = {g: i for i, g in enumerate(fit.group_levels)}
        for row, grp in enumerate(df[spec.group].astype(str)):
            i = lookup.get(grp)
            if i is not None:
                eta[row] += Z[row] @ fit.modes[i]
    return expit(eta)
