"""Sequential linear learners.

Each learner is refit from the observations made before trial t and predicts
trial t: L2/L1-penalized logistic classifiers for category tasks, Bayesian
ridge regression (with marginal-likelihood hyperparameters) and ARD
regression for reward tasks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ._fastpath import HAVE_NUMBA, evidence_lm
from .embeddings import ScalingParams, pca_apply, pca_fit, standardize_apply, standardize_fit
from .errors import InsufficientDataError, NumericalError, ValidationError
from .tasks import TaskSpec

# Open-interval probability clamp: predictions never round to exactly 0 or 1,
# so log-losses stay finite before any explicit NLL clipping.
P_FLOOR = 1e-308
P_CEIL = float(np.nextafter(1.0, 0.0))

# NLL clipping applied wherever a likelihood of a choice is computed.
NLL_CLIP = 1e-6

DEFAULT_ALPHA_GRID = tuple(float(a) for a in np.logspace(-4, 4, 17))

LEARNER_KINDS = ("logistic_l2", "logistic_l1", "bayes_ridge", "ard_ridge")


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "logistic_l2"
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    grad_tol: float = 1e-7
    step_tol: float = 1e-12
    max_iterations: int = 500
    pca_k: int | None = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValidationError(f"unknown learner kind {self.kind!r}")
        grid = tuple(float(a) for a in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", grid)
        if not grid or any(a <= 0 for a in grid):
            raise ValidationError("alpha_grid must be non-empty and strictly positive")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha_grid": list(self.alpha_grid),
            "grad_tol": self.grad_tol,
            "step_tol": self.step_tol,
            "max_iterations": self.max_iterations,
            "pca_k": self.pca_k,
        }


# ---------------------------------------------------------------------------
# Logistic classifiers


def sigmoid(z):
    """Numerically stable sigmoid clamped to the open interval (0, 1)."""
    return np.clip(expit(z), P_FLOOR, P_CEIL)


def logistic_predict(beta: np.ndarray, x: np.ndarray) -> float:
    """p(C=1 | x) = 1 / (1 + exp(-beta'x))."""
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if beta.shape != x.shape:
        raise ValidationError(f"dimension mismatch: {beta.shape} vs {x.shape}")
    return float(sigmoid(beta @ x))


def cross_entropy_and_grad(beta, X, y):
    """Unpenalized cross-entropy loss and its gradient.

    loss = -sum_i [y log h + (1-y) log(1-h)] = sum_i [softplus(z_i) - y_i z_i].
    """
    z = X @ beta
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    grad = X.T @ (expit(z) - y)
    return loss, grad


def logistic_l2_objective(beta, X, y, alpha):
    """Cross-entropy plus alpha * ||beta||^2 (and its gradient)."""
    loss, grad = cross_entropy_and_grad(beta, X, y)
    return loss + alpha * float(beta @ beta), grad + 2.0 * alpha * beta


@dataclass(frozen=True)
class LogisticFit:
    beta: np.ndarray
    converged: bool
    n_iter: int
    grad_norm: float


def fit_logistic(
    X,
    y,
    alpha: float,
    norm: str = "l2",
    *,
    grad_tol: float = 1e-7,
    step_tol: float = 1e-12,
    max_iter: int = 500,
    beta0=None,
) -> LogisticFit:
    """Minimize cross-entropy + alpha*||beta||^2 (l2) or + alpha*||beta||_1 (l1).

    l2 uses damped Newton (the objective is strictly convex for alpha > 0, so
    the optimum is unique and warm starts are safe); l1 uses proximal gradient
    with FISTA momentum, which produces exact zeros.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0]:
        raise ValidationError("X and y row counts differ")
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValidationError("y must be binary in {0, 1}")
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    if norm == "l2":
        return _fit_logistic_newton(X, y, alpha, grad_tol, step_tol, max_iter, beta0)
    if norm == "l1":
        return _fit_logistic_fista(X, y, alpha, grad_tol, step_tol, max_iter)
    raise ValidationError(f"unknown norm {norm!r}")


def _fit_logistic_newton(X, y, alpha, grad_tol, step_tol, max_iter, beta0):
    n, d = X.shape
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=np.float64)
    f, g = logistic_l2_objective(beta, X, y, alpha)
    gnorm = float(np.max(np.abs(g))) if d else 0.0
    it = 0
    while it < max_iter and gnorm > grad_tol:
        it += 1
        p = expit(X @ beta)
        w = p * (1.0 - p)
        if d <= n or d <= 64:
            H = (X.T * w) @ X
            H[np.diag_indices_from(H)] += 2.0 * alpha
            try:
                delta = -cho_solve(cho_factor(H, lower=True), g)
            except np.linalg.LinAlgError:
                raise NumericalError("logistic Newton system not positive definite")
        else:
            # Woodbury: solve in n-space when the feature count dominates.
            sw = np.sqrt(w)
            G = (X * sw[:, None]) @ (X * sw[:, None]).T
            G[np.diag_indices_from(G)] += 2.0 * alpha
            v = -g
            u = sw * (X @ v)
            wv = cho_solve(cho_factor(G, lower=True), u)
            delta = (v - X.T @ (sw * wv)) / (2.0 * alpha)
        slope = float(g @ delta)
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = beta + step * delta
            fc, gc = logistic_l2_objective(cand, X, y, alpha)
            if fc <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = float(np.max(np.abs(step * delta)))
        beta, f, g = cand, fc, gc
        gnorm = float(np.max(np.abs(g)))
        if moved < step_tol:
            break
    return LogisticFit(beta, gnorm <= grad_tol, it, gnorm)


def _l1_subgrad_norm(g, beta, alpha):
    s = np.where(
        beta != 0.0,
        g + alpha * np.sign(beta),
        np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0),
    )
    return float(np.max(np.abs(s))) if s.size else 0.0


def _fit_logistic_fista(X, y, alpha, grad_tol, step_tol, max_iter):
    n, d = X.shape
    beta = np.zeros(d)
    v = beta.copy()
    t_mom = 1.0
    # Lipschitz bound for the cross-entropy gradient: 0.25 * ||X||_2^2.
    col = np.sqrt((X * X).sum())
    step = 4.0 / (col * col) if col > 0 else 1.0
    f_beta, g_beta = cross_entropy_and_grad(beta, X, y)
    best = f_beta + alpha * np.abs(beta).sum()
    it = 0
    subnorm = _l1_subgrad_norm(g_beta, beta, alpha)
    while it < max_iter and subnorm > grad_tol:
        it += 1
        f_v, g_v = cross_entropy_and_grad(v, X, y)
        while True:
            cand = v - step * g_v
            cand = np.sign(cand) * np.maximum(np.abs(cand) - step * alpha, 0.0)
            diff = cand - v
            f_cand, g_cand = cross_entropy_and_grad(cand, X, y)
            if f_cand <= f_v + g_v @ diff + (diff @ diff) / (2.0 * step) + 1e-12:
                break
            step *= 0.5
        obj_cand = f_cand + alpha * np.abs(cand).sum()
        if obj_cand > best:  # function restart: drop momentum
            v = beta.copy()
            t_mom = 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        v = cand + ((t_mom - 1.0) / t_new) * (cand - beta)
        moved = float(np.max(np.abs(cand - beta))) if d else 0.0
        beta, t_mom, best = cand, t_new, obj_cand
        subnorm = _l1_subgrad_norm(g_cand, beta, alpha)
        if moved < step_tol:
            break
    return LogisticFit(beta, subnorm <= grad_tol, it, subnorm)


# ---------------------------------------------------------------------------
# Bayesian ridge (spherical Gaussian prior scaled by lambda, noise sigma)


def bayes_ridge_weights(X, r, lam: float, sigma: float) -> np.ndarray:
    """Posterior-mean weights sigma^-2 (sigma^-2 X'X + lambda I)^-1 X'r.

    Solved as an SPD system (never an explicit inverse); tiny escalating
    jitter is the only recovery before a NumericalError.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64)
    if lam <= 0 or sigma <= 0:
        raise ValidationError("lambda and sigma must be positive")
    d = X.shape[1]
    if X.shape[0] == 0:
        return np.zeros(d)
    if X.shape[0] != r.shape[0]:
        raise ValidationError("X and r row counts differ")
    s2inv = 1.0 / (sigma * sigma)
    A = s2inv * (X.T @ X)
    A[np.diag_indices_from(A)] += lam
    b = s2inv * (X.T @ r)
    scale = float(np.trace(A)) / d
    for jitter in (0.0, 1e-12, 1e-9, 1e-6):
        try:
            Aj = A if jitter == 0.0 else A + jitter * scale * np.eye(d)
            return cho_solve(cho_factor(Aj, lower=True), b)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("ridge system not SPD even after jitter")


def bayes_ridge_predict(X, r, x, lam: float, sigma: float) -> float:
    """Posterior-mean reward estimate for a novel observation x."""
    x = np.asarray(x, dtype=np.float64)
    w = bayes_ridge_weights(X, r, lam, sigma)
    if w.shape != x.shape:
        raise ValidationError(f"dimension mismatch: {w.shape} vs {x.shape}")
    return float(w @ x)


def _evidence_precompute(X, r):
    """Eigen-space quantities for stable evidence evaluation.

    The quadratic form r'K^-1 r suffers catastrophic cancellation when
    written as exp(-s)(r'r - sum u^2/(e+c)); it is instead evaluated as
    exp(-s)(resid0 + c * sum u^2/(e(e+c))), a sum of positives, where resid0
    is the least-squares residual computed in data space. Eigendirections
    below a relative floor are treated as exact nulls.
    """
    n, d = X.shape
    e, V = np.linalg.eigh(X.T @ X)
    e = np.clip(e, 0.0, None)
    emax = max(float(e.max(initial=0.0)), 1.0)
    null = e < 1e-10 * emax
    e = np.where(null, 0.0, e)
    ut = V.T @ (X.T @ r)
    ut = np.where(null, 0.0, ut)
    e_safe = np.where(null, 1.0, e)
    w0 = V @ (ut / e_safe)
    resid = r - X @ w0
    return {
        "e": e,
        "e_safe": e_safe,
        "uu2": ut * ut,
        "resid0": float(resid @ resid),
        "n": n,
        "d": d,
    }


def log_evidence(X, r, lam: float, sigma: float) -> float:
    """Gaussian evidence log p(r | X, lambda, sigma).

    Equals -1/2 [n log 2pi + log det K + r'K^-1 r], K = sigma^2 I + XX'/lambda,
    evaluated in the d-dimensional eigenbasis of X'X.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64)
    pre = _evidence_precompute(X, r)
    pt = np.array([[np.log(lam), 2.0 * np.log(sigma)]])
    return float(_evidence_neg2(pt, pre)[0] * -0.5)


def _evidence_neg2(pts, pre):
    """-2 * log evidence at (t, s) = (log lambda, log sigma^2) points, vectorized."""
    e, uu2, n, d = pre["e"], pre["uu2"], pre["n"], pre["d"]
    t = pts[:, 0:1]
    s = pts[:, 1:2]
    c = np.exp(t + s)
    denom = e[None, :] + c
    s1 = (uu2[None, :] / (pre["e_safe"][None, :] * denom)).sum(axis=1)
    quad = np.exp(-s[:, 0]) * (pre["resid0"] + c[:, 0] * s1)
    logdet = np.log(denom).sum(axis=1)
    return n * np.log(2.0 * np.pi) + (n - d) * s[:, 0] - d * t[:, 0] + logdet + quad


def _evidence_neg2_grad(pts, pre):
    return _evidence_neg2_grad_hess(pts, pre)[0]


def _evidence_neg2_grad_hess(pts, pre):
    """Gradient and 2x2 Hessian of -2 log evidence, vectorized over points.

    With c = exp(t+s): T_k = sum 1/(e+c)^k, U_k = sum u^2/(e+c)^k; all terms
    are O(d) rational sums, so second derivatives cost the same as values.
    """
    e, uu2, n, d = pre["e"], pre["uu2"], pre["n"], pre["d"]
    t = pts[:, 0:1]
    s = pts[:, 1:2]
    c1 = np.exp(t + s)[:, 0]
    denom = e[None, :] + c1[:, None]
    inv = 1.0 / denom
    inv2 = inv * inv
    T1 = inv.sum(axis=1)
    T2 = inv2.sum(axis=1)
    S1 = (uu2[None, :] * inv / pre["e_safe"][None, :]).sum(axis=1)
    U2 = (uu2[None, :] * inv2).sum(axis=1)
    U3 = (uu2[None, :] * inv2 * inv).sum(axis=1)
    es = np.exp(-s[:, 0])
    R = pre["resid0"] + c1 * S1  # equals r'r - sum u^2/(e+c), stably
    cT1 = c1 * T1
    g_t = -d + cT1 + es * c1 * U2
    g_s = (n - d) + cT1 - es * R + es * c1 * U2
    base = cT1 - c1 * c1 * T2
    h_tt = base + es * (c1 * U2 - 2.0 * c1 * c1 * U3)
    h_ts = base - 2.0 * es * c1 * c1 * U3
    h_ss = base + es * R - es * c1 * U2 - 2.0 * es * c1 * c1 * U3
    grad = np.stack([g_t, g_s], axis=1)
    hess = np.empty((pts.shape[0], 2, 2))
    hess[:, 0, 0] = h_tt
    hess[:, 0, 1] = h_ts
    hess[:, 1, 0] = h_ts
    hess[:, 1, 1] = h_ss
    return grad, hess


@dataclass(frozen=True)
class BayesHyperparams:
    lam: float
    sigma: float
    log_evidence: float
    converged: bool


_HYPER_STARTS = tuple(
    (lt, ls) for lt in (np.log(1e-2), 0.0, np.log(1e2)) for ls in (np.log(1e-2), 0.0, np.log(1e2))
)
_LOG_BOUND = 30.0


def fit_bayes_hyperparams(
    X,
    r,
    *,
    max_iter: int = 100,
    grad_tol: float = 1e-7,
    extra_starts: tuple[tuple[float, float], ...] = (),
) -> BayesHyperparams:
    """Maximize the evidence over (log lambda, log sigma^2).

    Damped-Newton trajectories start from a fixed 3x3 grid (plus any extra
    starts, e.g. the previous trial's optimum during a rollout) and run in
    lockstep with analytic gradients and Hessians, all O(d) once X'X is
    eigendecomposed; the best terminal point wins.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("hyperparameter fitting needs >= 2 observations")
    pre = _evidence_precompute(X, r)

    pts = np.array(list(_HYPER_STARTS) + list(extra_starts), dtype=np.float64)
    pts = np.clip(pts, -_LOG_BOUND, _LOG_BOUND)
    if HAVE_NUMBA:
        t_best, s_best, B_best, conv = evidence_lm(
            pre["e"],
            pre["e_safe"],
            pre["uu2"],
            pre["resid0"],
            float(n),
            pts,
            max_iter,
            grad_tol,
            _LOG_BOUND,
        )
        return BayesHyperparams(
            lam=float(np.exp(t_best)),
            sigma=float(np.exp(0.5 * s_best)),
            log_evidence=float(-0.5 * B_best),
            converged=bool(conv),
        )
    n_pts = pts.shape[0]
    B = _evidence_neg2(pts, pre)
    open_idx = np.arange(n_pts)
    mu = np.full(n_pts, 1e-2)  # per-point Levenberg damping
    stall = np.zeros(n_pts, dtype=np.int64)
    for _ in range(max_iter):
        P = pts[open_idx]
        g, H = _evidence_neg2_grad_hess(P, pre)
        # Projected gradient: a component pushing past a clamp is spent.
        at_lo = P <= -_LOG_BOUND + 1e-12
        at_hi = P >= _LOG_BOUND - 1e-12
        pg = np.where((at_lo & (g > 0)) | (at_hi & (g < 0)), 0.0, g)
        still = (np.max(np.abs(pg), axis=1) >= grad_tol) & (stall[open_idx] < 8)
        open_idx = open_idx[still]
        if open_idx.size == 0:
            break
        H, pg = H[still], pg[still]
        # Damped Newton: mu large acts like a short gradient step, mu small
        # like a full Newton step; a linear ridge is walked in a few doublings.
        scale = 1.0 + np.maximum(np.abs(H[:, 0, 0]), np.abs(H[:, 1, 1]))
        m_open = open_idx.size
        delta = np.empty((m_open, 2))
        lam_damp = mu[open_idx] * scale
        for _ in range(12):
            h00 = H[:, 0, 0] + lam_damp
            h11 = H[:, 1, 1] + lam_damp
            det = h00 * h11 - H[:, 0, 1] ** 2
            bad = (det <= 0) | (h00 <= 0)
            if not bad.any():
                break
            lam_damp[bad] *= 10.0
        mu[open_idx] = lam_damp / scale
        delta[:, 0] = -(h11 * pg[:, 0] - H[:, 0, 1] * pg[:, 1]) / det
        delta[:, 1] = -(h00 * pg[:, 1] - H[:, 0, 1] * pg[:, 0]) / det
        cand = np.clip(pts[open_idx] + delta, -_LOG_BOUND, _LOG_BOUND)
        Bc = _evidence_neg2(cand, pre)
        ok = np.isfinite(Bc) & (Bc <= B[open_idx] + 1e-11 * (1.0 + np.abs(B[open_idx])))
        adopt = open_idx[ok]
        pts[adopt] = cand[ok]
        B[adopt] = Bc[ok]
        mu[adopt] = np.maximum(mu[adopt] * 0.25, 1e-12)
        stall[adopt] = 0
        rej = open_idx[~ok]
        mu[rej] = np.minimum(mu[rej] * 8.0, 1e14)
        stall[rej] += 1
    best = int(np.argmin(B))
    g_best = _evidence_neg2_grad(pts[best : best + 1], pre)[0]
    at_lo = pts[best] <= -_LOG_BOUND + 1e-12
    at_hi = pts[best] >= _LOG_BOUND - 1e-12
    pg_best = np.where((at_lo & (g_best > 0)) | (at_hi & (g_best < 0)), 0.0, g_best)
    return BayesHyperparams(
        lam=float(np.exp(pts[best, 0])),
        sigma=float(np.exp(0.5 * pts[best, 1])),
        log_evidence=float(-0.5 * B[best]),
        converged=bool(np.max(np.abs(pg_best)) < 10.0 * grad_tol),
    )


# ---------------------------------------------------------------------------
# ARD regression (per-weight prior variances by evidence maximization)


@dataclass(frozen=True)
class ArdFit:
    weights: np.ndarray
    prior_variances: np.ndarray
    sigma: float
    evidence_trace: tuple[float, ...]
    converged: bool
    n_iter: int


def _ard_evidence(X, r, alphas, s2, active):
    n = X.shape[0]
    rr = float(r @ r)
    if not active.any():
        return -0.5 * (n * np.log(2.0 * np.pi) + n * np.log(s2) + rr / s2)
    Xa = X[:, active]
    Sinv = (Xa.T @ Xa) / s2 + np.diag(alphas[active])
    L = np.linalg.cholesky(Sinv)
    logdet_Sinv = 2.0 * float(np.log(np.diag(L)).sum())
    u = Xa.T @ r
    mu = cho_solve((L, True), u / s2)
    return -0.5 * (
        n * np.log(2.0 * np.pi)
        + n * np.log(s2)
        + logdet_Sinv
        - float(np.log(alphas[active]).sum())
        + (rr - float(u @ mu)) / s2
    )


def ard_fit(
    X,
    r,
    *,
    max_iter: int = 1000,
    tol: float = 1e-10,
    var_floor: float = 1e-13,
    relevance_floor: float = 1e-4,
) -> ArdFit:
    """Per-weight Gaussian priors fitted by iterative evidence maximization.

    Each iteration proposes the fast fixed-point update
    (alpha_i <- gamma_i / mu_i^2) and falls back to the EM update
    (alpha_i <- 1/(mu_i^2 + Sigma_ii)), which provably never decreases the
    evidence, whenever the fast step would; the trace is therefore
    non-decreasing by construction. Prior variances reaching var_floor
    (a numerical floor whose removal is evidence-neutral) prune the weight to
    exactly zero during iteration; at convergence, weights whose prior
    variance sits below relevance_floor are likewise reported as exactly zero
    and the posterior is refit on the survivors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("ARD needs >= 2 observations")
    active = np.ones(d, dtype=bool)
    alphas = np.ones(d)
    s2 = max(0.1 * float(np.var(r)), 1e-6)
    trace: list[float] = [_ard_evidence(X, r, alphas, s2, active)]
    converged = False
    it = 0
    mu_full = np.zeros(d)
    while it < max_iter:
        it += 1
        if active.any():
            Xa = X[:, active]
            a = alphas[active]
            Sinv = (Xa.T @ Xa) / s2 + np.diag(a)
            L = np.linalg.cholesky(Sinv)
            Sig = cho_solve((L, True), np.eye(int(active.sum())))
            mu = Sig @ (Xa.T @ r) / s2
            diag = np.diag(Sig)
            gamma = 1.0 - a * diag
            rss = float(np.sum((r - Xa @ mu) ** 2))
            # fast fixed-point proposal, monotonicity-checked below
            a_fast = np.clip(gamma, 1e-12, None) / np.maximum(mu * mu, 1e-300)
            denom = n - float(gamma.sum())
            s2_fast = max(rss / denom, 1e-12) if denom > 1e-8 * n else s2
            alphas_new = alphas.copy()
            alphas_new[active] = a_fast
            ev_fast = _ard_evidence(X, r, alphas_new, s2_fast, active)
            if ev_fast >= trace[-1] - 1e-12 * (1.0 + abs(trace[-1])):
                alphas, s2 = alphas_new, s2_fast
            else:
                alphas_new[active] = 1.0 / np.maximum(mu * mu + diag, 1e-300)
                alphas, s2 = (
                    alphas_new,
                    max((rss + s2 * float(gamma.sum())) / n, 1e-12),
                )
            idx = np.flatnonzero(active)
            keep = 1.0 / alphas[active] >= var_floor
            active[idx[~keep]] = False
            mu_full[:] = 0.0
            mu_full[idx[keep]] = mu[keep]
        else:
            s2 = max(float(r @ r) / n, 1e-12)
        trace.append(_ard_evidence(X, r, alphas, s2, active))
        if abs(trace[-1] - trace[-2]) < tol * (1.0 + abs(trace[-1])):
            converged = True
            break
    active &= 1.0 / alphas >= relevance_floor
    mu_full[:] = 0.0
    if active.any():
        Xa = X[:, active]
        Sinv = (Xa.T @ Xa) / s2 + np.diag(alphas[active])
        L = np.linalg.cholesky(Sinv)
        mu_full[active] = cho_solve((L, True), Xa.T @ r) / s2
    prior_var = np.where(active, 1.0 / alphas, 0.0)
    return ArdFit(
        weights=mu_full,
        prior_variances=prior_var,
        sigma=float(np.sqrt(s2)),
        evidence_trace=tuple(trace),
        converged=converged,
        n_iter=it,
    )


# ---------------------------------------------------------------------------
# Sequential rollout


@dataclass(frozen=True)
class TrajectoryPrediction:
    """Per-trial predictions from a sequential learner for one participant.

    outputs: category -> (T,) probabilities of class 1; reward -> (T, 2)
    value estimates in trial stimulus order. Trial t depends only on
    trials < t.
    """

    kind: str
    learner: str
    outputs: np.ndarray
    accuracy_flags: np.ndarray
    hyperparams: dict
    converged_flags: np.ndarray
    config: LearnerConfig
    representation: str | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "learner": self.learner,
                "representation": self.representation,
                "outputs": self.outputs.tolist(),
                "accuracy_flags": [bool(a) for a in self.accuracy_flags],
                "hyperparams": self.hyperparams,
                "converged_flags": [bool(c) for c in self.converged_flags],
                "config": self.config.to_dict(),
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "TrajectoryPrediction":
        doc = json.loads(text)
        cfg = doc["config"]
        config = LearnerConfig(
            kind=cfg["kind"],
            alpha_grid=tuple(cfg["alpha_grid"]),
            grad_tol=cfg["grad_tol"],
            step_tol=cfg["step_tol"],
            max_iterations=cfg["max_iterations"],
            pca_k=cfg.get("pca_k"),
        )
        return TrajectoryPrediction(
            kind=doc["kind"],
            learner=doc["learner"],
            outputs=np.array(doc["outputs"], dtype=np.float64),
            accuracy_flags=np.array(doc["accuracy_flags"], dtype=bool),
            hyperparams=doc["hyperparams"],
            converged_flags=np.array(doc["converged_flags"], dtype=bool),
            config=config,
            representation=doc.get("representation"),
        )


def _rollout_scaling(X_train: np.ndarray, d: int) -> ScalingParams:
    # Mirrors per-fit scaler behavior: one row centers on itself, none is identity.
    n = X_train.shape[0]
    if n >= 2:
        return standardize_fit(X_train)
    means = X_train[0] if n == 1 else np.zeros(d)
    return ScalingParams(means=means, scales=np.ones(d))


def _task_features(task: TaskSpec, rep, config: LearnerConfig) -> np.ndarray:
    ids = task.stimulus_ids()
    feats = rep.rows(ids)
    if config.pca_k is not None:
        transform = pca_fit(feats, config.pca_k)
        feats = pca_apply(transform, feats)
    return feats


def sequential_rollout(
    task: TaskSpec,
    rep,
    config: LearnerConfig,
    *,
    alpha: float | None = None,
    representation: str | None = None,
) -> TrajectoryPrediction:
    """Refit on trials < t, predict trial t, for every trial of the task.

    Category tasks add one all-zero pseudo-observation per class until both
    classes have been observed; reward tasks train on both shown rewards from
    each past trial. Standardization is fit on the training rows only and
    applied to the test row(s).
    """
    if config.kind in ("logistic_l2", "logistic_l1"):
        if task.kind != "category":
            raise ValidationError("logistic learners apply to category tasks")
        if alpha is None:
            if len(config.alpha_grid) == 1:
                alpha = config.alpha_grid[0]
            else:
                alpha = grid_search_alpha(task, rep, config)
        return _rollout_category(task, rep, config, alpha, representation)
    if task.kind != "reward":
        raise ValidationError("regression learners apply to reward tasks")
    return _rollout_reward(task, rep, config, representation)


def _rollout_category(task, rep, config, alpha, representation):
    feats = _task_features(task, rep, config)
    labels = np.array([t.outcome for t in task.trials], dtype=np.float64)
    T, d = feats.shape[0], feats.shape[1]
    probs = np.empty(T)
    correct = np.empty(T, dtype=bool)
    conv = np.empty(T, dtype=bool)
    norm = "l2" if config.kind == "logistic_l2" else "l1"
    warm = None
    for t in range(T):
        params = _rollout_scaling(feats[:t], d)
        X_tr = standardize_apply(params, feats[:t]) if t else np.zeros((0, d))
        y_tr = labels[:t]
        if len(np.unique(y_tr)) < 2:
            X_tr = np.vstack([X_tr, np.zeros((2, d))])
            y_tr = np.concatenate([y_tr, [0.0, 1.0]])
        try:
            fit = fit_logistic(
                X_tr,
                y_tr,
                alpha,
                norm,
                grad_tol=config.grad_tol,
                step_tol=config.step_tol,
                max_iter=config.max_iterations,
                beta0=warm if norm == "l2" else None,
            )
        except (NumericalError, ValidationError) as exc:
            raise NumericalError(f"trial {t}: {exc}") from exc
        if norm == "l2":
            warm = fit.beta
        x_test = standardize_apply(params, feats[t])
        probs[t] = logistic_predict(fit.beta, x_test)
        correct[t] = (1.0 if probs[t] > 0.5 else 0.0) == labels[t]
        conv[t] = fit.converged
    return TrajectoryPrediction(
        kind="category",
        learner=config.kind,
        outputs=probs,
        accuracy_flags=correct,
        hyperparams={"alpha": float(alpha)},
        converged_flags=conv,
        config=config,
        representation=representation,
    )


def _rollout_reward(task, rep, config, representation):
    feats = _task_features(task, rep, config)  # (2T, d), trial order (left, right)
    rewards = np.array(
        [v for t in task.trials for v in t.outcome], dtype=np.float64
    )
    T = task.n_trials
    d = feats.shape[1]
    outputs = np.empty((T, 2))
    correct = np.empty(T, dtype=bool)
    conv = np.empty(T, dtype=bool)
    lam_trace, sigma_trace = [], []
    prev_start: tuple[tuple[float, float], ...] = ()
    for t in range(T):
        X_tr_raw = feats[: 2 * t]
        r_tr = rewards[: 2 * t]
        params = _rollout_scaling(X_tr_raw, d)
        X_tr = standardize_apply(params, X_tr_raw) if t else np.zeros((0, d))
        # Eq-3 form has no intercept; centering rewards plays that role.
        r_mean = float(r_tr.mean()) if t else 0.0
        r_cent = r_tr - r_mean
        try:
            if config.kind == "bayes_ridge":
                if t >= 1:
                    hp = fit_bayes_hyperparams(
                        X_tr,
                        r_cent,
                        grad_tol=config.grad_tol,
                        extra_starts=prev_start,
                    )
                    lam, sig, ok = hp.lam, hp.sigma, hp.converged
                    prev_start = ((np.log(lam), 2.0 * np.log(sig)),)
                else:
                    lam, sig, ok = 1.0, 1.0, True
                w = bayes_ridge_weights(X_tr, r_cent, lam, sig)
                lam_trace.append(lam)
                sigma_trace.append(sig)
            else:  # ard_ridge
                if t >= 1:
                    fit = ard_fit(X_tr, r_cent, max_iter=config.max_iterations)
                    w, sig, ok = fit.weights, fit.sigma, fit.converged
                else:
                    w, sig, ok = np.zeros(d), 1.0, True
                lam_trace.append(float(np.count_nonzero(w)))
                sigma_trace.append(sig)
        except (NumericalError, ValidationError) as exc:
            raise NumericalError(f"trial {t}: {exc}") from exc
        x_pair = standardize_apply(params, feats[2 * t : 2 * t + 2])
        outputs[t] = x_pair @ w + r_mean
        true_pair = np.asarray(task.trials[t].outcome)
        pick = int(np.argmax(outputs[t]))
        correct[t] = true_pair[pick] == true_pair.max()
        conv[t] = ok
    hyper_key = "lambda" if config.kind == "bayes_ridge" else "n_active"
    return TrajectoryPrediction(
        kind="reward",
        learner=config.kind,
        outputs=outputs,
        accuracy_flags=correct,
        hyperparams={hyper_key: lam_trace, "sigma": sigma_trace},
        converged_flags=conv,
        config=config,
        representation=representation,
    )


def grid_search_alpha(task: TaskSpec, rep, config: LearnerConfig) -> float:
    """Grid alpha maximizing the rollout's own task accuracy; ties take the
    smallest alpha."""
    if config.kind not in ("logistic_l2", "logistic_l1"):
        raise ValidationError("alpha grid search applies to logistic learners")
    alphas = sorted(config.alpha_grid)
    accs = [
        sequential_rollout(task, rep, config, alpha=a).accuracy_flags.mean()
        for a in alphas
    ]
    return float(alphas[int(np.argmax(accs))])
