"""Clayton and Gaussian copulas for frailty vectors.

Densities are evaluated on the last axis of ``u`` so arrays of shape
``(..., m)`` are handled in one call.  The expected copula log-likelihoods
(``q3_*``) take Monte Carlo draws arranged as ``(n_subjects, n_draws, m)``:
each subject's term is averaged over its draws and the subject terms are
summed.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special

from .errors import DomainError, MatrixError, OptimizationError
from .marginals import SCORE_CLIP, U_EPS

__all__ = [
    "ClaytonCopula",
    "GaussianCopula",
    "CopulaFit",
    "clayton_log_density",
    "gaussian_log_density",
    "normal_scores",
    "copula_sample",
    "kendalls_tau",
    "q3_clayton",
    "q3_gaussian",
    "maximize_q3",
    "ALPHA_MAX",
]

CLAYTON_SERIES_CUTOFF = 1e-6
CLAYTON_ZERO_REPORT = 1e-4
ALPHA_MAX = 50.0
PD_EIG_MIN = 1e-10


class ClaytonCopula:
    """Clayton copula with dependence parameter ``alpha >= 0`` (0 is independence)."""

    family = "clayton"

    def __init__(self, alpha, m=2):
        alpha = float(alpha)
        if not (np.isfinite(alpha) and alpha >= 0):
            raise DomainError(f"Clayton parameter must be >= 0, got {alpha!r}")
        self.alpha = alpha
        self.m = int(m)

    def __repr__(self):
        return f"ClaytonCopula(alpha={self.alpha!r}, m={self.m})"

    def __eq__(self, other):
        return isinstance(other, ClaytonCopula) and (other.alpha, other.m) == (self.alpha, self.m)

    @property
    def params(self):
        return np.array([self.alpha])

    @property
    def param_names(self):
        return ["alpha_c"]

    def with_params(self, values):
        return ClaytonCopula(max(float(values[0]), 0.0), self.m)

    def log_density(self, u):
        return clayton_log_density(self.alpha, u)

    def log_density_from_log_u(self, log_u, scores=None):
        return _clayton_logc(self.alpha, -np.asarray(log_u))


class GaussianCopula:
    """Gaussian copula parameterized by a correlation matrix."""

    family = "gaussian"

    def __init__(self, corr):
        self.corr = _check_corr(corr)
        self.m = self.corr.shape[0]
        self._chol = linalg.cholesky(self.corr, lower=True)
        self._inv_minus_eye = linalg.cho_solve((self._chol, True), np.eye(self.m)) - np.eye(self.m)
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))

    @classmethod
    def exchangeable(cls, rho, m):
        R = np.full((m, m), float(rho))
        np.fill_diagonal(R, 1.0)
        return cls(R)

    @classmethod
    def independence(cls, m):
        return cls(np.eye(m))

    def __repr__(self):
        return f"GaussianCopula(corr={self.corr.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, GaussianCopula) and np.array_equal(other.corr, self.corr)

    @property
    def params(self):
        iu = np.triu_indices(self.m, 1)
        return self.corr[iu].copy()

    @property
    def param_names(self):
        return [f"rho_{j + 1}{k + 1}" for j, k in zip(*np.triu_indices(self.m, 1))]

    def with_params(self, values):
        return GaussianCopula(_corr_from_upper(values, self.m))

    def log_density(self, u):
        return gaussian_log_density(self.corr, u)

    def log_density_from_scores(self, q):
        q = np.asarray(q, dtype=float)
        quad = np.einsum("...j,jk,...k->...", q, self._inv_minus_eye, q)
        return -0.5 * self._logdet - 0.5 * quad


def _corr_from_upper(values, m):
    R = np.eye(m)
    iu = np.triu_indices(m, 1)
    R[iu] = values
    R[(iu[1], iu[0])] = values
    return R


def _check_corr(corr):
    R = np.array(corr, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise MatrixError("correlation matrix must be square")
    if not np.allclose(R, R.T, atol=1e-12, rtol=0):
        raise MatrixError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-12, rtol=0):
        raise MatrixError("correlation matrix must have a unit diagonal")
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    if np.linalg.eigvalsh(R).min() <= PD_EIG_MIN:
        raise MatrixError("correlation matrix is not positive definite")
    return R


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0) | ~(u < 1)):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    return u


def _clayton_logc(alpha, neg_log_u):
    """Clayton log density from ``L = -log u`` along the last axis.

    Valid for ``alpha >= 0`` and for small negative ``alpha`` (used by finite
    differences at the independence boundary).
    """
    L = np.asarray(neg_log_u, dtype=float)
    m = L.shape[-1]
    if abs(alpha) < CLAYTON_SERIES_CUTOFF:
        # first-order expansion around independence
        s1 = L.sum(axis=-1)
        s2 = (L * L).sum(axis=-1)
        return alpha * (0.5 * m * (m - 1) + 0.5 * (s1 * s1 - s2) - (m - 1) * s1)
    with np.errstate(over="ignore", invalid="ignore"):
        A = np.expm1(alpha * L).sum(axis=-1)
        logS = np.log1p(A)
        const = np.sum(np.log1p(alpha * np.arange(m)))
        out = const - (1.0 / alpha + m) * logS + (alpha + 1.0) * L.sum(axis=-1)
    return np.where(np.isnan(out), -np.inf, out)


def clayton_log_density(alpha, u):
    """Log density of the m-dimensional Clayton copula.

    ``log c(u) = sum_{j<m} log(1 + j a) - (1/a + m) log(sum_j u_j^{-a} - m + 1)
    - (a + 1) sum_j log u_j``; 0 at ``a = 0``.
    """
    alpha = float(alpha)
    if not (np.isfinite(alpha) and alpha >= 0):
        raise DomainError(f"Clayton parameter must be >= 0, got {alpha!r}")
    u = _check_u(u)
    return _clayton_logc(alpha, -np.log(u))


def normal_scores(u):
    """``Phi^{-1}(u)`` with arguments clamped to ``[1e-12, 1 - 1e-12]``."""
    u = np.asarray(u, dtype=float)
    return np.clip(special.ndtri(np.clip(u, U_EPS, 1.0 - U_EPS)), -SCORE_CLIP, SCORE_CLIP)


def gaussian_log_density(R, u):
    """``-0.5 log|R| - 0.5 q'(R^{-1} - I) q`` with ``q`` the normal scores of ``u``."""
    cop = R if isinstance(R, GaussianCopula) else GaussianCopula(R)
    u = _check_u(u)
    return cop.log_density_from_scores(normal_scores(u))


def copula_sample(copula, size, rng):
    """Draw ``size`` vectors of uniforms with the given copula dependence.

    Returns an array of shape ``(size, m)``.
    """
    m = copula.m
    if isinstance(copula, GaussianCopula):
        z = rng.standard_normal((size, m)) @ copula._chol.T
        u = special.ndtr(z)
    elif isinstance(copula, ClaytonCopula):
        if copula.alpha < CLAYTON_SERIES_CUTOFF:
            u = rng.random((size, m))
        else:
            # Marshall-Olkin: V ~ Gamma(1/alpha), u_j = (1 + E_j / V)^(-1/alpha)
            v = rng.gamma(1.0 / copula.alpha, 1.0, size)
            e = rng.standard_exponential((size, m))
            u = np.exp(-np.log1p(e / v[:, None]) / copula.alpha)
    else:
        raise TypeError(f"unsupported copula {copula!r}")
    return np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def kendalls_tau(copula):
    """Kendall's tau: ``a/(a+2)`` for Clayton; pairwise ``(2/pi) arcsin(rho)`` matrix for Gaussian."""
    if isinstance(copula, ClaytonCopula):
        return copula.alpha / (copula.alpha + 2.0)
    if isinstance(copula, GaussianCopula):
        return 2.0 / np.pi * np.arcsin(copula.corr)
    raise TypeError(f"unsupported copula {copula!r}")


def _as_draws(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        a = a[:, None, :]
    if a.ndim != 3:
        raise ValueError("draws must have shape (n, n_draws, m) or (n, m)")
    return a


def q3_clayton(alpha_c, u):
    """Expected Clayton copula log-likelihood summed over subjects.

    Parameters
    ----------
    alpha_c : float
        Must be positive; the independence limit is handled by :func:`maximize_q3`.
    u : array_like, shape (n, n_draws, m) or (n, m)
        Copula-scale draws ``u_ij = F_j(w_ij)``.
    """
    if not (np.isfinite(alpha_c) and alpha_c > 0):
        raise DomainError(f"alpha_c must be positive, got {alpha_c!r}")
    u = _check_u(_as_draws(u))
    return float(_clayton_logc(alpha_c, -np.log(u)).mean(axis=1).sum())


def score_outer(q):
    """Per-subject Monte Carlo average of ``q q'``: shape (n, m, m)."""
    q = _as_draws(q)
    return np.einsum("iqj,iqk->ijk", q, q) / q.shape[1]


def q3_gaussian(R, q=None, *, S=None):
    """Expected Gaussian copula log-likelihood summed over subjects.

    Either the normal-score draws ``q`` (n, n_draws, m) or the per-subject
    averaged outer products ``S`` (n, m, m) must be given.
    """
    cop = R if isinstance(R, GaussianCopula) else GaussianCopula(R)
    if S is None:
        S = score_outer(q)
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    return float(-0.5 * n * cop._logdet - 0.5 * np.sum(cop._inv_minus_eye * S.sum(axis=0)))


@dataclass
class CopulaFit:
    copula: object
    value: float
    projected: bool = False
    n_evals: int = 0


def _golden(f, a, b, tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while abs(b - a) > tol * max(1.0, abs(c)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        n += 1
    x, fx = (c, fc) if fc > fd else (d, fd)
    return x, fx, n


def _maximize_clayton(neg_log_u, init=None, alpha_max=ALPHA_MAX, tol=1e-8, max_iter=50):
    n_evals = 0
    cache = {}

    def f(a):
        nonlocal n_evals
        if a not in cache:
            n_evals += 1
            cache[a] = float(_clayton_logc(a, neg_log_u).mean(axis=1).sum())
        return cache[a]

    if init is not None and init > 1e-3:
        # local bracket around the warm start, widened until the maximum is interior
        lo, hi = init / 1.5, min(init * 1.5, alpha_max)
        while lo > 1e-3 and f(lo) >= f(init):
            init, lo = lo, lo / 1.5
        while hi < alpha_max and f(hi) >= f(init):
            init, hi = hi, min(hi * 1.5, alpha_max)
        lo = max(lo, 0.0) if lo > 1e-3 else 0.0
    else:
        grid = np.concatenate([[0.0], np.geomspace(1e-3, alpha_max, 25)])
        vals = np.array([f(a) for a in grid])
        k = int(np.argmax(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    x, fx, _ = _golden(f, lo, hi, 1e-3)

    # Newton polish on the central-difference derivatives
    for _ in range(max_iter):
        h = 1e-5 * max(1.0, x)
        if x - h <= 0:
            break
        fp, fm, f0 = f(x + h), f(x - h), f(x)
        g = (fp - fm) / (2 * h)
        H = (fp - 2 * f0 + fm) / (h * h)
        if H >= 0:
            break
        step = -g / H
        new = min(max(x + step, 0.5 * x), min(2.0 * x, alpha_max))
        if f(new) < f0:
            break
        x = new
        if abs(step) < tol * max(1.0, x):
            break
    if x < CLAYTON_ZERO_REPORT or f(0.0) >= f(x):
        x = 0.0
    if not np.isfinite(f(x)):
        raise OptimizationError("Clayton Q3 is not finite at the maximizer", last=x, trace=sorted(cache.items()))
    return CopulaFit(ClaytonCopula(x, neg_log_u.shape[-1]), f(x), False, n_evals)


def _project_pd(R, eig_min=1e-8):
    w, V = np.linalg.eigh(R)
    R = (V * np.maximum(w, eig_min)) @ V.T
    d = np.sqrt(np.diag(R))
    R = R / np.outer(d, d)
    np.fill_diagonal(R, 1.0)
    return 0.5 * (R + R.T)


def _maximize_gaussian(S, n, init=None):
    m = S.shape[0]
    iu = np.triu_indices(m, 1)
    if len(iu[0]) == 0:
        return CopulaFit(GaussianCopula(np.eye(m)), 0.0, False, 0)

    def Q(R):
        try:
            c = linalg.cho_factor(R, lower=True)
        except linalg.LinAlgError:
            return -np.inf, None
        Rinv = linalg.cho_solve(c, np.eye(m))
        logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
        val = -0.5 * n * logdet - 0.5 * np.sum((Rinv - np.eye(m)) * S)
        G = -0.5 * n * Rinv + 0.5 * Rinv @ S @ Rinv
        return val, G

    n_evals = 0

    def negobj(z):
        nonlocal n_evals
        n_evals += 1
        rho = np.tanh(z)
        val, G = Q(_corr_from_upper(rho, m))
        if G is None:
            return 1e300, np.zeros_like(z)
        grad = 2.0 * G[iu] * (1.0 - rho * rho)
        return -val, -grad

    # start from the better of the warm start and the normalized scatter
    d = np.sqrt(np.diag(S))
    starts = [np.clip((S / np.outer(d, d))[iu], -0.999, 0.999)]
    if init is not None:
        starts.append(np.clip(np.asarray(init, dtype=float), -0.999, 0.999))
    z0 = min((np.arctanh(s) for s in starts), key=lambda z: negobj(z)[0])
    res = optimize.minimize(negobj, z0, jac=True, method="BFGS", options={"gtol": 1e-8 * max(n, 1), "maxiter": 500})
    rho = np.tanh(res.x)
    R = _corr_from_upper(rho, m)
    projected = False
    if np.linalg.eigvalsh(R).min() <= PD_EIG_MIN:
        R = _project_pd(R)
        projected = True
    val, _ = Q(R)
    if not np.isfinite(val):
        raise OptimizationError("Gaussian Q3 maximization failed", last=R)
    return CopulaFit(GaussianCopula(R), float(val), projected, n_evals)


def maximize_q3(family, draws=None, init=None, *, S=None, neg_log_u=None):
    """Maximize the expected copula log-likelihood with margins held fixed.

    Parameters
    ----------
    family : {"clayton", "gaussian"}
    draws : ndarray, shape (n, n_draws, m)
        Clayton: copula-scale uniforms ``u``.  Gaussian: normal scores ``q``.
    init : float or array_like, optional
        Warm start (Clayton ``alpha`` or the upper-triangular correlations).
    S : ndarray, shape (n, m, m), optional
        Gaussian only: per-subject averaged score outer products, instead of ``draws``.
    neg_log_u : ndarray, optional
        Clayton only: ``-log u`` instead of ``draws``.

    Returns
    -------
    CopulaFit
    """
    if family == "clayton":
        if neg_log_u is None:
            u = np.clip(_as_draws(draws), np.finfo(float).tiny, 1.0)
            neg_log_u = -np.log(u)
        return _maximize_clayton(_as_draws(neg_log_u), init=init)
    if family == "gaussian":
        if S is None:
            S = score_outer(draws)
        S = np.asarray(S, dtype=float)
        return _maximize_gaussian(S.sum(axis=0), S.shape[0], init=init)
    raise ValueError(f"unknown copula family {family!r}")
