"""Observed information of the MCEM estimate by Louis's identity.

With complete-data score ``S`` and Hessian ``H`` of the log-likelihood in
``(beta, frailty parameters, baseline jumps)``,

    I_obs = E[-H | data] - Var[S | data]

where expectations are over the conditional frailty distribution and are
estimated from Metropolis-Hastings draws.  Subjects are conditionally
independent, so ``Var[S]`` is a sum of per-subject covariances.  The
baseline jumps are profiled out by a Schur complement before inversion.

The frailty density enters only through ``log g(b_i; alpha)``; its score and
Hessian in the frailty parameters are taken by central differences.
"""

from dataclasses import dataclass

import numpy as np

from .copulas import GaussianCopula, _clayton_logc
from .event_data import build_risk_sets

__all__ = ["LouisResult", "louis_information", "frailty_param_derivatives", "complete_score"]


@dataclass
class LouisResult:
    """Profiled information for ``(beta, frailty parameters)`` and its inverse.

    ``std_errors`` follows ``ParameterVector.theta`` order, with ``nan`` for
    the coefficients of event types that have no events.  It is ``None``
    when the profiled information is not positive definite.
    """

    info: np.ndarray
    std_errors: np.ndarray
    covariance: np.ndarray
    message: str
    expected_neg_hessian: np.ndarray
    score_variance: np.ndarray
    theta_index: np.ndarray
    n_jumps: int


def _copula_logdens(model, cparams, z):
    if model.copula.family == "clayton":
        return _clayton_logc(float(cparams[0]), z)
    m = model.m
    R = np.eye(m)
    iu = np.triu_indices(m, 1)
    R[iu] = cparams
    R[(iu[1], iu[0])] = cparams
    return GaussianCopula(R).log_density_from_scores(z)


def frailty_param_derivatives(model, b, rel_step=1e-4):
    """Per-draw score and averaged Hessian of ``log g(b; alpha)`` in the frailty parameters.

    Parameters
    ----------
    model : FrailtyModel
    b : ndarray, shape (n, n_s, m)

    Returns
    -------
    score : ndarray, shape (n, n_s, d)
        Central-difference gradient at every draw.
    hessian : ndarray, shape (d, d)
        Hessian of ``sum_i mean_q log g(b_iq)``.
    """
    m = model.m
    theta0 = model.params
    dim = theta0.size
    h = rel_step * np.maximum(1.0, np.abs(theta0))
    has_copula = m > 1

    marg_cache = {}
    z_cache = {}

    def column(j, a):
        key = (j, a)
        if key not in marg_cache:
            bj = b[..., j : j + 1]
            alphas = np.array([a])
            marg_cache[key] = model.marginal_log_pdf(bj, alphas=alphas)[..., 0]
            if has_copula:
                z_cache[key] = model.copula_inputs(bj, alphas=alphas)[..., 0]
        return marg_cache[key], z_cache.get(key)

    def logg(offsets):
        """``log g`` at ``theta0 + offsets`` (dict coordinate -> offset)."""
        th = theta0.copy()
        for k, v in offsets.items():
            th[k] += v
        total = 0.0
        zs = []
        for j in range(m):
            mj, zj = column(j, float(th[j]))
            total = total + mj
            zs.append(zj)
        if has_copula:
            total = total + _copula_logdens(model, th[m:], np.stack(zs, axis=-1))
        return total

    f0 = logg({})
    plus = [logg({k: h[k]}) for k in range(dim)]
    minus = [logg({k: -h[k]}) for k in range(dim)]
    score = np.stack([(plus[k] - minus[k]) / (2.0 * h[k]) for k in range(dim)], axis=-1)

    def tot(v):
        return float(np.sum(np.mean(v, axis=1)))

    F0 = tot(f0)
    hess = np.empty((dim, dim))
    for k in range(dim):
        hess[k, k] = (tot(plus[k]) - 2.0 * F0 + tot(minus[k])) / (h[k] * h[k])
        for l in range(k):
            fpp = tot(logg({k: h[k], l: h[l]}))
            fpm = tot(logg({k: h[k], l: -h[l]}))
            fmp = tot(logg({k: -h[k], l: h[l]}))
            fmm = tot(logg({k: -h[k], l: -h[l]}))
            hess[k, l] = hess[l, k] = (fpp - fpm - fmp + fmm) / (4.0 * h[k] * h[l])
    return score, hess


def _layout(params, d):
    """Index bookkeeping: which beta rows and which jumps enter the information."""
    m, p = params.beta.shape
    active = [j for j in range(m) if d.tie_counts[j].size > 0]
    k = [d.tie_counts[j].size for j in range(m)]
    return active, k, p


def complete_score(params, draws, d, alpha_score=None):
    """Complete-data score at every draw, summed over subjects.

    Returns an array of shape (n_s, D) with coordinates ordered as
    ``beta`` (active types), frailty parameters, then the baseline jumps of
    the active types.
    """
    active, k, p = _layout(params, d)
    eb = np.exp(draws.b)  # (n, n_s, m)
    r = np.exp(d.X @ params.beta.T)
    Lam = params.cumulative_at(d.tau)
    parts = []
    for j in active:
        obs = d.counts[:, j] @ d.X
        expct = np.einsum("iq,ik->qk", eb[:, :, j] * (Lam[:, j] * r[:, j])[:, None], d.X)
        parts.append(obs[None, :] - expct)
    if alpha_score is None:
        alpha_score, _ = frailty_param_derivatives(params.model, draws.b)
    parts.append(alpha_score.sum(axis=0))
    for j in active:
        at = (d.tau[None, :] >= d.distinct_times[j][:, None]).astype(float)
        lam = params.baseline[j].jumps
        parts.append(d.tie_counts[j][None, :] / lam[None, :] - (eb[:, :, j] * r[:, j, None]).T @ at.T)
    return np.concatenate(parts, axis=1)


def louis_information(params, draws, d, risk=None, rel_step=1e-4):
    """Observed information for ``(beta, frailty parameters)`` with the baseline profiled out.

    Parameters
    ----------
    params : ParameterVector
        Usually the MCEM estimate.
    draws : FrailtyDraws
        Conditional frailty draws at ``params``.
    d : Dataset
    risk : RiskSetIndex, optional

    Returns
    -------
    LouisResult
    """
    risk = risk or build_risk_sets(d)
    active, k, p = _layout(params, d)
    m = params.beta.shape[0]
    model = params.model
    n = d.n_subjects
    eb = np.exp(draws.b)
    e_eb = eb.mean(axis=1)
    r = np.exp(d.X @ params.beta.T)
    Lam = params.cumulative_at(d.tau)
    e_omega = e_eb * r

    s_alpha, h_alpha = frailty_param_derivatives(model, draws.b, rel_step)
    d_alpha = s_alpha.shape[-1]
    nb = len(active) * p
    nl = sum(k[j] for j in active)
    D = nb + d_alpha + nl
    beta_off = {j: t * p for t, j in enumerate(active)}
    lam_off = {}
    off = nb + d_alpha
    for j in active:
        lam_off[j] = off
        off += k[j]

    # E[-H]
    EH = np.zeros((D, D))
    for j in active:
        sb = slice(beta_off[j], beta_off[j] + p)
        sl = slice(lam_off[j], lam_off[j] + k[j])
        wgt = Lam[:, j] * e_omega[:, j]
        EH[sb, sb] = (d.X * wgt[:, None]).T @ d.X
        A = risk.at_risk[j].astype(float)
        cross = (A * e_omega[:, j][None, :]) @ d.X  # (k_j, p)
        EH[sl, sb] = cross
        EH[sb, sl] = cross.T
        lam = params.baseline[j].jumps
        EH[sl, sl] = np.diag(d.tie_counts[j] / lam**2)
    sa = slice(nb, nb + d_alpha)
    EH[sa, sa] = -h_alpha

    # Var[S] = sum_i M_i C_i M_i'
    # v_i = (exp(b_i1..b_im), s_alpha_i) per draw; omega = exp(b) * r
    v = np.concatenate([eb, s_alpha], axis=-1)  # (n, n_s, m + d_alpha)
    vc = v - v.mean(axis=1, keepdims=True)
    C = np.einsum("iqa,iqb->iab", vc, vc) / draws.n_s
    kk = m + d_alpha
    M = np.zeros((n, D, kk))
    for j in active:
        M[:, beta_off[j] : beta_off[j] + p, j] = -(Lam[:, j] * r[:, j])[:, None] * d.X
        A = risk.at_risk[j].astype(float)
        M[:, lam_off[j] : lam_off[j] + k[j], j] = -(A * r[:, j][None, :]).T
    for t in range(d_alpha):
        M[:, nb + t, m + t] = 1.0
    T = np.einsum("ida,iab->idb", M, C)
    VS = T.transpose(1, 0, 2).reshape(D, n * kk) @ M.transpose(1, 0, 2).reshape(D, n * kk).T
    VS = 0.5 * (VS + VS.T)

    I_full = EH - VS
    nt = nb + d_alpha
    Itt = I_full[:nt, :nt]
    Itl = I_full[:nt, nt:]
    Ill = I_full[nt:, nt:]
    message = "ok"
    info = Itt
    if nl:
        try:
            cl = np.linalg.cholesky(Ill)
        except np.linalg.LinAlgError:
            cl = None
            message = "baseline block of the information is not positive definite"
        if cl is not None:
            Y = np.linalg.solve(cl, Itl.T)
            info = Itt - Y.T @ Y
        else:
            info = Itt - Itl @ np.linalg.pinv(Ill) @ Itl.T
    info = 0.5 * (info + info.T)

    theta_index = np.concatenate([np.arange(j * p, (j + 1) * p) for j in active] + [m * p + np.arange(d_alpha)]).astype(int)
    se_full, cov = None, None
    if message == "ok":
        evals = np.linalg.eigvalsh(info)
        if evals[0] <= 1e-10 * max(1.0, abs(evals[-1])):
            message = "profiled information is not positive definite; standard errors withheld"
        else:
            cov = np.linalg.inv(info)
            se_full = np.full(m * p + d_alpha, np.nan)
            se_full[theta_index] = np.sqrt(np.diag(cov))
    return LouisResult(info, se_full, cov, message, EH, VS, theta_index, nl)
