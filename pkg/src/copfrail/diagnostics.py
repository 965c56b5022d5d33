"""Post-fit diagnostics: residuals, cumulative intensity curves, relative risks."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError

__all__ = [
    "ResidualReport",
    "deviance_residuals",
    "CumulativeIntensity",
    "export_cumulative_intensity",
    "RelativeRisk",
    "relative_risks",
    "wald_p_value",
]


@dataclass
class ResidualReport:
    """Per (subject, type) martingale and deviance residuals.

    Attributes
    ----------
    martingale, deviance : ndarray, shape (n, m)
    ss_by_type : ndarray, shape (m,)
        Sum over subjects of squared deviance residuals.
    total : float
    """

    subject_ids: tuple
    type_labels: tuple
    counts: np.ndarray
    martingale: np.ndarray
    deviance: np.ndarray
    ss_by_type: np.ndarray
    total: float

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "event_type", "n_events", "martingale", "deviance"])
            for i, sid in enumerate(self.subject_ids):
                for j, lab in enumerate(self.type_labels):
                    w.writerow([sid, lab, int(self.counts[i, j]), repr(float(self.martingale[i, j])), repr(float(self.deviance[i, j]))])


def _deviance(n, M):
    n = np.asarray(n, dtype=float)
    M = np.asarray(M, dtype=float)
    expected = n - M
    bad = (n > 0) & ~(expected > 0)
    if np.any(bad):
        raise DomainError("expected count must be positive for subjects with events")
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(n > 0, n * np.log(np.where(n > 0, n, 1.0) / np.where(expected > 0, expected, 1.0)), 0.0)
    inner = -2.0 * (M - logterm)
    # n log(n / (n - M)) >= M always; clip round-off
    return np.sign(M) * np.sqrt(np.maximum(inner, 0.0))


def deviance_residuals(fit, d, draws=None):
    """Martingale and deviance residuals at the fitted parameters.

    ``M_ij = n_ij - Lambda_0j(tau_i) E(w_ij) exp(x_i' beta_j)`` and
    ``d_ij = sign(M_ij) sqrt(-2 [M_ij + n_ij log((n_ij - M_ij) / n_ij)])``,
    the log term being 0 when ``n_ij = 0``.  ``E(w_ij)`` comes from
    ``draws`` (default: the draws of the last EM iteration).
    """
    draws = fit.draws if draws is None else draws
    params = fit.params
    expected = params.hazard_scale(d) * draws.e_w
    n = d.counts.astype(float)
    M = n - expected
    dev = _deviance(n, M)
    ss = np.sum(dev**2, axis=0)
    return ResidualReport(tuple(d.subject_ids), tuple(d.type_labels), d.counts.copy(), M, dev, ss, float(ss.sum()))


@dataclass
class CumulativeIntensity:
    """``Lambda_0j(t)`` (optionally times ``exp(x' beta_j)``) on a time grid."""

    times: np.ndarray
    values: np.ndarray  # (m, len(times))
    type_labels: tuple

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event_type", "time", "cumulative_intensity"])
            for j, lab in enumerate(self.type_labels):
                for t, v in zip(self.times, self.values[j]):
                    w.writerow([lab, repr(float(t)), repr(float(v))])


def export_cumulative_intensity(fit, grid, covariates=None):
    """Evaluate the fitted cumulative baseline intensities on ``grid``.

    With ``covariates`` (length p) each curve is multiplied by
    ``exp(x' beta_j)``, the cumulative intensity of a subject with unit
    frailty and that covariate profile.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    vals = np.array([bl(grid) for bl in fit.params.baseline]).reshape(len(fit.params.baseline), grid.size)
    if covariates is not None:
        x = np.asarray(covariates, dtype=float).ravel()
        vals = vals * np.exp(fit.params.beta @ x)[:, None]
    return CumulativeIntensity(grid, vals, tuple(fit.type_labels) or tuple(str(j + 1) for j in range(vals.shape[0])))


@dataclass
class RelativeRisk:
    name: str
    beta: float
    se: float
    rr: float
    lower: float
    upper: float
    p_value: float


def wald_p_value(est, se):
    """Two-sided normal-approximation p-value of ``est / se``."""
    return float(2.0 * stats.norm.sf(abs(est) / se))


def relative_risks(fit, z=1.959963984540054):
    """``exp(beta)`` with Wald 95% interval and p-value for every coefficient.

    When standard errors are unavailable the interval and p-value are ``nan``.
    """
    out = []
    m, p = fit.params.beta.shape
    for k, name in enumerate(fit.param_names[: m * p]):
        b = float(fit.params.beta.ravel()[k])
        se = np.nan if fit.std_errors is None else float(fit.std_errors.get(name, np.nan))
        if np.isfinite(se) and se > 0:
            lo, hi, pv = np.exp(b - z * se), np.exp(b + z * se), wald_p_value(b, se)
        else:
            lo = hi = pv = np.nan
        out.append(RelativeRisk(name, b, se, float(np.exp(b)), float(lo), float(hi), pv))
    return out
