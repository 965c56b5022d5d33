"""Joint distribution of a subject's frailty vector: margins tied by a copula.

Everything here works on the log-frailty scale ``b = log w``.  Gamma margins
are natural on ``w``; their log-scale density carries the Jacobian ``w``
(``jacobian=True``), which never depends on the parameters.
"""

import numpy as np
from scipy import special

from .copulas import ClaytonCopula, GaussianCopula, _clayton_logc, copula_sample
from .marginals import SCORE_CLIP, U_EPS, GammaCdfTable, gamma_cdf, make_marginal

__all__ = ["MODEL_LABELS", "FrailtyModel"]

# label -> (copula family, marginal family)
MODEL_LABELS = {
    "Cg": ("clayton", "gamma"),
    "CG": ("clayton", "gaussian"),
    "Gg": ("gaussian", "gamma"),
    "GG": ("gaussian", "gaussian"),
}

_TINY = np.finfo(float).tiny


class FrailtyModel:
    """Copula-composed frailty distribution.

    Parameters
    ----------
    marginal_family : {"gamma", "gaussian"}
    alphas : array_like, shape (m,)
        Marginal variances.
    copula : ClaytonCopula or GaussianCopula
    """

    def __init__(self, marginal_family, alphas, copula):
        if marginal_family not in ("gamma", "gaussian"):
            raise ValueError(f"unknown marginal family {marginal_family!r}")
        alphas = np.array(alphas, dtype=float).ravel()
        for a in alphas:
            make_marginal(marginal_family, a)  # validates
        if copula.m != alphas.size:
            raise ValueError("copula dimension does not match the number of margins")
        self.marginal_family = marginal_family
        self.alphas = alphas
        self.alphas.setflags(write=False)
        self.copula = copula
        self._shape = 1.0 / alphas
        self._tables = None
        if marginal_family == "gamma":
            self._log_norm = special.gammaln(self._shape) + self._shape * np.log(alphas)
        else:
            self._log_norm = 0.5 * np.log(2.0 * np.pi * alphas)

    @classmethod
    def from_label(cls, label, m, alphas=None, copula_param=None):
        """Build a model from a label in ``MODEL_LABELS``.

        ``copula_param`` is the Clayton ``alpha`` or a Gaussian correlation
        (scalar for exchangeable, or a full matrix); default is independence.
        """
        try:
            cfam, mfam = MODEL_LABELS[label]
        except KeyError:
            raise ValueError(f"unknown model label {label!r}; expected one of {sorted(MODEL_LABELS)}") from None
        alphas = np.ones(m) if alphas is None else np.broadcast_to(np.asarray(alphas, float), (m,))
        if cfam == "clayton":
            cop = ClaytonCopula(0.0 if copula_param is None else float(copula_param), m)
        elif copula_param is None:
            cop = GaussianCopula.independence(m)
        elif np.ndim(copula_param) == 0:
            cop = GaussianCopula.exchangeable(float(copula_param), m)
        else:
            cop = GaussianCopula(copula_param)
        return cls(mfam, alphas, cop)

    @property
    def m(self):
        return self.alphas.size

    @property
    def label(self):
        for lab, fams in MODEL_LABELS.items():
            if fams == (self.copula.family, self.marginal_family):
                return lab
        raise AssertionError("unreachable")

    @property
    def margins(self):
        return [make_marginal(self.marginal_family, a) for a in self.alphas]

    @property
    def params(self):
        """Flat ``(alpha_1..alpha_m, copula parameters)``; a single type has no copula parameters."""
        if self.m == 1:
            return self.alphas.copy()
        return np.concatenate([self.alphas, self.copula.params])

    @property
    def param_names(self):
        names = [f"alpha_{j + 1}" for j in range(self.m)]
        return names if self.m == 1 else names + self.copula.param_names

    def with_params(self, values):
        values = np.asarray(values, dtype=float)
        if self.m == 1:
            return self.with_alphas(values[:1])
        return FrailtyModel(self.marginal_family, values[: self.m], self.copula.with_params(values[self.m :]))

    def with_alphas(self, alphas):
        return FrailtyModel(self.marginal_family, alphas, self.copula)

    def with_copula(self, copula):
        return FrailtyModel(self.marginal_family, self.alphas, copula)

    def __repr__(self):
        return f"FrailtyModel({self.label}, alphas={self.alphas.tolist()}, copula={self.copula!r})"

    # -- marginal pieces, vectorized over the last axis ------------------
    def marginal_log_pdf(self, b, alphas=None, jacobian=True, expb=None):
        b = np.asarray(b, dtype=float)
        if alphas is None:
            a, k, norm = self.alphas, self._shape, self._log_norm
        else:
            a = np.asarray(alphas, dtype=float)
            k = 1.0 / a
            if self.marginal_family == "gamma":
                norm = special.gammaln(k) + k * np.log(a)
            else:
                norm = 0.5 * np.log(2.0 * np.pi * a)
        if self.marginal_family == "gamma":
            e = np.exp(b) if expb is None else expb
            out = k * b - e * k - norm
            return out if jacobian else out - b
        return -0.5 * b * b * k - norm

    def cdf(self, b, alphas=None, upper=True, expb=None):
        """``(u, 1 - u)`` for every coordinate of ``b``.

        With ``upper=False`` the second element is only accurate where
        ``u > 0.5`` matters little (it is computed as ``1 - u`` except in the
        far upper tail).
        """
        a = self.alphas if alphas is None else np.asarray(alphas, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.marginal_family == "gamma":
            x = (np.exp(b) if expb is None else expb) / a
            u = gamma_cdf(1.0 / a, x)
            k = np.broadcast_to(1.0 / a, x.shape)
            if upper:
                return u, special.gammaincc(k, x)
            sf = 1.0 - u
            far = u > 0.99
            if far.any():
                sf[far] = special.gammaincc(k[far], x[far])
            return u, sf
        z = b / np.sqrt(a)
        return special.ndtr(z), special.ndtr(-z)

    def _tabulated_inputs(self, b):
        if self._tables is None:
            self._tables = [GammaCdfTable(k) for k in self._shape]
        s = b - np.log(self.alphas)
        out = np.empty_like(s)
        for j, tab in enumerate(self._tables):
            if self.copula.family == "clayton":
                out[..., j] = -tab.log_cdf(s[..., j])
            else:
                out[..., j] = tab.normal_scores(s[..., j])
        return out

    def copula_inputs(self, b, alphas=None, expb=None, tabulated=False):
        """What the copula density consumes: ``-log u`` (Clayton) or normal scores (Gaussian).

        ``tabulated=True`` (gamma margins at the model's own variances) uses
        interpolation tables instead of the incomplete gamma function.
        """
        if tabulated and alphas is None and self.marginal_family == "gamma":
            return self._tabulated_inputs(np.asarray(b, dtype=float))
        a = self.alphas if alphas is None else np.asarray(alphas, dtype=float)
        if self.copula.family == "gaussian" and self.marginal_family == "gaussian":
            return np.clip(np.asarray(b, dtype=float) / np.sqrt(a), -SCORE_CLIP, SCORE_CLIP)
        if self.copula.family == "clayton":
            if self.marginal_family == "gamma":
                x = (np.exp(b) if expb is None else expb) / a
                u = gamma_cdf(1.0 / a, x)
            else:
                return -special.log_ndtr(np.asarray(b, dtype=float) / np.sqrt(a))
            return -np.log(np.maximum(u, _TINY))
        u, sf = self.cdf(b, a, upper=False, expb=expb)
        with np.errstate(divide="ignore"):
            q = np.where(u < 0.5, special.ndtri(np.maximum(u, U_EPS)), -special.ndtri(np.maximum(sf, U_EPS)))
        return np.clip(q, -SCORE_CLIP, SCORE_CLIP)

    def copula_log_density_from_inputs(self, z, copula=None):
        cop = self.copula if copula is None else copula
        if cop.family == "clayton":
            return _clayton_logc(cop.alpha, z)
        return cop.log_density_from_scores(z)

    def uniforms(self, b):
        return self.cdf(b)[0]

    def scores(self, b):
        """Normal scores ``Phi^{-1}(F_j(b_j))`` of the draws."""
        if self.marginal_family == "gaussian":
            return np.clip(np.asarray(b, dtype=float) / np.sqrt(self.alphas), -SCORE_CLIP, SCORE_CLIP)
        u, sf = self.cdf(b)
        with np.errstate(divide="ignore"):
            q = np.where(u < 0.5, special.ndtri(np.maximum(u, U_EPS)), -special.ndtri(np.maximum(sf, U_EPS)))
        return np.clip(q, -SCORE_CLIP, SCORE_CLIP)

    def log_density(self, b, jacobian=True, expb=None, tabulated=False):
        """Joint log density of ``b`` (shape ``(..., m)``)."""
        b = np.asarray(b, dtype=float)
        if expb is None and self.marginal_family == "gamma":
            expb = np.exp(b)
        out = self.marginal_log_pdf(b, jacobian=jacobian, expb=expb).sum(axis=-1)
        if self.copula.family == "clayton" and self.copula.alpha == 0.0:
            return out
        return out + self.copula_log_density_from_inputs(self.copula_inputs(b, expb=expb, tabulated=tabulated))

    def sample(self, size, rng):
        """Draw ``size`` log-frailty vectors, shape ``(size, m)``."""
        u = copula_sample(self.copula, size, rng)
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        if self.marginal_family == "gamma":
            k = 1.0 / self.alphas
            w = self.alphas * special.gammaincinv(k, u)
            return np.log(np.maximum(w, _TINY))
        return np.sqrt(self.alphas) * special.ndtri(u)
