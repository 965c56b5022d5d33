"""Conditional frailty distribution given a subject's data, and its MH sampler.

For subject ``i`` the target is proportional to

    prod_j w_ij^{n_ij} exp(-Lambda_0j(tau_i) w_ij exp(x_i' beta_j)) * g(w_i | alpha)

Chains run on ``b = log w`` with a symmetric Gaussian random walk; all
subjects advance together as one vectorized batch.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConditionalTarget", "MHConfig", "FrailtyDraws", "log_target", "mh_sample", "summarize"]


class ConditionalTarget:
    """Unnormalized conditional log density of frailties for a batch of subjects.

    Parameters
    ----------
    counts : array_like, shape (n, m)
        Event counts ``n_ij``.
    hazard_scale : array_like, shape (n, m)
        ``Lambda_0j(tau_i) * exp(x_i' beta_j)``.
    model : FrailtyModel
    tabulated : bool
        Evaluate gamma marginal cdfs from interpolation tables (see
        ``GammaCdfTable``); the default.
    """

    def __init__(self, counts, hazard_scale, model, tabulated=True):
        self.counts = np.atleast_2d(np.asarray(counts, dtype=float))
        self.hazard_scale = np.atleast_2d(np.asarray(hazard_scale, dtype=float))
        if self.counts.shape != self.hazard_scale.shape or self.counts.shape[1] != model.m:
            raise ValueError("counts, hazard_scale and model dimensions disagree")
        self.model = model
        self.tabulated = tabulated

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def m(self):
        return self.counts.shape[1]

    @property
    def scale(self):
        """``"w"`` for gamma margins, ``"b"`` for Gaussian random effects."""
        return "w" if self.model.marginal_family == "gamma" else "b"

    def subset(self, idx):
        return ConditionalTarget(self.counts[idx], self.hazard_scale[idx], self.model, self.tabulated)

    def log_density_b(self, b):
        """Log target on the ``b = log w`` scale, Jacobian included; shape ``b.shape[:-1]``."""
        b = np.asarray(b, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(b)
            data = (self.counts * b - self.hazard_scale * e).sum(axis=-1)
            out = data + self.model.log_density(b, jacobian=True, expb=e, tabulated=self.tabulated)
        return np.where(np.isnan(out), -np.inf, out)


def log_target(t, x):
    """Unnormalized log conditional density at ``x`` on the target's natural scale.

    ``x`` is the frailty ``w`` for gamma margins and the random effect ``b``
    for Gaussian margins; shape ``(n, m)`` matching the target (or ``(m,)``
    for a single-subject target).  Terms free of the frailty are dropped.
    Points outside the support give ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    if t.scale == "w":
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.log(x)
        bad = ~(x > 0).all(axis=-1)
        b = np.where(np.isfinite(b), b, 0.0)
        val = t.log_density_b(b) - b.sum(axis=-1)
        return np.where(bad, -np.inf, val)
    return t.log_density_b(x)


@dataclass
class MHConfig:
    """Random-walk Metropolis-Hastings settings.

    ``step_scale`` is the initial proposal standard deviation on the log
    scale; with ``adapt`` it is tuned per subject during burn-in toward
    ``target_acceptance`` and then frozen.
    """

    n_burn: int = 500
    n_thin: int = 5
    n_s: int = 500
    step_scale: float = 0.5
    target_acceptance: float = 0.3
    adapt: bool = True
    adapt_window: int = 50

    def __post_init__(self):
        if self.n_burn < 0 or self.n_thin < 1 or self.n_s < 1:
            raise ValueError("need n_burn >= 0, n_thin >= 1, n_s >= 1")
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")

    @property
    def n_proposals(self):
        return self.n_burn + self.n_thin * self.n_s


ACCEPTANCE_WARN = (0.05, 0.95)


@dataclass
class FrailtyDraws:
    """Retained MH draws of ``b = log w`` and their Monte Carlo summaries.

    Attributes
    ----------
    b : ndarray, shape (n, n_s, m)
    acceptance_rate : ndarray, shape (n,)
        Post burn-in acceptance rate of each chain.
    """

    b: np.ndarray
    acceptance_rate: np.ndarray = None
    step_scale: np.ndarray = None
    n_proposals: int = 0
    last: np.ndarray = None
    e_scores: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.b.ndim == 2:
            self.b = self.b[:, None, :]
        if self.acceptance_rate is None:
            self.acceptance_rate = np.full(self.n, np.nan)

    @property
    def n(self):
        return self.b.shape[0]

    @property
    def n_s(self):
        return self.b.shape[1]

    @property
    def m(self):
        return self.b.shape[2]

    @property
    def w(self):
        return np.exp(self.b)

    def _mean(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn(self.b).mean(axis=1)
        return self._cache[key]

    @property
    def e_w(self):
        return self._mean("e_w", np.exp)

    @property
    def e_log_w(self):
        return self._mean("e_log_w", lambda b: b)

    @property
    def e_b2(self):
        return self._mean("e_b2", np.square)

    @property
    def acceptance_flags(self):
        """Subjects whose acceptance rate falls outside [0.05, 0.95]."""
        lo, hi = ACCEPTANCE_WARN
        return (self.acceptance_rate < lo) | (self.acceptance_rate > hi)


def summarize(draws, model=None):
    """Fill the Monte Carlo expectations of ``draws``.

    ``e_w``, ``e_log_w`` and ``e_b2`` are plain averages over the retained
    draws.  With a ``model``, ``e_scores`` (per-subject average of the outer
    product of normal scores, shape (n, m, m)) is filled as well.
    """
    draws.e_w, draws.e_log_w, draws.e_b2  # noqa: B018 (populate cache)
    if model is not None:
        q = model.scores(draws.b)
        draws.e_scores = np.einsum("iqj,iqk->ijk", q, q) / draws.n_s
    return draws


def mh_sample(target, cfg, rng, init=None, step_scale=None, block=256):
    """Random-walk Metropolis-Hastings for every subject of ``target``.

    Parameters
    ----------
    target : ConditionalTarget
    cfg : MHConfig
    rng : numpy.random.Generator
    init : ndarray, shape (n, m), optional
        Starting log-frailties (default 0, i.e. ``w = 1``).
    step_scale : ndarray, shape (n,), optional
        Per-subject starting proposal scales (default ``cfg.step_scale``).

    Returns
    -------
    FrailtyDraws
        ``n_proposals`` equals ``n_burn + n_thin * n_s``.
    """
    n, m = target.n, target.m
    b = np.zeros((n, m)) if init is None else np.array(init, dtype=float).reshape(n, m)
    step = np.full(n, cfg.step_scale) if step_scale is None else np.array(step_scale, dtype=float).reshape(n)
    lp = target.log_density_b(b)
    if not np.all(np.isfinite(lp)):
        bad = ~np.isfinite(lp)
        b[bad] = 0.0
        lp = target.log_density_b(b)

    out = np.empty((n, cfg.n_s, m))
    total = cfg.n_proposals
    accepted_after = np.zeros(n)
    window_acc = np.zeros(n)
    window_len = 0
    kept = 0
    t = 0
    while t < total:
        nb = min(block, total - t)
        z = rng.standard_normal((nb, n, m))
        logu = np.log(rng.random((nb, n)))
        for r in range(nb):
            prop = b + step[:, None] * z[r]
            lp_prop = target.log_density_b(prop)
            with np.errstate(invalid="ignore"):
                acc = logu[r] < lp_prop - lp
            b = np.where(acc[:, None], prop, b)
            lp = np.where(acc, lp_prop, lp)
            if t < cfg.n_burn:
                if cfg.adapt:
                    window_acc += acc
                    window_len += 1
                    if window_len == cfg.adapt_window:
                        rate = window_acc / window_len
                        step = step * np.exp(2.0 * (rate - cfg.target_acceptance))
                        window_acc[:] = 0.0
                        window_len = 0
            else:
                accepted_after += acc
                if (t - cfg.n_burn + 1) % cfg.n_thin == 0:
                    out[:, kept] = b
                    kept += 1
            t += 1
    rate = accepted_after / max(total - cfg.n_burn, 1)
    return FrailtyDraws(out, acceptance_rate=rate, step_scale=step, n_proposals=total, last=b.copy())
