"""Monte Carlo EM for copula-frailty intensity models.

The intensity of type-``j`` events for subject ``i`` is

    lambda_ij(t) = lambda_0j(t) * w_ij * exp(x_i' beta_j)

with the frailty vector ``w_i`` drawn from a copula-composed distribution.
Each EM iteration draws frailties from their conditional distribution by
Metropolis-Hastings (E-step) and then updates

* ``beta_j`` by Newton-Raphson on the expected Cox partial likelihood,
* the baseline jumps by a Breslow-type estimator,
* the frailty parameters in two stages: margins first, then the copula.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .copulas import kendalls_tau, maximize_q3, score_outer
from .errors import CopfrailError, DataError, EstimationError, FitError
from .event_data import build_risk_sets
from .frailty import MODEL_LABELS, FrailtyModel
from .frailty_posterior import ConditionalTarget, FrailtyDraws, MHConfig, mh_sample
from .marginals import maximize_q4

__all__ = [
    "BaselineStep",
    "ParameterVector",
    "ConvergenceConfig",
    "ConvergenceStatus",
    "FitConfig",
    "IterationRecord",
    "FitResult",
    "expected_partial_loglik",
    "update_beta",
    "update_baseline",
    "update_alpha",
    "check_convergence",
    "practical_convergence",
    "complete_loglik_draws",
    "initial_params",
    "fit",
    "louis_information",
]


class BaselineStep:
    """Right-continuous step function ``Lambda_0j`` built from jumps at event times."""

    def __init__(self, times, jumps):
        self.times = np.asarray(times, dtype=float).copy()
        self.jumps = np.asarray(jumps, dtype=float).copy()
        if self.times.shape != self.jumps.shape:
            raise ValueError("times and jumps must have the same length")
        if np.any(self.jumps < 0):
            raise ValueError("baseline jumps must be nonnegative")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        self.cumulative = np.cumsum(self.jumps)
        for a in (self.times, self.jumps, self.cumulative):
            a.setflags(write=False)

    def __call__(self, t):
        """``Lambda_0j(t)``: sum of the jumps at times ``<= t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        cum = np.concatenate([[0.0], self.cumulative])
        return cum[idx]

    @property
    def total(self):
        return float(self.cumulative[-1]) if self.jumps.size else 0.0

    def __len__(self):
        return self.jumps.size

    def __repr__(self):
        return f"BaselineStep({self.jumps.size} jumps, total={self.total:.4g})"


@dataclass(frozen=True)
class ParameterVector:
    """Full parameter set: regression coefficients, baselines and frailty law.

    ``beta`` has shape (m, p); ``model`` carries the marginal variances and
    the copula.
    """

    beta: np.ndarray
    baseline: tuple
    model: FrailtyModel

    @property
    def marginal_alphas(self):
        return self.model.alphas

    @property
    def copula(self):
        return self.model.copula

    def cumulative_at(self, tau):
        """``Lambda_0j(tau_i)`` for every subject and type, shape (n, m)."""
        return np.column_stack([bl(tau) for bl in self.baseline])

    def hazard_scale(self, d):
        """``Lambda_0j(tau_i) exp(x_i' beta_j)``, shape (n, m)."""
        return self.cumulative_at(d.tau) * np.exp(d.X @ self.beta.T)

    @property
    def theta(self):
        """Monitored coordinates: ``beta`` (type-major), then the frailty parameters."""
        return np.concatenate([self.beta.ravel(), self.model.params])

    def theta_names(self, covariate_names=None):
        m, p = self.beta.shape
        cov = covariate_names or [f"x{k + 1}" for k in range(p)]
        if p == 1:
            names = [f"beta_{j + 1}" for j in range(m)]
        else:
            names = [f"beta_{j + 1}[{c}]" for j in range(m) for c in cov]
        return names + self.model.param_names


# -- M-step pieces ------------------------------------------------------------


def _risk_sums(j, beta_j, e_w, d, risk, order=2):
    """Risk-set sums ``S0, S1, S2`` of ``E(w_ij) exp(x_i' beta_j) x_i^{(0,1,2)}``."""
    X = d.X
    r = e_w[:, j] * np.exp(X @ beta_j)
    A = risk.at_risk[j].astype(float)
    S0 = A @ r
    if order == 0:
        return S0, None, None
    S1 = A @ (r[:, None] * X)
    if order == 1:
        return S0, S1, None
    p = X.shape[1]
    S2 = (A @ (r[:, None] * np.einsum("ik,il->ikl", X, X).reshape(-1, p * p))).reshape(-1, p, p)
    return S0, S1, S2


def _event_design(j, d):
    return d.X[d.event_subjects[j]]


def expected_partial_loglik(beta_j, draws, d, risk, j):
    """Expected Cox partial log-likelihood of type ``j`` with Breslow ties.

    Every type-``j`` event contributes ``x_i' beta_j + E[log w_ij]`` for the
    subject it belongs to; each distinct event time subtracts ``N_j(t)``
    times the log of the risk-set sum of ``E(w_ij) exp(x_i' beta_j)``.
    """
    beta_j = np.asarray(beta_j, dtype=float).reshape(-1)
    e_w, e_log_w = draws.e_w, draws.e_log_w
    if d.tie_counts[j].size == 0:
        return 0.0
    S0, _, _ = _risk_sums(j, beta_j, e_w, d, risk, order=0)
    if np.any(S0 <= 0):
        raise CopfrailError(f"empty risk set at an event time of type {j + 1}")
    who = d.event_subjects[j]
    num = float(np.sum(d.X[who] @ beta_j) + np.sum(e_log_w[who, j]))
    return num - float(np.sum(d.tie_counts[j] * np.log(S0)))


def _partial_grad_hess(j, beta_j, e_w, d, risk):
    S0, S1, S2 = _risk_sums(j, beta_j, e_w, d, risk)
    N = d.tie_counts[j]
    xbar = S1 / S0[:, None]
    grad = _event_design(j, d).sum(axis=0) - N @ xbar
    V = S2 / S0[:, None, None] - np.einsum("lk,lm->lkm", xbar, xbar)
    info = np.einsum("l,lkm->km", N, V)
    return grad, info


BETA_TOL = 1e-8
BETA_MAX_ITER = 50
BETA_DIVERGE = 30.0
BETA_STEP_TOL = 1e-6


def _newton_beta_j(j, e_w, e_log_w, d, risk, init):
    names = d.covariate_names
    beta = np.array(init, dtype=float)
    shim = _Summaries(e_w, e_log_w)
    f = expected_partial_loglik(beta, shim, d, risk, j)
    for _ in range(BETA_MAX_ITER):
        grad, info = _partial_grad_hess(j, beta, e_w, d, risk)
        evals, evecs = np.linalg.eigh(info)
        if evals[0] <= 1e-10 * max(1.0, evals[-1]):
            k = int(np.argmax(np.abs(evecs[:, 0])))
            raise EstimationError(
                f"type {d.type_labels[j]}: partial-likelihood Hessian is singular in covariate "
                f"{names[k]!r} (constant among events or separating)"
            )
        step = np.linalg.solve(info, grad)
        # under separation grad and info both decay like exp(-|beta|) while the
        # Newton step stays O(1), so a small gradient alone is not convergence
        if np.max(np.abs(grad)) < BETA_TOL and np.max(np.abs(step)) < BETA_STEP_TOL:
            return beta
        t = 1.0
        while True:
            cand = beta + t * step
            f_new = expected_partial_loglik(cand, shim, d, risk, j)
            if f_new >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        beta, f = cand, f_new
        if np.max(np.abs(beta)) > BETA_DIVERGE:
            k = int(np.argmax(np.abs(beta)))
            raise EstimationError(
                f"type {d.type_labels[j]}: coefficient of covariate {names[k]!r} diverges "
                "(covariate separates the events)"
            )
    raise EstimationError(f"type {d.type_labels[j]}: Newton iterations for beta did not converge")


@dataclass
class _Summaries:
    e_w: np.ndarray
    e_log_w: np.ndarray


def update_beta(draws, d, risk, init=None, types=None):
    """Newton-Raphson update of every ``beta_j`` on its expected partial likelihood.

    Types are independent; ``types`` restricts the update to a subset (the
    others keep their ``init`` rows).  Types without events keep ``beta_j = 0``.

    Returns
    -------
    ndarray, shape (m, p)
    """
    m, p = d.n_types, d.n_covariates
    beta = np.zeros((m, p)) if init is None else np.array(init, dtype=float).reshape(m, p)
    for j in range(m) if types is None else types:
        if d.tie_counts[j].size == 0:
            beta[j] = 0.0
            continue
        beta[j] = _newton_beta_j(j, draws.e_w, draws.e_log_w, d, risk, beta[j])
    return beta


def update_baseline(draws, d, risk, beta):
    """Breslow-type jumps ``N_j(t) / sum_{R(t)} E(w_ij) exp(x_i' beta_j)``."""
    out = []
    for j in range(d.n_types):
        if d.tie_counts[j].size == 0:
            out.append(BaselineStep([], []))
            continue
        S0, _, _ = _risk_sums(j, np.asarray(beta[j]), draws.e_w, d, risk, order=0)
        out.append(BaselineStep(d.distinct_times[j], d.tie_counts[j] / S0))
    return tuple(out)


@dataclass
class AlphaUpdate:
    model: FrailtyModel
    projected: bool = False
    copula_inputs: np.ndarray = None


def update_alpha(draws, model):
    """Two-stage update of the frailty parameters.

    Stage 1 maximizes each margin's expected log-likelihood; stage 2
    maximizes the expected copula log-likelihood with the new margins fixed.

    Returns
    -------
    AlphaUpdate
    """
    if model.marginal_family == "gamma":
        alphas = [maximize_q4("gamma", e_log_w=draws.e_log_w[:, j], e_w=draws.e_w[:, j]) for j in range(model.m)]
    else:
        alphas = [maximize_q4("gaussian", e_b2=draws.e_b2[:, j]) for j in range(model.m)]
    staged = model.with_alphas(alphas)
    if model.m == 1:
        return AlphaUpdate(staged)
    z = staged.copula_inputs(draws.b)
    if model.copula.family == "clayton":
        cf = maximize_q3("clayton", init=model.copula.alpha, neg_log_u=z)
    else:
        cf = maximize_q3("gaussian", init=model.copula.params, S=score_outer(z))
    return AlphaUpdate(staged.with_copula(cf.copula), cf.projected, z)


# -- convergence -----------------------------------------------------------------


@dataclass
class ConvergenceConfig:
    """Relative-change stopping rule for the monitored parameters.

    At iteration ``s`` the criterion is
    ``max_d |(xi_d(s) - xi_d(s-1)) / (xi_d(s-1) - delta1)|``; the fit stops
    once it stays below ``delta2`` for ``consecutive_required`` iterations.

    With a fixed Monte Carlo sample size the iterates keep fluctuating at the
    level of the E-step noise, so the rule applied to raw iterates may never
    fire.  Two optional settings make it usable in practice:

    window : int
        Apply the rule to means of the last ``window`` iterates (the trailing
        window ending at ``s`` against the one ending at ``s-1``).  ``1``
        gives the rule on raw iterates.
    floor : float
        Lower bound on the denominator ``|xi_d(s-1) - delta1|``; keeps the
        relative change finite for parameters whose value is near
        ``delta1`` (for example a correlation near 0).  ``0`` disables it.
    """

    delta1: float = 0.01
    delta2: float = 0.003
    consecutive_required: int = 3
    max_iter: int = 200
    window: int = 1
    floor: float = 0.0

    def __post_init__(self):
        if not (self.delta1 > 0 and self.delta2 > 0):
            raise ValueError("delta1 and delta2 must be positive")
        if self.consecutive_required < 1:
            raise ValueError("consecutive_required must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.floor < 0:
            raise ValueError("floor must be nonnegative")


# Settings used by ``FitConfig`` by default: trailing means over 20
# iterations and a unit floor on the denominator.
PRACTICAL_CONVERGENCE = {"window": 20, "floor": 1.0}


def practical_convergence(**kw):
    """``ConvergenceConfig`` with the windowed rule used by default in fits."""
    opts = dict(PRACTICAL_CONVERGENCE)
    opts.update(kw)
    return ConvergenceConfig(**opts)


@dataclass
class ConvergenceStatus:
    converged: bool
    streak: int
    values: np.ndarray

    def __bool__(self):
        return self.converged


def _criterion(prev, cur, delta1, floor=0.0):
    prev = np.asarray(prev, dtype=float)
    cur = np.asarray(cur, dtype=float)
    diff = np.abs(cur - prev)
    den = np.maximum(np.abs(prev - delta1), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(diff == 0, 0.0, diff / den)
    return float(np.max(r)) if r.size else 0.0


def check_convergence(trace, cfg=None):
    """Evaluate the stopping rule on a sequence of monitored parameter vectors.

    Parameters
    ----------
    trace : sequence of array_like
        Parameter vectors in iteration order (``IterationRecord`` objects
        are accepted too; their ``theta`` is used).
    cfg : ConvergenceConfig, optional

    Returns
    -------
    ConvergenceStatus
        ``values[s-1]`` is the criterion between iterates ``s-1`` and ``s``;
        ``streak`` counts the trailing run of values below ``delta2``.  With
        ``cfg.window > 1`` the first ``window - 1`` values are ``nan`` (not
        enough iterates for two windows) and never count.
    """
    cfg = cfg or ConvergenceConfig()
    thetas = np.array([np.asarray(getattr(t, "theta", t), dtype=float) for t in trace])
    if cfg.window > 1 and len(thetas) > 0:
        csum = np.cumsum(np.vstack([np.zeros((1, thetas.shape[1])), thetas]), axis=0)
        k = cfg.window
        means = [(csum[s + 1] - csum[s + 1 - k]) / k if s + 1 >= k else None for s in range(len(thetas))]
    else:
        means = list(thetas)
    vals = np.array(
        [np.nan if a is None or b is None else _criterion(a, b, cfg.delta1, cfg.floor) for a, b in zip(means[:-1], means[1:])]
    )
    streak = 0
    for v in vals[::-1]:
        if v < cfg.delta2:
            streak += 1
        else:
            break
    return ConvergenceStatus(streak >= cfg.consecutive_required, streak, vals)


# -- complete-data log-likelihood ---------------------------------------------------


def complete_loglik_draws(params, draws, d, copula_inputs=None):
    """Complete-data log-likelihood at every retained draw, shape (n_s,).

    Summed over subjects; uses the natural-scale frailty density (no
    Jacobian), so differences across parameter values are Monte Carlo
    estimates of differences of the EM objective.  ``copula_inputs`` may
    pass precomputed ``params.model.copula_inputs(draws.b)``.
    """
    b = draws.b
    lin = d.X @ params.beta.T  # (n, m)
    H = params.cumulative_at(d.tau) * np.exp(lin)
    log_jumps = 0.0
    for j, bl in enumerate(params.baseline):
        if bl.jumps.size:
            with np.errstate(divide="ignore"):
                log_jumps += float(np.sum(d.tie_counts[j] * np.log(bl.jumps)))
    n = d.counts.astype(float)
    const = log_jumps + float(np.sum(n * lin))
    data = np.einsum("ij,iqj->q", n, b) - np.einsum("ij,iqj->q", H, np.exp(b))
    model = params.model
    if copula_inputs is None:
        prior = model.log_density(b, jacobian=model.marginal_family != "gamma")
    else:
        prior = model.marginal_log_pdf(b, jacobian=model.marginal_family != "gamma").sum(axis=-1)
        if model.m > 1:
            prior = prior + model.copula_log_density_from_inputs(copula_inputs)
    prior = prior.sum(axis=0)
    return const + data + prior


# -- driver -------------------------------------------------------------------------


@dataclass
class FitConfig:
    """Settings of one MCEM fit.

    ``se_draw_factor`` multiplies ``mh.n_s`` for the extra E-step run at the
    estimate to compute standard errors.  ``warm_burn`` replaces
    ``mh.n_burn`` after the first iteration, when each chain starts from the
    previous iteration's last state.  The default stopping rule is
    :func:`practical_convergence`.
    """

    mh: MHConfig = field(default_factory=MHConfig)
    convergence: ConvergenceConfig = field(default_factory=practical_convergence)
    compute_se: bool = True
    se_draw_factor: int = 4
    warm_burn: int = None
    seed: int = None


@dataclass
class IterationRecord:
    iteration: int
    theta: np.ndarray
    criterion: float
    q_value: float
    q_se: float
    q_decrease_flag: bool
    acceptance_mean: float
    n_acceptance_flags: int
    projected: bool
    seconds: float


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``std_errors`` maps parameter names to standard errors, or is ``None``
    when the information matrix was not positive definite (see
    ``se_message``).  Entries of types without events are ``nan``.
    ``draws`` are the E-step draws of the last iteration (those the final
    M-step used); ``se_draws`` the larger sample drawn at the estimate for
    the information matrix.
    """

    params: ParameterVector
    std_errors: dict
    info_matrix: np.ndarray
    trace: list
    kendall: object
    converged: bool
    n_iterations: int
    param_names: list
    draws: FrailtyDraws = None
    se_draws: FrailtyDraws = None
    se_message: str = ""
    model_label: str = ""
    seed: int = None
    runtime: float = 0.0
    type_labels: tuple = ()
    covariate_names: tuple = ()

    @property
    def estimates(self):
        return dict(zip(self.param_names, self.params.theta))

    def theta_trace(self):
        return np.array([r.theta for r in self.trace])


def _frailty_free(d):
    n, m = d.n_subjects, d.n_types
    return FrailtyDraws(np.zeros((n, 1, m)))


def initial_params(d, label, risk=None):
    """Frailty-free Cox/Breslow start, unit marginal variances, independence copula."""
    if label not in MODEL_LABELS:
        raise ValueError(f"unknown model label {label!r}; expected one of {sorted(MODEL_LABELS)}")
    risk = risk or build_risk_sets(d)
    ff = _frailty_free(d)
    beta = update_beta(ff, d, risk)
    baseline = update_baseline(ff, d, risk, beta)
    model = FrailtyModel.from_label(label, d.n_types)
    return ParameterVector(beta, baseline, model)


def _m_step(params, draws, d, risk):
    beta = update_beta(draws, d, risk, init=params.beta)
    baseline = update_baseline(draws, d, risk, beta)
    au = update_alpha(draws, params.model)
    return ParameterVector(beta, baseline, au.model), au


def fit(d, label, cfg=None, rng=None, init=None, callback=None):
    """Fit a copula-frailty model by Monte Carlo EM.

    Parameters
    ----------
    d : Dataset
    label : {"Cg", "CG", "Gg", "GG"}
        Copula (first letter) and marginal family (second letter; ``g`` gamma,
        ``G`` Gaussian random effect).
    cfg : FitConfig, optional
    rng : numpy.random.Generator, optional
        Overrides ``cfg.seed``.
    init : ParameterVector, optional
        Starting values; default :func:`initial_params`.
    callback : callable, optional
        Called with each :class:`IterationRecord`.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` was reached.

    Raises
    ------
    FitError
        Any failure inside an M-step or the E-step, with the trace so far.
    """
    cfg = cfg or FitConfig()
    t_start = time.perf_counter()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    risk = build_risk_sets(d)
    try:
        params = init or initial_params(d, label, risk)
    except CopfrailError as exc:
        raise FitError(f"initialization failed: {exc}", trace=[], stage="init") from exc
    if params.model.label != label:
        raise ValueError("init parameters do not match the model label")

    trace = [IterationRecord(0, params.theta, np.nan, np.nan, np.nan, False, np.nan, 0, False, 0.0)]
    conv = cfg.convergence
    b_state, step = None, None
    mh = cfg.mh
    draws = None
    prev_q = None
    converged = False
    for it in range(1, conv.max_iter + 1):
        t0 = time.perf_counter()
        stage = "E-step"
        try:
            target = ConditionalTarget(d.counts, params.hazard_scale(d), params.model)
            mh_it = mh
            if it > 1 and cfg.warm_burn is not None:
                mh_it = MHConfig(cfg.warm_burn, mh.n_thin, mh.n_s, mh.step_scale, mh.target_acceptance, mh.adapt, mh.adapt_window)
            draws = mh_sample(target, mh_it, rng, init=b_state, step_scale=step)
            b_state, step = draws.last, draws.step_scale
            stage = "M-step"
            new, au = _m_step(params, draws, d, risk)
            projected = au.projected
        except (CopfrailError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise FitError(f"{stage} failed at iteration {it}: {exc}", trace=trace[1:], stage=stage) from exc
        ll = complete_loglik_draws(new, draws, d, au.copula_inputs)
        q, q_se = float(ll.mean()), float(ll.std() / np.sqrt(ll.size))
        flag = prev_q is not None and q < prev_q[0] - 3.0 * np.hypot(q_se, prev_q[1])
        prev_q = (q, q_se)
        params = new
        rec = IterationRecord(
            it,
            params.theta,
            np.nan,
            q,
            q_se,
            bool(flag),
            float(np.mean(draws.acceptance_rate)),
            int(np.sum(draws.acceptance_flags)),
            bool(projected),
            time.perf_counter() - t0,
        )
        trace.append(rec)
        status = check_convergence(trace, conv)
        rec.criterion = float(status.values[-1]) if status.values.size else np.nan
        if callback is not None:
            callback(rec)
        if status.converged:
            converged = True
            break

    std_errors, info, message = None, None, "not computed"
    names = params.theta_names(list(d.covariate_names))
    se_draws = None
    if cfg.compute_se:
        se_cfg = MHConfig(mh.n_burn, mh.n_thin, mh.n_s * cfg.se_draw_factor, mh.step_scale, mh.target_acceptance, mh.adapt, mh.adapt_window)
        target = ConditionalTarget(d.counts, params.hazard_scale(d), params.model)
        try:
            se_draws = mh_sample(target, se_cfg, rng, init=b_state, step_scale=step)
            from .information import louis_information

            lr = louis_information(params, se_draws, d, risk)
        except (CopfrailError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise FitError(f"standard errors failed: {exc}", trace=trace[1:], stage="information") from exc
        info, message = lr.info, lr.message
        if lr.std_errors is not None:
            std_errors = dict(zip(names, lr.std_errors))
    return FitResult(
        params=params,
        std_errors=std_errors,
        info_matrix=info,
        trace=trace[1:],
        kendall=kendalls_tau(params.copula) if params.model.m > 1 else None,
        converged=converged,
        n_iterations=len(trace) - 1,
        param_names=names,
        draws=draws,
        se_draws=se_draws,
        se_message=message,
        model_label=label,
        seed=cfg.seed,
        runtime=time.perf_counter() - t_start,
        type_labels=tuple(d.type_labels),
        covariate_names=tuple(d.covariate_names),
    )


def louis_information(params, draws, d, risk=None):
    """Observed information by Louis's identity; see :mod:`copfrail.information`."""
    from .information import louis_information as _li

    return _li(params, draws, d, risk)
