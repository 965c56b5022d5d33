import numpy as np
import pytest
from statsmodels.duration.hazard_regression import PHReg

from copfrail.event_data import Dataset, build_risk_sets
from copfrail.frailty_posterior import ConditionalTarget, FrailtyDraws, MHConfig, mh_sample
from copfrail.information import complete_score, frailty_param_derivatives, louis_information
from copfrail.mcem import ConvergenceConfig, FitConfig, ParameterVector, fit, initial_params
from copfrail.simulate import SimConfig, generate_dataset

from conftest import make_subject
from oracles import GammaMarginalLikelihood
from test_mcem import counting_process_rows


@pytest.fixture(scope="module")
def d_m1():
    cfg = SimConfig(n_subjects=60, n_types=1, model="Cg", copula_truth=0.0, alpha_truth=(1.0,), beta_truth=(0.7,))
    return generate_dataset(cfg, np.random.default_rng(4))


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_closed_form_marginal_matches_quadrature(d_m1):
    o = GammaMarginalLikelihood(d_m1)
    k = d_m1.tie_counts[0].size
    for la, scale, beta in ((np.log(0.8), 0.9, 0.5), (np.log(2.5), 1.3, -0.2), (np.log(0.1), 0.5, 1.0)):
        th = np.concatenate([[la], np.log(np.full(k, scale / d_m1.n_subjects))])
        assert o.value_and_grad(th, beta)[0] == pytest.approx(o.by_quadrature(th, beta), rel=1e-9)


def test_frailty_free_information_is_cox_information(sim50):
    """Degenerate draws (w = 1, no spread): the profiled beta block is the Cox information."""
    d = sim50
    p = initial_params(d, "Cg", build_risk_sets(d))
    lr = louis_information(p, FrailtyDraws(np.zeros((d.n_subjects, 50, 2))), d)
    np.testing.assert_allclose(lr.score_variance, 0.0, atol=1e-12)
    for j in range(2):
        e, t, s, x = counting_process_rows(d, j)
        ph = PHReg(t, x, status=s, entry=e, ties="breslow")
        cox_info = -ph.hessian(p.beta[j])[0, 0]
        assert lr.info[j, j] == pytest.approx(cox_info, rel=1e-8)
    # beta blocks of different types do not interact
    assert lr.info[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_information_symmetric_and_layout(sim50):
    d = sim50
    rng = np.random.default_rng(0)
    p = initial_params(d, "Cg", build_risk_sets(d))
    p = ParameterVector(p.beta, p.baseline, p.model.with_params([0.7, 0.9, 0.8]))
    dr = FrailtyDraws(rng.normal(-0.2, 0.5, (d.n_subjects, 200, 2)))
    lr = louis_information(p, dr, d)
    assert lr.info.shape == (5, 5)
    np.testing.assert_allclose(lr.info, lr.info.T, atol=1e-10)
    np.testing.assert_allclose(lr.expected_neg_hessian, lr.expected_neg_hessian.T, atol=1e-10)
    assert lr.n_jumps == sum(d.tie_counts[j].size for j in range(2))
    S = complete_score(p, dr, d)
    assert S.shape == (200, 5 + lr.n_jumps)


def test_score_variance_is_per_subject_covariance(sim50):
    """Var[S] equals the sum over subjects of per-subject score covariances (brute force)."""
    d = sim50
    rng = np.random.default_rng(1)
    p = initial_params(d, "Cg", build_risk_sets(d))
    p = ParameterVector(p.beta, p.baseline, p.model.with_params([0.7, 0.9, 0.8]))
    b = rng.normal(-0.2, 0.5, (d.n_subjects, 60, 2))
    lr = louis_information(p, FrailtyDraws(b), d)
    # per-subject complete scores: perturb one subject's draws at a time
    total = np.zeros_like(lr.score_variance)
    base = np.repeat(b.mean(axis=1, keepdims=True), 60, axis=1) * 0 + b[:, :1, :]
    s_base = complete_score(p, FrailtyDraws(base), d)
    for i in range(d.n_subjects):
        bi = base.copy()
        bi[i] = b[i]
        Si = complete_score(p, FrailtyDraws(bi), d) - s_base  # only subject i varies
        Si = Si - Si.mean(axis=0)
        total += Si.T @ Si / 60
    np.testing.assert_allclose(lr.score_variance, total, rtol=1e-6, atol=1e-8)


def test_louis_se_matches_profile_likelihood(d_m1):
    res = fit(d_m1, "Cg", FitConfig(seed=1, mh=MHConfig(n_s=500)))
    assert res.converged and res.std_errors is not None
    o = GammaMarginalLikelihood(d_m1)
    x0 = np.concatenate([[np.log(res.params.model.alphas[0])], np.log(res.params.baseline[0].jumps)])
    bhat, ahat, se = o.beta_se(res.params.beta[0, 0], x0)
    assert res.params.beta[0, 0] == pytest.approx(bhat, abs=0.05)
    assert res.std_errors["beta_1"] == pytest.approx(se, rel=0.10)


def test_zero_event_type_se_is_nan():
    subs = [make_subject(str(i), float(i % 2), 1.0 + 0.1 * i, [0.1 + 0.01 * i, 0.95], []) for i in range(12)]
    d = Dataset(subs)
    res = fit(d, "Cg", FitConfig(seed=2, mh=MHConfig(n_burn=100, n_s=100), convergence=ConvergenceConfig(max_iter=3)))
    assert res.params.beta[1, 0] == 0.0
    assert res.std_errors is None or np.isnan(res.std_errors["beta_2"])


def test_non_pd_information_withholds_se(sim50):
    d = sim50
    p = initial_params(d, "Cg", build_risk_sets(d))
    p = ParameterVector(p.beta, p.baseline, p.model.with_params([0.7, 0.9, 0.8]))
    # wildly dispersed draws make Var[S] exceed E[-H]
    dr = FrailtyDraws(np.random.default_rng(3).normal(0, 4.0, (d.n_subjects, 200, 2)))
    lr = louis_information(p, dr, d)
    assert lr.std_errors is None and "not positive definite" in lr.message


def test_frailty_param_derivatives_match_gamma_logpdf():
    from scipy import stats
    from copfrail.frailty import FrailtyModel

    mod = FrailtyModel.from_label("Cg", 1, alphas=[0.8])
    b = np.random.default_rng(4).normal(0, 0.6, (5, 7, 1))
    s, h = frailty_param_derivatives(mod, b)

    def logg(a):
        w = np.exp(b[..., 0])
        return stats.gamma.logpdf(w, 1 / a, scale=a) + b[..., 0]

    eps = 1e-5
    fd = (logg(0.8 + eps) - logg(0.8 - eps)) / (2 * eps)
    np.testing.assert_allclose(s[..., 0], fd, rtol=1e-5, atol=1e-7)
    # hessian of sum_i mean_q log g
    fd2 = ((logg(0.8 + 1e-3) - 2 * logg(0.8) + logg(0.8 - 1e-3)) / 1e-6).mean(axis=1).sum()
    assert h.shape == (1, 1)
    assert h[0, 0] == pytest.approx(fd2, rel=1e-3)


def test_two_type_se_matches_per_type_oracle_under_independence():
    """With independent frailties the two-type model splits into two one-type models."""
    from copfrail.event_data import SubjectData

    cfg = SimConfig(n_subjects=150, n_types=2, model="Cg", copula_truth=0.0, alpha_truth=(1.0, 1.0), beta_truth=(0.7, 0.4))
    d = generate_dataset(cfg, np.random.default_rng(21))
    res = fit(d, "Cg", FitConfig(seed=2))
    assert res.converged
    assert res.params.model.copula.alpha < 0.05
    for j in range(2):
        dj = Dataset([SubjectData(s.subject_id, s.covariates, s.censoring_time, (s.events[j],)) for s in d.subjects])
        o = GammaMarginalLikelihood(dj)
        x0 = np.concatenate([[np.log(res.params.model.alphas[j])], np.log(res.params.baseline[j].jumps)])
        bhat, ahat, se = o.beta_se(res.params.beta[j, 0], x0)
        assert res.params.beta[j, 0] == pytest.approx(bhat, abs=0.05)
        assert res.std_errors[f"beta_{j + 1}"] == pytest.approx(se, rel=0.10)


def test_louis_matches_exact_two_type_clayton_information():
    """Louis information from exact posterior draws vs the Hessian of the exact marginal likelihood.

    Baseline jumps are held fixed, so the comparison is on the unprofiled
    (beta, alpha) block.  Scores in the gamma variances are heavy tailed,
    so their block is Monte Carlo noisy and gets a looser tolerance.
    """
    from oracles import ClaytonGammaGrid

    cfg = SimConfig(n_subjects=60, n_types=2, model="Cg", copula_truth=1.333, alpha_truth=(1.0, 0.8), beta_truth=(0.7, 0.3))
    d = generate_dataset(cfg, np.random.default_rng(7))
    p0 = initial_params(d, "Cg", build_risk_sets(d))
    th = np.array([0.7, 0.3, 1.0, 0.8, 1.333])
    grid = ClaytonGammaGrid(d.counts, d.X[:, 0], p0.cumulative_at(d.tau))
    exact = -grid.hessian(th)
    p = ParameterVector(th[:2].reshape(2, 1), p0.baseline, p0.model.with_params(th[2:]))
    b = grid.posterior_draws(th, 20000, np.random.default_rng(0))
    lr = louis_information(p, FrailtyDraws(b), d)
    louis = (lr.expected_neg_hessian - lr.score_variance)[:5, :5]
    np.testing.assert_allclose(louis[:2, :2], exact[:2, :2], rtol=0.02)
    np.testing.assert_allclose(louis[:2, 2:], exact[:2, 2:], atol=0.05 * exact[:2, :2].max())
    assert louis[4, 4] == pytest.approx(exact[4, 4], rel=0.05)
    np.testing.assert_allclose(np.diag(louis)[2:4], np.diag(exact)[2:4], rtol=0.15)


def test_profiled_louis_se_matches_exact_two_type_clayton():
    """Standard errors with the baseline profiled out, under dependent frailties.

    The oracle treats every baseline jump as a free parameter and takes the
    full observed information as minus the finite-difference Jacobian of
    the exact grid score.  Louis is run from exact iid draws and from the
    package's own MH sampler at the same parameter point.
    """
    from oracles import ClaytonGammaJumpsGrid

    cfg = SimConfig(n_subjects=80, n_types=2, model="Cg", copula_truth=1.333, alpha_truth=(1.0, 0.8), beta_truth=(0.7, 0.3))
    d = generate_dataset(cfg, np.random.default_rng(7))
    p0 = initial_params(d, "Cg", build_risk_sets(d))
    th = np.array([0.7, 0.3, 1.0, 0.8, 1.333])
    grid = ClaytonGammaJumpsGrid(d, k=200)
    v = np.concatenate([th, p0.baseline[0].jumps, p0.baseline[1].jumps])
    exact = grid.profiled_se(v)
    p = ParameterVector(th[:2].reshape(2, 1), p0.baseline, p0.model.with_params(th[2:]))

    iid = FrailtyDraws(grid.posterior_draws(th, 20000, np.random.default_rng(0)))
    se = louis_information(p, iid, d).std_errors
    np.testing.assert_allclose(se[:2], exact[:2], rtol=0.02)
    np.testing.assert_allclose(se[2:], exact[2:], rtol=0.08)

    mh = mh_sample(ConditionalTarget(d.counts, p.hazard_scale(d), p.model), MHConfig(n_s=2000), np.random.default_rng(1))
    se = louis_information(p, mh, d).std_errors
    np.testing.assert_allclose(se[:2], exact[:2], rtol=0.02)
    np.testing.assert_allclose(se[2:], exact[2:], rtol=0.20)
