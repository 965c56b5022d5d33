import io

import numpy as np
import pytest

from copfrail.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, load_config, main
from copfrail.event_data import load_dataset
from copfrail.report import FIT_OUTPUTS, read_baseline_csv, read_residuals_csv, read_trace_csv
from copfrail.simulate import censoring_fraction, read_study_csv

QUICK = ["--n-burn", "100", "--n-thin", "2", "--n-s", "100", "--delta2", "1", "--window", "1", "--floor", "1", "--max-iter", "8"]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = tmp / "sim.cfg"
    cfg.write_text("[simulate]\nn_subjects = 40\nn_types = 2\nmodel = Cg\ncopula_truth = 0.5\nalpha_truth = 0.8, 0.8\nbeta_truth = 0.7 0.3\n")
    path = tmp / "data.csv"
    code, out, _ = run(["simulate", "--config", str(cfg), "--out", str(path), "--seed", "3"])
    assert code == EXIT_OK
    return path


def test_simulate_prints_censoring_fraction_of_written_file(small_csv, tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("[simulate]\nn_subjects = 40\nn_types = 2\nmodel = Cg\ncopula_truth = 0.5\nalpha_truth = 0.8, 0.8\nbeta_truth = 0.7 0.3\n")
    code, out, _ = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d.csv"), "--seed", "3"])
    d = load_dataset(tmp_path / "d.csv")
    assert f"censoring fraction: {censoring_fraction(d):.3f}" in out
    assert d.n_subjects == 40 and d.n_types == 2


def test_simulate_default_settings(tmp_path):
    code, out, _ = run(["simulate", "--out", str(tmp_path / "d.csv"), "--seed", "0"])
    assert code == EXIT_OK
    d = load_dataset(tmp_path / "d.csv")
    assert d.n_subjects == 200 and d.n_types == 3


def test_simulate_deterministic(small_csv, tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("[simulate]\nn_subjects = 40\nn_types = 2\nmodel = Cg\ncopula_truth = 0.5\nalpha_truth = 0.8, 0.8\nbeta_truth = 0.7 0.3\n")
    run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again.csv"), "--seed", "3"])
    assert (tmp_path / "again.csv").read_bytes() == small_csv.read_bytes()


def test_simulate_single_subject(tmp_path):
    code, _, _ = run(["simulate", "--n-subjects", "1", "--out", str(tmp_path / "one.csv"), "--seed", "1"])
    assert code == EXIT_OK
    assert load_dataset(tmp_path / "one.csv").n_subjects == 1


def test_simulate_without_seed_reports_one(tmp_path):
    code, _, err = run(["simulate", "--n-subjects", "5", "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_OK and err.startswith("seed: ")


def test_simulate_invalid_config_exit_1(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[simulate]\ncensor_rate = -1\n")
    code, _, err = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv"), "--seed", "1"])
    assert code == EXIT_ERROR and "censor_rate" in err
    cfg.write_text("[simulate]\nbogus = 1\n")
    code, _, err = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv"), "--seed", "1"])
    assert code == EXIT_ERROR and "bogus" in err


def test_fit_happy_path_and_round_trip(small_csv, tmp_path):
    out = tmp_path / "fit"
    code, stdout, _ = run(["fit", "--input", str(small_csv), "--model", "Cg", "--out", str(out), "--seed", "5", *QUICK])
    assert code == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == sorted(FIT_OUTPUTS)
    d = load_dataset(small_csv)
    base = read_baseline_csv(out / "baseline.csv")
    assert list(base) == list(d.type_labels)
    for j, lab in enumerate(d.type_labels):
        np.testing.assert_array_equal(base[lab].times, d.distinct_times[j])
        assert np.all(np.diff(base[lab].cumulative) >= 0)
    names, it, theta, crit = read_trace_csv(out / "trace.csv")
    assert names == ["beta_1", "beta_2", "alpha_1", "alpha_2", "alpha_c"]
    assert it.tolist() == list(range(1, len(it) + 1))
    res = read_residuals_csv(out / "residuals.csv")
    assert len(res) == d.n_subjects * d.n_types
    M = np.array([r["martingale"] for r in res]).reshape(d.n_subjects, d.n_types)
    np.testing.assert_allclose(M.sum(axis=0), 0.0, atol=1e-6)
    report = (out / "report.txt").read_text()
    assert "Kendall's tau" in report and "beta_1" in report and "converged after" in report


def test_fit_deterministic(small_csv, tmp_path):
    for k in (1, 2):
        run(["fit", "--input", str(small_csv), "--model", "Cg", "--out", str(tmp_path / f"f{k}"), "--seed", "9", *QUICK])
    for name in ("baseline.csv", "residuals.csv"):
        assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()


def test_fit_dump_draws(small_csv, tmp_path):
    code, _, _ = run(["fit", "--input", str(small_csv), "--model", "Gg", "--out", str(tmp_path / "f"), "--seed", "1", "--dump-draws", *QUICK])
    z = np.load(tmp_path / "f" / "draws.npz")
    assert z["b"].shape == (40, 100, 2)


def test_fit_max_iter_one_exits_2(small_csv, tmp_path):
    code, _, err = run(["fit", "--input", str(small_csv), "--model", "Cg", "--out", str(tmp_path / "f"), "--seed", "1", *QUICK, "--max-iter", "1"])
    assert code == EXIT_NOT_CONVERGED and "not converged" in err
    _, it, _, _ = read_trace_csv(tmp_path / "f" / "trace.csv")
    assert it.tolist() == [1]
    assert (tmp_path / "f" / "report.txt").exists()


def test_fit_missing_column_exit_1(small_csv, tmp_path):
    lines = small_csv.read_text().splitlines()
    header = lines[0].split(",")
    k = header.index("status")
    bad = "\n".join(",".join(c for i, c in enumerate(l.split(",")) if i != k) for l in lines) + "\n"
    p = tmp_path / "bad.csv"
    p.write_text(bad)
    code, _, err = run(["fit", "--input", str(p), "--model", "Cg", "--out", str(tmp_path / "f"), "--seed", "1"])
    assert code == EXIT_ERROR
    assert "input file" in err and "missing column 'status'" in err


def test_fit_missing_input_and_bad_model(tmp_path):
    code, _, err = run(["fit", "--input", str(tmp_path / "nope.csv"), "--model", "Cg", "--out", str(tmp_path / "f"), "--seed", "1"])
    assert code == EXIT_ERROR and "error" in err
    with pytest.raises(SystemExit):
        run(["fit", "--input", "x.csv", "--model", "XY", "--out", str(tmp_path)])


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[fit]\nn_s = 300\nseed = 4\nmodel = Gg\n")
    assert load_config(cfg, "fit") == {"n_s": 300, "seed": 4, "model": "Gg"}
    assert load_config(cfg, "study") == {}


def study_cfg(tmp_path, model):
    cfg = tmp_path / f"{model}.cfg"
    cfg.write_text(f"[study]\nmodel = {model}\nsetting = I\nn_subjects = 30\nn_replicates = 2\nseed = 17\n"
                   "n_burn = 100\nn_thin = 2\nn_s = 100\ndelta2 = 1\nwindow = 1\nfloor = 1\nmax_iter = 8\n")
    return cfg


@pytest.mark.parametrize("model,rows", [("Cg", 7), ("Gg", 9)])
def test_study_rows_and_determinism(tmp_path, model, rows):
    cfg = study_cfg(tmp_path, model)
    code, out, err = run(["study", "--config", str(cfg), "--out", str(tmp_path / "r1.csv"), "--threads", "1"])
    assert code == EXIT_OK
    assert err.count("replicate ") == 2
    tab = read_study_csv(tmp_path / "r1.csv")
    assert len(tab) == rows
    run(["study", "--config", str(cfg), "--out", str(tmp_path / "r2.csv"), "--threads", "1"])
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_study_requires_seed(tmp_path):
    code, _, err = run(["study", "--out", str(tmp_path / "r.csv"), "--n-replicates", "1"])
    assert code == EXIT_ERROR and "seed" in err


def test_study_error_propagates(tmp_path):
    cfg = study_cfg(tmp_path, "Cg")
    code, _, err = run(["study", "--config", str(cfg), "--out", str(tmp_path / "r.csv"), "--threads", "1",
                        "--max-iter", "1", "--delta2", "1e-9"])
    assert code == EXIT_ERROR and "did not converge" in err


@pytest.mark.xfail(strict=True, reason="generator censors about 24% at Cg II, below the published 29-33%; see ledger")
def test_simulate_default_settings_censoring_band(tmp_path):
    code, out, _ = run(["simulate", "--out", str(tmp_path / "d.csv"), "--seed", "0"])
    frac = float(out.rsplit("censoring fraction:", 1)[1])
    assert 0.25 <= frac <= 0.37
