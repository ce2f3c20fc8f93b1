import math

import numpy as np
import pytest

from dplsvm.errors import ValidationError
from dplsvm.netestim import pearson_correlation
from dplsvm.rngkit import RandomStream
from dplsvm.synthgen import (
    SynthSpec,
    bayes_error,
    class_precisions,
    conditional_bayes_error,
    cosine_basis,
    generate,
    generate_dynamic,
    generate_scans,
    logistic_bayes_error,
    RecoveryReport,
    RecoveryRun,
    margin_bayes_error,
    recovery_study,
)
from dplsvm.svm_static import PRIOR_MODES, Hyperparameters


def test_bayes_error_examples():
    assert margin_bayes_error(1.0, 0.0) == 0.0
    assert margin_bayes_error(0.0, 1.0) == 0.5
    assert margin_bayes_error(1.0, 1.0) == pytest.approx(0.25)
    assert conditional_bayes_error(1.0, 1.0) == pytest.approx(0.158655, abs=1e-6)
    assert conditional_bayes_error(1.0, 0.0) == 0.0
    assert logistic_bayes_error(1.0, 0.0) == 0.0
    assert 0.0 < logistic_bayes_error(1.0, 1.0) < 0.5
    assert bayes_error(2.0, 1.0, "logistic") == logistic_bayes_error(2.0, 1.0)


def test_generate_hits_the_requested_bayes_error():
    data = generate(SynthSpec(n=20000, q=10, n_signals=4, bayes_error=0.1, seed=1))
    assert data.truth.bayes_error == pytest.approx(0.1)

    norm = np.linalg.norm(data.truth.beta)
    assert data.truth.noise_scale == pytest.approx(norm * math.tan(0.1 * math.pi))

    # the noiseless rule disagrees with the labels at the Bayes rate
    rule = np.where(data.table.design() @ data.truth.beta >= 0, 1.0, -1.0)
    assert np.mean(rule != data.table.labels) == pytest.approx(0.1, abs=0.01)


def test_generate_planted_groups():
    data = generate(SynthSpec(n=50, q=20, c=2, n_signals=6, magnitudes=(2.0, 0.75), seed=3))
    beta = data.truth.beta
    assert beta.shape == (22,)
    assert np.count_nonzero(beta) == 6
    assert sorted(np.abs(beta[data.truth.signals]).tolist()) == [0.75] * 3 + [2.0] * 3
    assert data.table.c == 2
    assert data.table.q == 20
    assert set(data.table.labels) == {1.0, -1.0}


def test_generate_is_deterministic():
    a = generate(SynthSpec(n=30, q=5, n_signals=2, seed=9))
    b = generate(SynthSpec(n=30, q=5, n_signals=2, seed=9))
    assert np.array_equal(a.table.design(), b.table.design())
    assert np.array_equal(a.table.labels, b.table.labels)


def test_split_is_stratified():
    data = generate(SynthSpec(n=40, q=5, n_signals=2, seed=9))
    train, test = data.split(0.25, seed=1)
    assert train.n == 30
    assert test.n == 10
    assert not set(train.subject_ids) & set(test.subject_ids)
    assert set(test.labels) == {1.0, -1.0}


def test_logistic_mechanism():
    data = generate(SynthSpec(n=200, q=5, n_signals=2, mechanism="logistic", noise_scale=0.5, seed=2))
    assert data.truth.bayes_error == pytest.approx(logistic_bayes_error(np.linalg.norm(data.truth.beta), 0.5))


def test_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(q=3, n_signals=5)
    with pytest.raises(ValidationError):
        SynthSpec(bayes_error=0.6)
    with pytest.raises(ValidationError):
        SynthSpec(mechanism="probit")
    with pytest.raises(ValidationError):
        SynthSpec(mechanism="logistic", bayes_error=0.1)


def test_cosine_basis():
    basis = cosine_basis(3, 20)
    assert np.allclose(basis @ basis.T, np.eye(3), atol=1e-12)
    assert np.allclose(basis.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(ValidationError):
        cosine_basis(5, 5)


def test_generate_dynamic():
    data = generate_dynamic(SynthSpec(n=30, q=4, c=1, n_signals=2, seed=4), r=2, length=15)
    assert data.features.r == 2
    assert data.series.shape == (30, 4, 15)
    assert data.covariates.shape == (30, 1)
    assert data.truth.eta.tolist() == [1.0, 0.5]
    # projecting the series on the basis recovers the feature tables
    recovered = data.series @ data.basis.T
    assert np.allclose(recovered[:, :, 0], data.features.tables[0], atol=0.05)
    with pytest.raises(ValidationError):
        generate_dynamic(SynthSpec(n=30, q=4, n_signals=2, seed=4), r=2, length=15, eta=[1.0])


def test_class_precisions_are_positive_definite():
    negative, positive, edges = class_precisions(8, 3, 0.45, RandomStream(0))
    assert len(edges) == 3
    for omega in (negative, positive):
        assert np.linalg.eigvalsh(omega)[0] > 0
    for k, l in edges:  # noqa: E741
        assert negative[k, l] == 0.0
        assert positive[k, l] == 0.45


def test_generate_scans():
    scans, truth = generate_scans(6, 5, 40, seed=1, n_covariates=2)
    assert [s.label for s in scans] == [1, -1, 1, -1, 1, -1]
    assert scans[0].series.shape == (40, 5)
    assert scans[0].covariates.shape == (2,)
    assert len(truth.class_edges) == 3

    again, _ = generate_scans(6, 5, 40, seed=1, n_covariates=2)
    assert np.array_equal(scans[3].series, again[3].series)


def test_scans_follow_their_class_precision():
    scans, truth = generate_scans(2, 4, 20000, seed=2, n_class_edges=1, strength=0.45)
    expected = np.linalg.inv(truth.precisions[1])
    d = np.sqrt(np.diag(expected))
    assert np.allclose(pearson_correlation(scans[0].series), expected / np.outer(d, d), atol=0.03)


def test_recovery_report_thresholds():
    runs = [
        RecoveryRun(seed=s, mc=0.08, bayes_error=0.05, recovered=9, false_positives=1, n_signals=10)
        for s in (0, 1)
    ]
    report = RecoveryReport(prior_mode="dp", runs=runs)
    assert report.mean_excess_mc == pytest.approx(0.03)
    assert report.passed()
    assert not report.passed(excess=0.02)
    assert not report.passed(min_recovered=10)
    assert report.to_dict()["runs"][1]["seed"] == 1


def test_recovery_study_needs_seeds(quick_hyper):
    with pytest.raises(ValidationError):
        recovery_study(SynthSpec(n=40, q=4, n_signals=1), quick_hyper, [])


def test_recovery_small_problem():
    spec = SynthSpec(n=160, q=12, n_signals=4, magnitudes=(2.0, 1.0), bayes_error=0.05)
    hyper = Hyperparameters(n_iter=1000, burn_in=500, thin=2, n_chains=2, log_every=0)
    report = recovery_study(spec, hyper, seeds=[1, 2, 3])
    assert len(report.runs) == 3
    assert all(run.n_signals == 4 for run in report.runs)
    assert report.mean_mc <= 0.2
    # the magnitude-2 pair carries most of the signal
    assert report.mean_recovered >= 2
    assert report.mean_false_positives <= 1


@pytest.mark.slow
def test_recovery_full_size():
    spec = SynthSpec(n=200, q=100, n_signals=10, bayes_error=0.05)
    seeds = list(range(10))
    reports = {
        mode: recovery_study(spec, Hyperparameters(prior_mode=mode, log_every=0), seeds)
        for mode in PRIOR_MODES
    }
    dp = reports["dp"]
    assert dp.passed(excess=0.05, min_recovered=8, max_false=2), dp.to_dict()
    assert dp.mean_mc <= reports["global"].mean_mc
    assert dp.mean_mc <= reports["independent"].mean_mc
