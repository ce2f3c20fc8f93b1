import dataclasses

import numpy as np
import pytest

from dplsvm.errors import ValidationError
from dplsvm.rngkit import RandomStream
from dplsvm.svm_static import (
    Hyperparameters,
    PosteriorDraws,
    SVMData,
    atom_conditional,
    beta_conditional,
    draw_dp_prior,
    fit_static,
    hinge_pseudo_loglik,
    initial_state,
    predict,
    rho_conditional,
    sigma_beta_conditional,
    sigma_eps_conditional,
    step_dp,
    step_lambda_global,
    step_lambda_independent,
    step_rho,
    stick_weights,
    sweep,
)
from dplsvm.synthgen import SynthSpec, generate


def _hyper(**kw):
    return Hyperparameters(**dict(dict(n_iter=1, burn_in=0), **kw))


def test_hinge_examples():
    one = np.array([[1.0]])
    assert hinge_pseudo_loglik([1.0], one, [2.0], 1.0) == 0.0
    assert hinge_pseudo_loglik([1.0], one, [0.5], 1.0) == pytest.approx(-1.0)
    assert hinge_pseudo_loglik([-1.0], one, [-2.0], 1.0) == 0.0


def test_hinge_label_flip():
    stream = RandomStream(0)
    U = stream.normal(size=(6, 3))
    z = np.tile([1.0, -1.0], 3)
    beta = stream.normal(size=3)
    assert hinge_pseudo_loglik(z, U, beta, 0.7) == pytest.approx(hinge_pseudo_loglik(-z, U, -beta, 0.7))


def test_hinge_rejects_bad_scale():
    with pytest.raises(ValidationError):
        hinge_pseudo_loglik([1.0], np.ones((1, 1)), [1.0], 0.0)
    with pytest.raises(ValidationError):
        hinge_pseudo_loglik([1.0, -1.0], np.ones((1, 1)), [1.0], 1.0)


def test_sigma_eps_conditional():
    hyper = _hyper(a1=2.0, b1=1.0)
    data = SVMData(np.array([[1.0]]), np.array([1.0]))
    state = initial_state(1, 1, hyper)
    state.beta = np.array([1.0])
    shape, scale = sigma_eps_conditional(state, data, hyper)
    assert shape == 3.5
    assert scale == 1.5


def test_sigma_eps_conditional_without_data():
    hyper = _hyper(a1=2.0, b1=1.0)
    data = SVMData(np.zeros((0, 2)), np.zeros(0))
    assert sigma_eps_conditional(initial_state(2, 0, hyper), data, hyper) == (2.0, 1.0)


def test_rho_conditional():
    hyper = _hyper()
    data = SVMData(np.array([[1.0]]), np.array([1.0]))
    state = initial_state(1, 1, hyper)
    state.beta = np.array([0.5])
    mean, shape = rho_conditional(state, data, hyper)
    assert mean[0] == pytest.approx(2.0)
    assert shape[0] == pytest.approx(1.0)

    state.beta = np.array([1.0])
    assert rho_conditional(state, data, hyper)[0][0] == pytest.approx(1e8)


def test_step_rho_moments():
    hyper = _hyper()
    data = SVMData(np.ones((20000, 1)), np.ones(20000))
    state = initial_state(1, 20000, hyper)
    state.beta = np.array([0.5])
    inv_rho = 1.0 / step_rho(state, data, hyper, RandomStream(9))
    # 1 / rho is inverse Gaussian with mean 2, variance 8
    assert abs(inv_rho.mean() - 2.0) < 0.1
    assert np.all(inv_rho > 0)


def test_beta_conditional():
    hyper = _hyper()
    state = initial_state(1, 0, hyper)
    state.sigma_beta2 = np.array([4.0])
    h, A = beta_conditional(state, SVMData(np.zeros((0, 1)), np.zeros(0)))
    assert A.tolist() == [[0.25]]
    assert h.tolist() == [0.0]

    state = initial_state(1, 1, hyper)
    state.sigma_beta2 = np.array([1e12])
    h, A = beta_conditional(state, SVMData(np.array([[1.0]]), np.array([1.0])))
    assert A[0, 0] == pytest.approx(1.0)
    assert h[0] == pytest.approx(2.0)


def test_sigma_beta_conditional():
    state = initial_state(3, 0, _hyper())
    state.beta = np.array([1.0, 0.5, 0.0])
    state.lambda_ = np.array([1.0, 2.0, 3.0])
    mean, shape = sigma_beta_conditional(state)
    assert mean.tolist() == pytest.approx([1.0, 4.0, 3e10])
    assert shape.tolist() == pytest.approx([1.0, 4.0, 9.0])


def test_atom_conditional_single_cluster():
    shape, rate = atom_conditional(np.zeros(2, dtype=int), np.array([0.5, -0.5]), 1, _hyper())
    assert shape.tolist() == [3.0]
    assert rate.tolist() == [2.0]


def test_atom_conditional_empty_component_is_base_measure():
    hyper = _hyper(r=2.0, delta=0.5)
    shape, rate = atom_conditional(np.array([0, 0, 2]), np.array([1.0, 2.0, 3.0]), 4, hyper)
    assert shape.tolist() == [4.0, 2.0, 3.0, 2.0]
    assert rate.tolist() == [3.5, 0.5, 3.5, 0.5]


def test_stick_weights():
    pi = stick_weights(np.array([0.5, 0.5, 0.5]))
    assert pi.tolist() == [0.5, 0.25, 0.125]


def test_step_lambda_independent():
    hyper = _hyper(prior_mode="independent", a_lambda=1.0, b_lambda=1.0)
    state = initial_state(5000, 0, hyper)
    state.beta = np.ones(5000)
    lam = step_lambda_independent(state, hyper, RandomStream(2))
    # Gamma(2, 2)
    assert abs(lam.mean() - 1.0) < 0.04
    with pytest.raises(ValidationError):
        step_lambda_independent(state, _hyper(), RandomStream(2))


def test_step_lambda_global():
    hyper = _hyper(prior_mode="global")
    state = initial_state(4, 0, hyper)
    state.beta = np.array([0.5, -1.0, 0.0, 2.0])
    lam = step_lambda_global(state, hyper, RandomStream(3))
    assert len(set(lam.tolist())) == 1
    with pytest.raises(ValidationError):
        step_lambda_global(state, _hyper(), RandomStream(3))


def test_step_dp_needs_dp_mode():
    hyper = _hyper(prior_mode="global")
    with pytest.raises(ValidationError):
        step_dp(initial_state(3, 0, hyper), hyper, RandomStream(0))


def test_step_dp_keeps_atoms_consistent():
    hyper = _hyper(M=3.0)
    state = initial_state(30, 0, hyper)
    state.beta = RandomStream(5).normal(size=30)
    stream = RandomStream(6)
    for _ in range(50):
        H, atoms, nu, slice_u, lam = step_dp(state, hyper, stream)
        assert np.array_equal(lam, atoms[H])
        assert len(atoms) == len(nu) == H.max() + 1
        assert np.all(slice_u < stick_weights(nu)[H])
        state.H, state.lambda_star, state.nu, state.lambda_ = H, atoms, nu, lam


def test_tiny_concentration_gives_one_cluster():
    hyper = _hyper(M=1e-6)
    data = SVMData(np.zeros((0, 20)), np.zeros(0))
    state = initial_state(20, 0, hyper)
    stream = RandomStream(7)
    single = 0
    for _ in range(500):
        sweep(state, data, hyper, stream)
        single += state.n_clusters == 1
    assert single / 500 >= 0.99


def test_draw_dp_prior():
    stream = RandomStream(8)
    for mode in ("dp", "global", "independent"):
        state = draw_dp_prior(10, _hyper(prior_mode=mode), stream)
        assert np.array_equal(state.lambda_, state.lambda_star[state.H])
        assert np.all(state.sigma_beta2 > 0)
        assert state.beta.shape == (10,)
    assert draw_dp_prior(10, _hyper(prior_mode="global"), stream).n_clusters == 1
    assert draw_dp_prior(10, _hyper(prior_mode="independent"), stream).n_clusters == 10


def test_hyperparameters_validation():
    with pytest.raises(ValidationError):
        Hyperparameters(M=0.0)
    with pytest.raises(ValidationError):
        Hyperparameters(prior_mode="lasso")
    with pytest.raises(ValidationError):
        Hyperparameters(n_iter=10, burn_in=10)
    assert Hyperparameters(n_iter=100, burn_in=50, thin=5).n_records == 10


def test_fit_separable(separable_table, quick_hyper):
    draws = fit_static(separable_table, quick_hyper)
    assert draws.coefficients.shape == (2, 100, 1)
    assert draws.iterations.tolist()[:2] == [202, 204]
    assert draws.posterior_mean()[0] > 0
    prediction = predict(draws, separable_table.design())
    assert np.mean(prediction.labels == separable_table.labels) >= 0.95
    assert np.all(draws.n_clusters == 1)
    assert np.all(draws.sigma_eps2 > 0)


def test_fit_label_flip(separable_table, quick_hyper):
    flipped = dataclasses.replace(separable_table, labels=-separable_table.labels)
    assert fit_static(flipped, quick_hyper).posterior_mean()[0] < 0


def test_fit_is_deterministic(quick_hyper):
    table = generate(SynthSpec(n=40, q=5, n_signals=2, seed=3)).table
    a = fit_static(table, quick_hyper)
    b = fit_static(table, quick_hyper)
    c = fit_static(table, dataclasses.replace(quick_hyper, threads=2))
    assert np.array_equal(a.coefficients, b.coefficients)
    assert np.array_equal(a.coefficients, c.coefficients)
    assert np.array_equal(a.n_clusters, c.n_clusters)
    d = fit_static(table, dataclasses.replace(quick_hyper, seed=1))
    assert not np.array_equal(a.coefficients, d.coefficients)


def test_fit_cluster_counts(quick_hyper):
    table = generate(SynthSpec(n=40, q=5, n_signals=2, seed=3)).table
    draws = fit_static(table, dataclasses.replace(quick_hyper, M=1e-8))
    assert draws.mean_cluster_count() <= 1.05

    draws = fit_static(table, dataclasses.replace(quick_hyper, prior_mode="independent"))
    assert np.all(draws.n_clusters == 5)

    draws = fit_static(table, dataclasses.replace(quick_hyper, prior_mode="global"))
    lam = draws.flat("lambda_")
    assert np.all(lam == lam[:, :1])


def test_fit_needs_both_classes(quick_hyper):
    one_class = generate(SynthSpec(n=40, q=3, n_signals=1, seed=3)).table
    one_class = dataclasses.replace(one_class, labels=np.ones(40))
    with pytest.raises(ValidationError):
        fit_static(one_class, quick_hyper)


def _draws(coefficients):
    coefficients = np.asarray(coefficients, dtype=float)
    chains, n, p = coefficients.shape
    return PosteriorDraws(
        model="static",
        coefficients=coefficients,
        sigma_eps2=np.ones((chains, n)),
        n_clusters=np.ones((chains, n), dtype=int),
        lambda_=np.ones((chains, n, p)),
        atoms=[[[1.0]] * n] * chains,
        iterations=np.arange(1, n + 1),
    )


def test_predict_examples():
    draws = _draws([[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]])
    prediction = predict(draws, np.array([[3.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert prediction.scores.tolist() == [3.0, 0.0]
    assert prediction.labels.tolist() == [1.0, 1.0]
    assert prediction.vote_fraction.tolist() == [1.0, 0.0]

    draws = _draws([[[1.0], [-1.0]]])
    prediction = predict(draws, np.array([[1.0]]))
    assert prediction.scores.tolist() == [0.0]
    assert prediction.vote_fraction.tolist() == [0.5]


def test_predict_dimension_mismatch():
    with pytest.raises(ValidationError):
        predict(_draws([[[1.0, 0.0]]]), np.ones((1, 3)))
