import numpy as np
import pytest

from dplsvm.errors import ValidationError
from dplsvm.netestim import (
    StaticNetwork,
    SubjectScan,
    fit_network_at_density,
    fit_networks,
    graphical_lasso,
    kkt_residual,
    lambda_grid,
    network_density,
    pearson_correlation,
    sliding_window,
)
from dplsvm.rngkit import RandomStream


def _corr(x, y):
    return pearson_correlation(np.column_stack([x, y]))[0, 1]


def test_pearson_examples():
    x = [1.0, 2.0, 3.0]
    assert _corr(x, [2.0, 4.0, 6.0]) == pytest.approx(1.0)
    assert _corr(x, [6.0, 4.0, 2.0]) == pytest.approx(-1.0)
    assert _corr(x, [1.0, 3.0, 2.0]) == pytest.approx(0.5)


def test_pearson_is_affine_invariant():
    series = RandomStream(1, 0).normal(size=(30, 4))
    scaled = series * np.array([2.0, 0.5, 3.0, 1.0]) + np.array([1.0, -4.0, 0.0, 7.0])
    S = pearson_correlation(series)
    assert np.allclose(S, pearson_correlation(scaled), atol=1e-12)
    assert np.array_equal(S, S.T)
    assert np.all(np.diag(S) == 1.0)


def test_pearson_constant_region():
    series = np.column_stack([np.arange(5.0), np.ones(5)])
    with pytest.raises(ValidationError):
        pearson_correlation(series)


def test_scan_validation():
    with pytest.raises(ValidationError):
        SubjectScan(id="a", series=np.column_stack([np.arange(5.0), np.ones(5)]))
    with pytest.raises(ValidationError):
        SubjectScan(id="b", series=np.arange(5.0).reshape(5, 1))
    with pytest.raises(ValidationError):
        SubjectScan(id="c", series=RandomStream(0).normal(size=(5, 3)), label=0)


def test_glasso_identity():
    net = graphical_lasso(np.eye(4), 0.0)
    assert np.allclose(net.precision, np.eye(4))
    assert net.density == 0.0


def test_glasso_large_penalty_is_empty():
    S = np.array([[1.0, 0.6], [0.6, 1.0]])
    net = graphical_lasso(S, 10.0)
    assert net.precision[0, 1] == 0.0
    assert net.density == 0.0


def test_glasso_two_by_two():
    # the optimum has W_12 = S_12 - penalty, so Omega = inv([[1, 0.5], [0.5, 1]])
    S = np.array([[1.0, 0.6], [0.6, 1.0]])
    net = graphical_lasso(S, 0.1, tol=1e-10)
    expected = np.array([[4.0, -2.0], [-2.0, 4.0]]) / 3.0
    assert np.allclose(net.precision, expected, atol=1e-6)

    def objective(omega):
        return np.linalg.slogdet(omega)[1] - np.trace(S @ omega) - 0.2 * abs(omega[0, 1])

    best = objective(net.precision)
    for d in np.linspace(1.2, 1.5, 7):
        for o in np.linspace(-0.8, -0.5, 7):
            omega = np.array([[d, o], [o, d]])
            assert objective(omega) <= best + 1e-9


def test_glasso_kkt_along_grid():
    series = RandomStream(2, 0).normal(size=(50, 8))
    S = pearson_correlation(series)
    densities = []
    for lam in lambda_grid(S, 8):
        net = graphical_lasso(S, lam, tol=1e-8, max_iter=2000)
        assert kkt_residual(S, net.precision, lam) <= 1e-6
        assert np.array_equal(net.precision, net.precision.T)
        assert np.all(np.linalg.eigvalsh(net.precision) > 0)
        densities.append(net.density)
    assert densities[0] > densities[-1]
    assert densities[-1] == 0.0


def test_glasso_rejects_bad_input():
    with pytest.raises(ValidationError):
        graphical_lasso(np.array([[1.0, 0.2], [0.3, 1.0]]), 0.1)
    with pytest.raises(ValidationError):
        graphical_lasso(np.eye(3), -0.1)


def test_network_density():
    omega = np.eye(4)
    omega[0, 1] = omega[1, 0] = 0.3
    assert network_density(omega) == pytest.approx(2 / 12)
    omega[2, 3] = omega[3, 2] = 1e-9
    assert network_density(omega) == pytest.approx(2 / 12)


def _ar_scan(seed=3, t=80, v=6):
    stream = RandomStream(seed, 0)
    series = np.zeros((t, v))
    series[0] = stream.normal(size=v)
    for i in range(1, t):
        series[i] = 0.5 * np.roll(series[i - 1], 1) + stream.normal(size=v)
    return SubjectScan(id="s0", series=series)


def test_fit_at_density_picks_closest():
    scan = _ar_scan()
    S = pearson_correlation(scan.series)
    grid = lambda_grid(S, 10)
    net = fit_network_at_density(scan, 0.2, lambda_values=grid)
    gaps = [abs(graphical_lasso(S, lam).density - 0.2) for lam in grid]
    assert abs(net.density - 0.2) == pytest.approx(min(gaps))


def test_fit_at_density_ties_go_to_larger_penalty():
    scan = _ar_scan()
    S = pearson_correlation(scan.series)
    top = np.max(np.abs(S - np.eye(S.shape[0])))
    net = fit_network_at_density(scan, 0.5, lambda_values=[2.0 * top, 3.0 * top])
    assert net.penalty == 3.0 * top
    assert net.density == 0.0


def _two_pair_scan():
    # centred orthonormal columns give corr 0.8 within (0, 1), 0.4 within (2, 3), 0 across
    stream = RandomStream(4, 0)
    raw = stream.normal(size=(8, 4))
    raw -= raw.mean(axis=0)
    e, _ = np.linalg.qr(raw)
    series = np.column_stack(
        [e[:, 0], 0.8 * e[:, 0] + 0.6 * e[:, 1], e[:, 2], 0.4 * e[:, 2] + np.sqrt(0.84) * e[:, 3]]
    )
    return SubjectScan(id="s0", series=series)


def test_selected_penalty_falls_as_target_density_rises():
    scan = _two_pair_scan()
    grid = [0.2, 0.6, 1.0]
    densities = [graphical_lasso(pearson_correlation(scan.series), lam).density for lam in grid]
    assert densities == pytest.approx([2 / 6, 1 / 6, 0.0])

    targets = [0.01, 0.1, 0.15, 0.2, 0.3, 0.6, 1.0]
    penalties = [fit_network_at_density(scan, t, lambda_values=grid).penalty for t in targets]
    assert penalties == sorted(penalties, reverse=True)
    assert penalties[0] == 1.0
    assert penalties[-1] == 0.2


def test_fit_at_density_bad_grid():
    scan = _ar_scan()
    with pytest.raises(ValidationError):
        fit_network_at_density(scan, 0.2, lambda_values=[])
    with pytest.raises(ValidationError):
        fit_network_at_density(scan, 0.2, lambda_values=[0.3, 0.2])
    with pytest.raises(ValidationError):
        fit_network_at_density(scan, 0.0)


def test_fit_networks_threads_keep_order():
    scans = [_ar_scan(seed=s) for s in range(4)]
    one = fit_networks(scans, 0.2, n_lambda=6)
    two = fit_networks(scans, 0.2, n_lambda=6, threads=2)
    assert all(np.array_equal(a.precision, b.precision) for a, b in zip(one, two))


def test_partial_correlations():
    omega = np.array([[2.0, -1.0], [-1.0, 2.0]])
    pc = StaticNetwork(precision=omega, penalty=0.1, density=1.0).partial_correlations()
    assert np.allclose(pc, [[1.0, 0.5], [0.5, 1.0]])


def test_sliding_window_counts():
    series = RandomStream(4, 0).normal(size=(5, 3))
    assert len(sliding_window(series, 5).windows) == 1
    assert np.allclose(sliding_window(series, 5).windows[0], pearson_correlation(series))
    assert len(sliding_window(series, 4).windows) == 2

    with pytest.raises(ValidationError):
        sliding_window(series, 6)
    with pytest.raises(ValidationError):
        sliding_window(series, 1)


def test_sliding_window_matches_direct_correlation():
    t = np.arange(200)
    series = np.column_stack([np.sin(t / 7.0), np.cos(t / 11.0), np.sin(t / 3.0 + 1.0)])
    dyn = sliding_window(series, 50)
    assert len(dyn.windows) == 151
    for start in (0, 75, 150):
        direct = np.corrcoef(series[start : start + 50].T)
        assert np.allclose(dyn.windows[start], direct, atol=1e-12)

    edges = dyn.edge_series()
    assert edges.shape == (3, 151)
    assert edges[0, 10] == dyn.windows[10][0, 1]


def test_sliding_window_constant_chunk():
    series = RandomStream(4, 0).normal(size=(10, 2))
    series[:4, 0] = 1.0
    with pytest.raises(ValidationError):
        sliding_window(series, 3)
