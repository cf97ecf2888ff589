import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from whale_rendezvous.separation import (GroupSeparator, SeparationParams, fit_gmm, gap_cut_shift,
                                         select_model)

D = math.radians


def clusters(rng, centers_deg, sigma_deg, n):
    pts = np.concatenate([rng.normal(D(c), D(sigma_deg), n) for c in centers_deg])
    return np.mod(pts, math.pi)


def mixture_loglik(x, means, sigmas, weights):
    r = np.mod(x[:, None] - means[None, :] + math.pi / 2, math.pi) - math.pi / 2
    dens = weights / (sigmas * math.sqrt(2 * math.pi)) * np.exp(-0.5 * (r / sigmas) ** 2)
    return float(np.log(dens.sum(axis=1)).sum())


def test_single_component_closed_form():
    rng = np.random.default_rng(0)
    x = rng.normal(1.2, 0.05, 200)
    fit = fit_gmm(x, 1, rng=rng)
    assert fit.means[0] == pytest.approx(x.mean(), abs=1e-6)
    assert fit.sigmas[0] == pytest.approx(x.std(), abs=1e-6)
    assert fit.weights[0] == 1.0


def test_two_clusters_recovered():
    rng = np.random.default_rng(1)
    fit = fit_gmm(clusters(rng, [30, 120], 2, 100), 2, rng=rng)
    assert np.degrees(fit.means) == pytest.approx([30, 120], abs=1.0)
    assert fit.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_identical_points_hit_sigma_floor():
    p = SeparationParams()
    fit = fit_gmm(np.full(20, 0.8), 1, p, np.random.default_rng(0))
    assert fit.sigmas[0] == p.sigma_floor


def test_single_tight_cluster_selects_one_by_bic():
    rng = np.random.default_rng(2)
    x = clusters(rng, [70], 1, 60)
    p = SeparationParams(k=4)
    fit = select_model(x, p, np.random.default_rng(5))
    bics = [fit_gmm(x, n, p, np.random.default_rng(n)).bic for n in range(1, 5)]
    assert fit.n == 1
    assert fit.bic == pytest.approx(min(bics), rel=1e-6)


def test_three_clusters_selected():
    rng = np.random.default_rng(3)
    fit = select_model(clusters(rng, [20, 90, 160], 3, 100), SeparationParams(k=5), rng)
    assert fit.n == 3
    assert np.degrees(fit.means) == pytest.approx([20, 90, 160], abs=1.5)


def test_k_one_caps():
    rng = np.random.default_rng(4)
    assert select_model(clusters(rng, [20, 90, 160], 3, 50), SeparationParams(k=1), rng).n == 1


def test_cluster_across_fold_boundary():
    # a cluster straddling 0 == pi stays one cluster after the gap cut
    rng = np.random.default_rng(5)
    x = np.mod(rng.normal(0.0, D(3), 100), math.pi)
    fit = select_model(x, SeparationParams(k=3), rng)
    assert fit.n == 1
    assert min(fit.means[0], math.pi - fit.means[0]) < D(1)
    assert 0 <= gap_cut_shift(x) < math.pi


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 40))
def test_never_exceeds_k_and_em_monotone(seed, k, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, math.pi, n)
    fit = select_model(x, SeparationParams(k=k), rng)
    assert 1 <= fit.n <= min(k, n)
    assert np.all(fit.sigmas > 0)
    h = np.array(fit.loglik_history)
    assert np.all(np.diff(h) >= -1e-7 * np.maximum(1.0, np.abs(h[1:])))


def test_label_permutation_invariance():
    rng = np.random.default_rng(6)
    x = clusters(rng, [40, 110], 4, 80)
    fit = fit_gmm(x, 2, rng=rng)
    ll = mixture_loglik(x, fit.means, fit.sigmas, fit.weights)
    perm = [1, 0]
    assert mixture_loglik(x, fit.means[perm], fit.sigmas[perm], fit.weights[perm]) == pytest.approx(ll)
    assert ll == pytest.approx(fit.loglik, rel=1e-6)


def test_recovery_rate_well_separated():
    hits = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        sigma = rng.uniform(1.0, 4.0)
        c0 = rng.uniform(0, 180)
        centers = [c0, c0 + 6 * sigma + 50, c0 + 12 * sigma + 100]
        x = clusters(rng, centers, sigma, 50)
        hits += select_model(x, SeparationParams(k=5), rng).n == 3
    assert hits >= 190


def test_errors():
    with pytest.raises(ValueError, match="underdetermined"):
        fit_gmm([0.1, 0.2], 3)
    with pytest.raises(ValueError, match="empty batch"):
        select_model([])
    with pytest.raises(ValueError):
        SeparationParams(k=0)


def test_deterministic_given_seed():
    x = clusters(np.random.default_rng(8), [30, 100], 5, 30)
    a = select_model(x, rng=np.random.default_rng(9))
    b = select_model(x, rng=np.random.default_rng(9))
    assert a.n == b.n and np.array_equal(a.means, b.means)


def test_group_separator_estimator():
    x = clusters(np.random.default_rng(10), [30, 120], 2, 60)
    est = GroupSeparator(k=4, random_state=0).fit(x.reshape(-1, 1))
    assert est.n_components_ == 2
    labels = est.predict(x)
    assert np.array_equal(labels, est.labels_)
    assert len(set(labels[:60])) == 1 and labels[0] != labels[-1]
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    with pytest.raises(ValueError):
        est.predict([4.0])
