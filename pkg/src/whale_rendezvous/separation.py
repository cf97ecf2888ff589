"""Group separation of folded AOAs by 1-D Gaussian mixtures and BIC.

Folded AOAs live on [0, pi) treated as a circle. Before fitting, points are
rotated so the widest empty arc sits at the cut; plain EM then runs on the
line and fitted means are rotated back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from .rng import as_generator, spawn

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SeparationParams:
    k: int = 3
    em_max_iters: int = 200
    em_tol: float = 1e-6
    restarts: int = 5
    sigma_floor: float = math.radians(0.2)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.restarts < 1 or self.em_max_iters < 1:
            raise ValueError("restarts and em_max_iters must be >= 1")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")


@dataclass
class GMMFit:
    n: int
    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray
    loglik: float
    assignments: np.ndarray
    n_points: int = 0
    loglik_history: list = field(default_factory=list, repr=False)

    @property
    def n_params(self) -> int:
        return 3 * self.n - 1

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_points) - 2.0 * self.loglik

    def clusters(self):
        """``(mean, sigma)`` pairs, one per component."""
        return [(float(m), float(s)) for m, s in zip(self.means, self.sigmas)]


def gap_cut_shift(points: np.ndarray, period: float = math.pi) -> float:
    """Offset that moves the widest empty arc of ``points`` onto the cut at 0."""
    p = np.sort(np.mod(points, period))
    if p.size == 1:
        return float(p[0] - period / 2.0)
    gaps = np.diff(np.append(p, p[0] + period))
    i = int(np.argmax(gaps))
    return float(p[i] + gaps[i] / 2.0)


def _log_component_density(x, means, sigmas, weights):
    # x: (N,), params: (R, n) -> (R, n, N)
    z = (x[None, None, :] - means[..., None]) / sigmas[..., None]
    return (np.log(weights)[..., None] - np.log(sigmas)[..., None]
            - 0.5 * _LOG_2PI - 0.5 * z * z)


@njit(cache=True)
def _kmeanspp_init(x, n, u):
    """k-means++ seeding driven by ``n`` pre-drawn uniforms ``u``."""
    N = x.size
    centers = np.empty(n)
    centers[0] = x[min(int(u[0] * N), N - 1)]
    d2 = np.empty(N)
    for c in range(1, n):
        total = 0.0
        for i in range(N):
            best = np.inf
            for j in range(c):
                d = x[i] - centers[j]
                if d * d < best:
                    best = d * d
            d2[i] = best
            total += best
        if total <= 0.0:
            centers[c] = x[min(int(u[c] * N), N - 1)]
            continue
        target = u[c] * total
        acc = 0.0
        pick = N - 1
        for i in range(N):
            acc += d2[i]
            if acc > target:
                pick = i
                break
        centers[c] = x[pick]
    return np.sort(centers)


@njit(cache=True)
def _em_kernel(x, means, sigmas, weights, max_iters, tol, floor):
    """EM for one initialisation of a 1-D mixture. Updates params in place."""
    N = x.size
    n = means.size
    resp = np.empty((n, N))
    const = np.empty(n)
    inv = np.empty(n)
    history = np.empty(max_iters + 1)
    prev = -np.inf
    it = 0
    while True:
        for j in range(n):
            const[j] = math.log(weights[j]) - math.log(sigmas[j]) - 0.5 * _LOG_2PI
            inv[j] = 1.0 / sigmas[j]
        ll = 0.0
        for i in range(N):
            mx = -np.inf
            for j in range(n):
                z = (x[i] - means[j]) * inv[j]
                v = const[j] - 0.5 * z * z
                resp[j, i] = v
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(n):
                e = math.exp(resp[j, i] - mx)
                resp[j, i] = e
                s += e
            ll += mx + math.log(s)
            for j in range(n):
                resp[j, i] /= s
        history[it] = ll
        it += 1
        if abs(ll - prev) < tol or it > max_iters:
            break
        prev = ll
        for j in range(n):
            nk = 0.0
            sx = 0.0
            for i in range(N):
                nk += resp[j, i]
                sx += resp[j, i] * x[i]
            if nk <= 1e-10:
                continue
            mu = sx / nk
            sv = 0.0
            for i in range(N):
                d = x[i] - mu
                sv += resp[j, i] * d * d
            means[j] = mu
            sigmas[j] = max(math.sqrt(sv / nk), floor)
            weights[j] = max(nk / N, 1e-300)
        total = weights.sum()
        for j in range(n):
            weights[j] /= total
    return ll, history[:it]


@njit(cache=True)
def _em_restarts(x, n, u, max_iters, tol, floor):
    """Best-of-restarts EM; row ``r`` of ``u`` seeds restart ``r``."""
    spread = max(np.std(x), floor)
    best_ll = -np.inf
    best_means = np.empty(n)
    best_sigmas = np.empty(n)
    best_weights = np.empty(n)
    best_hist = np.empty(0)
    for r in range(u.shape[0]):
        means = _kmeanspp_init(x, n, u[r])
        sigmas = np.full(n, max(spread / n, floor))
        weights = np.full(n, 1.0 / n)
        ll, hist = _em_kernel(x, means, sigmas, weights, max_iters, tol, floor)
        if r == 0 or ll > best_ll:
            best_ll = ll
            best_means[:] = means
            best_sigmas[:] = sigmas
            best_weights[:] = weights
            best_hist = hist.copy()
    return best_means, best_sigmas, best_weights, best_ll, best_hist


def _em(x, n, params: SeparationParams, rng):
    """Run EM from ``params.restarts`` k-means++ seedings and keep the best."""
    u = rng.random((params.restarts, n))
    means, sigmas, weights, ll, history = _em_restarts(
        x, n, u, params.em_max_iters, params.em_tol, params.sigma_floor)
    logp = _log_component_density(x, means[None], sigmas[None], weights[None])[0]
    return means, sigmas, weights, float(ll), logp, [float(h) for h in history]


def fit_gmm(points, n: int, params: SeparationParams | None = None, rng=None) -> GMMFit:
    """Fit an ``n``-component mixture to folded AOAs (radians in [0, pi)).

    Raises:
        ValueError: fewer points than components ("underdetermined").
    """
    params = params or SeparationParams()
    rng = as_generator(rng)
    x = np.asarray(points, dtype=float).ravel()
    if n < 1 or x.size < n:
        raise ValueError(f"underdetermined: {x.size} points for {n} components")
    shift = gap_cut_shift(x)
    xr = np.mod(x - shift, math.pi)

    if n == 1:
        mu = float(xr.mean())
        sigma = max(float(xr.std()), params.sigma_floor)
        means, sigmas, weights = np.array([mu]), np.array([sigma]), np.array([1.0])
        logp = _log_component_density(xr, means[None], sigmas[None], weights[None])[0]
        ll = float(logp.sum())
        history = [ll]
    else:
        means, sigmas, weights, ll, logp, history = _em(xr, n, params, rng)

    order = np.argsort(np.mod(means + shift, math.pi))
    assignments = np.argsort(order)[np.argmax(logp, axis=0)]
    return GMMFit(
        n=n,
        means=np.mod(means + shift, math.pi)[order],
        sigmas=sigmas[order],
        weights=weights[order] / weights.sum(),
        loglik=ll,
        assignments=assignments,
        n_points=x.size,
        loglik_history=history,
    )


def select_model(points, params: SeparationParams | None = None, rng=None) -> GMMFit:
    """Fit n = 1..min(k, N) components and keep the minimum-BIC fit.

    Ties go to the smaller model.
    """
    params = params or SeparationParams()
    x = np.asarray(points, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty batch")
    rng = as_generator(rng)
    best = None
    for n, child in zip(range(1, min(params.k, x.size) + 1), spawn(rng, params.k)):
        fit = fit_gmm(x, n, params, child)
        if best is None or fit.bic < best.bic:
            best = fit
    return best


class GroupSeparator(ClusterMixin, BaseEstimator):
    """Cluster folded AOAs into vocalizing groups.

    Parameters mirror :class:`SeparationParams`; ``random_state`` seeds the
    restarts. After ``fit``, ``fit_`` holds the selected :class:`GMMFit`.
    """

    def __init__(self, k=3, em_max_iters=200, em_tol=1e-6, restarts=5,
                 sigma_floor=math.radians(0.2), random_state=None):
        self.k = k
        self.em_max_iters = em_max_iters
        self.em_tol = em_tol
        self.restarts = restarts
        self.sigma_floor = sigma_floor
        self.random_state = random_state

    def _params(self):
        return SeparationParams(self.k, self.em_max_iters, self.em_tol,
                                self.restarts, self.sigma_floor)

    def _validate(self, X):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("expected a single feature of AOAs")
            X = X[:, 0]
        if np.any(X < 0) or np.any(X >= math.pi):
            raise ValueError("AOAs must lie in [0, pi)")
        return X

    def fit(self, X, y=None):
        X = self._validate(X)
        seed = check_random_state(self.random_state).randint(2**31)
        self.fit_ = select_model(X, self._params(), np.random.default_rng(seed))
        self.n_components_ = self.fit_.n
        self.means_ = self.fit_.means
        self.sigmas_ = self.fit_.sigmas
        self.weights_ = self.fit_.weights
        self.labels_ = self.fit_.assignments
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = self._validate(X)
        # residual on the [0, pi) circle to each component mean
        r = np.mod(X[:, None] - self.means_[None, :] + math.pi / 2, math.pi) - math.pi / 2
        logp = np.log(self.weights_) - np.log(self.sigmas_) - 0.5 * (r / self.sigmas_) ** 2
        return np.argmax(logp, axis=1)

    def bic(self, X=None):
        check_is_fitted(self, "fit_")
        return self.fit_.bic
