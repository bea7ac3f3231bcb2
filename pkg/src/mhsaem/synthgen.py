"""Synthetic Gaussian mixtures with a prescribed maximum pairwise overlap.

Overlap between components k and l is the total misclassification
probability of the Bayes rule restricted to the pair:

    omega_kl = P_{x~k}[pi_l p_l(x) > pi_k p_k(x)] + P_{x~l}[pi_k p_k(x) > pi_l p_l(x)]

estimated by Monte Carlo.  A single global covariance scale is bisected
until the largest pairwise overlap hits the requested value.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import special_ortho_group

from .errors import GenerationError, ValidationError
from .families import GaussianFamily, GaussianParams
from .model import MixtureParams

LOG_2PI = math.log(2.0 * math.pi)
EIG_RANGE = (0.5, 2.0)
DIRICHLET_ALPHA = 5.0
MAX_BISECTION_STEPS = 60


@dataclass(frozen=True)
class GenSpec:
    D: int
    K: int
    N: int
    omega: float
    seed: int = 0
    mc_samples: int = 10_000
    tolerance: float = 0.1

    def __post_init__(self):
        if min(self.D, self.K, self.N) < 1:
            raise ValidationError("D, K and N must be positive")
        if not 0.0 < self.omega < 1.0:
            raise ValidationError("omega must lie in (0, 1)")
        if self.mc_samples < 1:
            raise ValidationError("mc_samples must be positive")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")

    def as_dict(self):
        return asdict(self)


def _gaussian_blocks(theta):
    fam = theta.family
    if not isinstance(fam, GaussianFamily):
        raise ValidationError("overlap is defined for Gaussian mixtures only")
    return [fam.unpack(theta.components[k]) for k in range(theta.K)]


def _logpdf(x, mean, L, log_w):
    v = solve_triangular(L, (x - mean).T, lower=True, check_finite=False)
    return log_w - 0.5 * np.sum(v * v, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * mean.size * LOG_2PI


def _misclass(z, src, dst, log_w_src, log_w_dst, scale=1.0):
    """Fraction of draws from ``src`` (whitened draws ``z``) that the pair
    rule assigns to ``dst``; covariances are multiplied by ``scale``."""
    m_s, L_s = src
    m_d, L_d = dst
    root = math.sqrt(scale)
    x = m_s + root * (z @ L_s.T)
    own = _logpdf(x, m_s, root * L_s, log_w_src)
    other = _logpdf(x, m_d, root * L_d, log_w_dst)
    return float(np.mean(other > own))


def _check_pair(theta, k, l):
    K = theta.K
    if not (1 <= k <= K and 1 <= l <= K):
        raise IndexError(f"component indices must lie in 1..{K}")
    if k == l:
        raise ValidationError("overlap needs two distinct components")
    if (theta.nu[k - 1] == theta.nu[l - 1]
            and np.array_equal(theta.components[k - 1], theta.components[l - 1])):
        raise ValidationError("components are bit-identical; overlap is a tie everywhere")


def pairwise_overlap(theta, k, l, mc_samples, rng):
    """Monte-Carlo overlap of components ``k`` and ``l`` (1-based).

    ``rng`` is a numpy Generator.  Returns ``(estimate, standard_error)``.
    """
    _check_pair(theta, k, l)
    blocks = _gaussian_blocks(theta)
    lw = theta.log_weights
    D = theta.dim
    a, b = k - 1, l - 1
    p1 = _misclass(rng.standard_normal((mc_samples, D)), blocks[a], blocks[b], lw[a], lw[b])
    p2 = _misclass(rng.standard_normal((mc_samples, D)), blocks[b], blocks[a], lw[b], lw[a])
    se = math.sqrt((p1 * (1 - p1) + p2 * (1 - p2)) / mc_samples)
    return p1 + p2, se


def max_overlap(theta, mc_samples, rng):
    """Largest pairwise overlap over all pairs; ``(value, (k, l))``."""
    best, arg = 0.0, None
    for k in range(1, theta.K):
        for l in range(k + 1, theta.K + 1):
            w, _ = pairwise_overlap(theta, k, l, mc_samples, rng)
            if w > best or arg is None:
                best, arg = w, (k, l)
    return best, arg


def _random_covariances(gen, K, D):
    lo, hi = np.log(EIG_RANGE[0]), np.log(EIG_RANGE[1])
    covs = np.empty((K, D, D))
    for k in range(K):
        lam = np.exp(gen.uniform(lo, hi, D))
        Q = special_ortho_group.rvs(D, random_state=gen) if D > 1 else np.ones((1, 1))
        covs[k] = (Q * lam) @ Q.T
    return 0.5 * (covs + covs.transpose(0, 2, 1))


def _bhattacharyya(means, covs):
    K = means.shape[0]
    d = np.full((K, K), np.inf)
    logdets = np.linalg.slogdet(covs)[1]
    for k in range(K):
        for l in range(k + 1, K):
            S = 0.5 * (covs[k] + covs[l])
            diff = means[k] - means[l]
            d[k, l] = (0.125 * diff @ np.linalg.solve(S, diff)
                       + 0.5 * (np.linalg.slogdet(S)[1] - 0.5 * (logdets[k] + logdets[l])))
    return d


class _OverlapOracle:
    """Max overlap as a function of the global covariance scale.

    Whitened draws are fixed once (common random numbers), which makes the
    estimate a deterministic, near-monotone function of the scale.  Only
    the ``n_pairs`` closest pairs by Bhattacharyya distance are scored.
    """

    def __init__(self, means, covs, weights, mc_samples, gen, n_pairs):
        self.means = means
        self.chols = np.linalg.cholesky(covs)
        self.log_w = np.log(weights)
        K, D = means.shape
        d = _bhattacharyya(means, covs)
        order = np.argsort(d, axis=None, kind="stable")[:n_pairs]
        self.pairs = [divmod(int(o), K) for o in order if np.isfinite(d.flat[o])]
        self.z = gen.standard_normal((K, mc_samples, D))

    def __call__(self, scale):
        best = 0.0
        for k, l in self.pairs:
            bk = (self.means[k], self.chols[k])
            bl = (self.means[l], self.chols[l])
            w = (_misclass(self.z[k], bk, bl, self.log_w[k], self.log_w[l], scale)
                 + _misclass(self.z[l], bl, bk, self.log_w[l], self.log_w[k], scale))
            best = max(best, w)
        return best


def _build_theta(weights, means, covs, D):
    fam = GaussianFamily(D)
    comps = np.stack([fam.pack(GaussianParams(means[k], np.linalg.cholesky(covs[k])))
                      for k in range(means.shape[0])])
    return MixtureParams.from_weights(weights, comps, "gaussian", D)


def _find_scale(oracle, omega, tol):
    """Bisection on log(scale) for oracle(scale) ~= omega."""
    lo = hi = 1.0
    f = oracle(1.0)
    steps = 0
    seen = [f]
    if f < omega:
        while f < omega:
            lo, hi = hi, hi * 4.0
            f = oracle(hi)
            seen.append(f)
            steps += 1
            if steps >= MAX_BISECTION_STEPS:
                raise GenerationError(
                    f"cannot reach omega={omega}: overlap stayed in [{min(seen):.4g}, {max(seen):.4g}]")
    else:
        while f > omega:
            hi, lo = lo, lo / 4.0
            f = oracle(lo)
            seen.append(f)
            steps += 1
            if steps >= MAX_BISECTION_STEPS:
                raise GenerationError(
                    f"cannot reach omega={omega}: overlap stayed in [{min(seen):.4g}, {max(seen):.4g}]")
    while steps < MAX_BISECTION_STEPS:
        mid = math.sqrt(lo * hi)
        f = oracle(mid)
        seen.append(f)
        steps += 1
        if abs(f - omega) <= tol * omega:
            return mid, f
        if f < omega:
            lo = mid
        else:
            hi = mid
    raise GenerationError(
        f"bisection did not converge to omega={omega} within {MAX_BISECTION_STEPS} steps; "
        f"achieved range [{min(seen):.4g}, {max(seen):.4g}]")


def generate(spec, rng=None):
    """Draw (theta_true, X, labels, achieved_omega).

    Labels are 1-based.  Everything is a deterministic function of
    ``spec.seed`` unless an explicit numpy Generator is passed.
    """
    gen = np.random.default_rng(spec.seed) if rng is None else rng
    D, K, N = spec.D, spec.K, spec.N
    means = gen.uniform(0.0, 1.0, (K, D))
    covs = _random_covariances(gen, K, D)
    weights = gen.dirichlet(np.full(K, DIRICHLET_ALPHA))
    weights = np.maximum(weights, 1e-12)
    weights /= weights.sum()

    if K == 1:
        scale, achieved = 1.0, 0.0
    else:
        n_pairs = max(2 * K, 50)
        oracle = _OverlapOracle(means, covs, weights, spec.mc_samples, gen, n_pairs)
        # aim well inside the tolerance band so a fresh MC re-estimate lands in it
        scale, achieved = _find_scale(oracle, spec.omega, spec.tolerance / 4)
    covs = covs * scale
    theta = _build_theta(weights, means, covs, D)

    labels = gen.choice(K, size=N, p=weights)
    chols = np.linalg.cholesky(covs)
    eps = gen.standard_normal((N, D))
    X = means[labels] + np.einsum("nij,nj->ni", chols[labels], eps)
    return theta, X, labels + 1, float(achieved)


__all__ = ["GenSpec", "pairwise_overlap", "max_overlap", "generate"]
