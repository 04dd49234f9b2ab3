"""Samplers and densities for the symmetric Skellam and discretized Gaussian laws.

All samplers take an explicit ``numpy.random.Generator`` and accept an optional
``size``; with ``size=None`` they return a Python ``int``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import special, stats

from .ring import Modulus

INVERSION_MAX_MEAN = 30.0
TAIL_MASS = 1e-12
UNDERFLOW = 1e-300
# Above this many backward-recurrence steps the scaled Bessel value comes from
# asymptotic expansions instead.
_MAX_RECURRENCE_STEPS = 2_000_000


@dataclass(frozen=True)
class SkellamParams:
    """Symmetric Skellam law ``Sk_mu``: difference of two Poisson(mu/2)."""

    mu: float

    def __post_init__(self) -> None:
        mu = float(self.mu)
        if not (mu > 0 and math.isfinite(mu)):
            raise ValueError(f"Skellam variance must be positive and finite, got {self.mu}")
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class GaussianParams:
    """Discretized Gaussian ``D_nu``: N(0, nu) followed by randomized rounding."""

    nu: float
    modulus: Optional[Modulus] = None

    def __post_init__(self) -> None:
        nu = float(self.nu)
        if not (nu > 0 and math.isfinite(nu)):
            raise ValueError(f"Gaussian variance must be positive and finite, got {self.nu}")
        object.__setattr__(self, "nu", nu)
        if self.modulus is not None and not 0 < self.alpha < 1:
            raise ValueError(f"alpha = sqrt(2*pi*nu)/q = {self.alpha} is outside (0, 1)")

    @property
    def width(self) -> float:
        """Gaussian parameter s with s**2 / (2*pi) = nu."""
        return math.sqrt(2 * math.pi * self.nu)

    @property
    def alpha(self) -> Optional[float]:
        if self.modulus is None:
            return None
        return self.width / self.modulus.q


# -- Poisson -----------------------------------------------------------------

@lru_cache(maxsize=128)
def _poisson_cdf_table(mean: float) -> np.ndarray:
    cdf = []
    p = math.exp(-mean)
    total = 0.0
    k = 0
    while True:
        total += p
        cdf.append(total)
        k += 1
        p *= mean / k
        if k > mean and (p < 1e-17 * total or p == 0.0):
            break
    table = np.array(cdf)
    table.setflags(write=False)
    return table


def _poisson_inversion(mean: float, rng: np.random.Generator, n: int) -> np.ndarray:
    cdf = _poisson_cdf_table(mean)
    u = rng.random(n)
    k = np.searchsorted(cdf, u, side="left").astype(np.int64)
    # u beyond the last table entry: continue the sequential search by hand
    for i in np.flatnonzero(k >= cdf.size):
        j = cdf.size - 1
        total = float(cdf[-1])
        p = math.exp(-mean + j * math.log(mean) - math.lgamma(j + 1))
        while total < u[i]:
            j += 1
            p *= mean / j
            if p == 0.0:
                break
            total += p
        k[i] = j
    return k


def _poisson_ptrs(mean: float, rng: np.random.Generator, n: int) -> np.ndarray:
    # Hormann's transformed rejection with squeeze (PTRS); exact for mean >= 10.
    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    log_inv_alpha = math.log(1.1239 + 1.1328 / (b - 3.4))
    vr = 0.9277 - 3.6224 / (b - 2)

    out = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while pending.size:
            m = pending.size
            u = rng.random(m) - 0.5
            v = rng.random(m)
            us = 0.5 - np.abs(u)
            k = np.floor((2 * a / us + b) * u + mean + 0.43)
            fast = (us >= 0.07) & (v <= vr)
            slow = ~fast & np.isfinite(k) & (k >= 0) & ~((us < 0.013) & (v > us))
            lhs = np.log(v) + log_inv_alpha - np.log(a / (us * us) + b)
            rhs = -mean + k * loglam - special.gammaln(k + 1)
            accept = fast | (slow & (lhs <= rhs))
            out[pending[accept]] = k[accept].astype(np.int64)
            pending = pending[~accept]
    return out


def sample_poisson(mean: float, rng: np.random.Generator, size=None):
    """Exact Poisson draws.

    Sequential inversion for ``mean <= 30``, transformed rejection above.
    """
    mean = float(mean)
    if not (mean > 0 and math.isfinite(mean)):
        raise ValueError(f"Poisson mean must be positive, got {mean}")
    if mean >= 1e12:
        raise ValueError("Poisson mean must be below 1e12")
    n = 1 if size is None else int(np.prod(size))
    if mean <= INVERSION_MAX_MEAN:
        draws = _poisson_inversion(mean, rng, n)
    else:
        draws = _poisson_ptrs(mean, rng, n)
    if size is None:
        return int(draws[0])
    return draws.reshape(size)


def poisson_log_pmf(k, mean: float):
    k = np.asarray(k)
    with np.errstate(divide="ignore"):
        out = np.where(k >= 0, -mean + k * math.log(mean) - special.gammaln(np.maximum(k, 0) + 1), -np.inf)
    return out if out.ndim else float(out)


def poisson_upper_tail_bound(k: float, mean: float) -> float:
    """Chernoff bound on ``Pr[X >= k]`` for ``k > mean``."""
    if k <= mean:
        return 1.0
    return math.exp(-mean + k * (1 + math.log(mean) - math.log(k)))


# -- Skellam -----------------------------------------------------------------

def sample_skellam(params: SkellamParams, rng: np.random.Generator, size=None):
    half = params.mu / 2
    shape = 1 if size is None else size
    x = sample_poisson(half, rng, shape)
    y = sample_poisson(half, rng, shape)
    diff = x - y
    return int(diff[0]) if size is None else diff


def skellam_mgf(t: float, mu: float) -> float:
    """``E[exp(t X)] = exp(-mu (1 - cosh t))`` for ``X ~ Sk_mu``."""
    return math.exp(mu * (math.cosh(t) - 1))


# -- Discretized Gaussian ----------------------------------------------------

def randomized_round(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Round up with probability equal to the fractional part, else down."""
    floor = np.floor(y)
    up = rng.random(y.shape) < (y - floor)
    return floor.astype(np.int64) + up


def sample_discrete_gaussian(params: GaussianParams, rng: np.random.Generator, size=None):
    """Gaussian of variance nu, then randomized rounding.

    The output variance is ``discrete_gaussian_variance(nu)``, roughly
    ``nu + 1/6`` once nu exceeds about 0.1.
    """
    shape = (1,) if size is None else size
    y = math.sqrt(params.nu) * rng.standard_normal(shape)
    out = randomized_round(y, rng)
    return int(out.ravel()[0]) if size is None else out


def discrete_gaussian_variance(nu: float) -> float:
    """Exact variance of the randomized-rounding output.

    Uses the Fourier series of ``f (1 - f)`` for the fractional part f, so
    ``Var = nu + 1/6 - sum_k exp(-2 pi^2 k^2 nu) / (pi^2 k^2)``.
    """
    if nu < 1e-6:
        # |y| < 1 up to exp(-1e6): Var = E|y| = sigma sqrt(2/pi)
        return math.sqrt(2 * nu / math.pi)
    terms = max(50, int(math.ceil(math.sqrt(45 / (2 * math.pi ** 2 * nu)))))
    k = np.arange(1, terms + 1, dtype=float)
    correction = np.sum(np.exp(-2 * math.pi ** 2 * k ** 2 * nu) / (math.pi ** 2 * k ** 2))
    return nu + 1 / 6 - float(correction)


def discrete_gaussian_log_pmf(k, params: GaussianParams):
    """log Pr[D_nu = k]; the pmf is the Gaussian expectation of the tent at k."""
    sigma = math.sqrt(params.nu)
    kk = np.abs(np.asarray(k, dtype=float))
    var = params.nu

    def mass(a, b):
        return stats.norm.sf(a, scale=sigma) - stats.norm.sf(b, scale=sigma)

    def first_moment(a, b):
        return var * (stats.norm.pdf(a, scale=sigma) - stats.norm.pdf(b, scale=sigma))

    # for kk >= 1 both tent halves sit on the positive axis
    left = first_moment(kk - 1, kk) - (kk - 1) * mass(kk - 1, kk)
    right = (kk + 1) * mass(kk, kk + 1) - first_moment(kk, kk + 1)
    at_zero = 2 * (mass(0.0, 1.0) - first_moment(0.0, 1.0))
    p = np.where(kk == 0, at_zero, left + right)
    with np.errstate(divide="ignore"):
        out = np.log(np.maximum(p, 0.0))
    return out if out.ndim else float(out)


# -- Bessel ------------------------------------------------------------------

def _recurrence_length(kmax: int, mu: float) -> int:
    return int(kmax) + int(math.ceil(12 * math.sqrt(mu))) + 40


@lru_cache(maxsize=64)
def _log_bessel_table(kmax: int, mu: float) -> np.ndarray:
    """log(e^-mu I_k(mu)) for k = 0..kmax via backward ratio recurrence.

    ``r_j = I_j / I_{j-1}`` satisfies ``r_j = 1 / (2j/mu + r_{j+1})``; starting
    from ``r_{N+1} = 0`` far in the tail and normalizing with
    ``e^-mu (I_0 + 2 sum_k I_k) = 1`` gives every order at once.
    """
    n = _recurrence_length(kmax, mu)
    ratios = np.empty(n)
    r = 0.0
    two_over_mu = 2.0 / mu
    for j in range(n, 0, -1):
        r = 1.0 / (j * two_over_mu + r)
        ratios[j - 1] = r
    with np.errstate(divide="ignore"):
        log_partial = np.cumsum(np.log(ratios))
    total = 1.0 + 2.0 * float(np.sum(np.exp(log_partial)))
    table = np.concatenate(([0.0], log_partial[:kmax])) - math.log(total)
    table.setflags(write=False)
    return table


def _debye_series(p: np.ndarray, nu: np.ndarray) -> np.ndarray:
    p2 = p * p
    u1 = p * (3 - 5 * p2) / 24
    u2 = p2 * (81 - 462 * p2 + 385 * p2 ** 2) / 1152
    u3 = p * p2 * (30375 - 369603 * p2 + 765765 * p2 ** 2 - 425425 * p2 ** 3) / 414720
    u4 = p2 ** 2 * (4465125 - 94121676 * p2 + 349922430 * p2 ** 2
                    - 446185740 * p2 ** 3 + 185910725 * p2 ** 4) / 39813120
    return 1 + u1 / nu + u2 / nu ** 2 + u3 / nu ** 3 + u4 / nu ** 4


def _hankel_series(nu: np.ndarray, x: float) -> np.ndarray:
    four_nu2 = 4.0 * nu * nu
    term = np.ones_like(nu)
    total = np.ones_like(nu)
    for j in range(1, 40):
        term = term * (-(four_nu2 - (2 * j - 1) ** 2) / (8.0 * j * x))
        total += term
        if np.all(np.abs(term) < 1e-17 * np.abs(total)):
            break
    return total


def _log_bessel_asymptotic(orders: np.ndarray, mu: float) -> np.ndarray:
    """log(e^-mu I_k(mu)) for large mu.

    Hankel's large-argument series when k**2 is small against mu, otherwise
    Debye's expansion uniform in mu / k (four correction terms).
    """
    orders = np.asarray(orders, dtype=float)
    out = np.empty(orders.shape)
    small = orders ** 2 < 0.02 * mu
    if small.any():
        out[small] = np.log(_hankel_series(orders[small], mu)) - 0.5 * math.log(2 * math.pi * mu)
    nu = orders[~small]
    if nu.size:
        z = mu / nu
        root = np.sqrt(1 + z * z)
        # nu * (sqrt(1 + z^2) + log(z / (1 + sqrt(1 + z^2)))) - mu, cancellation-free
        exponent = nu / (root + z) - nu * np.arcsinh(1 / z)
        out[~small] = (exponent - 0.5 * np.log(2 * math.pi * nu) - 0.25 * np.log1p(z * z)
                       + np.log(_debye_series(1 / root, nu)))
    return out


def log_bessel_i_scaled_orders(kmax: int, mu: float) -> np.ndarray:
    """``log(e^-mu I_k(mu))`` for every integer order ``0 <= k <= kmax``."""
    kmax = int(kmax)
    mu = float(mu)
    if kmax < 0:
        raise ValueError("orders must be non-negative")
    if not (mu > 0 and math.isfinite(mu)):
        raise ValueError(f"argument must be positive, got {mu}")
    if _recurrence_length(kmax, mu) > _MAX_RECURRENCE_STEPS:
        return _log_bessel_asymptotic(np.arange(kmax + 1), mu)
    # round the cache key up so nearby requests share one recurrence
    padded = -(-(kmax + 1) // 256) * 256
    return _log_bessel_table(padded, mu)[: kmax + 1]


def bessel_i_scaled(k: int, mu: float) -> float:
    """``e^-mu I_k(mu)``; results below 1e-300 are reported as 0."""
    k = abs(int(k))
    if k > 10 ** 6 or mu > 1e12:
        raise ValueError("order must be <= 1e6 and argument <= 1e12")
    value = math.exp(log_bessel_i_scaled_orders(k, mu)[k])
    return value if value >= UNDERFLOW else 0.0


def skellam_log_pmf(k, params: SkellamParams):
    """log Pr[Sk_mu = k] = log(e^-mu I_|k|(mu)); symmetric in k."""
    kk = np.abs(np.asarray(k, dtype=np.int64))
    kmax = int(kk.max()) if kk.size else 0
    out = log_bessel_i_scaled_orders(kmax, params.mu)[kk]
    return out if out.ndim else float(out)


def skellam_log_pmf_general(k, mu1: float, mu2: float):
    """log pmf of the (possibly asymmetric) Skellam law with Poisson means mu1, mu2."""
    if mu1 <= 0 or mu2 <= 0:
        raise ValueError("Poisson means must be positive")
    k = np.asarray(k, dtype=np.int64)
    z = 2 * math.sqrt(mu1 * mu2)
    kk = np.abs(k)
    log_i = log_bessel_i_scaled_orders(int(kk.max()) if kk.size else 0, z)[kk]
    out = log_i + z - (mu1 + mu2) + 0.5 * k * math.log(mu1 / mu2)
    return out if out.ndim else float(out)


# -- Truncated tables --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscretePmf:
    """Truncated, renormalized pmf on the integers ``lo .. lo + len(probs) - 1``."""

    lo: int
    probs: np.ndarray
    tail_mass: float = 0.0

    @property
    def hi(self) -> int:
        return self.lo + self.probs.size - 1

    @property
    def radius(self) -> int:
        return max(abs(self.lo), abs(self.hi))

    def support(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def prob(self, k):
        k = np.asarray(k, dtype=np.int64)
        idx = k - self.lo
        inside = (idx >= 0) & (idx < self.probs.size)
        out = np.where(inside, self.probs[np.clip(idx, 0, self.probs.size - 1)], 0.0)
        return out if out.ndim else float(out)

    def log_prob(self, k):
        with np.errstate(divide="ignore"):
            return np.log(self.prob(k))

    def fold(self, q: int) -> np.ndarray:
        """Induced law on Z_q, indexed by residue."""
        out = np.zeros(q)
        np.add.at(out, np.mod(self.support(), q), self.probs)
        return out


def _symmetric_table(log_pmf_nonneg: Callable[[int], np.ndarray], tail: float, start: int) -> DiscretePmf:
    kmax = max(start, 8)
    while True:
        p = np.exp(log_pmf_nonneg(kmax))
        cum = p[0] + 2 * np.cumsum(p[1:])
        cum = np.concatenate(([p[0]], cum))
        hit = np.flatnonzero(cum >= 1 - tail)
        if hit.size:
            K = int(hit[0])
            probs = np.concatenate((p[K:0:-1], p[: K + 1]))
            mass = float(probs.sum())
            return DiscretePmf(-K, probs / mass, max(0.0, 1.0 - mass))
        if kmax > 10 ** 7:
            raise ValueError("pmf does not reach the requested mass")
        kmax *= 2


def skellam_pmf_table(params: SkellamParams, tail: float = TAIL_MASS) -> DiscretePmf:
    """Sk_mu truncated at cumulative mass ``1 - tail`` and renormalized."""
    return _symmetric_table(
        lambda kmax: log_bessel_i_scaled_orders(kmax, params.mu), tail,
        int(10 * math.sqrt(params.mu)) + 10,
    )


def discrete_gaussian_pmf_table(params: GaussianParams, tail: float = TAIL_MASS) -> DiscretePmf:
    return _symmetric_table(
        lambda kmax: discrete_gaussian_log_pmf(np.arange(kmax + 1), params), tail,
        int(10 * math.sqrt(params.nu)) + 10,
    )


def point_mass(value: int = 0) -> DiscretePmf:
    return DiscretePmf(int(value), np.array([1.0]))


# -- Tail bounds -------------------------------------------------------------

def skellam_tail_bound(s: float, params: SkellamParams) -> float:
    """Chernoff bound on ``Pr[X > s sqrt(mu)]`` at ``t = arsinh(1/sqrt(s))``."""
    mu = params.mu
    if not 0 < s < mu:
        raise ValueError(f"need mu > s > 0, got s={s}, mu={mu}")
    t = math.asinh(1 / math.sqrt(s))
    # cosh(t) - 1 = sqrt(1 + 1/s) - 1, written without cancellation
    cosh_minus_one = (1 / s) / (math.sqrt(1 + 1 / s) + 1)
    exponent = mu * cosh_minus_one - t * s * math.sqrt(mu)
    # vacuous (>= 1) when mu is large against s; capped to stay a probability
    return 1.0 if exponent >= 0 else math.exp(exponent)


def gaussian_sum_tail_bound(zeta: int, nu: float, s: float) -> float:
    """Bound on ``Pr[|g_1 + ... + g_zeta| > sqrt(zeta nu s)]`` for ``g_i ~ D_nu``.

    Hoeffding for sub-gaussian summands with parameter ``sqrt(nu + 1)``
    (the +1 absorbs the rounding step): ``2 exp(-s nu / (2 (nu + 1)))``.
    """
    if zeta < 1 or nu <= 0 or s <= 0:
        raise ValueError("zeta, nu and s must be positive")
    return 2.0 * math.exp(-s * nu / (2.0 * (nu + 1.0)))


# -- Goodness of fit ---------------------------------------------------------

class GofResult(NamedTuple):
    statistic: float
    dof: int
    p_value: float
    buckets: int


def _expected_table(samples: np.ndarray, log_pmf, tail: float):
    lo, hi = int(samples.min()), int(samples.max())
    width = max(hi - lo, 16)
    while True:
        ks = np.arange(lo, hi + 1)
        p = np.exp(np.asarray(log_pmf(ks), dtype=float))
        mass = float(p.sum())
        if mass >= 1 - tail or hi - lo > 10 ** 7:
            return lo, p, mass
        lo -= width
        hi += width
        width *= 2


def chi_square_test(samples, log_pmf, *, min_expected: float = 5.0,
                    min_samples: int = 10_000, tail: float = TAIL_MASS) -> GofResult:
    """Pearson chi-square of integer samples against a pmf given by its log.

    Adjacent support points are pooled left to right until every bucket
    expects at least ``min_expected`` counts; mass outside the evaluated range
    goes to the two end buckets.
    """
    samples = np.asarray(samples, dtype=np.int64).ravel()
    if samples.size == 0:
        raise ValueError("no samples")
    if samples.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {samples.size}")
    n = samples.size
    lo, p, mass = _expected_table(samples, log_pmf, tail)
    expected = n * p
    spill = n * max(0.0, 1.0 - mass) / 2
    expected[0] += spill
    expected[-1] += spill
    observed = np.bincount(samples - lo, minlength=expected.size).astype(float)

    # greedy pooling; each bucket ends at the first index where its mass reaches min_expected
    cum_e = np.concatenate(([0.0], np.cumsum(expected)))
    cum_o = np.concatenate(([0.0], np.cumsum(observed)))
    cuts = [0]
    while True:
        end = int(np.searchsorted(cum_e, cum_e[cuts[-1]] + min_expected, side="left"))
        if end >= cum_e.size:
            break
        cuts.append(end)
    if len(cuts) == 1:
        raise ValueError("fewer than two buckets after pooling; test is degenerate")
    cuts[-1] = expected.size  # leftover tail joins the last full bucket
    e = np.diff(cum_e[cuts])
    o = np.diff(cum_o[cuts])
    if e.size < 2:
        raise ValueError("fewer than two buckets after pooling; test is degenerate")
    stat = float(np.sum((o - e) ** 2 / e))
    dof = e.size - 1
    return GofResult(stat, dof, float(stats.chi2.sf(stat, dof)), e.size)


def goodness_of_fit(samples, log_pmf, **kwargs) -> float:
    """p-value of the pooled Pearson chi-square test (see :func:`chi_square_test`)."""
    return chi_square_test(samples, log_pmf, **kwargs).p_value
