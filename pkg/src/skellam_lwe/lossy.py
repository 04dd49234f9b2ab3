"""LWE instances, lossy codes and brute-force entropy oracles at desk scale.

Everything here that enumerates secrets is exponential in kappa and is
capped at ``q**kappa <= MAX_CANDIDATES``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Optional

import numpy as np
from scipy.special import logsumexp
from scipy.stats import mannwhitneyu

from .ring import Modulus, ZqMatrix, ZqVector, add_mod, matmul_mod, sample_uniform_residues
from .samplers import (
    DiscretePmf,
    GaussianParams,
    SkellamParams,
    point_mass,
    sample_discrete_gaussian,
    sample_skellam,
    skellam_pmf_table,
)
from .streams import derive_rng, worker_count

MAX_CANDIDATES = 10**6
_CHUNK = 1 << 15

NoiseSampler = Callable[[np.random.Generator, int], np.ndarray]


class InfeasibleSizeError(ValueError):
    """Raised when ``q**kappa`` exceeds the enumeration cap."""


class ZeroPosteriorError(ValueError):
    """Raised when no candidate secret explains the observation."""


# -- noise samplers ----------------------------------------------------------

def zero_noise() -> NoiseSampler:
    return lambda rng, size: np.zeros(size, dtype=np.int64)


def skellam_noise(mu: float) -> NoiseSampler:
    params = SkellamParams(mu)
    return lambda rng, size: sample_skellam(params, rng, size)


def gaussian_noise(nu: float) -> NoiseSampler:
    params = GaussianParams(nu)
    return lambda rng, size: sample_discrete_gaussian(params, rng, size)


def truncated_noise(pmf: DiscretePmf, base: NoiseSampler) -> NoiseSampler:
    """Rejection-sample ``base`` onto the support of ``pmf``."""
    def draw(rng, size):
        out = np.asarray(base(rng, size), dtype=np.int64)
        bad = (out < pmf.lo) | (out > pmf.hi)
        while bad.any():
            out[bad] = base(rng, int(bad.sum()))
            bad = (out < pmf.lo) | (out > pmf.hi)
        return out
    return draw


# -- instances ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LweInstance:
    A: ZqMatrix
    y: ZqVector
    x: Optional[ZqVector] = None
    e: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.A.rows != len(self.y):
            raise ValueError("A and y disagree on lambda")
        if self.x is not None:
            expected = (self.A @ self.x) + ZqVector.from_signed(self.e, self.A.modulus)
            if expected != self.y:
                raise ValueError("planted witness does not satisfy y = Ax + e")


def gen_lwe_instance(kappa: int, lam: int, modulus: Modulus, noise_sampler: NoiseSampler,
                     rng: np.random.Generator) -> LweInstance:
    A = ZqMatrix(sample_uniform_residues((lam, kappa), modulus, rng), modulus)
    x = ZqVector(sample_uniform_residues((kappa,), modulus, rng), modulus)
    e = np.asarray(noise_sampler(rng, lam), dtype=np.int64)
    y = (A @ x) + ZqVector.from_signed(e, modulus)
    return LweInstance(A, y, x, e)


def gen_dlwe_challenge(kappa: int, lam: int, modulus: Modulus, noise_sampler: NoiseSampler,
                       coin: int, rng: np.random.Generator) -> tuple[ZqMatrix, ZqVector]:
    """``coin = 1``: planted LWE pair; ``coin = 0``: uniform pair."""
    if coin not in (0, 1):
        raise ValueError("coin must be 0 or 1")
    if coin:
        inst = gen_lwe_instance(kappa, lam, modulus, noise_sampler, rng)
        return inst.A, inst.y
    A = ZqMatrix(sample_uniform_residues((lam, kappa), modulus, rng), modulus)
    return A, ZqVector(sample_uniform_residues((lam,), modulus, rng), modulus)


@dataclass(frozen=True, eq=False)
class LossyCode:
    A: ZqMatrix
    A_prime: ZqMatrix
    T: ZqMatrix
    G: np.ndarray
    nu: float

    @property
    def kappa(self) -> int:
        return self.A.cols

    @property
    def modulus(self) -> Modulus:
        return self.A.modulus


def gen_lossy_code(kappa: int, lam: int, modulus: Modulus, nu: float,
                   rng: np.random.Generator) -> LossyCode:
    """``A = (A' | A'T + G)`` with uniform A', T and Gaussian G; ``nu = 0`` gives G = 0."""
    if kappa < 2 or kappa % 2:
        raise ValueError(f"kappa must be even and positive, got {kappa}")
    if nu < 0:
        raise ValueError("nu must be non-negative")
    h = kappa // 2
    a_prime = ZqMatrix(sample_uniform_residues((lam, h), modulus, rng), modulus)
    t = ZqMatrix(sample_uniform_residues((h, h), modulus, rng), modulus)
    if nu == 0:
        g = np.zeros((lam, h), dtype=np.int64)
    else:
        g = sample_discrete_gaussian(GaussianParams(nu), rng, (lam, h))
    right = (a_prime @ t) + ZqMatrix.from_signed(g, modulus)
    return LossyCode(a_prime.hstack(right), a_prime, t, g, float(nu))


def embed_secret(code: LossyCode, x_half: ZqVector) -> ZqVector:
    """``x' = (-T x | x)``, so that ``A x' = G x`` over Z_q."""
    h = code.kappa // 2
    if len(x_half) != h:
        raise ValueError(f"x_half must have length {h}, got {len(x_half)}")
    top = -(code.T @ x_half)
    return ZqVector(np.concatenate([top.entries, x_half.entries]), code.modulus)


# -- oracles -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EntropyReport:
    entropy_bits: float
    posterior: np.ndarray  # shape (q,) * kappa, indexed by residues
    truncation_mass: float

    def prob(self, z) -> float:
        return float(self.posterior[tuple(int(v) for v in z)])


def _check_size(modulus: Modulus, kappa: int) -> int:
    count = modulus.q ** kappa
    if count > MAX_CANDIDATES:
        raise InfeasibleSizeError(f"q**kappa = {count} exceeds the cap of {MAX_CANDIDATES}")
    return count


def _candidates(modulus: Modulus, kappa: int, count: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (offset, block) with block rows the base-q digits of each index, most significant first."""
    q = modulus.q
    for start in range(0, count, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, count), dtype=np.int64)
        digits = np.empty((idx.size, kappa), dtype=np.int64)
        for col in range(kappa - 1, -1, -1):
            digits[:, col] = idx % q
            idx //= q
        yield start, digits


def _observation(A: ZqMatrix, x_tilde: ZqVector, e_tilde) -> np.ndarray:
    e = np.asarray(e_tilde, dtype=np.int64)
    if e.shape != (A.rows,) or len(x_tilde) != A.cols:
        raise ValueError("dimension mismatch between A, x_tilde and e_tilde")
    return add_mod((A @ x_tilde).entries, A.modulus.reduce(e), A.modulus.q)


def entropy_oracle(A: ZqMatrix, x_tilde: ZqVector, e_tilde, pmf: DiscretePmf) -> EntropyReport:
    """Posterior over secrets z given ``A x~ + e~``; entropy is ``-log2 Pr[z = x~]``.

    The noise likelihood of a residual r in Z_q is the pmf folded mod q.
    """
    modulus = A.modulus
    q, kappa = modulus.q, A.cols
    count = _check_size(modulus, kappa)
    obs = _observation(A, x_tilde, e_tilde)
    with np.errstate(divide="ignore"):
        log_noise = np.log(pmf.fold(q))
    a_t = A.entries.T
    logw = np.empty(count)
    for start, z in _candidates(modulus, kappa, count):
        resid = np.mod(obs - matmul_mod(z, a_t, q), q)
        logw[start:start + z.shape[0]] = log_noise[resid].sum(axis=1)
    total = logsumexp(logw)
    if not np.isfinite(total):
        raise ZeroPosteriorError("observation has zero likelihood under every candidate secret")
    post = np.exp(logw - total).reshape((q,) * kappa)
    idx = tuple(int(v) for v in x_tilde.entries)
    log_true = logw.reshape((q,) * kappa)[idx] - total
    entropy = math.inf if not np.isfinite(log_true) else max(0.0, -log_true / math.log(2))
    return EntropyReport(entropy, post, float(pmf.tail_mass))


def uniqueness_check(A: ZqMatrix, x_tilde: ZqVector, e_tilde, r: int) -> bool:
    """True iff no z != x~ has ``|lift(A(x~ - z) + e~)|_inf <= r``."""
    if r < 0:
        raise ValueError("r must be non-negative")
    modulus = A.modulus
    q, kappa = modulus.q, A.cols
    count = _check_size(modulus, kappa)
    e = np.asarray(e_tilde, dtype=np.int64)
    if e.shape != (A.rows,) or len(x_tilde) != kappa:
        raise ValueError("dimension mismatch between A, x_tilde and e_tilde")
    base = add_mod((A @ x_tilde).entries, modulus.reduce(e), q)
    a_t = A.entries.T
    xt = x_tilde.entries.astype(np.int64)
    for _, z in _candidates(modulus, kappa, count):
        diff = np.mod(base - matmul_mod(z, a_t, q), q)
        ok = np.abs(modulus.lift(diff)).max(axis=1, initial=0) <= r
        ok &= ~np.all(z == xt, axis=1)
        if ok.any():
            return False
    return True


# -- experiments -------------------------------------------------------------

LAWS = ("lossy", "uniform")
CSV_HEADER = ("law", "kappa", "lambda", "q", "nu", "mu", "trial", "entropy_bits")


class LossinessRow(NamedTuple):
    law: str
    kappa: int
    lam: int
    q: int
    nu: float
    mu: float
    trial: int
    entropy_bits: float


@dataclass(frozen=True, eq=False)
class LossinessResult:
    rows: tuple

    def entropies(self, law: str) -> np.ndarray:
        return np.array([r.entropy_bits for r in self.rows if r.law == law])

    def median(self, law: str) -> float:
        return float(np.median(self.entropies(law)))

    def mann_whitney_p(self) -> float:
        """One-sided p-value for 'lossy entropies are stochastically larger'."""
        lossy, uniform = self.entropies("lossy"), self.entropies("uniform")
        if np.ptp(np.concatenate([lossy, uniform])) == 0:
            return 1.0
        return float(mannwhitneyu(lossy, uniform, alternative="greater").pvalue)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.law, r.kappa, r.lam, r.q, repr(float(r.nu)), repr(float(r.mu)),
                        r.trial, repr(float(r.entropy_bits))])
        return buf.getvalue()


def noise_table(mu: float) -> DiscretePmf:
    return point_mass(0) if mu == 0 else skellam_pmf_table(SkellamParams(mu))


def _lossiness_trial(law, kappa, lam, modulus, nu, mu, trial, seed, pmf) -> LossinessRow:
    rng = derive_rng(seed, "lossy", law, trial)
    if law == "lossy":
        A = gen_lossy_code(kappa, lam, modulus, nu, rng).A
    else:
        A = ZqMatrix(sample_uniform_residues((lam, kappa), modulus, rng), modulus)
    x = ZqVector(sample_uniform_residues((kappa,), modulus, rng), modulus)
    if mu == 0:
        e = np.zeros(lam, dtype=np.int64)
    else:
        e = truncated_noise(pmf, skellam_noise(mu))(rng, lam)
    report = entropy_oracle(A, x, e, pmf)
    return LossinessRow(law, kappa, lam, modulus.q, float(nu), float(mu), trial, report.entropy_bits)


def lossiness_experiment(kappa: int, lam: int, modulus: Modulus, nu: float, mu: float,
                         trials: int, seed: int) -> LossinessResult:
    """Entropy of the secret under a lossy code and under a uniform matrix.

    Trial ``i`` of law ``L`` uses the stream ``derive_rng(seed, "lossy", L, i)``,
    so results do not depend on the thread count.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    _check_size(modulus, kappa)
    pmf = noise_table(mu)
    jobs = [(law, t) for law in LAWS for t in range(trials)]
    run = lambda job: _lossiness_trial(job[0], kappa, lam, modulus, nu, mu, job[1], seed, pmf)
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    return LossinessResult(tuple(rows))


class SmallNormResult(NamedTuple):
    l1_rate: float
    l2_rate: float
    l1_bound: float
    l2_bound: float
    trials: int


def smallnorm_experiment(lam: int, zeta: int, nu: float, s: float, trials: int,
                         rng: np.random.Generator) -> SmallNormResult:
    """Exceedance rates of ``|Gz|_1 > lam sqrt(zeta nu s)`` and ``|Gz|_2^2 > lam zeta nu s``.

    G is drawn from ``D_nu^{lam x zeta}`` and z is the all-ones vector.
    """
    if min(lam, zeta, trials) < 1 or nu <= 0 or s <= 0:
        raise ValueError("all parameters must be positive")
    params = GaussianParams(nu)
    l1_bound = lam * math.sqrt(zeta * nu * s)
    l2_bound = lam * zeta * nu * s
    l1_hits = l2_hits = 0
    block = max(1, 2_000_000 // (lam * zeta))
    done = 0
    while done < trials:
        b = min(block, trials - done)
        gz = sample_discrete_gaussian(params, rng, (b, lam, zeta)).sum(axis=2)
        l1_hits += int((np.abs(gz).sum(axis=1) > l1_bound).sum())
        l2_hits += int(((gz.astype(np.float64) ** 2).sum(axis=1) > l2_bound).sum())
        done += b
    return SmallNormResult(l1_hits / trials, l2_hits / trials, l1_bound, l2_bound, trials)


def distinguisher_advantage(solver: Callable[[ZqMatrix, ZqVector], int], kappa: int, lam: int,
                            modulus: Modulus, noise_sampler: NoiseSampler, trials: int,
                            seed: int) -> float:
    """``|Pr[solver says 1 | LWE] - Pr[solver says 1 | uniform]|`` over fresh challenges."""
    if trials < 1:
        raise ValueError("trials must be positive")
    said_one = {0: 0, 1: 0}
    for coin in (0, 1):
        for t in range(trials):
            rng = derive_rng(seed, "dlwe", coin, t)
            A, y = gen_dlwe_challenge(kappa, lam, modulus, noise_sampler, coin, rng)
            said_one[coin] += int(solver(A, y) == 1)
    return abs(said_one[1] - said_one[0]) / trials
