"""Differential-privacy accounting for the Skellam mechanism.

Logarithms are natural throughout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ring import Modulus, next_prime
from .samplers import SkellamParams, skellam_pmf_table

# below this ratio eps/S the closed-form denominator is evaluated by its series
SERIES_CUTOFF = 1e-4
HEADROOM_SIGMAS = 50


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class QuerySpec:
    """A batch of ``num_queries`` sum queries over ``num_users`` values in [-m, m]."""

    per_user_bound: int
    num_users: int
    num_queries: int = 1
    sensitivity: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("per_user_bound", "num_users", "num_queries"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if self.sensitivity is None:
            object.__setattr__(self, "sensitivity", float(self.per_user_bound))
        elif not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be positive, got {self.sensitivity}")

    @property
    def m(self) -> int:
        return self.per_user_bound

    @property
    def n(self) -> int:
        return self.num_users

    @property
    def lam(self) -> int:
        return self.num_queries


@dataclass(frozen=True)
class ParameterPlan:
    mu_total: float
    mu_user: float
    kappa: int
    q: Modulus
    epsilon_cap: float
    security_ok: bool
    alpha_single_query: float
    beta: float
    rho: float
    alpha_formula: str

    def as_dict(self) -> dict:
        return {
            "mu_total": self.mu_total,
            "mu_user": self.mu_user,
            "kappa": self.kappa,
            "q": self.q.q,
            "epsilon_cap": self.epsilon_cap,
            "security_ok": self.security_ok,
            "alpha": self.alpha_single_query,
            "beta": self.beta,
            "rho": self.rho,
            "alpha_formula": self.alpha_formula,
        }


def _denominator(x: float) -> float:
    """``1 - cosh x + x sinh x``, by series for small x."""
    if x < SERIES_CUTOFF:
        x2 = x * x
        return x2 / 2 + x2 * x2 / 8 + x2 * x2 * x2 / 144
    # 1 - cosh x = -2 sinh^2(x/2) avoids cancelling two numbers near 1
    return x * math.sinh(x) - 2 * math.sinh(x / 2) ** 2


def min_skellam_variance(budget: DpBudget, sensitivity: float) -> float:
    """Smallest Skellam variance that gives (eps, delta)-DP for one query."""
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return math.log(1 / budget.delta) / _denominator(budget.epsilon / sensitivity)


def simple_variance_bound(budget: DpBudget, sensitivity: float) -> float:
    """The looser ``2 (S/eps)^2 log(1/delta)``."""
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return 2 * (sensitivity / budget.epsilon) ** 2 * math.log(1 / budget.delta)


def accuracy_alpha(budget: DpBudget, beta: float, sensitivity: float) -> float:
    """Error level exceeded with probability at most beta."""
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return sensitivity / budget.epsilon * (math.log(2 / beta) + math.log(1 / budget.delta))


def compose_per_query(budget: DpBudget, lam: int) -> DpBudget:
    """Per-query budget under basic sequential composition over ``lam`` queries."""
    if int(lam) != lam or lam < 1:
        raise ValueError(f"number of queries must be a positive integer, got {lam}")
    return DpBudget(budget.epsilon / lam, budget.delta)


def epsilon_cap(kappa: int, spec: QuerySpec, delta: float) -> float:
    """Largest epsilon for which the DP noise also meets the security variance."""
    if kappa < 1:
        raise ValueError("kappa must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2 * spec.sensitivity ** 2 * math.log(1 / delta) / (kappa * spec.n))


def _fmt(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def accuracy_alpha_formula(sensitivity: float, epsilon: float, delta: float) -> str:
    """Per-query alpha as a function of ``lambda`` and ``beta``, e.g.
    ``1000*lambda*(log(2/beta) + log(10))`` (sympy-parsable)."""
    inv_delta = 1 / delta
    # print 1/delta exactly when it is a whole number
    if abs(inv_delta - round(inv_delta)) < 1e-9 * inv_delta:
        inv_delta = round(inv_delta)
    return f"{_fmt(sensitivity / epsilon)}*lambda*(log(2/beta) + log({_fmt(inv_delta)}))"


def plan_parameters(kappa: int, spec: QuerySpec, budget: DpBudget, beta: float = 0.05) -> ParameterPlan:
    """Joint privacy/security/accuracy plan for ``spec.lam`` sum queries.

    Never raises on insecure inputs; ``security_ok`` reports the outcome.
    """
    if kappa < 1:
        raise ValueError("kappa must be positive")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    s, n, lam = spec.sensitivity, spec.n, spec.lam
    if lam > n * n:
        warnings.warn(f"lambda={lam} exceeds n^2={n * n}; accuracy guarantees degrade", stacklevel=2)
    mu_total = 2 * (s * lam / budget.epsilon) ** 2 * math.log(1 / budget.delta)
    bound = spec.m * n + math.ceil(HEADROOM_SIGMAS * math.sqrt(mu_total))
    q = Modulus(next_prime(2 * bound + 1))
    return ParameterPlan(
        mu_total=mu_total,
        mu_user=mu_total / n,
        kappa=kappa,
        q=q,
        epsilon_cap=epsilon_cap(kappa, spec, budget.delta),
        security_ok=mu_total >= n * lam ** 2 * kappa,
        alpha_single_query=accuracy_alpha(compose_per_query(budget, lam), beta, s),
        beta=beta,
        rho=2 * math.sqrt(mu_total) / q.q,
        alpha_formula=accuracy_alpha_formula(s, budget.epsilon, budget.delta),
    )


def singleton_privacy_ratio(mu: float, sensitivity: int, epsilon: float, delta: float) -> float:
    """max over single outputs k of ``(Pr[Y = k] - delta) / Pr[Y + S = k]``, Y ~ Sk_mu.

    Computed exactly from the truncated pmf table; compare against e^epsilon.
    """
    table = skellam_pmf_table(SkellamParams(mu))
    p = table.probs
    shift = int(sensitivity)
    # P0(k) = p[k], P1(k) = p[k - shift]; only the overlap has P1 > 0 inside the table
    p0 = p[shift:]
    p1 = p[:-shift] if shift else p
    with np.errstate(divide="ignore"):
        ratios = (p0 - delta) / p1
    return float(np.max(ratios))


def hockey_stick_delta(mu: float, sensitivity: int, epsilon: float) -> float:
    """Smallest delta for which ``f(D) + Sk_mu`` is (epsilon, delta)-DP on integer-shift neighbours.

    ``sum_k max(0, P0(k) - e^eps P1(k))`` over the truncated table, plus the
    truncated mass as a conservative slack.
    """
    table = skellam_pmf_table(SkellamParams(mu))
    p = table.probs
    shift = int(sensitivity)
    padded0 = np.concatenate((p, np.zeros(shift)))
    padded1 = np.concatenate((np.zeros(shift), p))
    excess = np.maximum(padded0 - math.exp(epsilon) * padded1, 0.0).sum()
    return float(excess) + table.tail_mass
