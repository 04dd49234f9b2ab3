"""Command-line entry point: ``skellam-lwe {params,keygen,simulate,dist-test,lossy}``.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible plan
(insecure parameters or an enumeration too large), 3 a statistical suite failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import psa
from .dp import DpBudget, ParameterPlan, QuerySpec, plan_parameters
from .lossy import InfeasibleSizeError, lossiness_experiment
from .ring import Modulus
from .samplers import (
    GaussianParams,
    SkellamParams,
    chi_square_test,
    discrete_gaussian_log_pmf,
    discrete_gaussian_variance,
    gaussian_sum_tail_bound,
    poisson_log_pmf,
    poisson_upper_tail_bound,
    sample_discrete_gaussian,
    sample_poisson,
    sample_skellam,
    skellam_log_pmf,
    skellam_tail_bound,
)
from .streams import derive_rng, worker_count

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_SUITE_FAILED = 0, 1, 2, 3
SIM_HEADER = ("time_index", "true_sum", "noisy_sum", "abs_error")
DATA_HEADER = ("time_index", "user_index", "value")
SAMPLE_CHUNK = 1 << 20


class UsageError(Exception):
    pass


class Infeasible(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    kappa: int = 200
    n: int = 20000
    m: int = 1000
    lam: int = 1
    epsilon: float = 1.0
    delta: float = 0.1
    beta: float = 0.05
    seed: int = 0
    zero_noise: bool = False

    def __post_init__(self) -> None:
        for name in ("kappa", "n", "m", "lam"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if not 0 < self.beta < 1:
            raise UsageError("beta must lie in (0, 1)")
        try:
            DpBudget(self.epsilon, self.delta)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def plan(self) -> ParameterPlan:
        spec = QuerySpec(self.m, self.n, self.lam)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return plan_parameters(self.kappa, spec, DpBudget(self.epsilon, self.delta), self.beta)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# config keys accepted per command; JSON uses "lambda" for lam
_PSA_KEYS = {"kappa", "n", "m", "lambda", "epsilon", "delta", "beta", "seed", "zero_noise"}
_DIST_KEYS = {"distribution", "mu", "nu", "mean", "samples", "seed"}
_LOSSY_KEYS = {"kappa", "lambda", "q", "nu", "mu", "trials", "seed"}


def _merged(args, allowed: set, defaults: dict) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    values = dict(defaults)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(doc) - allowed
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for key in allowed:
        flag = getattr(args, key.replace("lambda", "lam"), None)
        if flag is not None:
            values[key] = flag
    return values


def _run_config(args) -> RunConfig:
    v = _merged(args, _PSA_KEYS, {})
    fields = {("lam" if k == "lambda" else k): val for k, val in v.items()}
    try:
        for name in ("kappa", "n", "m", "lam", "seed"):
            if name in fields and (isinstance(fields[name], bool) or int(fields[name]) != fields[name]):
                raise UsageError(f"{name} must be an integer")
        return RunConfig(**fields)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# -- params / keygen ---------------------------------------------------------

def cmd_params(args) -> int:
    cfg = _run_config(args)
    plan = cfg.plan()
    doc = plan.as_dict()
    doc["lambda"] = cfg.lam
    _emit(_dumps(doc), args.out)
    return EXIT_OK if plan.security_ok else EXIT_INFEASIBLE


def _require_secure(plan: ParameterPlan, allow: bool) -> None:
    if not plan.security_ok and not allow:
        raise Infeasible("plan fails the security inequality; pass --allow-insecure to proceed")


def cmd_keygen(args) -> int:
    cfg = _run_config(args)
    plan = cfg.plan()
    _require_secure(plan, args.allow_insecure)
    rng = derive_rng(cfg.seed, "keys")
    pp, keys = psa.setup(cfg.kappa, cfg.n, plan.q, cfg.lam, plan.mu_user, rng, m=cfg.m)
    Path(args.out).write_text(psa.keys_to_json(pp, keys), encoding="utf-8")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def read_data_csv(path: str, n: int, lam: int, m: int) -> tuple[np.ndarray, int]:
    """Load ``time_index,user_index,value`` rows into a lam x n grid, clipping to [-m, m]."""
    grid = np.zeros((lam, n), dtype=np.int64)
    seen = np.zeros((lam, n), dtype=bool)
    clipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATA_HEADER:
            raise UsageError(f"data CSV must start with header {','.join(DATA_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, u, x = (int(v) for v in row)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: expected three integers") from None
            if not (0 <= t < lam and 1 <= u <= n):
                raise UsageError(f"{path}:{lineno}: index out of range")
            if seen[t, u - 1]:
                raise UsageError(f"{path}:{lineno}: duplicate entry")
            seen[t, u - 1] = True
            if abs(x) > m:
                clipped += 1
                x = max(-m, min(m, x))
            grid[t, u - 1] = x
    if not seen.all():
        raise UsageError(f"data CSV is missing {int((~seen).sum())} (time, user) entries")
    return grid, clipped


def _summary_gof(errors: np.ndarray, mu: float) -> Optional[float]:
    try:
        return chi_square_test(errors, lambda k: skellam_log_pmf(k, SkellamParams(mu)),
                               min_samples=1).p_value
    except ValueError:
        return None


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    plan = cfg.plan()
    _require_secure(plan, args.allow_insecure)
    try:
        pp, keys = psa.keys_from_json(Path(args.keys).read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load keys {args.keys}: {exc}") from None
    if (pp.kappa, pp.n, pp.lam, pp.m, pp.modulus.q) != (cfg.kappa, cfg.n, cfg.lam, cfg.m, plan.q.q):
        raise UsageError("keys file does not match the configured kappa, n, lambda, m and q")
    data, clipped = (None, 0)
    if args.data:
        data, clipped = read_data_csv(args.data, cfg.n, cfg.lam, cfg.m)
    result = psa.run_rounds(pp, keys, cfg.seed, data=data, zero_noise=cfg.zero_noise)

    truth, noisy = result.true_sums, result.noisy_sums
    err = noisy - truth
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SIM_HEADER)
    for j in range(pp.lam):
        w.writerow([j, int(truth[j]), int(noisy[j]), abs(int(err[j]))])
    Path(args.out).write_text(buf.getvalue(), encoding="utf-8")

    mu_total = pp.n * pp.mu_user
    summary = {
        "alpha": plan.alpha_single_query,
        "beta": cfg.beta,
        "empirical_beta": float(np.mean(np.abs(err) > plan.alpha_single_query)),
        "error_mean": float(err.mean()),
        "error_variance": float(err.var()),
        "expected_variance": 0.0 if cfg.zero_noise else mu_total,
        "gof_p_value": None if cfg.zero_noise else _summary_gof(err, mu_total),
        "clipped": clipped,
        "rows": pp.lam,
        "q": pp.modulus.q,
        "zero_noise": cfg.zero_noise,
    }
    summary_path = args.summary or str(Path(args.out).with_suffix(".summary.json"))
    Path(summary_path).write_text(_dumps(summary), encoding="utf-8")
    return EXIT_OK


# -- dist-test ---------------------------------------------------------------

def _draw(distribution: str, param: float, samples: int, seed: int) -> np.ndarray:
    """Chunk c of SAMPLE_CHUNK draws comes from ``derive_rng(seed, "dist", c)``."""
    if distribution == "skellam":
        draw = lambda rng, k: sample_skellam(SkellamParams(param), rng, k)
    elif distribution == "gaussian":
        draw = lambda rng, k: sample_discrete_gaussian(GaussianParams(param), rng, k)
    else:
        draw = lambda rng, k: sample_poisson(param, rng, k)
    sizes = [min(SAMPLE_CHUNK, samples - a) for a in range(0, samples, SAMPLE_CHUNK)]
    job = lambda c: draw(derive_rng(seed, "dist", c), sizes[c])
    workers = min(worker_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(c) for c in range(len(sizes))]
    return np.concatenate(parts).astype(np.int64)


def _moment_suite(x: np.ndarray, mean: float, var: float) -> dict:
    n = x.size
    m = x.mean()
    centered = x - m
    v = float(np.mean(centered.astype(np.float64) ** 2))
    m4 = float(np.mean(centered.astype(np.float64) ** 4))
    z_mean = (m - mean) / math.sqrt(var / n)
    z_var = (v - var) / math.sqrt(max(m4 - v * v, 1e-300) / n)
    return {"mean": float(m), "variance": v, "expected_mean": mean, "expected_variance": var,
            "z_mean": float(z_mean), "z_variance": float(z_var),
            "pass": abs(z_mean) < 4 and abs(z_var) < 4}


def _symmetry_suite(x: np.ndarray) -> dict:
    pos, neg = int((x > 0).sum()), int((x < 0).sum())
    z = (pos - neg) / math.sqrt(max(pos + neg, 1))
    return {"positive": pos, "negative": neg, "z": z, "pass": abs(z) < 4}


def _tail_suite(x: np.ndarray, checks) -> dict:
    """``checks``: (label, threshold, bound, two_sided); pass if empirical rate is within 4 sigma below the bound."""
    rows, ok = [], True
    n = x.size
    for label, threshold, bound, two_sided in checks:
        hits = np.abs(x) > threshold if two_sided else x > threshold
        rate = float(hits.mean())
        slack = 4 * math.sqrt(min(bound, 1.0) * (1 - min(bound, 1.0)) / n)
        passed = rate <= bound + slack
        ok &= passed
        rows.append({"s": label, "threshold": threshold, "empirical": rate, "bound": bound, "pass": passed})
    return {"checks": rows, "pass": ok}


def cmd_dist_test(args) -> int:
    v = _merged(args, _DIST_KEYS, {"samples": 1_000_000, "seed": 0})
    dist = v.get("distribution")
    if dist not in ("skellam", "gaussian", "poisson"):
        raise UsageError(f"unknown distribution {dist!r}")
    key = {"skellam": "mu", "gaussian": "nu", "poisson": "mean"}[dist]
    param = v.get(key)
    if param is None or not float(param) > 0:
        raise UsageError(f"{dist} needs a positive --{key}")
    param = float(param)
    samples, seed = int(v["samples"]), int(v["seed"])
    if samples < 10_000:
        raise UsageError("need at least 10^4 samples")
    x = _draw(dist, param, samples, seed)

    if dist == "skellam":
        mean, var = 0.0, param
        log_pmf = lambda k: skellam_log_pmf(k, SkellamParams(param))
        grid = [s for s in (1.0, 2.0, 4.0, 9.0) if s < param]
        tails = [(s, s * math.sqrt(param), skellam_tail_bound(s, SkellamParams(param)), False) for s in grid]
    elif dist == "gaussian":
        mean, var = 0.0, discrete_gaussian_variance(param)
        log_pmf = lambda k: discrete_gaussian_log_pmf(k, GaussianParams(param))
        tails = [(s, math.sqrt(param * s), gaussian_sum_tail_bound(1, param, s), True) for s in (4.0, 9.0, 16.0)]
    else:
        mean, var = param, param
        log_pmf = lambda k: poisson_log_pmf(k, param)
        tails = [(s, param + s * math.sqrt(param), poisson_upper_tail_bound(param + s * math.sqrt(param), param), False)
                 for s in (1.0, 2.0, 4.0)]

    gof = chi_square_test(x, log_pmf)
    report = {
        "distribution": dist,
        "parameter": param,
        "samples": samples,
        "seed": seed,
        "moment": _moment_suite(x, mean, var),
        "symmetry": {"pass": None, "skipped": "not a symmetric law"} if dist == "poisson" else _symmetry_suite(x),
        "tail": _tail_suite(x, tails),
        "chi_square": {"statistic": gof.statistic, "dof": gof.dof, "p_value": gof.p_value,
                       "pass": gof.p_value > 1e-3},
    }
    _emit(_dumps(report), args.out)
    failed = False
    for suite in ("moment", "symmetry", "tail", "chi_square"):
        verdict = report[suite]["pass"]
        failed |= verdict is False
        status = "skip" if verdict is None else ("pass" if verdict else "FAIL")
        print(f"{suite}: {status}", file=sys.stderr)
    return EXIT_SUITE_FAILED if failed else EXIT_OK


# -- lossy -------------------------------------------------------------------

def cmd_lossy(args) -> int:
    v = _merged(args, _LOSSY_KEYS, {"kappa": 2, "lambda": 12, "q": 23, "nu": 0.01, "mu": 1.0,
                                     "trials": 200, "seed": 0})
    try:
        modulus = Modulus(int(v["q"]))
        result = lossiness_experiment(int(v["kappa"]), int(v["lambda"]), modulus, float(v["nu"]),
                                      float(v["mu"]), int(v["trials"]), int(v["seed"]))
    except InfeasibleSizeError as exc:
        raise Infeasible(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    Path(args.out).write_text(result.to_csv(), encoding="utf-8")
    sys.stdout.write(_dumps({
        "median_entropy_lossy": result.median("lossy"),
        "median_entropy_uniform": result.median("uniform"),
        "mann_whitney_p": result.mann_whitney_p(),
        "rows": len(result.rows),
    }))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skellam-lwe", description="LWE with Skellam noise: planning, PSA simulation, samplers, lossy lab.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", help="JSON file; explicit flags override its values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)

    def psa_flags(sp):
        sp.add_argument("--kappa", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--m", type=int)
        sp.add_argument("--lambda", dest="lam", type=int)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--zero-noise", dest="zero_noise", action="store_const", const=True)

    sp = sub.add_parser("params", help="print the parameter plan")
    common(sp)
    psa_flags(sp)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("keygen", help="write a PSA key file")
    common(sp, out_required=True)
    psa_flags(sp)
    sp.add_argument("--allow-insecure", action="store_true")
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("simulate", help="run lambda aggregation rounds")
    common(sp, out_required=True)
    psa_flags(sp)
    sp.add_argument("--keys", required=True)
    sp.add_argument("--data", help="CSV with columns time_index,user_index,value")
    sp.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    sp.add_argument("--allow-insecure", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("dist-test", help="statistical suites for a sampler")
    common(sp)
    sp.add_argument("distribution", nargs="?")
    sp.add_argument("--mu", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--mean", type=float)
    sp.add_argument("--samples", type=int)
    sp.set_defaults(func=cmd_dist_test)

    sp = sub.add_parser("lossy", help="lossy-code entropy experiment")
    common(sp, out_required=True)
    sp.add_argument("--kappa", type=int)
    sp.add_argument("--lambda", dest="lam", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_lossy)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
