"""Acceptance criteria 1-11, one test each.

Every test records a one-line verdict; ``conftest.py`` prints the collected
lines at the end of the session (also visible live with ``pytest -s``).
"""

import contextlib
import io
import json
import math
import time

import numpy as np
import pytest
import sympy as sp

from oracles import bessel_scaled_series, brute_force_posterior
from skellam_lwe import cli, lossy, psa
from skellam_lwe.dp import (
    DpBudget,
    QuerySpec,
    accuracy_alpha_formula,
    min_skellam_variance,
    plan_parameters,
    simple_variance_bound,
)
from skellam_lwe.ring import Modulus, ZqMatrix, ZqVector, next_prime
from skellam_lwe.samplers import (
    SkellamParams,
    bessel_i_scaled,
    goodness_of_fit,
    log_bessel_i_scaled_orders,
    sample_skellam,
    skellam_log_pmf,
    skellam_pmf_table,
    skellam_tail_bound,
)
from skellam_lwe.streams import derive_rng

VERDICTS = {}


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[number] = line
    print(line)
    assert ok, line


def test_criterion_01_example_closed_form(capsys):
    start = time.perf_counter()
    code = cli.main(["params", "--n", "20000", "--m", "1000", "--epsilon", "1", "--delta", "0.1", "--kappa", "200"])
    plan = json.loads(capsys.readouterr().out)
    lam, beta = sp.symbols("lambda beta", positive=True)
    text = accuracy_alpha_formula(1000, 1.0, 0.1)
    parsed = sp.sympify(text.replace("lambda", "lam"), locals={"lam": lam, "beta": beta})
    symbolic_ok = sp.srepr(parsed) == sp.srepr(1000 * lam * (sp.log(2 / beta) + sp.log(10)))
    alpha_value = float(parsed.subs({lam: 1, beta: sp.Rational(1, 20)}))
    elapsed = time.perf_counter() - start
    ok = (code == 0 and plan["security_ok"] is True
          and abs(plan["epsilon_cap"] - 1.0730) <= 1e-3
          and symbolic_ok and abs(alpha_value - 5991.46) <= 0.01
          and abs(plan["alpha"] - 5991.46) <= 0.01 and elapsed < 1.0)
    record(1, ok, f"security_ok={plan['security_ok']} eps_cap={plan['epsilon_cap']:.6f} "
                  f"alpha='{text}'={alpha_value:.4f} ({elapsed:.2f}s)")


def test_criterion_02_variance_bound():
    start = time.perf_counter()
    v = min_skellam_variance(DpBudget(1.0, 0.1), 1.0)
    grid_ok = True
    for eps in (0.1, 0.5, 1.0, 2.0):
        for s in (1.0, 10.0):
            for delta in (0.1, 0.01):
                b = DpBudget(eps, delta)
                grid_ok &= min_skellam_variance(b, s) < simple_variance_bound(b, s)
    simple = simple_variance_bound(DpBudget(1.0, 0.1), 1.0)
    elapsed = time.perf_counter() - start
    ok = abs(v - 3.6426) <= 1e-3 and grid_ok and abs(simple - 4.6052) <= 1e-4 and elapsed < 1.0
    record(2, ok, f"min_variance={v:.6f} simple={simple:.6f} grid16_strictly_below={grid_ok}")


def test_criterion_03_skellam_reproducibility():
    start = time.perf_counter()
    pvals = []
    for seed in range(5):
        parts = sample_skellam(SkellamParams(1.0), derive_rng(seed, "acceptance", 3), (100_000, 50))
        pvals.append(goodness_of_fit(parts.sum(axis=1), lambda k: skellam_log_pmf(k, SkellamParams(50.0))))
    passes = sum(p > 1e-3 for p in pvals)
    elapsed = time.perf_counter() - start
    record(3, passes >= 4 and elapsed < 120,
           f"{passes}/5 seeds pass; p-values {[round(p, 4) for p in pvals]} ({elapsed:.1f}s)")


@pytest.fixture(scope="module")
def planned_run():
    cfg = {"kappa": 16, "n": 100, "m": 100, "lam": 10_000}
    budget = DpBudget(1.0, 0.1)
    plan = plan_parameters(cfg["kappa"], QuerySpec(cfg["m"], cfg["n"], cfg["lam"]), budget, beta=0.05)
    pp, keys = psa.setup(cfg["kappa"], cfg["n"], plan.q, cfg["lam"], plan.mu_user, derive_rng(7, "keys"), m=cfg["m"])
    start = time.perf_counter()
    result = psa.run_rounds(pp, keys, seed=7)
    return plan, pp, keys, result, time.perf_counter() - start


def test_criterion_04_aggregation_identity(planned_run):
    plan, pp, keys, res, elapsed = planned_run
    failures = int(np.sum(res.noisy_sums != res.data.sum(axis=1) + res.noise.sum(axis=1)))
    # spot-check the batched path against per-ciphertext decryption
    for j in range(0, pp.lam, 97):
        cts = [psa.Ciphertext(int(res.ciphertexts[j, i]), i + 1, j) for i in range(pp.n)]
        failures += psa.aggregate_decrypt(pp, keys.aggregator, j, cts) != int(res.noisy_sums[j])
    record(4, failures == 0 and pp.lam == 10_000 and elapsed < 60,
           f"{pp.lam} queries, q={plan.q.q} (planner), failures={failures} ({elapsed:.1f}s)")


def test_criterion_05_aggregate_noise_law():
    start = time.perf_counter()
    n, mu_user, m = 20, 1.0, 10
    q = Modulus(next_prime(2 * (n * m + math.ceil(50 * math.sqrt(n * mu_user))) + 1))
    pvals = []
    for seed in range(5):
        pp, keys = psa.setup(8, n, q, 100_000, mu_user, derive_rng(seed, "keys"), m=m)
        res = psa.run_rounds(pp, keys, seed=seed)
        pvals.append(goodness_of_fit(res.errors, lambda k: skellam_log_pmf(k, SkellamParams(n * mu_user))))
    passes = sum(p > 1e-3 for p in pvals)
    elapsed = time.perf_counter() - start
    record(5, passes >= 4 and elapsed < 300,
           f"{passes}/5 seeds pass vs Sk_20; p-values {[round(p, 4) for p in pvals]} ({elapsed:.1f}s)")


def test_criterion_06_accuracy(planned_run):
    plan, pp, _, res, elapsed = planned_run
    frac = float(np.mean(np.abs(res.errors) > plan.alpha_single_query))
    limit = 0.05 + 3 * math.sqrt(0.05 * 0.95 / 10_000)
    record(6, frac <= limit and elapsed < 60,
           f"fraction |error| > alpha={plan.alpha_single_query:.1f}: {frac:.4f} <= {limit:.4f}")


def test_criterion_07_tail_bound():
    start = time.perf_counter()
    mu, s = 100.0, 9.0
    exceed = 0
    for chunk in range(10):
        x = sample_skellam(SkellamParams(mu), derive_rng(0, "acceptance", 7, chunk), 1_000_000)
        exceed += int(np.sum(x > s * math.sqrt(mu)))
    empirical = exceed / 10_000_000
    bound = skellam_tail_bound(s, SkellamParams(mu))
    closed = math.exp(-s) * math.exp(2 / 3)
    elapsed = time.perf_counter() - start
    record(7, empirical <= bound <= closed and elapsed < 120,
           f"empirical={empirical:.3g} <= bound={bound:.3g} <= e^-s e^(2/3)={closed:.3g} ({elapsed:.1f}s)")


def test_criterion_08_bessel_numerics():
    worst = 0.0
    for mu in (0.5, 1.0, 5.0, 20.0):
        for k in range(21):
            ref = bessel_scaled_series(k, mu)
            worst = max(worst, abs(bessel_i_scaled(k, mu) - ref) / ref)
    sandwich = True
    for mu in (0.5, 1.0, 5.0, 20.0, 100.0):
        logs = log_bessel_i_scaled_orders(50, mu)
        for k in range(1, 51):
            r = math.exp(logs[k] - logs[k - 1])
            sandwich &= 1 > r > (-k + math.sqrt(k * k + mu * mu)) / mu
    c = np.linspace(0, 50, 10_000)
    techlem = bool(np.all(-c + np.sqrt(c * c + 1) >= np.exp(-c)))
    record(8, worst < 1e-10 and sandwich and techlem,
           f"max rel err vs series={worst:.2e}; ratio sandwich={sandwich}; exp lower bound on 1e4 points={techlem}")


def test_criterion_09_lossy_oracles():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        gen = derive_rng(seed, "acceptance", 9)
        q = int(gen.choice([3, 5, 7]))
        kappa, lam, mu = int(gen.integers(1, 4)), int(gen.integers(1, 5)), float(gen.uniform(0.3, 6))
        pmf = skellam_pmf_table(SkellamParams(mu))
        A = ZqMatrix(gen.integers(0, q, (lam, kappa)), Modulus(q))
        x = ZqVector(gen.integers(0, q, kappa), Modulus(q))
        e = lossy.truncated_noise(pmf, lossy.skellam_noise(mu))(gen, lam)
        rep = lossy.entropy_oracle(A, x, e, pmf)
        ref = brute_force_posterior(A.entries.tolist(), x.entries.tolist(), e.tolist(),
                                    pmf.support().tolist(), pmf.probs.tolist(), q)
        worst = max(worst, max(abs(rep.posterior[z] - p) for z, p in ref.items()))

    embed_fail = 0
    gen = derive_rng(0, "acceptance", 9, "embed")
    for _ in range(1000):
        kappa = int(gen.choice([4, 6, 8, 10, 12]))
        q = int(gen.choice([13, 101]))
        code = lossy.gen_lossy_code(kappa, kappa + 2, Modulus(q), 4.0, gen)
        xh = gen.integers(0, q, kappa // 2)
        xp = lossy.embed_secret(code, ZqVector(xh, Modulus(q)))
        lhs = (code.A.entries.astype(object) @ xp.entries.astype(object)) % q
        rhs = (code.G.astype(object) @ xh.astype(object)) % q
        embed_fail += list(lhs) != list(rhs)

    unique = 0
    gen = derive_rng(0, "acceptance", 9, "unique")
    for _ in range(1000):
        A = ZqMatrix(gen.integers(0, 41, (8, 2)), Modulus(41))
        x = ZqVector(gen.integers(0, 41, 2), Modulus(41))
        unique += lossy.uniqueness_check(A, x, gen.integers(-2, 3, 8), 2)
    elapsed = time.perf_counter() - start
    record(9, worst < 1e-12 and embed_fail == 0 and unique >= 990 and elapsed < 300,
           f"posterior Linf={worst:.2e}; embed failures={embed_fail}/1000; unique={unique}/1000 ({elapsed:.1f}s)")


def test_criterion_10_lossiness_ordering():
    start = time.perf_counter()
    q = 23
    res = lossy.lossiness_experiment(2, 12, Modulus(q), float(q * q), 1.0, 200, seed=10)
    p = res.mann_whitney_p()
    elapsed = time.perf_counter() - start
    record(10, p < 0.01 and elapsed < 300,
           f"nu=q^2={q * q}, mu=1: median lossy={res.median('lossy'):.3f} uniform={res.median('uniform'):.3f} "
           f"Mann-Whitney p={p:.3g} ({elapsed:.1f}s)")


def _capture(argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
        code = cli.main(argv)
    return code, buf.getvalue().encode()


def test_criterion_11_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kappa": 16, "n": 40, "m": 100, "lambda": 500, "epsilon": 1.0, "delta": 0.1}))
    outputs = []
    for rep in range(2):
        d = tmp_path / f"run{rep}"
        d.mkdir()
        blobs = {}
        blobs["params"] = _capture(["params", "--config", str(cfg), "--seed", "3"])
        blobs["keygen"] = _capture(["keygen", "--config", str(cfg), "--seed", "3", "--out", str(d / "k.json")])
        blobs["simulate"] = _capture(["simulate", "--config", str(cfg), "--seed", "3", "--keys", str(d / "k.json"),
                                      "--out", str(d / "s.csv")])
        blobs["dist-test"] = _capture(["dist-test", "gaussian", "--nu", "9", "--samples", "50000", "--seed", "3"])
        blobs["lossy"] = _capture(["lossy", "--trials", "20", "--seed", "3", "--out", str(d / "l.csv")])
        for name in ("k.json", "s.csv", "s.summary.json", "l.csv"):
            blobs[name] = (d / name).read_bytes()
        outputs.append(blobs)
    same = {k: outputs[0][k] == outputs[1][k] for k in outputs[0]}
    codes = [outputs[0][k][0] for k in ("params", "keygen", "simulate", "dist-test", "lossy")]
    record(11, all(same.values()) and codes == [0] * 5,
           f"identical={sorted(k for k, v in same.items() if v)}; exit codes={codes}")
