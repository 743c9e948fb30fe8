"""Built-in self checks run by ``sketchreg verify``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .sampler import HorseshoeState, sample_beta_direct, sample_beta_fast, update_global_scale, update_local_scales
from .sketch import SketchedData, generate_sketch_matrix, verify_isometry


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)


def check_isometry(n_seeds: int, m=200, n=2000, slack=0.05, seed=0) -> CheckResult:
    reports = [verify_isometry(generate_sketch_matrix(m, n, seed + k), slack) for k in range(n_seeds)]
    rate = float(np.mean([r.passed for r in reports]))
    med = float(np.median([r.spectral_dev for r in reports]))
    bound = 3 * np.sqrt(m / n)
    ok = rate >= 0.95 and med <= bound
    return CheckResult(
        "sketch spectrum", ok,
        f"pass rate {rate:.2f} (>= 0.95), median |PP'-I| {med:.3f} (<= {bound:.3f})",
        {"pass_rate": rate, "median_spectral_dev": med},
    )


def check_beta_samplers(n_draws: int, p=50, m=20, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, p))
    y = x[:, :3] @ np.array([2.0, -1.5, 1.0]) + rng.standard_normal(m)
    data = SketchedData(y, x)
    delta = rng.uniform(0.05, 2.0, p)
    sigma = 0.8

    prec = x.T @ x + np.diag(1.0 / delta)
    cov = sigma**2 * np.linalg.inv(prec)
    mean = np.linalg.solve(prec, x.T @ y)

    fast = np.array([sample_beta_fast(data, delta, sigma, rng) for _ in range(n_draws)])
    direct = np.array([sample_beta_direct(data, delta, sigma, rng) for _ in range(n_draws)])
    se = np.sqrt(np.diag(cov) / n_draws)
    z_fast = float(np.max(np.abs(fast.mean(0) - mean) / se))
    z_pair = float(np.max(np.abs(fast.mean(0) - direct.mean(0)) / (np.sqrt(2) * se)))
    frob = lambda a: float(np.linalg.norm(np.cov(a.T) - cov) / np.linalg.norm(cov))
    cf, cd = frob(fast), frob(direct)
    ok = z_fast < 3.0 and z_pair < 3.0 and cf < 0.05 and cd < 0.05
    return CheckResult(
        "fast vs direct beta draws", ok,
        f"max |mean z| {z_fast:.2f}/{z_pair:.2f}, cov rel err {cf:.3f}/{cd:.3f}",
        {"z_fast": z_fast, "z_pair": z_pair, "cov_fast": cf, "cov_direct": cd},
    )


def check_scale_updates(n_iter: int, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    p = 200
    state = HorseshoeState(np.zeros(p), np.ones(p), np.ones(p), 1.0, 1.0, 1.0)
    bad = 0
    for _ in range(n_iter):
        state.beta = state.tau * state.lambda_ * rng.standard_normal(p)
        state.lambda_, state.nu = update_local_scales(state, rng)
        state.tau, state.xi = update_global_scale(state, rng)
        bad += int(not (np.all(state.lambda_ > 0) and state.tau > 0))
    return CheckResult("scale positivity", bad == 0, f"{bad} non-positive updates in {n_iter}")


def check_metrics(seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((50_000, 1))
    same = dg.hellinger_accuracy(a, a).mean_accuracy
    far = dg.hellinger_accuracy(a, rng.standard_normal((50_000, 1)) + 10).mean_accuracy
    e = rng.standard_normal(100_000)
    ar = np.empty_like(e)
    ar[0] = e[0] / np.sqrt(1 - 0.81)
    for t in range(1, e.size):
        ar[t] = 0.9 * ar[t - 1] + e[t]
    ratio = dg.effective_sample_size(ar) / e.size * 19
    ok = same == 1.0 and far < 0.01 and abs(ratio - 1) < 0.25
    return CheckResult(
        "metrics", ok,
        f"self-accuracy {same}, separated accuracy {far:.2e}, AR(1) ESS ratio {ratio:.3f}",
        {"self": same, "separated": far, "ar1_ratio": ratio},
    )


def run_checks(scale: str = "quick", seed: int = 0) -> list[CheckResult]:
    full = scale == "full"
    return [
        check_isometry(100 if full else 20, seed=seed),
        check_beta_samplers(200_000 if full else 20_000, seed=seed),
        check_scale_updates(100_000 if full else 5_000, seed=seed),
        check_metrics(seed=seed),
    ]
