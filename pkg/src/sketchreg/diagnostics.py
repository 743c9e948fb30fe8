"""Posterior comparison and MCMC summary metrics.

* ``hellinger_accuracy``: per-coefficient Bhattacharyya coefficient between
  two sets of draws, estimated with histograms on a shared grid.
* ``effective_sample_size``: Geyer initial-monotone-sequence ESS.
* ``computational_efficiency``: log2(ESS) / hours.
* ``estimation_report``: MSE, interval coverage and length against a known truth.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AccuracyReport",
    "EfficiencyReport",
    "EstimationReport",
    "DiagnosticsError",
    "DegenerateChainWarning",
    "hellinger_accuracy",
    "effective_sample_size",
    "mean_ess",
    "computational_efficiency",
    "efficiency_report",
    "estimation_report",
    "write_per_coefficient_csv",
    "write_json",
]

DEFAULT_BINS = 512
MIN_DRAWS = 100


class DiagnosticsError(ValueError):
    pass


class DegenerateChainWarning(UserWarning):
    """Raised (as a warning) when ESS is taken of a constant chain."""


@dataclass
class AccuracyReport:
    per_coeff: np.ndarray
    mean_accuracy: float
    grid_bins: int
    support_lo: np.ndarray
    support_hi: np.ndarray

    def summary(self) -> dict:
        return {"mean_accuracy": self.mean_accuracy, "grid_bins": self.grid_bins}


@dataclass
class EfficiencyReport:
    ess_mean: float
    wall_hours: float
    efficiency: float

    def summary(self) -> dict:
        return asdict(self)


@dataclass
class EstimationReport:
    mse: float
    mse_nz: float | None
    mspe_proxy: float | None
    coverage_all: float
    coverage_nz: float | None
    length_all: float
    length_nz: float | None
    beta_hat: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def summary(self) -> dict:
        keys = ("mse", "mse_nz", "mspe_proxy", "coverage_all", "coverage_nz", "length_all", "length_nz")
        return {k: getattr(self, k) for k in keys}


# --- accuracy ----------------------------------------------------------------


def _as_draws(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DiagnosticsError(f"{name} must be (draws x coefficients)")
    if a.shape[0] < MIN_DRAWS:
        raise DiagnosticsError(
            f"{name} has {a.shape[0]} draws; at least {MIN_DRAWS} are required"
        )
    if not np.all(np.isfinite(a)):
        raise DiagnosticsError(f"{name} has non-finite draws")
    return a


def _bin_counts(draws, lo, width, bins):
    k, p = draws.shape
    idx = np.floor((draws - lo) / width).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    idx += np.arange(p) * bins
    return np.bincount(idx.ravel(), minlength=p * bins).reshape(p, bins).astype(float)


def hellinger_accuracy(draws_a, draws_b, bins: int = DEFAULT_BINS) -> AccuracyReport:
    """Per-coefficient accuracy ``sum_i sqrt(p_i q_i)`` of two binned posteriors.

    Both sample sets share one grid per coefficient spanning their pooled
    range padded by 1% on each side. The value equals
    ``1 - 0.5 * sum_i (sqrt(p_i) - sqrt(q_i))^2`` for the binned laws.
    """
    a = _as_draws(draws_a, "draws_a")
    b = _as_draws(draws_b, "draws_b")
    if a.shape[1] != b.shape[1]:
        raise DiagnosticsError(f"coefficient count differs: {a.shape[1]} vs {b.shape[1]}")
    bins = int(bins)
    if bins < 1:
        raise DiagnosticsError("bins must be positive")

    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    hi = np.maximum(a.max(axis=0), b.max(axis=0))
    span = hi - lo
    point = span == 0
    pad = 0.01 * span
    lo_g = lo - pad
    hi_g = hi + pad
    width = np.where(point, 1.0, (hi_g - lo_g) / bins)

    ca = _bin_counts(a, lo_g, width, bins)
    cb = _bin_counts(b, lo_g, width, bins)
    # integer counts keep the identical-sample case exactly 1
    acc = np.sqrt(ca * cb).sum(axis=1) / np.sqrt(float(a.shape[0]) * float(b.shape[0]))
    # zero-width pooled support: both sets are the same point mass
    acc[point] = 1.0
    acc = np.clip(acc, 0.0, 1.0)
    return AccuracyReport(
        per_coeff=acc,
        mean_accuracy=float(acc.mean()),
        grid_bins=bins,
        support_lo=lo_g,
        support_hi=hi_g,
    )


# --- effective sample size ---------------------------------------------------


def _autocorr(x):
    k = x.shape[0]
    x = x - x.mean()
    nfft = 1 << int(2 * k - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:k]
    return acov / acov[0]


def effective_sample_size(chain) -> float:
    """ESS = k / (1 + 2 sum_t rho_t) with Geyer's initial monotone sequence.

    Autocorrelations are summed in adjacent pairs ``rho_{2i} + rho_{2i+1}``
    while the pair sums stay positive, and the pair sums are forced to be
    non-increasing. A constant chain returns ``k`` with a
    ``DegenerateChainWarning``.
    """
    x = np.asarray(chain, dtype=float).reshape(-1)
    k = x.shape[0]
    if k < 10:
        raise DiagnosticsError("ESS needs at least 10 draws")
    if not np.all(np.isfinite(x)):
        raise DiagnosticsError("chain has non-finite values")
    if np.ptp(x) == 0:
        warnings.warn("constant chain; ESS set to chain length", DegenerateChainWarning)
        return float(k)

    rho = _autocorr(x)
    n_pairs = k // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.nonzero(pairs <= 0)[0]
    stop = neg[0] if neg.size else n_pairs
    pairs = np.minimum.accumulate(pairs[:stop])
    tau_int = -1.0 + 2.0 * pairs.sum()
    if not tau_int > 0:
        return float(k)
    return float(min(k / tau_int, k))


def mean_ess(draws) -> float:
    """Average ESS over the columns of a (draws x coefficients) matrix."""
    d = np.asarray(draws, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        return float(np.mean([effective_sample_size(d[:, j]) for j in range(d.shape[1])]))


def computational_efficiency(ess_mean: float, wall_hours: float) -> float:
    """``log2(ess_mean) / wall_hours``."""
    if not (ess_mean > 0 and wall_hours > 0):
        raise DiagnosticsError("ess_mean and wall_hours must be positive")
    return float(np.log2(ess_mean) / wall_hours)


def efficiency_report(beta_draws, wall_seconds: float) -> EfficiencyReport:
    ess = mean_ess(beta_draws)
    hours = wall_seconds / 3600.0
    return EfficiencyReport(ess, hours, computational_efficiency(ess, hours))


# --- estimation --------------------------------------------------------------


def estimation_report(beta_draws, beta_true, x=None, level: float = 0.95) -> EstimationReport:
    """Point-estimate error and equal-tailed interval behaviour against ``beta_true``."""
    draws = _as_draws(beta_draws, "beta_draws")
    truth = np.asarray(beta_true, dtype=float).reshape(-1)
    p = draws.shape[1]
    if truth.shape[0] != p:
        raise DiagnosticsError(f"beta_true has {truth.shape[0]} entries, draws have {p}")
    if not np.all(np.isfinite(truth)):
        raise DiagnosticsError("beta_true must be finite")
    if not 0 < level < 1:
        raise DiagnosticsError("level must be in (0, 1)")

    # sorting first makes every statistic exactly invariant to row order
    ordered = np.sort(draws, axis=0)
    beta_hat = ordered.mean(axis=0)
    alpha = 0.5 * (1.0 - level)
    lower, upper = np.quantile(ordered, [alpha, 1.0 - alpha], axis=0)
    covered = (lower <= truth) & (truth <= upper)
    length = upper - lower
    err2 = (beta_hat - truth) ** 2
    nz = truth != 0
    s = int(nz.sum())

    mspe = None
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != p:
            raise DiagnosticsError(f"x must be n x {p}")
        diff = x @ (beta_hat - truth)
        mspe = float(diff @ diff / x.shape[0])

    return EstimationReport(
        mse=float(err2.sum() / p),
        mse_nz=float(err2[nz].sum() / s) if s else None,
        mspe_proxy=mspe,
        coverage_all=float(covered.mean()),
        coverage_nz=float(covered[nz].mean()) if s else None,
        length_all=float(length.mean()),
        length_nz=float(length[nz].mean()) if s else None,
        beta_hat=beta_hat,
        lower=lower,
        upper=upper,
    )


# --- serialization -----------------------------------------------------------


def write_per_coefficient_csv(path, accuracy=None, estimation=None, beta_true=None) -> Path:
    """One row per coefficient with whatever per-coefficient columns are available."""
    cols = {}
    if accuracy is not None:
        cols["accuracy"] = accuracy.per_coeff
    if estimation is not None:
        cols["beta_hat"] = estimation.beta_hat
        cols["lower"] = estimation.lower
        cols["upper"] = estimation.upper
    if beta_true is not None:
        cols["beta_true"] = np.asarray(beta_true, dtype=float)
    if not cols:
        raise DiagnosticsError("nothing to write")
    p = len(next(iter(cols.values())))
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coef", *cols])
        for j in range(p):
            w.writerow([j, *(repr(float(c[j])) for c in cols.values())])
    return path


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path
