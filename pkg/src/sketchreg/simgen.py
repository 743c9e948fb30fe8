"""Synthetic regression studies comparing sketched and full-data horseshoe fits.

Random streams are keyed so that each piece of a study can be regenerated in
isolation::

    data      SeedSequence(master, spawn_key=(0, replication))
    sketch    SeedSequence(master, spawn_key=(1, replication, m))
    subsample SeedSequence(master, spawn_key=(2, replication, m))
    chain     SeedSequence(master, spawn_key=(3, replication, m, method_index))

Changing ``m`` or the method never changes the generated ``(X, y, beta*)``.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .sampler import DIRECT_MAX_P, SamplerConfig, SamplerError, run_chain
from .sketch import SketchedData, apply_sketch, generate_sketch_matrix

log = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "Method",
    "ScenarioSpec",
    "StudyConfig",
    "StudyReport",
    "generate_design",
    "generate_truth",
    "generate_response",
    "generate_dataset",
    "run_study",
    "load_study_config",
]


class Scenario(enum.Enum):
    INDEPENDENT = 1
    COMPOUND = 2

    @classmethod
    def parse(cls, v) -> "Scenario":
        if isinstance(v, Scenario):
            return v
        if isinstance(v, str):
            key = v.strip().upper()
            if key.isdigit():
                return cls(int(key))
            return cls[key]
        return cls(int(v))


class Method(enum.Enum):
    CHS = "CHS"
    FULL_HS = "FullHS"
    SUBSAMPLE_HS = "SubsampleHS"

    @classmethod
    def parse(cls, v) -> "Method":
        if isinstance(v, Method):
            return v
        for meth in cls:
            if meth.value.lower() == str(v).strip().lower():
                return meth
        raise ValueError(f"unknown method {v!r}; choose from {[m.value for m in cls]}")


METHOD_INDEX = {Method.CHS: 0, Method.FULL_HS: 1, Method.SUBSAMPLE_HS: 2}


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    p: int
    s: int
    scenario: Scenario = Scenario.INDEPENDENT
    sigma2_true: float = 1.5
    signal_low: float = 1.5
    signal_high: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.n < 1 or self.p < 1 or self.s < 0:
            raise ValueError("n, p must be positive and s nonnegative")
        if self.s > self.p:
            raise ValueError(f"s={self.s} exceeds p={self.p}")
        if not self.signal_low < self.signal_high:
            raise ValueError("signal_low must be below signal_high")
        if not self.sigma2_true > 0:
            raise ValueError("sigma2_true must be positive")

    def to_dict(self) -> dict:
        return {
            "n": self.n, "p": self.p, "s": self.s, "scenario": self.scenario.value,
            "sigma2_true": self.sigma2_true, "signal_low": self.signal_low,
            "signal_high": self.signal_high, "seed": self.seed,
        }


def generate_design(spec: ScenarioSpec, rng) -> np.ndarray:
    """Rows ~ N(0, I) (independent) or N(0, 0.5 I + 0.5 J) via a shared factor (compound)."""
    x = rng.standard_normal((spec.n, spec.p))
    if spec.scenario is Scenario.COMPOUND:
        z0 = rng.standard_normal((spec.n, 1))
        x *= math.sqrt(0.5)
        x += math.sqrt(0.5) * z0
    return x


def generate_truth(spec: ScenarioSpec, rng) -> np.ndarray:
    """``s`` nonzero entries at random positions, magnitude U(low, high), random sign."""
    beta = np.zeros(spec.p)
    if spec.s == 0:
        return beta
    idx = rng.choice(spec.p, size=spec.s, replace=False)
    mag = rng.uniform(spec.signal_low, spec.signal_high, size=spec.s)
    sign = np.where(rng.random(spec.s) < 0.5, -1.0, 1.0)
    beta[idx] = sign * mag
    return beta


def generate_response(x, beta_true, sigma2: float, rng) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if x.shape[1] != beta_true.shape[0]:
        raise ValueError("x and beta_true disagree on p")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    mean = x @ beta_true
    if sigma2 == 0:
        return mean
    return mean + math.sqrt(sigma2) * rng.standard_normal(x.shape[0])


def generate_dataset(spec: ScenarioSpec, replication: int = 0):
    """``(X, y, beta*)`` for one replication; depends only on ``(spec, replication)``."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(0, replication)))
    x = generate_design(spec, rng)
    beta = generate_truth(spec, rng)
    y = generate_response(x, beta, spec.sigma2_true, rng)
    return x, y, beta


def _seed_int(master: int, key: tuple) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint64)[0])


# --- studies -----------------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    scenario: ScenarioSpec
    m_grid: tuple = (100,)
    replications: int = 1
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(n_iter=2000, n_burn=1000))
    comparators: tuple = (Method.CHS,)
    bins: int = dg.DEFAULT_BINS
    workers: int = 1
    full_max_cost: float = 5e10
    keep_chains: bool = False

    def __post_init__(self):
        object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        object.__setattr__(
            self, "comparators", tuple(dict.fromkeys(Method.parse(c) for c in self.comparators))
        )
        if not self.m_grid:
            raise ValueError("m_grid is empty")
        bad = [m for m in self.m_grid if not 1 <= m < self.scenario.n]
        if bad:
            raise ValueError(f"every m must satisfy 1 <= m < n={self.scenario.n}; got {bad}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.comparators:
            raise ValueError("no comparators selected")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "m_grid": list(self.m_grid),
            "replications": self.replications,
            "sampler": self.sampler.to_dict(),
            "comparators": [c.value for c in self.comparators],
            "bins": self.bins,
        }


# columns whose values depend on wall-clock time
TIMING_COLUMNS = ("wall_seconds", "per_iter_seconds", "efficiency")
CELL_COLUMNS = (
    "method", "m", "s", "scenario", "replication", "status",
    "accuracy", "ess_mean", "wall_seconds", "per_iter_seconds", "efficiency",
    "mse", "mse_nz", "mspe_proxy", "coverage_all", "coverage_nz",
    "length_all", "length_nz", "l2_error", "sigma_hat", "clamps",
)
METRIC_COLUMNS = CELL_COLUMNS[6:]


@dataclass
class StudyReport:
    config: StudyConfig
    cells: list = field(default_factory=list)
    chains: dict = field(default_factory=dict)

    @property
    def per_cell(self) -> list:
        return self.cells

    def aggregates(self) -> list[dict]:
        """Mean and SD over replications for each ``(method, m)`` with completed cells."""
        groups: dict = {}
        for c in self.cells:
            groups.setdefault((c["method"], c["m"]), []).append(c)
        out = []
        for (method, m), cells in groups.items():
            ok = [c for c in cells if c["status"] == "ok"]
            row = {
                "method": method, "m": m, "s": cells[0]["s"], "scenario": cells[0]["scenario"],
                "n_ok": len(ok), "n_skipped": len(cells) - len(ok),
            }
            for col in METRIC_COLUMNS:
                vals = [c[col] for c in ok if c.get(col) is not None]
                row[f"{col}_mean"] = float(np.mean(vals)) if vals else None
                row[f"{col}_sd"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
            out.append(row)
        return out

    def column(self, method, m, name) -> np.ndarray:
        """Per-replication values of ``name`` for one (method, m), skipped cells as nan."""
        method = Method.parse(method).value
        cells = sorted(
            (c for c in self.cells if c["method"] == method and c["m"] == m),
            key=lambda c: c["replication"],
        )
        return np.array([np.nan if c.get(name) is None else c[name] for c in cells], dtype=float)

    def to_csv(self, path=None, timings: bool = True) -> str:
        cols = [c for c in CELL_COLUMNS if timings or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            w.writerow({k: _fmt(c.get(k)) for k in cols})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary(self, timings: bool = True) -> dict:
        aggs = self.aggregates()
        if not timings:
            drop = {f"{c}_{s}" for c in TIMING_COLUMNS for s in ("mean", "sd")}
            aggs = [{k: v for k, v in a.items() if k not in drop} for a in aggs]
        return {"config": self.config.to_dict(), "aggregates": aggs}

    def to_json(self, path=None, timings: bool = True) -> str:
        text = json.dumps(self.summary(timings), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def table(self) -> list[dict]:
        """Rows shaped like the accuracy/efficiency comparison table: one per (method, m)."""
        rows = []
        for a in self.aggregates():
            rows.append({
                "method": a["method"], "m": a["m"],
                "accuracy": a["accuracy_mean"], "efficiency": a["efficiency_mean"],
                "ess_mean": a["ess_mean_mean"], "per_iter_seconds": a["per_iter_seconds_mean"],
                "mse": a["mse_mean"], "mse_nz": a["mse_nz_mean"],
                "coverage_nz": a["coverage_nz_mean"], "length_nz": a["length_nz_mean"],
                "n_ok": a["n_ok"], "n_skipped": a["n_skipped"],
            })
        return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _full_cost(n: int, p: int) -> float:
    return float(min(p**3 if p <= DIRECT_MAX_P else math.inf, n**3 + n * n * p))


def _fit_metrics(out, x, beta_true, reference=None, bins=dg.DEFAULT_BINS) -> dict:
    eff = dg.efficiency_report(out.beta_draws, out.wall_seconds)
    acc = None
    if reference is not None:
        acc = dg.hellinger_accuracy(out.beta_draws, reference, bins).mean_accuracy
    base = {
        "accuracy": acc,
        "ess_mean": eff.ess_mean,
        "wall_seconds": out.wall_seconds,
        "per_iter_seconds": out.per_iter_seconds,
        "efficiency": eff.efficiency,
        "sigma_hat": float(np.mean(out.sigma_draws)),
        "clamps": int(sum(out.clamp_counts.values())),
    }
    if beta_true is None:
        return base
    est = dg.estimation_report(out.beta_draws, beta_true, x)
    return base | {
        "mse": est.mse,
        "mse_nz": est.mse_nz,
        "mspe_proxy": est.mspe_proxy,
        "coverage_all": est.coverage_all,
        "coverage_nz": est.coverage_nz,
        "length_all": est.length_all,
        "length_nz": est.length_nz,
        "l2_error": float(np.linalg.norm(est.beta_hat - beta_true)),
    }


def compare_on_data(
    x, y, beta_true, m_grid, methods, sampler: SamplerConfig, master_seed: int,
    replication: int = 0, bins: int = dg.DEFAULT_BINS, full_max_cost: float = 5e10,
    keep_chains: bool = False, labels: dict | None = None,
):
    """Fit every method at every ``m`` on one dataset; returns ``(cells, chains)``.

    ``beta_true`` may be None, in which case only accuracy and efficiency
    metrics are filled in.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    methods = tuple(dict.fromkeys(Method.parse(mm) for mm in methods))
    labels = labels or {}
    rep = replication
    cells, chains = [], {}

    def cell(method, m, status="ok", **metrics):
        c = {"method": method.value, "m": m, "s": labels.get("s"),
             "scenario": labels.get("scenario"), "replication": rep, "status": status}
        c.update({k: None for k in METRIC_COLUMNS})
        c.update(metrics)
        return c

    def chain_cfg(m, method, beta_method="fast"):
        seed = _seed_int(master_seed, (3, rep, m, METHOD_INDEX[method]))
        return replace(sampler, seed=seed, beta_method=beta_method)

    reference = None
    if Method.FULL_HS in methods:
        if _full_cost(n, p) > full_max_cost:
            log.info("replication %d: full-data fit skipped (too large)", rep)
            full_metrics, status = {}, "skipped"
        else:
            try:
                full = run_chain(SketchedData.uncompressed(y, x), chain_cfg(0, Method.FULL_HS, "auto"))
                reference = full.beta_draws
                full_metrics, status = _fit_metrics(full, x, beta_true), "ok"
                if keep_chains:
                    chains[(Method.FULL_HS.value, 0, rep)] = full
            except SamplerError as exc:
                log.warning("replication %d: full-data fit failed: %s", rep, exc)
                full_metrics, status = {}, "failed"
        # the full-data fit does not depend on m; it is reported once per grid point
        for m in m_grid:
            cells.append(cell(Method.FULL_HS, m, status, **full_metrics))

    for m in m_grid:
        if not 1 <= m < n:
            raise ValueError(f"sketch must strictly compress: m={m}, n={n}")
        for method in methods:
            if method is Method.FULL_HS:
                continue
            if method is Method.CHS:
                phi = generate_sketch_matrix(m, n, _seed_int(master_seed, (1, rep, m)))
                data = apply_sketch(phi, y, x)
            else:
                rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(2, rep, m)))
                rows = np.sort(rng.choice(n, size=m, replace=False))
                data = SketchedData.uncompressed(y[rows], x[rows])
            try:
                out = run_chain(data, chain_cfg(m, method))
            except SamplerError as exc:
                log.warning("replication %d, m=%d, %s failed: %s", rep, m, method.value, exc)
                cells.append(cell(method, m, "failed"))
                continue
            cells.append(cell(method, m, **_fit_metrics(out, x, beta_true, reference, bins)))
            if keep_chains:
                chains[(method.value, m, rep)] = out
    return cells, chains


def _run_replication(config: StudyConfig, rep: int):
    spec = config.scenario
    x, y, beta_true = generate_dataset(spec, rep)
    cells, chains = compare_on_data(
        x, y, beta_true, config.m_grid, config.comparators, config.sampler, spec.seed,
        replication=rep, bins=config.bins, full_max_cost=config.full_max_cost,
        keep_chains=config.keep_chains,
        labels={"s": spec.s, "scenario": spec.scenario.value},
    )
    return rep, cells, chains


def run_study(config: StudyConfig) -> StudyReport:
    """Run every (replication, m, method) cell and collect metrics.

    Cells that cannot be run are recorded with status ``skipped`` or
    ``failed`` and carry no metrics.
    """
    reps = range(config.replications)
    if config.workers > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_replication, [config] * len(reps), reps))
    else:
        results = [_run_replication(config, r) for r in reps]

    report = StudyReport(config)
    order = {meth.value: i for i, meth in enumerate(Method)}
    for _, cells, chains in sorted(results, key=lambda r: r[0]):
        report.cells.extend(cells)
        report.chains.update(chains)
    report.cells.sort(key=lambda c: (order[c["method"]], c["m"], c["replication"]))
    return report


# --- config files ------------------------------------------------------------


def _toml_load(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def scenario_from_dict(d: dict, seed: int | None = None) -> ScenarioSpec:
    allowed = {"n", "p", "s", "scenario", "sigma2_true", "signal_low", "signal_high", "seed"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown scenario keys: {sorted(extra)}")
    kw = dict(d)
    if seed is not None:
        kw["seed"] = seed
    for key in ("n", "p", "s"):
        if key not in kw:
            raise ValueError(f"scenario needs {key!r}")
    return ScenarioSpec(**kw)


def sampler_from_dict(d: dict) -> SamplerConfig:
    allowed = {"n_iter", "n_burn", "thin", "seed", "fixed_sigma", "beta_method"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown sampler keys: {sorted(extra)}")
    return SamplerConfig(**d)


def load_study_config(path, seed: int | None = None) -> StudyConfig:
    """Read a TOML file with ``[scenario]``, ``[sampler]`` and ``[study]`` tables."""
    raw = _toml_load(path)
    return study_from_dict(raw, seed)


def study_from_dict(raw: dict, seed: int | None = None) -> StudyConfig:
    extra = set(raw) - {"scenario", "sampler", "study"}
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    if "scenario" not in raw:
        raise ValueError("config needs a [scenario] section")
    scen = scenario_from_dict(raw["scenario"], seed)
    samp = sampler_from_dict(raw.get("sampler", {}))
    study = dict(raw.get("study", {}))
    allowed = {"m_grid", "replications", "comparators", "bins", "workers", "keep_chains"}
    extra = set(study) - allowed
    if extra:
        raise ValueError(f"unknown study keys: {sorted(extra)}")
    return StudyConfig(scenario=scen, sampler=samp, **study)
