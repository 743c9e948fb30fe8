"""Command-line interface.

Subcommands: ``simulate``, ``sketch``, ``fit``, ``compare``, ``study``,
``verify`` and ``template``. Exit codes: 0 success, 2 invalid input,
3 numerical failure, 4 finished with skipped or failed cells.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .sampler import SamplerConfig, SamplerError, run_chain
from .simgen import (
    Method,
    compare_on_data,
    generate_dataset,
    load_study_config,
    run_study,
    scenario_from_dict,
    _toml_load,
)
from .sketch import (
    SketchError,
    SketchedData,
    apply_sketch,
    generate_sketch_matrix,
    load_sketched,
    read_raw_csv,
    save_sketched,
)

log = logging.getLogger("sketchreg")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4

TEMPLATE = """\
# sketchreg study configuration (TOML)

[scenario]
n = 800              # raw sample size
p = 400              # number of features
s = 5                # number of nonzero coefficients
scenario = 1         # 1 = independent features, 2 = compound (pairwise correlation 0.5)
sigma2_true = 1.5    # noise variance of the generated response
signal_low = 1.5     # nonzero magnitudes are uniform on [signal_low, signal_high]
signal_high = 3.0    # signs are +/- with probability 1/2
seed = 2024          # master seed; --seed overrides it

[sampler]
n_iter = 4000        # total Gibbs iterations
n_burn = 2000        # discarded warm-up iterations
thin = 1
# fixed_sigma = 1.0  # uncomment to hold sigma fixed

[study]
m_grid = [50, 100, 200, 400]           # sketch sizes, each < n
replications = 10
comparators = ["CHS", "FullHS"]        # any of CHS, FullHS, SubsampleHS
bins = 512                             # histogram bins for posterior accuracy
workers = 1                            # parallel replications
keep_chains = false                    # write per-cell draws
"""


class UsageError(Exception):
    pass


# --- helpers -----------------------------------------------------------------


def _digest_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _file_digest(path) -> str:
    return _digest_bytes(Path(path).read_bytes())


class Manifest:
    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.seeds: dict = {}
        self.paths: list[Path] = []
        self.timings: dict = {}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 6)

    def add(self, *paths):
        self.paths.extend(Path(p) for p in paths)

    def write(self, out_dir) -> Path:
        out = Path(out_dir) / "manifest.json"
        canon = json.dumps(self.config, sort_keys=True, default=str).encode()
        payload = {
            "command": self.command,
            "config": self.config,
            "config_digest": _digest_bytes(canon),
            "seeds": self.seeds,
            "artifact_paths": sorted(str(p) for p in self.paths),
            "artifact_digests": {str(p): _file_digest(p) for p in sorted(self.paths)},
            "versions": {"sketchreg": __version__, "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "timings": self.timings,
        }
        out.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        return out


def _save_vector(path, v):
    np.savetxt(path, np.asarray(v, dtype=float)[:, None], delimiter=",", fmt="%.17g")


def _load_bundle(path, response):
    """Return ``(kind, payload)`` for a data path.

    ``kind`` is ``"sketched"`` (payload ``(SketchedData, meta)``) or ``"raw"``
    (payload ``(x, y, beta_true_or_None)``).
    """
    p = Path(path)
    if p.is_dir():
        if (p / "meta.json").exists():
            return "sketched", load_sketched(p)
        if (p / "X.csv").exists() and (p / "y.csv").exists():
            x = np.loadtxt(p / "X.csv", delimiter=",", ndmin=2)
            y = np.loadtxt(p / "y.csv", delimiter=",", ndmin=1)
            bt = p / "beta_true.csv"
            beta = np.loadtxt(bt, delimiter=",", ndmin=1) if bt.exists() else None
            return "raw", (x, y, beta)
        raise UsageError(f"{p} holds neither a dataset (X.csv, y.csv) nor a sketch (meta.json)")
    if p.is_file():
        y, x, _ = read_raw_csv(p, response)
        return "raw", (x, y, None)
    raise UsageError(f"data path {p} does not exist")


def _sampler_from_args(args) -> SamplerConfig:
    return SamplerConfig(
        n_iter=args.iters, n_burn=args.burn, thin=args.thin, seed=args.seed,
        fixed_sigma=args.fixed_sigma,
    )


def _write_chain(out_dir, chain) -> list[Path]:
    out_dir = Path(out_dir)
    p = chain.beta_draws.shape[1]
    path = out_dir / "chain.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"beta_{j}" for j in range(p)] + ["tau", "sigma"])
        for row, t, s in zip(chain.beta_draws, chain.tau_draws, chain.sigma_draws):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t)), repr(float(s))])
    side = dg.write_json(out_dir / "chain.json", {
        "config": chain.config.to_dict() if chain.config else None,
        "seed": chain.seed,
        "kept": chain.kept,
        "wall_seconds": chain.wall_seconds,
        "per_iter_seconds": chain.per_iter_seconds,
        "clamp_counts": chain.clamp_counts,
        "draws_digest": chain.digest(),
    })
    return [path, side]


# --- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    raw = _toml_load(args.config)
    if "scenario" not in raw:
        raise UsageError("config needs a [scenario] section")
    spec = scenario_from_dict(raw["scenario"], args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("simulate", {"scenario": spec.to_dict(), "replication": args.replication})
    man.seeds["master"] = spec.seed
    with man.phase("generate"):
        x, y, beta = generate_dataset(spec, args.replication)
    with man.phase("write"):
        np.savetxt(out / "X.csv", x, delimiter=",", fmt="%.17g")
        _save_vector(out / "y.csv", y)
        _save_vector(out / "beta_true.csv", beta)
    man.add(out / "X.csv", out / "y.csv", out / "beta_true.csv")
    man.write(out)
    print(f"wrote n={spec.n} p={spec.p} s={spec.s} dataset to {out}")
    return EXIT_OK


def _sketch_raw(x, y, m, seed, man):
    n = x.shape[0]
    if m >= n:
        raise UsageError(f"sketch must strictly compress: m={m} >= n={n}")
    with man.phase("sketch"):
        phi = generate_sketch_matrix(m, n, seed)
        data = apply_sketch(phi, y, x)
    man.seeds["sketch"] = seed
    return data


def cmd_sketch(args) -> int:
    kind, payload = _load_bundle(args.data, args.response)
    if kind != "raw":
        raise UsageError("input is already sketched")
    x, y, _ = payload
    out = Path(args.out)
    man = Manifest("sketch", {"data": str(args.data), "m": args.m, "seed": args.seed})
    data = _sketch_raw(x, y, args.m, args.seed, man)
    man.add(*save_sketched(data, out, n=x.shape[0]))
    man.write(out)
    print(f"wrote m={data.m} p={data.p} sketch to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    kind, payload = _load_bundle(args.data, args.response)
    cfg = _sampler_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("fit", {"data": str(args.data), "m": args.m, "sampler": cfg.to_dict()})
    man.seeds["chain"] = cfg.seed

    x = beta_true = None
    if kind == "sketched":
        data, meta = payload
        if args.m is not None and args.m != data.m:
            raise UsageError(f"--m {args.m} disagrees with the sketch's m={data.m}")
    else:
        x, y, beta_true = payload
        if args.m is None:
            raise UsageError("--m is required for raw data")
        data = _sketch_raw(x, y, args.m, args.sketch_seed if args.sketch_seed is not None else args.seed, man)
        # the sketch, never the raw data, goes into the sketch directory
        man.add(*save_sketched(data, out / "sketch", n=x.shape[0]))

    with man.phase("sample"):
        chain = run_chain(data, cfg)
    man.add(*_write_chain(out, chain))

    with man.phase("diagnostics"):
        eff = dg.efficiency_report(chain.beta_draws, chain.wall_seconds)
        reports = {"efficiency": eff.summary()}
        est = None
        if beta_true is not None:
            est = dg.estimation_report(chain.beta_draws, beta_true, x)
            reports["estimation"] = est.summary()
            zero = np.asarray(beta_true)[np.asarray(beta_true) != 0]
            reports["zero_estimator_mse_nz"] = float(zero @ zero / zero.size) if zero.size else None
        man.add(dg.write_json(out / "reports.json", reports))
        if est is None:
            est = dg.estimation_report(chain.beta_draws, np.zeros(data.p))
        man.add(dg.write_per_coefficient_csv(out / "coefficients.csv", estimation=est, beta_true=beta_true))
    man.write(out)

    line = f"fit m={data.m} p={data.p}: kept={chain.kept} ess_mean={eff.ess_mean:.1f} " \
           f"sec/iter={chain.per_iter_seconds:.2e}"
    if "estimation" in reports:
        line += f" mse={reports['estimation']['mse']:.4g} mse_nz={reports['estimation']['mse_nz']}"
    print(line)
    return EXIT_OK


TABLE_COLUMNS = (
    "method", "m", "accuracy", "efficiency", "ess_mean", "per_iter_seconds",
    "mse", "mse_nz", "coverage_nz", "length_nz", "n_ok", "n_skipped",
)


def _write_table(path, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in TABLE_COLUMNS})


def cmd_compare(args) -> int:
    kind, payload = _load_bundle(args.data, args.response)
    if kind != "raw":
        raise UsageError("compare needs raw data (the full-data fit and sketches are built from it)")
    x, y, beta_true = payload
    n = x.shape[0]
    for m in args.m_grid:
        if m >= n:
            raise UsageError(f"sketch must strictly compress: m={m} >= n={n}")
    cfg = _sampler_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("compare", {
        "data": str(args.data), "m_grid": args.m_grid, "methods": [m.value for m in args.methods],
        "replications": args.replications, "sampler": cfg.to_dict(),
    })
    man.seeds["master"] = args.seed

    from .simgen import StudyReport  # local: only compare needs report aggregation
    cells = []
    with man.phase("fit"):
        for rep in range(args.replications):
            c, _ = compare_on_data(x, y, beta_true, args.m_grid, args.methods, cfg, args.seed,
                                   replication=rep, bins=args.bins)
            cells.extend(c)
    report = StudyReport(config=None, cells=cells)
    rows = report.table()
    _write_table(out / "table.csv", rows)
    (out / "cells.csv").write_text(report.to_csv())
    man.add(out / "table.csv", out / "cells.csv")
    man.write(out)
    for r in rows:
        acc = "" if r["accuracy"] is None else f" accuracy={r['accuracy']:.3f}"
        print(f"{r['method']:>12} m={r['m']:<5}{acc} sec/iter={r['per_iter_seconds']}")
    skipped = any(c["status"] != "ok" for c in cells)
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_study(args) -> int:
    config = load_study_config(args.config, args.seed)
    if args.workers is not None:
        from dataclasses import replace
        config = replace(config, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("study", config.to_dict())
    man.seeds["master"] = config.scenario.seed
    with man.phase("run"):
        report = run_study(config)
    report.to_csv(out / "cells.csv")
    report.to_json(out / "summary.json")
    _write_table(out / "table.csv", report.table())
    man.add(out / "cells.csv", out / "summary.json", out / "table.csv")
    if config.keep_chains or args.keep_chains:
        cdir = out / "chains"
        cdir.mkdir(exist_ok=True)
        for (method, m, rep), ch in report.chains.items():
            d = cdir / f"{method}_m{m}_r{rep}"
            d.mkdir(exist_ok=True)
            man.add(*_write_chain(d, ch))
    man.write(out)
    n_bad = sum(c["status"] != "ok" for c in report.cells)
    print(f"study: {len(report.cells)} cells, {n_bad} skipped/failed -> {out}")
    return EXIT_PARTIAL if n_bad else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.scale, seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        man = Manifest("verify", {"scale": args.scale, "seed": args.seed})
        man.seeds["master"] = args.seed
        man.add(dg.write_json(out / "verify.json", {
            "results": [{"name": r.name, "pass": r.passed, "detail": r.detail, "values": r.values}
                        for r in results]}))
        man.write(out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_template(args) -> int:
    sys.stdout.write(TEMPLATE)
    return EXIT_OK


# --- argument parsing --------------------------------------------------------


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _int_list(s):
    try:
        vals = [_positive_int(t) for t in s.replace(" ", "").split(",") if t]
    except argparse.ArgumentTypeError:
        raise
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _methods(s):
    try:
        return [Method.parse(t) for t in s.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _add_sampler_flags(p, iters=4000, burn=2000):
    p.add_argument("--iters", type=_positive_int, default=iters, help="total Gibbs iterations")
    p.add_argument("--burn", type=int, default=burn, help="burn-in iterations")
    p.add_argument("--thin", type=_positive_int, default=1)
    p.add_argument("--seed", type=_seed, default=0, help="seed for all randomness")
    p.add_argument("--fixed-sigma", type=_positive_float, default=None,
                   help="hold sigma fixed at this value")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sketchreg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sketchreg {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("config", help="TOML config with a [scenario] table")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed, default=None, help="override the scenario seed")
    p.add_argument("--replication", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sketch", help="compress a dataset and write the sketch bundle")
    p.add_argument("data")
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--response", default="0", help="response column name or index (raw CSV)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("fit", help="sketch (if needed) and fit the horseshoe model")
    p.add_argument("data", help="dataset directory, raw CSV, or sketch directory")
    p.add_argument("--m", type=_positive_int, default=None)
    p.add_argument("--sketch-seed", type=_seed, default=None, help="defaults to --seed")
    p.add_argument("--response", default="0")
    p.add_argument("--out", required=True)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="compare methods over a grid of m")
    p.add_argument("data")
    p.add_argument("--m-grid", type=_int_list, required=True, help="comma-separated, e.g. 50,100")
    p.add_argument("--methods", type=_methods, default=[Method.CHS, Method.FULL_HS])
    p.add_argument("--replications", type=_positive_int, default=1)
    p.add_argument("--bins", type=_positive_int, default=dg.DEFAULT_BINS)
    p.add_argument("--response", default="0")
    p.add_argument("--out", required=True)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study", help="run a replicated simulation study from a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed, default=None, help="override the master seed")
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--keep-chains", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("verify", help="run built-in property checks")
    p.add_argument("--scale", choices=("quick", "full"), default="quick")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("template", help="print a commented config template")
    p.set_defaults(func=cmd_template)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "burn", None) is not None and hasattr(args, "iters"):
        if not 0 <= args.burn < args.iters:
            parser.error("--burn must satisfy 0 <= burn < iters")
    try:
        return args.func(args)
    except (UsageError, SketchError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SamplerError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
