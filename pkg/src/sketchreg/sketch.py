"""Gaussian row-compression of regression data.

A sketch matrix ``phi`` of shape ``(m, n)`` has i.i.d. N(0, 1/n) entries and
maps the raw data ``(y, X)`` with ``n`` rows to ``(phi @ y, phi @ X)`` with
``m`` rows. Row ``i`` of ``phi`` is drawn from its own random substream,
``SeedSequence(seed, spawn_key=(i,))``, so the matrix is the same regardless
of how many threads generate it.
"""
from __future__ import annotations

import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SketchKind",
    "SketchMatrix",
    "SketchedData",
    "IsometryReport",
    "SketchError",
    "generate_sketch_matrix",
    "apply_sketch",
    "verify_isometry",
    "content_digest",
    "save_sketched",
    "load_sketched",
    "read_raw_csv",
]

DEFAULT_BLOCK_ROWS = 4096


class SketchError(ValueError):
    """Invalid sketch dimensions or data."""


class SketchKind(enum.Enum):
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class SketchMatrix:
    """The ``m x n`` compression operator and the seed that produced it.

    ``strict=False`` skips the ``m < n`` check; it exists so tests can inject
    identity or zero operators.
    """

    entries: np.ndarray
    seed: int | None
    kind: SketchKind = SketchKind.GAUSSIAN
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2:
            raise SketchError("sketch entries must be a 2-d array")
        m, n = e.shape
        if m < 1 or n < 1:
            raise SketchError("sketch dimensions must be positive")
        if self.strict and m >= n:
            raise SketchError("sketch must strictly compress (m < n)")
        if not np.all(np.isfinite(e)):
            raise SketchError("sketch entries must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True, eq=False)
class SketchedData:
    """Compressed observations. The raw data is represented only by a digest."""

    y_tilde: np.ndarray
    x_tilde: np.ndarray
    source_hash: str = ""
    seed: int | None = None

    def __post_init__(self):
        y = np.asarray(self.y_tilde, dtype=float).reshape(-1)
        x = np.asarray(self.x_tilde, dtype=float)
        if x.ndim != 2:
            raise SketchError("x_tilde must be 2-d")
        if x.shape[0] != y.shape[0]:
            raise SketchError(
                f"row mismatch: len(y_tilde)={y.shape[0]}, rows(x_tilde)={x.shape[0]}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise SketchError("sketched data must be finite")
        object.__setattr__(self, "y_tilde", y)
        object.__setattr__(self, "x_tilde", x)

    @property
    def m(self) -> int:
        return self.x_tilde.shape[0]

    @property
    def p(self) -> int:
        return self.x_tilde.shape[1]

    @classmethod
    def uncompressed(cls, y, x) -> "SketchedData":
        """Wrap raw ``(y, X)`` so the samplers can fit the full-data model."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return cls(y, x, source_hash=content_digest(y, x), seed=None)

    def digest(self) -> str:
        return content_digest(self.y_tilde, self.x_tilde)


@dataclass(frozen=True)
class IsometryReport:
    min_eig: float
    max_eig: float
    spectral_dev: float
    lemma1_lower: float
    lemma1_upper: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "spectral_dev": self.spectral_dev,
            "lemma1_lower": self.lemma1_lower,
            "lemma1_upper": self.lemma1_upper,
            "slack": self.slack,
            "pass": self.passed,
        }


def content_digest(*arrays) -> str:
    """SHA-256 over shapes and float64 bytes of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _row_block(seed: int, n: int, rows: range) -> np.ndarray:
    scale = 1.0 / np.sqrt(n)
    out = np.empty((len(rows), n))
    for k, i in enumerate(rows):
        ss = np.random.SeedSequence(seed, spawn_key=(i,))
        out[k] = np.random.Generator(np.random.PCG64(ss)).standard_normal(n)
    out *= scale
    return out


def generate_sketch_matrix(m: int, n: int, seed: int, workers: int = 1) -> SketchMatrix:
    """Draw an ``m x n`` Gaussian sketch with i.i.d. N(0, 1/n) entries.

    Rows come from independent substreams keyed by row index, so the result
    depends only on ``(m, n, seed)`` and never on ``workers``.
    """
    m = int(m)
    n = int(n)
    if m < 1 or n < 1:
        raise SketchError("sketch dimensions must be positive")
    if m >= n:
        raise SketchError("sketch must strictly compress (m < n)")
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise SketchError("seed must be a 64-bit unsigned integer")

    if workers <= 1 or m < 2 * workers:
        entries = _row_block(seed, n, range(m))
    else:
        bounds = np.linspace(0, m, workers + 1).astype(int)
        chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda r: _row_block(seed, n, r), chunks))
        entries = np.vstack(blocks)
    return SketchMatrix(entries, seed)


def apply_sketch(
    phi: SketchMatrix, y, x, block_rows: int = DEFAULT_BLOCK_ROWS
) -> SketchedData:
    """Compute ``(phi @ y, phi @ x)`` streaming over row blocks of ``x``.

    Peak extra memory is ``O(m*p + block_rows*p)``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = phi.n
    if y.shape[0] != n or x.shape[0] != n:
        raise SketchError(
            f"dimension mismatch: sketch has n={n}, len(y)={y.shape[0]}, rows(x)={x.shape[0]}"
        )
    if block_rows < 1:
        raise SketchError("block_rows must be positive")

    e = phi.entries
    y_t = np.zeros(phi.m)
    x_t = np.zeros((phi.m, x.shape[1]))
    # separate hashers keep the digest independent of block size
    hy = hashlib.sha256(repr(y.shape).encode())
    hx = hashlib.sha256(repr(x.shape).encode())
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        yb = y[start:stop]
        xb = x[start:stop]
        if not (np.all(np.isfinite(yb)) and np.all(np.isfinite(xb))):
            raise SketchError("input data contains non-finite entries")
        hy.update(np.ascontiguousarray(yb).tobytes())
        hx.update(np.ascontiguousarray(xb).tobytes())
        eb = e[:, start:stop]
        y_t += eb @ yb
        x_t += eb @ xb
    return SketchedData(y_t, x_t, source_hash=hashlib.sha256(hy.digest() + hx.digest()).hexdigest(), seed=phi.seed)


def eigen_envelope(m: int, n: int) -> tuple[float, float]:
    """Almost-sure eigenvalue envelope ((sqrt(n) -+ sqrt(m)) / sqrt(n))^2."""
    r = np.sqrt(m / n)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def verify_isometry(phi: SketchMatrix, slack: float = 0.05) -> IsometryReport:
    """Check the spectrum of ``phi @ phi.T`` against the envelope, widened by ``slack``."""
    if slack < 0:
        raise SketchError("slack must be nonnegative")
    e = phi.entries
    gram = e @ e.T
    if not np.all(np.isfinite(gram)):
        raise SketchError("gram matrix is not finite")
    eig = np.linalg.eigvalsh(gram)
    lo, hi = eigen_envelope(phi.m, phi.n)
    min_eig = max(float(eig[0]), 0.0)
    max_eig = max(float(eig[-1]), min_eig)
    dev = float(np.max(np.abs(eig - 1.0)))
    ok = bool(min_eig >= lo - slack and max_eig <= hi + slack)
    return IsometryReport(min_eig, max_eig, dev, lo, hi, float(slack), ok)


# --- persistence -----------------------------------------------------------


def save_sketched(data: SketchedData, directory, n: int | None = None) -> list[Path]:
    """Write ``y_tilde.csv``, ``x_tilde.csv`` and ``meta.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "y_tilde.csv", d / "x_tilde.csv", d / "meta.json"]
    np.savetxt(paths[0], data.y_tilde[:, None], delimiter=",", fmt="%.17g")
    np.savetxt(paths[1], data.x_tilde, delimiter=",", fmt="%.17g")
    meta = {
        "m": data.m,
        "n": n,
        "p": data.p,
        "seed": data.seed,
        "source_hash": data.source_hash,
        "kind": SketchKind.GAUSSIAN.value,
    }
    paths[2].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def load_sketched(directory) -> tuple[SketchedData, dict]:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    y = np.loadtxt(d / "y_tilde.csv", delimiter=",", ndmin=1)
    x = np.loadtxt(d / "x_tilde.csv", delimiter=",", ndmin=2)
    if x.shape[0] != y.shape[0] and x.shape[1] == y.shape[0] and meta.get("p") == 1:
        x = x.T
    data = SketchedData(y, x, source_hash=meta.get("source_hash", ""), seed=meta.get("seed"))
    if data.m != meta["m"] or data.p != meta["p"]:
        raise SketchError("sketched bundle does not match its meta.json")
    return data, meta


def read_raw_csv(path, response: str | int = 0) -> tuple[np.ndarray, np.ndarray, list[str] | None]:
    """Read a CSV whose ``response`` column is y and whose other columns are features.

    ``response`` is a column name (requires a header row) or a 0-based index.
    A header is detected when the first row does not parse as numbers.
    """
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
    cells = [c.strip() for c in first.split(",")]
    try:
        [float(c) for c in cells]
        header = None
    except ValueError:
        header = cells
    table = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if isinstance(response, str) and not response.lstrip("-").isdigit():
        if header is None:
            raise SketchError(f"response column {response!r} named but file has no header")
        if response not in header:
            raise SketchError(f"response column {response!r} not in header")
        idx = header.index(response)
    else:
        idx = int(response)
        if idx < 0:
            idx += table.shape[1]
    if not 0 <= idx < table.shape[1]:
        raise SketchError(f"response column index {idx} out of range")
    y = table[:, idx]
    x = np.delete(table, idx, axis=1)
    names = None if header is None else [h for k, h in enumerate(header) if k != idx]
    return y, x, names
