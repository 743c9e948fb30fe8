"""Blocked Gibbs sampler for horseshoe linear regression on (sketched) data.

Model::

    y_tilde = X_tilde @ beta + eps,     eps ~ N(0, sigma2 I_m)
    beta_j ~ N(0, sigma2 tau^2 lambda_j^2)
    lambda_j, tau ~ half-Cauchy(0, 1),   p(sigma2) propto 1 / sigma2

Half-Cauchy scales use the inverse-gamma auxiliary representation
(``x^2 | a ~ IG(1/2, 1/a)``, ``a ~ IG(1/2, 1)``), which makes every
conditional conjugate. One iteration updates, in order, beta, (lambda, nu),
sigma2, and (tau, xi).
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.blas import dsyrk

from .sketch import SketchedData

__all__ = [
    "HorseshoeState",
    "SamplerConfig",
    "ChainOutput",
    "SamplerError",
    "DIRECT_MAX_P",
    "sample_beta_fast",
    "sample_beta_direct",
    "sample_inv_gamma",
    "update_local_scales",
    "update_global_scale",
    "update_sigma",
    "initial_state",
    "run_chain",
]

DIRECT_MAX_P = 2000
SCALE_FLOOR = 1e-300
SCALE_CEIL = 1e300
UPDATE_BLOCKS = ("beta", "local", "sigma", "global")


class SamplerError(RuntimeError):
    """A Gibbs update produced an invalid value or a factorization failed."""


@dataclass
class HorseshoeState:
    beta: np.ndarray
    lambda_: np.ndarray
    nu: np.ndarray
    tau: float
    xi: float
    sigma2: float

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def diag_delta(self) -> np.ndarray:
        """Diagonal of the prior scale matrix, tau^2 * lambda_j^2."""
        return np.clip(self.tau**2 * self.lambda_**2, SCALE_FLOOR, SCALE_CEIL)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.beta, self.lambda_, self.nu, [self.tau, self.xi, self.sigma2]):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()[:16]

    def check(self) -> None:
        if not np.all(np.isfinite(self.beta)):
            raise SamplerError("beta has non-finite entries")
        for name in ("lambda_", "nu"):
            v = getattr(self, name)
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise SamplerError(f"{name.rstrip('_')} left (0, inf)")
        for name in ("tau", "xi", "sigma2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise SamplerError(f"{name} left (0, inf): {v!r}")


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 10_000
    n_burn: int = 5_000
    thin: int = 1
    seed: int = 0
    fixed_sigma: float | None = None
    beta_method: str = "fast"

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("need 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.fixed_sigma is not None and not self.fixed_sigma > 0:
            raise ValueError("fixed_sigma must be positive")
        if self.beta_method not in ("fast", "direct", "auto"):
            raise ValueError(f"unknown beta_method {self.beta_method!r}")

    @property
    def kept(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin

    def to_dict(self) -> dict:
        return {
            "n_iter": self.n_iter,
            "n_burn": self.n_burn,
            "thin": self.thin,
            "seed": self.seed,
            "fixed_sigma": self.fixed_sigma,
            "beta_method": self.beta_method,
        }


@dataclass
class ChainOutput:
    beta_draws: np.ndarray
    tau_draws: np.ndarray
    sigma_draws: np.ndarray
    wall_seconds: float
    per_iter_seconds: float
    seed: int
    clamp_counts: dict = field(default_factory=dict)
    config: SamplerConfig | None = None
    lambda_draws: np.ndarray | None = None

    @property
    def kept(self) -> int:
        return self.beta_draws.shape[0]

    def digest(self) -> str:
        """Digest of the draws only; timings are excluded."""
        h = hashlib.sha256()
        for a in (self.beta_draws, self.tau_draws, self.sigma_draws):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()


# --- beta | lambda, tau, sigma2 ----------------------------------------------


def _check_delta(diag_delta, p):
    d = np.asarray(diag_delta, dtype=float)
    if d.shape != (p,):
        raise SamplerError(f"diag_delta has shape {d.shape}, expected ({p},)")
    if not (np.all(np.isfinite(d)) and np.all(d > 0)):
        raise SamplerError("diag_delta entries must be positive and finite")
    return d


def sample_beta_fast(data: SketchedData, diag_delta, sigma: float, rng) -> np.ndarray:
    """One exact draw of beta from its Gaussian full conditional in O(m^3 + m^2 p).

    Draws ``v1 ~ N(0, sigma^2 D)`` and ``v2 ~ N(0, I_m)``, solves
    ``(X D X' + I_m) w = y/sigma - (X v1/sigma + v2)`` by Cholesky and returns
    ``v1 + sigma D X' w``. Only m x m and m x p work arrays are allocated.
    """
    x = data.x_tilde
    m, p = x.shape
    d = _check_delta(diag_delta, p)
    if not sigma > 0:
        raise SamplerError("sigma must be positive")
    sd = np.sqrt(d)

    xs = x * sd
    # lower triangle of xs @ xs.T; xs.T is Fortran-ordered so no copy is made
    gram = dsyrk(1.0, xs.T, trans=1, lower=1)
    del xs
    gram[np.diag_indices(m)] += 1.0
    try:
        chol = cholesky(gram, lower=True, overwrite_a=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SamplerError(
            f"Cholesky of (X D X' + I_m) failed (m={m}, p={p}, "
            f"delta range [{d.min():.3g}, {d.max():.3g}], sigma={sigma:.3g}): {exc}"
        ) from exc

    v1 = sigma * sd * rng.standard_normal(p)
    v2 = rng.standard_normal(m)
    v3 = x @ v1 / sigma + v2
    v4 = cho_solve((chol, True), data.y_tilde / sigma - v3)
    return v1 + sigma * d * (x.T @ v4)


def sample_beta_direct(
    data: SketchedData, diag_delta, sigma: float, rng, gram=None, xty=None
) -> np.ndarray:
    """Reference draw that factorizes the p x p precision ``X'X + D^{-1}``.

    ``gram`` (``X'X``) and ``xty`` (``X'y``) may be passed in precomputed.
    """
    x = data.x_tilde
    p = x.shape[1]
    if p > DIRECT_MAX_P:
        raise SamplerError(f"direct sampler refuses p={p} > {DIRECT_MAX_P}")
    d = _check_delta(diag_delta, p)
    if not sigma > 0:
        raise SamplerError("sigma must be positive")
    if gram is None:
        gram = x.T @ x
    if xty is None:
        xty = x.T @ data.y_tilde
    prec = gram + np.diag(1.0 / d)
    try:
        chol = cholesky(prec, lower=True, overwrite_a=True)
    except (LinAlgError, ValueError) as exc:
        raise SamplerError(f"Cholesky of X'X + D^-1 failed (p={p}): {exc}") from exc
    mean = cho_solve((chol, True), xty)
    z = rng.standard_normal(p)
    return mean + sigma * solve_triangular(chol, z, lower=True, trans="T")


# --- scale updates -----------------------------------------------------------


def sample_inv_gamma(shape, scale, rng) -> np.ndarray:
    """Draws from InvGamma(shape, scale), density propto x^(-shape-1) exp(-scale/x)."""
    return np.asarray(scale, dtype=float) / rng.gamma(shape, 1.0, size=np.shape(scale))


def _clamp(v, counts, key):
    v = np.asarray(v, dtype=float)
    bad = (v < SCALE_FLOOR) | (v > SCALE_CEIL)
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        counts[key] = counts.get(key, 0) + n_bad
        v = np.clip(v, SCALE_FLOOR, SCALE_CEIL)
    return v


def update_local_scales(state: HorseshoeState, rng, clamp_counts=None):
    """Draw ``lambda_j^2 | nu_j, beta_j`` then ``nu_j | lambda_j``, all j at once.

    Returns the new ``(lambda, nu)``; ``state`` is not modified.
    """
    counts = {} if clamp_counts is None else clamp_counts
    # divide before squaring so tiny tau overflows to inf (then clamped) rather than 0/0
    with np.errstate(over="ignore"):
        scale = 1.0 / state.nu + (state.beta / state.tau) ** 2 / (2.0 * state.sigma2)
    lam2 = _clamp(sample_inv_gamma(1.0, scale, rng), counts, "lambda2")
    nu = _clamp(sample_inv_gamma(1.0, 1.0 + 1.0 / lam2, rng), counts, "nu")
    lam = np.sqrt(lam2)
    if not (np.all(np.isfinite(lam)) and np.all(lam > 0) and np.all(np.isfinite(nu))):
        raise SamplerError("local scale update produced invalid values")
    return lam, nu


def update_global_scale(state: HorseshoeState, rng, clamp_counts=None):
    """Draw ``tau^2 | xi, beta, lambda, sigma2`` then ``xi | tau``. Returns ``(tau, xi)``."""
    counts = {} if clamp_counts is None else clamp_counts
    p = state.p
    with np.errstate(over="ignore"):
        ssq = float(np.sum((state.beta / state.lambda_) ** 2))
    scale = 1.0 / state.xi + ssq / (2.0 * state.sigma2)
    tau2 = float(_clamp(sample_inv_gamma((p + 1) / 2.0, scale, rng), counts, "tau2"))
    xi = float(_clamp(sample_inv_gamma(1.0, 1.0 + 1.0 / tau2, rng), counts, "xi"))
    tau = np.sqrt(tau2)
    if not (np.isfinite(tau) and tau > 0 and np.isfinite(xi) and xi > 0):
        raise SamplerError("global scale update produced invalid values")
    return float(tau), xi


def update_sigma(data: SketchedData, state: HorseshoeState, rng, clamp_counts=None) -> float:
    """Draw sigma2 from InvGamma((m+p)/2, (|y - X beta|^2 + sum beta_j^2/(tau^2 lambda_j^2))/2)."""
    counts = {} if clamp_counts is None else clamp_counts
    m, p = data.x_tilde.shape
    resid = data.y_tilde - data.x_tilde @ state.beta if p else data.y_tilde
    rss = float(resid @ resid)
    pen = float(np.sum(state.beta**2 / (state.tau**2 * state.lambda_**2))) if p else 0.0
    shape = 0.5 * (m + p)
    scale = 0.5 * (rss + pen)
    if not (shape > 0 and scale > 0 and np.isfinite(scale)):
        raise SamplerError(f"degenerate sigma2 conditional: shape={shape}, scale={scale}")
    return float(_clamp(sample_inv_gamma(shape, scale, rng), counts, "sigma2"))


# --- driver ------------------------------------------------------------------


def initial_state(data: SketchedData, fixed_sigma: float | None = None) -> HorseshoeState:
    p = data.p
    if fixed_sigma is not None:
        s2 = float(fixed_sigma) ** 2
    else:
        s2 = float(np.var(data.y_tilde, ddof=1)) if data.m > 1 else 1.0
        if not s2 > 0:
            s2 = 1.0
    return HorseshoeState(
        beta=np.zeros(p), lambda_=np.ones(p), nu=np.ones(p), tau=1.0, xi=1.0, sigma2=s2
    )


def _resolve_method(method: str, data: SketchedData) -> str:
    if method != "auto":
        return method
    # direct costs O(p^3) against O(m^3 + m^2 p) for fast
    return "direct" if data.p <= min(data.m, DIRECT_MAX_P) else "fast"


def run_chain(
    data: SketchedData,
    config: SamplerConfig,
    *,
    init: HorseshoeState | None = None,
    frozen=(),
    keep_lambda: bool = False,
) -> ChainOutput:
    """Run the blocked Gibbs sampler and keep thinned post-burn-in draws.

    ``frozen`` names update blocks to skip (any of ``"beta"``, ``"local"``,
    ``"sigma"``, ``"global"``); setting ``config.fixed_sigma`` freezes sigma.
    """
    frozen = frozenset(frozen)
    unknown = frozen - set(UPDATE_BLOCKS)
    if unknown:
        raise ValueError(f"unknown update blocks {sorted(unknown)}")
    if config.fixed_sigma is not None:
        frozen = frozen | {"sigma"}
    method = _resolve_method(config.beta_method, data)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    if init is None:
        state = initial_state(data, config.fixed_sigma)
    else:
        state = replace(
            init,
            beta=np.array(init.beta, dtype=float),
            lambda_=np.array(init.lambda_, dtype=float),
            nu=np.array(init.nu, dtype=float),
        )
        if config.fixed_sigma is not None:
            state.sigma2 = float(config.fixed_sigma) ** 2
    state.check()

    gram = xty = None
    if method == "direct" and "beta" not in frozen:
        gram = data.x_tilde.T @ data.x_tilde
        xty = data.x_tilde.T @ data.y_tilde

    kept = config.kept
    p = data.p
    beta_draws = np.empty((kept, p))
    tau_draws = np.empty(kept)
    sigma_draws = np.empty(kept)
    lambda_draws = np.empty((kept, p)) if keep_lambda else None
    counts: dict = {}

    k = 0
    t0 = time.perf_counter()
    for it in range(config.n_iter):
        try:
            if "beta" not in frozen:
                sigma = np.sqrt(state.sigma2)
                dd = state.diag_delta()
                if method == "fast":
                    state.beta = sample_beta_fast(data, dd, sigma, rng)
                else:
                    state.beta = sample_beta_direct(data, dd, sigma, rng, gram, xty)
            if "local" not in frozen:
                state.lambda_, state.nu = update_local_scales(state, rng, counts)
            if "sigma" not in frozen:
                state.sigma2 = update_sigma(data, state, rng, counts)
            if "global" not in frozen:
                state.tau, state.xi = update_global_scale(state, rng, counts)
            state.check()
        except SamplerError as exc:
            raise SamplerError(
                f"iteration {it} failed: {exc} [state digest {state.digest()}]"
            ) from exc

        j = it - config.n_burn + 1
        if j > 0 and j % config.thin == 0:
            beta_draws[k] = state.beta
            tau_draws[k] = state.tau
            sigma_draws[k] = np.sqrt(state.sigma2)
            if keep_lambda:
                lambda_draws[k] = state.lambda_
            k += 1
    wall = max(time.perf_counter() - t0, 1e-9)

    return ChainOutput(
        beta_draws=beta_draws,
        tau_draws=tau_draws,
        sigma_draws=sigma_draws,
        wall_seconds=wall,
        per_iter_seconds=wall / config.n_iter,
        seed=config.seed,
        clamp_counts=counts,
        config=config,
        lambda_draws=lambda_draws,
    )
