"""Gaussian-process regression on the periodic cube [0, 2*pi)^D.

The workhorse covariance is a product of first-order trigonometric factors
whose feature space is exactly the span of per-axis sinusoids, so posterior
samples inherit the objective's functional form.  A higher-order variant,
the Gaussian RBF, and the exp-sine periodic kernel are available as
baselines.  Hyperparameter tuning is a grid search on the smoothness
parameter driven by the marginal likelihood.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtri
from scipy.stats import qmc

from .circuits import wrap_angles
from .kv import format_kv, parse_kv

KERNEL_FAMILIES = ("vqe", "vqe-higher-order", "rbf", "periodic")
SAMPLERS = ("plain-mc", "low-discrepancy")


class FactorizationError(RuntimeError):
    """Raised when a covariance stays indefinite after jitter escalation."""


@dataclass(frozen=True)
class KernelConfig:
    """Covariance family plus hyperparameters.

    sigma0_sq is the prior variance (energy^2 units), gamma the smoothness.
    `orders` gives the per-dimension sinusoid order for the higher-order
    family and is ignored otherwise.
    """

    family: str = "vqe"
    sigma0_sq: float = 1.0
    gamma: float = 2.0
    orders: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.sigma0_sq <= 0:
            raise ValueError("sigma0_sq must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.family == "vqe-higher-order":
            if self.orders is None or any(v < 1 for v in self.orders):
                raise ValueError("higher-order family needs per-dimension orders >= 1")

    def with_gamma(self, gamma: float) -> "KernelConfig":
        return replace(self, gamma=float(gamma))


def _order_vector(cfg: KernelConfig, dim: int) -> np.ndarray:
    if cfg.family == "vqe":
        return np.ones(dim, dtype=int)
    if len(cfg.orders) != dim:
        raise ValueError(f"orders length {len(cfg.orders)} != dimension {dim}")
    return np.asarray(cfg.orders, dtype=int)


def _cos_harmonic_sum(delta: np.ndarray, order: int) -> np.ndarray:
    """sum_{v=1..order} cos(v*delta) via the Chebyshev recurrence."""
    c1 = np.cos(delta)
    total = c1.copy()
    prev, cur = np.ones_like(c1), c1
    for _ in range(order - 1):
        prev, cur = cur, 2.0 * c1 * cur - prev
        total += cur
    return total


def kernel_matrix(cfg: KernelConfig, x1, x2) -> np.ndarray:
    """Cross-covariance matrix for row-stacked inputs of shape (N, D), (M, D)."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if x1.shape[1] != x2.shape[1]:
        raise ValueError(f"dimension mismatch: {x1.shape[1]} vs {x2.shape[1]}")
    dim = x1.shape[1]

    if cfg.family == "rbf":
        sq = np.sum((x1[:, None, :] - x2[None, :, :]) ** 2, axis=-1)
        return cfg.sigma0_sq * np.exp(-sq / (2.0 * cfg.gamma**2))
    if cfg.family == "periodic":
        arg = np.sum(np.sin((x1[:, None, :] - x2[None, :, :]) / 2.0) ** 2, axis=-1)
        return cfg.sigma0_sq * np.exp(-arg / (2.0 * cfg.gamma**2))

    g2 = cfg.gamma**2
    orders = _order_vector(cfg, dim)
    out = np.full((x1.shape[0], x2.shape[0]), cfg.sigma0_sq)
    for d in range(dim):
        delta = x1[:, d, None] - x2[None, :, d]
        if orders[d] == 1:
            harm = np.cos(delta)
        else:
            harm = _cos_harmonic_sum(delta, int(orders[d]))
        out *= (g2 + 2.0 * harm) / (g2 + 2.0 * orders[d])
    return out


def kernel_eval(cfg: KernelConfig, x, x2) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(kernel_matrix(cfg, x[None, :], x2[None, :])[0, 0])


def kernel_grad(cfg: KernelConfig, x1, x) -> np.ndarray:
    """d k(x1_n, x) / d x, shape (N, D); used by gradient-based acquisition search."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x = np.asarray(x, dtype=float)
    k = kernel_matrix(cfg, x1, x[None, :])[:, 0]
    delta = x[None, :] - x1  # (N, D)
    if cfg.family == "rbf":
        return -k[:, None] * delta / cfg.gamma**2
    if cfg.family == "periodic":
        return -k[:, None] * np.sin(delta) / (4.0 * cfg.gamma**2)
    g2 = cfg.gamma**2
    orders = _order_vector(cfg, x1.shape[1])
    grad = np.empty_like(delta)
    for d in range(x1.shape[1]):
        order = int(orders[d])
        num = sum(-2.0 * v * np.sin(v * delta[:, d]) for v in range(1, order + 1))
        den = g2 + 2.0 * _cos_harmonic_sum(delta[:, d], order)
        grad[:, d] = k * num / den
    return grad


def feature_map(cfg: KernelConfig, x) -> np.ndarray:
    """Finite feature vector phi(x) with k(x, x') = phi(x) . phi(x').

    Per dimension the block is (gamma, sqrt2*cos(v*x_d).., sqrt2*sin(v*x_d)..)
    for v up to the axis order; blocks are chained by Kronecker products and
    the whole vector is scaled by sigma0 * prod_d (gamma^2 + 2 V_d)^(-1/2).
    Only the trigonometric families admit this decomposition.
    """
    if cfg.family not in ("vqe", "vqe-higher-order"):
        raise ValueError(f"no finite feature map for family {cfg.family!r}")
    x = np.asarray(x, dtype=float)
    orders = _order_vector(cfg, x.shape[0])
    scale = math.sqrt(cfg.sigma0_sq)
    vec = np.ones(1)
    for d in range(x.shape[0]):
        v = np.arange(1, orders[d] + 1)
        block = np.concatenate(
            [[cfg.gamma], math.sqrt(2.0) * np.cos(v * x[d]), math.sqrt(2.0) * np.sin(v * x[d])]
        )
        scale /= math.sqrt(cfg.gamma**2 + 2.0 * orders[d])
        vec = np.kron(vec, block)
    return scale * vec


@dataclass(frozen=True)
class Dataset:
    """Training inputs (N, D) wrapped into [0, 2*pi) and observations (N,)."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.asarray(self.outputs, dtype=float).reshape(-1)
        if inputs.size == 0:
            inputs = inputs.reshape(0, inputs.shape[1] if inputs.ndim == 2 else 0)
        if inputs.shape[0] != outputs.shape[0]:
            raise ValueError(f"{inputs.shape[0]} inputs vs {outputs.shape[0]} outputs")
        object.__setattr__(self, "inputs", wrap_angles(inputs))
        object.__setattr__(self, "outputs", outputs)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def append(self, new_inputs, new_outputs) -> "Dataset":
        new_inputs = np.atleast_2d(np.asarray(new_inputs, dtype=float))
        new_outputs = np.atleast_1d(np.asarray(new_outputs, dtype=float))
        return Dataset(
            np.vstack([self.inputs, new_inputs]),
            np.concatenate([self.outputs, new_outputs]),
        )

    def drop_oldest(self, count: int) -> "Dataset":
        return Dataset(self.inputs[count:], self.outputs[count:])


def _chol_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter 1e-10..1e-6 on failure."""
    scale = float(np.mean(np.diag(mat))) if mat.shape[0] else 1.0
    scale = scale if scale > 0 else 1.0
    for jitter in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        try:
            shifted = mat if jitter == 0.0 else mat + jitter * scale * np.eye(mat.shape[0])
            return np.linalg.cholesky(shifted), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance of size {mat.shape[0]} not positive definite after jitter 1e-6"
    )


@dataclass(frozen=True)
class GPModel:
    """Zero-mean GP regression fit: kernel + noise + data + cached factorization."""

    kernel: KernelConfig
    noise_sq: float
    data: Dataset
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    def __len__(self) -> int:
        return len(self.data)


def fit_gp(kernel: KernelConfig, noise_sq: float, data: Dataset) -> GPModel:
    """Factorize (K + noise*I) once; raises FactorizationError when indefinite."""
    if noise_sq < 0:
        raise ValueError("noise_sq must be >= 0")
    n = len(data)
    gram = kernel_matrix(kernel, data.inputs, data.inputs) if n else np.zeros((0, 0))
    chol, jitter = _chol_with_jitter(gram + noise_sq * np.eye(n))
    alpha = cho_solve((chol, True), data.outputs) if n else np.zeros(0)
    return GPModel(kernel, float(noise_sq), data, chol, alpha, jitter)


@dataclass(frozen=True)
class PosteriorGaussian:
    """Finite-dimensional Gaussian over function values at test inputs."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(cov)))):
            raise ValueError(f"covariance asymmetry {asym:g} beyond tolerance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def gp_posterior(model: GPModel, test_inputs) -> PosteriorGaussian:
    """Posterior mean and covariance at M test points; N=0 returns the prior."""
    test = wrap_angles(np.atleast_2d(np.asarray(test_inputs, dtype=float)))
    k_tt = kernel_matrix(model.kernel, test, test)
    if len(model) == 0:
        return PosteriorGaussian(np.zeros(test.shape[0]), k_tt)
    k_xt = kernel_matrix(model.kernel, model.data.inputs, test)
    mean = k_xt.T @ model.alpha
    v = solve_triangular(model.chol, k_xt, lower=True)
    return PosteriorGaussian(mean, k_tt - v.T @ v)


def posterior_mean_var(model: GPModel, x) -> tuple[float, float]:
    """Scalar posterior mean and variance at a single point (no M x M matrix)."""
    x = wrap_angles(np.asarray(x, dtype=float))
    if len(model) == 0:
        return 0.0, float(model.kernel.sigma0_sq)
    k_xt = kernel_matrix(model.kernel, model.data.inputs, x[None, :])[:, 0]
    v = solve_triangular(model.chol, k_xt, lower=True)
    var = float(model.kernel.sigma0_sq - v @ v)
    return float(k_xt @ model.alpha), max(var, 0.0)


def posterior_point_grad(
    model: GPModel, x
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(mean, variance, d mean/dx, d variance/dx) at one point.

    Uses that k(x, x) is constant in x for every supported family, so the
    variance gradient reduces to -2 * (solve(K+noise, k))^T dk/dx.
    """
    x = wrap_angles(np.asarray(x, dtype=float))
    dim = x.shape[0]
    if len(model) == 0:
        return 0.0, float(model.kernel.sigma0_sq), np.zeros(dim), np.zeros(dim)
    k_xt = kernel_matrix(model.kernel, model.data.inputs, x[None, :])[:, 0]
    grad_k = kernel_grad(model.kernel, model.data.inputs, x)
    beta = cho_solve((model.chol, True), k_xt)
    var = float(model.kernel.sigma0_sq - k_xt @ beta)
    return (
        float(k_xt @ model.alpha),
        max(var, 0.0),
        grad_k.T @ model.alpha,
        -2.0 * (grad_k.T @ beta),
    )


def log_marginal_likelihood(model: GPModel) -> float:
    """Log density of the outputs under N(0, K + noise*I)."""
    n = len(model)
    if n == 0:
        raise ValueError("marginal likelihood needs at least one observation")
    logdet = 2.0 * float(np.sum(np.log(np.diag(model.chol))))
    fit = float(model.data.outputs @ model.alpha)
    return -0.5 * (fit + logdet + n * math.log(2.0 * math.pi))


def gamma_grid(steps: int, max_gamma: float) -> np.ndarray:
    """Linear grid on (0, max_gamma] with `steps` points."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return max_gamma * np.arange(1, steps + 1) / steps


def _gamma_structure(cfg: KernelConfig, x: np.ndarray):
    """Per-gamma kernel builder with the trigonometric structure precomputed;
    keeps the 120-point grid sweep out of the O(N^2 D) recomputation."""
    n, dim = x.shape
    if cfg.family == "rbf":
        sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
        return lambda g: cfg.sigma0_sq * np.exp(-sq / (2.0 * g * g))
    if cfg.family == "periodic":
        arg = np.sum(np.sin((x[:, None, :] - x[None, :, :]) / 2.0) ** 2, axis=-1)
        return lambda g: cfg.sigma0_sq * np.exp(-arg / (2.0 * g * g))
    orders = _order_vector(cfg, dim)
    harmonics = np.empty((dim, n, n))
    for d in range(dim):
        delta = x[:, d, None] - x[None, :, d]
        harmonics[d] = 2.0 * (
            np.cos(delta) if orders[d] == 1 else _cos_harmonic_sum(delta, int(orders[d]))
        )

    def build(g: float) -> np.ndarray:
        g2 = g * g
        gram = np.full((n, n), cfg.sigma0_sq)
        for d in range(dim):
            gram *= (g2 + harmonics[d]) / (g2 + 2.0 * orders[d])
        return gram

    return build


def mll_gamma_sweep(model: GPModel, grid: np.ndarray) -> np.ndarray:
    """Marginal log likelihood at every gamma in the grid (-inf where the
    factorization fails even after jitter)."""
    n = len(model)
    x, y = model.data.inputs, model.data.outputs
    build = _gamma_structure(model.kernel, x)
    noise = model.noise_sq * np.eye(n)
    out = np.full(len(grid), -np.inf)
    for i, gamma in enumerate(grid):
        try:
            chol, _ = _chol_with_jitter(build(float(gamma)) + noise)
        except FactorizationError:
            continue
        alpha = cho_solve((chol, True), y)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        out[i] = -0.5 * (float(y @ alpha) + logdet + n * math.log(2.0 * math.pi))
    return out


def optimize_gamma(model: GPModel, steps: int = 120, max_gamma: float = 20.0) -> KernelConfig:
    """Grid argmax of the marginal likelihood over gamma (ties -> smallest gamma)."""
    grid = gamma_grid(steps, max_gamma)
    mll = mll_gamma_sweep(model, grid)
    if not np.any(np.isfinite(mll)):
        return model.kernel
    return model.kernel.with_gamma(grid[int(np.argmax(mll))])


@dataclass(frozen=True)
class GammaSchedule:
    """Refit cadence as (count, interval) blocks, e.g. "100*1+20*9+10*100".

    Block (c, i) covers the next c*i iterations and fires every i-th of them;
    past the last block the final interval keeps repeating.
    """

    blocks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.blocks or any(c < 1 or i < 1 for c, i in self.blocks):
            raise ValueError("schedule blocks must be positive (count, interval) pairs")

    @classmethod
    def from_string(cls, text: str) -> "GammaSchedule":
        blocks = []
        for chunk in text.split("+"):
            count, _, interval = chunk.strip().partition("*")
            if not interval:
                raise ValueError(f"expected count*interval, got {chunk!r}")
            blocks.append((int(count), int(interval)))
        return cls(tuple(blocks))

    def to_string(self) -> str:
        return "+".join(f"{c}*{i}" for c, i in self.blocks)

    def due(self, t: int) -> bool:
        """Whether a refit fires at 1-based iteration t."""
        if t < 1:
            return False
        start = 0
        for count, interval in self.blocks:
            end = start + count * interval
            if t <= end:
                return (t - start) % interval == 0
            start = end
        return (t - start) % self.blocks[-1][1] == 0


DEFAULT_HYPEROPT_STRING = "optim=grid,max_gamma=20,interval=100*1+20*9+10*100,steps=120,loss=mll"


@dataclass(frozen=True)
class HyperoptConfig:
    """Grid-search configuration for the smoothness parameter."""

    optim: str = "grid"
    steps: int = 120
    max_gamma: float = 20.0
    interval: GammaSchedule = GammaSchedule(((100, 1), (20, 9), (10, 100)))
    loss: str = "mll"

    def __post_init__(self):
        if self.optim != "grid":
            raise ValueError(f"unsupported hyperopt optimizer {self.optim!r}")
        if self.loss != "mll":
            raise ValueError(f"unsupported hyperopt loss {self.loss!r}")

    @classmethod
    def from_string(cls, text: str) -> "HyperoptConfig":
        fields = parse_kv(text)
        kwargs = {}
        if "optim" in fields:
            kwargs["optim"] = fields["optim"]
        if "steps" in fields:
            kwargs["steps"] = int(fields["steps"])
        if "max_gamma" in fields:
            kwargs["max_gamma"] = float(fields["max_gamma"])
        if "interval" in fields:
            kwargs["interval"] = GammaSchedule.from_string(fields["interval"])
        if "loss" in fields:
            kwargs["loss"] = fields["loss"]
        unknown = set(fields) - {"optim", "steps", "max_gamma", "interval", "loss"}
        if unknown:
            raise ValueError(f"unknown hyperopt keys {sorted(unknown)}")
        return cls(**kwargs)

    def to_string(self) -> str:
        return format_kv(
            {
                "optim": self.optim,
                "max_gamma": f"{self.max_gamma:g}",
                "interval": self.interval.to_string(),
                "steps": self.steps,
                "loss": self.loss,
            }
        )


def _psd_root(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root with jitter escalation for indefinite inputs.

    Tiny negative eigenvalues are clipped without jitter so that degenerate
    (rank-deficient) posteriors keep their exact linear constraints.
    """
    scale = max(float(np.max(np.abs(cov))), 1e-300) if cov.size else 1.0
    for jitter in (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        shifted = cov if jitter == 0.0 else cov + jitter * scale * np.eye(cov.shape[0])
        evals, evecs = np.linalg.eigh(shifted)
        if evals.min(initial=0.0) >= -1e-8 * scale:
            return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    raise FactorizationError("posterior covariance indefinite beyond jitter 1e-6")


def standard_normal_draws(
    n: int, dim: int, sampler: str, rng: np.random.Generator
) -> np.ndarray:
    """(n, dim) i.i.d.-standard-normal-shaped block from the chosen sampler.

    low-discrepancy feeds a seeded scrambled base-2 digital sequence through
    the inverse normal CDF; plain-mc draws directly from `rng`.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")
    if sampler == "plain-mc":
        return rng.standard_normal((n, dim))
    seed = int(rng.integers(2**63))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # Sobol balance warning for n not a power of 2
        uniform = qmc.Sobol(d=dim, scramble=True, seed=seed).random(n)
    return ndtri(np.clip(uniform, 1e-15, 1.0 - 1e-15))


def posterior_sample(
    post: PosteriorGaussian,
    n: int,
    sampler: str = "plain-mc",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """n joint draws from the posterior, shape (n, M); deterministic given rng."""
    if rng is None:
        rng = np.random.default_rng()
    root = _psd_root(post.cov)
    z = standard_normal_draws(n, post.mean.shape[0], sampler, rng)
    return post.mean[None, :] + z @ root.T
