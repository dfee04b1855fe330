"""Optimization loops for the periodic energy landscape.

Three strategies over the same observe-callback interface: coordinate-wise
sinusoid minimization with deterministic probe points (the sequential/random
baseline), the same outer loop with probe points chosen by the
confident-region pair search on a GP surrogate, and a plain one-point-per-step
Bayesian optimization with analytic expected improvement.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .acquisition import EmicoreParams, emicore_select
from .circuits import TWO_PI, wrap_angles
from .gp import (
    Dataset,
    FactorizationError,
    GPModel,
    HyperoptConfig,
    KernelConfig,
    fit_gp,
    gp_posterior,
    optimize_gamma,
    posterior_mean_var,
    posterior_point_grad,
)
from .kv import format_kv, parse_bool, parse_kv

Objective = Callable[[np.ndarray], float]
MetricsProbe = Callable[[np.ndarray], tuple[float, float]]

_NFT_THETAS = np.array([-TWO_PI / 3.0, 0.0, TWO_PI / 3.0])


@dataclass(frozen=True)
class SinusoidFit:
    """First-order sinusoid c0 + c1*cos(theta) + c2*sin(theta)."""

    c0: float
    c1: float
    c2: float

    def value(self, theta: float) -> float:
        return self.c0 + self.c1 * math.cos(theta) + self.c2 * math.sin(theta)

    @property
    def argmin_theta(self) -> float:
        """Global minimizer in [0, 2*pi); 0 by convention for a constant fit."""
        if self.c1 == 0.0 and self.c2 == 0.0:
            return 0.0
        return math.atan2(-self.c2, -self.c1) % TWO_PI

    @property
    def min_value(self) -> float:
        return self.c0 - math.hypot(self.c1, self.c2)


def fit_sinusoid(thetas, values) -> SinusoidFit:
    """Exact interpolation through three (theta, value) pairs.

    The canonical grid {-2*pi/3, 0, 2*pi/3} takes a closed form; any other
    pairwise-distinct angles go through the 3x3 linear solve.
    """
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.shape != (3,) or values.shape != (3,):
        raise ValueError("exactly three (theta, value) samples required")
    for i in range(3):
        for k in range(i + 1, 3):
            gap = (thetas[i] - thetas[k]) % TWO_PI
            if min(gap, TWO_PI - gap) < 1e-12:
                raise ValueError("sample angles must be pairwise distinct mod 2*pi")
    if np.allclose(thetas, _NFT_THETAS, atol=1e-12):
        y1, y2, y3 = values
        c0 = (y1 + y2 + y3) / 3.0
        return SinusoidFit(c0, y2 - c0, (y3 - y1) / math.sqrt(3.0))
    design = np.column_stack([np.ones(3), np.cos(thetas), np.sin(thetas)])
    c0, c1, c2 = np.linalg.solve(design, values)
    return SinusoidFit(float(c0), float(c1), float(c2))


@dataclass(frozen=True)
class InducerConfig:
    """Training-set truncation: drop the `slack` oldest observations whenever
    the set reaches retain + slack points."""

    policy: str = "last_slack"
    retain: int = 100
    slack: int = 20

    def __post_init__(self):
        if self.policy != "last_slack":
            raise ValueError(f"unknown inducer policy {self.policy!r}")
        if self.retain < 1 or self.slack < 1:
            raise ValueError("retain and slack must be positive")

    @classmethod
    def from_string(cls, text: str) -> "InducerConfig | None":
        text = text.strip()
        if not text or text == "none":
            return None
        head, *rest = text.split(":")
        kwargs = {"policy": head}
        for chunk in rest:
            key, _, value = chunk.partition("=")
            if key not in ("retain", "slack"):
                raise ValueError(f"unknown inducer option {key!r}")
            kwargs[key] = int(value)
        return cls(**kwargs)

    def to_string(self) -> str:
        return f"{self.policy}:retain={self.retain}:slack={self.slack}"


_RUN_KEYS = {
    "smo-steps",
    "smo-axis",
    "corethresh",
    "corethresh_width",
    "coremin_scale",
    "corethresh_scale",
    "reset-interval",
}


@dataclass(frozen=True)
class RunConfig:
    """Loop-level knobs shared by all strategies.

    t_reset only matters for the deterministic baseline; the kappa fields
    (kappa_init, c0_scale, c1_scale, t_ave) only for the pair-search loop.
    """

    t_max: int
    t_nft: int = 0
    t_reset: int = 0
    t_ave: int = 10
    kappa_init: float = 1.0
    c0_scale: float = 0.0
    c1_scale: float = 1.0
    axis_mode: str = "sequential"
    inducer: InducerConfig | None = None

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.t_nft < 0 or self.t_reset < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.t_ave < 1:
            raise ValueError("t_ave must be >= 1")
        if self.axis_mode not in ("sequential", "random"):
            raise ValueError(f"unknown axis mode {self.axis_mode!r}")
        if self.c0_scale < 0 or self.c1_scale < 0:
            raise ValueError("kappa rule coefficients must be >= 0")

    @classmethod
    def from_cli(cls, n_iter: int, acq_params: str = "", inducer: str = "") -> "RunConfig":
        fields = parse_kv(acq_params)
        kwargs: dict = {"t_max": n_iter}
        if "smo-steps" in fields:
            kwargs["t_nft"] = int(fields["smo-steps"])
        if "smo-axis" in fields:
            kwargs["axis_mode"] = "sequential" if parse_bool(fields["smo-axis"]) else "random"
        if "corethresh" in fields:
            kwargs["kappa_init"] = float(fields["corethresh"])
        if "corethresh_width" in fields:
            kwargs["t_ave"] = int(fields["corethresh_width"])
        if "coremin_scale" in fields:
            kwargs["c0_scale"] = float(fields["coremin_scale"])
        if "corethresh_scale" in fields:
            kwargs["c1_scale"] = float(fields["corethresh_scale"])
        if "reset-interval" in fields:
            kwargs["t_reset"] = int(fields["reset-interval"])
        kwargs["inducer"] = InducerConfig.from_string(inducer)
        return cls(**kwargs)

    def to_acq_params(self) -> str:
        return format_kv(
            {
                "smo-steps": self.t_nft,
                "smo-axis": self.axis_mode == "sequential",
                "corethresh": f"{self.kappa_init:g}",
                "corethresh_width": self.t_ave,
                "coremin_scale": f"{self.c0_scale:g}",
                "corethresh_scale": f"{self.c1_scale:g}",
                "reset-interval": self.t_reset,
            }
        )

    def to_inducer_string(self) -> str:
        return self.inducer.to_string() if self.inducer else "none"


@dataclass
class CheckpointRow:
    n_obs: int
    energy: float
    fidelity: float
    kappa: float
    gamma: float
    wall_ms: float


@dataclass
class TrialRecord:
    """Per-trial trace: one row per iteration plus the incumbent's history."""

    rows: list[CheckpointRow] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    final_x: np.ndarray | None = None
    method: str = ""
    seed: int | None = None
    aborted: bool = False
    abort_reason: str = ""


@dataclass
class OptimizerState:
    """Mutable loop state: incumbent, its score history, and the axis cursor."""

    x_hat: np.ndarray
    score: float
    kappa: float
    history: list[float]
    cursor: int = 0
    t: int = 0


def _pick_axis(state: OptimizerState, cfg: RunConfig, dim: int, rng) -> int:
    if cfg.axis_mode == "sequential":
        axis = state.cursor % dim
        state.cursor += 1
        return axis
    return int(rng.integers(dim))


def _shifted(x: np.ndarray, axis: int, offset: float) -> np.ndarray:
    out = x.copy()
    out[axis] = (out[axis] + offset) % TWO_PI
    return out


def _probe(metrics: MetricsProbe | None, x: np.ndarray) -> tuple[float, float]:
    if metrics is None:
        return math.nan, math.nan
    return metrics(x)


def run_nft(
    objective: Objective,
    cfg: RunConfig,
    init: tuple[np.ndarray, float],
    rng: np.random.Generator,
    metrics: MetricsProbe | None = None,
) -> tuple[TrialRecord, Dataset]:
    """Coordinate-descent baseline with deterministic +-2*pi/3 probe points.

    Each iteration observes two points on the chosen axis, interpolates the
    exact per-axis sinusoid through them and the incumbent estimate, and jumps
    to the analytic subspace minimum.  Every t_reset iterations the incumbent
    is re-observed to flush accumulated estimation error.
    """
    x0, y0 = init
    state = OptimizerState(wrap_angles(x0).copy(), float(y0), cfg.kappa_init, [float(y0)])
    dim = state.x_hat.shape[0]
    xs, ys = [state.x_hat.copy()], [state.score]
    record = TrialRecord(method="nft", scores=[state.score])
    started = time.perf_counter()
    energy, fid = _probe(metrics, state.x_hat)
    record.rows.append(CheckpointRow(1, energy, fid, math.nan, math.nan, 0.0))

    for t in range(1, cfg.t_max + 1):
        axis = _pick_axis(state, cfg, dim, rng)
        lo = _shifted(state.x_hat, axis, -TWO_PI / 3.0)
        hi = _shifted(state.x_hat, axis, TWO_PI / 3.0)
        y_lo, y_hi = objective(lo), objective(hi)
        xs += [lo, hi]
        ys += [y_lo, y_hi]
        fit = fit_sinusoid(_NFT_THETAS, (y_lo, state.score, y_hi))
        state.x_hat = _shifted(state.x_hat, axis, fit.argmin_theta)
        state.score = fit.min_value
        if cfg.t_reset and t % cfg.t_reset == 0:
            state.score = objective(state.x_hat)
            xs.append(state.x_hat.copy())
            ys.append(state.score)
        state.history.append(state.score)
        record.scores.append(state.score)
        energy, fid = _probe(metrics, state.x_hat)
        record.rows.append(
            CheckpointRow(
                n_obs=len(xs),
                energy=energy,
                fidelity=fid,
                kappa=math.nan,
                gamma=math.nan,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )

    record.final_x = state.x_hat.copy()
    return record, Dataset(np.array(xs), np.array(ys))


def _updated_kappa(state: OptimizerState, cfg: RunConfig, noise_sd: float) -> float:
    """max(C0*sigma, C1 * average score reduction over the last t_ave steps);
    the floor keeps kappa >= 0 when the score went up."""
    if len(state.history) <= cfg.t_ave:
        return state.kappa
    drop = (state.history[-(cfg.t_ave + 1)] - state.history[-1]) / cfg.t_ave
    return max(cfg.c0_scale * noise_sd, cfg.c1_scale * drop)


def run_nft_emicore(
    objective: Objective,
    cfg: RunConfig,
    init: tuple[np.ndarray, float],
    kernel: KernelConfig,
    params: EmicoreParams,
    noise_sq: float,
    rng: np.random.Generator,
    sampler: str = "low-discrepancy",
    hyperopt: HyperoptConfig | None = None,
    metrics: MetricsProbe | None = None,
) -> tuple[TrialRecord, Dataset]:
    """Subspace optimizer with GP-chosen probe points.

    After t_nft warmup iterations of the deterministic baseline, each step
    asks the pair search for two observation points on the current axis,
    observes them, refits the GP (smoothness re-tuned on the hyperopt
    schedule), moves the incumbent to the analytic minimum of the posterior
    mean along the axis, and adapts the confidence threshold to the averaged
    score reduction.
    """
    if hyperopt is None:
        hyperopt = HyperoptConfig()
    x0, y0 = init
    state = OptimizerState(wrap_angles(x0).copy(), float(y0), cfg.kappa_init, [float(y0)])
    dim = state.x_hat.shape[0]
    record = TrialRecord(method="emicore", scores=[state.score])
    data = Dataset(state.x_hat[None, :].copy(), [state.score])
    noise_sd = math.sqrt(noise_sq)
    started = time.perf_counter()

    def checkpoint():
        energy, fid = _probe(metrics, state.x_hat)
        record.rows.append(
            CheckpointRow(
                n_obs=len(data),
                energy=energy,
                fidelity=fid,
                kappa=state.kappa,
                gamma=kernel.gamma,
                wall_ms=(time.perf_counter() - started) * 1e3,
            )
        )

    checkpoint()
    for t in range(1, cfg.t_nft + 1):
        axis = _pick_axis(state, cfg, dim, rng)
        lo = _shifted(state.x_hat, axis, -TWO_PI / 3.0)
        hi = _shifted(state.x_hat, axis, TWO_PI / 3.0)
        y_lo, y_hi = objective(lo), objective(hi)
        data = data.append(np.vstack([lo, hi]), [y_lo, y_hi])
        fit = fit_sinusoid(_NFT_THETAS, (y_lo, state.score, y_hi))
        state.x_hat = _shifted(state.x_hat, axis, fit.argmin_theta)
        state.score = fit.min_value
        state.history.append(state.score)
        record.scores.append(state.score)
        checkpoint()

    try:
        model = fit_gp(kernel, noise_sq, data)
        for t in range(cfg.t_nft + 1, cfg.t_max + 1):
            axis = _pick_axis(state, cfg, dim, rng)
            selection = emicore_select(
                model, state.x_hat, axis, state.kappa, params, sampler, rng
            )
            values = [objective(p) for p in selection.points]
            data = data.append(selection.points, values)
            if cfg.inducer and len(data) >= cfg.inducer.retain + cfg.inducer.slack:
                data = data.drop_oldest(cfg.inducer.slack)
            model = fit_gp(kernel, noise_sq, data)
            if hyperopt.interval.due(t):
                kernel = optimize_gamma(model, hyperopt.steps, hyperopt.max_gamma)
                model = fit_gp(kernel, noise_sq, data)

            triple = np.vstack(
                [
                    _shifted(state.x_hat, axis, -TWO_PI / 3.0),
                    state.x_hat,
                    _shifted(state.x_hat, axis, TWO_PI / 3.0),
                ]
            )
            mu = gp_posterior(model, triple).mean
            fit = fit_sinusoid(_NFT_THETAS, mu)
            state.x_hat = _shifted(state.x_hat, axis, fit.argmin_theta)
            state.score = posterior_mean_var(model, state.x_hat)[0]
            state.history.append(state.score)
            record.scores.append(state.score)
            checkpoint()
            state.kappa = _updated_kappa(state, cfg, noise_sd)
    except FactorizationError as err:
        record.aborted = True
        record.abort_reason = str(err)

    record.final_x = state.x_hat.copy()
    return record, data


def _maximize_ei(
    model: GPModel, f_best: float, dim: int, rng: np.random.Generator, restarts: int
) -> np.ndarray | None:
    """Multi-start quasi-Newton ascent of analytic EI on the bounded cube.

    Half of the starts are jittered copies of the lowest observed points:
    with purely uniform starts the search degenerates to flat-EI exploration
    in high dimension and the loop stalls, so local refinement starts are
    load-bearing here.
    """

    def neg_ei(x):
        mu, var, dmu, dvar = posterior_point_grad(model, x)
        sd = math.sqrt(var)
        if sd < 1e-150:
            value = max(0.0, f_best - mu)
            grad = -dmu if value > 0 else np.zeros_like(dmu)
            return -value, -grad
        z = (f_best - mu) / sd
        dense = math.exp(-(z**2) / 2.0) / math.sqrt(2.0 * math.pi)
        cumulative = 0.5 * math.erfc(-z / math.sqrt(2.0))
        value = (f_best - mu) * cumulative + sd * dense
        grad = -cumulative * dmu + dense * (dvar / (2.0 * sd))
        return -value, -grad

    starts = []
    order = np.argsort(model.data.outputs)[: restarts // 2]
    for idx in order:
        starts.append(np.mod(model.data.inputs[idx] + 0.3 * rng.standard_normal(dim), TWO_PI))
    while len(starts) < restarts:
        starts.append(rng.uniform(0.0, TWO_PI, dim))

    best_x, best_val = None, -np.inf
    bounds = [(0.0, TWO_PI)] * dim
    for x0 in starts:
        try:
            res = minimize(neg_ei, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        except (ValueError, FloatingPointError):
            continue
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_x, best_val = np.asarray(res.x), -res.fun
    return best_x


def run_plain_bo(
    objective: Objective,
    kernel: KernelConfig,
    cfg: RunConfig,
    init: tuple[np.ndarray, float],
    noise_sq: float,
    rng: np.random.Generator,
    hyperopt: HyperoptConfig | None = None,
    metrics: MetricsProbe | None = None,
    restarts: int = 16,
) -> tuple[TrialRecord, Dataset]:
    """One observation per iteration at the maximizer of analytic EI."""
    if hyperopt is None:
        hyperopt = HyperoptConfig()
    x0, y0 = init
    x_hat = wrap_angles(x0).copy()
    data = Dataset(x_hat[None, :].copy(), [float(y0)])
    dim = x_hat.shape[0]
    record = TrialRecord(method="bo-ei", scores=[float(y0)])
    started = time.perf_counter()
    energy, fid = _probe(metrics, x_hat)
    record.rows.append(CheckpointRow(1, energy, fid, math.nan, kernel.gamma, 0.0))

    try:
        model = fit_gp(kernel, noise_sq, data)
        for t in range(1, cfg.t_max + 1):
            if hyperopt.interval.due(t):
                kernel = optimize_gamma(model, hyperopt.steps, hyperopt.max_gamma)
                model = fit_gp(kernel, noise_sq, data)
            f_best = float(np.min(data.outputs))
            candidate = _maximize_ei(model, f_best, dim, rng, restarts)
            if candidate is None:
                candidate = rng.uniform(0.0, TWO_PI, dim)
            value = objective(candidate)
            data = data.append(candidate[None, :], [value])
            model = fit_gp(kernel, noise_sq, data)

            best_idx = int(np.argmin(data.outputs))
            x_hat = data.inputs[best_idx].copy()
            record.scores.append(float(data.outputs[best_idx]))
            energy, fid = _probe(metrics, x_hat)
            record.rows.append(
                CheckpointRow(
                    n_obs=len(data),
                    energy=energy,
                    fidelity=fid,
                    kappa=math.nan,
                    gamma=kernel.gamma,
                    wall_ms=(time.perf_counter() - started) * 1e3,
                )
            )
    except FactorizationError as err:
        record.aborted = True
        record.abort_reason = str(err)

    record.final_x = x_hat.copy()
    return record, data
