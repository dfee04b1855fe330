"""Acquisition functions: analytic EI, Monte Carlo noisy EI, and the
confident-region pair search used by the subspace optimizer.

The pair search scores every ordered pair of on-axis grid offsets by the
expected improvement of the region minimum once the pair would have been
observed, where "region" means the grid points whose updated posterior
variance falls below a threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .circuits import TWO_PI, wrap_angles
from .gp import (
    Dataset,
    GPModel,
    KernelConfig,
    _psd_root,
    fit_gp,
    gp_posterior,
    posterior_sample,
    standard_normal_draws,
)
from .kv import format_kv, parse_kv

SQRT_2PI = math.sqrt(2.0 * math.pi)


def expected_improvement(mu, sd, f_best) -> float | np.ndarray:
    """Analytic EI for minimization: (f-mu)*Phi(z) + sd*phi(z), z=(f-mu)/sd.

    Degenerates to max(0, f_best - mu) at sd = 0.  Accepts scalars or arrays.
    """
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be nonnegative")
    diff = np.asarray(f_best, dtype=float) - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), 0.0)
        dense = np.exp(-(z**2) / 2.0) / SQRT_2PI
        value = np.where(sd > 0, diff * ndtr(z) + sd * dense, np.maximum(0.0, diff))
    return float(value) if value.ndim == 0 else value


def _improvement_draws(
    model: GPModel,
    points: np.ndarray,
    n_mc: int,
    sampler: str,
    rng: np.random.Generator,
) -> np.ndarray:
    post = gp_posterior(model, points)
    return posterior_sample(post, n_mc, sampler, rng)


def noisy_ei(
    model: GPModel,
    new_points,
    n_mc: int,
    sampler: str = "low-discrepancy",
    rng: np.random.Generator | None = None,
) -> float:
    """Monte Carlo estimate of <max(0, min f_train - min f_new)> under the
    joint posterior over training-point and new-point function values."""
    if len(model) == 0:
        raise ValueError("noisy EI needs at least one training point")
    if rng is None:
        rng = np.random.default_rng()
    new_points = np.atleast_2d(np.asarray(new_points, dtype=float))
    n = len(model)
    points = np.vstack([model.data.inputs, wrap_angles(new_points)])
    draws = _improvement_draws(model, points, n_mc, sampler, rng)
    gain = draws[:, :n].min(axis=1) - draws[:, n:].min(axis=1)
    return float(np.mean(np.maximum(0.0, gain)))


def axis_offsets(count: int) -> np.ndarray:
    """Grid offsets 2*pi*j/(count+1) for j = 1..count (0 excluded)."""
    return TWO_PI * np.arange(1, count + 1) / (count + 1)


@dataclass(frozen=True)
class CoReSet:
    """On-axis grid with per-point posterior variances and membership flags."""

    points: np.ndarray
    offsets: np.ndarray
    variances: np.ndarray
    member: np.ndarray
    kappa: float

    @property
    def member_points(self) -> np.ndarray:
        return self.points[self.member]


def core_set(
    model_inputs,
    axis: int,
    incumbent,
    kappa: float,
    j_og: int,
    kernel: KernelConfig,
    noise_sq: float,
) -> CoReSet:
    """Confident grid points along `axis` through the incumbent.

    Membership tests the observation-free posterior variance (it depends on
    the inputs only, so hypothetical training sets may be passed) against
    kappa^2.
    """
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    incumbent = wrap_angles(np.asarray(incumbent, dtype=float))
    offsets = axis_offsets(j_og)
    points = np.tile(incumbent, (j_og, 1))
    points[:, axis] = np.mod(points[:, axis] + offsets, TWO_PI)
    inputs = np.atleast_2d(np.asarray(model_inputs, dtype=float))
    if inputs.size == 0:
        inputs = inputs.reshape(0, incumbent.shape[0])
    probe = fit_gp(kernel, noise_sq, Dataset(inputs, np.zeros(inputs.shape[0])))
    variances = gp_posterior(probe, points).variances
    return CoReSet(points, offsets, variances, variances <= kappa**2, float(kappa))


DEFAULT_ACQ_STRING = "func=ei,optim=emicore,pairsize=20,gridsize=100,samplesize=100"

_EMICORE_KEYS = {"func", "optim", "pairsize", "gridsize", "samplesize", "corecap"}


@dataclass(frozen=True)
class EmicoreParams:
    """Pair-search sizes: search grid, evaluation grid, and MC sample count."""

    j_sg: int = 20
    j_og: int = 100
    n_mc: int = 100
    m: int = 2
    core_cap: int = 512

    def __post_init__(self):
        if self.m != 2:
            raise ValueError("the pair search suggests exactly two points per step")
        if self.j_sg < 2 or self.j_og < 2:
            raise ValueError("grids need at least two points")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")

    @classmethod
    def from_string(cls, text: str) -> "EmicoreParams":
        """Pick this object's keys out of an acquisition config string; other
        keys (optimizer-side ones) are ignored."""
        fields = parse_kv(text)
        if fields.get("func", "ei") != "ei":
            raise ValueError(f"unsupported acquisition base {fields['func']!r}")
        if fields.get("optim", "emicore") != "emicore":
            raise ValueError(f"unsupported acquisition optimizer {fields['optim']!r}")
        kwargs = {}
        if "pairsize" in fields:
            kwargs["j_sg"] = int(fields["pairsize"])
        if "gridsize" in fields:
            kwargs["j_og"] = int(fields["gridsize"])
        if "samplesize" in fields:
            kwargs["n_mc"] = int(fields["samplesize"])
        if "corecap" in fields:
            kwargs["core_cap"] = int(fields["corecap"])
        return cls(**kwargs)

    def to_string(self) -> str:
        return format_kv(
            {
                "func": "ei",
                "optim": "emicore",
                "pairsize": self.j_sg,
                "gridsize": self.j_og,
                "samplesize": self.n_mc,
            }
        )


def ordered_pairs(count: int) -> list[tuple[int, int]]:
    """All count*(count-1) ordered pairs of distinct indices."""
    return [(a, b) for a in range(count) for b in range(count) if a != b]


def candidate_pairs(j_sg: int) -> list[tuple[int, int]]:
    """Candidate enumeration for the pair search, scored-order.

    Acquisition values tie exactly whenever two pairs produce the same
    confident region (common draws make ties bit-level), and the argmax
    tie-break takes the lowest candidate index.  Pairs are therefore
    enumerated by decreasing probe-geometry quality, i.e. the smallest
    circular gap among {incumbent, a, b}, so that a fully tied search
    degrades to the most noise-robust spread instead of two nearly
    coincident probes.
    """
    offsets = axis_offsets(j_sg)

    def min_gap(pair):
        angles = np.array([0.0, offsets[pair[0]], offsets[pair[1]]])
        diffs = np.abs(angles[:, None] - angles[None, :])[np.triu_indices(3, 1)]
        return float(np.min(np.minimum(diffs, TWO_PI - diffs)))

    return sorted(ordered_pairs(j_sg), key=lambda p: (-min_gap(p), p))


@dataclass(frozen=True)
class EmicoreSelection:
    """Chosen observation pair plus per-candidate diagnostics."""

    points: np.ndarray
    pair_offsets: tuple[float, float]
    scores: np.ndarray
    fallback: bool
    mc_seed: int


def _pair_points(incumbent: np.ndarray, axis: int, offsets) -> np.ndarray:
    pts = np.tile(incumbent, (len(offsets), 1))
    pts[:, axis] = np.mod(pts[:, axis] + np.asarray(offsets), TWO_PI)
    return pts


def _nft_fallback(incumbent: np.ndarray, axis: int) -> np.ndarray:
    return _pair_points(incumbent, axis, [-TWO_PI / 3.0, TWO_PI / 3.0])


def emicore_select(
    model: GPModel,
    incumbent,
    axis: int,
    kappa: float,
    params: EmicoreParams,
    sampler: str = "low-discrepancy",
    rng: np.random.Generator | None = None,
    reduction_training_core: bool = False,
) -> EmicoreSelection:
    """Pick the pair of on-axis points maximizing expected region improvement.

    For every ordered pair of distinct search-grid offsets the evaluation
    grid's updated posterior variance decides region membership; the score is
    the per-point expected improvement of the incumbent value over the region
    minimum, estimated from `n_mc` joint-posterior draws.  Draws share one
    seed across candidates so that candidate comparison is low-variance and
    re-runs with an equal generator state replay exactly.

    With `reduction_training_core` the membership is pinned to the training
    points plus the candidate pair (the definitional reduction to noisy EI);
    this path exists for verification and costs one posterior per candidate.
    """
    if len(model) == 0:
        raise ValueError("pair selection needs at least one training point")
    if rng is None:
        rng = np.random.default_rng()
    incumbent = wrap_angles(np.asarray(incumbent, dtype=float))
    mc_seed = int(rng.integers(2**63))
    search = axis_offsets(params.j_sg)
    pairs = candidate_pairs(params.j_sg)
    scores = np.full(len(pairs), np.nan)

    if reduction_training_core:
        n = len(model)
        for idx, (a, b) in enumerate(pairs):
            pair_pts = _pair_points(incumbent, axis, [search[a], search[b]])
            points = np.vstack([model.data.inputs, pair_pts])
            draws = _improvement_draws(
                model, points, params.n_mc, sampler, np.random.default_rng(mc_seed)
            )
            gain = draws[:, :n].min(axis=1) - draws.min(axis=1)
            scores[idx] = float(np.mean(np.maximum(0.0, gain))) / params.m
    else:
        offsets = np.concatenate([[0.0], search, axis_offsets(params.j_og)])
        line = _pair_points(incumbent, axis, offsets)
        post = gp_posterior(model, line)
        sg_idx = np.arange(1, 1 + params.j_sg)
        og_idx = np.arange(1 + params.j_sg, len(offsets))
        cov = post.cov
        og_var = post.variances[og_idx]

        # Rank-2 posterior-variance update for all candidate pairs at once.
        a_idx = np.array([a for a, _ in pairs])
        b_idx = np.array([b for _, b in pairs])
        cross = cov[np.ix_(sg_idx, og_idx)]
        pair_var = post.variances[sg_idx] + model.noise_sq
        m11, m22 = pair_var[a_idx], pair_var[b_idx]
        m12 = cov[np.ix_(sg_idx, sg_idx)][a_idx, b_idx]
        det = m11 * m22 - m12**2
        wa, wb = cross[a_idx], cross[b_idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = (
                m22[:, None] * wa**2 - 2.0 * m12[:, None] * wa * wb + m11[:, None] * wb**2
            ) / det[:, None]
        member_matrix = (og_var[None, :] - quad <= kappa**2) & (det > 0.0)[:, None]

        # Draw the joint posterior once over the incumbent plus the whole
        # evaluation grid; every candidate scores the same function draws
        # restricted to its region, so candidates are compared on common
        # randomness and only one factorization per step is needed.
        joint_idx = np.concatenate([[0], og_idx])
        root = _psd_root(cov[np.ix_(joint_idx, joint_idx)])
        z = standard_normal_draws(
            params.n_mc, len(joint_idx), sampler, np.random.default_rng(mc_seed)
        )
        draws = post.mean[joint_idx][None, :] + z @ root.T
        incumbent_draws = draws[:, 0]
        grid_draws = draws[:, 1:]
        cache: dict[bytes, float] = {}
        subsample_rng = np.random.default_rng(mc_seed)

        for idx in range(len(pairs)):
            row = member_matrix[idx]
            if not row.any():
                continue
            key = row.tobytes()
            if key not in cache:
                chosen = np.flatnonzero(row)
                if len(chosen) > params.core_cap:
                    chosen = np.sort(
                        subsample_rng.choice(chosen, size=params.core_cap, replace=False)
                    )
                gain = incumbent_draws - grid_draws[:, chosen].min(axis=1)
                cache[key] = float(np.mean(np.maximum(0.0, gain))) / params.m
            scores[idx] = cache[key]

    if np.all(np.isnan(scores)):
        warnings.warn(
            "every candidate produced an empty confident region; "
            "falling back to the deterministic +-2pi/3 pair",
            stacklevel=2,
        )
        return EmicoreSelection(
            _nft_fallback(incumbent, axis),
            (-TWO_PI / 3.0, TWO_PI / 3.0),
            scores,
            True,
            mc_seed,
        )

    best = int(np.nanargmax(scores))
    a, b = pairs[best]
    return EmicoreSelection(
        _pair_points(incumbent, axis, [search[a], search[b]]),
        (float(search[a]), float(search[b])),
        scores,
        False,
        mc_seed,
    )
