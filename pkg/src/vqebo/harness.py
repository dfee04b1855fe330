"""Seeded multi-trial experiment runner: cached initial points, trial
dispatch over a worker pool, metric evaluation, percentile aggregation, and
CSV/manifest emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .acquisition import EmicoreParams
from .circuits import (
    CircuitSpec,
    GroundState,
    Hamiltonian,
    ObservationConfig,
    apply_circuit,
    build_ansatz,
    build_hamiltonian,
    exact_energy,
    ground_space_fidelity,
    ground_state,
    observe,
)
from .gp import HyperoptConfig, KernelConfig
from .kv import parse_kv
from .optimizers import (
    CheckpointRow,
    RunConfig,
    TrialRecord,
    run_nft,
    run_nft_emicore,
    run_plain_bo,
)

METHODS = ("nft-seq", "nft-rand", "emicore", "bo-ei")
CSV_HEADER = ("method", "seed", "n_obs", "energy", "fidelity", "kappa", "gamma", "wall_ms")

# fixed sub-stream tags so trial randomness is independent per (seed, method)
_INIT_STREAM = 101
_NOISE_PROBE_STREAM = 102
_METHOD_STREAMS = {m: 110 + i for i, m in enumerate(METHODS)}

_SIGMA0_BY_QUBITS = {3: 4.0, 5: 6.0, 7: 9.0}


def default_sigma0(qubits: int) -> float:
    """Prior standard deviation roughly proportional to the qubit count."""
    return _SIGMA0_BY_QUBITS.get(qubits, max(1.0, 1.2 * qubits))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment byte for byte."""

    qubits: int
    layers: int
    j: tuple[float, float, float]
    h: tuple[float, float, float]
    boundary: str = "open"
    n_shots: int = 1024
    obs_mode: str = "binomial-per-term"
    n_iter: int = 100
    methods: tuple[str, ...] = ("emicore",)
    kernel_family: str = "vqe"
    sigma0: float | None = None
    gamma: float = 2.0
    noise_sq: float | None = None
    run: RunConfig | None = None
    emicore: EmicoreParams = EmicoreParams()
    hyperopt: HyperoptConfig = HyperoptConfig()
    sampler: str = "low-discrepancy"
    bo_restarts: int = 16
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "results"
    workers: int = 1
    make_plots: bool = True

    def __post_init__(self):
        for method in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        object.__setattr__(self, "j", tuple(float(v) for v in self.j))
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.noise_sq is not None:
            object.__setattr__(self, "noise_sq", float(self.noise_sq))
        if self.run is None:
            object.__setattr__(self, "run", RunConfig(t_max=self.n_iter))

    def resolved_sigma0(self) -> float:
        return self.sigma0 if self.sigma0 is not None else default_sigma0(self.qubits)

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(self.kernel_family, self.resolved_sigma0() ** 2, self.gamma)

    def circuit(self) -> CircuitSpec:
        return build_ansatz(self.qubits, self.layers, self.boundary)

    def hamiltonian(self) -> Hamiltonian:
        return build_hamiltonian(self.qubits, self.j, self.h, self.boundary)

    def observation(self) -> ObservationConfig:
        return ObservationConfig(self.n_shots, self.obs_mode)

    def to_dict(self) -> dict:
        return {
            "n_qbits": self.qubits,
            "n_layers": self.layers,
            "circuit": "esu2",
            "pbc": self.boundary == "periodic",
            "j_couplings": list(self.j),
            "h_couplings": list(self.h),
            "n_readout": self.n_shots,
            "obs_mode": self.obs_mode,
            "n_iter": self.n_iter,
            "methods": list(self.methods),
            "kernel": self.kernel_family,
            "kernel_params": f"sigma_0={self.resolved_sigma0():g},gamma={self.gamma:g}",
            "noise_sq": self.noise_sq,
            "hyperopt": self.hyperopt.to_string(),
            "acq_params": self.run.to_acq_params() + f",{self.emicore.to_string()}",
            "inducer": self.run.to_inducer_string(),
            "sampler": self.sampler,
            "bo_restarts": self.bo_restarts,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, fields: dict, out_dir: str = "results", workers: int = 1,
                  make_plots: bool = True) -> "ExperimentConfig":
        kernel_params = parse_kv(fields.get("kernel_params", ""))
        acq = fields.get("acq_params", "")
        n_iter = int(fields["n_iter"])
        return cls(
            qubits=int(fields["n_qbits"]),
            layers=int(fields["n_layers"]),
            j=tuple(float(v) for v in fields["j_couplings"]),
            h=tuple(float(v) for v in fields["h_couplings"]),
            boundary="periodic" if fields.get("pbc", False) else "open",
            n_shots=int(fields.get("n_readout", 1024)),
            obs_mode=fields.get("obs_mode", "binomial-per-term"),
            n_iter=n_iter,
            methods=tuple(fields.get("methods", ["emicore"])),
            kernel_family=fields.get("kernel", "vqe"),
            sigma0=float(kernel_params["sigma_0"]) if "sigma_0" in kernel_params else None,
            gamma=float(kernel_params.get("gamma", 2.0)),
            noise_sq=fields.get("noise_sq"),
            run=RunConfig.from_cli(n_iter, acq, fields.get("inducer", "")),
            emicore=EmicoreParams.from_string(acq) if acq else EmicoreParams(),
            hyperopt=HyperoptConfig.from_string(fields["hyperopt"])
            if fields.get("hyperopt")
            else HyperoptConfig(),
            sampler=fields.get("sampler", "low-discrepancy"),
            bo_restarts=int(fields.get("bo_restarts", 16)),
            seeds=tuple(int(s) for s in fields["seeds"]),
            out_dir=out_dir,
            workers=workers,
            make_plots=make_plots,
        )


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def objective_key(cfg: ExperimentConfig) -> str:
    """Fingerprint of the observable quantity; keys the initial-point cache.

    Deliberately excludes method/kernel/run settings so that every method
    under comparison shares one cache."""
    blob = json.dumps(
        {
            "n_qbits": cfg.qubits,
            "n_layers": cfg.layers,
            "pbc": cfg.boundary == "periodic",
            "j": list(cfg.j),
            "h": list(cfg.h),
            "n_readout": cfg.n_shots,
            "obs_mode": cfg.obs_mode,
        },
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()


def initial_point_cache(
    cfg: ExperimentConfig, path: Path | None = None
) -> dict[int, tuple[np.ndarray, float]]:
    """Per-seed (x0, y0) pairs, persisted so every method loads identical inits.

    A cache file written for a different objective (key or dimension mismatch)
    is refused rather than silently regenerated.
    """
    spec, h = cfg.circuit(), cfg.hamiltonian()
    obs_cfg = cfg.observation()
    key = objective_key(cfg)
    stored: dict[str, list] = {}
    if path is not None and path.exists():
        payload = json.loads(path.read_text())
        if payload.get("objective_key") != key or payload.get("dim") != spec.param_count:
            raise ValueError(
                f"initial-point cache {path} was built for a different objective; "
                "remove it or change the output directory"
            )
        stored = payload["pairs"]

    pairs: dict[int, tuple[np.ndarray, float]] = {}
    dirty = False
    for seed in cfg.seeds:
        if str(seed) in stored:
            x0, y0 = stored[str(seed)]
            pairs[seed] = (np.asarray(x0, dtype=float), float(y0))
            continue
        rng = np.random.default_rng([seed, _INIT_STREAM])
        x0 = rng.uniform(0.0, 2.0 * math.pi, spec.param_count)
        y0 = observe(h, apply_circuit(spec, x0), obs_cfg, rng)
        pairs[seed] = (x0, y0)
        stored[str(seed)] = [x0.tolist(), y0]
        dirty = True

    if path is not None and dirty:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(
                {"objective_key": key, "dim": spec.param_count, "pairs": stored}, indent=1
            )
        )
    return pairs


def estimate_noise_sq(
    spec: CircuitSpec,
    h: Hamiltonian,
    obs_cfg: ObservationConfig,
    rng: np.random.Generator,
    n_points: int = 10,
    repeats: int = 10,
) -> float:
    """Pooled empirical observation variance at uniform-random circuit angles."""
    if obs_cfg.mode == "exact":
        return 0.0
    variances = []
    for _ in range(n_points):
        x = rng.uniform(0.0, 2.0 * math.pi, spec.param_count)
        state = apply_circuit(spec, x)
        draws = [observe(h, state, obs_cfg, rng) for _ in range(repeats)]
        variances.append(np.var(draws, ddof=1))
    return float(np.mean(variances))


def evaluate_metrics(
    x: np.ndarray, spec: CircuitSpec, h: Hamiltonian, gs: GroundState | None
) -> tuple[float, float]:
    """Noiseless energy of the incumbent plus ground-space fidelity.

    Fidelity is reported as nan when exact diagonalization is unavailable.
    """
    energy = exact_energy(spec, h, x)
    if gs is None:
        return energy, math.nan
    return energy, ground_space_fidelity(gs, apply_circuit(spec, x))


@dataclass
class Aggregate:
    """Per-observation-count percentile summary over trials of one method."""

    n_obs: np.ndarray
    energy_q25: np.ndarray
    energy_med: np.ndarray
    energy_q75: np.ndarray
    fidelity_q25: np.ndarray
    fidelity_med: np.ndarray
    fidelity_q75: np.ndarray


def aggregate(records: list[TrialRecord], grid: np.ndarray | None = None) -> Aggregate:
    """Median and quartiles of energy/fidelity, linearly interpolated onto a
    common observation grid (default: union of counts all records cover)."""
    if not records:
        raise ValueError("nothing to aggregate")
    counts = [np.array([row.n_obs for row in rec.rows], dtype=float) for rec in records]
    if grid is None:
        lo = max(c[0] for c in counts)
        hi = min(c[-1] for c in counts)
        grid = np.unique(np.concatenate([c[(c >= lo) & (c <= hi)] for c in counts]))
    grid = np.asarray(grid, dtype=float)
    energies = np.vstack(
        [
            np.interp(grid, c, [row.energy for row in rec.rows])
            for rec, c in zip(records, counts)
        ]
    )
    fids = np.vstack(
        [
            np.interp(grid, c, [row.fidelity for row in rec.rows])
            for rec, c in zip(records, counts)
        ]
    )
    e25, e50, e75 = np.percentile(energies, [25, 50, 75], axis=0)
    f25, f50, f75 = np.percentile(fids, [25, 50, 75], axis=0)
    return Aggregate(grid, e25, e50, e75, f25, f50, f75)


def _run_cell(cfg: ExperimentConfig, method: str, seed: int,
              init: tuple[np.ndarray, float], noise_sq: float) -> TrialRecord:
    spec, h = cfg.circuit(), cfg.hamiltonian()
    obs_cfg = cfg.observation()
    gs = ground_state(h) if cfg.qubits <= 12 else None
    rng = np.random.default_rng([seed, _METHOD_STREAMS[method]])

    def objective(x):
        return observe(h, apply_circuit(spec, x), obs_cfg, rng)

    def metrics(x):
        return evaluate_metrics(x, spec, h, gs)

    run_cfg = cfg.run
    if method == "nft-seq":
        record, _ = run_nft(objective, replace(run_cfg, axis_mode="sequential"), init, rng, metrics)
    elif method == "nft-rand":
        record, _ = run_nft(objective, replace(run_cfg, axis_mode="random"), init, rng, metrics)
    elif method == "emicore":
        record, _ = run_nft_emicore(
            objective, run_cfg, init, cfg.kernel_config(), cfg.emicore, noise_sq, rng,
            cfg.sampler, cfg.hyperopt, metrics,
        )
    else:  # bo-ei
        record, _ = run_plain_bo(
            objective, cfg.kernel_config(), run_cfg, init, noise_sq, rng,
            cfg.hyperopt, metrics, cfg.bo_restarts,
        )
    record.method = method
    record.seed = seed
    return record


def _cell_star(args):
    return _run_cell(*args)


@dataclass
class ExperimentResult:
    records: dict[str, list[TrialRecord]]
    noise_sq: float
    csv_path: Path
    manifest_path: Path
    plot_paths: list[Path] = field(default_factory=list)

    @property
    def aborted_cells(self) -> list[tuple[str, int]]:
        return [
            (rec.method, rec.seed)
            for records in self.records.values()
            for rec in records
            if rec.aborted
        ]


def _fmt(value: float) -> str:
    return repr(float(value))


def write_records_csv(path: Path, records: dict[str, list[TrialRecord]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for method, recs in records.items():
            for rec in sorted(recs, key=lambda r: r.seed):
                for row in rec.rows:
                    writer.writerow(
                        [
                            method,
                            rec.seed,
                            row.n_obs,
                            _fmt(row.energy),
                            _fmt(row.fidelity),
                            _fmt(row.kappa),
                            _fmt(row.gamma),
                            _fmt(row.wall_ms),
                        ]
                    )


def read_records_csv(path: Path) -> dict[str, list[TrialRecord]]:
    """Rebuild per-method trial records from the delimited output."""
    records: dict[str, dict[int, TrialRecord]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}: {reader.fieldnames}")
        for line in reader:
            method = line["method"]
            seed = int(line["seed"])
            rec = records.setdefault(method, {}).setdefault(
                seed, TrialRecord(method=method, seed=seed)
            )
            rec.rows.append(
                CheckpointRow(
                    n_obs=int(line["n_obs"]),
                    energy=float(line["energy"]),
                    fidelity=float(line["fidelity"]),
                    kappa=float(line["kappa"]),
                    gamma=float(line["gamma"]),
                    wall_ms=float(line["wall_ms"]),
                )
            )
    return {m: [recs[s] for s in sorted(recs)] for m, recs in records.items()}


def write_summary_csv(path: Path, aggregates: dict[str, Aggregate]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "n_obs", "energy_q25", "energy_med", "energy_q75",
             "fidelity_q25", "fidelity_med", "fidelity_q75"]
        )
        for method, agg in aggregates.items():
            for i in range(len(agg.n_obs)):
                writer.writerow(
                    [method, int(agg.n_obs[i])]
                    + [_fmt(v[i]) for v in (agg.energy_q25, agg.energy_med, agg.energy_q75,
                                            agg.fidelity_q25, agg.fidelity_med, agg.fidelity_q75)]
                )


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute every (method, seed) cell and emit CSV, manifest, and figures.

    All methods consume the identical cached initial points; metric probes are
    noiseless and never counted as observations.  Cells are independent and
    dispatched onto a process pool when cfg.workers > 1.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    key = objective_key(cfg)
    inits = initial_point_cache(cfg, out_dir / f"init_cache_{key[:12]}.json")

    if cfg.noise_sq is not None:
        noise_sq = float(cfg.noise_sq)
    else:
        probe_rng = np.random.default_rng([int(key[:8], 16), _NOISE_PROBE_STREAM])
        noise_sq = estimate_noise_sq(cfg.circuit(), cfg.hamiltonian(), cfg.observation(), probe_rng)
    noise_sq = max(noise_sq, 1e-10)

    cells = [(cfg, method, seed, inits[seed], noise_sq) for method in cfg.methods for seed in cfg.seeds]
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_cell_star, cells, chunksize=1))
    else:
        results = [_cell_star(cell) for cell in cells]

    records: dict[str, list[TrialRecord]] = {m: [] for m in cfg.methods}
    for record in results:
        records[record.method].append(record)

    csv_path = out_dir / "results.csv"
    write_records_csv(csv_path, records)

    aggregates = {m: aggregate(recs) for m, recs in records.items() if recs}
    write_summary_csv(out_dir / "summary.csv", aggregates)

    manifest_path = out_dir / "manifest.json"
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "objective_key": key,
        "noise_sq": noise_sq,
        "versions": {"vqebo": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {"results": csv_path.name, "summary": "summary.csv"},
        "cells": [
            {"method": rec.method, "seed": rec.seed, "rows": len(rec.rows),
             "aborted": rec.aborted, "reason": rec.abort_reason}
            for rec in results
        ],
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest_path.write_text(json.dumps(manifest, indent=1))

    plot_paths: list[Path] = []
    if cfg.make_plots and aggregates:
        from .plots import render_report

        ground = None
        if cfg.qubits <= 12:
            ground = ground_state(cfg.hamiltonian()).energy
        finals = {
            m: {
                "energy": np.array([rec.rows[-1].energy for rec in recs]),
                "fidelity": np.array([rec.rows[-1].fidelity for rec in recs]),
            }
            for m, recs in records.items()
            if recs
        }
        plot_paths = render_report(aggregates, finals, ground, out_dir)

    return ExperimentResult(records, noise_sq, csv_path, manifest_path, plot_paths)


def load_manifest_config(
    manifest_path: Path, out_dir: str | None = None, workers: int = 1, make_plots: bool = True
) -> ExperimentConfig:
    payload = json.loads(Path(manifest_path).read_text())
    target = out_dir if out_dir is not None else str(Path(manifest_path).parent)
    cfg = ExperimentConfig.from_dict(
        payload["config"], out_dir=target, workers=workers, make_plots=make_plots
    )
    if config_hash(cfg) != payload["config_hash"]:
        raise ValueError("manifest config hash mismatch; file may have been edited")
    return cfg
