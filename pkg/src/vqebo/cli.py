"""Command-line entry points: run experiments, re-render reports, replay manifests."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .circuits import OBSERVE_MODES
from .gp import SAMPLERS
from .harness import (
    ExperimentConfig,
    METHODS,
    aggregate,
    load_manifest_config,
    read_records_csv,
    run_experiment,
    write_summary_csv,
)


def _parse_triple(text: str) -> tuple[float, float, float]:
    values = [float(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip()]
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated reals, got {text!r}")
    return tuple(values)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return tuple(range(int(lo), int(hi)))
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {METHODS}")
    return methods


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-qbits", type=int, required=True)
    parser.add_argument("--n-layers", type=int, required=True)
    parser.add_argument("--circuit", default="esu2", choices=["esu2"])
    parser.add_argument("--pbc", type=_parse_bool, default=False,
                        help="periodic boundary conditions (default False)")
    parser.add_argument("--j-couplings", type=_parse_triple, default=(-1.0, 0.0, 0.0),
                        metavar="JX,JY,JZ")
    parser.add_argument("--h-couplings", type=_parse_triple, default=(0.0, 0.0, -1.0),
                        metavar="HX,HY,HZ")
    parser.add_argument("--n-readout", type=int, default=1024,
                        help="measurement shots per observation")
    parser.add_argument("--obs-mode", default="binomial-per-term", choices=OBSERVE_MODES)
    parser.add_argument("--n-iter", type=int, required=True)
    parser.add_argument("--methods", type=_parse_methods, default=("emicore",),
                        metavar="M1,M2,...")
    parser.add_argument("--kernel", default="vqe", choices=["vqe", "rbf", "periodic"])
    parser.add_argument("--kernel-params", default="",
                        help="e.g. sigma_0=6.0,gamma=2.0")
    parser.add_argument("--hyperopt", default="",
                        help="e.g. optim=grid,steps=120,max_gamma=20,"
                             "interval=100*1+20*9+10*100,loss=mll")
    parser.add_argument("--acq-params", default="",
                        help="e.g. func=ei,optim=emicore,pairsize=20,gridsize=100,"
                             "corethresh=1.0,corethresh_width=10,samplesize=100,"
                             "smo-steps=0,smo-axis=True")
    parser.add_argument("--inducer", default="",
                        help="e.g. last_slack:retain=100:slack=20")
    parser.add_argument("--noise-sq", type=float, default=None,
                        help="observation noise variance; estimated when omitted")
    parser.add_argument("--sampler", default="low-discrepancy", choices=SAMPLERS)
    parser.add_argument("--bo-restarts", type=int, default=16)
    parser.add_argument("--seeds", type=_parse_seeds, default=(0,),
                        metavar="A:B or S1,S2,...")
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--no-plots", action="store_true")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    fields = {
        "n_qbits": args.n_qbits,
        "n_layers": args.n_layers,
        "pbc": args.pbc,
        "j_couplings": list(args.j_couplings),
        "h_couplings": list(args.h_couplings),
        "n_readout": args.n_readout,
        "obs_mode": args.obs_mode,
        "n_iter": args.n_iter,
        "methods": list(args.methods),
        "kernel": args.kernel,
        "kernel_params": args.kernel_params,
        "hyperopt": args.hyperopt,
        "acq_params": args.acq_params,
        "inducer": args.inducer,
        "noise_sq": args.noise_sq,
        "sampler": args.sampler,
        "bo_restarts": args.bo_restarts,
        "seeds": list(args.seeds),
    }
    return ExperimentConfig.from_dict(
        fields, out_dir=args.out_dir, workers=args.workers, make_plots=not args.no_plots
    )


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    return _execute(cfg)


def _execute(cfg: ExperimentConfig) -> int:
    result = run_experiment(cfg)
    print(f"noise variance: {result.noise_sq:.6g}")
    print(f"wrote {result.csv_path}")
    print(f"wrote {result.manifest_path}")
    for path in result.plot_paths:
        print(f"wrote {path}")
    for method, recs in result.records.items():
        final = [rec.rows[-1] for rec in recs if rec.rows]
        if final:
            med_e = float(np.median([r.energy for r in final]))
            med_f = float(np.median([r.fidelity for r in final]))
            print(f"{method}: median final energy {med_e:.4f}, fidelity {med_f:.4f}")
    aborted = result.aborted_cells
    if aborted:
        print(f"aborted cells: {aborted}", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    records = read_records_csv(Path(args.csv))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    aggregates = {m: aggregate(recs) for m, recs in records.items()}
    summary_path = out_dir / "summary.csv"
    write_summary_csv(summary_path, aggregates)
    print(f"wrote {summary_path}")
    if not args.no_plots:
        from .plots import render_report

        ground = None
        if args.ground_energy is not None:
            ground = args.ground_energy
        finals = {
            m: {
                "energy": np.array([rec.rows[-1].energy for rec in recs]),
                "fidelity": np.array([rec.rows[-1].fidelity for rec in recs]),
            }
            for m, recs in records.items()
        }
        for path in render_report(aggregates, finals, ground, out_dir):
            print(f"wrote {path}")
    return 0


def _cmd_rerun(args: argparse.Namespace) -> int:
    cfg = load_manifest_config(
        Path(args.manifest),
        out_dir=args.out_dir,
        workers=args.workers,
        make_plots=not args.no_plots,
    )
    return _execute(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqebo",
        description="Optimize simulated spin-chain circuit energies and report the traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment grid of (method, seed) cells")
    _add_run_flags(run_p)
    run_p.set_defaults(func=_cmd_run)

    rep_p = sub.add_parser("report", help="re-aggregate a results CSV and render figures")
    rep_p.add_argument("--csv", required=True)
    rep_p.add_argument("--out-dir", default="report")
    rep_p.add_argument("--ground-energy", type=float, default=None)
    rep_p.add_argument("--no-plots", action="store_true")
    rep_p.set_defaults(func=_cmd_report)

    rerun_p = sub.add_parser("rerun", help="replay an experiment from its manifest")
    rerun_p.add_argument("--manifest", required=True)
    rerun_p.add_argument("--out-dir", required=True)
    rerun_p.add_argument("--workers", type=int, default=1)
    rerun_p.add_argument("--no-plots", action="store_true")
    rerun_p.set_defaults(func=_cmd_rerun)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
