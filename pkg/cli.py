import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import settings
from services.errors import ToolkitError
from services.harness import (
    emit_bound_overlay,
    emit_table2,
    khat_robustness,
    load_experiment_config,
    rip_report,
    run_sweep,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

# argparse destination -> ExperimentConfig field
FIELD_FLAGS = {
    "nt": "nt",
    "nr": "nr",
    "n": "n",
    "k": "k",
    "khat": "khat",
    "pilot_mode": "pilot_mode",
    "support_model": "support_model",
    "num_clusters": "num_clusters",
    "cluster_width": "cluster_width",
    "shared_clusters": "shared_clusters",
    "normalize_peak": "normalize_peak",
    "normalization": "normalization",
    "power_budget": "power_budget",
    "walden_c": "walden_c",
    "duration": "duration",
    "duration_scaling": "duration_scaling",
    "training_length": "training_length",
    "bit_depths": "bit_depth_grid",
    "snrs": "snr_grid_db",
    "m_override": "m_override",
    "trials": "trials",
    "seed": "master_seed",
    "workers": "workers",
    "rip_samples": "rip_samples",
    "tau": "tau",
    "max_iters": "max_iters",
    "stall_window": "stall_window",
    "combine": "combine",
    "refine": "refine",
    "refine_z": "refine_z",
}


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _tau(text: str):
    return text if text == "auto" else float(text)


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="KEY=value or JSON experiment file")
    parser.add_argument("--nt", type=int)
    parser.add_argument("--nr", type=int)
    parser.add_argument("--n", type=int, help="Taps per Tx-Rx pair")
    parser.add_argument("--k", type=int, help="Nonzeros per pair")
    parser.add_argument("--khat", type=int, help="BIHT sparsity target")
    parser.add_argument("--pilot-mode", choices=["iid_random", "exact_orthogonal"])
    parser.add_argument("--support-model", choices=["uniform", "clustered"])
    parser.add_argument("--num-clusters", type=int)
    parser.add_argument("--cluster-width", type=int)
    parser.add_argument("--shared-clusters", action=argparse.BooleanOptionalAction, help="Reuse cluster spans across pairs")
    parser.add_argument("--normalize-peak", action=argparse.BooleanOptionalAction, help="Scale taps so the peak is 1")
    parser.add_argument("--normalization", choices=["per_pair", "global"])
    parser.add_argument("--power-budget", type=float, help="Watts")
    parser.add_argument("--walden-c", type=float, help="Joules per conversion step")
    parser.add_argument("--duration", type=float, help="Seconds per transmitter")
    parser.add_argument("--duration-scaling", choices=["per_transmitter", "fixed"])
    parser.add_argument("--training-length", type=int)
    parser.add_argument("--bit-depths", type=_int_list, help="Comma separated, e.g. 2,3,4")
    parser.add_argument("--snrs", type=_float_list, help="Comma separated SNRs in dB")
    parser.add_argument("--m-override", type=_int_list, help="Sample count per bit depth")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--rip-samples", type=int)
    parser.add_argument("--tau", type=_tau, help='Step size or "auto"')
    parser.add_argument("--max-iters", type=int)
    parser.add_argument("--stall-window", type=int)
    parser.add_argument("--combine", choices=["joint", "separate"])
    parser.add_argument("--refine", action=argparse.BooleanOptionalAction, help="Backward elimination after the linear fit")
    parser.add_argument("--refine-z", type=float, help="Standard errors a kept coefficient must exceed")
    parser.add_argument("--out", default=settings.OUTPUT_DIR, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cli.py",
        description="Few-bit ADC channel estimation experiments",
    )
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="Monte Carlo RSNR over bit depths and SNRs")
    _add_experiment_flags(sweep)
    sweep.add_argument("--strict", action="store_true", help="Exit 2 when any bit depth is infeasible")
    sweep.add_argument("--timing", action="store_true", help="Include wall time in records.csv")

    table2 = sub.add_parser("table2", help="ADC operating points under a power budget")
    table2.add_argument("--power-budget", type=float, default=settings.POWER_BUDGET_W)
    table2.add_argument("--walden-c", type=float, default=settings.WALDEN_C_J)
    table2.add_argument("--duration", type=float, default=settings.DURATION_S)
    table2.add_argument("--bit-depths", type=_int_list, default=list(range(2, 9)))
    table2.add_argument("--verbatim", action="store_true", help="Use the published sample counts")
    table2.add_argument("--out", default=settings.OUTPUT_DIR)

    bound = sub.add_parser("bound", help="Oracle RSNR bound per bit depth and SNR")
    _add_experiment_flags(bound)

    khat = sub.add_parser("khat", help="Sensitivity of BIHT + linear to the sparsity target")
    _add_experiment_flags(khat)
    khat.add_argument("--khat-grid", type=_int_list, required=True)
    khat.add_argument("--bit-depth", type=int)
    khat.add_argument("--snr", type=float)

    rip = sub.add_parser("rip-probe", help="Sampled restricted isometry constants")
    _add_experiment_flags(rip)
    rip.add_argument("--order", type=int, help="Sparsity order (defaults to Nt*Nr*K)")

    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _experiment(args: argparse.Namespace):
    overrides = {field: getattr(args, dest, None) for dest, field in FIELD_FLAGS.items()}
    return load_experiment_config(args.config, overrides)


def _write_frame(frame, out: str, name: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    frame.to_csv(target, index=False, float_format="%.6f")
    logger.info(f"Wrote {target}")
    return target


def run_command(args: argparse.Namespace) -> int:
    if args.command == "sweep":
        result = run_sweep(_experiment(args))
        result.write(args.out, include_timing=args.timing)
        print(result.optimum.to_string(index=False))
        if args.strict and result.infeasible:
            logger.error(f"Infeasible bit depths: {result.infeasible}")
            return EXIT_INFEASIBLE
        return EXIT_OK

    if args.command == "table2":
        frame = emit_table2(args.power_budget, args.walden_c, args.duration, args.bit_depths, args.verbatim)
        _write_frame(frame, args.out, "table2.csv")
        print(frame.to_string(index=False))
        return EXIT_OK

    if args.command == "bound":
        _write_frame(emit_bound_overlay(_experiment(args)), args.out, "bound.csv")
        return EXIT_OK

    if args.command == "khat":
        trials, summary = khat_robustness(_experiment(args), args.khat_grid, args.bit_depth, args.snr)
        _write_frame(summary, args.out, "khat.csv")
        _write_frame(trials, args.out, "khat_trials.csv")
        print(summary.to_string(index=False))
        return EXIT_OK

    if args.command == "rip-probe":
        _write_frame(rip_report(_experiment(args), args.order), args.out, "rip.csv")
        return EXIT_OK

    if args.command == "serve":
        import uvicorn

        uvicorn.run("main:app", host=args.host, port=args.port, log_level=args.log_level.lower())
        return EXIT_OK

    raise ValueError(f"unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return run_command(args)
    except ToolkitError as exc:
        logger.error(f"{exc.error_code}: {exc.message}")
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
