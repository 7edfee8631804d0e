"""
DMP++ Simulator - CLI
Lệnh: train, run, compare, bench, validate
"""
import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from benchmark_service import DEFAULT_KERNELS, format_table, run_benchmark
from dmp_basis import new_basis
from dmp_data_models import Generalization, get_runtime_settings
from dmp_errors import DmpArgumentError, DmpError, TrainingError
from dmp_model import load_demonstration_csv, train_model
from scenario_runner import get_scenario_runner
from trajectory_store import get_trajectory_store, to_jsonable

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmpp", description="Online-adapted movement primitive simulator")
    parser.add_argument("--out-dir", default=None, help="Output directory (overrides DMPP_OUT_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Fit a model to a CSV demonstration")
    train.add_argument("demo", help="CSV with header t,y1.. or t,qw,qx,qy,qz")
    train.add_argument("--kernels", "-K", type=int, default=30)
    train.add_argument("--width-factor", type=float, default=1.5)
    train.add_argument("--stiffness", type=float, default=None)
    train.add_argument("--ridge", type=float, default=1e-8)
    train.add_argument("--model", "-o", default=None, help="Model JSON path, default <out-dir>/<demo>_model.json")

    for name, help_text in (("run", "Run scenario files"), ("compare", "Run scenarios with DMP++ and a classical baseline")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("scenarios", nargs="+")
        cmd.add_argument("--dt", type=float, default=None)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--dump-debug", action="store_true")
        cmd.add_argument("--reverse", action="store_true", default=None)
        cmd.add_argument(
            "--compare", choices=[g.value for g in Generalization],
            default="classical" if name == "compare" else None,
        )

    bench = sub.add_parser("bench", help="Per-step adaptation latency")
    bench.add_argument("--kernels", "-K", type=int, nargs="+", default=list(DEFAULT_KERNELS))
    bench.add_argument("--dofs", "-n", type=int, default=6)
    bench.add_argument("--steps", type=int, default=500)
    bench.add_argument("--seed", type=int, default=0)

    validate = sub.add_parser("validate", help="Schema-check scenario files")
    validate.add_argument("scenarios", nargs="+")
    return parser


def cmd_train(args) -> int:
    try:
        demo = load_demonstration_csv(args.demo)
        model = train_model(demo, new_basis(args.kernels, args.width_factor), stiffness=args.stiffness, ridge=args.ridge)
    except DmpArgumentError as e:
        logger.error(f"❌ {e}")
        return 2
    except TrainingError as e:
        logger.error(f"❌ Training failed: {e}")
        return 1

    store = get_trajectory_store(args.out_dir)
    path = args.model or str(store.path_for(Path(args.demo).stem, "_model.json"))
    written = asyncio.run(store.save_model(path, model))
    if written is None:
        return 1
    print(f"training residual: {model.training_residual:.6e}")
    print(f"model: {written}")
    return 0


def _summarize(result: dict):
    if result.get("status") == "error":
        print(f"❌ {result.get('scenario', '?')}: {result['error_type']}: {result['detail']}")
        return
    for p in result["passes"]:
        m = p["metrics"]
        mark = "✅" if m.hard_invariants_ok else "⚠️"
        print(f"{mark} {p['name']}: endpoint {m.endpoint_error:.3e}, peak |ddy| {m.peak_acceleration:.4g}, "
              f"residual {m.max_constraint_residual:.2e}")


def cmd_run(args) -> int:
    runner = get_scenario_runner(args.out_dir)
    compare = Generalization(args.compare) if args.compare else None
    results = asyncio.run(runner.run_many(
        args.scenarios, compare=compare, reverse=args.reverse, dt=args.dt, seed=args.seed,
        dump_debug=args.dump_debug,
    ))
    for result in results:
        _summarize(result)
    return max((r["exit_code"] for r in results), default=0)


def cmd_bench(args) -> int:
    try:
        report = run_benchmark(args.kernels, n=args.dofs, steps=args.steps, seed=args.seed)
    except DmpArgumentError as e:
        logger.error(f"❌ {e}")
        return 2
    print(format_table(report))
    store = get_trajectory_store(args.out_dir)
    asyncio.run(store.save_json("bench", ".json", report.model_dump()))
    return 0


def cmd_validate(args) -> int:
    runner = get_scenario_runner(args.out_dir)
    code = 0
    for path in args.scenarios:
        result = runner.validate(path)
        if result["exit_code"]:
            print(f"❌ {path}: {result['detail']}")
        else:
            print(f"✅ {path}: {result['scenario']}")
        code = max(code, result["exit_code"])
    return code


COMMANDS = {
    "train": cmd_train,
    "run": cmd_run,
    "compare": cmd_run,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_runtime_settings()
    logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DmpError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(json.dumps(to_jsonable({"status": "error", "error_type": type(e).__name__, "detail": str(e)})))
        return 1


if __name__ == "__main__":
    sys.exit(main())
