"""Command-line driver: single runs, parameter sweeps and reproducibility checks.

Exit status is 0 when every requested run wrote its diagnostics, 2 for an
invalid configuration or command line and 1 when a run failed.
"""

from __future__ import annotations

import argparse
import filecmp
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import AssimilationConfig, ConfigError, parse_config, resolve_key
from .experiment import ExperimentError, run_twin_experiment, write_outputs

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


class RunFailure(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(stage, message)  # both in args, so it pickles across processes
        self.stage = stage
        self.message = message

    def __str__(self) -> str:
        return f"[{self.stage}] {self.message}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="menkf", description="Run multigrid EnKF twin experiments.")
    parser.add_argument("--config", required=True, type=Path, help="experiment configuration file")
    parser.add_argument("--seed", type=int, help="master seed, overrides the config")
    parser.add_argument("--output-dir", type=Path, help="output directory, overrides the config")
    parser.add_argument(
        "--sweep",
        metavar="KEY=V1,V2,...",
        help="run once per value; each run writes to a KEY=VALUE subdirectory",
    )
    parser.add_argument(
        "--no-state-correction",
        action="store_true",
        help="parameter estimation only: the fine state is never corrected",
    )
    parser.add_argument("--jobs", type=int, default=1, help="sweep runs executed in parallel processes")
    parser.add_argument(
        "--verify",
        action="store_true",
        help="repeat every run and check that the CSV outputs are byte-identical",
    )
    return parser


def parse_sweep(text: str) -> tuple[str, list[str]]:
    key, sep, values = text.partition("=")
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not sep or not key.strip() or not items:
        raise ConfigError(f"--sweep expects KEY=V1,V2,..., got {text!r}")
    resolve_key(key.strip())
    return key.strip(), items


def plan_runs(cfg: AssimilationConfig, out_dir: Path, sweep: str | None) -> list[tuple[AssimilationConfig, Path]]:
    """Configs and output directories of every run, validated up front."""
    if sweep is None:
        return [(cfg, out_dir)]
    key, values = parse_sweep(sweep)
    name = key.split(".")[-1]
    return [(cfg.replace(**{key: value}), out_dir / f"{name}={value}") for value in values]


def prepare_output(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise RunFailure("output", f"cannot write to {path}: {exc}") from None


def output_files(root: Path) -> list[Path]:
    return sorted(p.relative_to(root) for p in root.rglob("*.csv"))


def compare_outputs(a: Path, b: Path) -> list[str]:
    """Relative paths of CSV outputs that differ or exist in only one tree."""
    files_a, files_b = output_files(a), output_files(b)
    differ = sorted(set(files_a) ^ set(files_b), key=str)
    differ += [p for p in files_a if p in files_b and not filecmp.cmp(a / p, b / p, shallow=False)]
    return [str(p) for p in differ]


def execute(cfg: AssimilationConfig, out_dir: Path, verify: bool = False) -> Path:
    prepare_output(out_dir)
    start = time.perf_counter()
    try:
        result = run_twin_experiment(cfg)
    except ExperimentError as exc:
        stage = "truth" if str(exc).startswith("truth") else "assimilation"
        raise RunFailure(stage, str(exc)) from None
    try:
        write_outputs(result, out_dir, time.perf_counter() - start)
    except OSError as exc:
        raise RunFailure("output", str(exc)) from None
    if verify:
        with tempfile.TemporaryDirectory() as tmp:
            try:
                write_outputs(run_twin_experiment(cfg), tmp)
            except ExperimentError as exc:
                raise RunFailure("verify", str(exc)) from None
            differ = compare_outputs(out_dir, Path(tmp))
        if differ:
            raise RunFailure("verify", "repeated run differs in " + ", ".join(differ))
    return out_dir


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.no_state_correction:
            changes["enable_state_correction"] = False
        if args.output_dir is not None:
            changes["output_dir"] = str(args.output_dir)
        if changes:
            cfg = cfg.replace(**changes)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        runs = plan_runs(cfg, Path(cfg.output_dir), args.sweep)
    except ConfigError as exc:
        print(f"menkf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    failures = 0
    try:
        if args.jobs > 1 and len(runs) > 1:
            with ProcessPoolExecutor(min(args.jobs, len(runs))) as pool:
                futures = [pool.submit(execute, c, d, args.verify) for c, d in runs]
                outcomes = []
                for fut in futures:
                    try:
                        outcomes.append(fut.result())
                    except RunFailure as exc:
                        outcomes.append(exc)
        else:
            outcomes = []
            for c, d in runs:
                try:
                    outcomes.append(execute(c, d, args.verify))
                except RunFailure as exc:
                    outcomes.append(exc)
    except KeyboardInterrupt:
        print("menkf: interrupted", file=sys.stderr)
        return EXIT_RUN

    for (_, out_dir), outcome in zip(runs, outcomes):
        if isinstance(outcome, RunFailure):
            failures += 1
            print(f"menkf: run failed {outcome}", file=sys.stderr)
        else:
            print(f"wrote {out_dir}")
    return EXIT_RUN if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
