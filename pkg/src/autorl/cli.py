"""Command-line entry point.

Subcommands: ``run``, ``report``, ``verify`` and ``fixtures {record,list}``.
Option precedence for ``run``: values from ``--config`` override command-line
flags, which override built-in defaults.

Exit codes: 0 success, 1 other package error, 2 usage error, 3 LLM gateway
(including missing replay fixtures), 4 sandbox or repair budget, 5 environment
or training backend, 6 unparseable model output, 7 workspace, 8 rejected
hyperparameter patch, 9 verification failed, 10 prompt templates.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from .errors import AutoRLError, FixtureMiss
from .gateway import FixtureStore
from .pipeline import Pipeline, RunOptions, load_env
from .sandbox import SandboxLimits
from .verifier import Verifier, sample_probes
from .workspace import Workspace, build_report

EXIT_USAGE = 2
EXIT_VERIFY_FAILED = 9

# flag name -> RunOptions field (only where they differ)
_FLAG_FIELDS = {"task": "task_file", "mdp_iters": "mdp_iterations", "config_iters": "config_iterations"}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of run options; its values override flags")
    p.add_argument("--task", help="task file with '# Task' and optional '# Context' sections")
    p.add_argument("--env", help="environment reference, module.path:Name or file.py:Name")
    p.add_argument("--mdp-iters", type=int, help="iteration cap of the component stage")
    p.add_argument("--config-iters", type=int, help="iteration cap of the configuration stage")
    p.add_argument("--train-steps", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--metric", choices=["mean_eval_return", "win_rate"])
    p.add_argument("--mode", choices=["live", "record", "replay"])
    p.add_argument("--provider", help="scripted:<yaml>, anthropic[:model] or openai[:model]")
    p.add_argument("--fixtures", help="fixture directory (default: the run's fixtures/)")
    p.add_argument("--backend", help="random or scripted:<yaml>")
    p.add_argument("--seed", type=int)
    p.add_argument("--probe-count", type=int)
    p.add_argument("--stage1-fraction", type=float)
    p.add_argument("--repair-cap", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--min-relative-gain", type=float)
    p.add_argument("--candidates", help="comma-separated algorithm names")
    p.add_argument("--sandbox-timeout", type=float)
    p.add_argument("--workspace")
    p.add_argument("--run-id")
    p.add_argument("--resume", metavar="RUN_ID", help="continue an aborted run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autorl", description="Automated RL agent design pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="run both stages and write a report"))

    rep = sub.add_parser("report", help="print the report of a run")
    rep.add_argument("run_id")
    rep.add_argument("--workspace", default="autorl-runs")
    rep.add_argument("--json", action="store_true", help="print the JSON report instead of markdown")

    ver = sub.add_parser("verify", help="verify stored components of a run")
    ver.add_argument("run_id")
    ver.add_argument("--workspace", default="autorl-runs")
    ver.add_argument("--components", help="component fingerprint (default: the run's best)")
    ver.add_argument("--env", help="environment reference (default: the run's)")
    ver.add_argument("--probe-count", type=int, default=64)
    ver.add_argument("--seed", type=int, default=0)

    fx = sub.add_parser("fixtures", help="record or list LLM fixtures")
    fx_sub = fx.add_subparsers(dest="fixtures_command", required=True)
    _add_run_flags(fx_sub.add_parser("record", help="run the pipeline against a provider, storing every reply"))
    ls = fx_sub.add_parser("list", help="list stored fixtures")
    ls.add_argument("directory")
    return parser


def resolve_options(args: argparse.Namespace, forced_mode: str | None = None) -> RunOptions:
    """Defaults, then flags, then the config file."""
    values: dict = {}
    fields = {f.name for f in dataclasses.fields(RunOptions)}
    for key, value in vars(args).items():
        name = _FLAG_FIELDS.get(key, key)
        if value is not None and name in fields:
            values[name] = value
    if isinstance(values.get("candidates"), str):
        values["candidates"] = [c.strip() for c in values["candidates"].split(",") if c.strip()]
    if args.config:
        doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        unknown = set(doc) - fields
        if unknown:
            raise ValueError(f"unknown option(s) in {args.config}: {sorted(unknown)}")
        values.update(doc)
    if forced_mode:
        values["mode"] = forced_mode
    for required in ("task_file", "env"):
        if not values.get(required):
            raise ValueError(f"missing required option {required!r}")
    if values.get("mode") in ("live", "record") and not values.get("provider"):
        raise ValueError(f"{values['mode']} mode needs --provider")
    return RunOptions(**values)


def cmd_run(args, forced_mode: str | None = None) -> int:
    options = resolve_options(args, forced_mode)
    if args.resume:
        options.run_id = args.resume
    result = Pipeline(options).run(resume=args.resume)
    print(result.report.markdown)
    print(f"run_id: {result.run.run_id}")
    print(f"report: {result.run.dir / 'report.md'}")
    return 0


def cmd_report(args) -> int:
    run = Workspace(args.workspace).open_run(args.run_id)
    report = build_report(run.manifest, run.histories())
    print(report.json_text() if args.json else report.markdown, end="")
    return 0


def cmd_verify(args) -> int:
    run = Workspace(args.workspace).open_run(args.run_id)
    fp = args.components or run.manifest.best_components or run.manifest.baseline_components
    if not fp:
        raise AutoRLError(f"run {args.run_id!r} has no stored components")
    components = run.load_components(fp)
    factory, _ = load_env(args.env or run.manifest.options.get("env", ""))
    timeout = run.manifest.options.get("sandbox_timeout", 10.0)
    probes = sample_probes(factory(), args.probe_count, args.seed)
    report = Verifier(SandboxLimits(timeout=timeout)).verify(components, probes)
    for check in report.checks:
        line = f"{check.check_id:<22} {check.status}"
        print(line + (f"  {check.detail}" if check.detail else ""))
    if report.feedback is not None:
        print(f"feedback: [{report.feedback.stage}] {report.feedback.role}: {report.feedback.message}")
    print("PASSED" if report.passed else "FAILED")
    return 0 if report.passed else EXIT_VERIFY_FAILED


def cmd_fixtures_list(args) -> int:
    for rec in FixtureStore(args.directory).list():
        print(f"{rec['fingerprint']}  {rec.get('template_id', '')}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.fixtures_command == "record":
            return cmd_run(args, forced_mode="record")
        return cmd_fixtures_list(args)
    except FixtureMiss as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"missing fingerprint: {exc.fingerprint}", file=sys.stderr)
        return exc.exit_code
    except AutoRLError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
