"""End-to-end run: analysis, component synthesis and refinement, configuration
optimization and refinement, report.

Every run lives in a workspace directory. A run aborted after stage 1
completed can be resumed; stage 1 is then loaded instead of recomputed.
"""

from __future__ import annotations

import hashlib
import importlib
import importlib.util
import inspect
import json
import logging
import math
import re
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from .algo import AlgoOptimizer, AlgorithmChoice, HyperparamPatch, integrate_config, load_ranges, load_references
from .analysis import EnvCharacteristics, RLAnalysis, TaskSpec, analyze
from .errors import AutoRLError, EnvironmentFault
from .gateway import PROVIDERS, FixtureStore, Gateway, InferenceSettings, ScriptedProvider
from .mdp import MDPSynthesizer, identity_components
from .refine import ConfigDeps, ConvergencePolicy, MDPDeps, refine_config, refine_mdp
from .sandbox import SandboxLimits
from .spaces import MultiAgentSpaceSpec, as_space
from .training import Budget, ScriptedBackend, Trainer
from .verifier import Verifier, sample_probes
from .workspace import Run, RunManifest, Workspace, build_report, write_report

log = logging.getLogger(__name__)


# -- task files and environment references ---------------------------------------

_TASK_HEADING = re.compile(r"^#[ \t]+(.+?)[ \t]*$", re.M)
TASK_SECTIONS = {"task": "task_description", "context": "extra_context", "environment name": "env_name",
                 "scenario": "scenario_name", "agent mode": "agent_mode"}


def parse_task_file(text: str) -> dict:
    """Sections ``# Task`` (required), ``# Context``, ``# Environment Name``,
    ``# Scenario`` and ``# Agent Mode``. A file without headings is all task."""
    marks = list(_TASK_HEADING.finditer(text))
    if not marks:
        return {"task_description": text.strip()}
    out = {}
    for k, m in enumerate(marks):
        key = TASK_SECTIONS.get(m.group(1).strip().lower())
        if key is None:
            raise ValueError(f"unknown task file section {m.group(1)!r}")
        end = marks[k + 1].start() if k + 1 < len(marks) else len(text)
        out[key] = text[m.end():end].strip()
    if not out.get("task_description"):
        raise ValueError("task file needs a non-empty '# Task' section")
    return out


def load_env(ref: str) -> tuple[Callable, str]:
    """Resolve ``module.path:Name`` or ``path/to/file.py:Name`` to (factory, module source)."""
    target, sep, name = ref.partition(":")
    if not sep or not name:
        raise EnvironmentFault(f"environment reference {ref!r} must look like module:Name")
    try:
        if target.endswith(".py"):
            spec = importlib.util.spec_from_file_location(f"autorl_env_{Path(target).stem}", target)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
        else:
            module = importlib.import_module(target)
        factory = getattr(module, name)
        source = inspect.getsource(module)
    except (ImportError, AttributeError, OSError, SyntaxError) as exc:
        raise EnvironmentFault(f"cannot load environment {ref!r}: {exc}") from exc
    return factory, source


# -- options ---------------------------------------------------------------------


@dataclass
class RunOptions:
    task_file: str
    env: str
    mdp_iterations: int = 5
    config_iterations: int = 5
    train_steps: int = 10000
    eval_episodes: int = 50
    metric: str = "mean_eval_return"
    mode: str = "replay"
    provider: str = ""
    fixtures: str = ""
    backend: str = "random"
    seed: int = 0
    probe_count: int = 64
    stage1_fraction: float = 1.0
    repair_cap: int = 3
    patience: int = 2
    min_relative_gain: float = 0.01
    candidates: list = field(default_factory=list)
    sandbox_timeout: float = 10.0
    workspace: str = "autorl-runs"
    run_id: str = ""

    def __post_init__(self):
        if self.mdp_iterations < 1 or self.config_iterations < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.train_steps < 1 or self.eval_episodes < 1:
            raise ValueError("training budget must be positive")
        if not 0 < self.stage1_fraction <= 1:
            raise ValueError("stage1_fraction must lie in (0, 1]")


def default_candidates(obs_space, act_space) -> list[str]:
    if isinstance(act_space, MultiAgentSpaceSpec):
        return ["mappo", "ppo"]
    if act_space.kind == "discrete":
        return ["ppo", "dqn"]
    return ["ppo", "sac", "td3"]


def build_provider(spec: str):
    """``scripted:<yaml>``, ``anthropic`` or ``openai`` (optionally ``name:model``)."""
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if not arg:
            raise ValueError("scripted provider needs a YAML path: scripted:<file>")
        return ScriptedProvider.from_yaml(arg)
    if kind in PROVIDERS:
        return PROVIDERS[kind](model=arg or None)
    raise ValueError(f"unknown provider {spec!r}")


def build_backend(spec: str) -> Callable | None:
    """``random`` (built-in registry) or ``scripted:<yaml>`` holding a schedule list."""
    kind, _, arg = spec.partition(":")
    if kind == "random":
        return None
    if kind == "scripted":
        import yaml

        schedule = yaml.safe_load(Path(arg).read_text(encoding="utf-8"))
        return ScriptedBackend.factory(list(schedule))
    raise ValueError(f"unknown backend {spec!r}")


def task_fingerprint(spec: TaskSpec) -> str:
    blob = json.dumps(asdict(spec), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def analysis_to_dict(a: RLAnalysis) -> dict:
    return {"objectives": a.objectives, "constraints": a.constraints,
            "env_characteristics": asdict(a.env_characteristics), "key_challenges": list(a.key_challenges)}


def analysis_from_dict(d: dict) -> RLAnalysis:
    return RLAnalysis(d["objectives"], d["constraints"], EnvCharacteristics(**d["env_characteristics"]),
                      tuple(d["key_challenges"]))


# -- the pipeline ----------------------------------------------------------------


@dataclass
class RunResult:
    run: Run
    report: object
    provider_calls: int


class Pipeline:
    def __init__(self, options: RunOptions, provider=None, backend_factory: Callable | None = None,
                 env_factory: Callable | None = None, env_source: str | None = None):
        self.options = o = options
        text = Path(o.task_file).read_text(encoding="utf-8")
        if env_factory is None:
            env_factory, loaded_source = load_env(o.env)
            env_source = env_source or loaded_source
        elif env_source is None:
            try:
                env_source = inspect.getsource(inspect.getmodule(env_factory))
            except (TypeError, OSError):
                env_source = ""
        self.env_factory = env_factory
        self.spec = TaskSpec(env_code=env_source or "", **parse_task_file(text))
        self.provider = provider
        if self.provider is None and o.mode != "replay":
            self.provider = build_provider(o.provider)
        self.backend_factory = backend_factory if backend_factory is not None else build_backend(o.backend)
        self.workspace = Workspace(o.workspace)

    def _gateway(self, run: Run) -> Gateway:
        store = FixtureStore(self.options.fixtures or run.fixtures_dir)
        return Gateway(self.provider, self.options.mode, store, InferenceSettings())

    def _manifest(self) -> RunManifest:
        o = self.options
        return RunManifest(
            run_id=o.run_id or uuid.uuid4().hex[:12],
            task_fingerprint=task_fingerprint(self.spec),
            iterations={"mdp": o.mdp_iterations, "config": o.config_iterations},
            seeds={"train": o.seed, "probes": o.seed},
            metric=o.metric,
            options={k: v for k, v in asdict(o).items() if k not in ("workspace", "run_id")},
        )

    def run(self, resume: str | None = None) -> RunResult:
        if resume:
            run = self.workspace.open_run(resume)
            run.manifest.status, run.manifest.error = "running", None
            run.save_manifest()
        else:
            run = self.workspace.create_run(self._manifest())
        gateway = self._gateway(run)
        try:
            self._execute(run, gateway)
            run.manifest.status = "completed"
        except AutoRLError as exc:
            run.manifest.status = "aborted"
            run.manifest.error = f"{type(exc).__name__}: {exc}"
            run.save_manifest()
            write_report(run, build_report(run.manifest, run.histories()))
            raise
        run.manifest.stage = "report"
        run.save_manifest()
        report = build_report(run.manifest, run.histories())
        write_report(run, report)
        return RunResult(run, report, gateway.provider_calls)

    def _execute(self, run: Run, gateway: Gateway) -> None:
        o, m = self.options, run.manifest
        budget = Budget(o.train_steps, o.eval_episodes, o.seed, o.metric)
        stage1_trainer = Trainer(self.env_factory, budget.scaled(o.stage1_fraction), self.backend_factory)
        stage2_trainer = Trainer(self.env_factory, budget, self.backend_factory)

        env = self.env_factory()
        obs_space, act_space = as_space(env.observation_space), as_space(env.action_space)
        probes = sample_probes(env, o.probe_count, o.seed)
        candidates = list(o.candidates) or default_candidates(obs_space, act_space)
        optimizer = AlgoOptimizer(gateway, self.spec, candidates, load_references(), load_ranges())
        default_ref = optimizer.reference(candidates[0])
        default_choice = AlgorithmChoice(candidates[0], "reference default")

        # analysis
        if (run.dir / "analysis.json").exists():
            analysis = analysis_from_dict(run.load_json("analysis.json"))
        else:
            analysis = analyze(self.spec, gateway)
            run.save_json("analysis.json", analysis_to_dict(analysis))

        # baseline: pass-through wrappers under the reference configuration
        identity = identity_components(obs_space, act_space, self.spec.agent_mode)
        stage1_config = integrate_config(default_choice, default_ref.network, HyperparamPatch((), default_ref.hyperparams),
                                         default_ref.hyperparams, identity, {"run_id": m.run_id})
        if m.baseline_score is None:
            _, baseline = stage1_trainer(identity, stage1_config)
            m.baseline_components = run.save_components(identity)
            m.baseline_score = baseline.value
            m.stage = "baseline"
            run.save_manifest()

        # stage 1
        if m.stage in ("stage1", "stage2") and m.best_components:
            best = run.load_components(m.best_components)
            mdp_history = run.load_history("mdp")
        else:
            run.set_aside_history("mdp")
            synthesizer = MDPSynthesizer(gateway, self.spec, o.repair_cap)
            initial = synthesizer.synthesize_all(analysis, obs_space, act_space)
            deps = MDPDeps(Verifier(SandboxLimits(timeout=o.sandbox_timeout)), synthesizer, stage1_trainer, probes,
                           analysis, stage1_config, run)
            policy = ConvergencePolicy(o.mdp_iterations, o.patience, o.min_relative_gain)
            best, mdp_history = refine_mdp(initial, policy, deps, floor=identity, initial_score=m.baseline_score)
            m.best_components = run.save_components(best)
            m.stage = "stage1"
            run.save_manifest()

        # stage 2
        run.set_aside_history("config")
        floor = integrate_config(default_choice, default_ref.network, HyperparamPatch((), default_ref.hyperparams),
                                 default_ref.hyperparams, best, {"run_id": m.run_id})
        choice = optimizer.select_algorithm(best, analysis, mdp_history)
        reference = optimizer.reference(choice.name)
        net = optimizer.design_network(choice, best.obs, best.act, reference.network, mdp_history)
        patch = optimizer.optimize_hyperparams(choice, net, best, reference.hyperparams, mdp_history)
        deps2 = ConfigDeps(optimizer, stage2_trainer, analysis, run, {"run_id": m.run_id})
        policy2 = ConvergencePolicy(o.config_iterations, o.patience, o.min_relative_gain)
        initial_score = mdp_history.best_score if o.stage1_fraction == 1.0 else -math.inf
        best_config, _ = refine_config(choice, net, patch, reference.hyperparams, best, policy2, deps2,
                                       initial=floor if math.isfinite(initial_score) else None,
                                       initial_score=initial_score)
        m.best_config = run.save_config(best_config)
        m.stage = "stage2"
        run.save_manifest()
