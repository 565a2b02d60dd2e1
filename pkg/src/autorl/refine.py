"""The two refinement loops and their stopping rule.

``refine_mdp`` iterates verify -> repair -> train -> track best -> improve over
the observation/action/reward components. ``refine_config`` iterates
merge -> train -> track best -> re-select algorithm, network and
hyperparameters over the training configuration. Both count one iteration per
loop-body entry, keep the earlier artifact on ties and stop at the iteration
cap or when the best score stagnates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .algo import AlgoOptimizer, AlgorithmChoice, HyperparamPatch, NetworkDesign, PipelineConfig, integrate_config
from .analysis import RLAnalysis
from .errors import (
    BackendFault,
    ParseError,
    PatchValidationError,
    RepairBudgetExceeded,
    SandboxUnavailable,
    WrapperRuntimeFault,
)
from .history import ErrorFeedback, TrainingHistory, TrainingRecord
from .mdp import MDPComponents, MDPSynthesizer
from .verifier import ProbeSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvergencePolicy:
    max_iterations: int = 5
    patience: int = 2
    min_relative_gain: float = 0.01

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not self.min_relative_gain >= 0:
            raise ValueError("min_relative_gain must be non-negative")


def converged(history: TrainingHistory, policy: ConvergencePolicy) -> bool:
    """True at the iteration cap, or when the last ``patience`` records lifted
    the best score by less than ``min_relative_gain`` over the best before them.

    The best before the window includes the initial score. With no finite
    reference point yet, stagnation cannot be judged and the answer is False.
    """
    records = history.records
    if len(records) >= policy.max_iterations:
        return True
    if len(records) < policy.patience:
        return False
    before = history.initial_score
    for r in records[: len(records) - policy.patience]:
        before = max(before, r.score)
    if not math.isfinite(before):
        return False
    after = max([before] + [r.score for r in records[len(records) - policy.patience:]])
    gain = (after - before) / abs(before) if before != 0 else after - before
    return gain < policy.min_relative_gain


@dataclass
class MDPDeps:
    """Collaborators of the component loop.

    ``trainer(components, config)`` returns ``(MetricsSummary, Score)``;
    ``config`` is the fixed training configuration used throughout the loop.
    ``workspace`` (optional) receives ``save_components`` and
    ``persist_history`` calls as the loop progresses.
    """

    verifier: Callable
    synthesizer: MDPSynthesizer
    trainer: Callable
    probes: ProbeSet
    analysis: RLAnalysis
    config: Any = None
    workspace: Any = None


@dataclass
class ConfigDeps:
    optimizer: AlgoOptimizer
    trainer: Callable
    analysis: RLAnalysis
    workspace: Any = None
    metadata: dict = field(default_factory=dict)


def _persist(workspace, history: TrainingHistory) -> None:
    if workspace is not None:
        workspace.persist_history(history)


def _abort(exc: Exception, history: TrainingHistory, workspace) -> None:
    exc.history = history
    history.log_event("aborted", len(history.records), reason=f"{type(exc).__name__}: {exc}")
    _persist(workspace, history)


def refine_mdp(
    initial: MDPComponents,
    policy: ConvergencePolicy,
    deps: MDPDeps,
    floor: MDPComponents | None = None,
    initial_score: float = -math.inf,
) -> tuple[MDPComponents, TrainingHistory]:
    """Refine components and return the best ones with the full history.

    ``floor``/``initial_score`` seed the best-so-far, so a run that never beats
    the floor returns it unchanged. A verification failure produces an event and
    a repair attempt inside the same iteration; once the repair cap is used up
    the iteration is skipped without a record.
    """
    start = floor if floor is not None else initial
    history = TrainingHistory("mdp", initial_score, start.fingerprint)
    best = start
    current = initial
    ws = deps.workspace
    if ws is not None:
        ws.save_components(start)

    for t in range(policy.max_iterations):
        deps.synthesizer.reset_repair_budget()
        events: list[ErrorFeedback] = []
        try:
            outcome = _verify_and_train(current, deps, history, t, events)
        except (SandboxUnavailable, BackendFault) as exc:
            _abort(exc, history, ws)
            raise
        if outcome is None:
            history.log_event("iteration_skipped", t, reason="repair budget exhausted")
            _persist(ws, history)
            continue
        current, summary, score = outcome
        if ws is not None:
            ws.save_components(current)
        record = TrainingRecord(t, "mdp", current.fingerprint, summary.to_dict(), score.value, current.version, tuple(events))
        if history.append(record):
            best = current
            history.log_event("new_best", t, score=score.value, fingerprint=current.fingerprint)
        _persist(ws, history)
        if converged(history, policy):
            history.log_event("converged", t)
            _persist(ws, history)
            break
        try:
            current = deps.synthesizer.improve_components(summary, deps.analysis, current, history)
        except ParseError as exc:
            history.log_event("improvement_unparseable", t, message=str(exc))
        _persist(ws, history)
    return best, history


def _verify_and_train(current: MDPComponents, deps: MDPDeps, history: TrainingHistory, t: int, events: list):
    """Verify, repair and train until a score exists; None if the repair cap runs out."""
    feedback: ErrorFeedback | None = None
    while True:
        if feedback is None:
            report = deps.verifier(current, deps.probes)
            if report.passed:
                try:
                    summary, score = deps.trainer(current, deps.config)
                    return current, summary, score
                except WrapperRuntimeFault as exc:
                    feedback = exc.feedback
            else:
                feedback = report.feedback
            events.append(feedback)
            history.log_event("verification_failure", t, **feedback.to_dict())
        try:
            repaired = deps.synthesizer.repair_component(feedback, deps.analysis, current.get(feedback.role))
        except RepairBudgetExceeded:
            return None
        except ParseError as exc:
            # the same feedback is retried against the remaining repair budget
            history.log_event("repair_unparseable", t, role=feedback.role, message=str(exc))
            continue
        previous = current.get(feedback.role)
        if repaired.fingerprint == previous.fingerprint:
            history.log_event("no_change_repair", t, role=feedback.role)
        else:
            history.log_event("repaired", t, role=feedback.role)
        current = current.replace(**{feedback.role: repaired})
        feedback = None


def refine_config(
    choice: AlgorithmChoice,
    net: NetworkDesign,
    patch: HyperparamPatch,
    base: dict,
    components: MDPComponents,
    policy: ConvergencePolicy,
    deps: ConfigDeps,
    initial: PipelineConfig | None = None,
    initial_score: float = -math.inf,
) -> tuple[PipelineConfig, TrainingHistory]:
    """Refine the training configuration and return the best one with its history.

    After every non-converged iteration the algorithm, network and
    hyperparameters are chosen again with the updated history. When the
    algorithm is kept, the new patch applies on top of the current
    hyperparameters; a switch starts from the new algorithm's reference set.
    """
    config = integrate_config(choice, net, patch, base, components, deps.metadata)
    start = initial if initial is not None else config
    history = TrainingHistory("config", initial_score, start.fingerprint)
    best = start
    ws = deps.workspace
    opt = deps.optimizer
    if ws is not None:
        ws.save_config(start)

    for t in range(policy.max_iterations):
        if ws is not None:
            ws.save_config(config)
        try:
            summary, score = deps.trainer(components, config)
        except (SandboxUnavailable, BackendFault) as exc:
            _abort(exc, history, ws)
            raise
        except WrapperRuntimeFault as exc:
            fault = BackendFault(f"wrapper failed during configuration training: {exc}")
            _abort(fault, history, ws)
            raise fault from exc
        record = TrainingRecord(t, "config", config.fingerprint, summary.to_dict(), score.value, t)
        if history.append(record):
            best = config
            history.log_event("new_best", t, score=score.value, fingerprint=config.fingerprint)
        _persist(ws, history)
        if converged(history, policy):
            history.log_event("converged", t)
            _persist(ws, history)
            break
        try:
            new_choice = opt.select_algorithm(components, deps.analysis, history)
            reference = opt.reference(new_choice.name)
            new_net = opt.design_network(new_choice, components.obs, components.act, reference.network, history)
            new_base = dict(config.hyperparams) if new_choice.name == config.algorithm.name else dict(reference.hyperparams)
            new_patch = opt.optimize_hyperparams(new_choice, new_net, components, new_base, history)
        except (ParseError, PatchValidationError) as exc:
            history.log_event("reoptimize_failed", t, message=str(exc))
            _persist(ws, history)
            continue
        config = integrate_config(new_choice, new_net, new_patch, new_base, components, deps.metadata)
        history.log_event("reoptimized", t, algorithm=new_choice.name, changes=new_patch.keys(), fingerprint=config.fingerprint)
        _persist(ws, history)
    return best, history
