"""Shared sample inputs and scripted collaborators for the test suite."""

from __future__ import annotations

from autorl.algo import AlgorithmChoice, NetworkDesign, LayerSpec, load_references
from autorl.analysis import TaskSpec, parse_analysis
from autorl.errors import RepairBudgetExceeded
from autorl.gateway import FixtureStore, Gateway, ScriptedProvider
from autorl.history import ErrorFeedback
from autorl.mdp import ComponentCode, MDPComponents
from autorl.spaces import SpaceSpec
from autorl.training import MetricsSummary, ScalarSeries, Score, summarize_metrics
from autorl.verifier import Check, VerificationReport

ENV_CODE = '''class PointMassEnv:
    """Unit mass on a line; reward is minus the distance to the target."""

    def step(self, action):
        self.vel = 0.9 * self.vel + 0.2 * float(action[0])
        self.pos = self.pos + 0.1 * self.vel
        return self._obs(), -abs(self.pos - self.target), False, self.t >= 50, {}
'''

SPEC = TaskSpec(
    task_description="Drive a point mass on a line to a random target and hold it there.",
    env_code=ENV_CODE,
    extra_context="The mass carries momentum.",
    env_name="PointMass",
    scenario_name="reach-target",
)

ANALYSIS_REPLY = """# Task Objectives
Reach the target and stay close to it.

# Constraints
Force limited to [-1, 1] per step.

# Environment Characteristics
- Deterministic or stochastic: deterministic dynamics
- Observability: fully observable
- Agents: single agent

# Key Challenges
- Overshoot caused by momentum
- Weak signal far from the target
"""

ANALYSIS = parse_analysis(ANALYSIS_REPLY)

OBS_SPACE = SpaceSpec(dim=3, low=(-5.0, -5.0, -1.0), high=(5.0, 5.0, 1.0))
ACT_SPACE = SpaceSpec(dim=1, low=-1.0, high=1.0)

OBS = ComponentCode.create(
    "obs",
    "def custom_state_transform(state):\n"
    "    s = np.asarray(state, dtype=float)\n"
    "    return np.array([np.clip(s[2] - s[0], -6.0, 6.0), s[1], s[2]])\n",
    SpaceSpec(dim=3, low=(-6.0, -5.0, -1.0), high=(6.0, 5.0, 1.0)),
    "error, velocity, target",
)
ACT = ComponentCode.create(
    "act",
    "def custom_action_transform(custom_action):\n"
    "    return np.clip(np.asarray(custom_action, dtype=float), -1.0, 1.0)\n",
    ACT_SPACE,
    "clipped force",
)
REW = ComponentCode.create(
    "rew",
    "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
    "    return -abs(float(custom_next_state[0]))\n",
    None,
    "distance penalty",
)
COMPONENTS = MDPComponents(OBS, ACT, REW)

REFERENCES = load_references()
REF_NET = REFERENCES["ppo"].network
BASE_HP = dict(REFERENCES["ppo"].hyperparams)
CHOICE = AlgorithmChoice("ppo", "stable on-policy updates")
NET = NetworkDesign((LayerSpec("Basic_MLP", (256, 256)),), "relu", "LayerNorm", "", "wider")


def reward_variant(k: int) -> ComponentCode:
    """Distinct, valid reward components (distinct fingerprints)."""
    return ComponentCode.create(
        "rew",
        "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
        f"    return -abs(float(custom_next_state[0])) * {1.0 + k / 10:.3f}\n",
        None,
        f"variant {k}",
    )


def scripted_gateway(responses: dict, mode: str = "live", store_dir=None) -> Gateway:
    provider = ScriptedProvider(responses)
    store = FixtureStore(store_dir) if store_dir is not None else None
    return Gateway(provider, mode, store)


def summary(value: float = 0.0) -> MetricsSummary:
    return summarize_metrics([ScalarSeries("train/episode_return", ((1, value), (2, value)))])


# -- scripted collaborators for the refinement loops ------------------------------


class ScriptedVerifier:
    """Fails the first ``failures[t]`` verifications of iteration t, then passes.

    ``fail_role`` picks the component blamed by the feedback.
    """

    def __init__(self, failures_per_call: list[bool], fail_role: str = "rew"):
        self.plan = list(failures_per_call)
        self.calls = 0
        self.fail_role = fail_role

    def __call__(self, components, probes):
        fail = self.plan[self.calls] if self.calls < len(self.plan) else False
        self.calls += 1
        if not fail:
            return VerificationReport(True, (Check("all", "ok"),))
        fb = ErrorFeedback("numeric", f"non-finite value (call {self.calls})", self.fail_role, "[0.0]")
        return VerificationReport(False, (Check(f"{self.fail_role}.numeric", "fail", fb.message),), fb)


class ScriptedSynthesizer:
    """Improvement yields a fresh reward variant; repair yields one too."""

    def __init__(self, repair_cap: int = 3):
        self.repair_cap = repair_cap
        self.repairs_used = 0
        self.counter = 100
        self.repair_calls = 0
        self.improve_calls = 0

    def reset_repair_budget(self):
        self.repairs_used = 0

    def repair_component(self, error, analysis, component):
        if self.repairs_used >= self.repair_cap:
            raise RepairBudgetExceeded(component.role, self.repair_cap)
        self.repairs_used += 1
        self.repair_calls += 1
        self.counter += 1
        return reward_variant(self.counter)

    def improve_components(self, summary_, analysis, components, history):
        self.improve_calls += 1
        self.counter += 1
        return components.replace(rew=reward_variant(self.counter))


class ScriptedTrainer:
    """Returns scores from a list, one per call."""

    def __init__(self, scores: list[float]):
        self.scores = list(scores)
        self.calls = 0
        self.seen = []

    def __call__(self, components, config):
        score = self.scores[self.calls]
        self.calls += 1
        self.seen.append((components, config))
        return summary(score), Score(score, "mean_eval_return", 1)


# -- replies for the configuration optimizer ---------------------------------------


def algorithm_reply(name: str) -> str:
    return f"# Selected Algorithm\n{name}\n\n# Rationale\nfits the action space\n"


def network_reply(dims=(64, 64), activation="tanh", norm="LayerNorm") -> str:
    return (
        "# Network Architecture and Parameters\n"
        f"1. Layer Types and Dimensions: Basic_MLP {list(dims)}\n"
        f"2. Activation Functions: {activation}\n"
        f"3. Regularization Methods: {norm}\n"
        "4. Other Special Configurations:\n\n"
        "# Design Description\nsmall inputs\n"
    )


def patch_reply(**changes) -> str:
    body = "".join(f"{k}: {v}\n# Reason: tuned {k}\n" for k, v in changes.items())
    return f"```yaml\n{body}```\n"


def stage_histories(baseline: float, s1: float, s2: float) -> dict:
    """Histories as a finished run would leave them for the given recorded scores."""
    from autorl.history import TrainingHistory, TrainingRecord

    mdp = TrainingHistory("mdp", baseline, "identity")
    mdp.append(TrainingRecord(0, "mdp", "c1", {}, s1, 1))
    cfg = TrainingHistory("config", s1, "floor")
    cfg.append(TrainingRecord(0, "config", "k1", {}, s2, 0))
    return {"mdp": mdp, "config": cfg}


# one line per acceptance criterion, printed in the terminal summary by conftest
ACCEPTANCE: list[str] = []
