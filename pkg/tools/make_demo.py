"""Regenerate the scripted model replies of the point-mass demo."""

from pathlib import Path

import yaml

from autorl.mdp import ComponentCode, render_component, render_improvement
from autorl.spaces import SpaceSpec

OUT = Path(__file__).resolve().parents[1] / "src" / "autorl" / "data" / "demo" / "responses.yaml"

obs = ComponentCode.create(
    "obs",
    "def custom_state_transform(state):\n"
    "    pos, vel, target = (float(x) for x in np.asarray(state, dtype=float)[:3])\n"
    "    return np.array([np.clip(target - pos, -6.0, 6.0), vel, target])\n",
    SpaceSpec(dim=3, low=(-6.0, -5.0, -1.0), high=(6.0, 5.0, 1.0)),
    "Signed error to the target first, then velocity and the target itself.",
)
act = ComponentCode.create(
    "act",
    "def custom_action_transform(custom_action):\n"
    "    return np.clip(np.asarray(custom_action, dtype=float), -1.0, 1.0)\n",
    SpaceSpec(dim=1, low=-1.0, high=1.0),
    "Force passed through with clipping.",
)
rew = ComponentCode.create(
    "rew",
    "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
    "    err = abs(float(custom_next_state[0]))\n"
    "    return -err - 0.01 * float(np.sum(np.square(custom_action)))\n",
    None,
    "Distance penalty plus a small effort cost.",
)
rew_v2 = ComponentCode.create(
    "rew",
    "def custom_reward_function(custom_current_state, custom_action, custom_next_state, info):\n"
    "    err = abs(float(custom_next_state[0]))\n"
    "    progress = abs(float(custom_current_state[0])) - err\n"
    "    return -err + 2.0 * progress - 0.05 * abs(float(custom_next_state[1]))\n",
    None,
    "Adds a progress term and damps velocity near the target.",
)

analysis = """# Task Objectives
Move the point mass to the target position and keep it there.

# Constraints
The force per step is limited to [-1, 1]; episodes last 50 steps.

# Environment Characteristics
- Deterministic or stochastic: deterministic dynamics, random target per episode
- Observability: fully observable
- Agents: single agent

# Key Challenges
- Momentum causes overshoot near the target
- The reward is dense but weakly informative far from the target
"""

algorithm = """# Selected Algorithm
sac

# Rationale
Continuous one-dimensional force with dense reward; an off-policy entropy-regularized method is sample efficient here.
"""

network = """# Network Architecture and Parameters
1. Layer Types and Dimensions: Basic_MLP [64, 64]
2. Activation Functions: tanh
3. Regularization Methods: LayerNorm
4. Other Special Configurations:

# Design Description
Small inputs and a smooth control law do not need a wide network.
"""

hyperparameter = """```yaml
learning_rate: 0.00036
# Reason: slow early progress - larger steps speed up learning - faster convergence
gamma: 0.98
# Reason: short episodes - less discounting of distant steps is unnecessary - lower variance
```
"""

responses = {
    "analysis": analysis,
    "observation": render_component(obs),
    "action": render_component(act),
    "reward": render_component(rew),
    "repair": render_component(rew),
    "improve": render_improvement(rew_v2),
    "algorithm": algorithm,
    "network": network,
    "hyperparameter": hyperparameter,
}



def _literal(dumper, data):
    style = "|" if "\n" in data else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", data, style=style)


if __name__ == "__main__":
    yaml.SafeDumper.add_representer(str, _literal)
    OUT.write_text(yaml.safe_dump(responses, sort_keys=True, allow_unicode=True, width=1000), encoding="utf-8")
    print(OUT)
