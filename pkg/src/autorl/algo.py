"""Algorithm selection, network design, hyperparameter patching and config merging.

Reference architectures and hyperparameter sets ship as ``data/references.yaml``
and per-key safe ranges as ``data/hp_ranges.yaml``; both are editable.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import yaml

from . import templates
from .analysis import RLAnalysis, TaskSpec
from .errors import (
    ChoiceParseError,
    DesignParseError,
    IncrementViolation,
    MenuViolation,
    OutOfMenu,
    ParseError,
    PatchParseError,
    PatchTypeError,
    PatchValidationError,
    RangeViolation,
    SchemaViolation,
    TooManyChanges,
    UnknownKey,
)
from .gateway import Gateway, Prompt
from .history import TrainingHistory
from .mdp import ComponentCode, MDPComponents
from .spaces import space_to_json

LAYER_TYPES = ("Basic_MLP", "Basic_Identical", "Basic_CNN", "Basic_RNN")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "softmax", "elu")
NORMALIZATIONS = ("LayerNorm", "BatchNorm", "BatchNorm2d", "none")

MAX_CHANGES = 5
INCREMENT_BOUND = 0.30
ZERO_EPSILON = 0.01
CONFIG_VERSION = 1


# -- domain types ----------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmChoice:
    name: str
    rationale: str = ""


@dataclass(frozen=True)
class LayerSpec:
    layer_type: str
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.layer_type not in LAYER_TYPES:
            raise MenuViolation("layer type", self.layer_type, LAYER_TYPES)
        if any(not isinstance(d, int) or isinstance(d, bool) or d <= 0 for d in self.dims):
            raise DesignParseError(f"layer dimensions must be positive integers, got {list(self.dims)}")


@dataclass(frozen=True)
class NetworkDesign:
    layers: tuple[LayerSpec, ...]
    activation: str
    normalization: str = "none"
    special: str = ""
    rationale: str = ""

    def __post_init__(self):
        if not self.layers:
            raise DesignParseError("a network needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise MenuViolation("activation", self.activation, ACTIVATIONS)
        if self.normalization not in NORMALIZATIONS:
            raise MenuViolation("normalization", self.normalization, NORMALIZATIONS)

    def to_dict(self) -> dict:
        return {
            "layers": [{"type": l.layer_type, "dims": list(l.dims)} for l in self.layers],
            "activation": self.activation,
            "normalization": self.normalization,
            "special": self.special,
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkDesign":
        layers = tuple(LayerSpec(l["type"], tuple(int(x) for x in l.get("dims", ()))) for l in d["layers"])
        return cls(layers, d["activation"], d.get("normalization", "none"), d.get("special", "") or "", d.get("rationale", "") or "")


@dataclass(frozen=True)
class HyperparamChange:
    key: str
    new_value: object
    reason: str


@dataclass(frozen=True)
class HyperparamPatch:
    changes: tuple[HyperparamChange, ...]
    base: dict = field(default_factory=dict)

    def keys(self) -> list[str]:
        return [c.key for c in self.changes]

    def applied(self) -> dict:
        out = dict(self.base)
        for c in self.changes:
            out[c.key] = c.new_value
        return out


@dataclass(frozen=True)
class PipelineConfig:
    algorithm: AlgorithmChoice
    network: NetworkDesign
    hyperparams: dict
    mdp_fingerprint: str
    metadata: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.algorithm, self.network, self.hyperparams, self.mdp_fingerprint)

    def to_document(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "algorithm": {"name": self.algorithm.name, "rationale": self.algorithm.rationale},
            "network": self.network.to_dict(),
            "hyperparameters": dict(self.hyperparams),
            "mdp": {"fingerprint": self.mdp_fingerprint},
            "metadata": dict(self.metadata),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_document(), sort_keys=True, default_flow_style=False, allow_unicode=True)

    @classmethod
    def from_document(cls, doc) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise SchemaViolation("config document must be a mapping")
        missing = [k for k in ("version", "algorithm", "network", "hyperparameters", "mdp", "metadata") if k not in doc]
        if missing:
            raise SchemaViolation(f"config document is missing sections: {', '.join(missing)}")
        if doc["version"] != CONFIG_VERSION:
            raise SchemaViolation(f"unsupported config version {doc['version']!r}")
        try:
            algo = doc["algorithm"]
            choice = AlgorithmChoice(str(algo["name"]), algo.get("rationale", "") or "")
            net = NetworkDesign.from_dict(doc["network"])
            hp = doc["hyperparameters"]
            if not isinstance(hp, dict):
                raise TypeError("hyperparameters must be a mapping")
            fp = doc["mdp"]["fingerprint"]
            meta = doc["metadata"]
            if not isinstance(meta, dict):
                raise TypeError("metadata must be a mapping")
        except (KeyError, TypeError, ValueError, ParseError) as exc:
            raise SchemaViolation(f"malformed config document: {exc}") from exc
        return cls(choice, net, dict(hp), str(fp), dict(meta))

    @classmethod
    def from_yaml(cls, text: str) -> "PipelineConfig":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise SchemaViolation(f"config is not valid YAML: {exc}") from exc
        return cls.from_document(doc)


def config_fingerprint(choice: AlgorithmChoice, net: NetworkDesign, hyperparams: dict, mdp_fingerprint: str) -> str:
    payload = {
        "algorithm": choice.name,
        "network": net.to_dict(),
        "hyperparameters": hyperparams,
        "mdp": mdp_fingerprint,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- reference documents ---------------------------------------------------------


@dataclass(frozen=True)
class Reference:
    network: NetworkDesign
    hyperparams: dict


def _data_file(name: str) -> str:
    return resources.files("autorl").joinpath("data", name).read_text(encoding="utf-8")


def load_references(text: str | None = None) -> dict[str, Reference]:
    doc = yaml.safe_load(text if text is not None else _data_file("references.yaml")) or {}
    return {
        name: Reference(NetworkDesign.from_dict(entry["network"]), dict(entry["hyperparams"]))
        for name, entry in doc.items()
    }


def load_ranges(text: str | None = None) -> dict[str, tuple[float, float]]:
    doc = yaml.safe_load(text if text is not None else _data_file("hp_ranges.yaml")) or {}
    return {k: (float(v[0]), float(v[1])) for k, v in doc.items()}


# -- parsing ---------------------------------------------------------------------

_HEADING = re.compile(r"^[ \t]*#+[ \t]*(.*?)[ \t]*$", re.M)


def _sections(text: str) -> list[tuple[str, str]]:
    """(heading, body) pairs in order; text before the first heading is dropped."""
    marks = [m for m in _HEADING.finditer(text) if not m.group(0).lstrip().lower().startswith("# reason")]
    out = []
    for k, m in enumerate(marks):
        end = marks[k + 1].start() if k + 1 < len(marks) else len(text)
        out.append((m.group(1).strip(), text[m.end():end].strip()))
    return out


def _clean_name(line: str) -> str:
    name = line.strip().strip("*`'\"[]").strip()
    return name.rstrip(".:;,").strip("*`'\"").strip()


def parse_algorithm_choice(text: str, candidates) -> AlgorithmChoice:
    sections = _sections(text)
    body = next((b for h, b in sections if h.lower().startswith("selected algorithm")), None)
    if body is None:
        raise ChoiceParseError("reply has no 'Selected Algorithm' section")
    lines = [l for l in body.splitlines() if l.strip()]
    if not lines:
        raise ChoiceParseError("the 'Selected Algorithm' section is empty")
    name = _clean_name(lines[0])
    menu = {c.lower(): c for c in candidates}
    if name.lower() not in menu:
        raise OutOfMenu(name, candidates)
    rationale = next((b for h, b in sections if h.lower().startswith("rationale")), "")
    return AlgorithmChoice(menu[name.lower()], rationale)


_ITEM = re.compile(r"^[ \t]*(\d)[.)][ \t]*(.*)$", re.M)
_LAYER = re.compile(r"\b(Basic_[A-Za-z0-9]+)\b")
_NONE_WORDS = {"none", "no", "n/a", "na", "null", "nothing", "-", "without", "not"}


def _items(body: str) -> dict[int, str]:
    marks = list(_ITEM.finditer(body))
    out = {}
    for k, m in enumerate(marks):
        end = marks[k + 1].start() if k + 1 < len(marks) else len(body)
        value = m.group(2)
        head, sep, rest = value.partition(":")
        if sep and not _LAYER.search(head) and "(" not in head or sep and head.strip().lower().startswith(
            ("layer", "activation", "regularization", "normalization", "other", "special")
        ):
            value = rest
        out[int(m.group(1))] = (value + body[m.end():end]).strip()
    return out


def _parse_layers(text: str) -> tuple[LayerSpec, ...]:
    marks = list(_LAYER.finditer(text))
    if not marks:
        raise DesignParseError("no layer type found in the layer item")
    layers = []
    for k, m in enumerate(marks):
        segment = text[m.end(): marks[k + 1].start() if k + 1 < len(marks) else len(text)]
        bracket = re.search(r"[\[(]([^\])]*)[\])]", segment)
        nums = re.findall(r"-?\d+", bracket.group(1) if bracket else segment)
        if m.group(1) not in LAYER_TYPES:
            raise MenuViolation("layer type", m.group(1), LAYER_TYPES)
        dims = tuple(int(n) for n in nums)
        if any(d <= 0 for d in dims):
            raise DesignParseError(f"layer dimensions must be positive, got {list(dims)}")
        layers.append(LayerSpec(m.group(1), dims))
    return tuple(layers)


def _pick(text: str, menu, label: str, allow_none: bool) -> str:
    tokens = re.findall(r"[A-Za-z][A-Za-z0-9_]*|-|n/a", text)
    lookup = {m.lower(): m for m in menu}
    for t in tokens:
        if t.lower() in lookup:
            return lookup[t.lower()]
    if allow_none and (not tokens or any(t.lower() in _NONE_WORDS for t in tokens)):
        return "none"
    if not tokens:
        raise DesignParseError(f"no {label} given")
    raise MenuViolation(label, tokens[0], [m for m in menu if allow_none or m != "none"])


def parse_network_design(text: str) -> NetworkDesign:
    sections = _sections(text)
    arch = next((b for h, b in sections if h.lower().startswith("network architecture")), None)
    if arch is None:
        raise DesignParseError("reply has no 'Network Architecture' section")
    items = _items(arch)
    missing = [str(i) for i in (1, 2, 3) if i not in items]
    if missing:
        raise DesignParseError(f"network section lacks item(s) {', '.join(missing)}")
    layers = _parse_layers(items[1])
    activation = _pick(items[2], ACTIVATIONS, "activation", allow_none=False)
    normalization = _pick(items[3], NORMALIZATIONS, "normalization", allow_none=True)
    special = items.get(4, "").strip()
    if special.lower().strip(".") in _NONE_WORDS:
        special = ""
    rationale = next((b for h, b in sections if h.lower().startswith("design description")), "")
    return NetworkDesign(layers, activation, normalization, special, rationale)


_FENCE = re.compile(r"```[ \t]*(yaml|yml)?[ \t]*\n(.*?)```", re.S | re.I)
_KV = re.compile(r"^([A-Za-z_][A-Za-z0-9_.]*)[ \t]*:[ \t]*(.*?)[ \t]*$")
_REASON = re.compile(r"^#[ \t]*Reason[ \t]*:[ \t]*(.*?)[ \t]*$", re.I)


def _scalar(raw: str):
    raw = raw.strip()
    if not raw:
        raise PatchParseError("empty value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise PatchParseError(f"cannot parse value {raw!r}") from exc
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, (dict, list)):
        raise PatchParseError(f"value {raw!r} is not a scalar")
    return value


def parse_patch(text: str, base: dict) -> HyperparamPatch:
    """Read ``key: value`` lines, each followed by a ``# Reason:`` line, from yaml fences.

    A reply without any fenced block means no change.
    """
    changes: list[HyperparamChange] = []
    seen: set[str] = set()
    for fence in _FENCE.finditer(text):
        pending: tuple[str, object] | None = None
        for line in fence.group(2).splitlines():
            stripped = line.strip()
            if not stripped:
                continue
            reason = _REASON.match(stripped)
            if reason:
                if pending is None:
                    raise PatchParseError("reason line without a preceding parameter")
                changes.append(HyperparamChange(pending[0], pending[1], reason.group(1)))
                pending = None
                continue
            if stripped.startswith("#"):
                continue
            kv = _KV.match(stripped)
            if not kv:
                raise PatchParseError(f"cannot parse line {stripped!r}")
            if pending is not None:
                raise PatchParseError(f"parameter {pending[0]!r} has no reason line")
            key, raw = kv.group(1), kv.group(2)
            inline_reason = None
            m = re.search(r"#[ \t]*Reason[ \t]*:(.*)$", raw, re.I)
            if m:
                inline_reason = m.group(1).strip()
                raw = raw[: m.start()]
            else:
                raw = re.sub(r"[ \t]+#.*$", "", raw)
            if key in seen:
                raise PatchParseError(f"parameter {key!r} appears twice")
            seen.add(key)
            value = _scalar(raw)
            if inline_reason is not None:
                changes.append(HyperparamChange(key, value, inline_reason))
            else:
                pending = (key, value)
        if pending is not None:
            raise PatchParseError(f"parameter {pending[0]!r} has no reason line")
    return HyperparamPatch(tuple(changes), dict(base))


# -- validation ------------------------------------------------------------------


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate_patch(
    patch: HyperparamPatch,
    max_changes: int = MAX_CHANGES,
    bound: float = INCREMENT_BOUND,
    zero_epsilon: float = ZERO_EPSILON,
    ranges: dict[str, tuple[float, float]] | None = None,
) -> HyperparamPatch:
    """Check a patch against the change-count, key, type, increment and range rules.

    Numeric changes must satisfy ``|new - old| / |old| < bound``. A zero-valued
    parameter may only move to a value of magnitude at most ``zero_epsilon``.
    Booleans and strings are exempt from the increment rule. Integer parameters
    given integral floats are normalized to ints.
    """
    if len(patch.changes) > max_changes:
        raise TooManyChanges(len(patch.changes), max_changes)
    out = []
    for c in patch.changes:
        if c.key not in patch.base:
            raise UnknownKey(c.key)
        if not str(c.reason).strip():
            raise PatchParseError(f"change to {c.key!r} has no reason")
        old, new = patch.base[c.key], c.new_value
        if isinstance(old, bool):
            if not isinstance(new, bool):
                raise PatchTypeError(f"{c.key} expects a boolean, got {new!r}")
        elif _is_number(old):
            if not _is_number(new) or not math.isfinite(new):
                raise PatchTypeError(f"{c.key} expects a finite number, got {new!r}")
            if old == 0:
                if abs(new) > zero_epsilon:
                    raise IncrementViolation(c.key, bound)
            else:
                change = (new - old) / abs(old)
                if not abs(change) < bound:
                    raise IncrementViolation(c.key, bound, change)
            if ranges and c.key in ranges:
                low, high = ranges[c.key]
                if not low <= new <= high:
                    raise RangeViolation(c.key, new, low, high)
            if isinstance(old, int) and isinstance(new, float) and new.is_integer():
                c = HyperparamChange(c.key, int(new), c.reason)
        elif old is not None and not isinstance(new, type(old)):
            raise PatchTypeError(f"{c.key} expects {type(old).__name__}, got {new!r}")
        out.append(c)
    return HyperparamPatch(tuple(out), dict(patch.base))


def integrate_config(
    choice: AlgorithmChoice,
    net: NetworkDesign,
    patch: HyperparamPatch,
    base: dict,
    components: MDPComponents,
    metadata: dict | None = None,
) -> PipelineConfig:
    """Merge the selections into one configuration bound to the given components."""
    hyperparams = dict(base)
    for c in patch.changes:
        hyperparams[c.key] = c.new_value
    mdp_fp = components.fingerprint
    meta = dict(metadata or {})
    meta["config_fingerprint"] = config_fingerprint(choice, net, hyperparams, mdp_fp)
    return PipelineConfig(choice, net, hyperparams, mdp_fp, meta)


# -- prompts and the optimizer ---------------------------------------------------


def _design_str(component: ComponentCode) -> str:
    return space_to_json(component.space)


def _dump_yaml(values: dict) -> str:
    return yaml.safe_dump(values, sort_keys=True, default_flow_style=False).rstrip("\n")


class AlgoOptimizer:
    """Chooses the algorithm, network and hyperparameters through the gateway.

    Menu or patch violations trigger exactly one re-prompt that quotes the
    violation; a second violation is raised.
    """

    def __init__(
        self,
        gateway: Gateway,
        spec: TaskSpec,
        candidates,
        references: dict[str, Reference] | None = None,
        ranges: dict[str, tuple[float, float]] | None = None,
    ):
        self.gateway = gateway
        self.spec = spec
        self.candidates = tuple(candidates)
        if not self.candidates:
            raise ValueError("the candidate algorithm set must not be empty")
        self.references = load_references() if references is None else references
        self.ranges = load_ranges() if ranges is None else ranges
        lacking = [c for c in self.candidates if c not in self.references]
        if lacking:
            raise ValueError(f"no reference configuration for {lacking}")

    def reference(self, name: str) -> Reference:
        return self.references[name]

    # algorithm

    def algorithm_prompt(self, components: MDPComponents, analysis: RLAnalysis, history: TrainingHistory) -> Prompt:
        values = {
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "candidates": ", ".join(self.candidates),
            "analysis_str": analysis.render(),
            "env_code": self.spec.env_code,
            "obs_code": components.obs.source,
            "obs_space": space_to_json(components.obs.space),
            "action_code": components.act.source,
            "action_space": space_to_json(components.act.space),
            "reward_code": components.rew.source,
            "history": history.render(),
        }
        return templates.render("algorithm", values)

    def select_algorithm(self, components: MDPComponents, analysis: RLAnalysis, history: TrainingHistory) -> AlgorithmChoice:
        prompt = self.algorithm_prompt(components, analysis, history)
        return self._ask(prompt, lambda text: parse_algorithm_choice(text, self.candidates), (OutOfMenu, ChoiceParseError))

    # network

    def network_prompt(self, choice: AlgorithmChoice, obs: ComponentCode, act: ComponentCode,
                       reference: NetworkDesign | None = None, history: TrainingHistory | None = None) -> Prompt:
        keys = list((reference or self.reference(choice.name).network).to_dict().keys())
        keys.remove("rationale")
        values = {
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "algorithm": choice.name,
            "list(network_config.keys())": str(keys),
            "obs_design_str": _design_str(obs),
            "action_design_str": _design_str(act),
        }
        prompt = templates.render("network", values)
        extra = []
        if reference is not None:
            ref = reference.to_dict()
            ref.pop("rationale")
            extra.append("Reference Architecture:\n" + json.dumps(ref, sort_keys=True))
        if history is not None and history.records:
            extra.append("Training History:\n" + history.render())
        return prompt.with_appendix("\n\n".join(extra)) if extra else prompt

    def design_network(self, choice: AlgorithmChoice, obs: ComponentCode, act: ComponentCode,
                       reference: NetworkDesign | None = None, history: TrainingHistory | None = None) -> NetworkDesign:
        prompt = self.network_prompt(choice, obs, act, reference, history)
        return self._ask(prompt, parse_network_design, (MenuViolation, DesignParseError))

    # hyperparameters

    def hyperparameter_prompt(self, choice: AlgorithmChoice, net: NetworkDesign, components: MDPComponents,
                              base: dict, history: TrainingHistory | None = None) -> Prompt:
        design = net.to_dict()
        design.pop("rationale")
        values = {
            "env_name": self.spec.env_name,
            "scenario_name": self.spec.scenario_name,
            "algorithm": choice.name,
            "network_design": json.dumps(design, sort_keys=True),
            "list(algorithm_config.keys())": str(list(base.keys())),
            "obs_design_str": _design_str(components.obs),
            "action_design_str": _design_str(components.act),
        }
        prompt = templates.render("hyperparameter", values)
        extra = ["Current Configuration:\n```yaml\n" + _dump_yaml(base) + "\n```"]
        if self.ranges:
            extra.append("Safe Ranges:\n" + "\n".join(f"{k}: [{lo:g}, {hi:g}]" for k, (lo, hi) in sorted(self.ranges.items())))
        if history is not None and history.records:
            extra.append("Training History:\n" + history.render())
        return prompt.with_appendix("\n\n".join(extra))

    def optimize_hyperparams(self, choice: AlgorithmChoice, net: NetworkDesign, components: MDPComponents,
                             base: dict, history: TrainingHistory | None = None) -> HyperparamPatch:
        if not base:
            raise ValueError("the base hyperparameter set must not be empty")
        prompt = self.hyperparameter_prompt(choice, net, components, base, history)

        def parse(text):
            return validate_patch(parse_patch(text, base), ranges=self.ranges)

        return self._ask(prompt, parse, (PatchParseError, PatchValidationError))

    def _ask(self, prompt: Prompt, parse, retry_on):
        reply = self.gateway.infer(prompt).text
        try:
            return parse(reply)
        except retry_on as exc:
            note = (
                f"Your previous answer was rejected: {exc}\n"
                "Answer again in the required format and respect every listed option and limit."
            )
            reply = self.gateway.infer(prompt.with_appendix(note)).text
            return parse(reply)
