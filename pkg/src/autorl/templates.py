"""Prompt template assets.

Each asset is a text file with a ``<System>`` block followed by a ``<User>``
block. The six design listings are stored byte-for-byte; three more assets
(repair, improve, algorithm) cover the prompts that have no listing. A
checksum manifest guards the assets against accidental edits.
"""

from __future__ import annotations

import functools
import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import TemplateIntegrityError, TemplateMissing, UnresolvedPlaceholder
from .gateway import Prompt

LISTING_IDS = ("analysis", "observation", "action", "reward", "network", "hyperparameter")
EXTRA_IDS = ("repair", "improve", "algorithm")
TEMPLATE_IDS = LISTING_IDS + EXTRA_IDS

CHECKSUM_FILE = "checksums.json"

_PLACEHOLDER = re.compile(r"\{[A-Za-z_][A-Za-z0-9_.()]*\}")
_FORMAT_LINE = re.compile(r"^Please output (?:strictly )?in the following format:\n", re.M)


@dataclass(frozen=True)
class Template:
    template_id: str
    raw: str
    system: str
    user: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        """Placeholder tokens in order of first appearance, braces included."""
        seen: dict[str, None] = {}
        for m in _PLACEHOLDER.finditer(self.system + "\n" + self.user):
            seen.setdefault(m.group(0), None)
        return tuple(seen)

    def output_format(self) -> str:
        """The part of the system block describing the expected response layout."""
        m = _FORMAT_LINE.search(self.system)
        if m is None:
            return self.system
        return self.system[m.end():]


def _split(template_id: str, raw: str) -> Template:
    if not raw.startswith("<System>\n") or "\n<User>\n" not in raw:
        raise TemplateIntegrityError(f"template {template_id!r} lacks <System>/<User> blocks")
    head, user = raw[len("<System>\n"):].split("\n<User>\n", 1)
    return Template(template_id, raw, head.rstrip("\n"), user.rstrip("\n"))


def _asset_text(name: str) -> str:
    try:
        return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateMissing(f"template asset {name!r} not found") from exc


def asset_digest(raw: str) -> str:
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@functools.lru_cache(maxsize=None)
def _checksums() -> dict[str, str]:
    return json.loads(_asset_text(CHECKSUM_FILE))


def verify_assets() -> None:
    """Raise ``TemplateIntegrityError`` if any asset differs from its recorded checksum."""
    expected = _checksums()
    for template_id in TEMPLATE_IDS:
        raw = _asset_text(f"{template_id}.txt")
        if expected.get(template_id) != asset_digest(raw):
            raise TemplateIntegrityError(f"template {template_id!r} failed its checksum")


@functools.lru_cache(maxsize=None)
def load_template(template_id: str) -> Template:
    if template_id not in TEMPLATE_IDS:
        raise TemplateMissing(f"no template named {template_id!r}")
    verify_assets()
    return _split(template_id, _asset_text(f"{template_id}.txt"))


def substitute(text: str, values: dict[str, str]) -> str:
    """Single-pass placeholder substitution; substituted text is never rescanned."""

    def repl(m: re.Match) -> str:
        key = m.group(0)[1:-1]
        return values[key] if key in values else m.group(0)

    return _PLACEHOLDER.sub(repl, text)


def render(template_id: str, values: dict[str, str]) -> Prompt:
    """Fill every placeholder of a template and return the assembled prompt.

    ``values`` is keyed by the placeholder text without braces, e.g.
    ``"list(network_config.keys())"``. Missing keys raise
    ``UnresolvedPlaceholder``; extra keys are rejected too so callers cannot
    silently drift from the asset.
    """
    template = load_template(template_id)
    wanted = {p[1:-1] for p in template.placeholders}
    missing = wanted - values.keys()
    if missing:
        raise UnresolvedPlaceholder(f"{template_id}: no value for {sorted(missing)}")
    extra = values.keys() - wanted
    if extra:
        raise UnresolvedPlaceholder(f"{template_id}: unknown placeholders {sorted(extra)}")
    values = {k: str(v) for k, v in values.items()}
    return Prompt(
        system_text=substitute(template.system, values),
        user_text=substitute(template.user, values),
        template_id=template_id,
        substitutions=values,
    )
