from __future__ import annotations

import pytest

from autorl import templates
from autorl.errors import TemplateMissing, UnresolvedPlaceholder


def test_every_template_loads_and_passes_checksum():
    templates.verify_assets()
    for tid in templates.TEMPLATE_IDS:
        t = templates.load_template(tid)
        assert t.system and t.user


def test_listing_placeholders():
    assert templates.load_template("analysis").placeholders == ("{problem_description}", "{env_code}")
    assert "{list(network_config.keys())}" in templates.load_template("network").placeholders


def test_unknown_template():
    with pytest.raises(TemplateMissing):
        templates.load_template("nope")


def test_missing_and_extra_values_rejected():
    with pytest.raises(UnresolvedPlaceholder):
        templates.render("analysis", {"problem_description": "x"})
    with pytest.raises(UnresolvedPlaceholder):
        templates.render("analysis", {"problem_description": "x", "env_code": "y", "other": "z"})


def test_substitution_is_single_pass():
    p = templates.render("analysis", {"problem_description": "{env_code}", "env_code": "CODE"})
    assert "{env_code}" in p.user_text
    assert p.user_text.count("CODE") == 1


def test_output_format_block_present():
    for tid in templates.LISTING_IDS:
        assert templates.load_template(tid).output_format
