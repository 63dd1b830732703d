"""Rule-based mock oracle behaviors for offline runs and fixtures.

Each rule serves a fixed set of prompt templates and answers from the
request bindings alone, so a full pipeline run can execute with no
network access and still be byte-for-byte reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .oracle import MockOracle, OracleRequest
from .scene_graph import DEFAULT_PREDICATES, PHRASE_SYNONYMS

RuleFn = Callable[[OracleRequest], "str | None"]


@dataclass(frozen=True)
class NamedRule:
    """A fallback behavior plus the template names it may answer."""

    name: str
    templates: tuple[str, ...]
    fn: RuleFn


def _bindings(request: OracleRequest) -> dict[str, str]:
    return dict(request.bindings)


def label_suffix_rule(request: OracleRequest) -> str:
    """Subclass iff the candidate ends with the parent as a word suffix."""
    b = _bindings(request)
    child, parent = b["Label1"], b["Label2"]
    return "YES" if child.endswith(" " + parent) else "NO"


def relation_yes_rule(request: OracleRequest) -> str:
    return "Yes"


_SCENE_CAPTION = (
    "An indoor room containing multiple pieces of furniture and household "
    "objects arranged for everyday use."
)
_FRAME_CAPTION = (
    "A view of an indoor room with multiple furnishings visible."
)


def caption_rule(request: OracleRequest) -> str:
    if request.template == "scene_annotation":
        return _SCENE_CAPTION
    if request.template == "frame_annotation":
        return _FRAME_CAPTION
    label = _bindings(request).get("ObjectLabel", "object")
    return f"YES. the plain {label}"


def parse_attribute_table(table: str) -> dict[str, dict[str, str]]:
    """Invert a markdown attribute table into id -> field -> value."""
    lines = [ln.strip() for ln in table.splitlines() if ln.strip()]
    if len(lines) < 2:
        return {}
    header = [cell.strip() for cell in lines[0].strip("|").split("|")]
    fields = header[1:]
    rows: dict[str, dict[str, str]] = {}
    for line in lines[2:]:
        cells = [cell.strip() for cell in line.strip("|").split("|")]
        if len(cells) != len(header):
            continue
        member = cells[0]
        values = {}
        for field_name, value in zip(fields, cells[1:]):
            if value and value != "--":
                values[field_name] = value
        rows[member] = values
    return rows


def appearance_equality_rule(request: OracleRequest) -> str:
    """Group members by exact equality of each present attribute value."""
    rows = parse_attribute_table(_bindings(request)["AttributeTable"])
    by_value: dict[str, set[str]] = {}
    for member, values in rows.items():
        for value in values.values():
            by_value.setdefault(value.lower(), set()).add(member)
    lines = [f"{value}: " + ", ".join(sorted(by_value[value]))
             for value in sorted(by_value)]
    return "\n".join(lines)


DISTRACTOR_TABLE: Mapping[tuple[str, str, str], str] = {
    ("curtain", "color", "white"): "blue",
    ("door", "color", "brown"): "white",
    ("door", "material", "wooden"): "metal",
    ("carpet", "color", "black"): "gray",
    ("tv", "color", "black"): "silver",
    ("tv", "shape", "flat"): "curved",
    ("pillow", "color", "light-colored"): "blue",
    ("pillow", "shape", "square"): "round",
}

_FIELD_PALETTES: Mapping[str, tuple[str, ...]] = {
    "color": ("blue", "white", "black", "gray", "red"),
    "material": ("metal", "wooden", "plastic", "fabric"),
    "shape": ("round", "square", "curved", "flat"),
    "condition": ("new", "worn", "damaged"),
}


def attribute_distractor_rule(request: OracleRequest) -> str:
    """Common-sense alternative value: table hit, else first palette entry
    differing from the truth."""
    b = _bindings(request)
    key = (b["ObjectLabel"].lower(), b["AttributeField"].lower(),
           b["AttributeValue"].lower())
    if key in DISTRACTOR_TABLE:
        return DISTRACTOR_TABLE[key]
    palette = _FIELD_PALETTES.get(key[1], ("different",))
    for candidate in palette:
        if candidate != key[2]:
            return candidate
    return palette[0]


def identity_rewrite_rule(request: OracleRequest) -> str:
    return _bindings(request)["Referral"]


def phrase_pick_rule(request: OracleRequest) -> str:
    """First known relation phrase found in the description, else a
    non-phrase so the caller drops the triple."""
    description = _bindings(request)[
        "the corrected description of object relations"].lower()
    for phrase in tuple(DEFAULT_PREDICATES) + tuple(PHRASE_SYNONYMS):
        if phrase in description:
            return phrase
    return "related to"


def fixed_label_rule(request: OracleRequest) -> str:
    return "box"


BUILTIN_RULES: dict[str, NamedRule] = {
    rule.name: rule
    for rule in (
        NamedRule("label_suffix", ("label_subclass",), label_suffix_rule),
        NamedRule("relation_yes", ("relation_judgment",), relation_yes_rule),
        NamedRule("caption",
                  ("scene_annotation", "frame_annotation",
                   "object_annotation"), caption_rule),
        NamedRule("appearance_equality", ("appearance_grouping",),
                  appearance_equality_rule),
        NamedRule("attribute_distractor", ("distracting_attribute",),
                  attribute_distractor_rule),
        NamedRule("identity_rewrite", ("referral_rewrite",),
                  identity_rewrite_rule),
        NamedRule("phrase_pick", ("relation_extraction",), phrase_pick_rule),
        NamedRule("fixed_label", ("object_label",), fixed_label_rule),
    )
}

DEFAULT_RULE_NAMES = tuple(BUILTIN_RULES)


def compose_rules(names: Sequence[str] = DEFAULT_RULE_NAMES) -> RuleFn:
    """Dispatch by template name over the named rules.

    Unknown rule names and two rules claiming one template are config
    errors; an unclaimed template yields None so the mock reports the
    miss instead of inventing an answer.
    """
    table: dict[str, RuleFn] = {}
    for name in names:
        if name not in BUILTIN_RULES:
            raise ValueError(f"unknown mock rule {name!r}; "
                             f"available: {sorted(BUILTIN_RULES)}")
        rule = BUILTIN_RULES[name]
        for template in rule.templates:
            if template in table:
                raise ValueError(
                    f"mock rules overlap on template {template!r}")
            table[template] = rule.fn
    def dispatch(request: OracleRequest) -> str | None:
        fn = table.get(request.template)
        if fn is None:
            return None
        return fn(request)
    return dispatch


def rule_oracle(names: Sequence[str] = DEFAULT_RULE_NAMES,
                script: Mapping[str, str] | None = None) -> MockOracle:
    """Mock oracle answering via the named rules, script overrides first."""
    return MockOracle(script=script, fallback=compose_rules(names))
