"""Pipeline configuration: YAML file, schema validation, oracle wiring.

The YAML document is validated against the published JSON Schema
(assets/config_schema.json) before any semantic checks run, so typos
fail fast with a path into the document.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import jsonschema
import yaml

from . import imaging, referring, scene_graph
from .mocks import BUILTIN_RULES, DEFAULT_RULE_NAMES, compose_rules
from .oracle import DEFAULT_MAX_IN_FLIGHT, HttpOracle, MockOracle, Oracle
from .taskgen import GenerationConfig

STAGES = ("clean", "annotate", "graph", "refer", "generate")

ORACLE_ROLES = (
    "captioner",
    "labeler",
    "label_validator",
    "relation_judge",
    "relation_extractor",
    "appearance_grouper",
    "attribute_distractor",
    "rewriter",
)

# Mock defaults per role when the config names no rules.
_ROLE_RULES: Mapping[str, tuple[str, ...]] = {
    "captioner": ("caption",),
    "labeler": ("fixed_label",),
    "label_validator": ("label_suffix",),
    "relation_judge": ("relation_yes",),
    "relation_extractor": ("phrase_pick",),
    "appearance_grouper": ("appearance_equality",),
    "attribute_distractor": ("attribute_distractor",),
    "rewriter": ("identity_rewrite",),
}


class ConfigError(ValueError):
    pass


def config_schema() -> dict:
    text = (resources.files("discurate") / "assets" /
            "config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class OracleSpec:
    mode: str = "mock"
    rules: tuple[str, ...] = ()
    script: Path | None = None
    base_url: str | None = None
    model: str | None = None

    def __post_init__(self):
        if self.mode == "http":
            if not self.base_url or not self.model:
                raise ConfigError("http oracle needs base_url and model")
            if self.rules or self.script:
                raise ConfigError(
                    "rules/script apply to mock oracles only")
        elif self.mode == "mock":
            if self.base_url or self.model:
                raise ConfigError(
                    "base_url/model apply to http oracles only")
            unknown = set(self.rules) - set(BUILTIN_RULES)
            if unknown:
                raise ConfigError(
                    f"unknown mock rules {sorted(unknown)}; "
                    f"available: {sorted(BUILTIN_RULES)}")
        else:
            raise ConfigError(f"unknown oracle mode {self.mode!r}")

    def build(self, role: str) -> Oracle:
        if self.mode == "http":
            return HttpOracle(self.base_url, self.model)
        names = self.rules or _ROLE_RULES.get(role, DEFAULT_RULE_NAMES)
        fallback = compose_rules(names)
        if self.script is not None:
            return MockOracle.from_jsonl(self.script, fallback)
        return MockOracle(fallback=fallback)


@dataclass(frozen=True)
class Thresholds:
    overexposed_intensity: int = imaging.OVEREXPOSED_INTENSITY
    overexposed_fraction: float = imaging.OVEREXPOSED_FRACTION
    scene_overexposed_fraction: float = 0.50
    frame_target: int = 32
    support_gap_min: float = scene_graph.SUPPORT_GAP_MIN_M
    support_gap_max: float = scene_graph.SUPPORT_GAP_MAX_M
    contact_distance: float = scene_graph.CONTACT_DISTANCE_M
    size_buffer_ratio: float = referring.SIZE_BUFFER_RATIO
    proximity_cluster_m: float = referring.PROXIMITY_CLUSTER_M
    min_anchor_distance_m: float = referring.MIN_ANCHOR_DISTANCE_M
    min_sight_separation_m: float = referring.MIN_SIGHT_SEPARATION_M
    sight_margin_deg: float = referring.SIGHT_MARGIN_DEG
    max_retry_attempts: int = 3
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    oracle_failure_budget: int = 0

    def __post_init__(self):
        if self.support_gap_min > self.support_gap_max:
            raise ConfigError("support gap window is empty")


@dataclass(frozen=True)
class PipelineConfig:
    manifest_path: Path
    output_dir: Path
    cache_dir: Path
    seed: int = 0
    workers: int = 1
    stages: tuple[str, ...] = STAGES
    oracles: Mapping[str, OracleSpec] = field(default_factory=dict)
    thresholds: Thresholds = field(default_factory=Thresholds)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    exclusion_files: tuple[Path, ...] = ()

    def oracle_for(self, role: str) -> Oracle:
        if role not in ORACLE_ROLES:
            raise ConfigError(f"unknown oracle role {role!r}")
        spec = self.oracles.get(role) or self.oracles.get("default") \
            or OracleSpec()
        return spec.build(role)

    def excluded_scenes(self) -> set[str]:
        excluded: set[str] = set()
        for path in self.exclusion_files:
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    excluded.add(line)
        return excluded


def _parse_oracle(raw: Mapping, base_dir: Path) -> OracleSpec:
    script = raw.get("script")
    return OracleSpec(
        mode=raw["mode"],
        rules=tuple(raw.get("rules", ())),
        script=(base_dir / script) if script else None,
        base_url=raw.get("base_url"),
        model=raw.get("model"),
    )


def parse_config(data: Mapping, base_dir: Path) -> PipelineConfig:
    """Validate a loaded YAML document and build the typed config."""
    try:
        jsonschema.validate(data, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") \
            from exc
    output_dir = base_dir / data["output_dir"]
    oracles = {
        role: _parse_oracle(raw, base_dir)
        for role, raw in data.get("oracles", {}).items()
    }
    gen_raw = data.get("generation", {})
    generation = GenerationConfig(
        per_scene_cap=gen_raw.get("per_scene_cap", 50),
        per_task_quotas=tuple(sorted(
            gen_raw.get("per_task_quotas", {}).items())),
        seed=data.get("seed", 0),
        train_scenes=tuple(gen_raw.get("train_scenes", ())),
        test_scenes=tuple(gen_raw.get("test_scenes", ())),
    )
    overlap = set(generation.train_scenes) & set(generation.test_scenes)
    if overlap:
        raise ConfigError(f"scenes in both splits: {sorted(overlap)}")
    return PipelineConfig(
        manifest_path=base_dir / data["manifest"],
        output_dir=output_dir,
        cache_dir=(base_dir / data["cache_dir"]) if "cache_dir" in data
        else output_dir / "cache",
        seed=data.get("seed", 0),
        workers=data.get("workers", 1),
        stages=tuple(s for s in STAGES if s in data.get("stages", STAGES)),
        oracles=oracles,
        thresholds=Thresholds(**data.get("thresholds", {})),
        generation=generation,
        exclusion_files=tuple(base_dir / p
                              for p in data.get("exclusion_files", ())),
    )


def load_config(path: str | Path, *, seed: int | None = None,
                stages: tuple[str, ...] | None = None) -> PipelineConfig:
    """Load a YAML config file; seed/stages arguments override the file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") \
            from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"config {path} must be a mapping")
    config = parse_config(data, path.parent)
    if seed is not None:
        config = replace(config, seed=seed,
                         generation=replace(config.generation, seed=seed))
    if stages is not None:
        unknown = set(stages) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")
        config = replace(config, stages=tuple(s for s in STAGES
                                              if s in stages))
    return config
