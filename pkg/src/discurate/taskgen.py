"""Multi-task dataset instantiation from referrals, geometry, and graphs.

Nine tasks: three caption passthroughs, visual grounding, and five QA
subtasks (object size, absolute distance, relative distance, object
count, attribute recognition).  Numeric answers are derived from the
stored geometry at generation time and carry units.  Counting questions
are test-only; open-ended attribute questions are train-only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .evaluation import normalize_answer
from .geometry import Obb7, obb_distance
from .label_graph import LabelGraph, subtype_labels
from .oracle import Oracle, OracleRequest, RetryPolicy, call
from .prompts import DISTRACTING_ATTRIBUTE
from .referring import ATTRIBUTE_FIELDS, AppearanceAttributes, ReferralRecord
from .util import stable_digest, stable_rng

logger = logging.getLogger(__name__)

TASKS = (
    "scene_caption", "view_caption", "object_caption", "visual_grounding",
    "object_size", "absolute_distance", "relative_distance", "object_count",
    "attribute_recognition",
)
DEFAULT_PER_SCENE_CAP = 50


def _load_templates() -> dict[str, str]:
    path = resources.files("discurate").joinpath(
        "assets/question_templates.json")
    return json.loads(path.read_text(encoding="utf-8"))


QUESTION_TEMPLATES = _load_templates()


@dataclass(frozen=True)
class QASample:
    sample_id: str
    scene_id: str
    task: str
    split: str
    question: str
    answer: str
    options: tuple[str, ...] = ()
    target_ids: tuple[str, ...] = ()
    provenance: tuple[str, ...] = ()
    choices: tuple[tuple[str, str], ...] = ()
    box: tuple[float, ...] = ()
    anchor_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.task == "relative_distance" and set(self.options) != {"A", "B"}:
            raise ValueError("relative_distance needs options A/B")


def sample_to_record(sample: QASample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "scene_id": sample.scene_id,
        "task": sample.task,
        "split": sample.split,
        "question": sample.question,
        "answer": sample.answer,
        "options": list(sample.options),
        "target_ids": list(sample.target_ids),
        "provenance": list(sample.provenance),
        "choices": [list(c) for c in sample.choices],
        "box": list(sample.box),
        "anchor_ids": list(sample.anchor_ids),
    }


def sample_from_record(record: Mapping) -> QASample:
    return QASample(
        sample_id=record["sample_id"],
        scene_id=record["scene_id"],
        task=record["task"],
        split=record["split"],
        question=record["question"],
        answer=record["answer"],
        options=tuple(record.get("options", ())),
        target_ids=tuple(record.get("target_ids", ())),
        provenance=tuple(record.get("provenance", ())),
        choices=tuple((c[0], c[1]) for c in record.get("choices", ())),
        box=tuple(record.get("box", ())),
        anchor_ids=tuple(record.get("anchor_ids", ())),
    )


@dataclass(frozen=True)
class GenerationConfig:
    per_scene_cap: int = DEFAULT_PER_SCENE_CAP
    per_task_quotas: tuple[tuple[str, int], ...] = ()
    seed: int = 0
    train_scenes: tuple[str, ...] = ()
    test_scenes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.per_scene_cap < 0:
            raise ValueError("per-scene cap must be >= 0")
        for task, quota in self.per_task_quotas:
            if quota < 0:
                raise ValueError(f"quota for {task!r} must be >= 0")

    def split_of(self, scene_id: str) -> str | None:
        if scene_id in self.train_scenes:
            return "train"
        if scene_id in self.test_scenes:
            return "test"
        return None


def box_to_tuple(box: Obb7) -> tuple[float, ...]:
    return (box.center[0], box.center[1], box.center[2],
            box.size[0], box.size[1], box.size[2], box.yaw)


def size_answer_cm(box: Obb7) -> str:
    dims = [round(d * 100) for d in box.size]
    return f"{dims[0]} x {dims[1]} x {dims[2]} cm"


def distance_answer_m(distance: float) -> str:
    return f"{distance:.2f} m"


def gen_object_size(scene_id: str, split: str, object_id: str, box: Obb7,
                    referral: ReferralRecord) -> QASample:
    question = QUESTION_TEMPLATES["object_size"].format(
        referral=referral.description)
    return QASample("", scene_id, "object_size", split, question,
                    size_answer_cm(box), target_ids=(object_id,),
                    provenance=referral.provenance)


def gen_absolute_distance(scene_id: str, split: str,
                          a_id: str, box_a: Obb7, referral_a: ReferralRecord,
                          b_id: str, box_b: Obb7, referral_b: ReferralRecord
                          ) -> QASample | None:
    distance = obb_distance(box_a, box_b)
    if distance <= 0:
        return None
    question = QUESTION_TEMPLATES["absolute_distance"].format(
        referral_a=referral_a.description, referral_b=referral_b.description)
    provenance = tuple(sorted(set(referral_a.provenance)
                              | set(referral_b.provenance)))
    return QASample("", scene_id, "absolute_distance", split, question,
                    distance_answer_m(distance), target_ids=(a_id, b_id),
                    provenance=provenance)


def gen_relative_distance(scene_id: str, split: str,
                          target_id: str, target_box: Obb7,
                          target_referral: ReferralRecord,
                          cand_a: tuple[str, Obb7, ReferralRecord],
                          cand_b: tuple[str, Obb7, ReferralRecord],
                          seed: object) -> QASample | None:
    a_id, a_box, a_ref = cand_a
    b_id, b_box, b_ref = cand_b
    d_a = obb_distance(target_box, a_box)
    d_b = obb_distance(target_box, b_box)
    buffer = max(max(a_box.size), max(b_box.size))
    if abs(d_a - d_b) <= buffer:
        return None
    ordered = [(a_id, a_ref, d_a), (b_id, b_ref, d_b)]
    rng = stable_rng("relative-distance", seed, scene_id, target_id,
                     a_id, b_id)
    rng.shuffle(ordered)
    letters = ("A", "B")
    closer = min(range(2), key=lambda i: ordered[i][2])
    question = QUESTION_TEMPLATES["relative_distance"].format(
        referral=target_referral.description,
        option_a=ordered[0][1].description,
        option_b=ordered[1][1].description)
    return QASample(
        "", scene_id, "relative_distance", split, question, letters[closer],
        options=("A", "B"),
        target_ids=(target_id,),
        provenance=target_referral.provenance,
        choices=((letters[0], ordered[0][0]), (letters[1], ordered[1][0])))


def gen_object_count(scene_id: str, label: str,
                     object_labels: Mapping[str, str],
                     graph: LabelGraph) -> QASample | None:
    closure = subtype_labels(label, graph)
    matches = sorted(oid for oid, obj_label in object_labels.items()
                     if graph.resolve(obj_label) in closure)
    if not matches:
        return None
    question = QUESTION_TEMPLATES["object_count"].format(label=label)
    return QASample("", scene_id, "object_count", "test", question,
                    str(len(matches)), target_ids=tuple(matches))


def leakage_safe_referral(object_id: str, label: str,
                          referrals: Sequence[ReferralRecord],
                          value: str) -> ReferralRecord | None:
    """Referral usable in an attribute question about ``value``.

    Only the bare label (for objects without distractors) or anchoring
    referrals qualify; any candidate whose text contains the queried
    value is rejected.
    """
    candidates: list[ReferralRecord] = []
    for record in referrals:
        if record.object_id != object_id:
            continue
        if set(record.provenance) <= {"label", "caption"}:
            candidates.append(replace(record, description=f"the {label}",
                                      provenance=("label",)))
        elif record.provenance in (("anchor_object",), ("anchor_sight",)):
            candidates.append(record)
    normalized_value = normalize_answer(value)
    for record in candidates:
        if normalized_value not in normalize_answer(record.description):
            return record
    return None


def distracting_value(label: str, field_name: str, value: str,
                      oracle: Oracle, *,
                      policy: RetryPolicy | None = None) -> str | None:
    """Oracle-produced wrong-but-plausible attribute value, or None."""
    request = OracleRequest.from_template(DISTRACTING_ATTRIBUTE, {
        "ObjectLabel": label,
        "AttributeField": field_name,
        "AttributeValue": value,
    })

    def valid(text: str) -> bool:
        candidate = text.strip()
        return bool(candidate) and candidate.lower() != value.lower()

    response = call(oracle, request, validator=valid, policy=policy)
    if not response.ok:
        logger.warning("no distractor for %s %s=%r: %s", label, field_name,
                       value, response.error)
        return None
    return response.text.strip()


def gen_attribute_tf(scene_id: str, split: str, object_id: str, label: str,
                     field_name: str, value: str,
                     referral: ReferralRecord, oracle: Oracle, *,
                     policy: RetryPolicy | None = None) -> list[QASample]:
    """One true item plus, when a distractor is found, one false item."""
    template = QUESTION_TEMPLATES["attribute_true_false"]
    true_q = template.format(field=field_name,
                             referral=referral.description, value=value)
    samples = [QASample("", scene_id, "attribute_recognition", split, true_q,
                        "yes", options=("yes", "no"),
                        target_ids=(object_id,),
                        provenance=referral.provenance,
                        anchor_ids=referral.anchor_ids)]
    wrong = distracting_value(label, field_name, value, oracle, policy=policy)
    if wrong is not None:
        false_q = template.format(field=field_name,
                                  referral=referral.description, value=wrong)
        samples.append(QASample("", scene_id, "attribute_recognition", split,
                                false_q, "no", options=("yes", "no"),
                                target_ids=(object_id,),
                                provenance=referral.provenance,
                                anchor_ids=referral.anchor_ids))
    return samples


def gen_attribute_open(scene_id: str, object_id: str, field_name: str,
                       value: str, referral: ReferralRecord) -> QASample:
    question = QUESTION_TEMPLATES["attribute_open"].format(
        field=field_name, referral=referral.description)
    return QASample("", scene_id, "attribute_recognition", "train", question,
                    value, target_ids=(object_id,),
                    provenance=referral.provenance,
                    anchor_ids=referral.anchor_ids)


def gen_grounding(scene_id: str, split: str, object_id: str, box: Obb7,
                  referral: ReferralRecord) -> QASample:
    question = QUESTION_TEMPLATES["visual_grounding"].format(
        referral=referral.description)
    return QASample("", scene_id, "visual_grounding", split, question,
                    object_id, target_ids=(object_id,),
                    provenance=referral.provenance,
                    box=box_to_tuple(box),
                    anchor_ids=referral.anchor_ids)


@dataclass(frozen=True)
class SceneCaptions:
    scene: str | None = None
    frames: tuple[tuple[str, str], ...] = ()
    objects: tuple[tuple[str, str], ...] = ()


def gen_captions(scene_id: str, split: str,
                 captions: SceneCaptions) -> list[QASample]:
    samples = []
    if captions.scene:
        samples.append(QASample(
            "", scene_id, "scene_caption", split,
            QUESTION_TEMPLATES["scene_caption"], captions.scene))
    for frame_id, caption in captions.frames:
        if not caption:
            continue
        samples.append(QASample(
            "", scene_id, "view_caption", split,
            QUESTION_TEMPLATES["view_caption"], caption,
            target_ids=(frame_id,)))
    for object_id, caption in captions.objects:
        if not caption:
            continue
        samples.append(QASample(
            "", scene_id, "object_caption", split,
            QUESTION_TEMPLATES["object_caption"].format(referral=caption),
            caption, target_ids=(object_id,)))
    return samples


@dataclass
class SceneInputs:
    scene_id: str
    boxes: Mapping[str, Obb7]
    labels: Mapping[str, str]
    attributes: Mapping[str, AppearanceAttributes] = field(default_factory=dict)
    referrals: Sequence[ReferralRecord] = ()
    captions: SceneCaptions = SceneCaptions()


def _primary_referrals(referrals: Sequence[ReferralRecord]
                       ) -> dict[str, ReferralRecord]:
    """Most compact referral per object (records are pre-sorted that way)."""
    primary: dict[str, ReferralRecord] = {}
    for record in referrals:
        primary.setdefault(record.object_id, record)
    return primary


def generate_for_scene(inputs: SceneInputs, split: str, graph: LabelGraph,
                       distractor_oracle: Oracle, seed: int, *,
                       policy: RetryPolicy | None = None) -> list[QASample]:
    """All candidate samples for one scene, ids assigned per task."""
    scene_id = inputs.scene_id
    primary = _primary_referrals(inputs.referrals)
    referred = sorted(oid for oid in primary if oid in inputs.boxes)
    samples: list[QASample] = []

    samples.extend(gen_captions(scene_id, split, inputs.captions))

    for oid in referred:
        samples.append(gen_grounding(scene_id, split, oid, inputs.boxes[oid],
                                     primary[oid]))
    for oid in referred:
        samples.append(gen_object_size(scene_id, split, oid,
                                       inputs.boxes[oid], primary[oid]))
    for i, a_id in enumerate(referred):
        for b_id in referred[i + 1:]:
            sample = gen_absolute_distance(
                scene_id, split, a_id, inputs.boxes[a_id], primary[a_id],
                b_id, inputs.boxes[b_id], primary[b_id])
            if sample is not None:
                samples.append(sample)
    for target in referred:
        others = [oid for oid in referred if oid != target]
        for i, a_id in enumerate(others):
            for b_id in others[i + 1:]:
                sample = gen_relative_distance(
                    scene_id, split, target, inputs.boxes[target],
                    primary[target],
                    (a_id, inputs.boxes[a_id], primary[a_id]),
                    (b_id, inputs.boxes[b_id], primary[b_id]),
                    seed)
                if sample is not None:
                    samples.append(sample)

    if split == "test":
        for label in sorted(set(inputs.labels.values())):
            sample = gen_object_count(scene_id, label, inputs.labels, graph)
            if sample is not None:
                samples.append(sample)

    for oid in sorted(inputs.attributes):
        label = inputs.labels.get(oid)
        if label is None:
            continue
        for field_name in ATTRIBUTE_FIELDS:
            value = getattr(inputs.attributes[oid], field_name)
            if not value:
                continue
            referral = leakage_safe_referral(oid, label, inputs.referrals,
                                             value)
            if referral is None:
                logger.info("no leakage-safe referral for %s %s", oid,
                            field_name)
                continue
            samples.extend(gen_attribute_tf(
                scene_id, split, oid, label, field_name, value, referral,
                distractor_oracle, policy=policy))
            if split == "train":
                samples.append(gen_attribute_open(scene_id, oid, field_name,
                                                  value, referral))

    counters: dict[str, int] = {}
    numbered = []
    for sample in samples:
        index = counters.get(sample.task, 0)
        counters[sample.task] = index + 1
        numbered.append(replace(
            sample, sample_id=f"{scene_id}-{sample.task}-{index:04d}"))
    return numbered


def _subsample(items: list[QASample], cap: int,
               rng_parts: tuple) -> list[QASample]:
    if len(items) <= cap:
        return items
    rng = stable_rng(*rng_parts)
    indices = sorted(rng.sample(range(len(items)), cap))
    return [items[i] for i in indices]


def balance_and_cap(samples: Iterable[QASample],
                    config: GenerationConfig) -> list[QASample]:
    """Enforce split rules, then seeded per-scene and per-task caps."""
    kept = [
        s for s in samples
        if not (s.task == "object_count" and s.split == "train")
        and not (s.task == "attribute_recognition" and s.split == "test"
                 and not s.options)
    ]
    by_scene_task: dict[tuple[str, str], list[QASample]] = {}
    for sample in kept:
        by_scene_task.setdefault((sample.scene_id, sample.task),
                                 []).append(sample)
    capped: list[QASample] = []
    for key in sorted(by_scene_task):
        scene_id, task = key
        capped.extend(_subsample(
            by_scene_task[key], config.per_scene_cap,
            ("scene-cap", config.seed, scene_id, task)))

    quotas = dict(config.per_task_quotas)
    if quotas:
        by_task: dict[str, list[QASample]] = {}
        for sample in capped:
            by_task.setdefault(sample.task, []).append(sample)
        final: list[QASample] = []
        for task in sorted(by_task):
            items = by_task[task]
            if task in quotas:
                items = _subsample(items, quotas[task],
                                   ("task-quota", config.seed, task))
            final.extend(items)
        capped = final
    capped.sort(key=lambda s: (s.scene_id, s.task, s.sample_id))
    return capped


def build_manifest(samples: Sequence[QASample],
                   config: GenerationConfig) -> dict:
    """Reproducibility stamp: config hash, seed, per-task counts."""
    counts: dict[str, int] = {}
    splits = {"train": 0, "test": 0}
    for sample in samples:
        counts[sample.task] = counts.get(sample.task, 0) + 1
        splits[sample.split] += 1
    config_hash = stable_digest(
        "generation-config", config.per_scene_cap,
        sorted(config.per_task_quotas), config.seed,
        sorted(config.train_scenes), sorted(config.test_scenes))
    return {
        "config_hash": config_hash,
        "seed": config.seed,
        "total_samples": len(samples),
        "per_task_counts": {task: counts[task] for task in sorted(counts)},
        "per_split_counts": splits,
    }
