"""Rule-based spatial relations between boxes plus oracle-driven correction.

The rule stage emits only view-independent binary relations: vertical
support ("on top of" with its stored inverse "beneath") and horizontal
contact ("next to").  The correction stage shows each supported pair to a
vision oracle; rejected triples are re-described, the describing phrase is
mapped back into the vocabulary, and unmappable or view-dependent phrases
drop the triple.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .geometry import Obb7, obb_distance, sat_overlap
from .oracle import (
    Oracle,
    OracleRequest,
    RetryPolicy,
    call,
    find_view_term,
    first_alpha_token,
    validate_yes_no,
)
from .prompts import (
    RELATION_DESCRIPTION_SLOT,
    RELATION_EXTRACTION,
    RELATION_JUDGMENT,
)
from .util import atomic_write_text, dump_jsonl, load_jsonl

logger = logging.getLogger(__name__)

DEFAULT_PREDICATES = (
    "on top of", "beneath", "next to", "inside",
    "hanging from", "attached to", "leaning against",
)
SYMMETRIC_PREDICATES = frozenset({"next to"})
INVERSE_PREDICATES = {"on top of": "beneath", "beneath": "on top of"}

SUPPORT_GAP_MIN_M = -0.02
SUPPORT_GAP_MAX_M = 0.05
CONTACT_DISTANCE_M = 0.10

PHRASE_SYNONYMS = {
    "on": "on top of",
    "on top": "on top of",
    "under": "beneath",
    "underneath": "beneath",
    "below": "beneath",
    "beside": "next to",
    "near": "next to",
    "next": "next to",
    "in": "inside",
    "within": "inside",
    "hanging": "hanging from",
    "attached": "attached to",
    "leaning": "leaning against",
}


@dataclass(frozen=True)
class RelationVocabulary:
    predicates: tuple[str, ...] = DEFAULT_PREDICATES

    def __post_init__(self):
        for predicate in self.predicates:
            term = find_view_term(predicate)
            if term is not None:
                raise ValueError(
                    f"view-dependent predicate {predicate!r} ({term!r})")

    def __contains__(self, predicate: str) -> bool:
        return predicate in self.predicates


DEFAULT_VOCABULARY = RelationVocabulary()


@dataclass(frozen=True)
class RelationTriple:
    subject_id: str
    predicate: str
    object_id: str
    source: str = "rule"

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise ValueError(f"self-relation on {self.subject_id!r}")
        if self.source not in ("rule", "corrected"):
            raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class SceneGraph:
    triples: frozenset[RelationTriple]

    def find(self, subject_id: str, predicate: str,
             object_id: str) -> RelationTriple | None:
        for triple in self.triples:
            if (triple.subject_id == subject_id
                    and triple.predicate == predicate
                    and triple.object_id == object_id):
                return triple
        return None


def _footprints_overlap(a: Obb7, b: Obb7) -> bool:
    flat_a = replace(a, center=(a.center[0], a.center[1], 0.0),
                     size=(a.size[0], a.size[1], 1.0))
    flat_b = replace(b, center=(b.center[0], b.center[1], 0.0),
                     size=(b.size[0], b.size[1], 1.0))
    return sat_overlap(flat_a, flat_b)


def _supports(top: Obb7, bottom: Obb7, gap_min: float, gap_max: float) -> bool:
    gap = top.z_min - bottom.z_max
    return gap_min <= gap <= gap_max and _footprints_overlap(top, bottom)


def _z_extents_overlap(a: Obb7, b: Obb7) -> bool:
    return a.z_min <= b.z_max and b.z_min <= a.z_max


def build_initial_graph(boxes: Mapping[str, Obb7], *,
                        support_gap_min: float = SUPPORT_GAP_MIN_M,
                        support_gap_max: float = SUPPORT_GAP_MAX_M,
                        contact_distance: float = CONTACT_DISTANCE_M
                        ) -> SceneGraph:
    """Vertical support and horizontal contact over all object pairs.

    Support stores both orientations ("on top of" and "beneath"); contact
    is stored once with subject_id < object_id.
    """
    ids = sorted(boxes)
    triples: set[RelationTriple] = set()
    for i, a_id in enumerate(ids):
        for b_id in ids[i + 1:]:
            a, b = boxes[a_id], boxes[b_id]
            a_on_b = _supports(a, b, support_gap_min, support_gap_max)
            b_on_a = _supports(b, a, support_gap_min, support_gap_max)
            if a_on_b:
                triples.add(RelationTriple(a_id, "on top of", b_id))
                triples.add(RelationTriple(b_id, "beneath", a_id))
            if b_on_a:
                triples.add(RelationTriple(b_id, "on top of", a_id))
                triples.add(RelationTriple(a_id, "beneath", b_id))
            if a_on_b or b_on_a:
                continue
            if (_z_extents_overlap(a, b)
                    and obb_distance(a, b) <= contact_distance):
                triples.add(RelationTriple(a_id, "next to", b_id))
    return SceneGraph(triples=frozenset(triples))


def select_covisible_frame(a_id: str, b_id: str,
                           visibility: Mapping[str, Mapping[str, float]]
                           ) -> str | None:
    """Frame maximizing the smaller visible-area ratio of the two objects."""
    best_frame = None
    best_score = 0.0
    for frame_id in sorted(visibility):
        ratios = visibility[frame_id]
        score = min(ratios.get(a_id, 0.0), ratios.get(b_id, 0.0))
        if score > best_score:
            best_score = score
            best_frame = frame_id
    return best_frame


def phrase_to_predicate(phrase: str,
                        vocabulary: RelationVocabulary = DEFAULT_VOCABULARY
                        ) -> str | None:
    """Map a free-text relation phrase into the vocabulary, or refuse.

    Refusals (None) cover view-dependent phrases and anything that stays
    unmatched after normalization and the synonym table.
    """
    normalized = " ".join(phrase.lower().split()).strip(" .,;:!?\"'")
    if not normalized:
        return None
    if find_view_term(normalized) is not None:
        return None
    if normalized in vocabulary:
        return normalized
    mapped = PHRASE_SYNONYMS.get(normalized)
    if mapped is not None and mapped in vocabulary:
        return mapped
    return None


def _judgment_valid(text: str) -> bool:
    return first_alpha_token(text) in ("yes", "no")


def _description_after_no(text: str) -> str:
    lowered = text.lower()
    idx = lowered.find("no")
    if idx < 0:
        return ""
    return text[idx + 2:].lstrip(" .,;:-")


ImageProvider = Callable[[str, str, str], Sequence[str | Path]]


def _expand(triple: RelationTriple) -> set[RelationTriple]:
    """A triple plus its stored inverse, when the vocabulary keeps one."""
    expanded = {triple}
    inverse = INVERSE_PREDICATES.get(triple.predicate)
    if inverse is not None:
        expanded.add(RelationTriple(triple.object_id, inverse,
                                    triple.subject_id, triple.source))
    if triple.predicate in SYMMETRIC_PREDICATES:
        lo, hi = sorted((triple.subject_id, triple.object_id))
        expanded = {RelationTriple(lo, triple.predicate, hi, triple.source)}
    return expanded


def correct_relations(graph: SceneGraph, labels: Mapping[str, str],
                      visibility: Mapping[str, Mapping[str, float]],
                      mllm: Oracle, llm: Oracle, *,
                      vocabulary: RelationVocabulary = DEFAULT_VOCABULARY,
                      policy: RetryPolicy | None = None,
                      image_provider: ImageProvider | None = None
                      ) -> tuple[SceneGraph, list[str]]:
    """Verify rule triples against a vision oracle and repair or drop them.

    Inverse pairs are treated as one relation: the "on top of" side is
    judged and the outcome applied to its "beneath" twin.  Triples without
    a co-visible frame pass through unchanged.  Oracle exhaustion keeps the
    triple and adds a flag message.
    """
    flags: list[str] = []
    kept: set[RelationTriple] = set()
    predicate_list = ", ".join(vocabulary.predicates)

    for triple in sorted(graph.triples,
                         key=lambda t: (t.subject_id, t.predicate,
                                        t.object_id)):
        if triple.predicate == "beneath":
            twin = graph.find(triple.object_id, "on top of", triple.subject_id)
            if twin is not None:
                continue
        frame_id = select_covisible_frame(triple.subject_id, triple.object_id,
                                          visibility)
        if frame_id is None:
            kept |= _expand(triple)
            continue

        images: tuple[str | Path, ...] = ()
        if image_provider is not None:
            images = tuple(image_provider(frame_id, triple.subject_id,
                                          triple.object_id))
        request = OracleRequest.from_template(RELATION_JUDGMENT, {
            "ObjectA": labels[triple.subject_id],
            "Relation": triple.predicate,
            "ObjectB": labels[triple.object_id],
            "Predefined Relations": predicate_list,
        }, image_paths=images)
        response = call(mllm, request, validator=_judgment_valid,
                        policy=policy)
        if not response.ok:
            kept |= _expand(triple)
            flags.append(f"judgment failed for {triple.subject_id} "
                         f"{triple.predicate} {triple.object_id}: "
                         f"{response.error}")
            continue
        if validate_yes_no(response.text) == "yes":
            kept |= _expand(triple)
            continue

        description = _description_after_no(response.text)
        if not description:
            logger.info("dropping %s %s %s: rejected without re-description",
                        triple.subject_id, triple.predicate, triple.object_id)
            continue
        extraction = OracleRequest.from_template(RELATION_EXTRACTION, {
            "ObjectA": labels[triple.subject_id],
            "ObjectB": labels[triple.object_id],
            RELATION_DESCRIPTION_SLOT: description,
        })
        extracted = call(llm, extraction, policy=policy)
        if not extracted.ok:
            kept |= _expand(triple)
            flags.append(f"extraction failed for {triple.subject_id} "
                         f"{triple.predicate} {triple.object_id}: "
                         f"{extracted.error}")
            continue
        predicate = phrase_to_predicate(extracted.text, vocabulary)
        if predicate is None:
            logger.info("dropping %s %s %s: phrase %r outside vocabulary",
                        triple.subject_id, triple.predicate, triple.object_id,
                        extracted.text)
            continue
        corrected = RelationTriple(triple.subject_id, predicate,
                                   triple.object_id, source="corrected")
        kept |= _expand(corrected)
    return SceneGraph(triples=frozenset(kept)), flags


def object_subgraph(graph: SceneGraph,
                    object_id: str) -> set[tuple[str, str]]:
    """Relations seen from one object: subject-side plus symmetric edges."""
    entries = set()
    for triple in graph.triples:
        if triple.subject_id == object_id:
            entries.add((triple.predicate, triple.object_id))
        elif (triple.object_id == object_id
                and triple.predicate in SYMMETRIC_PREDICATES):
            entries.add((triple.predicate, triple.subject_id))
    return entries


def graph_to_records(graph: SceneGraph) -> list[dict]:
    triples = sorted(graph.triples,
                     key=lambda t: (t.subject_id, t.predicate, t.object_id))
    return [
        {"subject": t.subject_id, "predicate": t.predicate,
         "object": t.object_id, "source": t.source}
        for t in triples
    ]


def graph_from_records(records: Iterable[Mapping]) -> SceneGraph:
    triples = frozenset(
        RelationTriple(r["subject"], r["predicate"], r["object"],
                       r.get("source", "rule"))
        for r in records)
    return SceneGraph(triples=triples)


def save_scene_graph(graph: SceneGraph, path: str | Path) -> None:
    atomic_write_text(path, dump_jsonl(graph_to_records(graph)))


def load_scene_graph(path: str | Path) -> SceneGraph:
    text = Path(path).read_text(encoding="utf-8")
    return graph_from_records(load_jsonl(text))
