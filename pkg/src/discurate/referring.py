"""Discriminative object referring.

Distractor groups are described along three axes (appearance, size,
relations), fused into minimal exclusive descriptor conjunctions, and
members that stay ambiguous fall back to spatial anchoring: closest or
farthest from an anchor object, or leftmost/rightmost relative to a
sightline between two anchors.  Positive signed angles (counterclockwise
seen from +z) count as left of the sight direction.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .geometry import Obb7, obb_distance, obb_volume, signed_angle
from .oracle import (
    Oracle,
    OracleRequest,
    RetryPolicy,
    call,
    find_view_term,
)
from .prompts import APPEARANCE_GROUPING, REFERRAL_REWRITE
from .scene_graph import SceneGraph, object_subgraph
from .util import stable_rng, tokenize

logger = logging.getLogger(__name__)

ATTRIBUTE_FIELDS = ("color", "material", "shape", "condition")
SIZE_BUFFER_RATIO = 0.25
PROXIMITY_CLUSTER_M = 0.5
MIN_ANCHOR_DISTANCE_M = 0.5
MIN_SIGHT_SEPARATION_M = 0.5
SIGHT_MARGIN_DEG = 10.0
MAX_ANCHORS = 3
MAX_SIGHTS = 3

NEGATIVE_SIZE_TEXTS = frozenset({"not the largest", "not the smallest"})


@dataclass(frozen=True)
class AppearanceAttributes:
    color: str | None = None
    material: str | None = None
    shape: str | None = None
    condition: str | None = None

    def present(self) -> dict[str, str]:
        values = {}
        for field in ATTRIBUTE_FIELDS:
            value = getattr(self, field)
            if value is not None and value.strip():
                values[field] = value.strip()
        return values


@dataclass(frozen=True)
class Descriptor:
    kind: str
    text: str
    extension: frozenset[str]
    anchors: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("appearance", "size", "relation",
                             "anchor_object", "anchor_sight"):
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if not self.text:
            raise ValueError("descriptor text empty")


def attribute_table(member_ids: Sequence[str],
                    attributes: Mapping[str, AppearanceAttributes]) -> str:
    """Markdown table of member attributes; absent cells are ``--``."""
    header = "| id | " + " | ".join(ATTRIBUTE_FIELDS) + " |"
    divider = "|" + "----|" * (len(ATTRIBUTE_FIELDS) + 1)
    rows = [header, divider]
    for member in member_ids:
        attrs = attributes.get(member, AppearanceAttributes())
        cells = [getattr(attrs, field) or "--" for field in ATTRIBUTE_FIELDS]
        rows.append("| " + member + " | " + " | ".join(cells) + " |")
    return "\n".join(rows)


def parse_grouping_response(text: str,
                            member_ids: Iterable[str]
                            ) -> dict[str, set[str]] | None:
    """Parse "value: id, id" lines; hallucinated member ids invalidate."""
    members = set(member_ids)
    entries: dict[str, set[str]] = {}
    for line in text.splitlines():
        line = line.strip().lstrip("-*").strip()
        if not line or ":" not in line:
            continue
        value, _, rest = line.partition(":")
        value = value.strip().lower()
        ids = {token.strip() for token in rest.split(",") if token.strip()}
        if not value or not ids:
            continue
        if not ids <= members:
            return None
        entries.setdefault(value, set()).update(ids)
    return entries


def group_by_appearance(member_ids: Sequence[str],
                        attributes: Mapping[str, AppearanceAttributes],
                        label: str, oracle: Oracle, *,
                        policy: RetryPolicy | None = None
                        ) -> list[Descriptor]:
    """Oracle-clustered appearance values, discriminating entries only.

    A failed or unparseable oracle run omits appearance descriptors for
    the group rather than aborting.
    """
    members = sorted(member_ids)
    request = OracleRequest.from_template(APPEARANCE_GROUPING, {
        "Label": label,
        "AttributeTable": attribute_table(members, attributes),
    })
    response = call(oracle, request, policy=policy,
                    validator=lambda t: parse_grouping_response(t, members)
                    is not None)
    if not response.ok:
        logger.warning("appearance grouping failed for %r: %s", label,
                       response.error)
        return []
    entries = parse_grouping_response(response.text, members)
    assert entries is not None
    descriptors = []
    for value in sorted(entries):
        extension = frozenset(entries[value])
        if extension and extension != frozenset(members):
            descriptors.append(Descriptor("appearance", value, extension))
    return descriptors


def group_by_size(boxes: Mapping[str, Obb7], *,
                  tau: float = SIZE_BUFFER_RATIO) -> list[Descriptor]:
    """Largest/smallest labels for volume extremes separated by the buffer."""
    if len(boxes) < 2:
        return []
    volumes = {member: obb_volume(box) for member, box in boxes.items()}
    descending = sorted(volumes, key=lambda m: (-volumes[m], m))
    ascending = sorted(volumes, key=lambda m: (volumes[m], m))
    descriptors = []
    if volumes[descending[0]] >= (1.0 + tau) * volumes[descending[1]]:
        top = descending[0]
        rest = frozenset(m for m in volumes if m != top)
        descriptors.append(Descriptor("size", "largest", frozenset({top})))
        descriptors.append(Descriptor("size", "not the largest", rest))
    if volumes[ascending[1]] >= (1.0 + tau) * volumes[ascending[0]]:
        low = ascending[0]
        rest = frozenset(m for m in volumes if m != low)
        descriptors.append(Descriptor("size", "smallest", frozenset({low})))
        descriptors.append(Descriptor("size", "not the smallest", rest))
    return descriptors


def proximity_clusters(boxes: Mapping[str, Obb7], *,
                       threshold: float = PROXIMITY_CLUSTER_M
                       ) -> list[set[str]]:
    """Connected components under pairwise box distance <= threshold."""
    ids = sorted(boxes)
    parent = {i: i for i in ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if obb_distance(boxes[a], boxes[b]) <= threshold:
                parent[find(a)] = find(b)
    clusters: dict[str, set[str]] = {}
    for member in ids:
        clusters.setdefault(find(member), set()).add(member)
    return sorted(clusters.values(), key=lambda c: min(c))


def group_by_relations(member_ids: Sequence[str],
                       boxes: Mapping[str, Obb7],
                       graph: SceneGraph,
                       scene_labels: Mapping[str, str], *,
                       proximity: float = PROXIMITY_CLUSTER_M
                       ) -> list[Descriptor]:
    """One distinctive relation per spatially isolated member.

    Members closer than the proximity threshold share a cluster and are
    treated as relation-indistinguishable; a relation qualifies only when
    no member of any other cluster has it and the related object's label
    is unique in the scene.
    """
    members = sorted(set(member_ids))
    clusters = proximity_clusters({m: boxes[m] for m in members},
                                  threshold=proximity)
    cluster_of = {m: i for i, cluster in enumerate(clusters) for m in cluster}
    subgraphs = {m: object_subgraph(graph, m) for m in members}
    label_counts = Counter(scene_labels.values())

    descriptors = []
    for member in members:
        if len(clusters[cluster_of[member]]) > 1:
            continue
        foreign = set()
        for other in members:
            if cluster_of[other] != cluster_of[member]:
                foreign |= subgraphs[other]
        candidates = [
            (predicate, other_id)
            for predicate, other_id in subgraphs[member]
            if (predicate, other_id) not in foreign
            and label_counts[scene_labels[other_id]] == 1
        ]
        if not candidates:
            continue
        predicate, other_id = min(
            candidates,
            key=lambda entry: (entry[0],
                               obb_distance(boxes[member], boxes[entry[1]]),
                               entry[1]))
        text = f"{predicate} the {scene_labels[other_id]}"
        descriptors.append(Descriptor("relation", text, frozenset({member})))
    return descriptors


def comparative_disambiguation(member_ids: Iterable[str],
                               descriptor_map: Mapping[str, Iterable[str]], *,
                               never_alone: frozenset[str] = frozenset(),
                               max_subset_size: int | None = None
                               ) -> dict[str, list[tuple[str, ...]]]:
    """Minimal exclusive descriptor conjunctions per member.

    A subset of descriptor keys is exclusive for a member when the
    intersection of its extensions is exactly that member; keys in
    ``never_alone`` cannot stand as one-element descriptions.  Every
    returned subset is minimal: no admissible proper subset is exclusive.
    Results per member are sorted smallest-first, then lexicographically.
    """
    members = sorted(set(member_ids))
    keys = sorted(descriptor_map)
    extensions = {key: frozenset(descriptor_map[key]) & set(members)
                  for key in keys}
    cap = len(keys) if max_subset_size is None else max_subset_size

    def admissible(subset: tuple[str, ...]) -> bool:
        return not (len(subset) == 1 and subset[0] in never_alone)

    found: dict[str, list[tuple[str, ...]]] = {m: [] for m in members}

    def explore(start: int, chosen: tuple[str, ...],
                intersection: frozenset[str]) -> None:
        if chosen and len(intersection) == 1:
            if admissible(chosen):
                found[next(iter(intersection))].append(chosen)
                return
            # inadmissible singleton: extensions stay exclusive, keep going
        if len(chosen) >= cap:
            return
        for i in range(start, len(keys)):
            key = keys[i]
            narrowed = (extensions[key] if not chosen
                        else intersection & extensions[key])
            if not narrowed:
                continue
            explore(i + 1, chosen + (key,), narrowed)

    explore(0, (), frozenset())

    result: dict[str, list[tuple[str, ...]]] = {}
    for member in members:
        subsets = found[member]
        minimal = [
            s for s in subsets
            if not any(set(other) < set(s) for other in subsets)
        ]
        result[member] = sorted(set(minimal), key=lambda s: (len(s), s))
    return result


def _max_dimension(box: Obb7) -> float:
    return max(box.size)


def anchor_object_descriptors(member_boxes: Mapping[str, Obb7],
                              candidate_referrals: Mapping[str, str],
                              candidate_boxes: Mapping[str, Obb7], *,
                              seed: object,
                              min_distance: float = MIN_ANCHOR_DISTANCE_M,
                              max_anchors: int = MAX_ANCHORS
                              ) -> list[Descriptor]:
    """Closest/farthest awards from sampled anchors outside the group.

    Anchors must stand at least ``min_distance`` from every member; awards
    need a separation margin equal to the largest member dimension.
    """
    members = sorted(member_boxes)
    if len(members) < 2:
        return []
    buffer = max(_max_dimension(member_boxes[m]) for m in members)
    eligible = [
        anchor for anchor in sorted(candidate_referrals)
        if anchor not in member_boxes
        and all(obb_distance(candidate_boxes[anchor], member_boxes[m])
                >= min_distance for m in members)
    ]
    rng = stable_rng("anchor-object", seed)
    count = min(max_anchors, len(eligible))
    chosen = sorted(rng.sample(eligible, count))

    descriptors = []
    for anchor in chosen:
        distances = {m: obb_distance(member_boxes[m], candidate_boxes[anchor])
                     for m in members}
        nearest = sorted(members, key=lambda m: (distances[m], m))
        if distances[nearest[0]] + buffer <= distances[nearest[1]]:
            descriptors.append(Descriptor(
                "anchor_object",
                f"closest to {candidate_referrals[anchor]}",
                frozenset({nearest[0]}), anchors=(anchor,)))
        farthest = sorted(members, key=lambda m: (-distances[m], m))
        if distances[farthest[0]] >= distances[farthest[1]] + buffer:
            descriptors.append(Descriptor(
                "anchor_object",
                f"farthest from {candidate_referrals[anchor]}",
                frozenset({farthest[0]}), anchors=(anchor,)))
    return descriptors


def _xy(box: Obb7) -> tuple[float, float]:
    return (box.center[0], box.center[1])


def anchor_sight_descriptors(member_boxes: Mapping[str, Obb7],
                             candidate_referrals: Mapping[str, str],
                             candidate_boxes: Mapping[str, Obb7], *,
                             seed: object,
                             min_separation: float = MIN_SIGHT_SEPARATION_M,
                             max_sights: int = MAX_SIGHTS,
                             margin_deg: float = SIGHT_MARGIN_DEG
                             ) -> list[Descriptor]:
    """Leftmost/rightmost awards against sampled sightlines in the XY plane.

    The sightline runs from anchor A to anchor B; a member's angle is the
    signed XY angle from the sight direction to the member, so positive
    angles lie left of the line.  Members coincident with A are skipped.
    """
    members = sorted(member_boxes)
    if len(members) < 2:
        return []
    anchors = [a for a in sorted(candidate_referrals)
               if a not in member_boxes]
    pairs = []
    for i, a in enumerate(anchors):
        for b in anchors[i + 1:]:
            ax, ay = _xy(candidate_boxes[a])
            bx, by = _xy(candidate_boxes[b])
            if math.hypot(bx - ax, by - ay) >= min_separation:
                pairs.append((a, b))
    rng = stable_rng("anchor-sight", seed)
    count = min(max_sights, len(pairs))
    chosen = sorted(rng.sample(pairs, count))

    margin = math.radians(margin_deg)
    descriptors = []
    for a, b in chosen:
        ax, ay = _xy(candidate_boxes[a])
        bx, by = _xy(candidate_boxes[b])
        sight = (bx - ax, by - ay)
        angles = {}
        for member in members:
            mx, my = _xy(member_boxes[member])
            offset = (mx - ax, my - ay)
            if math.hypot(*offset) < 1e-9:
                continue
            angles[member] = signed_angle(sight, offset)
        if len(angles) < 2:
            continue
        line = (f"the line from {candidate_referrals[a]} "
                f"to {candidate_referrals[b]}")
        left = sorted(angles, key=lambda m: (-angles[m], m))
        if (angles[left[0]] > 0
                and angles[left[0]] >= angles[left[1]] + margin):
            descriptors.append(Descriptor(
                "anchor_sight", f"leftmost relative to {line}",
                frozenset({left[0]}), anchors=(a, b)))
        right = sorted(angles, key=lambda m: (angles[m], m))
        if (angles[right[0]] < 0
                and angles[right[0]] <= angles[right[1]] - margin):
            descriptors.append(Descriptor(
                "anchor_sight", f"rightmost relative to {line}",
                frozenset({right[0]}), anchors=(a, b)))
    return descriptors


def singleton_fallback(caption: str | None, label: str | None) -> str:
    if caption and caption.strip():
        return caption.strip()
    if label and label.strip():
        return f"the {label.strip()}"
    raise ValueError("object has neither caption nor label")


def render_referral(label: str, descriptors: Sequence[Descriptor]) -> str:
    """Template rendering: positive size and appearance values modify the
    label up front; relations, anchors, and negated sizes trail as clauses.
    """
    pre = (sorted(d.text for d in descriptors
                  if d.kind == "size" and d.text not in NEGATIVE_SIZE_TEXTS)
           + sorted(d.text for d in descriptors if d.kind == "appearance"))
    post = []
    for kind in ("relation", "anchor_object", "anchor_sight"):
        post.extend(sorted(d.text for d in descriptors if d.kind == kind))
    post.extend(f"that is {d.text}" for d in descriptors
                if d.kind == "size" and d.text in NEGATIVE_SIZE_TEXTS)
    core = "the " + (", ".join(pre) + " " if pre else "") + label
    if post:
        return core + " " + ", ".join(post)
    return core


def rewrite_referral(text: str, oracle: Oracle, *,
                     required_labels: Iterable[str] = (),
                     policy: RetryPolicy | None = None) -> str:
    """Oracle paraphrase; kept only when every required label survives."""
    required = [tuple(tokenize(label)) for label in required_labels]

    def valid(candidate: str) -> bool:
        if find_view_term(candidate) is not None:
            return False
        tokens = set(tokenize(candidate))
        return all(all(part in tokens for part in label) for label in required)

    request = OracleRequest.from_template(REFERRAL_REWRITE, {"Referral": text})
    response = call(oracle, request, validator=valid, policy=policy)
    if not response.ok:
        logger.info("rewrite rejected for %r: %s", text, response.error)
        return text
    return response.text.strip()


@dataclass(frozen=True)
class ReferralRecord:
    object_id: str
    group_label: str
    description: str
    provenance: tuple[str, ...]
    descriptor_keys: tuple[str, ...]
    anchor_ids: tuple[str, ...] = ()


def referral_to_record(referral: ReferralRecord) -> dict:
    return {
        "object_id": referral.object_id,
        "group_label": referral.group_label,
        "description": referral.description,
        "provenance": list(referral.provenance),
        "descriptor_keys": list(referral.descriptor_keys),
        "anchor_ids": list(referral.anchor_ids),
    }


def referral_from_record(record: Mapping) -> ReferralRecord:
    return ReferralRecord(
        object_id=record["object_id"],
        group_label=record["group_label"],
        description=record["description"],
        provenance=tuple(record.get("provenance", ())),
        descriptor_keys=tuple(record.get("descriptor_keys", ())),
        anchor_ids=tuple(record.get("anchor_ids", ())),
    )


def assemble_referrals(group_label: str,
                       member_ids: Sequence[str],
                       member_labels: Mapping[str, str],
                       descriptors: Sequence[Descriptor], *,
                       captions: Mapping[str, str] | None = None,
                       never_alone: frozenset[str] = NEGATIVE_SIZE_TEXTS
                       ) -> tuple[list[ReferralRecord], list[str]]:
    """Fuse descriptors into referral records for one distractor group.

    Returns the records plus the ids of members left undescribed.
    Singleton groups fall back to caption or bare label.  Anchor
    descriptors become standalone referrals outside the conjunction
    search.
    """
    members = sorted(set(member_ids))
    captions = captions or {}
    for descriptor in descriptors:
        if not descriptor.extension <= set(members):
            raise ValueError(
                f"descriptor {descriptor.text!r} reaches outside the group")

    records: list[ReferralRecord] = []
    if len(members) == 1:
        member = members[0]
        caption = captions.get(member)
        description = singleton_fallback(caption, member_labels[member])
        provenance = ("caption",) if caption else ("label",)
        records.append(ReferralRecord(member, group_label, description,
                                      provenance, ()))
        return records, []

    comparative = [d for d in descriptors
                   if d.kind in ("appearance", "size", "relation")]
    anchored = [d for d in descriptors
                if d.kind in ("anchor_object", "anchor_sight")]
    by_text: dict[str, Descriptor] = {}
    for descriptor in comparative:
        if descriptor.text in by_text:
            merged = frozenset(by_text[descriptor.text].extension
                               | descriptor.extension)
            by_text[descriptor.text] = Descriptor(
                by_text[descriptor.text].kind, descriptor.text, merged)
        else:
            by_text[descriptor.text] = descriptor

    mapping = comparative_disambiguation(
        members, {text: d.extension for text, d in by_text.items()},
        never_alone=never_alone)
    for member in members:
        for subset in mapping[member]:
            chosen = [by_text[key] for key in subset]
            description = render_referral(member_labels[member], chosen)
            provenance = tuple(sorted({d.kind for d in chosen}))
            records.append(ReferralRecord(member, group_label, description,
                                          provenance, subset))

    for descriptor in anchored:
        if len(descriptor.extension) != 1:
            raise ValueError(
                f"anchor descriptor {descriptor.text!r} not exclusive")
        member = next(iter(descriptor.extension))
        description = render_referral(member_labels[member], [descriptor])
        records.append(ReferralRecord(member, group_label, description,
                                      (descriptor.kind,),
                                      (descriptor.text,),
                                      descriptor.anchors))

    records.sort(key=lambda r: (r.object_id, len(r.descriptor_keys),
                                r.description))
    described = {r.object_id for r in records}
    undescribed = [m for m in members if m not in described]
    return records, undescribed
