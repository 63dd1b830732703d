"""Staged curation pipeline.

Five stages, each reading the previous stage's JSONL artifact and
writing its own atomically, with a content-hash stamp per stage so
re-runs over unchanged inputs and config are skipped:

- clean:    frame sampling, overexposure filtering, box fitting, label
            completion (clean.jsonl)
- annotate: visibility maps and scene/frame/object captions
            (annotate.jsonl)
- graph:    label hierarchy and per-scene relation graphs
            (label_graph.tsv, scene_graph.jsonl)
- refer:    unambiguous object referrals (referrals.jsonl)
- generate: the QA dataset and its manifest (dataset.jsonl,
            dataset_manifest.json)

Any stage failure raises StageError carrying the stage name, which the
CLI converts into a nonzero exit.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import STAGES, PipelineConfig
from .geometry import Obb7, fit_obb7
from .imaging import (
    Box2,
    GrayImage,
    ViewObservation,
    canonicalize_rotation,
    draw_box_overlay,
    is_overexposed,
    load_depth_map,
    load_gray_image,
    max_coverage_frames,
    project_points,
    rank_object_views,
    sample_frames_by_pose,
    sample_frames_uniform,
    visibility_ratio,
)
from .label_graph import (
    LabelGraph,
    cached_label_graph,
    edges_to_tsv,
    group_distractors,
    load_edges_tsv,
    normalize_label,
)
from .oracle import (
    OracleError,
    OracleRequest,
    RetryPolicy,
    call,
    validate_yes_no,
)
from .prompts import (
    FRAME_ANNOTATION,
    OBJECT_ANNOTATION,
    OBJECT_LABEL,
    SCENE_ANNOTATION,
)
from .referring import (
    AppearanceAttributes,
    ReferralRecord,
    anchor_object_descriptors,
    anchor_sight_descriptors,
    assemble_referrals,
    group_by_appearance,
    group_by_relations,
    group_by_size,
    referral_from_record,
    referral_to_record,
    rewrite_referral,
)
from .scene import ManifestError, Scene, load_scenes, visibility_points
from .scene_graph import (
    build_initial_graph,
    correct_relations,
    graph_from_records,
    graph_to_records,
)
from .taskgen import (
    SceneCaptions,
    SceneInputs,
    balance_and_cap,
    build_manifest,
    generate_for_scene,
    sample_to_record,
)
from .util import atomic_write_text, dump_jsonl, file_digest, load_jsonl, \
    stable_digest

logger = logging.getLogger(__name__)

VISIBLE_RATIO_MIN = 0.05
SCENE_CAPTION_FRAME_CAP = 32
TOP_OBJECT_VIEWS = 2

STAGE_ARTIFACTS: Mapping[str, tuple[str, ...]] = {
    "clean": ("clean.jsonl",),
    "annotate": ("annotate.jsonl",),
    "graph": ("label_graph.tsv", "scene_graph.jsonl"),
    "refer": ("referrals.jsonl",),
    "generate": ("dataset.jsonl", "dataset_manifest.json"),
}

STAGE_REQUIRES: Mapping[str, tuple[str, ...]] = {
    "clean": (),
    "annotate": ("clean",),
    "graph": ("clean", "annotate"),
    "refer": ("clean", "annotate", "graph"),
    "generate": ("clean", "annotate", "graph", "refer"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str) -> None:
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")


@dataclass
class StageResult:
    name: str
    skipped: bool
    diagnostics: dict


@dataclass
class RunReport:
    stages: list[StageResult]

    def result(self, name: str) -> StageResult:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(name)


def _policy(config: PipelineConfig) -> RetryPolicy:
    return RetryPolicy(max_attempts=config.thresholds.max_retry_attempts)


def _read_jsonl(path: Path) -> list[dict]:
    return load_jsonl(path.read_text(encoding="utf-8"))


def _check_budget(stage: str, failures: int, config: PipelineConfig) -> None:
    budget = config.thresholds.oracle_failure_budget
    if failures > budget:
        raise StageError(
            stage, f"{failures} oracle failures exceed budget {budget}")


# ---------------------------------------------------------------------------
# stamps

def _oracle_snapshot(config: PipelineConfig, role: str) -> dict:
    spec = config.oracles.get(role) or config.oracles.get("default")
    if spec is None:
        return {"mode": "mock", "rules": [], "script": None}
    return {
        "mode": spec.mode,
        "rules": list(spec.rules),
        "script": file_digest(spec.script) if spec.script else None,
        "base_url": spec.base_url,
        "model": spec.model,
    }


_STAGE_ROLES: Mapping[str, tuple[str, ...]] = {
    "clean": ("labeler",),
    "annotate": ("captioner",),
    "graph": ("label_validator", "relation_judge", "relation_extractor"),
    "refer": ("appearance_grouper", "rewriter"),
    "generate": ("attribute_distractor",),
}


def _source_digests(config: PipelineConfig) -> list[str]:
    digests = [file_digest(config.manifest_path)]
    for scene in load_scenes(config.manifest_path):
        for frame in scene.frames:
            digests.append(file_digest(frame.image_path))
            if frame.depth_path is not None:
                digests.append(file_digest(frame.depth_path))
        for record in scene.objects:
            if record.points_path is not None:
                digests.append(file_digest(record.points_path))
    for path in config.exclusion_files:
        digests.append(file_digest(path))
    return digests


def _stage_digest(stage: str, config: PipelineConfig) -> str:
    snapshot = {
        "stage": stage,
        "seed": config.seed,
        "thresholds": dataclasses.asdict(config.thresholds),
        "generation": dataclasses.asdict(config.generation),
        "oracles": {role: _oracle_snapshot(config, role)
                    for role in _STAGE_ROLES[stage]},
    }
    if stage == "clean":
        inputs = _source_digests(config)
    else:
        inputs = [file_digest(config.output_dir / name)
                  for upstream in STAGE_REQUIRES[stage]
                  for name in STAGE_ARTIFACTS[upstream]]
        if stage == "annotate":
            inputs.extend(_source_digests(config))
    return stable_digest(snapshot, inputs)


# ---------------------------------------------------------------------------
# clean

def _nyu40_labels() -> frozenset[str]:
    from importlib import resources

    text = (resources.files("discurate") / "assets" /
            "nyu40_labels.txt").read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines()
                     if line.strip())


def _project_box2(object_id: str, points: np.ndarray, frame,
                  image_size: tuple[int, int]) -> Box2 | None:
    px, z = project_points(points, frame.pose_matrix(),
                           frame.fx, frame.fy, frame.cx, frame.cy)
    w, h = image_size
    ok = (z > 1e-9) & (px[:, 0] >= 0) & (px[:, 0] <= w - 1) \
        & (px[:, 1] >= 0) & (px[:, 1] <= h - 1)
    if not ok.any():
        return None
    inside = px[ok]
    return Box2(object_id,
                int(np.floor(inside[:, 0].min())),
                int(np.floor(inside[:, 1].min())),
                int(np.ceil(inside[:, 0].max())),
                int(np.ceil(inside[:, 1].max())))


def _overlay_path(config: PipelineConfig, name: str) -> Path:
    return config.cache_dir / "overlays" / name


def _write_overlay(image: GrayImage, boxes: Sequence[Box2],
                   path: Path) -> Path:
    from PIL import Image

    marked = draw_box_overlay(image, list(boxes))
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(marked.pixels, mode="L").save(path, format="PNG")
    return path


def _predict_label(scene: Scene, record, box: Obb7, kept_frames,
                   images: Mapping[str, GrayImage], oracle,
                   policy: RetryPolicy, nyu: frozenset[str],
                   config: PipelineConfig) -> str | None:
    points = visibility_points(record, box)
    overlays = []
    for frame in kept_frames:
        image = images[frame.frame_id]
        box2 = _project_box2(record.object_id, points, frame,
                             (image.width, image.height))
        if box2 is None:
            continue
        name = (f"{scene.scene_id}_{frame.frame_id}_"
                f"{record.object_id}_label.png")
        overlays.append(_write_overlay(image, [box2],
                                       _overlay_path(config, name)))
        if len(overlays) >= 2:
            break
    if not overlays:
        return None
    request = OracleRequest.from_template(OBJECT_LABEL,
                                          image_paths=overlays)
    response = call(oracle, request, policy=policy,
                    validator=lambda t: t.strip().lower() in nyu)
    if not response.ok:
        return None
    return response.text.strip().lower()


def _stage_clean(config: PipelineConfig) -> dict:
    scenes = load_scenes(config.manifest_path)
    excluded = config.excluded_scenes()
    thresholds = config.thresholds
    policy = _policy(config)
    labeler = config.oracle_for("labeler")
    nyu = _nyu40_labels()

    records = []
    diagnostics = {"dropped_scenes": [], "dropped_frames": [],
                   "dropped_objects": [], "oracle_failures": 0}
    for scene in scenes:
        if scene.scene_id in excluded:
            diagnostics["dropped_scenes"].append(
                [scene.scene_id, "excluded"])
            continue
        if scene.is_video:
            indices = sample_frames_uniform(len(scene.frames),
                                            thresholds.frame_target)
        else:
            poses = [f.pose_matrix() for f in scene.frames]
            indices = sample_frames_by_pose(poses, thresholds.frame_target)
        sampled = [scene.frames[i] for i in indices]
        images = {f.frame_id: load_gray_image(f.image_path)
                  for f in sampled}
        overexposed = {
            f.frame_id for f in sampled
            if is_overexposed(images[f.frame_id],
                              thresholds.overexposed_intensity,
                              thresholds.overexposed_fraction)
        }
        if sampled and (len(overexposed) / len(sampled)
                        > thresholds.scene_overexposed_fraction):
            diagnostics["dropped_scenes"].append(
                [scene.scene_id, "overexposed"])
            continue
        kept = [f for f in sampled if f.frame_id not in overexposed]
        diagnostics["dropped_frames"].extend(
            [scene.scene_id, fid] for fid in sorted(overexposed))

        objects_out = []
        for record in scene.objects:
            box = record.box if record.box is not None \
                else fit_obb7(record.points)
            raw_label = record.label
            if raw_label is None:
                raw_label = _predict_label(scene, record, box, kept, images,
                                           labeler, policy, nyu, config)
                if raw_label is None:
                    diagnostics["dropped_objects"].append(
                        [scene.scene_id, record.object_id])
                    diagnostics["oracle_failures"] += 1
                    continue
            objects_out.append({
                "id": record.object_id,
                "label": normalize_label(raw_label),
                "raw_label": raw_label,
                "box": [*box.center, *box.size, box.yaw],
                "attributes": record.attributes.present(),
            })

        frames_out = []
        for frame in kept:
            quarter_turns, degenerate = canonicalize_rotation(
                frame.pose_matrix())
            frames_out.append({
                "id": frame.frame_id,
                "image": str(frame.image_path),
                "depth": str(frame.depth_path) if frame.depth_path else None,
                "depth_unit": frame.depth_unit,
                "pose": [list(row) for row in frame.pose],
                "intrinsics": {"fx": frame.fx, "fy": frame.fy,
                               "cx": frame.cx, "cy": frame.cy},
                "rotation_quarter_turns": quarter_turns,
                "pose_degenerate": degenerate,
            })
        records.append({
            "scene_id": scene.scene_id,
            "source": scene.source,
            "is_video": scene.is_video,
            "frames": frames_out,
            "dropped_frames": sorted(overexposed),
            "objects": objects_out,
        })

    _check_budget("clean", diagnostics["oracle_failures"], config)
    atomic_write_text(config.output_dir / "clean.jsonl",
                      dump_jsonl(records))
    return diagnostics


# ---------------------------------------------------------------------------
# annotate

def _boxes_of(record: Mapping) -> dict[str, Obb7]:
    out = {}
    for obj in record["objects"]:
        values = obj["box"]
        out[obj["id"]] = Obb7(center=tuple(values[:3]),
                              size=tuple(values[3:6]), yaw=values[6])
    return out


def _frame_geometry(frame_record: Mapping):
    intr = frame_record["intrinsics"]
    return (np.asarray(frame_record["pose"], dtype=float),
            intr["fx"], intr["fy"], intr["cx"], intr["cy"])


def _scene_visibility(scene: Scene, record: Mapping,
                      boxes: Mapping[str, Obb7]
                      ) -> tuple[dict, dict]:
    """Per-frame object visibility ratios plus loaded images."""
    ratios: dict[str, dict[str, float]] = {}
    images: dict[str, GrayImage] = {}
    for frame_record in record["frames"]:
        frame_id = frame_record["id"]
        pose, fx, fy, cx, cy = _frame_geometry(frame_record)
        image = load_gray_image(frame_record["image"])
        images[frame_id] = image
        depth = None
        if frame_record.get("depth"):
            depth = load_depth_map(frame_record["depth"],
                                   frame_record["depth_unit"])
        per_frame = {}
        for obj in record["objects"]:
            points = visibility_points(scene.object(obj["id"]),
                                       boxes[obj["id"]])
            per_frame[obj["id"]] = visibility_ratio(
                points, pose, fx, fy, cx, cy,
                (image.width, image.height), depth=depth)
        ratios[frame_id] = per_frame
    return ratios, images


def parse_object_annotation(text: str) -> str | None:
    """Caption from a YES/description response; NO or unparseable → None."""
    verdict = validate_yes_no(text)
    if verdict != "yes":
        return None
    lowered = text.lower()
    index = lowered.find("yes")
    rest = text[index + 3:].lstrip(" \t\n.,:;!-")
    return rest or None


def _stage_annotate(config: PipelineConfig) -> dict:
    scenes = {s.scene_id: s for s in load_scenes(config.manifest_path)}
    clean_records = _read_jsonl(config.output_dir / "clean.jsonl")
    captioner = config.oracle_for("captioner")
    policy = _policy(config)

    out = []
    diagnostics = {"oracle_failures": 0, "uncaptioned_objects": []}
    for record in clean_records:
        scene = scenes[record["scene_id"]]
        boxes = _boxes_of(record)
        ratios, images = _scene_visibility(scene, record, boxes)
        frame_paths = {f["id"]: f["image"] for f in record["frames"]}

        visible_sets = {
            frame_id: {oid for oid, ratio in per_frame.items()
                       if ratio > VISIBLE_RATIO_MIN}
            for frame_id, per_frame in ratios.items()
        }
        cover = max_coverage_frames(visible_sets, SCENE_CAPTION_FRAME_CAP)

        scene_caption = None
        if cover:
            request = OracleRequest.from_template(
                SCENE_ANNOTATION,
                image_paths=[frame_paths[fid] for fid in cover])
            response = call(captioner, request, policy=policy)
            if response.ok:
                scene_caption = response.text.strip()
            else:
                diagnostics["oracle_failures"] += 1

        frame_captions = []
        for frame_record in record["frames"]:
            request = OracleRequest.from_template(
                FRAME_ANNOTATION, image_paths=[frame_record["image"]])
            response = call(captioner, request, policy=policy)
            if response.ok:
                frame_captions.append([frame_record["id"],
                                       response.text.strip()])
            else:
                diagnostics["oracle_failures"] += 1

        object_captions = []
        frames_by_id = {f["id"]: f for f in record["frames"]}
        for obj in record["objects"]:
            observations = []
            for frame_id, per_frame in ratios.items():
                ratio = per_frame[obj["id"]]
                if ratio <= 0:
                    continue
                frame_record = frames_by_id[frame_id]
                pose, fx, fy, cx, cy = _frame_geometry(frame_record)
                center = np.asarray([boxes[obj["id"]].center])
                px, z = project_points(center, pose, fx, fy, cx, cy)
                if z[0] <= 0:
                    continue
                image = images[frame_id]
                observations.append(ViewObservation(
                    frame_id=frame_id, area_ratio=ratio,
                    center_px=(float(px[0][0]), float(px[0][1])),
                    image_size=(image.width, image.height)))
            ranked = rank_object_views(observations)[:TOP_OBJECT_VIEWS]
            if not ranked:
                diagnostics["uncaptioned_objects"].append(
                    [record["scene_id"], obj["id"]])
                continue
            overlays = []
            for obs in ranked:
                frame = scene.frames[
                    [f.frame_id for f in scene.frames].index(obs.frame_id)]
                points = visibility_points(scene.object(obj["id"]),
                                           boxes[obj["id"]])
                box2 = _project_box2(obj["id"], points, frame,
                                     obs.image_size)
                if box2 is None:
                    continue
                name = (f"{record['scene_id']}_{obs.frame_id}_"
                        f"{obj['id']}_view.png")
                overlays.append(_write_overlay(images[obs.frame_id], [box2],
                                               _overlay_path(config, name)))
            if not overlays:
                diagnostics["uncaptioned_objects"].append(
                    [record["scene_id"], obj["id"]])
                continue
            request = OracleRequest.from_template(
                OBJECT_ANNOTATION, {"ObjectLabel": obj["label"]},
                image_paths=overlays)
            response = call(captioner, request, policy=policy,
                            validator=lambda t: validate_yes_no(t)
                            is not None)
            if not response.ok:
                diagnostics["oracle_failures"] += 1
                continue
            caption = parse_object_annotation(response.text)
            if caption:
                object_captions.append([obj["id"], caption])
            else:
                diagnostics["uncaptioned_objects"].append(
                    [record["scene_id"], obj["id"]])

        out.append({
            "scene_id": record["scene_id"],
            "scene_caption": scene_caption,
            "frame_captions": frame_captions,
            "object_captions": object_captions,
            "visibility": ratios,
        })

    _check_budget("annotate", diagnostics["oracle_failures"], config)
    atomic_write_text(config.output_dir / "annotate.jsonl",
                      dump_jsonl(out))
    return diagnostics


# ---------------------------------------------------------------------------
# graph

def _stage_graph(config: PipelineConfig) -> dict:
    scenes = {s.scene_id: s for s in load_scenes(config.manifest_path)}
    clean_records = _read_jsonl(config.output_dir / "clean.jsonl")
    annotate_records = {r["scene_id"]: r
                        for r in _read_jsonl(config.output_dir
                                             / "annotate.jsonl")}
    thresholds = config.thresholds
    policy = _policy(config)

    all_labels = sorted({obj["label"] for record in clean_records
                         for obj in record["objects"]})
    label_graph = cached_label_graph(
        all_labels, config.oracle_for("label_validator"),
        config.cache_dir, policy=policy,
        max_in_flight=thresholds.max_in_flight)
    atomic_write_text(config.output_dir / "label_graph.tsv",
                      edges_to_tsv(label_graph.edges))

    judge = config.oracle_for("relation_judge")
    extractor = config.oracle_for("relation_extractor")
    triples_out = []
    diagnostics = {"correction_flags": [], "oracle_failures": 0}
    for record in clean_records:
        scene = scenes[record["scene_id"]]
        boxes = _boxes_of(record)
        labels = {obj["id"]: obj["label"] for obj in record["objects"]}
        initial = build_initial_graph(
            boxes,
            support_gap_min=thresholds.support_gap_min,
            support_gap_max=thresholds.support_gap_max,
            contact_distance=thresholds.contact_distance)
        visibility = annotate_records[record["scene_id"]]["visibility"]
        frames_by_id = {f.frame_id: f for f in scene.frames}
        images = {f["id"]: load_gray_image(f["image"])
                  for f in record["frames"]}

        def provider(frame_id: str, a_id: str, b_id: str,
                     _record=record, _scene=scene, _boxes=boxes,
                     _frames=frames_by_id, _images=images):
            frame = _frames[frame_id]
            image = _images[frame_id]
            size = (image.width, image.height)
            boxes2 = []
            for oid in (a_id, b_id):
                points = visibility_points(_scene.object(oid), _boxes[oid])
                box2 = _project_box2(oid, points, frame, size)
                if box2 is not None:
                    boxes2.append(box2)
            name = (f"{_record['scene_id']}_{frame_id}_{a_id}_{b_id}"
                    "_pair.png")
            return [_write_overlay(image, boxes2,
                                   _overlay_path(config, name))]

        corrected, flags = correct_relations(
            initial, labels, visibility, judge, extractor,
            policy=policy, image_provider=provider)
        diagnostics["correction_flags"].extend(
            [record["scene_id"], flag] for flag in flags)
        for triple in graph_to_records(corrected):
            triples_out.append({"scene_id": record["scene_id"], **triple})

    diagnostics["oracle_failures"] = len(diagnostics["correction_flags"])
    _check_budget("graph", diagnostics["oracle_failures"], config)
    atomic_write_text(config.output_dir / "scene_graph.jsonl",
                      dump_jsonl(triples_out))
    return diagnostics


# ---------------------------------------------------------------------------
# refer

def _load_label_graph(config: PipelineConfig,
                      clean_records: Sequence[Mapping]) -> LabelGraph:
    edges = load_edges_tsv(config.output_dir / "label_graph.tsv")
    labels = {obj["label"] for record in clean_records
              for obj in record["objects"]}
    for parent, child in edges:
        labels.update((parent, child))
    return LabelGraph(labels=frozenset(labels), edges=frozenset(edges))


def _required_labels(record: ReferralRecord,
                     labels: Mapping[str, str]) -> list[str]:
    required = [labels[record.object_id]]
    for anchor in record.anchor_ids:
        if anchor in labels:
            required.append(labels[anchor])
    if "relation" in record.provenance:
        for key in record.descriptor_keys:
            if " the " in key:
                required.append(key.rsplit(" the ", 1)[1])
    return required


def _stage_refer(config: PipelineConfig) -> dict:
    clean_records = _read_jsonl(config.output_dir / "clean.jsonl")
    annotate_records = {r["scene_id"]: r
                        for r in _read_jsonl(config.output_dir
                                             / "annotate.jsonl")}
    triple_records = _read_jsonl(config.output_dir / "scene_graph.jsonl")
    label_graph = _load_label_graph(config, clean_records)
    thresholds = config.thresholds
    policy = _policy(config)
    grouper = config.oracle_for("appearance_grouper")
    rewriter = config.oracle_for("rewriter")

    out = []
    diagnostics = {"undescribed": []}
    for record in clean_records:
        scene_id = record["scene_id"]
        boxes = _boxes_of(record)
        labels = {obj["id"]: obj["label"] for obj in record["objects"]}
        attributes = {
            obj["id"]: AppearanceAttributes(**obj["attributes"])
            for obj in record["objects"]
        }
        captions = dict(annotate_records[scene_id]["object_captions"])
        scene_graph = graph_from_records(
            [t for t in triple_records if t["scene_id"] == scene_id])

        label_counts: dict[str, int] = {}
        for label in labels.values():
            label_counts[label] = label_counts.get(label, 0) + 1
        candidate_referrals = {oid: f"the {label}"
                               for oid, label in labels.items()
                               if label_counts[label] == 1}

        for group in group_distractors(labels, label_graph):
            members = list(group.members)
            descriptors = []
            if len(members) > 1:
                descriptors.extend(group_by_appearance(
                    members, attributes, group.group_label, grouper,
                    policy=policy))
                descriptors.extend(group_by_size(
                    {m: boxes[m] for m in members},
                    tau=thresholds.size_buffer_ratio))
                descriptors.extend(group_by_relations(
                    members, boxes, scene_graph, labels,
                    proximity=thresholds.proximity_cluster_m))
            records, undescribed = assemble_referrals(
                group.group_label, members, labels, descriptors,
                captions=captions)
            if undescribed:
                member_boxes = {m: boxes[m] for m in members}
                anchored = anchor_object_descriptors(
                    member_boxes, candidate_referrals, boxes,
                    seed=(config.seed, scene_id, group.group_label),
                    min_distance=thresholds.min_anchor_distance_m)
                anchored += anchor_sight_descriptors(
                    member_boxes, candidate_referrals, boxes,
                    seed=(config.seed, scene_id, group.group_label),
                    min_separation=thresholds.min_sight_separation_m,
                    margin_deg=thresholds.sight_margin_deg)
                kept = [d for d in anchored
                        if d.extension <= set(undescribed)]
                if kept:
                    extra, _ = assemble_referrals(
                        group.group_label, members, labels, kept,
                        captions=captions)
                    records.extend(extra)
                described = {r.object_id for r in records}
                undescribed = [m for m in members if m not in described]
            diagnostics["undescribed"].extend(
                [scene_id, oid] for oid in undescribed)

            for referral in records:
                rewritten = rewrite_referral(
                    referral.description, rewriter,
                    required_labels=_required_labels(referral, labels),
                    policy=policy)
                final = replace(referral, description=rewritten)
                out.append({"scene_id": scene_id,
                            **referral_to_record(final)})

    atomic_write_text(config.output_dir / "referrals.jsonl",
                      dump_jsonl(out))
    return diagnostics


# ---------------------------------------------------------------------------
# generate

def _stage_generate(config: PipelineConfig) -> dict:
    clean_records = _read_jsonl(config.output_dir / "clean.jsonl")
    annotate_records = {r["scene_id"]: r
                        for r in _read_jsonl(config.output_dir
                                             / "annotate.jsonl")}
    referral_records = _read_jsonl(config.output_dir / "referrals.jsonl")
    label_graph = _load_label_graph(config, clean_records)
    distractor = config.oracle_for("attribute_distractor")
    policy = _policy(config)

    samples = []
    diagnostics = {"skipped_scenes": []}
    for record in clean_records:
        scene_id = record["scene_id"]
        split = config.generation.split_of(scene_id)
        if split is None:
            diagnostics["skipped_scenes"].append([scene_id, "no split"])
            continue
        annotation = annotate_records[scene_id]
        referrals = [referral_from_record(r) for r in referral_records
                     if r["scene_id"] == scene_id]
        inputs = SceneInputs(
            scene_id=scene_id,
            boxes=_boxes_of(record),
            labels={obj["id"]: obj["label"]
                    for obj in record["objects"]},
            attributes={
                obj["id"]: AppearanceAttributes(**obj["attributes"])
                for obj in record["objects"]
            },
            referrals=referrals,
            captions=SceneCaptions(
                scene=annotation["scene_caption"],
                frames=tuple((fid, text)
                             for fid, text in annotation["frame_captions"]),
                objects=tuple(
                    (oid, text)
                    for oid, text in annotation["object_captions"]),
            ),
        )
        samples.extend(generate_for_scene(inputs, split, label_graph,
                                          distractor, config.seed,
                                          policy=policy))

    final = balance_and_cap(samples, config.generation)
    diagnostics["total_samples"] = len(final)
    atomic_write_text(config.output_dir / "dataset.jsonl",
                      dump_jsonl([sample_to_record(s) for s in final]))
    manifest = build_manifest(final, config.generation)
    atomic_write_text(config.output_dir / "dataset_manifest.json",
                      json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return diagnostics


_STAGE_FNS: Mapping[str, Callable[[PipelineConfig], dict]] = {
    "clean": _stage_clean,
    "annotate": _stage_annotate,
    "graph": _stage_graph,
    "refer": _stage_refer,
    "generate": _stage_generate,
}


def run(config: PipelineConfig) -> RunReport:
    """Execute the selected stages in order, honoring stage caches."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    config.cache_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(stages=[])
    for stage in STAGES:
        if stage not in config.stages:
            continue
        for upstream in STAGE_REQUIRES[stage]:
            for name in STAGE_ARTIFACTS[upstream]:
                if not (config.output_dir / name).is_file():
                    raise StageError(
                        stage, f"missing upstream artifact {name}")
        try:
            digest = _stage_digest(stage, config)
        except (ManifestError, OSError) as exc:
            raise StageError(stage, str(exc)) from exc
        stamp_path = config.cache_dir / f"{stage}.stamp"
        artifacts = [config.output_dir / name
                     for name in STAGE_ARTIFACTS[stage]]
        if stamp_path.is_file() \
                and stamp_path.read_text(encoding="utf-8").strip() == digest \
                and all(p.is_file() for p in artifacts):
            logger.info("stage %s: cache hit", stage)
            report.stages.append(StageResult(stage, True, {}))
            continue
        logger.info("stage %s: running", stage)
        try:
            diagnostics = _STAGE_FNS[stage](config)
        except StageError:
            raise
        except (ManifestError, OracleError, OSError, ValueError,
                KeyError) as exc:
            raise StageError(stage, str(exc)) from exc
        atomic_write_text(stamp_path, digest + "\n")
        report.stages.append(StageResult(stage, False, diagnostics))
    return report
