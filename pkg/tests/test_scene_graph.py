import random

import pytest

from discurate.geometry import Obb7
from discurate.oracle import MockOracle, OracleError, RetryPolicy, find_view_term
from discurate.scene_graph import (
    DEFAULT_VOCABULARY,
    RelationTriple,
    RelationVocabulary,
    SceneGraph,
    build_initial_graph,
    correct_relations,
    graph_from_records,
    graph_to_records,
    load_scene_graph,
    object_subgraph,
    phrase_to_predicate,
    save_scene_graph,
    select_covisible_frame,
)


def box(cx, cy, cz, length, width, height, yaw=0.0):
    return Obb7(center=(cx, cy, cz), size=(length, width, height), yaw=yaw)


def triples_of(graph):
    return {(t.subject_id, t.predicate, t.object_id) for t in graph.triples}


class TestVocabulary:
    def test_defaults_clean(self):
        for predicate in DEFAULT_VOCABULARY.predicates:
            assert find_view_term(predicate) is None

    def test_view_dependent_predicate_rejected(self):
        with pytest.raises(ValueError):
            RelationVocabulary(predicates=("left of",))

    def test_membership(self):
        assert "on top of" in DEFAULT_VOCABULARY
        assert "left of" not in DEFAULT_VOCABULARY


class TestRelationTriple:
    def test_self_relation_rejected(self):
        with pytest.raises(ValueError):
            RelationTriple("a", "next to", "a")

    def test_unknown_source_rejected(self):
        with pytest.raises(ValueError):
            RelationTriple("a", "next to", "b", source="guessed")


class TestBuildInitialGraph:
    def test_resting_object_gap_zero(self):
        boxes = {
            "table": box(0, 0, 0.4, 2.0, 1.0, 0.8),
            "cup": box(0, 0, 0.9, 0.1, 0.1, 0.2),
        }
        assert triples_of(build_initial_graph(boxes)) == {
            ("cup", "on top of", "table"),
            ("table", "beneath", "cup"),
        }

    def test_wardrobes_five_cm_apart(self):
        boxes = {
            "w1": box(0, 0.0, 1.0, 1.0, 0.6, 2.0),
            "w2": box(0, 0.65, 1.0, 1.0, 0.6, 2.0),
        }
        assert triples_of(build_initial_graph(boxes)) == {
            ("w1", "next to", "w2"),
        }

    def test_distant_boxes_unrelated(self):
        boxes = {
            "a": box(0, 0, 0.5, 1, 1, 1),
            "b": box(2.0, 0, 0.5, 1, 1, 1),
        }
        assert triples_of(build_initial_graph(boxes)) == set()

    def test_gap_window_interior_and_exterior(self):
        bottom = box(0, 0, 0.5, 1, 1, 1)
        inside = {"b": bottom, "t": box(0, 0, 1.54, 1, 1, 1)}
        beyond = {"b": bottom, "t": box(0, 0, 1.56, 1, 1, 1)}
        assert ("t", "on top of", "b") in triples_of(build_initial_graph(inside))
        assert triples_of(build_initial_graph(beyond)) == set()
        sunk = {"b": bottom, "t": box(0, 0, 1.49, 1, 1, 1)}
        assert ("t", "on top of", "b") in triples_of(build_initial_graph(sunk))

    def test_deep_penetration_demoted_to_contact(self):
        boxes = {
            "b": box(0, 0, 0.5, 1, 1, 1),
            "t": box(0, 0, 1.47, 1, 1, 1),
        }
        assert triples_of(build_initial_graph(boxes)) == {
            ("b", "next to", "t"),
        }

    def test_support_requires_footprint_overlap(self):
        boxes = {
            "b": box(0, 0, 0.5, 1, 1, 1),
            "t": box(1.5, 0, 1.02, 1, 1, 1),
        }
        assert triples_of(build_initial_graph(boxes)) == set()

    def test_rotated_footprint_still_supports(self):
        boxes = {
            "b": box(0, 0, 0.5, 2, 2, 1),
            "t": box(0, 0, 1.25, 1.0, 0.5, 0.5, yaw=0.7),
        }
        assert ("t", "on top of", "b") in triples_of(build_initial_graph(boxes))

    def test_contact_requires_z_overlap(self):
        boxes = {
            "low": box(0, 0, 0.25, 1, 1, 0.5),
            "high": box(1.05, 0, 2.0, 1, 1, 0.5),
        }
        assert triples_of(build_initial_graph(boxes)) == set()

    def test_invariants_on_random_scenes(self):
        rng = random.Random(11)
        for _ in range(20):
            boxes = {}
            for i in range(rng.randint(2, 6)):
                boxes[f"o{i}"] = box(
                    rng.uniform(-2, 2), rng.uniform(-2, 2),
                    rng.uniform(0.2, 2.0), rng.uniform(0.2, 1.5),
                    rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5),
                    yaw=rng.uniform(-1.5, 1.5))
            graph = build_initial_graph(boxes)
            triples = triples_of(graph)
            for subject, predicate, obj in triples:
                assert predicate in DEFAULT_VOCABULARY
                assert find_view_term(predicate) is None
                if predicate == "on top of":
                    assert (obj, "beneath", subject) in triples
                if predicate == "beneath":
                    assert (obj, "on top of", subject) in triples
                if predicate == "next to":
                    assert subject < obj
                    assert (obj, "next to", subject) not in triples


class TestSelectCovisibleFrame:
    def test_single_covisible_frame(self):
        vis = {"f0": {"a": 1.0, "b": 1.0}, "f1": {"a": 1.0}}
        assert select_covisible_frame("a", "b", vis) == "f0"

    def test_invisible_object_gives_none(self):
        vis = {"f0": {"a": 1.0}, "f1": {"a": 0.9}}
        assert select_covisible_frame("a", "b", vis) is None

    def test_max_min_rule(self):
        vis = {"f0": {"a": 0.9, "b": 0.1}, "f1": {"a": 0.5, "b": 0.5}}
        assert select_covisible_frame("a", "b", vis) == "f1"

    def test_tie_prefers_smallest_frame_id(self):
        vis = {"f3": {"a": 0.5, "b": 0.5}, "f1": {"a": 0.5, "b": 0.5}}
        assert select_covisible_frame("a", "b", vis) == "f1"


class TestPhraseToPredicate:
    def test_exact_vocabulary_phrase(self):
        assert phrase_to_predicate("inside") == "inside"

    def test_punctuation_and_case(self):
        assert phrase_to_predicate(" Inside. ") == "inside"

    def test_synonyms(self):
        assert phrase_to_predicate("on") == "on top of"
        assert phrase_to_predicate("under") == "beneath"
        assert phrase_to_predicate("beside") == "next to"
        assert phrase_to_predicate("hanging") == "hanging from"

    def test_view_dependent_refused(self):
        assert phrase_to_predicate("to the left of") is None
        assert phrase_to_predicate("at 3 o'clock") is None

    def test_unmatched_refused(self):
        assert phrase_to_predicate("orbiting") is None
        assert phrase_to_predicate("") is None


def make_support_graph():
    return SceneGraph(triples=frozenset({
        RelationTriple("book", "on top of", "shelf"),
        RelationTriple("shelf", "beneath", "book"),
    }))


FULL_VIS = {"f0": {"book": 1.0, "shelf": 1.0, "box": 1.0}}
LABELS = {"book": "book", "shelf": "shelf", "box": "box"}


class TestCorrectRelations:
    def test_always_yes_is_identity(self):
        graph = make_support_graph()
        yes = MockOracle(fallback=lambda r: "Yes")
        corrected, flags = correct_relations(graph, LABELS, FULL_VIS, yes, yes)
        assert corrected.triples == graph.triples
        assert flags == []

    def test_no_with_redescription_remaps_predicate(self):
        graph = SceneGraph(triples=frozenset({
            RelationTriple("book", "on top of", "box"),
            RelationTriple("box", "beneath", "book"),
        }))

        def judge(request):
            return "No. The book is inside the box."

        def extract(request):
            bindings = dict(request.bindings)
            assert "The book is inside the box." in bindings[
                "the corrected description of object relations"]
            return "inside"

        corrected, flags = correct_relations(
            graph, LABELS, FULL_VIS,
            MockOracle(fallback=judge), MockOracle(fallback=extract))
        assert triples_of(corrected) == {("book", "inside", "box")}
        assert next(iter(corrected.triples)).source == "corrected"
        assert flags == []

    def test_view_dependent_extraction_drops_triple(self):
        graph = make_support_graph()
        corrected, _ = correct_relations(
            graph, LABELS, FULL_VIS,
            MockOracle(fallback=lambda r: "No, it is to the left."),
            MockOracle(fallback=lambda r: "to the left of"))
        assert corrected.triples == frozenset()

    def test_no_without_description_drops_triple(self):
        graph = make_support_graph()
        corrected, flags = correct_relations(
            graph, LABELS, FULL_VIS,
            MockOracle(fallback=lambda r: "No."),
            MockOracle(fallback=lambda r: "unused"))
        assert corrected.triples == frozenset()
        assert flags == []

    def test_judgment_failure_keeps_and_flags(self):
        class Down:
            def complete(self, request):
                raise OracleError("offline")

        graph = make_support_graph()
        corrected, flags = correct_relations(
            graph, LABELS, FULL_VIS, Down(), Down(),
            policy=RetryPolicy(max_attempts=2))
        assert corrected.triples == graph.triples
        assert len(flags) == 1 and "offline" in flags[0]

    def test_no_covisible_frame_skips_oracle(self):
        class Exploding:
            def complete(self, request):
                raise AssertionError("should not be called")

        graph = make_support_graph()
        corrected, flags = correct_relations(
            graph, LABELS, {"f0": {"book": 1.0}}, Exploding(), Exploding())
        assert corrected.triples == graph.triples
        assert flags == []

    def test_inverse_pair_judged_once(self):
        calls = []

        def judge(request):
            calls.append(dict(request.bindings))
            return "Yes"

        graph = make_support_graph()
        correct_relations(graph, LABELS, FULL_VIS,
                          MockOracle(fallback=judge),
                          MockOracle(fallback=lambda r: "unused"))
        assert len(calls) == 1
        assert calls[0]["Relation"] == "on top of"

    def test_images_attached_from_provider(self, tmp_path):
        img = tmp_path / "f0.png"
        img.write_bytes(b"fakepng")
        seen = []

        def judge(request):
            seen.append(request.image_paths)
            return "Yes"

        graph = make_support_graph()
        correct_relations(
            graph, LABELS, FULL_VIS,
            MockOracle(fallback=judge), MockOracle(fallback=lambda r: "x"),
            image_provider=lambda frame, s, o: [img])
        assert seen == [(str(img),)] or seen == [(img,)]


class TestObjectSubgraph:
    GRAPH = SceneGraph(triples=frozenset({
        RelationTriple("cup", "on top of", "table"),
        RelationTriple("table", "beneath", "cup"),
        RelationTriple("chair", "next to", "table"),
        RelationTriple("poster", "attached to", "wall"),
    }))

    def test_empty_graph(self):
        assert object_subgraph(SceneGraph(frozenset()), "x") == set()

    def test_inverse_orientation(self):
        assert object_subgraph(self.GRAPH, "cup") == {("on top of", "table")}
        assert object_subgraph(self.GRAPH, "table") == {
            ("beneath", "cup"), ("next to", "chair")}

    def test_symmetric_seen_from_both_sides(self):
        assert ("next to", "table") in object_subgraph(self.GRAPH, "chair")

    def test_unoriented_object_side_excluded(self):
        assert object_subgraph(self.GRAPH, "wall") == set()


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        graph = SceneGraph(triples=frozenset({
            RelationTriple("a", "next to", "b"),
            RelationTriple("c", "inside", "d", source="corrected"),
        }))
        path = tmp_path / "graph.jsonl"
        save_scene_graph(graph, path)
        assert load_scene_graph(path) == graph

    def test_records_sorted_and_flat(self):
        graph = SceneGraph(triples=frozenset({
            RelationTriple("b", "next to", "c"),
            RelationTriple("a", "on top of", "b"),
        }))
        records = graph_to_records(graph)
        assert records == [
            {"subject": "a", "predicate": "on top of", "object": "b",
             "source": "rule"},
            {"subject": "b", "predicate": "next to", "object": "c",
             "source": "rule"},
        ]
        assert graph_from_records(records) == graph
