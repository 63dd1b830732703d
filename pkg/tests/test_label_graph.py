import random

import pytest

from discurate.label_graph import (
    DistractorGroup,
    LabelGraph,
    build_label_graph,
    cached_label_graph,
    group_distractors,
    is_subtype,
    load_edges_tsv,
    normalize_label,
    resolve_cycles,
    save_edges_tsv,
    shortlist_candidates,
    subtype_labels,
    validate_edge,
    validate_edges,
)
from discurate.oracle import MockOracle, OracleError, RetryPolicy


def suffix_rule(request):
    """YES when label1 extends label2 with a leading modifier."""
    bindings = dict(request.bindings)
    l1, l2 = bindings["Label1"], bindings["Label2"]
    return "YES" if l1.endswith(" " + l2) else "NO"


def table_rule(answers):
    def rule(request):
        bindings = dict(request.bindings)
        return answers.get((bindings["Label2"], bindings["Label1"]), "NO")
    return rule


class TestNormalizeLabel:
    def test_casing_and_plural(self):
        assert normalize_label("Office Chairs") == "office chair"

    def test_short_acronym(self):
        assert normalize_label("TV") == "tv"

    def test_invariant_plural_kept(self):
        assert normalize_label("glasses") == "glasses"

    def test_whitespace_collapsed(self):
        assert normalize_label("  Dining \t Tables ") == "dining table"

    def test_suffix_table(self):
        assert normalize_label("boxes") == "box"
        assert normalize_label("shelves") == "shelf"
        assert normalize_label("dishes") == "dish"
        assert normalize_label("knives") == "knife"
        assert normalize_label("cubbies") == "cubby"
        assert normalize_label("bus") == "bus"

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            normalize_label("   ")


class TestShortlist:
    def test_shared_token_both_directions(self):
        pairs = shortlist_candidates({"chair", "office chair"})
        assert set(pairs) == {("chair", "office chair"),
                              ("office chair", "chair")}

    def test_disjoint_tokens(self):
        assert shortlist_candidates({"table", "lamp"}) == []

    def test_three_table_labels(self):
        labels = {"dining table", "table", "coffee table"}
        pairs = shortlist_candidates(labels)
        expected = {(u, v) for u in labels for v in labels if u != v}
        assert set(pairs) == expected
        assert len(pairs) == 6


class TestValidateEdge:
    def test_yes(self):
        oracle = MockOracle(fallback=lambda r: "YES")
        assert validate_edge("table", "dining table", oracle)

    def test_no(self):
        oracle = MockOracle(fallback=lambda r: "NO")
        assert not validate_edge("lamp", "table", oracle)

    def test_malformed_retries_then_skips(self):
        calls = []

        class Shrug:
            def complete(self, request):
                calls.append(1)
                return "maybe"

        assert not validate_edge("a b", "b", Shrug(),
                                 policy=RetryPolicy(max_attempts=3))
        assert len(calls) == 3

    def test_oracle_error_skips(self):
        class Broken:
            def complete(self, request):
                raise OracleError("down")

        assert not validate_edge("a b", "b", Broken(),
                                 policy=RetryPolicy(max_attempts=2))


class TestResolveCycles:
    def test_two_cycle_merges_to_min(self):
        graph = resolve_cycles(LabelGraph(
            labels=frozenset({"a", "b"}),
            edges=frozenset({("a", "b"), ("b", "a")})))
        assert graph.labels == frozenset({"a"})
        assert graph.edges == frozenset()
        assert graph.aliases == {"b": "a"}

    def test_acyclic_unchanged(self):
        edges = frozenset({("chair", "office chair")})
        graph = resolve_cycles(LabelGraph(
            labels=frozenset({"chair", "office chair"}), edges=edges))
        assert graph.edges == edges
        assert graph.aliases == {}

    def test_three_cycle(self):
        graph = resolve_cycles(LabelGraph(
            labels=frozenset({"a", "b", "c"}),
            edges=frozenset({("a", "b"), ("b", "c"), ("c", "a")})))
        assert graph.labels == frozenset({"a"})

    def test_edges_rewired_through_merge(self):
        graph = resolve_cycles(LabelGraph(
            labels=frozenset({"x", "a", "b", "y"}),
            edges=frozenset({("x", "a"), ("a", "b"), ("b", "a"), ("b", "y")})))
        assert graph.labels == frozenset({"x", "a", "y"})
        assert graph.edges == frozenset({("x", "a"), ("a", "y")})
        assert is_subtype("y", "x", graph)

    def test_alias_queries_still_resolve(self):
        graph = resolve_cycles(LabelGraph(
            labels=frozenset({"couch", "sofa", "sofa bed"}),
            edges=frozenset({("couch", "sofa"), ("sofa", "couch"),
                             ("sofa", "sofa bed")})))
        assert is_subtype("sofa bed", "sofa", graph)
        assert is_subtype("sofa", "couch", graph)
        assert is_subtype("couch", "sofa", graph)


class TestIsSubtype:
    def graph(self):
        return resolve_cycles(LabelGraph(
            labels=frozenset({"furniture", "table", "dining table"}),
            edges=frozenset({("furniture", "table"),
                             ("table", "dining table")})))

    def test_direct_edge(self):
        assert is_subtype("dining table", "table", self.graph())

    def test_reflexive(self):
        assert is_subtype("table", "table", self.graph())

    def test_transitive(self):
        assert is_subtype("dining table", "furniture", self.graph())

    def test_unrelated(self):
        assert not is_subtype("table", "dining table", self.graph())

    def test_subtype_labels_closure(self):
        assert subtype_labels("furniture", self.graph()) == {
            "furniture", "table", "dining table"}


class TestGroupDistractors:
    def test_seed_rule(self):
        graph = LabelGraph(
            labels=frozenset({"chair", "office chair", "table"}),
            edges=frozenset({("chair", "office chair")}))
        objects = {"o1": "chair", "o2": "office chair", "o3": "table"}
        groups = group_distractors(objects, graph)
        assert groups == [
            DistractorGroup("chair", ("o1", "o2")),
            DistractorGroup("table", ("o3",)),
        ]

    def test_unrelated_labels_singletons(self):
        graph = LabelGraph(labels=frozenset({"lamp", "rug"}),
                           edges=frozenset())
        groups = group_distractors({"a": "lamp", "b": "rug"}, graph)
        assert [g.members for g in groups] == [("a",), ("b",)]

    def test_duplicate_label_one_group(self):
        graph = LabelGraph(labels=frozenset({"chair"}), edges=frozenset())
        groups = group_distractors({"a": "chair", "b": "chair"}, graph)
        assert groups == [DistractorGroup("chair", ("a", "b"))]

    def test_every_object_covered_and_members_valid(self):
        rng = random.Random(7)
        base = ["chair", "table", "lamp", "desk", "sofa"]
        labels = set(base)
        edges = set()
        for b in base:
            for prefix in ("small", "folding", "corner"):
                if rng.random() < 0.6:
                    child = f"{prefix} {b}"
                    labels.add(child)
                    edges.add((b, child))
        graph = resolve_cycles(LabelGraph(frozenset(labels),
                                          frozenset(edges)))
        pool = sorted(labels)
        objects = {f"o{i}": rng.choice(pool) for i in range(40)}
        groups = group_distractors(objects, graph)
        covered = set()
        for group in groups:
            for oid in group.members:
                covered.add(oid)
                assert is_subtype(objects[oid], group.group_label, graph)
        assert covered == set(objects)


class TestBuildGraph:
    LABELS = frozenset({"chair", "office chair", "desk chair", "table",
                        "dining table", "lamp"})

    def test_suffix_mock_end_to_end(self):
        graph = build_label_graph(self.LABELS,
                                  MockOracle(fallback=suffix_rule))
        assert graph.edges == frozenset({
            ("chair", "office chair"),
            ("chair", "desk chair"),
            ("table", "dining table"),
        })
        assert graph.labels == self.LABELS

    def test_validated_edges_within_shortlist(self):
        rng = random.Random(3)
        nouns = ["chair", "table", "bed", "desk"]
        labels = set(nouns)
        planted = set()
        for noun in nouns:
            for mod in ("red", "blue", "tall"):
                if rng.random() < 0.5:
                    labels.add(f"{mod} {noun}")
                    planted.add((noun, f"{mod} {noun}"))
        oracle = MockOracle(fallback=table_rule(
            {pair: "YES" for pair in planted}))
        edges = validate_edges(labels, oracle)
        shortlist = set(shortlist_candidates(labels))
        assert edges <= shortlist
        assert edges == planted


class TestSerialization:
    EDGES = {("chair", "office chair"), ("table", "dining table")}

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "graph.tsv"
        save_edges_tsv(self.EDGES, path)
        assert load_edges_tsv(path) == self.EDGES
        text = path.read_text(encoding="utf-8")
        assert text == ("chair\toffice chair\n"
                        "table\tdining table\n")

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("justonefield\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_edges_tsv(path)

    def test_cache_skips_oracle(self, tmp_path):
        labels = {"chair", "office chair"}
        first = MockOracle(fallback=suffix_rule)
        graph1 = cached_label_graph(labels, first, tmp_path)
        assert first.calls > 0

        class Exploding:
            def complete(self, request):
                raise AssertionError("cache miss")

        graph2 = cached_label_graph(labels, Exploding(), tmp_path)
        assert graph1.edges == graph2.edges

    def test_cache_keyed_by_label_set(self, tmp_path):
        cached_label_graph({"chair", "office chair"},
                           MockOracle(fallback=suffix_rule), tmp_path)
        oracle = MockOracle(fallback=suffix_rule)
        cached_label_graph({"table", "dining table"}, oracle, tmp_path)
        assert oracle.calls > 0
