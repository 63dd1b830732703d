"""Directed label-subsumption graph and category-based distractor grouping.

Edges point from hypernym to hyponym: an edge ``u -> v`` records that ``v``
names a subtype of ``u`` ("office chair" under "chair").  Candidate pairs are
shortlisted by shared tokens, confirmed YES/NO by a language oracle, and
cycles introduced by noisy answers are merged into a single canonical label.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .oracle import (
    DEFAULT_MAX_IN_FLIGHT,
    Oracle,
    OracleRequest,
    RetryPolicy,
    call,
    call_many,
    validate_yes_no,
)
from .prompts import LABEL_SUBCLASS
from .util import atomic_write_text, stable_digest, tokenize

logger = logging.getLogger(__name__)

# Words kept verbatim: either invariant plurals or singulars that end in "s".
PLURAL_EXCEPTIONS = frozenset({
    "glasses", "scissors", "clothes", "blinds", "pants", "shorts", "jeans",
    "stairs", "tongs", "pliers", "bus", "gas", "lens", "iris",
})


def singularize(word: str) -> str:
    """Reduce a plural noun to singular via a fixed suffix table."""
    if word in PLURAL_EXCEPTIONS:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ives"):
        return word[:-3] + "fe"
    if word.endswith("ves"):
        return word[:-3] + "f"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("ches", "shes", "xes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss") and len(word) > 3:
        return word[:-1]
    return word


def normalize_label(raw: str) -> str:
    """Lowercase, collapse whitespace, singularize the trailing noun."""
    parts = raw.lower().split()
    if not parts:
        raise ValueError(f"label empty after normalization: {raw!r}")
    parts[-1] = singularize(parts[-1])
    return " ".join(parts)


def shortlist_candidates(labels: Iterable[str]) -> list[tuple[str, str]]:
    """Ordered (hypernym, hyponym) candidates whose token sets intersect.

    Both directions are emitted; the oracle decides orientation.
    """
    unique = sorted(set(labels))
    token_sets = {label: set(tokenize(label)) for label in unique}
    pairs = []
    for u in unique:
        for v in unique:
            if u != v and token_sets[u] & token_sets[v]:
                pairs.append((u, v))
    return pairs


def _subclass_request(hypernym: str, hyponym: str) -> OracleRequest:
    return OracleRequest.from_template(
        LABEL_SUBCLASS, {"Label1": hyponym, "Label2": hypernym})


def _wellformed(text: str) -> bool:
    return validate_yes_no(text) is not None


def validate_edge(u: str, v: str, oracle: Oracle, *,
                  policy: RetryPolicy | None = None) -> bool:
    """Ask the oracle whether v is a subclass of u; malformed runs are skipped."""
    response = call(oracle, _subclass_request(u, v),
                    validator=_wellformed, policy=policy)
    if not response.ok:
        logger.warning("subclass check %r -> %r skipped: %s", u, v,
                       response.error)
        return False
    return validate_yes_no(response.text) == "yes"


def validate_edges(labels: Iterable[str], oracle: Oracle, *,
                   policy: RetryPolicy | None = None,
                   max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
                   ) -> set[tuple[str, str]]:
    """Confirm every shortlisted pair; returns the raw validated edge set."""
    pairs = shortlist_candidates(labels)
    requests = [_subclass_request(u, v) for u, v in pairs]
    responses = call_many(oracle, requests, validator=_wellformed,
                          policy=policy, max_in_flight=max_in_flight)
    edges = set()
    for (u, v), response in zip(pairs, responses):
        if not response.ok:
            logger.warning("subclass check %r -> %r skipped: %s", u, v,
                           response.error)
        elif validate_yes_no(response.text) == "yes":
            edges.add((u, v))
    return edges


@dataclass
class LabelGraph:
    """Subsumption graph over normalized labels.

    ``edges`` may contain cycles until resolve_cycles has run; ``aliases``
    maps labels merged away during cycle resolution to their canonical
    representative.
    """

    labels: frozenset[str]
    edges: frozenset[tuple[str, str]]
    aliases: dict[str, str] = field(default_factory=dict)

    def resolve(self, label: str) -> str:
        return self.aliases.get(label, label)

    def children(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {}
        for u, v in self.edges:
            adj.setdefault(u, set()).add(v)
        return adj


def _strongly_connected_components(
        nodes: Sequence[str],
        adjacency: Mapping[str, set[str]]) -> list[set[str]]:
    """Iterative Tarjan; returns components as label sets."""
    index: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[set[str]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(sorted(adjacency.get(root, ()))))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = lowlink[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(sorted(adjacency.get(nxt, ())))))
                    advanced = True
                    break
                if nxt in on_stack:
                    lowlink[node] = min(lowlink[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                component = set()
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.add(member)
                    if member == node:
                        break
                components.append(component)
    return components


def resolve_cycles(graph: LabelGraph) -> LabelGraph:
    """Merge strongly connected components into their smallest member."""
    adjacency = graph.children()
    components = _strongly_connected_components(sorted(graph.labels), adjacency)
    canonical: dict[str, str] = {}
    for component in components:
        representative = min(component)
        for member in component:
            canonical[member] = representative
    aliases = {label: rep for label, rep in canonical.items() if label != rep}
    labels = frozenset(canonical[label] for label in graph.labels)
    edges = frozenset(
        (canonical[u], canonical[v])
        for u, v in graph.edges
        if canonical[u] != canonical[v])
    merged = dict(graph.aliases)
    merged.update(aliases)
    return LabelGraph(labels=labels, edges=edges, aliases=merged)


def build_label_graph(labels: Iterable[str], oracle: Oracle, *,
                      policy: RetryPolicy | None = None,
                      max_in_flight: int = DEFAULT_MAX_IN_FLIGHT) -> LabelGraph:
    """Shortlist, validate, and cycle-resolve; labels must be normalized."""
    label_set = frozenset(labels)
    edges = validate_edges(label_set, oracle, policy=policy,
                           max_in_flight=max_in_flight)
    return resolve_cycles(LabelGraph(labels=label_set, edges=frozenset(edges)))


def is_subtype(a: str, b: str, graph: LabelGraph) -> bool:
    """True iff a equals b or b reaches a through hypernym-to-hyponym edges."""
    a = graph.resolve(a)
    b = graph.resolve(b)
    if a == b:
        return True
    adjacency = graph.children()
    frontier = [b]
    seen = {b}
    while frontier:
        node = frontier.pop()
        for child in adjacency.get(node, ()):
            if child == a:
                return True
            if child not in seen:
                seen.add(child)
                frontier.append(child)
    return False


def subtype_labels(label: str, graph: LabelGraph) -> set[str]:
    """The hyponym closure of a label, including the label itself."""
    root = graph.resolve(label)
    adjacency = graph.children()
    closure = {root}
    frontier = [root]
    while frontier:
        node = frontier.pop()
        for child in adjacency.get(node, ()):
            if child not in closure:
                closure.add(child)
                frontier.append(child)
    return closure


@dataclass(frozen=True)
class DistractorGroup:
    group_label: str
    members: tuple[str, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("distractor group needs at least one member")


def group_distractors(objects: Mapping[str, str],
                      graph: LabelGraph) -> list[DistractorGroup]:
    """Cluster objects under maximal scene-present labels.

    ``objects`` maps object id to normalized label.  Seeds are the labels
    present with no scene-present strict hypernym; every object joins the
    group of each seed its label falls under.
    """
    resolved = {oid: graph.resolve(label) for oid, label in objects.items()}
    present = set(resolved.values())
    seeds = {
        label for label in present
        if not any(other != label and is_subtype(label, other, graph)
                   for other in present)
    }
    groups = []
    for seed in sorted(seeds):
        members = tuple(sorted(
            oid for oid, label in resolved.items()
            if is_subtype(label, seed, graph)))
        groups.append(DistractorGroup(group_label=seed, members=members))
    return groups


def edges_to_tsv(edges: Iterable[tuple[str, str]]) -> str:
    lines = [f"{u}\t{v}" for u, v in sorted(set(edges))]
    return "".join(line + "\n" for line in lines)


def save_edges_tsv(edges: Iterable[tuple[str, str]], path: str | Path) -> None:
    atomic_write_text(Path(path), edges_to_tsv(edges))


def load_edges_tsv(path: str | Path) -> set[tuple[str, str]]:
    edges = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        u, _, v = line.partition("\t")
        if not v:
            raise ValueError(f"malformed edge line: {line!r}")
        edges.add((u, v))
    return edges


def cached_label_graph(labels: Iterable[str], oracle: Oracle,
                       cache_dir: str | Path, *,
                       policy: RetryPolicy | None = None,
                       max_in_flight: int = DEFAULT_MAX_IN_FLIGHT) -> LabelGraph:
    """Build the graph, reusing validated edges cached per label set."""
    label_set = frozenset(labels)
    key = stable_digest("label-edges", sorted(label_set))[:16]
    cache_path = Path(cache_dir) / f"label_edges_{key}.tsv"
    if cache_path.exists():
        edges = load_edges_tsv(cache_path)
    else:
        edges = validate_edges(label_set, oracle, policy=policy,
                               max_in_flight=max_in_flight)
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        save_edges_tsv(edges, cache_path)
    return resolve_cycles(LabelGraph(labels=label_set, edges=frozenset(edges)))
