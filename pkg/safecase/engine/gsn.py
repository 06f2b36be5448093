"""GSN goal structures and their structural validation.

A goal structure is a directed acyclic graph of five element kinds linked by
``SupportedBy`` and ``InContextOf`` relationships. All values are immutable;
validation reports problems instead of raising.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from safecase.core.errors import StructureError


class NodeKind(str, Enum):
    GOAL = "goal"
    STRATEGY = "strategy"
    SOLUTION = "solution"
    CONTEXT = "context"
    ASSUMPTION = "assumption"


class Relation(str, Enum):
    SUPPORTED_BY = "SupportedBy"
    IN_CONTEXT_OF = "InContextOf"


_ALLOWED_EDGES: dict[Relation, dict[NodeKind, frozenset[NodeKind]]] = {
    Relation.SUPPORTED_BY: {
        NodeKind.GOAL: frozenset({NodeKind.GOAL, NodeKind.STRATEGY, NodeKind.SOLUTION}),
        NodeKind.STRATEGY: frozenset({NodeKind.GOAL}),
    },
    Relation.IN_CONTEXT_OF: {
        NodeKind.GOAL: frozenset({NodeKind.CONTEXT, NodeKind.ASSUMPTION}),
        NodeKind.STRATEGY: frozenset({NodeKind.CONTEXT, NodeKind.ASSUMPTION}),
    },
}

DEVELOPABLE_KINDS = frozenset({NodeKind.GOAL, NodeKind.STRATEGY})


def edge_allowed(source: NodeKind, relation: Relation, target: NodeKind) -> bool:
    return target in _ALLOWED_EDGES[relation].get(source, frozenset())


@dataclass(frozen=True)
class GsnNode:
    id: str
    kind: NodeKind
    text: str = ""
    undeveloped: bool = False
    evidence_ref: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "text": self.text,
            "undeveloped": self.undeveloped,
            "evidence": self.evidence_ref,
        }


@dataclass(frozen=True)
class GsnEdge:
    source: str
    relation: Relation
    target: str

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.source, self.relation.value, self.target)

    def label(self) -> str:
        return f"{self.source} -{self.relation.value}-> {self.target}"

    def to_dict(self) -> dict[str, Any]:
        return {"source": self.source, "relation": self.relation.value, "target": self.target}


@dataclass(frozen=True)
class GoalStructure:
    """Candidate goal structure; may be invalid until checked."""

    nodes: tuple[GsnNode, ...]
    edges: tuple[GsnEdge, ...]
    root: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.sort_key)))

    @staticmethod
    def create(nodes: Iterable[GsnNode], edges: Iterable[GsnEdge], root: str) -> "GoalStructure":
        return GoalStructure(nodes=tuple(nodes), edges=tuple(edges), root=root)

    def node(self, node_id: str) -> GsnNode | None:
        for node in self.nodes:
            if node.id == node_id:
                return node
        return None

    def children(self, node_id: str, relation: Relation = Relation.SUPPORTED_BY) -> list[str]:
        return sorted({e.target for e in self.edges if e.source == node_id and e.relation == relation})

    def with_edge(self, edge: GsnEdge) -> "GoalStructure":
        return GoalStructure(nodes=self.nodes, edges=self.edges + (edge,), root=self.root)


@dataclass(frozen=True)
class Violation:
    code: str
    ref: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "ref": self.ref, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def validate_structure(gs: GoalStructure) -> ValidationReport:
    found: list[Violation] = []
    kinds: dict[str, NodeKind] = {}

    for node in gs.nodes:
        if not node.id:
            found.append(Violation("EMPTY_ID", "", "node id must not be empty"))
            continue
        if node.id in kinds:
            found.append(Violation("DUPLICATE_ID", node.id, f"node id {node.id!r} declared twice"))
            continue
        kinds[node.id] = node.kind
        if node.undeveloped and node.kind not in DEVELOPABLE_KINDS:
            found.append(
                Violation(
                    "ILLEGAL_UNDEVELOPED",
                    node.id,
                    f"{node.kind.value} {node.id!r} cannot be marked undeveloped",
                )
            )
        if node.evidence_ref is not None and node.kind is not NodeKind.SOLUTION:
            found.append(
                Violation(
                    "EVIDENCE_NOT_SOLUTION",
                    node.id,
                    f"evidence is only meaningful on solutions, not on {node.kind.value} {node.id!r}",
                )
            )

    seen_edges: set[tuple[str, str, str]] = set()
    supported_by: dict[str, list[str]] = defaultdict(list)
    adjacency: dict[str, list[str]] = defaultdict(list)
    for edge in gs.edges:
        ref = edge.label()
        if edge.sort_key in seen_edges:
            found.append(Violation("DUPLICATE_EDGE", ref, "edge declared twice"))
            continue
        seen_edges.add(edge.sort_key)
        missing = [end for end in (edge.source, edge.target) if end not in kinds]
        if missing:
            for end in missing:
                found.append(Violation("UNKNOWN_ID", ref, f"edge references unknown id {end!r}"))
            continue
        source_kind, target_kind = kinds[edge.source], kinds[edge.target]
        if not edge_allowed(source_kind, edge.relation, target_kind):
            found.append(
                Violation(
                    "ILLEGAL_EDGE",
                    ref,
                    f"{source_kind.value} cannot be {edge.relation.value} {target_kind.value}",
                )
            )
        adjacency[edge.source].append(edge.target)
        if edge.relation is Relation.SUPPORTED_BY:
            supported_by[edge.source].append(edge.target)

    root_kind = kinds.get(gs.root)
    if root_kind is None:
        found.append(Violation("ROOT_MISSING", gs.root, "root goal is not declared"))
    elif root_kind is not NodeKind.GOAL:
        found.append(Violation("ROOT_NOT_GOAL", gs.root, f"root is a {root_kind.value}, not a goal"))

    undeveloped = {n.id for n in gs.nodes if n.undeveloped}
    for node_id in sorted(kinds):
        kind = kinds[node_id]
        if kind is NodeKind.GOAL and node_id not in undeveloped and not supported_by[node_id]:
            found.append(
                Violation("GOAL_UNSUPPORTED", node_id, "goal has no support and is not undeveloped")
            )
        if kind is NodeKind.SOLUTION and supported_by[node_id]:
            found.append(Violation("SOLUTION_NOT_LEAF", node_id, "solutions are leaves"))

    for cycle in _supported_by_cycles(sorted(kinds), supported_by):
        found.append(Violation("CYCLE", cycle[0], "SupportedBy cycle: " + " -> ".join(cycle)))

    if root_kind is not None:
        reached = _reachable(gs.root, adjacency)
        for node_id in sorted(kinds):
            if node_id not in reached:
                found.append(Violation("UNREACHABLE", node_id, f"not reachable from root {gs.root!r}"))

    return ValidationReport(violations=tuple(found))


def _reachable(start: str, adjacency: dict[str, list[str]]) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        current = stack.pop()
        for target in adjacency.get(current, ()):
            if target not in seen:
                seen.add(target)
                stack.append(target)
    return seen


def _supported_by_cycles(order: list[str], graph: dict[str, list[str]]) -> list[list[str]]:
    """One closed path per back edge found by a deterministic DFS."""
    white, grey, black = 0, 1, 2
    color = {node_id: white for node_id in order}
    cycles: list[list[str]] = []

    for start in order:
        if color[start] != white:
            continue
        path = [start]
        color[start] = grey
        stack = [iter(sorted(graph.get(start, ())))]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                color[path.pop()] = black
                continue
            state = color.get(nxt, black)
            if state == grey:
                cycles.append(path[path.index(nxt):] + [nxt])
            elif state == white:
                color[nxt] = grey
                path.append(nxt)
                stack.append(iter(sorted(graph.get(nxt, ()))))
    return cycles


def _require_valid(gs: GoalStructure) -> None:
    report = validate_structure(gs)
    if not report.ok:
        first = report.violations[0]
        raise StructureError(
            f"goal structure is invalid ({len(report.violations)} violations, first {first.code}: "
            f"{first.message})"
        )


def undeveloped_report(gs: GoalStructure) -> list[str]:
    _require_valid(gs)
    return sorted(node.id for node in gs.nodes if node.undeveloped)


def trace_evidence(gs: GoalStructure, goal_id: str) -> list[tuple[str, ...]]:
    """Every SupportedBy path from ``goal_id`` down to a Solution."""
    _require_valid(gs)
    start = gs.node(goal_id)
    if start is None:
        raise StructureError(f"unknown id {goal_id!r}")
    if start.kind is not NodeKind.GOAL:
        raise StructureError(f"{goal_id!r} is a {start.kind.value}, not a goal")

    paths: list[tuple[str, ...]] = []

    def walk(node_id: str, trail: tuple[str, ...]) -> None:
        node = gs.node(node_id)
        if node is not None and node.kind is NodeKind.SOLUTION:
            paths.append(trail)
            return
        for child in gs.children(node_id):
            walk(child, trail + (child,))

    walk(goal_id, (goal_id,))
    return paths


def topological_order(gs: GoalStructure) -> list[str]:
    """Kahn's algorithm over SupportedBy; ties broken by id."""
    ids = sorted({node.id for node in gs.nodes})
    indegree = {node_id: 0 for node_id in ids}
    links = {(e.source, e.target) for e in gs.edges if e.relation is Relation.SUPPORTED_BY}
    for _, target in links:
        if target in indegree:
            indegree[target] += 1
    ready = [node_id for node_id, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        current = heapq.heappop(ready)
        order.append(current)
        for child in gs.children(current):
            if child in indegree:
                indegree[child] -= 1
                if indegree[child] == 0:
                    heapq.heappush(ready, child)
    if len(order) != len(ids):
        raise StructureError("SupportedBy relation contains a cycle")
    return order


def solutions(gs: GoalStructure) -> list[GsnNode]:
    return [node for node in gs.nodes if node.kind is NodeKind.SOLUTION]
