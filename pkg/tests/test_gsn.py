from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import goal, in_context, supported
from safecase.core.errors import StructureError
from safecase.engine.gsn import (
    GoalStructure,
    GsnEdge,
    GsnNode,
    NodeKind,
    Relation,
    edge_allowed,
    solutions,
    topological_order,
    trace_evidence,
    undeveloped_report,
    validate_structure,
)

LEGAL = {
    (NodeKind.GOAL, Relation.SUPPORTED_BY, NodeKind.GOAL),
    (NodeKind.GOAL, Relation.SUPPORTED_BY, NodeKind.STRATEGY),
    (NodeKind.GOAL, Relation.SUPPORTED_BY, NodeKind.SOLUTION),
    (NodeKind.STRATEGY, Relation.SUPPORTED_BY, NodeKind.GOAL),
    (NodeKind.GOAL, Relation.IN_CONTEXT_OF, NodeKind.CONTEXT),
    (NodeKind.GOAL, Relation.IN_CONTEXT_OF, NodeKind.ASSUMPTION),
    (NodeKind.STRATEGY, Relation.IN_CONTEXT_OF, NodeKind.CONTEXT),
    (NodeKind.STRATEGY, Relation.IN_CONTEXT_OF, NodeKind.ASSUMPTION),
}


def solution(node_id: str, evidence: str | None = None) -> GsnNode:
    return GsnNode(node_id, NodeKind.SOLUTION, node_id, evidence_ref=evidence)


def two_goals() -> GoalStructure:
    return GoalStructure.create(
        [goal("G1"), goal("G2", undeveloped=True)],
        [supported("G1", "G2")],
        root="G1",
    )


@given(
    st.sampled_from(list(NodeKind)),
    st.sampled_from(list(Relation)),
    st.sampled_from(list(NodeKind)),
)
def test_edge_typing_table(source, relation, target):
    assert edge_allowed(source, relation, target) == ((source, relation, target) in LEGAL)


def test_shipped_case_is_valid(shipped_case):
    report = validate_structure(shipped_case)
    assert report.ok, report.to_dict()
    assert len(shipped_case.nodes) == 23
    assert len(shipped_case.edges) == 25
    assert sum(1 for node in shipped_case.nodes if node.kind is NodeKind.GOAL) == 10


def test_minimal_structure_is_valid():
    assert validate_structure(two_goals()).ok


def test_extra_supported_by_edge_keeps_structure_valid(shipped_case):
    extended = shipped_case.with_edge(supported("G2", "G-formal"))
    assert validate_structure(extended).ok


def test_back_edge_reports_cycle():
    gs = two_goals().with_edge(supported("G2", "G1"))
    assert "CYCLE" in validate_structure(gs).codes()


def test_cycle_in_shipped_case_is_detected(shipped_case):
    gs = shipped_case.with_edge(supported("G-formal", "G2"))
    report = validate_structure(gs)
    cycles = [v for v in report.violations if v.code == "CYCLE"]
    assert cycles
    assert "G-formal" in cycles[0].message and "G2" in cycles[0].message


def test_strategy_to_solution_is_illegal():
    gs = GoalStructure.create(
        [goal("G1"), GsnNode("S1", NodeKind.STRATEGY, "s"), solution("Sn1")],
        [supported("G1", "S1"), supported("S1", "Sn1")],
        root="G1",
    )
    assert "ILLEGAL_EDGE" in validate_structure(gs).codes()


def test_context_cannot_support():
    gs = GoalStructure.create(
        [goal("G1"), GsnNode("C1", NodeKind.CONTEXT, "c")],
        [supported("G1", "C1")],
        root="G1",
    )
    assert validate_structure(gs).codes() >= {"ILLEGAL_EDGE"}


def test_unsupported_goal_and_unknown_ids():
    gs = GoalStructure.create([goal("G1")], [supported("G1", "ghost")], root="G1")
    codes = validate_structure(gs).codes()
    assert "UNKNOWN_ID" in codes
    assert "GOAL_UNSUPPORTED" in codes


def test_duplicate_node_and_edge():
    gs = GoalStructure.create(
        [goal("G1"), goal("G2", undeveloped=True), goal("G2", undeveloped=True)],
        [supported("G1", "G2"), supported("G1", "G2")],
        root="G1",
    )
    codes = validate_structure(gs).codes()
    assert {"DUPLICATE_ID", "DUPLICATE_EDGE"} <= codes


def test_root_checks():
    missing = GoalStructure.create([goal("G1", undeveloped=True)], [], root="nope")
    assert "ROOT_MISSING" in validate_structure(missing).codes()
    strategy_root = GoalStructure.create([GsnNode("S", NodeKind.STRATEGY, "s")], [], root="S")
    assert "ROOT_NOT_GOAL" in validate_structure(strategy_root).codes()


def test_unreachable_and_illegal_marks():
    gs = GoalStructure.create(
        [
            goal("G1"),
            goal("G2", undeveloped=True),
            goal("Orphan", undeveloped=True),
            GsnNode("C1", NodeKind.CONTEXT, "c", undeveloped=True),
            GsnNode("G3", NodeKind.GOAL, "g", True, evidence_ref="x.cert"),
        ],
        [supported("G1", "G2"), in_context("G1", "C1"), supported("G1", "G3")],
        root="G1",
    )
    report = validate_structure(gs)
    assert {"UNREACHABLE", "ILLEGAL_UNDEVELOPED", "EVIDENCE_NOT_SOLUTION"} <= report.codes()
    unreachable = [v.ref for v in report.violations if v.code == "UNREACHABLE"]
    assert unreachable == ["Orphan"]


def test_solution_must_be_leaf():
    gs = GoalStructure.create(
        [goal("G1"), solution("Sn1"), goal("G2", undeveloped=True)],
        [supported("G1", "Sn1"), supported("Sn1", "G2")],
        root="G1",
    )
    assert {"SOLUTION_NOT_LEAF", "ILLEGAL_EDGE"} <= validate_structure(gs).codes()


def test_empty_id_is_reported():
    gs = GoalStructure.create([goal("G1", undeveloped=True), goal("")], [], root="G1")
    assert "EMPTY_ID" in validate_structure(gs).codes()


def test_undeveloped_report(shipped_case):
    assert undeveloped_report(shipped_case) == [
        "G-act",
        "G-ctrl",
        "G-sense",
        "S-exposure-continuation",
        "S1-continuation",
    ]


def test_undeveloped_report_needs_valid_structure():
    gs = two_goals().with_edge(supported("G2", "G1"))
    with pytest.raises(StructureError):
        undeveloped_report(gs)


def test_trace_from_root_reaches_formal_proof(shipped_case):
    assert trace_evidence(shipped_case, "G1") == [
        (
            "G1",
            "G2",
            "S1",
            "G3",
            "S-exposure",
            "G-probability",
            "S-reqbreak",
            "G-formal",
            "Formal-proof",
        )
    ]


def test_trace_of_undeveloped_goal_is_empty(shipped_case):
    assert trace_evidence(shipped_case, "G-sense") == []


def test_trace_rejects_unknown_and_non_goal(shipped_case):
    with pytest.raises(StructureError):
        trace_evidence(shipped_case, "nope")
    with pytest.raises(StructureError):
        trace_evidence(shipped_case, "S1")


def test_topological_order_respects_support(shipped_case):
    order = topological_order(shipped_case)
    assert len(order) == len(shipped_case.nodes)
    position = {node_id: index for index, node_id in enumerate(order)}
    for edge in shipped_case.edges:
        if edge.relation is Relation.SUPPORTED_BY:
            assert position[edge.source] < position[edge.target]


def test_solutions(shipped_case):
    assert [node.id for node in solutions(shipped_case)] == ["Formal-proof"]
    assert solutions(shipped_case)[0].evidence_ref == "pedestrian.cert"


def edge_level(report) -> set[tuple[str, str]]:
    return {(v.code, v.ref) for v in report.violations if v.code in ("ILLEGAL_EDGE", "DUPLICATE_EDGE")}


@settings(max_examples=100)
@given(st.data())
def test_adding_edges_never_removes_a_violation(shipped_case, data):
    ids = [node.id for node in shipped_case.nodes]
    edge = st.builds(GsnEdge, st.sampled_from(ids), st.sampled_from(list(Relation)), st.sampled_from(ids))
    gs, before = shipped_case, validate_structure(shipped_case)
    for added in data.draw(st.lists(edge, min_size=1, max_size=6)):
        gs = gs.with_edge(added)
        after = validate_structure(gs)
        assert before.codes() <= after.codes()
        assert edge_level(before) <= edge_level(after)
        before = after
