"""``.case`` files: a line-oriented notation for goal structures.

Grammar::

    file  := (decl | edge)*
    decl  := kind ID STRING attrs?
    kind  := "goal" | "strategy" | "solution" | "context" | "assumption"
    attrs := "{" ("undeveloped" | "evidence" "=" STRING | "root")* "}"
    edge  := ID ("<-" | "<~") ID

``A <- B`` reads "A is supported by B"; ``A <~ C`` reads "A in context of C".
At most one statement per line; ``#`` starts a comment.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

from safecase.core.errors import CaseFileError, StructureError
from safecase.engine.gsn import (
    GoalStructure,
    GsnEdge,
    GsnNode,
    NodeKind,
    Relation,
    validate_structure,
)

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>\#.*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<arrow><-|<~)
  | (?P<id>[A-Za-z][A-Za-z0-9_-]*)
  | (?P<lbrace>\{)
  | (?P<rbrace>\})
  | (?P<equals>=)
    """,
    re.VERBOSE,
)

_KINDS = {kind.value: kind for kind in NodeKind}
_ARROWS = {"<-": Relation.SUPPORTED_BY, "<~": Relation.IN_CONTEXT_OF}
_ESCAPES = {'"': '"', "\\": "\\"}


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    message: str
    expected: str = ""
    code: str = "SYNTAX"

    def __str__(self) -> str:
        text = f"{self.span}: {self.message}"
        if self.expected:
            text += f" (expected {self.expected})"
        return text

    def to_dict(self) -> dict[str, Any]:
        return {
            "line": self.span.line,
            "column": self.span.column,
            "length": self.span.length,
            "code": self.code,
            "message": self.message,
            "expected": self.expected,
        }


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    span: SourceSpan


class _Rejected(Exception):
    def __init__(self, error: ParseError) -> None:
        self.error = error


@dataclass
class _Document:
    nodes: list[GsnNode] = field(default_factory=list)
    edges: list[GsnEdge] = field(default_factory=list)
    node_spans: dict[str, list[SourceSpan]] = field(default_factory=dict)
    edge_spans: dict[str, list[SourceSpan]] = field(default_factory=dict)
    roots: list[tuple[str, SourceSpan]] = field(default_factory=list)
    errors: list[ParseError] = field(default_factory=list)


def parse_casefile(text: str | bytes) -> GoalStructure:
    """Parse and validate a ``.case`` document, raising every diagnostic at once."""
    if isinstance(text, bytes):
        text = _decode(text)
    doc = _Document()
    lines = text.split("\n")
    for number, raw in enumerate(lines, start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        try:
            tokens = _lex(line, number)
        except _Rejected as exc:
            doc.errors.append(exc.error)
            continue
        if tokens:
            _statement(tokens, doc, _line_end(line, number))
    if doc.errors:
        raise CaseFileError(doc.errors)

    if not doc.roots:
        raise CaseFileError(
            [ParseError(SourceSpan(1, 1, 0), "no root goal declared", "a 'root' attribute", "ROOT_MISSING")]
        )
    if len(doc.roots) > 1:
        raise CaseFileError(
            [
                ParseError(span, "multiple root goals declared", "exactly one 'root'", "ROOT_MULTIPLE")
                for _, span in doc.roots[1:]
            ]
        )

    structure = GoalStructure.create(doc.nodes, doc.edges, root=doc.roots[0][0])
    report = validate_structure(structure)
    if not report.ok:
        node_spans = {key: list(spans) for key, spans in doc.node_spans.items()}
        edge_spans = {key: list(spans) for key, spans in doc.edge_spans.items()}
        errors = []
        for violation in report.violations:
            span = _violation_span(violation.code, violation.ref, node_spans, edge_spans)
            errors.append(ParseError(span, violation.message, "", violation.code))
        raise CaseFileError(errors)
    return structure


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        head = data[: exc.start]
        line = head.count(b"\n") + 1
        column = exc.start - (head.rfind(b"\n") + 1) + 1
        raise CaseFileError(
            [ParseError(SourceSpan(line, column, 1), "invalid UTF-8 byte", "", "LEXICAL")]
        ) from exc


def _line_end(line: str, number: int) -> SourceSpan:
    return SourceSpan(number, len(line) + 1, 0)


def _lex(line: str, number: int) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(line):
        match = _TOKEN.match(line, pos)
        if match is None:
            span = SourceSpan(number, pos + 1, 1)
            if line[pos] == '"':
                raise _Rejected(
                    ParseError(
                        SourceSpan(number, pos + 1, len(line) - pos),
                        "unterminated string",
                        "closing '\"'",
                        "LEXICAL",
                    )
                )
            raise _Rejected(ParseError(span, f"unexpected character {line[pos]!r}", "", "LEXICAL"))
        kind = match.lastgroup or ""
        if kind not in ("ws", "comment"):
            text = match.group()
            if kind == "string":
                text = _unescape(text, number, pos)
            tokens.append(_Token(kind, text, SourceSpan(number, pos + 1, match.end() - pos)))
        pos = match.end()
    return tokens


def _unescape(literal: str, number: int, start: int) -> str:
    out: list[str] = []
    body = literal[1:-1]
    i = 0
    while i < len(body):
        char = body[i]
        if char == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise _Rejected(
                    ParseError(
                        SourceSpan(number, start + i + 2, 2),
                        f"unknown escape '\\{nxt}'",
                        "'\\\"' or '\\\\'",
                        "LEXICAL",
                    )
                )
            out.append(_ESCAPES[nxt])
            i += 2
            continue
        out.append(char)
        i += 1
    return "".join(out)


def _statement(tokens: list[_Token], doc: _Document, eol: SourceSpan) -> None:
    first = tokens[0]
    if first.kind != "id":
        doc.errors.append(ParseError(first.span, f"unexpected {first.text!r}", "a declaration or an edge"))
        return
    second = tokens[1] if len(tokens) > 1 else None
    if first.text in _KINDS and second is not None and second.kind == "id":
        _declaration(tokens, doc, eol)
    else:
        _edge(tokens, doc, eol)


def _expect(tokens: list[_Token], index: int, kind: str, expected: str, eol: SourceSpan) -> _Token:
    if index >= len(tokens):
        raise _Rejected(ParseError(eol, "unexpected end of line", expected))
    token = tokens[index]
    if token.kind != kind:
        raise _Rejected(ParseError(token.span, f"unexpected {token.text!r}", expected))
    return token


def _declaration(tokens: list[_Token], doc: _Document, eol: SourceSpan) -> None:
    kind = _KINDS[tokens[0].text]
    ident = tokens[1]
    try:
        text = _expect(tokens, 2, "string", "a quoted description", eol)
        undeveloped = False
        evidence: str | None = None
        root_span: SourceSpan | None = None
        index = 3
        if index < len(tokens):
            _expect(tokens, index, "lbrace", "'{' or end of line", eol)
            index += 1
            while True:
                if index >= len(tokens):
                    raise _Rejected(ParseError(eol, "unexpected end of line", "'}'"))
                token = tokens[index]
                if token.kind == "rbrace":
                    index += 1
                    break
                if token.kind == "id" and token.text == "undeveloped":
                    undeveloped = True
                    index += 1
                elif token.kind == "id" and token.text == "root":
                    root_span = token.span
                    index += 1
                elif token.kind == "id" and token.text == "evidence":
                    _expect(tokens, index + 1, "equals", "'='", eol)
                    value = _expect(tokens, index + 2, "string", "a quoted evidence path", eol)
                    if evidence is not None:
                        raise _Rejected(ParseError(token.span, "evidence given twice", "one evidence"))
                    evidence = value.text
                    index += 3
                else:
                    raise _Rejected(
                        ParseError(
                            token.span, f"unexpected {token.text!r}", "undeveloped, evidence, root or '}'"
                        )
                    )
            if index < len(tokens):
                extra = tokens[index]
                raise _Rejected(ParseError(extra.span, f"unexpected {extra.text!r}", "end of line"))
    except _Rejected as exc:
        doc.errors.append(exc.error)
        return

    doc.nodes.append(GsnNode(ident.text, kind, text.text, undeveloped, evidence))
    doc.node_spans.setdefault(ident.text, []).append(ident.span)
    if root_span is not None:
        doc.roots.append((ident.text, root_span))


def _edge(tokens: list[_Token], doc: _Document, eol: SourceSpan) -> None:
    try:
        source = tokens[0]
        arrow = _expect(tokens, 1, "arrow", "'<-' or '<~'", eol)
        target = _expect(tokens, 2, "id", "an element id", eol)
        if len(tokens) > 3:
            extra = tokens[3]
            raise _Rejected(ParseError(extra.span, f"unexpected {extra.text!r}", "end of line"))
    except _Rejected as exc:
        doc.errors.append(exc.error)
        return
    edge = GsnEdge(source.text, _ARROWS[arrow.text], target.text)
    length = target.span.column + target.span.length - source.span.column
    doc.edges.append(edge)
    span = SourceSpan(source.span.line, source.span.column, length)
    doc.edge_spans.setdefault(edge.label(), []).append(span)


def _violation_span(
    code: str,
    ref: str,
    node_spans: dict[str, list[SourceSpan]],
    edge_spans: dict[str, list[SourceSpan]],
) -> SourceSpan:
    if code in ("DUPLICATE_ID", "DUPLICATE_EDGE"):
        spans = node_spans.get(ref) or edge_spans.get(ref) or []
        if len(spans) > 1:
            return spans.pop(1)
    if ref in edge_spans:
        return edge_spans[ref][0]
    if ref in node_spans:
        return node_spans[ref][0]
    return SourceSpan(1, 1, 0)


def structure_to_dict(gs: GoalStructure) -> dict[str, Any]:
    return {
        "root": gs.root,
        "nodes": [node.to_dict() for node in gs.nodes],
        "edges": [edge.to_dict() for edge in gs.edges],
    }


def render_json(gs: GoalStructure) -> str:
    return json.dumps(structure_to_dict(gs), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def parse_json(text: str) -> GoalStructure:
    try:
        data = json.loads(text)
        nodes = [
            GsnNode(
                id=str(item["id"]),
                kind=NodeKind(item["kind"]),
                text=str(item.get("text", "")),
                undeveloped=bool(item.get("undeveloped", False)),
                evidence_ref=item.get("evidence"),
            )
            for item in data["nodes"]
        ]
        edges = [
            GsnEdge(str(item["source"]), Relation(item["relation"]), str(item["target"]))
            for item in data["edges"]
        ]
        return GoalStructure.create(nodes, edges, root=str(data["root"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise StructureError(f"not a goal structure document: {exc}") from exc


_SHAPES = {
    NodeKind.GOAL: "shape=box",
    NodeKind.STRATEGY: "shape=parallelogram",
    NodeKind.SOLUTION: "shape=circle",
    NodeKind.CONTEXT: 'shape=box, style="rounded"',
    NodeKind.ASSUMPTION: 'shape=box, style="rounded"',
}


def _gvquote(value: str) -> str:
    escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{escaped}"'


def render_dot(gs: GoalStructure) -> str:
    lines = ["digraph gsn {", "  rankdir=TB;", '  node [fontname="Helvetica"];']
    for node in gs.nodes:
        attrs = [_SHAPES[node.kind], f"label={_gvquote(node.id + chr(10) + node.text)}"]
        if node.undeveloped:
            attrs.append("peripheries=2")
        if node.evidence_ref:
            attrs.append(f"tooltip={_gvquote(node.evidence_ref)}")
        lines.append(f"  {_gvquote(node.id)} [{', '.join(attrs)}];")
    for edge in gs.edges:
        style = "arrowhead=normal"
        if edge.relation is Relation.IN_CONTEXT_OF:
            style = "style=dashed, arrowhead=empty"
        lines.append(f"  {_gvquote(edge.source)} -> {_gvquote(edge.target)} [{style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
