"""GSN assurance arguments: pattern, staged instantiation, validation, rendering.

Arguments are immutable values. Instantiation returns a new argument; the
:class:`ArgumentEngine` keeps every emitted version.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import tomli

DATA = Path(__file__).parent / "data"
PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

__all__ = [
    "NodeKind",
    "EdgeKind",
    "Stage",
    "GsnNode",
    "GsnEdge",
    "GsnArgument",
    "GsnViolation",
    "Requirement",
    "MissingDesignEvidence",
    "EvidenceMismatch",
    "UnknownFormat",
    "load_gsn_pattern",
    "instantiate_partial",
    "instantiate_full",
    "validate",
    "render",
    "parse_outline",
    "ArgumentEngine",
    "GENERIC_PROPERTIES",
]

GENERIC_PROPERTIES = tuple(f"P{i}" for i in range(1, 10))


class MissingDesignEvidence(KeyError):
    pass


class EvidenceMismatch(ValueError):
    pass


class UnknownFormat(ValueError):
    pass


class NodeKind(str, enum.Enum):
    GOAL = "Goal"
    STRATEGY = "Strategy"
    SOLUTION = "Solution"
    CONTEXT = "Context"
    ASSUMPTION = "Assumption"
    JUSTIFICATION = "Justification"
    AWAY_GOAL = "AwayGoal"


class EdgeKind(str, enum.Enum):
    SUPPORTED_BY = "SupportedBy"
    IN_CONTEXT_OF = "InContextOf"


class Stage(str, enum.Enum):
    PATTERN = "pattern"
    PARTIAL = "partial"
    FULL = "full"


CONTEXTUAL = {NodeKind.CONTEXT, NodeKind.ASSUMPTION, NodeKind.JUSTIFICATION}
SUPPORTING_PARENTS = {NodeKind.GOAL, NodeKind.STRATEGY}


@dataclass(frozen=True)
class GsnNode:
    kind: NodeKind
    id: str
    text: str
    uninstantiated: bool = False
    undeveloped: bool = False
    evidence_ref: str | None = None
    module: str | None = None
    per_requirement: bool = False

    @property
    def placeholders(self) -> list[str]:
        return PLACEHOLDER.findall(self.text)

    def bind(self, bindings: Mapping[str, str]) -> "GsnNode":
        text = PLACEHOLDER.sub(lambda m: str(bindings.get(m.group(1), m.group(0))), self.text)
        return replace(self, text=text, uninstantiated=bool(PLACEHOLDER.search(text)))


@dataclass(frozen=True)
class GsnEdge:
    kind: EdgeKind
    parent: str
    child: str
    multiplicity: str | None = None
    optional: bool = False


@dataclass(frozen=True)
class GsnArgument:
    nodes: tuple[GsnNode, ...]
    edges: tuple[GsnEdge, ...]
    stage: Stage
    version: str = ""
    timestamp: float | None = None

    def node(self, node_id: str) -> GsnNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def __contains__(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def children(self, node_id: str, kind: EdgeKind | None = None) -> list[str]:
        return [e.child for e in self.edges if e.parent == node_id and (kind is None or e.kind is kind)]

    def roots(self) -> list[str]:
        has_parent = {e.child for e in self.edges}
        return [n.id for n in self.nodes if n.id not in has_parent]

    @property
    def uninstantiated(self) -> list[str]:
        return [n.id for n in self.nodes if n.uninstantiated]

    @property
    def evidence_refs(self) -> dict[str, str]:
        return {n.id: n.evidence_ref for n in self.nodes if n.evidence_ref}

    def structure(self) -> tuple:
        """Order-independent node/edge structure used for round trips and digests."""
        return (
            tuple(sorted((n.kind.value, n.id, n.text, n.uninstantiated, n.undeveloped, n.evidence_ref or "", n.module or "") for n in self.nodes)),
            tuple(sorted((e.kind.value, e.parent, e.child, e.multiplicity or "", e.optional) for e in self.edges)),
        )

    def digest(self) -> str:
        return hashlib.sha256(repr(self.structure()).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Requirement:
    id: str
    text: str
    design_time: bool = False  # assured once by controller verification (failsafe requirements)


# --------------------------------------------------------------------------- pattern


def load_gsn_pattern(path: str | Path | None = None) -> GsnArgument:
    data = tomli.loads(Path(path or DATA / "gsn_pattern.toml").read_text())
    nodes = []
    for d in data["nodes"]:
        n = GsnNode(
            kind=NodeKind(d["kind"]),
            id=d["id"],
            text=d["text"],
            undeveloped=d.get("undeveloped", False),
            module=d.get("module"),
            per_requirement=d.get("per_requirement", False),
        )
        nodes.append(replace(n, uninstantiated=bool(n.placeholders)))
    edges = tuple(
        GsnEdge(EdgeKind(e["kind"]), e["parent"], e["child"], e.get("multiplicity"), e.get("optional", False))
        for e in data["edges"]
    )
    return GsnArgument(tuple(nodes), edges, Stage.PATTERN, version="pattern")


def _expanded_id(node_id: str, rid: str) -> str:
    return rid + node_id[2:] if node_id.startswith("Rx") else f"{node_id}.{rid}"


def instantiate_partial(
    pattern: GsnArgument,
    requirements: Sequence[Requirement],
    design_evidence: Any,
    system: str,
) -> GsnArgument:
    """Expand per-requirement nodes and bind everything known at design time.

    ``design_evidence`` needs ``verdicts`` (property id -> bool) and
    ``digest()``; it must cover P1-P9 and every design-time requirement.
    """
    verdicts: Mapping[str, bool] = design_evidence.verdicts
    for pid in (*GENERIC_PROPERTIES, *(r.id for r in requirements if r.design_time)):
        if pid not in verdicts:
            raise MissingDesignEvidence(pid)
        if not verdicts[pid]:
            raise MissingDesignEvidence(f"{pid} (verdict does not hold)")
    report = design_evidence.digest()
    common = {
        "system": system,
        "reqs": "; ".join(f"{r.id}: {r.text}" for r in requirements),
        "controller_report": report,
    }
    templates = {n.id for n in pattern.nodes if n.per_requirement}
    nodes: list[GsnNode] = []
    for n in pattern.nodes:
        if not n.per_requirement:
            bound = n.bind(common)
            if n.id == "ControllerVerification":
                bound = replace(bound, evidence_ref=report)
            nodes.append(bound)
            continue
        for r in requirements:
            b = {**common, "rid": r.id, "req": r.text}
            if r.design_time and n.kind is NodeKind.SOLUTION:
                b["result"] = f"{r.id} holds in every controller state (model checking report {report})"
            copy = replace(n.bind(b), id=_expanded_id(n.id, r.id), per_requirement=False)
            if r.design_time and n.kind is NodeKind.SOLUTION:
                copy = replace(copy, evidence_ref=report)
            nodes.append(copy)
    edges: list[GsnEdge] = []
    for e in pattern.edges:
        p_t, c_t = e.parent in templates, e.child in templates
        if not (p_t or c_t):
            edges.append(e)
            continue
        for r in requirements:
            edges.append(
                GsnEdge(
                    e.kind,
                    _expanded_id(e.parent, r.id) if p_t else e.parent,
                    _expanded_id(e.child, r.id) if c_t else e.child,
                    None,
                    e.optional,
                )
            )
    return GsnArgument(tuple(nodes), tuple(edges), Stage.PARTIAL, version=f"partial-{report[:8]}")


def instantiate_full(
    partial: GsnArgument,
    decision: Any,
    evidence: Any,
    *,
    config: Any = None,
    results: Mapping[str, tuple[str, str]] | None = None,
    version: str = "",
    timestamp: float | None = None,
) -> GsnArgument:
    """Bind the active configuration and runtime evidence into ``partial``.

    ``results`` maps requirement id -> (result text, evidence digest) for
    every still-open result; when omitted, the rows of ``evidence`` for the
    decision's target are used (one numeric value per property id).
    """
    if partial.stage is not Stage.PARTIAL:
        raise ValueError("instantiate_full expects a partial argument")
    target = config if config is not None else decision.target
    open_results = [n.id[: -len("Result")] for n in partial.nodes if n.id.endswith("Result") and n.uninstantiated]
    if results is None:
        results = _results_from_evidence(decision, evidence, target, open_results)
    missing = [rid for rid in open_results if rid not in results]
    if missing:
        raise EvidenceMismatch(f"no evidence for {', '.join(missing)}")
    bindings = {"config": str(target)}
    nodes = []
    for n in partial.nodes:
        rid = n.id[: -len("Result")] if n.id.endswith("Result") else None
        if rid in results and n.uninstantiated:
            text, ref = results[rid]
            nodes.append(replace(n.bind({**bindings, "result": text}), evidence_ref=ref))
        else:
            nodes.append(n.bind(bindings))
    arg = GsnArgument(tuple(nodes), partial.edges, Stage.FULL, version, timestamp)
    if not version:
        arg = replace(arg, version=f"full-{arg.digest()[:12]}")
    return arg


def _results_from_evidence(decision: Any, evidence: Any, target: Any, rids: Sequence[str]) -> dict[str, tuple[str, str]]:
    row = evidence.entry_for(target) if evidence is not None else None
    if row is None:
        raise EvidenceMismatch(f"evidence has no row for configuration {target}")
    out = {}
    for rid in rids:
        try:
            value = row.value(rid)
        except KeyError:
            raise EvidenceMismatch(f"evidence row for {target} lacks {rid}") from None
        out[rid] = (f"{rid} = {value:.6g} for {target}", row.digest())
    return out


# --------------------------------------------------------------------------- validation


@dataclass(frozen=True)
class GsnViolation:
    node: str
    detail: str

    def __str__(self) -> str:
        return f"{self.node}: {self.detail}"


def validate(arg: GsnArgument) -> list[GsnViolation]:
    out: list[GsnViolation] = []
    ids = [n.id for n in arg.nodes]
    seen = set()
    for i in ids:
        if i in seen:
            out.append(GsnViolation(i, "duplicate node id"))
        seen.add(i)
    kinds = {n.id: n.kind for n in arg.nodes}
    for e in arg.edges:
        if e.parent not in kinds or e.child not in kinds:
            out.append(GsnViolation(e.parent if e.parent not in kinds else e.child, "edge references a missing node"))
            continue
        if e.kind is EdgeKind.SUPPORTED_BY:
            if kinds[e.parent] not in SUPPORTING_PARENTS:
                out.append(GsnViolation(e.parent, f"{kinds[e.parent].value} cannot be supported by {e.child}"))
            if kinds[e.child] in CONTEXTUAL:
                out.append(GsnViolation(e.child, "contextual nodes attach with InContextOf"))
        elif kinds[e.child] not in CONTEXTUAL:
            out.append(GsnViolation(e.child, "InContextOf child must be Context, Assumption or Justification"))
    if _has_cycle(arg):
        out.append(GsnViolation("*", "edge graph has a cycle"))
    for n in arg.nodes:
        if n.placeholders and not n.uninstantiated:
            out.append(GsnViolation(n.id, "unresolved placeholder without uninstantiated flag"))
        if n.undeveloped and n.kind not in SUPPORTING_PARENTS:
            out.append(GsnViolation(n.id, "only goals and strategies can be undeveloped"))
        if n.module is not None and n.module not in kinds:
            out.append(GsnViolation(n.id, f"module {n.module} is missing"))
        if n.evidence_ref is not None and n.kind is not NodeKind.SOLUTION:
            out.append(GsnViolation(n.id, "only solutions carry evidence"))
    if arg.stage is not Stage.PATTERN and any(n.per_requirement for n in arg.nodes):
        out.append(GsnViolation("*", "per-requirement template left unexpanded"))
    if arg.stage is Stage.FULL:
        for n in arg.nodes:
            if n.uninstantiated:
                out.append(GsnViolation(n.id, "uninstantiated in a full argument"))
            if n.kind is NodeKind.SOLUTION and not n.evidence_ref:
                out.append(GsnViolation(n.id, "solution lacks an evidence reference"))
        if "ReqsConfiguration" in arg:
            for nid in _descendants(arg, "ReqsConfiguration"):
                n = arg.node(nid)
                if n.undeveloped:
                    out.append(GsnViolation(nid, "undeveloped goal on a requirement branch"))
    return out


def _descendants(arg: GsnArgument, root: str) -> list[str]:
    out, stack = [], [root]
    while stack:
        nid = stack.pop()
        if nid in out:
            continue
        out.append(nid)
        stack += arg.children(nid)
    return out


def _has_cycle(arg: GsnArgument) -> bool:
    succ: dict[str, list[str]] = {}
    for e in arg.edges:
        succ.setdefault(e.parent, []).append(e.child)
    state: dict[str, int] = {}

    def visit(v: str) -> bool:
        state[v] = 1
        for w in succ.get(v, ()):
            if state.get(w) == 1 or (w not in state and visit(w)):
                return True
        state[v] = 2
        return False

    return any(v not in state and visit(v) for v in [n.id for n in arg.nodes])


# --------------------------------------------------------------------------- rendering

DOT_SHAPES = {
    NodeKind.GOAL: 'shape=box',
    NodeKind.STRATEGY: 'shape=parallelogram',
    NodeKind.SOLUTION: 'shape=circle',
    NodeKind.CONTEXT: 'shape=box, style="rounded"',
    NodeKind.ASSUMPTION: 'shape=ellipse, xlabel="A"',
    NodeKind.JUSTIFICATION: 'shape=ellipse, xlabel="J"',
    NodeKind.AWAY_GOAL: 'shape=tab',
}


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def render(arg: GsnArgument, fmt: str = "dot") -> str:
    if fmt == "dot":
        return _render_dot(arg)
    if fmt in ("text", "text-outline", "outline"):
        return _render_outline(arg)
    raise UnknownFormat(fmt)


def _render_dot(arg: GsnArgument) -> str:
    lines = [f'digraph "{_dot_escape(arg.version or arg.stage.value)}" {{', "  rankdir=TB;", '  node [fontsize=10];']
    for n in arg.nodes:
        label = f"{n.id}\\n{_dot_escape(n.text)}"
        if n.evidence_ref:
            label += f"\\n[evidence {n.evidence_ref}]"
        if n.undeveloped:
            label += "\\n<>"
        attrs = DOT_SHAPES[n.kind]
        if n.uninstantiated:
            attrs += ', fillcolor="gray85", style="filled' + (',rounded"' if n.kind is NodeKind.CONTEXT else '"')
            label += "\\n(uninstantiated)"
        lines.append(f'  "{_dot_escape(n.id)}" [{attrs}, label="{label}"];')
    for e in arg.edges:
        head = "normal" if e.kind is EdgeKind.SUPPORTED_BY else "empty"
        extra = ""
        if e.multiplicity:
            extra += f', taillabel="{_dot_escape(e.multiplicity)}"'
        if e.optional:
            extra += ', style="dashed"'
        lines.append(f'  "{_dot_escape(e.parent)}" -> "{_dot_escape(e.child)}" [arrowhead={head}{extra}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _flags(n: GsnNode | None, e: GsnEdge | None) -> str:
    f = []
    if n is not None:
        if n.uninstantiated:
            f.append("[uninstantiated]")
        if n.undeveloped:
            f.append("[undeveloped]")
        if n.evidence_ref:
            f.append(f"[ref={n.evidence_ref}]")
        if n.module:
            f.append(f"[module={n.module}]")
    if e is not None:
        if e.multiplicity:
            f.append(f"[mult={e.multiplicity}]")
        if e.optional:
            f.append("[opt]")
    return (" " + " ".join(f)) if f else ""


def _render_outline(arg: GsnArgument) -> str:
    lines = [f"# stage: {arg.stage.value}", f"# version: {arg.version}"]
    if arg.timestamp is not None:
        lines.append(f"# timestamp: {arg.timestamp!r}")
    printed: set[str] = set()
    by_parent: dict[str, list[GsnEdge]] = {}
    for e in arg.edges:
        by_parent.setdefault(e.parent, []).append(e)

    def emit(nid: str, depth: int, edge: GsnEdge | None) -> None:
        pad = "  " * depth + ("[ctx] " if edge is not None and edge.kind is EdgeKind.IN_CONTEXT_OF else "")
        if nid in printed:
            lines.append(f"{pad}@{nid}{_flags(None, edge)}")
            return
        printed.add(nid)
        n = arg.node(nid)
        lines.append(f"{pad}{n.kind.value} {n.id}{_flags(n, edge)} :: {n.text}")
        for e in by_parent.get(nid, []):
            emit(e.child, depth + 1, e)

    for r in arg.roots():
        emit(r, 0, None)
    return "\n".join(lines) + "\n"


_LINE = re.compile(r"^(?P<indent> *)(?P<ctx>\[ctx\] )?(?:@(?P<ref>\S+)|(?P<kind>\w+) (?P<id>\S+))(?P<flags>(?: \[[^\]]*\])*)(?: :: (?P<text>.*))?$")


def parse_outline(text: str) -> GsnArgument:
    """Inverse of the text-outline rendering."""
    stage, version, timestamp = Stage.PATTERN, "", None
    nodes: list[GsnNode] = []
    edges: list[GsnEdge] = []
    stack: list[tuple[int, str]] = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if raw.startswith("# "):
            key, _, val = raw[2:].partition(": ")
            if key == "stage":
                stage = Stage(val)
            elif key == "version":
                version = val
            elif key == "timestamp":
                timestamp = float(val)
            continue
        m = _LINE.match(raw)
        if not m:
            raise ValueError(f"bad outline line: {raw!r}")
        depth = len(m["indent"]) // 2
        flags = re.findall(r"\[([^\]]*)\]", m["flags"] or "")
        fd = dict(f.split("=", 1) if "=" in f else (f, True) for f in flags)
        nid = m["ref"] or m["id"]
        if m["ref"] is None:
            nodes.append(
                GsnNode(
                    NodeKind(m["kind"]),
                    nid,
                    m["text"] or "",
                    uninstantiated="uninstantiated" in fd,
                    undeveloped="undeveloped" in fd,
                    evidence_ref=fd.get("ref"),
                    module=fd.get("module"),
                )
            )
        while stack and stack[-1][0] >= depth:
            stack.pop()
        if stack:
            kind = EdgeKind.IN_CONTEXT_OF if m["ctx"] else EdgeKind.SUPPORTED_BY
            edges.append(GsnEdge(kind, stack[-1][1], nid, fd.get("mult"), "opt" in fd))
        stack.append((depth, nid))
    return GsnArgument(tuple(nodes), tuple(edges), stage, version, timestamp)


# --------------------------------------------------------------------------- runtime engine


@dataclass
class ArgumentEngine:
    """Emits a full argument after every Adapt/Failsafe and keeps all versions."""

    app: Any
    partial: GsnArgument
    versions: list[GsnArgument] = field(default_factory=list)

    def emit(self, decision: Any, knowledge: Any, seq: int, timestamp: float) -> GsnArgument:
        target = knowledge.current_config
        batch = decision.evidence
        if decision.kind == "failsafe":
            results = self._failsafe_results(decision, batch)
        else:
            results = self._adapt_results(batch, target)
        version = f"{self.app.name}-{seq:04d}"
        arg = instantiate_full(self.partial, decision, batch, config=target, results=results, version=version, timestamp=timestamp)
        self.versions.append(arg)
        return arg

    def _open_requirements(self) -> list[str]:
        return [n.id[: -len("Result")] for n in self.partial.nodes if n.id.endswith("Result") and n.uninstantiated]

    def _adapt_results(self, batch, target) -> dict[str, tuple[str, str]]:
        row = batch.entry_for(target)
        if row is None:
            raise EvidenceMismatch(f"evidence has no row for configuration {target}")
        out = {}
        for rid in self._open_requirements():
            if rid == "R3":
                cost = self.app.cost(row)
                text = f"cost {cost:.6g} is the minimum over {len(batch.feasible)} feasible configurations"
            else:
                try:
                    r = next(x for x in row.results if x.name == rid)
                except StopIteration:
                    raise EvidenceMismatch(f"evidence row for {target} lacks {rid}") from None
                text = f"{rid} = {r.numeric_value:.6g} ({r.property.bound.value} {r.property.threshold:g}) for {target}"
            out[rid] = (text, row.digest())
        return out

    def _failsafe_results(self, decision, batch) -> dict[str, tuple[str, str]]:
        why = "analysis deadline expired" if decision.reason == "deadline" else "no configuration satisfies R1 and R2"
        digest = batch.digest() if batch is not None else hashlib.sha256(b"no-evidence").hexdigest()[:16]
        return {
            rid: (f"failsafe configuration adopted ({why}); evaluated {0 if batch is None else len(batch.entries)} configurations", digest)
            for rid in self._open_requirements()
        }


def requirements_for(app: Any) -> list[Requirement]:
    text = app.requirement_text()
    return [Requirement(rid, text[rid], design_time=(rid == "R4")) for rid in ("R1", "R2", "R3", "R4")]


def resolve_evidence(arg: GsnArgument, evidence_csv_rows: Iterable[Mapping[str, str]], batch_digest: str | None = None) -> list[str]:
    """Return the evidence refs of ``arg`` that do not resolve.

    A ref resolves to an evidence row with the same digest whose
    configuration is the argument's context, or (failsafe arguments) to the
    digest of the whole batch. Design-time refs are ignored here.
    """
    rows = {r["digest"]: r for r in evidence_csv_rows}
    context = arg.node("ConfigDef").text.removeprefix("Active configuration ") if "ConfigDef" in arg else None
    design_ref = arg.node("ControllerVerification").evidence_ref if "ControllerVerification" in arg else None
    bad = []
    for nid, ref in arg.evidence_refs.items():
        if not re.fullmatch(r"R\d+Result", nid) or ref == design_ref:
            continue
        if ref == batch_digest:
            continue
        row = rows.get(ref)
        if row is None or (context is not None and row.get("config") != context):
            bad.append(nid)
    return bad
