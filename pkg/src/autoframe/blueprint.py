"""Compile module manifests into the abstract connection blueprint and bind
it to concrete endpoints.

Matching rule: every consumer input port selects the unique producer output
of the same topic type among the *other* modules, or the producer named by
the port's ``source`` qualifier.  Zero producers for a required input,
more than one candidate, or a qualifier naming an absent module are
compile errors; optional inputs simply stay unbound when nothing produces
their topic.  Fan-out from one producer port is unrestricted, fan-in to a
consumer port is forbidden by construction (one edge per input port).

Everything is deterministic: modules are processed in lexicographic name
order and ports in declared order, so permuting the input manifest list
cannot change the result.  Extension is incremental: existing edges are
never rebound, only unbound inputs participate in the new match.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .frame import ModuleManifest, PortDecl
from .wire import TopicType


class BlueprintError(ValueError):
    """Compile error; ``kind`` is stable for programmatic handling."""

    def __init__(self, kind: str, message: str, module: str = "", port: str = "",
                 candidates: Sequence[str] = ()):
        self.kind = kind
        self.module = module
        self.port = port
        self.candidates = tuple(candidates)
        super().__init__(message)


@dataclass(frozen=True, order=True)
class Edge:
    producer: str
    producer_port: str
    consumer: str
    consumer_port: str
    topic: TopicType


@dataclass(frozen=True)
class ConnectionBlueprint:
    manifests: tuple[ModuleManifest, ...]  # sorted by module name
    edges: tuple[Edge, ...]

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.manifests)

    def manifest(self, name: str) -> ModuleManifest:
        for m in self.manifests:
            if m.name == name:
                return m
        raise KeyError(name)

    def inbound(self, module: str) -> list[Edge]:
        return [e for e in self.edges if e.consumer == module]

    def outbound(self, module: str) -> list[Edge]:
        return [e for e in self.edges if e.producer == module]


def _check_unique_names(manifests: Iterable[ModuleManifest]):
    seen = set()
    for m in manifests:
        if m.name in seen:
            raise BlueprintError("name-collision",
                                 f"duplicate module name {m.name!r}", module=m.name)
        seen.add(m.name)


def _producers_of(manifests: Sequence[ModuleManifest], topic: TopicType,
                  exclude: str) -> list[tuple[str, str]]:
    found = []
    for m in manifests:
        if m.name == exclude:
            continue
        for out in m.outputs:
            if out.topic == topic:
                found.append((m.name, out.name))
    return found


def _match_input(consumer: ModuleManifest, decl: PortDecl,
                 producers_pool: Sequence[ModuleManifest],
                 known_names: set[str]) -> Optional[Edge]:
    """Resolve one input port against a pool of candidate producers."""
    if decl.source is not None and decl.source not in known_names:
        raise BlueprintError(
            "unknown-qualifier",
            f"{consumer.name}.{decl.name}: source qualifier names absent module "
            f"{decl.source!r}",
            module=consumer.name, port=decl.name)
    candidates = _producers_of(producers_pool, decl.topic, exclude=consumer.name)
    if decl.source is not None:
        candidates = [c for c in candidates if c[0] == decl.source]
    if len(candidates) > 1:
        names = [f"{m}.{p}" for m, p in candidates]
        raise BlueprintError(
            "ambiguous-producers",
            f"{consumer.name}.{decl.name}: topic {decl.topic.value} has several "
            f"producers: {', '.join(names)}",
            module=consumer.name, port=decl.name, candidates=names)
    if not candidates:
        if decl.required:
            raise BlueprintError(
                "unmet-input",
                f"{consumer.name}.{decl.name}: no producer for required topic "
                f"{decl.topic.value}",
                module=consumer.name, port=decl.name)
        return None
    producer, producer_port = candidates[0]
    return Edge(producer, producer_port, consumer.name, decl.name, decl.topic)


def build_blueprint(manifests: Iterable[ModuleManifest]) -> ConnectionBlueprint:
    ordered = tuple(sorted(manifests, key=lambda m: m.name))
    _check_unique_names(ordered)
    names = {m.name for m in ordered}
    edges: list[Edge] = []
    for consumer in ordered:
        for decl in consumer.inputs:
            edge = _match_input(consumer, decl, ordered, names)
            if edge is not None:
                edges.append(edge)
    return ConnectionBlueprint(ordered, tuple(sorted(edges)))


def extend_blueprint(
    current: ConnectionBlueprint, new_manifests: Iterable[ModuleManifest],
) -> tuple[ConnectionBlueprint, tuple[Edge, ...]]:
    """Integrate new modules; existing edges are preserved verbatim.

    New inputs match against the whole module set; existing modules'
    still-unbound optional inputs match against the new producers only.
    Returns the extended blueprint and the edge delta.
    """
    new_ordered = tuple(sorted(new_manifests, key=lambda m: m.name))
    _check_unique_names(new_ordered)
    current_names = set(current.nodes)
    for m in new_ordered:
        if m.name in current_names:
            raise BlueprintError("name-collision",
                                 f"module {m.name!r} already deployed", module=m.name)
    all_manifests = tuple(sorted(current.manifests + new_ordered, key=lambda m: m.name))
    all_names = {m.name for m in all_manifests}

    delta: list[Edge] = []
    for consumer in new_ordered:
        for decl in consumer.inputs:
            edge = _match_input(consumer, decl, all_manifests, all_names)
            if edge is not None:
                delta.append(edge)
    bound_ports = {(e.consumer, e.consumer_port) for e in current.edges}
    for consumer in current.manifests:
        for decl in consumer.inputs:
            if (consumer.name, decl.name) in bound_ports:
                continue
            # Unbound survivors may only bind to the newly added producers.
            edge = _match_input(consumer, decl, new_ordered, all_names)
            if edge is not None:
                delta.append(edge)

    delta_sorted = tuple(sorted(delta))
    extended = ConnectionBlueprint(all_manifests,
                                   tuple(sorted(current.edges + delta_sorted)))
    return extended, delta_sorted


@dataclass(frozen=True)
class BoundBlueprint:
    blueprint: ConnectionBlueprint
    host: str
    output_ports: dict  # (module, port) -> tcp port
    edge_streams: dict  # Edge -> stream_id
    reserved: frozenset[int]
    next_port: int
    next_stream: int

    def edge_binding(self, edge: Edge) -> tuple[str, int, int]:
        """(host, tcp_port, stream_id) of an edge; consumers connect here."""
        return (self.host, self.output_ports[(edge.producer, edge.producer_port)],
                self.edge_streams[edge])

    def port_of(self, module: str, port: str) -> int:
        return self.output_ports[(module, port)]


def _allocate(start: int, used: set[int], reserved: frozenset[int]) -> int:
    port = start
    while port in used or port in reserved:
        port += 1
    if port > 65535:
        raise BlueprintError("port-exhausted", "ran out of TCP ports to assign")
    return port


def bind_blueprint(bp: ConnectionBlueprint, host: str = "127.0.0.1",
                   port_base: int = 42000) -> BoundBlueprint:
    """Assign concrete endpoints: one listening port per declared producer
    output (node order, declared port order) and one stream id per edge.

    Ports named in any manifest's ``external_ports`` are never assigned.
    Deterministic for a given blueprint.
    """
    reserved = frozenset(p for m in bp.manifests for p in m.external_ports)
    output_ports: dict = {}
    used: set[int] = set()
    cursor = port_base
    for m in bp.manifests:  # already name-sorted
        for out in m.outputs:
            port = _allocate(cursor, used, reserved)
            output_ports[(m.name, out.name)] = port
            used.add(port)
            cursor = port + 1
    edge_streams = {edge: i + 1 for i, edge in enumerate(sorted(bp.edges))}
    return BoundBlueprint(
        blueprint=bp, host=host, output_ports=output_ports,
        edge_streams=edge_streams, reserved=reserved, next_port=cursor,
        next_stream=len(bp.edges) + 1)


def bind_extension(bound: BoundBlueprint, extended: ConnectionBlueprint,
                   delta: Sequence[Edge]) -> BoundBlueprint:
    """Bind an extended blueprint preserving every existing assignment."""
    reserved = bound.reserved | frozenset(
        p for m in extended.manifests for p in m.external_ports)
    output_ports = dict(bound.output_ports)
    used = set(output_ports.values())
    cursor = bound.next_port
    known = {name for name, _ in output_ports} | {
        m.name for m in bound.blueprint.manifests}
    for m in extended.manifests:
        if m.name in known:
            continue
        for out in m.outputs:
            port = _allocate(cursor, used, reserved)
            output_ports[(m.name, out.name)] = port
            used.add(port)
            cursor = port + 1
    edge_streams = dict(bound.edge_streams)
    stream = bound.next_stream
    for edge in sorted(delta):
        edge_streams[edge] = stream
        stream += 1
    return BoundBlueprint(
        blueprint=extended, host=bound.host, output_ports=output_ports,
        edge_streams=edge_streams, reserved=reserved, next_port=cursor,
        next_stream=stream)


def to_dot(bp: ConnectionBlueprint) -> str:
    lines = ["digraph blueprint {", "  rankdir=LR;"]
    for name in bp.nodes:
        lines.append(f'  "{name}";')
    for e in bp.edges:
        lines.append(f'  "{e.producer}" -> "{e.consumer}" '
                     f'[label="{e.topic.value}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def blueprint_doc(bp: ConnectionBlueprint,
                  bound: Optional[BoundBlueprint] = None) -> dict:
    doc = {
        "modules": list(bp.nodes),
        "edges": [
            {
                "producer": e.producer, "producer_port": e.producer_port,
                "consumer": e.consumer, "consumer_port": e.consumer_port,
                "topic": e.topic.value,
                **({"host": bound.host,
                    "tcp_port": bound.port_of(e.producer, e.producer_port),
                    "stream_id": bound.edge_streams[e]} if bound else {}),
            }
            for e in bp.edges
        ],
    }
    if bound:
        doc["output_ports"] = [
            {"module": m, "port": p, "tcp_port": t}
            for (m, p), t in sorted(bound.output_ports.items())]
    return doc


def blueprint_json(bp: ConnectionBlueprint,
                   bound: Optional[BoundBlueprint] = None) -> str:
    return json.dumps(blueprint_doc(bp, bound), indent=2) + "\n"
