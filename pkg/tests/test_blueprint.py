import random
from pathlib import Path

import pytest

from autoframe.blueprint import (
    BlueprintError,
    ConnectionBlueprint,
    Edge,
    bind_blueprint,
    bind_extension,
    blueprint_doc,
    build_blueprint,
    extend_blueprint,
    to_dot,
)
from autoframe.config import fixture_config
from autoframe.frame import ModuleManifest, PortDecl
from autoframe.hal import build_hal
from autoframe.wire import TopicType

MODULES_DIR = Path(__file__).resolve().parent.parent / "modules"

T = TopicType


def mod(name, inputs=(), outputs=(), timeout=500, external=()):  # shorthand
    return ModuleManifest(
        name=name,
        inputs=tuple(PortDecl(t, required=req, source=src)
                     for t, req, src in inputs),
        outputs=tuple(PortDecl(t) for t in outputs),
        timeout_ms=timeout,
        external_ports=tuple(external),
    )


def app_manifests(*names):
    return [ModuleManifest.load(MODULES_DIR / n / "manifest.json") for n in names]


def fixture_stack_manifests(with_display_hal=False):
    hal = [h.manifest() for h in build_hal(fixture_config())]
    if not with_display_hal:
        hal = [m for m in hal if m.name != "hal_display"]
    return hal + app_manifests("lane_det", "planner", "controller")


EXPECTED_FIXTURE_EDGES = {
    ("hal_rgb", "lane_det", T.IMAGE_RGB),
    ("lane_det", "planner", T.LANE_CENTERS),
    ("hal_depth", "planner", T.IMAGE_DEPTH),
    ("planner", "controller", T.WAYPOINTS),
    ("hal_state", "controller", T.VEHICLE_STATE),
    ("controller", "hal_steer", T.STEERING_CMD),
}


class TestBuildBlueprint:
    def test_fixture_stack_has_exactly_six_edges(self):
        bp = build_blueprint(fixture_stack_manifests())
        got = {(e.producer, e.consumer, e.topic) for e in bp.edges}
        assert got == EXPECTED_FIXTURE_EDGES

    def test_display_hal_idle_input_stays_unbound(self):
        bp = build_blueprint(fixture_stack_manifests(with_display_hal=True))
        got = {(e.producer, e.consumer, e.topic) for e in bp.edges}
        assert got == EXPECTED_FIXTURE_EDGES  # still six: display input optional

    def test_empty_manifest_list(self):
        bp = build_blueprint([])
        assert bp.nodes == ()
        assert bp.edges == ()

    def test_ambiguous_producers_lists_both(self):
        mans = [
            mod("cam_l", outputs=(T.IMAGE_RGB,)),
            mod("cam_r", outputs=(T.IMAGE_RGB,)),
            mod("viewer", inputs=((T.IMAGE_RGB, True, None),)),
        ]
        with pytest.raises(BlueprintError) as err:
            build_blueprint(mans)
        assert err.value.kind == "ambiguous-producers"
        assert set(err.value.candidates) == {"cam_l.image_rgb", "cam_r.image_rgb"}

    def test_qualifier_disambiguates(self):
        mans = [
            mod("cam_l", outputs=(T.IMAGE_RGB,)),
            mod("cam_r", outputs=(T.IMAGE_RGB,)),
            mod("viewer", inputs=((T.IMAGE_RGB, True, "cam_r"),)),
        ]
        bp = build_blueprint(mans)
        assert bp.edges[0].producer == "cam_r"

    def test_qualifier_naming_absent_module(self):
        mans = [mod("viewer", inputs=((T.IMAGE_RGB, True, "ghost"),))]
        with pytest.raises(BlueprintError) as err:
            build_blueprint(mans)
        assert err.value.kind == "unknown-qualifier"

    def test_unmet_required_input_names_module_and_port(self):
        mans = [mod("planner2", inputs=((T.LANE_CENTERS, True, None),))]
        with pytest.raises(BlueprintError) as err:
            build_blueprint(mans)
        assert err.value.kind == "unmet-input"
        assert err.value.module == "planner2"
        assert err.value.port == "lane_centers"

    def test_duplicate_module_names_rejected(self):
        with pytest.raises(BlueprintError) as err:
            build_blueprint([mod("a"), mod("a")])
        assert err.value.kind == "name-collision"

    def test_no_self_edges(self):
        loop_mod = mod("echo", inputs=((T.IMAGE_RGB, False, None),),
                       outputs=(T.IMAGE_RGB,))
        bp = build_blueprint([loop_mod])
        assert bp.edges == ()

    def test_permutation_invariance(self):
        mans = fixture_stack_manifests(with_display_hal=True)
        rng = random.Random(1)
        reference = build_blueprint(mans)
        for _ in range(10):
            shuffled = mans[:]
            rng.shuffle(shuffled)
            assert build_blueprint(shuffled) == reference


class TestExtendBlueprint:
    def test_adding_visualizer_yields_three_new_edges(self):
        base = build_blueprint(fixture_stack_manifests(with_display_hal=True))
        viz = app_manifests("visualizer")
        extended, delta = extend_blueprint(base, viz)
        got = {(e.producer, e.consumer, e.topic) for e in delta}
        assert got == {
            ("planner", "visualizer", T.WAYPOINTS),
            ("hal_rgb", "visualizer", T.IMAGE_RGB),
            ("visualizer", "hal_display", T.DISPLAY_FRAME),
        }
        assert set(base.edges) <= set(extended.edges)
        assert len(extended.edges) == len(base.edges) + 3

    def test_add_module_with_no_ports(self):
        base = build_blueprint(fixture_stack_manifests())
        extended, delta = extend_blueprint(base, [mod("idle")])
        assert delta == ()
        assert set(extended.nodes) == set(base.nodes) | {"idle"}

    def test_extend_empty_equals_build(self):
        mans = fixture_stack_manifests()
        extended, _ = extend_blueprint(build_blueprint([]), mans)
        assert extended == build_blueprint(mans)

    def test_name_collision_rejected(self):
        base = build_blueprint(fixture_stack_manifests())
        with pytest.raises(BlueprintError) as err:
            extend_blueprint(base, [mod("planner")])
        assert err.value.kind == "name-collision"


class TestBind:
    def test_fixture_ports_are_consecutive_in_node_order(self):
        bp = build_blueprint(fixture_stack_manifests())
        bound = bind_blueprint(bp, port_base=42000)
        # Declared outputs in lexicographic node order:
        expected = {
            ("controller", "steering_cmd"): 42000,
            ("hal_depth", "image_depth"): 42001,
            ("hal_rgb", "image_rgb"): 42002,
            ("hal_state", "vehicle_state"): 42003,
            ("lane_det", "lane_centers"): 42004,
            ("planner", "waypoints"): 42005,
        }
        assert bound.output_ports == expected

    def test_empty_blueprint_binds_nothing(self):
        bound = bind_blueprint(build_blueprint([]))
        assert bound.output_ports == {}
        assert bound.edge_streams == {}

    def test_external_ports_are_skipped(self):
        mans = fixture_stack_manifests()
        mans = [m for m in mans if m.name != "lane_det"]
        import dataclasses
        lane = ModuleManifest.load(MODULES_DIR / "lane_det" / "manifest.json")
        mans.append(dataclasses.replace(lane, external_ports=(42001,)))
        bound = bind_blueprint(build_blueprint(mans), port_base=42000)
        assert 42001 not in bound.output_ports.values()
        assert bound.output_ports[("hal_depth", "image_depth")] == 42002

    def test_stream_ids_unique_per_consumer(self):
        bp = build_blueprint(fixture_stack_manifests(with_display_hal=True))
        bound = bind_blueprint(bp)
        per_consumer = {}
        for edge, sid in bound.edge_streams.items():
            ids = per_consumer.setdefault(edge.consumer, set())
            assert sid not in ids
            ids.add(sid)

    def test_binding_stable_across_calls(self):
        bp = build_blueprint(fixture_stack_manifests())
        assert bind_blueprint(bp).output_ports == bind_blueprint(bp).output_ports

    def test_extension_binding_preserves_existing(self):
        base_bp = build_blueprint(fixture_stack_manifests(with_display_hal=True))
        bound = bind_blueprint(base_bp, port_base=42000)
        extended, delta = extend_blueprint(base_bp, app_manifests("visualizer"))
        bound2 = bind_extension(bound, extended, delta)
        for key, port in bound.output_ports.items():
            assert bound2.output_ports[key] == port
        for edge, sid in bound.edge_streams.items():
            assert bound2.edge_streams[edge] == sid
        assert ("visualizer", "display_frame") in bound2.output_ports
        new_ids = {bound2.edge_streams[e] for e in delta}
        assert min(new_ids) > max(bound.edge_streams.values())

    def test_every_bound_edge_topic_matches_endpoints(self):
        bp = build_blueprint(fixture_stack_manifests(with_display_hal=True))
        bound = bind_blueprint(bp)
        for edge in bp.edges:
            producer = bp.manifest(edge.producer)
            consumer = bp.manifest(edge.consumer)
            out = next(p for p in producer.outputs if p.name == edge.producer_port)
            inp = next(p for p in consumer.inputs if p.name == edge.consumer_port)
            assert out.topic == inp.topic == edge.topic
            assert (edge.producer, edge.producer_port) in bound.output_ports


class TestRendering:
    def test_dot_contains_all_edges(self):
        bp = build_blueprint(fixture_stack_manifests())
        dot = to_dot(bp)
        assert dot.count("->") == 6
        assert '"hal_rgb" -> "lane_det"' in dot

    def test_doc_shape(self):
        bp = build_blueprint(fixture_stack_manifests())
        bound = bind_blueprint(bp)
        doc = blueprint_doc(bp, bound)
        assert len(doc["edges"]) == 6
        assert all("tcp_port" in e and "stream_id" in e for e in doc["edges"])


# --- randomized equivalence against an exhaustive matcher ----------------

TOPICS = list(TopicType)


def _random_manifests(rng, max_modules=6, max_ports=3):
    mans = []
    for i in range(rng.randint(0, max_modules)):
        inputs = []
        names = [f"m{j}" for j in range(max_modules)]
        for k in range(rng.randint(0, max_ports)):
            source = rng.choice([None, None, None, rng.choice(names)])
            inputs.append(PortDecl(rng.choice(TOPICS), name=f"in{k}",
                                   required=rng.random() < 0.7, source=source))
        outputs = [PortDecl(rng.choice(TOPICS), name=f"out{k}")
                   for k in range(rng.randint(0, max_ports))]
        mans.append(ModuleManifest(name=f"m{i}", inputs=tuple(inputs),
                                   outputs=tuple(outputs), timeout_ms=100))
    return mans


def _oracle_match(manifests):
    """Independent exhaustive matcher following the documented rule."""
    names = sorted(m.name for m in manifests)
    if len(set(names)) != len(names):
        return ("error", "name-collision")
    by_name = {m.name: m for m in manifests}
    edges = set()
    for cname in names:
        consumer = by_name[cname]
        for decl in consumer.inputs:
            if decl.source is not None and decl.source not in by_name:
                return ("error", "unknown-qualifier")
            candidates = []
            for pname in names:
                if pname == cname:
                    continue
                for out in by_name[pname].outputs:
                    ok = out.topic == decl.topic
                    if ok and decl.source is not None and pname != decl.source:
                        ok = False
                    if ok:
                        candidates.append((pname, out.name))
            if len(candidates) > 1:
                return ("error", "ambiguous-producers")
            if len(candidates) == 0:
                if decl.required:
                    return ("error", "unmet-input")
                continue
            p, pp = candidates[0]
            edges.add((p, pp, cname, decl.name, decl.topic))
    return ("ok", edges)


@pytest.mark.parametrize("seed", range(8))
def test_matches_oracle_on_random_sets(seed):
    rng = random.Random(seed)
    for _ in range(40):
        mans = _random_manifests(rng)
        expected = _oracle_match(mans)
        try:
            bp = build_blueprint(mans)
            got = ("ok", {(e.producer, e.producer_port, e.consumer,
                           e.consumer_port, e.topic) for e in bp.edges})
        except BlueprintError as err:
            got = ("error", err.kind)
        assert got == expected, f"mismatch for {mans}"


def test_extension_monotonicity_randomized():
    rng = random.Random(42)
    checked = 0
    while checked < 60:
        base_mans = _random_manifests(rng, max_modules=4)
        extra = _random_manifests(rng, max_modules=3)
        taken = {m.name for m in base_mans}
        extra = [m for m in extra if m.name not in taken]
        # rename to guarantee disjointness
        import dataclasses
        extra = [dataclasses.replace(m, name="x" + m.name) for m in extra]
        try:
            base = build_blueprint(base_mans)
        except BlueprintError:
            continue
        try:
            extended, delta = extend_blueprint(base, extra)
        except BlueprintError:
            continue
        assert set(base.edges) <= set(extended.edges)
        assert set(extended.edges) - set(base.edges) == set(delta)
        for e in delta:
            assert e.producer in set(n.name for n in extended.manifests)
        checked += 1
