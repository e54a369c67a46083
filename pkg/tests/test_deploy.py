import json
import os
import signal
import time
from pathlib import Path

import pytest

from conftest import free_port, wait_for

from autoframe.config import fixture_config
from autoframe.deploy import (
    Deployment,
    DeploymentError,
    ProcessBackend,
    control_request,
    create_module_config,
    deploy,
    load_module_dir,
    plan_deployment,
    supervise,
)
from autoframe.frame import (
    BoundInput,
    HeartbeatEndpoint,
    ModuleEndpoints,
    ModuleManifest,
    PortDecl,
)
from autoframe.wire import TopicType

MODULES_DIR = Path(__file__).resolve().parent.parent / "modules"
HOST = "127.0.0.1"


def idle_manifest(name, timeout_ms=300, inputs=(), outputs=()):
    return ModuleManifest(
        name=name,
        inputs=tuple(PortDecl(t, required=False) for t in inputs),
        outputs=tuple(PortDecl(t) for t in outputs),
        timeout_ms=timeout_ms,
        entry=("{python}", "-m", "autoframe.apps.idle"),
        config_hook="autoframe.apps.idle:create_config",
    )


class TestCreateModuleConfig:
    def endpoints(self, name="controller", timeout=200):
        return ModuleEndpoints(module=name, timeout_ms=timeout,
                               heartbeat=HeartbeatEndpoint(HOST, 41999, 1))

    def test_controller_staging_contains_vehicle_excerpt(self, tmp_path):
        manifest = ModuleManifest.load(MODULES_DIR / "controller" / "manifest.json")
        cfg = create_module_config(manifest, fixture_config(), tmp_path,
                                   self.endpoints())
        assert cfg.timeout_ms == 200
        staged = json.loads((tmp_path / "config.json").read_text())
        assert staged["params"]["wheelbase"] == 2.84
        assert staged["params"]["max_steering_angle"] == 0.61
        assert (tmp_path / "endpoints.json").exists()

    def test_module_without_config_needs_stages_only_endpoints(self, tmp_path):
        manifest = idle_manifest("idle")
        create_module_config(manifest, fixture_config(), tmp_path,
                             self.endpoints("idle", 300))
        assert sorted(p.name for p in tmp_path.iterdir()) == ["endpoints.json"]

    def test_planner_without_cameras_errors_with_path(self, tmp_path):
        import dataclasses
        manifest = ModuleManifest.load(MODULES_DIR / "planner" / "manifest.json")
        cfg = fixture_config()
        state = cfg.sensor("state")
        no_cams = dataclasses.replace(cfg, sensors=(state,))
        from autoframe.config import ConfigError
        with pytest.raises(ConfigError) as err:
            create_module_config(manifest, no_cams, tmp_path,
                                 self.endpoints("planner"))
        assert err.value.path == "sensors"

    def test_nonempty_data_dir_rejected(self, tmp_path):
        (tmp_path / "junk").write_text("x")
        with pytest.raises(DeploymentError):
            create_module_config(idle_manifest("idle"), fixture_config(),
                                 tmp_path, self.endpoints("idle"))


class TestProcessBackendContract:
    def test_distinct_modules_get_disjoint_roots(self, tmp_path):
        backend = ProcessBackend(tmp_path)
        a = backend.stage("mod_a", 1, None)
        b = backend.stage("mod_b", 1, None)
        assert a.root != b.root
        assert not str(a.root).startswith(str(b.root))
        assert not str(b.root).startswith(str(a.root))
        (a.root / "file").write_text("a")
        assert not (b.root / "file").exists()

    def test_stage_copies_module_source(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        (src / "manifest.json").write_text("{}")
        backend = ProcessBackend(tmp_path / "run")
        box = backend.stage("m", 1, src)
        assert (box.root / "module" / "manifest.json").read_text() == "{}"
        # mutating the copy leaves the source untouched
        (box.root / "module" / "manifest.json").write_text("changed")
        assert (src / "manifest.json").read_text() == "{}"

    def test_spawn_is_alive_stop_cycle(self, tmp_path):
        backend = ProcessBackend(tmp_path)
        box = backend.stage("sleeper", 1, None)
        import sys
        handle = backend.spawn(box, [sys.executable, "-c",
                                     "import time; time.sleep(60)"])
        assert backend.is_alive(handle)
        backend.signal_stop(handle)
        assert not backend.is_alive(handle)
        backend.signal_stop(handle)  # idempotent
        assert not backend.is_alive(handle)

    def test_spawn_failure_raises(self, tmp_path):
        backend = ProcessBackend(tmp_path)
        box = backend.stage("ghost", 1, None)
        with pytest.raises(DeploymentError):
            backend.spawn(box, ["/nonexistent/binary"])

    def test_processes_run_in_own_sandbox_cwd(self, tmp_path):
        backend = ProcessBackend(tmp_path)
        box = backend.stage("cwd_probe", 1, None)
        import sys
        handle = backend.spawn(box, [
            sys.executable, "-c",
            "import os, pathlib; pathlib.Path('cwd.txt').write_text(os.getcwd())"])
        wait_for(lambda: not backend.is_alive(handle))
        assert (box.root / "cwd.txt").read_text() == str(box.root)


def make_plan(tmp_path, modules, port_base=None, include_hal=False):
    port_base = port_base or free_port()
    return plan_deployment(fixture_config(), modules, tmp_path / "deploy",
                           host=HOST, port_base=port_base,
                           include_hal=include_hal)


class TestDeploymentLifecycle:
    def test_empty_plan_runs_immediately(self, tmp_path):
        plan = make_plan(tmp_path, [])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            assert any(e.kind == "running" for e in deployment.event_log)
            status = deployment.status()
            assert status["modules"] == []
        finally:
            deployment.stop()

    def test_seven_modules_seven_sandboxes_and_heartbeats(self, tmp_path):
        # The seven-module fixture stack shape, with idle stand-ins wired
        # to the same topics.
        topo = {
            "hal_rgb": ((), (TopicType.IMAGE_RGB,)),
            "hal_depth": ((), (TopicType.IMAGE_DEPTH,)),
            "hal_state": ((), (TopicType.VEHICLE_STATE,)),
            "hal_steer": ((TopicType.STEERING_CMD,), ()),
            "lane_det": ((TopicType.IMAGE_RGB,), (TopicType.LANE_CENTERS,)),
            "planner": ((TopicType.LANE_CENTERS, TopicType.IMAGE_DEPTH),
                        (TopicType.WAYPOINTS,)),
            "controller": ((TopicType.WAYPOINTS, TopicType.VEHICLE_STATE),
                           (TopicType.STEERING_CMD,)),
        }
        modules = [(idle_manifest(n, inputs=i, outputs=o), None)
                   for n, (i, o) in topo.items()]
        plan = make_plan(tmp_path, modules)
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            assert len(plan.assignments) == 7
            # every module spawned and delivered its first heartbeat
            for name, a in plan.assignments.items():
                assert a.state == "running", f"{name} is {a.state}"
                assert a.last_hb is not None
            ids = {a.sandbox.sandbox_id for a in plan.assignments.values()}
            assert len(ids) == 7
        finally:
            deployment.stop()
        assert all(a.state == "stopped" for a in plan.assignments.values())

    def test_missing_entry_binary_aborts_everything(self, tmp_path):
        good = idle_manifest("good")
        bad = ModuleManifest(name="broken", timeout_ms=300,
                             entry=("/nonexistent/binary",))
        plan = make_plan(tmp_path, [(good, None), (bad, None)])
        with pytest.raises(DeploymentError):
            deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        # nothing left running
        for a in plan.assignments.values():
            assert a.sandbox is None or not ProcessBackend(
                tmp_path / "sandboxes").is_alive(a.sandbox)

    def test_kill_one_module_leaves_others_alive_and_restarts(self, tmp_path):
        modules = [(idle_manifest(n) ,None) for n in ("alpha", "beta", "gamma")]
        plan = make_plan(tmp_path, modules)
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            victim = plan.assignments["beta"]
            others = [plan.assignments["alpha"], plan.assignments["gamma"]]
            original_ids = {a.manifest.name: a.sandbox.sandbox_id
                            for a in others}
            os.kill(victim.sandbox.pid, signal.SIGKILL)
            wait_for(lambda: any(e.kind == "failed" and e.module == "beta"
                                 for e in deployment.event_log), timeout=10.0)
            wait_for(lambda: any(e.kind == "restarted" and e.module == "beta"
                                 for e in deployment.event_log), timeout=10.0)
            wait_for(lambda: victim.state == "running", timeout=10.0)
            backend = deployment.backend
            for a in others:
                assert backend.is_alive(a.sandbox)
                assert a.sandbox.sandbox_id == original_ids[a.manifest.name]
            assert victim.sandbox.sandbox_id != "beta-1"
        finally:
            deployment.stop()

    def test_crash_loop_exhausts_restart_budget(self, tmp_path):
        crasher = ModuleManifest(
            name="crasher", timeout_ms=200,
            entry=("{python}", "-c", "import sys; sys.exit(3)"))
        plan = make_plan(tmp_path, [(crasher, None)])
        deployment = Deployment(plan, ProcessBackend(tmp_path / "sandboxes"))
        deployment.start()
        try:
            wait_for(lambda: plan.assignments["crasher"].state == "stopped",
                     timeout=30.0)
            restarts = [e for e in deployment.event_log if e.kind == "restarted"]
            assert len(restarts) == 3
            stopped = [e for e in deployment.event_log
                       if e.kind == "stopped" and e.module == "crasher"]
            assert stopped and "budget" in stopped[0].detail
        finally:
            deployment.stop()

    def test_supervise_yields_events(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("solo"), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            events = []
            for ev in supervise(deployment, timeout=0.2):
                events.append(ev)
                if ev.kind == "running":
                    break
            assert any(e.kind == "started" and e.module == "solo" for e in events)
        finally:
            deployment.stop()


class TestDynamicDelta:
    def test_add_idle_module_to_running_deployment(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("base",
                                                   outputs=(TopicType.WAYPOINTS,)),
                                     None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            base_id = plan.assignments["base"].sandbox.sandbox_id
            # build a module dir for a waypoint consumer
            mod_dir = tmp_path / "newmod"
            mod_dir.mkdir()
            extra = idle_manifest("extra", inputs=(TopicType.WAYPOINTS,))
            (mod_dir / "manifest.json").write_text(extra.to_json())
            report = deployment.apply_delta([mod_dir])
            assert report["added"] == ["extra"]
            assert len(report["new_edges"]) == 1
            assert plan.assignments["base"].sandbox.sandbox_id == base_id
            wait_for(lambda: plan.assignments["extra"].last_hb is not None,
                     timeout=10.0)
        finally:
            deployment.stop()

    def test_empty_delta_is_noop(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("base"), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            report = deployment.apply_delta([])
            assert report == {"added": [], "new_edges": [], "sandboxes": {}}
        finally:
            deployment.stop()

    def test_unmet_input_rejected_without_side_effects(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("base"), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            before = dict(plan.assignments)
            mod_dir = tmp_path / "needy"
            mod_dir.mkdir()
            needy = ModuleManifest(
                name="needy", timeout_ms=300,
                inputs=(PortDecl(TopicType.WAYPOINTS, required=True),),
                entry=("{python}", "-m", "autoframe.apps.idle"))
            (mod_dir / "manifest.json").write_text(needy.to_json())
            from autoframe.blueprint import BlueprintError
            with pytest.raises(BlueprintError):
                deployment.apply_delta([mod_dir])
            assert dict(plan.assignments) == before
            assert "needy" not in plan.assignments
        finally:
            deployment.stop()

    def test_name_collision_rejected(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("base"), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            mod_dir = tmp_path / "dup"
            mod_dir.mkdir()
            (mod_dir / "manifest.json").write_text(idle_manifest("base").to_json())
            from autoframe.blueprint import BlueprintError
            with pytest.raises(BlueprintError):
                deployment.apply_delta([mod_dir])
        finally:
            deployment.stop()


class TestControlSocket:
    def test_status_and_add_module_over_socket(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest(
            "base", outputs=(TopicType.WAYPOINTS,)), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        try:
            status = control_request(plan.root, {"cmd": "status"})
            assert [m["name"] for m in status["modules"]] == ["base"]
            assert status["modules"][0]["state"] == "running"

            mod_dir = tmp_path / "late"
            mod_dir.mkdir()
            late = idle_manifest("late", inputs=(TopicType.WAYPOINTS,))
            (mod_dir / "manifest.json").write_text(late.to_json())
            report = control_request(plan.root,
                                     {"cmd": "add-module", "path": str(mod_dir)})
            assert report["added"] == ["late"]

            again = control_request(plan.root,
                                    {"cmd": "add-module", "path": str(mod_dir)})
            assert again["kind"] == "name-collision"
        finally:
            deployment.stop()

    def test_stop_is_idempotent(self, tmp_path):
        plan = make_plan(tmp_path, [(idle_manifest("one"), None)])
        deployment = deploy(plan, ProcessBackend(tmp_path / "sandboxes"))
        deployment.stop()
        deployment.stop()
        assert plan.assignments["one"].state == "stopped"
