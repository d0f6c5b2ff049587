"""Multi-instance scenario harness: spawns real instance processes on
loopback, drives them through the wire protocol, records a transcript, and
checks expectations step by step.

Scenario files are JSON: an ``instances`` list (name, role, config
overrides) and an ordered ``steps`` list.  A step's ``expect`` is matched
structurally (dict entries must be present recursively, lists match
element-wise), ``save`` captures response fields into variables usable as
``$var`` in later steps, and any mismatch raises StepFailed with the step
index.  Transcripts normalize volatile values (addresses, timestamps,
process ids) so two runs of the same scenario compare equal.
"""

from __future__ import annotations

import copy
import json
import re
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from . import demo
from .config import InstanceConfig
from .errors import ConfigError, EregError, StepFailed
from .transport import HttpClient

_VOLATILE_KEYS = {"timestamp", "address", "token", "history"}
_ADDRESS = re.compile(r"http://[0-9.]+:\d+")

FIXTURE_DOCS = {
    "fig3_district1": demo.fig3_district1_doc,
    "fig3_district2": demo.fig3_district2_doc,
    "permission_fixture": demo.permission_fixture_doc,
}


def _normalize(value):
    if isinstance(value, dict):
        return {k: ("<volatile>" if k in _VOLATILE_KEYS else _normalize(v))
                for k, v in value.items()}
    if isinstance(value, list):
        return [_normalize(v) for v in value]
    if isinstance(value, str):
        return _ADDRESS.sub("<address>", value)
    return value


def normalize_transcript(transcript: list[dict]) -> list[dict]:
    return _normalize(copy.deepcopy(transcript))


def _matches(expected, actual, path="$"):
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            raise StepFailed(f"{path}: expected object, got {type(actual).__name__}")
        for key, value in expected.items():
            if key not in actual:
                raise StepFailed(f"{path}.{key}: missing")
            _matches(value, actual[key], f"{path}.{key}")
        return
    if isinstance(expected, list):
        if not isinstance(actual, list) or len(expected) != len(actual):
            raise StepFailed(f"{path}: expected list of {len(expected)}, "
                             f"got {actual!r}")
        for i, (e, a) in enumerate(zip(expected, actual)):
            _matches(e, a, f"{path}[{i}]")
        return
    if expected != actual:
        raise StepFailed(f"{path}: expected {expected!r}, got {actual!r}")


def _dig(payload, dotted: str):
    current = payload
    for part in dotted.split("."):
        if isinstance(current, list):
            current = current[int(part)]
        elif isinstance(current, dict):
            current = current[part]
        else:
            raise StepFailed(f"cannot descend into {current!r} with {part!r}")
    return current


class ManagedInstance:
    def __init__(self, name: str, config: InstanceConfig, data_dir: Path):
        self.name = name
        self.config = config
        self.data_dir = data_dir
        self.process: subprocess.Popen | None = None
        self.client: HttpClient | None = None
        self.address: str | None = None

    def start(self, timeout: float = 20.0) -> None:
        config_path = self.data_dir / "config.json"
        self.config.dump(config_path)
        serving = self.data_dir / "serving.json"
        serving.unlink(missing_ok=True)
        self.process = subprocess.Popen(
            [sys.executable, "-m", "ereg", "serve", "--config", str(config_path)],
            stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.process.poll() is not None:
                stderr = self.process.stderr.read().decode("utf-8", "replace")
                raise StepFailed(
                    f"instance {self.name} exited on start: {stderr[-2000:]}")
            if serving.exists():
                try:
                    info = json.loads(serving.read_text())
                except ValueError:
                    time.sleep(0.02)
                    continue
                self.address = info["address"]
                self.client = HttpClient(self.address)
                try:
                    self.client.get("/health")
                    return
                except EregError:
                    pass
            time.sleep(0.02)
        raise StepFailed(f"instance {self.name} did not come up in {timeout}s")

    def kill(self) -> None:
        if self.process is not None and self.process.poll() is None:
            self.process.kill()
            self.process.wait()

    def stop(self) -> None:
        if self.process is not None and self.process.poll() is None:
            self.process.terminate()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


class ScenarioRunner:
    def __init__(self, scenario: dict, workdir: str | Path | None = None):
        self.scenario = scenario
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="ereg-scenario-")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self.instances: dict[str, ManagedInstance] = {}
        self.variables: dict[str, object] = {}
        self.transcript: list[dict] = []

    # -- configuration ------------------------------------------------------------

    def _instance_config(self, spec: dict) -> InstanceConfig:
        name = spec["name"]
        data_dir = self.workdir / name
        data_dir.mkdir(parents=True, exist_ok=True)
        overrides = dict(spec.get("config", {}))
        role = spec.get("role", "district")
        if role == "district":
            parent_name = spec.get("parent", "top")
            parent = self.instances.get(parent_name)
            if parent is None or parent.address is None:
                raise StepFailed(f"parent {parent_name!r} of {name!r} not started")
            overrides["parent"] = parent.address
        fixtures = self.scenario.get("fixtures", {})
        if role == "top_level" and "metamodel_path" not in overrides:
            metamodel = fixtures.get("metamodel", "demo")
            path = data_dir / "metamodel.json"
            data = demo.demo_metamodel().to_json() if metamodel == "demo" \
                else metamodel
            path.write_text(json.dumps(data, indent=2, sort_keys=True))
            overrides["metamodel_path"] = str(path)
        if "permissions_path" not in overrides:
            ownership = spec.get("ownership", fixtures.get("ownership", []))
            tables = demo.demo_access_tables(ownership=ownership)
            path = data_dir / "permissions.json"
            path.write_text(json.dumps(tables.to_json(), indent=2,
                                       sort_keys=True))
            overrides["permissions_path"] = str(path)
        return InstanceConfig(role=role, data_dir=str(data_dir),
                              listen="127.0.0.1:0", **overrides)

    # -- substitution ----------------------------------------------------------------

    def _substitute(self, value):
        if isinstance(value, str) and value.startswith("$"):
            name = value[1:]
            if name not in self.variables:
                raise StepFailed(f"unknown scenario variable {value!r}")
            return self.variables[name]
        if isinstance(value, dict):
            return {k: self._substitute(v) for k, v in value.items()}
        if isinstance(value, list):
            return [self._substitute(v) for v in value]
        return value

    def _client(self, step: dict) -> HttpClient:
        name = step["instance"]
        managed = self.instances.get(name)
        if managed is None or managed.client is None:
            raise StepFailed(f"instance {name!r} is not running")
        return managed.client

    # -- steps -------------------------------------------------------------------------

    def _run_step(self, step: dict) -> dict:
        op = step["op"]
        if op == "start":
            spec = next(s for s in self.scenario["instances"]
                        if s["name"] == step["instance"])
            managed = self.instances.get(step["instance"])
            if managed is None:
                managed = ManagedInstance(spec["name"],
                                          self._instance_config(spec),
                                          self.workdir / spec["name"])
                self.instances[spec["name"]] = managed
            managed.start()
            return {"started": step["instance"], "address": managed.address}
        if op == "stop":
            self.instances[step["instance"]].stop()
            return {"stopped": step["instance"]}
        if op == "kill":
            self.instances[step["instance"]].kill()
            return {"killed": step["instance"]}
        if op == "ingest":
            doc = step.get("doc")
            if isinstance(doc, str):
                doc = FIXTURE_DOCS[doc]()
            body = {"doc": self._substitute(doc)}
            path = "/ingest/raw" if step.get("raw") else "/ingest"
            return self._client(step).post(path, body)
        if op == "sync":
            return self._client(step).post("/sync/flush",
                                           {"limit": step.get("limit")})
        if op == "query":
            return self._client(step).get("/query/entities",
                                          self._substitute(step["params"]))
        if op == "document":
            return self._client(step).get(
                f"/documents/{step['doc_id']}",
                {"as_user": step.get("as_user", "")})
        if op == "entity":
            return self._client(step).get(
                f"/entities/{self._substitute(step['local_id'])}",
                {"as_user": step.get("as_user", "")})
        if op == "graph":
            return self._client(step).get(
                f"/entities/{self._substitute(step['local_id'])}/graph",
                {"as_user": step.get("as_user", ""),
                 "depth": step.get("depth", 1)})
        if op == "stats":
            return self._client(step).get("/stats",
                                          self._substitute(step["params"]))
        if op == "requests":
            return self._client(step).get(
                "/action-requests", {"status": step.get("status")})
        if op == "resolve":
            rid = self._substitute(step["request_id"])
            return self._client(step).post(
                f"/action-requests/{rid}/resolution",
                {"decision": self._substitute(step["decision"]),
                 "actor": step.get("actor", "root")})
        if op == "bindings":
            gid = self._substitute(step["global_id"])
            return self._client(step).get(f"/entities/global/{gid}/bindings")
        if op == "pending":
            return self._client(step).get("/pending-mentions",
                                          {"status": step.get("status", "open")})
        if op == "resolve_pending":
            pid = self._substitute(step["pending_id"])
            return self._client(step).post(
                f"/pending-mentions/{pid}/resolution",
                {"decision": self._substitute(step["decision"])})
        if op == "digest":
            return self._client(step).get("/state/digest")
        if op == "http":
            method = step.get("method", "GET").upper()
            if method == "GET":
                return self._client(step).get(step["path"],
                                              self._substitute(
                                                  step.get("params")))
            return self._client(step).post(step["path"],
                                           self._substitute(step.get("body")))
        raise StepFailed(f"unknown step op {op!r}")

    def run(self) -> list[dict]:
        try:
            for index, step in enumerate(self.scenario.get("steps", [])):
                entry = {"index": index, "step": step}
                try:
                    expect_error = step.get("expect_error")
                    try:
                        response = self._run_step(step)
                    except EregError as exc:
                        if expect_error and exc.code == expect_error:
                            response = {"error": exc.to_json()}
                        else:
                            raise
                    else:
                        if expect_error:
                            raise StepFailed(
                                f"expected error {expect_error!r}, got success")
                    entry["response"] = response
                    if "expect" in step:
                        _matches(self._substitute(step["expect"]), response,
                                 path=f"step[{index}]")
                    if "expect_count" in step:
                        rows = response.get("requests",
                                            response.get("pending", []))
                        if len(rows) != step["expect_count"]:
                            raise StepFailed(
                                f"step[{index}]: expected {step['expect_count']}"
                                f" rows, got {len(rows)}")
                    for var, dotted in step.get("save", {}).items():
                        self.variables[var] = _dig(response, dotted)
                except StepFailed as exc:
                    entry["failed"] = str(exc)
                    self.transcript.append(entry)
                    raise StepFailed(f"step {index} ({step['op']}): {exc}",
                                     step_index=index) from exc
                self.transcript.append(entry)
            return self.transcript
        finally:
            for managed in self.instances.values():
                managed.stop()
            if self._tmp is not None:
                self._tmp.cleanup()


def load_scenario(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError(f"scenario file is not valid JSON: {exc}") from None


def scenario_run(path: str | Path, workdir: str | Path | None = None
                 ) -> list[dict]:
    return ScenarioRunner(load_scenario(path), workdir).run()
