"""Links between instances: JSON-over-HTTP for real deployments, direct
in-process calls for tests and the scenario harness's fast paths.

Addresses select the flavor: ``http://host:port`` or ``local:<name>`` (the
latter resolved through an explicit InProcessRegistry).
"""

from __future__ import annotations

import json
import urllib.error
import urllib.parse
import urllib.request

from .errors import EregError, TargetUnreachable, from_code

DEFAULT_TIMEOUT = 15.0


class HttpClient:
    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, params: dict | None = None,
                 body: dict | None = None) -> dict:
        url = self.base_url + path
        if params:
            url += "?" + urllib.parse.urlencode(
                {k: v if isinstance(v, str) else json.dumps(v)
                 for k, v in params.items() if v is not None})
        data = None
        headers = {"Accept": "application/json"}
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            headers["Content-Type"] = "application/json"
        request = urllib.request.Request(url, data=data, headers=headers,
                                         method=method)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8") or "{}")
        except urllib.error.HTTPError as exc:
            try:
                payload = json.loads(exc.read().decode("utf-8"))
            except ValueError:
                payload = {}
            error = payload.get("error", {})
            raise from_code(error.get("code", "internal"),
                            error.get("message", f"HTTP {exc.code}"),
                            **error.get("details", {})) from None
        except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
            raise TargetUnreachable(f"{url}: {exc}") from None

    def get(self, path: str, params: dict | None = None) -> dict:
        return self._request("GET", path, params=params)

    def post(self, path: str, body: dict | None = None,
             params: dict | None = None) -> dict:
        return self._request("POST", path, params=params, body=body)


class InProcessRegistry:
    """Process-local address book for ``local:<name>`` instances."""

    def __init__(self):
        self._instances: dict[str, object] = {}

    def add(self, name: str, instance) -> str:
        self._instances[name] = instance
        return f"local:{name}"

    def resolve(self, address: str):
        name = address.split(":", 1)[1]
        instance = self._instances.get(name)
        if instance is None:
            raise TargetUnreachable(f"no in-process instance {name!r}")
        return instance


# -- parent-facing link (district -> top) ---------------------------------------


class HttpParentLink:
    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT):
        self.client = HttpClient(address, timeout)

    def register(self, payload: dict) -> dict:
        return self.client.post("/registry/instances", payload)

    def set_address(self, iid: int, address: str) -> dict:
        return self.client.post(f"/registry/instances/{iid}/address",
                                {"address": address})

    def upload_permissions(self, iid: int, tables: dict) -> dict:
        return self.client.post(f"/registry/instances/{iid}/permissions",
                                {"tables": tables})

    def fetch_metamodel(self) -> dict:
        return self.client.get("/metamodel")

    def push_events(self, iid: int, events: list[dict]) -> dict:
        return self.client.post("/sync/events", {"proto_version": "1",
                                                 "iid": iid, "events": events})

    def federated_query(self, params: dict) -> dict:
        return self.client.get("/query/entities", params=params)

    def poll_pending(self, token: str) -> dict:
        return self.client.get(f"/query/pending/{token}")


class InProcessParentLink:
    def __init__(self, registry: InProcessRegistry, address: str):
        self.registry = registry
        self.address = address

    def _top(self):
        return self.registry.resolve(self.address)

    def register(self, payload: dict) -> dict:
        return self._top().api_register_instance(payload)

    def set_address(self, iid: int, address: str) -> dict:
        return self._top().api_set_address(iid, address)

    def upload_permissions(self, iid: int, tables: dict) -> dict:
        return self._top().api_upload_permissions(iid, tables)

    def fetch_metamodel(self) -> dict:
        return self._top().api_metamodel()

    def push_events(self, iid: int, events: list[dict]) -> dict:
        return self._top().api_ingest_events(iid, events)

    def federated_query(self, params: dict) -> dict:
        return self._top().api_federated_query(params)

    def poll_pending(self, token: str) -> dict:
        return self._top().api_poll_pending(token)


# -- child-facing link (top -> district) -----------------------------------------


class HttpChildLink:
    def __init__(self, address: str, timeout: float = DEFAULT_TIMEOUT):
        self.client = HttpClient(address, timeout)

    def pull_outbox(self, after: int) -> list[dict]:
        return self.client.get("/sync/outbox", params={"after": after})["events"]

    def record_ack(self, upto: int, bindings: dict) -> dict:
        return self.client.post("/sync/ack", {"upto": upto, "bindings": bindings})


class InProcessChildLink:
    def __init__(self, registry: InProcessRegistry, address: str):
        self.registry = registry
        self.address = address

    def pull_outbox(self, after: int) -> list[dict]:
        return self.registry.resolve(self.address).api_outbox(after)["events"]

    def record_ack(self, upto: int, bindings: dict) -> dict:
        return self.registry.resolve(self.address).api_record_ack(upto, bindings)


def parent_link(address: str, registry: InProcessRegistry | None = None):
    if address.startswith("local:"):
        if registry is None:
            raise EregError("in-process address without a registry")
        return InProcessParentLink(registry, address)
    return HttpParentLink(address)


def child_link(address: str, registry: InProcessRegistry | None = None):
    if address.startswith("local:"):
        if registry is None:
            raise EregError("in-process address without a registry")
        return InProcessChildLink(registry, address)
    return HttpChildLink(address)
