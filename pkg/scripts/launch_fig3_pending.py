#!/usr/bin/env python3
"""Boot the two-district federation, ingest both versions of the shared
person, and stop right before the human decision: the action request is
left open.  Prints one JSON line with the instance addresses, then waits
until terminated.  Used by the frontend's end-to-end test.
"""

from __future__ import annotations

import json
import signal
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ereg import demo  # noqa: E402
from ereg.scenario import ScenarioRunner  # noqa: E402

SCENARIO = {
    "name": "fig3 pending",
    "fixtures": {"ownership": [
        {"user": "root", "doc_id": "*", "level": "owner"}]},
    "instances": [
        {"name": "top", "role": "top_level"},
        {"name": "d1", "role": "district", "parent": "top",
         "config": {"id_start": 22}},
        {"name": "d2", "role": "district", "parent": "top",
         "config": {"id_start": 85}},
    ],
    "steps": [],
}


def main() -> int:
    workdir = tempfile.mkdtemp(prefix="ereg-e2e-")
    runner = ScenarioRunner(SCENARIO, workdir=workdir)
    stopping = False

    def stop(*_args):
        nonlocal stopping
        stopping = True

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    try:
        for name in ("top", "d1", "d2"):
            runner._run_step({"op": "start", "instance": name})
        runner.instances["d1"].client.post(
            "/ingest", {"doc": demo.fig3_district1_doc()})
        runner.instances["d2"].client.post(
            "/ingest", {"doc": demo.fig3_district2_doc()})
        print(json.dumps({name: managed.address
                          for name, managed in runner.instances.items()}),
              flush=True)
        while not stopping:
            signal.pause()
        return 0
    finally:
        for managed in runner.instances.values():
            managed.stop()


if __name__ == "__main__":
    sys.exit(main())
