#!/usr/bin/env python3
"""Boot a top-level instance plus two districts on loopback, replay the
two-district merge flow end to end, and print the key responses.

Usage: python scripts/run_demo_federation.py [--keep]
With --keep the instances stay up and their addresses are printed, handy
for pointing the explorer frontend or curl at a live federation.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ereg import demo  # noqa: E402
from ereg.scenario import ScenarioRunner  # noqa: E402

SCENARIO = {
    "name": "demo federation",
    "fixtures": {"ownership": [
        {"user": "root", "doc_id": "*", "level": "owner"},
        {"user": "rhea", "doc_id": "*", "level": "reader"},
        {"user": "gus", "doc_id": "*", "level": "generic"},
    ]},
    "instances": [
        {"name": "top", "role": "top_level"},
        {"name": "d1", "role": "district", "parent": "top",
         "config": {"id_start": 22}},
        {"name": "d2", "role": "district", "parent": "top",
         "config": {"id_start": 85}},
    ],
    "steps": [{"op": "start", "instance": name}
              for name in ("top", "d1", "d2")],
}


def show(title: str, payload) -> None:
    print(f"\n== {title}")
    print(json.dumps(payload, indent=2, ensure_ascii=False, default=str))


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--keep", action="store_true",
                        help="leave the instances running")
    args = parser.parse_args()

    workdir = tempfile.mkdtemp(prefix="ereg-demo-")
    runner = ScenarioRunner(SCENARIO, workdir=workdir)
    print(f"working directory: {workdir}")
    try:
        for step in SCENARIO["steps"]:
            runner._run_step(step)
        top = runner.instances["top"].client
        d1 = runner.instances["d1"].client
        d2 = runner.instances["d2"].client

        show("district 1 ingests its hearing",
             d1.post("/ingest", {"doc": demo.fig3_district1_doc()})["outcomes"])
        show("district 2 ingests its appeal",
             d2.post("/ingest", {"doc": demo.fig3_district2_doc()})["outcomes"])

        requests = top.get("/action-requests", {"status": "open"})["requests"]
        show("action request awaiting a human", requests[0]["message"])

        rid = requests[0]["request_id"]
        resolution = top.post(f"/action-requests/{rid}/resolution",
                              {"decision": {"kind": "merge",
                                            "global_id": "g-1-1"},
                               "actor": "root"})
        show("merge resolution", resolution)
        show("global entity after the merge",
             top.get("/entities/global/g-1-1"))
        show("anonymized reading of district 1's document",
             d1.get("/documents/d1-001", {"as_user": "rhea"})["sections"])

        if args.keep:
            print("\ninstances left running:")
            for name, managed in runner.instances.items():
                print(f"  {name}: {managed.address}  (data: {managed.data_dir})")
            print("press Ctrl-C to stop")
            try:
                while True:
                    time.sleep(3600)
            except KeyboardInterrupt:
                pass
        return 0
    finally:
        if not args.keep:
            for managed in runner.instances.values():
                managed.stop()


if __name__ == "__main__":
    sys.exit(main())
