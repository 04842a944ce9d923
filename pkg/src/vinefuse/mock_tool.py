"""Canned-result stand-in for the external annotator/detector.

Reads request.json from VINEFUSE_WORKDIR (or cwd), assembles result.json
from a simulator oracle directory, and exits 0. Extra flags let tests drive
the failure paths:

    python -m vinefuse.mock_tool --source <run>/oracle
    python -m vinefuse.mock_tool --result-file canned.json
    python -m vinefuse.mock_tool --sleep 5
    python -m vinefuse.mock_tool --exit 3
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path


def _load_request(work_dir: Path) -> dict:
    return json.loads((work_dir / "request.json").read_text())


def _annotate_result(oracle_dir: Path, request: dict) -> list:
    out = []
    for image in request["images"]:
        bundle_id = image["bundle_id"]
        modality = image["modality"]
        path = oracle_dir / "masks" / bundle_id / f"{modality}.json"
        if not path.exists():
            continue
        record = json.loads(path.read_text())
        out.append(
            {
                "bundle_id": bundle_id,
                "modality": modality,
                "masks": record["masks"],
            }
        )
    return out


def _detect_result(oracle_dir: Path, request: dict) -> list:
    all_records = json.loads((oracle_dir / "detections.json").read_text())
    wanted = {(img["bundle_id"], img["modality"]) for img in request["images"]}
    return [
        r for r in all_records if (r["bundle_id"], r["modality"]) in wanted
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="vinefuse-mock-tool")
    parser.add_argument("--source", type=Path, help="simulator oracle directory")
    parser.add_argument("--result-file", type=Path, help="copy this file as result.json")
    parser.add_argument("--sleep", type=float, default=0.0)
    parser.add_argument("--exit", dest="exit_code", type=int, default=0)
    args = parser.parse_args(argv)

    work_dir = Path(os.environ.get("VINEFUSE_WORKDIR", "."))
    if args.sleep:
        time.sleep(args.sleep)
    if args.exit_code:
        print("mock tool forced failure", file=sys.stderr)
        return args.exit_code

    if args.result_file is not None:
        shutil.copyfile(args.result_file, work_dir / "result.json")
        return 0

    if args.source is None:
        print("mock tool needs --source or --result-file", file=sys.stderr)
        return 2
    request = _load_request(work_dir)
    if request.get("kind") == "detect":
        result = _detect_result(args.source, request)
    else:
        result = _annotate_result(args.source, request)
    (work_dir / "result.json").write_text(json.dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
