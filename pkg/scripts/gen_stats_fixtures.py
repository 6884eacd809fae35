#!/usr/bin/env python3
"""Freeze call-graph statistics fixtures from the synthetic corpus.

Deliberately standalone: stdlib only, no project imports. The numbers this
script writes are the expected values the analysis engine has to reproduce;
regenerating them must never involve the engine itself.

Definitions used here (and nowhere else):
  * degrees count edge instances, not distinct neighbors; self edges are
    excluded from degrees and recorded as a per-function recursive flag
  * a function is internal when it has at least one caller and every caller
    lives in the same file as the function itself (self calls ignored)
  * a function with zero non-self callers is uncalled, tallied per file

Usage: python scripts/gen_stats_fixtures.py [corpus.json] [out.json]
"""

import json
import sys
from collections import Counter
from pathlib import Path


def compute(graph):
    funcs = graph["functions"]
    ids = [f["id"] for f in funcs]
    file_of = {f["id"]: f["file"] for f in funcs}

    ins = Counter()
    outs = Counter()
    callers = {fid: set() for fid in ids}
    recursive = set()
    self_edges = 0
    for caller, callee in graph["edges"]:
        if caller == callee:
            recursive.add(caller)
            self_edges += 1
            continue
        outs[caller] += 1
        ins[callee] += 1
        callers[callee].add(caller)

    rows = []
    for fid in ids:
        has_caller = len(callers[fid]) > 0
        internal = has_caller and all(
            file_of[c] == file_of[fid] for c in callers[fid]
        )
        rows.append(
            {
                "id": fid,
                "file": file_of[fid],
                "in": ins[fid],
                "out": outs[fid],
                "internal": internal,
                "recursive": fid in recursive,
            }
        )

    per_file = {}
    for row in rows:
        bucket = per_file.setdefault(
            row["file"], {"total": 0, "internal": 0, "uncalled": 0}
        )
        bucket["total"] += 1
        if row["internal"]:
            bucket["internal"] += 1
        if row["in"] == 0:
            bucket["uncalled"] += 1

    in_hist = Counter(str(row["in"]) for row in rows)
    out_hist = Counter(str(row["out"]) for row in rows)

    csv_lines = ["id,file,in,out,internal"]
    for row in rows:
        csv_lines.append(
            "%s,%s,%d,%d,%s"
            % (
                row["id"],
                row["file"],
                row["in"],
                row["out"],
                str(row["internal"]).lower(),
            )
        )

    return {
        "functions": rows,
        "per_file": per_file,
        "in_degree_histogram": dict(in_hist),
        "out_degree_histogram": dict(out_hist),
        "totals": {
            "functions": len(ids),
            "edges": len(graph["edges"]),
            "self_edges": self_edges,
            "counted_edges": sum(ins.values()),
        },
        "csv": "\n".join(csv_lines) + "\n",
    }


def main(argv):
    here = Path(__file__).resolve().parent.parent
    corpus = Path(argv[1]) if len(argv) > 1 else here / "tests/data/synthetic_corpus.json"
    out = Path(argv[2]) if len(argv) > 2 else here / "tests/data/stats_fixture.json"
    graph = json.loads(corpus.read_text())
    fixture = compute(graph)
    out.write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n")
    print("wrote %s (%d functions)" % (out, fixture["totals"]["functions"]))


if __name__ == "__main__":
    main(sys.argv)
