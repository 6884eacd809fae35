#!/usr/bin/env python3
"""Freeze the canonical wire encoding of 20 representative kernel messages.

Deliberately does NOT import the package: frames are built with plain
json.dumps so the committed bytes pin the encoding contract (UTF-8, sorted
keys, compact separators, one line per frame, "\n" terminator) independently
of the encoder that must later reproduce them.

Writes:
  tests/data/protocol_golden.ndjson      the frozen frame bytes
  tests/data/protocol_golden_cases.json  the messages as structured data, so
                                         tests can rebuild each frame through
                                         the real encoder and compare bytes
"""

import json
import pathlib

HERE = pathlib.Path(__file__).resolve().parent.parent
OUT = HERE / "tests" / "data"

# shape conventions frozen here:
#   request: {msg_id, op, payload}            payload always present ({} for ping)
#   reply:   {msg_id, status, result?, error?} absent fields omitted entirely
#   stream:  {msg_id, channel, text}
CASES = [
    {"kind": "request", "msg": {"msg_id": "m1", "op": "ping", "payload": {}}},
    {"kind": "request", "msg": {"msg_id": "m2", "op": "eval_in_ns",
                                "payload": {"ns": "/ROOT", "code": "1 + 2", "names": []}}},
    {"kind": "request", "msg": {"msg_id": "m3", "op": "eval_in_ns",
                                "payload": {"ns": "/ROOT/A", "code": "let x = 1;\nlet y = 2;\nx + y",
                                            "names": ["x", "y"]}}},
    {"kind": "request", "msg": {"msg_id": "m4", "op": "eval_in_ns",
                                "payload": {"ns": "/ROOT/A/B", "code": "fn inc(n) = n + 1;",
                                            "names": ["inc"]}}},
    {"kind": "request", "msg": {"msg_id": "m5", "op": "eval_in_ns",
                                "payload": {"ns": "/ROOT", "code": 'print("héllo ✓")', "names": []}}},
    {"kind": "request", "msg": {"msg_id": "m6", "op": "add_import",
                                "payload": {"from": "/ROOT/B", "to": "/ROOT", "name": "inc"}}},
    {"kind": "request", "msg": {"msg_id": "m7", "op": "add_import",
                                "payload": {"from": "/ROOT/A/B/C", "to": "/ROOT/A/B/T", "name": "c1"}}},
    {"kind": "request", "msg": {"msg_id": "m8", "op": "delete_import",
                                "payload": {"ns": "/ROOT/A", "name": "inc"}}},
    {"kind": "request", "msg": {"msg_id": "m9", "op": "delete_names",
                                "payload": {"ns": "/ROOT/A/B", "names": ["f", "g", "h"]}}},
    {"kind": "request", "msg": {"msg_id": "m10", "op": "delete_names",
                                "payload": {"ns": "/ROOT", "names": []}}},
    {"kind": "reply", "msg": {"msg_id": "m2", "status": "ok",
                              "result": {"mime": "text/plain", "data": "3"}}},
    {"kind": "reply", "msg": {"msg_id": "m4", "status": "ok"}},
    {"kind": "reply", "msg": {"msg_id": "0f9e2c4a-m13", "status": "ok",
                              "result": {"mime": "text/plain", "data": "<fn/1>"}}},
    {"kind": "reply", "msg": {"msg_id": "m14", "status": "error",
                              "error": {"ename": "UndefinedName", "evalue": "name 'q' is not defined in /ROOT"}}},
    {"kind": "reply", "msg": {"msg_id": "m15", "status": "error",
                              "error": {"ename": "DivideByZero", "evalue": "division by zero"}}},
    {"kind": "reply", "msg": {"msg_id": "", "status": "error",
                              "error": {"ename": "MalformedFrame", "evalue": "frame is not a JSON object"}}},
    {"kind": "stream", "msg": {"msg_id": "m2", "channel": "stdout", "text": "3\n"}},
    {"kind": "stream", "msg": {"msg_id": "m5", "channel": "stderr", "text": "warning: shadowed name\n"}},
    {"kind": "stream", "msg": {"msg_id": "m5", "channel": "stdout", "text": "héllo ✓\nsecond line\n"}},
    {"kind": "reply", "msg": {"msg_id": "m20", "status": "ok",
                              "result": {"mime": "text/plain", "data": 'quote " and backslash \\ and\ttab'}}},
]


def frame(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, ensure_ascii=False,
                       separators=(",", ":")) + "\n").encode("utf-8")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "protocol_golden.ndjson", "wb") as fh:
        for case in CASES:
            fh.write(frame(case["msg"]))
    with open(OUT / "protocol_golden_cases.json", "w", encoding="utf-8") as fh:
        json.dump(CASES, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    print(f"wrote {len(CASES)} golden frames")


if __name__ == "__main__":
    main()
