"""Frame loop: newline-delimited JSON on stdio.

One frame is one UTF-8 JSON object on one line, keys sorted, compact
separators. Requests carry msg_id/op/payload; every request gets exactly
one terminal reply in request order, with any stream chunks for it first.
Malformed input gets an error reply and the loop keeps serving.
"""

from __future__ import annotations

import json
import sys
from typing import IO

from .kernel import HostError, HostKernel, render

_OPS = {
    "eval_in_ns": ("ns", "code", "names"),
    "add_import": ("from", "to", "name"),
    "delete_import": ("ns", "name"),
    "delete_names": ("ns", "names"),
    "ping": (),
}


def encode(obj: dict) -> bytes:
    text = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return (text + "\n").encode("utf-8")


def serve(kernel: HostKernel, fin: IO[bytes], fout: IO[bytes]):
    def emit(obj: dict):
        fout.write(encode(obj))
        fout.flush()

    def fail(msg_id: str, ename: str, evalue: str):
        emit({"msg_id": msg_id, "status": "error", "error": {"ename": ename, "evalue": evalue}})

    for line in iter(fin.readline, b""):
        if not line.strip():
            continue
        try:
            msg = json.loads(line.decode("utf-8"))
            if not isinstance(msg, dict):
                raise ValueError("frame is not a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            fail("", "MalformedFrame", str(exc))
            continue
        msg_id = msg.get("msg_id")
        if not isinstance(msg_id, str):
            fail("", "ProtocolError", "msg_id must be a string")
            continue
        op = msg.get("op")
        payload = msg.get("payload")
        if op not in _OPS or not isinstance(payload, dict):
            fail(msg_id, "ProtocolError", f"unknown or malformed op {op!r}")
            continue
        missing = [key for key in _OPS[op] if key not in payload]
        if missing:
            fail(msg_id, "ProtocolError", f"payload missing {missing}")
            continue
        try:
            if op == "ping":
                emit({"msg_id": msg_id, "status": "ok"})
            elif op == "eval_in_ns":
                def stream(channel: str, text: str, _id=msg_id):
                    emit({"msg_id": _id, "channel": channel, "text": text})

                value = kernel.eval_in_ns(payload["ns"], payload["code"], stream=stream)
                reply = {"msg_id": msg_id, "status": "ok"}
                data = render(value)
                if data is not None:
                    reply["result"] = {"mime": "text/plain", "data": data}
                emit(reply)
            elif op == "add_import":
                kernel.add_import(payload["from"], payload["to"], payload["name"])
                emit({"msg_id": msg_id, "status": "ok"})
            elif op == "delete_import":
                kernel.delete_import(payload["ns"], payload["name"])
                emit({"msg_id": msg_id, "status": "ok"})
            elif op == "delete_names":
                names = payload["names"]
                if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
                    fail(msg_id, "ProtocolError", "names must be a list of strings")
                    continue
                kernel.delete_names(payload["ns"], names)
                emit({"msg_id": msg_id, "status": "ok"})
        except HostError as exc:
            fail(msg_id, exc.ename, exc.evalue)
        except Exception as exc:  # a kernel bug must not kill the transport
            fail(msg_id, "InternalError", f"{type(exc).__name__}: {exc}")


def main():
    serve(HostKernel(), sys.stdin.buffer, sys.stdout.buffer)
