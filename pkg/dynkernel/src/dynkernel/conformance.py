"""Run the shared semantic conformance suite against a kernel command.

Each case gets a fresh kernel process. Assertions are semantic: reply
status, rendered result text, concatenated stdout chunks, and the abstract
error class a reply's ename must fall into (the suite carries the
class-to-ename map). The report lists failing case ids with reasons.
"""

from __future__ import annotations

import argparse
import json
import queue
import shlex
import subprocess
import sys
import threading
from typing import Optional

DEFAULT_CMD = [sys.executable, "-m", "dynkernel"]
DEFAULT_LANE = "python"


class KernelProcess:
    """Single-in-flight wire client over a kernel subprocess."""

    def __init__(self, cmd: list[str], timeout: float = 30.0):
        self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self.timeout = timeout
        self._lines: queue.Queue = queue.Queue()
        self._count = 0
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in iter(self.proc.stdout.readline, b""):
            self._lines.put(line)
        self._lines.put(b"")

    def request(self, op: str, payload: dict) -> tuple[dict, list]:
        """Send one request, return (reply, stream chunks)."""
        msg_id = f"c{self._count}"
        self._count += 1
        frame = json.dumps(
            {"msg_id": msg_id, "op": op, "payload": payload},
            sort_keys=True,
            separators=(",", ":"),
        )
        self.proc.stdin.write((frame + "\n").encode("utf-8"))
        self.proc.stdin.flush()
        chunks = []
        while True:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise TimeoutError(f"kernel did not reply to {op}") from None
            if not line:
                raise RuntimeError("kernel closed the pipe")
            msg = json.loads(line)
            if "channel" in msg:
                chunks.append((msg["channel"], msg["text"]))
                continue
            if msg.get("msg_id") != msg_id:
                raise RuntimeError(f"reply out of order: {msg}")
            return msg, chunks

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


def _pick(field, lane: str):
    if isinstance(field, dict):
        return field[lane]
    return field


def _step_payload(step: dict, lane: str) -> dict:
    if step["op"] == "eval_in_ns":
        return {"ns": step["ns"], "code": _pick(step["code"], lane), "names": []}
    if step["op"] == "add_import":
        return {"from": step["from"], "to": step["to"], "name": step["name"]}
    if step["op"] == "delete_import":
        return {"ns": step["ns"], "name": step["name"]}
    if step["op"] == "delete_names":
        return {"ns": step["ns"], "names": step["names"]}
    return {}


def _check_step(suite: dict, step: dict, reply: dict, chunks: list, lane: str) -> Optional[str]:
    """None when the step matched its expectations, else the mismatch."""
    expect = step["expect"]
    if reply.get("status") != expect["status"]:
        return f"status {reply.get('status')!r}, wanted {expect['status']!r} ({reply.get('error')})"
    if "value" in expect:
        wanted = _pick(expect["value"], lane)
        result = reply.get("result")
        got = None if result is None else result.get("data")
        if got != wanted:
            return f"value {got!r}, wanted {wanted!r}"
    if "stdout" in expect:
        got = "".join(text for channel, text in chunks if channel == "stdout")
        wanted = _pick(expect["stdout"], lane)
        if got != wanted:
            return f"stdout {got!r}, wanted {wanted!r}"
    if expect["status"] == "error":
        ename = (reply.get("error") or {}).get("ename")
        allowed = suite["error_classes"][expect["error_class"]]
        if ename not in allowed:
            return f"ename {ename!r} not in {allowed}"
    return None


def run_suite(cases_path: str, cmd: Optional[list[str]] = None, lane: str = DEFAULT_LANE) -> dict:
    with open(cases_path, encoding="utf-8") as fh:
        suite = json.load(fh)
    cmd = cmd or DEFAULT_CMD
    passed, failed = [], []
    for case in suite["cases"]:
        kernel = KernelProcess(cmd)
        try:
            for i, step in enumerate(case["steps"]):
                reply, chunks = kernel.request(step["op"], _step_payload(step, lane))
                problem = _check_step(suite, step, reply, chunks, lane)
                if problem is not None:
                    failed.append({"case": case["id"], "step": i, "reason": problem})
                    break
            else:
                passed.append(case["id"])
        except (TimeoutError, RuntimeError, OSError) as exc:
            failed.append({"case": case["id"], "step": -1, "reason": str(exc)})
        finally:
            kernel.close()
    return {"total": len(suite["cases"]), "passed": passed, "failed": failed}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Kernel conformance runner.")
    parser.add_argument("cases", help="conformance cases JSON file")
    parser.add_argument(
        "--kernel-cmd",
        default=None,
        help="kernel launch command (default: this package's kernel)",
    )
    parser.add_argument("--lane", default=DEFAULT_LANE, help="language lane to use")
    args = parser.parse_args(argv)
    cmd = shlex.split(args.kernel_cmd) if args.kernel_cmd else None
    report = run_suite(args.cases, cmd=cmd, lane=args.lane)
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0 if not report["failed"] else 1


if __name__ == "__main__":
    sys.exit(main())
