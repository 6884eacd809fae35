"""Framed kernel messaging: canonical NDJSON codec, the kernel-side serve
loop, and the client session.

One frame = one UTF-8 JSON object on one line, newline-terminated, keys
sorted, compact separators. Three frame shapes travel in both directions'
byte format (requests go to the kernel; replies and stream chunks come
back):

  request  {"msg_id", "op", "payload"}         payload always present
  reply    {"msg_id", "status", "result"?, "error"?}   absent parts omitted
  stream   {"msg_id", "channel", "text"}

A reply's status decides which optional part may appear: ok carries at most
a result, error carries exactly an error. Every request gets exactly one
terminal reply, in request order (strict FIFO); stream chunks for a request
arrive before its reply.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import sys
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, IO, Optional, Union

from .errors import (
    KernelEvalError,
    MalformedFrame,
    ProtocolError,
    SerializationFailure,
    Timeout,
    TransportClosed,
    UnknownMsgId,
)
from .podlang import MiniKernel, PodlangError, render_value

DEFAULT_TIMEOUT = 30.0
TEXT_PLAIN = "text/plain"

# op -> required payload fields and their types; list fields hold strings
_OPS: dict[str, dict[str, type]] = {
    "eval_in_ns": {"ns": str, "code": str, "names": list},
    "add_import": {"from": str, "to": str, "name": str},
    "delete_import": {"ns": str, "name": str},
    "delete_names": {"ns": str, "names": list},
    "ping": {},
}

# payload string fields that may legitimately be empty
_MAY_BE_EMPTY = {("eval_in_ns", "code")}


@dataclass(frozen=True)
class KernelRequest:
    msg_id: str
    op: str
    payload: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {"msg_id": self.msg_id, "op": self.op, "payload": self.payload}


@dataclass(frozen=True)
class KernelReply:
    msg_id: str
    status: str  # "ok" | "error"
    result: Optional[dict] = None  # {"mime": str, "data": str}
    error: Optional[dict] = None  # {"ename": str, "evalue": str}

    def to_wire(self) -> dict:
        out: dict = {"msg_id": self.msg_id, "status": self.status}
        if self.result is not None:
            out["result"] = self.result
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def ok(cls, msg_id: str, data: Optional[str] = None) -> "KernelReply":
        result = None if data is None else {"mime": TEXT_PLAIN, "data": data}
        return cls(msg_id, "ok", result=result)

    @classmethod
    def fail(cls, msg_id: str, ename: str, evalue: str) -> "KernelReply":
        return cls(msg_id, "error", error={"ename": ename, "evalue": evalue})


@dataclass(frozen=True)
class StreamChunk:
    msg_id: str
    channel: str  # "stdout" | "stderr"
    text: str

    def to_wire(self) -> dict:
        return {"msg_id": self.msg_id, "channel": self.channel, "text": self.text}


Message = Union[KernelRequest, KernelReply, StreamChunk]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def encode_frame(msg: Message) -> bytes:
    try:
        return (canonical_json(msg.to_wire()) + "\n").encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise SerializationFailure(f"frame not serializable: {exc}") from None


def _require_str(d: dict, key: str, where: str, msg_id: str, may_be_empty: bool = False):
    val = d.get(key)
    if not isinstance(val, str):
        raise ProtocolError(f"{where}.{key} must be a string", msg_id=msg_id, field=key)
    if not val and not may_be_empty:
        raise ProtocolError(f"{where}.{key} must be non-empty", msg_id=msg_id, field=key)
    return val


def _decode_request(d: dict, msg_id: str) -> KernelRequest:
    op = d["op"]
    if op not in _OPS:
        raise ProtocolError(f"unknown op {op!r}", msg_id=msg_id, op=op)
    payload = d.get("payload")
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object", msg_id=msg_id, op=op)
    fields = _OPS[op]
    extra = set(payload) - set(fields)
    if extra:
        raise ProtocolError(
            f"unexpected payload fields for {op}: {sorted(extra)}", msg_id=msg_id, op=op
        )
    for name, typ in fields.items():
        if name not in payload:
            raise ProtocolError(f"{op} payload missing {name!r}", msg_id=msg_id, op=op)
        if typ is str:
            _require_str(payload, name, op, msg_id, may_be_empty=(op, name) in _MAY_BE_EMPTY)
        else:
            val = payload[name]
            if not isinstance(val, list) or any(not isinstance(x, str) or not x for x in val):
                raise ProtocolError(
                    f"{op}.{name} must be a list of non-empty strings", msg_id=msg_id, op=op
                )
    return KernelRequest(msg_id, op, payload)


def _decode_reply(d: dict, msg_id: str) -> KernelReply:
    status = d["status"]
    if status not in ("ok", "error"):
        raise ProtocolError(f"bad status {status!r}", msg_id=msg_id)
    result = d.get("result")
    error = d.get("error")
    extra = set(d) - {"msg_id", "status", "result", "error"}
    if extra:
        raise ProtocolError(f"unexpected reply fields: {sorted(extra)}", msg_id=msg_id)
    if status == "ok" and error is not None:
        raise ProtocolError("ok reply carries an error", msg_id=msg_id)
    if status == "error" and (result is not None or error is None):
        raise ProtocolError("error reply must carry error and no result", msg_id=msg_id)
    if result is not None:
        if not isinstance(result, dict) or set(result) != {"mime", "data"}:
            raise ProtocolError("result must be {mime, data}", msg_id=msg_id)
        _require_str(result, "mime", "result", msg_id)
        if not isinstance(result.get("data"), str):
            raise ProtocolError("result.data must be a string", msg_id=msg_id)
    if error is not None:
        if not isinstance(error, dict) or set(error) != {"ename", "evalue"}:
            raise ProtocolError("error must be {ename, evalue}", msg_id=msg_id)
        _require_str(error, "ename", "error", msg_id)
        if not isinstance(error.get("evalue"), str):
            raise ProtocolError("error.evalue must be a string", msg_id=msg_id)
    return KernelReply(msg_id, status, result=result, error=error)


def _decode_stream(d: dict, msg_id: str) -> StreamChunk:
    channel = d["channel"]
    if channel not in ("stdout", "stderr"):
        raise ProtocolError(f"bad stream channel {channel!r}", msg_id=msg_id)
    text = d.get("text")
    if not isinstance(text, str):
        raise ProtocolError("stream.text must be a string", msg_id=msg_id)
    extra = set(d) - {"msg_id", "channel", "text"}
    if extra:
        raise ProtocolError(f"unexpected stream fields: {sorted(extra)}", msg_id=msg_id)
    return StreamChunk(msg_id, channel, text)


def decode_frame(line: Union[bytes, str]) -> Message:
    """Parse one newline-terminated frame into its typed message.

    MalformedFrame: not UTF-8 / not JSON / not an object.
    ProtocolError: a JSON object that violates the message shapes; carries
    msg_id in details when one could be read.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"frame is not UTF-8: {exc}") from None
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(f"frame is not JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise MalformedFrame("frame is not a JSON object")
    msg_id = d.get("msg_id")
    if not isinstance(msg_id, str):
        raise ProtocolError("msg_id must be a string", msg_id="")
    if "op" in d:
        return _decode_request(d, msg_id)
    if "status" in d:
        return _decode_reply(d, msg_id)
    if "channel" in d:
        return _decode_stream(d, msg_id)
    raise ProtocolError("frame is neither request, reply, nor stream", msg_id=msg_id)


# -- kernel side (subprocess / socket peer) -----------------------------------


def serve_frames(kernel, fin: IO[bytes], fout: IO[bytes]):
    """Run a kernel behind a frame stream until EOF.

    `kernel` needs the embedded-kernel surface: eval_in_ns(ns, code, stream),
    add_import, delete_import, delete_names. One terminal reply per frame,
    streams in between; malformed input gets an error reply with msg_id ""
    and the loop keeps going.
    """
    write_lock = threading.Lock()

    def emit(msg: Message):
        with write_lock:
            fout.write(encode_frame(msg))
            fout.flush()

    for line in iter(fin.readline, b""):
        if not line.strip():
            continue
        try:
            msg = decode_frame(line)
        except MalformedFrame as exc:
            emit(KernelReply.fail("", "MalformedFrame", exc.message))
            continue
        except ProtocolError as exc:
            emit(KernelReply.fail(exc.details.get("msg_id") or "", "ProtocolError", exc.message))
            continue
        if not isinstance(msg, KernelRequest):
            emit(KernelReply.fail(msg.msg_id, "ProtocolError", "expected a request frame"))
            continue
        p = msg.payload
        try:
            if msg.op == "ping":
                emit(KernelReply.ok(msg.msg_id))
            elif msg.op == "eval_in_ns":
                def stream(channel: str, text: str):
                    emit(StreamChunk(msg.msg_id, channel, text))

                value = kernel.eval_in_ns(p["ns"], p["code"], stream=stream)
                emit(KernelReply.ok(msg.msg_id, None if value is None else render_value(value)))
            elif msg.op == "add_import":
                kernel.add_import(p["from"], p["to"], p["name"])
                emit(KernelReply.ok(msg.msg_id))
            elif msg.op == "delete_import":
                kernel.delete_import(p["ns"], p["name"])
                emit(KernelReply.ok(msg.msg_id))
            elif msg.op == "delete_names":
                kernel.delete_names(p["ns"], p["names"])
                emit(KernelReply.ok(msg.msg_id))
        except PodlangError as exc:
            emit(KernelReply.fail(msg.msg_id, exc.ename, exc.evalue))
        except Exception as exc:  # a kernel bug must not kill the transport
            emit(KernelReply.fail(msg.msg_id, "InternalError", f"{type(exc).__name__}: {exc}"))


def serve_stdio(kernel=None):
    """Entry point for `podhive kernel`: embedded kernel on stdin/stdout."""
    serve_frames(kernel or MiniKernel(), sys.stdin.buffer, sys.stdout.buffer)


def kernel_command() -> list[str]:
    """Launch argv for a subprocess kernel; PODHIVE_KERNEL_CMD overrides."""
    override = os.environ.get("PODHIVE_KERNEL_CMD")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "podhive", "kernel"]


# -- client side ---------------------------------------------------------------

StreamHandler = Callable[[StreamChunk], None]


@dataclass
class _Pending:
    msg_id: str
    on_stream: Optional[StreamHandler]
    done: threading.Event = field(default_factory=threading.Event)
    reply: Optional[KernelReply] = None
    failure: Optional[Exception] = None

    def resolve(self, reply: KernelReply):
        self.reply = reply
        self.done.set()

    def fail(self, exc: Exception):
        self.failure = exc
        self.done.set()


class KernelSession:
    """Client handle over a framed transport (subprocess stdio or socket).

    Requests may be pipelined: submit() queues and returns a handle, the
    reader thread resolves handles strictly in issue order. Any protocol
    violation from the peer (garbage, out-of-order reply, unknown msg_id)
    or a timeout poisons the session: every outstanding and future request
    fails, and the transport is torn down.
    """

    def __init__(
        self,
        reader: IO[bytes],
        writer: IO[bytes],
        *,
        timeout: float = DEFAULT_TIMEOUT,
        on_stream: Optional[StreamHandler] = None,
        proc: Optional[subprocess.Popen] = None,
    ):
        self._reader = reader
        self._writer = writer
        self._proc = proc
        self.default_timeout = timeout
        self.on_stream = on_stream
        self._pending: deque[_Pending] = deque()
        self._lock = threading.Lock()
        self._poison: Optional[Exception] = None
        self._closed = False
        self._seq = 0
        self._session_tag = uuid.uuid4().hex[:8]
        self._thread = threading.Thread(target=self._read_loop, daemon=True)
        self._thread.start()

    @classmethod
    def spawn(cls, cmd: Optional[list[str]] = None, **kw) -> "KernelSession":
        argv = cmd or kernel_command()
        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL
            )
        except OSError as exc:
            raise TransportClosed(f"cannot launch kernel {argv!r}: {exc}") from None
        return cls(proc.stdout, proc.stdin, proc=proc, **kw)

    # -- reader thread ----------------------------------------------------

    def _read_loop(self):
        while True:
            try:
                line = self._reader.readline()
            except (ValueError, OSError):
                line = b""
            if not line:
                self._die(TransportClosed("kernel closed the transport"))
                return
            if not line.strip():
                continue
            try:
                msg = decode_frame(line)
            except (MalformedFrame, ProtocolError) as exc:
                self._die(exc)
                return
            if isinstance(msg, StreamChunk):
                self._dispatch_stream(msg)
            elif isinstance(msg, KernelReply):
                with self._lock:
                    head = self._pending[0] if self._pending else None
                    if head is None or head.msg_id != msg.msg_id:
                        err = UnknownMsgId(
                            f"reply for {msg.msg_id!r} does not match the request queue",
                            msg_id=msg.msg_id,
                        )
                        self._die_locked(err)
                        return
                    self._pending.popleft()
                head.resolve(msg)
            else:  # a request frame from the peer is a role violation
                self._die(ProtocolError("peer sent a request frame", msg_id=msg.msg_id))
                return

    def _dispatch_stream(self, chunk: StreamChunk):
        handler = None
        with self._lock:
            for p in self._pending:
                if p.msg_id == chunk.msg_id:
                    handler = p.on_stream
                    break
        if handler is not None:
            handler(chunk)
        elif self.on_stream is not None:
            self.on_stream(chunk)

    def _die(self, exc: Exception):
        with self._lock:
            self._die_locked(exc)

    def _die_locked(self, exc: Exception):
        if self._poison is None:
            self._poison = exc
        doomed = list(self._pending)
        self._pending.clear()
        for p in doomed:
            p.fail(exc)

    # -- submission ---------------------------------------------------------

    def submit(
        self, op: str, payload: Optional[dict] = None, *, on_stream: Optional[StreamHandler] = None
    ) -> _Pending:
        if op not in _OPS:
            raise ProtocolError(f"unknown op {op!r}", op=op)
        with self._lock:
            if self._poison is not None:
                raise self._poison
            if self._closed:
                raise TransportClosed("session is closed")
            self._seq += 1
            msg_id = f"{self._session_tag}-{self._seq}"
            req = KernelRequest(msg_id, op, payload or {})
            frame = encode_frame(req)  # validate/encode before queueing
            pending = _Pending(msg_id, on_stream)
            self._pending.append(pending)
            try:
                self._writer.write(frame)
                self._writer.flush()
            except (OSError, ValueError):
                self._die_locked(TransportClosed("cannot write to kernel"))
        return pending

    def wait(self, pending: _Pending, timeout: Optional[float] = None) -> KernelReply:
        budget = self.default_timeout if timeout is None else timeout
        started = time.monotonic()
        if not pending.done.wait(budget):
            elapsed = time.monotonic() - started
            exc = Timeout(
                f"no reply to {pending.msg_id} after {elapsed:.1f}s",
                msg_id=pending.msg_id,
                elapsed=elapsed,
            )
            self._die(exc)  # FIFO is broken; nothing behind it can be trusted
            self.close()
            raise exc
        if pending.failure is not None:
            raise pending.failure
        return pending.reply

    def request(
        self,
        op: str,
        payload: Optional[dict] = None,
        *,
        timeout: Optional[float] = None,
        on_stream: Optional[StreamHandler] = None,
    ) -> KernelReply:
        return self.wait(self.submit(op, payload, on_stream=on_stream), timeout)

    def ping(self, timeout: Optional[float] = None) -> bool:
        return self.request("ping", timeout=timeout).status == "ok"

    @property
    def alive(self) -> bool:
        return self._poison is None and not self._closed

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        try:
            self._writer.close()
        except (OSError, ValueError):
            pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        try:
            self._reader.close()
        except (OSError, ValueError):
            pass
        self._thread.join(timeout=2)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


# -- uniform client surface for the orchestrator --------------------------------

OnStream = Callable[[str, str], None]  # (channel, text)


class LocalKernelClient:
    """In-process embedded kernel behind the client interface."""

    def __init__(self, kernel: Optional[MiniKernel] = None):
        self.kernel = kernel or MiniKernel()

    def eval_in_ns(self, ns, code, names=(), on_stream: Optional[OnStream] = None) -> Optional[str]:
        try:
            value = self.kernel.eval_in_ns(ns, code, stream=on_stream)
        except PodlangError as exc:
            raise KernelEvalError(exc.ename, exc.evalue) from None
        return None if value is None else render_value(value)

    def add_import(self, from_ns, to_ns, name):
        try:
            self.kernel.add_import(from_ns, to_ns, name)
        except PodlangError as exc:
            raise KernelEvalError(exc.ename, exc.evalue) from None

    def delete_import(self, ns, name):
        try:
            self.kernel.delete_import(ns, name)
        except PodlangError as exc:
            raise KernelEvalError(exc.ename, exc.evalue) from None

    def delete_names(self, ns, names):
        self.kernel.delete_names(ns, list(names))

    def ping(self) -> bool:
        return True

    def restart(self):
        self.kernel.reset()

    def close(self):
        pass


class RemoteKernelClient:
    """Subprocess/socket kernel behind the same interface.

    restart() tears the process down and launches a fresh one: remote kernel
    state only lives as long as its process.
    """

    def __init__(self, cmd: Optional[list[str]] = None, *, timeout: float = DEFAULT_TIMEOUT):
        self._cmd = cmd
        self._timeout = timeout
        self._session = KernelSession.spawn(cmd, timeout=timeout)

    @property
    def session(self) -> KernelSession:
        return self._session

    def _call(self, op, payload, on_stream: Optional[OnStream] = None) -> KernelReply:
        handler = None
        if on_stream is not None:
            handler = lambda chunk: on_stream(chunk.channel, chunk.text)
        reply = self._session.request(op, payload, on_stream=handler)
        if reply.status == "error":
            raise KernelEvalError(reply.error["ename"], reply.error["evalue"])
        return reply

    def eval_in_ns(self, ns, code, names=(), on_stream: Optional[OnStream] = None) -> Optional[str]:
        reply = self._call(
            "eval_in_ns", {"ns": ns, "code": code, "names": list(names)}, on_stream
        )
        return None if reply.result is None else reply.result["data"]

    def add_import(self, from_ns, to_ns, name):
        self._call("add_import", {"from": from_ns, "to": to_ns, "name": name})

    def delete_import(self, ns, name):
        self._call("delete_import", {"ns": ns, "name": name})

    def delete_names(self, ns, names):
        self._call("delete_names", {"ns": ns, "names": list(names)})

    def ping(self) -> bool:
        try:
            return self._session.ping()
        except (Timeout, TransportClosed):
            return False

    def restart(self):
        self._session.close()
        self._session = KernelSession.spawn(self._cmd, timeout=self._timeout)

    def close(self):
        self._session.close()
