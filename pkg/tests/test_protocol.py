import io
import json
import subprocess
import sys
import threading
from pathlib import Path

import pytest

from podhive.errors import (
    KernelEvalError,
    MalformedFrame,
    ProtocolError,
    SerializationFailure,
    Timeout,
    TransportClosed,
)
from podhive.protocol import (
    KernelReply,
    KernelRequest,
    LocalKernelClient,
    RemoteKernelClient,
    StreamChunk,
    canonical_json,
    decode_frame,
    encode_frame,
    kernel_command,
    serve_frames,
)

DATA = Path(__file__).parent / "data"


def rebuild(case) -> object:
    msg = case["msg"]
    if case["kind"] == "request":
        return KernelRequest(msg["msg_id"], msg["op"], msg["payload"])
    if case["kind"] == "reply":
        return KernelReply(msg["msg_id"], msg["status"], result=msg.get("result"), error=msg.get("error"))
    return StreamChunk(msg["msg_id"], msg["channel"], msg["text"])


# -- encoding -------------------------------------------------------------------

def test_canonical_json_shape():
    s = canonical_json({"b": 1, "a": [2, {"z": "é"}]})
    assert s == '{"a":[2,{"z":"é"}],"b":1}'


def test_encode_frame_is_one_canonical_line():
    raw = encode_frame(KernelRequest("m", "ping", {}))
    assert raw == b'{"msg_id":"m","op":"ping","payload":{}}\n'
    assert raw.count(b"\n") == 1


def test_golden_frames_byte_for_byte():
    cases = json.loads((DATA / "protocol_golden_cases.json").read_text())
    golden = (DATA / "protocol_golden.ndjson").read_bytes().splitlines(keepends=True)
    assert len(cases) == len(golden) == 20
    for case, want in zip(cases, golden):
        assert encode_frame(rebuild(case)) == want


def test_decode_rejects_garbage():
    with pytest.raises(MalformedFrame):
        decode_frame(b"\xff\xfe")
    with pytest.raises(MalformedFrame):
        decode_frame(b"not json\n")
    with pytest.raises(MalformedFrame):
        decode_frame(b"[1,2]\n")
    with pytest.raises(ProtocolError):
        decode_frame(b'{"msg_id":"m"}\n')
    with pytest.raises(ProtocolError):
        decode_frame(b'{"msg_id":"m","op":"warp","payload":{}}\n')
    with pytest.raises(ProtocolError):
        decode_frame(b'{"msg_id":"m","op":"eval_in_ns","payload":{"ns":"/a"}}\n')


def test_unserializable_payload():
    with pytest.raises(SerializationFailure):
        encode_frame(KernelRequest("m", "ping", {"x": object()}))


# -- server loop ------------------------------------------------------------------

def run_loop(frames: bytes) -> list:
    from podhive.podlang import MiniKernel

    fout = io.BytesIO()
    serve_frames(MiniKernel(), io.BytesIO(frames), fout)
    return [json.loads(line) for line in fout.getvalue().splitlines()]


def test_serve_frames_round():
    frames = (
        encode_frame(KernelRequest("1", "ping", {}))
        + encode_frame(KernelRequest("2", "eval_in_ns", {"ns": "/a", "code": "let x = 4;\nx", "names": ["x"]}))
        + encode_frame(KernelRequest("3", "eval_in_ns", {"ns": "/b", "code": "x", "names": []}))
        + encode_frame(KernelRequest("4", "add_import", {"from": "/a", "to": "/b", "name": "x"}))
        + encode_frame(KernelRequest("5", "eval_in_ns", {"ns": "/b", "code": "x", "names": []}))
    )
    out = run_loop(frames)
    assert [o["msg_id"] for o in out] == ["1", "2", "3", "4", "5"]
    assert out[1]["result"]["data"] == "4"
    assert out[2]["status"] == "error" and out[2]["error"]["ename"] == "UndefinedName"
    assert out[4]["result"]["data"] == "4"


def test_serve_frames_streams_before_reply():
    frames = encode_frame(
        KernelRequest("9", "eval_in_ns", {"ns": "/a", "code": "print(3)", "names": []})
    )
    out = run_loop(frames)
    assert out[0] == {"msg_id": "9", "channel": "stdout", "text": "3\n"}
    assert out[1]["status"] == "ok"


def test_serve_frames_survives_garbage():
    frames = b"???\n" + encode_frame(KernelRequest("1", "ping", {}))
    out = run_loop(frames)
    assert out[0]["status"] == "error"
    assert out[1] == {"msg_id": "1", "status": "ok"}


# -- clients ----------------------------------------------------------------------

def test_local_client_surface():
    c = LocalKernelClient()
    try:
        assert c.ping() is True
        assert c.eval_in_ns("/a", "let y = 1;\ny + 1") == "2"
        chunks = []
        c.eval_in_ns("/a", "print(8)", on_stream=lambda ch, tx: chunks.append((ch, tx)))
        assert chunks == [("stdout", "8\n")]
        c.add_import("/a", "/b", "y")
        assert c.eval_in_ns("/b", "y") == "1"
        c.delete_names("/b", ["y"])
        with pytest.raises(KernelEvalError) as err:
            c.eval_in_ns("/b", "y")
        assert err.value.ename == "UndefinedName"
        c.restart()
        with pytest.raises(KernelEvalError):
            c.eval_in_ns("/a", "y")
    finally:
        c.close()


@pytest.fixture(scope="module")
def remote():
    client = RemoteKernelClient(timeout=20)
    yield client
    client.close()


def test_remote_client_matches_local(remote):
    assert remote.ping() is True
    assert remote.eval_in_ns("/a", "let z = 6;\nz * 7") == "42"
    chunks = []
    remote.eval_in_ns("/a", 'print("hi")', on_stream=lambda ch, tx: chunks.append((ch, tx)))
    assert chunks == [("stdout", "hi\n")]
    remote.add_import("/a", "/c", "z")
    assert remote.eval_in_ns("/c", "z") == "6"
    with pytest.raises(KernelEvalError) as err:
        remote.eval_in_ns("/c", "1 / 0")
    assert err.value.ename == "DivideByZero"


def test_remote_restart_wipes_state(remote):
    remote.eval_in_ns("/keep", "let q = 1;")
    remote.restart()
    with pytest.raises(KernelEvalError):
        remote.eval_in_ns("/keep", "q")


def test_remote_pipelined_requests_keep_order(remote):
    results = [None] * 8
    def work(i):
        results[i] = remote.eval_in_ns("/fifo", f"{i} * 10")
    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert results == [str(i * 10) for i in range(8)]


def test_dead_transport_raises():
    client = RemoteKernelClient(timeout=5)
    client._session._proc.kill()
    client._session._proc.wait(timeout=10)
    assert client.ping() is False  # health check reports, never raises
    with pytest.raises((TransportClosed, Timeout)):
        client.eval_in_ns("/a", "1")
    client.close()


def test_kernel_command_env_override(monkeypatch):
    monkeypatch.setenv("PODHIVE_KERNEL_CMD", "mykernel --flag 'a b'")
    assert kernel_command() == ["mykernel", "--flag", "a b"]
    monkeypatch.delenv("PODHIVE_KERNEL_CMD")
    assert kernel_command()[0] == sys.executable


def test_cli_kernel_subprocess_speaks_protocol():
    proc = subprocess.run(
        [sys.executable, "-m", "podhive", "kernel"],
        input=encode_frame(KernelRequest("p", "ping", {})),
        capture_output=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout.splitlines()[0]) == {"msg_id": "p", "status": "ok"}
