"""The shared kernel conformance suite, run on the embedded kernel.

Each case starts on a fresh kernel and asserts semantics only: rendered
result text, concatenated stdout, and abstract error classes. The same
cases drive any external kernel over the wire, so this file is what keeps
the suite itself honest.
"""

import json
from pathlib import Path

import pytest

from podhive.errors import KernelEvalError
from podhive.protocol import LocalKernelClient, RemoteKernelClient

SUITE = json.loads(
    (Path(__file__).resolve().parents[1] / "conformance" / "cases.json").read_text()
)
LANE = "podlang"


def pick(field):
    """Per-language value: plain scalars apply to every lane."""
    if isinstance(field, dict):
        return field[LANE]
    return field


def run_step(client, step):
    """Execute one step, returning (status, value, stdout, ename)."""
    chunks = []

    def on_stream(channel, text):
        if channel == "stdout":
            chunks.append(text)

    try:
        if step["op"] == "ping":
            assert client.ping() is True
            value = None
        elif step["op"] == "eval_in_ns":
            value = client.eval_in_ns(step["ns"], pick(step["code"]), on_stream=on_stream)
        elif step["op"] == "add_import":
            client.add_import(step["from"], step["to"], step["name"])
            value = None
        elif step["op"] == "delete_import":
            client.delete_import(step["ns"], step["name"])
            value = None
        elif step["op"] == "delete_names":
            client.delete_names(step["ns"], step["names"])
            value = None
        else:
            raise AssertionError(f"unknown op {step['op']!r}")
    except KernelEvalError as exc:
        return ("error", None, "".join(chunks), exc.ename)
    return ("ok", value, "".join(chunks), None)


def check_case(client_factory, case):
    client = client_factory()
    try:
        for i, step in enumerate(case["steps"]):
            status, value, stdout, ename = run_step(client, step)
            expect = step["expect"]
            where = f"{case['id']} step {i}"
            assert status == expect["status"], f"{where}: {status} ({ename})"
            if "value" in expect:
                assert value == pick(expect["value"]), f"{where}: value {value!r}"
            if "stdout" in expect:
                assert stdout == pick(expect["stdout"]), f"{where}: stdout {stdout!r}"
            if expect["status"] == "error":
                allowed = SUITE["error_classes"][expect["error_class"]]
                assert ename in allowed, f"{where}: ename {ename} not in {allowed}"
    finally:
        client.close()


@pytest.mark.parametrize("case", SUITE["cases"], ids=lambda c: c["id"])
def test_conformance_in_process(case):
    check_case(LocalKernelClient, case)


@pytest.mark.parametrize("case", SUITE["cases"], ids=lambda c: c["id"])
def test_conformance_over_stdio(case):
    check_case(RemoteKernelClient, case)


def test_suite_shape():
    ids = [c["id"] for c in SUITE["cases"]]
    assert len(ids) == len(set(ids))
    assert len(ids) >= 20
    for case in SUITE["cases"]:
        for step in case["steps"]:
            expect = step["expect"]
            assert expect["status"] in ("ok", "error")
            if expect["status"] == "error":
                assert expect["error_class"] in SUITE["error_classes"]
