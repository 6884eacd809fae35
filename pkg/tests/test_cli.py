import io
import json
import subprocess
import sys

import pytest

from podhive import store
from podhive.cli import main
from podhive.model import Tree

from fixtures import POD, compiler_tree, nested_tree


CORPUS = "tests/data/synthetic_corpus.json"


def test_run_repo_directory(tmp_path, capsys):
    t, h = compiler_tree()
    store.save_repo(t, str(tmp_path))
    assert main(["run", str(tmp_path)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    pod_count = sum(1 for n in t.walk() if n.is_pod)
    assert len(out) == pod_count
    by_id = {line.split()[0]: line for line in out}
    assert "Ok" in by_id[h["p_compile"]]


def test_run_document_file_single_pod(tmp_path, capsys):
    t = Tree.new()
    pod = t.create_node(POD, t.root.id, code="40 + 2")
    doc = tmp_path / "solo.codepod.json"
    doc.write_bytes(store.save(t))
    assert main(["run", str(doc), "--pod", pod.id]) == 0
    out = capsys.readouterr().out.strip()
    assert out == f"{pod.id} Ok 42"


def test_run_deck_subtree(tmp_path, capsys):
    t, h = nested_tree()
    store.save_repo(t, str(tmp_path))
    assert main(["run", str(tmp_path), "--deck", h["C"]]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert {line.split()[0] for line in out} == {h["pc1"], h["pc2"], h["pc3"], h["pc4"]}


def test_run_reports_errors_inline(tmp_path, capsys):
    t = Tree.new()
    t.create_node(POD, t.root.id, code="nope + 1")
    doc = tmp_path / "bad.codepod.json"
    doc.write_bytes(store.save(t))
    assert main(["run", str(doc)]) == 0  # the run succeeded; the pod failed
    assert "Error UndefinedName" in capsys.readouterr().out


def test_run_missing_path_exits_1(tmp_path, capsys):
    assert main(["run", str(tmp_path / "ghost")]) == 1
    assert "podhive:" in capsys.readouterr().err


def test_stats_csv_matches_fixture(capsys):
    assert main(["stats", CORPUS, "--csv"]) == 0
    with open("tests/data/stats_fixture.json", encoding="utf-8") as fh:
        frozen = json.load(fh)
    assert capsys.readouterr().out == frozen["csv"]


def test_stats_json_matches_fixture(capsys):
    assert main(["stats", CORPUS]) == 0
    with open("tests/data/stats_fixture.json", encoding="utf-8") as fh:
        frozen = json.load(fh)
    assert json.loads(capsys.readouterr().out) == frozen


def test_stats_schema_error_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"functions": "nope"}')
    assert main(["stats", str(bad)]) == 1
    assert "SchemaError" in capsys.readouterr().err


def test_export_writes_files(tmp_path, capsys):
    t, _ = nested_tree()
    repo = tmp_path / "repo"
    store.save_repo(t, str(repo))
    out = tmp_path / "out"
    assert main(["export", str(repo), "--out", str(out)]) == 0
    pod_count = sum(1 for n in t.walk() if n.is_pod)
    assert f"exported {pod_count} pods" in capsys.readouterr().out
    assert store.save(store.import_files(str(out))) == store.save(t)


def test_import_callgraph_creates_repo(tmp_path, capsys):
    out = tmp_path / "imported"
    assert main(["import-callgraph", CORPUS, "--out", str(out)]) == 0
    assert "imported 14 functions" in capsys.readouterr().out
    data = (out / "repo.codepod.json").read_bytes()
    assert store.kernel_language_of(data) == "callgraph"
    store.load(data).validate()


def test_diff_reads_stdin(tmp_path, capsys, monkeypatch):
    t, h = nested_tree()
    d = str(tmp_path)
    store.export_files(t, d)
    rel = store.Manifest.read(d).by_id[h["pb1"]]
    diff_text = (
        f"diff --git a/{rel} b/{rel}\n"
        f"--- a/{rel}\n"
        f"+++ b/{rel}\n"
        "@@ -1,1 +1,1 @@\n"
        "-old line\n"
        "+new line\n"
    )
    monkeypatch.setattr(sys, "stdin", io.StringIO(diff_text))
    assert main(["diff", d]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [(p["pod"], p["change"]) for p in doc["pods"]] == [(h["pb1"], "Modified")]
    assert doc["pods"][0]["hunks"][0]["lines"] == ["-old line", "+new line"]


def test_diff_without_manifest_exits_1(tmp_path, capsys):
    assert main(["diff", str(tmp_path)]) == 1
    assert "IoFailure" in capsys.readouterr().err


def cli(*args, **kw):
    return subprocess.run(
        [sys.executable, "-m", "podhive", *args],
        capture_output=True,
        text=True,
        timeout=60,
        **kw,
    )


def test_unknown_subcommand_usage_to_stderr():
    proc = cli("frobnicate")
    assert proc.returncode == 1
    assert "usage:" in proc.stderr
    assert proc.stdout == ""


def test_no_subcommand_exits_1():
    proc = cli()
    assert proc.returncode == 1
    assert "usage:" in proc.stderr


def test_conflicting_run_targets_exit_1(tmp_path):
    t = Tree.new()
    doc = tmp_path / "t.codepod.json"
    doc.write_bytes(store.save(t))
    proc = cli("run", str(doc), "--pod", "x", "--deck", "y")
    assert proc.returncode == 1
    assert "not allowed with" in proc.stderr


def test_internal_failures_exit_2(monkeypatch, capsys):
    from podhive import cli as climod

    def boom(args):
        raise RuntimeError("boom")

    monkeypatch.setattr(climod, "cmd_stats", boom)
    assert climod.main(["stats", CORPUS]) == 2
    assert "boom" in capsys.readouterr().err
