"""Command line interface.

Exit codes: 0 success, 1 user error (bad usage, bad input, missing file),
2 internal failure (lost kernel, unexpected exception). Usage problems print
to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

from . import importer, store
from .errors import KernelUnavailable, PodhiveError, Timeout, TransportClosed


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract here says 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="podhive", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument(
        "--port",
        type=int,
        default=int(os.environ.get("PODHIVE_PORT", "8787")),
        help="listen port (default: PODHIVE_PORT or 8787)",
    )
    serve.add_argument(
        "--repo",
        default=os.environ.get("PODHIVE_REPO", "."),
        help="repo directory or document file (default: PODHIVE_REPO or .)",
    )
    serve.set_defaults(func=cmd_serve)

    run = sub.add_parser("run", help="evaluate a repo")
    run.add_argument("path", help="repo directory or .codepod.json document")
    target = run.add_mutually_exclusive_group()
    target.add_argument("--pod", help="run a single pod by id")
    target.add_argument("--deck", help="run one deck subtree by id")
    run.set_defaults(func=cmd_run)

    export = sub.add_parser(
        "export", help="write the repo out as one file per pod"
    )
    export.add_argument("path", help="repo directory or document file")
    export.add_argument("--out", required=True, help="target directory")
    export.set_defaults(func=cmd_export)

    diff = sub.add_parser(
        "diff", help="map a unified diff onto pods"
    )
    diff.add_argument("path", help="export directory (holding _manifest.json)")
    diff.set_defaults(func=cmd_diff)

    imp = sub.add_parser(
        "import-callgraph", help="turn a call graph into a repo"
    )
    imp.add_argument("graph", help="call-graph JSON file")
    imp.add_argument("--out", required=True, help="repo directory to create")
    imp.set_defaults(func=cmd_import_callgraph)

    stats = sub.add_parser(
        "stats", help="call-graph statistics"
    )
    stats.add_argument("graph", help="call-graph JSON file")
    fmt = stats.add_mutually_exclusive_group()
    fmt.add_argument("--csv", action="store_true", help="emit the per-function CSV")
    fmt.add_argument("--json", action="store_true", help="emit the JSON report (default)")
    stats.set_defaults(func=cmd_stats)

    kernel = sub.add_parser(
        "kernel", help="run the embedded kernel on stdio"
    )
    kernel.set_defaults(func=cmd_kernel)

    return parser


def _load_tree(path: str):
    p = Path(path)
    if p.is_dir():
        return store.load_repo(str(p))
    return store.load(p.read_bytes())


def _repo_language(path: str) -> str:
    p = Path(path)
    if p.is_dir():
        p = p / store.DOCUMENT_NAME
    try:
        return store.kernel_language_of(p.read_bytes())
    except OSError:
        return "podlang"


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.repo)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return 0


def cmd_run(args) -> int:
    from .names import extractor_for
    from .orchestrator import Orchestrator

    tree = _load_tree(args.path)
    # the stored language picks the extractor, same as the server does
    orch = Orchestrator(tree, ext=extractor_for(_repo_language(args.path)))
    try:
        if args.pod:
            status = orch.reeval_pod(args.pod)
            trace = [(args.pod, status)]
        else:
            trace = orch.run_tree(args.deck if args.deck else None)
        for node_id, status in trace:
            line = f"{node_id} {status.state.value}"
            if status.last_result is not None:
                line += f" {status.last_result['data']}"
            elif status.last_error is not None:
                line += f" {status.last_error['ename']}: {status.last_error['evalue']}"
            print(line)
    finally:
        orch.close()
    return 0


def cmd_export(args) -> int:
    tree = _load_tree(args.path)
    manifest = store.export_files(tree, args.out)
    pods = sum(1 for rel in manifest.by_id.values() if rel.endswith(".pod"))
    print(f"exported {pods} pods to {args.out}")
    return 0


def cmd_diff(args) -> int:
    manifest = store.Manifest.read(args.path)
    if sys.stdin.isatty():
        proc = subprocess.run(
            ["git", "-C", args.path, "-c", "core.quotepath=false", "diff", "HEAD"],
            capture_output=True,
            text=True,
        )
        if proc.returncode not in (0, 1):
            print(f"podhive diff: git failed: {proc.stderr.strip()}", file=sys.stderr)
            return 1
        diff_text = proc.stdout
    else:
        diff_text = sys.stdin.read()
    report = store.pod_diff(manifest, diff_text)
    doc = {
        "pods": [
            {
                "pod": p.pod,
                "change": p.change,
                "hunks": [
                    {
                        "old_range": list(h.old_range),
                        "new_range": list(h.new_range),
                        "lines": list(h.lines),
                    }
                    for h in p.hunks
                ],
            }
            for p in report.pods
        ],
        "metadata_paths": report.metadata_paths,
        "unknown_paths": report.unknown_paths,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_import_callgraph(args) -> int:
    graph = importer.load_callgraph(args.graph)
    result = importer.convert_graph(graph)
    store.save_repo(result.tree, args.out, kernel_language="callgraph")
    decks = sum(1 for n in result.tree.walk() if n.is_deck) - 1
    print(
        f"imported {len(result.pods)} functions into {decks} decks at {args.out}"
    )
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    graph = importer.load_callgraph(args.graph)
    if args.csv:
        sys.stdout.write(importer.stats_csv(graph))
    else:
        print(json.dumps(importer.stats_report(graph), indent=2, sort_keys=True))
    return 0


def cmd_kernel(args) -> int:
    from . import protocol

    protocol.serve_stdio()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (KernelUnavailable, Timeout, TransportClosed) as exc:
        print(f"podhive: kernel failure: {exc}", file=sys.stderr)
        return 2
    except PodhiveError as exc:
        print(f"podhive: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"podhive: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # anything else is a bug, not a user mistake
        import traceback

        traceback.print_exc()
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
