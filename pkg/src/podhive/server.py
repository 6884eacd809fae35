"""HTTP service over one repo: snapshots, mutations, runs, live events.

Single-repo, single-process. Every mutation funnels through one writer lock,
so concurrent PATCHes serialize and responses carry a monotonically
increasing `seq` (last writer wins, clients detect races by comparing seq).
Responses and event frames use the same canonical JSON encoding as the
kernel wire protocol. Events go out at /events as NDJSON frames, over a
WebSocket upgrade or as a plain chunked GET; a consumer that cannot keep
up gets one terminal Lagged frame and is dropped.

The kernel client defaults to the in-process podlang kernel; set
PODHIVE_KERNEL_CMD to run evaluations in a subprocess instead.
"""

from __future__ import annotations

import asyncio
import json
import os
import shutil
import subprocess
import tempfile
import threading
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, File, Request, UploadFile, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import Response, StreamingResponse

from . import importer, store
from .errors import InvalidTree, PodhiveError, SchemaError
from .model import NodeKind, Tree
from .names import extractor_for
from .orchestrator import Orchestrator
from .protocol import LocalKernelClient, RemoteKernelClient, canonical_json

_STATUS_FOR = {
    "UnknownNode": 404,
    "UnknownParent": 404,
    "NoSuchSegment": 404,
    "RepoLocked": 409,
    "KernelUnavailable": 503,
    "Timeout": 503,
    "TransportClosed": 503,
}

def _http_status(exc: PodhiveError) -> int:
    return _STATUS_FOR.get(exc.code, 400)


def cjson(payload, status: int = 200) -> Response:
    return Response(
        canonical_json(payload) + "\n",
        status_code=status,
        media_type="application/json",
    )


# --- event fan-out -----------------------------------------------------------

class _Subscriber:
    def __init__(self, loop: asyncio.AbstractEventLoop, capacity: int):
        self.loop = loop
        self.queue: asyncio.Queue = asyncio.Queue(maxsize=capacity)
        self.dead = False

    def offer(self, event: dict):
        if self.dead:
            return
        self.loop.call_soon_threadsafe(self._put, event)

    def _put(self, event: dict):
        if self.dead:
            return
        try:
            self.queue.put_nowait(event)
        except asyncio.QueueFull:
            self.dead = True
            try:
                self.queue.get_nowait()
            except asyncio.QueueEmpty:
                pass
            self.queue.put_nowait(
                {"seq": event["seq"], "kind": "Lagged", "body": {"reason": "consumer too slow"}}
            )


class EventHub:
    """Broadcasts ApiEvents; every subscriber sees the same seq numbering."""

    def __init__(self, capacity: int = 512):
        self._lock = threading.Lock()
        self._seq = 0
        self._subs: list[_Subscriber] = []
        self._capacity = capacity

    def publish(self, kind: str, body: dict) -> int:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "kind": kind, "body": body}
            for sub in self._subs:
                sub.offer(event)
            return self._seq

    def subscribe(self, loop: asyncio.AbstractEventLoop) -> _Subscriber:
        sub = _Subscriber(loop, self._capacity)
        with self._lock:
            self._subs.append(sub)
        return sub

    def drop(self, sub: _Subscriber):
        sub.dead = True
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)


# --- application state -------------------------------------------------------

def _default_client():
    if os.environ.get("PODHIVE_KERNEL_CMD"):
        return RemoteKernelClient()
    return LocalKernelClient()


class AppState:
    def __init__(self, repo: str | os.PathLike, *, client=None):
        path = Path(repo)
        if path.suffix == ".json":
            self.repo_file = path
        else:
            self.repo_file = path / store.DOCUMENT_NAME
        self.kernel_language = "podlang"
        if self.repo_file.exists():
            data = self.repo_file.read_bytes()
            self.tree = store.load(data)
            self.kernel_language = store.kernel_language_of(data)
        else:
            self.tree = Tree.new()
        self.lock = threading.RLock()
        self.hub = EventHub()
        self.last_graph: Optional[importer.CallGraph] = None
        self.orch = Orchestrator(
            self.tree,
            client if client is not None else _default_client(),
            ext=extractor_for(self.kernel_language),
            events=self._orch_event,
        )

    def _orch_event(self, event: dict):
        kind = event.get("type")
        if kind == "pod_status":
            self.hub.publish(
                "PodStatusChanged", {"node": event["node"], "status": event["status"]}
            )
        elif kind == "stream":
            self.hub.publish(
                "StreamOutput",
                {"node": event["node"], "channel": event["channel"], "text": event["text"]},
            )
        elif kind == "kernel_restarted":
            self.hub.publish("TreeChanged", {"op": "kernel_restarted"})

    # every mutation emits exactly one TreeChanged; the returned seq is the
    # mutation's position in the total order and echoes back to the caller
    def tree_changed(self, op: str, node: Optional[str] = None) -> int:
        body = {"op": op}
        if node is not None:
            body["node"] = node
        return self.hub.publish("TreeChanged", body)

    def snapshot(self) -> dict:
        nodes = [n.to_dict() for n in self.tree.walk()]
        statuses = {
            nid: st.as_dict()
            for nid, st in self.orch.statuses().items()
            if nid in self.tree.nodes
        }
        return {
            "root": self.tree.root_id,
            "kernel_language": self.kernel_language,
            "nodes": nodes,
            "statuses": statuses,
        }

    def baseline_tree(self) -> Tree:
        if self.repo_file.exists():
            return store.load(self.repo_file.read_bytes())
        return Tree.new()


# --- endpoints ---------------------------------------------------------------

def create_app(repo: str | os.PathLike, *, client=None) -> FastAPI:
    state = AppState(repo, client=client)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        state.orch.close()

    app = FastAPI(lifespan=lifespan, openapi_url=None, docs_url=None, redoc_url=None)
    app.state.podhive = state

    @app.exception_handler(PodhiveError)
    async def podhive_error(_req: Request, exc: PodhiveError):
        return cjson(exc.to_payload(), status=_http_status(exc))

    @app.exception_handler(RequestValidationError)
    async def bad_request(_req: Request, exc: RequestValidationError):
        return cjson({"code": "BadRequest", "message": str(exc)}, status=400)

    @app.exception_handler(Exception)
    async def internal_error(_req: Request, exc: Exception):
        return cjson({"code": "Internal", "message": str(exc)}, status=500)

    @app.get("/tree")
    def get_tree():
        with state.lock:
            return cjson(state.snapshot())

    @app.post("/nodes")
    def create_node(payload: dict = Body(...)):
        kind = payload.get("kind")
        if kind not in ("Deck", "Pod"):
            raise InvalidTree("kind must be Deck or Pod", field="kind")
        parent = payload.get("parent")
        if not isinstance(parent, str):
            raise InvalidTree("parent node id required", field="parent")
        index = payload.get("index")
        if index is not None and not isinstance(index, int):
            raise InvalidTree("index must be an integer", field="index")
        with state.lock:
            node = state.tree.create_node(
                NodeKind(kind),
                parent,
                index,
                name=payload.get("name"),
                code=payload.get("code", ""),
            )
            flags = payload.get("flags") or {}
            if flags:
                try:
                    state.tree.set_flags(
                        node.id,
                        public=flags.get("public"),
                        utility=flags.get("utility"),
                        test=flags.get("test"),
                    )
                except PodhiveError:
                    state.tree.delete_node(node.id)
                    raise
            state.orch.resync()
            seq = state.tree_changed("create", node.id)
            return cjson({"node": node.to_dict(), "seq": seq})

    @app.patch("/nodes/{node_id}")
    def patch_node(node_id: str, payload: dict = Body(...)):
        with state.lock:
            node = state.tree.node(node_id)
            needs_resync = False
            if "name" in payload:
                old_ns = {
                    n.id: state.tree.namespace_of(n.id)
                    for n in state.tree.walk(node.id)
                }
                state.tree.rename_deck(node.id, payload["name"])
                state.orch.retarget_namespaces(old_ns)
            if "move" in payload:
                move = payload["move"] or {}
                if not isinstance(move, dict) or "parent" not in move:
                    raise InvalidTree("move requires {parent, index?}", field="move")
                old_ns = {
                    n.id: state.tree.namespace_of(n.id)
                    for n in state.tree.walk(node.id)
                }
                state.tree.move_node(node.id, move["parent"], move.get("index"))
                state.orch.retarget_namespaces(old_ns)
                needs_resync = True
            if "flags" in payload:
                flags = payload["flags"] or {}
                old_ns = {node.id: state.tree.namespace_of(node.id)}
                state.tree.set_flags(
                    node.id,
                    public=flags.get("public"),
                    utility=flags.get("utility"),
                    test=flags.get("test"),
                )
                state.orch.retarget_namespaces(old_ns)
                needs_resync = True
            if "reexports" in payload:
                exports = payload["reexports"]
                if not isinstance(exports, list) or not all(
                    isinstance(x, str) for x in exports
                ):
                    raise InvalidTree("reexports must be a list of names", field="reexports")
                state.tree.set_reexports(node.id, exports)
                needs_resync = True
            if "folded" in payload:
                state.tree.set_folded(node.id, bool(payload["folded"]))
            if "code" in payload:
                code = payload["code"]
                if not isinstance(code, str):
                    raise InvalidTree("code must be a string", field="code")
                state.tree.set_code(node.id, code)
                state.orch.mark_stale(node.id)
            if needs_resync:
                state.orch.resync()
            seq = state.tree_changed("patch", node.id)
            return cjson({"node": state.tree.node(node_id).to_dict(), "seq": seq})

    @app.delete("/nodes/{node_id}")
    def delete_node(node_id: str):
        with state.lock:
            state.tree.node(node_id)
            removed = state.orch.delete_subtree(node_id)
            seq = state.tree_changed("delete", node_id)
            return cjson({"deleted": removed, "seq": seq})

    @app.post("/run/pod/{node_id}")
    def run_pod(node_id: str):
        with state.lock:
            node = state.tree.node(node_id)
            if node.is_deck:
                raise InvalidTree("expected a pod id; use /run/tree for decks", node=node_id)
            status = state.orch.reeval_pod(node_id)
            return cjson({"node": node_id, "status": status.as_dict()})

    @app.post("/run/tree/{node_id}")
    def run_tree(node_id: str):
        with state.lock:
            state.tree.node(node_id)
            trace = state.orch.run_tree(node_id)
            for step, (nid, status) in enumerate(trace):
                state.hub.publish(
                    "RunTraceStep",
                    {"step": step, "node": nid, "status": status.as_dict()},
                )
            return cjson(
                {
                    "trace": [
                        {"node": nid, "status": status.as_dict()}
                        for nid, status in trace
                    ]
                }
            )

    @app.post("/kernel/restart")
    def kernel_restart():
        with state.lock:
            state.orch.restart_kernel()
            return cjson({"ok": True})

    @app.get("/diff")
    def working_diff():
        with state.lock:
            baseline = state.baseline_tree()
            current = state.tree
            report, raw = _pod_level_diff(baseline, current)
            return cjson(
                {
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
                    "raw": raw,
                }
            )

    @app.post("/import/callgraph")
    def import_callgraph(file: UploadFile = File(...)):
        try:
            doc = json.loads(file.file.read().decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise SchemaError(f"$: not valid JSON ({exc})", path="$") from exc
        graph = importer.parse_callgraph(doc)
        with state.lock:
            result = importer.convert_graph(graph)
            state.orch.restart_kernel()
            state.tree = result.tree
            state.orch.tree = result.tree
            state.orch.ext = importer.EXTRACTOR
            state.kernel_language = "callgraph"
            state.last_graph = graph
            seq = state.tree_changed("import")
            return cjson(
                {
                    "tree": state.snapshot(),
                    "roles": result.roles,
                    "warnings": result.warnings,
                    "seq": seq,
                }
            )

    @app.get("/stats/callgraph")
    def stats_callgraph():
        with state.lock:
            if state.last_graph is None:
                return cjson(
                    {"code": "NotFound", "message": "no call graph imported yet"},
                    status=404,
                )
            return cjson(importer.stats_report(state.last_graph))

    @app.get("/export/files")
    def export_files():
        with state.lock:
            tmp = tempfile.mkdtemp(prefix="podhive-export-")
            try:
                manifest = store.export_files(state.tree, tmp)
                files = {}
                base = Path(tmp)
                for path in sorted(base.rglob("*")):
                    if path.is_file():
                        files[path.relative_to(base).as_posix()] = path.read_text(
                            encoding="utf-8"
                        )
                return cjson({"paths": dict(manifest.by_id), "files": files})
            finally:
                shutil.rmtree(tmp, ignore_errors=True)

    @app.get("/events")
    async def events_http():
        # chunked-NDJSON twin of the WebSocket stream, for clients without
        # a WS implementation; same frames, same Lagged-then-drop policy
        sub = state.hub.subscribe(asyncio.get_running_loop())

        async def frames():
            try:
                while True:
                    event = await sub.queue.get()
                    if event.get("kind") == "_closed":
                        break
                    yield (canonical_json(event) + "\n").encode("utf-8")
                    if event.get("kind") == "Lagged":
                        break
            finally:
                state.hub.drop(sub)

        return StreamingResponse(frames(), media_type="application/x-ndjson")

    @app.websocket("/events")
    async def events(ws: WebSocket):
        await ws.accept()
        sub = state.hub.subscribe(asyncio.get_running_loop())

        async def watch_disconnect():
            # inbound frames are ignored; this only notices the close
            try:
                while True:
                    await ws.receive_text()
            except Exception:
                sub.dead = True
                try:
                    sub.queue.put_nowait({"kind": "_closed"})
                except asyncio.QueueFull:
                    pass

        watcher = asyncio.ensure_future(watch_disconnect())
        try:
            while True:
                event = await sub.queue.get()
                if event.get("kind") == "_closed":
                    break
                await ws.send_text(canonical_json(event) + "\n")
                if event.get("kind") == "Lagged":
                    break
        except WebSocketDisconnect:
            pass
        finally:
            watcher.cancel()
            state.hub.drop(sub)
            try:
                await ws.close()
            except Exception:
                pass

    return app


def _pod_level_diff(baseline: Tree, current: Tree):
    """Export both trees and let git produce the unified diff pod_diff maps."""
    tmp = tempfile.mkdtemp(prefix="podhive-diff-")
    try:
        old_dir = os.path.join(tmp, "old")
        new_dir = os.path.join(tmp, "new")
        os.makedirs(old_dir)
        os.makedirs(new_dir)
        store.export_files(baseline, old_dir)
        manifest = store.export_files(current, new_dir)
        proc = subprocess.run(
            [
                "git",
                "-c",
                "core.quotepath=false",
                "diff",
                "--no-index",
                "--no-renames",
                "old",
                "new",
            ],
            cwd=tmp,
            capture_output=True,
            text=True,
        )
        if proc.returncode not in (0, 1):
            raise RuntimeError(f"git diff failed: {proc.stderr.strip()}")
        raw = proc.stdout.replace("a/old/", "a/").replace("b/new/", "b/")
        return store.pod_diff(manifest, raw), raw
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
