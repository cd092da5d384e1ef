"""Embedded HTTP service: training status, the live annotation queue, and
static hosting for the browser annotator.

Handlers run on server threads; shared state is limited to the lock-guarded
status board, the annotation inbox, and immutable dataset features.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .data import CLASS_NAMES, Dataset
from .hil import AnnotationInbox


class StatusBoard:
    """Thread-safe snapshot of run progress; doubles as the trainer observer."""

    def __init__(self, server=None):
        self._lock = threading.Lock()
        self._state = {"epoch": -1, "phase": "idle", "snapshot": None, "done": False}
        self.server = server

    def on_start(self, work, model):
        # point the API at the live training copy so labels reflect corrections
        if self.server is not None:
            self.server.dataset = work

    def on_phase(self, epoch: int, phase: str):
        with self._lock:
            self._state["epoch"] = epoch
            self._state["phase"] = phase

    def on_snapshot(self, snapshot: dict):
        with self._lock:
            self._state["snapshot"] = dict(snapshot)

    def mark_done(self):
        with self._lock:
            self._state["done"] = True
            self._state["phase"] = "done"

    def view(self) -> dict:
        with self._lock:
            return json.loads(json.dumps(self._state))


def _query_payload(item, ds: Dataset) -> dict:
    values = ds.features[item.sample_id].astype(float).ravel().tolist()
    return {
        "id": item.sample_id,
        "sample_id": item.sample_id,
        "p_false": item.p_false,
        "direction": item.direction,
        "round": item.round_index,
        "issued_epoch": item.issued_epoch,
        "status": item.status,
        "current_label": {
            "p_stable": float(ds.labels_train[item.sample_id][0]),
            "p_unstable": float(ds.labels_train[item.sample_id][1]),
        },
        "trajectory": {"shape": list(ds.features.shape[1:]), "values": values},
    }


class ApiHandler(BaseHTTPRequestHandler):
    server_version = "mmrlab"

    # silence per-request stderr logging
    def log_message(self, fmt, *args):
        pass

    def _send(self, code: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_static(self, relpath: str):
        root = self.server.static_dir
        if root is None:
            self._send(404, {"error": "no static assets configured"})
            return
        if relpath in ("", "/"):
            relpath = "index.html"
        full = os.path.normpath(os.path.join(root, relpath.lstrip("/")))
        if not full.startswith(os.path.abspath(root)) or not os.path.isfile(full):
            self._send(404, {"error": f"not found: {relpath}"})
            return
        ctype = {
            ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
            ".map": "application/json", ".svg": "image/svg+xml",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        with open(full, "rb") as f:
            body = f.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]

        if parts[:2] == ["api", "status"]:
            state = self.server.board.view()
            pending = self.server.inbox.pending()
            state["pending_round"] = None
            if pending or self.server.inbox.round_index:
                state["pending_round"] = {
                    "round": self.server.inbox.round_index,
                    "pending": len(pending),
                    "total": len(self.server.inbox.all_items()),
                }
            self._send(200, state)
            return

        if parts[:2] == ["api", "queries"]:
            wanted = parse_qs(url.query).get("state", [None])[0]
            items = self.server.inbox.all_items()
            if wanted:
                items = [q for q in items if q.status == wanted]
            self._send(200, {"queries": [_query_payload(q, self.server.dataset)
                                         for q in items]})
            return

        if parts[:2] == ["api", "samples"] and len(parts) == 3:
            try:
                sid = int(parts[2])
            except ValueError:
                self._send(400, {"error": "sample id must be an integer"})
                return
            ds = self.server.dataset
            if not 0 <= sid < ds.n:
                self._send(404, {"error": f"unknown sample {sid}"})
                return
            self._send(200, {
                "id": sid,
                "shape": list(ds.features.shape[1:]),
                "values": ds.features[sid].astype(float).ravel().tolist(),
                "current_label": {
                    "p_stable": float(ds.labels_train[sid][0]),
                    "p_unstable": float(ds.labels_train[sid][1]),
                },
            })
            return

        if parts[:1] == ["api"]:
            self._send(404, {"error": f"unknown endpoint {url.path}"})
            return
        self._send_static(url.path)

    def do_POST(self):
        parts = [p for p in urlparse(self.path).path.split("/") if p]
        if len(parts) == 4 and parts[:2] == ["api", "queries"] and parts[3] == "label":
            try:
                sid = int(parts[2])
            except ValueError:
                self._send(400, {"error": "query id must be an integer"})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self._send(400, {"error": "request body must be JSON"})
                return
            label = body.get("label")
            if label not in CLASS_NAMES:
                self._send(400, {"error": f"label must be one of {list(CLASS_NAMES)}"})
                return
            outcome = self.server.inbox.submit(sid, label)
            if outcome == "ok":
                self._send(200, {"status": "ok", "id": sid, "label": label})
            elif outcome == "conflict":
                self._send(409, {"error": f"query {sid} is no longer pending"})
            else:
                self._send(404, {"error": f"unknown query {sid}"})
            return
        self._send(404, {"error": "unknown endpoint"})


def start_server(board: StatusBoard, inbox: AnnotationInbox, dataset: Dataset,
                 host: str = "127.0.0.1", port: int = 0,
                 static_dir: str | None = None) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), ApiHandler)
    server.daemon_threads = True
    server.board = board
    server.inbox = inbox
    server.dataset = dataset
    server.static_dir = os.path.abspath(static_dir) if static_dir else None
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
