"""Blob-server edge application: the standard benchmark target.

Routes: /empty (200, zero-byte HTML body), /blob1m (1 MiB), /blob10m (10 MiB),
/healthz. Blobs are generated once per process from a fixed seed, lazily so
the readiness probe answers before the 11 MiB of random bytes exist.

Runnable as `python -m edgestack.blobserve --port N [--seed S]` so it deploys
through the pipeline with an `exec` recipe.
"""

from __future__ import annotations

import argparse
import http.server
import random
import threading
from dataclasses import dataclass, field

MiB = 1 << 20
BLOB_1M_BYTES = MiB
BLOB_10M_BYTES = 10 * MiB


class PortInUse(Exception):
    pass


@dataclass
class BlobCorpus:
    seed: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _blobs: dict = field(default_factory=dict, repr=False)

    def blob(self, size: int) -> bytes:
        with self._lock:
            if size not in self._blobs:
                self._blobs[size] = random.Random(self.seed ^ size).randbytes(size)
            return self._blobs[size]

    @property
    def blob_1mb(self) -> bytes:
        return self.blob(BLOB_1M_BYTES)

    @property
    def blob_10mb(self) -> bytes:
        return self.blob(BLOB_10M_BYTES)


ROUTES = {
    "/empty": ("text/html", 0),
    "/blob1m": ("application/octet-stream", BLOB_1M_BYTES),
    "/blob10m": ("application/octet-stream", BLOB_10M_BYTES),
}


class BlobHandler(http.server.BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    corpus: BlobCorpus = None

    def do_GET(self):
        if self.path == "/healthz":
            self._reply(200, b"ok", "text/plain")
        elif self.path in ROUTES:
            content_type, size = ROUTES[self.path]
            body = self.corpus.blob(size) if size else b""
            self._reply(200, body, content_type)
        else:
            self._reply(404, b"not found", "text/plain")

    def _reply(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        pass


class BlobServer:
    def __init__(self, corpus: BlobCorpus, port: int):
        handler = type("BoundBlobHandler", (BlobHandler,), {"corpus": corpus})
        try:
            self._httpd = http.server.ThreadingHTTPServer(("127.0.0.1", port), handler)
        except OSError as exc:
            raise PortInUse(f"port {port}: {exc}") from exc
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def start(self) -> "BlobServer":
        self._thread.start()
        return self

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=2.0)


def serve_blobs(corpus: BlobCorpus, port: int) -> BlobServer:
    """Start the blob server on `port` (0 picks a free one); caller closes it."""
    return BlobServer(corpus, port).start()


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    server = serve_blobs(BlobCorpus(seed=args.seed), args.port)
    try:
        threading.Event().wait()
    finally:
        server.close()


if __name__ == "__main__":
    main()
