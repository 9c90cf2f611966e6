"""Static-content app instance: serves one directory plus a /healthz probe.

Runnable as `python -m edgestack.staticserve --port N --dir DIR`; this is the
process the runtime spawns for `static_site` build recipes.
"""

from __future__ import annotations

import argparse
import functools
import http.server


class StaticHandler(http.server.SimpleHTTPRequestHandler):
    def do_GET(self):
        if self.path == "/healthz":
            body = b"ok"
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        super().do_GET()

    def log_message(self, fmt, *args):  # keep instances quiet
        pass


def serve(port: int, directory: str) -> http.server.ThreadingHTTPServer:
    handler = functools.partial(StaticHandler, directory=directory)
    return http.server.ThreadingHTTPServer(("127.0.0.1", port), handler)


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--dir", required=True)
    args = parser.parse_args(argv)
    with serve(args.port, args.dir) as httpd:
        httpd.serve_forever()


if __name__ == "__main__":
    main()
