"""Static file server for the UI that forwards /api requests to the service.

Usage: python3 scripts/dev_proxy.py [ui_port] [api_base]
Serves the frontend directory (index.html, dist/) on ui_port, default 8080,
and pipes anything under /api to api_base, default http://127.0.0.1:8321.
Development convenience only; no caching, no TLS, single threaded.
"""

import http.server
import sys
import urllib.error
import urllib.request
from pathlib import Path

UI_PORT = int(sys.argv[1]) if len(sys.argv) > 1 else 8080
API_BASE = sys.argv[2] if len(sys.argv) > 2 else "http://127.0.0.1:8321"
ROOT = Path(__file__).resolve().parent.parent


class Handler(http.server.SimpleHTTPRequestHandler):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, directory=str(ROOT), **kwargs)

    def _forward(self, method: str) -> None:
        body = None
        length = self.headers.get("Content-Length")
        if length:
            body = self.rfile.read(int(length))
        request = urllib.request.Request(
            API_BASE + self.path,
            data=body,
            method=method,
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(request) as response:
                payload, status = response.read(), response.status
        except urllib.error.HTTPError as error:
            payload, status = error.read(), error.code
        except urllib.error.URLError as error:
            payload, status = str(error.reason).encode(), 502
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path.startswith("/api"):
            self._forward("GET")
        else:
            super().do_GET()

    def do_POST(self):
        if self.path.startswith("/api"):
            self._forward("POST")
        else:
            self.send_error(404)


if __name__ == "__main__":
    server = http.server.HTTPServer(("127.0.0.1", UI_PORT), Handler)
    print(f"ui http://127.0.0.1:{UI_PORT} -> api {API_BASE}")
    server.serve_forever()
