"""Tenant-facing HTTP endpoint.

A thin request/response layer over the warehouse: authenticate to get a
session token, upload CSV batches, list and render reports.  Every data
endpoint derives its tenant scope from the session token alone; any
university_key supplied in a request is ignored.  Cubes refresh on a
background interval, so uploaded data appears in reports after the next
rebuild rather than immediately.

Payloads are JSON with stable field names (batch_id, rows_in, rows_out,
effective_ms, cumulative_ms, errors[]); report bodies can also be fetched
as CSV or an aligned table via ?format=.
"""

from __future__ import annotations

import email
import email.policy
import json
import logging
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

from .errors import AuthenticationError, StorageError, ValidationError
from .schema import builtin_schema
from .store import SegmentStore
from .etl import MODES, EtlPipeline
from .cube import CubeEngine, CubeRefresher, builtin_cube_specs
from .olap import QueryEngine
from .auth import SessionManager, TenantRegistry, authenticate
from .config import GatewayConfig

logger = logging.getLogger(__name__)

_MAX_AUTH_BODY = 64 * 1024

# request fields the service never trusts; scope comes from the session
_IGNORED_PARAMS = {"university_key", "tenant", "format"}


class TenantService:
    """Shared state behind the HTTP handler: store, sessions, engines."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.store = SegmentStore(config.warehouse_root, builtin_schema())
        self.registry = TenantRegistry.load(config.registry_path)
        self.sessions = SessionManager(config.session_ttl)
        self.pipeline = EtlPipeline(
            self.store, config.split_config(), config.worker_pool_size
        )
        self.query = QueryEngine(self.store)
        self.refresher = CubeRefresher(
            CubeEngine(self.store), builtin_cube_specs().values(),
            config.cube_refresh_interval,
        )

    def start(self) -> None:
        self.refresher.start()

    def stop(self) -> None:
        self.refresher.stop()


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "eduwh"

    @property
    def svc(self) -> TenantService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt: str, *args) -> None:
        logger.info("%s %s", self.address_string(), fmt % args)

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, status: int, text: str, content_type: str) -> None:
        body = text.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", f"{content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _context(self):
        header = self.headers.get("Authorization", "")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            return None
        return self.svc.sessions.resolve(token.strip())

    def _read_body(self, limit: int) -> bytes | None:
        length = self.headers.get("Content-Length")
        if length is None:
            self._send_json(411, {"error": "Content-Length required"})
            return None
        length = int(length)
        if length > limit:
            self._send_json(
                413,
                {"error": f"upload exceeds the configured limit of {limit} bytes",
                 "upload_limit": limit},
            )
            return None
        return self.rfile.read(length)

    # ---- routes ----

    def do_POST(self) -> None:
        url = urlsplit(self.path)
        try:
            if url.path == "/auth":
                self._post_auth()
            elif url.path == "/upload":
                self._post_upload(dict(parse_qsl(url.query)))
            else:
                self._send_json(404, {"error": f"no such endpoint {url.path}"})
        except ValidationError as exc:
            self._send_json(400, {"error": str(exc)})
        except Exception:
            logger.exception("unhandled error serving %s", self.path)
            self._send_json(500, {"error": "internal error"})

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        try:
            ctx = self._context()
            if ctx is None:
                self._send_json(401, {"error": "missing or expired session token"})
            elif url.path == "/reports":
                self._send_json(200, {"reports": list(self.svc.query.list_reports(ctx))})
            elif url.path.startswith("/report/"):
                self._get_report(ctx, url)
            else:
                self._send_json(404, {"error": f"no such endpoint {url.path}"})
        except ValidationError as exc:
            self._send_json(400, {"error": str(exc)})
        except StorageError as exc:
            self._send_json(409, {"error": str(exc)})
        except Exception:
            logger.exception("unhandled error serving %s", self.path)
            self._send_json(500, {"error": "internal error"})

    def _post_auth(self) -> None:
        raw = self._read_body(_MAX_AUTH_BODY)
        if raw is None:
            return
        try:
            payload = json.loads(raw.decode("utf-8"))
            login, secret = payload["login"], payload["secret"]
        except (ValueError, KeyError, TypeError):
            self._send_json(400, {"error": "body must be JSON with login and secret"})
            return
        try:
            ctx = authenticate(self.svc.registry, self.svc.sessions, str(login), str(secret))
        except AuthenticationError as exc:
            self._send_json(401, {"error": str(exc)})
            return
        self._send_json(200, {"token": ctx.session_id,
                              "expires_in": self.svc.config.session_ttl})

    def _post_upload(self, params: dict) -> None:
        ctx = self._context()
        if ctx is None:
            self._send_json(401, {"error": "missing or expired session token"})
            return
        table = params.get("table")
        if not table:
            self._send_json(400, {"error": "query parameter table is required"})
            return
        if table not in self.svc.store.schema.tables:
            self._send_json(400, {"error": f"unknown table {table!r}"})
            return
        mode = params.get("mode", "case2")
        if mode not in MODES:
            self._send_json(400, {"error": f"unknown mode {mode!r}"})
            return
        raw = self._read_body(self.svc.config.upload_limit)
        if raw is None:
            return
        content_type = self.headers.get("Content-Type", "")
        if content_type.startswith("multipart/"):
            raw = _multipart_file(raw, content_type)
            if raw is None:
                self._send_json(400, {"error": "multipart body has no file part"})
                return
        staged = self.svc.store.staging_path(f"upload_{uuid.uuid4().hex}.csv")
        staged.write_bytes(raw)
        try:
            result = self.svc.pipeline.run(staged, table, ctx.university_key, mode)
        finally:
            staged.unlink(missing_ok=True)
        payload = {
            "table": table,
            "batch_id": result.segment.batch_id if result.committed else None,
            "rows_in": result.rows_in,
            "rows_out": result.rows_out,
            "effective_ms": round(result.effective_time * 1000, 3),
            "cumulative_ms": round(result.cumulative_time * 1000, 3),
            "errors": [
                {"line_number": e.line_number,
                 "tenant_key_value": e.tenant_key_value,
                 "reason": e.reason}
                for e in (result.report.entries if result.report else ())
            ],
        }
        self._send_json(200 if result.committed else 422, payload)

    def _get_report(self, ctx, url) -> None:
        report_id = url.path[len("/report/"):]
        query = dict(parse_qsl(url.query))
        fmt = query.get("format", "json")
        params = {k: v for k, v in query.items() if k not in _IGNORED_PARAMS}
        result = self.svc.query.generate_report(ctx, report_id, params)
        if fmt == "csv":
            self._send_text(200, result.to_csv(), "text/csv")
        elif fmt == "table":
            self._send_text(200, result.to_table(), "text/plain")
        elif fmt == "json":
            self._send_json(200, {
                "report_id": result.report_id,
                "columns": list(result.columns),
                "rows": [list(r) for r in result.rows],
                "cube_version": result.cube_version,
                "generated_at": result.generated_at,
            })
        else:
            self._send_json(400, {"error": f"unknown format {fmt!r}"})


def _multipart_file(raw: bytes, content_type: str) -> bytes | None:
    """First file part of a multipart/form-data body, if any."""
    message = email.message_from_bytes(
        b"Content-Type: " + content_type.encode("ascii") + b"\r\n\r\n" + raw,
        policy=email.policy.default,
    )
    for part in message.iter_parts():
        if part.get_filename() or part.get_param("name", header="content-disposition"):
            payload = part.get_payload(decode=True)
            if payload is not None:
                return payload
    return None


def make_server(config: GatewayConfig) -> tuple[ThreadingHTTPServer, TenantService]:
    """Bind the service; caller drives serve_forever/shutdown."""
    service = TenantService(config)
    server = ThreadingHTTPServer((config.listen_host, config.listen_port), _Handler)
    server.service = service  # type: ignore[attr-defined]
    return server, service


def run_service(config: GatewayConfig) -> None:
    """Blocking entry point used by the serve subcommand."""
    server, service = make_server(config)
    service.start()
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port} (warehouse {config.warehouse_root})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
        server.server_close()


class ServiceThread:
    """Run the service on a background thread; used by tests and tooling."""

    def __init__(self, config: GatewayConfig):
        self.server, self.service = make_server(config)
        self._thread = threading.Thread(
            target=self.server.serve_forever, name="eduwh-service", daemon=True
        )

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server.server_address[:2]
        return str(host), int(port)

    def __enter__(self) -> "ServiceThread":
        self.service.start()
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self._thread.join(5.0)
        self.service.stop()
        self.server.server_close()
