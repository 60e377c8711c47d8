"""Debug transports: newline-delimited JSON over TCP and the same
messages over a WebSocket.

Both transports speak the identical message shapes. Client to server:
`{"id": <any>, "cmd": <str>, "args": {...}}`. Server to client: one
response per request (`{"id", "ok", "data"|"error"}`) plus unsolicited
`{"event": "stopped", ...}` messages when execution stops, and a single
`{"event": "hello", ...}` handshake on connect.

Blocking commands (continue, step, reverse-step, run-to-icount) run on a
worker so a concurrent `pause` request can interrupt them.
"""

import asyncio
import json
import socket
import socketserver
import threading

from .debug import DebugSession

BLOCKING_CMDS = frozenset(
    {"continue", "step", "reverse-step", "run-to-icount"})


def _encode(msg):
    return json.dumps(msg) + "\n"


# -- TCP ----------------------------------------------------------------

class _DebugTCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = self.server.debug_session
        send_lock = threading.Lock()

        def send(msg):
            with send_lock:
                try:
                    self.wfile.write(_encode(msg).encode())
                    self.wfile.flush()
                except OSError:
                    pass

        def dispatch(request):
            response, stop = session.handle_request(request)
            send(response)
            if stop is not None:
                send(stop)

        send(session.handshake())
        workers = []
        for raw in self.rfile:
            raw = raw.strip()
            if not raw:
                continue
            try:
                request = json.loads(raw)
            except json.JSONDecodeError as exc:
                send({"id": None, "ok": False, "error": "bad json: %s" % exc})
                continue
            if request.get("cmd") in BLOCKING_CMDS:
                t = threading.Thread(target=dispatch, args=(request,),
                                     daemon=True)
                t.start()
                workers.append(t)
            else:
                dispatch(request)
            if request.get("cmd") == "detach":
                break
        for t in workers:
            t.join(timeout=5)


class DebugTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, session, host="127.0.0.1", port=0):
        super().__init__((host, port), _DebugTCPHandler)
        self.debug_session = session

    @property
    def address(self):
        return self.server_address


def serve_tcp(session, host="127.0.0.1", port=0):
    """Start the TCP transport on a background thread; returns the server
    (use .address for the bound port, .shutdown() to stop)."""
    server = DebugTCPServer(session, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


# -- WebSocket (FastAPI) ------------------------------------------------

def create_app(session):
    """FastAPI app with the debug WebSocket at /debug and a small status
    endpoint at /."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="ervm debug server")
    app.state.debug_session = session

    @app.get("/")
    def status():
        return {
            "service": "ervm-debug",
            "handshake": session.handshake(),
        }

    @app.websocket("/debug")
    async def debug_ws(ws: WebSocket):
        await ws.accept()
        send_lock = asyncio.Lock()

        async def send(msg):
            async with send_lock:
                await ws.send_text(json.dumps(msg))

        async def dispatch(request):
            response, stop = await asyncio.to_thread(
                session.handle_request, request)
            await send(response)
            if stop is not None:
                await send(stop)

        await send(session.handshake())
        pending = set()
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    request = json.loads(raw)
                except json.JSONDecodeError as exc:
                    await send({"id": None, "ok": False,
                                "error": "bad json: %s" % exc})
                    continue
                if request.get("cmd") in BLOCKING_CMDS:
                    task = asyncio.ensure_future(dispatch(request))
                    pending.add(task)
                    task.add_done_callback(pending.discard)
                else:
                    await dispatch(request)
                if request.get("cmd") == "detach":
                    break
        except WebSocketDisconnect:
            pass
        finally:
            for task in pending:
                task.cancel()

    return app


def serve_ws(session, host="127.0.0.1", port=8765):
    """Run the WebSocket transport with uvicorn (blocking)."""
    import uvicorn

    uvicorn.run(create_app(session), host=host, port=port, log_level="warning")
