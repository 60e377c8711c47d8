"""Wire transports: TCP newline-JSON and the WebSocket endpoint."""

import json
import socket
import threading
import time

import pytest

from ervm.debug import DebugSession
from ervm.server import DebugTCPServer, create_app, serve_tcp


@pytest.fixture()
def session(echo_guest, echo_record):
    path, _ = echo_record
    return DebugSession(path, echo_guest.kernel_image,
                        symbols=echo_guest.kernel_program.symbols)


class TcpClient:
    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=10)
        self.f = self.sock.makefile("rw")
        self.next_id = 0

    def recv(self):
        return json.loads(self.f.readline())

    def send(self, cmd, args=None):
        self.next_id += 1
        self.f.write(json.dumps({"id": self.next_id, "cmd": cmd,
                                 "args": args or {}}) + "\n")
        self.f.flush()
        return self.next_id

    def rpc(self, cmd, args=None):
        i = self.send(cmd, args)
        msg = self.recv()
        assert msg["id"] == i
        return msg

    def close(self):
        self.sock.close()


@pytest.fixture()
def tcp(session):
    server = serve_tcp(session)
    client = TcpClient(server.address)
    yield client
    client.close()
    server.shutdown()


def test_tcp_handshake_first(tcp):
    hello = tcp.recv()
    assert hello["event"] == "hello"
    assert hello["protocol_version"] == 1


def test_tcp_request_response_cycle(tcp, echo_record):
    _, rec = echo_record
    tcp.recv()  # hello
    tasks = tcp.rpc("tasks")
    assert tasks["ok"] and len(tasks["data"]) == 2
    regs = tcp.rpc("regs")
    assert regs["ok"] and len(regs["data"]["r"]) == 16
    run = tcp.rpc("run-to-icount", {"n": 50_000})
    assert run["ok"]
    stop = tcp.recv()
    assert stop["event"] == "stopped" and stop["icount"] == 50_000
    ev = tcp.rpc("events", {"from": 0, "to": 10_000})
    assert ev["ok"] and len(ev["data"]) > 0


def test_tcp_bad_json_answered(tcp):
    tcp.recv()
    tcp.f.write("this is not json\n")
    tcp.f.flush()
    msg = tcp.recv()
    assert not msg["ok"]


def test_tcp_write_rejected(tcp):
    tcp.recv()
    resp = tcp.rpc("write-mem", {"addr": 0, "value": 1})
    assert resp["error"] == "read-only replay"


def test_tcp_pause_interrupts_continue(echo_guest, echo_record):
    path, _ = echo_record
    session = DebugSession(path, echo_guest.kernel_image)
    server = serve_tcp(session)
    client = TcpClient(server.address)
    try:
        client.recv()  # hello
        cont_id = client.send("continue")
        time.sleep(0.05)  # let the replay get going
        pause_id = client.send("pause")
        got = [client.recv() for _ in range(3)]
        by_id = {m.get("id"): m for m in got if "id" in m}
        stops = [m for m in got if m.get("event") == "stopped"]
        assert by_id[pause_id]["ok"]
        assert by_id[cont_id]["ok"]
        assert stops and stops[0]["reason"] in ("pause", "halt")
    finally:
        client.close()
        server.shutdown()


def test_tcp_detach_closes(session):
    server = serve_tcp(session)
    client = TcpClient(server.address)
    client.recv()
    resp = client.rpc("detach")
    assert resp["ok"]
    client.close()
    server.shutdown()


# -- WebSocket ----------------------------------------------------------

def test_websocket_same_protocol(session, echo_record):
    from fastapi.testclient import TestClient

    _, rec = echo_record
    app = create_app(session)
    with TestClient(app) as client:
        status = client.get("/").json()
        assert status["service"] == "ervm-debug"
        with client.websocket_connect("/debug") as ws:
            hello = json.loads(ws.receive_text())
            assert hello["event"] == "hello"
            assert hello["final_icount"] == rec.final_icount

            ws.send_text(json.dumps({"id": 1, "cmd": "tasks", "args": {}}))
            tasks = json.loads(ws.receive_text())
            assert tasks["ok"] and len(tasks["data"]) == 2

            ws.send_text(json.dumps({"id": 2, "cmd": "run-to-icount",
                                     "args": {"n": 30_000}}))
            resp = json.loads(ws.receive_text())
            stop = json.loads(ws.receive_text())
            assert resp["ok"]
            assert stop["event"] == "stopped" and stop["icount"] == 30_000

            ws.send_text(json.dumps({"id": 3, "cmd": "write-mem",
                                     "args": {"addr": 0}}))
            assert json.loads(ws.receive_text())["error"] == "read-only replay"

            ws.send_text(json.dumps({"id": 4, "cmd": "detach", "args": {}}))
            assert json.loads(ws.receive_text())["ok"]
