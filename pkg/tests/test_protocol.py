"""Framing, transports, and the TCP provider server."""

import struct

import pytest

from shardhouse.errors import ProtocolError, StoreError, TransportError
from shardhouse.protocol import (
    LocalTransport,
    Recorder,
    TcpStoreServer,
    TcpTransport,
    decode_frame,
    encode_frame,
    serve_store,
)
from shardhouse.store import CspStore, SharedColumn, SharedTableSchema


def tiny_schema():
    return SharedTableSchema(
        name="kv",
        columns=(SharedColumn("k", "key"), SharedColumn("v", "shared", nullable=True, blocks=1)),
        primary_key=("k",),
        p2=7,
    )


def make_store():
    s = CspStore(3)
    s.handle_request({"op": "create", "seq": 1, "payload": {"schema": tiny_schema().to_wire()}})
    s.handle_request({
        "op": "insert", "table": "kv", "seq": 2,
        "payload": {"rows": [[1, {"e": ["16"], "s": [2]}]]},
    })
    return s


# ---------------------------------------------------------------------------
# Frames


def test_frame_roundtrip():
    obj = {"seq": 9, "op": "select", "payload": {"e": ["123456789012345678901234567890"]}}
    frame = encode_frame(obj)
    (length,) = struct.unpack(">I", frame[:4])
    assert length == len(frame) - 4
    assert decode_frame(frame[4:]) == obj


def test_decode_rejects_garbage():
    with pytest.raises(ProtocolError, match="malformed"):
        decode_frame(b"\xff\xfe")
    with pytest.raises(ProtocolError, match="malformed"):
        decode_frame(b"not json")
    with pytest.raises(ProtocolError, match="JSON object"):
        decode_frame(b"[1,2]")


# ---------------------------------------------------------------------------
# Local transport


def test_local_request_and_error():
    tr = LocalTransport(make_store())
    resp = tr.request("select", "kv", {"project": ["k"]})
    assert resp["rows"] == [[1]]
    with pytest.raises(StoreError, match="no such table"):
        tr.request("select", "ghost", {"project": ["k"]})
    assert tr.ping() >= 0


def test_seq_mismatch_detected():
    tr = LocalTransport(make_store())
    real = tr.store.handle_request
    tr.store.handle_request = lambda req: {**real(req), "seq": -1}
    with pytest.raises(ProtocolError, match="sequence mismatch"):
        tr.request("health")


def test_unknown_status_detected():
    tr = LocalTransport(make_store())
    tr.store.handle_request = lambda req: {"seq": req["seq"], "status": "odd"}
    with pytest.raises(ProtocolError, match="unknown response status"):
        tr.request("health")


def test_kill_and_revive():
    tr = LocalTransport(make_store())
    tr.kill()
    with pytest.raises(TransportError, match="unreachable"):
        tr.request("health")
    tr.revive()
    assert tr.request("health")["csp"] == 3


def test_recorder_sees_both_directions():
    rec = Recorder()
    tr = LocalTransport(make_store(), recorder=rec)
    tr.request("select", "kv", {"project": ["k", "v"]})
    directions = [d for d, _, _ in rec.frames]
    assert directions == ["request", "response"]
    assert b'"16"' in rec.all_bytes()


# ---------------------------------------------------------------------------
# TCP


@pytest.fixture
def tcp_pair():
    server = serve_store(make_store(), "127.0.0.1", 0)
    host, port = server.address
    tr = TcpTransport(host, port, csp_id=3)
    yield server, tr
    tr.close()
    server.shutdown()
    server.server_close()


def test_tcp_roundtrip(tcp_pair):
    server, tr = tcp_pair
    resp = tr.request("select", "kv", {"project": ["v"]})
    assert resp["rows"] == [[{"e": ["16"], "s": [2]}]]
    with pytest.raises(StoreError, match="unknown op"):
        tr.request("bogus")
    # Errors leave the connection usable.
    assert tr.request("health")["tables"] == {"kv": 1}


def test_tcp_reconnects_after_close(tcp_pair):
    server, tr = tcp_pair
    assert tr.request("health")["csp"] == 3
    tr.close()
    assert tr.request("health")["csp"] == 3


def test_tcp_unreachable():
    tr = TcpTransport("127.0.0.1", 1, csp_id=9, timeout=0.5)
    with pytest.raises(TransportError, match="cannot reach"):
        tr.request("health")


def test_tcp_server_survives_bad_frame(tcp_pair):
    import socket

    server, tr = tcp_pair
    host, port = server.address
    raw = socket.create_connection((host, port), timeout=2)
    try:
        raw.sendall(struct.pack(">I", 7) + b"garbage")
        # The server answers with a framed protocol error, then hangs up.
        from shardhouse.protocol import read_frame

        resp = read_frame(raw)
        assert resp["status"] == "error"
    finally:
        raw.close()
    assert tr.request("health")["csp"] == 3
