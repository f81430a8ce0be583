import socket
import struct
import threading

import pytest
from hypothesis import given, strategies as st

from shmpubsub.transport import protocol
from shmpubsub.transport.protocol import ProtocolError, RemoteError, Verb

field = st.one_of(st.integers(-(2**63), 2**63 - 1), st.text(max_size=50))


def test_encode_layout():
    raw = protocol.encode(Verb.LOOKUP, ["cam0", 5])
    body = struct.pack("<BH", 3, 2) + struct.pack("<BI", 1, 4) + b"cam0" + struct.pack("<Bq", 0, 5)
    assert raw == struct.pack("<I", len(body)) + body


@given(verb=st.sampled_from(list(Verb)), fields=st.lists(field, max_size=10))
def test_round_trip(verb, fields):
    raw = protocol.encode(verb, fields)
    assert protocol.decode(raw[4:]) == (verb, fields)


def test_bool_encodes_as_int():
    assert protocol.decode(protocol.encode(Verb.OK, [True])[4:]) == (Verb.OK, [1])


@pytest.mark.parametrize("body", [
    b"",
    struct.pack("<BH", 0, 1),
    struct.pack("<BH", 0, 1) + b"\x00\x01",
    struct.pack("<BH", 0, 1) + struct.pack("<BI", 1, 10) + b"abc",
    struct.pack("<BH", 0, 1) + b"\x07",
    struct.pack("<BH", 0, 0) + b"x",
    struct.pack("<BH", 99, 0),
])
def test_malformed(body):
    with pytest.raises(ProtocolError):
        protocol.decode(body)


def test_unsupported_field_type():
    with pytest.raises(TypeError):
        protocol.encode(Verb.OK, [1.5])


def test_call_over_socketpair():
    a, b = socket.socketpair()

    def server():
        verb, fields = protocol.recv_message(b)
        protocol.send_message(b, Verb.OK, [fields[0] * 2])
        protocol.recv_message(b)
        protocol.send_message(b, Verb.ERROR, ["nope"])

    t = threading.Thread(target=server)
    t.start()
    assert protocol.call(a, Verb.PING, [21]) == [42]
    with pytest.raises(RemoteError, match="nope"):
        protocol.call(a, Verb.PING, [])
    t.join()
    a.close()
    b.close()


def test_oversized_message_rejected():
    a, b = socket.socketpair()
    a.sendall(struct.pack("<I", protocol.MAX_MESSAGE + 1))
    with pytest.raises(ProtocolError):
        protocol.recv_message(b)
    a.close()
    b.close()
