import socket

import numpy as np
import pytest

from mpcmwem.transport import (MSG_DATA, CommunicationError, Frame, InProcessTransport, TcpTransport,
                               decode_frame, encode_frame)


def test_frame_layout_bit_exact():
    frame = Frame(MSG_DATA, 0x0102030405060708, 2, np.array([1, 2**64 - 1], dtype=np.uint64))
    data = encode_frame(frame)
    assert data[:4] == (16).to_bytes(4, "big")
    assert data[4] == 0x01
    assert data[5:13] == bytes([1, 2, 3, 4, 5, 6, 7, 8])
    assert data[13] == 2
    assert data[14:22] == (1).to_bytes(8, "little")
    assert data[22:] == b"\xff" * 8
    back = decode_frame(data)
    assert (back.kind, back.round, back.sender) == (1, 0x0102030405060708, 2)
    assert back.payload.tolist() == [1, 2**64 - 1]


def test_bad_length_rejected():
    data = encode_frame(Frame(MSG_DATA, 1, 0, np.arange(3, dtype=np.uint64)))
    with pytest.raises(CommunicationError):
        decode_frame(data[:-1])
    with pytest.raises(CommunicationError):
        decode_frame(data[:5])


def test_in_process_order_and_copy():
    t0, t1, _ = InProcessTransport.mesh(timeout=1.0)
    buf = np.arange(4, dtype=np.uint64)
    for r in range(5):
        t0.send(1, Frame(MSG_DATA, r, 0, buf))
    buf[:] = 99
    got = [t1.recv(0) for _ in range(5)]
    assert [g.round for g in got] == list(range(5))
    assert got[0].payload.tolist() == [0, 1, 2, 3]
    assert t0.counter.frames_sent == 5 and t0.counter.elements_sent == 20


def test_timeout_and_abort():
    t0, t1, _ = InProcessTransport.mesh(timeout=0.05)
    with pytest.raises(CommunicationError):
        t1.recv(0)
    t1.abort()
    with pytest.raises(CommunicationError):
        t1.recv(0)


def test_tcp_pair_roundtrip():
    a, b = socket.socketpair()
    ta, tb = TcpTransport(0, timeout=5), TcpTransport(1, timeout=5)
    ta.attach(1, a)
    tb.attach(0, b)
    ta.send(1, Frame(MSG_DATA, 3, 0, np.arange(1000, dtype=np.uint64)))
    got = tb.recv(0)
    assert got.round == 3 and got.payload.sum() == sum(range(1000))
    ta.close()
    with pytest.raises(CommunicationError):
        tb.recv(0)
    tb.close()
