"""Transport contract: framing, FIFO delivery, loss-free soak, errors."""

import random
import threading

import pytest

from oranlab.errors import Closed, Oversize, Refused, Unreachable
from oranlab.transport import (
    CLOSED, FrameDecoder, LoopbackHub, MAX_FRAME, frame, tcp_connect,
    tcp_listen,
)


def loopback_pair():
    hub = LoopbackHub()
    listener = hub.listen("ric")
    client = hub.connect("ric")
    server = listener.accept(timeout=1)
    return client, server


class TestFraming:
    def test_frame_layout_bit_exact(self):
        assert frame(b"abc") == b"\x00\x00\x00\x03abc"
        assert frame(b"") == b"\x00\x00\x00\x00"

    def test_decoder_reassembles_split_stream(self):
        data = frame(b"one") + frame(b"") + frame(b"two")
        dec = FrameDecoder()
        got = []
        for i in range(0, len(data), 2):
            got.extend(dec.feed(data[i:i + 2]))
        assert got == [b"one", b"", b"two"]
        assert dec.pending_bytes == 0

    def test_oversize_rejected(self):
        with pytest.raises(Oversize):
            frame(b"\x00" * (MAX_FRAME + 1))


class TestLoopback:
    def test_fifo_three_messages(self):
        client, server = loopback_pair()
        for msg in (b"a", b"b", b"c"):
            client.send(msg)
        assert [server.recv() for _ in range(3)] == [b"a", b"b", b"c"]

    def test_connect_absent_listener(self):
        with pytest.raises(Unreachable):
            LoopbackHub().connect("nobody")

    def test_empty_payload_delivered(self):
        client, server = loopback_pair()
        client.send(b"")
        assert server.recv() == b""

    def test_oversize_send(self):
        client, _ = loopback_pair()
        with pytest.raises(Oversize):
            client.send(b"\x00" * (MAX_FRAME + 1))

    def test_recv_after_close_with_empty_queue(self):
        client, server = loopback_pair()
        client.close()
        assert server.recv() is CLOSED

    def test_queued_messages_survive_close(self):
        client, server = loopback_pair()
        client.send(b"last")
        client.close()
        assert server.recv() == b"last"
        assert server.recv() is CLOSED

    def test_send_after_close_raises(self):
        client, _ = loopback_pair()
        client.close()
        with pytest.raises(Closed):
            client.send(b"x")

    def test_try_recv_nonblocking(self):
        client, server = loopback_pair()
        assert server.try_recv() is None
        client.send(b"hello")
        assert server.try_recv() == b"hello"

    def test_soak_random_sizes(self):
        rng = random.Random(12)
        client, server = loopback_pair()
        sent = [rng.randbytes(rng.randrange(0, 65537)) for _ in range(10_000)]
        done = threading.Event()

        def pump():
            for msg in sent:
                client.send(msg)
            done.set()

        t = threading.Thread(target=pump)
        t.start()
        got = [server.recv(timeout=10) for _ in range(len(sent))]
        t.join()
        assert done.is_set()
        assert got == sent

    def test_bidirectional(self):
        client, server = loopback_pair()
        client.send(b"ping")
        assert server.recv() == b"ping"
        server.send(b"pong")
        assert client.recv() == b"pong"

    def test_interleaved_connections_keep_per_connection_order(self):
        hub = LoopbackHub()
        listener = hub.listen("ric")
        c1 = hub.connect("ric")
        s1 = listener.accept(timeout=1)
        c2 = hub.connect("ric")
        s2 = listener.accept(timeout=1)
        for i in range(100):
            c1.send(f"one-{i}".encode())
            c2.send(f"two-{i}".encode())
        assert [s1.recv() for _ in range(100)] == [f"one-{i}".encode() for i in range(100)]
        assert [s2.recv() for _ in range(100)] == [f"two-{i}".encode() for i in range(100)]

    def test_order_over_thousand_messages(self):
        client, server = loopback_pair()
        for i in range(1000):
            client.send(i.to_bytes(2, "big"))
        got = [server.recv() for _ in range(1000)]
        assert got == [i.to_bytes(2, "big") for i in range(1000)]


class TestTcp:
    def test_roundtrip_and_order(self):
        listener = tcp_listen("127.0.0.1")
        host, port = listener.address
        results = {}

        def serve():
            conn = listener.accept()
            results["msgs"] = [conn.recv() for _ in range(3)]
            conn.send(b"ack")
            conn.close()

        t = threading.Thread(target=serve)
        t.start()
        client = tcp_connect(host, port)
        for msg in (b"x", b"", b"yy"):
            client.send(msg)
        assert client.recv() == b"ack"
        t.join(timeout=5)
        listener.close()
        assert results["msgs"] == [b"x", b"", b"yy"]

    def test_connect_refused(self):
        listener = tcp_listen("127.0.0.1")
        host, port = listener.address
        listener.close()
        with pytest.raises((Refused, Unreachable)):
            tcp_connect(host, port, timeout=1)

    def test_peer_close_yields_closed(self):
        listener = tcp_listen("127.0.0.1")
        host, port = listener.address

        def serve():
            conn = listener.accept()
            conn.close()

        t = threading.Thread(target=serve)
        t.start()
        client = tcp_connect(host, port)
        assert client.recv() is CLOSED
        t.join(timeout=5)
        listener.close()
