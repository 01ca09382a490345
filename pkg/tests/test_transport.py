import socket
import threading
import time

import pytest

from apslda.transport import FaultPlan, SimTransport, SocketTransport, UnknownDestination


def sink(net, node):
    got = []
    net.register(node, lambda src, payload: got.append((src, payload, net.now())))
    return got


def test_lossless_delivers_once():
    net = SimTransport()
    got = sink(net, 1)
    net.send(0, 1, b"x")
    net.run_until_idle()
    assert [g[1] for g in got] == [b"x"]
    assert 1.0 <= got[0][2] <= 10.0


def test_drop_all():
    net = SimTransport(FaultPlan(drop_prob=1.0))
    got = sink(net, 1)
    for _ in range(50):
        net.send(0, 1, b"x")
    net.run_until_idle()
    assert got == [] and net.stats["dropped"] == 50


def test_duplication_pattern_is_seeded():
    def pattern(seed):
        net = SimTransport(FaultPlan(dup_prob=0.5, seed=seed), record=True)
        got = sink(net, 1)
        for i in range(200):
            net.send(0, 1, bytes([i % 256]))
        net.run_until_idle()
        return [(g[1], g[2]) for g in got], net.events

    assert pattern(4) == pattern(4)
    assert pattern(4) != pattern(5)
    got, _ = pattern(4)
    assert 200 < len(got) < 400


def test_unknown_destination():
    with pytest.raises(UnknownDestination):
        SimTransport().send(0, 42, b"")


def test_advance_clock_no_pending():
    assert SimTransport().advance_clock(100) == []


def test_advance_clock_boundary():
    net = SimTransport(FaultPlan(min_delay=30, max_delay=30))
    sink(net, 1)
    net.send(0, 1, b"m")
    assert net.advance_clock(29) == []
    delivered = net.advance_clock(1)
    assert [e.payload for e in delivered] == [b"m"] and net.now() == 30


def test_same_time_ties_by_msg_id():
    net = SimTransport(FaultPlan(min_delay=5, max_delay=5))
    got = sink(net, 1)
    for p in (b"a", b"b", b"c"):
        net.send(0, 1, p)
    envs = net.advance_clock(5)
    assert [e.msg_id for e in envs] == sorted(e.msg_id for e in envs)
    assert [g[1] for g in got] == [b"a", b"b", b"c"]


def test_messages_before_timers_at_same_time():
    net = SimTransport(FaultPlan(min_delay=5, max_delay=5))
    order = []
    net.register(1, lambda s, p: order.append("msg"))
    net.call_later(5, lambda: order.append("timer"))
    net.send(0, 1, b"")
    net.run_until_idle()
    assert order == ["msg", "timer"]


def test_cancelled_timer_never_fires():
    net = SimTransport()
    fired = []
    t = net.call_later(3, lambda: fired.append(1))
    t.cancel()
    net.run_until_idle()
    assert fired == []


def test_drop_rule_scripts_losses():
    net = SimTransport(drop_rule=lambda env: env.payload == b"lose")
    got = sink(net, 1)
    for p in (b"keep", b"lose", b"keep"):
        net.send(0, 1, p)
    net.run_until_idle()
    assert [g[1] for g in got] == [b"keep", b"keep"]


def test_run_until_timeout():
    net = SimTransport()
    net.call_later(1000, lambda: None)
    assert net.run_until(lambda: False, timeout=10) is False


def test_fault_plan_validation():
    with pytest.raises(ValueError):
        FaultPlan(drop_prob=1.5)
    with pytest.raises(ValueError):
        FaultPlan(min_delay=5, max_delay=1)


def test_message_ids_unique():
    net = SimTransport(FaultPlan(dup_prob=1.0), record=True)
    sink(net, 1)
    for _ in range(10):
        net.send(0, 1, b"")
    net.run_until_idle()
    ids = {e[2] for e in net.events if e[0] == "deliver"}
    assert len(ids) == 10


# -- sockets ----------------------------------------------------------------

def test_socket_roundtrip_between_transports():
    a = SocketTransport().start()
    b = SocketTransport().start()
    try:
        got = []
        b.register(2, lambda src, p: got.append((src, p)))
        a.register(1, lambda src, p: None)
        a.set_address(2, b.address)
        for i in range(100):
            a.send(1, 2, bytes([i]) * 1000)
        assert b.wait_until(lambda: len(got) == 100, 5000)
        assert [p for _, p in got] == [bytes([i]) * 1000 for i in range(100)]
        assert all(src == 1 for src, _ in got)
    finally:
        a.close()
        b.close()


def test_socket_local_delivery_and_timers():
    t = SocketTransport().start()
    try:
        got, fired = [], threading.Event()
        t.register(5, lambda src, p: got.append(p))
        t.send(9, 5, b"hi")
        t.call_later(20, fired.set)
        assert t.wait_until(lambda: got == [b"hi"] and fired.is_set(), 2000)
    finally:
        t.close()


def test_socket_unreachable_peer_is_a_drop():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        dead = s.getsockname()
    t = SocketTransport().start()
    try:
        t.set_address(3, dead)
        t.send(1, 3, b"lost")
        time.sleep(0.1)
        assert t.errors == []
    finally:
        t.close()


def test_socket_handler_errors_surface():
    t = SocketTransport().start()
    try:
        def boom(src, p):
            raise RuntimeError("bad handler")
        t.register(1, boom)
        t.send(0, 1, b"")
        with pytest.raises(RuntimeError):
            t.wait_until(lambda: False, 2000)
    finally:
        t.close()
