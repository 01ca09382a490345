"""Message transports with at-most-once delivery.

Both implementations expose the same surface to nodes::

    register(node_id, handler)      # handler(src, payload_bytes), run on the transport's thread
    send(src, dst, payload)
    call_later(delay_ms, fn) -> handle with .cancel()
    submit(fn)                      # run fn on the transport's thread
    now() -> ms
    wait_until(predicate, timeout_ms) -> bool

:class:`SimTransport` is a single-threaded discrete-event simulator with a
virtual clock and seeded loss/duplication/delay. :class:`SocketTransport` runs
an asyncio loop on a background thread and speaks length-prefixed frames over TCP.
"""

import asyncio
import heapq
import logging
import random
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

log = logging.getLogger(__name__)


class UnknownDestination(LookupError):
    pass


@dataclass(frozen=True)
class Envelope:
    src: int
    dst: int
    msg_id: int
    payload: bytes


@dataclass(frozen=True)
class FaultPlan:
    """Seeded fault model. Delays are uniform in ``[min_delay, max_delay]`` ms."""

    drop_prob: float = 0.0
    dup_prob: float = 0.0
    min_delay: float = 1.0
    max_delay: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_prob", "dup_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not 0 <= self.min_delay <= self.max_delay:
            raise ValueError("need 0 <= min_delay <= max_delay")


class _Timer:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn):
        self.fn = fn
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


_MSG, _TIMER = 0, 1


class SimTransport:
    """Deterministic in-process network.

    Each send is dropped with ``drop_prob``; a surviving message is delivered
    after a random delay and, with ``dup_prob``, once more after an independent
    delay. Events are ordered by (time, messages before timers, msg_id, copy).
    ``drop_rule(envelope) -> bool`` forces drops for scripted tests.
    """

    def __init__(self, plan: Optional[FaultPlan] = None, record: bool = False,
                 drop_rule: Optional[Callable[[Envelope], bool]] = None):
        self.plan = plan or FaultPlan()
        self._rng = random.Random(self.plan.seed)
        self._handlers: Dict[int, Callable] = {}
        self._heap: List[tuple] = []
        self._now = 0.0
        self._next_msg = 0
        self._next_timer = 0
        self.drop_rule = drop_rule
        self.record = record
        self.events: List[tuple] = []
        self.stats = {"sent": 0, "dropped": 0, "duplicated": 0, "delivered": 0}

    def register(self, node_id, handler):
        self._handlers[node_id] = handler

    def now(self):
        return self._now

    def _delay(self):
        p = self.plan
        if p.max_delay == p.min_delay:
            return p.min_delay
        return p.min_delay + (p.max_delay - p.min_delay) * self._rng.random()

    def send(self, src, dst, payload):
        if dst not in self._handlers:
            raise UnknownDestination(f"node {dst} is not registered")
        msg_id = self._next_msg
        self._next_msg += 1
        env = Envelope(src, dst, msg_id, bytes(payload))
        self.stats["sent"] += 1
        dropped = self._rng.random() < self.plan.drop_prob
        if self.drop_rule is not None and self.drop_rule(env):
            dropped = True
        if dropped:
            self.stats["dropped"] += 1
            if self.record:
                self.events.append(("drop", self._now, msg_id, src, dst))
            return
        heapq.heappush(self._heap, (self._now + self._delay(), _MSG, msg_id, 0, env))
        if self._rng.random() < self.plan.dup_prob:
            self.stats["duplicated"] += 1
            heapq.heappush(self._heap, (self._now + self._delay(), _MSG, msg_id, 1, env))

    def call_later(self, delay, fn):
        t = _Timer(fn)
        heapq.heappush(self._heap, (self._now + delay, _TIMER, self._next_timer, 0, t))
        self._next_timer += 1
        return t

    def submit(self, fn):
        fn()

    def pending(self):
        return sum(1 for e in self._heap if e[1] == _MSG or not e[4].cancelled)

    def _step(self):
        when, kind, seq, copy, item = heapq.heappop(self._heap)
        self._now = when
        if kind == _TIMER:
            if not item.cancelled:
                item.fn()
            return None
        self.stats["delivered"] += 1
        if self.record:
            self.events.append(("deliver", when, seq, copy, item.src, item.dst))
        self._handlers[item.dst](item.src, item.payload)
        return item

    def advance_clock(self, dt) -> List[Envelope]:
        """Process every event due by ``now + dt``; returns the delivered envelopes."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        horizon = self._now + dt
        delivered = []
        while self._heap and self._heap[0][0] <= horizon:
            env = self._step()
            if env is not None:
                delivered.append(env)
        self._now = horizon
        return delivered

    def run_until(self, predicate, timeout=float("inf")) -> bool:
        """Process events in order until ``predicate()`` holds.

        Returns False if the simulation goes idle or virtual time passes ``timeout``
        ms from now first.
        """
        deadline = self._now + timeout
        while not predicate():
            if not self._heap or self._heap[0][0] > deadline:
                return predicate()
            self._step()
        return True

    wait_until = run_until

    def run_until_idle(self):
        while self._heap:
            self._step()

    def close(self):
        pass


_ROUTE = struct.Struct("<IIIQ")  # frame length, src, dst, msg_id


class SocketTransport:
    """TCP transport hosting one or more local nodes on a background asyncio loop.

    Remote node addresses are registered with :meth:`set_address`. Messages to a
    peer that cannot be reached are dropped, which the protocols above treat like
    any other loss.
    """

    def __init__(self, host="127.0.0.1", port=0):
        self._host = host
        self._port = port
        self._handlers: Dict[int, Callable] = {}
        self._addresses: Dict[int, Tuple[str, int]] = {}
        self._writers: Dict[Tuple[str, int], asyncio.StreamWriter] = {}
        self._pending: Dict[Tuple[str, int], list] = {}
        self._return: Dict[int, asyncio.StreamWriter] = {}  # senders without a registered address
        self._next_msg = 0
        self._lock = threading.Lock()
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._server = None
        self._serving = set()
        self._started = threading.Event()
        self.address: Optional[Tuple[str, int]] = None
        self.errors: List[BaseException] = []

    def _run(self):
        asyncio.set_event_loop(self.loop)
        self.loop.run_forever()

    def start(self):
        self._thread.start()
        fut = asyncio.run_coroutine_threadsafe(self._listen(), self.loop)
        fut.result(timeout=10)
        return self

    async def _listen(self):
        self._server = await asyncio.start_server(self._serve, self._host, self._port)
        sock = self._server.sockets[0]
        self.address = sock.getsockname()[:2]

    async def _serve(self, reader, writer):
        task = asyncio.current_task()
        self._serving.add(task)
        try:
            while True:
                head = await reader.readexactly(_ROUTE.size)
                length, src, dst, _msg_id = _ROUTE.unpack(head)
                payload = await reader.readexactly(length - (_ROUTE.size - 4))
                if src not in self._addresses and src not in self._handlers:
                    self._return[src] = writer
                self._deliver(src, dst, payload)
        except (asyncio.IncompleteReadError, ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self._serving.discard(task)
            writer.close()

    def _deliver(self, src, dst, payload):
        handler = self._handlers.get(dst)
        if handler is None:
            log.warning("dropping message for unknown local node %s", dst)
            return
        try:
            handler(src, payload)
        except Exception as exc:  # keep the loop alive; surfaced via .errors
            log.exception("handler for node %s failed", dst)
            self.errors.append(exc)

    def register(self, node_id, handler):
        self._handlers[node_id] = handler

    def set_address(self, node_id, addr):
        self._addresses[node_id] = (addr[0], int(addr[1]))

    def now(self):
        return time.monotonic() * 1000.0

    def in_loop(self):
        return threading.current_thread() is self._thread

    def submit(self, fn):
        if self.in_loop():
            fn()
        else:
            self.loop.call_soon_threadsafe(self._guarded, fn)

    def _guarded(self, fn):
        try:
            fn()
        except Exception as exc:
            log.exception("submitted callback failed")
            self.errors.append(exc)

    def call_later(self, delay, fn):
        if self.in_loop():
            return self.loop.call_later(delay / 1000.0, self._guarded, fn)
        holder = _Timer(fn)

        def arm():
            if not holder.cancelled:
                self.loop.call_later(delay / 1000.0, lambda: holder.cancelled or self._guarded(fn))
        self.loop.call_soon_threadsafe(arm)
        return holder

    def send(self, src, dst, payload):
        back = None
        if dst in self._handlers:
            addr = None
        elif dst in self._addresses:
            addr = self._addresses[dst]
        elif dst in self._return:
            addr, back = None, self._return[dst]
        else:
            raise UnknownDestination(f"node {dst} has no known address")
        with self._lock:
            msg_id = self._next_msg
            self._next_msg += 1
        if addr is None and back is None:
            self.submit(lambda: self.loop.call_soon(self._deliver, src, dst, bytes(payload)))
            return
        frame = _ROUTE.pack(len(payload) + _ROUTE.size - 4, src, dst, msg_id) + bytes(payload)
        if back is not None:
            self.submit(lambda: back.is_closing() or back.write(frame))
        else:
            self.submit(lambda: self._write(addr, frame))

    def _write(self, addr, frame):
        writer = self._writers.get(addr)
        if writer is not None and not writer.is_closing():
            writer.write(frame)
            return
        queue = self._pending.get(addr)
        if queue is not None:
            queue.append(frame)
            return
        self._pending[addr] = [frame]
        self.loop.create_task(self._connect(addr))

    async def _connect(self, addr):
        try:
            reader, writer = await asyncio.open_connection(*addr)
        except OSError as exc:
            log.debug("connect to %s failed: %s", addr, exc)
            self._pending.pop(addr, None)
            return
        self._writers[addr] = writer
        self.loop.create_task(self._serve(reader, writer))  # replies may come back this way
        for frame in self._pending.pop(addr, []):
            writer.write(frame)

    def wait_until(self, predicate, timeout=float("inf")) -> bool:
        deadline = time.monotonic() + timeout / 1000.0
        while not predicate():
            if self.errors:
                raise self.errors[0]
            if time.monotonic() > deadline:
                return predicate()
            time.sleep(0.0005)
        return True

    run_until = wait_until

    def close(self):
        if not self._thread.is_alive():
            return

        async def shutdown():
            for w in self._writers.values():
                w.close()
            if self._server is not None:
                self._server.close()
            tasks = list(self._serving)
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)

        try:
            asyncio.run_coroutine_threadsafe(shutdown(), self.loop).result(timeout=5)
        except Exception:
            pass
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(timeout=5)
        if not self._thread.is_alive():
            self.loop.close()
