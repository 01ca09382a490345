"""Client side of the parameter server: retried pulls and exactly-once pushes.

Pulls are idempotent, so every per-shard sub-request is simply resent with an
exponentially growing timeout. Pushes run a per-shard handshake::

    AcquiringId --TxidResp--> Sending --PushAck--> Releasing --ReleaseAck--> Done

Only TxidReq, PushData (deduplicated by the shard) and TxidRelease (idempotent)
are ever retried, so a delta reaches the shard's counters exactly once.
All methods may be called from any thread; work runs on the transport's thread.
"""

import logging
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import wire
from .paramserver import NK_ROW, RowPartitioning

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    pass


class PullFailed(TransportError):
    pass


class PushFailed(TransportError):
    """A push sub-transaction exhausted its retries.

    ``state`` is the phase it failed in: ``AcquiringId`` means the delta was
    certainly not applied, ``Sending`` means unknown, ``Releasing`` means applied.
    """

    def __init__(self, shard, state, message):
        super().__init__(message)
        self.shard = shard
        self.state = state

    @property
    def indeterminate(self):
        return self.state == SENDING


@dataclass(frozen=True)
class BackoffPolicy:
    """Attempt ``i`` (0-based) waits ``initial_timeout * multiplier**i`` ms.

    ``max_retries`` is the total number of attempts; when the last one times
    out the operation fails.
    """

    initial_timeout: float = 50.0
    multiplier: float = 2.0
    max_retries: int = 8

    def __post_init__(self):
        if self.initial_timeout <= 0 or self.multiplier <= 1 or self.max_retries < 1:
            raise ValueError("need initial_timeout > 0, multiplier > 1, max_retries >= 1")

    def timeout(self, attempt):
        return self.initial_timeout * self.multiplier ** attempt


@dataclass(frozen=True)
class MatrixHandle:
    rows: int
    cols: int
    partitioning: RowPartitioning
    shard_nodes: tuple


@dataclass(frozen=True)
class VectorHandle:
    size: int
    partitioning: RowPartitioning
    shard_nodes: tuple


ACQUIRING, SENDING, RELEASING, DONE, FAILED = "AcquiringId", "Sending", "Releasing", "Done", "Failed"


class _SubPull:
    __slots__ = ("op", "shard", "node", "req_id", "rows", "positions", "attempt", "timer", "msg")


class _PullOp:
    def __init__(self, future, nrows, ncols, remaining):
        self.future = future
        self.values = np.empty((nrows, ncols), dtype=np.int64)
        self.remaining = remaining
        self.subs: List[_SubPull] = []


@dataclass
class PushTransaction:
    shard: int
    node: int
    client: int
    rows: np.ndarray
    cols: np.ndarray
    incs: np.ndarray
    op: object = None
    state: str = ACQUIRING
    txid: Optional[int] = None
    req_id: int = 0
    attempts: Dict[str, int] = field(default_factory=lambda: {ACQUIRING: 0, SENDING: 0, RELEASING: 0})
    timer: object = None


class _PushOp:
    def __init__(self, future, remaining):
        self.future = future
        self.remaining = remaining
        self.failed = False
        self.txs: List[PushTransaction] = []


class PSClient:
    """One client node. ``client_id`` doubles as the node id on the transport."""

    def __init__(self, node_id, transport, partitioning: RowPartitioning, shard_nodes,
                 K: int, backoff: Optional[BackoffPolicy] = None, max_inflight: int = 256,
                 trace: bool = False):
        self.node_id = node_id
        self.client_id = node_id
        self.transport = transport
        self.partitioning = partitioning
        self.shard_nodes = tuple(shard_nodes)
        self._shard_of_node = {n: s for s, n in enumerate(self.shard_nodes)}
        self.K = K
        self.backoff = backoff or BackoffPolicy()
        self.max_inflight = max_inflight
        self._next_req = 1
        self._pulls: Dict[int, _SubPull] = {}
        self._acquiring: Dict[int, PushTransaction] = {}
        self._sending: Dict[tuple, PushTransaction] = {}
        self._releasing: Dict[tuple, PushTransaction] = {}
        nshards = len(self.shard_nodes)
        self._held = [set() for _ in range(nshards)]
        self._max_assigned = [0] * nshards
        self._floor = [0] * nshards
        self._queued = deque()
        self.inflight = 0
        self.pending_pulls = 0
        self.completed_pushes = 0
        self.failures: List[Exception] = []
        self.trace = [] if trace else None
        self.handlers = {}
        transport.register(node_id, self.handle)

    # -- handles -------------------------------------------------------------

    def matrix(self, V):
        return MatrixHandle(V, self.K, self.partitioning, self.shard_nodes)

    def vector(self):
        return VectorHandle(self.K, self.partitioning, self.shard_nodes)

    # -- plumbing ------------------------------------------------------------

    def _req(self):
        r = self._next_req
        self._next_req += 1
        return r

    def _send(self, node, msg):
        self.transport.send(self.node_id, node, wire.encode(msg))

    def _log(self, *event):
        if self.trace is not None:
            self.trace.append((self.transport.now(),) + event)

    def outstanding_pushes(self):
        return self.inflight + len(self._queued)

    def can_push(self):
        return self.outstanding_pushes() < self.max_inflight

    def idle(self):
        return self.outstanding_pushes() == 0 and self.pending_pulls == 0

    def handle(self, src, payload):
        msg = wire.decode(payload)
        t = type(msg)
        if t is wire.PullResp:
            self._on_pull_resp(msg)
        elif t is wire.TxidResp:
            self._on_txid(src, msg)
        elif t is wire.PushAck:
            self._on_ack(src, msg)
        elif t is wire.ReleaseAck:
            self._on_release_ack(src, msg)
        elif t in self.handlers:
            self.handlers[t](src, msg)
        else:
            log.warning("client %s ignoring %s from %s", self.node_id, t.__name__, src)

    # -- pull ----------------------------------------------------------------

    def pull(self, handle, rows=None, cols=None) -> Future:
        """Fetch ``rows`` (default: all) with at most one request per shard."""
        if isinstance(handle, VectorHandle):
            rows = [NK_ROW]
        elif rows is None:
            rows = np.arange(handle.rows)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray([] if cols is None else cols, dtype=np.int64)
        fut = Future()
        self.transport.submit(lambda: self._start_pull(fut, rows, cols))
        return fut

    def _start_pull(self, fut, rows, cols):
        try:
            shards = self.partitioning.shards_of(rows)
        except Exception as exc:
            fut.set_exception(exc)
            return
        ncols = len(cols) if len(cols) else self.K
        groups = [np.flatnonzero(shards == s) for s in np.unique(shards)]
        op = _PullOp(fut, len(rows), ncols, len(groups))
        if not groups:
            fut.set_result(op.values)
            return
        self.pending_pulls += 1
        for positions in groups:
            sub = _SubPull()
            sub.op = op
            sub.shard = int(shards[positions[0]])
            sub.node = self.shard_nodes[sub.shard]
            sub.req_id = self._req()
            sub.rows = rows[positions]
            sub.positions = positions
            sub.attempt = 0
            sub.timer = None
            sub.msg = wire.PullReq(sub.req_id, sub.rows, cols)
            op.subs.append(sub)
            self._pulls[sub.req_id] = sub
            self._send_pull(sub)

    def _send_pull(self, sub):
        timeout = self.backoff.timeout(sub.attempt)
        self._log("pull", sub.req_id, sub.shard, sub.attempt, timeout)
        self._send(sub.node, sub.msg)
        sub.timer = self.transport.call_later(timeout, lambda: self._pull_timeout(sub))

    def _pull_timeout(self, sub):
        if self._pulls.get(sub.req_id) is not sub:
            return
        sub.attempt += 1
        if sub.attempt < self.backoff.max_retries:
            self._send_pull(sub)
            return
        op = sub.op
        for other in op.subs:
            if self._pulls.get(other.req_id) is other:
                del self._pulls[other.req_id]
                if other.timer is not None:
                    other.timer.cancel()
        self.pending_pulls -= 1
        err = PullFailed(f"pull from shard {sub.shard} failed after {sub.attempt} attempts")
        self._log("pull-failed", sub.req_id, sub.shard, sub.attempt)
        self.failures.append(err)
        op.future.set_exception(err)

    def _on_pull_resp(self, msg):
        sub = self._pulls.pop(msg.req_id, None)
        if sub is None:
            return  # duplicate or late response
        sub.timer.cancel()
        op = sub.op
        op.values[sub.positions] = msg.values
        op.remaining -= 1
        self._log("pull-ok", sub.req_id, sub.shard, sub.attempt)
        if op.remaining == 0:
            self.pending_pulls -= 1
            op.future.set_result(op.values)

    def pull_blocking(self, handle, rows=None, cols=None, timeout=float("inf")):
        """Pull and wait; drives the simulator when running on one."""
        fut = self.pull(handle, rows, cols)
        if not self.transport.wait_until(fut.done, timeout):
            raise PullFailed("pull did not complete")
        return fut.result()

    # -- push ----------------------------------------------------------------

    def push(self, handle, rows, cols, incs) -> Future:
        """Add ``incs`` at (rows, cols); rows may include the topic vector's ``NK_ROW``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        incs = np.asarray(incs, dtype=np.int64)
        fut = Future()
        self.transport.submit(lambda: self._enqueue_push(fut, rows, cols, incs))
        return fut

    def _enqueue_push(self, fut, rows, cols, incs):
        if self.inflight >= self.max_inflight:
            self._queued.append((fut, rows, cols, incs))
            return
        self._start_push(fut, rows, cols, incs)

    def _start_push(self, fut, rows, cols, incs):
        try:
            shards = self.partitioning.shards_of(rows)
        except Exception as exc:
            fut.set_exception(exc)
            return
        groups = [(int(s), np.flatnonzero(shards == s)) for s in np.unique(shards)]
        if not groups:
            fut.set_result(None)
            return
        op = _PushOp(fut, len(groups))
        self.inflight += 1
        for s, idx in groups:
            tx = PushTransaction(s, self.shard_nodes[s], self.client_id, rows[idx], cols[idx], incs[idx], op=op)
            op.txs.append(tx)
            tx.req_id = self._req()
            self._acquiring[tx.req_id] = tx
            self._transmit(tx)

    def _transmit(self, tx):
        if tx.state == ACQUIRING:
            msg = wire.TxidReq(self.client_id, tx.req_id)
        elif tx.state == SENDING:
            msg = wire.PushData(self.client_id, tx.txid, tx.rows, tx.cols, tx.incs)
        else:
            msg = wire.TxidRelease(self.client_id, tx.txid, self._floor[tx.shard])
        attempt = tx.attempts[tx.state]
        timeout = self.backoff.timeout(attempt)
        self._log("push", tx.state, tx.shard, tx.txid, attempt, timeout)
        self._send(tx.node, msg)
        state = tx.state
        tx.timer = self.transport.call_later(timeout, lambda: self._push_timeout(tx, state))

    def _push_timeout(self, tx, state):
        if tx.state != state:
            return
        tx.attempts[state] += 1
        if tx.attempts[state] < self.backoff.max_retries:
            self._transmit(tx)
            return
        if state == ACQUIRING:
            self._acquiring.pop(tx.req_id, None)
        elif state == SENDING:
            self._sending.pop((tx.shard, tx.txid), None)
            self._held[tx.shard].discard(tx.txid)
        else:
            self._releasing.pop((tx.shard, tx.txid), None)
        tx.state = FAILED
        self._log("push-failed", state, tx.shard, tx.txid)
        err = PushFailed(tx.shard, state, f"push to shard {tx.shard} failed in state {state}")
        self.failures.append(err)
        op = tx.op
        if not op.failed:
            op.failed = True
            self._finish_op(op, err)

    def _on_txid(self, src, msg):
        tx = self._acquiring.get(msg.req_id)
        if tx is None:
            return  # orphaned id; the shard never sees data for it
        if msg.txid < self._floor[tx.shard]:
            return  # already declared dead by our own floor; keep waiting for a fresh one
        del self._acquiring[msg.req_id]
        tx.timer.cancel()
        tx.txid = msg.txid
        tx.state = SENDING
        self._held[tx.shard].add(tx.txid)
        self._max_assigned[tx.shard] = max(self._max_assigned[tx.shard], tx.txid)
        self._sending[(tx.shard, tx.txid)] = tx
        self._transmit(tx)

    def _on_ack(self, src, msg):
        shard = self._shard_of_node.get(src)
        tx = self._sending.pop((shard, msg.txid), None)
        if tx is None:
            return  # duplicate ack
        tx.timer.cancel()
        held = self._held[shard]
        held.discard(tx.txid)
        floor = min(held) if held else self._max_assigned[shard] + 1
        self._floor[shard] = max(self._floor[shard], floor)
        tx.state = RELEASING
        self._releasing[(shard, tx.txid)] = tx
        self._transmit(tx)

    def _on_release_ack(self, src, msg):
        shard = self._shard_of_node.get(src)
        tx = self._releasing.pop((shard, msg.txid), None)
        if tx is None:
            return
        tx.timer.cancel()
        tx.state = DONE
        op = tx.op
        op.remaining -= 1
        if op.remaining == 0 and not op.failed:
            self._finish_op(op, None)

    def _finish_op(self, op, err):
        self.inflight -= 1
        if err is None:
            self.completed_pushes += 1
            op.future.set_result(None)
        else:
            op.future.set_exception(err)
        while self._queued and self.inflight < self.max_inflight:
            self._start_push(*self._queued.popleft())

    def drain(self, timeout=float("inf")):
        """Block until every push issued so far is Done (or raise on failure)."""
        ok = self.transport.wait_until(lambda: self.outstanding_pushes() == 0 or bool(self.failures), timeout)
        if self.failures:
            raise self.failures[0]
        if not ok:
            raise TransportError("drain timed out with pushes outstanding")
