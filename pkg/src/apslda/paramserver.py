"""Parameter-server shards holding row blocks of n_wk, with n_k on shard 0.

Updates are signed additive deltas deduplicated per (client, txid), so a push
delivered any number of times is applied once.
"""

import hashlib
import logging
import threading
from collections import Counter

import numpy as np

from . import wire

log = logging.getLogger(__name__)

# Row id of the topic-count vector n_k; stored on shard 0 next to its matrix block.
NK_ROW = 0xFFFFFFFF


class RoutingError(LookupError):
    pass


class RowPartitioning:
    """Contiguous row blocks over ``shards`` servers, sizes balanced within one row."""

    def __init__(self, total_rows: int, shards: int):
        if shards < 1:
            raise ValueError("need at least one shard")
        self.total_rows = total_rows
        self.shards = shards
        base, extra = divmod(total_rows, shards)
        sizes = [base + (1 if s < extra else 0) for s in range(shards)]
        self.starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def bounds(self, shard):
        return int(self.starts[shard]), int(self.starts[shard + 1])

    def shard_of(self, row: int) -> int:
        if row == NK_ROW:
            return 0
        if not 0 <= row < self.total_rows:
            raise RoutingError(f"row {row} outside 0..{self.total_rows - 1}")
        return int(np.searchsorted(self.starts, row, side="right") - 1)

    def shards_of(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        out = np.searchsorted(self.starts, rows, side="right") - 1
        out[rows == NK_ROW] = 0
        bad = (rows != NK_ROW) & ((rows < 0) | (rows >= self.total_rows))
        if bad.any():
            raise RoutingError(f"rows {rows[bad][:5].tolist()} outside the matrix")
        return out

    def sizes(self):
        return np.diff(self.starts).tolist()


class Shard:
    """State of one server: a dense block of matrix rows plus the txid bookkeeping.

    ``floor`` is the per-client watermark sent with releases: the client promises
    it will never send data under a txid below it that the shard has not seen,
    so everything below the floor can be forgotten and rejected as a duplicate.
    """

    def __init__(self, shard_id: int, partitioning: RowPartitioning, K: int):
        self.shard_id = shard_id
        self.partitioning = partitioning
        self.K = K
        self.lo, self.hi = partitioning.bounds(shard_id)
        self.rows = np.zeros((self.hi - self.lo, K), dtype=np.int64)
        self.topic = np.zeros(K, dtype=np.int64) if shard_id == 0 else None
        self.next_txid = {}
        self.applied_txids = set()
        self._released = {}
        self._floor = {}
        self._lock = threading.Lock()
        self.applied_count = Counter()

    def owns(self, row) -> bool:
        if row == NK_ROW:
            return self.topic is not None
        return self.lo <= row < self.hi

    def _check_rows(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        nk = rows == NK_ROW
        if nk.any() and self.topic is None:
            raise RoutingError(f"shard {self.shard_id} does not hold the topic vector")
        mat = rows[~nk]
        if len(mat) and (mat.min() < self.lo or mat.max() >= self.hi):
            raise RoutingError(f"shard {self.shard_id} owns rows {self.lo}..{self.hi - 1}")
        return rows, nk

    def pull(self, rows, cols=None) -> np.ndarray:
        """Copy of the requested rows (each row is an atomic snapshot)."""
        rows, nk = self._check_rows(rows)
        with self._lock:
            out = np.empty((len(rows), self.K), dtype=np.int64)
            if (~nk).any():
                out[~nk] = self.rows[rows[~nk] - self.lo]
            if nk.any():
                out[nk] = self.topic
        if cols is not None and len(cols):
            out = out[:, np.asarray(cols, dtype=np.int64)]
        return out

    def acquire_txid(self, client: int) -> int:
        with self._lock:
            txid = self.next_txid.get(client, 0) + 1
            self.next_txid[client] = txid
        return txid

    def _seen(self, client, txid):
        return (txid < self._floor.get(client, 0)
                or (client, txid) in self.applied_txids
                or txid in self._released.get(client, ()))

    def push_data(self, client: int, txid: int, rows, cols, incs) -> bool:
        """Apply the delta unless this (client, txid) was already applied. Returns True if applied."""
        rows, nk = self._check_rows(rows)
        cols = np.asarray(cols, dtype=np.int64)
        incs = np.asarray(incs, dtype=np.int64)
        if len(cols) and (cols.min() < 0 or cols.max() >= self.K):
            raise RoutingError(f"column outside 0..{self.K - 1}")
        with self._lock:
            if self._seen(client, txid):
                return False
            m = ~nk
            if m.any():
                np.add.at(self.rows, (rows[m] - self.lo, cols[m]), incs[m])
            if nk.any():
                np.add.at(self.topic, cols[nk], incs[nk])
            self.applied_txids.add((client, txid))
            self.applied_count[(client, txid)] += 1
        return True

    def release_txid(self, client: int, txid: int, floor: int = 0) -> None:
        """Forget ``txid`` and everything below ``floor``; idempotent."""
        with self._lock:
            old_floor = self._floor.get(client, 0)
            new_floor = max(old_floor, floor)
            self._floor[client] = new_floor
            released = self._released.setdefault(client, set())
            if (client, txid) in self.applied_txids:
                self.applied_txids.discard((client, txid))
                if txid >= new_floor:
                    released.add(txid)
            if new_floor > old_floor:
                self._released[client] = {t for t in released if t >= new_floor}
                stale = [key for key in self.applied_txids if key[0] == client and key[1] < new_floor]
                for key in stale:
                    self.applied_txids.discard(key)

    def retained_txids(self) -> int:
        """Dedup entries currently held (applied-unreleased plus released above the floor)."""
        return len(self.applied_txids) + sum(len(s) for s in self._released.values())

    def state_hash(self) -> str:
        h = hashlib.sha256(self.rows.tobytes())
        if self.topic is not None:
            h.update(self.topic.tobytes())
        return h.hexdigest()


class ShardNode:
    """Network front-end of a :class:`Shard`."""

    def __init__(self, node_id, shard: Shard, transport):
        self.node_id = node_id
        self.shard = shard
        self.transport = transport
        transport.register(node_id, self.handle)

    def reply(self, dst, msg):
        self.transport.send(self.node_id, dst, wire.encode(msg))

    def handle(self, src, payload):
        msg = wire.decode(payload)
        t = type(msg)
        try:
            if t is wire.PullReq:
                vals = self.shard.pull(msg.rows, msg.cols)
                self.reply(src, wire.PullResp(msg.req_id, vals))
            elif t is wire.TxidReq:
                self.reply(src, wire.TxidResp(msg.req_id, self.shard.acquire_txid(msg.client)))
            elif t is wire.PushData:
                self.shard.push_data(msg.client, msg.txid, msg.rows, msg.cols, msg.incs)
                self.reply(src, wire.PushAck(msg.txid))
            elif t is wire.TxidRelease:
                self.shard.release_txid(msg.client, msg.txid, msg.floor)
                self.reply(src, wire.ReleaseAck(msg.txid))
            else:
                log.warning("shard %s ignoring %s", self.shard.shard_id, t.__name__)
        except RoutingError:
            log.exception("shard %s rejected a request from node %s", self.shard.shard_id, src)
