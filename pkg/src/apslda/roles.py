"""Multi-process deployment: one shard, worker or driver per process over TCP.

Every process receives the same ``--peers`` list: the first S addresses are
shards, the next W are workers, the last one is the driver. A process finds
its own node id by locating its ``--listen`` address in that list. The driver
steers workers with Command messages and waits for their Reports.
"""

import logging
import socket
import threading
import time

from . import wire
from .corpus import init_assignments, partition
from .evaluation import format_perplexity, perplexity
from .paramserver import RowPartitioning, Shard, ShardNode
from .psclient import PSClient, TransportError
from .sampler import Hyperparams, PartitionState
from .trainer import TrainedModel, TrainingAborted, Worker
from .transport import SocketTransport

log = logging.getLogger(__name__)


def parse_addr(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class Topology:
    def __init__(self, peers, shards, workers):
        self.peers = [parse_addr(p) for p in peers]
        if len(self.peers) != shards + workers + 1:
            raise ValueError(f"--peers needs {shards} shard + {workers} worker + 1 driver addresses, "
                             f"got {len(self.peers)}")
        self.shards = shards
        self.workers = workers
        self.shard_ids = list(range(shards))
        self.worker_ids = list(range(shards, shards + workers))
        self.driver_id = shards + workers

    def node_of(self, listen):
        addr = parse_addr(listen)
        if addr not in self.peers:
            raise ValueError(f"--listen {listen} is not in --peers")
        return self.peers.index(addr)

    def wait_for(self, node_ids, timeout=30.0):
        """Block until every listed peer accepts TCP connections."""
        deadline = time.monotonic() + timeout
        for n in node_ids:
            while True:
                try:
                    socket.create_connection(self.peers[n], timeout=1.0).close()
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TransportError(f"peer {n} at {self.peers[n]} is unreachable") from None
                    time.sleep(0.05)

    def transport(self, node_id):
        """Unstarted transport: register handlers first, then ``start()`` to listen."""
        t = SocketTransport(*self.peers[node_id])
        for n, addr in enumerate(self.peers):
            t.set_address(n, addr)
        return t


def run_server(topo: Topology, node_id, V, K):
    if node_id not in topo.shard_ids:
        raise ValueError(f"node {node_id} is not a shard slot in --peers")
    t = topo.transport(node_id)
    node = ShardNode(node_id, Shard(node_id, RowPartitioning(V, topo.shards), K), t)
    stop = threading.Event()

    def handle(src, payload):
        msg = wire.decode(payload)
        if type(msg) is wire.Command and msg.kind == wire.CMD_STOP:
            stop.set()
        else:
            node.handle(src, payload)

    t.register(node_id, handle)
    t.start()
    log.info("shard %d serving rows %d..%d", node_id, node.shard.lo, node.shard.hi - 1)
    stop.wait()
    t.close()
    return 0


def run_worker(topo: Topology, node_id, train_corpus, cfg):
    if node_id not in topo.worker_ids:
        raise ValueError(f"node {node_id} is not a worker slot in --peers")
    index = node_id - topo.shards
    t = topo.transport(node_id)
    hp = Hyperparams(cfg.K, cfg.alpha, cfg.beta, train_corpus.V)
    init, _ = init_assignments(train_corpus, cfg.K, cfg.seed)
    part = partition(init, topo.workers)[index]
    by_id = {d.doc_id: d for d in init.docs}
    state = PartitionState([by_id[i] for i in part.doc_ids], cfg.K)
    client = PSClient(node_id, t, RowPartitioning(train_corpus.V, topo.shards), topo.shard_ids,
                      cfg.K, backoff=cfg.backoff, max_inflight=cfg.max_inflight)
    worker = Worker(index, client, state, hp, cfg)
    stop = threading.Event()

    def report(w):
        status = 0 if w.error is None else 1
        client.transport.send(node_id, topo.driver_id,
                              wire.encode(wire.Report(index, w.iteration, w.drained, status)))

    def on_command(src, msg):
        if msg.kind == wire.CMD_INIT:
            worker.iteration = 0
            worker.push_initial(report)
        elif msg.kind == wire.CMD_ITERATE:
            worker.start_iteration(msg.iteration, report)
        else:
            stop.set()

    client.handlers[wire.Command] = on_command
    t.start()
    stop.wait()
    t.close()
    return 0


def run_driver(topo: Topology, node_id, train_corpus, test_corpus, cfg, progress):
    timeout = cfg.barrier_timeout or 600_000.0
    if node_id != topo.driver_id:
        raise ValueError("the driver must listen on the last --peers address")
    topo.wait_for(topo.shard_ids + topo.worker_ids)
    t = topo.transport(node_id)
    hp = Hyperparams(cfg.K, cfg.alpha, cfg.beta, train_corpus.V)
    client = PSClient(node_id, t, RowPartitioning(train_corpus.V, topo.shards), topo.shard_ids,
                      cfg.K, backoff=cfg.backoff)
    reports = {}

    def on_report(src, msg):
        reports[msg.worker] = msg

    client.handlers[wire.Report] = on_report
    t.start()

    def phase(kind, iteration):
        reports.clear()
        for n in topo.worker_ids:
            client.transport.send(node_id, n, wire.encode(wire.Command(kind, iteration)))
        if not t.wait_until(lambda: len(reports) == topo.workers, timeout):
            raise TrainingAborted(iteration, TransportError("workers did not report"))
        if any(r.status for r in reports.values()):
            raise TrainingAborted(iteration, TransportError("a worker aborted"))
        return sum(r.drained_pushes for r in reports.values())

    matrix, vector = client.matrix(hp.V), client.vector()

    def model():
        return (client.pull_blocking(matrix, timeout=timeout).copy(),
                client.pull_blocking(vector, timeout=timeout)[0].copy())

    def evaluate(n_wk, n_k):
        if test_corpus is None or test_corpus.total_tokens == 0:
            return None
        return perplexity(n_wk, n_k, hp.alpha, hp.beta, test_corpus, cfg.foldin_passes, cfg.seed)

    try:
        phase(wire.CMD_INIT, 0)
        initial = evaluate(*model()) if cfg.eval_every else None
        series, drained_series = [], []
        for it in range(1, cfg.iterations + 1):
            drained = phase(wire.CMD_ITERATE, it)
            drained_series.append(drained)
            p = None
            if cfg.eval_every and (it % cfg.eval_every == 0 or it == cfg.iterations):
                p = evaluate(*model())
                if p is not None:
                    series.append((it, p))
            if progress is not None:
                progress(f"iter={it} drained_pushes={drained} perplexity={format_perplexity(p)}")
        n_wk, n_k = model()
        return TrainedModel(n_wk, n_k, hp, series, initial, drained_series)
    finally:
        for n in topo.shard_ids + topo.worker_ids:
            try:
                t.send(node_id, n, wire.encode(wire.Command(wire.CMD_STOP, 0)))
            except Exception:
                pass
        t.wait_until(lambda: False, 200)
        t.close()
