"""End-to-end training: shards, asynchronous workers, iteration barriers, evaluation.

Per iteration every worker pulls n_k once, then streams pulls of its words'
n_wk rows through a bounded window. Each arriving row is resampled in ascending
word order and the resulting count changes are pushed immediately, while later
rows are still in flight. An iteration ends once every worker has resampled all
its words and all of its pushes are Done.
"""

import logging
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Corpus, init_assignments, partition
from .evaluation import format_perplexity, perplexity
from .paramserver import NK_ROW, RowPartitioning, Shard, ShardNode
from .psclient import BackoffPolicy, PSClient, TransportError
from .sampler import Hyperparams, PartitionState, word_rng
from .transport import FaultPlan, SimTransport, SocketTransport

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, iteration, cause):
        super().__init__(f"training aborted in iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class TrainerConfig:
    K: int = 20
    alpha: float = 0.05
    beta: float = 0.01
    iterations: int = 50
    mh_steps: int = 2
    workers: int = 1
    shards: int = 1
    seed: int = 0
    eval_every: int = 1
    top_n: int = 10
    foldin_passes: int = 20
    window: int = 16
    max_inflight: int = 256
    init_chunk: int = 64
    fault: FaultPlan = field(default_factory=FaultPlan)
    backoff: BackoffPolicy = field(default_factory=lambda: BackoffPolicy(max_retries=24))
    threads: bool = False
    barrier_timeout: Optional[float] = None  # ms; None: unbounded in the simulator, 10 min on sockets

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.workers < 1 or self.shards < 1:
            raise ValueError("workers and shards must be >= 1")
        if self.mh_steps < 1 or self.window < 1:
            raise ValueError("mh_steps and window must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        Hyperparams(self.K, self.alpha, self.beta, 1)


@dataclass
class TrainedModel:
    n_wk: np.ndarray
    n_k: np.ndarray
    hp: Hyperparams
    perplexity: List[Tuple[int, float]]
    initial_perplexity: Optional[float] = None
    drained_pushes: List[int] = field(default_factory=list)
    assignments: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def final_perplexity(self):
        return self.perplexity[-1][1] if self.perplexity else None


class Worker:
    """One partition's resampling loop, driven by pull/push completions.

    Everything runs on the client's transport thread. ``on_done(worker)`` fires
    once the phase's compute is finished and every push it issued is Done.
    """

    def __init__(self, index, client: PSClient, state: PartitionState, hp: Hyperparams,
                 cfg: TrainerConfig):
        self.index = index
        self.client = client
        self.state = state
        self.hp = hp
        self.cfg = cfg
        self.matrix = client.matrix(hp.V)
        self.vector = client.vector()
        self.words = [int(w) for w in state.words]
        self.error: Optional[BaseException] = None
        self.iteration = 0
        self.drained = 0
        self._on_done = None
        self._reset()

    def _reset(self):
        self._pending = 0
        self._compute_done = False
        self._reported = False
        self._rows = {}
        self._next_issue = 0
        self._next_proc = 0
        self._nk = None
        self.drained = 0

    def _guard(self, fn, *args):
        try:
            fn(*args)
        except BaseException as exc:
            self._fail(exc)

    def _fail(self, exc):
        if self.error is None:
            self.error = exc
            log.error("worker %d failed: %s", self.index, exc)
        if not self._reported:
            self._reported = True
            if self._on_done is not None:
                self._on_done(self)

    def _check_done(self):
        if self._compute_done and self._pending == 0 and not self._reported:
            self._reported = True
            self._on_done(self)

    def _push(self, rows, cols, incs):
        self._pending += 1
        fut = self.client.push(self.matrix, rows, cols, incs)
        fut.add_done_callback(lambda f: self._guard(self._push_done, f))

    def _push_done(self, fut):
        self._pending -= 1
        exc = fut.exception()
        if exc is not None:
            self._fail(exc)
            return
        self.drained += 1
        self._pump()
        self._check_done()

    def push_initial(self, on_done):
        """Push this partition's initial counts through the exactly-once path."""
        self._reset()
        self._on_done = on_done
        K = self.hp.K
        counts = np.zeros((self.hp.V, K), dtype=np.int64)
        np.add.at(counts, (self.state.tokens, self.state.z), 1)
        words = np.flatnonzero(counts.any(axis=1))
        for start in range(0, len(words), self.cfg.init_chunk):
            block = words[start:start + self.cfg.init_chunk]
            r, c = np.nonzero(counts[block])
            self._push(block[r], c, counts[block][r, c])
        nk = counts.sum(axis=0)
        cols = np.flatnonzero(nk)
        if len(cols):
            self._push(np.full(len(cols), NK_ROW), cols, nk[cols])
        self._compute_done = True
        self._check_done()

    def start_iteration(self, iteration, on_done):
        self._reset()
        self.iteration = iteration
        self._on_done = on_done
        fut = self.client.pull(self.vector)
        fut.add_done_callback(lambda f: self._guard(self._nk_arrived, f))

    def _nk_arrived(self, fut):
        self._nk = fut.result()[0].copy()
        self._pump()
        self._check_done()

    def _row_arrived(self, idx, fut):
        self._rows[idx] = fut.result()[0]
        self._pump()

    def _pump(self):
        if self._nk is None or self._compute_done or self.error is not None:
            return
        nwords = len(self.words)
        while True:
            while self._next_issue < nwords and self._next_issue - self._next_proc < self.cfg.window:
                idx = self._next_issue
                self._next_issue += 1
                fut = self.client.pull(self.matrix, [self.words[idx]])
                fut.add_done_callback(lambda f, i=idx: self._guard(self._row_arrived, i, f))
            if self._next_proc in self._rows and self.client.can_push():
                idx = self._next_proc
                self._next_proc += 1
                self._resample(self.words[idx], self._rows.pop(idx))
                continue
            break
        if self._next_proc == nwords:
            self._compute_done = True
            self._check_done()

    def _resample(self, w, pulled):
        row = np.array(pulled, dtype=np.int64)
        rng = word_rng(self.cfg.seed, self.index, self.iteration, w)
        res = self.state.resample_word(w, row, self._nk, self.hp, rng, self.cfg.mh_steps)
        if not res.changed:
            return
        delta = res.row_delta(self.hp.K)
        cols = np.flatnonzero(delta)
        if not len(cols):
            return
        rows = np.concatenate([np.full(len(cols), w), np.full(len(cols), NK_ROW)])
        self._push(rows, np.concatenate([cols, cols]), np.concatenate([delta[cols], delta[cols]]))


class Cluster:
    """Shards, worker clients and a driver client wired to one transport setup.

    Node ids: shards ``0..S-1``, workers ``S..S+W-1``, driver ``S+W``.
    """

    def __init__(self, cfg: TrainerConfig, V: int, trace=False):
        self.cfg = cfg
        S, W = cfg.shards, cfg.workers
        self.partitioning = RowPartitioning(V, S)
        self.shard_ids = list(range(S))
        self.worker_ids = list(range(S, S + W))
        self.driver_id = S + W
        if cfg.threads:
            ends = [SocketTransport().start() for _ in range(S + W + 1)]
            for t in ends:
                for node, other in enumerate(ends):
                    t.set_address(node, other.address)
            self.transports = ends
        else:
            sim = SimTransport(cfg.fault)
            self.transports = [sim] * (S + W + 1)
        self.sim = None if cfg.threads else self.transports[0]
        self.shards = [Shard(s, self.partitioning, cfg.K) for s in range(S)]
        self.shard_nodes = [ShardNode(s, self.shards[s], self.transports[s]) for s in range(S)]
        self.clients = [
            PSClient(n, self.transports[n], self.partitioning, self.shard_ids, cfg.K,
                     backoff=cfg.backoff, max_inflight=cfg.max_inflight, trace=trace)
            for n in self.worker_ids
        ]
        self.driver = PSClient(self.driver_id, self.transports[self.driver_id], self.partitioning,
                               self.shard_ids, cfg.K, backoff=cfg.backoff, trace=trace)

    @property
    def barrier_timeout(self):
        # virtual time costs nothing and a stalled simulation goes idle, so only sockets need a bound
        if self.cfg.barrier_timeout is not None:
            return self.cfg.barrier_timeout
        return float("inf") if self.sim is not None else 600_000.0

    def wait_until(self, predicate, timeout=None):
        return self.transports[self.driver_id].wait_until(predicate, timeout or self.barrier_timeout)

    def pull_model(self, V):
        n_wk = self.driver.pull_blocking(self.driver.matrix(V), timeout=self.barrier_timeout)
        n_k = self.driver.pull_blocking(self.driver.vector(), timeout=self.barrier_timeout)[0]
        return n_wk.copy(), n_k.copy()

    def close(self):
        seen = set()
        for t in self.transports:
            if id(t) not in seen:
                seen.add(id(t))
                t.close()


def _stderr_progress(line):
    print(line, file=sys.stderr, flush=True)


class Trainer:
    def __init__(self, cfg: TrainerConfig, corpus: Corpus, test: Optional[Corpus] = None,
                 progress: Optional[Callable[[str], None]] = _stderr_progress,
                 on_iteration=None, watch=None, trace=False):
        self.cfg = cfg
        self.corpus = corpus
        self.test = test if test is not None and test.total_tokens > 0 else None
        self.progress = progress
        self.on_iteration = on_iteration
        self.watch = watch
        self.hp = Hyperparams(cfg.K, cfg.alpha, cfg.beta, corpus.V)
        self.cluster = Cluster(cfg, corpus.V, trace=trace)
        init_corpus, self.initial_deltas = init_assignments(corpus, cfg.K, cfg.seed)
        self.parts = partition(init_corpus, cfg.workers)
        by_id = {d.doc_id: d for d in init_corpus.docs}
        self.workers = []
        for p, client in zip(self.parts, self.cluster.clients):
            state = PartitionState([by_id[i] for i in p.doc_ids], cfg.K)
            self.workers.append(Worker(p.worker_id, client, state, self.hp, cfg))
        self._finished = set()
        self._stopped = False

    def _worker_done(self, worker):
        self._finished.add(worker.index)

    def _run_phase(self, iteration, start):
        self._finished = set()
        for w in self.workers:
            w.client.transport.submit(lambda w=w: start(w))
        self.drain_barrier(iteration)

    def drain_barrier(self, iteration):
        """Wait until every worker finished its phase with all pushes Done."""
        n = len(self.workers)
        ok = self.cluster.wait_until(lambda: len(self._finished) == n)
        for w in self.workers:
            if w.error is not None:
                raise TrainingAborted(iteration, w.error)
        if not ok:
            raise TrainingAborted(iteration, TransportError("drain barrier timed out"))
        return sum(w.drained for w in self.workers)

    def pull_model(self):
        return self.cluster.pull_model(self.hp.V)

    def evaluate(self, n_wk, n_k):
        if self.test is None:
            return None
        return perplexity(n_wk, n_k, self.hp.alpha, self.hp.beta, self.test,
                          self.cfg.foldin_passes, self.cfg.seed)

    def _arm_watch(self):
        interval, callback = self.watch
        driver = self.cluster.driver
        matrix = driver.matrix(self.hp.V)

        def tick():
            if self._stopped:
                return
            fut = driver.pull(matrix)
            fut.add_done_callback(lambda f: f.exception() is None and not self._stopped and callback(f.result()))
            driver.transport.call_later(interval, tick)

        driver.transport.call_later(interval, tick)

    def run(self) -> TrainedModel:
        cfg = self.cfg
        try:
            self._run_phase(0, lambda w: w.push_initial(self._worker_done))
            initial = None
            if self.test is not None and cfg.eval_every:
                initial = self.evaluate(*self.pull_model())
            if self.watch is not None:
                self._arm_watch()
            series = []
            drained_series = []
            for it in range(1, cfg.iterations + 1):
                self._run_phase(it, lambda w, it=it: w.start_iteration(it, self._worker_done))
                drained = sum(w.drained for w in self.workers)
                drained_series.append(drained)
                p = None
                model = None
                if cfg.eval_every and (it % cfg.eval_every == 0 or it == cfg.iterations) and self.test is not None:
                    model = self.pull_model()
                    p = self.evaluate(*model)
                    series.append((it, p))
                if self.on_iteration is not None:
                    self.on_iteration(it, model if model is not None else self.pull_model())
                if self.progress is not None:
                    self.progress(f"iter={it} drained_pushes={drained} perplexity={format_perplexity(p)}")
            self._stopped = True
            n_wk, n_k = self.pull_model()
            assignments = {}
            for w in self.workers:
                for doc_id, z in zip(w.state.doc_ids, w.state.assignments()):
                    assignments[doc_id] = z
            return TrainedModel(n_wk, n_k, self.hp, series, initial, drained_series, assignments)
        finally:
            self._stopped = True
            self.cluster.close()


def train(cfg: TrainerConfig, corpus: Corpus, test: Optional[Corpus] = None, **kwargs) -> TrainedModel:
    """Train on ``corpus``; perplexity is reported on ``test`` every ``eval_every`` iterations."""
    return Trainer(cfg, corpus, test, **kwargs).run()


def top_words_from_counts(n_wk, vocab: Sequence[str], n: int):
    """Per topic, the ``n`` highest-count words as (label, count); ties go to lower ids."""
    if n < 1:
        raise ValueError("n must be >= 1")
    n_wk = np.asarray(n_wk)
    V, K = n_wk.shape
    ids = np.arange(V)
    out = []
    for k in range(K):
        order = np.lexsort((ids, -n_wk[:, k]))[:n]
        out.append([(vocab[w], int(n_wk[w, k])) for w in order])
    return out


def top_words(client: PSClient, V: int, vocab: Sequence[str], n: int, timeout=float("inf")):
    """Poll the servers for the current word-topic counts and rank each topic's words."""
    if n < 1:
        raise ValueError("n must be >= 1")
    n_wk = client.pull_blocking(client.matrix(V), timeout=timeout)
    return top_words_from_counts(n_wk, vocab, n)


def format_top_words(ranked) -> List[str]:
    return [f"topic {k}: " + " ".join(f"{w}({c})" for w, c in words) for k, words in enumerate(ranked)]
