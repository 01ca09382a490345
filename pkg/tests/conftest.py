import numpy as np
import pytest

from apslda.corpus import Corpus, Document, write_libsvm
from apslda.paramserver import RowPartitioning, Shard, ShardNode
from apslda.psclient import BackoffPolicy, PSClient
from apslda.synthetic import planted_corpus
from apslda.transport import FaultPlan, SimTransport


def make_corpus(docs, V=None):
    docs = [Document(i, np.asarray(t, dtype=np.int32)) for i, t in enumerate(docs)]
    if V is None:
        V = 1 + max((int(d.tokens.max()) for d in docs if len(d.tokens)), default=-1)
    return Corpus(V, docs)


class SimCluster:
    """Shards on nodes 0..S-1 and clients on 100.. over one simulated network."""

    def __init__(self, V, K, shards=1, clients=1, plan=None, backoff=None, drop_rule=None,
                 record=False, trace=False):
        self.net = SimTransport(plan or FaultPlan(), record=record, drop_rule=drop_rule)
        self.part = RowPartitioning(V, shards)
        self.shards = [Shard(s, self.part, K) for s in range(shards)]
        self.nodes = [ShardNode(s, self.shards[s], self.net) for s in range(shards)]
        self.clients = [PSClient(100 + i, self.net, self.part, range(shards), K,
                                 backoff=backoff, trace=trace) for i in range(clients)]
        self.V = V

    @property
    def client(self):
        return self.clients[0]

    def matrix(self):
        return self.client.matrix(self.V)

    def run(self, futures):
        return self.net.run_until(lambda: all(f.done() for f in futures))


@pytest.fixture
def sim_cluster():
    return SimCluster


@pytest.fixture
def small_planted():
    return planted_corpus(V=120, n_docs=150, n_topics=4, doc_len=20, seed=11)


@pytest.fixture
def dataset_file(tmp_path, small_planted):
    path = tmp_path / "docs.txt"
    write_libsvm(small_planted.corpus, path)
    return path


@pytest.fixture
def fast_backoff():
    return BackoffPolicy(initial_timeout=50.0, multiplier=2.0, max_retries=30)


def pytest_configure(config):
    config.acceptance_results = []


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance_results", [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line[1])
