"""Collapsed-Gibbs conditional and the O(1) Metropolis-Hastings cycle sampler.

``gibbs_conditional`` is the exact O(K) conditional and serves as the oracle.
``mh_resample`` is a readable single-token implementation of the cycle sampler;
``PartitionState.resample_word`` runs the same chain over every token of a word
through the selected kernel backend.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional

import numpy as np

from . import kernels
from .aliastable import AliasTable, build
from .rng import Rng, derive_seed


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    K: int
    alpha: float
    beta: float
    V: int

    def __post_init__(self):
        if self.K < 1 or self.V < 1:
            raise ValueError(f"need K >= 1 and V >= 1, got K={self.K}, V={self.V}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")


@dataclass
class LocalModelView:
    """Worker-side counts: n_k snapshot plus own deltas, and the pulled row of one word."""

    n_k: np.ndarray
    n_wk_row: np.ndarray


def doc_topic_counts(assignments, K) -> np.ndarray:
    return np.bincount(np.asarray(assignments, dtype=np.int64), minlength=K)


def gibbs_conditional(n_dk, n_wk_row, n_k, hp: Hyperparams, exclude: Optional[int] = None):
    """Unnormalized p(z=k | rest) = (n_dk+a)(n_wk+b)/(n_k+V*b).

    With ``exclude`` set to the token's current topic, one count is removed from
    that topic in all three statistics first; otherwise the counts must already
    exclude the token.
    """
    n_dk = np.array(n_dk, dtype=np.float64)
    n_wk_row = np.array(n_wk_row, dtype=np.float64)
    n_k = np.array(n_k, dtype=np.float64)
    if exclude is not None:
        n_dk[exclude] -= 1
        n_wk_row[exclude] -= 1
        n_k[exclude] -= 1
    if (n_dk < 0).any() or (n_wk_row < 0).any() or (n_k < 0).any():
        raise ConsistencyError("negative count after excluding the current token")
    return (n_dk + hp.alpha) * (n_wk_row + hp.beta) / (n_k + hp.V * hp.beta)


def mh_resample(z_old, doc_z, n_dk, view: LocalModelView, table: AliasTable,
                hp: Hyperparams, rng: Rng, steps: int = 2) -> int:
    """Resample one token with ``steps`` word-then-doc MH proposal cycles.

    ``doc_z`` / ``n_dk`` / ``view`` include the token at ``z_old``; nothing is
    mutated. The word proposal mass is the table's weights (the pulled row + beta),
    the doc proposal mass is n_dk + alpha with the token still counted.
    """
    K = hp.K
    nd = [int(x) for x in n_dk]
    row = [int(x) for x in view.n_wk_row]
    nk = [int(x) for x in view.n_k]
    nd[z_old] -= 1
    row[z_old] -= 1
    nk[z_old] -= 1
    vbeta = hp.V * hp.beta
    kalpha = K * hp.alpha
    ld = len(doc_z)
    qw = table.weights

    def target(k):
        return ((max(nd[k], 0) + hp.alpha) * (max(row[k], 0) + hp.beta)) / (max(nk[k], 0) + vbeta)

    def doc_mass(k):
        return nd[k] + (1 if k == z_old else 0) + hp.alpha

    cur = z_old
    for _ in range(steps):
        i = int(rng.uniform() * K)
        prop = i if rng.uniform() < table.prob[i] else int(table.alias[i])
        if prop != cur:
            ratio = (target(prop) * qw[cur]) / (target(cur) * qw[prop])
            if rng.uniform() < ratio:
                cur = prop
        if rng.uniform() * (ld + kalpha) < ld:
            prop = int(doc_z[int(rng.uniform() * ld)])
        else:
            prop = int(rng.uniform() * K)
        if prop != cur:
            ratio = (target(prop) * doc_mass(cur)) / (target(cur) * doc_mass(prop))
            if rng.uniform() < ratio:
                cur = prop
    return cur


def mh_chain_counts(z_old, doc_z, n_dk, view: LocalModelView, table: AliasTable,
                    hp: Hyperparams, rng: Rng, steps: int, chains: int) -> np.ndarray:
    """Final-topic tally of ``chains`` independent :func:`mh_resample` calls from one state.

    Same draws as calling :func:`mh_resample` ``chains`` times with ``rng``, done in the kernel.
    """
    out = np.zeros(hp.K, dtype=np.int64)
    rng.state = kernels.mh_chains(
        np.ascontiguousarray(doc_z, dtype=np.int32), int(z_old),
        np.ascontiguousarray(n_dk, dtype=np.int32),
        np.ascontiguousarray(view.n_wk_row, dtype=np.int64),
        np.ascontiguousarray(view.n_k, dtype=np.int64),
        table.weights, table.prob, table.alias, hp.alpha, hp.beta, hp.V, steps, chains,
        rng.state, out)
    return out


def word_rng(seed, worker, iteration, word) -> Rng:
    """Generator for one (worker, iteration, word) resample; independent of arrival order."""
    return Rng(derive_seed(seed, worker, iteration, word))


@dataclass
class WordResult:
    word: int
    moved_old: np.ndarray
    moved_new: np.ndarray

    @property
    def changed(self):
        return len(self.moved_old)

    def deltas(self):
        """Four deltas per moved token: (w,new,+1), (k=new,+1), (w,old,-1), (k=old,-1).

        Matrix cells are tagged ``"wk"``, topic-vector cells ``"k"``.
        """
        out = []
        for zo, zn in zip(self.moved_old.tolist(), self.moved_new.tolist()):
            out.extend([("wk", self.word, zn, +1), ("k", zn, +1),
                        ("wk", self.word, zo, -1), ("k", zo, -1)])
        return out

    def row_delta(self, K):
        d = np.zeros(K, dtype=np.int64)
        np.add.at(d, self.moved_new, 1)
        np.subtract.at(d, self.moved_old, 1)
        return d


class PartitionState:
    """One worker's documents flattened for the kernel, plus its local n_dk.

    Tokens are indexed per word so that a word's tokens are visited document by
    document, positions ascending.
    """

    def __init__(self, docs, K: int):
        self.K = K
        self.doc_ids = [d.doc_id for d in docs]
        lens = np.array([len(d.tokens) for d in docs], dtype=np.int64)
        self.doc_len = lens
        self.doc_start = np.zeros(len(docs), dtype=np.int64)
        if len(docs):
            self.doc_start[1:] = np.cumsum(lens)[:-1]
            self.tokens = np.concatenate([d.tokens for d in docs]).astype(np.int32)
            self.z = np.concatenate([d.assignments for d in docs]).astype(np.int32)
        else:
            self.tokens = np.zeros(0, dtype=np.int32)
            self.z = np.zeros(0, dtype=np.int32)
        if len(self.z) and (self.z.min() < 0 or self.z.max() >= K):
            raise ValueError("assignments must be initialized with topics in 0..K-1")
        doc_of_token = np.repeat(np.arange(len(docs), dtype=np.int32), lens)
        self.ndk = np.zeros((len(docs), K), dtype=np.int32)
        np.add.at(self.ndk, (doc_of_token, self.z), 1)
        # stable sort keeps document order then position order within each word
        order = np.argsort(self.tokens, kind="stable")
        sorted_words = self.tokens[order]
        self.words = np.unique(sorted_words)
        bounds = np.searchsorted(sorted_words, np.append(self.words, np.iinfo(np.int32).max))
        self._word_slices = {int(w): (bounds[i], bounds[i + 1]) for i, w in enumerate(self.words)}
        self._tok_pos = order.astype(np.int64)
        self._tok_doc = doc_of_token[order]
        self._moved_old = np.zeros(max(1, self.max_word_tokens()), dtype=np.int32)
        self._moved_new = np.zeros_like(self._moved_old)

    def max_word_tokens(self):
        if not self._word_slices:
            return 0
        return max(b - a for a, b in self._word_slices.values())

    def word_tokens(self, w):
        a, b = self._word_slices[w]
        return self._tok_pos[a:b], self._tok_doc[a:b]

    def assignments(self):
        """Per-document assignment arrays, in partition order."""
        return [self.z[s:s + n].copy() for s, n in zip(self.doc_start, self.doc_len)]

    def resample_word(self, w, row, nk, hp: Hyperparams, rng: Rng, steps: int) -> WordResult:
        """Resample all tokens of ``w``; ``row`` and ``nk`` (int64, length K) update in place."""
        tok_pos, tok_doc = self.word_tokens(w)
        weights = row.astype(np.float64) + hp.beta
        np.maximum(weights, hp.beta, out=weights)
        table = build(weights)
        n, rng.state = kernels.resample_word(
            tok_pos, tok_doc, self.z, self.doc_start, self.doc_len, self.ndk, row, nk,
            table.weights, table.prob, table.alias, hp.alpha, hp.beta, hp.V, steps,
            rng.state, self._moved_old, self._moved_new)
        return WordResult(w, self._moved_old[:n].copy(), self._moved_new[:n].copy())


def resample_partition(state: PartitionState, words: Iterable[int],
                       pull_row: Callable[[int], np.ndarray], push: Callable[[WordResult], None],
                       nk: np.ndarray, hp: Hyperparams, seed: int, worker: int,
                       iteration: int, steps: int) -> List[WordResult]:
    """Synchronous form of the per-partition Resample loop.

    ``pull_row(w)`` returns the current n_wk row; ``push`` receives each word's
    emitted deltas. ``nk`` is the iteration's n_k snapshot and is updated locally.
    """
    results = []
    for w in words:
        row = np.array(pull_row(w), dtype=np.int64)
        res = state.resample_word(w, row, nk, hp, word_rng(seed, worker, iteration, w), steps)
        if res.changed:
            push(res)
        results.append(res)
    return results
