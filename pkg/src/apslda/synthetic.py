"""Planted-topic corpora with known ground truth, for tests and benchmarks."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .corpus import Corpus, Document


@dataclass
class PlantedCorpus:
    corpus: Corpus
    topic_words: List[np.ndarray]  # vocabulary block of each planted topic


def planted_corpus(V=1000, n_docs=5000, n_topics=10, doc_len=60, doc_alpha=0.1, seed=0) -> PlantedCorpus:
    """Each planted topic owns a disjoint block of V / n_topics words.

    Within a block word weights are Zipf-like; documents mix topics with a
    Dirichlet(doc_alpha) draw and have Poisson(doc_len) + 1 tokens.
    """
    rng = np.random.default_rng(seed)
    blocks = np.array_split(np.arange(V), n_topics)
    dists = []
    for block in blocks:
        w = 1.0 / np.arange(1, len(block) + 1) ** 0.8
        rng.shuffle(w)
        dists.append(w / w.sum())
    docs = []
    for d in range(n_docs):
        theta = rng.dirichlet(np.full(n_topics, doc_alpha))
        L = int(rng.poisson(doc_len)) + 1
        topics = rng.choice(n_topics, size=L, p=theta)
        tokens = np.empty(L, dtype=np.int32)
        for t in np.unique(topics):
            m = topics == t
            tokens[m] = rng.choice(blocks[t], size=int(m.sum()), p=dists[t])
        docs.append(Document(d, tokens))
    return PlantedCorpus(Corpus(V, docs), blocks)


def topic_purities(n_wk, topic_words, top=10, min_share=0.01):
    """Per learned topic: share of its top-``top`` words inside its best-matching planted block.

    Only topics holding at least ``min_share`` of all tokens are matched; the
    result maps topic id to purity.
    """
    n_wk = np.asarray(n_wk)
    col = n_wk.sum(axis=0)
    total = col.sum()
    owner = np.empty(n_wk.shape[0], dtype=np.int64)
    for t, block in enumerate(topic_words):
        owner[block] = t
    out = {}
    for k in range(n_wk.shape[1]):
        if total == 0 or col[k] < min_share * total:
            continue
        order = np.lexsort((np.arange(n_wk.shape[0]), -n_wk[:, k]))[:top]
        out[k] = np.bincount(owner[order], minlength=len(topic_words)).max() / len(order)
    return out


def topic_purity(n_wk, topic_words, top=10, min_share=0.01):
    """Share of all matched top-word slots that fall in their topic's planted block."""
    per = topic_purities(n_wk, topic_words, top, min_share)
    return float(np.mean(list(per.values()))) if per else 0.0
