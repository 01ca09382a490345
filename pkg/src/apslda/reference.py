"""Plain sequential LightLDA-style sampler over in-memory counts.

No servers, no messages, no kernel: one token at a time through
:func:`apslda.sampler.mh_resample`. With one worker and a loss-free network the
distributed trainer must reproduce its counts exactly, which makes this the
oracle for the asynchronous machinery.
"""

import numpy as np

from .aliastable import build
from .corpus import Corpus, init_assignments
from .sampler import Hyperparams, LocalModelView, mh_resample, word_rng


def sequential_train(corpus: Corpus, K, alpha, beta, iterations, mh_steps=2, seed=0):
    """Returns (n_wk, n_k, {doc_id: assignments})."""
    hp = Hyperparams(K, alpha, beta, corpus.V)
    init, _ = init_assignments(corpus, K, seed)
    docs = init.docs
    z = [d.assignments.astype(np.int64).copy() for d in docs]
    n_wk = np.zeros((corpus.V, K), dtype=np.int64)
    n_k = np.zeros(K, dtype=np.int64)
    n_dk = np.zeros((len(docs), K), dtype=np.int64)
    for i, d in enumerate(docs):
        for w, t in zip(d.tokens, z[i]):
            n_wk[w, t] += 1
            n_k[t] += 1
            n_dk[i, t] += 1
    occurrences = {}
    for i, d in enumerate(docs):
        for pos, w in enumerate(d.tokens):
            occurrences.setdefault(int(w), []).append((i, pos))
    for it in range(1, iterations + 1):
        for w in sorted(occurrences):
            row = n_wk[w].copy()
            table = build(np.maximum(row, 0) + beta)
            rng = word_rng(seed, 0, it, w)
            for i, pos in occurrences[w]:
                old = int(z[i][pos])
                view = LocalModelView(n_k, row)
                new = mh_resample(old, z[i], n_dk[i], view, table, hp, rng, mh_steps)
                if new != old:
                    z[i][pos] = new
                    n_dk[i, old] -= 1
                    n_dk[i, new] += 1
                    row[old] -= 1
                    row[new] += 1
                    n_k[old] -= 1
                    n_k[new] += 1
            n_wk[w] = row
    return n_wk, n_k, {d.doc_id: z[i].astype(np.int32) for i, d in enumerate(docs)}
