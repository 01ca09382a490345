"""Held-out perplexity by fold-in, train/test splitting and CSV model export."""

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .corpus import Corpus
from .rng import derive_seed


def split(corpus: Corpus, ratio: float, seed: int):
    """Random document-level split into (train, test); both keep file order."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(corpus.docs)
    n_train = int(round(ratio * n))
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return (Corpus(corpus.V, [corpus.docs[i] for i in train_idx]),
            Corpus(corpus.V, [corpus.docs[i] for i in test_idx]))


def phi(n_wk, n_k, beta) -> np.ndarray:
    """Topic-word point estimate (n_wk + b) / (n_k + V b); columns sum to one."""
    n_wk = np.asarray(n_wk, dtype=np.float64)
    V = n_wk.shape[0]
    return np.ascontiguousarray((n_wk + beta) / (np.asarray(n_k, dtype=np.float64) + V * beta))


def perplexity(n_wk, n_k, alpha, beta, test_docs, foldin_passes=20, seed=0) -> float:
    """exp(-mean log p(token)) on ``test_docs`` with the topic-word matrix held fixed.

    Each document's topic mix is estimated by ``foldin_passes`` Gibbs sweeps;
    the second half of the sweeps is averaged. Every document draws from its own
    generator seeded by (seed, doc_id), so the result does not depend on order.
    """
    if foldin_passes < 1:
        raise ValueError("foldin_passes must be >= 1")
    docs = [d for d in getattr(test_docs, "docs", test_docs) if len(d.tokens)]
    if not docs:
        raise ValueError("test set has no tokens")
    ph = phi(n_wk, n_k, beta)
    burnin = foldin_passes // 2
    total_ll = 0.0
    n_tokens = 0
    for d in docs:
        tokens = np.ascontiguousarray(d.tokens, dtype=np.int32)
        ll, _ = kernels.foldin_doc(tokens, ph, float(alpha), foldin_passes, burnin,
                                   derive_seed(seed, d.doc_id))
        total_ll += ll
        n_tokens += len(tokens)
    assert math.isfinite(total_ll), "zero token probability despite beta smoothing"
    return math.exp(-total_ll / n_tokens)


def format_perplexity(p: Optional[float]) -> str:
    return "-" if p is None else f"{p:.6g}"


def export_csv(n_wk, n_k, beta, vocab: Sequence[str], path) -> None:
    """Write ``word,topic,count,phi`` rows for every non-zero count.

    Rows are ordered by topic, then descending count, then word id.
    """
    n_wk = np.asarray(n_wk)
    ph = phi(n_wk, n_k, beta)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["word", "topic", "count", "phi"])
        for k in range(n_wk.shape[1]):
            col = n_wk[:, k]
            words = np.flatnonzero(col > 0)
            order = np.lexsort((words, -col[words]))
            for w in words[order]:
                out.writerow([vocab[w], k, int(col[w]), repr(float(ph[w, k]))])


def load_csv(path, vocab: Sequence[str], V: int, K: int):
    """Rebuild (n_wk, n_k) from an exported CSV; n_k is the column sum."""
    index = {word: w for w, word in enumerate(vocab)}
    n_wk = np.zeros((V, K), dtype=np.int64)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["word", "topic", "count", "phi"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                word, topic, count = row[0], int(row[1]), int(row[2])
                n_wk[index[word], topic] += count
            except (IndexError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: bad row at line {lineno}: {row!r} ({exc})") from None
    return n_wk, n_wk.sum(axis=0)


def meta_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def write_meta(csv_path, **meta) -> None:
    meta_path(csv_path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_meta(csv_path) -> dict:
    p = meta_path(csv_path)
    if not p.exists():
        return {}
    return json.loads(p.read_text(encoding="utf-8"))
