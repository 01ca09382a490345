"""Bag-of-words corpus: libsvm loading, worker partitioning, random topic init."""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np


class CorpusFormatError(ValueError):
    """Raised for a malformed line in a libsvm-style dataset."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Document:
    doc_id: int
    tokens: np.ndarray
    assignments: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __len__(self):
        return len(self.tokens)


@dataclass
class Corpus:
    V: int
    docs: List[Document]

    @property
    def total_tokens(self) -> int:
        return int(sum(len(d.tokens) for d in self.docs))

    def __len__(self):
        return len(self.docs)

    def word_frequencies(self) -> np.ndarray:
        freq = np.zeros(self.V, dtype=np.int64)
        for d in self.docs:
            np.add.at(freq, d.tokens, 1)
        return freq

    def subset(self, doc_ids: Sequence[int]) -> "Corpus":
        by_id = {d.doc_id: d for d in self.docs}
        return Corpus(self.V, [by_id[i] for i in doc_ids])


@dataclass(frozen=True)
class Partition:
    worker_id: int
    doc_ids: tuple


@dataclass
class InitialDeltas:
    """One +1 increment to n_wk[word, topic] and to n_k[topic] per token."""

    words: np.ndarray
    topics: np.ndarray

    def n_k(self, K):
        return np.bincount(self.topics, minlength=K).astype(np.int64)

    def n_wk(self, V, K):
        out = np.zeros((V, K), dtype=np.int64)
        np.add.at(out, (self.words, self.topics), 1)
        return out


def parse_libsvm_line(line, lineno):
    parts = line.split()
    tokens = []
    # parts[0] is the label; LDA ignores it.
    for item in parts[1:]:
        idx, sep, count = item.partition(":")
        if not sep:
            raise CorpusFormatError(lineno, f"expected idx:count, got {item!r}")
        try:
            idx_i = int(idx)
            count_i = int(count)
        except ValueError:
            raise CorpusFormatError(lineno, f"non-integer pair {item!r}") from None
        if idx_i <= 0:
            raise CorpusFormatError(lineno, f"index must be >= 1, got {idx_i}")
        if count_i <= 0:
            raise CorpusFormatError(lineno, f"count must be >= 1, got {count_i}")
        tokens.extend([idx_i - 1] * count_i)
    return np.asarray(tokens, dtype=np.int32)


def load_libsvm(path, V: Optional[int] = None) -> Corpus:
    """Read ``label idx:count ...`` lines into a corpus with 0-based word ids.

    Each pair expands to ``count`` occurrences of word ``idx - 1``. Blank lines are
    skipped. ``V`` reserves vocabulary rows; it must cover every index in the file.
    """
    docs = []
    max_word = -1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tokens = parse_libsvm_line(line, lineno)
            if len(tokens):
                max_word = max(max_word, int(tokens.max()))
            docs.append(Document(len(docs), tokens))
    inferred = max_word + 1
    if V is None:
        V = inferred
    elif V < inferred:
        raise ValueError(f"declared V={V} but file uses word index {inferred}")
    return Corpus(V, docs)


def write_libsvm(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus.docs:
            words, counts = np.unique(doc.tokens, return_counts=True)
            pairs = " ".join(f"{w + 1}:{c}" for w, c in zip(words, counts))
            fh.write(f"0 {pairs}\n" if pairs else "0\n")


def partition(corpus: Corpus, p: int) -> List[Partition]:
    """Split documents into ``p`` contiguous blocks whose sizes differ by at most one."""
    if p < 1:
        raise ValueError(f"worker count must be >= 1, got {p}")
    n = len(corpus.docs)
    base, extra = divmod(n, p)
    out = []
    start = 0
    for worker in range(p):
        size = base + (1 if worker < extra else 0)
        ids = tuple(d.doc_id for d in corpus.docs[start:start + size])
        out.append(Partition(worker, ids))
        start += size
    return out


def init_assignments(corpus: Corpus, K: int, seed: int):
    """Draw every token's topic uniformly from ``0..K-1``.

    Returns a new corpus (documents share token arrays with the input) and the
    :class:`InitialDeltas` those assignments imply.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    rng = np.random.default_rng(seed)
    docs = []
    for d in corpus.docs:
        z = rng.integers(0, K, size=len(d.tokens), dtype=np.int32)
        docs.append(replace(d, assignments=z))
    if docs:
        words = np.concatenate([d.tokens for d in docs]).astype(np.int64)
        topics = np.concatenate([d.assignments for d in docs]).astype(np.int64)
    else:
        words = np.zeros(0, dtype=np.int64)
        topics = np.zeros(0, dtype=np.int64)
    return Corpus(corpus.V, docs), InitialDeltas(words, topics)


def load_vocab(path, V: int) -> List[str]:
    """Word labels, one per line; missing entries fall back to the 1-based file index."""
    labels = [str(w + 1) for w in range(V)]
    if path is not None:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        for w, word in enumerate(lines[:V]):
            labels[w] = word.strip()
    return labels
