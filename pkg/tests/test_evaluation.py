import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apslda.corpus import Corpus
from apslda.evaluation import (export_csv, format_perplexity, load_csv, perplexity, phi,
                               read_meta, split, write_meta)
from conftest import make_corpus


def test_split_sizes():
    tr, te = split(make_corpus([[0]] * 100), 0.9, seed=1)
    assert (len(tr.docs), len(te.docs)) == (90, 10)
    tr, te = split(make_corpus([[0], [1]]), 0.5, seed=1)
    assert (len(tr.docs), len(te.docs)) == (1, 1)


def test_split_deterministic_and_disjoint():
    c = make_corpus([[i % 7] for i in range(50)])
    a = split(c, 0.8, 3)
    b = split(c, 0.8, 3)
    ids = lambda x: [d.doc_id for d in x.docs]
    assert ids(a[0]) == ids(b[0]) and ids(a[1]) == ids(b[1])
    assert sorted(ids(a[0]) + ids(a[1])) == list(range(50))
    assert ids(a[0]) != ids(split(c, 0.8, 4)[0])


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(1, 6), st.floats(0.001, 5))
def test_phi_columns_normalized(V, K, beta):
    n_wk = np.random.default_rng(V * K).integers(0, 9, (V, K))
    p = phi(n_wk, n_wk.sum(axis=0), beta)
    assert np.allclose(p.sum(axis=0), 1.0, atol=1e-9)


@pytest.mark.parametrize("V", [1, 7, 500])
def test_uniform_model_gives_vocabulary_size(V):
    test = make_corpus([[0, V - 1, V // 2], [V - 1] * 5], V=V)
    p = perplexity(np.zeros((V, 4)), np.zeros(4), 0.3, 0.01, test, foldin_passes=6)
    assert abs(p - V) <= 1e-9 * V


def test_single_token_half_probability():
    n_wk = np.ones((2, 3), dtype=np.int64)
    test = make_corpus([[1]], V=2)
    assert perplexity(n_wk, n_wk.sum(axis=0), 0.1, 0.5, test) == pytest.approx(2.0, abs=1e-12)


def test_empty_test_set_rejected():
    with pytest.raises(ValueError):
        perplexity(np.zeros((3, 2)), np.zeros(2), 0.1, 0.1, Corpus(3, []))
    with pytest.raises(ValueError):
        perplexity(np.zeros((3, 2)), np.zeros(2), 0.1, 0.1, make_corpus([[]], V=3))


def test_document_order_invariant():
    g = np.random.default_rng(0)
    n_wk = g.integers(0, 20, (30, 5))
    docs = make_corpus([g.integers(0, 30, 12).tolist() for _ in range(8)], V=30)
    rev = Corpus(30, list(reversed(docs.docs)))
    a = perplexity(n_wk, n_wk.sum(axis=0), 0.1, 0.01, docs, seed=3)
    assert a == perplexity(n_wk, n_wk.sum(axis=0), 0.1, 0.01, rev, seed=3)


def test_informative_model_beats_uniform():
    n_wk = np.zeros((10, 2), dtype=np.int64)
    n_wk[:5, 0] = 100
    n_wk[5:, 1] = 100
    docs = make_corpus([[0, 1, 2, 3, 4, 0, 1], [5, 6, 7, 8, 9, 9]], V=10)
    assert perplexity(n_wk, n_wk.sum(axis=0), 0.1, 0.01, docs) < 6


def test_format():
    assert format_perplexity(None) == "-"
    assert format_perplexity(123.4567891) == "123.457"


def test_csv_header_only_for_empty_model(tmp_path):
    p = tmp_path / "m.csv"
    export_csv(np.zeros((3, 2)), np.zeros(2), 0.01, ["a", "b", "c"], p)
    assert p.read_text() == "word,topic,count,phi\n"


def test_csv_worked_example(tmp_path):
    n_wk = np.zeros((3, 2), dtype=np.int64)
    n_wk[2, 1] = 3
    p = tmp_path / "m.csv"
    export_csv(n_wk, [0, 3], 0.01, ["1", "2", "3"], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "word,topic,count,phi"
    word, topic, count, value = lines[1].split(",")
    assert (word, topic, count) == ("3", "1", "3")
    assert value.startswith("0.99339")
    assert float(value) == 3.01 / 3.03


def test_csv_roundtrip_and_byte_identical(tmp_path):
    g = np.random.default_rng(1)
    n_wk = g.integers(0, 5, (12, 4)) * (g.random((12, 4)) < 0.5)
    vocab = [f"w{i}" for i in range(12)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    export_csv(n_wk, n_wk.sum(axis=0), 0.01, vocab, a)
    back, nk = load_csv(a, vocab, 12, 4)
    assert (back == n_wk).all() and (nk == n_wk.sum(axis=0)).all()
    export_csv(back, nk, 0.01, vocab, b)
    assert a.read_bytes() == b.read_bytes()


def test_csv_rows_sorted_by_topic_then_count(tmp_path):
    n_wk = np.array([[1, 0], [4, 2], [4, 0], [0, 9]])
    p = tmp_path / "m.csv"
    export_csv(n_wk, n_wk.sum(axis=0), 0.1, list("abcd"), p)
    rows = [line.split(",")[:3] for line in p.read_text().splitlines()[1:]]
    assert rows == [["b", "0", "4"], ["c", "0", "4"], ["a", "0", "1"], ["d", "1", "9"], ["b", "1", "2"]]


def test_csv_rejects_bad_input(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("nope\n")
    with pytest.raises(ValueError):
        load_csv(p, ["a"], 1, 1)
    p.write_text("word,topic,count,phi\nzzz,0,1,0.5\n")
    with pytest.raises(ValueError):
        load_csv(p, ["a"], 1, 1)


def test_meta_sidecar(tmp_path):
    p = tmp_path / "m.csv"
    assert read_meta(p) == {}
    write_meta(p, topics=3, beta=0.01)
    assert read_meta(p) == {"topics": 3, "beta": 0.01}


def test_foldin_log_likelihood_bounds():
    g = np.random.default_rng(5)
    n_wk = g.integers(0, 10, (20, 3))
    docs = make_corpus([g.integers(0, 20, 15).tolist()], V=20)
    p = perplexity(n_wk, n_wk.sum(axis=0), 0.2, 0.01, docs)
    ph = phi(n_wk, n_wk.sum(axis=0), 0.01)
    # every token probability lies between the smallest and largest phi entry of its row
    rows = ph[docs.docs[0].tokens]
    lo = math.exp(-np.log(rows.max(axis=1)).mean())
    hi = math.exp(-np.log(rows.min(axis=1)).mean())
    assert lo <= p <= hi
