"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--topics K] [--tokens N] [--repeat R]

Both backends consume the same seeds, so each row also checks that they agree.
"""

import argparse
import time

import numpy as np

from apslda import kernels


def best_of(repeat, fn):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def alias_case(K, n):
    w = np.random.default_rng(0).gamma(0.5, size=K) + 1e-3

    def run(b):
        prob, alias = np.empty(K), np.empty(K, dtype=np.int64)
        b.alias_build(w, prob, alias)
        out = np.empty(n, dtype=np.int64)
        b.alias_draw_many(prob, alias, n, out, 7)
        return out
    return f"alias build+draw K={K} n={n}", run


def resample_case(K, n_tokens):
    g = np.random.default_rng(1)
    doc_len = 50
    n_docs = n_tokens // doc_len
    z0 = g.integers(0, K, n_docs * doc_len).astype(np.int32)
    starts = np.arange(n_docs, dtype=np.int64) * doc_len
    lens = np.full(n_docs, doc_len, dtype=np.int64)
    tok_pos = np.arange(n_docs * doc_len, dtype=np.int64)
    tok_doc = (tok_pos // doc_len).astype(np.int32)
    ndk0 = np.zeros((n_docs, K), dtype=np.int32)
    np.add.at(ndk0, (tok_doc, z0), 1)
    row0 = np.bincount(z0, minlength=K).astype(np.int64)
    nk0 = row0 * 3

    def run(b):
        z, ndk, row, nk = z0.copy(), ndk0.copy(), row0.copy(), nk0.copy()
        q = row.astype(np.float64) + 0.01
        prob, alias = np.empty(K), np.empty(K, dtype=np.int64)
        b.alias_build(q, prob, alias)
        moved_old = np.empty(len(z), dtype=np.int32)
        moved_new = np.empty(len(z), dtype=np.int32)
        b.resample_word(tok_pos, tok_doc, z, starts, lens, ndk, row, nk, q, prob, alias,
                        0.05, 0.01, 1000, 2, 11, moved_old, moved_new)
        return z
    return f"MH resample K={K} tokens={len(z0)}", run


def foldin_case(K, L):
    g = np.random.default_rng(2)
    phi = g.dirichlet(np.ones(200), size=K).T.copy()
    tokens = g.integers(0, 200, L).astype(np.int32)
    return f"fold-in K={K} len={L}", lambda b: b.foldin_doc(tokens, phi, 0.05, 20, 10, 5)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--topics", type=int, default=100)
    ap.add_argument("--tokens", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run: pip install -e . --no-build-isolation")
    cases = [alias_case(args.topics, args.tokens), resample_case(args.topics, args.tokens),
             foldin_case(args.topics, 200)]
    print(f"{'kernel':<36} {'python s':>10} {'cython s':>10} {'speedup':>8}  same")
    for name, run in cases:
        tp, op = best_of(args.repeat, lambda: run(kernels.python_backend))
        tc, oc = best_of(args.repeat, lambda: run(kernels.compiled_backend))
        same = np.array_equal(np.asarray(op), np.asarray(oc))
        print(f"{name:<36} {tp:>10.4f} {tc:>10.4f} {tp / tc:>7.0f}x  {same}")


if __name__ == "__main__":
    main()
