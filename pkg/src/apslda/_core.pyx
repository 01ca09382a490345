# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sampling kernels; see ``_pycore.py`` for the reference semantics."""

from libc.math cimport log
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t, int64_t, int32_t

cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline double _uniform(uint64_t *state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    z = z ^ (z >> 31)
    return <double>(z >> 11) * INV53


cdef inline int64_t _clamp(int64_t x) noexcept nogil:
    return x if x > 0 else 0


def alias_build(const double[::1] weights, double[::1] prob, int64_t[::1] alias):
    cdef Py_ssize_t n = weights.shape[0]
    cdef Py_ssize_t i, lo, hi, nsmall = 0, nlarge = 0
    cdef double total = 0.0
    cdef double *scaled = <double *>malloc(n * sizeof(double))
    cdef Py_ssize_t *small = <Py_ssize_t *>malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t *large = <Py_ssize_t *>malloc(n * sizeof(Py_ssize_t))
    if scaled == NULL or small == NULL or large == NULL:
        free(scaled); free(small); free(large)
        raise MemoryError()
    with nogil:
        for i in range(n):
            total += weights[i]
        for i in range(n):
            scaled[i] = weights[i] * <double>n / total
            if scaled[i] < 1.0:
                small[nsmall] = i
                nsmall += 1
            else:
                large[nlarge] = i
                nlarge += 1
        while nsmall > 0 and nlarge > 0:
            nsmall -= 1
            lo = small[nsmall]
            nlarge -= 1
            hi = large[nlarge]
            prob[lo] = scaled[lo]
            alias[lo] = hi
            scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
            if scaled[hi] < 1.0:
                small[nsmall] = hi
                nsmall += 1
            else:
                large[nlarge] = hi
                nlarge += 1
        while nlarge > 0:
            nlarge -= 1
            i = large[nlarge]
            prob[i] = 1.0
            alias[i] = i
        while nsmall > 0:
            nsmall -= 1
            i = small[nsmall]
            prob[i] = 1.0
            alias[i] = i
    free(scaled); free(small); free(large)
    return total


cdef inline Py_ssize_t _alias_draw(const double[::1] prob, const int64_t[::1] alias,
                                   uint64_t *state) noexcept nogil:
    cdef Py_ssize_t n = prob.shape[0]
    cdef Py_ssize_t i = <Py_ssize_t>(_uniform(state) * <double>n)
    if _uniform(state) < prob[i]:
        return i
    return alias[i]


def alias_draw(const double[::1] prob, const int64_t[::1] alias, uint64_t state):
    cdef Py_ssize_t k = _alias_draw(prob, alias, &state)
    return k, state


def alias_draw_many(const double[::1] prob, const int64_t[::1] alias, Py_ssize_t count,
                    int64_t[::1] out, uint64_t state):
    cdef Py_ssize_t j
    with nogil:
        for j in range(count):
            out[j] = _alias_draw(prob, alias, &state)
    return state


cdef inline double _target(int64_t nd, int64_t nw, int64_t nt, double alpha, double beta,
                           double vbeta) noexcept nogil:
    return ((<double>_clamp(nd) + alpha) * (<double>_clamp(nw) + beta)) / (<double>_clamp(nt) + vbeta)


cdef inline int32_t _mh_token(const int32_t *nd, const int64_t *row, const int64_t *nk,
                              const int32_t *doc_z, int64_t ld, int32_t zo, Py_ssize_t K,
                              Py_ssize_t steps, const double *q_word, const double *alias_prob,
                              const int64_t *alias_idx, double alpha, double beta, double vbeta,
                              double kalpha, uint64_t *state) noexcept nogil:
    # counts exclude the token; doc_z still holds it at its old topic
    cdef Py_ssize_t s, i
    cdef int32_t cur = zo, prop
    cdef double u, tp, tc, ratio, qp, qc
    for s in range(steps):
        u = _uniform(state)
        i = <Py_ssize_t>(u * <double>K)
        u = _uniform(state)
        prop = <int32_t>i if u < alias_prob[i] else <int32_t>alias_idx[i]
        if prop != cur:
            tp = _target(nd[prop], row[prop], nk[prop], alpha, beta, vbeta)
            tc = _target(nd[cur], row[cur], nk[cur], alpha, beta, vbeta)
            ratio = (tp * q_word[cur]) / (tc * q_word[prop])
            if _uniform(state) < ratio:
                cur = prop
        u = _uniform(state)
        if u * (<double>ld + kalpha) < <double>ld:
            u = _uniform(state)
            prop = doc_z[<Py_ssize_t>(u * <double>ld)]
        else:
            u = _uniform(state)
            prop = <int32_t>(u * <double>K)
        if prop != cur:
            tp = _target(nd[prop], row[prop], nk[prop], alpha, beta, vbeta)
            tc = _target(nd[cur], row[cur], nk[cur], alpha, beta, vbeta)
            qp = <double>(nd[prop] + (1 if prop == zo else 0)) + alpha
            qc = <double>(nd[cur] + (1 if cur == zo else 0)) + alpha
            ratio = (tp * qc) / (tc * qp)
            if _uniform(state) < ratio:
                cur = prop
    return cur


def resample_word(const int64_t[::1] tok_pos, const int32_t[::1] tok_doc, int32_t[::1] z,
                  const int64_t[::1] doc_start, const int64_t[::1] doc_len,
                  int32_t[:, ::1] ndk, int64_t[::1] row, int64_t[::1] nk,
                  const double[::1] q_word, const double[::1] alias_prob,
                  const int64_t[::1] alias_idx, double alpha, double beta, Py_ssize_t V,
                  Py_ssize_t steps, uint64_t state,
                  int32_t[::1] moved_old, int32_t[::1] moved_new):
    cdef Py_ssize_t K = row.shape[0]
    cdef Py_ssize_t ntok = tok_pos.shape[0]
    cdef double vbeta = <double>V * beta
    cdef double kalpha = <double>K * alpha
    cdef Py_ssize_t t, d, pos, nmoved = 0
    cdef int32_t zo, cur
    with nogil:
        for t in range(ntok):
            d = tok_doc[t]
            pos = tok_pos[t]
            zo = z[pos]
            ndk[d, zo] -= 1
            row[zo] -= 1
            nk[zo] -= 1
            cur = _mh_token(&ndk[d, 0], &row[0], &nk[0], &z[doc_start[d]], doc_len[d], zo, K,
                            steps, &q_word[0], &alias_prob[0], &alias_idx[0], alpha, beta,
                            vbeta, kalpha, &state)
            z[pos] = cur
            ndk[d, cur] += 1
            row[cur] += 1
            nk[cur] += 1
            if cur != zo:
                moved_old[nmoved] = zo
                moved_new[nmoved] = cur
                nmoved += 1
    return nmoved, state


def mh_chains(const int32_t[::1] doc_z, int32_t z_old, const int32_t[::1] nd_incl,
              const int64_t[::1] row_incl, const int64_t[::1] nk_incl,
              const double[::1] q_word, const double[::1] alias_prob,
              const int64_t[::1] alias_idx, double alpha, double beta, Py_ssize_t V,
              Py_ssize_t steps, Py_ssize_t chains, uint64_t state, int64_t[::1] out):
    cdef Py_ssize_t K = row_incl.shape[0]
    cdef double vbeta = <double>V * beta
    cdef double kalpha = <double>K * alpha
    cdef Py_ssize_t c, k
    cdef int32_t cur
    cdef int32_t *nd = <int32_t *>malloc(K * sizeof(int32_t))
    cdef int64_t *row = <int64_t *>malloc(K * sizeof(int64_t))
    cdef int64_t *nk = <int64_t *>malloc(K * sizeof(int64_t))
    if nd == NULL or row == NULL or nk == NULL:
        free(nd); free(row); free(nk)
        raise MemoryError()
    with nogil:
        for k in range(K):
            nd[k] = nd_incl[k]
            row[k] = row_incl[k]
            nk[k] = nk_incl[k]
        nd[z_old] -= 1
        row[z_old] -= 1
        nk[z_old] -= 1
        for c in range(chains):
            cur = _mh_token(nd, row, nk, &doc_z[0], doc_z.shape[0], z_old, K, steps, &q_word[0],
                            &alias_prob[0], &alias_idx[0], alpha, beta, vbeta, kalpha, &state)
            out[cur] += 1
    free(nd); free(row); free(nk)
    return state


def foldin_doc(const int32_t[::1] tokens, const double[:, ::1] phi, double alpha,
               Py_ssize_t passes, Py_ssize_t burnin, uint64_t state):
    cdef Py_ssize_t L = tokens.shape[0]
    cdef Py_ssize_t K = phi.shape[1]
    cdef double kalpha = <double>K * alpha
    cdef Py_ssize_t i, k, p, w, new, nacc = 0
    cdef double total, u, acc, s, ll = 0.0
    cdef int32_t *z = <int32_t *>malloc((L + 1) * sizeof(int32_t))
    cdef int64_t *ndk = <int64_t *>malloc(K * sizeof(int64_t))
    cdef double *weights = <double *>malloc(K * sizeof(double))
    cdef double *theta = <double *>malloc(K * sizeof(double))
    if z == NULL or ndk == NULL or weights == NULL or theta == NULL:
        free(z); free(ndk); free(weights); free(theta)
        raise MemoryError()
    with nogil:
        for k in range(K):
            ndk[k] = 0
            theta[k] = 0.0
        for i in range(L):
            z[i] = <int32_t>(_uniform(&state) * <double>K)
            ndk[z[i]] += 1
        for p in range(passes):
            for i in range(L):
                w = tokens[i]
                ndk[z[i]] -= 1
                total = 0.0
                for k in range(K):
                    weights[k] = (<double>ndk[k] + alpha) * phi[w, k]
                    total += weights[k]
                u = _uniform(&state)
                u = u * total
                new = K - 1
                acc = 0.0
                for k in range(K):
                    acc += weights[k]
                    if u < acc:
                        new = k
                        break
                z[i] = <int32_t>new
                ndk[new] += 1
            if p >= burnin:
                for k in range(K):
                    theta[k] += (<double>ndk[k] + alpha) / (<double>L + kalpha)
                nacc += 1
        for k in range(K):
            theta[k] = theta[k] / <double>nacc
        for i in range(L):
            w = tokens[i]
            s = 0.0
            for k in range(K):
                s += theta[k] * phi[w, k]
            ll += log(s)
    free(z); free(ndk); free(weights); free(theta)
    return ll, state
