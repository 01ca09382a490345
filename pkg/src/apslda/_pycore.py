"""Pure-Python sampling kernels.

Mirrors ``_core.pyx`` statement for statement: same floating-point operation order
and the same random-draw consumption, so both backends produce identical results
for identical seeds. Selected by :mod:`apslda.kernels` when the extension is absent.
"""

import math

from .rng import GOLDEN, MASK64, mix64

_INV53 = 1.0 / 9007199254740992.0


def _uniform(state):
    state = (state + GOLDEN) & MASK64
    return (mix64(state) >> 11) * _INV53, state


def alias_build(weights, prob, alias):
    """Vose construction into preallocated ``prob`` / ``alias`` arrays."""
    n = len(weights)
    total = 0.0
    for i in range(n):
        total += weights[i]
    scaled = [0.0] * n
    small = []
    large = []
    for i in range(n):
        scaled[i] = weights[i] * n / total
        if scaled[i] < 1.0:
            small.append(i)
        else:
            large.append(i)
    while small and large:
        lo = small.pop()
        hi = large.pop()
        prob[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
        if scaled[hi] < 1.0:
            small.append(hi)
        else:
            large.append(hi)
    for rest in (large, small):
        while rest:
            i = rest.pop()
            prob[i] = 1.0
            alias[i] = i
    return total


def alias_draw(prob, alias, state):
    n = len(prob)
    u, state = _uniform(state)
    i = int(u * n)
    u, state = _uniform(state)
    if u < prob[i]:
        return i, state
    return int(alias[i]), state


def alias_draw_many(prob, alias, count, out, state):
    for j in range(count):
        out[j], state = alias_draw(prob, alias, state)
    return state


def _mh_token(nd, rowl, nkl, zl, start, ld, zo, K, steps, qw, aprob, aidx,
              alpha, beta, vbeta, kalpha, state):
    """One token's MH cycles. Counts exclude the token; ``zl`` still holds it."""
    cur = zo
    for _ in range(steps):
        # word proposal from the alias table over the pulled row + beta
        u, state = _uniform(state)
        i = int(u * K)
        u, state = _uniform(state)
        prop = i if u < aprob[i] else aidx[i]
        if prop != cur:
            tp = ((max(nd[prop], 0) + alpha) * (max(rowl[prop], 0) + beta)) / (max(nkl[prop], 0) + vbeta)
            tc = ((max(nd[cur], 0) + alpha) * (max(rowl[cur], 0) + beta)) / (max(nkl[cur], 0) + vbeta)
            ratio = (tp * qw[cur]) / (tc * qw[prop])
            u, state = _uniform(state)
            if u < ratio:
                cur = prop
        # doc proposal: a random token's topic, or uniform for the alpha mass
        u, state = _uniform(state)
        if u * (ld + kalpha) < ld:
            u, state = _uniform(state)
            prop = int(zl[start + int(u * ld)])
        else:
            u, state = _uniform(state)
            prop = int(u * K)
        if prop != cur:
            tp = ((max(nd[prop], 0) + alpha) * (max(rowl[prop], 0) + beta)) / (max(nkl[prop], 0) + vbeta)
            tc = ((max(nd[cur], 0) + alpha) * (max(rowl[cur], 0) + beta)) / (max(nkl[cur], 0) + vbeta)
            qp = nd[prop] + (1 if prop == zo else 0) + alpha
            qc = nd[cur] + (1 if cur == zo else 0) + alpha
            ratio = (tp * qc) / (tc * qp)
            u, state = _uniform(state)
            if u < ratio:
                cur = prop
    return cur, state


def resample_word(tok_pos, tok_doc, z, doc_start, doc_len, ndk, row, nk,
                  q_word, alias_prob, alias_idx, alpha, beta, V, steps, state,
                  moved_old, moved_new):
    """Run the MH cycle sampler over every token of one word.

    ``row`` / ``nk`` / ``ndk`` / ``z`` are updated in place. Returns the number of
    tokens that changed topic (their old/new topics land in ``moved_*``) and the
    advanced generator state.
    """
    K = len(row)
    vbeta = V * beta
    kalpha = K * alpha
    # plain lists are much faster than numpy scalars in an interpreted loop
    rowl = [int(x) for x in row]
    nkl = [int(x) for x in nk]
    qw = [float(x) for x in q_word]
    aprob = [float(x) for x in alias_prob]
    aidx = [int(x) for x in alias_idx]
    nmoved = 0
    for t in range(len(tok_pos)):
        d = int(tok_doc[t])
        pos = int(tok_pos[t])
        zo = int(z[pos])
        nd = [int(x) for x in ndk[d]]
        nd[zo] -= 1
        rowl[zo] -= 1
        nkl[zo] -= 1
        cur, state = _mh_token(nd, rowl, nkl, z, int(doc_start[d]), int(doc_len[d]), zo, K, steps,
                               qw, aprob, aidx, alpha, beta, vbeta, kalpha, state)
        z[pos] = cur
        ndk[d, zo] -= 1
        ndk[d, cur] += 1
        rowl[cur] += 1
        nkl[cur] += 1
        if cur != zo:
            moved_old[nmoved] = zo
            moved_new[nmoved] = cur
            nmoved += 1
    row[:] = rowl
    nk[:] = nkl
    return nmoved, state


def mh_chains(doc_z, z_old, nd_incl, row_incl, nk_incl, q_word, alias_prob, alias_idx,
              alpha, beta, V, steps, chains, state, out):
    """Run ``chains`` independent chains from one frozen state; tally final topics in ``out``."""
    K = len(row_incl)
    nd = [int(x) for x in nd_incl]
    rowl = [int(x) for x in row_incl]
    nkl = [int(x) for x in nk_incl]
    nd[z_old] -= 1
    rowl[z_old] -= 1
    nkl[z_old] -= 1
    zl = [int(x) for x in doc_z]
    qw = [float(x) for x in q_word]
    aprob = [float(x) for x in alias_prob]
    aidx = [int(x) for x in alias_idx]
    for _ in range(chains):
        cur, state = _mh_token(nd, rowl, nkl, zl, 0, len(zl), int(z_old), K, steps, qw, aprob, aidx,
                               alpha, beta, V * beta, K * alpha, state)
        out[cur] += 1
    return state


def foldin_doc(tokens, phi, alpha, passes, burnin, state):
    """Fold one held-out document into a fixed ``phi``; return its summed log-likelihood."""
    L = len(tokens)
    K = phi.shape[1]
    kalpha = K * alpha
    words = [int(w) for w in tokens]
    rows = [[float(x) for x in phi[w]] for w in words]
    z = [0] * L
    ndk = [0] * K
    for i in range(L):
        u, state = _uniform(state)
        z[i] = int(u * K)
        ndk[z[i]] += 1
    weights = [0.0] * K
    theta = [0.0] * K
    nacc = 0
    for p in range(passes):
        for i in range(L):
            ph = rows[i]
            ndk[z[i]] -= 1
            total = 0.0
            for k in range(K):
                weights[k] = (ndk[k] + alpha) * ph[k]
                total += weights[k]
            u, state = _uniform(state)
            u = u * total
            new = K - 1
            acc = 0.0
            for k in range(K):
                acc += weights[k]
                if u < acc:
                    new = k
                    break
            z[i] = new
            ndk[new] += 1
        if p >= burnin:
            for k in range(K):
                theta[k] += (ndk[k] + alpha) / (L + kalpha)
            nacc += 1
    for k in range(K):
        theta[k] = theta[k] / nacc
    ll = 0.0
    for i in range(L):
        ph = rows[i]
        s = 0.0
        for k in range(K):
            s += theta[k] * ph[k]
        ll += math.log(s)
    return ll, state
