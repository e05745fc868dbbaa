"""Independent reference implementations used as test oracles.

Nothing here imports the package's metric or oracle code; each function is
written directly from the definition it checks, favouring clarity over speed.
"""

from __future__ import annotations

import itertools
import math

EOS = 1


def g_from_actions(actions):
    g, reads = [], 0
    for a in actions:
        if a == "R":
            reads += 1
        else:
            g.append(reads)
    return g


def al_bruteforce(actions, src_len):
    """AL = 1/tau * sum_{i=1..tau} g(i) - (i-1)/gamma, tau the first write with the source fully read."""
    g = g_from_actions(actions)
    gamma = len(g) / src_len
    tau = next((i for i in range(1, len(g) + 1) if g[i - 1] >= src_len), len(g))
    total = 0.0
    for i in range(1, tau + 1):
        total += g[i - 1] - (i - 1) / gamma
    return total / tau


def ap_bruteforce(actions, src_len):
    g = g_from_actions(actions)
    return sum(g) / (src_len * len(g))


def cw_bruteforce(actions):
    runs = [len(m) for m in actions.replace("W", " ").split()]
    return sum(runs) / len(runs)


def wait_k_bruteforce(k, src_len, tgt_len):
    """Write j (1-based) after min(k + j - 1, |s|) reads."""
    out, reads = [], 0
    for j in range(1, tgt_len + 1):
        need = min(k + j - 1, src_len)
        out += ["R"] * (need - reads)
        reads = need
        out.append("W")
    return "".join(out)


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu_bruteforce(hyps, refs, max_n=4):
    """Corpus BLEU with clipped counts found by explicit occurrence counting."""
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    log_sum = 0.0
    for n in range(1, max_n + 1):
        match = total = 0
        for h, r in zip(hyps, refs):
            hg, rg = _ngrams(list(h), n), _ngrams(list(r), n)
            total += len(hg)
            for gram in set(hg):
                match += min(hg.count(gram), rg.count(gram))
        if match == 0:
            return 0.0
        log_sum += math.log(match / total)
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_sum / max_n)


# ---------------------------------------------------------------------------
# synthetic languages and anticipation-free sequences


def transform_ref(variant, content):
    s = list(content)
    if variant == "copy":
        return s
    if variant == "swap2":
        out = []
        for m in range(0, len(s), 2):
            out += [s[m + 1], s[m]]
        return out
    if variant == "rotate1":
        return [s[-1]] + s[:-1]
    raise ValueError(variant)


def lags_by_perturbation(variant, content, alphabet):
    """Dependency lag of every target word (EOS included), found by perturbing the source.

    A target word needs more than L reads if some other sentence sharing the
    first L source words (EOS counted as a word) translates it differently.
    Alternatives: every single-token substitution, which fixes the value of
    a word among sentences of the same length, and appending a chunk (two
    tokens for swap2), which exposes words that depend on where the source ends.
    """
    full = list(content) + [EOS]
    target = transform_ref(variant, content) + [EOS]
    alts = []
    for p in range(len(content)):
        for t in alphabet:
            if t != content[p]:
                alts.append(content[:p] + [t] + content[p + 1:])
    for t in alphabet:
        alts.append(list(content) + [t] * (2 if variant == "swap2" else 1))
    lags = [1] * len(target)
    for alt in alts:
        alt_full = alt + [EOS]
        shared = 0
        while full[shared] == alt_full[shared]:
            shared += 1
        alt_target = transform_ref(variant, alt) + [EOS]
        for j in range(len(target)):
            if alt_target[j] != target[j]:
                lags[j] = max(lags[j], shared + 1)
    return lags


def valid_sequences(lags, src_len):
    """Every full-read action string that never writes word j before lags[j] reads."""
    n_w = len(lags)
    for reads_before in itertools.combinations_with_replacement(range(1, src_len + 1), n_w):
        g = list(reads_before)
        if g[-1] != src_len:
            continue
        if any(gi < d for gi, d in zip(g, lags)):
            continue
        out, reads = [], 0
        for gi in g:
            out += ["R"] * (gi - reads)
            reads = gi
            out.append("W")
        yield "".join(out)


def minimal_sequence_enumerated(lags, src_len):
    """Lowest total-lag valid sequence by exhaustive enumeration; asserts it is unique."""
    best, best_cost = [], None
    for seq in valid_sequences(lags, src_len):
        cost = sum(g_from_actions(seq))
        if best_cost is None or cost < best_cost:
            best, best_cost = [seq], cost
        elif cost == best_cost:
            best.append(seq)
    assert len(best) == 1, best
    return best[0]


def minimal_sequence_dp(lags, src_len):
    """Lowest total-lag valid sequence by dynamic programming over (writes, reads)."""
    n_w = len(lags)
    INF = float("inf")
    # cost[j][i]: least sum of g over the first j writes with the j-th write at i reads
    cost = [[INF] * (src_len + 1) for _ in range(n_w + 1)]
    back = [[None] * (src_len + 1) for _ in range(n_w + 1)]
    cost[0][1] = 0
    for j in range(1, n_w + 1):
        for i in range(max(lags[j - 1], 1), src_len + 1):
            for prev in range(1, i + 1):
                c = cost[j - 1][prev] + i
                if c < cost[j][i]:
                    cost[j][i], back[j][i] = c, prev
    g, i = [], src_len
    for j in range(n_w, 0, -1):
        g.append(i)
        i = back[j][i]
    g.reverse()
    out, reads = [], 0
    for gi in g:
        out += ["R"] * (gi - reads)
        reads = gi
        out.append("W")
    return "".join(out)
