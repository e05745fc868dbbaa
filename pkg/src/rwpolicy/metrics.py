"""Latency metrics over action strings and corpus-level BLEU over token ids."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import READ, WRITE
from .errors import ContractError


@dataclass(frozen=True)
class LatencyReport:
    g: tuple
    al: float
    ap: float
    cw: float
    gamma: float
    tau: int
    # True when the source was never fully read and AL averages over all writes
    truncated: bool


def g_vector(actions: str) -> list[int]:
    """Number of READs preceding each WRITE."""
    g, reads = [], 0
    for a in actions:
        if a == READ:
            reads += 1
        elif a == WRITE:
            g.append(reads)
        else:
            raise ContractError(f"invalid action {a!r}")
    return g


def _check_writes(g, tgt_len):
    if tgt_len is not None and len(g) != tgt_len:
        raise ContractError(f"{len(g)} WRITEs but target length is {tgt_len}")
    if not g:
        raise ContractError("action sequence has no WRITE")


def _tau(g, src_len):
    for i, gi in enumerate(g, start=1):
        if gi >= src_len:
            return i, False
    return len(g), True


def average_lagging(actions: str, src_len: int, tgt_len: int | None = None) -> float:
    g = g_vector(actions)
    _check_writes(g, tgt_len)
    gamma = len(g) / src_len
    tau, _ = _tau(g, src_len)
    return sum(g[i] - i / gamma for i in range(tau)) / tau


def average_proportion(actions: str, src_len: int, tgt_len: int | None = None) -> float:
    g = g_vector(actions)
    _check_writes(g, tgt_len)
    return sum(g) / (src_len * len(g))


def consecutive_wait(actions: str) -> float:
    """Mean length of maximal runs of READs."""
    reads = actions.count(READ)
    if reads == 0:
        raise ContractError("consecutive wait needs at least one READ")
    segments = sum(1 for i, a in enumerate(actions)
                   if a == READ and (i == 0 or actions[i - 1] != READ))
    return reads / segments


def latency_report(actions: str, src_len: int, tgt_len: int | None = None) -> LatencyReport:
    g = g_vector(actions)
    _check_writes(g, tgt_len)
    gamma = len(g) / src_len
    tau, truncated = _tau(g, src_len)
    al = sum(g[i] - i / gamma for i in range(tau)) / tau
    ap = sum(g) / (src_len * len(g))
    return LatencyReport(tuple(g), al, ap, consecutive_wait(actions), gamma, tau, truncated)


# ---------------------------------------------------------------------------
# BLEU


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def ngram_stats(hyp: Sequence[int], ref: Sequence[int], max_n: int = 4) -> list[int]:
    """``[hyp_len, ref_len, match_1, total_1, ..., match_n, total_n]`` for one sentence."""
    stats = [len(hyp), len(ref)]
    for n in range(1, max_n + 1):
        h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        stats.append(sum(min(c, r[g]) for g, c in h.items()))
        stats.append(max(len(hyp) - n + 1, 0))
    return stats


def bleu_from_stats(stats: Sequence[int], max_n: int = 4, smooth: bool = False) -> BleuReport:
    """BLEU from summed sentence statistics.

    With ``smooth`` one is added to the match and total counts of every order
    above unigrams.
    """
    hyp_len, ref_len = stats[0], stats[1]
    precisions, logs = [], []
    for n in range(1, max_n + 1):
        match, total = stats[2 * n], stats[2 * n + 1]
        if smooth and n > 1:
            match, total = match + 1, total + 1
        p = match / total if total else 0.0
        precisions.append(p)
        if p > 0:
            logs.append(math.log(p))
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if len(logs) < max_n or bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(logs) / max_n)
    return BleuReport(score, tuple(precisions), bp, hyp_len, ref_len)


def corpus_bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]],
                max_n: int = 4, smooth: bool = False) -> BleuReport:
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ContractError("empty corpus")
    totals = [0] * (2 + 2 * max_n)
    for hyp, ref in zip(hypotheses, references):
        for k, v in enumerate(ngram_stats(hyp, ref, max_n)):
            totals[k] += v
    return bleu_from_stats(totals, max_n, smooth)


def sentence_bleu(hyp: Sequence[int], ref: Sequence[int], max_n: int = 4, smooth: bool = True) -> float:
    return bleu_from_stats(ngram_stats(hyp, ref, max_n), max_n, smooth).bleu
