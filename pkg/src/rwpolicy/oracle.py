"""Oracle READ/WRITE sequences from predictor ranks, with latency and full-read filters."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .corpus import READ, WRITE, SentencePair, check_actions
from .errors import ContractError, RWPolicyError
from .metrics import LatencyReport, latency_report
from .translator import Predictor

KEPT = "kept"
AL_EXCEEDED = "al_exceeded"
EARLY_FINISH = "early_finish"
ERROR = "error"


@dataclass(frozen=True)
class OracleConfig:
    rank: int = 50
    al_max: float = 3.0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError("rank threshold must be >= 1")
        if not self.al_max > 0:
            raise ContractError("AL cap must be positive")


@dataclass(frozen=True)
class OracleRecord:
    pair_id: int
    actions: str
    report: LatencyReport | None
    kept: bool
    reason: str | None = None
    error: str | None = None

    @property
    def status(self) -> str:
        return KEPT if self.kept else self.reason


def generate_sequence(pair: SentencePair, config: OracleConfig, model: Predictor) -> str:
    """Write as soon as the gold next word ranks within ``config.rank``, else read.

    The model sees the gold target prefix. Once the whole source is read,
    every remaining target word is written.
    """
    src, tgt = pair.source, pair.target
    session = model.open(src, pair.pair_id)
    seq = [READ]
    n_src, n_tgt = 1, 0
    while n_tgt < len(tgt):
        if n_src == len(src) or session.rank_of(tgt[n_tgt], n_src, tgt[:n_tgt]) <= config.rank:
            seq.append(WRITE)
            n_tgt += 1
        else:
            seq.append(READ)
            n_src += 1
    return "".join(seq)


def apply_filters(pair_id: int, actions: str, src_len: int, tgt_len: int,
                  config: OracleConfig) -> OracleRecord:
    check_actions(actions, tgt_len, src_len)
    report = latency_report(actions, src_len, tgt_len)
    if actions.count(READ) < src_len or actions[-1] != WRITE:
        return OracleRecord(pair_id, actions, report, False, EARLY_FINISH)
    if report.al > config.al_max:
        return OracleRecord(pair_id, actions, report, False, AL_EXCEEDED)
    return OracleRecord(pair_id, actions, report, True)


def oracle_record(pair: SentencePair, config: OracleConfig, model: Predictor) -> OracleRecord:
    try:
        actions = generate_sequence(pair, config, model)
    except RWPolicyError as exc:
        return OracleRecord(pair.pair_id, "", None, False, ERROR, f"pair {pair.pair_id}: {exc}")
    return apply_filters(pair.pair_id, actions, len(pair.source), len(pair.target), config)


def _run_shard(args):
    pairs, config, model = args
    return [oracle_record(p, config, model) for p in pairs]


def summarize(records: Sequence[OracleRecord]) -> dict:
    kept = [r for r in records if r.kept]
    counts = {AL_EXCEEDED: 0, EARLY_FINISH: 0, ERROR: 0}
    for r in records:
        if not r.kept:
            counts[r.reason] += 1
    return {
        "total": len(records),
        "kept": len(kept),
        "kept_fraction": len(kept) / len(records) if records else 0.0,
        "mean_al": math.fsum(r.report.al for r in kept) / len(kept) if kept else 0.0,
        "rejected": counts,
    }


def generate_corpus(pairs: Sequence[SentencePair], config: OracleConfig, model: Predictor,
                    workers: int = 1) -> tuple[list[OracleRecord], dict]:
    """Run the oracle over a corpus, split into contiguous shards across processes.

    Records come back in input order whatever the worker count.
    """
    if workers < 1:
        raise ContractError("workers must be >= 1")
    pairs = list(pairs)
    if workers == 1 or len(pairs) < 2:
        records = _run_shard((pairs, config, model))
    else:
        n_shards = min(workers * 4, len(pairs))
        bounds = [len(pairs) * k // n_shards for k in range(n_shards + 1)]
        shards = [(pairs[a:b], config, model) for a, b in zip(bounds, bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for shard in pool.map(_run_shard, shards) for r in shard]
    return records, summarize(records)


def record_rows(records: Sequence[OracleRecord]):
    """Rows for the oracle TSV: pair id, actions, kept/reason."""
    return [(r.pair_id, r.actions, r.status) for r in records]
