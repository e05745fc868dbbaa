import math

import pytest

from oracles import al_bruteforce, lags_by_perturbation, minimal_sequence_enumerated
from rwpolicy.corpus import EOS, SentencePair, SyntheticLanguageSpec, gen_synthetic, strip_eos
from rwpolicy.errors import ContractError
from rwpolicy.oracle import (AL_EXCEEDED, EARLY_FINISH, ERROR, OracleConfig, apply_filters,
                             generate_corpus, generate_sequence, oracle_record, summarize)
from rwpolicy.translator import ToyPredictor

NO_CAP = OracleConfig(rank=1, al_max=math.inf)


def test_swap2_trace():
    m = ToyPredictor("swap2", 32)
    pair = SentencePair(0, (2, 3, 4, 5), (3, 2, 5, 4))
    assert generate_sequence(pair, NO_CAP, m) == "RRWWRRWW"
    # with EOS appended the final WRITE of EOS waits for the source EOS
    pair = SentencePair(0, (2, 3, 4, 5, EOS), (3, 2, 5, 4, EOS))
    assert generate_sequence(pair, NO_CAP, m) == "RRWWRRWWRW"


@pytest.mark.parametrize("n", range(1, 7))
def test_copy_alternates(n):
    content = list(range(2, 2 + n))
    pair = SentencePair(0, tuple(content), tuple(content))
    assert generate_sequence(pair, NO_CAP, ToyPredictor("copy", 32)) == "RW" * n
    lags = lags_by_perturbation("copy", content, [2, 3])
    assert minimal_sequence_enumerated(lags, n + 1) == "RW" * (n + 1)


@pytest.mark.parametrize("variant", ["copy", "swap2", "rotate1"])
def test_matches_enumerated_minimum(variant):
    pairs = gen_synthetic(SyntheticLanguageSpec(variant, 32, 1, 6, seed=7), 60)
    m = ToyPredictor(variant, 32)
    for p in pairs:
        content = list(strip_eos(p.source))
        lags = lags_by_perturbation(variant, content, [2, 3, 4])
        assert generate_sequence(p, NO_CAP, m) == minimal_sequence_enumerated(lags, len(p.source))


def test_anticipation_free_small_pairs():
    pairs = gen_synthetic(SyntheticLanguageSpec("mix", 32, 1, 8, seed=2), 300)
    m = ToyPredictor("mix", 32)
    for p in pairs:
        acts = generate_sequence(p, NO_CAP, m)
        reads = 0
        j = 0
        for a in acts:
            if a == "R":
                reads += 1
            else:
                assert reads >= p.lags[j]
                j += 1


def test_large_rank_writes_immediately():
    pair = SentencePair(0, (2, 3, 4, EOS), (4, 2, 3, EOS))
    acts = generate_sequence(pair, OracleConfig(rank=32), ToyPredictor("rotate1", 32))
    assert acts == "RWWWW"
    rec = oracle_record(pair, OracleConfig(rank=32), ToyPredictor("rotate1", 32))
    assert not rec.kept and rec.reason == EARLY_FINISH


def test_filter_anchor_kept():
    rec = apply_filters(0, "RWRRRRWWWRRRWWWW", 8, 8, OracleConfig(1, 3.0))
    assert rec.kept and rec.report.al == pytest.approx(2.8)


def test_filter_boundary_inclusive():
    assert apply_filters(0, "RRRWW", 3, 2, OracleConfig(1, 3.0)).kept
    rec = apply_filters(0, "RRRWW", 3, 2, OracleConfig(1, 2.99))
    assert rec.reason == AL_EXCEEDED


def test_rotate1_length10_rejected():
    pairs = gen_synthetic(SyntheticLanguageSpec("rotate1", 32, 10, 10, seed=1), 50)
    recs, stats = generate_corpus(pairs, OracleConfig(1, 3.0), ToyPredictor("rotate1", 32))
    for p, r in zip(pairs, recs):
        assert r.reason == AL_EXCEEDED
        assert r.report.g[0] == len(p.source) == 11
    assert stats["rejected"][AL_EXCEEDED] == 50 and stats["kept"] == 0


def test_kept_records_meet_filters():
    pairs = gen_synthetic(SyntheticLanguageSpec("mix", 32, 1, 10, seed=3), 400)
    m = ToyPredictor("mix", 32, noise=0.4, blur=0.5, seed=3)
    recs, stats = generate_corpus(pairs, OracleConfig(2, 3.0), m)
    kept = [(p, r) for p, r in zip(pairs, recs) if r.kept]
    assert stats["kept"] == len(kept) > 0
    for p, r in kept:
        assert al_bruteforce(r.actions, len(p.source)) <= 3.0
        assert r.actions.count("R") == len(p.source) and r.actions[-1] == "W"
        assert r.actions.count("W") == len(p.target)


def test_alpha_inf_keeps_more():
    pairs = gen_synthetic(SyntheticLanguageSpec("mix", 32, 2, 10, seed=4), 300)
    m = ToyPredictor("mix", 32)
    _, capped = generate_corpus(pairs, OracleConfig(1, 3.0), m)
    _, free = generate_corpus(pairs, NO_CAP, m)
    assert free["kept_fraction"] > capped["kept_fraction"]


def test_workers_identical():
    pairs = gen_synthetic(SyntheticLanguageSpec("swap2", 32, 2, 12, seed=5), 1000)
    m = ToyPredictor("swap2", 32, noise=0.3, seed=1)
    one, s1 = generate_corpus(pairs, OracleConfig(1, 3.0), m, workers=1)
    four, s4 = generate_corpus(pairs, OracleConfig(1, 3.0), m, workers=4)
    assert one == four and s1 == s4


def test_error_records():
    m = ToyPredictor("copy", 8)
    pairs = [SentencePair(0, (2, 3, EOS), (2, 3, EOS)), SentencePair(1, (9, EOS), (9, EOS))]
    recs, stats = generate_corpus(pairs, NO_CAP, m)
    assert recs[0].kept
    assert recs[1].reason == ERROR and "pair 1" in recs[1].error
    assert stats["rejected"][ERROR] == 1


def test_empty_corpus():
    recs, stats = generate_corpus([], OracleConfig(), ToyPredictor("copy", 32))
    assert recs == [] and stats == summarize([])
    assert stats["total"] == 0 and stats["kept"] == 0


def test_config_validation():
    with pytest.raises(ContractError):
        OracleConfig(rank=0)
    with pytest.raises(ContractError):
        OracleConfig(al_max=0)
    with pytest.raises(ContractError):
        generate_corpus([], OracleConfig(), ToyPredictor("copy", 32), workers=0)
