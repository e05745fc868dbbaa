import numpy as np
import pytest

from oracles import al_bruteforce, wait_k_bruteforce
from rwpolicy.baselines import (WaitKConfig, WiwWidConfig, test_time_wait_k_decode, wait_k_actions,
                                wait_k_schedule, wiw_wid_decode)
from rwpolicy.corpus import EOS, SyntheticLanguageSpec, gen_synthetic, strip_eos
from rwpolicy.errors import ContractError
from rwpolicy.metrics import g_vector, latency_report, sentence_bleu
from rwpolicy.translator import Prediction, Predictor, Session, ToyPredictor


def test_wait3_schedule():
    acts = wait_k_actions(3, 8, 8)
    assert g_vector(acts) == [3, 4, 5, 6, 7, 8, 8, 8]
    assert acts == "RRRWRWRWRWRWRWWW"
    assert al_bruteforce(acts, 8) == pytest.approx(3.0)


def test_wait_k_beyond_source():
    assert wait_k_actions(9, 4, 4) == "RRRRWWWW"


def test_wait1_alternates():
    acts = wait_k_actions(1, 5, 5)
    assert acts == "RW" * 5 and latency_report(acts, 5).al == 1.0


@pytest.mark.parametrize("k", range(1, 7))
@pytest.mark.parametrize("n", [1, 4, 10, 17])
def test_schedule_matches_bruteforce(k, n):
    assert wait_k_actions(k, n, n) == wait_k_bruteforce(k, n, n)


def test_schedule_validation():
    with pytest.raises(ContractError):
        next(wait_k_schedule(0, 3))
    with pytest.raises(ContractError):
        WaitKConfig(0)
    with pytest.raises(ContractError):
        WiwWidConfig(0, 1)
    with pytest.raises(ContractError):
        WiwWidConfig(1, 1, "nope")


def test_wait1_copy_perfect():
    m = ToyPredictor("copy", 32)
    for p in gen_synthetic(SyntheticLanguageSpec("copy", 32, 2, 10, seed=1), 30):
        t = test_time_wait_k_decode(1, p.source, m)
        assert t.tokens == p.target
        assert sentence_bleu(t.hypothesis, strip_eos(p.target)) == 100.0


def test_wait1_swap2_anticipates():
    m = ToyPredictor("swap2", 32)
    src = (2, 3, 4, 5, EOS)
    t = test_time_wait_k_decode(1, src, m)
    assert t.tokens[0] != 3
    assert m.open(src).rank_of(3, 1, []) != 1


def test_wait2_swap2_perfect():
    m = ToyPredictor("swap2", 32)
    for p in gen_synthetic(SyntheticLanguageSpec("swap2", 32, 2, 12, seed=2), 30):
        assert test_time_wait_k_decode(2, p.source, m).tokens == p.target


def test_wait_k_max_len():
    m = ToyPredictor("copy", 32)
    t = test_time_wait_k_decode(1, (2, 3, 4, EOS), m, max_len=2)
    assert len(t.tokens) == 2 and t.actions == "RWRW"


class _Stable(Predictor):
    """Top-1 token fixed and its probability rising with context."""

    vocab_size, feature_dim = 4, 1

    def open(self, source, pair_id=None):
        outer = self

        class S(Session):
            def __init__(self):
                self.source = tuple(source)

            def predict(self, n_read, tgt_prefix, gold=None):
                top = 0.5 + 0.4 * n_read / len(self.source)
                tok = EOS if len(tgt_prefix) >= 3 else 2
                probs = np.array([top] + [(1 - top) / 3] * 3)
                order = [tok] + [t for t in range(outer.vocab_size) if t != tok]
                return Prediction(np.array(order), np.log(probs), np.zeros(1))
        return S()


@pytest.mark.parametrize("mode", ["wiw", "wid"])
def test_stable_predictor_never_waits(mode):
    t = wiw_wid_decode(WiwWidConfig(2, 1, mode), (2, 2, 2, 2, 2, 2), _Stable())
    assert t.actions == "RRWWWW"


def test_wid_swap2_trace():
    m = ToyPredictor("swap2", 32)
    src = (2, 3, 4, 5, EOS)
    t = wiw_wid_decode(WiwWidConfig(1, 1, "wid"), src, m)
    assert t.actions.startswith("RRW")
    assert t.tokens == (3, 2, 5, 4, EOS)


@pytest.mark.parametrize("mode", ["wiw", "wid"])
def test_s0_beyond_source_full_read(mode):
    m = ToyPredictor("mix", 32)
    src = (2, 5, 8, EOS)
    t = wiw_wid_decode(WiwWidConfig(10, 2, mode), src, m)
    assert t.actions.startswith("RRRR") and set(t.actions[4:]) == {"W"}


@pytest.mark.parametrize("mode", ["wiw", "wid"])
def test_wiw_wid_deterministic_and_bounded(mode):
    m = ToyPredictor("mix", 32, noise=0.3, blur=0.5, seed=2)
    for p in gen_synthetic(SyntheticLanguageSpec("mix", 32, 2, 12, seed=3), 50):
        a = wiw_wid_decode(WiwWidConfig(2, 2, mode), p.source, m)
        b = wiw_wid_decode(WiwWidConfig(2, 2, mode), p.source, m)
        assert a == b
        assert a.actions.count("R") <= len(p.source)
        assert EOS not in a.tokens[:-1]
