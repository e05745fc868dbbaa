import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwpolicy.corpus import EOS, SyntheticLanguageSpec, gen_synthetic
from rwpolicy.errors import ContractError
from rwpolicy.translator import TOY_FEATURE_DIM, ToyPredictor, load_model

A, B, C, D = 2, 3, 4, 5
SWAP = (A, B, C, D, EOS)


def test_swap2_sufficient_context():
    m = ToyPredictor("swap2", 32)
    pred = m.open(SWAP).predict(2, [])
    assert pred.top == B
    assert pred.top_prob == pytest.approx(1 - m.epsilon)


def test_swap2_insufficient_context_buries_gold():
    m = ToyPredictor("swap2", 32)
    s = m.open(SWAP)
    assert s.predict(1, []).rank_of(B) == 32
    assert s.rank_of(B, 1, []) == 32
    assert s.rank_of(B, 2, []) == 1


def test_copy_first_word():
    assert ToyPredictor("copy", 32).open((7, 9, EOS)).predict(1, []).top == 7


def test_handshake():
    assert ToyPredictor("mix", 40).handshake() == (40, TOY_FEATURE_DIM)


def test_prefix_bounds():
    s = ToyPredictor("copy", 32).open((2, 3, EOS))
    for n in (0, 4):
        with pytest.raises(ContractError):
            s.predict(n, [])


def test_out_of_vocab_source():
    with pytest.raises(ContractError):
        ToyPredictor("copy", 8).open((9, EOS))


def _queries(seed, n=100):
    rng = np.random.default_rng(seed)
    pairs = gen_synthetic(SyntheticLanguageSpec("mix", 32, 2, 12, seed=seed), n)
    out = []
    for p in pairs:
        i = int(rng.integers(1, len(p.source) + 1))
        j = int(rng.integers(0, len(p.target)))
        out.append((p, i, j))
    return out


def test_zero_noise_equals_ideal():
    ideal = ToyPredictor("mix", 32)
    noisy = ToyPredictor("mix", 32, noise=0.0, blur=0.0, floor=5, seed=123)
    for p, i, j in _queries(0):
        gold = p.target[j]
        assert (noisy.open(p.source).rank_of(gold, i, p.target[:j])
                == ideal.open(p.source).rank_of(gold, i, p.target[:j]))


@given(st.integers(0, 10**6), st.floats(0, 1), st.floats(0, 2), st.integers(1, 10))
@settings(max_examples=40, deadline=None)
def test_prediction_invariants(seed, noise, blur, floor):
    m = ToyPredictor("mix", 32, noise=noise, blur=blur, floor=floor, seed=seed)
    for p, i, j in _queries(seed % 1000, 10):
        pred = m.open(p.source).predict(i, p.target[:j])
        assert sorted(pred.tokens.tolist()) == list(range(32))
        assert np.all(np.diff(pred.logprobs) <= 1e-15)
        assert abs(np.exp(pred.logprobs).sum() - 1) < 1e-6
        assert pred.features.shape == (TOY_FEATURE_DIM,) and np.all(np.isfinite(pred.features))
        rank = pred.rank_of(p.target[j])
        assert rank == 1 or rank > floor


def test_deterministic_across_instances():
    a = ToyPredictor("mix", 32, noise=0.4, blur=0.5, seed=3)
    b = ToyPredictor("mix", 32, noise=0.4, blur=0.5, seed=3)
    for p, i, j in _queries(1, 30):
        pa = a.open(p.source).predict(i, p.target[:j])
        pb = b.open(p.source).predict(i, p.target[:j])
        assert np.array_equal(pa.tokens, pb.tokens) and np.array_equal(pa.logprobs, pb.logprobs)


def test_noise_rate_matches_probability():
    # with blur 0 a noisy query errs with probability exactly `noise`
    m = ToyPredictor("copy", 32, noise=0.3, seed=4)
    pairs = gen_synthetic(SyntheticLanguageSpec("copy", 32, 10, 10, seed=2), 400)
    wrong = total = 0
    for p in pairs:
        s = m.open(p.source)
        for j in range(len(p.target) - 1):
            wrong += s.rank_of(p.target[j], j + 1, p.target[:j]) != 1
            total += 1
    rate = wrong / total
    # binomial standard error at n = 4000 is about 0.007
    assert abs(rate - 0.3) < 0.03


def test_eos_never_noisy():
    m = ToyPredictor("copy", 32, noise=1.0, seed=1)
    src = (2, 3, 4, EOS)
    s = m.open(src)
    assert s.rank_of(EOS, 4, src[:3]) == 1
    assert s.rank_of(2, 1, []) > 1


def test_noisy_features_do_not_reveal_outcome():
    # at equal top-1 probability, right and wrong noisy answers look identical
    m = ToyPredictor("copy", 32, noise=0.5, seed=0)
    src = tuple(range(2, 14)) + (EOS,)
    s = m.open(src)
    feats = {}
    for j in range(12):
        pred = s.predict(j + 1, src[:j])
        feats.setdefault(pred.rank_of(src[j]) == 1, pred.features[2:5])
    assert set(feats) == {True, False}
    assert np.allclose(feats[True], feats[False])


def test_load_model_spec_roundtrip():
    m = load_model("toy:mix:noise=0.47:blur=0.3:wrong=0.1:seed=7")
    assert (m.noise, m.blur, m.wrong_conf, m.seed, m.vocab_size) == (0.47, 0.3, 0.1, 7, 32)
    again = load_model(m.spec)
    assert again.spec == m.spec
    assert load_model("toy:copy:vocab=12").vocab_size == 12


@pytest.mark.parametrize("spec", ["toy:klingon", "toy:copy:noise", "toy:copy:bogus=1", "nope:x",
                                  "toy:copy:noise=2"])
def test_load_model_errors(spec):
    with pytest.raises(ContractError):
        load_model(spec)


def test_confidence_range():
    m = ToyPredictor("mix", 32, blur=3.0)
    for z in (-5, 0, 5):
        for kind in ("correct", "guess"):
            assert m._min_conf <= m.confidence(kind, z) <= 0.995
    assert math.isclose(ToyPredictor("mix", 32, noise=0.2).noisy_confidence(1.0), 0.8)
