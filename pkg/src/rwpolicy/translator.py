"""Incremental next-token predictors.

A ``Predictor`` plays the role of a pre-trained full-sentence translation
model queried on prefixes. ``Predictor.open(source)`` starts a per-sentence
session; ``Session.predict(n_read, tgt_prefix)`` returns the ranked next-token
distribution and an observation vector for the state after ``n_read`` source
tokens and the given target prefix. Sessions must only look at
``source[:n_read]``, with one documented exception: the toy predictor knows
the synthetic language and therefore the whole pair.
"""

from __future__ import annotations

import hashlib
import math
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EOS, LANGUAGES, N_RESERVED, derive_target, strip_eos, variant_of_token
from .errors import ContractError

TOY_FEATURE_DIM = 8
# index of the toy feature that is withheld (always zero) to avoid label leakage
WITHHELD_FEATURE = 6


@dataclass(frozen=True)
class Prediction:
    tokens: np.ndarray      # token ids, best first
    logprobs: np.ndarray    # non-increasing
    features: np.ndarray
    # rank of the requested gold token when ``tokens`` is a truncated top-k
    gold_rank: int | None = None

    @property
    def top(self) -> int:
        return int(self.tokens[0])

    @property
    def top_prob(self) -> float:
        return math.exp(self.logprobs[0])

    def prob_of(self, token: int) -> float:
        hit = np.flatnonzero(self.tokens == token)
        return math.exp(self.logprobs[hit[0]]) if hit.size else 0.0

    def rank_of(self, token: int) -> int:
        hit = np.flatnonzero(self.tokens == token)
        if hit.size:
            return int(hit[0]) + 1
        if self.gold_rank is not None:
            return self.gold_rank
        raise ContractError(f"token {token} not in the returned top-{len(self.tokens)}")


class Session(ABC):
    """Prediction state bound to one source sentence."""

    source: tuple

    @abstractmethod
    def predict(self, n_read: int, tgt_prefix: Sequence[int], gold: int | None = None) -> Prediction:
        ...

    def rank_of(self, gold: int, n_read: int, tgt_prefix: Sequence[int]) -> int:
        return self.predict(n_read, tgt_prefix, gold=gold).rank_of(gold)

    def _check_prefix(self, n_read):
        if not 1 <= n_read <= len(self.source):
            raise ContractError(
                f"source prefix of length {n_read} for a sentence of length {len(self.source)}")


class Predictor(ABC):
    vocab_size: int
    feature_dim: int

    def handshake(self) -> tuple[int, int]:
        return self.vocab_size, self.feature_dim

    @abstractmethod
    def open(self, source: Sequence[int], pair_id: int | None = None) -> Session:
        ...

    def close(self):
        pass


# ---------------------------------------------------------------------------
# toy predictor


def _logit(p):
    # log1p keeps logit(1 - tiny) finite
    return math.log(p) - math.log1p(-p)


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _digest(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class ToyPredictor(Predictor):
    """A predictor over the synthetic languages with exact knowledge of dependency lags.

    With enough source context (``n_read >= lag``) the gold token is ranked
    first with probability ``1 - epsilon`` and the rest spread uniformly.
    Otherwise a wrong guess is ranked first and the gold token last.

    ``noise`` is the per-query probability that a query with enough context
    still gets the gold token wrong; its rank is then uniform in
    ``[floor + 1, V]``. Noisy queries are calibrated: the top-1 probability
    ``c`` is drawn first, centred on ``1 - noise`` with logit-space spread
    ``blur``, and the top-1 token is right with probability ``c``. With
    ``blur = 0`` every noisy query errs with probability exactly ``noise``.
    End-of-sentence predictions with the full source read are never noisy.
    Every random draw is a pure function of ``(seed, source, n_read, position)``.
    """

    def __init__(self, language: str, vocab_size: int = 32, noise: float = 0.0,
                 blur: float = 0.0, floor: int = 1, seed: int = 0,
                 epsilon: float = 0.05, wrong_conf: float = 0.4):
        if language not in LANGUAGES:
            raise ContractError(f"unknown toy language {language!r}")
        if vocab_size < 4:
            raise ContractError("vocab size must be at least 4")
        if not 0.0 <= noise <= 1.0:
            raise ContractError("noise must be in [0, 1]")
        if not 1 <= floor < vocab_size:
            raise ContractError("floor must be in [1, V)")
        if not (0.0 < epsilon < 1.0 and 0.0 < wrong_conf < 1.0):
            raise ContractError("epsilon and wrong_conf must lie strictly between 0 and 1")
        self.language = language
        self.vocab_size = vocab_size
        self.feature_dim = TOY_FEATURE_DIM
        self.noise = noise
        self.blur = blur
        self.floor = floor
        self.seed = seed
        self.epsilon = epsilon
        self.wrong_conf = wrong_conf
        tail = 1.0 / np.arange(2, vocab_size + 1)
        self._tail = tail / tail.sum()
        # smallest top-1 probability that still dominates rank 2
        a = self._tail[0]
        self._min_conf = max(a / (1 + a), 1.0 / vocab_size) + 1e-3

    def __repr__(self):
        return (f"ToyPredictor({self.language!r}, vocab_size={self.vocab_size}, "
                f"noise={self.noise}, blur={self.blur}, seed={self.seed})")

    @property
    def spec(self) -> str:
        s = f"toy:{self.language}:vocab={self.vocab_size}"
        if self.noise:
            s += f":noise={self.noise}"
        if self.blur:
            s += f":blur={self.blur}"
        if self.floor != 1:
            s += f":floor={self.floor}"
        if self.seed:
            s += f":seed={self.seed}"
        if self.epsilon != 0.05:
            s += f":eps={self.epsilon}"
        if self.wrong_conf != 0.4:
            s += f":wrong={self.wrong_conf}"
        return s

    def open(self, source, pair_id=None) -> "ToySession":
        source = tuple(int(t) for t in source)
        if not source:
            raise ContractError("empty source")
        if max(source) >= self.vocab_size:
            raise ContractError(f"token {max(source)} outside vocabulary of size {self.vocab_size}")
        content = strip_eos(source)
        if not content:
            raise ContractError("source has no content tokens")
        variant = variant_of_token(content[0]) if self.language == "mix" else self.language
        target, lags = derive_target(variant, source)
        return ToySession(self, source, target, lags)

    def _clip(self, c):
        return min(max(c, self._min_conf), 0.995)

    def confidence(self, kind: str, z: float) -> float:
        """Top-1 probability of a noise-free ``correct`` query or a context-starved ``guess``."""
        c = 1.0 - self.epsilon if kind == "correct" else self.wrong_conf
        if self.blur:
            c = _sigmoid(_logit(c) + self.blur * z)
        return self._clip(c)

    def noisy_confidence(self, z: float) -> float:
        """Chance that a query exposed to noise ranks the gold token first (before display clipping)."""
        if not self.blur or self.noise in (0.0, 1.0):
            return 1.0 - self.noise
        # logit(1 - noise) written as -logit(noise), exact for tiny noise
        return _sigmoid(-_logit(self.noise) + self.blur * z)


class ToySession(Session):
    def __init__(self, model: ToyPredictor, source, target, lags):
        self.model = model
        self.source = source
        self.target = target
        self.lags = lags
        self._key = (model.seed, source)
        self._cache = {}

    def gold(self, position: int) -> tuple[int, int]:
        """(gold token, lag) for a 1-based target position; past the end the gold is EOS."""
        if position <= len(self.target):
            return self.target[position - 1], self.lags[position - 1]
        return EOS, len(self.source)

    def predict(self, n_read, tgt_prefix, gold=None) -> Prediction:
        self._check_prefix(n_read)
        j = len(tgt_prefix) + 1
        hit = self._cache.get((n_read, j))
        if hit is None:
            hit = self._cache[(n_read, j)] = self._build(n_read, j)
        return hit

    def _build(self, i, j) -> Prediction:
        m = self.model
        V = m.vocab_size
        gold, lag = self.gold(j)
        rnd = random.Random(_digest(*self._key, i, j))
        u, rank_u, z = rnd.random(), rnd.random(), rnd.gauss(0.0, 1.0)
        noisy = False
        if i < lag:
            kind, c = "guess", m.confidence("guess", z)
        elif gold == EOS or not m.noise:
            kind, c = "correct", m.confidence("correct", z)
        else:
            noisy = True
            q = m.noisy_confidence(z)
            kind = "correct" if u < q else "noise"
            c = m._clip(q)
        if kind == "correct":
            gold_rank = 1
        elif kind == "noise":
            gold_rank = m.floor + 1 + min(int(rank_u * (V - m.floor)), V - m.floor - 1)
        else:
            gold_rank = V

        if gold_rank == 1:
            order = [gold] + [t for t in range(V) if t != gold]
            # a noisy query looks the same whether or not its top-1 is right
            probs = np.empty(V)
            probs[1:] = (1.0 - c) * m._tail if noisy else (1.0 - c) / (V - 1)
        else:
            cands = [t for t in range(N_RESERVED, V) if t != gold]
            guess = cands[(_digest(*self._key, j) + i) % len(cands)]
            rest = [t for t in range(V) if t != gold and t != guess]
            rest.insert(gold_rank - 2, gold)
            order = [guess] + rest
            probs = np.empty(V)
            probs[1:] = (1.0 - c) * m._tail
        probs[0] = c
        logp = np.log(probs)
        entropy = float(-(probs * logp).sum()) / math.log(V)
        features = np.array([
            i / len(self.source),
            j / len(self.target),
            c,
            c - probs[1],
            entropy,
            1.0 if i == len(self.source) else 0.0,
            0.0,
            1.0,
        ])
        return Prediction(np.asarray(order, dtype=np.int64), logp, features)


# ---------------------------------------------------------------------------


def _parse_options(parts, casts):
    opts = {}
    for part in parts:
        if "=" not in part:
            raise ContractError(f"expected key=value in model spec, got {part!r}")
        key, value = part.split("=", 1)
        if key not in casts:
            raise ContractError(f"unknown model option {key!r}")
        opts[key] = casts[key](value)
    return opts


_TOY_OPTIONS = {"noise": float, "blur": float, "floor": int, "seed": int,
                "vocab": int, "eps": float, "wrong": float}


def load_model(spec: str, vocab_size: int | None = None) -> Predictor:
    """Build a predictor from ``toy:<language>[:key=value...]`` or ``adapter:<address>``.

    Toy options: ``noise``, ``blur``, ``floor``, ``seed``, ``vocab``, ``eps``
    and ``wrong`` (top-1 probability of a wrong guess before blurring).
    """
    kind, _, rest = spec.partition(":")
    if kind == "toy":
        language, *parts = rest.split(":")
        opts = _parse_options(parts, _TOY_OPTIONS)
        V = opts.pop("vocab", vocab_size or 32)
        kwargs = {"noise": opts.get("noise", 0.0), "blur": opts.get("blur", 0.0),
                  "floor": opts.get("floor", 1), "seed": opts.get("seed", 0)}
        if "eps" in opts:
            kwargs["epsilon"] = opts["eps"]
        if "wrong" in opts:
            kwargs["wrong_conf"] = opts["wrong"]
        return ToyPredictor(language, V, **kwargs)
    if kind == "adapter":
        from .adapter import AdapterPredictor
        return AdapterPredictor(rest)
    raise ContractError(f"unknown model spec {spec!r}")
