"""Token-id corpora, vocabularies, action-sequence files and synthetic languages.

Sentences are tuples of non-negative token ids. Two ids are reserved: ``UNK``
(0) and ``EOS`` (1). By default an ``EOS`` is appended to every source and
target sentence; the source ``EOS`` is a readable word like any other.

Action sequences are plain strings over ``"R"`` (READ) and ``"W"`` (WRITE).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, CorpusError, ParseError

UNK = 0
EOS = 1
N_RESERVED = 2

READ = "R"
WRITE = "W"
# placeholder in action files for pairs that produced no sequence
MISSING = "-"

VARIANTS = ("copy", "swap2", "rotate1")
LANGUAGES = VARIANTS + ("mix",)
MIN_MIX_VOCAB = N_RESERVED + 2 * len(VARIANTS)

Sentence = tuple


@dataclass(frozen=True)
class SentencePair:
    pair_id: int
    source: tuple
    target: tuple
    # dependency lag per target position (1-based source prefix lengths)
    lags: tuple | None = None
    variant: str | None = None

    def __post_init__(self):
        if not self.source or not self.target:
            raise ContractError(f"pair {self.pair_id}: empty side")


def check_actions(actions: str, tgt_len: int | None = None, src_len: int | None = None) -> str:
    """Validate an action string; returns it unchanged."""
    if not actions or actions[0] != READ:
        raise ContractError("action sequence must start with READ")
    bad = set(actions) - {READ, WRITE}
    if bad:
        raise ContractError(f"invalid actions {sorted(bad)}")
    if tgt_len is not None and actions.count(WRITE) != tgt_len:
        raise ContractError(
            f"{actions.count(WRITE)} WRITEs for a target of length {tgt_len}")
    if src_len is not None and actions.count(READ) > src_len:
        raise ContractError(
            f"{actions.count(READ)} READs for a source of length {src_len}")
    return actions


def strip_eos(tokens: Sequence[int]) -> tuple:
    tokens = tuple(tokens)
    if tokens and tokens[-1] == EOS:
        return tokens[:-1]
    return tokens


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Token strings <-> ids. Line ``k`` of a vocab file has id ``k + 2``."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        self.ids = {tok: i + N_RESERVED for i, tok in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise CorpusError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens) + N_RESERVED

    @property
    def size(self) -> int:
        return len(self)

    def encode(self, words: Iterable[str]) -> tuple:
        return tuple(self.ids.get(w, UNK) for w in words)

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                continue
            if i == UNK or i - N_RESERVED >= len(self.tokens):
                out.append("<unk>")
            else:
                out.append(self.tokens[i - N_RESERVED])
        return out

    @classmethod
    def synthetic(cls, vocab_size: int) -> "Vocab":
        return cls(f"w{i}" for i in range(N_RESERVED, vocab_size))

    @classmethod
    def build(cls, sentences: Iterable[Iterable[str]]) -> "Vocab":
        seen = {}
        for words in sentences:
            for w in words:
                seen.setdefault(w, None)
        return cls(seen)

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f if line.strip())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")


# ---------------------------------------------------------------------------
# parallel text


def _read_lines(path):
    if not os.path.exists(path):
        raise CorpusError(f"{path}: no such file")
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def load_parallel(src_path, tgt_path, vocab: Mapping[str, int] | Vocab,
                  append_eos: bool = True) -> list[SentencePair]:
    """Load two aligned whitespace-tokenized files into ``SentencePair``s."""
    mapping = vocab.ids if isinstance(vocab, Vocab) else vocab
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise CorpusError(
            f"line count mismatch: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}")
    pairs = []
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        src_words, tgt_words = s.split(), t.split()
        if not src_words:
            raise ParseError("empty line", src_path, n + 1)
        if not tgt_words:
            raise ParseError("empty line", tgt_path, n + 1)
        src = tuple(mapping.get(w, UNK) for w in src_words)
        tgt = tuple(mapping.get(w, UNK) for w in tgt_words)
        if append_eos:
            src += (EOS,)
            tgt += (EOS,)
        pairs.append(SentencePair(n, src, tgt))
    return pairs


def load_sources(src_path, vocab: Mapping[str, int] | Vocab, append_eos: bool = True) -> list[tuple]:
    mapping = vocab.ids if isinstance(vocab, Vocab) else vocab
    out = []
    for n, line in enumerate(_read_lines(src_path)):
        words = line.split()
        if not words:
            raise ParseError("empty line", src_path, n + 1)
        src = tuple(mapping.get(w, UNK) for w in words)
        out.append(src + (EOS,) if append_eos else src)
    return out


def write_sentences(path, sentences: Iterable[Sequence[int]], vocab: Vocab):
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(vocab.decode(sent)) + "\n")


def write_parallel(src_path, tgt_path, pairs: Sequence[SentencePair], vocab: Vocab):
    write_sentences(src_path, (p.source for p in pairs), vocab)
    write_sentences(tgt_path, (p.target for p in pairs), vocab)


def filter_length(pairs: Iterable[SentencePair], max_len: int) -> list[SentencePair]:
    """Keep pairs whose sides (excluding EOS) are strictly shorter than ``max_len``."""
    return [p for p in pairs
            if len(strip_eos(p.source)) < max_len and len(strip_eos(p.target)) < max_len]


# ---------------------------------------------------------------------------
# action files


def format_action_line(pair_id: int, actions: str, *extra) -> str:
    return "\t".join([str(pair_id), actions or MISSING, *map(str, extra)])


def write_actions(path, records: Iterable[tuple]):
    """Write ``(pair_id, actions[, extra...])`` tuples, one per line."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(format_action_line(*rec) + "\n")


def read_action_records(path) -> list[tuple]:
    """Parse an action file; returns ``(pair_id, actions, *extra_columns)`` tuples."""
    out = []
    for n, line in enumerate(_read_lines(path)):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise ParseError("expected '<pair id>\\t<actions>'", path, n + 1)
        try:
            pair_id = int(cols[0])
        except ValueError:
            raise ParseError(f"bad pair id {cols[0]!r}", path, n + 1) from None
        actions = cols[1]
        if actions == MISSING:
            out.append((pair_id, "", *cols[2:]))
            continue
        bad = set(actions) - {READ, WRITE}
        if bad or not actions:
            raise ParseError(f"invalid action string {actions!r}", path, n + 1)
        out.append((pair_id, actions, *cols[2:]))
    return out


def read_actions(path) -> list[tuple[int, str]]:
    return [(rec[0], rec[1]) for rec in read_action_records(path)]


# ---------------------------------------------------------------------------
# synthetic languages


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    variant: str
    vocab_size: int = 32
    min_len: int = 4
    max_len: int = 12
    seed: int = 0
    # relative frequencies of copy/swap2/rotate1, used only by "mix"
    weights: tuple = (1.0, 1.0, 1.0)
    append_eos: bool = True

    def __post_init__(self):
        if self.variant not in LANGUAGES:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.vocab_size < 4:
            raise ContractError("vocab size must be at least 4")
        if self.variant == "mix" and self.vocab_size < MIN_MIX_VOCAB:
            raise ContractError(f"mix needs vocab size >= {MIN_MIX_VOCAB}")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError("need 1 <= min_len <= max_len")
        if self.variant in ("swap2", "mix") and self.max_len < 2:
            raise ContractError("swap2 needs max_len >= 2")


def band_tokens(vocab_size: int, variant: str | None) -> np.ndarray:
    """Content tokens a variant may use; mixed corpora give each variant its own residue class."""
    ids = np.arange(N_RESERVED, vocab_size)
    if variant is None:
        return ids
    return ids[(ids - N_RESERVED) % len(VARIANTS) == VARIANTS.index(variant)]


def variant_of_token(token: int) -> str:
    return VARIANTS[(token - N_RESERVED) % len(VARIANTS)]


def transform(variant: str, content: Sequence[int]) -> tuple[tuple, tuple]:
    """Apply a variant to an EOS-free source; returns (target, lags)."""
    s = tuple(content)
    n = len(s)
    if n == 0:
        raise ContractError("empty source")
    if variant == "copy":
        return s, tuple(range(1, n + 1))
    if variant == "swap2":
        if n % 2:
            raise ContractError(f"swap2 needs an even length, got {n}")
        tgt, lags = [], []
        for m in range(0, n, 2):
            tgt += [s[m + 1], s[m]]
            lags += [m + 2, m + 2]
        return tuple(tgt), tuple(lags)
    if variant == "rotate1":
        return (s[-1],) + s[:-1], (n,) + tuple(range(1, n))
    raise ContractError(f"unknown variant {variant!r}")


def derive_target(variant: str, source: Sequence[int]) -> tuple[tuple, tuple]:
    """Target and dependency lags for a source that may end in EOS.

    The target EOS depends on the whole source, and so does the head of a
    rotate1 target (the last content word is only known once the end is seen).
    """
    source = tuple(source)
    content = strip_eos(source)
    target, lags = transform(variant, content)
    if len(content) == len(source):
        return target, lags
    if variant == "rotate1":
        lags = (len(source),) + lags[1:]
    return target + (EOS,), lags + (len(source),)


def gen_synthetic(spec: SyntheticLanguageSpec, n: int, start_id: int = 0) -> list[SentencePair]:
    """Generate ``n`` pairs; a pure function of ``(spec, n)``."""
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    if spec.variant == "mix":
        w = np.asarray(spec.weights, dtype=float)
        probs = w / w.sum()
        bands = {v: band_tokens(spec.vocab_size, v) for v in VARIANTS}
    else:
        bands = {spec.variant: band_tokens(spec.vocab_size, None)}
    pairs = []
    for k in range(n):
        if spec.variant == "mix":
            variant = VARIANTS[int(rng.choice(len(VARIANTS), p=probs))]
        else:
            variant = spec.variant
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        if variant == "swap2" and length % 2:
            length = length + 1 if length + 1 <= spec.max_len else length - 1
        length = max(length, 2 if variant == "swap2" else 1)
        content = tuple(int(t) for t in rng.choice(bands[variant], size=length))
        source = content + ((EOS,) if spec.append_eos else ())
        target, lags = derive_target(variant, source)
        pairs.append(SentencePair(start_id + k, source, target, lags, variant))
    return pairs


def effective_lags(lags: Sequence[int]) -> list[int]:
    """Running maximum of lags: the minimal anticipation-free read count per write."""
    out, cur = [], 0
    for d in lags:
        cur = max(cur, d)
        out.append(cur)
    return out


def minimal_actions(lags: Sequence[int]) -> str:
    """The lowest-latency action string that never writes before its lag is read."""
    out, read = [], 0
    for need in effective_lags(lags):
        while read < max(need, 1):
            out.append(READ)
            read += 1
        out.append(WRITE)
    return "".join(out)
