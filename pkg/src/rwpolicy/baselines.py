"""Fixed and heuristic policies: wait-k schedules, test-time wait-k, Wait-If-Worse / Wait-If-Diff."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from .corpus import EOS, READ, WRITE
from .errors import ContractError, RWPolicyError
from .policy import Trajectory, default_max_len
from .translator import Predictor, Session


@dataclass(frozen=True)
class WaitKConfig:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ContractError("k must be >= 1")

    @property
    def label(self) -> str:
        return f"wait-{self.k}"


@dataclass(frozen=True)
class WiwWidConfig:
    s0: int
    delta: int
    mode: str = "wid"

    def __post_init__(self):
        if self.s0 < 1 or self.delta < 1:
            raise ContractError("s0 and delta must be >= 1")
        if self.mode not in ("wiw", "wid"):
            raise ContractError(f"mode must be wiw or wid, got {self.mode!r}")

    @property
    def label(self) -> str:
        return f"{self.mode}-s{self.s0}-d{self.delta}"


def wait_k_schedule(k: int, src_len: int) -> Iterator[str]:
    """Endless action stream: read k, then alternate WRITE/READ; only WRITE once the source is exhausted."""
    if k < 1:
        raise ContractError("k must be >= 1")
    if src_len < 1:
        raise ContractError("empty source")
    read = 0
    written = 0
    while True:
        if read < min(k + written, src_len):
            read += 1
            yield READ
        else:
            written += 1
            yield WRITE


def wait_k_actions(k: int, src_len: int, n_writes: int) -> str:
    out = []
    for a in wait_k_schedule(k, src_len):
        if a == WRITE and n_writes == 0:
            break
        out.append(a)
        if a == WRITE:
            n_writes -= 1
    return "".join(out)


def _session(model, source, pair_id):
    return model if isinstance(model, Session) else model.open(source, pair_id)


def test_time_wait_k_decode(k: int, source: Sequence[int], model: Predictor | Session,
                            max_len: int | None = None, pair_id: int | None = None) -> Trajectory:
    """Greedy rank-1 emission from an unchanged model under the wait-k schedule."""
    source = tuple(source)
    session = _session(model, source, pair_id)
    max_len = max_len or default_max_len(len(source))
    actions, tokens = [], []
    n_read = 0
    try:
        for act in wait_k_schedule(k, len(source)):
            if len(tokens) >= max_len:
                break
            if act == READ:
                n_read += 1
                actions.append(act)
                continue
            tok = session.predict(n_read, tokens).top
            actions.append(act)
            tokens.append(tok)
            if tok == EOS:
                break
    except RWPolicyError as exc:
        return Trajectory("".join(actions), tuple(tokens), error=str(exc))
    return Trajectory("".join(actions), tuple(tokens))


test_time_wait_k_decode.__test__ = False


def wiw_wid_decode(config: WiwWidConfig, source: Sequence[int], model: Predictor | Session,
                   max_len: int | None = None, pair_id: int | None = None) -> Trajectory:
    """Cho & Esipova's greedy heuristics.

    After ``s0`` reads, compare the prediction at the current read count with
    the one after ``delta`` more reads (truncated at the source end). WIW reads
    when the current best word's probability drops, WID when the best word
    changes; the lookahead reads are then committed and the test repeats.
    Otherwise the current best word is written.
    """
    source = tuple(source)
    session = _session(model, source, pair_id)
    max_len = max_len or default_max_len(len(source))
    n_read = min(config.s0, len(source))
    actions, tokens = [READ] * n_read, []
    try:
        while len(tokens) < max_len:
            now = session.predict(n_read, tokens)
            if n_read < len(source):
                ahead_n = min(n_read + config.delta, len(source))
                ahead = session.predict(ahead_n, tokens)
                if config.mode == "wiw":
                    wait = ahead.prob_of(now.top) < now.top_prob
                else:
                    wait = ahead.top != now.top
                if wait:
                    actions += [READ] * (ahead_n - n_read)
                    n_read = ahead_n
                    continue
            actions.append(WRITE)
            tokens.append(now.top)
            if now.top == EOS:
                break
    except RWPolicyError as exc:
        return Trajectory("".join(actions), tuple(tokens), error=str(exc))
    return Trajectory("".join(actions), tuple(tokens))
