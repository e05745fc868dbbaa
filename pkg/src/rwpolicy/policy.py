"""Recurrent READ/WRITE policy: GRU -> dense+ReLU -> dense -> softmax over {READ, WRITE}.

Each step's input is the predictor's observation vector concatenated with a
one-hot of the previous action. Everything is float64 numpy with hand-written
backpropagation through time.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EOS, READ, WRITE, SentencePair
from .errors import ContractError, RWPolicyError, TrainingDiverged
from .translator import Predictor, Session

log = logging.getLogger(__name__)

ACTIONS = (READ, WRITE)
ACTION_INDEX = {READ: 0, WRITE: 1}
PARAM_NAMES = ("Wx", "Wh", "b", "W1", "b1", "W2", "b2")

_MAGIC = b"RWPOLICY"
_FORMAT_VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class PolicyParams:
    Wx: np.ndarray  # (d + 2, 3H) input weights for update, reset, candidate
    Wh: np.ndarray  # (H, 3H) recurrent weights, same order
    b: np.ndarray   # (3H,)
    W1: np.ndarray  # (H, F)
    b1: np.ndarray  # (F,)
    W2: np.ndarray  # (F, 2)
    b2: np.ndarray  # (2,)

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.Wx.shape[0] - 2

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]

    @property
    def fc(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, k = {}, 0
        for name, a in self.arrays().items():
            out[name] = vec[k:k + a.size].reshape(a.shape).copy()
            k += a.size
        return PolicyParams(**out)

    def check(self):
        H, F, D = self.hidden, self.fc, self.input_dim
        shapes = {"Wx": (D, 3 * H), "Wh": (H, 3 * H), "b": (3 * H,), "W1": (H, F),
                  "b1": (F,), "W2": (F, 2), "b2": (2,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ContractError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        return self

    @classmethod
    def init(cls, obs_dim: int, hidden: int = 64, fc: int = 16, seed: int = 0) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        D = obs_dim + 2
        k = 1.0 / math.sqrt(hidden)
        return cls(
            Wx=rng.uniform(-k, k, (D, 3 * hidden)),
            Wh=rng.uniform(-k, k, (hidden, 3 * hidden)),
            b=np.zeros(3 * hidden),
            W1=rng.uniform(-k, k, (hidden, fc)),
            b1=np.zeros(fc),
            W2=rng.uniform(-1 / math.sqrt(fc), 1 / math.sqrt(fc), (fc, 2)),
            b2=np.zeros(2),
        )

    @classmethod
    def zeros(cls, obs_dim: int, hidden: int, fc: int) -> "PolicyParams":
        D = obs_dim + 2
        return cls(np.zeros((D, 3 * hidden)), np.zeros((hidden, 3 * hidden)), np.zeros(3 * hidden),
                   np.zeros((hidden, fc)), np.zeros(fc), np.zeros((fc, 2)), np.zeros(2))

    # -- serialization: magic, version, header length, JSON header, raw little-endian float64

    def to_bytes(self) -> bytes:
        header = {
            "version": _FORMAT_VERSION,
            "dims": {"obs": self.obs_dim, "hidden": self.hidden, "fc": self.fc},
            "arrays": [[name, list(a.shape)] for name, a in self.arrays().items()],
        }
        head = json.dumps(header, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays().values())
        return _MAGIC + struct.pack("<II", _FORMAT_VERSION, len(head)) + head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PolicyParams":
        if data[:len(_MAGIC)] != _MAGIC:
            raise ContractError("not a policy parameter file")
        off = len(_MAGIC)
        version, n_head = struct.unpack_from("<II", data, off)
        if version != _FORMAT_VERSION:
            raise ContractError(f"unsupported policy file version {version}")
        off += 8
        header = json.loads(data[off:off + n_head])
        off += n_head
        arrays = {}
        for name, shape in header["arrays"]:
            n = int(np.prod(shape))
            arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
        if off != len(data):
            raise ContractError("trailing bytes in policy file")
        return cls(**arrays).check()

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PolicyParams":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


# ---------------------------------------------------------------------------
# forward / backward


def gru_step(p: PolicyParams, h, x):
    """One GRU step on a batch; returns the new state and a cache for backprop."""
    H = p.hidden
    a = x @ p.Wx + p.b
    hh = h @ p.Wh[:, :2 * H]
    z = _sigmoid(a[:, :H] + hh[:, :H])
    r = _sigmoid(a[:, H:2 * H] + hh[:, H:])
    rh = r * h
    n = np.tanh(a[:, 2 * H:] + rh @ p.Wh[:, 2 * H:])
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, rh, n)


def head(p: PolicyParams, h):
    u_pre = h @ p.W1 + p.b1
    u = np.maximum(u_pre, 0.0)
    logits = u @ p.W2 + p.b2
    return logits, (u_pre, u)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(steps):
    X = np.asarray(steps, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    return X


def policy_forward(params: PolicyParams, steps) -> np.ndarray:
    """Action distributions for a step sequence.

    ``steps`` is ``(T, d + 2)`` for one sequence or ``(T, B, d + 2)`` for a
    batch; the result has the same leading shape with a trailing axis of 2
    (READ, WRITE).
    """
    X = np.asarray(steps, dtype=np.float64)
    single = X.ndim == 2
    X = _as_batch(X)
    if X.shape[0] == 0:
        raise ContractError("empty step sequence")
    if X.shape[-1] != params.input_dim:
        raise ContractError(f"step width {X.shape[-1]} but policy expects {params.input_dim}")
    h = np.zeros((X.shape[1], params.hidden))
    out = np.empty(X.shape[:2] + (2,))
    for t in range(X.shape[0]):
        h, _ = gru_step(params, h, X[t])
        out[t] = softmax(head(params, h)[0])
    return out[:, 0] if single else out


def nll_loss_and_gradient(params: PolicyParams, X, y, mask=None) -> tuple[float, PolicyParams]:
    """Summed negative log-likelihood of gold actions and its gradient.

    ``X`` is ``(T, B, d + 2)`` (or ``(T, d + 2)``), ``y`` holds action indices
    (0 READ, 1 WRITE) of shape ``(T, B)``, ``mask`` marks real (non-padding)
    steps.
    """
    X = _as_batch(X)
    y = np.asarray(y).reshape(X.shape[:2])
    mask = np.ones(X.shape[:2]) if mask is None else np.asarray(mask, dtype=np.float64).reshape(X.shape[:2])
    if X.shape[-1] != params.input_dim:
        raise ContractError(f"step width {X.shape[-1]} but policy expects {params.input_dim}")
    T, B, _ = X.shape
    H = params.hidden
    h = np.zeros((B, H))
    caches, states, heads, probs = [], [], [], []
    loss = 0.0
    rows = np.arange(B)
    for t in range(T):
        h, cache = gru_step(params, h, X[t])
        logits, hc = head(params, h)
        pr = softmax(logits)
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        loss -= float((logp[rows, y[t]] * mask[t]).sum())
        caches.append(cache)
        states.append(h)
        heads.append(hc)
        probs.append(pr)

    g = PolicyParams.zeros(params.obs_dim, H, params.fc)
    Uzr, Un = params.Wh[:, :2 * H], params.Wh[:, 2 * H:]
    dh_next = np.zeros((B, H))
    for t in reversed(range(T)):
        x, h_prev, z, r, rh, n = caches[t]
        u_pre, u = heads[t]
        dlogits = probs[t].copy()
        dlogits[rows, y[t]] -= 1.0
        dlogits *= mask[t][:, None]
        g.W2 += u.T @ dlogits
        g.b2 += dlogits.sum(axis=0)
        du = (dlogits @ params.W2.T) * (u_pre > 0)
        g.W1 += states[t].T @ du
        g.b1 += du.sum(axis=0)
        dh = du @ params.W1.T + dh_next

        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        g.Wh[:, 2 * H:] += rh.T @ dan
        drh = dan @ Un.T
        dr = drh * h_prev
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dzr = np.concatenate([daz, dar], axis=1)
        g.Wh[:, :2 * H] += h_prev.T @ dzr
        dh_prev += dzr @ Uzr.T
        da = np.concatenate([daz, dar, dan], axis=1)
        g.Wx += x.T @ da
        g.b += da.sum(axis=0)
        dh_next = dh_prev
    return loss, g


# ---------------------------------------------------------------------------
# training


def step_input(features, prev_action: str) -> np.ndarray:
    onehot = [1.0, 0.0] if prev_action == READ else [0.0, 1.0]
    return np.concatenate([np.asarray(features, dtype=np.float64), onehot])


def replay(pair: SentencePair, actions: str, session: Session):
    """Teacher-forced observations for every decision after the initial READ.

    Returns ``(X, y)`` with ``X`` of shape ``(len(actions) - 1, d + 2)``.
    """
    n_read, n_written = 1, 0
    xs, ys = [], []
    for prev, act in zip(actions, actions[1:]):
        pred = session.predict(n_read, pair.target[:n_written])
        xs.append(step_input(pred.features, prev))
        ys.append(ACTION_INDEX[act])
        if act == READ:
            n_read += 1
        else:
            n_written += 1
    return np.array(xs), np.array(ys, dtype=np.int64)


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    hidden: int = 64
    fc: int = 16
    heldout: float = 0.1
    clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    params: PolicyParams
    history: list = field(default_factory=list)


def _pad(batch):
    T = max(len(y) for _, y in batch)
    D = batch[0][0].shape[1]
    X = np.zeros((T, len(batch), D))
    Y = np.zeros((T, len(batch)), dtype=np.int64)
    M = np.zeros((T, len(batch)))
    for b, (x, y) in enumerate(batch):
        X[:len(y), b] = x
        Y[:len(y), b] = y
        M[:len(y), b] = 1.0
    return X, Y, M


def evaluate(params: PolicyParams, data, batch_size: int = 256) -> tuple[float, float]:
    """Mean per-step NLL and argmax accuracy (ties resolve to WRITE)."""
    total_loss, correct, count = 0.0, 0, 0
    for k in range(0, len(data), batch_size):
        X, Y, M = _pad(data[k:k + batch_size])
        P = policy_forward(params, X)
        pred = np.where(P[..., 0] > P[..., 1], 0, 1)
        correct += int(((pred == Y) * M).sum())
        picked = np.take_along_axis(P, Y[..., None], axis=2)[..., 0]
        total_loss -= float((np.log(picked) * M).sum())
        count += int(M.sum())
    return total_loss / count, correct / count


def build_dataset(examples: Sequence[tuple[SentencePair, str]], model: Predictor):
    data = []
    for pair, actions in examples:
        data.append(replay(pair, actions, model.open(pair.source, pair.pair_id)))
    return [d for d in data if len(d[1])]


def train(examples: Sequence[tuple[SentencePair, str]], model: Predictor,
          config: TrainConfig = TrainConfig(), data=None) -> TrainResult:
    """Fit the policy to oracle action sequences by minimizing per-step NLL with Adam.

    ``examples`` pairs each sentence with its kept oracle sequence. A seeded
    fraction is held out for per-epoch accuracy. Raises ``TrainingDiverged``
    (carrying the last finite parameters) if the loss stops being finite.
    """
    if not examples and data is None:
        raise ContractError("no training examples")
    if data is None:
        data = build_dataset(examples, model)
    rng = np.random.default_rng(config.seed)
    params = PolicyParams.init(data[0][0].shape[1] - 2, config.hidden, config.fc, config.seed)
    result = TrainResult(params)
    if config.epochs <= 0:
        return result

    order = rng.permutation(len(data))
    n_held = int(round(config.heldout * len(data))) if len(data) > 1 else 0
    held = [data[i] for i in order[:n_held]]
    fit = [data[i] for i in order[n_held:]]

    names = PARAM_NAMES
    m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    t = 0
    for epoch in range(1, config.epochs + 1):
        last_good = params.copy()
        perm = rng.permutation(len(fit))
        epoch_loss, epoch_steps = 0.0, 0
        for k in range(0, len(fit), config.batch_size):
            X, Y, M = _pad([fit[i] for i in perm[k:k + config.batch_size]])
            loss, grad = nll_loss_and_gradient(params, X, Y, M)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, last_good)
            n_steps = M.sum()
            epoch_loss += loss
            epoch_steps += n_steps
            grads = {k2: g / n_steps for k2, g in grad.arrays().items()}
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if config.clip and norm > config.clip:
                grads = {k2: g * (config.clip / norm) for k2, g in grads.items()}
            t += 1
            for name in names:
                g = grads[name]
                m[name] = config.beta1 * m[name] + (1 - config.beta1) * g
                v[name] = config.beta2 * v[name] + (1 - config.beta2) * g * g
                mhat = m[name] / (1 - config.beta1 ** t)
                vhat = v[name] / (1 - config.beta2 ** t)
                getattr(params, name)[...] -= config.lr * mhat / (np.sqrt(vhat) + config.eps)
        if not all(np.all(np.isfinite(a)) for a in params.arrays().values()):
            raise TrainingDiverged(epoch, last_good)
        row = {"epoch": epoch, "train_loss": float(epoch_loss / max(epoch_steps, 1))}
        if held:
            row["heldout_loss"], row["heldout_accuracy"] = evaluate(params, held)
        result.history.append(row)
        log.info("epoch %d: %s", epoch, row)
    return result


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class DecodeConfig:
    rho: float = 0.5
    max_len: int | None = None
    # READ iff the READ logit beats the WRITE logit, instead of thresholding
    greedy: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError("rho must be in [0, 1]")


@dataclass
class Trajectory:
    actions: str
    tokens: tuple
    # P(READ) at each policy decision after the initial READ; empty for fixed schedules
    read_probs: tuple = ()
    error: str | None = None

    @property
    def hypothesis(self) -> tuple:
        if self.tokens and self.tokens[-1] == EOS:
            return self.tokens[:-1]
        return self.tokens


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 5


class PolicyRunner:
    """Incremental policy state for one sentence."""

    def __init__(self, params: PolicyParams):
        self.params = params
        self.h = np.zeros((1, params.hidden))

    def step(self, features, prev_action: str) -> np.ndarray:
        x = step_input(features, prev_action)[None, :]
        if x.shape[1] != self.params.input_dim:
            raise ContractError(f"observation width {x.shape[1] - 2}, policy expects {self.params.obs_dim}")
        self.h, _ = gru_step(self.params, self.h, x)
        return head(self.params, self.h)[0][0]


def decode(params: PolicyParams, source: Sequence[int], model: Predictor | Session,
           config: DecodeConfig = DecodeConfig(), pair_id: int | None = None) -> Trajectory:
    """Simultaneous greedy decoding; READ only when P(READ) > rho.

    One READ precedes the first decision, and WRITE is forced once the source
    is exhausted. Stops after emitting EOS or ``max_len`` tokens.
    """
    source = tuple(source)
    if not source:
        raise ContractError("empty source")
    if not isinstance(model, Session) and model.feature_dim != params.obs_dim:
        raise ContractError(f"policy expects {params.obs_dim} features, model gives {model.feature_dim}")
    session = model if isinstance(model, Session) else model.open(source, pair_id)
    max_len = config.max_len or default_max_len(len(source))
    runner = PolicyRunner(params)
    actions, tokens, probs = [READ], [], []
    n_read = 1
    try:
        while len(tokens) < max_len:
            pred = session.predict(n_read, tokens)
            logits = runner.step(pred.features, actions[-1])
            p_read = float(softmax(logits)[0])
            probs.append(p_read)
            if n_read == len(source):
                act = WRITE
            elif config.greedy:
                act = READ if logits[0] > logits[1] else WRITE
            else:
                act = READ if p_read > config.rho else WRITE
            actions.append(act)
            if act == READ:
                n_read += 1
            else:
                tokens.append(pred.top)
                if pred.top == EOS:
                    break
    except RWPolicyError as exc:
        return Trajectory("".join(actions), tuple(tokens), tuple(probs), str(exc))
    return Trajectory("".join(actions), tuple(tokens), tuple(probs))
