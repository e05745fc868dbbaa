"""Line-delimited JSON protocol for serving a predictor from another process.

Client -> server, one JSON object per line::

    {"op": "hello", "version": 1}
    {"op": "predict", "src": [ids], "tgt": [ids], "gold": id, "id": pair_id}

``gold`` and ``id`` are optional. Server replies::

    {"version": 1, "vocab_size": V, "feature_dim": d}
    {"topk": [[id, logp], ...], "features": [...], "gold_rank": r}

``topk`` is best first and may be truncated; ``gold_rank`` is present
whenever the request named a gold token. Failures are reported as
``{"error": message}``.
"""

from __future__ import annotations

import json
import os
import shlex
import socket
import socketserver
import subprocess
import sys
from typing import IO, Sequence

import numpy as np

from .errors import ContractError, ProtocolError, TransportError
from .translator import Prediction, Predictor, Session

PROTOCOL_VERSION = 1


def _require(msg, key, kind):
    if key not in msg:
        raise ProtocolError(f"response missing field {key!r}")
    value = msg[key]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ProtocolError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def parse_prediction(msg: dict, vocab_size: int, feature_dim: int,
                     gold: int | None = None) -> Prediction:
    """Validate a predict response against the handshake dimensions."""
    if not isinstance(msg, dict):
        raise ProtocolError("response is not a JSON object")
    if "error" in msg:
        raise ProtocolError(f"server error: {msg['error']}")
    topk = _require(msg, "topk", list)
    features = _require(msg, "features", list)
    if not topk:
        raise ProtocolError("empty topk")
    try:
        tokens = np.array([int(t) for t, _ in topk], dtype=np.int64)
        logp = np.array([float(lp) for _, lp in topk])
        feats = np.array([float(x) for x in features])
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed prediction: {exc}") from None
    if len(feats) != feature_dim:
        raise ProtocolError(f"expected {feature_dim} features, got {len(feats)}")
    if not np.all(np.isfinite(feats)):
        raise ProtocolError("non-finite feature")
    if np.any(np.diff(logp) > 1e-12):
        raise ProtocolError("topk log-probabilities are not sorted")
    if np.any((tokens < 0) | (tokens >= vocab_size)) or len(set(tokens.tolist())) != len(tokens):
        raise ProtocolError("topk token ids invalid or repeated")
    if len(tokens) == vocab_size and abs(np.exp(logp).sum() - 1.0) > 1e-6:
        raise ProtocolError("probabilities do not sum to one")
    gold_rank = None
    if gold is not None:
        if "gold_rank" in msg:
            gold_rank = _require(msg, "gold_rank", int)
            if not 1 <= gold_rank <= vocab_size:
                raise ProtocolError(f"gold_rank {gold_rank} out of range")
        elif gold not in tokens:
            raise ProtocolError("gold token outside topk and no gold_rank given")
    return Prediction(tokens, logp, feats, gold_rank)


class _Connection:
    def __init__(self, address: str):
        self.address = address
        self.proc = None
        self.sock = None
        try:
            if address.startswith("stdio:"):
                self.proc = subprocess.Popen(
                    shlex.split(address[len("stdio:"):]), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, text=True, bufsize=1)
                self.rfile, self.wfile = self.proc.stdout, self.proc.stdin
            else:
                host, _, port = address.rpartition(":")
                self.sock = socket.create_connection((host or "127.0.0.1", int(port)))
                self.rfile = self.sock.makefile("r", encoding="utf-8")
                self.wfile = self.sock.makefile("w", encoding="utf-8")
        except (OSError, ValueError) as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc

    def request(self, msg: dict) -> dict:
        try:
            self.wfile.write(json.dumps(msg) + "\n")
            self.wfile.flush()
            line = self.rfile.readline()
        except OSError as exc:
            raise TransportError(f"{self.address}: {exc}") from exc
        if not line:
            raise TransportError(f"{self.address}: connection closed")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"invalid JSON from server: {exc}") from None

    def close(self):
        for f in (self.wfile, self.rfile):
            try:
                f.close()
            except OSError:
                pass
        if self.sock is not None:
            self.sock.close()
        if self.proc is not None:
            self.proc.wait(timeout=10)


class AdapterPredictor(Predictor):
    """Client for an external model speaking the JSON line protocol.

    ``address`` is ``host:port`` for TCP or ``stdio:<command>`` to spawn a
    server process. The connection opens lazily, once per process, so the
    object can be shipped to worker processes.
    """

    def __init__(self, address: str):
        self.address = address
        self._conn = None
        self._pid = None
        self._dims = None

    def __getstate__(self):
        return {"address": self.address, "_dims": self._dims}

    def __setstate__(self, state):
        self.__init__(state["address"])
        self._dims = state["_dims"]

    @property
    def spec(self) -> str:
        return f"adapter:{self.address}"

    def _connection(self) -> _Connection:
        if self._conn is None or self._pid != os.getpid():
            self._conn = _Connection(self.address)
            self._pid = os.getpid()
            self._dims = self._hello(self._conn)
        return self._conn

    @staticmethod
    def _hello(conn) -> tuple[int, int]:
        msg = conn.request({"op": "hello", "version": PROTOCOL_VERSION})
        if not isinstance(msg, dict) or "error" in msg:
            raise ProtocolError(f"handshake rejected: {msg}")
        version = _require(msg, "version", int)
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version}")
        V = _require(msg, "vocab_size", int)
        d = _require(msg, "feature_dim", int)
        if V < 2 or d < 1:
            raise ProtocolError(f"bad dimensions vocab_size={V} feature_dim={d}")
        return V, d

    def handshake(self):
        self._connection()
        return self._dims

    @property
    def vocab_size(self):
        return self.handshake()[0]

    @property
    def feature_dim(self):
        return self.handshake()[1]

    def open(self, source, pair_id=None) -> "AdapterSession":
        return AdapterSession(self, tuple(int(t) for t in source), pair_id)

    def request(self, msg):
        return self._connection().request(msg)

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None


class AdapterSession(Session):
    def __init__(self, model: AdapterPredictor, source, pair_id):
        self.model = model
        self.source = source
        self.pair_id = pair_id

    def predict(self, n_read, tgt_prefix, gold=None) -> Prediction:
        self._check_prefix(n_read)
        msg = {"op": "predict", "src": list(self.source[:n_read]), "tgt": [int(t) for t in tgt_prefix]}
        if gold is not None:
            msg["gold"] = int(gold)
        if self.pair_id is not None:
            msg["id"] = int(self.pair_id)
        V, d = self.model.handshake()
        return parse_prediction(self.model.request(msg), V, d, gold)


# ---------------------------------------------------------------------------
# server side


class PredictorServer:
    """Answers protocol requests from a local predictor.

    Requests only carry source prefixes. When ``sources`` is given, a request's
    ``id`` selects the full sentence so that predictors needing the whole pair
    (the toy model) can be served; otherwise the prefix itself is opened.
    """

    def __init__(self, predictor: Predictor, sources: Sequence[Sequence[int]] | None = None,
                 topk: int | None = None):
        self.predictor = predictor
        self.sources = [tuple(s) for s in sources] if sources is not None else None
        self.topk = topk
        self._sessions = {}

    def _session(self, src, pair_id):
        full = src
        if self.sources is not None and pair_id is not None and 0 <= pair_id < len(self.sources):
            cand = self.sources[pair_id]
            if cand[:len(src)] == src:
                full = cand
        sess = self._sessions.get(full)
        if sess is None:
            if len(self._sessions) > 256:
                self._sessions.clear()
            sess = self._sessions[full] = self.predictor.open(full, pair_id)
        return sess

    def handle(self, msg) -> dict:
        if not isinstance(msg, dict):
            return {"error": "request is not a JSON object"}
        op = msg.get("op")
        if op == "hello":
            if msg.get("version") != PROTOCOL_VERSION:
                return {"error": f"unsupported version {msg.get('version')}"}
            V, d = self.predictor.handshake()
            return {"version": PROTOCOL_VERSION, "vocab_size": V, "feature_dim": d}
        if op == "predict":
            try:
                src = tuple(int(t) for t in msg["src"])
                tgt = [int(t) for t in msg.get("tgt", [])]
                gold = msg.get("gold")
                sess = self._session(src, msg.get("id"))
                pred = sess.predict(len(src), tgt, gold=gold)
            except (KeyError, TypeError, ValueError, ContractError) as exc:
                return {"error": str(exc)}
            k = len(pred.tokens) if self.topk is None else self.topk
            out = {
                "topk": [[int(t), float(lp)] for t, lp in zip(pred.tokens[:k], pred.logprobs[:k])],
                "features": [float(x) for x in pred.features],
            }
            if gold is not None:
                out["gold_rank"] = pred.rank_of(int(gold))
            return out
        return {"error": f"unknown op {op!r}"}

    def serve_stream(self, rfile: IO[str], wfile: IO[str]):
        for line in rfile:
            if not line.strip():
                continue
            try:
                reply = self.handle(json.loads(line))
            except json.JSONDecodeError as exc:
                reply = {"error": f"invalid JSON: {exc}"}
            wfile.write(json.dumps(reply) + "\n")
            wfile.flush()

    def serve_stdio(self):
        self.serve_stream(sys.stdin, sys.stdout)

    def tcp_server(self, host="127.0.0.1", port=0) -> socketserver.ThreadingTCPServer:
        server = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                rfile = (line.decode("utf-8") for line in self.rfile)
                wfile = _TextWriter(self.wfile)
                server.serve_stream(rfile, wfile)

        tcp = socketserver.ThreadingTCPServer((host, port), Handler)
        tcp.daemon_threads = True
        return tcp


class _TextWriter:
    def __init__(self, raw):
        self.raw = raw

    def write(self, s):
        self.raw.write(s.encode("utf-8"))

    def flush(self):
        self.raw.flush()

