"""Experiment driver: policy sweeps, latency-quality curves and the end-to-end pipeline."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import platform
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import WaitKConfig, WiwWidConfig, test_time_wait_k_decode, wiw_wid_decode
from .corpus import (SentencePair, SyntheticLanguageSpec, Vocab, gen_synthetic, load_parallel,
                     strip_eos, write_actions, write_parallel, write_sentences)
from .errors import ConfigError, ContractError, RWPolicyError, StageError
from .metrics import corpus_bleu, latency_report
from .oracle import OracleConfig, generate_corpus, record_rows
from .policy import DecodeConfig, PolicyParams, TrainConfig, Trajectory, decode, train
from .translator import Predictor, load_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_RHOS = (0.65, 0.6, 0.55, 0.5, 0.45, 0.4)
CSV_COLUMNS = ("label", "param", "al", "ap", "cw", "bleu", "n")


@dataclass(frozen=True)
class CurvePoint:
    label: str
    param: str
    al: float
    ap: float
    cw: float
    bleu: float
    n: int

    def row(self) -> list[str]:
        return [self.label, self.param, repr(self.al), repr(self.ap), repr(self.cw),
                repr(self.bleu), str(self.n)]


@dataclass(frozen=True)
class PolicyRun:
    """One point of a curve: the trained policy at a threshold, or a baseline."""

    label: str      # "sl", "wait-k", "wiw" or "wid"
    value: object   # rho, k, or (s0, delta)
    # sl only: READ iff the READ logit is larger, instead of thresholding
    greedy: bool = False

    @property
    def param(self) -> str:
        if self.greedy:
            return "greedy"
        if isinstance(self.value, tuple):
            return ":".join(str(v) for v in self.value)
        return str(self.value)

    @property
    def slug(self) -> str:
        return f"{self.label}_{self.param.replace(':', '-')}"


def sl_runs(rhos: Sequence[float]) -> list[PolicyRun]:
    return [PolicyRun("sl", float(r)) for r in rhos]


def baseline_runs(wait_k: Sequence[int] = (), wiw: Sequence = (), wid: Sequence = ()) -> list[PolicyRun]:
    runs = [PolicyRun("wait-k", int(k)) for k in wait_k]
    runs += [PolicyRun("wiw", (int(s0), int(d))) for s0, d in wiw]
    runs += [PolicyRun("wid", (int(s0), int(d))) for s0, d in wid]
    return runs


def decode_one(run: PolicyRun, source, model: Predictor, params: PolicyParams | None = None,
               max_len: int | None = None, pair_id: int | None = None) -> Trajectory:
    if run.label == "sl":
        if params is None:
            raise ContractError("a trained policy is needed for 'sl' runs")
        return decode(params, source, model, DecodeConfig(run.value, max_len, run.greedy), pair_id)
    if run.label == "wait-k":
        k = WaitKConfig(run.value).k
        return test_time_wait_k_decode(k, source, model, max_len, pair_id)
    if run.label in ("wiw", "wid"):
        s0, delta = run.value
        return wiw_wid_decode(WiwWidConfig(s0, delta, run.label), source, model, max_len, pair_id)
    raise ContractError(f"unknown policy {run.label!r}")


def _decode_shard(args):
    run, items, model, params, max_len = args
    return [decode_one(run, src, model, params, max_len, pid) for pid, src in items]


def run_policy(run: PolicyRun, sources: Sequence[Sequence[int]], model: Predictor,
               params: PolicyParams | None = None, max_len: int | None = None,
               workers: int = 1, pair_ids: Sequence[int] | None = None) -> list[Trajectory]:
    """Decode every source; results keep the input order for any worker count.

    ``pair_ids`` default to the source positions.
    """
    if pair_ids is None:
        pair_ids = range(len(sources))
    items = [(pid, tuple(src)) for pid, src in zip(pair_ids, sources)]
    if workers <= 1 or len(items) < 2:
        return _decode_shard((run, items, model, params, max_len))
    n_shards = min(workers * 4, len(items))
    bounds = [len(items) * k // n_shards for k in range(n_shards + 1)]
    shards = [(run, items[a:b], model, params, max_len) for a, b in zip(bounds, bounds[1:])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [t for shard in pool.map(_decode_shard, shards) for t in shard]


def score(trajectories: Sequence[Trajectory], pairs: Sequence[SentencePair]) -> dict:
    """Mean AL/AP/CW and corpus BLEU against the EOS-free targets."""
    if len(trajectories) != len(pairs):
        raise ContractError("one trajectory per pair expected")
    if not pairs:
        raise ContractError("nothing to score")
    for t, p in zip(trajectories, pairs):
        if t.error:
            raise ContractError(f"pair {p.pair_id}: {t.error}")
    reports = [latency_report(t.actions, len(p.source)) for t, p in zip(trajectories, pairs)]
    bleu = corpus_bleu([t.hypothesis for t in trajectories], [strip_eos(p.target) for p in pairs])
    return {
        "bleu": bleu.bleu,
        "al": math.fsum(r.al for r in reports) / len(reports),
        "ap": math.fsum(r.ap for r in reports) / len(reports),
        "cw": math.fsum(r.cw for r in reports) / len(reports),
        "n": len(reports),
    }


def sweep_points(runs: Sequence[PolicyRun], pairs: Sequence[SentencePair], model: Predictor,
                 params: PolicyParams | None = None, max_len: int | None = None,
                 workers: int = 1) -> list[tuple[CurvePoint, list[Trajectory]]]:
    out = []
    for run in runs:
        trajs = run_policy(run, [p.source for p in pairs], model, params, max_len, workers,
                           [p.pair_id for p in pairs])
        s = score(trajs, pairs)
        point = CurvePoint(run.label, run.param, s["al"], s["ap"], s["cw"], s["bleu"], s["n"])
        log.info("%s %s: AL %.3f BLEU %.2f", run.label, run.param, point.al, point.bleu)
        out.append((point, trajs))
    return out


def write_curves(points: Sequence[CurvePoint], path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in points:
            w.writerow(p.row())


def read_curves(path) -> list[CurvePoint]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return [CurvePoint(r["label"], r["param"], float(r["al"]), float(r["ap"]), float(r["cw"]),
                       float(r["bleu"]), int(r["n"])) for r in rows]


def write_trajectories(trajs: Sequence[Trajectory], pair_ids: Sequence[int], vocab: Vocab,
                       hyp_path, actions_path):
    """Hypothesis file plus action TSV in the format ``eval`` reads."""
    write_sentences(hyp_path, (t.hypothesis for t in trajs), vocab)
    write_actions(actions_path, [(pid, t.actions) for t, pid in zip(trajs, pair_ids)])


# ---------------------------------------------------------------------------
# sweeps over files


@dataclass(frozen=True)
class SweepSpec:
    src: str
    tgt: str
    model: str
    policy: str | None = None
    rhos: tuple = DEFAULT_RHOS
    baselines: tuple = ()
    vocab: str | None = None
    seed: int = 0
    max_len: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.policy is not None and not self.rhos:
            raise ConfigError("rho grid is empty")
        if any(not 0.0 <= r <= 1.0 for r in self.rhos):
            raise ConfigError("rho values must lie in [0, 1]")
        if self.policy is None and not self.baselines:
            raise ConfigError("nothing to sweep: give a policy or baselines")

    def runs(self) -> list[PolicyRun]:
        runs = sl_runs(self.rhos) if self.policy is not None else []
        return runs + list(self.baselines)


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"{p}: no such file")


def resolve_vocab(path: str | None, model: Predictor) -> Vocab:
    if path is not None:
        return Vocab.load(path)
    return Vocab.synthetic(model.vocab_size)


def run_sweep(spec: SweepSpec, out_csv=None, figure=None) -> list[CurvePoint]:
    """Score every run of ``spec`` on one corpus; optionally write the CSV and a figure.

    All inputs are checked before any decoding starts.
    """
    _require_files(spec.src, spec.tgt, spec.policy, spec.vocab)
    try:
        model = load_model(spec.model)
        params = PolicyParams.load(spec.policy) if spec.policy else None
        vocab = resolve_vocab(spec.vocab, model)
        pairs = load_parallel(spec.src, spec.tgt, vocab)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    points = [pt for pt, _ in sweep_points(spec.runs(), pairs, model, params, spec.max_len, spec.workers)]
    if out_csv is not None:
        write_curves(points, out_csv)
    if figure is not None:
        from .plotting import plot_curves
        plot_curves(points, figure)
    return points


# ---------------------------------------------------------------------------
# pipeline


_SCHEMA = {
    "": {"seed": int},
    "data": {"language": str, "vocab_size": int, "train_pairs": int, "dev_pairs": int,
             "min_len": int, "max_len": int, "weights": list, "dev_weights": list,
             "seed": int, "dev_seed": int,
             "train_src": str, "train_tgt": str, "dev_src": str, "dev_tgt": str, "vocab": str},
    "model": {"spec": str},
    "oracle": {"rank": int, "al_max": (float, int, str), "workers": int},
    "train": {"epochs": int, "lr": float, "batch_size": int, "hidden": int, "fc": int,
              "heldout": float, "max_examples": int, "seed": int},
    "eval": {"rhos": list, "wait_k": list, "wiw": list, "wid": list, "max_len": int, "workers": int},
}

_FILE_KEYS = ("train_src", "train_tgt", "dev_src", "dev_tgt")


@dataclass
class PipelineConfig:
    seed: int = 0
    data: dict = field(default_factory=dict)
    model: str = "toy:mix"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    oracle_workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    max_examples: int = 2000
    runs: list = field(default_factory=list)
    eval_max_len: int | None = None
    eval_workers: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def generated(self) -> bool:
        return "train_src" not in self.data


def _check_types(table, values):
    schema = _SCHEMA[table]
    for key, value in values.items():
        if key in _SCHEMA and table == "":
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{table or 'top level'}]")
        kind = schema[key]
        if isinstance(value, bool) or not isinstance(value, kind):
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                continue
            raise ConfigError(f"[{table or 'top level'}] {key}: wrong type {type(value).__name__}")


def parse_config(raw: dict, base_dir: str = ".") -> PipelineConfig:
    """Validate a pipeline config mapping (as parsed from TOML) and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table")
    _check_types("", raw)
    for table in raw:
        if table in _SCHEMA and table:
            if not isinstance(raw[table], dict):
                raise ConfigError(f"[{table}] must be a table")
            _check_types(table, raw[table])
    seed = raw.get("seed", 0)
    data = dict(raw.get("data", {}))
    given = [k for k in _FILE_KEYS if k in data]
    if given and len(given) != len(_FILE_KEYS):
        raise ConfigError(f"corpus files need all of {', '.join(_FILE_KEYS)}")
    if given:
        for k in _FILE_KEYS + ("vocab",):
            if k in data:
                data[k] = os.path.join(base_dir, data[k])
    else:
        data.setdefault("language", "mix")
        data.setdefault("vocab_size", 32)
        data.setdefault("train_pairs", 5000)
        data.setdefault("dev_pairs", 500)
        data.setdefault("min_len", 4)
        data.setdefault("max_len", 12)
        data.setdefault("weights", [1.0, 1.0, 1.0])
        data.setdefault("dev_weights", data["weights"])
        data.setdefault("seed", seed)
        data.setdefault("dev_seed", data["seed"] + 1)
        try:
            for weights in ("weights", "dev_weights"):
                SyntheticLanguageSpec(data["language"], data["vocab_size"], data["min_len"],
                                      data["max_len"], weights=tuple(float(w) for w in data[weights]))
        except (ContractError, TypeError, ValueError) as exc:
            raise ConfigError(f"[data] {exc}") from exc
        if data["train_pairs"] < 1 or data["dev_pairs"] < 1:
            raise ConfigError("[data] pair counts must be positive")

    model = raw.get("model", {}).get("spec", "toy:mix")
    o = raw.get("oracle", {})
    al_max = o.get("al_max", 3.0)
    if isinstance(al_max, str):
        if al_max.lower() not in ("inf", "infinity"):
            raise ConfigError(f"[oracle] al_max: expected a number or 'inf', got {al_max!r}")
        al_max = math.inf
    try:
        oracle = OracleConfig(o.get("rank", 50), float(al_max))
    except ContractError as exc:
        raise ConfigError(f"[oracle] {exc}") from exc

    t = raw.get("train", {})
    tcfg = TrainConfig(**{k: t[k] for k in ("epochs", "lr", "batch_size", "hidden", "fc", "heldout") if k in t},
                       seed=t.get("seed", seed))
    if tcfg.batch_size < 1 or tcfg.hidden < 1 or tcfg.fc < 1 or not 0 <= tcfg.heldout < 1:
        raise ConfigError("[train] invalid sizes or held-out fraction")

    e = raw.get("eval", {})
    rhos = e.get("rhos", list(DEFAULT_RHOS))
    try:
        rhos = [float(r) for r in rhos]
        runs = sl_runs(rhos) + baseline_runs(e.get("wait_k", [1, 2, 3, 4]), e.get("wiw", []),
                                             e.get("wid", []))
        for run in runs:
            if run.label == "wait-k":
                WaitKConfig(run.value)
            elif run.label in ("wiw", "wid"):
                WiwWidConfig(*run.value, run.label)
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(f"[eval] {exc}") from exc
    if not rhos or any(not 0 <= r <= 1 for r in rhos):
        raise ConfigError("[eval] rhos must be a nonempty list within [0, 1]")

    return PipelineConfig(seed=seed, data=data, model=model, oracle=oracle,
                          oracle_workers=o.get("workers", 1), train=tcfg,
                          max_examples=t.get("max_examples", 2000), runs=runs,
                          eval_max_len=e.get("max_len") or None, eval_workers=e.get("workers", 1),
                          raw=raw)


def load_config(path) -> tuple[PipelineConfig, bytes]:
    if not os.path.exists(path):
        raise ConfigError(f"{path}: no such file")
    with open(path, "rb") as f:
        blob = f.read()
    try:
        raw = tomllib.loads(blob.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, os.path.dirname(os.path.abspath(path))), blob


class _Stages:
    """Runs named stages, timing them and labelling failures."""

    def __init__(self, manifest: dict, manifest_path: str):
        self.manifest = manifest
        self.path = manifest_path

    def run(self, name, fn):
        t0 = time.perf_counter()
        log.info("stage %s", name)
        try:
            result = fn()
        except (RWPolicyError, OSError, ValueError) as exc:
            self.manifest["status"] = "failed"
            self.manifest["failed_stage"] = name
            self.manifest["error"] = str(exc)
            self.save()
            raise StageError(name, exc) from exc
        self.manifest["stages"][name] = {"seconds": round(time.perf_counter() - t0, 3)}
        self.save()
        return result

    def save(self):
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self.manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def run_pipeline(config_path, out_dir, force: bool = False) -> dict:
    """data -> oracle -> train -> decode -> report, all written under ``out_dir``.

    Returns the manifest. A failing stage raises ``StageError``; files from
    earlier stages stay in place and the manifest records the failure.
    """
    cfg, blob = load_config(config_path)
    try:
        model = load_model(cfg.model)
    except ContractError as exc:
        raise ConfigError(f"[model] {exc}") from exc
    if os.path.exists(out_dir) and os.listdir(out_dir) and not force:
        raise ConfigError(f"{out_dir} exists and is not empty (use --force to overwrite)")
    for sub in ("data", "hyp", "actions"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    shutil.copyfile(config_path, os.path.join(out_dir, "config.toml"))

    def path(*parts):
        return os.path.join(out_dir, *parts)

    manifest = {
        "toolkit": "rwpolicy",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": os.path.abspath(config_path),
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "model": cfg.model,
        "seeds": {"data": cfg.data.get("seed"), "dev": cfg.data.get("dev_seed"), "train": cfg.train.seed},
        "stages": {},
        "status": "running",
    }
    stages = _Stages(manifest, path("manifest.json"))
    stages.save()

    def prepare():
        d = cfg.data
        if cfg.generated:
            vocab = Vocab.synthetic(d["vocab_size"])
            spec = SyntheticLanguageSpec(d["language"], d["vocab_size"], d["min_len"], d["max_len"],
                                         d["seed"], tuple(d["weights"]))
            dev_spec = SyntheticLanguageSpec(d["language"], d["vocab_size"], d["min_len"], d["max_len"],
                                             d["dev_seed"], tuple(d["dev_weights"]))
            train_pairs = gen_synthetic(spec, d["train_pairs"])
            dev_pairs = gen_synthetic(dev_spec, d["dev_pairs"])
        else:
            vocab = resolve_vocab(d.get("vocab"), model)
            train_pairs = load_parallel(d["train_src"], d["train_tgt"], vocab)
            dev_pairs = load_parallel(d["dev_src"], d["dev_tgt"], vocab)
        vocab.save(path("data", "vocab.txt"))
        write_parallel(path("data", "train.src"), path("data", "train.tgt"), train_pairs, vocab)
        write_parallel(path("data", "dev.src"), path("data", "dev.tgt"), dev_pairs, vocab)
        return vocab, train_pairs, dev_pairs

    vocab, train_pairs, dev_pairs = stages.run("data", prepare)

    def oracle_stage():
        records, stats = generate_corpus(train_pairs, cfg.oracle, model, cfg.oracle_workers)
        write_actions(path("seqs.tsv"), record_rows(records))
        _json_dump(stats, path("stats.json"))
        return records, stats

    records, stats = stages.run("oracle", oracle_stage)
    manifest["oracle"] = stats

    def train_stage():
        by_id = {p.pair_id: p for p in train_pairs}
        examples = [(by_id[r.pair_id], r.actions) for r in records if r.kept]
        if cfg.max_examples:
            examples = examples[:cfg.max_examples]
        if not examples:
            raise ContractError("the oracle kept no sequences")
        result = train(examples, model, cfg.train)
        result.params.save(path("policy.bin"))
        _json_dump(result.history, path("history.json"))
        return result

    result = stages.run("train", train_stage)
    if result.history:
        manifest["final_epoch"] = result.history[-1]

    def decode_stage():
        out = sweep_points(cfg.runs, dev_pairs, model, result.params, cfg.eval_max_len, cfg.eval_workers)
        for run, (_, trajs) in zip(cfg.runs, out):
            write_trajectories(trajs, [p.pair_id for p in dev_pairs], vocab, path("hyp", run.slug + ".txt"),
                               path("actions", run.slug + ".tsv"))
        return [pt for pt, _ in out]

    points = stages.run("decode", decode_stage)

    def report():
        from .plotting import plot_curves
        write_curves(points, path("curves.csv"))
        plot_curves(points, path("curves.png"), title=cfg.model)

    stages.run("report", report)
    manifest["status"] = "ok"
    manifest["outputs"] = sorted(
        os.path.relpath(os.path.join(root, f), out_dir)
        for root, _, files in os.walk(out_dir) for f in files if f != "manifest.json")
    stages.save()
    model.close()
    return manifest

