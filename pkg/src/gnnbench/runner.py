"""Experiment configuration, seeded training runs, and the resumable scheduler."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from . import __version__
from . import tensor as T
from .graph import (NodeTable, NormalizedAdjacency, largest_connected_component, load_edge_csv,
                    load_node_csv, normalized_adjacency, stratified_split)
from .metrics import CSV_HEADER, EpochMetrics, RunSeries, epoch_metrics
from .models import ARCHITECTURES, ModelSpec, forward, init_params
from .optim import AdamState, adam_step
from .rng import derive_seed, stream
from .tensor import Tensor

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    edge_csv: str
    node_csv: str
    models: tuple[str, ...]
    output_dir: str
    epochs: int = 300
    replicates: int = 10
    base_seed: int = 0
    train_fraction: float = 0.8
    hidden_dim: int = 16
    dropout: float = 0.2
    lr: float = 0.01
    weight_decay: float = 1e-4
    gcn2_alpha: float = 0.1
    gcn2_beta: float = 1.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        return d


_REQUIRED = ("name", "edge_csv", "node_csv", "models", "output_dir")
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _check_type(key, value):
    kind = _TYPES[key]
    if kind == "str":
        ok = isinstance(value, str)
    elif kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, list) and all(isinstance(m, str) for m in value)
    if not ok:
        raise ConfigError(f"config.{key}: expected {kind}, got {type(value).__name__} {value!r}")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a flat mapping; relative paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise ConfigError(f"config.{unknown[0]}: unknown key (valid keys: {', '.join(_TYPES)})")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"config.{missing[0]}: required key missing")
    for key, value in raw.items():
        _check_type(key, value)
    values = dict(raw)
    for k, m in enumerate(values["models"]):
        if m not in ARCHITECTURES:
            raise ConfigError(f"config.models[{k}]: unknown architecture {m!r}; "
                              f"valid: {', '.join(ARCHITECTURES)}")
    if not values["models"]:
        raise ConfigError("config.models: at least one model is required")
    if len(set(values["models"])) != len(values["models"]):
        raise ConfigError("config.models: duplicate model names")
    values["models"] = tuple(values["models"])
    for key in ("edge_csv", "node_csv", "output_dir"):
        p = Path(values[key])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        values[key] = str(p.resolve()) if base_dir is not None else str(p)
    for key in ("lr", "weight_decay", "dropout", "train_fraction", "gcn2_alpha", "gcn2_beta"):
        if key in values:
            values[key] = float(values[key])
    cfg = ExperimentConfig(**values)
    if cfg.epochs < 1:
        raise ConfigError("config.epochs: must be >= 1")
    if cfg.replicates < 1:
        raise ConfigError("config.replicates: must be >= 1")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("config.train_fraction: must lie in (0, 1)")
    if not 0 <= cfg.dropout < 1:
        raise ConfigError("config.dropout: must lie in [0, 1)")
    if cfg.hidden_dim < 1:
        raise ConfigError("config.hidden_dim: must be >= 1")
    if cfg.base_seed < 0:
        raise ConfigError("config.base_seed: must be unsigned")
    if cfg.lr <= 0:
        raise ConfigError("config.lr: must be positive")
    if cfg.weight_decay < 0:
        raise ConfigError("config.weight_decay: must be >= 0")
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(raw, path.parent)


def run_seed(base_seed: int, model: str, replicate: int) -> int:
    return derive_seed(base_seed, model, replicate)


def model_spec(cfg: ExperimentConfig, model: str, in_dim: int) -> ModelSpec:
    return ModelSpec(model, in_dim, hidden_dim=cfg.hidden_dim, dropout=cfg.dropout,
                     alpha=cfg.gcn2_alpha, beta=cfg.gcn2_beta)


# ---------------------------------------------------------------- one run

def train_one(spec: ModelSpec, adj: NormalizedAdjacency, table: NodeTable, seed: int,
              epochs: int, lr: float = 0.01, weight_decay: float = 1e-4,
              train_fraction: float = 0.8) -> RunSeries:
    """Train one seeded replicate and evaluate on the held-out nodes every epoch."""
    split = stratified_split(table, train_fraction, seed)
    labels = table.labels
    n_pos = int(labels[split.train].sum())
    n_neg = int(split.train.sum()) - n_pos
    pos_weight = n_neg / n_pos
    x = Tensor(table.features)
    params = init_params(spec, seed)
    plist = list(params.values())
    state = AdamState(lr=lr, weight_decay=weight_decay)
    drop_rng = stream(seed, "dropout")
    series = RunSeries(spec.architecture, seed)
    for epoch in range(1, epochs + 1):
        with T.Tape() as tape:
            logits = forward(spec, params, adj, x, "train", drop_rng)
            loss = T.weighted_bce_with_logits(logits, labels, pos_weight, split.train)
        T.backward(tape, loss)
        adam_step(plist, state)
        logits = forward(spec, params, adj, x, "eval")
        train_loss = T.weighted_bce_with_logits(logits, labels, pos_weight, split.train).item()
        test_loss = T.weighted_bce_with_logits(logits, labels, pos_weight, split.test).item()
        scores = expit(logits.value[:, 0])
        series.epochs.append(epoch_metrics(epoch, train_loss, scores, labels, split.test, test_loss))
    return series


# ---------------------------------------------------------------- persistence

def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def series_to_csv(series: RunSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for m in series.epochs:
        w.writerow([series.model, series.seed, m.epoch, _fmt(m.loss), m.tn, m.fp, m.fn, m.tp,
                    _fmt(m.precision), _fmt(m.recall), _fmt(m.accuracy), _fmt(m.bacc), _fmt(m.auc)])
    return buf.getvalue()


def read_series_csv(path) -> RunSeries:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no epochs")

    def num(s):
        return float(s) if s != "" else math.nan

    epochs = [
        EpochMetrics(epoch=int(r[2]), loss=num(r[3]), tn=int(r[4]), fp=int(r[5]), fn=int(r[6]),
                     tp=int(r[7]), precision=num(r[8]), recall=num(r[9]), accuracy=num(r[10]),
                     bacc=num(r[11]), auc=num(r[12]))
        for r in rows
    ]
    return RunSeries(rows[0][0], int(rows[0][1]), epochs)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class RunRecord:
    config: ExperimentConfig
    model: str
    seed: int
    replicate: int
    series: RunSeries | None
    duration: float | None
    engine_version: str = __version__
    status: str = "done"  # done | resumed | failed
    error: str | None = None


@dataclass
class _Dataset:
    adj: NormalizedAdjacency
    table: NodeTable


_WORKER_DATA: _Dataset | None = None


def _init_worker(data: _Dataset):
    global _WORKER_DATA
    _WORKER_DATA = data


def _execute(cfg: ExperimentConfig, model: str, seed: int, data: _Dataset | None = None):
    data = data or _WORKER_DATA
    spec = model_spec(cfg, model, data.table.features.shape[1])
    start = time.perf_counter()
    try:
        # non-finite values are detected explicitly, so numpy's warnings add nothing
        with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
            series = train_one(spec, data.adj, data.table, seed, cfg.epochs, cfg.lr,
                               cfg.weight_decay, cfg.train_fraction)
    except T.NonFiniteError as exc:
        return None, time.perf_counter() - start, f"non-finite value during training: {exc}"
    except Exception as exc:  # isolate the run; siblings keep going
        return None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}"
    return series, time.perf_counter() - start, None


def load_dataset(cfg: ExperimentConfig) -> tuple[NormalizedAdjacency, NodeTable]:
    graph = load_edge_csv(cfg.edge_csv)
    table = load_node_csv(cfg.node_csv, graph)
    graph, table = largest_connected_component(graph, table)
    return normalized_adjacency(graph), table


def run_path(out: Path, model: str, seed: int) -> Path:
    return out / "runs" / f"{model}_{seed}.csv"


def run_experiment(cfg: ExperimentConfig, threads: int | None = None,
                   on_record=None) -> list[RunRecord]:
    """Run every (model, replicate) pair not already on disk.

    Records are written by this process as runs finish, so an interrupted
    experiment keeps every completed run and a rerun only computes the rest.
    ``on_record`` is called after each record is persisted.
    """
    out = Path(cfg.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.resolved.json", json.dumps(cfg.to_json(), indent=2) + "\n")

    records: list[RunRecord] = []
    pending = []
    for model in cfg.models:
        for rep in range(cfg.replicates):
            seed = run_seed(cfg.base_seed, model, rep)
            path = run_path(out, model, seed)
            if path.exists():
                records.append(RunRecord(cfg, model, seed, rep, read_series_csv(path), None,
                                         status="resumed"))
            else:
                pending.append((model, rep, seed))
    if not pending:
        return _ordered(records, cfg)

    adj, table = load_dataset(cfg)
    data = _Dataset(adj, table)

    def persist(model, rep, seed, series, duration, error):
        meta = {"model": model, "seed": seed, "replicate": rep, "engine_version": __version__,
                "duration_s": duration, "loss_reduction": "weighted mean over train mask",
                "loss_column": "train", "status": "failed" if error else "done"}
        if error:
            meta["error"] = error
            _atomic_write(out / "runs" / f"{model}_{seed}.failed.json", json.dumps(meta, indent=2))
            log.error("%s seed %d failed: %s", model, seed, error)
            rec = RunRecord(cfg, model, seed, rep, None, duration, status="failed", error=error)
        else:
            meta["test_loss"] = [m.test_loss for m in series.epochs]
            failed = out / "runs" / f"{model}_{seed}.failed.json"
            if failed.exists():
                failed.unlink()
            _atomic_write(out / "runs" / f"{model}_{seed}.json", json.dumps(meta) + "\n")
            _atomic_write(run_path(out, model, seed), series_to_csv(series))
            rec = RunRecord(cfg, model, seed, rep, series, duration)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    workers = max(1, min(threads or os.cpu_count() or 1, len(pending)))
    if workers == 1:
        for model, rep, seed in pending:
            persist(model, rep, seed, *_execute(cfg, model, seed, data))
        return _ordered(records, cfg)

    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn"),
                             initializer=_init_worker, initargs=(data,)) as pool:
        futures = {pool.submit(_execute, cfg, model, seed): (model, rep, seed)
                   for model, rep, seed in pending}
        try:
            for fut in as_completed(futures):
                model, rep, seed = futures[fut]
                persist(model, rep, seed, *fut.result())
        except BaseException:
            for f in futures:
                f.cancel()
            raise
    return _ordered(records, cfg)


def _ordered(records: list[RunRecord], cfg: ExperimentConfig) -> list[RunRecord]:
    rank = {m: k for k, m in enumerate(cfg.models)}
    return sorted(records, key=lambda r: (rank[r.model], r.replicate))


def collect_series(output_dir) -> list[RunSeries]:
    runs = sorted((Path(output_dir) / "runs").glob("*.csv"))
    return [read_series_csv(p) for p in runs]
