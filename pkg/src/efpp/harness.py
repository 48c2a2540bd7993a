"""Experiment orchestration: flat config files, a deterministic replicate
scheduler with an on-disk store for resuming, and CSV/JSONL/manifest output.

Each work item ``(estimator, n, replicate)`` is a pure function of the
config, so results are stored per item and reduced in index order; the CSV
does not depend on worker count or completion order.
"""
from __future__ import annotations

import concurrent.futures as cf
import csv
import hashlib
import io
import json
import math
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as E
from .lattice_animals import PoissonWeights, animal_max_greedy

CSV_FIELDS = ("n", "statistic", "value", "stderr", "count", "tags")
TAIL_LEVELS = (0.5, 0.1, 0.01, 0.001)

# key -> (parser, doc); every key of ExperimentConfig is settable
_LIST_FLOAT = "list of numbers, comma separated"
_LIST_STR = "list of names, comma separated"
CONFIG_KEYS = {
    "dim": (int, "dimension d (2 or 3)"),
    "n_values": (_LIST_FLOAT, "the n-grid"),
    "alpha": (float, "cost exponent (> 1)"),
    "h0": (float, "cutoff base (>= 1)"),
    "h1": (float, "cutoff slope (>= h0)"),
    "epsilon": (float, "thinning scale, 1/k with k odd"),
    "margin": (float, "window margin along the segment (default max(10, n/4))"),
    "width": (float, "window half-width across the segment (default max(10, n/2))"),
    "window_factor": (float, "multiplier on both window margins"),
    "replicates": (int, "replicates per n (>= 2)"),
    "seed": (int, "master seed (unsigned 64-bit)"),
    "targets": (_LIST_STR, "variance targets among T, T_PRIME, T_PP, F_N"),
    "estimators": (_LIST_STR, "among variance, influence, derivatives, equality, tail, animals"),
    "tail_c1": (float, "envelope constant C1 (calibrated at the smallest n when absent)"),
    "animal_sizes": (_LIST_FLOAT, "animal sizes m for the greedy profile"),
}


class ConfigError(E.ConfigError):
    pass


def parse_config(text: str, overrides: dict | None = None) -> E.ExperimentConfig:
    """Parse a ``key = value`` file (``#`` comments); every problem is reported."""
    values: dict = {}
    errors: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value, got {raw.strip()!r}")
            continue
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        kind = CONFIG_KEYS[key][0]
        try:
            if kind == _LIST_FLOAT:
                parsed = tuple(float(v) for v in val.split(",") if v.strip())
            elif kind == _LIST_STR:
                parsed = tuple(v.strip() for v in val.split(",") if v.strip())
            elif kind is int:
                parsed = int(val)
            else:
                parsed = float(val)
                if not math.isfinite(parsed):
                    raise ValueError("not finite")
        except ValueError:
            errors.append(f"{key}: cannot parse {val!r} as {kind if isinstance(kind, str) else kind.__name__}")
            continue
        values[key] = parsed
    values.update(overrides or {})
    if "targets" in values:
        bad = [t for t in values["targets"] if t not in E.Target.__members__]
        if bad:
            errors.append(f"targets: unknown {bad}; choose from {list(E.Target.__members__)}")
            values.pop("targets")
    try:
        config = E.ExperimentConfig(**values)
    except E.ConfigError as exc:
        errors += exc.errors
    except (TypeError, ValueError) as exc:
        errors.append(str(exc))
    if errors:
        raise ConfigError(errors)
    return config


def load_config(path: str | os.PathLike | None, overrides: dict | None = None) -> E.ExperimentConfig:
    text = Path(path).read_text() if path is not None else ""
    return parse_config(text, overrides)


def config_text(config: E.ExperimentConfig) -> str:
    """Canonical file form of a config (round-trips through ``parse_config``)."""
    lines = []
    for key in CONFIG_KEYS:
        v = getattr(config, key)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(config: E.ExperimentConfig) -> str:
    return hashlib.sha256(config_text(config).encode()).hexdigest()


# -- work items ------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class WorkItem:
    estimator: str
    n: float
    replicate: int

    @property
    def key(self) -> str:
        return f"{self.estimator}_n{self.n!r}_r{self.replicate}"


def work_items(config: E.ExperimentConfig) -> list[WorkItem]:
    items = []
    for est in config.estimators:
        ns = (0.0,) if est == "animals" else config.n_values
        for n in ns:
            items += [WorkItem(est, n, r) for r in range(config.replicates)]
    return items


def run_item(config: E.ExperimentConfig, item: WorkItem) -> dict:
    """One replicate of one estimator, as a JSON-serialisable record."""
    n, r = item.n, item.replicate
    if item.estimator == "variance":
        return {"values": {t: E.variance_sample(config, t, n, r) for t in config.targets}}
    if item.estimator == "influence":
        return {"per_box": E.influence_sample(config, n, r).tolist()}
    if item.estimator == "derivatives":
        d = E.derivative_sample(config, n, r)
        return {"grad_sum": d.grad_sum, "bit_sum": float(d.bit_sum)}
    if item.estimator == "equality":
        return {"equal": bool(E.equality_sample(config, n, r))}
    if item.estimator == "tail":
        return {"value": E.variance_sample(config, E.Target.T_PP, n, r)}
    if item.estimator == "animals":
        w = PoissonWeights(config.seed, r, config.dim)
        return {"per_size": [animal_max_greedy(w, m, config.dim)[0] / m for m in config.animal_sizes]}
    raise ValueError(f"unknown estimator {item.estimator!r}")


def _run_item_job(config: E.ExperimentConfig, item: WorkItem) -> tuple[WorkItem, dict]:
    return item, run_item(config, item)


# -- result rows -----------------------------------------------------------------------

@dataclass
class ResultRow:
    n: float
    statistic: str
    value: float
    stderr: float | None
    count: int
    tags: str = ""

    def as_dict(self) -> dict:
        return {"n": self.n, "statistic": self.statistic, "value": self.value, "stderr": self.stderr,
                "count": self.count, "tags": self.tags}


def _se_mean(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def reduce_results(config: E.ExperimentConfig, records: dict) -> list[ResultRow]:
    """Rows from per-item records, always reduced in (estimator, n, replicate) order."""
    rows: list[ResultRow] = []
    M = config.replicates

    def recs(est, n):
        return [records[WorkItem(est, n, r).key] for r in range(M)]

    for est in config.estimators:
        if est == "variance":
            for n in config.n_values:
                rr = recs(est, n)
                for t in config.targets:
                    x = np.array([r["values"][t] for r in rr])
                    v = E.variance_estimate(x)
                    rows.append(ResultRow(n, f"mean_{t}", v.mean, _se_mean(x), M))
                    rows.append(ResultRow(n, f"var_{t}", v.variance, v.stderr, M))
                    rows.append(ResultRow(n, f"var_over_n_{t}", v.variance / n, v.stderr / n, M))
        elif est == "influence":
            for n in config.n_values:
                rep = E.influence_report(config.window(n).boxes(), [r["per_box"] for r in recs(est, n)])
                rows.append(ResultRow(n, "influence_sum", rep.total, rep.total_stderr, M))
                rows.append(ResultRow(n, "influence_max", rep.max, rep.max_stderr, M,
                                      "box=" + ":".join(str(c) for c in rep.argmax)))
        elif est == "derivatives":
            for n in config.n_values:
                rep = E.derivative_report([E.DerivativeSample(r["grad_sum"], r["bit_sum"], 0, 0)
                                           for r in recs(est, n)])
                rows.append(ResultRow(n, "gradient_sum", rep.grad_mean, rep.grad_stderr, M))
                rows.append(ResultRow(n, "bit_derivative_sum", rep.bit_mean, rep.bit_stderr, M))
        elif est == "equality":
            for n in config.n_values:
                x = np.array([float(r["equal"]) for r in recs(est, n)])
                p = float(x.mean())
                rows.append(ResultRow(n, "equality_rate", p, math.sqrt(p * (1 - p) / M), M))
        elif est == "tail":
            c1 = config.tail_c1
            for n in sorted(config.n_values):
                x = np.array([r["value"] for r in recs(est, n)])
                rep = E.tail_fit(x, n, config.dim, config.alpha, c1)
                c1 = rep.c1
                rows.append(ResultRow(n, "tail_p999", rep.p999, None, M))
                rows.append(ResultRow(n, "tail_c1", rep.c1, None, M))
                rows.append(ResultRow(n, "tail_c2", rep.c2, None, M, f"kappa={rep.kappa!r}"))
                rows.append(ResultRow(n, "tail_exceeds", float(rep.exceeds), None, M))
                for q in TAIL_LEVELS:
                    rows.append(ResultRow(n, "tail_quantile", float(np.quantile(x, 1 - q)), None, M,
                                          f"survival={q!r}"))
        elif est == "animals":
            per = np.array([r["per_size"] for r in recs(est, 0.0)])
            for j, m in enumerate(config.animal_sizes):
                rows.append(ResultRow(float(m), "animal_greedy_per_size", float(per[:, j].mean()),
                                      _se_mean(per[:, j]), M))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.n), r.statistic, _fmt(r.value), _fmt(r.stderr), r.count, r.tags])
    return buf.getvalue()


def read_rows(path: str | os.PathLike) -> list[ResultRow]:
    """Parse a results CSV; raises ValueError naming the first malformed row."""
    text = Path(path).read_text()
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_FIELDS:
        raise ValueError(f"row 1: header {header} does not match {list(CSV_FIELDS)}")
    rows = []
    for i, rec in enumerate(reader, 2):
        if not rec:
            continue
        try:
            if len(rec) != len(CSV_FIELDS):
                raise ValueError(f"expected {len(CSV_FIELDS)} fields, got {len(rec)}")
            n, stat, val, se, cnt, tags = rec
            if not stat:
                raise ValueError("empty statistic name")
            rows.append(ResultRow(float(n), stat, float(val), float(se) if se else None, int(cnt), tags))
        except ValueError as exc:
            raise ValueError(f"row {i}: {exc}") from None
    return rows


# -- running ---------------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))
    os.replace(tmp, path)


def run_experiment(config: E.ExperimentConfig, out_dir: str | os.PathLike, workers: int = 1,
                   resume: bool = False, log=None) -> list[ResultRow]:
    """Run every work item (skipping stored ones when resuming), then write
    ``results.csv``, ``results.jsonl`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = out / "replicates"
    manifest_path = out / "manifest.json"
    chash = config_hash(config)
    if resume and manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("config_hash") != chash:
            raise ConfigError(["resume: the stored run used a different configuration"])
    elif store.exists():
        shutil.rmtree(store)
    store.mkdir(exist_ok=True)
    (out / "config.txt").write_text(config_text(config))
    started = time.time()
    manifest = {
        "config_hash": chash,
        "code_version": __version__,
        "seed": config.seed,
        "replicates": {repr(n): [0, config.replicates] for n in config.n_values},
        "outputs": {"csv": "results.csv", "jsonl": "results.jsonl", "store": "replicates/"},
        "status": "running",
        "started": started,
    }
    _write_json(manifest_path, manifest)

    items = work_items(config)
    records: dict = {}
    todo = []
    for it in items:
        f = store / f"{it.key}.json"
        if resume and f.exists():
            records[it.key] = json.loads(f.read_text())
        else:
            todo.append(it)

    def keep(item: WorkItem, rec: dict):
        records[item.key] = rec
        _write_json(store / f"{item.key}.json", rec)

    try:
        if workers <= 1 or len(todo) <= 1:
            for it in todo:
                keep(it, run_item(config, it))
        else:
            with cf.ProcessPoolExecutor(max_workers=workers) as ex:
                futs = [ex.submit(_run_item_job, config, it) for it in todo]
                for fut in cf.as_completed(futs):
                    keep(*fut.result())
    except BaseException:
        manifest.update(status="partial", completed=len(records), total=len(items),
                        finished=time.time())
        _write_json(manifest_path, manifest)
        raise

    rows = reduce_results(config, records)
    (out / "results.csv").write_text(rows_to_csv(rows))
    with open(out / "results.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r.as_dict(), sort_keys=True) + "\n")
    finished = time.time()
    manifest.update(status="complete", completed=len(records), total=len(items), finished=finished,
                    elapsed_s=finished - started, resumed_items=len(items) - len(todo))
    _write_json(manifest_path, manifest)
    if log is not None:
        log(f"{len(rows)} rows written to {out / 'results.csv'}")
    return rows
