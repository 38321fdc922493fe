"""Seeded experiment pipelines behind the command-line interface.

Stages are data -> VAE -> sensitive classifier -> task models. The VAE and
the sensitive classifier are cached on disk under a hash of the config
sections they depend on, so sweeps and ablations reuse them.

Seed policy: the master seed (``--seed``, default ``master_seed`` in the
config) fixes the synthetic draw, the split, the VAE and the sensitive
classifier. Each entry of ``seeds`` is a replicate: it seeds the task
models (and, in ablations, the per-replicate sensitive classifiers). All
stage seeds come from :func:`dvge.seeding.derive_seed`.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from dvge import __version__, kernels
from dvge.baselines import (
    ablation_fixed,
    ablation_retrained,
    mean_rows,
    remove_dims,
    select_sensitive_dims,
    train_adt,
    train_sensitive_classifier,
    write_ablation_csv,
)
from dvge.data import (
    DatasetTable,
    SyntheticSpec,
    conjunction,
    load_credit,
    normalize,
    parse_rule,
    split,
    synth_generate,
)
from dvge.debias import DvgeTrainRun, PerturbationConfig, infer, train_dvge, train_plain
from dvge.explain import explanation_map, focus, write_explanations_csv
from dvge.fairness import FairnessReport, pareto_indices
from dvge.nn import FitConfig, Mlp, load_mlp, mlp_from_dict, mlp_to_dict, save_mlp, write_checkpoint
from dvge.seeding import derive_seed
from dvge.vae import VaeConfig, VaeModel, load_vae, save_vae, train_vae

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RESULTS_HEADER = (
    "run_id", "config_hash", "method", "eta1", "eta2", "gamma", "lambda", "seed",
    "accuracy", "delta_dp", "delta_eo", "seconds",
)
FRONT_HEADER = ("method", "point", "eta1", "eta2", "gamma", "lambda", "accuracy", "delta")
METHODS = ("plain", "dvge", "dim_removal", "adt")

DEFAULT_CONFIG: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "experiment": "experiment",
    "master_seed": 0,
    "seeds": [0, 1, 2],
    "record_timing": False,
    "data": {
        "source": "synthetic",
        "path": None,
        "delimiter": "auto",
        "synthetic": {
            "n": 10000, "k_task": 4, "prevalence": 0.5, "rho_p": 0.8, "beta_s": 0.3,
            "noise": 0.05, "n_noise": 2, "signal_scale": 2.0, "include_sensitive": True,
        },
        "sensitive": [{"column": "s", "rule": "identity"}],
        "drop_sensitive_features": False,
        "train_fraction": 0.8,
    },
    "vae": {
        "kind": "vanilla", "latent_dim": 10, "hidden": [64] * 5, "disc_hidden": [64] * 5,
        "gamma": 0.0, "recon_weight": 50.0, "lr_vae": 1e-3, "betas_vae": [0.9, 0.999],
        "lr_disc": 1e-4, "betas_disc": [0.5, 0.9], "epochs": 200, "batch_size": 64,
    },
    "sensitive_classifier": {"epochs": 60, "batch_size": 64, "lr": 1e-3, "betas": [0.5, 0.9], "hidden": [64] * 5},
    "task": {"epochs": 50, "batch_size": 64, "lr": 1e-3, "betas": [0.5, 0.9], "hidden": [64] * 5},
    "method": {"name": "dvge", "eta1": 0.5, "eta2": 0.5, "eps_ratio": 0.1, "lambda": 1.0, "k": 1},
    "sweep": {
        "plain": {},
        "dvge": {"eta1": [0.1, 0.5, 1.0, 2.0], "eta2": [0.1, 0.5, 1.0, 2.0]},
        "dim_removal": {"k": [1, 2]},
        "adt": {"lambda": [0.1, 0.5, 1.0, 2.0]},
    },
    "ablation": {
        "encoders": ["vanilla", "factor"],
        "factor_gamma": 10.0,
        "eta1": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "k": 1,
        "eps_ratio": 0.1,
    },
}
# sections replaced wholesale when given (keys are method names)
_OPEN_SECTIONS = {("sweep",)}


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, override: dict, path: tuple[str, ...] = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if path + (key,) in _OPEN_SECTIONS:
            out[key] = copy.deepcopy(value)
        elif isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: dict) -> dict:
    _require(cfg.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}")
    data = cfg["data"]
    _require(data["source"] in ("synthetic", "credit"), "data.source must be 'synthetic' or 'credit'")
    _require(data["source"] != "credit" or bool(data["path"]), "data.path is required for credit data")
    _require(0.0 < data["train_fraction"] < 1.0, "data.train_fraction must lie in (0, 1)")
    _require(isinstance(data["sensitive"], list) and len(data["sensitive"]) >= 1,
             "data.sensitive must list at least one {column, rule} entry")
    for entry in data["sensitive"]:
        _require(isinstance(entry, dict) and set(entry) == {"column", "rule"},
                 "each data.sensitive entry needs exactly 'column' and 'rule'")
        try:
            parse_rule(entry["rule"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    _require(cfg["vae"]["kind"] in ("vanilla", "factor"), "vae.kind must be 'vanilla' or 'factor'")
    _require(cfg["method"]["name"] in METHODS, f"method.name must be one of {METHODS}")
    _require(isinstance(cfg["sweep"], dict), "sweep must map method names to grids")
    for name, grid in cfg["sweep"].items():
        _require(name in METHODS, f"sweep method {name!r} is not one of {METHODS}")
        _require(isinstance(grid, dict), f"sweep.{name} must be an object")
    _require(all(e in ("vanilla", "factor") for e in cfg["ablation"]["encoders"]),
             "ablation.encoders may only contain 'vanilla' and 'factor'")
    _require(isinstance(cfg["seeds"], list) and len(cfg["seeds"]) >= 1 and all(
        isinstance(s, int) and s >= 0 for s in cfg["seeds"]), "seeds must be a non-empty list of non-negative ints")
    _require(isinstance(cfg["master_seed"], int) and cfg["master_seed"] >= 0, "master_seed must be a non-negative int")
    try:
        vae_config(cfg)
        fit_config(cfg["sensitive_classifier"])
        fit_config(cfg["task"])
        PerturbationConfig(cfg["method"]["eta1"], cfg["method"]["eta2"], cfg["method"]["eps_ratio"])
        if data["source"] == "synthetic":
            SyntheticSpec(**data["synthetic"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def make_config(override: dict | None = None) -> dict:
    """Defaults merged with ``override`` and validated."""
    override = dict(override or {})
    if "schema_version" not in override:
        raise ConfigError("config is missing 'schema_version'")
    return validate(_merge(DEFAULT_CONFIG, override))


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return make_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def config_hash(cfg: dict, master_seed: int) -> str:
    return digest({"config": cfg, "master_seed": master_seed})


def vae_config(cfg: dict, kind: str | None = None, gamma: float | None = None, seed: int = 0) -> VaeConfig:
    section = {k: v for k, v in cfg["vae"].items() if k != "kind"}
    if gamma is not None:
        section["gamma"] = gamma
    if (kind or cfg["vae"]["kind"]) == "vanilla":
        section["gamma"] = 0.0
    return VaeConfig(**section, seed=seed)


def fit_config(section: dict) -> FitConfig:
    return FitConfig(section["epochs"], section["batch_size"], section["lr"], tuple(section["betas"]))


# ---------------------------------------------------------------------------
# data


@dataclass
class PreparedData:
    columns: tuple[str, ...]
    x_train: np.ndarray
    x_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    s_train: np.ndarray
    s_test: np.ndarray


def load_table(cfg: dict, master_seed: int) -> DatasetTable:
    data = cfg["data"]
    if data["source"] == "synthetic":
        return synth_generate(SyntheticSpec(**data["synthetic"], seed=derive_seed(master_seed, "data")))
    return load_credit(data["path"], delimiter=data["delimiter"])


def sensitive_vector(table: DatasetTable, entries: list[dict]) -> np.ndarray:
    """Binary sensitive attribute; several entries are combined with AND.

    Names are looked up among the table's binary sensitive columns first,
    then among the raw (unnormalised) feature columns.
    """
    vectors = []
    for entry in entries:
        rule = parse_rule(entry["rule"])
        name = entry["column"]
        if name in table.sensitive:
            col = table.sensitive[name].astype(np.float64)
        elif name in table.columns:
            col = table.column(name)
        else:
            raise ConfigError(f"sensitive column {name!r} is neither a feature nor a sensitive column")
        vectors.append(rule.apply(col))
    return conjunction(*vectors)


def prepare_data(cfg: dict, master_seed: int) -> PreparedData:
    table = load_table(cfg, master_seed)
    s = sensitive_vector(table, cfg["data"]["sensitive"])
    if cfg["data"]["drop_sensitive_features"]:
        table = table.drop_columns([e["column"] for e in cfg["data"]["sensitive"]])
    table = normalize(table).with_sensitive(_target=s)
    train, test = split(table, cfg["data"]["train_fraction"], derive_seed(master_seed, "split"))
    return PreparedData(
        table.columns, train.features, test.features, train.label, test.label,
        train.sensitive["_target"], test.sensitive["_target"],
    )


# ---------------------------------------------------------------------------
# cached stages


def _stage_keys(cfg: dict, master_seed: int, kind: str, gamma: float) -> tuple[str, str]:
    vae_key = digest({"data": cfg["data"], "vae": cfg["vae"], "kind": kind, "gamma": gamma, "seed": master_seed})
    sens_key = digest({"vae": vae_key, "sensitive_classifier": cfg["sensitive_classifier"]})
    return vae_key, sens_key


def ensure_vae(cfg: dict, master_seed: int, cache: Path, data: PreparedData | None = None,
               kind: str | None = None, gamma: float | None = None) -> tuple[VaeModel, Path, bool]:
    """Load the cached VAE for this config or train and store it; returns (model, path, cache_hit)."""
    kind = kind or cfg["vae"]["kind"]
    vcfg = vae_config(cfg, kind, gamma, derive_seed(master_seed, "vae"))
    vae_key, _ = _stage_keys(cfg, master_seed, kind, vcfg.gamma)
    path = cache / f"vae-{kind}-{vae_key}.json"
    if path.exists():
        log.info("cache hit: %s", path)
        return load_vae(path)[0], path, True
    data = data or prepare_data(cfg, master_seed)
    log.info("training %s VAE (%d epochs) -> %s", kind, vcfg.epochs, path)
    model, disc = train_vae(data.x_train, vcfg, kind)
    save_vae(path, model, vcfg, disc)
    logs = cache / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    with (logs / f"vae-{kind}-{vae_key}.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([i, repr(v)] for i, v in enumerate(model.history))
    return model, path, False


def ensure_sensitive(cfg: dict, master_seed: int, cache: Path, data: PreparedData, vae: VaeModel,
                     kind: str | None = None, gamma: float | None = None) -> tuple[Mlp, float, Path, bool]:
    kind = kind or cfg["vae"]["kind"]
    vcfg = vae_config(cfg, kind, gamma)
    _, sens_key = _stage_keys(cfg, master_seed, kind, vcfg.gamma)
    path = cache / f"sensitive-{kind}-{sens_key}.json"
    if path.exists():
        log.info("cache hit: %s", path)
        doc = json.loads(path.read_text())
        return load_mlp(path), float(doc["metadata"]["heldout_accuracy"]), path, True
    sc = cfg["sensitive_classifier"]
    clf = train_sensitive_classifier(
        vae.encode_mean(data.x_train), data.s_train, fit_config(sc), tuple(sc["hidden"]),
        derive_seed(master_seed, "sensitive"), vae.encode_mean(data.x_test), data.s_test,
    )
    save_mlp(path, clf.model, heldout_accuracy=clf.heldout_accuracy, history=clf.history)
    return clf.model, clf.heldout_accuracy, path, False


# ---------------------------------------------------------------------------
# task runs


@dataclass
class RunSpec:
    point: int
    method: str
    seed: int
    eta1: float | None = None
    eta2: float | None = None
    lam: float | None = None
    k: int | None = None
    eps_ratio: float = 0.1

    @property
    def run_id(self) -> str:
        return f"{self.method}-p{self.point:03d}-s{self.seed}"

    def params(self) -> dict:
        return {"method": self.method, "eta1": self.eta1, "eta2": self.eta2, "lambda": self.lam, "k": self.k}


@dataclass
class RunContext:
    """Everything a worker needs; plain arrays so it pickles cheaply."""

    data: PreparedData
    z_train: np.ndarray
    z_test: np.ndarray
    sensitive: dict
    gamma: float
    task: dict
    config_hash: str
    record_timing: bool
    models_dir: str | None = None
    explanations_dir: str | None = None


@dataclass
class ResultRow:
    run_id: str
    config_hash: str
    method: str
    eta1: float | None
    eta2: float | None
    gamma: float | None
    lam: float | None
    seed: int
    accuracy: float
    delta_dp: float
    delta_eo: float
    seconds: float | None = None
    error: str | None = None

    def csv_fields(self) -> list[str]:
        def num(v):
            return "" if v is None else repr(float(v))

        return [
            self.run_id, self.config_hash, self.method, num(self.eta1), num(self.eta2), num(self.gamma),
            num(self.lam), str(self.seed), num(self.accuracy), num(self.delta_dp), num(self.delta_eo),
            num(self.seconds),
        ]


def grid_points(cfg: dict) -> list[dict]:
    """Sweep grid in a fixed order: methods as listed, then the cartesian product of their values."""
    pts = []
    eps = cfg["method"]["eps_ratio"]
    for method, grid in cfg["sweep"].items():
        if method == "plain":
            pts.append({"method": "plain"})
        elif method == "dvge":
            for e1, e2 in itertools.product(grid.get("eta1", [0.0]), grid.get("eta2", [0.0])):
                pts.append({"method": "dvge", "eta1": float(e1), "eta2": float(e2), "eps_ratio": eps})
        elif method == "dim_removal":
            pts.extend({"method": "dim_removal", "k": int(k)} for k in grid.get("k", [1]))
        elif method == "adt":
            pts.extend({"method": "adt", "lam": float(v)} for v in grid.get("lambda", [1.0]))
    return pts


def method_point(cfg: dict) -> dict:
    m = cfg["method"]
    name = m["name"]
    if name == "dvge":
        return {"method": name, "eta1": float(m["eta1"]), "eta2": float(m["eta2"]), "eps_ratio": m["eps_ratio"]}
    if name == "dim_removal":
        return {"method": name, "k": int(m["k"])}
    if name == "adt":
        return {"method": name, "lam": float(m["lambda"])}
    return {"method": name}


def run_one(ctx: RunContext, spec: RunSpec) -> ResultRow:
    """Train and evaluate one model; failures become a row with NaN metrics and an error message."""
    start = time.perf_counter()
    d = ctx.data
    task = ctx.task
    fit = fit_config(task)
    hidden = tuple(task["hidden"])
    seed = derive_seed(spec.seed, "task")
    gamma = None if spec.method == "adt" else ctx.gamma
    try:
        z_eval = ctx.z_test
        if spec.method == "plain":
            model = train_plain(ctx.z_train, d.y_train, fit, hidden, seed)
            pred = infer(model, z_eval)
        elif spec.method == "dvge":
            run = DvgeTrainRun(mlp_from_dict(ctx.sensitive), PerturbationConfig(spec.eta1, spec.eta2, spec.eps_ratio),
                               fit, hidden, seed)
            model = train_dvge(run, ctx.z_train, d.y_train).model
            pred = infer(model, z_eval)
        elif spec.method == "dim_removal":
            dims = select_sensitive_dims(ctx.z_train, d.s_train, spec.k)
            z_eval = remove_dims(ctx.z_test, dims)
            model = train_plain(remove_dims(ctx.z_train, dims), d.y_train, fit, hidden, seed)
            pred = infer(model, z_eval)
        elif spec.method == "adt":
            width = ctx.z_train.shape[1]
            model = train_adt(d.x_train, d.y_train, d.s_train, spec.lam, fit, hidden, width, seed)
            pred = model.predict(d.x_test)
        else:
            raise ValueError(f"unknown method {spec.method!r}")
        rep = FairnessReport.evaluate(pred, d.y_test, d.s_test)
        if ctx.models_dir is not None:
            _store_run_artifacts(ctx, spec, model, z_eval)
        acc, dp, eo, err = rep.accuracy, rep.delta_dp, rep.delta_eo, None
    except Exception as exc:  # a failed grid point must not stop the sweep
        log.warning("run %s failed: %s", spec.run_id, exc)
        acc = dp = eo = math.nan
        err = f"{type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - start if ctx.record_timing else None
    return ResultRow(spec.run_id, ctx.config_hash, spec.method, spec.eta1, spec.eta2, gamma, spec.lam,
                     spec.seed, acc, dp, eo, seconds, err)


def _store_run_artifacts(ctx: RunContext, spec: RunSpec, model, z_eval: np.ndarray) -> None:
    if isinstance(model, Mlp):
        save_mlp(Path(ctx.models_dir) / f"{spec.run_id}.json", model, **spec.params(), seed=spec.seed)
        if ctx.explanations_dir is not None:
            maps = explanation_map(focus(model, z_eval), z_eval)
            write_explanations_csv(Path(ctx.explanations_dir) / f"{spec.run_id}.csv", maps)
    else:
        payload = {name: mlp_to_dict(getattr(model, name)) for name in ("encoder", "task_branch", "sensitive_branch")}
        write_checkpoint(Path(ctx.models_dir) / f"{spec.run_id}.json", "adt", {**payload, "lambda": model.lam})


def _run_star(args):
    return run_one(*args)


def execute(ctx: RunContext, specs: list[RunSpec], jobs: int) -> list[ResultRow]:
    """Run every spec, in parallel when ``jobs > 1``; rows come back in spec order."""
    if jobs <= 1 or len(specs) <= 1:
        return [run_one(ctx, s) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_star, [(ctx, s) for s in specs]))


def write_results(path: Path, rows: Iterable[ResultRow]) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())
    return path


# ---------------------------------------------------------------------------
# fronts and reports


@dataclass
class MeanPoint:
    method: str
    point: str
    eta1: str
    eta2: str
    gamma: str
    lam: str
    accuracy: float
    delta_dp: float
    delta_eo: float
    n: int = 0


def read_results(path: Path) -> list[dict]:
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected results header {reader.fieldnames}")
        return list(reader)


def seed_means(rows: list[dict]) -> list[MeanPoint]:
    """Average finite rows over seeds, grouping by the run id without its seed suffix."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        key = r["run_id"].rsplit("-s", 1)[0]
        groups.setdefault(key, []).append(r)
    out = []
    for key, members in groups.items():
        ok = [m for m in members if all(math.isfinite(float(m[c] or "nan")) for c in ("accuracy", "delta_dp", "delta_eo"))]
        if not ok:
            continue
        first = ok[0]
        out.append(MeanPoint(
            first["method"], key.rsplit("-", 1)[-1], first["eta1"], first["eta2"], first["gamma"], first["lambda"],
            float(np.mean([float(m["accuracy"]) for m in ok])),
            float(np.mean([float(m["delta_dp"]) for m in ok])),
            float(np.mean([float(m["delta_eo"]) for m in ok])),
            len(ok),
        ))
    return out


def method_fronts(points: list[MeanPoint], metric: str) -> list[tuple[MeanPoint, float]]:
    """Per-method Pareto fronts of (accuracy, gap) over seed-mean points."""
    out = []
    for method in dict.fromkeys(p.method for p in points):
        mine = [p for p in points if p.method == method]
        pairs = [(p.accuracy, getattr(p, metric)) for p in mine]
        out.extend((mine[i], pairs[i][1]) for i in pareto_indices(pairs))
    return out


def write_front_csv(path: Path, front: list[tuple[MeanPoint, float]], with_metric: str | None = None) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["metric"] if with_metric else []) + list(FRONT_HEADER))
        for p, delta in front:
            prefix = [with_metric] if with_metric else []
            w.writerow(prefix + [p.method, p.point, p.eta1, p.eta2, p.gamma, p.lam, repr(p.accuracy), repr(delta)])
    return path


def write_pareto_csv(path: Path, rows: list[dict]) -> Path:
    pts = seed_means(rows)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + list(FRONT_HEADER))
        for metric in ("delta_dp", "delta_eo"):
            if not pts:
                continue
            for p, delta in method_fronts(pts, metric):
                w.writerow([metric, p.method, p.point, p.eta1, p.eta2, p.gamma, p.lam, repr(p.accuracy), repr(delta)])
    return path


def summary_text(experiment: str, rows: list[dict], points: list[MeanPoint]) -> str:
    lines = [f"experiment: {experiment}", f"runs: {len(rows)}"]
    failed = sum(1 for r in rows if not math.isfinite(float(r["accuracy"] or "nan")))
    lines.append(f"failed runs: {failed}")
    for method in dict.fromkeys(p.method for p in points):
        mine = [p for p in points if p.method == method]
        best = max(mine, key=lambda p: (p.accuracy, -p.delta_dp))
        fairest = min(mine, key=lambda p: (p.delta_dp, -p.accuracy))
        lines.append(
            f"{method}: {len(mine)} points; best accuracy {best.accuracy:.4f} (delta_dp {best.delta_dp:.4f}); "
            f"lowest delta_dp {fairest.delta_dp:.4f} (accuracy {fairest.accuracy:.4f})"
        )
    return "\n".join(lines) + "\n"


class NoResultsError(RuntimeError):
    pass


def report(results_dir: Path, out: Path | None = None) -> tuple[str, list[Path]]:
    """Summarise ``results.csv`` and emit ``<experiment>_dp.csv`` / ``<experiment>_eo.csv`` fronts."""
    results_dir = Path(results_dir)
    path = results_dir / "results.csv"
    if not path.exists():
        raise NoResultsError(f"no results in {results_dir} (missing results.csv)")
    rows = read_results(path)
    if not rows:
        raise NoResultsError(f"no results in {results_dir} (results.csv has no rows)")
    experiment = "experiment"
    manifest = results_dir / "manifest.json"
    if manifest.exists():
        experiment = json.loads(manifest.read_text()).get("experiment", experiment)
    points = seed_means(rows)
    out = Path(out) if out is not None else results_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if points:
        written.append(write_front_csv(out / f"{experiment}_dp.csv", method_fronts(points, "delta_dp")))
        written.append(write_front_csv(out / f"{experiment}_eo.csv", method_fronts(points, "delta_eo")))
    text = summary_text(experiment, rows, points)
    summary = out / "summary.txt"
    summary.write_text(text, encoding="utf-8")
    written.append(summary)
    return text, written


# ---------------------------------------------------------------------------
# commands


def manifest_doc(command: str, cfg: dict, master_seed: int, chash: str, **extra) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "experiment": cfg["experiment"],
        "config_hash": chash,
        "master_seed": master_seed,
        "config": cfg,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **extra,
    }


def write_manifest(path: Path, doc: dict) -> Path:
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


class OutputConflictError(RuntimeError):
    """The output directory holds a completed run of a different command or config."""


def _check_out(out: Path, command: str, chash: str) -> bool:
    """True when ``out`` already holds this exact run (cache hit)."""
    manifest = out / "manifest.json"
    if not manifest.exists():
        return False
    doc = json.loads(manifest.read_text())
    if doc.get("command") == command and doc.get("config_hash") == chash:
        return True
    raise OutputConflictError(
        f"{out} already holds a completed {doc.get('command')!r} run with config hash {doc.get('config_hash')}; "
        "choose a fresh --out directory"
    )


def _context(cfg: dict, master_seed: int, out: Path, chash: str, store: bool) -> RunContext:
    cache = out / "cache"
    data = prepare_data(cfg, master_seed)
    vae, _, _ = ensure_vae(cfg, master_seed, cache, data)
    sens, _, _, _ = ensure_sensitive(cfg, master_seed, cache, data, vae)
    models = explanations = None
    if store:
        models, explanations = out / "models", out / "explanations"
        models.mkdir(parents=True, exist_ok=True)
        explanations.mkdir(parents=True, exist_ok=True)
        zt = vae.encode_mean(data.x_test)
        write_explanations_csv(explanations / "sensitive_classifier.csv", explanation_map(focus(sens, zt), zt))
    return RunContext(
        data, vae.encode_mean(data.x_train), vae.encode_mean(data.x_test), mlp_to_dict(sens),
        vae_config(cfg).gamma, cfg["task"], chash, bool(cfg["record_timing"]),
        str(models) if models else None, str(explanations) if explanations else None,
    )


def _specs(points: list[dict], seeds: list[int]) -> list[RunSpec]:
    return [RunSpec(point=i, seed=s, **p) for i, p in enumerate(points) for s in seeds]


def cmd_train_vae(cfg: dict, master_seed: int, out: Path) -> tuple[Path, bool]:
    _, path, hit = ensure_vae(cfg, master_seed, out / "cache")
    return path, hit


def cmd_train_sensitive(cfg: dict, master_seed: int, out: Path) -> tuple[Path, float, bool]:
    cache = out / "cache"
    data = prepare_data(cfg, master_seed)
    vae, _, _ = ensure_vae(cfg, master_seed, cache, data)
    _, acc, path, hit = ensure_sensitive(cfg, master_seed, cache, data, vae)
    return path, acc, hit


def _run_grid(command: str, cfg: dict, master_seed: int, out: Path, jobs: int, points: list[dict],
              store: bool) -> tuple[Path, bool]:
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg, master_seed)
    if _check_out(out, command, chash):
        log.info("cache hit: %s already complete", out)
        return out / "results.csv", True
    ctx = _context(cfg, master_seed, out, chash, store)
    specs = _specs(points, cfg["seeds"])
    rows = execute(ctx, specs, jobs)
    results = write_results(out / "results.csv", rows)
    artifacts = ["results.csv"]
    if command == "sweep":
        write_pareto_csv(out / "pareto.csv", read_results(results))
        artifacts.append("pareto.csv")
    if cfg["record_timing"]:
        artifacts.append("(seconds column holds wall-clock timings)")
    failures = [{"run_id": r.run_id, "error": r.error} for r in rows if r.error]
    grid = [{"point": i, **p} for i, p in enumerate(points)]
    write_manifest(out / "manifest.json", manifest_doc(command, cfg, master_seed, chash,
                                                       grid=grid, artifacts=artifacts, failures=failures))
    return results, False


def cmd_train_task(cfg: dict, master_seed: int, out: Path, jobs: int = 1) -> tuple[Path, bool]:
    return _run_grid("train-task", cfg, master_seed, out, jobs, [method_point(cfg)], store=True)


def cmd_sweep(cfg: dict, master_seed: int, out: Path, jobs: int = 1) -> tuple[Path, bool]:
    return _run_grid("sweep", cfg, master_seed, out, jobs, grid_points(cfg), store=False)


def _ablation_replicate(args):
    z_train, z_test, s_train, s_test, abl, sc, seed, kind = args
    fit = fit_config(sc)
    hidden = tuple(sc["hidden"])
    d = train_sensitive_classifier(z_train, s_train, fit, hidden, derive_seed(seed, "sensitive"), z_test, s_test)
    retrained = ablation_retrained(d.model, z_train, s_train, z_test, s_test, abl["eta1"], fit, hidden,
                                   derive_seed(seed, "retrain"), abl["k"], abl["eps_ratio"], kind)
    fixed = ablation_fixed(d.model, z_train, s_train, z_test, s_test, abl["eta1"], abl["k"], abl["eps_ratio"], kind)
    return retrained, fixed


def cmd_ablation(cfg: dict, master_seed: int, out: Path, jobs: int = 1) -> tuple[list[Path], bool]:
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg, master_seed)
    paths = [out / "ablation_retrained.csv", out / "ablation_fixed.csv"]
    if _check_out(out, "ablation", chash):
        return paths, True
    abl = cfg["ablation"]
    data = prepare_data(cfg, master_seed)
    retrained_rows, fixed_rows, per_seed = [], [], []
    for kind in abl["encoders"]:
        gamma = abl["factor_gamma"] if kind == "factor" else 0.0
        vae, _, _ = ensure_vae(cfg, master_seed, out / "cache", data, kind, gamma)
        z_train, z_test = vae.encode_mean(data.x_train), vae.encode_mean(data.x_test)
        tasks = [(z_train, z_test, data.s_train, data.s_test, abl, cfg["sensitive_classifier"], s, kind)
                 for s in cfg["seeds"]]
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                reps = list(pool.map(_ablation_replicate, tasks))
        else:
            reps = [_ablation_replicate(t) for t in tasks]
        retrained_rows.append(mean_rows([r for r, _ in reps]))
        fixed_rows.append(mean_rows([f for _, f in reps]))
        for seed, (r, f) in zip(cfg["seeds"], reps):
            per_seed.append({"encoder": kind, "seed": seed, "retrained": r.values(), "fixed": f.values()})
    write_ablation_csv(paths[0], retrained_rows)
    write_ablation_csv(paths[1], fixed_rows)
    write_manifest(out / "manifest.json", manifest_doc(
        "ablation", cfg, master_seed, chash, artifacts=[p.name for p in paths],
        columns=["no_removal", "removed"] + [repr(float(e)) for e in abl["eta1"]], per_seed=per_seed))
    return paths, False


def cmd_synth_data(cfg: dict, master_seed: int, out: Path) -> Path:
    from dvge.data import write_csv

    out.mkdir(parents=True, exist_ok=True)
    syn = dict(cfg["data"]["synthetic"])
    table = synth_generate(SyntheticSpec(**syn, seed=derive_seed(master_seed, "data")))
    return write_csv(table, out / f"synthetic-seed{master_seed}.csv")
