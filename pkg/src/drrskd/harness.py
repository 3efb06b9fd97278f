"""Experiment configuration, multi-seed runs, summaries and trajectory export.

An experiment is a YAML mapping deep-merged over ``DEFAULTS``. The base
mapping describes one trainer; an optional ``arms`` list holds overrides
that each become a separately summarised row (used by the presets to lay
out comparison tables). Everything written to the output directory is a
pure function of the resolved config, the seeds and the dataset bytes.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .awa import AwaConfig, ScheduleSpec
from .data import CorruptionSpec, Dataset, corrupt, gen_speckled_shapes, read_idx, standardize
from .distill import TRAINER_KINDS, RunRecord, TrainConfig, derive_seed, train, two_stage
from .errors import ConfigError, DataError, ReportError
from .model import ModelSpec, build

OUTPUT_ROOT_ENV = "DRRSKD_OUTPUT_ROOT"

_SCHEDULE = {"kind": "fixed", "value": 0.5, "warmup_epochs": 0, "warmup_value": 0.0}

DEFAULTS = {
    "name": "experiment",
    "tag": "",
    "trainer": "baseline",
    "label": None,
    "model": {"kind": "mlp", "hidden": [128], "use_batchnorm": False},
    "data": {
        "source": "synthetic",
        "num_classes": 3,
        "per_class_train": 80,
        "per_class_test": 200,
        "size": 32,
        "looks": 2,
        "train_seed": 101,
        "test_seed": 202,
        "standardize": False,
        "train_images": None,
        "train_labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "corruption": {"few_shot_per_class": None, "label_noise_rate": 0.1, "speckle_looks": None, "seed": 7},
    "epochs": 100,
    "batch_size": 16,
    "optimizer": {"lr0": 2e-4, "lr_decay": 0.2, "lr_period": 7, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "distill": {
        "tau": 3.0,
        "lsr_eps": 0.1,
        "alpha": 1.3,
        "alpha_tau": 1.0,
        "granularity": "per_sample",
        "soften": "logits",
        "schedule": dict(_SCHEDULE),
        "stage1_schedule": dict(_SCHEDULE),
        "reset_snapshot_each_epoch": False,
    },
    "log_per_sample": False,
    "seeds": [0],
    "arms": [],
    "output_dir": None,
}

# keys whose default is None but which accept a value of this type
_NULLABLE = {
    "label": str,
    "output_dir": str,
    "data.train_images": str,
    "data.train_labels": str,
    "data.test_images": str,
    "data.test_labels": str,
    "corruption.few_shot_per_class": int,
    "corruption.speckle_looks": int,
}


# ---------------------------------------------------------------- config


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers in a YAML document."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}{k.value}"
                lines[path] = k.start_mark.line + 1
                walk(v, path + ".")
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[f"{prefix}{i}"] = v.start_mark.line + 1
                walk(v, f"{prefix}{i}.")

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    walk(root, "")
    return lines


def _type_ok(value, default, path) -> bool:
    path = re.sub(r"^arms\.\d+\.", "", path)
    if value is None:
        return default is None or path in _NULLABLE
    if default is None:
        want = _NULLABLE.get(path)
        if want is int:
            return isinstance(value, int) and not isinstance(value, bool)
        return want is not None and isinstance(value, want)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _check_fields(over: dict, schema: dict, prefix: str, where) -> None:
    for k, v in over.items():
        path = f"{prefix}{k}"
        if k not in schema:
            raise ConfigError(f"{where(path)}unknown field {path!r}")
        default = schema[k]
        if isinstance(default, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where(path)}field {path!r} must be a mapping")
            _check_fields(v, default, path + ".", where)
        elif not _type_ok(v, default, path):
            raise ConfigError(f"{where(path)}field {path!r} has invalid value {v!r}")


def _check_semantics(cfg: dict, where, prefix="") -> None:
    def bad(path, msg):
        raise ConfigError(f"{where(prefix + path)}field {path!r}: {msg}")

    if cfg["trainer"] not in TRAINER_KINDS:
        bad("trainer", f"unknown trainer {cfg['trainer']!r}; expected one of {', '.join(TRAINER_KINDS)}")
    if cfg["epochs"] < 0:
        bad("epochs", "must be >= 0")
    if cfg["batch_size"] < 1:
        bad("batch_size", "must be >= 1")
    if cfg["data"]["source"] not in ("synthetic", "idx"):
        bad("data.source", "must be 'synthetic' or 'idx'")
    if cfg["data"]["source"] == "idx":
        for k in ("train_images", "train_labels", "test_images", "test_labels"):
            if not cfg["data"][k]:
                bad(f"data.{k}", "required when data.source is 'idx'")
    if cfg["model"]["kind"] not in ("mlp", "smallcnn"):
        bad("model.kind", "must be 'mlp' or 'smallcnn'")
    if not all(isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in cfg["model"]["hidden"]):
        bad("model.hidden", "must be a list of positive integers")
    for key in ("schedule", "stage1_schedule"):
        s = cfg["distill"][key]
        try:
            ScheduleSpec(s["kind"], float(s["value"]), s["warmup_epochs"], float(s["warmup_value"]))
        except ConfigError as exc:
            bad(f"distill.{key}", str(exc))
    d = cfg["distill"]
    try:
        AwaConfig(d["alpha"], d["alpha_tau"], d["granularity"], d["soften"])
    except ConfigError as exc:
        bad("distill", str(exc))
    if not d["tau"] > 0:
        bad("distill.tau", "must be positive")


def resolve(overrides: dict | None = None, source: str = "<config>", text: str | None = None) -> dict:
    """Validate ``overrides`` against the schema and merge them over ``DEFAULTS``.

    ``text`` (the YAML source) enables line numbers in diagnostics.
    """
    overrides = overrides or {}
    if not isinstance(overrides, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _key_lines(text) if text else {}

    def where(path):
        ln = lines.get(path)
        return f"{source}:{ln}: " if ln else f"{source}: "

    _check_fields(overrides, DEFAULTS, "", where)
    cfg = deep_merge(DEFAULTS, overrides)
    if not cfg["seeds"] or not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg["seeds"]):
        raise ConfigError(f"{where('seeds')}field 'seeds' must be a nonempty list of integers")
    _check_semantics(cfg, where)
    labels = set()
    for i, arm in enumerate(cfg["arms"]):
        if not isinstance(arm, dict):
            raise ConfigError(f"{where(f'arms.{i}')}arm {i} must be a mapping")
        bad_keys = {"arms", "seeds", "output_dir", "name"} & set(arm)
        if bad_keys:
            raise ConfigError(f"{where(f'arms.{i}')}arm {i} may not set {sorted(bad_keys)}")
        _check_fields(arm, DEFAULTS, f"arms.{i}.", lambda p: where(p))
        merged = deep_merge({k: v for k, v in cfg.items() if k != "arms"}, arm)
        _check_semantics(merged, where, prefix=f"arms.{i}.")
        label = arm_label(merged)
        if label in labels:
            raise ConfigError(f"{where(f'arms.{i}')}duplicate arm label {label!r}")
        labels.add(label)
    return cfg


def parse_set(items) -> dict:
    """``["a.b=1", ...]`` -> nested override mapping; values are parsed as YAML scalars."""
    out: dict = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: cannot parse {raw!r}: {exc}") from None
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: conflicting assignments")
        node[parts[-1]] = value
    return out


def load_config(path, sets=()) -> dict:
    """Read a YAML experiment file; ``sets`` (``key=value`` strings) take precedence over it."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{path}:{mark.line + 1}" if mark is not None else path
        raise ConfigError(f"{loc}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    if not sets:
        return resolve(raw, path, text)
    return resolve(deep_merge(raw, parse_set(sets)), path, text)


def arm_label(cfg: dict) -> str:
    return cfg.get("label") or cfg["trainer"]


def expand_arms(cfg: dict) -> list:
    """One fully resolved config per summary row."""
    base = {k: v for k, v in cfg.items() if k != "arms"}
    if not cfg["arms"]:
        return [base]
    return [deep_merge(base, arm) for arm in cfg["arms"]]


# ---------------------------------------------------------------- building blocks


def _schedule(s: dict) -> ScheduleSpec:
    return ScheduleSpec(s["kind"], float(s["value"]), int(s["warmup_epochs"]), float(s["warmup_value"]))


def train_config(cfg: dict, seed: int, schedule_key="schedule", stream="") -> TrainConfig:
    o, d = cfg["optimizer"], cfg["distill"]
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        lr0=float(o["lr0"]), lr_decay=float(o["lr_decay"]), lr_period=int(o["lr_period"]),
        beta1=float(o["beta1"]), beta2=float(o["beta2"]), adam_eps=float(o["eps"]),
        seed=seed, tau=float(d["tau"]), lsr_eps=float(d["lsr_eps"]),
        schedule=_schedule(d[schedule_key]),
        awa=AwaConfig(float(d["alpha"]), float(d["alpha_tau"]), d["granularity"], d["soften"]),
        reset_snapshot_each_epoch=d["reset_snapshot_each_epoch"],
        log_per_sample=cfg["log_per_sample"], stream=stream,
    )


def load_data(cfg: dict):
    """``(train, test)`` datasets described by the config, corrupted and optionally standardized."""
    d = cfg["data"]
    if d["source"] == "synthetic":
        tr = gen_speckled_shapes(d["num_classes"], d["per_class_train"], d["size"], d["looks"],
                                 seed=d["train_seed"], split_tag="train")
        te = gen_speckled_shapes(d["num_classes"], d["per_class_test"], d["size"], d["looks"],
                                 seed=d["test_seed"], split_tag="test")
    else:
        tr = read_idx(d["train_images"], d["train_labels"], split_tag="train")
        te = read_idx(d["test_images"], d["test_labels"], split_tag="test")
    c = cfg["corruption"]
    tr = corrupt(tr, CorruptionSpec(c["few_shot_per_class"], float(c["label_noise_rate"]),
                                    c["speckle_looks"], c["seed"]))
    if d["standardize"]:
        tr, te = standardize(tr, te)
    return tr, te


def model_spec(cfg: dict, data: Dataset) -> ModelSpec:
    m = cfg["model"]
    return ModelSpec(m["kind"], tuple(data.input_shape), tuple(m["hidden"]), data.num_classes, m["use_batchnorm"])


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True)


class _Runner:
    """Trains runs on demand and memoises them so arms and teachers are shared."""

    def __init__(self):
        self.data = {}
        self.runs = {}

    def dataset(self, cfg):
        key = _canon([cfg["data"], cfg["corruption"]])
        if key not in self.data:
            self.data[key] = load_data(cfg)
        return self.data[key]

    @staticmethod
    def _common(cfg):
        return {k: cfg[k] for k in ("model", "data", "corruption", "epochs", "batch_size", "optimizer",
                                    "log_per_sample")} | {"tau": cfg["distill"]["tau"]}

    def _memo(self, key, fn):
        if key not in self.runs:
            self.runs[key] = fn()
        return self.runs[key]

    def plain(self, cfg, seed, trainer, schedule_key="schedule"):
        """Baseline/LSR/DLB run from the shared initialisation; returns ``(model, record)``."""
        extra = {"baseline": None, "lsr": cfg["distill"]["lsr_eps"], "dlb": cfg["distill"][schedule_key]}[trainer]
        key = _canon(["plain", trainer, seed, self._common(cfg), extra])

        def fn():
            tr, te = self.dataset(cfg)
            spec = model_spec(cfg, tr)
            model = build(spec, derive_seed(seed, "init"))
            rec = train(trainer, model, tr, te, train_config(cfg, seed, schedule_key))
            model.freeze()
            return model, rec
        return self._memo(key, fn)

    def teacher(self, cfg, seed):
        key = _canon(["teacher", seed, self._common(cfg)])

        def fn():
            tr, te = self.dataset(cfg)
            model = build(model_spec(cfg, tr), derive_seed(seed, "teacher", "init"))
            rec = train("baseline", model, tr, te, train_config(cfg, seed, stream="teacher"))
            model.freeze()
            return model, rec
        return self._memo(key, fn)

    def record(self, cfg, seed) -> RunRecord:
        kind = cfg["trainer"]
        if kind in ("baseline", "lsr", "dlb"):
            return self.plain(cfg, seed, kind)[1]
        tr, te = self.dataset(cfg)
        spec = model_spec(cfg, tr)
        if kind == "tf_kd":
            key = _canon(["tf_kd", seed, self._common(cfg), cfg["distill"]["schedule"]])

            def fn():
                teacher, _ = self.teacher(cfg, seed)
                student = build(spec, derive_seed(seed, "init"))
                rec = train("tf_kd", student, tr, te, train_config(cfg, seed), teacher=teacher)
                rec.meta["teacher_hash"] = teacher.param_hash()
                return student, rec
            return self._memo(key, fn)[1]
        key = _canon(["drrnet_skd", seed, self._common(cfg), cfg["distill"]])

        def fn():
            offline = self.plain(cfg, seed, "dlb", "stage1_schedule")
            res = two_stage(spec, tr, te, train_config(cfg, seed), offline=offline)
            res.stage2.meta["offline_test_acc"] = res.stage1.final_test_acc
            return res.student, res.stage2
        return self._memo(key, fn)[1]


# ---------------------------------------------------------------- summaries


@dataclass
class SummaryRow:
    label: str
    trainer: str
    accs: list
    delta_vs_baseline: float | None = None
    best: bool = False

    @property
    def n(self) -> int:
        return len(self.accs)

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.accs))

    @property
    def std_acc(self) -> float | None:
        if len(self.accs) < 2:
            return None
        return float(np.std(self.accs, ddof=1))

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "trainer": self.trainer,
            "seeds": self.n,
            "mean_acc": f"{self.mean_acc:.2f}",
            "std_acc": "" if self.std_acc is None else f"{self.std_acc:.2f}",
            "delta_vs_baseline": "" if self.delta_vs_baseline is None else f"{self.delta_vs_baseline:+.2f}",
            "best": "*" if self.best else "",
        }

    def __str__(self):
        d = self.as_dict()
        acc = d["mean_acc"] + (f"±{d['std_acc']}" if d["std_acc"] else "")
        delta = f" ({d['delta_vs_baseline']})" if d["delta_vs_baseline"] else ""
        return f"{self.label:<22} {acc}{delta}{'  *' if self.best else ''}"


SUMMARY_FIELDS = ("label", "trainer", "seeds", "mean_acc", "std_acc", "delta_vs_baseline", "best")


def compare(rows: list) -> list:
    """Fill in deltas against the baseline row, flag the best mean, rank by mean (stable)."""
    base = [r for r in rows if r.trainer == "baseline"]
    if not base:
        raise ReportError("comparison needs a baseline row")
    ref = base[0].mean_acc
    top = max(r.mean_acc for r in rows)
    for r in rows:
        r.delta_vs_baseline = r.mean_acc - ref
        r.best = r.mean_acc == top
    return sorted(rows, key=lambda r: -r.mean_acc)


def summary_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_dict())
    return buf.getvalue()


TRAJECTORY_FIELDS = ("label", "seed", "epoch", "w_lb", "w_kd")


def emit_trajectory(records, label="") -> str:
    """CSV of the weights at the first distilled iteration of every epoch.

    ``records`` is one RunRecord or a list of them. Raises DataError when a
    record carries no weights (e.g. a baseline run).
    """
    if isinstance(records, RunRecord):
        records = [records]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_FIELDS)
    for rec in records:
        for epoch, w_lb, w_kd in rec.weight_trajectory():
            w.writerow([label or rec.kind, rec.seed, epoch, repr(float(w_lb)), repr(float(w_kd))])
    return buf.getvalue()


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentResult:
    rows: list
    records: dict = field(default_factory=dict)
    output_dir: Path | None = None


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def run_experiment(cfg: dict, output_dir=None, echo=print) -> ExperimentResult:
    """Train every arm for every seed, then write records, summary and trajectories."""
    arms = expand_arms(cfg)
    runner = _Runner()
    records = {}
    for arm in arms:
        label = arm_label(arm)
        records[label] = [runner.record(arm, s) for s in cfg["seeds"]]
    rows = [SummaryRow(arm_label(a), a["trainer"], [r.final_test_acc for r in records[arm_label(a)]])
            for a in arms]
    ranked = compare(rows) if any(r.trainer == "baseline" for r in rows) else rows

    out = output_dir or cfg["output_dir"] or output_root() / cfg["name"]
    out = Path(out)
    resolved = {k: v for k, v in cfg.items() if k != "output_dir"}
    _write(out / "resolved-config.yaml", yaml.safe_dump(resolved, sort_keys=True, default_flow_style=False))
    for label, recs in records.items():
        for rec in recs:
            path = out / "records" / label / f"seed-{rec.seed}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            rec.to_jsonl(path)
    _write(out / "summary.csv", summary_csv(ranked))
    traj = []
    for a in arms:
        if a["trainer"] in ("tf_kd", "dlb", "drrnet_skd") and a["epochs"] > 0:
            label = arm_label(a)
            traj.append(emit_trajectory(records[label], label).split("\n", 1)[1])
    if traj:
        _write(out / "trajectory.csv", ",".join(TRAJECTORY_FIELDS) + "\n" + "".join(traj))
    if echo:
        title = cfg["name"] + (f" [{cfg['tag']}]" if cfg["tag"] else "")
        echo(title)
        for r in ranked:
            echo("  " + str(r))
    return ExperimentResult(ranked, records, out)


def rows_from_dir(path) -> list:
    """Recompute summary rows from the per-seed records below ``path``."""
    root = Path(path) / "records"
    if not root.is_dir():
        raise ReportError(f"{path}: no records directory")
    order = None
    cfg_path = Path(path) / "resolved-config.yaml"
    if cfg_path.exists():
        order = [arm_label(a) for a in expand_arms(yaml.safe_load(cfg_path.read_text()))]
    labels = sorted(p.name for p in root.iterdir() if p.is_dir())
    if order:
        labels = [lb for lb in order if lb in labels] + [lb for lb in labels if lb not in order]
    rows = []
    for label in labels:
        files = sorted((root / label).glob("seed-*.jsonl"), key=lambda p: int(p.stem.split("-", 1)[1]))
        recs = [RunRecord.from_jsonl(f) for f in files]
        if recs:
            rows.append(SummaryRow(label, recs[0].kind, [r.final_test_acc for r in recs]))
    if not rows:
        raise ReportError(f"{path}: no run records found")
    return rows


def load_records(path) -> list:
    """RunRecords from a ``seed-*.jsonl`` file or from a directory of them."""
    p = Path(path)
    if p.is_file():
        return [RunRecord.from_jsonl(p)]
    if p.is_dir():
        files = sorted(p.glob("seed-*.jsonl"), key=lambda f: int(f.stem.split("-", 1)[1]))
        if files:
            return [RunRecord.from_jsonl(f) for f in files]
    raise DataError(f"{path}: no run records found")


# ---------------------------------------------------------------- presets


def _sched(kind, value=0.0, warmup_epochs=0, warmup_value=0.0):
    return {"kind": kind, "value": value, "warmup_epochs": warmup_epochs, "warmup_value": warmup_value}


DESK_EPOCHS = 40

# Shared desk-scale regime: a small MLP on 3-class speckled shapes with 20%
# symmetric label noise, trained long enough that the plain baseline
# memorises the noisy labels.
DESK_BASE = {
    "tag": "desk",
    "model": {"kind": "mlp", "hidden": [256], "use_batchnorm": False},
    "data": {"num_classes": 3, "per_class_train": 80, "per_class_test": 200, "looks": 2},
    "corruption": {"label_noise_rate": 0.2},
    "epochs": DESK_EPOCHS,
    "optimizer": {"lr0": 5e-4, "lr_period": 3},
    "distill": {
        "stage1_schedule": _sched("epoch_linear_up", 0.0, DESK_EPOCHS // 2, 0.5),
        "alpha": 1.3,
    },
    "seeds": [0, 1, 2, 3, 4],
}


def _table1():
    half = DESK_EPOCHS // 2
    return deep_merge(DESK_BASE, {
        "name": "table1-desk",
        "arms": [
            {"label": "baseline", "trainer": "baseline"},
            {"label": "dlb-fixed-0.3", "trainer": "dlb", "distill": {"schedule": _sched("fixed", 0.3)}},
            {"label": "dlb-fixed-0.7", "trainer": "dlb", "distill": {"schedule": _sched("fixed", 0.7)}},
            {"label": "dlb-unfixed", "trainer": "dlb",
             "distill": {"schedule": _sched("epoch_linear_up", 0.0, half, 0.5)}},
            {"label": "tfkd-fixed-0.3", "trainer": "tf_kd", "distill": {"schedule": _sched("fixed", 0.3)}},
            {"label": "tfkd-fixed-0.7", "trainer": "tf_kd", "distill": {"schedule": _sched("fixed", 0.7)}},
            {"label": "tfkd-unfixed", "trainer": "tf_kd", "distill": {"schedule": _sched("epoch_linear_down")}},
        ],
    })


def _table2():
    return deep_merge(DESK_BASE, {
        "name": "table2-desk",
        "arms": [
            {"label": "baseline", "trainer": "baseline"},
            {"label": "lsr", "trainer": "lsr"},
            {"label": "tf_kd", "trainer": "tf_kd", "distill": {"schedule": _sched("fixed", 0.7)}},
            {"label": "dlb", "trainer": "dlb", "distill": {"schedule": _sched("fixed", 0.7)}},
            {"label": "drrnet_skd", "trainer": "drrnet_skd"},
        ],
    })


def _trajectory():
    return deep_merge(DESK_BASE, {
        "name": "trajectory-desk",
        "trainer": "drrnet_skd",
        "distill": {"granularity": "per_batch", "alpha": 1.3},
        "seeds": [0],
    })


def _smoke():
    return {
        "name": "smoke",
        "tag": "smoke",
        "model": {"hidden": [32]},
        "data": {"per_class_train": 20, "per_class_test": 20, "size": 16},
        "epochs": 4,
        "optimizer": {"lr0": 1e-3, "lr_period": 1},
        "distill": {"stage1_schedule": _sched("epoch_linear_up", 0.0, 2, 0.5)},
        "seeds": [0, 1],
        "arms": [
            {"label": "baseline", "trainer": "baseline"},
            {"label": "lsr", "trainer": "lsr"},
            {"label": "tf_kd", "trainer": "tf_kd"},
            {"label": "dlb", "trainer": "dlb"},
            {"label": "drrnet_skd", "trainer": "drrnet_skd"},
        ],
    }


PRESETS = {"table1-desk": _table1, "table2-desk": _table2, "trajectory-desk": _trajectory, "smoke": _smoke}


def preset(name: str, sets=()) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    over = PRESETS[name]()
    if sets:
        over = deep_merge(over, parse_set(sets))
    return resolve(over, f"preset {name}")
