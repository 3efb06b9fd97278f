"""Per-iteration objectives for the five trainers and the training loops.

Trainers:

* ``baseline``   cross entropy only
* ``lsr``        label-smoothed cross entropy
* ``tf_kd``      ``(1 - a) * CE + a * KD`` against a frozen pre-trained peer
* ``dlb``        ``CE + a * LB`` where LB replays the previous batch against
                 the logits cached when that batch was trained on
* ``drrnet_skd`` ``CE + mean(w_lb * LB) + mean(w_kd * KD)`` with the online
                 teacher being the previous-iteration parameters evaluated on
                 the current batch and the weights set adaptively per sample
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses
from .awa import AwaConfig, ScheduleSpec, awa_weights, epoch_schedule
from .data import batches
from .errors import ConfigError, DataError, FrozenModelError, ShapeError
from .model import Model, Snapshot, build, restore_into
from .optim import DEFAULT_DECAY, DEFAULT_LR, DEFAULT_PERIOD, Adam, lr_at

TRAINER_KINDS = ("baseline", "lsr", "tf_kd", "dlb", "drrnet_skd")
RECORD_SCHEMA = 1


def derive_seed(seed: int, *keys: str) -> int:
    """Independent, reproducible 32-bit seed for a named sub-stream of ``seed``."""
    words = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(k.encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class IterationLog:
    epoch: int
    iter: int
    loss_total: float
    loss_ce: float
    loss_lb: float = 0.0
    loss_kd: float = 0.0
    w_lb_mean: float = 0.0
    w_kd_mean: float = 0.0
    distilled: bool = False
    per_sample: dict | None = None

    def to_json(self, with_per_sample=True) -> dict:
        d = asdict(self)
        if self.per_sample is None or not with_per_sample:
            d.pop("per_sample")
        else:
            d["per_sample"] = {k: np.asarray(v).tolist() for k, v in self.per_sample.items()}
        return d


@dataclass
class BatchCache:
    inputs: np.ndarray
    labels: np.ndarray
    logits: np.ndarray


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr0: float = DEFAULT_LR
    lr_decay: float = DEFAULT_DECAY
    lr_period: int = DEFAULT_PERIOD
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    tau: float = losses.DEFAULT_TAU
    lsr_eps: float = 0.1
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("fixed", 0.5))
    awa: AwaConfig = field(default_factory=AwaConfig)
    drrnet_fixed_weights: tuple | None = None
    reset_snapshot_each_epoch: bool = False
    log_per_sample: bool = False
    stream: str = ""

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


# ---------------------------------------------------------------- single steps


def _check_trainable(model: Model):
    if model.frozen:
        raise FrozenModelError("cannot train a frozen model")


def _check_teacher(student: Model, teacher: Model, role: str):
    if not teacher.frozen:
        raise ConfigError(f"the {role} must be frozen")
    if teacher.spec.num_classes != student.spec.num_classes:
        raise ShapeError(f"{role} and student disagree on num_classes")


def _apply(model: Model, opt: Adam, grad: np.ndarray, lr: float):
    model.zero_grad()
    model.backward(grad)
    opt.step(lr)


def step_baseline(model, opt, batch, lr, *, epoch=0, it=0) -> IterationLog:
    _check_trainable(model)
    x, y = batch
    ce = losses.cross_entropy(model.forward(x), y)
    _apply(model, opt, ce.grad, lr)
    return IterationLog(epoch, it, ce.value, ce.value)


def step_lsr(model, opt, batch, lr, eps, *, epoch=0, it=0) -> IterationLog:
    _check_trainable(model)
    x, y = batch
    ls = losses.lsr_loss(model.forward(x), y, eps)
    _apply(model, opt, ls.grad, lr)
    return IterationLog(epoch, it, ls.value, ls.value)


def step_tfkd(model, opt, teacher, batch, lr, weight_schedule: ScheduleSpec, tau, t, T,
              *, epoch=0, it=0) -> IterationLog:
    _check_trainable(model)
    _check_teacher(model, teacher, "Tf-KD teacher")
    a = epoch_schedule(weight_schedule, t, T)
    x, y = batch
    z_t = teacher.forward(x)
    z = model.forward(x)
    ce = losses.cross_entropy(z, y)
    kd = losses.kl_soft(z_t, z, tau)
    total = (1.0 - a) * ce.value + a * kd.value
    _apply(model, opt, (1.0 - a) * ce.grad + a * kd.grad, lr)
    return IterationLog(epoch, it, total, ce.value, 0.0, kd.value, 0.0, a, distilled=True)


def step_dlb(model, opt, cache: BatchCache | None, batch, lr, weight_schedule: ScheduleSpec, tau, t, T,
             *, epoch=0, it=0):
    """One last-batch distillation step; returns ``(log, new_cache)``.

    The current batch and the cached previous batch go through a single
    forward pass; the cached logits act as the teacher for the replayed rows.
    """
    _check_trainable(model)
    x, y = batch
    a = epoch_schedule(weight_schedule, t, T)
    B = x.shape[0]
    if cache is None:
        z = model.forward(x)
        ce = losses.cross_entropy(z, y)
        _apply(model, opt, ce.grad, lr)
        log = IterationLog(epoch, it, ce.value, ce.value, 0.0, 0.0, a, 0.0)
        return log, BatchCache(x.copy(), y.copy(), z.copy())

    z_all = model.forward(np.concatenate([x, cache.inputs]))
    z, z_replay = z_all[:B], z_all[B:]
    ce = losses.cross_entropy(z, y)
    lb = losses.kl_soft(cache.logits, z_replay, tau)
    grad = np.concatenate([ce.grad, a * lb.grad])
    _apply(model, opt, grad, lr)
    log = IterationLog(epoch, it, ce.value + a * lb.value, ce.value, lb.value, 0.0, a, 0.0, distilled=True)
    return log, BatchCache(x.copy(), y.copy(), z.copy())


def step_drrnet(model, opt, offline, prev_snapshot: Snapshot | None, batch, lr, awa_cfg: AwaConfig, tau,
                *, evaluator: Model | None = None, fixed_weights=None, epoch=0, it=0,
                keep_per_sample=False):
    """One step of the double-reverse objective; returns ``(log, snapshot)``.

    The returned snapshot holds the parameters from before this step and is
    what the next iteration uses as its online teacher. ``fixed_weights``
    ``(w_lb, w_kd)`` bypasses the adaptive assignment.
    """
    _check_trainable(model)
    _check_teacher(model, offline, "offline student")
    x, y = batch
    before = model.snapshot()
    z = model.forward(x)
    ce = losses.cross_entropy(z, y)
    if prev_snapshot is None:
        _apply(model, opt, ce.grad, lr)
        per = {"ce": ce.per_sample} if keep_per_sample else None
        return IterationLog(epoch, it, ce.value, ce.value, per_sample=per), before

    if evaluator is None:
        evaluator = build(model.spec, 0)
    restore_into(evaluator, prev_snapshot)
    evaluator.eval()
    z_prev = evaluator.forward(x)
    z_off = offline.forward(x)

    l_on = losses.soft_target_ce(z_prev, y, awa_cfg.alpha_tau, awa_cfg.soften)
    l_of = losses.soft_target_ce(z_off, y, awa_cfg.alpha_tau, awa_cfg.soften)
    if fixed_weights is None:
        w = awa_weights(l_on, l_of, awa_cfg)
        w_lb, w_kd = w.w_lb, w.w_kd
    else:
        w_lb, w_kd = fixed_weights
    B = x.shape[0]
    w_lb = np.broadcast_to(np.asarray(w_lb, dtype=np.float64), (B,))
    w_kd = np.broadcast_to(np.asarray(w_kd, dtype=np.float64), (B,))

    lb = losses.kl_soft(z_prev, z, tau)
    kd = losses.kl_soft(z_off, z, tau)
    total = ce.value + float(np.mean(w_lb * lb.per_sample)) + float(np.mean(w_kd * kd.per_sample))
    grad = ce.grad + (w_lb[:, None] * lb.grad_per_sample + w_kd[:, None] * kd.grad_per_sample) / B
    _apply(model, opt, grad, lr)

    per = None
    if keep_per_sample:
        per = {"ce": ce.per_sample, "lb": lb.per_sample, "kd": kd.per_sample,
               "w_lb": w_lb.copy(), "w_kd": w_kd.copy(), "l_on": l_on, "l_of": l_of}
    log = IterationLog(epoch, it, total, ce.value, lb.value, kd.value,
                       float(w_lb.mean()), float(w_kd.mean()), True, per)
    return log, before


# ---------------------------------------------------------------- run records


@dataclass
class RunRecord:
    kind: str
    seed: int
    epochs: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1]["test_acc"]

    def weight_trajectory(self):
        """``(epoch, w_lb, w_kd)`` of the first distilled iteration in each training epoch."""
        if not self.iterations:
            raise DataError("run record holds no iteration logs")
        rows, seen = [], set()
        for it in self.iterations:
            if it.distilled and it.epoch not in seen:
                seen.add(it.epoch)
                rows.append((it.epoch, it.w_lb_mean, it.w_kd_mean))
        if not rows:
            raise DataError(f"no adaptive weights were logged by a {self.kind} run")
        return rows

    def to_jsonl(self, path, with_per_sample=True) -> None:
        with open(path, "w") as f:
            header = {"type": "header", "schema": RECORD_SCHEMA, "kind": self.kind, "seed": self.seed,
                      "meta": self.meta}
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for e in self.epochs:
                f.write(json.dumps({"type": "epoch", **e}, sort_keys=True) + "\n")
            for it in self.iterations:
                f.write(json.dumps({"type": "iter", **it.to_json(with_per_sample)}, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunRecord":
        rec = None
        with open(path) as f:
            for n, line in enumerate(f, 1):
                try:
                    obj = json.loads(line)
                except ValueError as exc:
                    raise DataError(f"{path}:{n}: {exc}") from None
                kind = obj.pop("type", None)
                if kind == "header":
                    if obj.get("schema") != RECORD_SCHEMA:
                        raise DataError(f"{path}: unsupported record schema {obj.get('schema')}")
                    rec = cls(obj["kind"], obj["seed"], meta=obj.get("meta", {}))
                elif rec is None:
                    raise DataError(f"{path}:{n}: record before header")
                elif kind == "epoch":
                    rec.epochs.append(obj)
                elif kind == "iter":
                    per = obj.pop("per_sample", None)
                    if per is not None:
                        per = {k: np.asarray(v) for k, v in per.items()}
                    rec.iterations.append(IterationLog(**obj, per_sample=per))
                else:
                    raise DataError(f"{path}:{n}: unknown record type {kind!r}")
        if rec is None:
            raise DataError(f"{path}: empty record stream")
        return rec


# ---------------------------------------------------------------- loops


def accuracy(model: Model, data, chunk=512) -> float:
    """Top-1 accuracy in percent, evaluated in eval mode."""
    prev = model.mode
    model.eval()
    hits = 0
    for i in range(0, len(data), chunk):
        z = model.forward(data.images[i:i + chunk])
        hits += int((np.argmax(z, axis=1) == data.labels[i:i + chunk]).sum())
    if prev == "train" and not model.frozen:
        model.train()
    return 100.0 * hits / len(data)


def train(kind: str, model: Model, train_data, test_data, cfg: TrainConfig,
          teacher: Model | None = None) -> RunRecord:
    """Full training loop: seeded shuffles, step-decayed lr, per-epoch evaluation.

    Epoch entry 0 is the evaluation before any training.
    """
    if kind not in TRAINER_KINDS:
        raise ConfigError(f"unknown trainer {kind!r}")
    if kind in ("tf_kd", "drrnet_skd"):
        if teacher is None:
            raise ConfigError(f"{kind} needs a frozen teacher model")
        _check_teacher(model, teacher, "teacher")
    _check_trainable(model)
    model.train()
    opt = Adam(model, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rec = RunRecord(kind, cfg.seed)
    rec.epochs.append({"epoch": 0, "lr": None, "train_loss": None,
                       "train_acc": accuracy(model, train_data), "test_acc": accuracy(model, test_data),
                       "w_lb_mean": None, "w_kd_mean": None})
    T = cfg.epochs
    evaluator = build(model.spec, 0) if kind == "drrnet_skd" else None
    snapshot, cache = None, None
    it = 0
    for e in range(T):
        lr = lr_at(e, cfg.lr0, cfg.lr_decay, cfg.lr_period)
        cache = None
        if cfg.reset_snapshot_each_epoch:
            snapshot = None
        logs = []
        for batch in batches(train_data, cfg.batch_size, derive_seed(cfg.seed, cfg.stream, "shuffle", str(e))):
            kw = {"epoch": e, "it": it}
            if kind == "baseline":
                log = step_baseline(model, opt, batch, lr, **kw)
            elif kind == "lsr":
                log = step_lsr(model, opt, batch, lr, cfg.lsr_eps, **kw)
            elif kind == "tf_kd":
                log = step_tfkd(model, opt, teacher, batch, lr, cfg.schedule, cfg.tau, e, T, **kw)
            elif kind == "dlb":
                log, cache = step_dlb(model, opt, cache, batch, lr, cfg.schedule, cfg.tau, e, T, **kw)
            else:
                log, snapshot = step_drrnet(model, opt, teacher, snapshot, batch, lr, cfg.awa, cfg.tau,
                                            evaluator=evaluator, fixed_weights=cfg.drrnet_fixed_weights,
                                            keep_per_sample=cfg.log_per_sample, **kw)
            logs.append(log)
            it += 1
        rec.iterations.extend(logs)
        distilled = [g for g in logs if g.distilled]
        rec.epochs.append({
            "epoch": e + 1,
            "lr": lr,
            "train_loss": float(np.mean([g.loss_total for g in logs])),
            "train_acc": accuracy(model, train_data),
            "test_acc": accuracy(model, test_data),
            "w_lb_mean": float(np.mean([g.w_lb_mean for g in distilled])) if distilled else None,
            "w_kd_mean": float(np.mean([g.w_kd_mean for g in distilled])) if distilled else None,
        })
    return rec


@dataclass
class TwoStageResult:
    offline: Model
    student: Model
    stage1: RunRecord
    stage2: RunRecord


def two_stage(spec, train_data, test_data, cfg: TrainConfig, stage1_cfg: TrainConfig | None = None,
              offline: tuple | None = None) -> TwoStageResult:
    """Pre-train an offline student with DLB, freeze it, then train a fresh student with DRRNet-SKD.

    ``offline`` may pass an already trained ``(model, record)`` pair, which
    then replaces stage one.
    """
    if offline is None:
        s1 = stage1_cfg or cfg
        model = build(spec, derive_seed(s1.seed, "init"))
        rec1 = train("dlb", model, train_data, test_data, s1)
    else:
        model, rec1 = offline
    offline = model
    if not offline.frozen:
        offline.freeze()
    cfg2 = replace(cfg, stream="stage2")
    student = build(spec, derive_seed(cfg.seed, "stage2", "init"))
    rec2 = train("drrnet_skd", student, train_data, test_data, cfg2, teacher=offline)
    rec2.meta["offline_hash"] = offline.param_hash()
    return TwoStageResult(offline, student, rec1, rec2)
