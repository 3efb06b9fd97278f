"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and shown in the terminal summary. The trend
and trajectory criteria run the full desk-scale presets and take minutes.
"""
import csv
import io
import math
import time

import mpmath
import numpy as np
import pytest

from conftest import ACCEPTANCE, central_diff, rel_err
from drrskd import harness, losses
from drrskd.awa import AwaConfig, ScheduleSpec, awa_weights, epoch_schedule
from drrskd.data import (CorruptionSpec, apply_speckle, corrupt, gen_speckled_shapes, read_idx, render_shape,
                         write_idx)
from drrskd.distill import TrainConfig, derive_seed, step_baseline, step_drrnet, step_lsr, step_tfkd, train, two_stage
from drrskd.model import BatchNorm, Conv3x3, Dense, Flatten, MaxPool2, ModelSpec, ReLU, build
from drrskd.optim import Adam

N_INSTANCES = 20


def verdict(number, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1. gradients


def _separated(rng, shape, gap=1e-2):
    """Random values whose magnitudes stay clear of ReLU kinks and max-pool ties."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 1.0) * gap * rng.choice([-1.0, 1.0], size=n)
    return (vals + rng.uniform(-gap / 4, gap / 4, size=n)).reshape(shape)


def _layer_errors(layer, x, rng):
    """Worst relative error over the input gradient and every parameter gradient."""
    out = layer.forward(x, True)
    w = rng.normal(size=out.shape)
    for p in layer.params:
        p.zero_grad()
    layer.forward(x, True)
    dx = layer.backward(w)
    f = lambda: float((layer.forward(x, True) * w).sum())  # noqa: E731
    errs = [rel_err(dx, central_diff(f, x))]
    for p in layer.params:
        errs.append(rel_err(p.grad, central_diff(f, p.value)))
    return max(errs)


def _loss_error(fn, z):
    analytic = fn(z).grad
    numeric = central_diff(lambda: fn(z).value, z)
    return rel_err(analytic, numeric)


def test_criterion_1_gradient_suite():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(N_INSTANCES):
        B, F, C = rng.integers(2, 6), rng.integers(2, 7), rng.integers(2, 5)
        record("dense", _layer_errors(Dense(F, C, rng), rng.normal(size=(B, F)), rng))
        record("conv3x3", _layer_errors(Conv3x3(2, 3, rng), rng.normal(size=(B, 2, 5, 5)), rng))
        record("relu", _layer_errors(ReLU(), _separated(rng, (B, F)), rng))
        record("maxpool2", _layer_errors(MaxPool2(), _separated(rng, (B, 2, 4, 4)), rng))
        record("batchnorm-dense", _layer_errors(BatchNorm(F), rng.normal(size=(B, F)), rng))
        record("batchnorm-conv", _layer_errors(BatchNorm(2), rng.normal(size=(B, 2, 3, 3)), rng))
        record("flatten", _layer_errors(Flatten(), rng.normal(size=(B, 2, 3, 3)), rng))
        z = rng.normal(size=(B, C)) * 2
        y = rng.integers(0, C, size=B)
        zt = rng.normal(size=(B, C)) * 2
        tau = float(rng.uniform(0.5, 5))
        record("cross_entropy", _loss_error(lambda v: losses.cross_entropy(v, y), z))
        eps = float(rng.uniform(0.0, 0.5))
        record("lsr", _loss_error(lambda v: losses.lsr_loss(v, y, eps), z))
        record("kl_soft", _loss_error(lambda v: losses.kl_soft(zt, v, tau), z))
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    detail = f"{len(worst)} components x {N_INSTANCES} instances, worst rel err {max(worst.values()):.1e}, " \
             f"{elapsed:.1f}s"
    verdict(1, "layer and loss gradients match central differences", ok, detail)


# ---------------------------------------------------------------- 2. probabilities


def test_criterion_2_probability_and_kl_invariants():
    rng = np.random.default_rng(2)
    checks = []
    for _ in range(200):
        z = rng.normal(size=(6, 5)) * rng.uniform(0.1, 20)
        zt = rng.normal(size=(6, 5)) * 3
        tau = float(rng.uniform(0.5, 8))
        p = losses.softmax(z, tau)
        checks.append(("rows sum to 1", np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-9))
        shift = rng.normal(size=(6, 1)) * 50
        checks.append(("shift invariance", np.max(np.abs(losses.softmax(z + shift, tau) - p)) <= 1e-12))
        kl = losses.kl_soft(zt, z, tau)
        checks.append(("kl >= 0", bool(np.all(kl.per_sample >= 0))))
        checks.append(("kl(z, z) == 0", bool(np.all(losses.kl_soft(z, z, tau).per_sample == 0))))
        # tau^2 factor: the unscaled KL at temperature tau times tau^2
        log_q, log_p = losses.log_softmax(zt, tau), losses.log_softmax(z, tau)
        raw = np.maximum(np.sum(np.exp(log_q) * (log_q - log_p), axis=1), 0.0)
        checks.append(("tau^2 scaling", bool(np.all(kl.per_sample == tau ** 2 * raw))))
    failed = sorted({name for name, ok in checks if not ok})
    verdict(2, "softmax normalisation, shift invariance, KL sign/zero/tau^2",
            not failed, "failed: " + ", ".join(failed) if failed else f"{len(checks)} checks")


# ---------------------------------------------------------------- 3. AWA algebra


def test_criterion_3_awa_algebra():
    rng = np.random.default_rng(3)
    n = 10_000
    l_on = rng.uniform(0.0, 6.0, n)
    l_of = rng.uniform(0.0, 6.0, n)
    alpha = rng.uniform(0.5, 3.0, n)
    t0 = time.perf_counter()
    exact_lb = kd_ok = sum_exact = sum_ulp = within = mono = 0
    for i in range(n):
        cfg = AwaConfig(alpha=float(alpha[i]))
        w = awa_weights([l_on[i]], [l_of[i]], cfg)
        w_lb, w_kd = float(w.w_lb[0]), float(w.w_kd[0])
        exact_lb += w_lb == math.exp(l_of[i] - l_on[i])
        kd_ok += w_kd == max(alpha[i] - w_lb, 0.0)
        if w_lb <= alpha[i]:
            within += 1
            sum_exact += (w_lb + w_kd) == alpha[i]
            sum_ulp += abs((w_lb + w_kd) - alpha[i]) <= math.ulp(alpha[i])
        worse = awa_weights([l_on[i] + 0.25], [l_of[i]], cfg)
        mono += float(worse.w_lb[0]) < w_lb and float(worse.w_kd[0]) >= w_kd
    elapsed = time.perf_counter() - t0
    # correctly rounded reference for a sample: the exp used must be faithful
    mpmath.mp.prec = 120
    faithful = all(abs(float(mpmath.exp(mpmath.mpf(l_of[i] - l_on[i]))) - math.exp(l_of[i] - l_on[i]))
                   <= math.ulp(math.exp(l_of[i] - l_on[i])) for i in range(0, n, 10))
    ok = exact_lb == n and kd_ok == n and sum_ulp == within and mono == n and faithful and elapsed < 1.0
    detail = (f"w_lb exact {exact_lb}/{n}, w_kd exact {kd_ok}/{n}, sum==alpha bit-exact {sum_exact}/{within} "
              f"and within 1 ulp {sum_ulp}/{within}, monotone {mono}/{n}, {elapsed:.2f}s")
    verdict(3, "adaptive weight algebra", ok, detail)


# ---------------------------------------------------------------- 4. schedules


def test_criterion_4_schedule_endpoints():
    checks = []
    for T in (1, 2, 7, 40, 100):
        up, down = ScheduleSpec("epoch_linear_up"), ScheduleSpec("epoch_linear_down")
        checks.append(epoch_schedule(up, 0, T) == 0.0 and epoch_schedule(up, T, T) == 1.0)
        checks.append(epoch_schedule(down, 0, T) == 1.0 and epoch_schedule(down, T, T) == 0.0)
        checks.append(all(epoch_schedule(up, t, T) + epoch_schedule(down, t, T) == 1.0 for t in range(T + 1)))
    warm = ScheduleSpec("epoch_linear_up", 0.0, 50, 0.5)
    checks.append(all(epoch_schedule(warm, t, 100) == 0.5 for t in range(50)))
    checks.append(epoch_schedule(warm, 50, 100) == 0.5 and epoch_schedule(warm, 80, 100) == 0.8)
    verdict(4, "epoch schedule endpoints, complementarity, warmup", all(checks), f"{len(checks)} checks")


# ---------------------------------------------------------------- 5. reductions


def _pair(spec, seed):
    a, b = build(spec, seed), build(spec, seed)
    return (a, Adam(a)), (b, Adam(b))


def _max_delta_gap(m1, m2, before):
    return max(float(np.max(np.abs((p.value - b) - (q.value - b))))
               for p, q, b in zip(m1.params, m2.params, before.values))


def test_criterion_5_reduction_identities():
    rng = np.random.default_rng(5)
    spec = ModelSpec("mlp", (1, 6, 6), (7,), 3)
    gaps = {}
    for trial in range(5):
        x, y = rng.uniform(size=(8, 1, 6, 6)), rng.integers(0, 3, 8)
        (m1, o1), (m2, o2) = _pair(spec, trial)
        before = m1.snapshot()
        teacher = build(spec, 99)
        teacher.freeze()
        prev = build(spec, 77).snapshot()
        step_baseline(m1, o1, (x, y), 0.01)
        step_drrnet(m2, o2, teacher, prev, (x, y), 0.01, AwaConfig(), 3.0, fixed_weights=(0.0, 0.0))
        gaps["drrnet(w=0)"] = max(gaps.get("drrnet(w=0)", 0.0), _max_delta_gap(m1, m2, before))

        (m1, o1), (m2, o2) = _pair(spec, trial)
        step_baseline(m1, o1, (x, y), 0.01)
        step_tfkd(m2, o2, teacher, (x, y), 0.01, ScheduleSpec("fixed", 0.0), 3.0, 0, 10)
        gaps["tf_kd(a=0)"] = max(gaps.get("tf_kd(a=0)", 0.0), _max_delta_gap(m1, m2, before))

        (m1, o1), (m2, o2) = _pair(spec, trial)
        step_baseline(m1, o1, (x, y), 0.01)
        step_lsr(m2, o2, (x, y), 0.01, 0.0)
        gaps["lsr step(eps=0)"] = max(gaps.get("lsr step(eps=0)", 0.0), _max_delta_gap(m1, m2, before))

        z = rng.normal(size=(8, 3)) * 3
        a, b = losses.lsr_loss(z, y, 0.0), losses.cross_entropy(z, y)
        gaps["lsr loss(eps=0)"] = max(gaps.get("lsr loss(eps=0)", 0.0), abs(a.value - b.value),
                                      float(np.max(np.abs(a.grad - b.grad))))
    ok = all(g <= 1e-12 for g in gaps.values())
    verdict(5, "zero-weight reductions equal the baseline step", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()))


# ---------------------------------------------------------------- 6. frozen teacher


def test_criterion_6_frozen_teacher_invariance():
    tr = gen_speckled_shapes(3, 12, 16, 2, seed=1)
    te = gen_speckled_shapes(3, 6, 16, 2, seed=2, split_tag="test")
    spec = ModelSpec("mlp", tr.input_shape, (16,), 3)
    cfg = TrainConfig(epochs=3, lr0=1e-3, lr_period=1, seed=4)
    offline = build(spec, derive_seed(4, "init"))
    rec1 = train("dlb", offline, tr, te, cfg)
    offline.freeze()
    before = offline.param_hash()
    res = two_stage(spec, tr, te, cfg, offline=(offline, rec1))
    after = res.offline.param_hash()
    ok = before == after == res.stage2.meta["offline_hash"] and len(res.stage2.iterations) > 0
    verdict(6, "offline student hash unchanged by stage 2", ok, f"sha256 {before[:12]}")


# ---------------------------------------------------------------- 7. determinism


@pytest.mark.parametrize("name", ["smoke", "trajectory-desk"])
def test_criterion_7_preset_determinism(name, tmp_path):
    cfg = harness.preset(name)
    harness.run_experiment(cfg, tmp_path / "a", echo=None)
    harness.run_experiment(cfg, tmp_path / "b", echo=None)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = all(same) and {"summary.csv", "trajectory.csv"} <= {str(f) for f in files}
    verdict(7, f"preset {name} reproduces every output byte-for-byte", ok, f"{sum(same)}/{len(files)} files equal")


# ---------------------------------------------------------------- 8. trends


@pytest.fixture(scope="module")
def desk_tables(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    t1 = harness.run_experiment(harness.preset("table1-desk"), root / "table1", echo=None)
    t2 = harness.run_experiment(harness.preset("table2-desk"), root / "table2", echo=None)
    return t1, t2, time.perf_counter() - t0


def _accs(result, label):
    return [r.final_test_acc for r in result.records[label]]


def test_criterion_8a_unfixed_dlb_beats_fixed(desk_tables):
    t1, _, elapsed = desk_tables
    unfixed, fixed = np.mean(_accs(t1, "dlb-unfixed")), np.mean(_accs(t1, "dlb-fixed-0.3"))
    ok = unfixed >= fixed and elapsed <= 900
    verdict("8a", "mean acc DLB-unfixed >= DLB-fixed(0.3)", ok,
            f"{unfixed:.2f} vs {fixed:.2f}; both presets {elapsed:.0f}s")


def test_criterion_8b_drrnet_beats_baseline_and_dlb(desk_tables):
    _, t2, elapsed = desk_tables
    drr, base, dlb = _accs(t2, "drrnet_skd"), _accs(t2, "baseline"), _accs(t2, "dlb")
    wins = sum(a >= b for a, b in zip(drr, dlb))
    ok = np.mean(drr) >= np.mean(base) and wins >= 4 and len(drr) == 5 and elapsed <= 900
    verdict("8b", "drrnet_skd >= baseline (mean) and >= dlb in >= 4/5 seeds", ok,
            f"drr {np.mean(drr):.2f}, baseline {np.mean(base):.2f}, dlb {np.mean(dlb):.2f}, "
            f"paired wins {wins}/5; both presets {elapsed:.0f}s")


# ---------------------------------------------------------------- 9. trajectory


def test_criterion_9_weight_trajectory(tmp_path):
    cfg = harness.preset("trajectory-desk")
    alpha = cfg["distill"]["alpha"]
    harness.run_experiment(cfg, tmp_path, echo=None)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "trajectory.csv").read_text())))
    w_lb = np.array([float(r["w_lb"]) for r in rows])
    w_kd = np.array([float(r["w_kd"]) for r in rows])
    half = len(w_lb) // 2
    slope = np.polyfit(np.arange(half), w_lb[:half], 1)[0]
    rowwise = float(np.max(np.abs(w_kd - np.maximum(alpha - w_lb, 0.0))))
    ok = (len(rows) == cfg["epochs"] and slope > 0 and 0.5 < w_lb[-1] <= alpha and rowwise <= 1e-9)
    verdict(9, "w_lb rises over the first half and ends in (0.5, alpha]", ok,
            f"{len(rows)} rows, slope {slope:.4f}/epoch, final {w_lb[-1]:.3f}, row-wise gap {rowwise:.1e}")


# ---------------------------------------------------------------- 10. data


def test_criterion_10_data_layer(tmp_path):
    d = gen_speckled_shapes(3, 20, 32, 2, seed=10)
    write_idx(d, tmp_path / "img.idx", tmp_path / "lbl.idx")
    back = read_idx(tmp_path / "img.idx", tmp_path / "lbl.idx")
    roundtrip = np.array_equal(back.images, d.images) and np.array_equal(back.labels, d.labels)

    rng = np.random.default_rng(10)
    clean = np.stack([render_shape("rectangle", 32, 0.0, 1.0).astype(np.float64)] * 60)
    noisy = apply_speckle(clean, 1, rng)
    bright = clean > 0.5 * clean.max()
    ratio = noisy[bright].mean() / clean[bright].mean()
    speckle_ok = bright.sum() >= 10_000 and abs(ratio - 1) <= 0.05

    flips = []
    for rate in (0.0, 0.1, 0.2, 0.35):
        base = gen_speckled_shapes(3, 40, 16, 2, seed=3)
        out = corrupt(base, CorruptionSpec(None, rate, None, seed=5))
        flips.append(int((out.labels != base.labels).sum()) == math.floor(rate * len(base)))
    ok = roundtrip and speckle_ok and all(flips)
    verdict(10, "IDX round-trip, unit-mean speckle, exact label flips", ok,
            f"round-trip {roundtrip}, speckle mean ratio {ratio:.4f} over {int(bright.sum())} px, "
            f"flip counts exact {sum(flips)}/{len(flips)}")
