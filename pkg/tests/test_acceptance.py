"""Acceptance gate: the product-level claims, each at its stated tolerance.

One test per claim, in order; each prints a single pass/fail line with the
measured value (visible with -s, or in the failure report).  Claims 3-6 are
directional training comparisons and take minutes each; everything else
runs in seconds.  Claims 5 and 6 share one set of training runs.
"""

import csv
import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from mb2d import backend, cli, experiments as ex, metrics as M, models, training
from mb2d.blursynth import BlurSpec, synthesize_blur
from mb2d.nn import autograd as ag
from mb2d.scenegen import FrameSequence
from oracles import naive_blur, reference_ssim

MICRO_CFG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "micro.yaml")


def _verdict(name: str, ok: bool, detail: str):
    line = f"[accept] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def predictor_cache(tmp_path_factory):
    """Trained blur predictors shared between the comparison studies."""
    return str(tmp_path_factory.mktemp("predictor_cache"))


# -- 1: exposure-ladder synthesis -------------------------------------------


def test_01_blur_synthesis_matches_naive_accumulation():
    t0 = time.time()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(9, 18))
        seq = FrameSequence(frames=rng.random((t, 8, 9, 3), dtype=np.float32), meta={})
        crf = ("identity", "gamma")[int(rng.integers(2))]
        for m in (1, 3, 5, 7):
            center = int(rng.integers(m // 2, t - m // 2))
            got = synthesize_blur(seq, center, m, crf)
            want = naive_blur(seq.frames, center, m, crf)
            worst = max(worst, float(np.abs(got.astype(np.float64) - want).max()))
    dt = time.time() - t0
    _verdict("blur synthesis vs naive accumulation",
             worst < 1e-6 and dt < 60,
             f"max abs err {worst:.2e} over 100 random sequences, need < 1e-6; {dt:.1f}s")


# -- 2: more blur removes high-frequency energy ------------------------------


def test_02_synthesized_ladder_high_band_monotone(tmp_path):
    t0 = time.time()
    plan = ex.desk_plan("spectral")
    plan.mbrnn_train = None  # the claim is about synthesis, no predictor needed
    result = ex.run_spectral(plan, str(tmp_path))
    frac, n = result["monotone_fraction"], result["samples"]
    dt = time.time() - t0
    _verdict("high-band energy non-increasing along the ladder",
             frac >= 0.95 and dt < 120,
             f"monotone on {frac:.1%} of {n} samples, need >= 95%; {dt:.1f}s")


# -- 3: ideal long exposures help restoration --------------------------------


def test_03_ideal_long_exposures_lift_restoration(tmp_path):
    t0 = time.time()
    plan = ex.desk_plan("ideal_multiblur", seeds=(0, 1, 2))
    # the claim compares the bare input set against three extra exposures
    plan.arms = [a for a in plan.arms if a["name"] in ("Set1", "Set4")]
    reports = ex.run_experiment(plan, str(tmp_path))
    gap = reports["Set4"].psnr_mean - reports["Set1"].psnr_mean
    dt = time.time() - t0
    _verdict("ideal more-blurred inputs lift restoration",
             gap > 0.3 and dt < 3600,
             f"Set4 - Set1 = {gap:+.3f} dB over 3 seeds, need > +0.3 dB; {dt:.0f}s")


# -- 4: neighbor frames help the blur predictor ------------------------------


def test_04_three_frame_predictor_beats_one_frame(tmp_path, predictor_cache):
    t0 = time.time()
    plan = ex.desk_plan("mbrnn_frames", seeds=(0, 1, 2))
    reports = ex.run_experiment(plan, str(tmp_path), cache_dir=predictor_cache)
    lm1 = reports["1frame"].extra["level_means"]
    lm3 = reports["3frame"].extra["level_means"]
    gaps = [b - a for a, b in zip(lm1, lm3)]
    dt = time.time() - t0
    _verdict("three input frames beat one at every exposure level",
             all(g > 0 for g in gaps) and gaps[-1] >= gaps[0] and dt < 3600,
             f"gaps per level {[f'{g:+.2f}' for g in gaps]} dB, need all > 0 and "
             f"last >= first; {dt:.0f}s")


# -- 5 + 6: input-set ablation (shared runs) ---------------------------------


@pytest.fixture(scope="module")
def ablation_runs(tmp_path_factory, predictor_cache):
    t0 = time.time()
    plan = ex.desk_plan("ablation_nif_crfm", seeds=(0, 1, 2))
    out = tmp_path_factory.mktemp("ablation")
    reports = ex.run_experiment(plan, str(out), cache_dir=predictor_cache)
    return reports, time.time() - t0


def test_05_recurrent_features_lift_restoration(ablation_runs):
    reports, dt = ablation_runs
    gap = reports["e_predblur_crfm"].psnr_mean - reports["d_predblur"].psnr_mean
    _verdict("recurrent feature bridge lifts restoration",
             gap > 0 and dt < 3600,
             f"with - without features = {gap:+.3f} dB over 3 seeds, need > 0; "
             f"shared runs took {dt:.0f}s")


def test_06_input_set_ablation_ordering(ablation_runs):
    reports, _dt = ablation_runs
    names = ["a_1frame", "b_3frame", "d_predblur", "e_predblur_crfm"]
    means = [reports[n].psnr_mean for n in names]
    ok = all(x < y for x, y in zip(means, means[1:]))
    _verdict("ablation arm means strictly ordered",
             ok,
             "a < b < d < e: " + " < ".join(f"{v:.2f}" for v in means)
             if ok else "ordering violated: " + ", ".join(
                 f"{n}={v:.2f}" for n, v in zip(names, means)))


# -- 7: training-loss gradients ----------------------------------------------


def _central_diff_check(params, loss_fn, n_samples, rng, h=1e-5):
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }
    keys = list(params)
    sizes = np.array([params[k].data.size for k in keys])
    flat_total = int(sizes.sum())
    picks = rng.choice(flat_total, size=min(n_samples, flat_total), replace=False)
    bounds = np.cumsum(sizes)
    rels = []
    for flat in picks:
        ki = int(np.searchsorted(bounds, flat, side="right"))
        off = int(flat - (bounds[ki - 1] if ki else 0))
        p = params[keys[ki]]
        old = p.data.flat[off]
        p.data.flat[off] = old + h
        lp = float(loss_fn().data)
        p.data.flat[off] = old - h
        lm = float(loss_fn().data)
        p.data.flat[off] = old
        fd = (lp - lm) / (2 * h)
        an = float(analytic[keys[ki]].flat[off])
        rels.append(abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return np.asarray(rels)


def _randomize_heads(state, rng, scale=0.05):
    for name, p in state.net.params.items():
        if name.startswith("head_"):
            p.data = rng.normal(0.0, scale, p.data.shape)


def test_07_loss_gradients_match_finite_differences():
    t0 = time.time()
    old = backend.get_backend()
    backend.set_backend("numpy")  # no point compiling kernels for float64 micro nets
    try:
        rng = np.random.default_rng(77)

        mb = models.make_mbrnn(base_channels=2, levels=2, feature_channels=2,
                               num_input_frames=3, seed=1, dtype=np.float64)
        _randomize_heads(mb, rng)
        frames = rng.uniform(0.2, 0.8, (1, 9, 16, 16))
        targets = [rng.uniform(0.0, 1.0, (1, 3, 16, 16)) for _ in range(3)]

        def mbrnn_case():
            blurs, _ = models.mbrnn_unroll(mb, frames)
            return training.mbrnn_loss(blurs, targets)

        rel_mb = _central_diff_check(mb.net.params, mbrnn_case, 200, rng)

        ms = models.make_msdr(base_channels=2, levels=2, feature_channels=2,
                              use_crfm=True, seed=2, dtype=np.float64)
        _randomize_heads(ms, rng)
        bn = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
        blurs = rng.uniform(0.2, 0.8, (1, 9, 16, 16))
        crfm = rng.uniform(0.0, 1.0, (1, 6, 16, 16))
        sharp = rng.uniform(0.0, 1.0, (1, 3, 16, 16))

        def msdr_case():
            outs = models.msdr_run(ms, bn, blurs, crfm)
            return training.msdr_loss(outs, sharp)

        rel_ms = _central_diff_check(ms.net.params, msdr_case, 200, rng)
    finally:
        backend.set_backend(old)
    rels = np.concatenate([rel_mb, rel_ms])
    frac_ok = float(np.mean(rels < 1e-3))
    dt = time.time() - t0
    _verdict("loss gradients vs central differences",
             frac_ok >= 0.99 and dt < 300,
             f"{frac_ok:.1%} of {rels.size} sampled parameters under 1e-3 "
             f"(worst rel err {rels.max():.1e}); {dt:.1f}s")


# -- 8: structural invariants ------------------------------------------------


def test_08_structural_invariants():
    t0 = time.time()
    rng = np.random.default_rng(8)
    checks = []

    # one parameter set serves every recurrence level
    mb = models.make_mbrnn(base_channels=2, levels=2, feature_channels=2, seed=3)
    _randomize_heads(mb, rng)
    frames = rng.uniform(0.2, 0.8, (2, 9, 16, 16)).astype(np.float32)
    one, _ = models.mbrnn_unroll(mb, frames, n_levels=1)
    three, rfm = models.mbrnn_unroll(mb, frames, n_levels=3)
    checks.append(("shared weights reproduce level 1",
                   np.array_equal(one[0].data, three[0].data)))
    for p in mb.net.params.values():
        p.zero_grad()
    tgt = rng.random((2, 3, 16, 16)).astype(np.float32)
    training.mbrnn_loss([three[-1]], [tgt]).backward()
    checks.append(("deepest level reaches every predictor weight",
                   all(p.grad is not None and np.any(p.grad != 0)
                       for p in mb.net.params.values())))

    # one parameter set serves every scale
    ms = models.make_msdr(base_channels=2, levels=2, feature_channels=2, seed=4)
    _randomize_heads(ms, rng)
    bn = rng.uniform(0.2, 0.8, (1, 3, 16, 16)).astype(np.float32)
    crfm_in = rng.uniform(0.0, 1.0, (1, 6, 16, 16)).astype(np.float32)
    outs = models.msdr_run(ms, bn, np.repeat(bn, 3, axis=1), crfm_in)
    for p in ms.net.params.values():
        p.zero_grad()
    training.msdr_loss(outs, rng.random((1, 3, 16, 16)).astype(np.float32)).backward()
    checks.append(("finest scale reaches every restorer weight",
                   all(p.grad is not None and np.any(p.grad != 0)
                       for p in ms.net.params.values())))

    # output shapes and ranges
    checks.append(("ladder shapes", all(b.shape == (2, 3, 16, 16) for b in three)))
    checks.append(("feature bridge shape", rfm.crfm.shape == (2, 6, 16, 16)))
    checks.append(("pyramid shapes",
                   [o.shape for o in outs] == [(1, 3, 4, 4), (1, 3, 8, 8), (1, 3, 16, 16)]))
    wild = models.make_mbrnn(base_channels=2, levels=2, feature_channels=2, seed=5)
    for p in wild.net.params.values():
        p.data = rng.normal(0, 0.5, p.data.shape).astype(np.float32)
    preds, _ = models.mbrnn_predict(wild, frames)
    lo = min(float(b.min()) for b in preds)
    hi = max(float(b.max()) for b in preds)
    checks.append(("outputs clamped to [0,1]", 0.0 <= lo and hi <= 1.0))

    # zero-initialized heads are an exact identity residual
    fresh_mb = models.make_mbrnn(base_channels=2, levels=2, feature_channels=2, seed=6)
    center = frames[:, 3:6]
    preds, crfm = models.mbrnn_predict(fresh_mb, frames)
    checks.append(("fresh predictor returns the reference frame",
                   all(np.array_equal(b, center) for b in preds)
                   and not crfm.any()))
    fresh_ms = models.make_msdr(base_channels=2, levels=2, feature_channels=2, seed=7)
    outs = models.msdr_run(fresh_ms, bn, np.repeat(bn, 3, axis=1),
                           np.zeros((1, 6, 16, 16), np.float32))
    coarsest = ag.downsample2(ag.downsample2(ag.const(bn))).data
    ident = np.array_equal(outs[0].data, coarsest)
    for a, b in zip(outs, outs[1:]):
        ident = ident and np.array_equal(b.data, ag.upsample2(a).data)
    checks.append(("fresh restorer passes the pyramid through", ident))

    dt = time.time() - t0
    failed = [name for name, ok in checks if not ok]
    _verdict("structural invariants",
             not failed and dt < 60,
             f"{len(checks)} checks" + (f", failed: {failed}" if failed else "") +
             f"; {dt:.1f}s")


# -- 9: metric correctness ---------------------------------------------------


def test_09_metric_implementations_are_correct():
    t0 = time.time()
    rng = np.random.default_rng(9)
    a = np.zeros((24, 24, 3))
    b = np.full((24, 24, 3), 0.1)
    psnr_err = abs(M.psnr(a, b) - 20.0)
    img = rng.random((48, 48, 3))
    ssim_self = M.ssim(img, img)
    worst_ref = 0.0
    for _ in range(3):
        x = rng.random((40, 44, 3))
        y = np.clip(x + rng.normal(0, 0.08, x.shape), 0, 1)
        worst_ref = max(worst_ref, abs(M.ssim(x, y) - reference_ssim(x, y)))
    dt = time.time() - t0
    _verdict("metric implementations",
             psnr_err <= 1e-6 and ssim_self == 1.0 and worst_ref <= 1e-4 and dt < 60,
             f"uniform-diff PSNR err {psnr_err:.1e} (need <= 1e-6), self-SSIM "
             f"{ssim_self}, vs sliding-window reference {worst_ref:.2e} "
             f"(need <= 1e-4); {dt:.1f}s")


# -- 10: end-to-end determinism ----------------------------------------------


def _metrics_rows_without_wall_clock(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r.pop("wall_clock", None)
    return rows


def _run_micro_pipeline(root):
    d = {name: os.path.join(root, name)
         for name in ("scenes", "data", "mbrnn", "msdr", "eval")}
    assert cli.main(["gen-scenes", "--config", MICRO_CFG, "--out", d["scenes"]]) == 0
    assert cli.main(["synth-data", "--config", MICRO_CFG, "--scenes", d["scenes"],
                     "--out", d["data"]]) == 0
    assert cli.main(["train", "--config", MICRO_CFG, "--stage", "mbrnn",
                     "--data", d["data"], "--out", d["mbrnn"]]) == 0
    mb = os.path.join(d["mbrnn"], "checkpoints", "mbrnn_final")
    assert cli.main(["train", "--config", MICRO_CFG, "--stage", "msdr",
                     "--data", d["data"], "--mbrnn", mb, "--out", d["msdr"]]) == 0
    assert cli.main(["eval", "--mbrnn", mb,
                     "--msdr", os.path.join(d["msdr"], "checkpoints", "msdr_final"),
                     "--data", d["data"], "--out", d["eval"]]) == 0
    return d


def test_10_pipeline_rerun_is_deterministic(tmp_path):
    t0 = time.time()
    a = _run_micro_pipeline(str(tmp_path / "run_a"))
    b = _run_micro_pipeline(str(tmp_path / "run_b"))
    same_manifest = (open(os.path.join(a["data"], "manifest.json")).read()
                     == open(os.path.join(b["data"], "manifest.json")).read())
    same_metrics = all(
        _metrics_rows_without_wall_clock(os.path.join(a[s], "metrics.csv"))
        == _metrics_rows_without_wall_clock(os.path.join(b[s], "metrics.csv"))
        for s in ("mbrnn", "msdr")
    )
    same_scores = (open(os.path.join(a["eval"], "report.csv")).read()
                   == open(os.path.join(b["eval"], "report.csv")).read())
    same_weights = True
    for stage in ("mbrnn", "msdr"):
        ca = models.load_checkpoint(os.path.join(a[stage], "checkpoints", f"{stage}_final"))
        cb = models.load_checkpoint(os.path.join(b[stage], "checkpoints", f"{stage}_final"))
        for k, p in ca.net.params.items():
            same_weights = same_weights and np.array_equal(p.data, cb.net.params[k].data)
    dt = time.time() - t0
    _verdict("identical rerun of the micro pipeline",
             same_manifest and same_metrics and same_scores and same_weights and dt < 600,
             f"manifest {same_manifest}, per-stage metrics {same_metrics}, "
             f"scores {same_scores}, weights {same_weights}; {dt:.0f}s")
