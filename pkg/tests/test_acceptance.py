"""Acceptance suite: each criterion runs at its stated tolerance and prints
one PASS/FAIL line. The end-to-end criteria train real models and take a
few minutes; run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from _oracles import (
    chi_square_density,
    reference_aligned_ranks_statistic,
    reference_bonferroni_dunn,
)
from audioseg import corpus, dsp, generator, segmenter
from audioseg import tensor as T
from audioseg.cli import main as cli_main
from audioseg.stats import ScoreTable, bonferroni_dunn, chi_square_cdf, friedman_aligned_ranks
from audioseg.winpr import improvement, winpr, winpr_oracle

F64 = np.float64


def report_line(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---- criterion 1: gradient integrity --------------------------------------------


def test_criterion_1_gradient_integrity():
    started = time.time()
    tol = 1e-5
    worst = {}
    rng = np.random.default_rng(100)

    # individual layers
    x = T.Tensor(rng.normal(size=(2, 6, 6)).astype(F64), requires_grad=True)
    k = T.Tensor(rng.normal(size=(3, 2, 3, 3)).astype(F64) * 0.5, requires_grad=True)
    worst["conv2d"] = T.grad_check(lambda a, b: T.tsum(T.conv2d(a, b) ** 2.0) * 0.1, [x, k])

    xp = T.Tensor(rng.normal(size=(2, 6, 6)).astype(F64), requires_grad=True)
    worst["maxpool"] = T.grad_check(lambda a: T.tsum(T.maxpool2x2(a) ** 2.0), [xp])

    xd = T.Tensor(rng.normal(size=5).astype(F64), requires_grad=True)
    wd = T.Tensor(rng.normal(size=(3, 5)).astype(F64), requires_grad=True)
    bd = T.Tensor(rng.normal(size=3).astype(F64), requires_grad=True)
    worst["dense"] = T.grad_check(lambda a, w, b: T.tsum(T.dense(a, w, b) ** 2.0), [xd, wd, bd])

    xa = T.Tensor(rng.normal(size=7).astype(F64) + 0.05, requires_grad=True)
    worst["activations"] = T.grad_check(
        lambda a: T.tmean(T.relu(a) + T.sigmoid(a) * T.tanh(a)), [xa]
    )

    zl = T.Tensor(rng.normal(size=6).astype(F64), requires_grad=True)
    worst["softmax_ce"] = T.grad_check(lambda z: T.cross_entropy(T.softmax(z), 2), [zl])

    d, u = 3, 4
    lstm = T.LSTMParams(
        wx=T.Tensor(rng.normal(size=(4 * u, d)).astype(F64), requires_grad=True),
        wh=T.Tensor(rng.normal(size=(4 * u, u)).astype(F64), requires_grad=True),
        b=T.Tensor(rng.normal(size=4 * u).astype(F64), requires_grad=True),
    )
    xl = T.Tensor(rng.normal(size=d).astype(F64), requires_grad=True)
    hl = T.Tensor(rng.normal(size=u).astype(F64), requires_grad=True)
    cl = T.Tensor(rng.normal(size=u).astype(F64), requires_grad=True)

    def lstm_fn(xt, h0, c0, wx, wh, b):
        ht, ct = T.lstm_step(xt, h0, c0, T.LSTMParams(wx=wx, wh=wh, b=b))
        return T.tsum(ht * ht) + T.tmean(ct)

    worst["lstm_step"] = T.grad_check(lstm_fn, [xl, hl, cl, lstm.wx, lstm.wh, lstm.b])

    # full network A: the complete conv-pool-dense-softmax-CE stack at reduced
    # width (the full-width 128x87 network has 1.6M parameters, far beyond
    # what central differences can visit in the runtime budget)
    model = generator.GeneratorModel(
        n_classes=3,
        seed=5,
        conv_widths=(2, 2, 3, 3, 4, 4, 5, 5),
        dense_width=8,
        input_shape=(1, 16, 16),
        dtype=F64,
    )
    x_img = T.Tensor(rng.normal(size=(1, 16, 16)).astype(F64) * 0.5, requires_grad=True)

    def vgg_fn(*tensors):
        probs = model.forward(tensors[-1], mode="probs")
        return T.cross_entropy(probs, 1)

    worst["mini_vgg_full"] = T.grad_check(vgg_fn, model.param_list() + [x_img])

    # full network B: LSTM unrolled over 5 steps plus weighted BCE
    d2, u2 = 4, 5
    params2 = T.LSTMParams(
        wx=T.Tensor(rng.normal(size=(4 * u2, d2)).astype(F64) * 0.4, requires_grad=True),
        wh=T.Tensor(rng.normal(size=(4 * u2, u2)).astype(F64) * 0.4, requires_grad=True),
        b=T.Tensor(rng.normal(size=4 * u2).astype(F64) * 0.2, requires_grad=True),
    )
    w_out = T.Tensor(rng.normal(size=(1, u2)).astype(F64), requires_grad=True)
    b_out = T.Tensor(rng.normal(size=1).astype(F64), requires_grad=True)
    xs = rng.normal(size=(5, d2)) * 0.7
    ys = np.array([0, 1, 0, 0, 1])

    def lstm_bce_fn(wx, wh, b, wo, bo):
        h = T.Tensor(np.zeros(u2, dtype=F64))
        c = T.Tensor(np.zeros(u2, dtype=F64))
        loss = None
        for i in range(5):
            h, c = T.lstm_step(T.Tensor(xs[i].astype(F64)), h, c, T.LSTMParams(wx=wx, wh=wh, b=b))
            p = T.clip(T.sigmoid(T.dense(h, wo, bo)), 1e-9, 1.0 - 1e-9)
            term = T.log(p) * (-2.0) if ys[i] else T.log(1.0 - p) * -1.0
            loss = term if loss is None else loss + term
        return loss * (1.0 / 5.0)

    worst["lstm_bce_full"] = T.grad_check(
        lstm_bce_fn, [params2.wx, params2.wh, params2.b, w_out, b_out]
    )

    elapsed = time.time() - started
    peak = max(worst.values())
    detail = (
        ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f"; elapsed {elapsed:.1f}s"
    )
    report_line("criterion 1 (gradient integrity < 1e-5, < 2 min)", peak < 1e-5 and elapsed < 120, detail)


# ---- criterion 2: DSP shape law ---------------------------------------------------


def test_criterion_2_dsp_shape_law():
    started = time.time()
    rng = np.random.default_rng(200)
    n = 10_000
    bad = 0
    for i in range(n):
        amp = float(rng.uniform(0.005, 1.0))
        samples = (rng.standard_normal(dsp.SAMPLE_RATE) * amp).astype(np.float32)
        if i % 3 == 0:
            freq = float(rng.uniform(50.0, 15000.0))
            t = np.arange(dsp.SAMPLE_RATE) / dsp.SAMPLE_RATE
            samples += (amp * np.sin(2 * np.pi * freq * t)).astype(np.float32)
        m = dsp.mel_spectrogram(dsp.Waveform(samples=np.clip(samples, -1, 1), sample_rate=dsp.SAMPLE_RATE))
        if m.values.shape != (128, 87):
            bad += 1
    worst_dev = 0.0
    for _ in range(50):
        base = (rng.standard_normal(dsp.SAMPLE_RATE) * 0.05).astype(np.float32)
        ref = dsp.mel_spectrogram(dsp.Waveform(samples=base, sample_rate=dsp.SAMPLE_RATE)).values
        for c in (0.25, 3.0):
            scaled = dsp.mel_spectrogram(
                dsp.Waveform(samples=(base * c).astype(np.float32), sample_rate=dsp.SAMPLE_RATE)
            ).values
            worst_dev = max(worst_dev, float(np.abs(scaled - ref).max()))
    elapsed = time.time() - started
    ok = bad == 0 and worst_dev < 1e-5 and elapsed < 60
    report_line(
        "criterion 2 (10,000 clips -> 128x87; scale invariance < 1e-5, < 1 min)",
        ok,
        f"bad shapes {bad}/{n}, worst scale deviation {worst_dev:.2e}, elapsed {elapsed:.1f}s",
    )


# ---- criterion 3: WinPR oracle equivalence ------------------------------------------


def test_criterion_3_winpr_oracle_equivalence():
    started = time.time()
    rng = np.random.default_rng(300)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        k = int(rng.integers(1, 13))
        ref = (rng.random(n) < rng.uniform(0.05, 0.5)).astype(int)
        hyp = (rng.random(n) < rng.uniform(0.05, 0.5)).astype(int)
        fast = winpr(ref, hyp, k)
        slow = winpr_oracle(ref, hyp, k)
        if (fast.tp, fast.fp, fast.fn, fast.precision, fast.recall, fast.f1) != (
            slow.tp, slow.fp, slow.fn, slow.precision, slow.recall, slow.f1,
        ):
            mismatches += 1
    shift_ok = True
    n = 80
    for k in (3, 10, 12):
        for d in range(0, k + 1):
            ref = np.zeros(n, dtype=int)
            hyp = np.zeros(n, dtype=int)
            ref[40] = 1
            hyp[40 + d] = 1
            res = winpr(ref, hyp, k)
            if d < k:
                expected = (k - d) / k
                if abs(res.precision - expected) > 1e-12 or abs(res.recall - expected) > 1e-12:
                    shift_ok = False
            elif res.f1 != 0.0:
                shift_ok = False
    elapsed = time.time() - started
    ok = mismatches == 0 and shift_ok and elapsed < 10
    report_line(
        "criterion 3 (1000 random cases == oracle; shift law, < 10 s)",
        ok,
        f"mismatches {mismatches}/1000, shift law {'ok' if shift_ok else 'violated'}, elapsed {elapsed:.1f}s",
    )


# ---- criterion 4: improvement arithmetic ---------------------------------------------


def test_criterion_4_improvement_arithmetic():
    published = [
        ("SEC", 0.673, 9.4),
        ("FPC", 0.588, -4.4),
        ("TXT+SEC", 0.813, 32.3),
        ("TXT+FPC", 0.739, 20.2),
        ("TXT+WC", 0.656, 6.7),
        ("ALL", 0.809, 31.5),
    ]
    baseline = 0.615
    deviations = {
        name: abs(improvement(baseline, f1) - printed) for name, f1, printed in published
    }
    worst = max(deviations.values())
    report_line(
        "criterion 4 (published improvement column within +-0.2)",
        worst <= 0.2,
        ", ".join(f"{k}: {v:.3f}" for k, v in deviations.items()),
    )


# ---- criterion 5: classifier sanity -----------------------------------------------------


def test_criterion_5_classifier_sanity():
    started = time.time()
    clips = corpus.synth_event_clips(5, 20, 5.0, seed=500)
    ds = generator.build_sec_dataset(clips)
    assert len(ds.items) == 500
    cfg = generator.GeneratorTrainConfig(
        epochs=100,
        lr=1e-3,
        seed=500,
        early_stop_train_acc=0.95,
        early_stop_val_acc=0.80,
    )
    model, log = generator.train_generator(ds, cfg)
    train_acc = log[-1]["train_accuracy"]
    val_acc = model.metadata["val_accuracy"]
    elapsed = time.time() - started
    ok = train_acc >= 0.95 and val_acc >= 0.80 and len(log) <= 100 and elapsed < 900
    report_line(
        "criterion 5 (5-class tones: train >= 95%, val >= 80%, <= 100 epochs, < 15 min)",
        ok,
        f"train {train_acc:.3f}, val {val_acc:.3f}, epochs {len(log)}, elapsed {elapsed:.0f}s",
    )


# ---- criterion 6: directional end-to-end reproduction -------------------------------------


def test_criterion_6_directional_reproduction(tmp_path):
    started = time.time()
    cfg = {
        "seed": 42,
        "out_dir": str(tmp_path / "exp"),
        "features": ["TXT", "TXT+SEC"],
        "corpus": {
            "shows": 20,
            "topics": 8,
            "duration_seconds": 120.0,
            "audio_informative": True,
            "train_fraction": 0.8,
            "fragment_seconds": [8.0, 16.0],
        },
        "generators": {
            "SEC": {
                "classes": 8,
                "clips_per_class": 12,
                "clip_seconds": 3.0,
                "epochs": 30,
                "lr": 1e-3,
                "early_stop_train_acc": 0.97,
            }
        },
        "segmenter": {
            "epochs": 30,
            "hidden_sizes": [32, 64],
            "learning_rates": [3e-3],
            "thresholds": [0.3, 0.5, 0.7],
            "val_fraction": 0.25,
        },
        "figures": True,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    from audioseg.config import validate_config
    from audioseg.experiment import run_experiment

    report = run_experiment(validate_config(cfg_path))
    txt = report["methods"]["TXT"]
    txt_sec = report["methods"]["TXT+SEC"]
    f1_uplift = txt_sec["f1"] - txt["f1"]
    recall_uplift = txt_sec["recall"] - txt["recall"]
    precision_uplift = txt_sec["precision"] - txt["precision"]
    elapsed = time.time() - started
    ok = f1_uplift >= 0.05 and recall_uplift > precision_uplift and elapsed < 3600
    report_line(
        "criterion 6 (TXT+SEC F1 uplift >= 5 points, recall-driven, < 60 min)",
        ok,
        (
            f"TXT P/R/F1 {txt['precision']:.3f}/{txt['recall']:.3f}/{txt['f1']:.3f}; "
            f"TXT+SEC {txt_sec['precision']:.3f}/{txt_sec['recall']:.3f}/{txt_sec['f1']:.3f}; "
            f"F1 uplift {f1_uplift:+.3f}, recall uplift {recall_uplift:+.3f} vs "
            f"precision uplift {precision_uplift:+.3f}; elapsed {elapsed:.0f}s"
        ),
    )


# ---- criterion 7: stats correctness ----------------------------------------------------------


def test_criterion_7_stats_correctness():
    started = time.time()
    worst_stat = 0.0
    worst_z = 0.0
    for seed, n, k in ((700, 10, 4), (701, 14, 6), (702, 8, 3)):
        rng = np.random.default_rng(seed)
        scores = rng.uniform(0.1, 0.9, size=(n, k))
        table = ScoreTable(
            methods=[f"m{j}" for j in range(k)],
            blocks=[f"b{i}" for i in range(n)],
            scores=scores,
        )
        stat, _ = friedman_aligned_ranks(table)
        worst_stat = max(worst_stat, abs(stat - reference_aligned_ranks_statistic(scores)))
        report = bonferroni_dunn(table, baseline="m0")
        _, ref_rows = reference_bonferroni_dunn(scores, 0)
        for j in range(1, k):
            row = next(r for r in report.rows if r.method == f"m{j}")
            _, z_ref, p_ref = ref_rows[j]
            worst_z = max(worst_z, abs(row.z - z_ref), abs(row.p_adjusted - p_ref))
    worst_df2 = max(
        abs(chi_square_cdf(x, 2) - (1.0 - math.exp(-x / 2.0)))
        for x in (0.1, 0.7, 2.0, 5.5, 12.0, 40.0)
    )
    worst_quad = 0.0
    for df in (1, 3, 5, 8):
        for x in (0.4, 2.2, 7.0, 14.0):
            expected, _ = integrate.quad(chi_square_density, 0.0, x, args=(df,), epsabs=1e-12, limit=200)
            worst_quad = max(worst_quad, abs(chi_square_cdf(x, df) - expected))
    elapsed = time.time() - started
    ok = worst_stat < 1e-9 and worst_z < 1e-9 and worst_df2 < 1e-12 and worst_quad < 1e-8 and elapsed < 5
    report_line(
        "criterion 7 (stats vs scripted references; chi-square closed form/quadrature)",
        ok,
        (
            f"omnibus dev {worst_stat:.2e}, post-hoc dev {worst_z:.2e}, "
            f"df=2 dev {worst_df2:.2e}, quadrature dev {worst_quad:.2e}, elapsed {elapsed:.1f}s"
        ),
    )


# ---- criterion 8: end-to-end determinism ------------------------------------------------------


def test_criterion_8_end_to_end_determinism(tmp_path):
    out_dir = tmp_path / "run"
    cfg = {
        "seed": 7,
        "out_dir": str(out_dir),
        "features": ["TXT", "SEC"],
        "corpus": {
            "shows": 5,
            "topics": 3,
            "duration_seconds": 30.0,
            "audio_informative": True,
            "train_fraction": 0.6,
            "fragment_seconds": [5.0, 8.0],
        },
        "generators": {
            "SEC": {
                "classes": 4,
                "clips_per_class": 5,
                "clip_seconds": 2.0,
                "epochs": 12,
                "lr": 1e-3,
                "early_stop_train_acc": 0.99,
            }
        },
        "segmenter": {
            "epochs": 15,
            "hidden_sizes": [16],
            "learning_rates": [3e-3],
            "thresholds": [0.5],
            "val_fraction": 0.34,
        },
        "figures": False,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    first_tsv = (out_dir / "results.tsv").read_bytes()
    first_json = (out_dir / "report.json").read_bytes()

    assert cli_main(["run", "--config", str(cfg_path)]) == 0
    second_tsv = (out_dir / "results.tsv").read_bytes()
    second_json = (out_dir / "report.json").read_bytes()

    ok = first_tsv == second_tsv and first_json == second_json
    report_line(
        "criterion 8 (repeated run yields byte-identical results.tsv and report.json)",
        ok,
        f"results.tsv {'identical' if first_tsv == second_tsv else 'DIFFERS'}, "
        f"report.json {'identical' if first_json == second_json else 'DIFFERS'}",
    )
