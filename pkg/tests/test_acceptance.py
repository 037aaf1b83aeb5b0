"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
without ``-s``.  Criterion 9 needs external assets and is skipped unless
``DXP_BERT_TABLE`` (plus optional ``DXP_BERT_FORMAT``) and ``DXP_SST_DEV``
point at them.
"""

import json
import os
import time

import numpy as np
import pytest

from dxprivacy import cli
from dxprivacy.analysis import deniability_stats, geometry_profile, inversion_attack, stride_sample
from dxprivacy.embeddings import load_table, save_table
from dxprivacy.mechanism import PrivacyParams, noise_batch, privatize_tokens
from dxprivacy.mlm import PerturbationSet, denoising_mlm_loss, prob_mlm_loss, vanilla_mlm_loss
from dxprivacy.probe import load_tsv
from dxprivacy.synthetic import SentimentWorld, gaussian_table, line_table

ETAS = [50.0, 75.0, 100.0, 125.0, 150.0, 175.0]
FLIP = 0.5 * np.exp(-0.5)


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for a criterion, then assert it."""

    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}  {detail}")
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return emit


def _norms(params, n_draws, chunk=10_000):
    out = np.empty(n_draws)
    for s in range(0, n_draws, chunk):
        vec, _ = noise_batch(params, "acceptance/calibration", 0, np.arange(s, min(n_draws, s + chunk)))
        out[s : s + vec.shape[0]] = np.sqrt(np.sum(vec * vec, axis=1))
    return out


def test_1_noise_calibration(verdict):
    t0 = time.time()
    cases = [(768, e) for e in ETAS] + [(n, e) for n in (1, 2) for e in (1.0, 10.0)]
    worst_mean = worst_var = 0.0
    for n, eta in cases:
        r = _norms(PrivacyParams(eta, n, 1), 100_000)
        worst_mean = max(worst_mean, abs(r.mean() / (n / eta) - 1))
        worst_var = max(worst_var, abs(r.var() / (n / eta**2) - 1))
    elapsed = time.time() - t0
    ok = worst_mean < 0.01 and worst_var < 0.03 and elapsed < 60
    verdict(1, "noise calibration", ok,
            f"max rel. mean err {worst_mean:.4f}, max rel. var err {worst_var:.4f}, {elapsed:.1f}s")


def test_2_closed_form_oracle(verdict):
    t0 = time.time()
    table = line_table([0.0, 1.0])
    out = privatize_tokens(0, table, PrivacyParams(1.0, 1, 0), "acceptance/flip", np.arange(1_000_000), 0)
    flip = float(np.mean(out == 1))
    rep = deniability_stats(table, PrivacyParams(1.0, 1, 0), trials=10_000, token_subset=[0])
    keep = rep.n_w[0] / 1e4
    elapsed = time.time() - t0
    ok = abs(flip - FLIP) <= 0.002 and abs(keep - (1 - FLIP)) <= 0.015 and elapsed < 60
    verdict(2, "closed-form oracle", ok,
            f"flip {flip:.4f} (oracle {FLIP:.4f}), N_w/T {keep:.4f} (oracle {1 - FLIP:.4f}), {elapsed:.1f}s")


def test_3_dchi_bound(verdict):
    table = line_table([0.0, 1.0])
    eta, d, n = 1.0, 1.0, 1_000_000
    p = PrivacyParams(eta, 1, 7)
    outs = [privatize_tokens(x, table, p, f"acceptance/bound/{x}", np.arange(n), 0) for x in (0, 1)]
    worst = -np.inf
    ok = True
    for y in (0, 1):
        pa, pb = (np.mean(o == y) for o in outs)
        se = np.sqrt((1 - pa) / (n * pa) + (1 - pb) / (n * pb))
        for ratio in (np.log(pa / pb), np.log(pb / pa)):
            ok &= ratio <= eta * d + 3 * se
            worst = max(worst, ratio - eta * d)
    verdict(3, "empirical d_chi bound", bool(ok), f"max log-ratio minus eta*d = {worst:.4f}")


def test_4_mlm_identities(verdict):
    rng = np.random.default_rng(0)
    errs = []
    for size in (2, 100, 1000):
        z = np.full(size, 0.7)
        for loss in (vanilla_mlm_loss(z, size - 1), denoising_mlm_loss(z, 0), prob_mlm_loss(z, {0: 2, size - 1: 1})):
            errs.append(abs(loss - np.log(size)) / 1e-6)
    for _ in range(1000):
        z = rng.normal(0, 5, size=int(rng.integers(2, 200)))
        draws = rng.integers(0, z.size, size=int(rng.integers(1, 15)))
        pset = PerturbationSet.from_draws(draws)
        ref = np.mean([vanilla_mlm_loss(z, w) for w in draws])
        errs.append(abs(prob_mlm_loss(z, pset) - ref) / 1e-9)
        c = rng.uniform(-100, 100)
        w = int(draws[0])
        errs.append(abs(vanilla_mlm_loss(z + c, w) - vanilla_mlm_loss(z, w)) / 1e-9)
        errs.append(abs(denoising_mlm_loss(z + c, w) - denoising_mlm_loss(z, w)) / 1e-9)
        errs.append(abs(prob_mlm_loss(z + c, pset) - prob_mlm_loss(z, pset)) / 1e-9)
    a = vanilla_mlm_loss([1.0, 2.0, 3.0], 2)
    b = denoising_mlm_loss([1.0, 2.0, 3.0], 0)
    errs += [abs(a - 0.40761) / 1e-5, abs(b - 2.40761) / 1e-5]
    worst = max(errs)
    verdict(4, "MLM loss identities", worst <= 1.0,
            f"(1,2,3) -> {a:.5f} / {b:.5f}; worst error / tolerance = {worst:.3f}")


@pytest.fixture(scope="module")
def mono_setup():
    t0 = time.time()
    table = gaussian_table(500, 32, scale=0.03, seed=0)
    rng = np.random.default_rng(1)
    # Zipf-like corpus over regular tokens
    weights = 1.0 / np.arange(1, 501)
    corpus_ids = rng.choice(table.regular_ids, size=20_000, p=weights / weights.sum())
    corpus = [corpus_ids[i : i + 20].tolist() for i in range(0, corpus_ids.size, 20)]
    results = {}
    for seed in (0, 1, 2):
        for eta in ETAS:
            p = PrivacyParams(eta, 32, seed)
            results[seed, eta] = (deniability_stats(table, p, trials=100), inversion_attack(corpus, table, p))
    return table, corpus_ids, results, time.time() - t0


def _monotone(values, ses, increasing=True):
    """Number of adjacent pairs moving the wrong way by more than 2 combined SE."""
    bad = 0
    for i in range(len(values) - 1):
        step = values[i + 1] - values[i]
        if not increasing:
            step = -step
        if step < -2 * np.hypot(ses[i], ses[i + 1]):
            bad += 1
    return bad


def test_5_monotonicity(verdict, mono_setup):
    t0 = time.time()
    _, _, results, setup_time = mono_setup
    bad = 0
    curves = []
    for seed in (0, 1, 2):
        inv, inv_se, nw, nw_se, sw, sw_se = ([] for _ in range(6))
        for eta in ETAS:
            den, rep = results[seed, eta]
            m = den.token_ids.size
            inv.append(rep.accuracy)
            inv_se.append(rep.standard_error)
            pres = den.preservation()
            nw.append(pres.mean())
            nw_se.append(pres.std(ddof=1) / np.sqrt(m))
            sw.append(den.s_w.mean())
            sw_se.append(den.s_w.std(ddof=1) / np.sqrt(m))
        bad += _monotone(inv, inv_se) + _monotone(nw, nw_se) + _monotone(sw, sw_se, increasing=False)
        curves.append(inv)
    elapsed = time.time() - t0 + setup_time
    inv0 = " ".join(f"{x:.3f}" for x in curves[0])
    verdict(5, "monotonicity suite", bad == 0 and elapsed < 300,
            f"violations beyond 2 SE: {bad}; seed-0 inversion {inv0}; {elapsed:.1f}s")


def test_6_attack_deniability_consistency(verdict, mono_setup):
    table, corpus_ids, results, _ = mono_setup
    ids, counts = np.unique(corpus_ids, return_counts=True)
    freq = counts / counts.sum()
    worst = 0.0
    for eta in ETAS:
        den, rep = results[0, eta]
        pos = np.searchsorted(den.token_ids, ids)
        p_w = den.preservation()[pos]
        expected = float(np.dot(freq, p_w))
        se = np.sqrt(rep.standard_error**2 + np.sum(freq**2 * p_w * (1 - p_w) / den.trials))
        worst = max(worst, abs(rep.accuracy - expected) / se)
    verdict(6, "attack/deniability consistency", worst <= 3.0, f"max |inversion - weighted N_w/T| = {worst:.2f} SE")


def test_7_determinism_and_workers(verdict, tmp_path):
    table = gaussian_table(300, 16, scale=0.05, seed=2)
    tpath = tmp_path / "table.bin"
    save_table(table, tpath, "binary")
    corpus = tmp_path / "corpus.txt"
    rng = np.random.default_rng(0)
    corpus.write_text(
        "\n".join(" ".join(f"t{i}" for i in rng.integers(0, 300, 30)) for _ in range(200)) + "\n", encoding="utf-8"
    )
    commands = {
        "geometry": ["report", "geometry", "--k", "1", "--k", "10", "--noise-samples", "5000"],
        "deniability": ["report", "deniability", "--trials", "200"],
        "inversion": ["report", "inversion", "--input", str(corpus)],
    }
    ok = True
    notes = []
    for name, argv in commands.items():
        blobs = {}
        for workers in (1, 4, 8):
            out = tmp_path / f"{name}.json"
            runs = []
            for _ in range(2):
                assert cli.main(argv + ["--table", str(tpath), "--format", "binary", "--eta", "60", "--eta", "120",
                                        "--seed", "5", "--workers", str(workers), "--out", str(out)]) == 0
                runs.append(out.read_bytes() + _csv_path(out).read_bytes())
            ok &= runs[0] == runs[1]
            blobs[workers] = json.loads(out.read_text())["report"]
        same = blobs[1] == blobs[4] == blobs[8]
        ok &= same
        notes.append(f"{name}:{'ok' if same else 'differs'}")
    # library-level check at a size that actually splits work across threads
    p = PrivacyParams(40.0, 16, 3)
    big = np.tile(table.regular_ids, 2000)
    outs = [privatize_tokens(big, table, p, "acceptance/workers", np.arange(big.size), 0, workers=w) for w in (1, 4, 8)]
    lib_same = all(np.array_equal(outs[0], o) for o in outs[1:])
    ok &= lib_same
    verdict(7, "determinism & parallel invariance", bool(ok), " ".join(notes) + f" library:{'ok' if lib_same else 'differs'}")


def _csv_path(out):
    return out.with_suffix(".csv")


def test_8_probe_trends(verdict, tmp_path):
    t0 = time.time()
    paths = SentimentWorld().write(tmp_path / "sst")
    out = tmp_path / "probe.json"
    argv = ["probe", "--table", paths["table"], "--train", paths["train"], "--eval", paths["dev"], "--seeds", "3",
            "--clean-trained", "--out", str(out)]
    for eta in (50, 100, 150, 175):
        argv += ["--eta", str(eta)]
    assert cli.main(argv) == 0
    summary = {(s["eta"], s["train_privatization"], s["eval_privatization"]): s
               for s in json.loads(out.read_text())["report"]["summary"]}
    acc = lambda eta, tr, ev: summary[eta, tr, ev]["mean_accuracy"]
    se = lambda eta, tr, ev: summary[eta, tr, ev]["standard_error"]
    gain = acc(175.0, "text", "text") - acc(50.0, "text", "text")
    a = gain >= 0.1
    b = all(acc(e, "text", "text") >= acc(e, "representation", "representation") for e in (150.0, 175.0))
    adaptive, clean = acc(100.0, "representation", "representation"), acc(100.0, "none", "representation")
    margin = (adaptive - clean) / np.hypot(se(100.0, "representation", "representation"), se(100.0, "none", "representation"))
    c = margin > 2
    elapsed = time.time() - t0
    detail = (
        f"(a) text 175-50 gain {gain:.3f}; "
        f"(b) text/rep at 150 {acc(150.0, 'text', 'text'):.3f}/{acc(150.0, 'representation', 'representation'):.3f}, "
        f"175 {acc(175.0, 'text', 'text'):.3f}/{acc(175.0, 'representation', 'representation'):.3f}; "
        f"(c) adaptive {adaptive:.3f} vs clean-trained {clean:.3f} = {margin:.1f} SE; {elapsed:.0f}s"
    )
    verdict(8, "probe trends", bool(a and b and c and elapsed < 600), detail)


SST_INVERSION = {50.0: 0.0154, 75.0: 0.1084, 100.0: 0.3402, 125.0: 0.6354, 150.0: 0.8500, 175.0: 0.9511}


def test_9_asset_dependent(verdict, capsys):
    if not (os.environ.get("DXP_BERT_TABLE") and os.environ.get("DXP_SST_DEV")):
        with capsys.disabled():
            print("\n[SKIP] criterion 9: asset-dependent  DXP_BERT_TABLE / DXP_SST_DEV not set")
        pytest.skip("set DXP_BERT_TABLE and DXP_SST_DEV to run the asset-dependent checks")
    table = load_table(os.environ["DXP_BERT_TABLE"], os.environ.get("DXP_BERT_FORMAT", "text"))
    dev = load_tsv(os.environ["DXP_SST_DEV"], table)
    corpus = dev.first + (dev.second or [])
    diffs = {}
    for eta, ref in SST_INVERSION.items():
        diffs[eta] = inversion_attack(corpus, table, PrivacyParams(eta, table.dim, 0)).accuracy - ref
    geo = geometry_profile(table, [100.0], [1], noise_samples=10)
    sample = stride_sample(table.regular_ids, 2000)
    max_nw = int(deniability_stats(table, PrivacyParams(75.0, table.dim, 0), 1000, sample).n_w.max())
    ok = all(abs(d) <= 0.02 for d in diffs.values()) and geo.avg_knn_distance[0] < 2 and max_nw < 500
    verdict(9, "asset-dependent", ok,
            f"max inversion deviation {max(abs(d) for d in diffs.values()):.4f}, "
            f"avg 1-NN {geo.avg_knn_distance[0]:.3f}, max N_w {max_nw}")
