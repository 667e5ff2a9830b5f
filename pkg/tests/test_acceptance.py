"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; every tolerance and runtime budget is asserted, not just printed.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from oracle_radiomics import (oracle_first_order, oracle_glcm_features,
                              oracle_glcm_matrix, oracle_glrlm_features,
                              oracle_glrlm_matrix, oracle_glszm_features,
                              oracle_zones)
from test_aggregation import (assert_matches_oracle, numeric_grad,
                              oracle_aggregate, random_candidates)
from test_blocks import gate_conv_with_bias, naive_conv2d
from test_metrics import pairwise_auc

from lesionkit.aggregation import (CandidatePrediction, McraConfig, aggregate,
                                   consistency_loss, consistency_loss_grad)
from lesionkit.blocks import ASPP_DILATIONS, adaptive_gate_fuse, aspp_forward, \
    conv2d, random_conv, se_recalibrate, Conv2dParams, SeParams
from lesionkit.metrics import dice_iou, roc_auc
from lesionkit.pipeline import PipelineConfig, run_pipeline
from lesionkit.radiomics import (GLCM_OFFSETS, RUN_DIRECTIONS, first_order,
                                 glcm_features, glcm_matrix, glrlm_features,
                                 glrlm_matrix, glszm_features, quantize, zone_list)
from lesionkit.selection import (FeatureMatrix, SelectionConfig, _ista,
                                 _lipschitz_step, fit_selection, kkt_violation,
                                 lambda_max, lasso_fit, mrmr_select,
                                 zscore_apply, zscore_fit)
from lesionkit.synthetic import SyntheticSpec, synth_dataset
from test_selection import exhaustive_mrmr


def report(num, detail):
    print(f"\n[criterion {num:>2}] PASS  {detail}")


def test_criterion_01_algorithm_oracle_equivalence():
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    for _ in range(1000):
        cands, f_text = random_candidates(rng)
        cfg = McraConfig(tau_sal=float(rng.uniform(0.2, 2.0)),
                         tau_sem=float(rng.uniform(0.2, 2.0)),
                         alpha=float(rng.uniform(0.0, 1.0)),
                         theta=float(rng.uniform(0.05, 0.95)),
                         gamma=float(rng.uniform(0.5, 3.0)))
        res = aggregate(cands, f_text, cfg)
        assert_matches_oracle(res, oracle_aggregate(cands, f_text, cfg), tol=1e-10)
        for w in (res.w_sal, res.w_sem, res.w_final):
            assert abs(float(w.sum()) - 1.0) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(1, f"1000 aggregation instances match the step-by-step oracle "
              f"within 1e-10 in {elapsed:.1f}s")


def test_criterion_02_configuration_collapses():
    rng = np.random.default_rng(1002)
    # alpha = 0: output independent of the text vector
    cands, f_text = random_candidates(rng, k=4, h=6, w=6, d=5)
    cfg0 = McraConfig(alpha=0.0)
    a = aggregate(cands, f_text, cfg0)
    b = aggregate(cands, rng.normal(size=5), cfg0)
    np.testing.assert_array_equal(a.w_final, b.w_final)
    np.testing.assert_array_equal(a.fused_mask, b.fused_mask)
    np.testing.assert_array_equal(a.teacher, b.teacher)
    # K = 1: identity fusion, no consistency penalty
    single, ft = random_candidates(rng, k=1, h=4, w=4, d=3)
    res = aggregate(single, ft, McraConfig())
    np.testing.assert_array_equal(res.w_final, [1.0])
    np.testing.assert_array_equal(res.fused_mask, single[0].mask_logits)
    np.testing.assert_array_equal(res.fused_logits, single[0].cls_logits)
    assert res.consistency_loss == 0.0
    # tau -> 0: argmax selection within 1e-6
    cands, f_text = random_candidates(rng, k=5, h=4, w=4, d=4)
    sal = np.array([c.saliency for c in cands])
    res = aggregate(cands, f_text, McraConfig(tau_sal=0.01, tau_sem=0.01, alpha=0.0))
    assert res.w_sal[np.argmax(sal)] > 1.0 - 1e-6
    report(2, "alpha=0 text-independence, K=1 identity fusion with zero loss, "
              "tau->0 argmax within 1e-6")


def test_criterion_03_consistency_gradient_check():
    rng = np.random.default_rng(1003)
    checked = 0
    while checked < 100:
        cands, f_text = random_candidates(rng, k=int(rng.integers(2, 5)),
                                          h=int(rng.integers(2, 5)),
                                          w=int(rng.integers(2, 5)), d=3)
        cfg = McraConfig(gamma=float(rng.uniform(0.5, 3.0)))
        res = aggregate(cands, f_text, cfg)
        if not res.low_set:
            continue
        grads = consistency_loss_grad(cands, res.low_set, res.w_final,
                                      res.teacher, cfg.gamma)
        j = res.low_set[0]
        num = numeric_grad(
            lambda: consistency_loss(cands, res.low_set, res.w_final,
                                     res.teacher, cfg.gamma),
            cands[j].mask_logits)
        denom = max(np.linalg.norm(grads[j]), np.linalg.norm(num), 1e-12)
        assert np.linalg.norm(grads[j] - num) / denom < 1e-4
        for i in res.high_set:
            np.testing.assert_array_equal(grads[i], 0.0)
            num_h = numeric_grad(
                lambda: consistency_loss(cands, res.low_set, res.w_final,
                                         res.teacher, cfg.gamma),
                cands[i].mask_logits)
            np.testing.assert_array_equal(num_h, 0.0)
        checked += 1
    report(3, "100 instances: analytic vs central-difference gradients agree "
              "(rel err < 1e-4); teacher-path gradient exactly zero")


def test_criterion_04_radiomics_oracle_equivalence():
    rng = np.random.default_rng(1004)
    start = time.perf_counter()
    for trial in range(500):
        h = int(rng.integers(2, 9))
        w = int(rng.integers(2, 9))
        image = rng.random((h, w))
        mask = (rng.random((h, w)) < 0.75).astype(np.uint8)
        if mask.sum() < 2:
            mask[0, 0] = mask[0, 1] = 1
        ng = int(rng.integers(2, 6))
        q = quantize(image, mask, ng)

        fo = first_order(image, mask, ng)
        fo_want = oracle_first_order(image, mask, ng)
        for name, v in fo_want.items():
            assert fo[name] == pytest.approx(v, abs=1e-9), name

        try:
            p = glcm_matrix(q)
        except ValueError:
            p = None
        if p is not None:
            np.testing.assert_allclose(
                p, oracle_glcm_matrix(q.levels, mask, ng, GLCM_OFFSETS), atol=1e-12)
            got = glcm_features(q)
            for name, v in oracle_glcm_features(p).items():
                assert got[name] == pytest.approx(v, abs=1e-9), name

        got = glrlm_features(q)
        per_dir = [oracle_glrlm_features(
            oracle_glrlm_matrix(q.levels, mask, ng, d, max(h, w)), int(mask.sum()))
            for d in RUN_DIRECTIONS]
        for name in got:
            want = sum(f[name] for f in per_dir) / len(per_dir)
            assert got[name] == pytest.approx(want, abs=1e-9), name

        got = glszm_features(q)
        zones = oracle_zones(q.levels, mask)
        assert sorted(zones) == sorted(zone_list(q))
        for name, v in oracle_glszm_features(zones, int(mask.sum())).items():
            assert got[name] == pytest.approx(v, abs=1e-9), name

    # constant ROI: fully diagonal co-occurrence
    qc = quantize(np.full((5, 5), 0.3), np.ones((5, 5)), 8)
    feats = glcm_features(qc)
    assert feats["Idmn"] == pytest.approx(1.0, abs=1e-12)

    # shift and rotation invariance
    image = rng.random((8, 8))
    mask = np.ones((8, 8), dtype=np.uint8)
    base = {fn.__name__: fn(quantize(image, mask, 5))
            for fn in (glcm_features, glrlm_features, glszm_features)}
    shifted = {fn.__name__: fn(quantize(image + 11.5, mask, 5))
               for fn in (glcm_features, glrlm_features, glszm_features)}
    rotated = {fn.__name__: fn(quantize(np.rot90(image).copy(), mask, 5))
               for fn in (glcm_features, glrlm_features, glszm_features)}
    for group in base:
        for name in base[group]:
            assert shifted[group][name] == pytest.approx(base[group][name], abs=1e-9)
            assert rotated[group][name] == pytest.approx(base[group][name], abs=1e-9)

    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(4, f"500 random ROIs match brute-force texture/first-order oracles "
              f"(1e-9); invariances hold; {elapsed:.1f}s")


def test_criterion_05_selection_correctness():
    rng = np.random.default_rng(1005)
    # mRMR equals exhaustive greedy on 200 random small instances
    for _ in range(200):
        n_features = int(rng.integers(2, 7))
        n = int(rng.integers(12, 40))
        y = rng.integers(0, 2, size=n)
        while np.unique(y).size < 2:
            y = rng.integers(0, 2, size=n)
        x = rng.normal(size=(n, n_features))
        x[:, int(rng.integers(0, n_features))] += y
        k = int(rng.integers(1, n_features + 1))
        assert mrmr_select(x, y, k, bins=8) == exhaustive_mrmr(x, y, k, 8)

    # KKT at every returned solution along a path
    y = rng.integers(0, 2, size=80)
    y[:4] = [0, 1, 0, 1]
    x = rng.normal(size=(80, 6))
    x[:, 0] += 1.2 * (y - 0.5)
    mu, sigma = zscore_fit(x)
    xz = zscore_apply(x, mu, sigma)
    yf = y.astype(np.float64)
    lmax = lambda_max(xz, yf)
    step = _lipschitz_step(xz)
    w = np.zeros(6)
    b = float(np.log(yf.mean() / (1 - yf.mean())))
    for lam in np.geomspace(lmax, 1e-4 * lmax, 25):
        w, b, _ = _ista(xz, yf, lam, w, b, step)
        assert kkt_violation(xz, yf, w, b, lam) <= 1e-6

    # lambda >= lambda_max kills every weight exactly
    fit = lasso_fit(xz, yf, lambda_grid=np.array([lmax, 1.5 * lmax]), folds=3, seed=0)
    assert np.all(fit.weights == 0.0)

    # zero leakage: mutating held-out rows leaves the fitted model unchanged
    names = tuple(f"f{j}" for j in range(6))
    cfg = SelectionConfig(mrmr_k=4, folds=3, n_lambdas=15, seed=1)
    model_a = fit_selection(FeatureMatrix(names, x[:60], y[:60]), cfg)
    x_mut = x.copy()
    x_mut[60:] = 1e9
    model_b = fit_selection(FeatureMatrix(names, x_mut[:60], y[:60]), cfg)
    assert model_a.selected_names == model_b.selected_names
    np.testing.assert_array_equal(model_a.lasso_weights, model_b.lasso_weights)
    np.testing.assert_array_equal(model_a.mu, model_b.mu)
    assert model_a.lambda_star == model_b.lambda_star
    report(5, "mRMR = exhaustive greedy (200 trials); KKT <= 1e-6 on the path; "
              "lambda >= lambda_max gives w = 0; no held-out leakage")


def planted_matrix(seed, n=600, d=520, k_true=20, per_feature_d=1.3, flip=0.03):
    """Class-conditional informative features; pooled separation 5.8 sigma."""
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * (n // 2))
    x = rng.normal(size=(n, d))
    support = np.sort(rng.choice(d, size=k_true, replace=False))
    signs = rng.choice([-1.0, 1.0], size=k_true)
    shift = per_feature_d * (y - 0.5)
    for j, sgn in zip(support, signs):
        x[:, j] += sgn * shift
    flips = rng.random(n) < flip
    yy = y.copy()
    yy[flips] = 1 - yy[flips]
    names = tuple(f"f{j:03d}" for j in range(d))
    return FeatureMatrix(names, x, yy), {names[j] for j in support}


def test_criterion_06_planted_support_recovery():
    start = time.perf_counter()
    precisions, recalls, sizes = [], [], []
    for seed in range(10):
        matrix, truth = planted_matrix(seed)
        model = fit_selection(matrix, SelectionConfig(seed=seed))
        selected = set(model.selected_names)
        tp = len(selected & truth)
        precisions.append(tp / len(selected) if selected else 0.0)
        recalls.append(tp / len(truth))
        sizes.append(len(selected))
    elapsed = time.perf_counter() - start
    precision = float(np.mean(precisions))
    recall = float(np.mean(recalls))
    assert precision >= 0.8
    assert recall >= 0.8
    assert elapsed < 60.0
    report(6, f"10 seeds: precision {precision:.3f}, recall {recall:.3f}, "
              f"|selected| {sizes}, {elapsed:.1f}s")


def test_criterion_07_neural_block_fidelity():
    rng = np.random.default_rng(1007)
    assert ASPP_DILATIONS == (1, 6, 12, 18)
    for _ in range(10):
        cin = int(rng.integers(1, 5))
        cout = int(rng.integers(1, 5))
        x = rng.normal(size=(cin, 8, 8))
        w = rng.normal(size=(cout, cin, 3, 3))
        b = rng.normal(size=cout)
        for dilation in (1, 2, 6):
            got = conv2d(x, Conv2dParams(w, b, dilation))
            np.testing.assert_allclose(got, naive_conv2d(x, w, b, dilation), atol=1e-10)

    x = rng.normal(size=(4, 8, 8))
    se = SeParams.random(4, 2, rng)
    pooled = x.mean(axis=(1, 2))
    hidden = np.maximum(se.w1 @ pooled, 0.0)
    scale = 1.0 / (1.0 + np.exp(-(se.w2 @ hidden)))
    np.testing.assert_allclose(se_recalibrate(x, se), scale[:, None, None] * x, atol=1e-10)

    branches = [random_conv(4, 4, 3, d, rng) for d in ASPP_DILATIONS]
    proj = random_conv(4, 16, 1, 1, rng)
    got = aspp_forward(x, branches, proj)
    cat = np.concatenate([naive_conv2d(x, p.weights, p.bias, p.dilation)
                          for p in branches])
    np.testing.assert_allclose(got, naive_conv2d(cat, proj.weights, proj.bias, 1),
                               atol=1e-10)

    f = rng.normal(size=(4, 8, 8))
    np.testing.assert_allclose(adaptive_gate_fuse(x, f, gate_conv_with_bias(4, -30.0)),
                               x, atol=1e-9)
    np.testing.assert_allclose(adaptive_gate_fuse(x, f, gate_conv_with_bias(4, 30.0)),
                               f, atol=1e-9)
    report(7, "conv/SE/pyramid/gate forwards match naive loop oracles (1e-10); "
              "gate limits within 1e-9; default dilations (1, 6, 12, 18)")


def test_criterion_08_metric_correctness():
    rng = np.random.default_rng(1008)
    for _ in range(1000):
        n = int(rng.integers(4, 30))
        labels = rng.integers(0, 2, size=n)
        while np.unique(labels).size < 2:
            labels = rng.integers(0, 2, size=n)
        scores = np.round(rng.random(n), 2)
        assert roc_auc(scores, labels) == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12)
    for _ in range(200):
        a = (rng.random((6, 6)) > 0.5).astype(int)
        b = (rng.random((6, 6)) > 0.5).astype(int)
        dice, iou = dice_iou(a, b)
        assert dice == pytest.approx(2.0 * iou / (1.0 + iou), abs=1e-12)
    assert roc_auc(np.array([0.1, 0.4, 0.35, 0.8]),
                   np.array([0, 0, 1, 1])) == pytest.approx(0.75)
    report(8, "AUC = pairwise Mann-Whitney on 1000 score sets; "
              "dice = 2*iou/(1+iou); hand case 0.75")


@pytest.fixture(scope="module")
def synth_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    data = root / "data"
    synth_dataset(SyntheticSpec(n_cases=200, noise=0.3, seed=42), data)
    out = root / "out"
    start = time.perf_counter()
    report_dict, code = run_pipeline(PipelineConfig(workers=1), data, out)
    elapsed = time.perf_counter() - start
    return root, data, out, report_dict, code, elapsed


def test_criterion_09_synthetic_end_to_end_band(synth_run):
    _, _, _, rep, code, elapsed = synth_run
    assert code == 0
    mdsc = rep["segmentation"]["mDSC"]
    fused = rep["diagnosis"]["fused"]["AUC"]
    visual = rep["diagnosis"]["visual"]["AUC"]
    radiomics = rep["diagnosis"]["radiomics"]["AUC"]
    assert mdsc >= 0.85
    assert fused >= 90.0
    assert fused >= max(visual, radiomics) - 2.0
    assert elapsed < 300.0
    report(9, f"n=200 seed=42: mDSC {mdsc:.4f} >= 0.85, fused AUC {fused:.2f} >= 90, "
              f"fused >= max(visual {visual:.2f}, radiomics {radiomics:.2f}) - 2; "
              f"{elapsed:.0f}s single-threaded")


def test_criterion_10_determinism(synth_run, tmp_path):
    root, data, out, _, _, _ = synth_run

    def tree(r):
        return {str(p.relative_to(r)): p.read_bytes()
                for p in sorted(Path(r).rglob("*")) if p.is_file()}

    rerun = tmp_path / "rerun"
    run_pipeline(PipelineConfig(workers=1), data, rerun)
    a, b = tree(out), tree(rerun)
    assert a.keys() == b.keys()
    diff = [k for k in a if a[k] != b[k]]
    assert diff == []

    threaded = tmp_path / "threaded"
    run_pipeline(PipelineConfig(workers=4), data, threaded)
    c = tree(threaded)
    assert a.keys() == c.keys()
    diff = [k for k in a if a[k] != c[k]]
    assert diff == []
    report(10, f"rerun byte-identical across {len(a)} files; "
               "4-worker run byte-identical to single-threaded")
