import math

import numpy as np
import pytest
from mpmath import mp, mpf

from lesionkit.losses import (Stage1Weights, bce_dice_grad, bce_dice_loss,
                              focal_loss, focal_loss_grad, stage1_loss,
                              text_aux_grad, text_aux_loss)


def test_focal_gamma0_equals_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(8, 2))
    labels = rng.integers(0, 2, size=8)
    got = focal_loss(logits, labels, gamma_f=0.0, class_weights=(1.0, 1.0))
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    ce = -np.mean(np.log(p[np.arange(8), labels]))
    assert got == pytest.approx(ce, abs=1e-12)


def test_focal_perfect_logits_vanish():
    logits = np.array([[30.0, -30.0], [-30.0, 30.0]])
    labels = np.array([0, 1])
    assert focal_loss(logits, labels) < 1e-12


def test_focal_hand_case_against_bigfloat_oracle():
    mp.dps = 60
    logits = np.array([[0.7, -0.3], [-1.2, 0.4], [0.1, 0.2]])
    labels = np.array([0, 1, 1])
    gamma, weights = 1.5, (0.8, 1.2)
    total = mpf(0)
    for (a, b), y, w in zip(logits, labels, [weights[l] for l in labels]):
        za, zb = mpf(float(a)), mpf(float(b))
        ea, eb = mp.e ** za, mp.e ** zb
        p = (ea if y == 0 else eb) / (ea + eb)
        total += -mpf(w) * (1 - p) ** mpf(gamma) * mp.log(p)
    expected = float(total / 3)
    assert focal_loss(logits, labels, gamma, weights) == pytest.approx(expected, abs=1e-14)


def test_focal_grad_finite_differences():
    rng = np.random.default_rng(1)
    for gamma in (0.0, 1.0, 2.0, 3.5):
        logits = rng.normal(size=(5, 2))
        labels = rng.integers(0, 2, size=5)
        weights = (0.7, 1.3)
        grad = focal_loss_grad(logits, labels, gamma, weights)
        h = 1e-6
        num = np.zeros_like(logits)
        for i in range(5):
            for j in range(2):
                up = logits.copy()
                up[i, j] += h
                dn = logits.copy()
                dn[i, j] -= h
                num[i, j] = (focal_loss(up, labels, gamma, weights)
                             - focal_loss(dn, labels, gamma, weights)) / (2 * h)
        denom = max(np.linalg.norm(grad), np.linalg.norm(num), 1e-12)
        assert np.linalg.norm(grad - num) / denom < 1e-4


def test_bce_dice_saturated_prediction():
    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    logits = np.where(gt > 0, 30.0, -30.0)
    assert bce_dice_loss(logits, gt) < 1e-6


def test_bce_dice_uniform_half():
    gt = np.array([[1.0, 1.0], [0.0, 0.0]])
    logits = np.zeros((2, 2))  # p = 0.5 everywhere
    # BCE = ln 2; soft dice = (2*1 + 1)/(2 + 2 + 1) = 0.6
    expected = 0.5 * math.log(2.0) + 0.5 * (1.0 - 0.6)
    assert bce_dice_loss(logits, gt) == pytest.approx(expected, abs=1e-12)


def test_bce_dice_empty_gt_smoothing():
    gt = np.zeros((3, 3))
    logits = np.full((3, 3), -30.0)
    # p ~ 0: dice -> (0 + 1)/(0 + 0 + 1) = 1, so the dice term vanishes
    assert bce_dice_loss(logits, gt) == pytest.approx(0.0, abs=1e-6)


def test_bce_dice_monotone_in_flipped_pixels():
    rng = np.random.default_rng(2)
    gt = (rng.random((6, 6)) > 0.5).astype(float)
    clean = np.where(gt > 0, 6.0, -6.0)
    losses = []
    flip_order = rng.permutation(36)
    flipped = clean.copy()
    for count in range(0, 36, 6):
        for idx in flip_order[count:count + 6]:
            flipped.flat[idx] *= -1.0
        losses.append(bce_dice_loss(flipped, gt))
    assert all(a < b for a, b in zip(losses, losses[1:]))


def test_bce_dice_grad_finite_differences():
    rng = np.random.default_rng(3)
    gt = (rng.random((4, 4)) > 0.5).astype(float)
    logits = rng.normal(size=(4, 4))
    grad = bce_dice_grad(logits, gt, 0.6, 0.4)
    h = 1e-6
    num = np.zeros_like(logits)
    for i in range(4):
        for j in range(4):
            up = logits.copy()
            up[i, j] += h
            dn = logits.copy()
            dn[i, j] -= h
            num[i, j] = (bce_dice_loss(up, gt, 0.6, 0.4) - bce_dice_loss(dn, gt, 0.6, 0.4)) / (2 * h)
    denom = max(np.linalg.norm(grad), np.linalg.norm(num), 1e-12)
    assert np.linalg.norm(grad - num) / denom < 1e-4


def test_text_aux_two_orthogonal_pairs():
    r = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = np.array([[1.0, 0.0], [0.0, 1.0]])
    expected = -math.log(math.e / (math.e + 1.0))
    assert text_aux_loss(r, t, temperature=1.0) == pytest.approx(expected, abs=1e-12)


def test_text_aux_identical_embeddings_log_n():
    r = np.tile(np.array([0.3, 0.4]), (5, 1))
    assert text_aux_loss(r, r.copy(), temperature=0.5) == pytest.approx(math.log(5), abs=1e-12)


def test_text_aux_low_temperature_limit():
    rng = np.random.default_rng(4)
    base = np.eye(4) + 0.01 * rng.normal(size=(4, 4))
    assert text_aux_loss(base, np.eye(4), temperature=0.01) < 1e-6


def test_text_aux_grad_finite_differences():
    rng = np.random.default_rng(5)
    r = rng.normal(size=(4, 3))
    t = rng.normal(size=(4, 3))
    gr, gt_ = text_aux_grad(r, t, temperature=0.5)
    h = 1e-6
    for arr, grad in ((r, gr), (t, gt_)):
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            hi = text_aux_loss(r, t, 0.5)
            arr[idx] = orig - h
            lo = text_aux_loss(r, t, 0.5)
            arr[idx] = orig
            num[idx] = (hi - lo) / (2 * h)
            it.iternext()
        denom = max(np.linalg.norm(grad), np.linalg.norm(num), 1e-12)
        assert np.linalg.norm(grad - num) / denom < 1e-4


def test_text_aux_rejects_zero_rows_and_small_batches():
    with pytest.raises(ValueError):
        text_aux_loss(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        text_aux_loss(np.ones((1, 3)), np.ones((1, 3)))


def test_stage1_weighted_sum():
    assert stage1_loss(0.4, 9.0, 9.0, Stage1Weights(1.0, 0.0, 0.0)) == 0.4
    assert stage1_loss(0.1, 0.2, 0.3, Stage1Weights(1.0, 1.0, 1.0)) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        Stage1Weights(0.0, 0.0, 0.0)


def test_stage1_linear_in_each_term():
    w = Stage1Weights(0.5, 1.5, 2.0)
    base = stage1_loss(1.0, 1.0, 1.0, w)
    assert stage1_loss(2.0, 1.0, 1.0, w) - base == pytest.approx(0.5)
    assert stage1_loss(1.0, 2.0, 1.0, w) - base == pytest.approx(1.5)
    assert stage1_loss(1.0, 1.0, 2.0, w) - base == pytest.approx(2.0)


def test_losses_nonnegative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        logits = rng.normal(size=(6, 2))
        labels = rng.integers(0, 2, size=6)
        assert focal_loss(logits, labels, float(rng.uniform(0, 3))) >= 0.0
        gt = (rng.random((5, 5)) > 0.5).astype(float)
        assert bce_dice_loss(rng.normal(size=(5, 5)), gt) >= 0.0
        r = rng.normal(size=(3, 4))
        t = rng.normal(size=(3, 4))
        assert text_aux_loss(r, t, 0.2) >= 0.0
