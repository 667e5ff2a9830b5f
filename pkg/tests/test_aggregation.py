import math

import numpy as np
import pytest

from lesionkit.aggregation import (AggregationResult, CandidatePrediction, McraConfig,
                                   aggregate, consistency_loss, consistency_loss_grad,
                                   final_weights, partition_confidence, saliency_weights,
                                   semantic_weights, soft_fuse, teacher_mask)


def random_candidates(rng, k=None, h=None, w=None, d=None, c=2):
    k = k or int(rng.integers(1, 7))
    h = h or int(rng.integers(1, 17))
    w = w or int(rng.integers(1, 17))
    d = d or int(rng.integers(1, 9))
    cands = [CandidatePrediction(rng.normal(size=(h, w)) * 3.0,
                                 rng.normal(size=c),
                                 rng.normal(size=d),
                                 float(rng.normal()))
             for _ in range(k)]
    f_text = rng.normal(size=d)
    return cands, f_text


def oracle_aggregate(cands, f_text, cfg):
    """Step-by-step reference with plain python loops, kept independent of
    the library implementation."""
    k = len(cands)
    tau_sal, tau_sem, alpha, gamma = cfg.tau_sal, cfg.tau_sem, cfg.alpha, cfg.gamma
    theta = cfg.theta if cfg.theta is not None else 1.0 / k

    exp_sal = [math.exp(c.saliency / tau_sal) for c in cands]
    w_sal = [e / sum(exp_sal) for e in exp_sal]

    sems = []
    for c in cands:
        ne = math.sqrt(sum(v * v for v in c.embedding))
        nt = math.sqrt(sum(v * v for v in f_text))
        sems.append(0.0 if ne == 0 or nt == 0 else
                    sum(a * b for a, b in zip(c.embedding, f_text)) / (ne * nt))
    exp_sem = [math.exp(s / tau_sem) for s in sems]
    w_sem = [e / sum(exp_sem) for e in exp_sem]

    w_final = [(1 - alpha) * a + alpha * b for a, b in zip(w_sal, w_sem)]

    high = [j for j in range(k) if w_final[j] >= theta]
    if not high:
        high = [max(range(k), key=lambda j: w_final[j])]
    low = [j for j in range(k) if j not in high]

    fused_mask = sum(w_final[j] * cands[j].mask_logits for j in range(k))
    fused_logits = sum(w_final[j] * cands[j].cls_logits for j in range(k))
    fused_emb = sum(w_final[j] * cands[j].embedding for j in range(k))

    denom = sum(w_final[j] for j in high)
    teacher = 1.0 / (1.0 + np.exp(-sum((w_final[j] / denom) * cands[j].mask_logits
                                       for j in high)))
    loss = 0.0
    for j in low:
        resid = 1.0 / (1.0 + np.exp(-cands[j].mask_logits)) - teacher
        loss += (1 - w_final[j]) ** gamma * float((resid ** 2).sum())
    loss = loss / len(low) if low else 0.0
    return w_sal, w_sem, w_final, fused_mask, fused_logits, fused_emb, high, low, teacher, loss


def assert_matches_oracle(res: AggregationResult, oracle, tol=1e-10):
    w_sal, w_sem, w_final, fm, fl, fe, high, low, teacher, loss = oracle
    np.testing.assert_allclose(res.w_sal, w_sal, atol=tol)
    np.testing.assert_allclose(res.w_sem, w_sem, atol=tol)
    np.testing.assert_allclose(res.w_final, w_final, atol=tol)
    np.testing.assert_allclose(res.fused_mask, fm, atol=tol)
    np.testing.assert_allclose(res.fused_logits, fl, atol=tol)
    np.testing.assert_allclose(res.fused_embedding, fe, atol=tol)
    assert list(res.high_set) == high
    assert list(res.low_set) == low
    np.testing.assert_allclose(res.teacher, teacher, atol=tol)
    assert res.consistency_loss == pytest.approx(loss, abs=tol)


def test_saliency_uniform():
    np.testing.assert_allclose(saliency_weights(np.ones(4), 1.0), np.full(4, 0.25))


def test_saliency_hand_case():
    w = saliency_weights(np.array([math.log(2.0), 0.0]), 1.0)
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-15)


def test_saliency_sharpening_limit():
    s = np.array([0.3, 0.9, 0.1, 0.5])
    w = saliency_weights(s, 0.01)
    assert w[np.argmax(s)] > 1.0 - 1e-6


def test_saliency_order_preserving_and_scale_pair_invariance():
    rng = np.random.default_rng(0)
    s = rng.normal(size=5)
    w = saliency_weights(s, 0.7)
    assert np.all(np.diff(w[np.argsort(s)]) >= 0)
    np.testing.assert_allclose(saliency_weights(3.0 * s, 3.0 * 0.7), w, atol=1e-12)


def test_semantic_equal_cosines_uniform():
    f = np.array([1.0, 2.0, 3.0])
    emb = np.stack([f * 2.0, f * 0.5, f])
    np.testing.assert_allclose(semantic_weights(emb, f, 1.0), np.full(3, 1 / 3), atol=1e-15)


def test_semantic_hand_case():
    f = np.array([1.0, 0.0])
    emb = np.array([[2.0, 0.0], [0.0, 5.0]])  # cosines (1, 0)
    w = semantic_weights(emb, f, 1.0)
    e = math.e
    np.testing.assert_allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-15)


def test_semantic_text_scale_invariance():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(4, 6))
    f = rng.normal(size=6)
    np.testing.assert_allclose(semantic_weights(emb, 10.0 * f, 0.5),
                               semantic_weights(emb, f, 0.5), atol=1e-12)


def test_semantic_zero_norm_is_neutral():
    f = np.array([1.0, 0.0])
    emb = np.array([[0.0, 0.0], [1.0, 0.0]])
    w = semantic_weights(emb, f, 1.0)
    e = math.e
    np.testing.assert_allclose(w, [1 / (e + 1), e / (e + 1)], atol=1e-15)


def test_final_weights_endpoints_and_midpoint():
    w_sal = np.array([0.8, 0.2])
    w_sem = np.array([0.4, 0.6])
    np.testing.assert_array_equal(final_weights(w_sal, w_sem, 0.0), w_sal)
    np.testing.assert_array_equal(final_weights(w_sal, w_sem, 1.0), w_sem)
    np.testing.assert_allclose(final_weights(w_sal, w_sem, 0.5), [0.6, 0.4], atol=1e-15)
    with pytest.raises(ValueError):
        final_weights(w_sal, w_sem, 1.5)


def test_soft_fuse_endpoint_and_identity():
    rng = np.random.default_rng(2)
    cands, _ = random_candidates(rng, k=1, h=4, w=4, d=3)
    fm, fl, fe = soft_fuse(cands, np.array([1.0]))
    np.testing.assert_array_equal(fm, cands[0].mask_logits)
    np.testing.assert_array_equal(fl, cands[0].cls_logits)
    np.testing.assert_array_equal(fe, cands[0].embedding)

    same = [cands[0]] * 3
    fm, fl, fe = soft_fuse(same, np.array([0.2, 0.5, 0.3]))
    np.testing.assert_allclose(fm, cands[0].mask_logits, atol=1e-12)


def test_soft_fuse_matches_weighted_sum_oracle():
    rng = np.random.default_rng(3)
    cands, _ = random_candidates(rng, k=3, h=5, w=4, d=6)
    w = np.array([0.5, 0.3, 0.2])
    fm, fl, fe = soft_fuse(cands, w)
    exp_m = sum(wi * c.mask_logits for wi, c in zip(w, cands))
    np.testing.assert_allclose(fm, exp_m, atol=1e-12)
    np.testing.assert_allclose(fl, sum(wi * c.cls_logits for wi, c in zip(w, cands)), atol=1e-12)
    np.testing.assert_allclose(fe, sum(wi * c.embedding for wi, c in zip(w, cands)), atol=1e-12)


def test_partition_cases():
    assert partition_confidence(np.array([0.6, 0.4]), 0.5) == ((0,), (1,))
    assert partition_confidence(np.array([0.5, 0.5]), 0.5) == ((0, 1), ())
    assert partition_confidence(np.array([0.3, 0.3, 0.4]), 0.5) == ((2,), (0, 1))


def test_teacher_limits():
    zero = CandidatePrediction(np.zeros((3, 3)), np.zeros(2), np.ones(2), 0.0)
    t = teacher_mask([zero], (0,), np.array([1.0]))
    np.testing.assert_allclose(t, 0.5)
    big = CandidatePrediction(np.full((3, 3), 40.0), np.zeros(2), np.ones(2), 0.0)
    np.testing.assert_allclose(teacher_mask([big], (0,), np.array([1.0])), 1.0, atol=1e-12)


def test_teacher_two_candidate_cancellation():
    a = CandidatePrediction(np.full((2, 2), 2.0), np.zeros(2), np.ones(2), 0.0)
    b = CandidatePrediction(np.full((2, 2), -2.0), np.zeros(2), np.ones(2), 0.0)
    t = teacher_mask([a, b], (0, 1), np.array([0.5, 0.5]))
    np.testing.assert_allclose(t, 0.5, atol=1e-15)


def test_teacher_invariant_to_high_weight_rescaling():
    rng = np.random.default_rng(4)
    cands, _ = random_candidates(rng, k=3, h=4, w=4, d=2)
    w = np.array([0.5, 0.3, 0.2])
    t1 = teacher_mask(cands, (0, 1), w)
    w2 = w.copy()
    w2[[0, 1]] *= 7.5
    np.testing.assert_allclose(teacher_mask(cands, (0, 1), w2), t1, atol=1e-12)


def test_consistency_loss_conventions():
    rng = np.random.default_rng(5)
    cands, _ = random_candidates(rng, k=2, h=2, w=2, d=2)
    teacher = np.full((2, 2), 0.5)
    assert consistency_loss(cands, (), np.array([0.5, 0.5]), teacher, 2.0) == 0.0
    matched = CandidatePrediction(np.zeros((2, 2)), np.zeros(2), np.ones(2), 0.0)
    assert consistency_loss([matched], (0,), np.array([1.0]), np.full((2, 2), 0.5), 2.0) \
        == pytest.approx(0.0, abs=1e-15)


def test_consistency_loss_hand_value():
    # sigmoid(M) - teacher = 0.1 on a 2x2 grid, w=0.5, gamma=1 -> 0.5 * 0.04 = 0.02
    logits = np.zeros((2, 2))
    teacher = np.full((2, 2), 0.4)
    cand = CandidatePrediction(logits, np.zeros(2), np.ones(2), 0.0)
    loss = consistency_loss([cand], (0,), np.array([0.5]), teacher, 1.0)
    assert loss == pytest.approx(0.02, abs=1e-12)


def test_consistency_loss_monotone_in_weight():
    logits = np.ones((3, 3))
    teacher = np.full((3, 3), 0.2)
    cand = CandidatePrediction(logits, np.zeros(2), np.ones(2), 0.0)
    losses = [consistency_loss([cand], (0,), np.array([w]), teacher, 2.0)
              for w in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = f()
        x[idx] = orig - h
        lo = f()
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * h)
        it.iternext()
    return g


def test_gradient_check_low_set_and_stop_gradient():
    rng = np.random.default_rng(6)
    for _ in range(100):
        cands, f_text = random_candidates(rng, k=int(rng.integers(2, 5)),
                                          h=int(rng.integers(2, 5)),
                                          w=int(rng.integers(2, 5)), d=3)
        cfg = McraConfig(theta=None, gamma=float(rng.uniform(0.5, 3.0)))
        res = aggregate(cands, f_text, cfg)
        if not res.low_set:
            continue
        grads = consistency_loss_grad(cands, res.low_set, res.w_final, res.teacher, cfg.gamma)
        for j in res.low_set:
            mask = cands[j].mask_logits

            def loss_fn(j=j):
                return consistency_loss(cands, res.low_set, res.w_final, res.teacher, cfg.gamma)

            num = numeric_grad(loss_fn, mask)
            denom = max(np.linalg.norm(grads[j]), np.linalg.norm(num), 1e-12)
            assert np.linalg.norm(grads[j] - num) / denom < 1e-4
        # stop-gradient: teacher held constant, perturbing a high-set mask is a no-op
        for i in res.high_set:
            np.testing.assert_array_equal(grads[i], 0.0)
            mask = cands[i].mask_logits
            num = numeric_grad(
                lambda: consistency_loss(cands, res.low_set, res.w_final, res.teacher, cfg.gamma),
                mask)
            np.testing.assert_array_equal(num, 0.0)


def test_aggregate_k1_collapse():
    rng = np.random.default_rng(7)
    cands, f_text = random_candidates(rng, k=1, h=3, w=3, d=4)
    res = aggregate(cands, f_text, McraConfig())
    np.testing.assert_array_equal(res.w_final, [1.0])
    np.testing.assert_array_equal(res.fused_mask, cands[0].mask_logits)
    assert res.low_set == ()
    assert res.consistency_loss == 0.0


def test_aggregate_alpha0_theta0_collapse():
    rng = np.random.default_rng(8)
    cands, f_text = random_candidates(rng, k=4, h=4, w=4, d=4)
    cfg = McraConfig(alpha=0.0, theta=1e-12)
    res = aggregate(cands, f_text, cfg)
    np.testing.assert_allclose(res.w_final, res.w_sal, atol=1e-15)
    assert res.high_set == (0, 1, 2, 3)
    assert res.low_set == ()
    assert res.consistency_loss == 0.0
    # semantic independence: a different text vector changes nothing
    other = aggregate(cands, rng.normal(size=4), cfg)
    np.testing.assert_array_equal(other.fused_mask, res.fused_mask)
    np.testing.assert_array_equal(other.w_final, res.w_final)


def test_aggregate_matches_oracle():
    rng = np.random.default_rng(9)
    for _ in range(200):
        cands, f_text = random_candidates(rng)
        cfg = McraConfig(tau_sal=float(rng.uniform(0.2, 2.0)),
                         tau_sem=float(rng.uniform(0.2, 2.0)),
                         alpha=float(rng.uniform(0.0, 1.0)),
                         theta=float(rng.uniform(0.05, 0.9)),
                         gamma=float(rng.uniform(0.5, 3.0)))
        res = aggregate(cands, f_text, cfg)
        assert_matches_oracle(res, oracle_aggregate(cands, f_text, cfg))
        for w in (res.w_sal, res.w_sem, res.w_final):
            assert abs(w.sum() - 1.0) < 1e-9


def test_permutation_equivariance():
    rng = np.random.default_rng(10)
    cands, f_text = random_candidates(rng, k=4, h=3, w=3, d=5)
    cfg = McraConfig(theta=0.2)
    res = aggregate(cands, f_text, cfg)
    perm = [2, 0, 3, 1]
    res_p = aggregate([cands[j] for j in perm], f_text, cfg)
    np.testing.assert_allclose(res_p.w_final, res.w_final[perm], atol=1e-12)
    np.testing.assert_allclose(res_p.fused_mask, res.fused_mask, atol=1e-12)
    np.testing.assert_allclose(res_p.teacher, res.teacher, atol=1e-12)
    assert sorted(perm.index(j) for j in res.high_set) == sorted(res_p.high_set)
    assert res_p.consistency_loss == pytest.approx(res.consistency_loss, rel=1e-12)


def test_mean_reduction_flag():
    rng = np.random.default_rng(11)
    cands, f_text = random_candidates(rng, k=3, h=4, w=5, d=3)
    res_sum = aggregate(cands, f_text, McraConfig(theta=0.5, cons_reduction="sum"))
    res_mean = aggregate(cands, f_text, McraConfig(theta=0.5, cons_reduction="mean"))
    if res_sum.low_set:
        assert res_mean.consistency_loss == pytest.approx(res_sum.consistency_loss / 20.0,
                                                          rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        McraConfig(tau_sal=0.0)
    with pytest.raises(ValueError):
        McraConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        McraConfig(gamma=0.0)
    with pytest.raises(ValueError):
        McraConfig(theta=1.5)
