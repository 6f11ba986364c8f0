import numpy as np
import pytest

from ltbfsim.channel import ArrayGeometry, ScenarioConfig, generate_drop
from ltbfsim.inversion import InversionSpec
from ltbfsim.ltbf import (NullingConfig, build_beamformers,
                          estimate_covariances, prepare_design)
from ltbfsim.metrics import (LinkMetrics, capacity_from_sinr,
                             effective_noise_covariance, evaluate_ltbf,
                             evaluate_mmse_baseline, mmse_sinr, summarize)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def cn(rng, *shape):
    return crandn(rng, *shape) / np.sqrt(2)


class TestNoiseCovariance:
    def test_white(self):
        g = np.eye(4)[:2]
        c = effective_noise_covariance(g, np.zeros((0, 1, 4, 1)), [], None,
                                       0.0, 2.0)
        assert np.allclose(c, 2 * np.eye(2))

    def test_orthogonal_users(self):
        g = np.eye(4)[:2]
        others = np.zeros((1, 3, 4, 1), dtype=complex)
        others[0, :, 2:, 0] = 1.0
        c = effective_noise_covariance(g, others, [5.0])
        assert np.allclose(c, np.eye(2))

    def test_monte_carlo(self):
        rng = np.random.default_rng(0)
        n, r, s = 8, 2, 2
        g = crandn(rng, r, n)
        others = crandn(rng, 2, 1, n, s)
        power = np.array([0.7, 2.0])
        hv = crandn(rng, 1, n)
        alpha_v, nv = 5.0, 0.5
        c = effective_noise_covariance(g, others, power, hv, alpha_v, nv)[0]

        m = 10_000
        y = np.zeros((n, m), dtype=complex)
        for j in range(2):
            y += np.sqrt(power[j]) * others[j, 0] @ cn(rng, s, m)
        y += np.sqrt(alpha_v) * hv[0][:, None] * cn(rng, 1, m)
        y += np.sqrt(nv) * cn(rng, n, m)
        z = g @ y
        est = z @ z.conj().T / m
        assert np.linalg.norm(est - c) / np.linalg.norm(c) < 0.03

    def test_shape_check(self):
        with pytest.raises(ValueError):
            effective_noise_covariance(np.eye(2), np.zeros((2, 2)), [1, 1])


class TestMmseSinr:
    def test_scalar_closed_form(self):
        rng = np.random.default_rng(1)
        h = crandn(rng, 3, 1)
        sinr = mmse_sinr(h, 0.5 * np.eye(3), 2.0)
        assert np.isclose(sinr[0], 2.0 / 0.5 * np.linalg.norm(h) ** 2)

    def test_zero_channel(self):
        assert np.array_equal(mmse_sinr(np.zeros((2, 1)), np.eye(2), 1.0), [0])

    def test_orthogonal_streams(self):
        h = np.array([[2.0, 0], [0, 3.0], [0, 0]])
        sinr = mmse_sinr(h, np.eye(3), 1.5)
        assert np.allclose(sinr, [1.5 * 4, 1.5 * 9])

    def test_two_stream_oracle(self):
        # per-stream SINR of the MMSE filter against interference from the
        # other stream, computed as h_s^H (C + P h_o h_o^H)^{-1} h_s * P
        rng = np.random.default_rng(2)
        h = crandn(rng, 4, 2)
        c = np.eye(4) + 0.3 * np.outer(*(2 * [crandn(rng, 4)]))
        c = 0.5 * (c + c.conj().T) + np.eye(4)
        p = 0.8
        got = mmse_sinr(h, c, p)
        for s in range(2):
            o = 1 - s
            ci = c + p * np.outer(h[:, o], h[:, o].conj())
            want = p * np.real(h[:, s].conj() @ np.linalg.solve(ci, h[:, s]))
            assert np.isclose(got[s], want)

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            mmse_sinr(np.ones((2, 1)), np.zeros((2, 2)), 1.0)

    def test_stacked(self):
        rng = np.random.default_rng(3)
        h = crandn(rng, 5, 3, 1)
        c = np.broadcast_to(np.eye(3), (5, 3, 3))
        got = mmse_sinr(h, c, 1.0)
        assert got.shape == (5, 1)
        assert np.allclose(got[:, 0], np.sum(np.abs(h[:, :, 0]) ** 2, axis=1))


CFG = ScenarioConfig(geometry=ArrayGeometry(4, 4), T_LT_ms=0.0)


class TestEvaluate:
    def test_single_ue_matched_filter(self):
        cfg = CFG.replace(n_ue=1, interferer_inr_db=None)
        d = generate_drop(cfg, 0)
        m = evaluate_mmse_baseline(d)
        h = d.user_channels()[0, :, :, 0]
        want = np.mean(np.log2(1 + d.alpha[0] * np.sum(np.abs(h) ** 2, 1)))
        assert np.isclose(m.capacity[0], want)

    def test_lossless_projection(self):
        cfg = CFG.replace(n_ue=1, interferer_inr_db=None)
        d = generate_drop(cfg, 1)
        covs = estimate_covariances(d)
        bf = build_beamformers(covs, 16, InversionSpec(), NullingConfig())
        a = evaluate_ltbf(d, bf.G).capacity
        b = evaluate_mmse_baseline(d).capacity
        assert np.max(np.abs(a - b)) < 1e-6

    def test_left_invariance(self):
        d = generate_drop(CFG.replace(streams_per_ue=2), 2)
        covs = estimate_covariances(d)
        g = build_beamformers(covs, 2, InversionSpec(), NullingConfig()).G
        rng = np.random.default_rng(4)
        tg = [crandn(rng, 2, 2) @ x for x in g]
        s1 = evaluate_ltbf(d, g).sinr
        s2 = evaluate_ltbf(d, tg).sinr
        assert np.max(np.abs(s1 - s2) / np.maximum(s1, 1)) <= 1e-9

    def test_orthogonal_user_leaves_sinr(self):
        d = generate_drop(CFG.replace(n_ue=2, interferer_inr_db=None), 3)
        h = d.user_channels()
        h1 = h[0, :, :, 0]
        h2 = h[1, :, :, 0]
        # remove the component of user 2 along user 1 on every subcarrier
        h2 = h2 - h1 * (np.sum(h1.conj() * h2, 1)
                        / np.sum(np.abs(h1) ** 2, 1))[:, None]
        alone = effective_noise_covariance(np.eye(16),
                                           np.zeros((0, 64, 16, 1)), [])
        with2 = effective_noise_covariance(np.eye(16), h2[None, :, :, None],
                                           [50.0])
        s_alone = mmse_sinr(h[0], alone, d.alpha[0])
        s_with = mmse_sinr(h[0], with2, d.alpha[0])
        assert np.allclose(s_alone, s_with, rtol=1e-9)

    def test_mmse_dominates_ltbf(self):
        cfg = ScenarioConfig(T_LT_ms=0.0)
        for i in range(5):
            d = generate_drop(cfg, i)
            covs = estimate_covariances(d)
            base = evaluate_mmse_baseline(d, range(0, 64, 4)).capacity
            for on in (False, True):
                bf = build_beamformers(covs, 1, InversionSpec.parse(
                    "cg:3", "q15.16"), NullingConfig(on, 3))
                ex = prepare_design(covs, NullingConfig(on, 3)).exact(1)
                for g in (bf.G, ex):
                    cap = evaluate_ltbf(d, g, range(0, 64, 4)).capacity
                    assert np.all(base >= cap - 1e-9)

    def test_capacity_consistency(self):
        d = generate_drop(CFG, 5)
        m = evaluate_mmse_baseline(d)
        recomputed = np.mean(np.sum(np.log2(1 + m.sinr), axis=-1), axis=-1)
        assert np.array_equal(m.capacity, recomputed)
        assert np.all(m.sinr >= 0)

    def test_projection_count(self):
        d = generate_drop(CFG, 0)
        with pytest.raises(ValueError):
            evaluate_ltbf(d, [np.eye(16)])


class TestSummarize:
    def test_constant(self):
        s = summarize([2.5] * 7)
        assert s["mean"] == s["p10"] == 2.5

    def test_nearest_rank(self):
        assert summarize(np.arange(1, 101))["p10"] == 10
        assert summarize([5, 1, 3])["p10"] == 1

    def test_cdf(self):
        s = summarize(np.random.default_rng(5).standard_normal(50))
        vals, probs = zip(*s["cdf"])
        assert list(vals) == sorted(vals)
        assert all(a <= b for a, b in zip(probs, probs[1:]))
        assert probs[-1] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize([])

    def test_link_metrics(self):
        m = LinkMetrics(sinr=np.ones((2, 3, 1)),
                        capacity=capacity_from_sinr(np.ones((2, 3, 1))))
        assert m.mean_capacity == 1.0 and m.p10_capacity == 1.0
        assert np.allclose(m.sinr_db(), 0.0)


@pytest.fixture(scope="module")
def small_k_sweep():
    from ltbfsim.harness import SweepSpec, run_sweep
    spec = SweepSpec(methods={"cg": [1, 2, 3]},
                     precisions=("fp32", "q15.16", "q7.16"), n_drops=50)
    return run_sweep(spec)


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("prec", ["fp32", "q15.16", "q7.16"])
def test_nulling_benefit_small_k(small_k_sweep, prec, k):
    on = small_k_sweep.capacity_matrix("cg", k, prec, 1).mean(axis=1)
    off = small_k_sweep.capacity_matrix("cg", k, prec, 0).mean(axis=1)
    frac = np.mean(on >= off)
    assert frac >= 0.9, f"nulled >= non-nulled in {frac:.0%} of drops"
