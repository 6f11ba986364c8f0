import numpy as np
import pytest

from ltbfsim.channel import (ArrayGeometry, PathSet, ScenarioConfig, evolve,
                             frequency_response, generate_drop, load_drop,
                             noncoherent_interference_covariance, save_drop,
                             srs_covariance, srs_subcarriers, steering_vector)
from ltbfsim.linalg import hermitian_eig

SMALL = ScenarioConfig(geometry=ArrayGeometry(4, 4))


class TestSteering:
    def test_broadside(self):
        a = steering_vector(ArrayGeometry(), 0.0, 0.0)
        assert np.array_equal(a, np.ones(64))

    def test_endfire_pair(self):
        a = steering_vector(ArrayGeometry(2, 1, 0.5), np.pi / 2, 0.0)
        assert np.allclose(a, [1, -1], atol=1e-15)

    @pytest.mark.parametrize("theta,phi", [(0.3, -0.2), (-1.2, 0.7), (1.5, 1.5)])
    def test_unit_modulus(self, theta, phi):
        a = steering_vector(ArrayGeometry(8, 8), theta, phi)
        assert np.allclose(np.abs(a), 1)
        assert np.isclose(np.vdot(a, a).real, 64)

    def test_element_order(self):
        g = ArrayGeometry(3, 2, 0.5)
        theta, phi = 0.4, 0.25
        a = steering_vector(g, theta, phi)
        u, v = np.sin(theta) * np.cos(phi), np.sin(phi)
        for p in range(3):
            for q in range(2):
                want = np.exp(1j * 2 * np.pi * 0.5 * (p * u + q * v))
                assert np.isclose(a[p * 2 + q], want)


class TestConfig:
    def test_invalid(self):
        with pytest.raises(ValueError):
            ScenarioConfig(ue_snr_range_db=(5, -5))
        with pytest.raises(ValueError):
            ArrayGeometry(0, 4)
        with pytest.raises(ValueError):
            ArrayGeometry(4, 4, spacing=0)
        with pytest.raises(ValueError):
            ScenarioConfig(N_srs=0)


class TestGenerate:
    def test_deterministic(self):
        a = generate_drop(SMALL, 7).user_channels()
        b = generate_drop(SMALL, 7).user_channels()
        assert a.tobytes() == b.tobytes()
        c = generate_drop(SMALL, 8).user_channels()
        assert not np.array_equal(a, c)

    def test_shapes(self):
        cfg = SMALL.replace(n_ue=3, streams_per_ue=2)
        d = generate_drop(cfg, 0)
        assert d.user_channels().shape == (3, 64, 16, 2)
        assert d.interferer_channel([0, 5]).shape == (2, 16)

    def test_flat_single_path(self):
        cfg = SMALL.replace(paths_per_source=1, delay_spread_s=0.0)
        h = generate_drop(cfg, 0).user_channels()
        assert np.allclose(h, h[:, :1])

    def test_alpha_from_effective_snr(self):
        d = generate_drop(SMALL, 3)
        snr_db = 10 * np.log10(d.alpha * 16)
        assert np.all((snr_db >= -6) & (snr_db <= 14))
        assert np.isclose(d.alpha_v * 16, 1000)

    def test_no_interferer(self):
        d = generate_drop(SMALL.replace(interferer_inr_db=None), 0)
        assert d.interferer is None and d.alpha_v == 0
        assert not np.any(d.interferer_channel())

    def test_frequency_response_formula(self):
        rng = np.random.default_rng(0)
        ps = PathSet(gains=rng.standard_normal((3, 1)) + 0j,
                     theta=np.array([0.1, -0.3, 0.5]),
                     phi=np.array([0.0, 0.2, -0.1]),
                     tau=np.array([0.0, 1e-7, 4e-7]),
                     doppler=np.zeros(3), drift=np.zeros(3))
        h = frequency_response(SMALL, ps, [0, 9])
        for i, n in enumerate([0, 9]):
            want = sum(ps.gains[l, 0] * steering_vector(SMALL.geometry,
                                                        ps.theta[l], ps.phi[l])
                       * np.exp(-2j * np.pi * n * SMALL.subcarrier_spacing_hz
                                * ps.tau[l]) for l in range(3))
            assert np.allclose(h[i, :, 0], want)

    def test_monte_carlo_power(self):
        cfg = SMALL.replace(n_ue=1, interferer_inr_db=None)
        p = [np.mean(np.sum(np.abs(generate_drop(cfg, i).user_channels([0, 31]))
                            ** 2, axis=2)) / 16 for i in range(1000)]
        assert abs(np.mean(p) - 1.0) < 0.05


class TestSrsCovariance:
    def test_single_basis(self):
        e1 = np.zeros((1, 3))
        e1[0, 0] = 1
        assert np.array_equal(srs_covariance(e1), np.diag([1.0, 0, 0]))

    def test_flat(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        q = srs_covariance(np.repeat(h[None], 4, axis=0))
        assert np.allclose(q, h @ h.conj().T)
        assert np.linalg.matrix_rank(q) == 2

    def test_trace_identity(self):
        h = generate_drop(SMALL, 2).user_channels()[0]
        q = srs_covariance(h)
        want = np.mean([np.linalg.norm(h[n]) ** 2 for n in range(h.shape[0])])
        assert np.isclose(np.trace(q).real, want)

    def test_unitary_commutes(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
        u, _ = np.linalg.qr(rng.standard_normal((5, 5))
                            + 1j * rng.standard_normal((5, 5)))
        lhs = srs_covariance(h @ u.T)
        rhs = u @ srs_covariance(h) @ u.conj().T
        assert np.allclose(lhs, rhs, atol=1e-13)

    def test_psd(self):
        h = generate_drop(SMALL, 4).user_channels(srs_subcarriers(SMALL))[1]
        w, _ = hermitian_eig(srs_covariance(h))
        assert w[-1] >= -1e-10 * w[0]

    def test_empty(self):
        with pytest.raises(ValueError):
            srs_covariance(np.zeros((0, 3)))


class TestNoncoherent:
    def test_flat_analytic(self):
        cfg = SMALL.replace(interferer_paths=1, delay_spread_s=0.0)
        d = generate_drop(cfg, 0)
        hv = d.interferer_channel([0])[0]
        qv = noncoherent_interference_covariance(d)
        assert np.allclose(qv, d.alpha_v * np.outer(hv, hv.conj()) + np.eye(16))

    def test_single_frame_psd(self):
        qv = noncoherent_interference_covariance(generate_drop(SMALL, 1), 1)
        w, _ = hermitian_eig(qv)
        assert w[-1] >= -1e-10 * w[0]

    def test_monte_carlo(self):
        d = generate_drop(SMALL, 5)
        exact = noncoherent_interference_covariance(d)
        est = noncoherent_interference_covariance(d, 10_000 // 64 + 1)
        rel = np.linalg.norm(est - exact) / np.linalg.norm(exact)
        assert rel < 0.03


class TestEvolve:
    def test_zero_dt(self):
        d = generate_drop(SMALL, 0)
        e = evolve(d, 0.0)
        assert np.array_equal(e.user_channels(), d.user_channels())

    def test_static(self):
        d = generate_drop(SMALL.replace(ue_speed_mps=0.0), 0)
        e = evolve(d, 1000.0)
        assert np.array_equal(e.user_channels(), d.user_channels())
        assert np.array_equal(e.interferer_channel(), d.interferer_channel())

    def test_half_cycle_negates(self):
        cfg = SMALL.replace(paths_per_source=1, angle_drift_deg_per_s=0.0)
        d = generate_drop(cfg, 0)
        fd = d.users[0].doppler[0]
        e = evolve(d, 0.5 / abs(fd) * 1e3)
        h0, h1 = d.user_channels()[0], e.user_channels()[0]
        assert np.allclose(h1, -h0, atol=1e-9)

    def test_negative(self):
        with pytest.raises(ValueError):
            evolve(generate_drop(SMALL, 0), -1.0)

    def test_long_term_stability(self):
        cfg = ScenarioConfig()
        sc = srs_subcarriers(cfg)
        for i in range(10):
            d = generate_drop(cfg, i)
            e = evolve(d, cfg.T_LT_ms)
            for h0, h1 in zip(d.user_channels(sc), e.user_channels(sc)):
                v0 = hermitian_eig(srs_covariance(h0))[1][:, 0]
                v1 = hermitian_eig(srs_covariance(h1))[1][:, 0]
                ang = np.degrees(np.arccos(min(1.0, abs(np.vdot(v0, v1)))))
                assert ang <= 5.0


def test_drop_roundtrip(tmp_path):
    d = generate_drop(SMALL.replace(streams_per_ue=2), 3)
    d = evolve(d, 4.0)
    save_drop(d, tmp_path / "d.bin")
    back = load_drop(tmp_path / "d.bin")
    assert back.config == d.config
    assert back.time_s == d.time_s
    assert np.array_equal(back.alpha, d.alpha)
    assert np.array_equal(back.user_channels(), d.user_channels())
    assert np.array_equal(back.interferer_channel(), d.interferer_channel())
