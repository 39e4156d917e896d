import numpy as np
import pytest

from streamvox import dsp, lpc
from streamvox.errors import DegenerateSpectrum, NumericalError, ShapeMismatch

import oracles


def random_valid_autocorr(rng, order=16):
    """Lags of a random positive power spectrum: positive definite by construction."""
    power = rng.uniform(0.1, 2.0, 256)
    return oracles.inverse_dft_autocorr(power, order)


def reflection_to_lpc(ks):
    """Step-up recursion: reflection coefficients -> direct-form coefficients."""
    a = np.zeros(0)
    for i, k in enumerate(ks, start=1):
        new = np.zeros(i)
        new[: i - 1] = a - k * a[::-1]
        new[i - 1] = k
        a = new
    return a


class TestEnvelope:
    def test_only_c0_gives_flat_envelope(self):
        coeffs = np.zeros(18)
        coeffs[0] = 2.5
        env = lpc.envelope_from_bark(coeffs)
        assert np.allclose(env, env[0])

    def test_zero_cepstrum_gives_unit_envelope(self):
        assert np.allclose(lpc.envelope_from_bark(np.zeros(18)), 1.0)

    def test_roundtrip_band_energies(self):
        frame = np.random.default_rng(0).uniform(-1, 1, 400)
        coeffs = dsp.bark_cepstrum(frame)
        env = lpc.envelope_from_bark(coeffs)
        recovered = np.log(env[dsp.BARK_CENTER_BINS])
        np.testing.assert_allclose(recovered, dsp.bark_log_energies(frame), atol=1e-6)

    def test_nonfinite_raises(self):
        bad = np.zeros(18)
        bad[3] = np.nan
        with pytest.raises(NumericalError):
            lpc.envelope_from_bark(bad)


class TestAutocorr:
    def test_flat_spectrum_is_near_delta(self):
        r = lpc.autocorr_from_envelope(np.ones(256))
        assert r[0] == pytest.approx(1.0 + lpc.NOISE_FLOOR, rel=1e-12)
        assert np.allclose(r[1:], 0.0, atol=1e-12)

    def test_single_bin_is_cosine(self):
        for f_bin in [5, 60, 200]:
            power = np.zeros(256)
            power[f_bin] = 1.0
            r = lpc.autocorr_from_envelope(power)
            k = np.arange(17)
            expected = 2.0 * np.cos(2 * np.pi * f_bin * k / 512) / 512 * lpc.LAG_WINDOW
            expected[0] *= 1.0 + lpc.NOISE_FLOOR
            np.testing.assert_allclose(r, expected, atol=1e-12)

    def test_random_matches_defining_sum(self):
        rng = np.random.default_rng(1)
        power = rng.uniform(0.0, 3.0, 256)
        r = lpc.autocorr_from_envelope(power)
        expected = oracles.inverse_dft_autocorr(power, 16) * lpc.LAG_WINDOW
        expected[0] *= 1.0 + lpc.NOISE_FLOOR
        np.testing.assert_allclose(r, expected, atol=1e-8)

    def test_zero_spectrum_raises(self):
        with pytest.raises(DegenerateSpectrum):
            lpc.autocorr_from_envelope(np.zeros(256))


class TestLevinsonDurbin:
    def test_order_one_analytic(self):
        a, energy = lpc.levinson_durbin(np.array([1.0, 0.5]), order=1)
        assert a == pytest.approx([0.5])
        assert energy == pytest.approx(0.75)

    def test_order_two_normal_equations(self):
        r = np.array([1.0, 0.5, 0.1])
        a, energy = lpc.levinson_durbin(r, order=2)
        # solve the 2x2 normal equations directly
        a1 = (r[1] * (r[0] - r[2])) / (r[0] ** 2 - r[1] ** 2)
        a2 = (r[0] * r[2] - r[1] ** 2) / (r[0] ** 2 - r[1] ** 2)
        assert a == pytest.approx([a1, a2])
        assert (a1, a2) == pytest.approx((0.6, -0.2))
        assert energy == pytest.approx(r[0] - a @ r[1:], rel=1e-12)

    def test_matches_dense_toeplitz_solve(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            r = random_valid_autocorr(rng)
            a, energy = lpc.levinson_durbin(r)
            a_ref, e_ref = oracles.toeplitz_lpc_solve(r, 16)
            np.testing.assert_allclose(a, a_ref, atol=1e-8)
            assert energy == pytest.approx(e_ref, abs=1e-8)

    def test_r0_nonpositive_raises(self):
        with pytest.raises(DegenerateSpectrum):
            lpc.levinson_durbin(np.array([0.0, 0.1]), order=1)

    def test_invalid_reflection_raises(self):
        # |r1| > r0 forces |k1| > 1
        with pytest.raises(NumericalError):
            lpc.levinson_durbin(np.array([1.0, 1.5]), order=1)

    def test_residual_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            r = random_valid_autocorr(rng)
            _, energy = lpc.levinson_durbin(r)
            assert 0 <= energy <= r[0]
        # equality iff all reflection coefficients vanish
        _, energy = lpc.levinson_durbin(np.array([2.0, 0, 0, 0, 0]), order=4)
        assert energy == pytest.approx(2.0)

    def test_stability_on_random_envelopes(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            coeffs = rng.normal(0, 1.0, 18)
            coeffs[0] = rng.uniform(-20, 5)
            a = lpc.coeffs_for_frame(coeffs).a
            roots = np.roots(np.concatenate([[1.0], -a]))
            assert np.all(np.abs(roots) < 1.0)


class TestPredictor:
    def test_zero_history(self):
        state = lpc.PredictorState()
        coeffs = lpc.LpcCoefficients(np.random.default_rng(5).normal(size=16))
        assert lpc.predict(state, coeffs) == 0.0

    def test_identity_predictor(self):
        state = lpc.PredictorState()
        state.push(0.3)
        a = np.zeros(16)
        a[0] = 1.0
        assert lpc.predict(state, lpc.LpcCoefficients(a)) == pytest.approx(0.3)

    def test_matches_defining_sum(self):
        rng = np.random.default_rng(6)
        state = lpc.PredictorState()
        samples = rng.uniform(-1, 1, 30)
        for s in samples:
            state.push(s)
        a = rng.normal(size=16)
        expected = sum(a[k] * samples[-1 - k] for k in range(16))
        assert lpc.predict(state, lpc.LpcCoefficients(a)) == pytest.approx(expected, rel=1e-12)

    def test_predict_does_not_mutate(self):
        state = lpc.PredictorState()
        state.push(0.5)
        before = state.history.copy()
        lpc.predict(state, lpc.LpcCoefficients(np.ones(16) * 0.1))
        assert np.array_equal(state.history, before)


class TestWhitening:
    def test_reestimated_coefficients_match_generator(self):
        rng = np.random.default_rng(7)
        ks = rng.uniform(-0.4, 0.4, 16)
        a_true = reflection_to_lpc(ks)
        # synthesize 1 s of the AR(16) process
        n = 16000
        noise = rng.normal(0, 0.01, n + 500)
        x = np.zeros(n + 500)
        for t in range(16, n + 500):
            x[t] = a_true @ x[t - 16 : t][::-1] + noise[t]
        x = x[500:]
        r = np.array([x[: n - k] @ x[k:] for k in range(17)]) / n
        a_est, _ = lpc.levinson_durbin(r)
        # 1e-2 at the RMS level; per-coefficient max is statistically ~1/sqrt(n)
        assert np.sqrt(np.mean((a_est - a_true) ** 2)) < 1e-2
        assert np.max(np.abs(a_est - a_true)) < 3e-2
        # inverse filtering leaves a near-white residual
        resid = x[16:] - np.array([a_est @ x[t - 16 : t][::-1] for t in range(16, n)])
        r_resid = np.array([resid[: len(resid) - k] @ resid[k:] for k in range(1, 9)])
        assert np.max(np.abs(r_resid)) / (resid @ resid) < 0.02