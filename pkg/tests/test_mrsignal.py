import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mrtherm.errors import ConfigError, DomainError
from mrtherm.mrsignal import (MrProtocol, NoiseModel, add_noise, centered, complex_image, kspace_forward,
                              kspace_forward_oracle, kspace_frequencies, kspace_inverse, magnetization, uncentered)

# mpmath, 30 digits: sin(pi/3)(1 - E1)/(1 - cos(pi/3) E1), E1 = exp(-0.544/1.035)
M_SPGR = 0.502601162872849863116653411677
# mpmath, 30 digits: 2 pi 42.58e6 (-0.0102e-6) 1.5 0.025 10
PHASE_10C = -1.02333296620237848011710606774


def protocol(**kw):
    base = dict(flip_angle=math.pi / 3, tr=0.544, te=0.025, gamma=42.58e6, alpha=-0.0102e-6, b0=1.5,
                t1=(1.035,), t2star=(0.070,))
    base.update(kw)
    return MrProtocol(**base)


class TestMagnetization:
    def test_saturation_limit(self):
        p = protocol(flip_angle=math.pi / 2, tr=1e3)
        assert magnetization(p, 1e-3) == pytest.approx(1.0, abs=1e-15)

    def test_no_excitation(self):
        assert magnetization(protocol(flip_angle=0.0), 1.0) == 0.0

    def test_literature_protocol(self):
        assert magnetization(protocol(), 1.035) == pytest.approx(M_SPGR, rel=1e-14)


class TestComplexImage:
    def test_zero_change_is_real(self):
        labels = np.zeros((4, 4), dtype=int)
        u = np.full((4, 4), 37.0)
        img = complex_image(u, u, protocol(), labels)
        assert np.all(img.imag == 0)
        np.testing.assert_allclose(img.real, M_SPGR * math.exp(-0.025 / 0.070), rtol=1e-14)

    def test_phase_for_ten_degrees(self):
        labels = np.zeros((2, 2), dtype=int)
        u0 = np.full((2, 2), 37.0)
        img = complex_image(u0 + 10.0, u0, protocol(), labels)
        ref = complex_image(u0, u0, protocol(), labels)
        np.testing.assert_allclose(np.angle(img * np.conj(ref)), -PHASE_10C, atol=1e-12)
        assert protocol().phase_per_degree * 10 == pytest.approx(PHASE_10C, rel=1e-14)

    @given(hnp.arrays(float, (3, 5), elements=st.floats(-30, 30)))
    @settings(max_examples=40, deadline=None)
    def test_modulus_independent_of_heating(self, du):
        labels = np.zeros((3, 5), dtype=int)
        base = np.full((3, 5), 37.0)
        a = np.abs(complex_image(base + du, base, protocol(), labels))
        b = np.abs(complex_image(base, base, protocol(), labels))
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_t1_drift_changes_magnitude(self):
        labels = np.zeros((2, 2), dtype=int)
        base = np.full((2, 2), 37.0)
        p = protocol(t1_slope=(0.01,))
        hot = np.abs(complex_image(base + 20.0, base, p, labels))
        t1 = 1.035 * 1.2
        assert hot[0, 0] == pytest.approx(magnetization(p, t1) * math.exp(-0.025 / 0.070), rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            complex_image(np.zeros((2, 2)), np.zeros((2, 3)), protocol(), np.zeros((2, 2), dtype=int))


class TestKspace:
    def test_constant_image(self):
        img = np.full((6, 8), 2.5 + 0j)
        sig = kspace_forward(img, 1e-6)
        assert sig[0, 0] == pytest.approx(2.5 * 48 * 1e-6, rel=1e-12)
        assert np.max(np.abs(sig.ravel()[1:])) <= 1e-12 * abs(sig[0, 0])

    def test_delta_has_flat_spectrum(self):
        img = np.zeros((8, 8), dtype=complex)
        img[3, 5] = 1.0
        np.testing.assert_allclose(np.abs(kspace_forward(img)), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("shape", [(8, 8), (16, 16), (4, 5, 6)])
    def test_matches_direct_sum(self, shape):
        rng = np.random.default_rng(7)
        img = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        fast, slow = kspace_forward(img, 2e-3), kspace_forward_oracle(img, 2e-3)
        assert np.linalg.norm(fast - slow) <= 1e-10 * np.linalg.norm(slow)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(3)
        img = rng.standard_normal((6, 7)) + 1j * rng.standard_normal((6, 7))
        np.testing.assert_allclose(kspace_inverse(kspace_forward(img, 0.5), 0.5), img, atol=1e-13)

    def test_oracle_size_limit(self):
        with pytest.raises(DomainError):
            kspace_forward_oracle(np.zeros((128, 128)))

    def test_centered_views(self):
        x = np.arange(12).reshape(3, 4)
        np.testing.assert_array_equal(uncentered(centered(x)), x)
        assert centered(kspace_forward(np.ones((5, 4))))[2, 2] != 0

    def test_frequencies(self):
        fx, fy = kspace_frequencies((4, 5), (1e-3, 2e-3))
        assert fx[1] == pytest.approx(1 / 4e-3)
        assert fy[1] == pytest.approx(1 / 10e-3)


class TestNoise:
    def test_infinite_snr_is_identity(self):
        sig = np.arange(6, dtype=complex).reshape(2, 3) + 1.0
        out = add_noise(sig, NoiseModel.from_snr(sig, math.inf))
        np.testing.assert_array_equal(out, sig)

    def test_seeded(self):
        sig = np.ones((4, 4), dtype=complex)
        a = add_noise(sig, NoiseModel(0.3, seed=11))
        b = add_noise(sig, NoiseModel(0.3, seed=11))
        assert a.tobytes() == b.tobytes()

    def test_sample_std(self):
        out = add_noise(np.zeros(100_000, dtype=complex), NoiseModel(1.0, seed=5))
        assert 0.99 <= out.real.std() <= 1.01
        assert 0.99 <= out.imag.std() <= 1.01

    def test_sigma_convention(self):
        sig = np.zeros((4, 4), dtype=complex)
        sig[0, 0] = 3.0 + 4.0j
        assert NoiseModel.from_snr(sig, 50.0).sigma == pytest.approx(5.0 / (50.0 * math.sqrt(2)))

    def test_nonpositive_snr(self):
        with pytest.raises(DomainError):
            NoiseModel.from_snr(np.ones(3), 0.0)


class TestProtocolConfig:
    def test_units(self):
        p = MrProtocol.from_config({"flip_angle_deg": 5.0, "tr": 0.005, "te": 0.001676, "b0": 3.0, "t1": 2.56,
                                    "t2star": 0.03, "t1_slope": 0.1 / 2.56}, 1)
        assert p.flip_angle == pytest.approx(math.radians(5.0))
        assert p.gamma == pytest.approx(42.58e6)
        assert p.alpha == pytest.approx(-0.0102e-6)
        assert p.t1 == (2.56,)

    def test_wrong_tissue_count(self):
        with pytest.raises(ConfigError, match="t1"):
            MrProtocol.from_config({"flip_angle": 1.0, "tr": 0.5, "te": 0.02, "b0": 1.5, "t1": [1, 2],
                                    "t2star": 0.05}, 3)

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="tr"):
            MrProtocol.from_config({"flip_angle": 1.0, "te": 0.02, "b0": 1.5, "t1": 1, "t2star": 0.05}, 1)
