import json
import math
import warnings

import numpy as np
import pytest

from infoleak.divergence import DiscreteJoint, egamma_gaussian
from infoleak.errors import InvalidParameterError, ShapeMismatchError
from infoleak.estimators import TideModel
from infoleak.mechanism import (
    GuaranteeCertificate,
    LeakageReport,
    MechanismConfig,
    calibrate_lambda,
    composition_check,
    identify_leaking,
    leakage_bound,
    obfuscate,
    random_mechanism_instance,
    verify_feature_guarantee,
)


@pytest.fixture
def xor_joint():
    # S = X1 xor X2 with fair independent bits
    t = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            t[a ^ b, a, b] = 0.25
    return DiscreteJoint(t)


class TestIdentifyLeaking:
    def test_infinite_eps_flags_nothing(self, xor_joint):
        rep = identify_leaking(xor_joint, np.array([0, 1]), [0, 1], math.inf)
        assert rep.leaking == []

    def test_zero_eps_flags_nonzero(self):
        f = lambda s, x, j: 0.2 * j * (1 if s else -1)
        rep = identify_leaking(f, np.zeros(3), [0, 1], 0.0)
        assert rep.leaking == [0, 1, 2]

    def test_xor_flags_second_feature_only(self, xor_joint):
        rep = identify_leaking(xor_joint, np.array([1, 0]), [0, 1], 0.5)
        assert rep.leaking == [1]
        assert rep.scores_by_feature()[0] == 0.0

    def test_ordering_reversal(self, xor_joint):
        rep = identify_leaking(xor_joint, np.array([1, 0]), [0, 1], 0.5, ordering=[1, 0])
        assert rep.leaking == [0]

    def test_bad_ordering(self, xor_joint):
        with pytest.raises(InvalidParameterError):
            identify_leaking(xor_joint, np.array([1, 0]), [0, 1], 0.5, ordering=[0, 0])

    def test_model_shape_checked(self):
        m = TideModel([3], 5.0, n_features=3, prefix_mask_supported=True)
        with pytest.raises(ShapeMismatchError):
            identify_leaking(m, np.zeros(2), [0, 1], 0.1)

    def test_report_json_round_trip(self, xor_joint):
        rep = identify_leaking(xor_joint, np.array([1, 0]), [0, 1], 0.5)
        back = LeakageReport.from_dict(json.loads(rep.to_json()))
        assert back.leaking == rep.leaking
        assert back.scores == rep.scores


class TestCalibration:
    @pytest.mark.parametrize("eps, delta", [(0.5, 0.238), (0.74, 0.180)])
    def test_unit_lambda(self, eps, delta):
        assert calibrate_lambda(eps, delta, 1, 1.0) == pytest.approx(1.0, abs=0.01)

    def test_minimal(self):
        lam = calibrate_lambda(0.3, 0.05, 4, 2.0)
        assert egamma_gaussian(2.0, lam, math.exp(0.3)) <= 0.05 / 4
        assert egamma_gaussian(2.0, lam * (1 - 1e-6), math.exp(0.3)) > 0.05 / 4

    def test_near_vacuous_warns(self):
        with pytest.warns(UserWarning):
            lam = calibrate_lambda(0.5, 0.999, 1, 1.0)
        assert egamma_gaussian(1.0, lam, math.exp(0.5)) <= 0.999

    def test_vacuous_returns_floor(self):
        with pytest.warns(UserWarning):
            assert calibrate_lambda(0.5, 2.0, 1, 1.0) == pytest.approx(1e-6)

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            calibrate_lambda(0.5, 0.1, 1, 0.0)


class TestCertificate:
    def test_per_feature(self):
        c = leakage_bound(0.5, 1.0, 1.0, 4)
        assert c.per_feature_delta == pytest.approx(0.238, abs=0.005)
        assert c.composed_delta == 4 * c.per_feature_delta
        assert c.composed_eps == 2.0

    def test_single_feature(self):
        c = leakage_bound(0.5, 1.0, 1.0, 1)
        assert c.composed_delta == c.per_feature_delta

    def test_large_lambda(self):
        assert leakage_bound(0.5, 1e6, 1.0, 1).per_feature_delta < 1e-6

    def test_caveat_present(self):
        c = leakage_bound(0.5, 1.0, 1.0, 2)
        assert "unperturbed" in json.loads(c.to_json())["caveat"]
        assert "guarantee certificate" in c.format_block()


class TestObfuscate:
    def _report(self, flags):
        m = len(flags)
        return LeakageReport(list(range(m)), [1.0] * m, list(flags), [0] * m, 0.5)

    def test_no_flags_identity(self, rng):
        x = rng.random((4, 3))
        out = obfuscate(x, self._report([False] * 4), 1.0, 0)
        assert np.array_equal(out, x)

    def test_standard_normal_noise(self):
        x = np.zeros(20000)
        out = obfuscate(x, self._report([True] * 20000), 1.0, 7)
        assert np.var(out) == pytest.approx(1.0, rel=0.05)
        assert np.array_equal(out, obfuscate(x, self._report([True] * 20000), 1.0, 7))

    def test_only_flagged_change(self, rng):
        x = rng.random((3, 2))
        out = obfuscate(x, self._report([False, True, False]), 0.5, 1)
        assert np.array_equal(out[[0, 2]], x[[0, 2]])
        assert not np.array_equal(out[1], x[1])

    def test_clamp(self, rng):
        x = rng.random((2, 50))
        out = obfuscate(x, self._report([True, True]), 10.0, 1, clamp_output=True)
        assert out.min() >= 0 and out.max() <= 1

    def test_single_feature_deterministic(self):
        r = self._report([True])
        assert obfuscate([0.3], r, 1.0, 5)[0] == obfuscate([0.3], r, 1.0, 5)[0]


class TestFeatureGuarantee:
    def test_at_K(self):
        chk = verify_feature_guarantee(0.5, 1.0, 1.0, 2 * 10 ** 5, 0)
        assert chk.ok
        assert chk.rows[-1].estimate == pytest.approx(0.238, abs=0.005)

    def test_zero_shift(self):
        chk = verify_feature_guarantee(0.5, 1.0, 1.0, 10 ** 5, 0, grid=[0.0])
        assert chk.rows[0].estimate == 0.0

    def test_half_radius_below_theta(self):
        chk = verify_feature_guarantee(0.5, 1.0, 1.0, 10 ** 5, 0, grid=[0.5, 1.0])
        assert chk.rows[0].closed_form < chk.bound
        assert chk.rows[0].estimate < chk.bound

    def test_small_n_rejected(self):
        with pytest.raises(InvalidParameterError):
            verify_feature_guarantee(0.5, 1.0, 1.0, 1000, 0)


class TestComposition:
    def test_random_instances(self):
        r = np.random.default_rng(0)
        for _ in range(30):
            chk = composition_check(*random_mechanism_instance(r), float(r.uniform(0.05, 1.0)))
            assert chk.holds

    def test_needs_two_features(self, correlated_binary):
        with pytest.raises(InvalidParameterError):
            composition_check(correlated_binary, np.eye(2), np.eye(2), 0.5)


def test_mechanism_config_calibrated():
    cfg = MechanismConfig.calibrated(0.5, 0.476, 2, 1.0)
    assert cfg.lam == pytest.approx(1.0, abs=0.01)
    assert cfg.satisfied()
