"""
Tests for locating Theta: scans, Newton refinement and pole-order fits on synthetic
harnesses and on live slices of Theta fixtures.
"""

import numpy as np
import pytest

from isomlab.fixtures import generate_fixture, scan_disc
from isomonodromy.deformation import DeformationState, PolePath, deform_path
from isomonodromy.errors import (
    InconclusiveScanError,
    NonConvergenceError,
    NormalizationError,
    PoleCollisionError,
    SamplingError,
)
from isomonodromy.tau import splitting_bound_check, to_malgrange
from isomonodromy.theta import (
    DeformationSlice,
    ScanSettings,
    SyntheticSlice,
    pole_order_fit,
    refine_zero,
    theta_scan,
)

M = np.array([[1.0, 0.5], [0.0, 1.0]], dtype=complex)


class TestRefineZero:
    def test_simple_zero_in_one_step(self):
        zero = refine_zero(SyntheticSlice.power(0.3 - 0.1j), 0.25)
        assert abs(zero.location - (0.3 - 0.1j)) < 1e-14
        assert zero.iterations == 1
        assert zero.multiplicity == 1
        assert zero.gradient_nonzero
        assert zero.status == "submanifold point"

    def test_double_zero_is_degenerate(self):
        zero = refine_zero(SyntheticSlice.power(0.02, order=2), 0.03)
        assert zero.multiplicity == 2
        assert not zero.gradient_nonzero
        assert zero.status.startswith("inconclusive")

    def test_triple_zero(self):
        zero = refine_zero(SyntheticSlice.power(-0.01 + 0.02j, order=3), 0.0)
        assert zero.multiplicity == 3
        assert not zero.gradient_nonzero

    def test_multiplicity_without_newton_steps(self):
        # the start already satisfies the tolerance, so no step ratio exists
        zero = refine_zero(SyntheticSlice.power(0.02, order=2), 0.02 + 1e-6)
        assert zero.iterations == 0
        assert zero.multiplicity == 2

    def test_unusable_circle_falls_back_to_step_ratio(self):
        tau = SyntheticSlice.power(0.02, order=2)
        settings = ScanSettings(multiplicity_samples=3)
        zero = refine_zero(tau, 0.03, settings)
        assert zero.iterations >= 2
        assert zero.multiplicity == 2

    def test_vanishing_derivative(self):
        tau = SyntheticSlice(lambda a: a**2 + 1.0, lambda a: 2.0 * a)
        with pytest.raises(NonConvergenceError, match="vanishing derivative"):
            refine_zero(tau, 0.0)


class TestSyntheticScan:
    def test_counts_one_zero(self):
        a0 = 0.02 + 0.01j
        result = theta_scan(SyntheticSlice.power(a0), 0.0, 0.1)
        assert result.count == 1
        (zero,) = result.zeros
        assert abs(zero.location - a0) < 1e-12
        assert not result.degenerate
        assert len(result.grid) == 1 + 64 * 6

    def test_counts_no_zero(self):
        result = theta_scan(SyntheticSlice.power(1.0), 0.0, 0.1)
        assert result.count == 0
        assert result.zeros == []

    def test_double_zero(self):
        result = theta_scan(SyntheticSlice.power(0.02, order=2), 0.0, 0.1)
        assert result.count == 2
        assert sum(z.multiplicity for z in result.zeros) == 2
        assert not any(z.gradient_nonzero for z in result.zeros)

    def test_identically_zero_slice(self):
        tau = SyntheticSlice(lambda a: 0j, lambda a: 0j)
        result = theta_scan(tau, 0.0, 0.1)
        assert result.degenerate
        assert result.count == 0

    def test_zero_on_the_boundary(self):
        with pytest.raises(InconclusiveScanError, match="boundary"):
            theta_scan(SyntheticSlice.power(0.1), 0.0, 0.1)

    def test_under_resolved_phase(self):
        with pytest.raises(InconclusiveScanError, match="rays"):
            theta_scan(SyntheticSlice.power(0.0, order=3), 0.0, 0.1, ScanSettings(rays=5))

    def test_rejects_non_positive_radius(self):
        with pytest.raises(ValueError):
            theta_scan(SyntheticSlice.power(0.0), 0.0, 0.0)


class TestSyntheticPoleFit:
    @pytest.mark.parametrize("exponent", [1, 2])
    def test_recovers_the_exponent(self, exponent):
        tau = SyntheticSlice.pole_harness(0.1j, exponent, M)
        zero = refine_zero(tau, 0.11j)
        fit = pole_order_fit(tau, zero)
        assert fit.max_slope == pytest.approx(exponent, abs=0.05)
        np.testing.assert_allclose(fit.u1_moduli, fit.levels, rtol=1e-2)

    def test_needs_a_simple_zero(self):
        tau = SyntheticSlice.power(0.0, order=2)
        zero = refine_zero(tau, 0.01)
        with pytest.raises(ValueError, match="simple zero"):
            pole_order_fit(tau, zero)

    def test_reach_too_short(self):
        tau = SyntheticSlice.pole_harness(0.0, 2, M)
        zero = refine_zero(tau, 0.01)
        with pytest.raises(SamplingError):
            pole_order_fit(tau, zero, reach=1e-3)


@pytest.fixture(scope="module", params=["theta-m1n4", "theta-fuchsian-n4"])
def theta_fixture(request):
    return generate_fixture(request.param, seed=3)


class TestLiveSlice:
    def test_rejects_trivial_states(self):
        c = generate_fixture("fuchsian-n4", seed=3)
        with pytest.raises(NormalizationError):
            DeformationSlice(DeformationState.initial(c), 0)

    def test_state_cache_is_bounded(self, theta_fixture):
        tau = DeformationSlice(DeformationState.initial(theta_fixture), 0, max_cached=4)
        a0 = complex(theta_fixture.poles[0])
        points = [a0 + 0.01 * k * (1 - 1j) for k in range(1, 7)]
        first = tau.u1(points[0])
        for a in points[1:]:
            tau.u1(a)
        assert tau.cached_states() == 4
        # the evicted point is reached again from the nearest remaining state
        assert abs(tau.u1(points[0]) - first) < 1e-7 * max(1.0, abs(first))
        assert tau.cached_states() == 4

    def test_u1_is_holomorphic(self, theta_fixture):
        tau = DeformationSlice(DeformationState.initial(theta_fixture), 0)
        a = complex(theta_fixture.poles[0]) + 0.03 - 0.02j
        h = 1e-4
        along_real = (tau.u1(a + h) - tau.u1(a - h)) / (2 * h)
        along_imag = (tau.u1(a + 1j * h) - tau.u1(a - 1j * h)) / (2j * h)
        assert abs(along_real - along_imag) < 1e-5
        assert abs(along_real - tau.gradient(a)) < 1e-5

    def test_scan_finds_the_fixture_zero(self, theta_fixture):
        tau = DeformationSlice(DeformationState.initial(theta_fixture), 0)
        center, radius = scan_disc(theta_fixture)
        result = theta_scan(tau, center, radius, ScanSettings(rays=48, jobs=4))
        assert result.count >= 1
        assert sum(z.multiplicity for z in result.zeros) == result.count
        a0 = complex(theta_fixture.poles[0])
        zero = min(result.zeros, key=lambda z: abs(z.location - a0))
        assert abs(zero.location - a0) < 1e-6
        assert zero.residual < 1e-10
        assert zero.gradient_nonzero

        assert splitting_bound_check(theta_fixture)
        fit = pole_order_fit(tau, zero)
        assert 0.5 < fit.max_slope <= 2.1

    def test_disc_reaching_another_pole(self, theta_fixture):
        tau = DeformationSlice(DeformationState.initial(theta_fixture), 0)
        with pytest.raises(PoleCollisionError, match="pole collision"):
            theta_scan(tau, complex(theta_fixture.poles[0]), 10.0)

    def test_trivial_family_blows_up_at_theta(self, theta_fixture):
        tau = DeformationSlice(DeformationState.initial(theta_fixture), 0)
        a0 = complex(theta_fixture.poles[0])
        trivial = to_malgrange(tau.state_at(a0 + 0.05))
        ceiling = 10.0 * max(float(np.max(np.abs(block))) for block in trivial.coeffs)
        path = PolePath.segment_to(trivial.poles, 0, a0)
        result = deform_path(DeformationState.initial(trivial), path, ceiling=ceiling)
        assert result.diagnostics.blowup
        assert 0.0 < result.diagnostics.blowup_parameter < 1.0
