import math

import numpy as np
import pytest

from bubblesheet.barriers import (BarrierProbe, RotatedBarrier, axis_crosscheck, barrier_compare,
                                  check_ads_upper, limit_distance, limit_profile, shrinker_residual,
                                  solve_bowl, solve_shrinker)
from bubblesheet.errors import InputError
from bubblesheet.grid import CylinderGraph, make_grid
from bubblesheet.solver import FlowState

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def profiles():
    return {a: solve_shrinker(a) for a in (4.0, 9.0, 25.0)}


def test_cylinder_solves_shrinker_equation():
    assert shrinker_residual(3.0, SQRT2, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("a", [4.0, 9.0, 25.0])
def test_profile_endpoint_residual_concavity(profiles, a):
    p = profiles[a]
    assert p.ode_residual() <= 1e-8
    assert p(a) == 0.0 and p.u[-1] == 0.0
    assert abs(float(p(a * (1 - 1e-9)))) <= 1e-4
    assert p.second_differences().max() <= 1e-8
    assert p.u[0] > SQRT2
    assert p(math.sqrt(a)) ** 2 >= 2 - 2 / a


def test_residual_converges_with_fd_step(profiles):
    p = profiles[9.0]
    r1, r2 = p.ode_residual(2e-3), p.ode_residual(1e-3)
    assert r2 < r1


def test_axis_crosscheck_is_independent_oracle(profiles):
    assert axis_crosscheck(profiles[4.0]) <= 1e-10
    assert axis_crosscheck(profiles[9.0]) <= 1e-6


def test_profile_domain_and_threshold(profiles):
    with pytest.raises(InputError):
        profiles[4.0](5.0)
    with pytest.raises(InputError):
        solve_shrinker(2.0)


def test_limit_profile_approach(profiles):
    d = [limit_distance(profiles[a]) for a in (4.0, 9.0, 25.0)]
    assert d[0] > d[1] > d[2]
    assert limit_profile(0.0, 5.0) == pytest.approx(SQRT2)
    assert limit_profile(5.0, 5.0) == 0.0


def test_upper_bound_crossing(profiles):
    small = check_ads_upper(profiles[4.0])
    assert not small.holds_everywhere and small.first_failure > small.M_emp
    assert small.margin_at_zero > 0
    assert check_ads_upper(profiles[9.0]).M_emp > small.M_emp
    assert check_ads_upper(profiles[25.0]).holds_everywhere


def test_barrier_enclosure_by_cylinder(profiles):
    g = make_grid(6.0, 49, 4)
    b = RotatedBarrier(profiles[9.0])
    v = barrier_compare(CylinderGraph.constant(g, SQRT2), b)
    assert v.enclosed and v.min_clearance > 0
    # clearance is smallest where the barrier is tallest, at the inner edge L0
    assert v.min_clearance == pytest.approx(SQRT2 - float(profiles[9.0](2.0)), rel=1e-9)
    assert not barrier_compare(CylinderGraph.constant(g, 1.0), b).enclosed
    probe = BarrierProbe(g, b)
    assert probe(FlowState(-10.0, CylinderGraph.constant(g, SQRT2))) == pytest.approx(v.min_clearance)


def test_barrier_shift_and_errors(profiles):
    p = profiles[9.0]
    b = RotatedBarrier(p, eta=1.0)
    assert b.outer == 8.0
    assert float(b.radius(3.0)) == pytest.approx(float(p(4.0)))
    with pytest.raises(InputError):
        RotatedBarrier(p, eta=-1.0)
    with pytest.raises(InputError):
        barrier_compare(CylinderGraph.constant(make_grid(1.5, 13, 4), SQRT2), b)


@pytest.fixture(scope="module")
def bowl():
    return solve_bowl(1 / SQRT2)


def test_bowl_residual_and_growth(bowl):
    assert bowl.ode_residual() <= 1e-8
    ratio = float(bowl(1000.0)) / (bowl.c * 1e6 / 2)
    assert abs(ratio - 1) <= 0.02
    assert bowl.h[0] == 0.0 and np.all(np.diff(bowl.h) > 0)


def test_bowl_scaling_law(bowl):
    unit = solve_bowl(1.0, r_max=1000.0 / SQRT2)
    r = np.linspace(0.5, 900.0, 50)
    np.testing.assert_allclose(bowl(r), unit(r / SQRT2) * SQRT2, rtol=1e-8)


def test_bowl_requires_positive_speed():
    with pytest.raises(InputError):
        solve_bowl(0.0)
