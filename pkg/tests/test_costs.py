import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from defensive_ilq.costs import (
    AdversarialTerm,
    CooperativeProximityTerm,
    IdealSpeedTerm,
    InputQuadraticTerm,
    LaneCenterTerm,
    QuadraticStateTerm,
    SplitHorizonCost,
    adversarial_steps,
    project_psd,
    quadraticize,
    quadraticize_trajectory,
    running_cost,
    stage_costs,
    total_cost,
)
from defensive_ilq.geometry import LaneCenterline

# two unicycle-like blocks: (px, py, theta, v) each
POS0, POS1 = (0, 1), (4, 5)
LANE = LaneCenterline([[2.0, -50.0], [2.0, 50.0]], name="ego")


def state(p0=(0.0, 0.0), p1=(3.0, 4.0), v0=10.0, v1=8.0):
    return np.array([p0[0], p0[1], 0.0, v0, p1[0], p1[1], math.pi, v1])


def test_proximity_indicator_off_beyond_d_prox():
    cost = SplitHorizonCost(1, [CooperativeProximityTerm(1.0, 5.0, POS1, POS0)])
    assert running_cost(cost, 0.0, state(p1=(6.0, 0.0)), np.zeros(4)) == 0.0


def test_proximity_value():
    cost = SplitHorizonCost(1, [CooperativeProximityTerm(1.0, 10.0, POS1, POS0)])
    assert running_cost(cost, 0.0, state(p1=(6.0, 0.0)), np.zeros(4)) == 16.0


def test_adversarial_value():
    cost = SplitHorizonCost(1, [], [AdversarialTerm(2.0, POS1, POS0, clip_distance=30.0)], T_adv=1.0)
    assert running_cost(cost, 0.0, state(), np.zeros(4)) == 50.0
    # after the window the cooperative list (empty) applies
    assert running_cost(cost, 1.0, state(), np.zeros(4)) == 0.0


def test_adversarial_clip_and_repel():
    attract = AdversarialTerm(1.0, POS1, POS0, clip_distance=4.0)
    repel = AdversarialTerm(1.0, POS1, POS0, clip_distance=4.0, form="repel")
    xs = state()[None]
    assert attract.evaluate(xs, None)[0] == 16.0
    assert repel.evaluate(xs, None)[0] == -16.0
    with pytest.raises(ValueError):
        AdversarialTerm(1.0, POS1, POS0, form="sideways")


def test_ideal_speed_quadraticization_at_reference():
    cost = SplitHorizonCost(0, [IdealSpeedTerm(3.0, 10.0, 3)])
    model = quadraticize(cost, 0.0, state(), np.zeros(4))
    assert not np.any(model.l)
    assert model.Q[3, 3] == 6.0
    assert np.count_nonzero(model.Q) == 1


def test_input_quadratic_quadraticization_exact():
    R = np.array([[2.0, 0.5], [0.5, 1.0]])
    cost = SplitHorizonCost(0, [InputQuadraticTerm(R, slice(0, 2))])
    u = np.array([0.3, -1.2, 5.0, 5.0])
    model = quadraticize(cost, 0.0, state(), u)
    np.testing.assert_allclose(model.r[:2], 2 * R @ u[:2])
    np.testing.assert_array_equal(model.R[:2, :2], 2 * R)
    assert not np.any(model.r[2:]) and not np.any(model.R[2:, 2:])


def test_term_validation():
    with pytest.raises(ValueError):
        IdealSpeedTerm(-1.0, 1.0, 3)
    with pytest.raises(ValueError):
        InputQuadraticTerm(np.array([[1.0, 2.0], [0.0, 1.0]]), slice(0, 2))
    with pytest.raises(ValueError):
        InputQuadraticTerm(-np.eye(2), slice(0, 2))
    with pytest.raises(ValueError):
        CooperativeProximityTerm(1.0, 0.0, POS0, POS1)
    with pytest.raises(ValueError):
        SplitHorizonCost(0, [], [IdealSpeedTerm(1.0, 1.0, 3)], T_adv=1.0)
    with pytest.raises(ValueError):
        SplitHorizonCost(1, [], [], T_adv=-1.0)


def _trajectory(rng, K):
    xs = np.stack([state(rng.normal(size=2) * 3, rng.normal(size=2) * 3 + [3, 4], 10 + rng.normal(), 8 + rng.normal()) for _ in range(K + 1)])
    return xs, rng.normal(size=(K, 4))


def _split_cost(T_adv):
    coop = [LaneCenterTerm(1.0, LANE, POS1), IdealSpeedTerm(0.5, 8.0, 7), CooperativeProximityTerm(50.0, 6.0, POS1, POS0), InputQuadraticTerm(np.eye(2), slice(2, 4))]
    adv = [AdversarialTerm(0.3, POS1, POS0, clip_distance=12.0), InputQuadraticTerm(np.diag([10.0, 1.0]), slice(2, 4))]
    return coop, adv, SplitHorizonCost(1, coop, adv, T_adv=T_adv)


def _plain_sum(terms, xs, us, dt):
    return sum(dt * sum(t.evaluate(xs[k : k + 1], us[k : k + 1])[0] for t in terms) for k in range(len(us)))


def test_total_cost_split_equals_two_pass_sum(rng):
    xs, us = _trajectory(rng, 30)
    coop, adv, cost = _split_cost(1.2)
    dt = 0.1
    expected = math.fsum([dt * x for x in stage_costs(SplitHorizonCost(1, adv), xs[:12], us[:12], dt)]
                         + [dt * x for x in stage_costs(SplitHorizonCost(1, coop), xs[12:], us[12:], dt)])
    assert total_cost(cost, xs, us, dt) == expected
    assert total_cost(cost, xs, us, dt) == pytest.approx(_plain_sum(adv, xs[:12], us[:12], dt) + _plain_sum(coop, xs[12:], us[12:], dt), rel=1e-12)


def test_total_cost_extremes(rng):
    xs, us = _trajectory(rng, 20)
    coop, adv, _ = _split_cost(0.0)
    dt = 0.1
    assert total_cost(SplitHorizonCost(1, coop, adv, 0.0), xs, us, dt) == total_cost(SplitHorizonCost(1, coop), xs, us, dt)
    assert total_cost(SplitHorizonCost(1, coop, adv, 2.0), xs, us, dt) == total_cost(SplitHorizonCost(1, adv), xs, us, dt)


def test_total_cost_rejects_mismatched_lengths(rng):
    xs, us = _trajectory(rng, 5)
    with pytest.raises(ValueError):
        total_cost(_split_cost(0.0)[2], xs[:-1], us, 0.1)


def test_misaligned_split_warns():
    with pytest.warns(UserWarning):
        assert adversarial_steps(0.25, 0.1) == 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert adversarial_steps(2.5, 0.1) == 25
        assert adversarial_steps(0.0, 0.1) == 0


def test_trajectory_quadraticization_splits_at_k_adv(rng):
    xs, us = _trajectory(rng, 10)
    coop, adv, cost = _split_cost(0.5)
    model = quadraticize_trajectory(cost, xs, us, 0.1)
    assert model.Q.shape == (11, 8, 8) and model.R.shape == (11, 4, 4)
    for k in (0, 4, 5, 9):
        ref = quadraticize(cost, k * 0.1, xs[k], us[k])
        np.testing.assert_allclose(model.l[k], ref.l, rtol=1e-14)
        np.testing.assert_allclose(model.R[k], ref.R, rtol=1e-14)
    assert model.R[4, 2, 2] == 20.0 and model.R[5, 2, 2] == 2.0
    assert not np.any(model.Q[10]) and not np.any(model.l[10])


# finite-difference checks: every term at random points away from kinks
def _fd_gradient(f, x, eps=1e-6):
    out = np.empty(len(x))
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = eps
        out[k] = (f(x + e) - f(x - e)) / (2 * eps)
    return out


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


def random_term_points(rng, count):
    """Random (term, x, u) cases with every term well away from its kinks."""
    cases = []
    while len(cases) < count:
        which = len(cases) % 6
        p0 = rng.uniform(-10, 10, size=2)
        x = state(p0, p0 + rng.uniform(-8, 8, size=2), rng.uniform(0, 15), rng.uniform(0, 15))
        x[2], x[6] = rng.uniform(-3, 3, size=2)
        u = rng.normal(size=4)
        d = np.hypot(*(x[4:6] - x[0:2]))
        if which == 0:
            lane = LaneCenterline([[2.0, -50.0], [2.0, 0.0], [20.0, 20.0]])
            proj = lane.project(x[4:6])
            if not proj.interior or proj.distance < 1e-3:
                continue
            term = LaneCenterTerm(rng.uniform(0.1, 5), lane, POS1)
        elif which == 1:
            term = IdealSpeedTerm(rng.uniform(0.1, 5), rng.uniform(0, 15), 7)
        elif which == 2:
            d_prox = rng.uniform(1, 12)
            if not 1e-2 < d < d_prox - 1e-2:
                continue
            term = CooperativeProximityTerm(rng.uniform(0.1, 50), d_prox, POS1, POS0)
        elif which == 3:
            clip = rng.uniform(1, 15)
            if abs(d - clip) < 1e-2:
                continue
            term = AdversarialTerm(rng.uniform(0.1, 2), POS1, POS0, clip, form=("attract", "repel")[len(cases) % 2])
        elif which == 4:
            M = rng.normal(size=(2, 2))
            term = InputQuadraticTerm(M @ M.T, slice(2, 4), weight=rng.uniform(0.1, 5))
        else:
            M = rng.normal(size=(8, 8))
            term = QuadraticStateTerm(M @ M.T, rng.normal(size=8))
        cases.append((term, x, u))
    return cases


def test_cost_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    for term, x, u in random_term_points(rng, 120):
        lx, lu = np.zeros((1, 8)), np.zeros((1, 4))
        term.accumulate(x[None], u[None], lx, np.zeros((1, 8, 8)), lu, np.zeros((1, 4, 4)))
        gx = _fd_gradient(lambda z: term.evaluate(z[None], u[None])[0], x)
        gu = _fd_gradient(lambda z: term.evaluate(x[None], z[None])[0], u)
        assert _rel_err(lx[0], gx) < 1e-4 or np.linalg.norm(gx) < 1e-9, term
        assert _rel_err(lu[0], gu) < 1e-4 or np.linalg.norm(gu) < 1e-9, term


def test_cost_hessians_are_psd():
    rng = np.random.default_rng(8)
    for term, x, u in random_term_points(rng, 120):
        Hx, Hu = np.zeros((1, 8, 8)), np.zeros((1, 4, 4))
        term.accumulate(x[None], u[None], np.zeros((1, 8)), Hx, np.zeros((1, 4)), Hu)
        assert np.min(np.linalg.eigvalsh(Hx[0])) > -1e-10
        assert np.min(np.linalg.eigvalsh(Hu[0])) > -1e-10


def test_quadratic_terms_have_exact_hessians():
    rng = np.random.default_rng(9)
    x, u = state(), rng.normal(size=4)
    for term in (IdealSpeedTerm(2.0, 3.0, 3), AdversarialTerm(0.7, POS1, POS0, 30.0), CooperativeProximityTerm(1.0, 5.5, POS1, POS0)):
        Hx = np.zeros((1, 8, 8))
        term.accumulate(x[None], u[None], np.zeros((1, 8)), Hx, np.zeros((1, 4)), np.zeros((1, 4, 4)))
        if term.kind == "proximity":
            # Gauss-Newton: exact along the separation direction only
            e = np.zeros(8)
            e[list(POS1)] = [0.6, 0.8]
            second = (term.evaluate((x + 1e-4 * e)[None], None)[0] - 2 * term.evaluate(x[None], None)[0] + term.evaluate((x - 1e-4 * e)[None], None)[0]) / 1e-8
            assert e @ Hx[0] @ e == pytest.approx(second, rel=1e-4)
            continue
        f = lambda z: term.evaluate(z[None], u[None])[0]
        H_fd = np.array([_fd_gradient(lambda z: _fd_gradient(f, z, 1e-4)[k], x, 1e-4) for k in range(8)])
        np.testing.assert_allclose(Hx[0], H_fd, atol=1e-5)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_project_psd(vals):
    rng = np.random.default_rng(0)
    V, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    H = V @ np.diag(vals) @ V.T
    P = project_psd(H)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(P)), np.sort(np.maximum(vals, 0)), atol=1e-10)
