import math

import numpy as np
import pytest

from torodyn import fields as F
from torodyn import flow as FL
from torodyn.torus import torus_dist, wrap

COMP = F.CompressorField(F.CompressorParams(0.05, 2))
TRIG = F.TrigField.divfree_2d([0.2, 0.15], [(1, 0), (0, 1)], [0.3, 1.1])


def seeds(n=50, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 2))


def test_zero_field_stationary():
    x = seeds()
    res = FL.integrate_flow(F.zero_field(2), 0.0, 0.8, x, 1e-9)
    np.testing.assert_allclose(res.position, x, atol=1e-14)
    np.testing.assert_allclose(res.jacobian, np.broadcast_to(np.eye(2), (50, 2, 2)),
                               atol=1e-14)
    np.testing.assert_allclose(res.jacobian_det, 1.0)


def test_identity_at_equal_times():
    x = seeds()
    res = FL.integrate_flow(TRIG, 0.4, 0.4, x, 1e-9)
    assert res.steps == 0
    np.testing.assert_allclose(res.position, x)
    np.testing.assert_allclose(res.jacobian, np.broadcast_to(np.eye(2), (50, 2, 2)))


def test_constant_drift_explicit():
    c = np.array([0.3, -0.4])
    x = seeds()
    res = FL.integrate_flow(F.ConstantField(c), 0.0, 0.7, x, 1e-10,
                            jacobian="none")
    np.testing.assert_allclose(res.position, wrap(x + 0.7 * c), atol=1e-13)
    inv = FL.inverse_flow(F.ConstantField(c), 0.7, res.position, 1e-10)
    np.testing.assert_allclose(inv.position, x, atol=1e-12)


def test_explicit_compressor_trajectory():
    # X(t, x) = x/|x| (|x| - sqrt(d)/2 t) while the path stays on the
    # psi = 1 plateau.
    for t in (0.05, 0.1, 0.15):
        res = FL.integrate_flow(COMP, 0.0, t, np.array([[0.3, 0.0]]), 1e-8,
                                jacobian="none")
        want = np.array([0.3 - math.sqrt(2) / 2 * t, 0.0])
        assert torus_dist(res.position[0], want) < 1e-6


def test_tolerance_validation():
    with pytest.raises(ValueError):
        FL.integrate_flow(TRIG, 0, 1, seeds(), 1e-2)
    with pytest.raises(ValueError):
        FL.integrate_flow(TRIG, 0, 1, seeds(), 1e-13)
    with pytest.raises(ValueError):
        FL.integrate_flow(F.time_reverse(TRIG, 1.0), 0.0, 2.0, seeds(), 1e-8)


def test_incompressible_jacobian():
    res = FL.integrate_flow(TRIG, 0.0, 1.0, seeds(), 1e-8)
    assert np.max(np.abs(res.jacobian_det - 1.0)) <= 100 * 1e-8
    np.testing.assert_allclose(res.jacobian_det, np.linalg.det(res.jacobian),
                               atol=1e-12)


def test_inverse_flow_roundtrip_and_matrix_identity():
    x = seeds(40, 1)
    fwd = FL.integrate_flow(TRIG, 0.0, 0.6, x, 1e-9)
    back = FL.inverse_flow(TRIG, 0.6, fwd.position, 1e-9)
    assert np.max(torus_dist(back.position, x)) < 10 * 1e-9
    ident = np.einsum("nij,njk->nik", back.jacobian, fwd.jacobian)
    assert np.max(np.abs(ident - np.eye(2))) < 1e-7


def test_semigroup():
    x = seeds(40, 2)
    assert FL.check_semigroup(F.zero_field(2), 0.0, 0.5, 1.0, x) == 0.0
    assert FL.check_semigroup(TRIG, 0.1, 0.5, 0.9, x, 1e-8) < 1e-6


def test_rescaled_flow_identity():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (100, 2))
    tau, lam = 0.5, 4
    vr = F.rescale_oscillation(COMP, tau, lam)
    worst_pos, worst_j = 0.0, 0.0
    for t in rng.uniform(0.05, 0.45, 4):
        a = FL.integrate_flow(vr, 0, t, x, 1e-9, jacobian="logdet")
        b = FL.integrate_flow(COMP, 0, t / tau, wrap(lam * x), 1e-9,
                              jacobian="logdet")
        worst_pos = max(worst_pos,
                        float(np.max(torus_dist(a.position,
                                                x + b.displacement / lam))))
        worst_j = max(worst_j, float(np.max(np.abs(np.exp(a.log_det)
                                                   - np.exp(b.log_det)))))
    assert worst_pos < 1e-5
    assert worst_j < 1e-5


def test_logdet_matches_variational():
    x = seeds(60, 4)
    full = FL.integrate_flow(COMP, 0.0, 0.5, x, 1e-9)
    ld = FL.integrate_flow(COMP, 0.0, 0.5, x, 1e-9, jacobian="logdet")
    np.testing.assert_allclose(np.exp(ld.log_det), full.jacobian_det, atol=1e-8)


def test_jacobian_matches_seed_differencing():
    x = seeds(20, 5)
    base = FL.integrate_flow(TRIG, 0.0, 0.6, x, 1e-10)
    h = 1e-5
    fd = np.empty((20, 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        plus = FL.integrate_flow(TRIG, 0.0, 0.6, x + e, 1e-10, jacobian="none")
        minus = FL.integrate_flow(TRIG, 0.0, 0.6, x - e, 1e-10, jacobian="none")
        fd[:, :, j] = ((plus.displacement + e) - (minus.displacement - e)) / (2 * h)
    assert np.max(np.abs(base.jacobian - fd)) < 1e-5


def test_flow_composition_trivial_and_mixed():
    x = seeds(20, 6)
    z = F.zero_field(2)
    w_v = F.compose_pushforward(z, COMP, FL.ExactFlowProvider(z, 1e-9))
    assert FL.check_flow_composition(z, COMP, w_v, 0.4, x, 1e-8) < 1e-6
    w_u = F.compose_pushforward(TRIG, z, FL.ExactFlowProvider(
        TRIG, 1e-9, steps_per_unit=128))
    assert FL.check_flow_composition(TRIG, z, w_u, 0.4, x, 1e-8) < 1e-6
    w = F.compose_pushforward(TRIG, COMP, FL.ExactFlowProvider(
        TRIG, 1e-9, steps_per_unit=128))
    assert FL.check_flow_composition(TRIG, COMP, w, 0.5, x, 1e-8) < 1e-4


def test_curve_composition():
    x = np.array([0.2, 0.7])
    times = np.linspace(0, 0.4, 401)
    trivial = FL.ode_curve_composition(F.zero_field(2), COMP, x, times, 1e-8)
    direct = FL.integrate_flow(COMP, 0, 0.4, x[None], 1e-8, jacobian="none")
    assert torus_dist(trivial["curve"][-1], direct.position[0]) < 1e-7

    vtrig = F.TrigField.divfree_2d([0.15], [(1, 1)], [0.7])
    res = FL.ode_curve_composition(TRIG, vtrig, x, times, 1e-8)
    assert res["max_residual"] < 1e-3


def test_cached_provider_accuracy():
    provider = FL.CachedFlowProvider(TRIG, horizon=1.0, n_space=96, n_time=17,
                                     tol=1e-9, steps_per_unit=64)
    exact = FL.ExactFlowProvider(TRIG, 1e-9)
    pts = seeds(300, 7)
    pe, De, _ = exact.pullback(0.63, pts)
    pc, Dc, _ = provider.pullback(0.63, pts)
    assert np.max(torus_dist(pe, pc)) < 5e-4
    assert np.max(np.abs(De - Dc)) < 5e-3
    assert provider.max_inverse_grad_opnorm >= 1.0


def test_cached_provider_hessian():
    provider = FL.CachedFlowProvider(TRIG, horizon=0.5, n_space=96, n_time=9,
                                     tol=1e-9, need_hess=True,
                                     steps_per_unit=64)
    exact = FL.ExactFlowProvider(TRIG, 1e-10)
    pts = seeds(100, 8)
    _, _, He = exact.pullback(0.31, pts, need_hess=True)
    _, _, Hc = provider.pullback(0.31, pts, need_hess=True)
    assert np.max(np.abs(He - Hc)) < 5e-2 * max(1.0, np.max(np.abs(He)))


def test_unwrap_curve_across_seam():
    pts = np.array([[0.95, 0.5], [0.99, 0.5], [0.03, 0.5], [0.07, 0.5]])
    lifted = FL.unwrap_curve(pts)
    np.testing.assert_allclose(np.diff(lifted[:, 0]), 0.04, atol=1e-12)
