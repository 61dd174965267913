import math

import numpy as np
import pytest

from torodyn import fields as F
from torodyn.torus import centered, torus_dist, wrap
from torodyn.transport import lattice_points

PARAMS = F.CompressorParams(0.05, 2)


def test_params_validation():
    with pytest.raises(ValueError):
        F.CompressorParams(0.2, 2)
    with pytest.raises(ValueError):
        F.CompressorParams(0.05, 5)
    with pytest.raises(ValueError):
        F.CompressorParams(0.05, 2, sharpness=0.0)


def test_cutoff_plateaus():
    delta = PARAMS.delta
    assert F.cutoff_psi(np.array([0.0, 0.0]), PARAMS) == 0.0
    # inside the closed delta-ball
    assert F.cutoff_psi(np.array([delta * 0.99, 0.0]), PARAMS) == 0.0
    # |x| = 3 delta, inside the cube: the unit plateau
    assert F.cutoff_psi(np.array([3 * delta, 0.0]), PARAMS) == 1.0
    # outside Q_{1-delta}: centered(0.5 - delta/4) = 0.4875 > (1-delta)/2
    assert F.cutoff_psi(np.array([0.5 - delta / 4, 0.0]), PARAMS) == 0.0
    vals = F.cutoff_psi(lattice_points(64, 2), PARAMS)
    assert np.all((vals >= 0.0) & (vals <= 1.0))


def test_cutoff_gradient_matches_differences():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (500, 2))
    psi, grad = F.cutoff_psi_grad(x, PARAMS)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (F.cutoff_psi(x + e, PARAMS) - F.cutoff_psi(x - e, PARAMS)) / (2 * h)
        scale = max(1.0, np.max(np.abs(grad)))
        assert np.max(np.abs(fd - grad[:, j])) / scale < 1e-6


def test_smoothstep_shape():
    assert F.smoothstep(-1.0) == 0.0
    assert F.smoothstep(0.0) == 0.0
    assert F.smoothstep(1.0) == 1.0
    assert F.smoothstep(2.0) == 1.0
    assert 0.0 < F.smoothstep(0.5) < 1.0
    s = np.linspace(-0.5, 1.5, 101)
    assert np.all(np.diff(F.smoothstep(s)) >= 0.0)
    assert F.smoothstep_prime(0.5) == pytest.approx(
        (F.smoothstep(0.5 + 1e-7) - F.smoothstep(0.5 - 1e-7)) / 2e-7, rel=1e-5)


def test_compressor_value_on_plateau():
    v = F.compressor(PARAMS)
    got = v.eval(0.0, np.array([0.3, 0.0]))
    np.testing.assert_allclose(got, [-math.sqrt(2) / 2, 0.0], atol=1e-14)
    np.testing.assert_allclose(v.eval(0.0, np.array([0.0, 0.0])), [0.0, 0.0])


def test_compressor_sup_norm_grid():
    v = F.compressor(PARAMS)
    pts = lattice_points(256, 2)
    sup = np.max(np.linalg.norm(v.eval(0.0, pts), axis=1))
    assert abs(sup - math.sqrt(2) / 2) <= 1e-3


def test_compressor_kernel_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (2000, 2))
    fast = F.CompressorField(PARAMS, use_kernels=True)
    slow = F.CompressorField(PARAMS, use_kernels=False)
    v1, d1 = fast.eval_div(0.0, x)
    v2, d2 = slow.eval_div(0.0, x)
    np.testing.assert_allclose(v1, v2, atol=1e-13)
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    g1 = fast.eval_grad(0.0, x)[1]
    g2 = slow.eval_grad(0.0, x)[1]
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_fields_periodicity():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (200, 2))
    fields = [F.compressor(PARAMS),
              F.TrigField.divfree_2d([0.2], [(1, 2)]),
              F.rescale_oscillation(F.compressor(PARAMS), 0.5, 3),
              F.rescale_concentration(F.compressor(PARAMS), 2.0)]
    for f in fields:
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = 1.0
            np.testing.assert_allclose(f.eval(0.0, x + e), f.eval(0.0, x),
                                       atol=1e-12)


def test_oscillation_rescaling_identity_and_norm():
    v = F.compressor(PARAMS)
    same = F.rescale_oscillation(v, 1.0, 1)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (200, 2))
    np.testing.assert_allclose(same.eval(0.3, x), v.eval(0.3, x), atol=1e-14)
    tau, lam = 0.5, 8
    vr = F.rescale_oscillation(v, tau, lam)
    pts = lattice_points(128, 2)
    sup = np.max(np.linalg.norm(vr.eval(0.0, pts), axis=1))
    sup_base = np.max(np.linalg.norm(v.eval(0.0, pts), axis=1))
    assert sup == pytest.approx(sup_base / (tau * lam), rel=1e-12)
    assert sup <= 1.0 / (tau * lam)


def test_oscillation_fused_path_matches_wrapped():
    base_fast = F.CompressorField(PARAMS, use_kernels=True)
    base_slow = F.CompressorField(PARAMS, use_kernels=False)
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (1000, 2))
    a = F.rescale_oscillation(base_fast, 0.5, 4)
    b = F.rescale_oscillation(base_slow, 0.5, 4)
    va, da = a.eval_div(0.1, x)
    vb, db = b.eval_div(0.1, x)
    np.testing.assert_allclose(va, vb, atol=1e-13)
    np.testing.assert_allclose(da, db, atol=1e-11)


def test_concentration_rescaling():
    v = F.compressor(PARAMS)
    same = F.rescale_concentration(v, 1.0)
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (200, 2))
    np.testing.assert_allclose(same.eval(0.0, x), v.eval(0.0, x), atol=1e-14)
    vm = F.rescale_concentration(v, 4.0)
    c = centered(x)
    outside = np.max(np.abs(c), axis=1) >= 1 / 8
    assert np.max(np.abs(vm.eval(0.0, x[outside]))) == 0.0
    # unsupported fields are rejected with a diagnostic
    with pytest.raises(F.SupportViolation):
        F.rescale_concentration(F.TrigField.divfree_2d([0.2], [(1, 0)]), 2.0)


def test_time_reverse():
    u = F.TrigField.divfree_2d([0.2, 0.1], [(1, 0), (1, 1)], [0.2, 0.9])
    rev = F.time_reverse(u, 1.0)
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (100, 2))
    # autonomous base: reversed field is -v at every time
    np.testing.assert_allclose(rev.eval(0.3, x), -u.eval(0.7, x), atol=1e-15)
    twice = F.time_reverse(rev, 1.0)
    np.testing.assert_allclose(twice.eval(0.3, x), u.eval(0.3, x), atol=1e-15)


def test_trig_divfree_and_hessian():
    u = F.TrigField.divfree_2d([0.3, 0.2], [(2, 1), (0, 3)], [0.1, 1.7])
    assert u.divergence_free
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (300, 2))
    assert np.max(np.abs(u.div(0.0, x))) < 1e-12
    H = u.hess(0.0, x)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (u.grad(0.0, x + e) - u.grad(0.0, x - e)) / (2 * h)
        assert np.max(np.abs(fd - H[:, :, :, j])) < 1e-5


def test_lattice_stream_field_exactly_solenoidal():
    rng = np.random.default_rng(8)
    H = rng.standard_normal((32, 32))
    v = F.LatticeStreamField(H)
    x = rng.uniform(0, 1, (500, 2))
    assert np.max(np.abs(v.div(0.0, x))) == 0.0
    G = v.grad(0.0, x)
    assert np.max(np.abs(np.trace(G, axis1=-2, axis2=-1))) == 0.0
    # an analytic shear stream reproduces the shear off the lattice lines
    n = 256
    corners = np.arange(n) / n
    X1 = np.meshgrid(corners, corners, indexing="ij")[0]
    Hs = -0.3 * np.sin(2 * np.pi * X1) / (2 * np.pi)
    vs = F.LatticeStreamField(Hs)
    got = vs.eval(0.0, x)
    want = np.stack([np.zeros(len(x)), 0.3 * np.cos(2 * np.pi * x[:, 0])],
                    axis=1)
    # derivative of a bilinear interpolant: first order pointwise
    assert np.max(np.abs(got - want)) < 2 * np.pi * 0.3 / 256 * np.pi


def test_time_bump():
    b = F.TimeBump(0.2, 0.6, mass=1.0)
    assert b.value(0.1) == 0.0
    assert b.value(0.7) == 0.0
    assert b.value(0.4) > 0.0
    assert b.integral_to(0.6) == pytest.approx(1.0, abs=1e-9)
    assert b.integral_to(0.2) == 0.0
    ts = np.linspace(0.2, 0.6, 2001)
    quad = np.trapezoid([b.value(t) for t in ts], ts)
    assert quad == pytest.approx(1.0, abs=1e-5)


def test_staged_field_window_overlap_rejected():
    comp = F.compressor(PARAMS)
    with pytest.raises(ValueError):
        F.StagedField([(comp, F.TimeBump(0.0, 0.5)),
                       (comp, F.TimeBump(0.4, 0.8))], horizon=1.0)


def test_compose_trivial_cases():
    from torodyn.flow import ExactFlowProvider
    u = F.TrigField.divfree_2d([0.2], [(1, 0)])
    v = F.compressor(PARAMS)
    z = F.zero_field(2)
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (100, 2))
    w1 = F.compose_pushforward(z, v, ExactFlowProvider(z, 1e-9))
    np.testing.assert_allclose(w1.eval(0.4, x), v.eval(0.4, x), atol=1e-12)
    w2 = F.compose_pushforward(u, z, ExactFlowProvider(u, 1e-9))
    np.testing.assert_allclose(w2.eval(0.4, x), u.eval(0.4, x), atol=1e-9)


def test_compose_constant_drift_oracle():
    # Constant background: the flow is an explicit translation with
    # identity Jacobian, so w(t, x) - u = v(x - u t) in closed form.
    from torodyn.flow import ExactFlowProvider
    drift = F.ConstantField([0.1, 0.1])
    v = F.compressor(PARAMS)
    w = F.compose_pushforward(drift, v, ExactFlowProvider(drift, 1e-10))
    rng = np.random.default_rng(10)
    x = rng.uniform(0, 1, (100, 2))
    t = 0.3
    got = w.eval(t, x) - drift.eval(t, x)
    want = v.eval(t, x - 0.1 * t)
    assert np.max(np.abs(got - want)) < 1e-9


def test_compose_singularity_rejected():
    class BadProvider:
        def pullback(self, t, pts, need_hess=False):
            N = pts.shape[0]
            D = np.broadcast_to(1e-13 * np.eye(2), (N, 2, 2)).copy()
            return wrap(pts), D, None

    u = F.TrigField.divfree_2d([0.1], [(1, 0)])
    w = F.compose_pushforward(u, F.zero_field(2), BadProvider())
    with pytest.raises(F.SingularJacobian):
        w.eval(0.5, np.zeros((4, 2)))


def test_build_field_specs():
    specs = [
        {"kind": "zero", "dim": 2},
        {"kind": "constant", "velocity": [0.1, -0.2]},
        {"kind": "compressor", "delta": 0.05, "dim": 2},
        {"kind": "custom-trig", "amps": [0.2], "freqs": [[1, 0]]},
        {"kind": "rescaled", "mode": "oscillation", "tau": 0.5, "lam": 4,
         "base": {"kind": "compressor", "delta": 0.05}},
        {"kind": "rescaled", "mode": "concentration", "mu": 2.0,
         "base": {"kind": "compressor", "delta": 0.05}},
        {"kind": "reversed", "horizon": 1.0,
         "base": {"kind": "custom-trig", "amps": [0.2], "freqs": [[1, 0]]}},
        {"kind": "composed",
         "background": {"kind": "constant", "velocity": [0.1, 0.0]},
         "perturbation": {"kind": "compressor", "delta": 0.05}},
    ]
    x = np.array([[0.3, 0.6]])
    for spec in specs:
        f = F.build_field(spec)
        assert f.eval(0.0, x).shape == (1, 2)
    with pytest.raises(ValueError):
        F.build_field({"kind": "nope"})
    with pytest.raises(ValueError):
        F.build_field({"not-a": "field"})
