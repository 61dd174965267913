"""Invariant suites behind ``torodyn verify``.

Each check runs at desk-scale default resolutions and returns the
measured quantity next to its allowed bound, so the printed lines carry
the margins.  Suites: fields (torus geometry included), flow, transport,
weakstar, and all.
"""

from __future__ import annotations

import math

import numpy as np

from . import fields as F
from . import flow as FL
from . import transport as TR
from . import weakstar as WS
from .torus import (Ball, Complement, Cube, Intersection, centered,
                    measure_superlevel, region_contains, torus_dist, wrap)

_rng = lambda s: np.random.default_rng(s)


def _check(name, detail, lhs, rhs):
    return {"name": name, "detail": detail, "lhs": float(lhs),
            "rhs": float(rhs), "passed": bool(lhs <= rhs)}


def _trig_u():
    return F.TrigField.divfree_2d([0.2, 0.15], [(1, 0), (0, 1)], [0.3, 1.1])


# ---------------------------------------------------------------------------


def checks_fields():
    out = []
    rng = _rng(0)

    # Torus geometry.
    pts = rng.uniform(-3, 3, (10000, 2))
    out.append(_check("torus.wrap_idempotent", "wrap(wrap(x)) == wrap(x)",
                      np.max(np.abs(wrap(wrap(pts)) - wrap(pts))), 0.0))
    p = wrap(pts)
    out.append(_check("torus.wrap_centered_identity", "wrap(centered(p)) == p",
                      np.max(np.abs(wrap(centered(p)) - p)), 0.0))
    worst = 0.0
    for L in (0.25, 0.5, 0.75):
        grid = TR.lattice_points(128, 2)
        ind = region_contains(Cube(L), grid).astype(float)
        est = measure_superlevel(ind, 0.5, grid_spacing=1 / 128, dim=2)
        worst = max(worst, abs(est.value - L ** 2) - est.half_width)
    out.append(_check("torus.cube_measures",
                      "| |Q_L| - L^d | <= half-width for L in {1/4,1/2,3/4}",
                      worst, 0.0))
    vals = rng.uniform(0, 1, 5000)
    measures = [measure_superlevel(vals, th).value for th in np.linspace(0, 1, 11)]
    out.append(_check("torus.threshold_monotonicity",
                      "superlevel measure non-increasing in threshold",
                      max(np.diff(measures)), 0.0))
    ann = Intersection((Cube(0.9), Complement(Ball(0.1, closed=True))))
    ok = region_contains(ann, np.array([[0.3, 0.0]]))[0] and \
        not region_contains(Ball(0.1), np.array([[0.3, 0.0]]))[0]
    out.append(_check("torus.region_predicates", "annulus membership",
                      0.0 if ok else 1.0, 0.0))

    # Field periodicity.
    worst = 0.0
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    resc = F.rescale_oscillation(comp, 0.5, 3)
    conc = F.rescale_concentration(comp, 2.0)
    rev = F.time_reverse(_trig_u(), 1.0)
    x = rng.uniform(0, 1, (500, 2))
    for f, t in ((comp, 0.0), (resc, 0.1), (conc, 0.0), (rev, 0.4), (_trig_u(), 0.2)):
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = 1.0
            worst = max(worst, float(np.max(np.abs(
                f.eval(t, x + e) - f.eval(t, x)))))
    out.append(_check("fields.periodicity", "eval(t, x + e_i) == eval(t, x)",
                      worst, 1e-12))

    # Gradient consistency against central differences (h = 1e-5),
    # relative to the gradient scale.
    worst = 0.0
    for f, t in ((comp, 0.0), (_trig_u(), 0.3), (resc, 0.1), (conc, 0.0)):
        xs = rng.uniform(0, 1, (1000, 2))
        G = f.grad(t, xs)
        h = 1e-5
        fd = np.empty_like(G)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd[:, :, j] = (f.eval(t, xs + e) - f.eval(t, xs - e)) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(G))))
        worst = max(worst, float(np.max(np.abs(G - fd))) / scale)
    out.append(_check("fields.grad_fd_consistency",
                      "central differences match grad (relative, h=1e-5)",
                      worst, 1e-6))

    # div equals trace of grad.
    xs = rng.uniform(0, 1, (1000, 2))
    worst = 0.0
    for f, t in ((comp, 0.0), (_trig_u(), 0.3), (resc, 0.1)):
        worst = max(worst, float(np.max(np.abs(
            f.div(t, xs) - np.trace(f.grad(t, xs), axis1=-2, axis2=-1)))))
    out.append(_check("fields.div_trace_consistency", "div == tr(grad)",
                      worst, 1e-8))

    # Compressor sup norm sqrt(d)/2 on a 256^d grid (d = 2) and smaller d.
    worst = 0.0
    for d, n in ((1, 4096), (2, 256), (3, 48)):
        g = TR.lattice_points(n, d)
        cf = F.CompressorField(F.CompressorParams(0.05, d))
        sup = float(np.max(np.linalg.norm(np.atleast_2d(cf.eval(0.0, g)),
                                          axis=-1)))
        worst = max(worst, abs(sup - math.sqrt(d) / 2.0))
    out.append(_check("fields.compressor_sup_norm",
                      "grid sup |v| == sqrt(d)/2 (d = 1,2,3)", worst, 1e-3))

    # Radial monotonicity along compressor trajectories.
    seeds = rng.uniform(-0.45, 0.45, (200, 2))
    pos = wrap(seeds)
    radii = [np.linalg.norm(centered(pos), axis=1)]
    for _ in range(40):
        res = FL.integrate_flow(comp, 0.0, 0.025, pos, 1e-8, jacobian="none",
                                fixed_steps=32)
        pos = res.position
        radii.append(np.linalg.norm(centered(pos), axis=1))
    radii = np.array(radii)
    out.append(_check("fields.compressor_radial_monotone",
                      "|X(t, x)| non-increasing along trajectories",
                      float(np.max(np.diff(radii, axis=0))), 1e-9))

    # Composition with incompressible inputs stays divergence free,
    # via the second variational route (honest trace of grad w).
    u = _trig_u()
    vtrig = F.TrigField.divfree_2d([0.15], [(1, 1)], [0.7])
    w = F.compose_pushforward(u, vtrig, FL.ExactFlowProvider(u, 1e-9))
    xs = rng.uniform(0, 1, (1000, 2))
    out.append(_check("fields.compose_divergence",
                      "|div w| <= 1e-6 for incompressible u, v (1000 pts)",
                      float(np.max(np.abs(w.div(0.45, xs)))), 1e-6))

    # Trivial composition cases.
    z = F.zero_field(2)
    wv = F.compose_pushforward(z, vtrig, FL.ExactFlowProvider(z, 1e-9))
    wu = F.compose_pushforward(u, z, FL.ExactFlowProvider(u, 1e-9))
    xs = rng.uniform(0, 1, (200, 2))
    worst = max(float(np.max(np.abs(wv.eval(0.3, xs) - vtrig.eval(0.3, xs)))),
                float(np.max(np.abs(wu.eval(0.3, xs) - u.eval(0.3, xs)))))
    out.append(_check("fields.compose_trivial", "u=0 -> w=v; v=0 -> w=u",
                      worst, 1e-9))

    # Oscillation rescaling: sup-norm bound and flow identity.
    tau, lam = 0.5, 4
    vr = F.rescale_oscillation(comp, tau, lam)
    sup = float(np.max(np.linalg.norm(vr.eval(0.0, TR.lattice_points(128, 2)),
                                      axis=1)))
    out.append(_check("fields.oscillation_sup_norm",
                      "sup|v_{tau,lam}| <= sup|v| / (tau lam)",
                      sup, comp.sup_norm_bound() / (tau * lam) + 1e-12))
    xs = rng.uniform(0, 1, (100, 2))
    t = 0.3 * tau
    a = FL.integrate_flow(vr, 0, t, xs, 1e-9, jacobian="logdet")
    b = FL.integrate_flow(comp, 0, t / tau, wrap(lam * xs), 1e-9,
                          jacobian="logdet")
    dev = float(np.max(torus_dist(a.position, xs + b.displacement / lam)))
    jdev = float(np.max(np.abs(np.exp(a.log_det) - np.exp(b.log_det))))
    out.append(_check("fields.rescaled_flow_identity",
                      "X_{tau,lam}(t,x) = X(t/tau, lam x)/lam and J matches",
                      max(dev, jdev), 100 * 1e-9 + 1e-7))

    # Concentration rescaling norms within 1%.
    n = 512
    g = TR.lattice_points(n, 2)
    w_ = float(n) ** (-2)
    base_q = TR.field_lq_norm(comp.eval(0.0, g), 2.0, w_)
    worst = 0.0
    for mu in (2.0, 4.0):
        vm = F.rescale_concentration(comp, mu)
        got = TR.field_lq_norm(vm.eval(0.0, g), 2.0, w_)
        worst = max(worst, abs(got / base_q - mu ** (-2.0)) / mu ** (-2.0))
    out.append(_check("fields.concentration_norms",
                      "||v_mu||_q / ||v||_q == mu^{-(1+d/q)} within 1%",
                      worst, 0.01))
    try:
        F.rescale_concentration(_trig_u(), 2.0)
        bad = 0.0
    except F.SupportViolation:
        bad = 1.0
    out.append(_check("fields.concentration_support_check",
                      "unsupported field rejected", 1.0 - bad, 0.0))

    # Time reversal is an involution and inverts flows.
    revrev = F.time_reverse(F.time_reverse(u, 1.0), 1.0)
    xs = rng.uniform(0, 1, (200, 2))
    worst = float(np.max(np.abs(revrev.eval(0.37, xs) - u.eval(0.37, xs))))
    out.append(_check("fields.reversal_involution",
                      "double reversal restores field values", worst, 1e-14))
    fw = FL.integrate_flow(u, 0, 1.0, xs, 1e-9, jacobian="none")
    bk = FL.integrate_flow(F.time_reverse(u, 1.0), 0, 1.0, fw.position, 1e-9,
                           jacobian="none")
    out.append(_check("fields.reversal_flow_roundtrip",
                      "reversed flow returns to the seeds",
                      float(np.max(torus_dist(bk.position, xs))), 1e-7))
    return out


# ---------------------------------------------------------------------------


def checks_flow():
    out = []
    rng = _rng(1)
    u = _trig_u()
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    xs = rng.uniform(0, 1, (100, 2))

    res = FL.integrate_flow(F.zero_field(2), 0, 0.7, xs, 1e-9)
    out.append(_check("flow.zero_field",
                      "position = seed, jacobian = identity",
                      float(np.max(torus_dist(res.position, xs))
                            + np.max(np.abs(res.jacobian - np.eye(2)))), 1e-14))

    drift = F.ConstantField([0.3, -0.2])
    res = FL.integrate_flow(drift, 0, 0.9, xs, 1e-9, jacobian="none")
    exact = wrap(xs + 0.9 * np.array([0.3, -0.2]))
    out.append(_check("flow.constant_drift", "explicit translation",
                      float(np.max(torus_dist(res.position, exact))), 1e-12))

    seed = np.array([[0.3, 0.0]])
    worst = 0.0
    for t in (0.05, 0.1, 0.15):
        r = FL.integrate_flow(comp, 0, t, seed, 1e-8, jacobian="none")
        expect = np.array([0.3 - math.sqrt(2) / 2 * t, 0.0])
        worst = max(worst, float(torus_dist(r.position, expect)[0]))
    out.append(_check("flow.explicit_trajectory",
                      "X(t,x) = x/|x| (|x| - sqrt(d)/2 t) on the plateau",
                      worst, 1e-6))

    res = FL.integrate_flow(u, 0, 1.0, xs, 1e-8)
    out.append(_check("flow.incompressible_det",
                      "|det grad X - 1| <= 100 tol for div-free fields",
                      float(np.max(np.abs(res.jacobian_det - 1.0))), 100 * 1e-8))
    out.append(_check("flow.det_consistency",
                      "stored det equals det(jacobian)",
                      float(np.max(np.abs(res.jacobian_det
                                          - np.linalg.det(res.jacobian)))),
                      1e-10))

    # Jacobian versus seed differencing (cross-check of the variational path).
    hs = 1e-5
    fd = np.empty((20, 2, 2))
    base = FL.integrate_flow(u, 0, 0.6, xs[:20], 1e-10)
    for j in range(2):
        e = np.zeros(2)
        e[j] = hs
        plus = FL.integrate_flow(u, 0, 0.6, xs[:20] + e, 1e-10, jacobian="none")
        minus = FL.integrate_flow(u, 0, 0.6, xs[:20] - e, 1e-10, jacobian="none")
        fd[:, :, j] = (plus.displacement + e - (minus.displacement - e)) / (2 * hs)
    out.append(_check("flow.jacobian_vs_differencing",
                      "variational Jacobian matches seed differencing",
                      float(np.max(np.abs(base.jacobian - fd))), 1e-5))

    out.append(_check("flow.semigroup_trig",
                      "X(t3,t1) = X(t3,t2) o X(t2,t1)",
                      FL.check_semigroup(u, 0.1, 0.45, 0.9, xs, 1e-8), 1e-6))

    from .experiments.staged import build_staged_compression
    staged = build_staged_compression((4, 8), (0.0, 0.3, 0.6), (0.04, 0.05),
                                      smooth_to_horizon=False)
    out.append(_check("flow.semigroup_staged_frozen",
                      "semigroup with t2 at a stage boundary (frozen flow)",
                      FL.check_semigroup(staged, 0.0, 0.3, 0.45, xs[:50], 1e-6),
                      1e-6))
    out.append(_check("flow.semigroup_at_horizon",
                      "semigroup holds at the (possibly singular) final time",
                      FL.check_semigroup(staged, 0.1, 0.45, 0.6, xs[:50], 1e-6),
                      1e-6))

    # Lipschitz in time near the horizon for bounded fields.
    sup = staged.sup_norm_bound()
    p1 = FL.integrate_flow(staged, 0.1, 0.55, xs[:50], 1e-6, jacobian="none")
    p2 = FL.integrate_flow(staged, 0.1, 0.6, xs[:50], 1e-6, jacobian="none")
    move = float(np.max(torus_dist(p1.position, p2.position)))
    out.append(_check("flow.time_lipschitz",
                      "|X(t2,s,x) - X(t1,s,x)| <= sup|v| |t2 - t1|",
                      move, sup * 0.05 + 1e-9))

    # Rescaled-flow identity at flow level.
    tau, lam = 0.5, 4
    vr = F.rescale_oscillation(comp, tau, lam)
    worst = 0.0
    for t in rng.uniform(0.05, tau, 5):
        a = FL.integrate_flow(vr, 0, t, xs[:40], 1e-9, jacobian="logdet")
        b = FL.integrate_flow(comp, 0, t / tau, wrap(lam * xs[:40]), 1e-9,
                              jacobian="logdet")
        worst = max(worst,
                    float(np.max(torus_dist(a.position,
                                            xs[:40] + b.displacement / lam))),
                    float(np.max(np.abs(np.exp(a.log_det)
                                        - np.exp(b.log_det)))))
    out.append(_check("flow.rescaled_identity",
                      "X_{tau,lam}(t,x) = X(t/tau, lam x)/lam, J matches",
                      worst, 100 * 1e-9 + 1e-7))

    # Inverse flow round trip and the matrix identity.
    fw = FL.integrate_flow(comp, 0, 0.4, xs[:50], 1e-9)
    bk = FL.inverse_flow(comp, 0.4, fw.position, 1e-9)
    out.append(_check("flow.inverse_roundtrip", "Phi(t, X(t, x)) = x",
                      float(np.max(torus_dist(bk.position, xs[:50]))), 1e-8))
    out.append(_check("flow.inverse_matrix_identity",
                      "(grad Phi(t, X(t,x)))^{-1} = grad X(t,x)",
                      float(np.max(np.abs(np.linalg.inv(bk.jacobian)
                                          - fw.jacobian))), 1e-7))

    # Log-det route agrees with the variational determinant.
    ld = FL.integrate_flow(comp, 0, 0.4, xs[:50], 1e-9, jacobian="logdet")
    out.append(_check("flow.logdet_vs_variational",
                      "exp(log J) == det grad X",
                      float(np.max(np.abs(np.exp(ld.log_det)
                                          - fw.jacobian_det))), 1e-7))

    # Brute-force tiny-step Euler oracle.
    seeds = xs[:20]
    r_rk = FL.integrate_flow(u, 0, 0.2, seeds, 1e-8, jacobian="none")
    pos = seeds.copy()
    h = 1e-6
    t = 0.0
    for _ in range(200000):
        pos = pos + h * u.eval(t, pos)
        t += h
    out.append(_check("flow.euler_oracle",
                      "RK4 at tol 1e-8 matches explicit Euler at h=1e-6",
                      float(np.max(torus_dist(r_rk.position, pos))), 1e-5))

    # Curve composition residual.
    vtrig = F.TrigField.divfree_2d([0.15], [(1, 1)], [0.7])
    res = FL.ode_curve_composition(u, vtrig, np.array([0.2, 0.7]),
                                   np.linspace(0, 0.5, 501), 1e-8)
    out.append(_check("flow.curve_composition",
                      "|gamma' - w(t, gamma)| <= 1e-3 (h = 1e-3)",
                      res["max_residual"], 1e-3))

    # Flow composition through the inverse-flow conjugation.
    w = F.compose_pushforward(u, comp, FL.ExactFlowProvider(
        u, 1e-9, steps_per_unit=128))
    out.append(_check("flow.composition_identity",
                      "X_w(t) = X_u(t) o X_v(t)",
                      FL.check_flow_composition(u, comp, w, 0.5, xs[:20], 1e-8),
                      1e-4))
    return out


# ---------------------------------------------------------------------------


def checks_transport():
    out = []
    rng = _rng(2)
    u = _trig_u()

    # Mass conservation for smooth fields.
    rho0 = lambda p: 1.0 + 0.5 * np.sin(2 * np.pi * p[:, 1])
    rho_t = TR.pushforward_density(u, rho0, 1.0, 1e-8, n=128, d=2)
    mass0 = 1.0
    out.append(_check("transport.mass_trig",
                      "mass conserved within 1% (trig field, t = 1)",
                      abs(np.sum(rho_t.flat) * rho_t.weight - mass0), 0.01))

    # Mass conservation through deep compression.  At the full pile-up
    # time the pulled-back determinant has an essential singularity at
    # the landing boundary and the 2-d quadrature error oscillates with
    # grid alignment, so the 1% check runs at t = 0.8 in 2-d and at the
    # full time t = 1 on a fine 1-d grid.
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    ind = lambda p: (np.max(np.abs(np.where(p <= 0.5, p, p - 1.0)), axis=1)
                     < 0.45).astype(float)
    rho_c = TR.pushforward_density(comp, ind, 0.8, 1e-6, n=512, d=2,
                                   fixed_steps=1024)
    out.append(_check("transport.mass_compressor_2d",
                      "compressed indicator keeps its mass within 1% (t=0.8)",
                      abs(np.sum(rho_c.flat) * rho_c.weight - 0.81) / 0.81,
                      0.01))
    comp1 = F.CompressorField(F.CompressorParams(0.05, 1))
    ind1 = lambda p: (np.abs(np.where(p <= 0.5, p, p - 1.0))[:, 0]
                      < 0.45).astype(float)
    rho_1 = TR.pushforward_density(comp1, ind1, 1.0, 1e-6, n=8192, d=1,
                                   fixed_steps=2048)
    out.append(_check("transport.mass_compressor_1d_full",
                      "1-d full compression keeps its mass within 1% (t=1)",
                      abs(np.sum(rho_1.flat) * rho_1.weight - 0.9) / 0.9,
                      0.01))

    # Incompressible push-forward preserves every L^q norm.
    worst = 0.0
    rho_u = TR.pushforward_density(u, rho0, 0.7, 1e-8, n=128, d=2)
    base = TR.DensityField.from_callable(rho0, 128, 2)
    for q in (1.0, 2.0, 3.0):
        worst = max(worst, abs(TR.lq_norm(rho_u, q) / TR.lq_norm(base, q) - 1))
    out.append(_check("transport.incompressible_norms",
                      "||rho(t)||_q == ||rho0||_q within 1% (div-free)",
                      worst, 0.01))

    # Constant drift is an exact translation.
    drift = F.ConstantField([0.2, 0.1])
    rho_d = TR.pushforward_density(drift, rho0, 0.5, 1e-9, n=64, d=2)
    pts = TR.lattice_points(64, 2)
    exact = rho0(wrap(pts - np.array([0.1, 0.05])))
    out.append(_check("transport.drift_translation",
                      "rho(t, y) = rho0(y - c t)",
                      float(np.max(np.abs(rho_d.flat - exact))), 1e-9))

    # Analytic pairings and norms.
    ind_q = TR.DensityField.from_callable(
        lambda p: (np.max(np.abs(np.where(p <= 0.5, p, p - 1.0)), axis=1)
                   < 0.25).astype(float), 256, 2)
    out.append(_check("transport.lq_analytic",
                      "||1_{Q_{1/2}}||_{L^2} = 1/2 on the lattice",
                      abs(TR.lq_norm(ind_q, 2.0) - 0.5), 1e-12))
    phi = TR.TestFunction([(1.0, (1, 0), "cos")], TR.PolyDecay(1.0))
    rho_cos = TR.DensityField.from_callable(lambda p: np.cos(2 * np.pi * p[:, 0]),
                                            128, 2)
    out.append(_check("transport.pairing_analytic",
                      "<cos, cos> = 1/2", abs(TR.pairing(rho_cos, phi, 0.0) - 0.5),
                      1e-6))

    # Weak residual: telescoping exactness, refinement, corruption.
    basis = TR.default_test_basis(2, tau=0.5)
    zf = F.zero_field(2)
    traj = [TR.DensityField.constant(1.0, 32, 2, t=t)
            for t in np.linspace(0, 0.5, 9)]
    res0 = TR.weak_residual(zf, traj, traj[0], basis, 0.5)
    out.append(_check("transport.residual_exact",
                      "u = 0, constant trajectory -> residual <= 1e-12",
                      res0["max"], 1e-12))

    def residual_at(n, nt):
        times = np.linspace(0, 0.5, nt)
        tr = TR.transport_trajectory(u, rho0, times, 1e-9, n=n, d=2)
        b = TR.default_test_basis(2, tau=0.5)
        return TR.weak_residual(u, tr, tr[0], b, 0.5)["max"]

    r1, r2 = residual_at(64, 17), residual_at(128, 33)
    out.append(_check("transport.residual_small",
                      "push-forward trajectory residual <= 1e-3", r1, 1e-3))
    out.append(_check("transport.residual_refinement",
                      "halving h cuts the residual by >= 3x", 3.0, r1 / r2))

    drift2 = F.ConstantField([0.5, 0.0])
    frozen = [TR.DensityField.from_callable(
        lambda p: 1.0 + 2.0 * np.cos(2 * np.pi * p[:, 0]), 64, 2, t=t)
        for t in np.linspace(0, 1.0, 17)]
    bas1 = TR.default_test_basis(2, tau=1.0)
    res_bad = TR.weak_residual(drift2, frozen, frozen[0], bas1, 1.0)
    out.append(_check("transport.residual_detects_corruption",
                      "frozen trajectory under drift exceeds 1e-1",
                      1e-1, res_bad["max"]))

    # Push-forward composition: transporting by v then by X_u equals
    # transporting by w = u + (grad Phi_u)^{-1} v(Phi_u).
    vtrig = F.TrigField.divfree_2d([0.15], [(1, 1)], [0.7])
    provider = FL.ExactFlowProvider(u, 1e-9, steps_per_unit=128)
    w = F.compose_pushforward(u, vtrig, provider)
    t = 0.5
    rho_v = TR.pushforward_density(vtrig, rho0, t, 1e-9, n=96, d=2)
    lhs = TR.pushforward_lattice(u, rho_v, t, 1e-9)
    rhs = TR.pushforward_density(w, rho0, t, 1e-9, n=96, d=2,
                                 fixed_steps=256)
    gap = TR.lq_norm(TR.DensityField(lhs.values - rhs.values, t), 1.0)
    out.append(_check("transport.pushforward_composition",
                      "X_u(t)# (v-transport) == w-transport in L^1",
                      gap, 5e-3))

    # Lattice dump round trip.
    import tempfile, os
    rho = TR.DensityField(rng.standard_normal((32, 32)), 0.25, 2.0)
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, "rho.dump")
        TR.write_density(rho, path)
        back = TR.read_density(path)
    out.append(_check("transport.dump_roundtrip",
                      "binary lattice dump round trips exactly",
                      float(np.max(np.abs(back.values - rho.values)))
                      + abs(back.t - rho.t) + abs(back.qprime - rho.qprime),
                      0.0))
    return out


# ---------------------------------------------------------------------------


def checks_weakstar():
    out = []
    rng = _rng(3)
    basis = WS.default_metric_basis(2, 64)

    dens = [TR.DensityField(rng.standard_normal((64, 64))) for _ in range(30)]
    worst_sym, worst_tri = 0.0, 0.0
    for i in range(0, 30, 3):
        a, b, c = dens[i], dens[i + 1], dens[i + 2]
        worst_sym = max(worst_sym, abs(WS.dm(a, b, basis) - WS.dm(b, a, basis)))
        worst_tri = max(worst_tri, WS.dm(a, c, basis)
                        - WS.dm(a, b, basis) - WS.dm(b, c, basis))
    out.append(_check("weakstar.symmetry", "d(g,h) == d(h,g)", worst_sym, 0.0))
    out.append(_check("weakstar.triangle",
                      "d(a,c) <= d(a,b) + d(b,c) + 1e-12", worst_tri, 1e-12))
    a = dens[0]
    out.append(_check("weakstar.identity", "d(g,g) == 0",
                      WS.dm(a, a, basis), 0.0))
    b = dens[1]
    lhs = abs(WS.dm(TR.DensityField(3.5 * a.values),
                    TR.DensityField(3.5 * b.values), basis)
              - 3.5 * WS.dm(a, b, basis))
    out.append(_check("weakstar.scale_covariance",
                      "d(c g, c h) == |c| d(g, h)", lhs, 1e-12))

    # Golden value: single-element basis led by cos(2 pi x).
    phi1 = TR.TestFunction([(1.0, (1,), "cos")])
    basis1 = WS.MetricBasis([phi1])
    g = TR.DensityField.from_callable(lambda p: 1 + np.cos(2 * np.pi * p[:, 0]),
                                      4096, 1)
    h = TR.DensityField.constant(1.0, 4096, 1)
    out.append(_check("weakstar.golden_value",
                      "d(1 + cos, 1) = 2^{-1} (2 pi)^{-1} (1/2)",
                      abs(WS.dm(g, h, basis1) - 1.0 / (8.0 * math.pi)), 1e-12))

    # Oscillatory sequences converge in the metric but not in L^2.
    vals = []
    for k in (1, 2, 3, 4, 5):
        gk = TR.DensityField.from_callable(
            lambda p, k=k: np.cos(2 * np.pi * k * p[:, 0]), 128, 2)
        vals.append(WS.dm(gk, TR.DensityField.constant(0.0, 128, 2), basis))
    decay_ok = all(vals[i + 1] <= vals[i] + 1e-15 for i in range(4)) \
        and vals[3] < 1e-12 and vals[0] > 1e-4
    out.append(_check("weakstar.oscillatory_decay",
                      "d(cos(2 pi k x), 0) decays, vanishing past the cutoff",
                      0.0 if decay_ok else 1.0, 0.0))

    # Modulus of continuity for trajectories.
    u0 = F.zero_field(2)
    traj0 = [TR.DensityField.constant(1.0, 64, 2, t=t)
             for t in np.linspace(0, 0.5, 9)]
    rep0 = WS.modulus_check(u0, traj0, basis, M=1.0, q=2.0)
    out.append(_check("weakstar.modulus_zero_field",
                      "constant trajectory: lhs <= 1e-12",
                      rep0["max_lhs"], 1e-12))

    drift = F.ConstantField([0.3, 0.1])
    rho0 = lambda p: 1.0 + 0.5 * np.sin(2 * np.pi * p[:, 0])
    times = np.linspace(0, 0.5, 17)
    traj = TR.transport_trajectory(drift, rho0, times, 1e-9, n=96, d=2)
    M = max(TR.lq_norm(r, 2.0) for r in traj)
    repd = WS.modulus_check(drift, traj, basis, M=M, q=2.0, slack=1e-6)
    out.append(_check("weakstar.modulus_drift",
                      "worst ratio <= 1 + 1% for the drift trajectory",
                      repd["worst_ratio"], 1.01))

    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    times = np.linspace(0, 1.0, 33)
    trajc = TR.transport_trajectory(comp, lambda p: np.ones(p.shape[0]),
                                    times, 1e-6, n=96, d=2,
                                    method="logdet")
    Mc = max(TR.lq_norm(r, 2.0) for r in trajc)
    repc = WS.modulus_check(comp, trajc, basis, M=Mc, q=2.0, slack=1e-4)
    out.append(_check("weakstar.modulus_compressor",
                      "modulus holds at all node pairs (compressor)",
                      repc["max_violation"], repc["slack"]))
    return out


SUITES = {
    "fields": (checks_fields,),
    "flow": (checks_flow,),
    "transport": (checks_transport,),
    "weakstar": (checks_weakstar,),
    "all": (checks_fields, checks_flow, checks_transport, checks_weakstar),
}


def run_suite(name: str):
    results = []
    for fn in SUITES[name]:
        results.extend(fn())
    return results
