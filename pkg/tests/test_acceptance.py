"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints a PASS/FAIL line with the measured quantities so the
run log documents every margin.  Runtime budgets are asserted where the
criterion states one.
"""

import math
import time

import numpy as np
import pytest

from torodyn import experiments as EX
from torodyn import fields as F
from torodyn import flow as FL
from torodyn import transport as TR
from torodyn import weakstar as WS
from torodyn.torus import centered, torus_dist, wrap

TRIG_U = {"kind": "custom-trig", "amps": [0.12, 0.1],
          "freqs": [[1, 0], [0, 1]], "phases": [0.3, 1.2]}


def _report(num, passed, detail):
    print(f"ACCEPTANCE {num:02d} {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, detail


def test_c01_compression_claim():
    t0 = time.perf_counter()
    delta = 0.05
    comp = F.CompressorField(F.CompressorParams(delta, 2))
    rng = np.random.default_rng(11)
    seeds = wrap(rng.uniform(-0.45, 0.45, (10_000, 2)))
    res = FL.integrate_flow(comp, 0.0, 1.0, seeds, 1e-8, jacobian="none")
    radii = np.sqrt(np.sum(centered(res.position) ** 2, axis=1))
    worst = float(np.max(radii))
    elapsed = time.perf_counter() - t0
    _report(1, worst <= 2 * delta + 1e-3 and elapsed <= 60,
            f"max |X(1,x)| = {worst:.5f} <= {2 * delta + 1e-3} over 1e4 seeds "
            f"of Q_0.9 ({elapsed:.1f}s <= 60s)")


def test_c02_explicit_trajectory():
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    worst = 0.0
    for t in (0.05, 0.1, 0.15):
        res = FL.integrate_flow(comp, 0.0, t, np.array([[0.3, 0.0]]), 1e-8,
                                jacobian="none")
        want = np.array([0.3 - math.sqrt(2) / 2 * t, 0.0])
        worst = max(worst, float(torus_dist(res.position[0], want)))
    _report(2, worst <= 1e-6,
            f"explicit radial trajectory error {worst:.2e} <= 1e-6")


def test_c03_jacobian_superlevel():
    t0 = time.perf_counter()
    ok = True
    details = []
    for eta in (0.1, 0.2):
        rep = EX.jacobian_superlevel_experiment(eta, d=2, n=512, steps=1024)
        v = rep.verdict("superlevel_bound")
        ok &= v.passed and rep.verdict("compression_claim").passed
        details.append(f"eta={eta}: |A|={v.lhs:.4f} <= {v.rhs:.4f} "
                       f"(delta_cutoff={rep.params_chosen['delta_cutoff']:.4f})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    _report(3, ok, "; ".join(details) + f" ({elapsed:.0f}s <= 300s)")


def test_c04_rescaled_flow_identities():
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 1, (100, 2))
    worst = 0.0
    for tau, lam in ((0.5, 4), (0.25, 8)):
        vr = F.rescale_oscillation(comp, tau, lam)
        for t in rng.uniform(0.05, tau, 3):
            a = FL.integrate_flow(vr, 0, t, x, 1e-9, jacobian="logdet")
            b = FL.integrate_flow(comp, 0, t / tau, wrap(lam * x), 1e-9,
                                  jacobian="logdet")
            worst = max(worst,
                        float(np.max(torus_dist(a.position,
                                                x + b.displacement / lam))),
                        float(np.max(np.abs(np.exp(a.log_det)
                                            - np.exp(b.log_det)))))
    _report(4, worst <= 1e-5,
            f"rescaled flow/Jacobian identity deviation {worst:.2e} <= 1e-5 "
            f"for (tau,lam) in {{(0.5,4),(0.25,8)}}")


def test_c05_zero_background_inflation():
    t0 = time.perf_counter()
    cfg = EX.InflationConfig(eps=0.5, delta=0.1, tau=0.5, M=3.0, q=2.0, d=2,
                             n_jac=256, n_transport=383, norm_nodes=5,
                             steps_per_unit=1536, seed=5)
    rep = EX.zero_background_inflation(cfg)
    elapsed = time.perf_counter() - t0
    sup = rep.measured["sup_dual_norm"]
    sup_v = rep.measured["sup_v"]
    ok = rep.passed and sup > 3.0 and sup_v <= 0.5 and elapsed <= 300
    _report(5, ok,
            f"sup_s ||rho(s)||_L2 = {sup:.3f} > 3, sup|v| = {sup_v:.3f} <= 0.5 "
            f"({elapsed:.0f}s <= 300s)")


def test_c06_main_proposition_composition():
    t0 = time.perf_counter()
    cfg = EX.InflationConfig(eps=0.5, delta=0.1, tau=0.5, M=3.0, q=2.0, d=2,
                             u=TRIG_U, n_jac=256, n_transport=383,
                             norm_nodes=5, steps_per_unit=1024,
                             n_cache=192, nt_cache=33, seed=6)
    rep = EX.norm_inflation_experiment(cfg)
    elapsed = time.perf_counter() - t0
    pert = rep.verdict("perturbation_smallness")
    infl = rep.verdict("norm_inflation")
    ident = rep.verdict("representation_identity")
    ok = rep.passed and elapsed <= 600
    _report(6, ok,
            f"||u-w||_L1Lq = {pert.lhs:.3f} <= 0.5; "
            f"sup||rho|| = {infl.lhs:.3f} > 3; "
            f"representation L1 gap = {ident.lhs:.4f} <= {ident.rhs} "
            f"({elapsed:.0f}s <= 600s)")


def test_c07_flow_composition():
    u = F.build_field(TRIG_U)
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    w = F.compose_pushforward(u, comp, FL.ExactFlowProvider(
        u, 1e-9, steps_per_unit=128))
    rng = np.random.default_rng(7)
    seeds = rng.uniform(0, 1, (100, 2))
    worst = 0.0
    for t in (0.25, 0.5, 1.0):
        worst = max(worst, FL.check_flow_composition(u, comp, w, t, seeds, 1e-8))
    _report(7, worst <= 1e-4,
            f"X_w(t) vs X_u(t) o X_v(t): max deviation {worst:.2e} <= 1e-4 "
            "over 100 seeds, t in {0.25, 0.5, 1.0}")


def test_c08_weak_form_verification():
    u = F.build_field(TRIG_U)
    rho0 = lambda p: 1.0 + 0.5 * np.sin(2 * np.pi * p[:, 1]) \
        + 0.3 * np.cos(2 * np.pi * p[:, 0])

    def residual(n, nodes):
        times = np.linspace(0, 0.5, nodes)
        traj = TR.transport_trajectory(u, rho0, times, 1e-9, n=n, d=2)
        basis = TR.default_test_basis(2, tau=0.5)
        return TR.weak_residual(u, traj, traj[0], basis, 0.5)["max"]

    r_coarse = residual(128, 64)
    r_fine = residual(256, 128)
    drift = F.ConstantField([0.5, 0.0])
    frozen = [TR.DensityField.from_callable(
        lambda p: 1.0 + 2.0 * np.cos(2 * np.pi * p[:, 0]), 128, 2, t=t)
        for t in np.linspace(0, 1.0, 17)]
    r_bad = TR.weak_residual(drift, frozen, frozen[0],
                             TR.default_test_basis(2, tau=1.0), 1.0)["max"]
    ok = r_coarse <= 1e-3 and r_coarse / r_fine >= 3.0 and r_bad >= 1e-1
    _report(8, ok,
            f"residual(128,64) = {r_coarse:.2e} <= 1e-3; refinement ratio "
            f"{r_coarse / r_fine:.2f} >= 3; corrupted {r_bad:.3f} >= 0.1")


def test_c09_weakstar_modulus():
    basis = WS.default_metric_basis(2, 64)
    # pseudometric properties exact to 1e-12
    rng = np.random.default_rng(9)
    worst_tri, worst_sym = 0.0, 0.0
    dens = [TR.DensityField(rng.standard_normal((64, 64))) for _ in range(12)]
    for i in range(0, 12, 3):
        a, b, c = dens[i:i + 3]
        worst_sym = max(worst_sym, abs(WS.dm(a, b, basis) - WS.dm(b, a, basis)))
        worst_tri = max(worst_tri, WS.dm(a, c, basis) - WS.dm(a, b, basis)
                        - WS.dm(b, c, basis))
    comp = F.CompressorField(F.CompressorParams(0.05, 2))
    times = np.linspace(0, 1.0, 64)
    traj = TR.transport_trajectory(comp, lambda p: np.ones(p.shape[0]), times,
                                   1e-6, n=96, d=2, method="logdet")
    M = max(TR.lq_norm(r, 2.0) for r in traj)
    rep = WS.modulus_check(comp, traj, basis, M=M, q=2.0, slack=1e-4)
    ok = worst_sym == 0.0 and worst_tri <= 1e-12 and rep["holds"]
    _report(9, ok,
            f"pseudometric: symmetry {worst_sym:.1e}, triangle excess "
            f"{worst_tri:.1e} <= 1e-12; modulus holds at all {rep['pairs']} "
            f"node pairs (max violation {rep['max_violation']:.2e} <= "
            f"slack {rep['slack']:.0e}, worst ratio {rep['worst_ratio']:.3f})")


def test_c10_concentration_scaling():
    rep = EX.concentration_scaling_experiment(
        {"kind": "compressor", "delta": 0.08, "dim": 2}, [1, 2, 4, 8],
        q=2.0, p=1.5, n=512)
    m = rep.measured
    ok = rep.passed
    _report(10, ok,
            f"fitted exponents {m['fitted_exponent_q']:.4f} (want -2), "
            f"{m['fitted_exponent_p']:.4f} (want {-2 / 1.5:.4f}), both "
            "within 2%")


def test_c11_composed_nonuniqueness():
    triple = EX.make_cascade_triple(n=256, nodes=33)
    rep = EX.nonuniqueness_composition_experiment(TRIG_U, triple)
    m = rep.measured
    ok = rep.passed and m["div_w"] <= 1e-6 and m["output_gap"] > 0 \
        and m["output_residual_rho1"] <= 1e-2 \
        and m["output_residual_rho2"] <= 1e-2
    _report(11, ok,
            f"datum preserved exactly; residuals ({m['output_residual_rho1']:.1e}, "
            f"{m['output_residual_rho2']:.1e}) <= 1e-2; gap = "
            f"{m['output_gap']:.3f} > 0; div w = {m['div_w']:.1e} <= 1e-6")


def test_c12_staged_compression():
    t0 = time.perf_counter()
    rep = EX.staged_compression_experiment(k=3, lambdas=(4, 8, 16),
                                           taus=(0.0, 0.3, 0.6, 0.9),
                                           deltas=(0.04, 0.05, 0.0625),
                                           n_seeds=32768, probe_n=96,
                                           steps_per_unit=2048, seed=12)
    elapsed = time.perf_counter() - t0
    factors = rep.measured["superlevel_factors"]
    covs = rep.measured["covering_radii"]
    ok = rep.passed and elapsed <= 600
    _report(12, ok,
            f"per-stage measure factors {[round(f, 3) for f in factors]} "
            f"all < 0.5 beyond stage 1; covering radii "
            f"{[round(c, 4) for c in covs]} decrease >= 40%/stage "
            f"({elapsed:.0f}s <= 600s)")


def test_c13_verify_all():
    from torodyn.verify import run_suite
    t0 = time.perf_counter()
    results = run_suite("all")
    elapsed = time.perf_counter() - t0
    failed = [r["name"] for r in results if not r["passed"]]
    ok = not failed and elapsed <= 600
    _report(13, ok,
            f"cmd_verify all: {len(results) - len(failed)}/{len(results)} "
            f"invariants pass in {elapsed:.0f}s <= 600s"
            + (f"; failed: {failed}" if failed else ""))
