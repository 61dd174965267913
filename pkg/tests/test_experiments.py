import math

import numpy as np
import pytest

from torodyn import experiments as EX
from torodyn import fields as F
from torodyn import flow as FL
from torodyn.experiments.jacobian import compressor_jacobian_grid
from torodyn.experiments.report import ExperimentReport, Verdict


# ---------------------------------------------------------------------------
# Reports.


def test_verdict_and_report_roundtrip():
    rep = ExperimentReport("demo", {"a": 1})
    rep.check("le", "x <= y", 1.0, 2.0)
    rep.check("gt", "x > y", 3.0, 2.0, op=">")
    assert rep.passed
    assert rep.recheck()
    d = rep.to_dict()
    back = ExperimentReport.from_dict(d)
    assert back.passed and back.config_hash == rep.config_hash
    # self-certification catches tampering
    rep.verdicts[0].passed = False
    assert not rep.recheck()


def test_config_hash_stable():
    a = EX.config_hash({"b": 2, "a": 1})
    b = EX.config_hash({"a": 1, "b": 2})
    assert a == b
    assert a != EX.config_hash({"a": 1, "b": 3})


# ---------------------------------------------------------------------------
# Jacobian superlevel machinery.


def test_find_delta_cutoff_satisfies_bound():
    for eta in (0.5, 0.2, 0.1):
        delta, clamped = EX.find_delta_cutoff(eta, 2)
        if not clamped:
            c = EX.dimensional_constant(2)
            assert c * (delta + delta ** 2 / eta) <= eta + 1e-12
    delta, clamped = EX.find_delta_cutoff(1e-4, 2, floor=0.02)
    assert clamped and delta == 0.02


def test_radial_oracle_matches_variational():
    # Independent 1-d reduction of the radial flow versus the full 2-d
    # log-det integration, on the inscribed-ball region.
    delta = 0.05
    r0 = np.array([0.18, 0.25, 0.32])
    t = 0.25
    J_oracle, _ = EX.radial_jacobian_oracle(delta, 2, r0, t=t)
    comp = F.CompressorField(F.CompressorParams(delta, 2))
    seeds = np.stack([r0, np.zeros(3)], axis=1)
    res = FL.integrate_flow(comp, 0.0, t, seeds, 1e-9, jacobian="logdet",
                            fixed_steps=2048)
    np.testing.assert_allclose(np.exp(res.log_det), J_oracle, rtol=2e-3)


def test_jacobian_superlevel_experiment_small():
    rep = EX.jacobian_superlevel_experiment(0.2, d=2, n=128, steps=512)
    assert rep.passed
    assert rep.recheck()
    assert rep.verdict("superlevel_bound").lhs <= 0.2 + 2 / 128
    assert rep.verdict("compression_claim").passed


def test_jacobian_superlevel_trivial_eta():
    rep = EX.jacobian_superlevel_experiment(0.999, d=2, n=128,
                                            delta_cutoff=0.05, steps=512)
    assert rep.verdict("superlevel_bound").passed  # measure <= 1 always


# ---------------------------------------------------------------------------
# Inflation.


def test_inflation_config_validation():
    cfg = EX.InflationConfig(eps=-1.0, delta=0.0, tau=2.0, M=0.5, q=0.5, d=5)
    errors = cfg.validate()
    assert len(errors) >= 5
    assert any("M > 1" in e for e in errors)


def test_canonical_datum_constant_phi():
    phi = EX.build_phi({"kind": "normalized-constant"}, 2)
    rho0, pair, norm = EX.canonical_datum(phi, 0.1, 3.0, 2.0, 64, 2)
    assert pair == pytest.approx(0.1)
    assert norm == pytest.approx(0.1)
    pts = np.random.default_rng(0).uniform(0, 1, (10, 2))
    np.testing.assert_allclose(rho0(pts), 0.1)


def test_zero_background_trivial_datum():
    # ||rho0||_{q'} > M: inflation holds at time 0 without transport.
    cfg = EX.InflationConfig(eps=0.5, delta=1.6, tau=0.5, M=1.5, q=2.0, d=2,
                             n_jac=128, n_transport=127)
    rep = EX.zero_background_inflation(cfg)
    assert rep.passed
    assert any("trivially" in n for n in rep.notes)


def test_zero_background_small_pipeline():
    cfg = EX.InflationConfig(eps=0.5, delta=0.1, tau=0.5, M=1.5, q=2.0, d=2,
                             n_jac=128, n_transport=253, norm_nodes=3,
                             steps_per_unit=768, check_rescaled_measure=False)
    rep = EX.zero_background_inflation(cfg)
    assert rep.verdict("field_smallness").passed
    assert rep.verdict("norm_inflation").passed
    assert rep.verdict("norm_inflation").lhs > 1.5
    assert rep.measured["sup_v"] <= 1.0 / (0.5 * rep.params_chosen["lam"])
    assert rep.recheck()
    # ladder table records the conservative bound trajectory
    assert all("conservative_bound" in row for row in rep.tables["eta_ladder"])


def test_norm_inflation_zero_background_delegates():
    cfg = EX.InflationConfig(eps=0.5, delta=1.6, tau=0.5, M=1.5, q=2.0, d=2,
                             u={"kind": "zero", "dim": 2},
                             n_jac=128, n_transport=127)
    rep = EX.norm_inflation_experiment(cfg)
    assert rep.experiment == "norm_inflation"
    assert any("C_u = 1" in n for n in rep.notes)


# ---------------------------------------------------------------------------
# Concentration scaling.


def test_concentration_scaling_small():
    rep = EX.concentration_scaling_experiment(
        {"kind": "compressor", "delta": 0.08, "dim": 2}, [1, 2, 4],
        q=2.0, p=1.5, n=256)
    assert rep.passed
    rows = rep.tables["scaling"]
    assert rows[0]["mu"] == 1.0
    # mu = 1 is the identity rescaling
    base = compressor_norm = rows[0]["norm_q"]
    assert rows[1]["norm_q"] / base == pytest.approx(2.0 ** -2, rel=0.02)


def test_concentration_support_violation():
    with pytest.raises(F.SupportViolation):
        EX.concentration_scaling_experiment(
            {"kind": "custom-trig", "amps": [0.2], "freqs": [[1, 0]]},
            [1, 2], n=128)


# ---------------------------------------------------------------------------
# Non-uniqueness composition.


def small_triple():
    return EX.make_cascade_triple(n=128, nodes=17, freq=8, amp=0.2)


def test_cascade_triple_structure():
    triple = small_triple()
    assert np.array_equal(triple.rho1[0].values, triple.rho2[0].values)
    v = triple.field()
    assert v.divergence_free
    gap = max(float(np.mean(np.abs(a.values - b.values)))
              for a, b in zip(triple.rho1, triple.rho2))
    assert gap > 0.05


def test_cascade_triple_save_load(tmp_path):
    triple = small_triple()
    path = tmp_path / "triple.npz"
    triple.save(path)
    back = EX.CascadeTriple.load(path)
    assert back.meta["freq"] == triple.meta["freq"]
    np.testing.assert_array_equal(back.rho2[5].values, triple.rho2[5].values)
    np.testing.assert_array_equal(back.streams[0][0], triple.streams[0][0])


def test_intake_negative_control():
    triple = small_triple()
    import copy
    bad = copy.copy(triple)
    bad.rho2 = bad.rho1
    with pytest.raises(EX.IntakeRejection) as exc:
        EX.nonuniqueness_composition_experiment(
            {"kind": "custom-trig", "amps": [0.1], "freqs": [[1, 0]]}, bad)
    assert "distinctness" in exc.value.details


def test_bck_range():
    assert EX.bck_range_satisfied(6.0, 1.1, 2)
    assert not EX.bck_range_satisfied(2.0, 1.5, 2)
    with pytest.raises(ValueError):
        EX.nonuniqueness_composition_experiment(
            {"kind": "custom-trig", "amps": [0.1], "freqs": [[1, 0]]},
            small_triple(), q=2.0, p=1.5)


def test_composition_zero_background_inherits():
    triple = small_triple()
    rep = EX.nonuniqueness_composition_experiment(
        {"kind": "zero", "dim": 2}, triple, steps_per_unit=64)
    assert rep.passed
    # with u = 0 the push-forward is the identity and w = v
    assert rep.measured["output_gap"] == pytest.approx(
        rep.measured["intake_gap"], rel=1e-9)
    assert rep.measured["output_residual_rho1"] == pytest.approx(
        rep.measured["intake_residual_rho1"], abs=1e-9)


# ---------------------------------------------------------------------------
# Staged compression and time reversal.


def test_staged_zero_and_single_stage():
    rep0 = EX.staged_compression_experiment(k=0, n_seeds=2048, probe_n=48)
    assert "covering_radius" in rep0.measured

    rep1 = EX.staged_compression_experiment(
        k=1, lambdas=(4,), taus=(0.0, 0.3), deltas=(0.04,),
        n_seeds=8192, probe_n=64, steps_per_unit=1024, seed=1)
    assert rep1.verdict("single_stage_covering").passed
    half_diag = math.sqrt(2) / 8.0
    cov = rep1.measured["covering_radii"][0]
    assert abs(cov - half_diag) <= 0.5 * half_diag + 0.02


def test_staged_schedule_validation():
    with pytest.raises(ValueError):
        EX.build_staged_compression((4, 8), (0.0, 0.5, 0.4), (0.05, 0.05))
    with pytest.raises(ValueError):
        EX.build_staged_compression((4, 8), (0.0, 0.5), (0.05, 0.05))


def test_stage_flow_matches_reparametrized_oracle():
    # One stage equals the time-reparametrized rescaled compressor flow:
    # X_stage(t, x) = s + X_c(B(t), lam (x - s)) / lam.
    lam, delta = 4, 0.05
    field = EX.build_staged_compression((lam,), (0.0, 0.4), (delta,))
    bump = field.stages[0][1]
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (64, 2))
    t = 0.27
    res = FL.integrate_flow(field, 0.0, t, x, 1e-8, jacobian="none",
                            fixed_steps=2048)
    comp = F.CompressorField(F.CompressorParams(delta, 2))
    oracle = FL.integrate_flow(comp, 0.0, bump.integral_to(t),
                               np.mod(lam * x, 1.0), 1e-8, jacobian="none",
                               fixed_steps=2048)
    want = x + oracle.displacement / lam
    from torodyn.torus import torus_dist
    assert np.max(torus_dist(res.position, want)) < 1e-5


def test_time_reversal_zero_field():
    seeds = np.random.default_rng(3).uniform(0, 1, (512, 2))
    rep = EX.ode_time_reversal_experiment(F.zero_field(2), seeds, T=0.5,
                                          probe_n=64, curve_nodes=101)
    assert rep.passed
    cov_seeds = EX.covering_radius(seeds, 64, 2)
    assert rep.measured["coverage_deficiency"] == pytest.approx(cov_seeds,
                                                                abs=1e-9)


def test_time_reversal_single_stage_residual():
    field = EX.build_staged_compression((4,), (0.0, 0.3), (0.04,))
    seeds = np.random.default_rng(4).uniform(0, 1, (128, 2))
    rep = EX.ode_time_reversal_experiment(field, seeds, T=0.3, probe_n=48)
    assert rep.verdict("reversed_curves_are_integral_curves").passed


def test_covering_radius_against_brute_force():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 1, (60, 2))
    from torodyn.torus import torus_dist
    from torodyn.transport import lattice_points
    probes = lattice_points(32, 2)
    brute = max(min(float(torus_dist(p, q)) for q in pts) for p in probes)
    fast = EX.covering_radius(pts, 32, 2)
    assert fast == pytest.approx(brute, abs=1e-12)
