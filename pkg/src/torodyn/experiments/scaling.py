"""Concentration-rescaling scaling laws.

For v supported in the open unit cube, v_mu(t,x) = (1/mu) v(t, mu x)
shrinks the support to Q_{1/mu} and scales the norms exactly:

    ||v_mu||_{Linf_t Lq_x}        = mu^{-(1 + d/q)} ||v||,
    ||grad v_mu||_{Linf_t Lp_x}   = mu^{-d/p}       ||grad v||.

The experiment measures both norms across a list of mu values, fits the
exponents by least squares in log-log, and verdicts them against the
analytic values within the configured tolerance.
"""

from __future__ import annotations

import numpy as np

from ..fields import Field, build_field, rescale_concentration
from ..transport import field_lq_norm, lattice_points
from .report import ExperimentReport, Stopwatch

__all__ = ["concentration_scaling_experiment"]


def _grad_frobenius(field: Field, t: float, pts: np.ndarray) -> np.ndarray:
    G = field.grad(t, pts)
    return np.sqrt(np.sum(G * G, axis=(-2, -1)))


def concentration_scaling_experiment(field_spec, mus, q: float = 2.0,
                                     p: float = 1.5, n: int = 512,
                                     t_samples=(0.0,), exponent_tol: float = 0.02,
                                     config: dict | None = None) -> ExperimentReport:
    watch = Stopwatch()
    rep = ExperimentReport("concentration_scaling", config or {
        "experiment": "concentration_scaling", "field": field_spec,
        "mus": list(mus), "q": q, "p": p, "n": n})
    base = field_spec if isinstance(field_spec, Field) else build_field(field_spec)
    d = base.dim
    pts = lattice_points(n, d)
    w = float(n) ** (-d)
    mus = [float(m) for m in mus]
    rows = []
    for mu in mus:
        vm = base if mu == 1.0 else rescale_concentration(base, mu)
        nq = max(field_lq_norm(vm.eval(float(t), pts), q, w) for t in t_samples)
        gp = max(float((w * np.sum(_grad_frobenius(vm, float(t), pts) ** p))
                       ** (1.0 / p)) for t in t_samples)
        # Support containment: the field vanishes outside Q_{1/mu}.
        c = np.where(pts <= 0.5, pts, pts - 1.0)
        outside = np.max(np.abs(c), axis=1) >= 0.5 / mu + 1.0 / n
        sup_out = 0.0
        if outside.any():
            sup_out = max(float(np.max(np.abs(vm.eval(float(t), pts[outside]))))
                          for t in t_samples)
        rows.append({"mu": mu, "norm_q": nq, "grad_norm_p": gp,
                     "sup_outside_support": sup_out})
    rep.tables["scaling"] = rows

    logm = np.log([r["mu"] for r in rows])
    slope_q = float(np.polyfit(logm, np.log([r["norm_q"] for r in rows]), 1)[0])
    slope_p = float(np.polyfit(logm, np.log([r["grad_norm_p"] for r in rows]), 1)[0])
    rep.measured = {
        "fitted_exponent_q": slope_q, "expected_exponent_q": -(1.0 + d / q),
        "fitted_exponent_p": slope_p, "expected_exponent_p": -d / p,
        "max_sup_outside_support": max(r["sup_outside_support"] for r in rows),
    }
    rep.params_chosen = {"q": q, "p": p, "n": n, "mus": mus}
    rep.check("norm_exponent",
              "|fit - (-(1 + d/q))| <= tol (relative)",
              abs(slope_q - (-(1.0 + d / q))), exponent_tol * (1.0 + d / q))
    rep.check("grad_exponent",
              "|fit - (-d/p)| <= tol (relative)",
              abs(slope_p - (-d / p)), exponent_tol * (d / p))
    rep.check("support_containment",
              "sup |v_mu| outside Q_{1/mu} <= 1e-12",
              rep.measured["max_sup_outside_support"], 1e-12)
    rep.runtime_s = watch.elapsed()
    return rep
