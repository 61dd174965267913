"""Composed non-uniqueness from an externally supplied triple.

The laboratory does not construct the imported incompressible
counterexample field; it defines an intake contract for triples
{v, rho^1, rho^2} given as lattice data: equal initial data, weak
residuals below the intake tolerance, strictly positive distinctness
gap, and numerically solenoidal v.  An admissible triple is conjugated
through the flow of a smooth incompressible background u: with
w = u + (grad Phi_u)^{-1} v(Phi_u), the push-forwards
rho~^i(t) = X_u(t)_sharp rho^i(t) are again two solutions with the same
initial datum, and every intake property is re-verified on the output.

``make_cascade_triple`` builds a synthetic desk-scale triple: rho^1 is
the constant solution, rho^2 additionally carries a fine checkerboard
that is born at a small positive time and then transported exactly by a
staged sequence of solenoidal shears (a truncated un-mixing cascade).
The birth step is the truncation defect of the cascade; against C^1 test
functions it is bounded by amp/(2 m) for a frequency-m checkerboard and
sits far below the intake tolerance, while the gap stays at ||chk||_L1.
Trajectories come from exact shear characteristics, never from this
package's integrator.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from ..fields import (LatticeStreamField, StagedField, TimeBump, build_field,
                      compose_pushforward)
from ..flow import ExactFlowProvider, integrate_flow
from ..transport import (DensityField, default_test_basis, distinctness_gap,
                         interp_lattice, lattice_points, lq_norm,
                         field_lq_norm, weak_residual)
from .report import ExperimentReport, Stopwatch

__all__ = ["CascadeTriple", "make_cascade_triple", "IntakeRejection",
           "bck_range_satisfied", "nonuniqueness_composition_experiment"]


class IntakeRejection(ValueError):
    """Intake triple failed its admissibility checks."""

    def __init__(self, details: dict):
        self.details = details
        msg = "; ".join(f"{k}: {v}" for k, v in details.items())
        super().__init__(f"intake triple rejected: {msg}")


@dataclass
class CascadeTriple:
    """Lattice triple: staged solenoidal field plus two density trajectories."""

    streams: list            # (H lattice, (t0, t1)) per stage
    times: np.ndarray        # trajectory time nodes on [0, 1]
    rho1: list               # DensityField per node
    rho2: list
    qprime: float
    meta: dict

    def field(self) -> StagedField:
        stages = [(LatticeStreamField(H), TimeBump(t0, t1))
                  for H, (t0, t1) in self.streams]
        return StagedField(stages, horizon=1.0)

    def save(self, path):
        arrays = {"times": self.times,
                  "rho1": np.stack([r.values for r in self.rho1]),
                  "rho2": np.stack([r.values for r in self.rho2])}
        for i, (H, win) in enumerate(self.streams):
            arrays[f"stream_{i}"] = H
        meta = dict(self.meta)
        meta["windows"] = [list(win) for _, win in self.streams]
        meta["qprime"] = self.qprime
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path)
        meta = json.loads(bytes(data["meta"]).decode())
        qprime = float(meta.pop("qprime"))
        windows = meta.pop("windows")
        streams = [(data[f"stream_{i}"], tuple(win))
                   for i, win in enumerate(windows)]
        times = data["times"]
        rho1 = [DensityField(v, float(t), qprime)
                for v, t in zip(data["rho1"], times)]
        rho2 = [DensityField(v, float(t), qprime)
                for v, t in zip(data["rho2"], times)]
        return cls(streams, times, rho1, rho2, qprime, meta)


def _square_profile(s: np.ndarray) -> np.ndarray:
    """Smoothed zero-mean square wave with unit amplitude."""
    return np.tanh(2.0 * np.sin(2.0 * np.pi * s)) / math.tanh(2.0)


def make_cascade_triple(n: int = 256, nodes: int = 33, amp: float = 0.2,
                        freq: int = 16, birth: float = 0.125,
                        shear: float = 0.35, qprime: float = 1.2,
                        windows=((0.25, 0.45), (0.55, 0.75))) -> CascadeTriple:
    """Synthetic solenoidal intake triple (see module docstring).

    Stage 1 shears along x2 driven by cos(2 pi x1); stage 2 along x1
    driven by cos(2 pi x2).  Both are perpendicular gradients of stream
    functions, so the lattice field is exactly divergence free, and the
    shear characteristics integrate in closed form.
    """
    corners = np.arange(n) / n
    X1, X2 = np.meshgrid(corners, corners, indexing="ij")
    # v = (0, shear cos(2 pi x1)) = perp-grad of -shear sin(2 pi x1)/(2 pi)
    H1 = -shear * np.sin(2.0 * np.pi * X1) / (2.0 * np.pi)
    # v = (shear cos(2 pi x2), 0) = perp-grad of  shear sin(2 pi x2)/(2 pi)
    H2 = shear * np.sin(2.0 * np.pi * X2) / (2.0 * np.pi)
    streams = [(H1, tuple(windows[0])), (H2, tuple(windows[1]))]

    bump1 = TimeBump(*windows[0])
    bump2 = TimeBump(*windows[1])
    times = np.linspace(0.0, 1.0, nodes)
    pts = lattice_points(n, 2)

    def chk(points):
        return amp * _square_profile(freq * points[:, 0]) \
                   * _square_profile(freq * points[:, 1])

    rho1, rho2 = [], []
    for t in times:
        one = np.ones((n, n))
        rho1.append(DensityField(one, float(t), qprime))
        if t < birth:
            rho2.append(DensityField(one.copy(), float(t), qprime))
            continue
        # Exact backward shear characteristics (stage 2 then stage 1).
        b2 = bump2.integral_to(float(t))
        b1 = bump1.integral_to(float(t))
        x1 = pts[:, 0] - b2 * shear * np.cos(2.0 * np.pi * pts[:, 1])
        x2 = pts[:, 1] - b1 * shear * np.cos(2.0 * np.pi * x1)
        vals = 1.0 + chk(np.stack([x1, x2], axis=1))
        rho2.append(DensityField(vals.reshape(n, n), float(t), qprime))
    meta = {"kind": "cascade", "n": n, "amp": amp, "freq": freq,
            "birth": birth, "shear": shear,
            "birth_residual_bound": amp / (2.0 * freq)}
    return CascadeTriple(streams, times, rho1, rho2, qprime, meta)


def bck_range_satisfied(q: float, p: float, d: int) -> bool:
    """Sobolev non-uniqueness range 1/p > 1/q + (1/(d-1)) (p-1)/p."""
    if d < 2:
        return False
    return 1.0 / p > 1.0 / q + (p - 1.0) / (p * (d - 1.0))


def nonuniqueness_composition_experiment(
        u_spec: dict, triple: CascadeTriple, q: float = 6.0, p: float = 1.1,
        intake_tol: float = 1e-2, output_tol: float = 1e-2,
        div_tol: float = 1e-6, steps_per_unit: int = 192,
        enforce_range: bool = True,
        config: dict | None = None) -> ExperimentReport:
    """Conjugate an admissible triple through a smooth incompressible
    background and verify that non-uniqueness survives the composition."""
    watch = Stopwatch()
    rep = ExperimentReport("nonuniqueness_composition", config or {
        "experiment": "nonuniqueness_composition", "u": u_spec,
        "q": q, "p": p, "triple": triple.meta})
    d = 2
    if enforce_range and not bck_range_satisfied(q, p, d):
        raise ValueError(
            f"(q={q}, p={p}, d={d}) violates the Sobolev non-uniqueness "
            f"range 1/p > 1/q + (p-1)/(p(d-1))")
    rep.measured["bck_range_satisfied"] = bck_range_satisfied(q, p, d)
    rep.notes.append("range membership of the intake triple itself is not "
                     "checkable from lattice data; recorded as metadata only")

    v = triple.field()
    times = np.asarray(triple.times, dtype=float)
    tau = float(times[-1])
    n = triple.rho1[0].n
    pts = lattice_points(n, d)
    basis = default_test_basis(d, tau, max_freq=3)

    # ---------------- intake checks ----------------
    details = {}
    datum_gap = float(np.max(np.abs(triple.rho1[0].values
                                    - triple.rho2[0].values)))
    if datum_gap > 1e-14:
        details["same_initial_datum"] = f"max|rho1(0)-rho2(0)| = {datum_gap:.3e}"
    v_lattice = [v.eval(float(t), pts) for t in times]
    res1 = weak_residual(v, triple.rho1, triple.rho1[0], basis, tau,
                         field_values=v_lattice)
    res2 = weak_residual(v, triple.rho2, triple.rho2[0], basis, tau,
                         field_values=v_lattice)
    if res1["max"] > intake_tol:
        details["residual_rho1"] = f"{res1['max']:.3e} > {intake_tol}"
    if res2["max"] > intake_tol:
        details["residual_rho2"] = f"{res2['max']:.3e} > {intake_tol}"
    gap_in = distinctness_gap(triple.rho1, triple.rho2)
    if not gap_in > 0.0:
        details["distinctness"] = f"gap = {gap_in} (must be > 0)"
    div_in = max(float(np.max(np.abs(v.div(float(t), pts)))) for t in times[::4])
    if div_in > div_tol:
        details["divergence"] = f"max|div v| = {div_in:.3e} > {div_tol}"
    if details:
        raise IntakeRejection(details)
    rep.measured.update({"intake_residual_rho1": res1["max"],
                         "intake_residual_rho2": res2["max"],
                         "intake_gap": gap_in, "intake_div": div_in})

    # ---------------- composition ----------------
    u = build_field(u_spec)
    if not u.divergence_free:
        raise ValueError("background must be incompressible")
    w_lattice = []
    rho_t1, rho_t2 = [], []
    for m, t in enumerate(times):
        if t == 0.0:
            w_lattice.append(u.eval(0.0, pts) + v.eval(0.0, pts))
            rho_t1.append(DensityField(triple.rho1[0].values.copy(), 0.0,
                                       triple.qprime))
            rho_t2.append(DensityField(triple.rho2[0].values.copy(), 0.0,
                                       triple.qprime))
            continue
        back = integrate_flow(u, float(t), 0.0, pts, 1e-9, jacobian="full",
                              steps_per_unit=steps_per_unit)
        A = np.linalg.inv(back.jacobian)
        phi = back.position
        w_lattice.append(u.eval(float(t), pts)
                         + np.einsum("nij,nj->ni", A, v.eval(float(t), phi)))
        # u is incompressible: the push-forward needs no determinant factor.
        rho_t1.append(DensityField(
            interp_lattice(triple.rho1[m].values, phi).reshape(n, n),
            float(t), triple.qprime))
        rho_t2.append(DensityField(
            interp_lattice(triple.rho2[m].values, phi).reshape(n, n),
            float(t), triple.qprime))

    same0 = float(np.max(np.abs(rho_t1[0].values - rho_t2[0].values)))
    rep.check("initial_datum_preserved",
              "rho~1(0) == rho~2(0) exactly (X_u(0) = id)", same0, 0.0)

    w_field = compose_pushforward(u, v, ExactFlowProvider(
        u, 1e-9, steps_per_unit=steps_per_unit))
    out1 = weak_residual(w_field, rho_t1, rho_t1[0], basis, tau,
                         field_values=w_lattice)
    out2 = weak_residual(w_field, rho_t2, rho_t2[0], basis, tau,
                         field_values=w_lattice)
    rep.measured.update({"output_residual_rho1": out1["max"],
                         "output_residual_rho2": out2["max"]})
    rep.check("weak_residual_rho1", "residual(w, rho~1) <= tol",
              out1["max"], output_tol)
    rep.check("weak_residual_rho2", "residual(w, rho~2) <= tol",
              out2["max"], output_tol)

    gap_out = distinctness_gap(rho_t1, rho_t2)
    rep.measured["output_gap"] = gap_out
    rep.check("distinctness_preserved", "gap(rho~1, rho~2) > 0",
              gap_out, 0.0, op=">")

    # Divergence of the composed field, honest route (second variational).
    rng = np.random.default_rng(0)
    sample = rng.uniform(0.0, 1.0, (400, d))
    div_w = 0.0
    for t in np.linspace(0.1, tau, 4):
        div_w = max(div_w, float(np.max(np.abs(w_field.div(float(t), sample)))))
    rep.measured["div_w"] = div_w
    rep.check("solenoidal_composition", "max |div w| <= tol", div_w, div_tol)

    # ||u - w|| in Linf_t (Lq cap W^{1,p}) lattice norms: reported.
    wq = float(n) ** (-d)
    lq_sup = max(field_lq_norm(w_lattice[m] - u.eval(float(times[m]), pts),
                               q, wq)
                 for m in range(0, len(times), 2))
    n_g = 128
    pts_g = lattice_points(n_g, d)
    wg = float(n_g) ** (-d)
    w1p_sup = 0.0
    for t in np.linspace(0.0, tau, 3):
        Gw = w_field.grad(float(t), pts_g)
        Gu = u.grad(float(t), pts_g)
        fro = np.sqrt(np.sum((Gw - Gu) ** 2, axis=(-2, -1)))
        w1p_sup = max(w1p_sup, float((wg * np.sum(fro ** p)) ** (1.0 / p)))
    rep.measured["u_minus_w_LinfLq"] = lq_sup
    rep.measured["u_minus_w_LinfW1p_semi"] = w1p_sup
    rep.params_chosen = {"q": q, "p": p, "n": n, "nodes": len(times),
                         "tau": tau}
    rep.runtime_s = watch.elapsed()
    return rep
