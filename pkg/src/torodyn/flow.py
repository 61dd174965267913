"""Numerical flow maps on the torus.

Classical fixed-step RK4 on seed batches, with the Jacobian advanced
simultaneously through the variational equation d/dt grad X = grad u(t, X)
grad X (and optionally the second variational equation for seed Hessians).
The step count is chosen by doubling until a step-halving error estimate
on a probe subset falls below the requested tolerance, so runs are
bitwise reproducible for a given configuration.

Backward integration (t_end < t_start) yields inverse flows; integrating
up to the horizon of a merely bounded field realizes its continuous
extension.  ``ExactFlowProvider`` and ``CachedFlowProvider`` supply the
pulled-back points and Jacobians that the inverse-flow composition of
vector fields consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Field, compose_pushforward
from .torus import torus_dist, wrap

__all__ = [
    "FlowResult",
    "integrate_flow",
    "inverse_flow",
    "check_semigroup",
    "check_flow_composition",
    "ode_curve_composition",
    "ExactFlowProvider",
    "CachedFlowProvider",
]

_MAX_TOTAL_STEPS = 1 << 21


@dataclass
class FlowResult:
    """Flow positions and derivative data for a batch of seeds."""

    position: np.ndarray            # (N, d), wrapped into [0,1)^d
    displacement: np.ndarray        # (N, d), unwrapped end minus seed
    jacobian: np.ndarray | None     # (N, d, d) seed Jacobian, or None
    jacobian_det: np.ndarray | None
    log_det: np.ndarray | None      # from the scalar log-det equation
    hessian: np.ndarray | None      # (N, d, d, d) second seed derivatives
    t_start: float
    t_end: float
    steps: int
    error_estimate: float


def _rhs(field: Field, t, state, mode, hessian):
    X = state[0]
    if mode == "full":
        v, G = field.eval_grad(t, X)
        D = state[1]
        dD = np.einsum("...il,...lj->...ij", G, D)
        if hessian:
            Hu = field.hess(t, X)
            H = state[2]
            dH = (np.einsum("...ilm,...lj,...mk->...ijk", Hu, D, D)
                  + np.einsum("...il,...ljk->...ijk", G, H))
            return (v, dD, dH)
        return (v, dD)
    if mode == "logdet":
        v, dv = field.eval_div(t, X)
        return (v, dv)
    return (field.eval(t, X),)


def _rk4_run(field, t0, t1, state, n_steps, mode, hessian):
    h = (t1 - t0) / n_steps
    for k in range(n_steps):
        t = t0 + k * h
        k1 = _rhs(field, t, state, mode, hessian)
        s2 = tuple(s + 0.5 * h * dk for s, dk in zip(state, k1))
        k2 = _rhs(field, t + 0.5 * h, s2, mode, hessian)
        s3 = tuple(s + 0.5 * h * dk for s, dk in zip(state, k2))
        k3 = _rhs(field, t + 0.5 * h, s3, mode, hessian)
        s4 = tuple(s + h * dk for s, dk in zip(state, k3))
        k4 = _rhs(field, t + h, s4, mode, hessian)
        state = tuple(s + (h / 6.0) * (a + 2 * b + 2 * c + d)
                      for s, a, b, c, d in zip(state, k1, k2, k3, k4))
    return state


def _initial_state(seeds, mode, hessian):
    N, d = seeds.shape
    if mode == "full":
        D = np.broadcast_to(np.eye(d), (N, d, d)).copy()
        if hessian:
            return (seeds.copy(), D, np.zeros((N, d, d, d)))
        return (seeds.copy(), D)
    if mode == "logdet":
        return (seeds.copy(), np.zeros(N))
    return (seeds.copy(),)


def _state_gap(a, b):
    gap = float(np.max(torus_dist(a[0], b[0]))) if a[0].size else 0.0
    for sa, sb in zip(a[1:], b[1:]):
        gap = max(gap, float(np.max(np.abs(sa - sb))) if sa.size else 0.0)
    return gap


def _resolve_steps(field: Field, span: float, min_steps_per_unit: int) -> int:
    hint = getattr(field, "time_resolution_hint", None)
    per_unit = max(min_steps_per_unit, int(hint) if hint else 0)
    return max(1, math.ceil(abs(span) * per_unit))


def integrate_flow(field: Field, t_start: float, t_end: float, seeds,
                   tol: float = 1e-8, *, jacobian: str = "full",
                   hessian: bool = False, min_steps_per_unit: int = 32,
                   probe_size: int = 64, fixed_steps: int | None = None,
                   steps_per_unit: int | None = None) -> FlowResult:
    """Flow the seed batch from t_start to t_end.

    jacobian: "full" advances the variational equation from the identity,
    "logdet" advances only log det through d/dt log J = div u(t, X),
    "none" positions only.  t_end < t_start integrates backward (the
    inverse flow); t_end may equal the horizon of a bounded field.

    The step count defaults to doubling until the step-halving estimate
    on a probe subset is below tol; ``fixed_steps`` or ``steps_per_unit``
    pin it instead (no probe), for callers that have validated a step
    budget and need to control cost.
    """
    if not (1e-12 <= tol <= 1e-3):
        raise ValueError("tol must lie in [1e-12, 1e-3]")
    if jacobian not in ("full", "logdet", "none"):
        raise ValueError(f"unknown jacobian mode {jacobian!r}")
    if hessian and jacobian != "full":
        raise ValueError("hessian requires jacobian='full'")
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    hi = field.horizon
    if math.isfinite(hi):
        if max(t_start, t_end) > hi + 1e-12:
            raise ValueError(f"requested time beyond field horizon {hi}")
    if t_end == t_start:
        N, d = seeds.shape
        return FlowResult(wrap(seeds), np.zeros_like(seeds),
                          np.broadcast_to(np.eye(d), (N, d, d)).copy()
                          if jacobian == "full" else None,
                          np.ones(N) if jacobian == "full" else None,
                          np.zeros(N) if jacobian == "logdet" else None,
                          np.zeros((N, d, d, d)) if hessian else None,
                          t_start, t_end, 0, 0.0)

    span = t_end - t_start
    if fixed_steps is None and steps_per_unit is not None:
        fixed_steps = max(1, math.ceil(abs(span) * steps_per_unit))
    if fixed_steps is not None:
        n_steps = int(fixed_steps)
        err = float("nan")
    else:
        probe = seeds[:min(probe_size, seeds.shape[0])]
        n_steps = _resolve_steps(field, span, min_steps_per_unit)
        prev = _rk4_run(field, t_start, t_end,
                        _initial_state(probe, jacobian, hessian),
                        n_steps, jacobian, hessian)
        while True:
            cur = _rk4_run(field, t_start, t_end,
                           _initial_state(probe, jacobian, hessian),
                           2 * n_steps, jacobian, hessian)
            err = _state_gap(prev, cur)
            if err <= tol:
                n_steps *= 2
                err /= 15.0  # one extra halving's worth of RK4 gain
                break
            if 2 * n_steps > _MAX_TOTAL_STEPS:
                raise RuntimeError(
                    f"step-halving did not reach tol={tol} within "
                    f"{_MAX_TOTAL_STEPS} steps (last estimate {err:.3e})")
            n_steps *= 2
            prev = cur

    state = _rk4_run(field, t_start, t_end,
                     _initial_state(seeds, jacobian, hessian),
                     n_steps, jacobian, hessian)
    X = state[0]
    D = state[1] if jacobian == "full" else None
    H = state[2] if hessian else None
    logJ = state[1] if jacobian == "logdet" else None
    det = np.linalg.det(D) if D is not None else None
    return FlowResult(wrap(X), X - seeds, D, det, logJ, H,
                      t_start, t_end, n_steps, err)


def inverse_flow(field: Field, t: float, y, tol: float = 1e-8, *,
                 hessian: bool = False, **kw) -> FlowResult:
    """Inverse flow Phi(t, y): integrate backward from (t, y) to time 0.

    The returned jacobian is grad Phi(t, y); its inverse equals
    grad X(t, Phi(t, y)) (checked to 10*tol in the test suite).
    """
    return integrate_flow(field, t, 0.0, y, tol, jacobian="full",
                          hessian=hessian, **kw)


def check_semigroup(field: Field, t1: float, t2: float, t3: float, seeds,
                    tol: float = 1e-8) -> float:
    """Max torus deviation of X(t3,t1,x) from X(t3,t2, X(t2,t1,x))."""
    if not t1 <= t2 <= t3:
        raise ValueError("need t1 <= t2 <= t3")
    direct = integrate_flow(field, t1, t3, seeds, tol, jacobian="none").position
    mid = integrate_flow(field, t1, t2, seeds, tol, jacobian="none").position
    two = integrate_flow(field, t2, t3, mid, tol, jacobian="none").position
    return float(np.max(torus_dist(direct, two)))


def check_flow_composition(u: Field, v: Field, w: Field, t: float, seeds,
                           tol: float = 1e-8) -> float:
    """Max torus deviation of X_w(t, x) from X_u(t, X_v(t, x))."""
    left = integrate_flow(w, 0.0, t, seeds, tol, jacobian="none").position
    inner = integrate_flow(v, 0.0, t, seeds, tol, jacobian="none").position
    right = integrate_flow(u, 0.0, t, inner, tol, jacobian="none").position
    return float(np.max(torus_dist(left, right)))


def unwrap_curve(points: np.ndarray) -> np.ndarray:
    """Lift a sampled torus curve to a continuous curve in R^d.

    Valid when consecutive samples move less than half a period.
    """
    pts = np.asarray(points, dtype=float)
    out = pts.copy()
    for m in range(1, len(pts)):
        step = pts[m] - wrap(out[m - 1])
        step = np.where(step > 0.5, step - 1.0, step)
        step = np.where(step <= -0.5, step + 1.0, step)
        out[m] = out[m - 1] + step
    return out


def ode_curve_composition(u: Field, v: Field, x, times, tol: float = 1e-8):
    """Curve t -> X_u(t, gamma_v(t)) sampled on the grid, with its
    finite-difference residual against w = u + (grad Phi_u)^{-1} v(Phi_u)."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    gam_v = [x[0]]
    pos = x
    for a, b in zip(times[:-1], times[1:]):
        pos = integrate_flow(v, a, b, pos, tol, jacobian="none").position
        gam_v.append(pos[0])
    gam_v = np.array(gam_v)

    curve = np.empty_like(gam_v)
    curve[0] = gam_v[0]
    for m in range(1, len(times)):
        steps = max(1, math.ceil(times[m] * 64))
        res = integrate_flow(u, 0.0, times[m], gam_v[m][None], tol,
                             jacobian="none", fixed_steps=steps)
        curve[m] = res.position[0]

    w = compose_pushforward(u, v, ExactFlowProvider(u, tol))
    lifted = unwrap_curve(curve)
    resid = 0.0
    for m in range(1, len(times) - 1):
        h = times[m + 1] - times[m - 1]
        fd = (lifted[m + 1] - lifted[m - 1]) / h
        val = w.eval(times[m], curve[m][None])[0]
        resid = max(resid, float(np.linalg.norm(fd - val)))
    return {"times": times, "curve": curve, "max_residual": resid}


# ---------------------------------------------------------------------------
# Flow providers for the inverse-flow composition.


def _hess_forward_from_backward(A, Hphi):
    """Second seed derivative of the forward flow at the pulled-back point.

    Differentiating X(Phi(y)) = y twice gives
    grad^2 X(phi)[B., B.] = -A grad^2 Phi, hence with A = B^{-1}:
    H^X_{icd} = -A_{ia} H^Phi_{ajk} A_{jc} A_{kd}.
    """
    return -np.einsum("...ia,...ajk,...jc,...kd->...icd", A, Hphi, A, A)


class ExactFlowProvider:
    """Uncached pullback: every request integrates the flow afresh.

    ``steps_per_unit`` pins the inner step budget; leave None to use the
    probe-based selection (accurate but costly when the provider is hit
    once per RK4 stage of an outer integration).
    """

    def __init__(self, field: Field, tol: float = 1e-9,
                 steps_per_unit: int | None = None):
        self.field = field
        self.tol = tol
        self.steps_per_unit = steps_per_unit

    def pullback(self, t: float, points: np.ndarray, need_hess: bool = False):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        N, d = points.shape
        if t == 0.0:
            D = np.broadcast_to(np.eye(d), (N, d, d)).copy()
            H = np.zeros((N, d, d, d)) if need_hess else None
            return wrap(points), D, H
        back = integrate_flow(self.field, t, 0.0, points, self.tol,
                              jacobian="full", hessian=need_hess,
                              steps_per_unit=self.steps_per_unit)
        B = back.jacobian
        A = np.linalg.inv(B)
        H = _hess_forward_from_backward(A, back.hessian) if need_hess else None
        return back.position, A, H


class CachedFlowProvider:
    """Pullback memoized on a (time, space) lattice, multilinear off-lattice.

    Displacements (not positions) are interpolated, so the torus seams do
    not create jumps.  Built once, then read-only: safe for concurrent
    queries.  Use ``ExactFlowProvider`` when bitwise-exact flow data is
    required.
    """

    def __init__(self, field: Field, horizon: float, n_space: int = 128,
                 n_time: int = 33, tol: float = 1e-9, need_hess: bool = False,
                 steps_per_unit: int | None = 192):
        self.field = field
        self.horizon = float(horizon)
        self.n_space = int(n_space)
        self.n_time = int(n_time)
        self.tol = tol
        self.has_hess = need_hess
        d = field.dim
        axes = [np.arange(self.n_space) / self.n_space] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        self.times = np.linspace(0.0, self.horizon, self.n_time)
        disp, jac, hes = [], [], []
        N = grid.shape[0]
        for k, tk in enumerate(self.times):
            if tk == 0.0:
                disp.append(np.zeros((N, d)))
                jac.append(np.broadcast_to(np.eye(d), (N, d, d)).copy())
                if need_hess:
                    hes.append(np.zeros((N, d, d, d)))
                continue
            back = integrate_flow(field, tk, 0.0, grid, tol,
                                  jacobian="full", hessian=need_hess,
                                  steps_per_unit=steps_per_unit)
            A = np.linalg.inv(back.jacobian)
            disp.append(back.displacement)
            jac.append(A)
            if need_hess:
                hes.append(_hess_forward_from_backward(A, back.hessian))
        shape = (self.n_time,) + (self.n_space,) * d
        self._disp = np.array(disp).reshape(shape + (d,))
        self._jac = np.array(jac).reshape(shape + (d, d))
        self._hess = np.array(hes).reshape(shape + (d, d, d)) if need_hess else None
        self.max_inverse_grad_opnorm = float(np.max(
            np.linalg.svd(self._jac.reshape(-1, d, d), compute_uv=False)))
        # Packed (n, n, C) tables for the jitted bilinear fast path (d = 2).
        from . import _kernels
        self._fast = _kernels.HAVE_NUMBA and d == 2
        self._kernels = _kernels if self._fast else None
        if self._fast:
            comps = [self._disp.reshape(shape + (-1,)),
                     self._jac.reshape(shape + (-1,))]
            if need_hess:
                comps.append(self._hess.reshape(shape + (-1,)))
            self._packed = np.ascontiguousarray(np.concatenate(comps, axis=-1))

    def _interp_space(self, table_k, points):
        """Multilinear periodic interpolation on the corner lattice."""
        n = self.n_space
        d = self.field.dim
        y = wrap(points) * n
        base = np.floor(y).astype(int) % n
        frac = y - np.floor(y)
        trailing = table_k.shape[d:]
        out = np.zeros((points.shape[0],) + trailing)
        for corner in range(1 << d):
            idx = []
            weight = np.ones(points.shape[0])
            for axis in range(d):
                bit = (corner >> axis) & 1
                idx.append((base[:, axis] + bit) % n)
                weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
            vals = table_k[tuple(idx)]
            out += weight.reshape((-1,) + (1,) * len(trailing)) * vals
        return out

    def pullback(self, t: float, points: np.ndarray, need_hess: bool = False):
        if need_hess and not self.has_hess:
            raise ValueError("provider built without Hessian tables")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        t = min(max(t, 0.0), self.horizon)
        pos = t / self.horizon * (self.n_time - 1)
        k0 = min(int(pos), self.n_time - 2)
        a = pos - k0
        d = self.field.dim
        if self._fast:
            N = points.shape[0]
            out = np.empty((N, self._packed.shape[-1]))
            self._kernels.interp_packed_2d(self._packed[k0],
                                           self._packed[k0 + 1], a,
                                           np.ascontiguousarray(points), out)
            disp = out[:, :d]
            A = out[:, d:d + d * d].reshape(N, d, d)
            H = out[:, d + d * d:].reshape(N, d, d, d) if need_hess else None
            return wrap(points + disp), A, H
        def blend(table):
            v0 = self._interp_space(table[k0], points)
            if a == 0.0:
                return v0
            v1 = self._interp_space(table[k0 + 1], points)
            return (1.0 - a) * v0 + a * v1
        disp = blend(self._disp)
        A = blend(self._jac)
        H = blend(self._hess) if need_hess else None
        return wrap(points + disp), A, H
