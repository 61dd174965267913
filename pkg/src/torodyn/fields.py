"""Analytic time-dependent vector fields on the torus.

Every field evaluates on batches of raw coordinates (shape (..., d)),
wrapping internally, and carries closed-form first derivatives:

    eval(t, x)  -> (..., d)      field value
    grad(t, x)  -> (..., d, d)   G[..., i, j] = d v_i / d x_j
    div(t, x)   -> (...)         trace of grad
    hess(t, x)  -> (..., d, d, d)  optional second derivatives

The centerpiece is the compressing building block: a radial field
-psi(x) (sqrt(d)/2) x/|x| whose cutoff psi is 0 on the closed ball of
radius delta, 1 on the open cube of side 1-2*delta minus the closed ball
of radius 2*delta, and 0 outside the cube of side 1-delta.  Oscillation
and concentration rescalings, time reversal, and the inverse-flow
composition w = u + (grad Phi_u)^{-1} v(Phi_u) are provided as wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .torus import centered, wrap

__all__ = [
    "Field",
    "FieldCapabilityError",
    "CompressorParams",
    "cutoff_psi",
    "cutoff_psi_grad",
    "CompressorField",
    "compressor",
    "ConstantField",
    "TrigField",
    "zero_field",
    "rescale_oscillation",
    "rescale_concentration",
    "time_reverse",
    "compose_pushforward",
    "ComposedPushforward",
    "TimeBump",
    "StagedField",
    "LatticeStreamField",
    "smoothstep",
    "smoothstep_prime",
    "build_field",
]


class FieldCapabilityError(NotImplementedError):
    """Raised when a field cannot supply a requested derivative."""


# ---------------------------------------------------------------------------
# Smooth transition primitives built from s -> exp(-a/s).


def _bump_exp(s: np.ndarray, a: float) -> np.ndarray:
    out = np.zeros_like(s)
    pos = s > 0
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        out[pos] = np.exp(-a / s[pos])
    return out


def smoothstep(s, sharpness: float = 1.0) -> np.ndarray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, strictly monotone between."""
    scalar = np.isscalar(s) or np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    f = _bump_exp(s, sharpness)
    g = _bump_exp(1.0 - s, sharpness)
    out = np.zeros_like(s)
    out[s >= 1.0] = 1.0
    mid = (s > 0.0) & (s < 1.0)
    out[mid] = f[mid] / (f[mid] + g[mid])
    return float(out[0]) if scalar else out


def smoothstep_prime(s, sharpness: float = 1.0) -> np.ndarray:
    """Derivative of ``smoothstep``; identically 0 outside (0, 1)."""
    scalar = np.isscalar(s) or np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros_like(s)
    mid = (s > 0.0) & (s < 1.0)
    if np.any(mid):
        sm = s[mid]
        a = sharpness
        f = np.exp(-a / sm)
        g = np.exp(-a / (1.0 - sm))
        fp = (a / (sm * sm)) * f
        gp = (a / ((1.0 - sm) ** 2)) * g
        out[mid] = (fp * g + f * gp) / (f + g) ** 2
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Field base class.


class Field:
    """Time-dependent vector field on the torus with analytic derivatives."""

    dim: int
    horizon: float = math.inf
    #: smooth up to and including the horizon; False means smooth on [0,T)
    #: and bounded on [0,T] (flows extend by continuity).
    smooth_to_horizon: bool = True
    divergence_free: bool = False
    autonomous: bool = False

    def eval(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def div(self, t: float, x: np.ndarray) -> np.ndarray:
        G = self.grad(t, x)
        return np.trace(G, axis1=-2, axis2=-1)

    def hess(self, t: float, x: np.ndarray) -> np.ndarray:
        raise FieldCapabilityError(
            f"{type(self).__name__} does not provide second derivatives")

    # Fused variants; subclasses override when a joint pass is cheaper.
    def eval_grad(self, t, x):
        return self.eval(t, x), self.grad(t, x)

    def eval_div(self, t, x):
        return self.eval(t, x), self.div(t, x)

    def sup_norm_bound(self) -> float | None:
        """Analytic bound on sup |v|, when known."""
        return None


# ---------------------------------------------------------------------------
# The compressing building block.


@dataclass(frozen=True)
class CompressorParams:
    """Parameters of the compressing cutoff.

    delta fixes the three plateau regions; it must be small enough that
    the closed ball of radius 2*delta sits inside the cube of side
    1-2*delta, which holds throughout (0, 1/8).
    """

    delta: float
    dim: int = 2
    sharpness: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta < 0.125):
            raise ValueError(f"delta must lie in (0, 1/8), got {self.delta}")
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if not 2 * self.delta < (1 - 2 * self.delta) / 2:
            raise ValueError("delta too large: ball of radius 2*delta must fit "
                             "inside the cube of side 1-2*delta")


def _psi_pieces(c: np.ndarray, params: CompressorParams):
    """Radial and per-axis transition factors of the cutoff at centered c."""
    d = params.dim
    dl = params.delta
    a = params.sharpness
    r = np.sqrt(np.sum(c * c, axis=-1))
    inner = smoothstep((r - dl) / dl, a)
    edge = (1.0 - 2.0 * dl) / 2.0
    width = dl / 2.0
    y = (np.abs(c) - edge) / width            # (..., d)
    outer = 1.0 - smoothstep(y, a)            # per-axis factors
    return r, inner, y, outer, edge, width, d


def cutoff_psi(x, params: CompressorParams) -> np.ndarray:
    """Smooth cutoff: 0 on the closed delta-ball, 1 on Q_{1-2d} minus the
    closed 2*delta-ball, 0 outside Q_{1-delta}; values in [0, 1]."""
    c = centered(x)
    _, inner, _, outer, _, _, _ = _psi_pieces(np.atleast_2d(c) if c.ndim == 1 else c,
                                              params)
    if c.ndim == 1:
        return float((inner * np.prod(outer, axis=-1))[0])
    return inner * np.prod(outer, axis=-1)


def cutoff_psi_grad(x, params: CompressorParams):
    """Cutoff value and its closed-form gradient, shapes (...,) and (..., d)."""
    c = centered(x)
    squeeze = c.ndim == 1
    if squeeze:
        c = c[None, :]
    r, inner, y, outer, edge, width, d = _psi_pieces(c, params)
    a = params.sharpness
    dl = params.delta
    prod_outer = np.prod(outer, axis=-1)
    psi = inner * prod_outer

    grad = np.zeros_like(c)
    # Radial part: step'((r-dl)/dl)/dl * c/r, vanishes identically for r <= dl.
    live = r > dl
    if np.any(live):
        ds = smoothstep_prime((r[live] - dl) / dl, a) / dl
        grad[live] = (ds / r[live])[:, None] * c[live] * prod_outer[live][:, None]
    # Tensorized outer part.
    sp = smoothstep_prime(y, a)  # (..., d)
    if np.any(sp):
        for i in range(d):
            others = [j for j in range(d) if j != i]
            prod_except = np.ones_like(prod_outer)
            for j in others:
                prod_except = prod_except * outer[..., j]
            grad[..., i] += inner * prod_except * (-sp[..., i]) * np.sign(c[..., i]) / width
    if squeeze:
        return float(psi[0]), grad[0]
    return psi, grad


class CompressorField(Field):
    """Autonomous radial compressor v(x) = -psi(x) (sqrt(d)/2) x/|x|.

    Zero at the origin (psi vanishes on the closed delta-ball), supported
    in Q_{1-delta}(0) and extended 1-periodically; sup-norm sqrt(d)/2,
    attained on the psi = 1 plateau.  Uses the jitted kernels from
    ``_kernels`` when numba is available.
    """

    def __init__(self, params: CompressorParams, use_kernels: bool = True):
        self.params = params
        self.dim = params.dim
        self.speed = math.sqrt(params.dim) / 2.0
        self.autonomous = True
        self.divergence_free = False
        #: supported strictly inside the open unit cube (margin delta/2)
        self.supported_in_unit_cube = True
        from . import _kernels
        self._fast = use_kernels and _kernels.HAVE_NUMBA
        self._kernels = _kernels if self._fast else None

    def _centered(self, x):
        c = centered(np.asarray(x, dtype=float))
        if c.ndim == 1:
            c = c[None, :]
            return c, True
        return c, False

    def eval(self, t, x):
        if self._fast:
            return self.eval_div(t, x)[0]
        c, squeeze = self._centered(x)
        psi, _, r = self._psi_only(c)
        r_safe = np.maximum(r, 1e-300)
        v = -(self.speed * psi / r_safe)[..., None] * c
        return v[0] if squeeze else v

    def _psi_only(self, c):
        r, inner, _, outer, _, _, _ = _psi_pieces(c, self.params)
        return inner * np.prod(outer, axis=-1), inner, r

    def grad(self, t, x):
        return self.eval_grad(t, x)[1]

    def eval_grad(self, t, x):
        if self._fast:
            pts = np.atleast_2d(np.asarray(x, dtype=float))
            lead = pts.shape[:-1]
            flat = np.ascontiguousarray(pts.reshape(-1, self.dim))
            v = np.empty_like(flat)
            G = np.empty((flat.shape[0], self.dim, self.dim))
            self._kernels.compressor_eval_grad(
                flat, self.params.delta, self.params.sharpness, self.speed, v, G)
            v = v.reshape(lead + (self.dim,))
            G = G.reshape(lead + (self.dim, self.dim))
            if np.ndim(x) == 1:
                return v[0], G[0]
            return v, G
        c, squeeze = self._centered(x)
        psi, gpsi = cutoff_psi_grad(c, self.params)
        r = np.sqrt(np.sum(c * c, axis=-1))
        r_safe = np.maximum(r, 1e-300)
        chat = c / r_safe[..., None]
        v = -(self.speed * psi)[..., None] * chat
        d = self.dim
        eye = np.eye(d)
        # G_ij = -s [ gpsi_j chat_i + psi (delta_ij - chat_i chat_j) / r ]
        G = -(self.speed) * (
            chat[..., :, None] * gpsi[..., None, :]
            + (psi / r_safe)[..., None, None]
            * (eye - chat[..., :, None] * chat[..., None, :])
        )
        dead = psi <= 0.0
        if np.any(dead):
            v[dead] = 0.0
            G[dead] = 0.0
        if squeeze:
            return v[0], G[0]
        return v, G

    def eval_div(self, t, x):
        if self._fast:
            pts = np.atleast_2d(np.asarray(x, dtype=float))
            lead = pts.shape[:-1]
            flat = np.ascontiguousarray(pts.reshape(-1, self.dim))
            v = np.empty_like(flat)
            dv = np.empty(flat.shape[0])
            self._kernels.compressor_eval_div(
                flat, self.params.delta, self.params.sharpness, self.speed, v, dv)
            v = v.reshape(lead + (self.dim,))
            dv = dv.reshape(lead)
            if np.ndim(x) == 1:
                return v[0], float(dv[0])
            return v, dv
        c, squeeze = self._centered(x)
        psi, gpsi = cutoff_psi_grad(c, self.params)
        r = np.sqrt(np.sum(c * c, axis=-1))
        r_safe = np.maximum(r, 1e-300)
        chat = c / r_safe[..., None]
        v = -(self.speed * psi)[..., None] * chat
        dv = -self.speed * (np.sum(gpsi * chat, axis=-1) + psi * (self.dim - 1) / r_safe)
        dead = psi <= 0.0
        if np.any(dead):
            v[dead] = 0.0
            dv[dead] = 0.0
        if squeeze:
            return v[0], float(dv[0])
        return v, dv

    def div(self, t, x):
        return self.eval_div(t, x)[1]

    def sup_norm_bound(self):
        return self.speed


def compressor(params: CompressorParams) -> CompressorField:
    return CompressorField(params)


# ---------------------------------------------------------------------------
# Elementary smooth fields.


class ConstantField(Field):
    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=float)
        self.dim = self.velocity.size
        self.autonomous = True
        self.divergence_free = True

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.velocity, x.shape).copy()

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim,))

    def div(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def hess(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim, self.dim))

    def sup_norm_bound(self):
        return float(np.linalg.norm(self.velocity))


def zero_field(dim: int) -> ConstantField:
    return ConstantField(np.zeros(dim))


@dataclass(frozen=True)
class TrigMode:
    coeff: tuple          # (d,) direction * amplitude
    freq: tuple           # (d,) integer frequency vector
    phase: float = 0.0    # value contributes coeff * sin(2 pi k.x + phase)


class TrigField(Field):
    """Finite sum of trigonometric modes, optionally modulated in time.

    Each mode contributes coeff * P(t) * sin(2 pi k . x + phase); the mode
    is divergence free iff coeff . k == 0, which ``divfree_2d`` enforces
    by taking coeff perpendicular to k.
    """

    def __init__(self, dim: int, modes, time_profile=None):
        self.dim = dim
        self.modes = [TrigMode(tuple(map(float, m.coeff)), tuple(map(int, m.freq)),
                               float(m.phase)) if not isinstance(m, TrigMode) else m
                      for m in modes]
        self._C = np.array([m.coeff for m in self.modes], dtype=float)   # (M, d)
        self._K = np.array([m.freq for m in self.modes], dtype=float)    # (M, d)
        self._P = np.array([m.phase for m in self.modes], dtype=float)   # (M,)
        self.time_profile = time_profile
        self.autonomous = time_profile is None
        ck = np.abs(np.sum(self._C * self._K, axis=1))
        self.divergence_free = bool(np.all(ck < 1e-13))
        from . import _kernels
        self._fast = _kernels.HAVE_NUMBA
        self._kernels = _kernels if self._fast else None

    @classmethod
    def divfree_2d(cls, amps, freqs, phases=None, time_profile=None):
        """2-d divergence-free field: each mode's coefficient is amp * k_perp / |k|."""
        modes = []
        phases = phases if phases is not None else [0.0] * len(amps)
        for amp, k, ph in zip(amps, freqs, phases):
            k = np.asarray(k, dtype=float)
            perp = np.array([-k[1], k[0]]) / np.linalg.norm(k)
            modes.append(TrigMode(tuple(amp * perp), tuple(int(v) for v in k), ph))
        return cls(2, modes, time_profile=time_profile)

    def _pt(self, t):
        return 1.0 if self.time_profile is None else self.time_profile.value(t)

    def _theta(self, x):
        return 2.0 * np.pi * (np.asarray(x, dtype=float) @ self._K.T) + self._P

    def eval(self, t, x):
        if self._fast and np.ndim(x) == 2:
            pts = np.ascontiguousarray(np.asarray(x, dtype=float))
            out = np.empty_like(pts)
            self._kernels.trig_eval(pts, self._C, self._K, self._P,
                                    self._pt(t), out)
            return out
        th = self._theta(x)
        return self._pt(t) * (np.sin(th) @ self._C)

    def grad(self, t, x):
        th = self._theta(x)
        cos = np.cos(th)                                  # (..., M)
        G = np.einsum("...m,mi,mj->...ij", cos, self._C, 2.0 * np.pi * self._K)
        return self._pt(t) * G

    def div(self, t, x):
        th = self._theta(x)
        ck = 2.0 * np.pi * np.sum(self._C * self._K, axis=1)
        return self._pt(t) * (np.cos(th) @ ck)

    def hess(self, t, x):
        th = self._theta(x)
        sin = np.sin(th)
        H = np.einsum("...m,mi,mj,mk->...ijk", -sin, self._C,
                      2.0 * np.pi * self._K, 2.0 * np.pi * self._K)
        return self._pt(t) * H

    def eval_grad(self, t, x):
        if self._fast and np.ndim(x) == 2:
            pts = np.ascontiguousarray(np.asarray(x, dtype=float))
            v = np.empty_like(pts)
            G = np.empty(pts.shape + (self.dim,))
            self._kernels.trig_eval_grad(pts, self._C, self._K, self._P,
                                         self._pt(t), v, G)
            return v, G
        th = self._theta(x)
        p = self._pt(t)
        v = p * (np.sin(th) @ self._C)
        G = p * np.einsum("...m,mi,mj->...ij", np.cos(th), self._C,
                          2.0 * np.pi * self._K)
        return v, G

    def sup_norm_bound(self):
        amp = float(np.sum(np.linalg.norm(self._C, axis=1)))
        if self.time_profile is None:
            return amp
        return None


# ---------------------------------------------------------------------------
# Rescalings and time reversal.


class _Wrapper(Field):
    def __init__(self, base: Field):
        self.base = base
        self.dim = base.dim
        self.divergence_free = base.divergence_free
        self.autonomous = base.autonomous
        self.smooth_to_horizon = base.smooth_to_horizon


class RescaledOscillation(_Wrapper):
    """(t, x) -> (1/(tau*lam)) v(t/tau, lam*x); horizon tau * T_base."""

    def __init__(self, base, tau: float, lam: int):
        if tau <= 0:
            raise ValueError("tau must be positive")
        if int(lam) != lam or lam < 1:
            raise ValueError("lam must be a positive integer")
        super().__init__(base)
        self.tau = float(tau)
        self.lam = int(lam)
        self.horizon = base.horizon * tau
        self.supported_in_unit_cube = False  # copies tile the torus
        # The compressor kernels take (scale, weight) arguments, so the
        # rescaled field evaluates in a single fused pass.
        self._fused = isinstance(base, CompressorField) and base._fast

    def _fused_call(self, x, kind):
        b = self.base
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        lead = pts.shape[:-1]
        flat = np.ascontiguousarray(pts.reshape(-1, self.dim))
        v = np.empty_like(flat)
        if kind == "div":
            aux = np.empty(flat.shape[0])
            b._kernels.compressor_eval_div(
                flat, b.params.delta, b.params.sharpness, b.speed, v, aux,
                float(self.lam), 1.0 / (self.tau * self.lam), 1.0 / self.tau)
            out_aux = aux.reshape(lead)
        else:
            aux = np.empty((flat.shape[0], self.dim, self.dim))
            b._kernels.compressor_eval_grad(
                flat, b.params.delta, b.params.sharpness, b.speed, v, aux,
                float(self.lam), 1.0 / (self.tau * self.lam), 1.0 / self.tau)
            out_aux = aux.reshape(lead + (self.dim, self.dim))
        v = v.reshape(lead + (self.dim,))
        if np.ndim(x) == 1:
            return v[0], out_aux[0]
        return v, out_aux

    def eval(self, t, x):
        if self._fused:
            return self._fused_call(x, "div")[0]
        # Base fields wrap internally, so the integer dilation needs no wrap.
        y = np.asarray(x, dtype=float) * self.lam
        return self.base.eval(t / self.tau, y) / (self.tau * self.lam)

    def grad(self, t, x):
        if self._fused:
            return self._fused_call(x, "grad")[1]
        y = np.asarray(x, dtype=float) * self.lam
        return self.base.grad(t / self.tau, y) / self.tau

    def div(self, t, x):
        if self._fused:
            return self._fused_call(x, "div")[1]
        y = np.asarray(x, dtype=float) * self.lam
        return self.base.div(t / self.tau, y) / self.tau

    def eval_grad(self, t, x):
        if self._fused:
            return self._fused_call(x, "grad")
        y = np.asarray(x, dtype=float) * self.lam
        v, G = self.base.eval_grad(t / self.tau, y)
        return v / (self.tau * self.lam), G / self.tau

    def eval_div(self, t, x):
        if self._fused:
            return self._fused_call(x, "div")
        y = np.asarray(x, dtype=float) * self.lam
        v, dv = self.base.eval_div(t / self.tau, y)
        return v / (self.tau * self.lam), dv / self.tau

    def hess(self, t, x):
        y = np.asarray(x, dtype=float) * self.lam
        return self.base.hess(t / self.tau, y) * (self.lam / self.tau)

    def sup_norm_bound(self):
        b = self.base.sup_norm_bound()
        return None if b is None else b / (self.tau * self.lam)


def rescale_oscillation(v: Field, tau: float, lam: int) -> Field:
    return RescaledOscillation(v, tau, lam)


class SupportViolation(ValueError):
    """Raised when a field is not supported in the open unit cube."""


def _check_unit_cube_support(base: Field, t_samples, tol=1e-12):
    """Verify the field vanishes on the boundary of the centered unit cube."""
    n = 64
    s = np.linspace(-0.5, 0.5, n)
    faces = []
    d = base.dim
    for axis in range(d):
        for side in (-0.5, 0.5):
            if d == 1:
                faces.append(np.array([[side]]))
            elif d == 2:
                pts = np.zeros((n, 2))
                pts[:, axis] = side
                pts[:, 1 - axis] = s
                faces.append(pts)
            else:
                g = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
                pts = np.zeros((g.shape[0], 3))
                pts[:, axis] = side
                others = [a for a in range(3) if a != axis]
                pts[:, others[0]] = g[:, 0]
                pts[:, others[1]] = g[:, 1]
                faces.append(pts)
    pts = np.concatenate(faces, axis=0)
    worst = 0.0
    for t in t_samples:
        worst = max(worst, float(np.max(np.abs(base.eval(t, pts)))))
    if worst > tol:
        raise SupportViolation(
            f"field is not supported in the open unit cube: boundary sup "
            f"{worst:.3e} exceeds {tol:.1e}")


class RescaledConcentration(_Wrapper):
    """(t, x) -> (1/mu) v(t, mu*x), support shrunk to Q_{1/mu}(0), periodized."""

    def __init__(self, base, mu: float, check_support: bool = True):
        if mu < 1.0:
            raise ValueError("mu must be >= 1")
        super().__init__(base)
        self.mu = float(mu)
        self.horizon = base.horizon
        if check_support and not getattr(base, "supported_in_unit_cube", False):
            h = base.horizon if math.isfinite(base.horizon) else 1.0
            _check_unit_cube_support(base, np.linspace(0.0, h, 5))

    def _pull(self, x):
        c = centered(np.asarray(x, dtype=float))
        inside = np.max(np.abs(c), axis=-1) < 0.5 / self.mu
        return c, inside

    def eval(self, t, x):
        c, inside = self._pull(x)
        out = np.zeros_like(c)
        if np.any(inside):
            out[inside] = self.base.eval(t, wrap(self.mu * c[inside])) / self.mu
        return out

    def grad(self, t, x):
        c, inside = self._pull(x)
        out = np.zeros(c.shape + (self.dim,))
        if np.any(inside):
            out[inside] = self.base.grad(t, wrap(self.mu * c[inside]))
        return out

    def div(self, t, x):
        c, inside = self._pull(x)
        out = np.zeros(c.shape[:-1])
        if np.any(inside):
            out[inside] = self.base.div(t, wrap(self.mu * c[inside]))
        return out

    def sup_norm_bound(self):
        b = self.base.sup_norm_bound()
        return None if b is None else b / self.mu


def rescale_concentration(v: Field, mu: float) -> Field:
    return RescaledConcentration(v, mu)


class TimeReversed(_Wrapper):
    """(t, x) -> -v(T - t, x); an involution for fixed T."""

    def __init__(self, base, T: float):
        if not (0 < T <= base.horizon):
            raise ValueError("reversal time must lie within the base horizon")
        super().__init__(base)
        self.T = float(T)
        self.horizon = float(T)
        self.autonomous = base.autonomous

    def eval(self, t, x):
        return -self.base.eval(self.T - t, x)

    def grad(self, t, x):
        return -self.base.grad(self.T - t, x)

    def div(self, t, x):
        return -self.base.div(self.T - t, x)

    def eval_grad(self, t, x):
        v, G = self.base.eval_grad(self.T - t, x)
        return -v, -G

    def eval_div(self, t, x):
        v, dv = self.base.eval_div(self.T - t, x)
        return -v, -dv

    def sup_norm_bound(self):
        return self.base.sup_norm_bound()


def time_reverse(v: Field, T: float) -> Field:
    return TimeReversed(v, T)


# ---------------------------------------------------------------------------
# Inverse-flow composition.


def _batched_det(D: np.ndarray) -> np.ndarray:
    """Determinants of stacked small matrices without LAPACK dispatch."""
    d = D.shape[-1]
    if d == 1:
        return D[..., 0, 0]
    if d == 2:
        return D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]
    if d == 3:
        return (D[..., 0, 0] * (D[..., 1, 1] * D[..., 2, 2]
                                - D[..., 1, 2] * D[..., 2, 1])
                - D[..., 0, 1] * (D[..., 1, 0] * D[..., 2, 2]
                                  - D[..., 1, 2] * D[..., 2, 0])
                + D[..., 0, 2] * (D[..., 1, 0] * D[..., 2, 1]
                                  - D[..., 1, 1] * D[..., 2, 0]))
    return np.linalg.det(D)


class SingularJacobian(ValueError):
    """Inverse-flow Jacobian below the singularity threshold."""


class ComposedPushforward(Field):
    """w(t, x) = u(t, x) + (grad Phi_u(t, x))^{-1} v(t, Phi_u(t, x)).

    The flow data comes from ``provider.pullback(t, x)``, returning the
    pulled-back points phi = Phi_u(t, x) and the forward Jacobian
    D = grad X_u(t, phi), whose inverse is grad Phi_u.  The gradient of w
    additionally needs the second seed derivative H = grad^2 X_u(t, phi),
    hence a background u with closed-form Hessian.
    """

    DET_FLOOR = 1e-12

    def __init__(self, u: Field, v: Field, provider):
        if u.dim != v.dim:
            raise ValueError("background and perturbation dimensions differ")
        self.u = u
        self.v = v
        self.provider = provider
        self.dim = u.dim
        self.horizon = min(u.horizon, v.horizon)
        self.smooth_to_horizon = u.smooth_to_horizon and v.smooth_to_horizon
        self.divergence_free = u.divergence_free and v.divergence_free
        self.autonomous = False

    def _pull(self, t, x, need_hess=False):
        phi, D, H = self.provider.pullback(t, np.asarray(x, dtype=float),
                                           need_hess=need_hess)
        det = _batched_det(D)
        bad = ~((np.abs(det) > self.DET_FLOOR) & (np.abs(det) < 1.0 / self.DET_FLOOR))
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise SingularJacobian(
                f"inverse-flow Jacobian singular at t={t}: det grad Phi = "
                f"{1.0 / det.flat[idx]:.3e} at point index {idx}")
        return phi, D, H

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        phi, D, _ = self._pull(t, x)
        return self.u.eval(t, x) + np.einsum("...ij,...j->...i", D,
                                             self.v.eval(t, phi))

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        phi, D, H = self._pull(t, x, need_hess=True)
        Dinv = np.linalg.inv(D)
        vphi = self.v.eval(t, phi)
        Gv = self.v.grad(t, phi)
        term_h = np.einsum("...ikl,...k,...lj->...ij", H, vphi, Dinv)
        term_g = np.einsum("...ik,...kl,...lj->...ij", D, Gv, Dinv)
        return self.u.grad(t, x) + term_h + term_g

    def div(self, t, x):
        return np.trace(self.grad(t, x), axis1=-2, axis2=-1)

    def div_transport(self, t, x, phi=None):
        """div w along characteristics for incompressible backgrounds.

        Uses div w = div u + (div v)(Phi_u); valid only when u is
        divergence free.  Cheaper than the full gradient because it needs
        no second flow derivatives; cross-checked against trace(grad) in
        the test suite.
        """
        if not self.u.divergence_free:
            raise FieldCapabilityError(
                "div_transport requires an incompressible background")
        if phi is None:
            phi, _, _ = self._pull(t, x)
        return self.v.div(t, phi)

    def eval_div(self, t, x):
        # Joint value/divergence with one pullback; the cheap divergence
        # identity applies only over incompressible backgrounds.
        if not self.u.divergence_free:
            return self.eval(t, x), self.div(t, x)
        x = np.asarray(x, dtype=float)
        phi, D, _ = self._pull(t, x)
        vphi, dvphi = self.v.eval_div(t, phi)
        w = self.u.eval(t, x) + np.einsum("...ij,...j->...i", D, vphi)
        return w, dvphi

    def sup_norm_bound(self):
        return None


def compose_pushforward(u: Field, v: Field, flow_provider) -> ComposedPushforward:
    return ComposedPushforward(u, v, flow_provider)


# ---------------------------------------------------------------------------
# Temporal bumps and staged sums.


class TimeBump:
    """Smooth bump supported on (t0, t1) with prescribed integral.

    Shape exp(-a/(s(1-s))) on the unit interval; the normalization and the
    cumulative integral are tabulated once on a fixed fine grid, so every
    instance is deterministic.
    """

    _GRID = 4097

    def __init__(self, t0: float, t1: float, mass: float = 1.0, sharpness: float = 1.0):
        if not t1 > t0:
            raise ValueError("bump window must have positive length")
        self.t0, self.t1, self.mass = float(t0), float(t1), float(mass)
        self.sharpness = float(sharpness)
        s = np.linspace(0.0, 1.0, self._GRID)
        shape = np.zeros_like(s)
        mid = (s > 0) & (s < 1)
        shape[mid] = np.exp(-sharpness / (s[mid] * (1.0 - s[mid])))
        cum = np.concatenate([[0.0], np.cumsum((shape[1:] + shape[:-1]) * 0.5
                                               * (s[1] - s[0]))])
        self._s = s
        self._shape = shape / cum[-1]
        self._cum = cum / cum[-1]

    def value(self, t: float) -> float:
        if t <= self.t0 or t >= self.t1:
            return 0.0
        s = (t - self.t0) / (self.t1 - self.t0)
        return self.mass / (self.t1 - self.t0) * float(np.interp(s, self._s, self._shape))

    def integral_to(self, t: float) -> float:
        """Cumulative integral of the bump from -inf to t."""
        if t <= self.t0:
            return 0.0
        if t >= self.t1:
            return self.mass
        s = (t - self.t0) / (self.t1 - self.t0)
        return self.mass * float(np.interp(s, self._s, self._cum))


class StagedField(Field):
    """Sum of autonomous stage fields, each gated by a temporal bump.

    v(t, x) = sum_i b_i(t) g_i(x) with supp b_i in (tau_i, tau_{i+1});
    the flow is frozen outside every window.
    """

    def __init__(self, stages, horizon: float, smooth_to_horizon: bool = True):
        if not stages:
            raise ValueError("need at least one stage")
        self.stages = list(stages)          # (field, bump) pairs
        self.dim = self.stages[0][0].dim
        self.horizon = float(horizon)
        self.smooth_to_horizon = smooth_to_horizon
        self.divergence_free = all(f.divergence_free for f, _ in self.stages)
        windows = sorted((b.t0, b.t1) for _, b in self.stages)
        for (a0, a1), (b0, b1) in zip(windows, windows[1:]):
            if b0 < a1:
                raise ValueError(f"stage windows overlap: ({a0},{a1}) and ({b0},{b1})")

    def _active(self, t):
        return [(f, b.value(t)) for f, b in self.stages if b.value(t) != 0.0]

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for f, w in self._active(t):
            out += w * f.eval(0.0, x)
        return out

    def grad(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.dim,))
        for f, w in self._active(t):
            out += w * f.grad(0.0, x)
        return out

    def div(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for f, w in self._active(t):
            out += w * f.div(0.0, x)
        return out

    def eval_grad(self, t, x):
        return self.eval(t, x), self.grad(t, x)

    def eval_div(self, t, x):
        return self.eval(t, x), self.div(t, x)

    def sup_norm_bound(self):
        total = 0.0
        for f, b in self.stages:
            fb = f.sup_norm_bound()
            if fb is None:
                return None
            peak = b.mass / (b.t1 - b.t0) * float(np.max(b._shape))
            total = max(total, peak * fb)
        return total


# ---------------------------------------------------------------------------
# Exactly solenoidal lattice fields from a discrete stream function (d = 2).


class LatticeStreamField(Field):
    """Perpendicular gradient of a bilinearly interpolated stream function.

    H is sampled on the corner lattice j/n; within each cell the
    interpolant is bilinear, so v = (dH/dx2, -dH/dx1) has pointwise zero
    divergence up to float roundoff.  Gradients are piecewise constant
    per cell (only the mixed second derivative survives a bilinear).
    """

    def __init__(self, H: np.ndarray):
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("stream lattice must be square (n, n)")
        self.H = H
        self.n = H.shape[0]
        self.dim = 2
        self.autonomous = True
        self.divergence_free = True
        n = self.n
        ip1 = (np.arange(n) + 1) % n
        self._H00 = H
        self._H10 = H[ip1, :]
        self._H01 = H[:, ip1]
        self._H11 = H[ip1][:, ip1]

    def _locate(self, x):
        y = wrap(np.asarray(x, dtype=float)) * self.n
        idx = np.floor(y).astype(int) % self.n
        frac = y - np.floor(y)
        return idx[..., 0], idx[..., 1], frac[..., 0], frac[..., 1]

    def eval(self, t, x):
        i, j, s, u = self._locate(x)
        n = self.n
        h00, h10 = self._H00[i, j], self._H10[i, j]
        h01, h11 = self._H01[i, j], self._H11[i, j]
        dH1 = n * ((h10 - h00) * (1 - u) + (h11 - h01) * u)
        dH2 = n * ((h01 - h00) * (1 - s) + (h11 - h10) * s)
        return np.stack([dH2, -dH1], axis=-1)

    def grad(self, t, x):
        i, j, _, _ = self._locate(x)
        n = self.n
        m = n * n * (self._H11[i, j] - self._H10[i, j]
                     - self._H01[i, j] + self._H00[i, j])
        G = np.zeros(m.shape + (2, 2))
        G[..., 0, 0] = m
        G[..., 1, 1] = -m
        return G

    def div(self, t, x):
        i, j, _, _ = self._locate(x)
        return np.zeros(i.shape, dtype=float)

    def sup_norm_bound(self):
        n = self.n
        d1 = np.max(np.abs(self._H10 - self._H00))
        d2 = np.max(np.abs(self._H01 - self._H00))
        return float(n * math.hypot(d1, d2))


# ---------------------------------------------------------------------------
# Declarative field specifications (the CLI-facing record format).


def build_field(spec: dict) -> Field:
    """Build a field from a declarative record {kind: ..., parameters...}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("field spec must be a dict with a 'kind' entry")
    kind = spec["kind"]
    if kind == "zero":
        return zero_field(int(spec.get("dim", 2)))
    if kind == "constant":
        return ConstantField(spec["velocity"])
    if kind == "compressor":
        return CompressorField(CompressorParams(
            delta=float(spec["delta"]), dim=int(spec.get("dim", 2)),
            sharpness=float(spec.get("sharpness", 1.0))))
    if kind == "custom-trig":
        if spec.get("divfree", True):
            return TrigField.divfree_2d(spec["amps"], spec["freqs"],
                                        spec.get("phases"))
        modes = [TrigMode(tuple(c), tuple(k), p) for c, k, p in
                 zip(spec["coeffs"], spec["freqs"],
                     spec.get("phases", [0.0] * len(spec["freqs"])))]
        return TrigField(int(spec.get("dim", 2)), modes)
    if kind == "rescaled":
        base = build_field(spec["base"])
        mode = spec.get("mode", "oscillation")
        if mode == "oscillation":
            return rescale_oscillation(base, float(spec["tau"]), int(spec["lam"]))
        if mode == "concentration":
            return rescale_concentration(base, float(spec["mu"]))
        raise ValueError(f"unknown rescaling mode {mode!r}")
    if kind == "reversed":
        return time_reverse(build_field(spec["base"]), float(spec["horizon"]))
    if kind == "composed":
        from .flow import ExactFlowProvider, CachedFlowProvider
        u = build_field(spec["background"])
        v = build_field(spec["perturbation"])
        cache = spec.get("cache")
        if cache:
            provider = CachedFlowProvider(
                u, horizon=float(cache.get("horizon", 1.0)),
                n_space=int(cache.get("n", 128)), n_time=int(cache.get("nt", 33)),
                tol=float(cache.get("tol", 1e-9)),
                need_hess=bool(cache.get("hess", False)))
        else:
            provider = ExactFlowProvider(u, tol=float(spec.get("tol", 1e-9)))
        return compose_pushforward(u, v, provider)
    raise ValueError(f"unknown field kind {kind!r}")
