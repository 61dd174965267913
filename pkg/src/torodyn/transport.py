"""Densities transported by flows and weak-form verification.

A density is sampled on the uniform midpoint lattice x_j = (j + 1/2)/n
per axis with uniform quadrature weights n^{-d} (unit torus volume).
Push-forward solutions of the continuity equation are computed by
backward characteristics: rho(t, y) = rho0(Phi(t, y)) det grad Phi(t, y),
evaluated exactly on the lattice, with the determinant taken from the
scalar log-det equation along the same characteristic (identically 1 for
divergence-free fields).

Test functions are trigonometric polynomials with a separable time
profile vanishing at the final time, so the distributional form of the
equation can be checked by tensor quadrature (trapezoidal in time,
lattice in space).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .fields import Field
from .flow import integrate_flow
from .torus import wrap

__all__ = [
    "DensityField",
    "lattice_points",
    "interp_lattice",
    "TestFunction",
    "PolyDecay",
    "default_test_basis",
    "lq_norm",
    "pairing",
    "pushforward_density",
    "transport_trajectory",
    "pushforward_lattice",
    "weak_residual",
    "distinctness_gap",
    "write_density",
    "read_density",
]


# ---------------------------------------------------------------------------
# Lattices and densities.

_lattice_cache: dict = {}


def lattice_points(n: int, d: int) -> np.ndarray:
    """Midpoint lattice ((j+1/2)/n)^d, flattened to (n^d, d), C order."""
    key = (n, d)
    if key not in _lattice_cache:
        ax = (np.arange(n) + 0.5) / n
        grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
        _lattice_cache[key] = grid.reshape(-1, d)
    return _lattice_cache[key]


@dataclass
class DensityField:
    """Grid-sampled scalar density at one time with uniform weights."""

    values: np.ndarray          # shape (n,)*d
    t: float = 0.0
    qprime: float = 2.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def weight(self) -> float:
        return float(self.n) ** (-self.d)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def points(self) -> np.ndarray:
        return lattice_points(self.n, self.d)

    @classmethod
    def from_callable(cls, f, n: int, d: int, t: float = 0.0, qprime: float = 2.0):
        vals = np.asarray(f(lattice_points(n, d)), dtype=float).reshape((n,) * d)
        return cls(vals, t, qprime)

    @classmethod
    def constant(cls, c: float, n: int, d: int, t: float = 0.0, qprime: float = 2.0):
        return cls(np.full((n,) * d, float(c)), t, qprime)


def interp_lattice(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear periodic interpolation of midpoint-lattice samples."""
    d = values.ndim
    n = values.shape[0]
    y = wrap(points) * n - 0.5
    base = np.floor(y).astype(int)
    frac = y - base
    base %= n
    out = np.zeros(points.shape[0])
    for corner in range(1 << d):
        idx = []
        weight = np.ones(points.shape[0])
        for axis in range(d):
            bit = (corner >> axis) & 1
            idx.append((base[:, axis] + bit) % n)
            weight = weight * (frac[:, axis] if bit else 1.0 - frac[:, axis])
        out += weight * values[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# Norms and pairings.


def lq_norm(rho: DensityField, q: float) -> float:
    """Lattice L^q norm, (sum w |v|^q)^{1/q}; q = inf is the max norm."""
    if q != math.inf and q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    a = np.abs(rho.flat)
    if q == math.inf:
        return float(np.max(a))
    return float((rho.weight * np.sum(a ** q)) ** (1.0 / q))


def field_lq_norm(values: np.ndarray, q: float, weight: float) -> float:
    """L^q norm of vector samples (N, d) using the Euclidean modulus."""
    a = np.sqrt(np.sum(values * values, axis=-1))
    if q == math.inf:
        return float(np.max(a))
    return float((weight * np.sum(a ** q)) ** (1.0 / q))


def pairing(rho: DensityField, phi, t: float | None = None) -> float:
    """Quadrature of rho * phi(t, .) on the density's lattice."""
    pts = rho.points()
    tt = rho.t if t is None else t
    vals = phi.value(tt, pts) if hasattr(phi, "value") else np.asarray(phi(pts))
    return float(rho.weight * np.sum(rho.flat * vals))


# ---------------------------------------------------------------------------
# Test functions.


@dataclass(frozen=True)
class PolyDecay:
    """Time profile (1 - t/tau)^power, vanishing at tau."""

    tau: float
    power: int = 2

    def value(self, t: float) -> float:
        return (1.0 - t / self.tau) ** self.power

    def derivative(self, t: float) -> float:
        return -self.power / self.tau * (1.0 - t / self.tau) ** (self.power - 1)

    def sup(self) -> float:
        return 1.0

    def sup_derivative(self) -> float:
        return self.power / self.tau


class TestFunction:
    """Trigonometric polynomial with an optional separable time profile.

    Spatial part sum_m a_m trig(2 pi k_m . x); closed-form value, spatial
    gradient and time derivative.
    """

    def __init__(self, modes, profile=None, label: str = ""):
        # modes: iterable of (amp, freq tuple, "cos"|"sin")
        self.modes = [(float(a), tuple(int(v) for v in k), kind)
                      for a, k, kind in modes]
        self.profile = profile
        self.label = label
        self._A = np.array([m[0] for m in self.modes])
        self._K = np.array([m[1] for m in self.modes], dtype=float)
        self._is_cos = np.array([m[2] == "cos" for m in self.modes])

    @property
    def dim(self) -> int:
        return self._K.shape[1]

    def _theta(self, x):
        return 2.0 * np.pi * (np.asarray(x, dtype=float) @ self._K.T)

    def space_value(self, x):
        th = self._theta(x)
        tr = np.where(self._is_cos, np.cos(th), np.sin(th))
        return tr @ self._A

    def space_grad(self, x):
        th = self._theta(x)
        dtr = np.where(self._is_cos, -np.sin(th), np.cos(th))
        return np.einsum("...m,m,mj->...j", dtr, self._A, 2.0 * np.pi * self._K)

    def value(self, t, x):
        p = 1.0 if self.profile is None else self.profile.value(t)
        return p * self.space_value(x)

    def grad(self, t, x):
        p = 1.0 if self.profile is None else self.profile.value(t)
        return p * self.space_grad(x)

    def dt(self, t, x):
        if self.profile is None:
            return np.zeros(np.asarray(x).shape[:-1])
        return self.profile.derivative(t) * self.space_value(x)

    def space_sup(self) -> float:
        return float(np.sum(np.abs(self._A)))

    def space_grad_sup(self) -> float:
        """Bound sum |a_m| 2 pi |k_m|; exact for a single mode."""
        return float(np.sum(np.abs(self._A) * 2.0 * np.pi
                            * np.linalg.norm(self._K, axis=1)))

    def c1_norm(self) -> float:
        """max(sup|phi|, sup|grad phi|, sup|dt phi|), analytic bounds."""
        ps = 1.0 if self.profile is None else self.profile.sup()
        pd = 0.0 if self.profile is None else self.profile.sup_derivative()
        return max(ps * self.space_sup(), ps * self.space_grad_sup(),
                   pd * self.space_sup(), 1e-300)

    def vanishes_at(self, tau: float) -> bool:
        return self.profile is not None and abs(self.profile.value(tau)) < 1e-12


def canonical_frequencies(d: int, max_freq: int):
    """Nonzero frequency vectors with max-norm <= max_freq, one per +-k
    pair (first nonzero component positive), ordered by max-norm ring then
    lexicographically."""
    out = []
    for ring in range(1, max_freq + 1):
        ring_vecs = []
        rng = range(-ring, ring + 1)
        for k in np.ndindex(*((2 * ring + 1,) * d)):
            vec = tuple(rng[i] for i in k)
            if max(abs(v) for v in vec) != ring:
                continue
            nz = next((v for v in vec if v != 0), 0)
            if nz < 0:
                continue
            ring_vecs.append(vec)
        ring_vecs.sort()
        out.extend(ring_vecs)
    return out


def default_test_basis(d: int, tau: float, max_freq: int = 3, power: int = 2):
    """All trig monomials with frequency max-norm <= max_freq (plus the
    constant), each carrying the (1 - t/tau)^power profile."""
    profile = PolyDecay(tau, power)
    basis = [TestFunction([(1.0, (0,) * d, "cos")], profile, label="const")]
    for k in canonical_frequencies(d, max_freq):
        basis.append(TestFunction([(1.0, k, "cos")], profile, label=f"cos{k}"))
        basis.append(TestFunction([(1.0, k, "sin")], profile, label=f"sin{k}"))
    return basis


# ---------------------------------------------------------------------------
# Push-forward by backward characteristics.


def _rho0_eval(rho0, points):
    if isinstance(rho0, DensityField):
        return interp_lattice(rho0.values, points)
    if callable(rho0):
        return np.asarray(rho0(points), dtype=float)
    return np.full(points.shape[0], float(rho0))


def pushforward_density(field: Field, rho0, t: float, tol: float = 1e-8,
                        n: int | None = None, d: int | None = None,
                        qprime: float = 2.0, method: str = "logdet",
                        fixed_steps: int | None = None) -> DensityField:
    """Transport rho0 to time t: rho(t, y) = rho0(Phi(t,y)) det grad Phi.

    rho0 may be a DensityField (multilinearly interpolated; tolerances
    degrade to O(h) for discontinuous data), a callable evaluated exactly
    at the pulled-back points, or a constant.
    """
    if isinstance(rho0, DensityField):
        n = n or rho0.n
        d = d or rho0.d
    if n is None or d is None:
        raise ValueError("grid size n and dimension d required")
    pts = lattice_points(n, d)
    if t == 0.0:
        vals = _rho0_eval(rho0, pts)
        return DensityField(vals.reshape((n,) * d), 0.0, qprime)
    if field.divergence_free:
        back = integrate_flow(field, t, 0.0, pts, tol, jacobian="none",
                              fixed_steps=fixed_steps)
        det = 1.0
    elif method == "variational":
        back = integrate_flow(field, t, 0.0, pts, tol, jacobian="full",
                              fixed_steps=fixed_steps)
        det = back.jacobian_det
    else:
        back = integrate_flow(field, t, 0.0, pts, tol, jacobian="logdet",
                              fixed_steps=fixed_steps)
        det = np.exp(back.log_det)
    vals = _rho0_eval(rho0, back.position) * det
    return DensityField(vals.reshape((n,) * d), t, qprime)


def transport_trajectory(field: Field, rho0, times, tol: float = 1e-8,
                         n: int | None = None, d: int | None = None,
                         qprime: float = 2.0, method: str = "logdet"):
    """Push-forward solution sampled at the given time nodes."""
    return [pushforward_density(field, rho0, float(t), tol, n=n, d=d,
                                qprime=qprime, method=method) for t in times]


def pushforward_lattice(field: Field, rho_t: DensityField, t: float,
                        tol: float = 1e-8, rho_exact=None) -> DensityField:
    """Push a time-t snapshot forward by the flow of ``field`` at time t:
    (X(t)_sharp rho)(y) = rho(Phi(t,y)) det grad Phi(t,y).

    ``rho_exact`` bypasses lattice interpolation with an exact evaluator
    (points -> values) when the snapshot has an analytic form.
    """
    if t == 0.0:
        return DensityField(rho_t.values.copy(), 0.0, rho_t.qprime)
    pts = rho_t.points()
    if field.divergence_free:
        back = integrate_flow(field, t, 0.0, pts, tol, jacobian="none")
        det = 1.0
    else:
        back = integrate_flow(field, t, 0.0, pts, tol, jacobian="logdet")
        det = np.exp(back.log_det)
    vals = (rho_exact(back.position) if rho_exact is not None
            else interp_lattice(rho_t.values, back.position)) * det
    return DensityField(vals.reshape(rho_t.values.shape), t, rho_t.qprime)


# ---------------------------------------------------------------------------
# Weak-form residual and trajectory comparison.


def weak_residual(field: Field, trajectory, rho0, basis, tau: float,
                  normalize: bool = True, field_values=None):
    """Distributional residual of a trajectory against every test function.

    For each basis element phi (which must vanish at tau):
        R(phi) = int_0^tau int (dt phi + u . grad phi) rho dx dt
                 + int phi(0, x) rho0(x) dx,
    by trapezoidal quadrature in time over the trajectory nodes and
    lattice quadrature in space, normalized by the C^1 norm of phi.

    ``field_values`` optionally supplies precomputed u(t_m, lattice)
    arrays (list over nodes) to avoid re-evaluating expensive fields.
    """
    times = np.array([r.t for r in trajectory], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("trajectory times must be strictly increasing")
    if abs(times[0]) > 1e-12 or abs(times[-1] - tau) > 1e-9:
        raise ValueError("trajectory must span [0, tau]")
    for phi in basis:
        if not phi.vanishes_at(tau):
            raise ValueError(
                f"test function {phi.label or phi} does not vanish at tau={tau}")
    n, d = trajectory[0].n, trajectory[0].d
    pts = lattice_points(n, d)
    w = trajectory[0].weight

    J = len(basis)
    PHI = np.stack([phi.space_value(pts) for phi in basis])        # (J, N)
    GPHI = np.stack([phi.space_grad(pts) for phi in basis])        # (J, N, d)
    pv = np.array([[phi.profile.value(t) for t in times] for phi in basis])
    pd = np.array([[phi.profile.derivative(t) for t in times] for phi in basis])

    integrand = np.zeros((J, len(times)))
    for m, (t, rho) in enumerate(zip(times, trajectory)):
        if field_values is not None:
            u = field_values[m]
        else:
            u = field.eval(float(t), pts)
        rw = w * rho.flat
        s1 = PHI @ rw
        s2 = np.einsum("jnd,nd->j", GPHI, rw[:, None] * u)
        integrand[:, m] = pd[:, m] * s1 + pv[:, m] * s2
    total = np.trapezoid(integrand, times, axis=1)

    rho0_field = rho0 if isinstance(rho0, DensityField) else None
    if rho0_field is not None:
        r0 = rho0_field.flat
    else:
        r0 = _rho0_eval(rho0, pts)
    total += pv[:, 0] * (PHI @ (w * r0))

    norms = np.array([phi.c1_norm() for phi in basis]) if normalize else np.ones(J)
    per = np.abs(total) / norms
    return {"max": float(np.max(per)), "per_element": per,
            "labels": [phi.label for phi in basis]}


def distinctness_gap(traj1, traj2) -> float:
    """Max over time nodes of the L^1 norm of the difference."""
    if len(traj1) != len(traj2):
        raise ValueError("trajectories have different lengths")
    gap = 0.0
    for a, b in zip(traj1, traj2):
        if a.values.shape != b.values.shape:
            raise ValueError("trajectory grids differ")
        diff = DensityField(a.values - b.values, a.t, a.qprime)
        gap = max(gap, lq_norm(diff, 1.0))
    return gap


# ---------------------------------------------------------------------------
# Lattice dump format: one text header line, then little-endian float64
# payload in row-major order.  Header: "d n t qprime checksum".


def write_density(rho: DensityField, path):
    payload = np.ascontiguousarray(rho.values, dtype="<f8").tobytes()
    checksum = format(zlib.crc32(payload) & 0xFFFFFFFF, "08x")
    header = f"{rho.d} {rho.n} {rho.t!r} {rho.qprime!r} {checksum}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def read_density(path) -> DensityField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 5:
        raise ValueError(f"malformed density header in {path}")
    d, n = int(header[0]), int(header[1])
    t, qprime = float(header[2]), float(header[3])
    checksum = format(zlib.crc32(payload) & 0xFFFFFFFF, "08x")
    if checksum != header[4]:
        raise ValueError(f"density payload checksum mismatch in {path}")
    vals = np.frombuffer(payload, dtype="<f8").reshape((n,) * d)
    return DensityField(vals.copy(), t, qprime)
