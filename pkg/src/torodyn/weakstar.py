"""The metric inducing the weak-* topology on bounded dual-norm balls.

d(g, h) = sum_j 2^{-j} / ||grad phi_j||_inf  |int (g - h) phi_j|,

over a fixed countable family of smooth test functions with
||grad phi_j||_inf >= 1 (which makes the series summable).  Any finite
truncation is a pseudometric whose tail is bounded by 2^{-J} ||g-h||_L1;
the tail bound is reported rather than hidden.

``modulus_check`` verifies the absolute-continuity modulus of solution
trajectories: d(rho(t), rho(s)) <= M int_s^t ||u(z)||_Lq dz, a necessary
condition satisfied by weak solutions bounded by M in the dual norm.
"""

from __future__ import annotations

import numpy as np

from .fields import Field
from .transport import DensityField, TestFunction, canonical_frequencies, \
    field_lq_norm, lattice_points, lq_norm

__all__ = ["MetricBasis", "default_metric_basis", "dm", "dm_tail_bound",
           "modulus_check"]


class MetricBasis:
    """Ordered truncated family of spatial test functions.

    Weights are 2^{-j} / ||grad phi_j||_inf with j starting at 1 in the
    stored order.  Every element must have gradient sup-norm >= 1.
    """

    def __init__(self, functions, grad_sups=None):
        self.functions = list(functions)
        if grad_sups is None:
            grad_sups = [phi.space_grad_sup() for phi in self.functions]
        self.grad_sups = np.asarray(grad_sups, dtype=float)
        if np.any(self.grad_sups < 1.0 - 1e-12):
            raise ValueError("every basis element needs ||grad phi|| >= 1")
        j = np.arange(1, len(self.functions) + 1)
        self.weights = 2.0 ** (-j.astype(float)) / self.grad_sups
        self._matrices: dict = {}

    def __len__(self):
        return len(self.functions)

    def space_matrix(self, n: int, d: int) -> np.ndarray:
        """Lattice evaluations (J, n^d), cached per grid."""
        key = (n, d)
        if key not in self._matrices:
            pts = lattice_points(n, d)
            self._matrices[key] = np.stack(
                [phi.space_value(pts) for phi in self.functions])
        return self._matrices[key]

    def pairings(self, rho: DensityField) -> np.ndarray:
        """Vector of int rho phi_j dx over the basis."""
        mat = self.space_matrix(rho.n, rho.d)
        return mat @ (rho.weight * rho.flat)


def default_metric_basis(d: int, J: int = 64) -> MetricBasis:
    """Deterministic enumeration: the constant is excluded (zero gradient)
    and replaced by 1 + sin(2 pi x_1); then trig monomials ordered by
    frequency max-norm ring, lexicographically within a ring, cos before
    sin.  Gradient sup-norms 2 pi |k| >= 2 pi are exact per element."""
    e1 = (1,) + (0,) * (d - 1)
    funcs = [TestFunction([(1.0, (0,) * d, "cos"), (1.0, e1, "sin")],
                          label="1+sin(2pi x1)")]
    sups = [2.0 * np.pi]
    ring_max = 1
    while len(funcs) < J:
        added = False
        for k in canonical_frequencies(d, ring_max):
            if max(abs(v) for v in k) != ring_max:
                continue
            for kind in ("cos", "sin"):
                if len(funcs) >= J:
                    break
                funcs.append(TestFunction([(1.0, k, kind)], label=f"{kind}{k}"))
                sups.append(2.0 * np.pi * float(np.linalg.norm(k)))
                added = True
        ring_max += 1
        if not added and ring_max > 64:
            break
    return MetricBasis(funcs[:J], sups[:J])


def dm(g: DensityField, h: DensityField, basis: MetricBasis) -> float:
    """Truncated weak-* metric between two densities on the same grid."""
    if g.values.shape != h.values.shape:
        raise ValueError("grid mismatch between densities")
    diff = basis.pairings(g) - basis.pairings(h)
    return float(np.sum(basis.weights * np.abs(diff)))


def dm_tail_bound(g: DensityField, h: DensityField, basis: MetricBasis) -> float:
    """Truncation error bound 2^{-J} ||g - h||_L1 for the dropped tail."""
    diff = DensityField(g.values - h.values, g.t, g.qprime)
    return float(2.0 ** (-len(basis)) * lq_norm(diff, 1.0))


def modulus_check(field: Field, trajectory, basis: MetricBasis, M: float,
                  q: float, slack: float = 1e-6, field_values=None) -> dict:
    """Check d(rho(t), rho(s)) <= M int_s^t ||u(z)||_Lq dz + slack for all
    ordered node pairs of a trajectory bounded by M in the dual norm.

    Returns the worst ratio lhs/rhs over pairs with rhs above the slack,
    the largest violation lhs - rhs, and the pair count.  Necessarily a
    finite-truncation test: it checks the first J pairings only.
    """
    times = np.array([r.t for r in trajectory], dtype=float)
    P = np.stack([basis.pairings(r) for r in trajectory])     # (T, J)
    n, d = trajectory[0].n, trajectory[0].d
    pts = lattice_points(n, d)
    w = trajectory[0].weight
    unorm = np.empty(len(times))
    for m, t in enumerate(times):
        u = field_values[m] if field_values is not None else field.eval(float(t), pts)
        unorm[m] = field_lq_norm(u, q, w)
    R = np.concatenate([[0.0], np.cumsum(0.5 * (unorm[1:] + unorm[:-1])
                                         * np.diff(times))])

    lhs = np.einsum("j,stj->st", basis.weights,
                    np.abs(P[None, :, :] - P[:, None, :]))     # (T, T)
    rhs = M * np.abs(R[None, :] - R[:, None])
    iu = np.triu_indices(len(times), k=1)
    viols = lhs[iu] - rhs[iu]
    live = rhs[iu] > 10.0 * slack
    worst_ratio = float(np.max(lhs[iu][live] / rhs[iu][live])) if np.any(live) else 0.0
    return {
        "holds": bool(np.all(viols <= slack)),
        "max_violation": float(np.max(viols)),
        "worst_ratio": worst_ratio,
        "pairs": int(len(viols)),
        "slack": slack,
        "max_lhs": float(np.max(lhs)),
    }
