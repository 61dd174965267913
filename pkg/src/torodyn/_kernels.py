"""Optional numba fast paths for the compressor field.

The compressor dominates every experiment's runtime (millions of RK4
stage evaluations), so its value/divergence/gradient kernels get scalar
jitted implementations.  Everything falls back to the vectorized numpy
formulas in ``fields`` when numba is unavailable; the two paths agree to
float roundoff and are covered by a consistency test.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
    # Skip the TBB probe (old TBB on this image emits a warning).
    numba.config.THREADING_LAYER = "omp"
    from numba import njit, prange
    HAVE_NUMBA = True
except Exception:  # pragma: no cover - environment without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f
        return deco

    prange = range


@njit(cache=True, inline="always")
def _step(s, a):
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    f = np.exp(-a / s)
    g = np.exp(-a / (1.0 - s))
    return f / (f + g)


@njit(cache=True, inline="always")
def _step_prime(s, a):
    if s <= 0.0 or s >= 1.0:
        return 0.0
    f = np.exp(-a / s)
    g = np.exp(-a / (1.0 - s))
    fp = a / (s * s) * f
    gp = a / ((1.0 - s) * (1.0 - s)) * g
    return (fp * g + f * gp) / ((f + g) * (f + g))


@njit(cache=True, parallel=True)
def interp_packed_2d(tab0, tab1, wt, pts, out):
    """Bilinear periodic interpolation of two packed corner-lattice tables
    (n, n, C), blended linearly with weight wt, at raw points (N, 2)."""
    N = pts.shape[0]
    n = tab0.shape[0]
    C = tab0.shape[2]
    for p in prange(N):
        x = pts[p, 0] % 1.0
        y = pts[p, 1] % 1.0
        fx = x * n
        fy = y * n
        i0 = int(fx)
        j0 = int(fy)
        ax = fx - i0
        ay = fy - j0
        i0 %= n
        j0 %= n
        i1 = (i0 + 1) % n
        j1 = (j0 + 1) % n
        w00 = (1.0 - ax) * (1.0 - ay)
        w10 = ax * (1.0 - ay)
        w01 = (1.0 - ax) * ay
        w11 = ax * ay
        for c in range(C):
            v0 = (w00 * tab0[i0, j0, c] + w10 * tab0[i1, j0, c]
                  + w01 * tab0[i0, j1, c] + w11 * tab0[i1, j1, c])
            if wt == 0.0:
                out[p, c] = v0
            else:
                v1 = (w00 * tab1[i0, j0, c] + w10 * tab1[i1, j0, c]
                      + w01 * tab1[i0, j1, c] + w11 * tab1[i1, j1, c])
                out[p, c] = (1.0 - wt) * v0 + wt * v1


@njit(cache=True, parallel=True)
def compressor_eval_div(x, delta, sharp, speed, out_v, out_div,
                        scale=1.0, wv=1.0, wd=1.0):
    """Value and divergence of the compressor, evaluated at scale*x and
    weighted by wv (value) and wd (divergence).  scale=wv=wd=1 gives the
    plain field; (scale, wv, wd) = (lam, 1/(tau lam), 1/tau) realizes the
    oscillation rescaling in one pass."""
    N, d = x.shape
    edge = (1.0 - 2.0 * delta) / 2.0
    width = delta / 2.0
    for n in prange(N):
        c = np.empty(d)
        r2 = 0.0
        for i in range(d):
            ci = (x[n, i] * scale) % 1.0
            if ci > 0.5:
                ci -= 1.0
            c[i] = ci
            r2 += ci * ci
        r = np.sqrt(r2)
        for i in range(d):
            out_v[n, i] = 0.0
        out_div[n] = 0.0
        if r <= delta:
            continue
        inner = _step((r - delta) / delta, sharp)
        if inner == 0.0:
            continue
        prod = 1.0
        outer = np.empty(d)
        for i in range(d):
            o = 1.0 - _step((abs(c[i]) - edge) / width, sharp)
            outer[i] = o
            prod *= o
        psi = inner * prod
        ip = _step_prime((r - delta) / delta, sharp) / delta
        # div = -speed * (grad psi . c/r + psi (d-1)/r)
        gdot = ip * prod  # radial part dotted with unit radial direction
        if psi > 0.0 or gdot != 0.0:
            for i in range(d):
                pe = inner
                for j in range(d):
                    if j != i:
                        pe *= outer[j]
                sp = _step_prime((abs(c[i]) - edge) / width, sharp)
                if sp != 0.0:
                    sgn = 1.0 if c[i] > 0.0 else (-1.0 if c[i] < 0.0 else 0.0)
                    gdot += (-sp * sgn / width) * pe * (c[i] / r)
            for i in range(d):
                out_v[n, i] = -wv * speed * psi * c[i] / r
            out_div[n] = -wd * speed * (gdot + psi * (d - 1) / r)


@njit(cache=True, parallel=True)
def compressor_eval_grad(x, delta, sharp, speed, out_v, out_g,
                         scale=1.0, wv=1.0, wg=1.0):
    """Value and spatial Jacobian, with the same (scale, wv, wg)
    reweighting convention as ``compressor_eval_div``."""
    N, d = x.shape
    edge = (1.0 - 2.0 * delta) / 2.0
    width = delta / 2.0
    for n in prange(N):
        c = np.empty(d)
        r2 = 0.0
        for i in range(d):
            ci = (x[n, i] * scale) % 1.0
            if ci > 0.5:
                ci -= 1.0
            c[i] = ci
            r2 += ci * ci
        r = np.sqrt(r2)
        for i in range(d):
            out_v[n, i] = 0.0
            for j in range(d):
                out_g[n, i, j] = 0.0
        if r <= delta:
            continue
        inner = _step((r - delta) / delta, sharp)
        outer = np.empty(d)
        prod = 1.0
        for i in range(d):
            o = 1.0 - _step((abs(c[i]) - edge) / width, sharp)
            outer[i] = o
            prod *= o
        psi = inner * prod
        ip = _step_prime((r - delta) / delta, sharp) / delta
        gpsi = np.empty(d)
        for i in range(d):
            gpsi[i] = ip * (c[i] / r) * prod
        for i in range(d):
            sp = _step_prime((abs(c[i]) - edge) / width, sharp)
            if sp != 0.0:
                pe = inner
                for j in range(d):
                    if j != i:
                        pe *= outer[j]
                sgn = 1.0 if c[i] > 0.0 else (-1.0 if c[i] < 0.0 else 0.0)
                gpsi[i] += -sp * sgn / width * pe
        if psi == 0.0:
            zero = True
            for i in range(d):
                if gpsi[i] != 0.0:
                    zero = False
            if zero:
                continue
        for i in range(d):
            out_v[n, i] = -wv * speed * psi * c[i] / r
            for j in range(d):
                delta_ij = 1.0 if i == j else 0.0
                out_g[n, i, j] = -wg * speed * (
                    gpsi[j] * c[i] / r
                    + psi * (delta_ij - c[i] * c[j] / r2) / r)


@njit(cache=True, parallel=True)
def trig_eval(x, coeff, freq, phase, pt, out):
    """Sum of modes coeff_m * pt * sin(2 pi freq_m . x + phase_m)."""
    N, d = x.shape
    M = coeff.shape[0]
    twopi = 2.0 * np.pi
    for n in prange(N):
        for i in range(d):
            out[n, i] = 0.0
        for m in range(M):
            th = phase[m]
            for i in range(d):
                th += twopi * freq[m, i] * x[n, i]
            s = pt * np.sin(th)
            for i in range(d):
                out[n, i] += s * coeff[m, i]


@njit(cache=True, parallel=True)
def trig_eval_grad(x, coeff, freq, phase, pt, out_v, out_g):
    """Value and Jacobian of a trigonometric mode sum."""
    N, d = x.shape
    M = coeff.shape[0]
    twopi = 2.0 * np.pi
    for n in prange(N):
        for i in range(d):
            out_v[n, i] = 0.0
            for j in range(d):
                out_g[n, i, j] = 0.0
        for m in range(M):
            th = phase[m]
            for i in range(d):
                th += twopi * freq[m, i] * x[n, i]
            s = pt * np.sin(th)
            c = pt * np.cos(th)
            for i in range(d):
                out_v[n, i] += s * coeff[m, i]
                for j in range(d):
                    out_g[n, i, j] += c * coeff[m, i] * twopi * freq[m, j]
