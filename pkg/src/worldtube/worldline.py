"""Worldline scaffolding: geodesics, frames, exponential map, propagators.

A worldline C(sigma) carries a Dixon covector N with N . Cdot = 1 and a
spatial frame e_1..e_3 spanning the kernel of N.  Geodesics leaving C(sigma)
with tangent in that kernel sweep out the tube on which adapted coordinates
(sigma, z^1, z^2, z^3), the radial vector field and the parallel-transport
propagator are defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import spacetime as st


class LeftDomain(RuntimeError):
    """Integration reached the chart-domain boundary."""


class StepUnderflow(RuntimeError):
    pass


class NullTangent(ValueError):
    """Tangent-based Dixon vector requested on a null curve."""


class DegenerateFrame(RuntimeError):
    pass


class NotOrthogonal(ValueError):
    """Initial tangent for the exponential map is not in ker N."""


class OutsideTube(RuntimeError):
    """Newton inversion of the exponential map failed to converge."""


# ---------------------------------------------------------------------------
# geodesics
# ---------------------------------------------------------------------------

def _geodesic_rhs(spec, x, v):
    G = st._christoffel(spec, x)
    return v, -np.einsum("mij,i,j->m", G, v, v)


def _rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Curve:
    """Discretized curve with tangents; cubic Hermite interpolation."""

    s: np.ndarray
    x: np.ndarray
    v: np.ndarray
    left_domain: bool = False
    _spline: CubicHermiteSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("curve parameter values must be strictly increasing")

    @property
    def spline(self) -> CubicHermiteSpline:
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.s, self.x, self.v, axis=0)
        return self._spline

    def position(self, s):
        return self.spline(s)

    def tangent(self, s):
        return self.spline.derivative()(s)

    def is_straight(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.v - self.v[0])) <= tol)

    def to_csv(self, path):
        header = "s," + ",".join(f"x{i}" for i in range(4)) + "," + ",".join(
            f"v{i}" for i in range(4)
        )
        data = np.column_stack([self.s, self.x, self.v])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def integrate_geodesic(
    spec: st.MetricSpec,
    x0,
    v0,
    s_end: float,
    h_ode: float = 1e-3,
    method: str = "rk4",
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> Curve:
    """Integrate the geodesic equation from (x0, v0) over s in [0, s_end].

    Fixed-step RK4 by default; method="rk45" uses scipy's adaptive RK45.
    Stops early with Curve.left_domain = True if the trajectory reaches the
    chart-domain boundary.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    spec.require(x0)

    if method == "rk45":
        from scipy.integrate import solve_ivp

        def rhs(_, y):
            dx, dv = _geodesic_rhs(spec, y[:4], y[4:])
            return np.concatenate([dx, dv])

        sol = solve_ivp(
            rhs, (0.0, s_end), np.concatenate([x0, v0]), method="RK45",
            rtol=rtol, atol=atol, dense_output=True,
        )
        if not sol.success:
            raise StepUnderflow(sol.message)
        s = np.linspace(0.0, s_end, max(len(sol.t), 33))
        y = sol.sol(s)
        return Curve(s=s, x=y[:4].T, v=y[4:].T)

    n = max(1, int(round(abs(s_end) / h_ode)))
    h = s_end / n
    s = np.empty(n + 1)
    xs = np.empty((n + 1, 4))
    vs = np.empty((n + 1, 4))
    s[0], xs[0], vs[0] = 0.0, x0, v0
    y = np.concatenate([x0, v0])

    def rhs(y):
        dx, dv = _geodesic_rhs(spec, y[:4], y[4:])
        return np.concatenate([dx, dv])

    left = False
    for i in range(n):
        y = _rk4_step(rhs, y, h)
        if not spec.contains(y[:4]):
            s, xs, vs = s[: i + 1], xs[: i + 1], vs[: i + 1]
            left = True
            break
        s[i + 1] = s[i] + h
        xs[i + 1], vs[i + 1] = y[:4], y[4:]
    if len(s) < 2:
        raise LeftDomain("geodesic left the chart domain on the first step")
    return Curve(s=s, x=xs, v=vs, left_domain=left)


def geodesic_residual(spec: st.MetricSpec, curve: Curve) -> float:
    """Max norm of xddot^m + Gamma^m_ij xdot^i xdot^j over the samples."""
    acc = curve.spline.derivative(2)(curve.s)
    worst = 0.0
    for xi, vi, ai in zip(curve.x, curve.v, acc):
        G = st._christoffel(spec, xi)
        res = ai + np.einsum("mij,i,j->m", G, vi, vi)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# ---------------------------------------------------------------------------
# worldline frame
# ---------------------------------------------------------------------------

@dataclass
class WorldlineFrame:
    """Worldline C with Dixon covector N and frame e_0..e_3, (e_0) = Cdot.

    ``N`` has shape (n, 4) (covector components per sample) and ``e`` has
    shape (n, 4, 4) with e[i, a, mu] the mu-th chart component of frame
    vector a at sample i.
    """

    spec: st.MetricSpec
    C: Curve
    N: np.ndarray
    e: np.ndarray
    _nspl: CubicHermiteSpline | None = field(default=None, repr=False)
    _espl: CubicHermiteSpline | None = field(default=None, repr=False)

    @property
    def sigma(self) -> np.ndarray:
        return self.C.s

    def _splines(self):
        if self._nspl is None:
            from scipy.interpolate import CubicSpline

            if len(self.sigma) < 2:
                raise ValueError("frame needs at least two samples")
            self._nspl = CubicSpline(self.sigma, self.N, axis=0)
            self._espl = CubicSpline(self.sigma, self.e, axis=0)
        return self._nspl, self._espl

    def dixon_covector(self, sigma):
        if self.is_static():
            return self.N[0]
        nspl, _ = self._splines()
        return nspl(sigma)

    def frame(self, sigma):
        if self.is_static():
            return self.e[0]
        _, espl = self._splines()
        return espl(sigma)

    def is_static(self) -> bool:
        """True for a straight worldline in the flat chart: every tube
        operation then has a closed form."""
        return (
            self.spec.family == "minkowski"
            and self.C.is_straight()
            and bool(np.max(np.abs(self.e - self.e[0])) < 1e-13)
        )


def build_worldline(spec: st.MetricSpec, C: Curve, dixon_choice="tangent") -> WorldlineFrame:
    """Attach a Dixon covector and a spatial frame to a curve.

    dixon_choice is either "tangent" (N = -g Cdot / (-g(Cdot,Cdot)), which
    needs a timelike curve) or a callable sigma -> covector with
    N . Cdot = 1.  The spatial frame is seeded by Gram-Schmidt from the
    chart axes at the first sample, parallel-transported along C and
    re-projected into ker N at every sample.
    """
    n = len(C.s)
    N = np.empty((n, 4))
    e = np.empty((n, 4, 4))

    for i in range(n):
        g = st._metric(spec, C.x[i])
        v = C.v[i]
        if dixon_choice == "tangent":
            vv = float(np.einsum("ij,i,j->", g, v, v))
            if vv >= -1e-14:
                raise NullTangent(
                    f"tangent Dixon choice needs a timelike curve (g(v,v)={vv:.3e})"
                )
            N[i] = -(g @ v) / (-vv)
        else:
            N[i] = np.asarray(dixon_choice(C.s[i]), dtype=float)
            ndot = float(N[i] @ v)
            if abs(ndot) < 1e-12:
                raise NullTangent("custom Dixon covector is orthogonal to the worldline")
            N[i] = N[i] / ndot

    # seed frame at the first sample: chart axes projected into ker N,
    # g-orthonormalized for conditioning
    e[0, 0] = C.v[0]
    g0 = st._metric(spec, C.x[0])
    basis = []
    for axis in range(4):
        u = np.zeros(4)
        u[axis] = 1.0
        u = u - (N[0] @ u) * C.v[0]  # now N . u = 0 since N . Cdot = 1
        for b in basis:
            u = u - (np.einsum("ij,i,j->", g0, b, u)) * b
        norm2 = float(np.einsum("ij,i,j->", g0, u, u))
        if norm2 > 1e-10:
            basis.append(u / np.sqrt(norm2))
        if len(basis) == 3:
            break
    if len(basis) < 3:
        raise DegenerateFrame("could not seed a spatial frame in ker N")
    e[0, 1:] = np.array(basis)

    # parallel-transport the spatial frame sample to sample, re-projecting
    # into ker N afterwards (ker N is not transport-invariant in general)
    for i in range(n - 1):
        y = np.concatenate([C.x[i], C.v[i], e[i, 1:].ravel()])

        def rhs(y):
            x, v = y[:4], y[4:8]
            G = st._christoffel(spec, x)
            dv = -np.einsum("mij,i,j->m", G, v, v)
            ee = y[8:].reshape(3, 4)
            de = -np.einsum("mij,ai,j->am", G, ee, v)
            return np.concatenate([v, dv, de.ravel()])

        h_full = C.s[i + 1] - C.s[i]
        nsub = max(1, int(np.ceil(h_full / 1e-2)))
        for _ in range(nsub):
            y = _rk4_step(rhs, y, h_full / nsub)
        e[i + 1, 0] = C.v[i + 1]
        ee = y[8:].reshape(3, 4)
        for a in range(3):
            u = ee[a]
            e[i + 1, 1 + a] = u - (N[i + 1] @ u) * C.v[i + 1]

    frame = WorldlineFrame(spec=spec, C=C, N=N, e=e)
    for i in range(n):
        if abs(N[i] @ C.v[i] - 1.0) > 1e-9:
            raise DegenerateFrame("N . Cdot != 1 after construction")
        if np.linalg.cond(e[i]) > 1e8:
            raise DegenerateFrame("frame matrix ill-conditioned")
    return frame


# ---------------------------------------------------------------------------
# exponential map and adapted coordinates
# ---------------------------------------------------------------------------

EXP_STEPS = 16


def _shoot(spec, x0, V, n_steps=EXP_STEPS, want_curve=False):
    """Integrate the geodesic from (x0, V) over unit parameter."""
    y = np.concatenate([np.asarray(x0, float), np.asarray(V, float)])

    def rhs(y):
        dx, dv = _geodesic_rhs(spec, y[:4], y[4:])
        return np.concatenate([dx, dv])

    if want_curve:
        s = np.linspace(0.0, 1.0, n_steps + 1)
        xs = np.empty((n_steps + 1, 4))
        vs = np.empty((n_steps + 1, 4))
        xs[0], vs[0] = y[:4], y[4:]
        for i in range(n_steps):
            y = _rk4_step(rhs, y, 1.0 / n_steps)
            xs[i + 1], vs[i + 1] = y[:4], y[4:]
        return Curve(s=s, x=xs, v=vs)
    for _ in range(n_steps):
        y = _rk4_step(rhs, y, 1.0 / n_steps)
    return y


def exp_map(
    spec: st.MetricSpec,
    frame: WorldlineFrame,
    sigma: float,
    V,
    tube_radius: float = 0.5,
    n_steps: int = EXP_STEPS,
):
    """Endpoint of the geodesic leaving C(sigma) with tangent V in ker N."""
    V = np.asarray(V, dtype=float)
    N = frame.dixon_covector(sigma)
    vnorm = float(np.max(np.abs(V)))
    if abs(N @ V) > 1e-8 * max(1.0, vnorm):
        raise NotOrthogonal(f"N . V = {N @ V:.3e}")
    if vnorm > tube_radius * 4.0:
        raise OutsideTube(f"|V| = {vnorm:.3f} beyond the configured tube")
    x0 = frame.C.position(sigma)
    if frame.is_static():
        return x0 + V
    if vnorm == 0.0:
        return np.array(x0, dtype=float)
    y = _shoot(spec, x0, V, n_steps)
    if not spec.contains(y[:4]):
        raise LeftDomain("tube geodesic left the chart domain")
    return y[:4]


def adapted_coords(
    spec: st.MetricSpec,
    frame: WorldlineFrame,
    x,
    tube_radius: float = 0.5,
    tol_inv: float = 1e-10,
    max_iter: int = 50,
):
    """Invert the exponential map: return (sigma, z) with
    exp_map(sigma, z^a e_a(sigma)) = x."""
    x = np.asarray(x, dtype=float)

    if frame.is_static():
        # straight worldline in the flat chart: a single linear solve
        dx = x - frame.C.x[0]
        A = np.column_stack([frame.C.v[0], frame.e[0, 1], frame.e[0, 2], frame.e[0, 3]])
        w = np.linalg.solve(A, dx)
        sigma = frame.C.s[0] + w[0]
        return float(sigma), w[1:].copy()

    # seed from the flat guess: nearest sample, frame decomposition
    d2 = np.sum((frame.C.x - x) ** 2, axis=1)
    i0 = int(np.argmin(d2))
    sigma = float(frame.C.s[i0])
    A = frame.frame(sigma).T  # columns e_0..e_3
    w = np.linalg.solve(A, x - frame.C.position(sigma))
    sigma += w[0]
    sigma = float(np.clip(sigma, frame.sigma[0], frame.sigma[-1]))
    z = w[1:]

    def residual(sigma, z):
        e = frame.frame(sigma)
        V = z @ e[1:]
        N = frame.dixon_covector(sigma)
        V = V - (N @ V) * e[0]  # keep the shot tangent in ker N
        return _shoot(spec, frame.C.position(sigma), V, EXP_STEPS)[:4] - x

    F = residual(sigma, z)
    for _ in range(max_iter):
        if np.max(np.abs(F)) <= tol_inv:
            return float(sigma), np.array(z)
        # finite-difference Jacobian in (sigma, z)
        J = np.empty((4, 4))
        hJ = 1e-6
        J[:, 0] = (residual(sigma + hJ, z) - F) / hJ
        for a in range(3):
            dz = np.array(z)
            dz[a] += hJ
            J[:, a + 1] = (residual(sigma, dz) - F) / hJ
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise OutsideTube(f"singular Newton Jacobian: {exc}") from exc
        lam = 1.0
        for _ in range(12):
            sig_new = sigma + lam * step[0]
            z_new = z + lam * step[1:]
            F_new = residual(sig_new, z_new)
            if np.max(np.abs(F_new)) < np.max(np.abs(F)):
                sigma, z, F = sig_new, z_new, F_new
                break
            lam *= 0.5
        else:
            raise OutsideTube("damped Newton stalled inverting the exponential map")
    raise OutsideTube(
        f"Newton did not reach tol {tol_inv:g} within {max_iter} iterations"
    )


def radial_vector(spec: st.MetricSpec, frame: WorldlineFrame, x, **kw):
    """Radial vector at x: the endpoint tangent of the geodesic connecting
    C(sigma(x)) to x.  Vanishes on the worldline."""
    sigma, z = adapted_coords(spec, frame, x, **kw)
    e = frame.frame(sigma)
    V = z @ e[1:]
    if frame.is_static():
        return V
    if np.max(np.abs(V)) == 0.0:
        return np.zeros(4)
    y = _shoot(spec, frame.C.position(sigma), V, EXP_STEPS)
    return y[4:]


# ---------------------------------------------------------------------------
# parallel propagators
# ---------------------------------------------------------------------------

@dataclass
class Propagator:
    """Parallel transport along one geodesic, mapping vectors at the
    parameter-s0 point to vectors at the parameter-s1 point."""

    p: np.ndarray
    q: np.ndarray
    s0: float
    s1: float
    Pi: np.ndarray

    def inverse(self) -> "Propagator":
        return Propagator(self.q, self.p, self.s1, self.s0, np.linalg.inv(self.Pi))


def propagate(spec: st.MetricSpec, geodesic: Curve, s0: float, s1: float,
              h_ode: float = 1e-3) -> Propagator:
    """Solve dPi/ds = -Gamma(Hdot) Pi along the geodesic from s0 to s1.

    The curve state (x, v) is re-integrated jointly with Pi from the curve
    sample nearest s0 so the propagator accuracy matches the integrator,
    not the interpolation.
    """
    smin, smax = geodesic.s[0], geodesic.s[-1]
    if not (smin - 1e-12 <= s0 <= smax + 1e-12 and smin - 1e-12 <= s1 <= smax + 1e-12):
        raise ValueError("s0, s1 must lie in the curve's parameter range")

    x0 = geodesic.position(s0)
    v0 = geodesic.tangent(s0)
    if spec.family == "minkowski":
        return Propagator(np.asarray(x0), geodesic.position(s1), s0, s1, np.eye(4))

    span = s1 - s0
    if span == 0.0:
        return Propagator(np.asarray(x0), np.asarray(x0), s0, s1, np.eye(4))
    n = max(1, int(np.ceil(abs(span) / h_ode)))
    h = span / n
    y = np.concatenate([x0, v0, np.eye(4).ravel()])

    def rhs(y):
        x, v = y[:4], y[4:8]
        G = st._christoffel(spec, x)
        dv = -np.einsum("mij,i,j->m", G, v, v)
        Pi = y[8:].reshape(4, 4)
        dPi = -np.einsum("mlr,r,ln->mn", G, v, Pi)
        return np.concatenate([v, dv, dPi.ravel()])

    for _ in range(n):
        y = _rk4_step(rhs, y, h)
    return Propagator(np.asarray(x0), y[:4], s0, s1, y[8:].reshape(4, 4))


def pibar_field(spec: st.MetricSpec, frame: WorldlineFrame, x, **kw) -> np.ndarray:
    """Transport-to-worldline matrix at x: maps vectors at x to vectors at
    C(sigma(x)) along the connecting tube geodesic."""
    if frame.is_static():
        return np.eye(4)
    sigma, z = adapted_coords(spec, frame, x, **kw)
    e = frame.frame(sigma)
    V = z @ e[1:]
    if np.max(np.abs(V)) < 1e-15:
        return np.eye(4)
    geo = _shoot(spec, frame.C.position(sigma), V, EXP_STEPS, want_curve=True)
    return propagate(spec, geo, 1.0, 0.0, h_ode=1.0 / EXP_STEPS).Pi
