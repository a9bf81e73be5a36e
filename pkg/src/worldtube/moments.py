"""Extended bodies on a worldline tube: squeezing and moment integrals.

A body field U assigns chart tensor components to tube points labelled by
adapted coordinates (sigma, z).  Squeezing concentrates it onto the
worldline,

    U_eps(sigma, z) = eps^-3  Pi[far -> near]  U(sigma, z / eps),

with Pi the parallel propagator along the radial geodesic (identity in a
static flat tube).  The k-th moment at parameter sigma is

    xi^{mu.. a1..ak}(sigma) = (-1)^k  integral  z^{a1}..z^{ak}
                              Pi[z -> 0] U^{mu..}(sigma, z)  d^3 z,

mu-block chart components at C(sigma), a-block spatial frame indices, so
the arrays drop straight into multipole component containers.  As eps -> 0
the pairing of U_eps against a test tensor matches the moment expansion
term by term; ``verify_expansion`` measures the remainder scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import simpson

from . import multipole as mp
from . import worldline as wl


class QuadratureNotConverged(RuntimeError):
    """Moment quadrature changed too much under node refinement."""


class SlopeTooShallow(RuntimeError):
    """Squeezing remainder decays slower than requested."""


@dataclass
class BodyField:
    """Tensor field on the tube given in adapted coordinates.

    ``func(sigma, Z)`` takes a scalar sigma and z-points of shape (..., 3)
    and returns chart components of shape (...,) + (4,)*rank at the tube
    points exp_map(sigma, z^a e_a).  ``support`` is the effective z radius
    (quadrature boxes scale off it) and ``sigma_support`` the parameter
    window outside which the body vanishes.
    """

    rank: int
    func: callable
    support: float
    sigma_support: tuple


def gaussian_body(rank: int, tensor, widths, sigma_center: float,
                  sigma_scale: float, profile: mp.FlatTopBump = None,
                  tilt=None) -> BodyField:
    """Constant tensor x flat-top sigma profile x anisotropic z Gaussian.

    ``tilt`` optionally multiplies in a factor (1 + tilt . z), breaking
    the z -> -z symmetry so odd moments are populated.  The Gaussian tails
    are not cut off; ``support`` is set to six widths, beyond which the
    field is below 2e-8 of its peak.
    """
    tensor = np.asarray(tensor, dtype=float)
    widths = np.asarray(widths, dtype=float)
    profile = profile or mp.FlatTopBump()
    tilt = None if tilt is None else np.asarray(tilt, dtype=float)

    def func(sigma, Z):
        Z = np.asarray(Z, dtype=float)
        amp = float(profile.value((sigma - sigma_center) / sigma_scale))
        F = amp * np.exp(-0.5 * np.sum((Z / widths) ** 2, axis=-1))
        if tilt is not None:
            F = F * (1.0 + Z @ tilt)
        return tensor * F.reshape(F.shape + (1,) * rank)

    half = sigma_scale * profile.w_sup
    return BodyField(rank=rank, func=func, support=6.0 * float(np.max(widths)),
                     sigma_support=(sigma_center - half, sigma_center + half))


def squeeze(U: BodyField, frame: wl.WorldlineFrame, eps: float) -> BodyField:
    """Squeeze the body by eps towards the worldline.

    On a static flat tube the propagator factor is the identity and the
    result is the plain rescaling; otherwise each evaluation transports
    the components from the wide configuration point down the radial
    geodesic, which is exact but per-point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    spec = frame.spec
    pref = eps ** -3

    def func(sigma, Z):
        Z = np.asarray(Z, dtype=float)
        base = U.func(sigma, Z / eps)
        if frame.is_static() or U.rank == 0:
            return pref * base
        flat = Z.reshape(-1, 3)
        out = pref * base.reshape((-1,) + (4,) * U.rank).copy()
        e = frame.frame(sigma)
        x0 = frame.C.position(sigma)
        for i, z in enumerate(flat):
            if np.max(np.abs(z)) == 0.0 or np.max(np.abs(out[i])) == 0.0:
                continue
            geo = wl._shoot(spec, x0, z @ e[1:], wl.EXP_STEPS, want_curve=True)
            Pi = wl.propagate(spec, geo, 1.0 / eps, 1.0, h_ode=1.0 / wl.EXP_STEPS).Pi
            for slot in range(U.rank):
                out[i] = np.moveaxis(
                    np.tensordot(Pi, out[i], axes=([1], [slot])), 0, slot
                )
        return out.reshape(Z.shape[:-1] + (4,) * U.rank)

    return BodyField(rank=U.rank, func=func, support=eps * U.support,
                     sigma_support=U.sigma_support)


def _gl_grid(b: float, n: int):
    t, w = leggauss(n)
    pts = b * t
    wts = b * w
    Z = np.stack(np.meshgrid(pts, pts, pts, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (wts[:, None, None] * wts[None, :, None] * wts[None, None, :]).ravel()
    return Z, W


def _transport_to_worldline(spec, frame, sigma, Z, vals, rank):
    """Pi-transport the mu-block of per-node values to C(sigma)."""
    if frame.is_static() or rank == 0:
        return vals
    out = vals.copy()
    e = frame.frame(sigma)
    x0 = frame.C.position(sigma)
    for i, z in enumerate(Z):
        if np.max(np.abs(out[i])) == 0.0 or np.max(np.abs(z)) == 0.0:
            continue
        geo = wl._shoot(spec, x0, z @ e[1:], wl.EXP_STEPS, want_curve=True)
        Pi = wl.propagate(spec, geo, 1.0, 0.0, h_ode=1.0 / wl.EXP_STEPS).Pi
        for slot in range(rank):
            out[i] = np.moveaxis(np.tensordot(Pi, out[i], axes=([1], [slot])), 0, slot)
    return out


def _raw_moments(U, frame, sigma, kmax, n_nodes):
    Z, W = _gl_grid(U.support * 1.2, n_nodes)
    vals = np.asarray(U.func(sigma, Z), dtype=float)
    vals = _transport_to_worldline(frame.spec, frame, sigma, Z, vals, U.rank)
    out = []
    for k in range(kmax + 1):
        mono = W
        for j in range(k):
            # append one z axis per derivative slot, in order
            mono = mono[..., None] * Z.reshape(
                (len(Z),) + (1,) * j + (3,)
            )
        # mono: (n, 3^k as k axes); vals: (n, 4^rank)
        xi = np.tensordot(vals, mono, axes=([0], [0]))
        out.append((-1.0) ** k * xi)
    return out


def moment_integral(U: BodyField, frame: wl.WorldlineFrame, sigma: float,
                    k: int, n_nodes: int = 32, tol: float = 1e-6):
    """k-th moment array at sigma, shape (4,)*rank + (3,)*k.

    Tensor-product Gauss-Legendre over the support box, with a coarser
    re-run to certify convergence.
    """
    fine = _raw_moments(U, frame, sigma, k, n_nodes)[k]
    coarse = _raw_moments(U, frame, sigma, k, max(4, n_nodes - 8))[k]
    scale = 1.0 + float(np.max(np.abs(fine)))
    if float(np.max(np.abs(fine - coarse))) > tol * scale:
        raise QuadratureNotConverged(
            f"moment order {k} at sigma={sigma}: node refinement moves the "
            f"result by {float(np.max(np.abs(fine - coarse))):.3e}"
        )
    return fine


def moment_components(U: BodyField, frame: wl.WorldlineFrame, kmax: int,
                      n_nodes: int = 16, stress_energy: bool = True) -> mp.DixonComponents:
    """Moment tower on the frame's full sigma grid as a component container."""
    sig = frame.sigma
    n = len(sig)
    orders = {k: np.zeros((n,) + (4,) * U.rank + (3,) * k) for k in range(kmax + 1)}
    lo, hi = U.sigma_support
    for i, s in enumerate(sig):
        if not lo <= s <= hi:
            continue
        tower = _raw_moments(U, frame, s, kmax, n_nodes)
        for k in range(kmax + 1):
            orders[k][i] = tower[k]
    return mp.DixonComponents(frame=frame, rank=U.rank, orders=orders,
                              stress_energy=stress_energy)


def pairing(U: BodyField, frame: wl.WorldlineFrame, phi: mp.TestTensor,
            n_nodes: int = 32, n_sigma: int = 201) -> float:
    """Adapted-coordinate pairing integral of U against a test tensor.

    Requires a static tube, where chart points are affine in (sigma, z)
    and the test field can be evaluated on the whole node batch at once.
    """
    if not frame.is_static():
        raise NotImplementedError("pairing integral requires a static tube")
    lo, hi = U.sigma_support
    lo, hi = max(lo, frame.sigma[0]), min(hi, frame.sigma[-1])
    sig = np.linspace(lo, hi, n_sigma)
    Z, W = _gl_grid(U.support * 1.2, n_nodes)
    x0 = frame.C.x[0]
    E = frame.e[0]
    s_off = float(frame.C.s[0])
    vals = np.zeros(n_sigma)
    m = U.rank
    for i, s in enumerate(sig):
        X = x0 + (s - s_off) * E[0] + Z @ E[1:]
        inner = np.sum(
            np.asarray(U.func(s, Z)).reshape(len(Z), -1)
            * np.asarray(phi.func(X)).reshape(len(Z), -1),
            axis=1,
        )
        vals[i] = float(inner @ W)
    return float(simpson(vals, x=sig))


def expansion_terms(U: BodyField, frame: wl.WorldlineFrame, phi: mp.TestTensor,
                    N: int, n_nodes: int = 32, n_sigma: int = 201):
    """Moment-expansion terms T_0..T_N of the squeezed pairing.

    T_k carries the eps^k coefficient: pairing(U_eps, phi) =
    sum_k eps^k T_k + O(eps^{N+1}).
    """
    lo, hi = U.sigma_support
    lo, hi = max(lo, frame.sigma[0]), min(hi, frame.sigma[-1])
    sig = np.linspace(lo, hi, n_sigma)
    spec = frame.spec
    m = U.rank
    rows = np.zeros((N + 1, n_sigma))
    for i, s in enumerate(sig):
        tower = _raw_moments(U, frame, s, N, n_nodes)
        xC = frame.C.position(s)
        e = frame.frame(s)
        D = mp.sym_cov_derivs(spec, phi, xC, N)
        for k in range(N + 1):
            Dk = D[k]
            for _ in range(k):
                # each pass eats the leading derivative axis against the
                # spatial frame and appends the frame axis at the back, so
                # k passes leave axes (mu-block, a1..ak) in slot order
                Dk = np.tensordot(Dk, e[1:], axes=([0], [1]))
            term = np.tensordot(
                tower[k], Dk,
                axes=(list(range(m + k)), list(range(m + k))),
            )
            rows[k, i] = (-1.0) ** k / math.factorial(k) * float(term)
    return [float(simpson(rows[k], x=sig)) for k in range(N + 1)]


def verify_expansion(U: BodyField, frame: wl.WorldlineFrame, phi: mp.TestTensor,
                     N: int, eps_ladder, n_nodes: int = 32, n_sigma: int = 201,
                     min_slope: float = None):
    """Measure the squeezing remainder decay against the order-N expansion.

    Returns (slope, eps, residuals).  The pairing of the squeezed body is
    evaluated by substituting y = z / eps, so the quadrature nodes stay on
    the unsqueezed body for every eps.
    """
    if not frame.is_static():
        raise NotImplementedError("verify_expansion requires a static tube")
    eps = np.asarray(sorted(eps_ladder, reverse=True), dtype=float)
    terms = expansion_terms(U, frame, phi, N, n_nodes, n_sigma)

    lo, hi = U.sigma_support
    lo, hi = max(lo, frame.sigma[0]), min(hi, frame.sigma[-1])
    sig = np.linspace(lo, hi, n_sigma)
    Y, W = _gl_grid(U.support * 1.2, n_nodes)
    x0 = frame.C.x[0]
    E = frame.e[0]
    s_off = float(frame.C.s[0])
    m = U.rank

    res = np.zeros(len(eps))
    for j, ee in enumerate(eps):
        vals = np.zeros(n_sigma)
        for i, s in enumerate(sig):
            X = x0 + (s - s_off) * E[0] + (ee * Y) @ E[1:]
            inner = np.sum(
                np.asarray(U.func(s, Y)).reshape(len(Y), -1)
                * np.asarray(phi.func(X)).reshape(len(Y), -1),
                axis=1,
            )
            vals[i] = float(inner @ W)
        lhs = float(simpson(vals, x=sig))
        rhs = sum(ee ** k * terms[k] for k in range(N + 1))
        res[j] = abs(lhs - rhs)
    good = res > 1e-14 * (1.0 + abs(terms[0]))
    if np.count_nonzero(good) < 2:
        slope = np.inf
    else:
        slope = float(np.polyfit(np.log(eps[good]), np.log(res[good]), 1)[0])
    if min_slope is not None and slope < min_slope:
        raise SlopeTooShallow(
            f"remainder decays as eps^{slope:.2f}, need at least eps^{min_slope:.2f}"
        )
    return slope, eps, res
