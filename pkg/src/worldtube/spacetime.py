"""Analytic spacetime catalog.

Evaluates metric, inverse metric, volume density, Christoffel symbols,
Riemann curvature and its first covariant derivative at arbitrary chart
points for three closed-form families:

* ``minkowski``       -- Cartesian chart (t, x, y, z)
* ``schwarzschild``   -- Schwarzschild chart (t, r, theta, phi), mass M
* ``desitter``        -- static chart (t, r, theta, phi), Hubble rate H

The metric, Christoffels and their first partials are hand-coded from a
computer-algebra derivation.  Riemann is assembled from those, and the
remaining partial derivatives (of Gamma and of Riemann) are obtained with
complex-step differentiation, which is exact to rounding because every
closed-form expression below is holomorphic in the chart coordinates.

Signature convention is (-,+,+,+) and geometric units G = c = 1.

Index conventions for the arrays returned here:

* ``gamma[m, i, j]``              Gamma^m_{ij}, symmetric in (i, j)
* ``riemann[m, i, j, k]``         R^m_{i j k}, antisymmetric in (j, k)
* ``nabla_riemann[l, m, i, j, k]``  nabla_l R^m_{i j k}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("minkowski", "schwarzschild", "desitter")
DEPTHS = ("metric", "christoffel", "riemann", "nabla_riemann")

# Imaginary step for complex-step differentiation.  No subtractive
# cancellation occurs, so the step can be far below sqrt(eps).
_CSTEP = 1e-100


class OutOfDomain(ValueError):
    """Chart point lies outside the admissible domain of the family."""


class DepthUnavailable(RuntimeError):
    """Requested jet depth cannot be evaluated at this point."""


@dataclass(frozen=True)
class MetricSpec:
    """One member of the analytic spacetime catalog.

    ``chart_domain`` holds one open interval (lo, hi) per coordinate;
    infinite bounds are allowed.
    """

    family: str
    params: dict = field(default_factory=dict)
    chart_domain: tuple = (
        (-np.inf, np.inf),
        (-np.inf, np.inf),
        (-np.inf, np.inf),
        (-np.inf, np.inf),
    )

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown metric family {self.family!r}")

    def contains(self, x) -> bool:
        return all(lo < xi < hi for xi, (lo, hi) in zip(x, self.chart_domain))

    def require(self, x):
        if not self.contains(x):
            raise OutOfDomain(f"point {np.asarray(x)} outside {self.family} chart domain")


def minkowski() -> MetricSpec:
    return MetricSpec("minkowski")


# Polar-chart families keep a small guard band around the coordinate axis,
# where the chart itself (not the geometry) degenerates.
_THETA_GUARD = 0.05


def schwarzschild(mass: float = 1.0, r_margin: float = 0.1) -> MetricSpec:
    """Schwarzschild exterior; the domain excludes r <= 2M + r_margin."""
    if mass < 0:
        raise ValueError("mass must be >= 0")
    if r_margin <= 0:
        raise ValueError("r_margin must be > 0")
    dom = (
        (-np.inf, np.inf),
        (2.0 * mass + r_margin, np.inf),
        (_THETA_GUARD, np.pi - _THETA_GUARD),
        (-np.inf, np.inf),
    )
    return MetricSpec("schwarzschild", {"mass": mass}, dom)


def desitter(hubble: float = 0.05, r_margin: float = 0.1) -> MetricSpec:
    """Static de Sitter patch; the domain stays inside the horizon r = 1/H."""
    if hubble <= 0:
        raise ValueError("hubble must be > 0")
    dom = (
        (-np.inf, np.inf),
        (1e-3, 1.0 / hubble - r_margin),
        (_THETA_GUARD, np.pi - _THETA_GUARD),
        (-np.inf, np.inf),
    )
    return MetricSpec("desitter", {"hubble": hubble}, dom)


def from_config(table: dict) -> MetricSpec:
    """Build a MetricSpec from a scenario-config table."""
    family = table["family"]
    if family == "minkowski":
        return minkowski()
    if family == "schwarzschild":
        return schwarzschild(
            mass=float(table.get("mass_geometric", 1.0)),
            r_margin=float(table.get("r_margin", 0.1)),
        )
    if family == "desitter":
        return desitter(
            hubble=float(table.get("hubble_geometric", 0.05)),
            r_margin=float(table.get("r_margin", 0.1)),
        )
    raise ValueError(f"unknown metric family {family!r}")


@dataclass
class GeometryJet:
    """Pointwise geometric data, filled to the requested depth."""

    point: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    omega: float
    gamma: np.ndarray | None = None
    riemann: np.ndarray | None = None
    nabla_riemann: np.ndarray | None = None


# ---------------------------------------------------------------------------
# closed-form family data (complex-safe)
# ---------------------------------------------------------------------------

def _metric(spec: MetricSpec, x):
    dtype = complex if np.iscomplexobj(x) else float
    g = np.zeros((4, 4), dtype=dtype)
    if spec.family == "minkowski":
        g[0, 0] = -1.0
        g[1, 1] = g[2, 2] = g[3, 3] = 1.0
        return g
    r, th = x[1], x[2]
    if spec.family == "schwarzschild":
        f = 1.0 - 2.0 * spec.params["mass"] / r
    else:
        f = 1.0 - (spec.params["hubble"] * r) ** 2
    g[0, 0] = -f
    g[1, 1] = 1.0 / f
    g[2, 2] = r ** 2
    g[3, 3] = r ** 2 * np.sin(th) ** 2
    return g


def _christoffel(spec: MetricSpec, x):
    dtype = complex if np.iscomplexobj(x) else float
    G = np.zeros((4, 4, 4), dtype=dtype)
    if spec.family == "minkowski":
        return G
    r, th = x[1], x[2]
    sin, cos = np.sin(th), np.cos(th)
    if spec.family == "schwarzschild":
        M = spec.params["mass"]
        f = 1.0 - 2.0 * M / r
        G[0, 0, 1] = G[0, 1, 0] = M / (r * r * f)
        G[1, 0, 0] = M * f / r ** 2
        G[1, 1, 1] = -M / (r * r * f)
        G[1, 2, 2] = -r * f
        G[1, 3, 3] = -r * f * sin ** 2
    else:
        H = spec.params["hubble"]
        f = 1.0 - (H * r) ** 2
        G[0, 0, 1] = G[0, 1, 0] = -(H ** 2) * r / f
        G[1, 0, 0] = -(H ** 2) * r * f
        G[1, 1, 1] = H ** 2 * r / f
        G[1, 2, 2] = -r * f
        G[1, 3, 3] = -r * f * sin ** 2
    G[2, 1, 2] = G[2, 2, 1] = 1.0 / r
    G[2, 3, 3] = -sin * cos
    G[3, 1, 3] = G[3, 3, 1] = 1.0 / r
    G[3, 2, 3] = G[3, 3, 2] = cos / sin
    return G


def _christoffel_partials(spec: MetricSpec, x):
    """Hand-coded dG[l, m, i, j] = d_l Gamma^m_{ij}."""
    dtype = complex if np.iscomplexobj(x) else float
    dG = np.zeros((4, 4, 4, 4), dtype=dtype)
    if spec.family == "minkowski":
        return dG
    r, th = x[1], x[2]
    sin, cos = np.sin(th), np.cos(th)
    if spec.family == "schwarzschild":
        M = spec.params["mass"]
        f = 1.0 - 2.0 * M / r
        rf = r * r * f  # = r(r - 2M)
        dG[1, 0, 0, 1] = dG[1, 0, 1, 0] = -M * (2.0 * r - 2.0 * M) / rf ** 2
        dG[1, 1, 0, 0] = 2.0 * M * (3.0 * M - r) / r ** 4
        dG[1, 1, 1, 1] = M * (2.0 * r - 2.0 * M) / rf ** 2
        dG[1, 1, 2, 2] = -1.0
        dG[1, 1, 3, 3] = -(sin ** 2)
        dG[2, 1, 3, 3] = 2.0 * (2.0 * M - r) * sin * cos
    else:
        H = spec.params["hubble"]
        f = 1.0 - (H * r) ** 2
        dG[1, 0, 0, 1] = dG[1, 0, 1, 0] = -(H ** 2) * (1.0 + H ** 2 * r ** 2) / f ** 2
        dG[1, 1, 0, 0] = H ** 2 * (3.0 * H ** 2 * r ** 2 - 1.0)
        dG[1, 1, 1, 1] = H ** 2 * (1.0 + H ** 2 * r ** 2) / f ** 2
        dG[1, 1, 2, 2] = 3.0 * H ** 2 * r ** 2 - 1.0
        dG[1, 1, 3, 3] = (3.0 * H ** 2 * r ** 2 - 1.0) * sin ** 2
        dG[2, 1, 3, 3] = 2.0 * r * (H ** 2 * r ** 2 - 1.0) * sin * cos
    dG[1, 2, 1, 2] = dG[1, 2, 2, 1] = -1.0 / r ** 2
    dG[1, 3, 1, 3] = dG[1, 3, 3, 1] = -1.0 / r ** 2
    dG[2, 2, 3, 3] = sin ** 2 - cos ** 2
    dG[2, 3, 2, 3] = dG[2, 3, 3, 2] = -1.0 / sin ** 2
    return dG


def _riemann(spec: MetricSpec, x):
    """R^m_{ijk} = d_j G^m_{ki} - d_k G^m_{ji} + G^m_{jl}G^l_{ki} - G^m_{kl}G^l_{ji}."""
    G = _christoffel(spec, x)
    dG = _christoffel_partials(spec, x)
    R = np.einsum("jmki->mijk", dG) - np.einsum("kmji->mijk", dG)
    R += np.einsum("mjl,lki->mijk", G, G) - np.einsum("mkl,lji->mijk", G, G)
    return R


def christoffel_second_partials(spec: MetricSpec, x):
    """d2G[p, l, m, i, j] = d_p d_l Gamma^m_{ij}, via complex step of dGamma."""
    x = np.asarray(x, dtype=float)
    d2 = np.zeros((4, 4, 4, 4, 4))
    if spec.family == "minkowski":
        return d2
    for p in range(4):
        xc = x.astype(complex)
        xc[p] += 1j * _CSTEP
        d2[p] = _christoffel_partials(spec, xc).imag / _CSTEP
    return d2


def _riemann_partials(spec: MetricSpec, x):
    """dR[l, m, i, j, k] = d_l R^m_{ijk}, via complex step."""
    dR = np.zeros((4, 4, 4, 4, 4))
    if spec.family == "minkowski":
        return dR
    for l in range(4):
        xc = np.asarray(x, dtype=complex)
        xc[l] += 1j * _CSTEP
        dR[l] = _riemann(spec, xc).imag / _CSTEP
    return dR


def _nabla_riemann(spec: MetricSpec, x):
    if spec.family == "minkowski":
        return np.zeros((4, 4, 4, 4, 4))
    if spec.family == "desitter":
        # maximally symmetric: Riemann is covariantly constant
        return np.zeros((4, 4, 4, 4, 4))
    G = _christoffel(spec, x)
    R = _riemann(spec, x)
    nab = _riemann_partials(spec, x)
    nab += np.einsum("mla,aijk->lmijk", G, R)
    nab -= np.einsum("ali,majk->lmijk", G, R)
    nab -= np.einsum("alj,miak->lmijk", G, R)
    nab -= np.einsum("alk,mija->lmijk", G, R)
    return nab


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def geometry_jet(spec: MetricSpec, x, depth: str = "nabla_riemann") -> GeometryJet:
    """Evaluate the geometry at chart point x, filled to the requested depth."""
    if depth not in DEPTHS:
        raise ValueError(f"unknown depth {depth!r}")
    x = np.asarray(x, dtype=float)
    spec.require(x)
    g = _metric(spec, x)
    det = np.linalg.det(g)
    if det >= 0:
        raise DepthUnavailable(f"metric not Lorentzian at {x}")
    g_inv = np.linalg.inv(g)
    jet = GeometryJet(point=x, g=g, g_inv=g_inv, omega=float(np.sqrt(-det)))
    level = DEPTHS.index(depth)
    if level >= 1:
        jet.gamma = _christoffel(spec, x)
    if level >= 2:
        jet.riemann = _riemann(spec, x)
    if level >= 3:
        jet.nabla_riemann = _nabla_riemann(spec, x)
    return jet


def _fd_partial(f, x, l, h):
    xp = np.array(x, dtype=float)
    xm = np.array(x, dtype=float)
    xp[l] += h
    xm[l] -= h
    return (f(xp) - f(xm)) / (2.0 * h)


def fd_validate_jet(spec: MetricSpec, x, h_geom: float = 1e-4) -> dict:
    """Compare closed-form Gamma / Riemann against finite-difference
    reconstructions from the next-lower depth.  Returns max-abs residuals.
    """
    x = np.asarray(x, dtype=float)
    spec.require(x)
    for l in range(4):
        for s in (-h_geom, h_geom):
            xs = np.array(x)
            xs[l] += s
            if not spec.contains(xs):
                raise DepthUnavailable("finite-difference stencil leaves the chart domain")

    g_inv = np.linalg.inv(_metric(spec, x))
    dg = np.array([_fd_partial(lambda p: _metric(spec, p), x, l, h_geom) for l in range(4)])
    gamma_fd = 0.5 * np.einsum(
        "mk,ikj->mij", g_inv, dg + np.einsum("jki->ikj", dg) - np.einsum("kij->ikj", dg)
    )
    res_gamma = float(np.max(np.abs(gamma_fd - _christoffel(spec, x))))

    G = _christoffel(spec, x)
    dG = np.array(
        [_fd_partial(lambda p: _christoffel(spec, p), x, l, h_geom) for l in range(4)]
    )
    riem_fd = np.einsum("jmki->mijk", dG) - np.einsum("kmji->mijk", dG)
    riem_fd += np.einsum("mjl,lki->mijk", G, G) - np.einsum("mkl,lji->mijk", G, G)
    res_riemann = float(np.max(np.abs(riem_fd - _riemann(spec, x))))

    return {"gamma": res_gamma, "riemann": res_riemann, "h_geom": h_geom}


def christoffel_partials(spec: MetricSpec, x):
    """Public accessor for dG[l, m, i, j] = d_l Gamma^m_{ij} (closed form)."""
    spec.require(np.asarray(x, dtype=float))
    return _christoffel_partials(spec, np.asarray(x, dtype=float))


def lower_riemann(jet: GeometryJet) -> np.ndarray:
    """R_{mijk} = g_{ma} R^a_{ijk}."""
    return np.einsum("ma,aijk->mijk", jet.g, jet.riemann)


def jet_invariants(spec: MetricSpec, x) -> dict:
    """Max-abs residuals of the curvature identities at one chart point.

    Lowered-index antisymmetries and pair symmetry, both Bianchi
    identities, and metric compatibility of the connection, all evaluated
    from the closed-form jet.
    """
    x = np.asarray(x, dtype=float)
    jet = geometry_jet(spec, x, "nabla_riemann")
    Rl = lower_riemann(jet)
    R = jet.riemann
    NR = jet.nabla_riemann

    first = R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2)
    second = (NR + NR.transpose(4, 1, 2, 0, 3) + NR.transpose(3, 1, 2, 4, 0))

    if spec.family == "minkowski":
        dg = np.zeros((4, 4, 4))
    else:
        dg = np.zeros((4, 4, 4))
        for l in range(4):
            xc = x.astype(complex)
            xc[l] += 1j * _CSTEP
            dg[l] = _metric(spec, xc).imag / _CSTEP
    compat = dg - (np.einsum("kli,kj->lij", jet.gamma, jet.g)
                   + np.einsum("klj,ik->lij", jet.gamma, jet.g))

    return {
        "antisym_last_pair": float(np.max(np.abs(Rl + Rl.transpose(0, 1, 3, 2)))),
        "antisym_first_pair": float(np.max(np.abs(Rl + Rl.transpose(1, 0, 2, 3)))),
        "pair_interchange": float(np.max(np.abs(Rl - Rl.transpose(2, 3, 0, 1)))),
        "bianchi_first": float(np.max(np.abs(first))),
        "bianchi_second": float(np.max(np.abs(second))),
        "metric_compatibility": float(np.max(np.abs(compat))),
    }


def random_points(spec: MetricSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample n admissible chart points from a finite box inside the domain."""
    if spec.family == "minkowski":
        return rng.uniform(-10.0, 10.0, size=(n, 4))
    if spec.family == "schwarzschild":
        r_lo = spec.chart_domain[1][0]
        r = rng.uniform(r_lo + 0.5, r_lo + 30.0, size=n)
    else:
        r_lo, r_hi = spec.chart_domain[1]
        r = rng.uniform(r_lo + 0.1 * (r_hi - r_lo), r_hi - 0.1 * (r_hi - r_lo), size=n)
    t = rng.uniform(-10.0, 10.0, size=n)
    th = rng.uniform(_THETA_GUARD + 0.2, np.pi - _THETA_GUARD - 0.2, size=n)
    ph = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([t, r, th, ph], axis=1)
