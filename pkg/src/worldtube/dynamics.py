"""Quadrupole dynamics along a geodesic worldline.

Everything evolves in frame components over a parallel orthonormal frame
e_0..e_3 with e_0 = Cdot, where the Dixon covector is theta^0 and
covariant sigma-derivatives of frame components reduce to plain
derivatives.  The multipole tower for a symmetric stress-energy is

    xi^{mu nu}       (symmetric),
    xi^{mu nu a}     (symmetric in mu nu, a spatial),
    xi^{mu nu b c}   (symmetric in mu nu and in b c, b c spatial),

and conservation fixes the evolution of the nu = 0 slices:

    d/ds xi^{mu 0 b c} = -2 xi^{mu (b c)}
    d/ds xi^{mu 0 a}   = -xi^{mu a} + 1/2 xi^{mu 0 b c} R^a_{b 0 c}
                         + xi^{rho 0 a c} R^mu_{rho 0 c}
                         + 1/2 xi^{rho c b a} R^mu_{rho c b}
                         + 1/6 xi^{mu d b c} R^a_{b d c}
    d/ds xi^{mu 0}     = xi^{rho 0 b} R^mu_{rho 0 b}
                         + 1/2 xi^{rho a b} R^mu_{rho a b}
                         + 1/2 d/ds (xi^{mu 0 b c} R^0_{b 0 c})
                         + 1/2 xi^{rho 0 b c} (nabla_c R^mu_{rho 0 b})
                         + 1/6 d/ds (xi^{mu a b c} R^0_{b a c})
                         - 1/3 xi^{rho a b c} (nabla_c R^mu_{rho a b})

subject to the algebraic constraint xi^{mu (a b c)} = 0 on the spatial
slots (symmetrization over the nu slot and both derivative slots).  The
remaining spatial-spatial blocks are free functions supplied by a
constitutive closure.

Curvature sign convention: these equations use
[nabla_a, nabla_b] phi_mu = +R^rho_{mu a b} phi_rho, which is the
opposite sign from the arrays the spacetime module produces, hence the
minus signs where those arrays are frame-projected.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import jets
from . import multipole as mp
from . import spacetime as st
from . import worldline as wl


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass
class QuadrupoleState:
    """Evolved (nu = 0) slices of the multipole tower, frame components."""

    xi2_0: np.ndarray  # (4,)      xi^{mu 0}
    xi3_0: np.ndarray  # (4, 3)    xi^{mu 0 a}
    xi4_0: np.ndarray  # (4, 3, 3) xi^{mu 0 b c}, symmetric in (b, c)

    def __post_init__(self):
        self.xi2_0 = np.asarray(self.xi2_0, dtype=float).reshape(4)
        self.xi3_0 = np.asarray(self.xi3_0, dtype=float).reshape(4, 3)
        x4 = np.asarray(self.xi4_0, dtype=float).reshape(4, 3, 3)
        self.xi4_0 = 0.5 * (x4 + x4.transpose(0, 2, 1))

    def pack(self) -> np.ndarray:
        return np.concatenate([self.xi2_0, self.xi3_0.ravel(), self.xi4_0.ravel()])

    @classmethod
    def unpack(cls, vec) -> "QuadrupoleState":
        return cls(vec[:4], vec[4:16], vec[16:52])

    @classmethod
    def zero(cls) -> "QuadrupoleState":
        return cls(np.zeros(4), np.zeros((4, 3)), np.zeros((4, 3, 3)))


def _sym3(T):
    """Symmetrize a (3, 3, 3) array over all slots."""
    out = np.zeros_like(T)
    for p in itertools.permutations(range(3)):
        out += np.transpose(T, p)
    return out / 6.0


# ---------------------------------------------------------------------------
# constraint projectors (constant matrices, built once)
# ---------------------------------------------------------------------------

def _build_projector(shape, rows):
    """Orthogonal projector onto the kernel of the given constraint rows."""
    n = int(np.prod(shape))
    A = np.array(rows).reshape(len(rows), n)
    _, sv, vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    V = vt[:rank]
    P = np.eye(n) - V.T @ V

    def apply(T):
        return (P @ np.asarray(T, dtype=float).ravel()).reshape(shape)

    apply.rank = rank
    return apply


def _constraint_rows_sp():
    # xi^{a(bcd)} = 0 on the spatial quadrupole block xi^{abcd}
    rows = []
    for a in range(3):
        for b in range(3):
            for c in range(b, 3):
                for d in range(c, 3):
                    M = np.zeros((3, 3, 3, 3))
                    for p in itertools.permutations((b, c, d)):
                        M[a, p[0], p[1], p[2]] += 1.0
                    # symmetrize into the block-symmetry subspace so the
                    # kernel projection of symmetric data stays symmetric
                    M = 0.25 * (M + M.transpose(1, 0, 2, 3)
                                + M.transpose(0, 1, 3, 2)
                                + M.transpose(1, 0, 3, 2))
                    rows.append(M.ravel())
    return rows


def _constraint_rows_ev():
    # sym_{abc} xi^{0abc} = 0 on the evolved block, via xi^{0abc} = xi^{a0bc}
    rows = []
    for a in range(3):
        for b in range(a, 3):
            for c in range(b, 3):
                M = np.zeros((4, 3, 3))
                for p in itertools.permutations((a, b, c)):
                    M[1 + p[0], p[1], p[2]] += 1.0
                rows.append(M.ravel())
    return rows


_PROJ_XI4_SP = _build_projector((3, 3, 3, 3), _constraint_rows_sp())
_PROJ_XI4_EV = _build_projector((4, 3, 3), _constraint_rows_ev())


def project_secondary(xi3_sp):
    """Remove the fully symmetric part: the condition xi^{(abc)} = 0."""
    return xi3_sp - _sym3(xi3_sp)


def project_primary_spatial(xi4_sp):
    """Orthogonal projection onto xi^{a(bcd)} = 0."""
    return _PROJ_XI4_SP(xi4_sp)


def project_primary_evolved(xi4_0):
    """Orthogonal projection onto sym_{abc} xi^{a0bc} = 0."""
    return _PROJ_XI4_EV(xi4_0)


def constraint_residuals(state: QuadrupoleState, closure_vals):
    """(primary on evolved block, primary on spatial block, secondary)."""
    _, xi3_sp, xi4_sp = closure_vals
    prim_ev = float(np.max(np.abs(_sym3(state.xi4_0[1:]))))
    prim_sp = max(
        float(np.max(np.abs(_sym3(xi4_sp[a])))) for a in range(3)
    )
    sec = float(np.max(np.abs(_sym3(xi3_sp))))
    return prim_ev, prim_sp, sec


# ---------------------------------------------------------------------------
# closures
# ---------------------------------------------------------------------------

class FrozenClosure:
    """Constitutive closure holding the free spatial blocks constant.

    ``xi2_ss`` is xi^{ab} (3, 3 symmetric), ``xi3_sp`` is xi^{abc}
    (symmetric in a, b) and ``xi4_sp`` is xi^{abcd} (symmetric in (a, b)
    and (c, d)).  Construction projects the blocks onto the constraint
    surface so that frozen evolution preserves the constraints exactly.
    """

    def __init__(self, xi2_ss=None, xi3_sp=None, xi4_sp=None):
        z2 = np.zeros((3, 3)) if xi2_ss is None else np.asarray(xi2_ss, dtype=float)
        z3 = np.zeros((3, 3, 3)) if xi3_sp is None else np.asarray(xi3_sp, dtype=float)
        z4 = np.zeros((3, 3, 3, 3)) if xi4_sp is None else np.asarray(xi4_sp, dtype=float)
        self.xi2_ss = 0.5 * (z2 + z2.T)
        z3 = 0.5 * (z3 + z3.transpose(1, 0, 2))
        self.xi3_sp = project_secondary(z3)
        z4 = 0.25 * (z4 + z4.transpose(1, 0, 2, 3)
                     + z4.transpose(0, 1, 3, 2) + z4.transpose(1, 0, 3, 2))
        self.xi4_sp = project_primary_spatial(z4)
        self._zero = (np.zeros((3, 3)), np.zeros((3, 3, 3)), np.zeros((3, 3, 3, 3)))

    def quad_free(self) -> bool:
        return float(np.max(np.abs(self.xi4_sp))) == 0.0

    def __call__(self, sigma, state):
        return (self.xi2_ss, self.xi3_sp, self.xi4_sp), self._zero


class RigidRotationClosure(FrozenClosure):
    """Frozen xi2/xi3 blocks; the spatial quadrupole block rotates rigidly.

    ``omega`` is an antisymmetric (3, 3) angular-velocity matrix acting on
    every spatial frame slot of xi^{abcd}.
    """

    def __init__(self, omega, xi2_ss=None, xi3_sp=None, xi4_sp=None):
        super().__init__(xi2_ss, xi3_sp, xi4_sp)
        om = np.asarray(omega, dtype=float)
        self.omega = 0.5 * (om - om.T)
        self._xi4_ref = self.xi4_sp.copy()

    def quad_free(self) -> bool:
        return False

    def __call__(self, sigma, state):
        from scipy.linalg import expm

        Rt = expm(sigma * self.omega)
        x4 = np.einsum("Aa,Bb,Cc,Dd,abcd->ABCD", Rt, Rt, Rt, Rt, self._xi4_ref)
        d4 = rotate_all_slots(self.omega, x4)
        return (self.xi2_ss, self.xi3_sp, x4), (self._zero[0], self._zero[1], d4)


def rotate_all_slots(om, T):
    """Apply the generator om to every slot of T (derivative of a rigid
    rotation acting on all indices)."""
    out = np.zeros_like(T)
    for slot in range(T.ndim):
        out += np.moveaxis(np.tensordot(om, T, axes=([1], [slot])), 0, slot)
    return out


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def assemble_full(ev2, ev3, ev4, cl2, cl3, cl4):
    """Full frame-component tower from evolved slices and closure blocks."""
    xi2 = np.zeros((4, 4))
    xi2[:, 0] = ev2
    xi2[0, :] = ev2
    xi2[1:, 1:] = cl2
    xi3 = np.zeros((4, 4, 3))
    xi3[:, 0, :] = ev3
    xi3[0, 1:, :] = ev3[1:, :]
    xi3[1:, 1:, :] = cl3
    xi4 = np.zeros((4, 4, 3, 3))
    xi4[:, 0] = ev4
    xi4[0, 1:] = ev4[1:]
    xi4[1:, 1:] = cl4
    return xi2, xi3, xi4


def _omega4(om):
    O = np.zeros((4, 4))
    O[1:, 1:] = om
    return O


def rhs_adapted(ev2, ev3, ev4, closure_vals, closure_rates, Rf, dRf0, NRfc,
                xi4_mode="conservation", omega=None):
    """Frame-component rates (dxi2_0, dxi3_0, dxi4_0, dxi4_nu_spatial).

    ``Rf`` holds frame components of the curvature in this module's sign
    convention; ``dRf0`` is its rate along the worldline and ``NRfc[c]``
    its derivative along e_{c+1}.  The derivative arrays may be None when
    every quadrupole block vanishes identically.
    """
    cl2, cl3, cl4 = closure_vals
    _, _, dcl4 = closure_rates
    xi2, xi3, xi4 = assemble_full(ev2, ev3, ev4, cl2, cl3, cl4)

    if xi4_mode == "conservation":
        arr = xi3[:, 1:, :]  # xi^{mu b c}
        dev4 = -(arr + arr.transpose(0, 2, 1))
    elif xi4_mode == "rigid":
        dev4 = (np.einsum("ml,lbc->mbc", _omega4(omega), ev4)
                + np.einsum("bd,mdc->mbc", omega, ev4)
                + np.einsum("cd,mbd->mbc", omega, ev4))
    else:
        raise ValueError(f"unknown xi4_mode {xi4_mode!r}")

    # rates of the nu-spatial quadrupole slices: the mu = 0 row follows
    # from stress-energy symmetry, the spatial rows from the closure
    dxi4sp = np.zeros((4, 3, 3, 3))
    dxi4sp[0] = dev4[1:]
    dxi4sp[1:] = dcl4

    dev3 = (
        -xi2[:, 1:]
        + 0.5 * np.einsum("mbc,abc->ma", ev4, Rf[1:, 1:, 0, 1:])
        + np.einsum("rac,mrc->ma", ev4, Rf[:, :, 0, 1:])
        + 0.5 * np.einsum("rcba,mrcb->ma", xi4[:, 1:], Rf[:, :, 1:, 1:])
        + (1.0 / 6.0) * np.einsum("mdbc,abdc->ma", xi4[:, 1:], Rf[1:, 1:, 1:, 1:])
    )

    dev2 = (
        np.einsum("rb,mrb->m", ev3, Rf[:, :, 0, 1:])
        + 0.5 * np.einsum("rab,mrab->m", xi3[:, 1:, :], Rf[:, :, 1:, 1:])
    )
    if dRf0 is not None:
        dev2 = dev2 + 0.5 * (
            np.einsum("mbc,bc->m", dev4, Rf[0, 1:, 0, 1:])
            + np.einsum("mbc,bc->m", ev4, dRf0[0, 1:, 0, 1:])
        )
        dev2 = dev2 - 0.5 * np.einsum("rbc,cmrb->m", ev4, NRfc[:, :, :, 0, 1:])
        dev2 = dev2 + (1.0 / 6.0) * (
            np.einsum("mabc,bac->m", dxi4sp, Rf[0, 1:, 1:, 1:])
            + np.einsum("mabc,bac->m", xi4[:, 1:], dRf0[0, 1:, 1:, 1:])
        )
        dev2 = dev2 - (1.0 / 3.0) * np.einsum(
            "rabc,cmrab->m", xi4[:, 1:], NRfc[:, :, :, 1:, 1:]
        )

    return dev2, dev3, dev4, dxi4sp


def rhs_tensorial(xi2c, xi3c, xi4c, dxi4c, v, N, R, NR):
    """Chart-component rates of the Dixon-contracted tower, projector form.

    Inputs are chart components of the full tower, the chart rate
    ``dxi4c`` of the quadrupole, the tangent v, Dixon covector N, and the
    curvature R (and NR[lam] = nabla_lam R) in this module's sign
    convention.  Along a geodesic with N, pi = 1 - v N parallel, returns

        D2^mu         = nabla_v (N_nu xi^{mu nu}),
        D3^{mu rho}   = nabla_v (N_nu xi^{mu nu rho}),
        D4^{mu rho s} = nabla_v (N_nu xi^{mu nu rho s}),

    directly comparable with frame rates pushed to the chart.
    """
    pi = np.eye(4) - np.outer(v, N)

    Xs = 0.5 * (xi3c + xi3c.transpose(0, 2, 1))
    D4 = -2.0 * np.einsum("rb,sa,mba->mrs", pi, pi, Xs)

    # coefficient matrices K[b, n] pairing a curvature slot b with a
    # tower nu-slot n
    K1 = 0.5 * np.einsum("n,b->bn", N, v) + (1.0 / 6.0) * pi
    K2 = np.einsum("n,b->bn", N, v) + 0.5 * pi
    KD = -0.5 * np.einsum("n,b->bn", N, v) - (1.0 / 3.0) * pi

    D3 = (
        -np.einsum("ra,ma->mr", pi, xi2c)
        + np.einsum("ra,bn,mnls,albs->mr", pi, K1, xi4c, R)
        + np.einsum("ra,bn,lnsa,mlbs->mr", pi, K2, xi4c, R)
    )

    D2 = (
        np.einsum("bn,rnl,mrbl->m", K2, xi3c, R)
        + np.einsum("bn,mnls,z,zlbs->m", K1, dxi4c, N, R)
        + np.einsum("bn,mnls,z,k,kzlbs->m", K1, xi4c, N, v, NR)
        + np.einsum("bn,rnls,smrbl->m", KD, xi4c, NR)
    )
    return D2, D3, D4


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

@dataclass
class EvolutionResult:
    """Trajectory, frame and multipole history from one evolution run."""

    spec: st.MetricSpec
    sigma: np.ndarray          # (n,)
    x: np.ndarray              # (n, 4)
    v: np.ndarray              # (n, 4)
    E: np.ndarray              # (n, 4, 4) frame rows e_0..e_3
    ev2: np.ndarray            # (n, 4)
    ev3: np.ndarray            # (n, 4, 3)
    ev4: np.ndarray            # (n, 4, 3, 3)
    cl2: np.ndarray            # (n, 3, 3)
    cl3: np.ndarray            # (n, 3, 3, 3)
    cl4: np.ndarray            # (n, 3, 3, 3, 3)
    constraint_log: np.ndarray  # (n, 3)
    _frame: wl.WorldlineFrame = field(default=None, repr=False)

    def state(self, i: int) -> QuadrupoleState:
        return QuadrupoleState(self.ev2[i], self.ev3[i], self.ev4[i])

    def frame(self) -> wl.WorldlineFrame:
        if self._frame is None:
            C = wl.Curve(s=self.sigma, x=self.x, v=self.v)
            N = np.empty((len(self.sigma), 4))
            for i in range(len(self.sigma)):
                g = st._metric(self.spec, self.x[i])
                gv = g @ self.v[i]
                N[i] = -gv / (-float(self.v[i] @ gv))
            self._frame = wl.WorldlineFrame(spec=self.spec, C=C, N=N, e=self.E)
        return self._frame

    def components(self) -> mp.DixonComponents:
        """Chart/frame component container for the evolved tower."""
        n = len(self.sigma)
        xi2f = np.zeros((n, 4, 4))
        xi3f = np.zeros((n, 4, 4, 3))
        xi4f = np.zeros((n, 4, 4, 3, 3))
        for i in range(n):
            xi2f[i], xi3f[i], xi4f[i] = assemble_full(
                self.ev2[i], self.ev3[i], self.ev4[i],
                self.cl2[i], self.cl3[i], self.cl4[i],
            )
        E = self.E
        z0 = np.einsum("ipq,ipm,iqn->imn", xi2f, E, E)
        z1 = np.einsum("ipqa,ipm,iqn->imna", xi3f, E, E)
        z2 = np.einsum("ipqab,ipm,iqn->imnab", xi4f, E, E)
        return mp.DixonComponents(frame=self.frame(), rank=2,
                                  orders={0: z0, 1: z1, 2: z2})


def _seed_spatial_frame(spec, x0, v0):
    g0 = st._metric(spec, x0)
    N0 = -(g0 @ v0) / (-float(v0 @ g0 @ v0))
    basis = []
    for axis in range(4):
        u = np.zeros(4)
        u[axis] = 1.0
        u = u - (N0 @ u) * v0
        for b in basis:
            u = u - float(np.einsum("ij,i,j->", g0, b, u)) * b
        norm2 = float(np.einsum("ij,i,j->", g0, u, u))
        if norm2 > 1e-10:
            basis.append(u / np.sqrt(norm2))
        if len(basis) == 3:
            break
    if len(basis) < 3:
        raise wl.DegenerateFrame("could not seed a spatial frame")
    return np.array(basis)


def _frame_curvature(jet, E, Th):
    # sign flip: module convention is the negative of the spacetime arrays
    return -np.einsum("mp,mijk,qi,rj,sk->pqrs", Th, jet.riemann, E, E, E,
                      optimize=True)


def evolve(spec: st.MetricSpec, x0, v0, state0: QuadrupoleState,
           closure: FrozenClosure, span: float, h: float,
           xi4_mode: str = "conservation", omega=None,
           project: bool = True) -> EvolutionResult:
    """Co-integrate geodesic, parallel frame and multipole tower with RK4.

    The tangent is normalized to g(v, v) = -1 at the start; the evolved
    quadrupole block is re-projected onto the constraint surface after
    every step (a rounding-level correction when the initial data and
    closure are consistent).  When every quadrupole block vanishes and
    stays zero under the closure, the curvature-derivative terms are
    skipped.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    g0 = st._metric(spec, x0)
    vv = float(v0 @ g0 @ v0)
    if vv >= 0:
        raise wl.NullTangent("evolution needs a timelike initial tangent")
    v0 = v0 / np.sqrt(-vv)
    e_sp0 = _seed_spatial_frame(spec, x0, v0)

    quad_free = (
        xi4_mode == "conservation"
        and float(np.max(np.abs(state0.xi4_0))) == 0.0
        and closure.quad_free()
    )
    depth = "riemann" if (quad_free or spec.family == "minkowski") else "nabla_riemann"
    flat = spec.family == "minkowski"

    n_steps = int(round(span / h))
    if abs(n_steps * h - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError("span must be an integer number of steps")

    def rhs(sigma, y):
        x, v = y[:4], y[4:8]
        e_sp = y[8:20].reshape(3, 4)
        ev2, ev3 = y[20:24], y[24:36].reshape(4, 3)
        ev4 = y[36:72].reshape(4, 3, 3)
        jet = st.geometry_jet(spec, x, depth)
        G = jet.gamma
        dx = v
        dv = -np.einsum("mij,i,j->m", G, v, v)
        de = -np.einsum("mij,ai,j->am", G, e_sp, v)
        E = np.vstack([v, e_sp])
        Th = np.linalg.inv(E)
        if flat:
            Rf = np.zeros((4, 4, 4, 4))
        else:
            Rf = _frame_curvature(jet, E, Th)
        if depth == "nabla_riemann" and not flat:
            dRc = np.einsum("l,lmijk->mijk", v, jet.nabla_riemann)
            dRf0 = -np.einsum("mp,mijk,qi,rj,sk->pqrs", Th, dRc, E, E, E,
                              optimize=True)
            cRc = np.einsum("cl,lmijk->cmijk", e_sp, jet.nabla_riemann)
            NRfc = -np.einsum("mp,cmijk,qi,rj,sk->cpqrs", Th, cRc, E, E, E,
                              optimize=True)
        else:
            dRf0, NRfc = None, None
        state = QuadrupoleState(ev2, ev3, ev4)
        cvals, crates = closure(sigma, state)
        dev2, dev3, dev4, _ = rhs_adapted(
            ev2, ev3, ev4, cvals, crates, Rf, dRf0, NRfc, xi4_mode, omega
        )
        return np.concatenate([dx, dv, de.ravel(), dev2, dev3.ravel(),
                               dev4.ravel()])

    n = n_steps + 1
    out_sigma = np.linspace(0.0, span, n)
    ox = np.empty((n, 4))
    ov = np.empty((n, 4))
    oE = np.empty((n, 4, 4))
    o2 = np.empty((n, 4))
    o3 = np.empty((n, 4, 3))
    o4 = np.empty((n, 4, 3, 3))
    ocl2 = np.empty((n, 3, 3))
    ocl3 = np.empty((n, 3, 3, 3))
    ocl4 = np.empty((n, 3, 3, 3, 3))
    olog = np.empty((n, 3))

    ev4_init = state0.xi4_0
    if project:
        ev4_init = project_primary_evolved(ev4_init)
    y = np.concatenate([x0, v0, e_sp0.ravel(), state0.xi2_0,
                        state0.xi3_0.ravel(), ev4_init.ravel()])

    def record(i, sigma, y):
        ox[i], ov[i] = y[:4], y[4:8]
        oE[i] = np.vstack([y[4:8], y[8:20].reshape(3, 4)])
        o2[i], o3[i] = y[20:24], y[24:36].reshape(4, 3)
        o4[i] = y[36:72].reshape(4, 3, 3)
        state = QuadrupoleState(o2[i], o3[i], o4[i])
        cvals, _ = closure(sigma, state)
        ocl2[i], ocl3[i], ocl4[i] = cvals
        olog[i] = constraint_residuals(state, cvals)

    record(0, 0.0, y)
    for i in range(n_steps):
        s = i * h
        k1 = rhs(s, y)
        k2 = rhs(s + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(s + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if project and xi4_mode == "conservation":
            ev4 = y[36:72].reshape(4, 3, 3)
            ev4 = 0.5 * (ev4 + ev4.transpose(0, 2, 1))
            y[36:72] = project_primary_evolved(ev4).ravel()
        record(i + 1, (i + 1) * h, y)

    return EvolutionResult(spec=spec, sigma=out_sigma, x=ox, v=ov, E=oE,
                           ev2=o2, ev3=o3, ev4=o4, cl2=ocl2, cl3=ocl3,
                           cl4=ocl4, constraint_log=olog)


# ---------------------------------------------------------------------------
# dipole sector and its independent oracle
# ---------------------------------------------------------------------------

def dipole_to_state(mass: float, Xf, Pf, Sf) -> QuadrupoleState:
    """Frame-component dictionary from dipole data to the evolved tower.

    Xf and Pf are spatial frame components (3,), Sf the antisymmetric
    spatial spin block (3, 3):

        xi^{00} = -2 m,  xi^{a0} = P^a,
        xi^{00a} = X^a,  xi^{d0a} = S^{ad} / 2,
        quadrupole block zero.
    """
    Xf = np.asarray(Xf, dtype=float)
    Pf = np.asarray(Pf, dtype=float)
    Sf = np.asarray(Sf, dtype=float)
    ev2 = np.concatenate([[-2.0 * mass], Pf])
    ev3 = np.zeros((4, 3))
    ev3[0] = Xf
    for d in range(3):
        ev3[1 + d] = 0.5 * Sf[:, d]
    return QuadrupoleState(ev2, ev3, np.zeros((4, 3, 3)))


def state_to_dipole(state: QuadrupoleState):
    """Inverse dictionary: (mass, Xf, Pf, Sf) from the evolved slices."""
    mass = -0.5 * float(state.xi2_0[0])
    Pf = state.xi2_0[1:].copy()
    Xf = state.xi3_0[0].copy()
    Sf = np.zeros((3, 3))
    for d in range(3):
        Sf[:, d] = 2.0 * state.xi3_0[1 + d]
    Sf = 0.5 * (Sf - Sf.T)
    return mass, Xf, Pf, Sf


def mpd_evolve(spec: st.MetricSpec, x0, v0, X0, P0, S0, span: float, h: float):
    """Pole-dipole equations integrated directly in chart components.

    X, P are chart vectors, S an antisymmetric chart (4, 4) spin tensor:

        nabla_v X = -P,
        nabla_v P^mu = 1/2 R^mu_{nu rho k} v^nu S^{k rho}
                       + R^mu_{nu rho k} v^nu v^rho X^k,
        nabla_v S = 0,

    with R in this module's sign convention.  Returns (sigma, x, v, X, P,
    S) sample arrays; an oracle for the dipole sector of ``evolve``.
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    g0 = st._metric(spec, x0)
    v0 = v0 / np.sqrt(-float(v0 @ g0 @ v0))

    def rhs(y):
        x, v, X, P = y[:4], y[4:8], y[8:12], y[12:16]
        S = y[16:32].reshape(4, 4)
        jet = st.geometry_jet(spec, x, "riemann")
        G = jet.gamma
        R = -jet.riemann
        dx = v
        dv = -np.einsum("mij,i,j->m", G, v, v)
        dX = -P - np.einsum("mij,i,j->m", G, v, X)
        dP = (0.5 * np.einsum("mnrk,n,kr->m", R, v, S)
              + np.einsum("mnrk,n,r,k->m", R, v, v, X)
              - np.einsum("mij,i,j->m", G, v, P))
        dS = (-np.einsum("mij,i,jn->mn", G, v, S)
              - np.einsum("nij,i,mj->mn", G, v, S))
        return np.concatenate([dx, dv, dX, dP, dS.ravel()])

    n_steps = int(round(span / h))
    y = np.concatenate([x0, v0, np.asarray(X0, dtype=float),
                        np.asarray(P0, dtype=float),
                        np.asarray(S0, dtype=float).ravel()])
    sig = np.linspace(0.0, span, n_steps + 1)
    out = np.empty((n_steps + 1, 32))
    out[0] = y
    for i in range(n_steps):
        y = wl._rk4_step(rhs, y, h)
        out[i + 1] = y
    return (sig, out[:, :4], out[:, 4:8], out[:, 8:12], out[:, 12:16],
            out[:, 16:32].reshape(-1, 4, 4))


# ---------------------------------------------------------------------------
# divergence residual
# ---------------------------------------------------------------------------

def gradient_test_tensor(spec: st.MetricSpec, phi: mp.TestTensor) -> mp.TestTensor:
    """The covariant gradient of a test tensor, with exact jets.

    The new covariant index comes first, which is immaterial against a
    symmetric stress-energy block.
    """
    if phi.jet is None:
        raise ValueError("gradient test tensor needs an analytic jet")
    p = phi.rank

    def jet(x, order):
        tj = phi.jet(x, order + 1)
        gj = jets.gamma_jets(spec, x, min(2, order))
        return jets.cov_deriv_jets(gj, tj, p)[:order + 1]

    def value(x):
        return jet(np.asarray(x, dtype=float), 0)[0]

    return mp.TestTensor(rank=p + 1, func=value, jet=jet,
                         sigma_support=phi.sigma_support)


def windowed_covector(spec: st.MetricSpec, const, linear, x_ref, center,
                      widths, t_center: float, t_scale: float,
                      profile: mp.FlatTopBump = None,
                      sigma_support=None) -> mp.TestTensor:
    """Polynomial x Gaussian covector field cut off by a smooth window in
    the chart time coordinate, so worldline integrals of its derivatives
    drop boundary terms exactly."""
    base = mp.gaussian_poly_tensor(1, const, linear, x_ref, center, widths)
    profile = profile or mp.FlatTopBump()
    Lt = np.array([1.0, 0.0, 0.0, 0.0]) / t_scale

    def value(x):
        x = np.asarray(x, dtype=float)
        return base.func(x) * profile.value((x[0] - t_center) / t_scale)

    def jet(x, order):
        u = (float(x[0]) - t_center) / t_scale
        pj = jets.profile_jets(profile.derivs(u, order), Lt, order)
        return jets.jet_outer(pj, base.jet(x, order), 0, 1)

    return mp.TestTensor(rank=1, func=value, jet=jet,
                         sigma_support=sigma_support)


def default_battery(J: mp.DixonComponents, n_fields: int = 3, seed: int = 5):
    """Covector battery adapted to the trajectory's chart extent."""
    rng = np.random.default_rng(seed)
    C = J.frame.C
    t0, t1 = float(C.x[0, 0]), float(C.x[-1, 0])
    t_center = 0.5 * (t0 + t1)
    # window support strictly inside the trajectory's time span
    t_scale = 0.45 * (t1 - t0)
    mid = C.x[len(C.s) // 2]
    extent = np.maximum(np.max(np.abs(C.x - mid), axis=0), 0.5)
    # C^3 window with joins on round sigma fractions: the quadrature error
    # of the sigma integral then carries a clean fourth-order leading term,
    # so h-refinement ladders of the residual measure a stable order 4
    profile = mp.FlatTopBump(w_flat=2.0 / 9.0, order=3)
    fields = []
    for _ in range(n_fields):
        fields.append(windowed_covector(
            J.frame.spec,
            const=rng.normal(size=4),
            linear=rng.normal(size=(4, 4)) / extent,
            x_ref=mid,
            center=mid + 0.3 * extent * rng.normal(size=4),
            widths=2.0 * extent,
            t_center=t_center,
            t_scale=t_scale,
            profile=profile,
        ))
    return fields


def divergence_residual(J: mp.DixonComponents, phis=None,
                        tol_grid: float = 1e-5):
    """Largest action of the tower on gradient test tensors, normalized.

    For a conserved tower this vanishes up to integrator and quadrature
    error; the returned value is max_i |J[nabla phi_i]| / (1 + scale(J)).
    """
    if phis is None:
        phis = default_battery(J)
    spec = J.frame.spec
    vals = [abs(mp.apply(J, gradient_test_tensor(spec, p), tol_grid))
            for p in phis]
    return float(max(vals) / (1.0 + J.scale())), vals


# ---------------------------------------------------------------------------
# component counting and conjecture probes
# ---------------------------------------------------------------------------

def _tower_basis():
    """Basis of the orthogonality-reduced tower in frame components.

    Each element is a flat 208-vector [xi2 (16), xi3 (48), xi4 (144)] of
    full frame arrays with the algebraic symmetries built in.  Returns
    (vectors, split) with split the per-order dimensions.
    """
    vecs = []
    split = [0, 0, 0]
    for p in range(4):
        for q in range(p, 4):
            x2 = np.zeros((4, 4))
            x2[p, q] = x2[q, p] = 1.0
            vecs.append(np.concatenate([x2.ravel(), np.zeros(48), np.zeros(144)]))
            split[0] += 1
    for p in range(4):
        for q in range(p, 4):
            for a in range(3):
                x3 = np.zeros((4, 4, 3))
                x3[p, q, a] = x3[q, p, a] = 1.0
                vecs.append(np.concatenate([np.zeros(16), x3.ravel(), np.zeros(144)]))
                split[1] += 1
    for p in range(4):
        for q in range(p, 4):
            for c in range(3):
                for d in range(c, 3):
                    x4 = np.zeros((4, 4, 3, 3))
                    x4[p, q, c, d] = x4[q, p, c, d] = 1.0
                    x4[p, q, d, c] = x4[q, p, d, c] = 1.0
                    vecs.append(np.concatenate([np.zeros(16), np.zeros(48), x4.ravel()]))
                    split[2] += 1
    return np.array(vecs), tuple(split)


def _rank(M, tol=1e-9):
    sv = np.linalg.svd(M, compute_uv=False)
    if len(sv) == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def _constraint_matrix(basis, projected: bool):
    """Constraint map xi^{mu (nu rho sigma)} = 0 on the tower basis.

    ``projected`` restricts the symmetrized slots to spatial values (the
    evolution theorem's form); otherwise all chart values of the nu slot
    are kept and the derivative slots vanish on timelike entries by
    orthogonality.
    """
    rows_idx = []
    rng3 = range(1, 4) if projected else range(4)
    for mu in range(4):
        seen = set()
        for nu in rng3:
            for rho in range(1, 4):
                for sig in range(1, 4):
                    key = (mu,) + tuple(sorted((nu, rho, sig)))
                    if key in seen:
                        continue
                    seen.add(key)
                    rows_idx.append(key)
    out = np.zeros((len(rows_idx), len(basis)))
    for j, vec in enumerate(basis):
        xi4 = vec[64:].reshape(4, 4, 3, 3)
        full = np.zeros((4, 4, 4, 4))
        full[:, :, 1:, 1:] = xi4
        for i, (mu, a, b, c) in enumerate(rows_idx):
            acc = 0.0
            for p in itertools.permutations((a, b, c)):
                acc += full[mu, p[0], p[1], p[2]]
            out[i, j] = acc / 6.0
    return out


def _selector_matrix(basis):
    """Map extracting the evolved slices xi^{mu 0}, xi^{mu 0 a}, xi^{mu 0 bc}."""
    out = []
    for vec in basis:
        x2 = vec[:16].reshape(4, 4)
        x3 = vec[16:64].reshape(4, 4, 3)
        x4 = vec[64:].reshape(4, 4, 3, 3)
        out.append(np.concatenate([x2[:, 0], x3[:, 0].ravel(), x4[:, 0].ravel()]))
    return np.array(out).T


def counting_audit() -> dict:
    """Integer bookkeeping of the component tower, computed by rank.

    Raw symmetric counts, the orthogonality reduction, the rank of the
    projected symmetry constraint, and the split of the remaining
    functions into evolved and free parts.
    """
    basis, split = _tower_basis()
    raw = (10, 10 * 4, 10 * 10)
    total = int(sum(split))
    A = _constraint_matrix(basis, projected=True)
    c_rank = _rank(A)
    _, sv, vt = np.linalg.svd(A)
    null = vt[c_rank:].T  # (100, 100 - c_rank) null-space coordinates
    S = _selector_matrix(basis)
    evolved = _rank(S)
    on_constraint = _rank(S @ null)
    # the constraint reaches `overlap` of the evolved slices; keeping the
    # constraint surface invariant turns that many evolution equations
    # into secondary conditions, so they consume free functions too
    overlap = evolved - on_constraint
    free = total - c_rank - on_constraint - overlap
    return {
        "raw": {"orders": raw, "total": int(sum(raw))},
        "orthogonal": {"orders": split, "total": total},
        "constraint_rank": c_rank,
        "after_constraint": total - c_rank,
        "evolved_slots": evolved,
        "evolved_on_constraint": on_constraint,
        "overlap": overlap,
        "secondary_rank": overlap,
        "free": free,
    }


def symmetry_constraint_ranks() -> dict:
    """Compare the projected constraint with its unprojected variant.

    The unprojected symmetrization keeps chart values of the nu slot and
    therefore also reaches the evolved quadrupole slices; the report
    gives both ranks and the resulting free-function counts.
    """
    basis, split = _tower_basis()
    total = int(sum(split))
    Ap = _constraint_matrix(basis, projected=True)
    Au = _constraint_matrix(basis, projected=False)
    rp, ru = _rank(Ap), _rank(Au)
    S = _selector_matrix(basis)

    def free_count(A, r):
        _, sv, vt = np.linalg.svd(A)
        null = vt[r:].T
        return null.shape[1] - _rank(S @ null)

    return {
        "projected_rank": rp,
        "unprojected_rank": ru,
        "projected_free": free_count(Ap, rp),
        "unprojected_free": free_count(Au, ru),
        "space_dim": total,
    }


@functools.lru_cache(maxsize=1)
def _unprojected_xi4_projector():
    """Orthogonal projector imposing xi^{mu (nu rho sigma)} = 0 with a
    chart-valued nu slot, acting on flattened (4, 4, 3, 3) frame arrays."""
    rows = []
    seen = set()
    for mu in range(4):
        for nu in range(4):
            for rho in range(1, 4):
                for sig in range(1, 4):
                    key = (mu,) + tuple(sorted((nu, rho, sig)))
                    if key in seen:
                        continue
                    seen.add(key)
                    M = np.zeros((4, 4, 4, 4))
                    for p in itertools.permutations((nu, rho, sig)):
                        M[mu, p[0], p[1], p[2]] += 1.0 / 6.0
                    M = M[:, :, 1:, 1:]
                    M = 0.25 * (M + M.transpose(1, 0, 2, 3)
                                + M.transpose(0, 1, 3, 2)
                                + M.transpose(1, 0, 3, 2))
                    rows.append(M.ravel())
    A = np.array(rows)
    r = _rank(A)
    _, sv, vt = np.linalg.svd(A)
    null = vt[r:]
    return null.T @ null


def dixon_conjecture_check(spec: st.MetricSpec, x0, v0,
                           state0: QuadrupoleState, closure: FrozenClosure,
                           mode: str, span: float = 2.0,
                           h_ladder=(1e-2, 5e-3, 2.5e-3), omega=None) -> dict:
    """Drive the quadrupole by one of Dixon's proposed closures and track
    the divergence residual under h-refinement.

    ``mode`` selects the proposal: "rotational-dynamics" replaces the
    quadrupole rate with a rigid rotation at angular velocity ``omega``
    (the momentum and dipole slices keep their conservation equations);
    "symmetry-constraint" runs the conservation evolution and then imposes
    the non-dynamical chart-valued symmetry xi^{mu (nu rho sigma)} = 0,
    which also reaches the evolved quadrupole slices.

    Returns the residual ladder, per-halving ratios, the plateau value and
    whether the ladder still converges at the integrator's order.
    """
    if mode not in ("rotational-dynamics", "symmetry-constraint"):
        raise ValueError(f"unknown mode {mode!r}")

    residuals = []
    for h in h_ladder:
        if mode == "rotational-dynamics":
            if omega is None:
                raise ValueError("rotational-dynamics mode needs omega")
            res = evolve(spec, x0, v0, state0, closure, span, h,
                         xi4_mode="rigid", omega=np.asarray(omega, float))
            J = res.components()
        else:
            res = evolve(spec, x0, v0, state0, closure, span, h)
            J = res.components()
            P = _unprojected_xi4_projector()
            n = len(res.sigma)
            z2 = np.empty((n, 4, 4, 3, 3))
            for i in range(n):
                _, _, xi4f = assemble_full(res.ev2[i], res.ev3[i],
                                           res.ev4[i], res.cl2[i],
                                           res.cl3[i], res.cl4[i])
                xi4f = (P @ xi4f.ravel()).reshape(4, 4, 3, 3)
                z2[i] = np.einsum("pqab,pm,qn->mnab", xi4f, res.E[i],
                                  res.E[i])
            J = mp.DixonComponents(frame=J.frame, rank=2,
                                   orders={0: J.orders[0], 1: J.orders[1],
                                           2: z2})
        val, _ = divergence_residual(J)
        residuals.append(val)

    ratios = [residuals[i] / residuals[i + 1] if residuals[i + 1] > 0
              else np.inf for i in range(len(residuals) - 1)]
    return {
        "mode": mode,
        "h": list(h_ladder),
        "residuals": residuals,
        "ratios": ratios,
        "plateau": residuals[-1],
        "converges": bool(ratios) and all(r >= 8.0 for r in ratios),
    }
