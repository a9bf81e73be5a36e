"""End-to-end acceptance battery.

Every test prints a single PASS/FAIL summary line with the measured
numbers, then asserts.  Tolerances are stated inline next to each check.
Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines.
"""

import time
import warnings

import numpy as np
import pytest

from worldtube import dynamics as dy
from worldtube import moments as mo
from worldtube import multipole as mp
from worldtube import spacetime as st
from worldtube import worldline as wl


def report(num, name, ok, detail):
    print(f"\n[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


# shared Schwarzschild circular-orbit initial data (r = 10 M)
R0 = 10.0
X0 = np.array([0.0, R0, np.pi / 2, 0.0])
V0 = np.array([1.0, 0.0, 0.0, np.sqrt(1.0 / R0 ** 3)])


@pytest.fixture(scope="module")
def schw():
    return st.schwarzschild(mass=1.0)


@pytest.fixture(scope="module")
def static_tube():
    """Flat static worldline tube used by the split/extraction criteria."""
    spec = st.minkowski()

    def build(h):
        s = np.arange(-0.5, 0.5 + 1e-9, h)
        x0 = np.array([0.0, 0.1, 0.2, -0.1])
        v0 = np.array([1.0, 0.0, 0.0, 0.0])
        C = wl.Curve(s=s, x=x0 + np.outer(s, v0), v=np.tile(v0, (len(s), 1)))
        return wl.build_worldline(spec, C)

    return spec, build


def smooth_orders(s, rank, kmax, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for k in range(kmax + 1):
        shape = (4,) * rank + (3,) * k
        a, b = rng.normal(size=shape), rng.normal(size=shape)
        cs = np.cos(s).reshape((-1,) + (1,) * len(shape))
        sn = np.sin(2 * s).reshape((-1,) + (1,) * len(shape))
        out[k] = a[None] * cs + b[None] * sn
    return out


@pytest.fixture(scope="module")
def frozen_ladder(schw):
    """Quadrupole evolution residual ladder shared by the last two criteria."""
    rng = np.random.default_rng(3)
    state0 = dy.QuadrupoleState(
        np.array([-2.0, 0.001, -0.002, 0.001]),
        0.01 * rng.normal(size=(4, 3)),
        0.005 * rng.normal(size=(4, 3, 3)),
    )
    closure = dy.FrozenClosure(0.01 * rng.normal(size=(3, 3)),
                               0.01 * rng.normal(size=(3, 3, 3)),
                               0.005 * rng.normal(size=(3, 3, 3, 3)))
    residuals = []
    for h in (1e-2, 5e-3, 2.5e-3):
        res = dy.evolve(schw, X0, V0, state0, closure, span=2.0, h=h)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", mp.GridTooCoarse)
            val, _ = dy.divergence_residual(res.components())
        residuals.append(val)
    return state0, closure, residuals


def test_criterion_01_geometry_audit():
    t0 = time.time()
    rng = np.random.default_rng(17)
    worst_closed = 0.0
    worst_fd = 0.0
    for spec in (st.minkowski(), st.schwarzschild(), st.desitter()):
        for x in st.random_points(spec, 100, rng):
            inv = st.jet_invariants(spec, x)
            worst_closed = max(worst_closed, max(inv.values()))
            jet = st.geometry_jet(spec, x, "nabla_riemann")
            worst_fd = max(worst_fd, _fd_nabla_riemann_residual(spec, x, jet))
    dt = time.time() - t0
    ok = worst_closed <= 1e-9 and worst_fd <= 1e-5 and dt < 10.0
    report(1, "geometry audit", ok,
           f"closed-form {worst_closed:.2e} <= 1e-9, FD nabla-Riemann "
           f"{worst_fd:.2e} <= 1e-5, 300 points in {dt:.1f}s < 10s")


def _fd_nabla_riemann_residual(spec, x, jet, h=1e-4):
    if spec.family == "minkowski":
        return float(np.max(np.abs(jet.nabla_riemann)))
    R, G = jet.riemann, jet.gamma
    dR = np.array([st._fd_partial(lambda p: st._riemann(spec, p), x, l, h)
                   for l in range(4)])
    nr = dR.copy()
    nr += np.einsum("mls,sijk->lmijk", G, R)
    nr -= np.einsum("sli,msjk->lmijk", G, R)
    nr -= np.einsum("slj,misk->lmijk", G, R)
    nr -= np.einsum("slk,mijs->lmijk", G, R)
    return float(np.max(np.abs(jet.nabla_riemann - nr)))


def test_criterion_02_propagator_laws(schw):
    t0 = time.time()
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(50):
        x0 = st.random_points(schw, 1, rng)[0]
        V = rng.normal(size=4)
        V = 0.3 * V / np.max(np.abs(V))
        C = wl.integrate_geodesic(schw, x0, V, 0.4, h_ode=1e-3)
        P01 = wl.propagate(schw, C, 0.0, 0.2)
        P12 = wl.propagate(schw, C, 0.2, 0.4)
        P02 = wl.propagate(schw, C, 0.0, 0.4)
        comp = np.max(np.abs(P12.Pi @ P01.Pi - P02.Pi))
        inv = np.max(np.abs(P01.inverse().Pi @ P01.Pi - np.eye(4)))
        g0 = st._metric(schw, C.position(0.0))
        g1 = st._metric(schw, C.position(0.4))
        u, w = rng.normal(size=4), rng.normal(size=4)
        iso = abs((P02.Pi @ u) @ g1 @ (P02.Pi @ w) - u @ g0 @ w)
        worst = max(worst, comp, inv, iso)
    dt = time.time() - t0
    ok = worst <= 1e-9 and dt < 30.0
    report(2, "propagator laws", ok,
           f"worst composition/inverse/isometry {worst:.2e} <= 1e-9 on 50 "
           f"geodesics in {dt:.1f}s < 30s")


def test_criterion_03_radial_vector(schw):
    C = wl.integrate_geodesic(schw, X0, V0, 2.0, h_ode=1e-3)
    frame = wl.build_worldline(schw, C)
    on_line = max(np.max(np.abs(wl.radial_vector(schw, frame, frame.C.x[i])))
                  for i in (0, 700, 1999))

    sig0 = 1.0
    xc = frame.C.position(sig0)
    Rc = wl.radial_vector(schw, frame, xc)
    G = st._christoffel(schw, xc)
    N = frame.dixon_covector(sig0)
    cd = frame.frame(sig0)[0]
    e = frame.frame(sig0)
    min_order = np.inf
    for U in (e[1], e[2], 0.4 * e[1] - 0.3 * e[3]):
        e1, e2 = [], []
        for h in (0.08, 0.04):
            Rp = wl.radial_vector(schw, frame, xc + h * U, tol_inv=1e-12)
            Rm = wl.radial_vector(schw, frame, xc - h * U, tol_inv=1e-12)
            e1.append(np.max(np.abs((Rp - Rm) / (2 * h) - U)))
            # the symmetrized second derivative vanishes on the worldline;
            # remove the connection terms from the plain second difference
            GUU = np.einsum("mij,i,j->m", G, U, U)
            d2 = (Rp - 2 * Rc + Rm) / h ** 2 + GUU + (N @ GUU) * cd
            e2.append(np.max(np.abs(d2)))
        min_order = min(min_order, np.log2(e1[0] / e1[1]), np.log2(e2[0] / e2[1]))
    ok = on_line == 0.0 and min_order >= 1.9
    report(3, "radial vector", ok,
           f"R=0 on the worldline exactly, gradient/second-derivative FD "
           f"order {min_order:.2f} >= 2")


def test_criterion_04_dixon_split(static_tube):
    spec, build = static_tube
    frame = build(1e-2)
    s = frame.sigma
    orders = smooth_orders(s, 2, 2, 1)
    J = mp.DixonComponents(frame=frame, rank=2, orders=orders)
    rng = np.random.default_rng(31)
    x0 = frame.C.x[0]
    worst_complete = worst_ladder = worst_vanish = 0.0
    for i in range(20):
        phi = mp.gaussian_poly_tensor(
            2, rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 4)),
            x0, x0 + 0.1 * rng.normal(size=4), rng.uniform(0.3, 0.5, size=4))
        full = mp.apply(J, phi)
        parts = [mp.dixon_split(J, phi, r) for r in range(3)]
        worst_complete = max(worst_complete,
                             abs(sum(parts) - full) / (1.0 + abs(full)))
        if i < 6:
            dphi = mp.radial_power_tensor(frame, phi, 1)
            for k in range(3):
                lad = abs(mp.dixon_split(J, dphi, k) - k * parts[k])
                worst_ladder = max(worst_ladder, lad / (1.0 + abs(parts[k])))
            for k in range(2):
                pad = {q: np.zeros((len(s), 4, 4) + (3,) * q) for q in range(3)}
                pad[k] = orders[k]
                Jp = mp.DixonComponents(frame=frame, rank=2, orders=pad)
                for r in range(k + 1, 3):
                    worst_vanish = max(worst_vanish,
                                       abs(mp.dixon_split(Jp, phi, r)))
    worst = max(worst_complete, worst_ladder, worst_vanish)
    ok = worst <= 1e-7
    report(4, "dixon split", ok,
           f"completeness {worst_complete:.2e}, ladder {worst_ladder:.2e}, "
           f"vanishing {worst_vanish:.2e}, all <= 1e-7 over 20 test tensors")


def test_criterion_05_extraction_round_trip(static_tube):
    t0 = time.time()
    spec, build = static_tube
    frame = build(1e-3)
    J = mp.DixonComponents(frame=frame, rank=2,
                           orders=smooth_orders(frame.sigma, 2, 2, 1))
    i0 = np.argmin(np.abs(frame.sigma))
    prof_a = mp.FlatTopBump(0.25, 1.0, 5)
    prof_b = mp.FlatTopBump(0.3, 0.9, 4)
    worst_err = 0.0
    min_rate = np.inf
    cases = [((1, 2), (1, 3)), ((0, 0), (2, 2)), ((3, 1), (2,)), ((2, 2), ())]
    for nu, aidx in cases:
        truth = J.orders[len(aidx)][i0][nu + tuple(a - 1 for a in aidx)]
        res = mp.extract_component(J, 0.0, nu, aidx, profile=prof_a)
        worst_err = max(worst_err, abs(res.value - truth) / (1.0 + abs(truth)))
        min_rate = min(min_rate, res.rate)
    # profile independence: repeat one component with the second profile
    truth = J.orders[2][i0][1, 2, 0, 2]
    res_b = mp.extract_component(J, 0.0, (1, 2), (1, 3), profile=prof_b)
    prof_gap = abs(res_b.value - truth) / (1.0 + abs(truth))
    dt = time.time() - t0
    ok = worst_err <= 1e-4 and prof_gap <= 1e-4 and min_rate >= 1.0 and dt < 120.0
    report(5, "extraction round trip", ok,
           f"worst extrapolated error {worst_err:.2e} <= 1e-4 (second "
           f"profile {prof_gap:.2e}), min rate {min_rate:.2f} >= 1, "
           f"{dt:.0f}s < 120s")


def test_criterion_06_squeezing_expansion(static_tube):
    t0 = time.time()
    spec, build = static_tube
    frame = build(2e-3)
    rng = np.random.default_rng(11)
    T = rng.normal(size=(4, 4))
    T = 0.5 * (T + T.T)
    U = mo.gaussian_body(2, T, np.array([0.05, 0.04, 0.06]),
                         sigma_center=0.0, sigma_scale=0.25,
                         tilt=np.array([0.8, -0.5, 0.3]))
    phi = mp.gaussian_poly_tensor(
        2, rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 4)),
        frame.C.x[0], frame.C.x[0] + np.array([0.02, 0.05, -0.04, 0.03]),
        np.array([0.35, 0.3, 0.25, 0.4]))
    slopes = {}
    for N in (0, 1, 2):
        slope, _, _ = mo.verify_expansion(U, frame, phi, N,
                                          (0.5, 0.35, 0.25, 0.18, 0.12))
        slopes[N] = slope
    dt = time.time() - t0
    ok = all(slopes[N] >= N + 1 - 0.2 for N in slopes) and dt < 120.0
    report(6, "squeezing expansion", ok,
           "slopes " + ", ".join(f"N={N}: {s:.2f} >= {N + 0.8}"
                                 for N, s in slopes.items())
           + f", {dt:.0f}s < 120s")


def test_criterion_07_counting_audit():
    audit = dy.counting_audit()
    got = (audit["raw"]["total"], audit["orthogonal"]["total"],
           audit["after_constraint"], audit["evolved_slots"], audit["free"])
    ok = got == (150, 100, 60, 40, 20)
    report(7, "counting audit", ok,
           f"150 -> {got[1]} -> {got[2]} components, {got[3]} evolved + "
           f"{got[4]} free (want 100/60/40/20 exactly)")


def test_criterion_08_monopole_conservation(schw):
    mono = dy.QuadrupoleState(np.array([-2.0, 0.0, 0.0, 0.0]),
                              np.zeros((4, 3)), np.zeros((4, 3, 3)))
    res = dy.evolve(schw, X0, V0, mono, dy.FrozenClosure(), span=10.0, h=1e-3)
    n_steps = len(res.sigma) - 1
    drift = max(float(np.max(np.abs(res.ev2 - res.ev2[0]))),
                float(np.max(np.abs(res.ev3))), float(np.max(np.abs(res.ev4))))
    ok = drift <= 1e-10 and n_steps == 10000
    report(8, "monopole conservation", ok,
           f"mass drift {drift:.2e} <= 1e-10 over {n_steps} RK4 steps")


def test_criterion_09_dipole_equivalence(schw):
    t0 = time.time()
    mass = 1.0
    Xf = np.array([0.01, -0.02, 0.015])
    Pf = np.array([0.003, 0.004, -0.002])
    Sf = np.array([[0.0, 0.02, -0.01], [-0.02, 0.0, 0.03], [0.01, -0.03, 0.0]])
    state0 = dy.dipole_to_state(mass, Xf, Pf, Sf)

    g0 = st._metric(schw, X0)
    vn = V0 / np.sqrt(-V0 @ g0 @ V0)
    e0 = dy._seed_spatial_frame(schw, X0, vn)
    h_ref = 1e-4
    sig, xm, vm, Xm, Pm, Sm = dy.mpd_evolve(
        schw, X0, vn, Xf @ e0, Pf @ e0,
        np.einsum("ab,ai,bj->ij", Sf, e0, e0), 10.0, h_ref)

    def discrepancy(h):
        res = dy.evolve(schw, X0, V0, state0, dy.FrozenClosure(), 10.0, h)
        stride = int(round(h / h_ref))
        total = dipole = 0.0
        for j in range(len(res.sigma)):
            i = j * stride
            _, Xf_j, Pf_j, Sf_j = dy.state_to_dipole(res.state(j))
            E = res.E[j][1:]
            dip = max(
                float(np.max(np.abs(Xf_j @ E - Xm[i]))),
                float(np.max(np.abs(Pf_j @ E - Pm[i]))),
                float(np.max(np.abs(
                    np.einsum("ab,ai,bj->ij", Sf_j, E, E) - Sm[i]))),
            )
            dipole = max(dipole, dip)
            total = max(total, dip, float(np.max(np.abs(res.x[j] - xm[i]))))
        return total, dipole

    err, _ = discrepancy(1e-3)
    # at small h the dipole-sector error sits below the reference error, so
    # the scaling is measured on a coarser ladder where it dominates
    ladder = [discrepancy(h)[1] for h in (2e-1, 1e-1, 5e-2)]
    slopes = [np.log2(ladder[i] / ladder[i + 1]) for i in range(2)]
    dt = time.time() - t0
    ok = (err <= 1e-8 and all(3.5 <= s <= 4.5 for s in slopes) and dt < 60.0)
    report(9, "dipole equivalence", ok,
           f"max error vs the pole-dipole integrator {err:.2e} <= 1e-8 at "
           f"h=1e-3 over span 10, dipole-sector refinement slopes "
           + "/".join(f"{s:.2f}" for s in slopes)
           + f" in [3.5, 4.5], {dt:.0f}s < 60s")


def test_criterion_10_divergence_residual(schw, frozen_ladder):
    state0, closure, residuals = frozen_ladder
    ratios = [residuals[i] / residuals[i + 1] for i in range(2)]

    # adapted and tensorial right-hand sides at a generic state and point
    rng = np.random.default_rng(3)
    x = np.array([0.3, 7.5, 1.2, 0.8])
    jet = st.geometry_jet(schw, x, "nabla_riemann")
    v = np.array([1.0, 0.02, 0.03, -0.01])
    v = v / np.sqrt(-v @ jet.g @ v)
    e_sp = dy._seed_spatial_frame(schw, x, v)
    E = np.vstack([v, e_sp])
    Th = np.linalg.inv(E)
    N = -(jet.g @ v)
    Rf = dy._frame_curvature(jet, E, Th)
    dRc = np.einsum("l,lmijk->mijk", v, jet.nabla_riemann)
    dRf0 = -np.einsum("mp,mijk,qi,rj,sk->pqrs", Th, dRc, E, E, E)
    cRc = np.einsum("cl,lmijk->cmijk", e_sp, jet.nabla_riemann)
    NRfc = -np.einsum("mp,cmijk,qi,rj,sk->cpqrs", Th, cRc, E, E, E)
    state = dy.QuadrupoleState(rng.normal(size=4), rng.normal(size=(4, 3)),
                               rng.normal(size=(4, 3, 3)))
    cvals, crates = closure(0.0, state)
    dev2, dev3, dev4, dxi4sp = dy.rhs_adapted(
        state.xi2_0, state.xi3_0, state.xi4_0, cvals, crates, Rf, dRf0, NRfc)
    xi2f, xi3f, xi4f = dy.assemble_full(state.xi2_0, state.xi3_0,
                                        state.xi4_0, *cvals)
    xi2c = np.einsum("pq,pm,qn->mn", xi2f, E, E)
    xi3c = np.einsum("pqa,pm,qn,al->mnl", xi3f, E, E, E[1:])
    xi4c = np.einsum("pqab,pm,qn,al,bk->mnlk", xi4f, E, E, E[1:], E[1:])
    dxi4f = np.zeros((4, 4, 3, 3))
    dxi4f[:, 0] = dev4
    dxi4f[:, 1:] = dxi4sp
    dxi4c = np.einsum("pqab,pm,qn,al,bk->mnlk", dxi4f, E, E, E[1:], E[1:])
    D2, D3, D4 = dy.rhs_tensorial(xi2c, xi3c, xi4c, dxi4c, v, N,
                                  -jet.riemann, -jet.nabla_riemann)
    gap = max(
        float(np.max(np.abs(D2 - np.einsum("p,pm->m", dev2, E)))),
        float(np.max(np.abs(D3 - np.einsum("pa,pm,ar->mr", dev3, E, E[1:])))),
        float(np.max(np.abs(D4 - np.einsum("pbc,pm,br,cs->mrs",
                                           dev4, E, E[1:], E[1:])))),
    )
    ok = all(10.0 <= r <= 22.0 for r in ratios) and gap <= 1e-10
    report(10, "divergence residual", ok,
           "residuals " + "/".join(f"{r:.2e}" for r in residuals)
           + ", halving ratios " + "/".join(f"{r:.1f}" for r in ratios)
           + f" in [10, 22], adapted-vs-tensorial gap {gap:.1e} <= 1e-10")


def test_criterion_11_closure_conjecture_falsified(schw, frozen_ladder):
    state0, closure, residuals = frozen_ladder
    converged = residuals[-1]
    omega = np.array([[0.0, 0.3, -0.1], [-0.3, 0.0, 0.2], [0.1, -0.2, 0.0]])
    out = dy.dixon_conjecture_check(
        schw, X0, V0, state0,
        dy.RigidRotationClosure(omega, closure.xi2_ss, closure.xi3_sp,
                                closure.xi4_sp),
        mode="rotational-dynamics", omega=omega)
    factor = out["plateau"] / converged
    ok = (not out["converges"]) and factor > 1e3
    report(11, "closure conjecture falsified", ok,
           f"recorded plateau {out['plateau']:.3e} (ratios "
           + "/".join(f"{r:.2f}" for r in out["ratios"])
           + f"), {factor:.1e}x the conserved-closure value {converged:.2e}")
