import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from worldtube import multipole as mp
from worldtube import spacetime as st
from worldtube import worldline as wl


@pytest.fixture(scope="module")
def flat_tube():
    spec = st.minkowski()
    s = np.arange(-0.5, 0.5 + 1e-9, 5e-3)
    x0 = np.array([0.0, 0.1, 0.2, -0.1])
    v0 = np.array([1.0, 0.0, 0.0, 0.0])
    C = wl.Curve(s=s, x=x0 + np.outer(s, v0), v=np.tile(v0, (len(s), 1)))
    return spec, wl.build_worldline(spec, C)


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


def test_flat_top_bump_shape():
    b = mp.FlatTopBump(w_flat=0.25, w_sup=1.0, order=5)
    assert b.value(0.0) == 1.0
    assert b.value(0.2) == 1.0
    assert b.value(1.0) == 0.0
    assert b.value(-1.3) == 0.0
    assert abs(b.integral() - 1.0) < 1e-12


@given(z=hst.floats(-1.5, 1.5))
@settings(max_examples=60, deadline=None)
def test_flat_top_bump_derivatives_match_fd(z):
    b = mp.FlatTopBump(w_flat=0.25, w_sup=1.0, order=5)
    h = 1e-6
    d = b.derivs(z, 1)
    fd = (b.value(z + h) - b.value(z - h)) / (2 * h)
    assert abs(d[1] - fd) < 1e-5 * (1.0 + abs(d[1]))


def test_flat_top_bump_rejects_order_above_smoothness():
    b = mp.FlatTopBump(order=3)
    with pytest.raises(mp.UnsupportedOrder):
        b.derivs(0.5, 4)


def test_gaussian_poly_tensor_jets_match_fd():
    rng = np.random.default_rng(3)
    phi = mp.gaussian_poly_tensor(
        1, rng.normal(size=4), rng.normal(size=(4, 4)),
        np.zeros(4), 0.1 * np.ones(4), np.full(4, 0.5))
    x = np.array([0.05, -0.1, 0.2, 0.0])
    J = phi.jet(x, 2)
    h = 1e-4
    for l in range(4):
        e = np.zeros(4)
        e[l] = h
        fd = (phi.func(x + e) - phi.func(x - e)) / (2 * h)
        assert np.max(np.abs(fd - J[1][l])) < 1e-6


def test_components_orthogonality_and_scale(flat_tube):
    spec, frame = flat_tube
    J = mp.DixonComponents(frame=frame, rank=2,
                           orders=smooth_orders(frame.sigma, 2, 2, 1))
    assert J.orthogonality_residual() < 1e-14
    assert J.scale() > 0.0
    assert J.max_order == 2


def test_apply_linear_in_components(flat_tube):
    spec, frame = flat_tube
    orders = smooth_orders(frame.sigma, 2, 1, 2)
    J1 = mp.DixonComponents(frame=frame, rank=2, orders=orders)
    J2 = mp.DixonComponents(frame=frame, rank=2,
                            orders={k: 3.0 * v for k, v in orders.items()})
    rng = np.random.default_rng(5)
    phi = mp.gaussian_poly_tensor(
        2, rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 4)),
        frame.C.x[0], frame.C.x[0] + 0.05, np.full(4, 0.4))
    a = mp.apply(J1, phi)
    assert abs(mp.apply(J2, phi) - 3.0 * a) < 1e-12 * (1.0 + abs(a))


def test_noisy_components_trigger_grid_warning(flat_tube):
    spec, frame = flat_tube
    rng = np.random.default_rng(8)
    orders = {0: rng.normal(size=(len(frame.sigma), 4, 4))}
    J = mp.DixonComponents(frame=frame, rank=2, orders=orders)
    phi = mp.gaussian_poly_tensor(
        2, rng.normal(size=(4, 4)), np.zeros((4, 4, 4)),
        frame.C.x[0], frame.C.x[0], np.full(4, 0.4))
    with pytest.warns(mp.GridTooCoarse):
        mp.apply(J, phi)


def test_split_of_pure_monopole_is_its_action(flat_tube):
    spec, frame = flat_tube
    orders = smooth_orders(frame.sigma, 2, 0, 4)
    J = mp.DixonComponents(frame=frame, rank=2, orders=orders)
    rng = np.random.default_rng(6)
    phi = mp.gaussian_poly_tensor(
        2, rng.normal(size=(4, 4)), rng.normal(size=(4, 4, 4)),
        frame.C.x[0], frame.C.x[0] + 0.02, np.full(4, 0.35))
    full = mp.apply(J, phi)
    assert abs(mp.dixon_split(J, phi, 0) - full) < 1e-10 * (1.0 + abs(full))


def test_extraction_recovers_injected_component(flat_tube):
    spec, frame = flat_tube
    J = mp.DixonComponents(frame=frame, rank=2,
                           orders=smooth_orders(frame.sigma, 2, 2, 1))
    i0 = np.argmin(np.abs(frame.sigma))
    truth = J.orders[1][i0][2, 1, 0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mp.GridTooCoarse)
        # epsilon rungs sized so the smallest support still spans dozens of
        # sigma samples of this 5e-3 grid
        res = mp.extract_component(J, 0.0, (2, 1), (1,),
                                   eps_ladder=(0.3, 0.2, 0.13, 0.09))
    assert abs(res.value - truth) < 1e-4 * (1.0 + abs(truth))
    assert res.rate >= 1.0
