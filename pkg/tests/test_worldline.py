import numpy as np
import pytest

from worldtube import spacetime as st
from worldtube import worldline as wl


@pytest.fixture(scope="module")
def schw():
    return st.schwarzschild(mass=1.0)


@pytest.fixture(scope="module")
def circular(schw):
    r0 = 10.0
    x0 = np.array([0.0, r0, np.pi / 2, 0.0])
    v0 = np.array([1.0, 0.0, 0.0, np.sqrt(1.0 / r0 ** 3)])
    return wl.integrate_geodesic(schw, x0, v0, 2.0, h_ode=1e-3)


def test_circular_orbit_stays_circular(schw, circular):
    assert np.max(np.abs(circular.x[:, 1] - 10.0)) < 1e-9
    assert np.max(np.abs(circular.x[:, 2] - np.pi / 2)) < 1e-12
    assert wl.geodesic_residual(schw, circular) < 1e-9


def test_geodesic_residual_flags_non_geodesic(schw, circular):
    bent = wl.Curve(s=circular.s, x=circular.x.copy(),
                    v=circular.v + 0.01 * np.sin(circular.s)[:, None])
    assert wl.geodesic_residual(schw, bent) > 1e-4


def test_flat_exp_map_is_affine():
    spec = st.minkowski()
    s = np.linspace(0.0, 1.0, 101)
    v0 = np.array([1.0, 0.0, 0.0, 0.0])
    C = wl.Curve(s=s, x=np.outer(s, v0), v=np.tile(v0, (101, 1)))
    frame = wl.build_worldline(spec, C)
    V = 0.1 * frame.frame(0.5)[2]
    assert np.allclose(wl.exp_map(spec, frame, 0.5, V),
                       C.position(0.5) + V, atol=1e-14)


def test_exp_map_rejects_non_orthogonal_tangent(schw, circular):
    frame = wl.build_worldline(schw, circular)
    with pytest.raises(wl.NotOrthogonal):
        wl.exp_map(schw, frame, 1.0, 0.1 * frame.frame(1.0)[0])


def test_adapted_coords_round_trip(schw, circular):
    frame = wl.build_worldline(schw, circular)
    rng = np.random.default_rng(4)
    for _ in range(5):
        sigma = float(rng.uniform(0.4, 1.6))
        z = rng.uniform(-0.2, 0.2, size=3)
        V = z @ frame.frame(sigma)[1:]
        x = wl.exp_map(schw, frame, sigma, V)
        sig_back, z_back = wl.adapted_coords(schw, frame, x)
        assert abs(sig_back - sigma) < 1e-9
        assert np.max(np.abs(z_back - z)) < 1e-9


def test_frame_is_orthonormal_with_unit_pairing(schw, circular):
    frame = wl.build_worldline(schw, circular)
    for i in (0, len(frame.sigma) // 2, len(frame.sigma) - 1):
        g = st._metric(schw, frame.C.x[i])
        G = frame.e[i] @ g @ frame.e[i].T
        # e_0 = Cdot (not unit normalized); spatial legs orthonormal to it
        assert np.max(np.abs(G[1:, 1:] - np.eye(3))) < 1e-9
        assert np.max(np.abs(G[0, 1:])) < 1e-9
        assert abs(frame.N[i] @ frame.C.v[i] - 1.0) < 1e-12
        assert np.max(np.abs(frame.N[i] @ frame.e[i, 1:].T)) < 1e-12


def test_radial_vector_vanishes_on_worldline(schw, circular):
    frame = wl.build_worldline(schw, circular)
    for i in (0, 700, 1999):
        assert np.max(np.abs(wl.radial_vector(schw, frame, frame.C.x[i]))) == 0.0


def test_propagator_trivial_in_flat_space():
    spec = st.minkowski()
    C = wl.integrate_geodesic(spec, np.zeros(4), [1.0, 0.2, 0.0, 0.1], 1.0)
    P = wl.propagate(spec, C, 0.0, 1.0)
    assert np.array_equal(P.Pi, np.eye(4))


def test_propagator_preserves_tangent(schw, circular):
    P = wl.propagate(schw, circular, 0.0, 1.5)
    assert np.max(np.abs(P.Pi @ circular.tangent(0.0) - circular.tangent(1.5))) < 1e-9
