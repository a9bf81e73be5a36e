import numpy as np
import pytest

from worldtube import moments as mo
from worldtube import multipole as mp
from worldtube import spacetime as st
from worldtube import worldline as wl


@pytest.fixture(scope="module")
def flat_tube():
    spec = st.minkowski()
    s = np.arange(-0.5, 0.5 + 1e-9, 2e-3)
    v0 = np.array([1.0, 0.0, 0.0, 0.0])
    C = wl.Curve(s=s, x=np.outer(s, v0), v=np.tile(v0, (len(s), 1)))
    return spec, wl.build_worldline(spec, C)


@pytest.fixture(scope="module")
def body():
    rng = np.random.default_rng(11)
    T = rng.normal(size=(4, 4))
    T = 0.5 * (T + T.T)
    w = np.array([0.05, 0.04, 0.06])
    return T, w, mo.gaussian_body(2, T, w, sigma_center=0.0, sigma_scale=0.25)


def test_gaussian_moments_match_closed_form(flat_tube, body):
    spec, frame = flat_tube
    T, w, U = body
    # separable Gaussian of unit peak: total = (2 pi)^{3/2} w1 w2 w3,
    # second moments diag(w_a^2) x total, odd moments zero by parity
    G = (2 * np.pi) ** 1.5 * np.prod(w)
    xi0 = mo.moment_integral(U, frame, 0.0, 0)
    assert np.max(np.abs(xi0 - T * G)) < 1e-8
    assert np.max(np.abs(mo.moment_integral(U, frame, 0.0, 1))) < 1e-10
    want2 = np.einsum("mn,ab->mnab", T * G, np.diag(w ** 2))
    assert np.max(np.abs(mo.moment_integral(U, frame, 0.0, 2) - want2)) < 1e-8


def test_squeeze_at_unit_epsilon_is_identity(flat_tube, body):
    spec, frame = flat_tube
    _, _, U = body
    Ue = mo.squeeze(U, frame, 1.0)
    Z = np.array([[0.01, -0.02, 0.03], [0.0, 0.0, 0.0]])
    assert np.max(np.abs(Ue.func(0.1, Z) - U.func(0.1, Z))) < 1e-12


def test_squeeze_preserves_total_content(flat_tube, body):
    spec, frame = flat_tube
    _, _, U = body
    xi0 = mo.moment_integral(U, frame, 0.0, 0)
    for eps in (0.5, 0.25):
        xi0_eps = mo.moment_integral(mo.squeeze(U, frame, eps), frame, 0.0, 0)
        assert np.max(np.abs(xi0_eps - xi0)) < 1e-8 * (1.0 + np.max(np.abs(xi0)))


def test_squeeze_shrinks_second_moments(flat_tube, body):
    spec, frame = flat_tube
    _, _, U = body
    eps = 0.5
    xi2 = mo.moment_integral(U, frame, 0.0, 2)
    xi2_eps = mo.moment_integral(mo.squeeze(U, frame, eps), frame, 0.0, 2)
    assert np.max(np.abs(xi2_eps - eps ** 2 * xi2)) < 1e-9


def test_quadrature_refinement_guard(flat_tube, body):
    spec, frame = flat_tube
    _, _, U = body
    with pytest.raises(mo.QuadratureNotConverged):
        mo.moment_integral(U, frame, 0.0, 2, n_nodes=6, tol=1e-12)


def test_moment_components_feed_extraction(flat_tube, body):
    spec, frame = flat_tube
    _, _, U = body
    J = mo.moment_components(U, frame, kmax=1, n_nodes=16)
    assert J.orthogonality_residual() < 1e-14
    assert set(J.orders) == {0, 1}


def test_pairing_requires_static_tube(body):
    schw = st.schwarzschild()
    x0 = np.array([0.0, 10.0, np.pi / 2, 0.0])
    v0 = np.array([1.0, 0.0, 0.0, np.sqrt(1e-3)])
    C = wl.integrate_geodesic(schw, x0, v0, 1.0, h_ode=1e-2)
    frame = wl.build_worldline(schw, C)
    _, _, U = body
    phi = mp.gaussian_poly_tensor(2, np.eye(4), np.zeros((4, 4, 4)),
                                  x0, x0, np.full(4, 0.4))
    with pytest.raises(NotImplementedError):
        mo.pairing(U, frame, phi)
