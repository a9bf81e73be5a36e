import numpy as np
import pytest

from worldtube import spacetime as st


def test_from_config_families():
    assert st.from_config({"family": "minkowski"}).family == "minkowski"
    spec = st.from_config({"family": "schwarzschild", "mass_geometric": 2.0})
    assert spec.params["mass"] == 2.0
    spec = st.from_config({"family": "desitter", "hubble_geometric": 0.1})
    assert spec.params["hubble"] == 0.1


def test_from_config_rejects_unknown_family():
    with pytest.raises(Exception):
        st.from_config({"family": "kerr"})


def test_minkowski_is_flat():
    spec = st.minkowski()
    jet = st.geometry_jet(spec, [0.3, -1.0, 2.0, 0.5])
    assert np.array_equal(jet.g, np.diag([-1.0, 1.0, 1.0, 1.0]))
    assert np.all(jet.gamma == 0.0)
    assert np.all(jet.riemann == 0.0)
    assert np.all(jet.nabla_riemann == 0.0)


def test_schwarzschild_domain_guard():
    spec = st.schwarzschild(mass=1.0)
    with pytest.raises(st.OutOfDomain):
        st.geometry_jet(spec, [0.0, 2.05, 1.5, 0.0])


def test_geometry_jet_depth_validation():
    spec = st.minkowski()
    with pytest.raises(ValueError):
        st.geometry_jet(spec, np.zeros(4), depth="cube")


def test_fd_validation_each_family():
    rng = np.random.default_rng(2)
    for spec in (st.schwarzschild(), st.desitter()):
        x = st.random_points(spec, 1, rng)[0]
        res = st.fd_validate_jet(spec, x)
        assert res["gamma"] < 1e-6
        assert res["riemann"] < 1e-5


def test_random_points_stay_admissible():
    rng = np.random.default_rng(5)
    for spec in (st.minkowski(), st.schwarzschild(), st.desitter()):
        pts = st.random_points(spec, 200, rng)
        assert pts.shape == (200, 4)
        assert all(spec.contains(x) for x in pts)


def test_jet_invariants_schwarzschild_point():
    spec = st.schwarzschild()
    res = st.jet_invariants(spec, [0.1, 8.0, 1.1, 0.4])
    for name, val in res.items():
        assert val < 1e-10, name


def test_lower_riemann_pair_symmetry():
    spec = st.desitter()
    x = st.random_points(spec, 1, np.random.default_rng(9))[0]
    jet = st.geometry_jet(spec, x, depth="riemann")
    Rl = st.lower_riemann(jet)
    assert np.max(np.abs(Rl - Rl.transpose(2, 3, 0, 1))) < 1e-12
    # de Sitter is maximally symmetric: R_{mijk} = H^2 (g_mj g_ik - g_mk g_ij)
    H2 = spec.params["hubble"] ** 2
    want = H2 * (np.einsum("mj,ik->mijk", jet.g, jet.g)
                 - np.einsum("mk,ij->mijk", jet.g, jet.g))
    assert np.max(np.abs(Rl - want)) < 1e-10
