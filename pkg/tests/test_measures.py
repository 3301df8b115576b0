"""Measure containers, serialization, entropy, and the log-MGF."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpma.measures import (
    DiscreteMeasure,
    Domain,
    EmpiricalConfig,
    GridMeasure,
    alphabet_domain,
    empirical,
    entropy,
    load_discrete_csv,
    load_grid_csv,
    log_mgf,
    save_csv,
    torus_domain,
)

from oracles import relative_entropy


def weights_strategy(k):
    return st.lists(
        st.floats(min_value=0.05, max_value=1.0), min_size=k, max_size=k
    ).map(lambda w: np.array(w) / np.sum(w))


def test_uniform_grid_is_probability():
    g = GridMeasure.uniform(dim=2, resolution=8)
    assert g.is_probability
    assert g.masses().sum() == pytest.approx(1.0, abs=1e-14)
    assert g.masses().shape == (64,)


def test_grid_centers_match_lattice():
    g = GridMeasure.uniform(dim=1, resolution=4)
    assert np.allclose(g.centers().reshape(-1), [0.125, 0.375, 0.625, 0.875])


def test_empirical_weights():
    config = EmpiricalConfig(points=np.array([[0.1], [0.4], [0.4]]))
    mu = empirical(config)
    assert np.allclose(mu.weights, 1.0 / 3.0)
    assert mu.atom_count == 3


def test_discrete_rejects_point_outside_domain():
    with pytest.raises(ValueError):
        DiscreteMeasure(
            points=np.array([[1.5]]),
            weights=np.array([1.0]),
            domain=torus_domain(1),
        )


def test_save_load_discrete_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mu = DiscreteMeasure(
        points=rng.random((7, 2)),
        weights=np.full(7, 1.0 / 7.0),
        domain=torus_domain(2),
    )
    path = tmp_path / "atoms.csv"
    save_csv(mu, path)
    back = load_discrete_csv(path)
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)


def test_save_load_grid_roundtrip(tmp_path):
    vals = 1.0 + 0.3 * np.cos(2 * np.pi * np.arange(16) / 16)
    vals = vals / vals.mean()
    g = GridMeasure(dim=1, resolution=16, density=vals, kind="torus")
    path = tmp_path / "grid.csv"
    save_csv(g, path)
    back = load_grid_csv(path, kind="torus")
    assert back.resolution == 16
    assert np.array_equal(back.density, g.density)


def test_load_grid_rejects_non_grid_points(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("coord_0,weight\n0.1,0.5\n0.7,0.5\n", encoding="ascii")
    with pytest.raises(ValueError):
        load_grid_csv(path, kind="torus")


def test_entropy_of_itself_is_zero():
    mu = DiscreteMeasure.from_alphabet_weights([0.2, 0.5, 0.3])
    assert entropy(mu, mu) == pytest.approx(0.0, abs=1e-14)


def test_entropy_matches_closed_form():
    mu0 = DiscreteMeasure.from_alphabet_weights([0.25, 0.25, 0.5])
    nu = DiscreteMeasure.from_alphabet_weights([0.1, 0.6, 0.3])
    want = relative_entropy(mu0.weights, nu.weights)
    assert entropy(mu0, nu) == pytest.approx(want, abs=1e-14)


def test_entropy_zero_mass_letters_drop_out():
    mu0 = DiscreteMeasure.from_alphabet_weights([0.5, 0.25, 0.25])
    nu = DiscreteMeasure.from_alphabet_weights([0.0, 0.5, 0.5])
    want = relative_entropy(mu0.weights, nu.weights)
    assert entropy(mu0, nu) == pytest.approx(want, abs=1e-14)


@given(weights_strategy(4), weights_strategy(4))
@settings(max_examples=60, deadline=None)
def test_entropy_nonnegative(mu0_w, nu_w):
    mu0 = DiscreteMeasure.from_alphabet_weights(mu0_w)
    nu = DiscreteMeasure.from_alphabet_weights(nu_w)
    assert entropy(mu0, nu) >= -1e-12


def test_log_mgf_matches_direct_sum():
    mu = DiscreteMeasure.from_alphabet_weights([0.2, 0.3, 0.5])
    theta = np.array([-1.0, 0.5, 2.0])
    want = math.log(sum(w * math.exp(t)
                        for w, t in zip(mu.weights, theta)))
    assert log_mgf(mu, theta) == pytest.approx(want, abs=1e-13)


@given(weights_strategy(3),
       st.lists(st.floats(min_value=-5, max_value=5), min_size=3, max_size=3),
       st.floats(min_value=-3, max_value=3))
@settings(max_examples=60, deadline=None)
def test_log_mgf_constant_shift(w, theta, c):
    mu = DiscreteMeasure.from_alphabet_weights(w)
    theta = np.asarray(theta)
    lhs = log_mgf(mu, theta + c)
    rhs = log_mgf(mu, theta) + c
    assert lhs == pytest.approx(rhs, abs=1e-11)


def test_alphabet_domain_validation():
    with pytest.raises(ValueError):
        alphabet_domain(0)
    d = alphabet_domain(3)
    assert d.kind == "alphabet" and d.size == 3


def test_grid_measure_rejects_negative_density():
    with pytest.raises(ValueError):
        GridMeasure(dim=1, resolution=4,
                    density=np.array([1.0, -0.5, 1.0, 2.5]), kind="torus")
