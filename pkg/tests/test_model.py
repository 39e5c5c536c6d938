import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmo_control.model import (
    DIM,
    HBAR,
    FmoModel,
    ModelError,
    antisymmetric_state,
    bright_state,
    build_fmo_model,
    check_density_matrix,
    dark_state,
    polarization_vector,
    polarization_vectors,
    pure_state,
    site1_polar_angles,
    site_state,
)


def test_default_hamiltonian_entries(model):
    # 1-based labels in the table: H[1][2], H[5][5]
    assert model.h_site[0, 1] == -104.1
    assert model.h_site[4, 4] == 450.0
    assert np.array_equal(model.h_site, model.h_site.T)


def test_default_dipole_and_rates(model):
    assert np.array_equal(model.dipoles[0], [-3.081, 2.119, -1.669])
    assert np.all(model.gamma_diss == 5e-4)
    assert model.gamma_sink == 6.3
    # hbar = 1 / (2 pi c), c in cm/ps
    assert model.hbar == pytest.approx(1.0 / (2 * math.pi * 2.99792458e-2), rel=1e-12)
    assert HBAR == pytest.approx(5.3, rel=2e-3)


def test_model_is_immutable(model):
    with pytest.raises(ValueError):
        model.h_site[0, 0] = 1.0
    with pytest.raises(Exception):
        model.gamma_sink = 1.0


def test_exciton_energies_against_independent_diagonalization(model):
    # oracle: roots of the characteristic polynomial of the 7x7 matrix
    roots = np.sort(np.roots(np.poly(model.h_site)).real)
    assert np.allclose(model.exciton_energies(), roots, atol=1e-8)


def test_overrides_and_validation():
    m = build_fmo_model({"gamma_deph": 0.3, "gamma_sink": 1.0})
    assert np.all(m.gamma_deph == 0.3) and m.gamma_sink == 1.0
    with pytest.raises(ModelError):
        build_fmo_model({"gamma_diss": -1.0})
    with pytest.raises(ModelError):
        build_fmo_model({"gamma_sink": float("nan")})
    with pytest.raises(ModelError):
        build_fmo_model({"bogus": 1})
    with pytest.raises(ModelError):
        FmoModel(np.eye(7) + np.triu(np.ones((7, 7)), 1), np.ones((7, 3)), 0.0, 0.0)


def test_with_dephasing_leaves_original(model):
    m2 = model.with_dephasing(7.0)
    assert np.all(m2.gamma_deph == 7.0)
    assert np.all(model.gamma_deph == 1.0)


def test_site1_angles_simple_cases():
    base = build_fmo_model()
    d = np.array(base.dipoles)
    d[0] = [0, 0, 1]
    assert site1_polar_angles(build_fmo_model({"dipoles": d})) == (0.0, 0.0)
    d[0] = [1, 0, 0]
    th, ph = site1_polar_angles(build_fmo_model({"dipoles": d}))
    assert th == pytest.approx(math.pi / 2) and ph == 0.0
    d[0] = 0.0
    with pytest.raises(ModelError):
        site1_polar_angles(build_fmo_model({"dipoles": d}))


def test_site1_angles_reproduce_dipole_direction(model):
    mu = model.dipoles[0]
    norm = math.sqrt(3.081**2 + 2.119**2 + 1.669**2)
    assert norm == pytest.approx(4.095, abs=1e-3)
    th, ph = site1_polar_angles(model)
    assert np.allclose(polarization_vector(th, ph), mu / norm, atol=1e-12)


def test_polarization_vector_cases():
    assert np.allclose(polarization_vector(0.0, 1.234), [0, 0, 1])
    assert np.allclose(polarization_vector(math.pi / 2, 0.0), [1, 0, 0])


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_polarization_unit_and_cauchy_schwarz(theta, phi):
    e = polarization_vector(theta, phi)
    assert abs(np.linalg.norm(e) - 1.0) < 1e-12
    m = build_fmo_model()
    assert np.all(np.abs(m.dipoles @ e) <= np.linalg.norm(m.dipoles, axis=1) + 1e-12)
    assert np.allclose(polarization_vectors(theta, phi), e)


def test_states_are_valid_densities():
    for rho in (bright_state(), antisymmetric_state(), dark_state(), site_state(3), pure_state({5: 1, 6: 1j})):
        assert rho.shape == (DIM, DIM)
        assert check_density_matrix(rho) == []
    assert bright_state()[1, 2] == pytest.approx(0.5)
    assert antisymmetric_state()[1, 2] == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        site_state(0)


def test_check_density_matrix_flags_problems():
    bad = np.zeros((DIM, DIM), dtype=complex)
    bad[1, 1] = 1.2
    bad[2, 2] = -0.2
    bad[1, 2] = 0.1
    problems = check_density_matrix(bad)
    assert any("Hermitian" in p for p in problems)
    assert any("negative" in p for p in problems)
