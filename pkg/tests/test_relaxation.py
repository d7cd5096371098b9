import numpy as np
import pytest

from meshlight.compact_model import TWO_PI
from meshlight.errors import DegenerateRow
from meshlight.mesh import MeshSpec, direct_responses, forward_map, global_scatter
from meshlight.objectives import make_grid
from meshlight.relaxation import (
    RelaxedRow, coefficients, is_relaxed, relaxed, relaxed_mesh_response, rows_of, xi1_closed_form,
    xi2_closed_form, xi_magnitude, xi_ratio,
)


def relaxed_mesh(rng, N, M, alpha=1.0):
    return relaxed(MeshSpec.random(N, M, rng, alpha=alpha))


@pytest.fixture
def omegas():
    return make_grid(7, (-0.9, 0.9)).points


def tau_of(spec):
    return spec.constants.n_eff * 250e-6 / spec.constants.c


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_solver_matches_closed_form(rng, omegas, M):
    for _ in range(5):
        spec = relaxed_mesh(rng, 1, M)
        G = forward_map(global_scatter(spec, omegas, check_condition=False))
        P = relaxed_mesh_response(spec, omegas)
        np.testing.assert_allclose(np.abs(G), np.abs(P), atol=1e-9)
        # top and bottom lines match exactly, phase included
        np.testing.assert_allclose(G[:, 0, 0], np.exp(-1j * M * omegas * tau_of(spec)), atol=1e-9)
        np.testing.assert_allclose(G[:, 3, 3], (-1) ** M * np.exp(-1j * M * omegas * tau_of(spec)), atol=1e-9)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_entry_pattern(rng, omegas, M):
    spec = relaxed_mesh(rng, 1, M)
    G = forward_map(global_scatter(spec, omegas, check_condition=False))
    xi = xi_magnitude(rows_of(spec)[0], omegas)
    if M % 2:
        np.testing.assert_allclose(np.abs(G[:, 1, 2]), xi, atol=1e-9)
        np.testing.assert_allclose(np.abs(G[:, 2, 1]), xi, atol=1e-9)
        np.testing.assert_allclose(G[:, 1, 1], 0, atol=1e-9)
    else:
        np.testing.assert_allclose(np.abs(G[:, 1, 1]), xi, atol=1e-9)
        np.testing.assert_allclose(np.abs(G[:, 2, 2]), xi, atol=1e-9)
        np.testing.assert_allclose(G[:, 1, 2], 0, atol=1e-9)


def test_xi1_closed_form(rng, omegas):
    for th, ph in rng.uniform(0, TWO_PI, (10, 2)):
        row = RelaxedRow([th], [ph], 1e-12)
        q0 = -np.exp(-1j * th) - np.exp(-1j * ph)
        np.testing.assert_allclose(xi_magnitude(row, omegas), abs(q0 / 2), rtol=1e-12)
        np.testing.assert_allclose(xi1_closed_form(row, omegas), abs(q0 / 2), rtol=1e-12)


def test_xi2_closed_form(rng, omegas):
    for th, ph in rng.uniform(0, TWO_PI, (10, 2, 2)):
        row = RelaxedRow(th, ph, 1.9583e-12)
        p = np.exp(-1j * th) - np.exp(-1j * ph)
        q = -np.exp(-1j * th) - np.exp(-1j * ph)
        z = np.exp(-4j * omegas * row.tau)
        want = np.abs(q[0] * q[1] * z) / np.abs(-4 + p[0] * p[1] * z)
        np.testing.assert_allclose(xi_magnitude(row, omegas), want, rtol=1e-10)
        np.testing.assert_allclose(xi2_closed_form(row, omegas), want, rtol=1e-12)


def test_cross_states_give_unit_xi(omegas):
    row = RelaxedRow([0.4, 1.3], [0.4, 1.3], 2e-12)
    np.testing.assert_allclose(row.p, 0, atol=1e-15)
    np.testing.assert_allclose(np.abs(row.q), 2)
    np.testing.assert_allclose(xi_magnitude(row, omegas), 1.0, rtol=1e-12)


@pytest.mark.parametrize("M", [1, 2, 3, 5])
def test_numerator_has_unit_magnitude(rng, omegas, M):
    row = RelaxedRow(*rng.uniform(0, TWO_PI, (2, M)), 1.9583e-12)
    _, num = xi_ratio(row, omegas)
    np.testing.assert_allclose(np.abs(num), 1.0, rtol=1e-12)


def test_product_order_does_not_change_magnitude(rng, omegas):
    row = RelaxedRow(*rng.uniform(0, TWO_PI, (2, 4)), 1.9583e-12)
    np.testing.assert_allclose(xi_magnitude(row, omegas, "ascending"), xi_magnitude(row, omegas, "descending"),
                               rtol=1e-10)
    with pytest.raises(ValueError):
        xi_ratio(row, omegas, "sideways")


def test_periodicity(rng):
    row = RelaxedRow(*rng.uniform(0, TWO_PI, (2, 3)), 1.9583e-12)
    w = np.linspace(1.2e15, 1.21e15, 9)
    np.testing.assert_allclose(xi_magnitude(row, w), xi_magnitude(row, w + np.pi / row.tau), rtol=1e-8)


def test_degenerate_row(omegas):
    row = RelaxedRow([0.5, 1.0], [0.5 + np.pi, 2.0], 2e-12)
    with pytest.raises(DegenerateRow):
        coefficients(row, omegas)


def test_rows_decouple(rng, omegas):
    spec = relaxed_mesh(rng, 2, 3)
    exc = np.zeros(6, complex)
    exc[1] = 1.0
    base = direct_responses(spec, omegas, exc)
    x = spec.params
    x[[3, 4, 5, 9, 10, 11]] = rng.uniform(0, TWO_PI, 6)  # second-row vertical phases
    moved = direct_responses(spec.with_params(x), omegas, exc)
    np.testing.assert_allclose(moved[:, :3], base[:, :3], atol=1e-12)


def test_multi_row_prediction(rng, omegas):
    spec = relaxed_mesh(rng, 2, 3)
    G = forward_map(global_scatter(spec, omegas, check_condition=False))
    np.testing.assert_allclose(np.abs(G), np.abs(relaxed_mesh_response(spec, omegas)), atol=1e-9)


def test_scope_checks(rng, omegas):
    with pytest.raises(ValueError):
        relaxed_mesh_response(MeshSpec.random(1, 2, rng, alpha=1.0), omegas)
    with pytest.raises(ValueError):
        relaxed_mesh_response(relaxed_mesh(rng, 1, 2, alpha=0.99), omegas)
    spec = relaxed_mesh(rng, 1, 2)
    assert is_relaxed(spec)
    P = relaxed_mesh_response(spec, float(omegas[0]))
    assert P.shape == (4, 4)
    with pytest.raises(ValueError):
        RelaxedRow([0.1, 0.2], [0.3], 1e-12)


def test_lossy_relaxed_mesh_against_direct(rng, omegas):
    # outside the closed forms' scope the two solvers still agree
    spec = relaxed_mesh(rng, 2, 3, alpha=0.95)
    exc = np.array([0, 1, 0, 1j, 0, 0])
    G = forward_map(global_scatter(spec, omegas, check_condition=False))
    np.testing.assert_allclose(G @ exc, direct_responses(spec, omegas, exc), atol=1e-9)
