import json

import numpy as np
import pytest

from meshlight.autodiff import (
    FDReport, central_difference, cost_value, d_column_transfer, d_cost, d_cost_single, d_forward_output,
    d_global, evaluate, finite_difference_check, relative_error, response_jacobian,
)
from meshlight.errors import SingularBarState
from meshlight.mesh import MeshSpec, column_transfer, flat_index, global_scatter, mesh_response
from meshlight.objectives import TargetSpec, make_grid, unit_excitation
from meshes import routing_spec

H = 1e-6


def shifted(spec, i, h):
    x = spec.params.copy()
    x[i] += h
    return spec.with_params(x)


def fd(fun, spec, i, h=H):
    return (fun(shifted(spec, i, h)) - fun(shifted(spec, i, -h))) / (2 * h)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(a))


@pytest.fixture
def small(rng):
    return MeshSpec.random(2, 3, rng)


def test_d_column_transfer_locality(small, omega0):
    p = flat_index(small, "vertical", 1, 2, "theta")
    assert not np.any(d_column_transfer(small, 0, omega0, p))
    assert not np.any(d_column_transfer(small, 1, omega0, p))
    assert np.any(d_column_transfer(small, 2, omega0, p))


@pytest.mark.parametrize("kind,row,col,which", [
    ("vertical", 0, 1, "theta"), ("vertical", 1, 1, "phi"),
    ("horizontal", 0, 1, "phi"), ("horizontal", 2, 1, "theta"),
])
def test_d_column_transfer_fd(small, omega0, kind, row, col, which):
    p = flat_index(small, kind, row, col, which)
    an = d_column_transfer(small, col, omega0, p)
    num = fd(lambda s: column_transfer(s, col, omega0), small, p)
    assert rel(an, num) < 1e-6
    # only one block row region is touched
    rows = np.flatnonzero(np.any(an != 0, axis=1))
    assert rows.max() - rows.min() < 8


@pytest.mark.parametrize("p", [0, 7, 13, 22, 29])
def test_d_global_fd(small, omega0, p):
    an = d_global(small, omega0, p)
    num = fd(lambda s: global_scatter(s, omega0, check_condition=False).t_star[0], small, p)
    assert rel(an, num) < 1e-6


def test_d_global_linearity(small, omega0):
    total = sum(d_global(small, omega0, p) for p in range(small.n_params))
    h = 1e-6
    x = small.params
    num = (global_scatter(small.with_params(x + h), omega0).t_star[0]
           - global_scatter(small.with_params(x - h), omega0).t_star[0]) / (2 * h)
    assert rel(total, num) < 1e-6


def test_d_global_single_column(rng, omega0):
    from meshlight.mesh import permutation_matrix
    spec = MeshSpec.random(2, 1, rng)
    P = permutation_matrix(2)
    for p in (0, 3, 5):
        np.testing.assert_allclose(d_global(spec, omega0, p), P.T @ d_column_transfer(spec, 0, omega0, p) @ P,
                                   atol=1e-15)


def test_d_forward_output_fd(rng, omega0):
    spec = MeshSpec.random(5, 5, rng)
    w = omega0 * np.array([0.9995, 1.0, 1.0005])
    a0 = unit_excitation(12, 1)

    def out(s):
        return mesh_response(global_scatter(s, w, check_condition=False), a0)[0]

    for p in rng.choice(spec.n_params, 12, replace=False):
        assert rel(d_forward_output(spec, w, a0, p), fd(out, spec, p)) < 1e-6


def test_zero_field_parameter_has_no_sensitivity(omega0):
    spec = routing_spec()
    a0 = unit_excitation(12, 1)
    for p in (flat_index(spec, "vertical", 4, 4, "theta"), flat_index(spec, "horizontal", 5, 4, "phi")):
        assert np.max(np.abs(d_forward_output(spec, omega0, a0, p))) < 1e-12
    mj = response_jacobian(spec, [omega0], a0)
    assert np.max(np.abs(mj.jacobian[0, :, flat_index(spec, "vertical", 4, 4, "theta")])) < 1e-12


def test_zero_input_zero_derivative(small, omega0):
    assert not np.any(d_forward_output(small, omega0, np.zeros(6), 4))


def test_batch_equals_per_parameter(rng, omega0):
    spec = MeshSpec.random(3, 3, rng)
    w = omega0 * np.array([0.999, 1.001])
    a0 = rng.normal(size=8) + 1j * rng.normal(size=8)
    mj = response_jacobian(spec, w, a0, engine="product")
    for p in range(spec.n_params):
        single = d_forward_output(spec, w, a0, p)
        assert np.max(np.abs(mj.jacobian[:, :, p] - single)) <= 1e-12 * max(1.0, np.max(np.abs(single)))


def test_sparse_engine_agrees_with_product(rng, omega0):
    spec = MeshSpec.random(3, 2, rng)
    w = omega0 * np.array([0.998, 1.0, 1.002])
    a0 = unit_excitation(8, 3)
    prod = response_jacobian(spec, w, a0, engine="product")
    sparse = response_jacobian(spec, w, a0, engine="auto", cond_fallback=0.0)
    assert sparse.sparse_points.tolist() == [0, 1, 2]
    assert prod.sparse_points.size == 0
    np.testing.assert_allclose(sparse.responses, prod.responses, atol=1e-10)
    np.testing.assert_allclose(sparse.a0_out, prod.a0_out, atol=1e-10)
    assert rel(prod.jacobian, sparse.jacobian) < 1e-9
    with pytest.raises(ValueError):
        response_jacobian(spec, w, a0, engine="magic")


def test_jacobian_output_subset(rng, omega0):
    spec = MeshSpec.random(2, 2, rng)
    a0 = unit_excitation(6, 1)
    full = response_jacobian(spec, [omega0], a0)
    sub = response_jacobian(spec, [omega0], a0, outputs=[2, 4])
    np.testing.assert_allclose(sub.jacobian[0], full.jacobian[0, [2, 4]], atol=1e-14)


def grid_and_targets(spec, rng, kind, n_grid=3):
    grid = make_grid(n_grid, (-0.2, 0.2))
    outs = [2, 4] if spec.n_ports > 5 else [2]
    if kind == "complex":
        U = 0.4 * np.exp(1j * rng.uniform(0, 6, (len(outs), n_grid)))
    else:
        U = rng.uniform(0.1, 0.6, (len(outs), n_grid))
    w = rng.uniform(0.5, 2.0, n_grid)
    return grid, TargetSpec(outs, U, unit_excitation(spec.n_ports, 1), weights=w)


@pytest.mark.parametrize("kind", ["complex", "linear_mag", "log_mag"])
def test_cost_gradient_fd(rng, kind):
    spec = MeshSpec.random(3, 3, rng)
    grid, t = grid_and_targets(spec, rng, kind)
    rep = finite_difference_check(spec, grid, t, kind)
    assert rep.normwise_error < 1e-6
    assert rep.indices.size == spec.n_params
    assert np.all(np.isreal(rep.analytic))


def test_pipeline_oracle(rng):
    spec = MeshSpec.random(2, 2, rng)
    grid, t = grid_and_targets(spec, rng, "complex")
    assert finite_difference_check(spec, grid, t, "complex", oracle="pipeline").normwise_error < 1e-6
    with pytest.raises(ValueError):
        finite_difference_check(spec, grid, t, "complex", oracle="guess")


def test_gradient_vanishes_at_exact_fit(rng):
    spec = MeshSpec.random(3, 3, rng)
    grid = make_grid(5, (-0.3, 0.3))
    a0 = unit_excitation(8, 3)
    resp = response_jacobian(spec, grid.points, a0, with_jacobian=False).responses[:, [2, 5]].T
    for kind, vals in (("complex", resp), ("linear_mag", np.abs(resp)), ("log_mag", np.abs(resp))):
        ev = evaluate(spec, grid, TargetSpec([2, 5], vals, a0), kind)
        assert ev.cost < 1e-20
        assert np.max(np.abs(ev.gradient)) < 1e-9


def test_d_cost_single_matches_batch(rng):
    spec = MeshSpec.random(2, 2, rng)
    grid, t = grid_and_targets(spec, rng, "linear_mag")
    g = d_cost(spec, grid, t, "linear_mag")
    for p in (0, 5, 11, 19):
        assert d_cost_single(spec, grid, t, "linear_mag", p) == pytest.approx(g[p], rel=1e-9, abs=1e-12)
    np.testing.assert_array_equal(d_cost(spec, grid, t, "linear_mag", indices=[3, 1]), g[[3, 1]])


def test_log_gradient_consistent_with_linear(rng):
    # one output, one frequency: d ln|a| = d|a| / |a|, so the two gradients differ by a known factor
    spec = MeshSpec.random(2, 2, rng)
    grid = make_grid(2, (-0.1, 0.1))
    a0 = unit_excitation(6, 1)
    a = np.abs(response_jacobian(spec, grid.points, a0, with_jacobian=False).responses[:, 5])
    U = np.full((1, 2), 0.3)
    g_lin = evaluate(spec, grid, TargetSpec([5], U, a0, weights=[1.0, 1e-30]), "linear_mag").gradient
    g_log = evaluate(spec, grid, TargetSpec([5], U, a0, weights=[1.0, 1e-30]), "log_mag").gradient
    factor = (np.log(a[0]) - np.log(0.3)) / (a[0] * (a[0] - 0.3))
    np.testing.assert_allclose(g_log, factor * g_lin, rtol=1e-6, atol=1e-14)


def test_empty_index_set(small):
    grid, t = grid_and_targets(small, np.random.default_rng(0), "complex")
    rep = finite_difference_check(small, grid, t, "complex", indices=[])
    assert rep.indices.size == 0 and rep.max_rel_error == 0.0 and rep.normwise_error == 0.0


def test_step_validation(small):
    grid, t = grid_and_targets(small, np.random.default_rng(0), "complex")
    for step in (0.0, 1e-2):
        with pytest.raises(ValueError):
            finite_difference_check(small, grid, t, "complex", step=step)


def test_step_sweep_is_v_shaped(rng):
    spec = MeshSpec.random(3, 3, rng)
    grid, t = grid_and_targets(spec, rng, "complex")
    err = {h: finite_difference_check(spec, grid, t, "complex", step=h).normwise_error
           for h in (1e-3, 1e-5, 1e-8)}
    assert err[1e-5] < err[1e-3] and err[1e-5] < err[1e-8]


def test_report_json(tmp_path, small):
    grid, t = grid_and_targets(small, np.random.default_rng(0), "complex")
    rep = finite_difference_check(small, grid, t, "complex", indices=[0, 1, 2])
    rep.to_json(tmp_path / "fd.json")
    doc = json.loads((tmp_path / "fd.json").read_text())
    assert [e["index"] for e in doc["entries"]] == [0, 1, 2]
    assert doc["normwise_error"] == rep.normwise_error


def test_report_metrics():
    rep = FDReport(np.arange(3), np.array([1.0, 0.0, -2.0]), np.array([1.0, 1e-9, -2.0 + 2e-9]),
                   relative_error([1.0, 0.0, -2.0], [1.0, 1e-9, -2.0 + 2e-9]), 1e-6)
    assert rep.max_rel_error == pytest.approx(1.0)  # the structural zero
    assert rep.normwise_error == pytest.approx(1e-9)
    assert relative_error(0.0, 0.0) == 0.0


def test_central_difference_on_quadratic():
    g = central_difference(lambda x: float(x @ x), np.array([1.0, -2.0, 0.5]), [0, 1, 2])
    np.testing.assert_allclose(g, [2.0, -4.0, 1.0], rtol=1e-9)


def test_cost_invariant_to_phase_wrap(rng):
    spec = MeshSpec.random(2, 2, rng)
    grid, t = grid_and_targets(spec, rng, "complex")
    wrapped = MeshSpec.uniform(2, 2).with_params(spec.params + 2 * np.pi * rng.integers(-3, 4, spec.n_params))
    assert cost_value(wrapped, grid, t, "complex") == pytest.approx(cost_value(spec, grid, t, "complex"), rel=1e-12)


def test_singular_spec_raises(omega0):
    spec = MeshSpec.uniform(1, 1, phi_v=np.pi)
    with pytest.raises(SingularBarState):
        response_jacobian(spec, [omega0], unit_excitation(4, 1))
