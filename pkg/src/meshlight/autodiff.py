"""Analytic derivatives of mesh responses and costs with respect to every phase.

Two routes are provided. :func:`d_forward_output` follows the textbook chain
for a single parameter: differentiate the owning column factor, rebuild
dT*/dp, then apply the matrix-inverse derivative rule through T22*.
:func:`response_jacobian` computes the same quantity for all parameters at
once by caching, per frequency, the column states ``T^{j-1}...T^0 P y`` and the
left products ``[I, -T12 T22^-1] P^T T^{M-1}...T^{j+1}``; each parameter then
costs one small block product.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SolveFailure
from .mesh import (
    direct_factor,
    MeshSpec,
    ParamIndex,
    _as_omegas,
    assemble_columns,
    direct_responses,
    d_horizontal_block,
    d_vertical_block,
    param_index,
    permutation_indices,
    tbu_matrices,
)
from .objectives import FrequencyGrid, TargetSpec, cost_and_chain

FD_STEP = 1e-6
COND_FALLBACK = 1e6


def _as_index(spec: MeshSpec, p) -> ParamIndex:
    return p if isinstance(p, ParamIndex) else param_index(spec, int(p))


def _d_column_batch(spec, omegas, p: ParamIndex):
    """dT^j/dp for the column owning p, shape (K, D, D)."""
    Fv, Fh, (dFvt, dFvp, dFht, dFhp) = tbu_matrices(spec, omegas, derivatives=True)
    Hd, B, *_ = assemble_columns(spec, Fv, Fh)
    j, r = p.col, p.row
    K, D = omegas.size, 4 * spec.n_rows + 4
    if p.tbu_kind == "vertical":
        dF = (dFvt if p.which == "theta" else dFvp)[:, r, j]
        dB = np.zeros((K, D, D), dtype=complex)
        s = 4 * r + 2
        dB[:, s:s + 4, s:s + 4] = d_vertical_block(Fv[:, r, j], dF)
        return Hd[:, j] @ dB
    dF = (dFht if p.which == "theta" else dFhp)[:, r, j]
    dHd = np.zeros((K, D, D), dtype=complex)
    s = 4 * r
    dHd[:, s:s + 4, s:s + 4] = d_horizontal_block(Fh[:, r, j], dF)
    return dHd @ B[:, j]


def d_column_transfer(spec: MeshSpec, j: int, omega, p):
    """dT^j/dp; exactly zero unless p belongs to column j."""
    w, scalar = _as_omegas(omega)
    p = _as_index(spec, p)
    D = 4 * spec.n_rows + 4
    if p.col != j:
        out = np.zeros((w.size, D, D), dtype=complex)
    else:
        out = _d_column_batch(spec, w, p)
    return out[0] if scalar else out


def d_global(spec: MeshSpec, omega, p):
    """dT*/dp = P^T T^{M-1} .. dT^j/dp .. T^0 P."""
    w, scalar = _as_omegas(omega)
    p = _as_index(spec, p)
    Fv, Fh = tbu_matrices(spec, w)
    Hd, B, *_ = assemble_columns(spec, Fv, Fh)
    Tj = Hd @ B
    acc = _d_column_batch(spec, w, p)
    for k in range(p.col + 1, spec.n_cols):
        acc = Tj[:, k] @ acc
    for k in range(p.col - 1, -1, -1):
        acc = acc @ Tj[:, k]
    perm = permutation_indices(spec.n_rows)
    out = acc[:, perm][:, :, perm]
    return out[0] if scalar else out


def d_forward_output(spec: MeshSpec, omega, a0_in, p):
    """d a_M^I / dp for one parameter via the four-term inverse-derivative formula.

    All T22*^-1 applications are linear solves.
    """
    from .mesh import global_scatter

    w, scalar = _as_omegas(omega)
    gs = global_scatter(spec, w, check_condition=False)
    dts = d_global(spec, w, p)
    n = spec.n_ports
    ts = gs.t_star
    T11, T12, T21, T22 = ts[:, :n, :n], ts[:, :n, n:], ts[:, n:, :n], ts[:, n:, n:]
    d11, d12, d21, d22 = dts[:, :n, :n], dts[:, :n, n:], dts[:, n:, :n], dts[:, n:, n:]
    a0 = np.broadcast_to(np.asarray(a0_in, dtype=complex), (w.size, n))[..., None]
    x = np.linalg.solve(T22, T21 @ a0)  # T22^-1 T21 a0
    out = (d11 @ a0 - d12 @ x
           + T12 @ np.linalg.solve(T22, d22 @ x)
           - T12 @ np.linalg.solve(T22, d21 @ a0))[..., 0]
    return out[0] if scalar else out


@dataclass(eq=False)
class MeshJacobian:
    """Responses ``a_M^I`` (K, 2N+2) and their derivatives (K, 2N+2, P).

    ``sparse_points`` lists the frequency indices that were recomputed with
    the sparse field solve because T22* was too ill-conditioned.
    """

    responses: np.ndarray
    jacobian: np.ndarray
    a0_out: np.ndarray
    min_f12: float
    sparse_points: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    cond_t22: Optional[np.ndarray] = None


def _cond1(A):
    """1-norm condition numbers of a stack of small matrices."""
    try:
        inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return np.full(A.shape[0], np.inf)
    return np.abs(A).sum(axis=1).max(axis=1) * np.abs(inv).sum(axis=1).max(axis=1)


def _sparse_point(spec: MeshSpec, Fv_k, Fh_k, dF_k, a0, aMo, rows_out, with_jacobian):
    """Responses and Jacobian rows at one frequency from the raw port equations.

    The fields come from one sparse LU; derivative rows use the transposed
    factor so that each output row costs one extra triangular solve:
    d a_r / dp = -y_r^T (dA/dp) x with A^T y_r = e_r.
    """
    N, M, n = spec.n_rows, spec.n_cols, spec.n_ports
    lu, (rows, cols, _, fidx, size, (na, _)) = direct_factor(spec, Fv_k, Fh_k)
    rhs = np.zeros(size, dtype=complex)
    rhs[:n] = a0
    rhs[n:2 * n] = aMo
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SolveFailure("direct sparse solve returned non-finite values")
    out_idx = np.arange(n) * (M + 1) + M
    resp, a0_out = x[out_idx], x[na + np.arange(n) * (M + 1)]
    if not with_jacobian:
        return resp, a0_out, None
    E = np.zeros((size, len(rows_out)), dtype=complex)
    E[out_idx[rows_out], np.arange(len(rows_out))] = 1.0
    Y = lu.solve(E, trans="T")
    use = fidx >= 0
    nflat = 4 * N * M + 4 * (N + 1) * M
    # Z[o, f] = sum of y_o[row] x[col] over entries holding F-entry f
    prod = Y[rows[use]].T * x[cols[use]]
    Z = np.zeros((len(rows_out), nflat), dtype=complex)
    np.add.at(Z.T, fidx[use], prod.T)
    Zv = Z[:, :4 * N * M].reshape(-1, N, M, 2, 2)
    Zh = Z[:, 4 * N * M:].reshape(-1, N + 1, M, 2, 2)
    dvt, dvp, dht, dhp = dF_k
    # entries of A are -F, so d a = -y^T dA x = +sum dF * Z
    jac = np.concatenate([
        np.einsum("rjab,orjab->orj", dvt, Zv).reshape(len(rows_out), -1),
        np.einsum("rjab,orjab->orj", dvp, Zv).reshape(len(rows_out), -1),
        np.einsum("rjab,orjab->orj", dht, Zh).reshape(len(rows_out), -1),
        np.einsum("rjab,orjab->orj", dhp, Zh).reshape(len(rows_out), -1),
    ], axis=1)
    return resp, a0_out, jac


def response_jacobian(spec: MeshSpec, omegas, a0_in, aM_out_in=None, with_jacobian=True,
                      outputs: Optional[Sequence[int]] = None, engine: str = "auto",
                      cond_fallback: float = COND_FALLBACK) -> MeshJacobian:
    """Forward responses and, optionally, their derivatives for all parameters.

    ``outputs`` restricts the Jacobian rows to the given output port rows
    (responses always cover every row). ``engine="product"`` always uses the
    cascaded transfer matrices; ``"auto"`` recomputes frequencies whose
    1-norm condition estimate of T22* exceeds ``cond_fallback`` with the sparse
    field solve, where the cascade loses too many digits.
    """
    if engine not in ("auto", "product"):
        raise ValueError(f"engine must be 'auto' or 'product', got {engine!r}")
    w, _ = _as_omegas(omegas)
    N, M = spec.n_rows, spec.n_cols
    n, D, K = spec.n_ports, 4 * N + 4, w.size
    if with_jacobian:
        Fv, Fh, (dFvt, dFvp, dFht, dFhp) = tbu_matrices(spec, w, derivatives=True)
    else:
        Fv, Fh = tbu_matrices(spec, w)
    Hd, B, _, _, min_f12 = assemble_columns(spec, Fv, Fh)
    Tj = Hd @ B
    T = Tj[:, 0]
    for j in range(1, M):
        T = Tj[:, j] @ T
    perm = permutation_indices(N)
    ts = T[:, perm][:, :, perm]
    T11, T12, T21, T22 = ts[:, :n, :n], ts[:, :n, n:], ts[:, n:, :n], ts[:, n:, n:]
    a0 = np.broadcast_to(np.asarray(a0_in, dtype=complex), (K, n))
    aMo = np.zeros((K, n), complex) if aM_out_in is None else np.broadcast_to(
        np.asarray(aM_out_in, dtype=complex), (K, n))
    try:
        a0_out = np.linalg.solve(T22, (aMo - np.einsum("kab,kb->ka", T21, a0))[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"T22* factorization failed: {exc}") from exc
    aM_in = np.einsum("kab,kb->ka", T11, a0) + np.einsum("kab,kb->ka", T12, a0_out)
    rows = np.arange(n) if outputs is None else np.asarray(outputs, dtype=int)
    cond = _cond1(T22)
    bad = np.flatnonzero(cond > cond_fallback) if engine == "auto" else np.empty(0, dtype=int)
    fixes = {}
    for k in bad:
        dF_k = (dFvt[k], dFvp[k], dFht[k], dFhp[k]) if with_jacobian else None
        fixes[k] = _sparse_point(spec, Fv[k], Fh[k], dF_k, a0[k], aMo[k], rows, with_jacobian)
        aM_in[k], a0_out[k] = fixes[k][0], fixes[k][1]
    if not with_jacobian:
        return MeshJacobian(aM_in, None, a0_out, min_f12, bad, cond)

    nr = rows.size
    # W = [I, -T12 T22^-1] restricted to the requested rows, in interleaved coordinates
    Wb = np.zeros((K, nr, D), dtype=complex)
    Wb[:, np.arange(nr), rows] = 1.0
    T12r = T12[:, rows, :]
    Wb[:, :, n:] = -np.swapaxes(np.linalg.solve(np.swapaxes(T22, 1, 2), np.swapaxes(T12r, 1, 2)), 1, 2)
    W = np.empty_like(Wb)
    W[:, :, perm] = Wb

    # column states s_j = T^{j-1}..T^0 P y
    s = np.empty((K, D), dtype=complex)
    s[:, 0::2] = a0
    s[:, 1::2] = a0_out
    states = [s]
    for j in range(M - 1):
        states.append(np.einsum("kab,kb->ka", Tj[:, j], states[-1]))

    Jvt = np.empty((K, nr, N, M), complex)
    Jvp = np.empty_like(Jvt)
    Jht = np.empty((K, nr, N + 1, M), complex)
    Jhp = np.empty_like(Jht)
    Q = W  # W P^T T^{M-1} ... T^{j+1}
    for j in range(M - 1, -1, -1):
        sj = states[j]
        R = Q @ Hd[:, j]
        # vertical TBUs: only the V_r block of B changes
        Rv = R[:, :, 2:D - 2].reshape(K, nr, N, 4)
        sv = sj[:, 2:D - 2].reshape(K, N, 4)
        Fvj = Fv[:, :, j]
        for dF, out in ((dFvt, Jvt), (dFvp, Jvp)):
            dv = np.einsum("knab,knb->kna", d_vertical_block(Fvj, dF[:, :, j]), sv)
            out[..., j] = np.einsum("kpna,kna->kpn", Rv, dv)
        # horizontal TBUs: only the H_r block of Hd changes
        u = np.einsum("kab,kb->ka", B[:, j], sj).reshape(K, N + 1, 4)
        Qh = Q.reshape(K, nr, N + 1, 4)
        Fhj = Fh[:, :, j]
        for dF, out in ((dFht, Jht), (dFhp, Jhp)):
            dh = np.einsum("knab,knb->kna", d_horizontal_block(Fhj, dF[:, :, j]), u)
            out[..., j] = np.einsum("kpna,kna->kpn", Qh, dh)
        Q = Q @ Tj[:, j]
    jac = np.concatenate([Jvt.reshape(K, nr, -1), Jvp.reshape(K, nr, -1),
                          Jht.reshape(K, nr, -1), Jhp.reshape(K, nr, -1)], axis=2)
    for k, (_, _, jk) in fixes.items():
        jac[k] = jk
    return MeshJacobian(aM_in, jac, a0_out, min_f12, bad, cond)


@dataclass
class CostEvaluation:
    cost: float
    gradient: Optional[np.ndarray]
    responses: np.ndarray  # (n_outputs, K)
    n_clamped: int
    min_f12: float
    sparse_points: int = 0


def evaluate(spec: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
             gradient=True, engine: str = "auto") -> CostEvaluation:
    """Cost (and its full gradient over the canonical parameter vector)."""
    targets.check_grid(grid)
    mj = response_jacobian(spec, grid.points, targets.excitation, with_jacobian=gradient,
                           outputs=targets.outputs, engine=engine)
    resp = mj.responses[:, targets.outputs].T  # (n_out, K)
    cost, g, nclamp = cost_and_chain(cost_kind, resp, targets)
    grad = None
    if gradient:
        # g is (n_out, K); jacobian is (K, n_out, P)
        grad_c = np.einsum("ok,kop->p", g, mj.jacobian)
        grad = grad_c.real.copy()
    return CostEvaluation(cost, grad, resp, nclamp, mj.min_f12, len(mj.sparse_points))


def d_cost(spec: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
           indices=None) -> np.ndarray:
    """Gradient of the cost with respect to the canonical parameters.

    ``indices`` selects a subset; None returns all 2(2N+1)M entries.
    """
    grad = evaluate(spec, grid, targets, cost_kind).gradient
    return grad if indices is None else grad[np.asarray(indices, dtype=int)]


def d_cost_single(spec: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str, p) -> float:
    """Gradient entry for one parameter, built from :func:`d_forward_output` alone."""
    mj = response_jacobian(spec, grid.points, targets.excitation, with_jacobian=False)
    resp = mj.responses[:, targets.outputs].T
    _, g, _ = cost_and_chain(cost_kind, resp, targets)
    da = d_forward_output(spec, grid.points, targets.excitation, p)[:, targets.outputs].T
    return float(np.real(np.sum(g * da)))


def cost_value(spec, grid, targets, cost_kind) -> float:
    return evaluate(spec, grid, targets, cost_kind, gradient=False).cost


@dataclass
class FDReport:
    """Analytic vs central-difference gradient entries.

    ``rel_error`` is per entry. ``normwise_error`` is
    ``max|a - f| / max|a|`` over the checked entries, which is insensitive to
    entries that vanish by structure.
    """

    indices: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    step: float
    oracle: str = "direct"

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def mean_rel_error(self) -> float:
        return float(self.rel_error.mean()) if self.rel_error.size else 0.0

    @property
    def normwise_error(self) -> float:
        if not self.analytic.size:
            return 0.0
        scale = np.max(np.abs(self.analytic))
        diff = np.max(np.abs(self.analytic - self.numeric))
        return float(diff / scale) if scale > 0 else float(diff)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "oracle": self.oracle,
            "normwise_error": self.normwise_error,
            "max_rel_error": self.max_rel_error,
            "mean_rel_error": self.mean_rel_error,
            "entries": [
                {"index": int(i), "analytic": float(a), "numeric": float(f), "rel_error": float(e)}
                for i, a, f, e in zip(self.indices, self.analytic, self.numeric, self.rel_error)
            ],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def relative_error(analytic, numeric, scale=None):
    """|a - f| / max(|a|, |f|, scale); ``scale`` guards entries that are exactly zero."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    if scale is not None:
        denom = np.maximum(denom, scale)
    denom = np.where(denom == 0, 1.0, denom)
    return np.abs(analytic - numeric) / denom


def central_difference(fun, x, indices, step=FD_STEP):
    x = np.asarray(x, dtype=float)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[k] = (fun(xp) - fun(xm)) / (2 * step)
    return out


def direct_cost_value(spec: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str) -> float:
    """Cost computed from the sparse field solve instead of transfer products."""
    resp = direct_responses(spec, grid.points, targets.excitation)[:, targets.outputs].T
    return cost_and_chain(cost_kind, resp, targets)[0]


def finite_difference_check(spec: MeshSpec, grid: FrequencyGrid, targets: TargetSpec,
                            cost_kind: str, step: float = FD_STEP, indices=None,
                            oracle: str = "direct") -> FDReport:
    """Compare analytic gradient entries with central differences of the cost.

    ``oracle="direct"`` differences the sparse field solve, whose roundoff is
    far below the cascaded transfer product's; ``"pipeline"`` differences the
    same code path that produced the analytic gradient.
    """
    if not 0 < step <= 1e-3:
        raise ValueError(f"step must lie in (0, 1e-3], got {step}")
    if oracle not in ("direct", "pipeline"):
        raise ValueError(f"oracle must be 'direct' or 'pipeline', got {oracle!r}")
    indices = np.arange(spec.n_params) if indices is None else np.asarray(indices, dtype=int)
    if indices.size == 0:
        return FDReport(indices, np.empty(0), np.empty(0), np.empty(0), step, oracle)
    analytic = d_cost(spec, grid, targets, cost_kind)[indices]
    value = direct_cost_value if oracle == "direct" else cost_value

    def fun(x):
        # phases are not re-wrapped here so that x +- step stays a straight line
        return value(spec.with_params(x), grid, targets, cost_kind)

    numeric = central_difference(fun, spec.params, indices, step)
    return FDReport(indices, analytic, numeric, relative_error(analytic, numeric), step, oracle)
