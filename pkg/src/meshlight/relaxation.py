"""Closed-form responses of horizontally relaxed meshes.

With every horizontal TBU held in the bar state (theta=0, phi=pi) light never
leaves its row, so each row of an N x M mesh is an independent 1 x M chain of
vertical TBUs joined by pure delays. The top and bottom lines become M delay
elements and each row's cross response ``xi_M`` follows from a product of 2x2
coefficient matrices. Everything here assumes lossless waveguides (alpha = 1);
the closed forms carry no loss term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRow
from .mesh import MeshSpec

Q_TOL = 1e-12
RELAX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RelaxedRow:
    """Vertical phases of one relaxed row plus the per-TBU delay ``tau`` (s)."""

    theta: np.ndarray
    phi: np.ndarray
    tau: float

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        ph = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if th.shape != ph.shape or th.ndim != 1 or th.size == 0:
            raise ValueError("theta and phi must be equal-length 1-D arrays")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "phi", ph)

    @property
    def n_cols(self) -> int:
        return self.theta.size

    @property
    def p(self) -> np.ndarray:
        return np.exp(-1j * self.theta) - np.exp(-1j * self.phi)

    @property
    def q(self) -> np.ndarray:
        return -np.exp(-1j * self.theta) - np.exp(-1j * self.phi)


def coefficients(row: RelaxedRow, omega):
    """``(c, d, e, f)`` per vertical TBU, each of shape (K, M)."""
    p, q = row.p, row.q
    bad = np.flatnonzero(np.abs(q) < Q_TOL)
    if bad.size:
        raise DegenerateRow(f"q_m vanishes (phi = theta + pi) at column(s) {bad.tolist()}")
    wt = np.atleast_1d(np.asarray(omega, dtype=float))[:, None] * row.tau
    c = 1j * np.exp(-2j * wt) * (p ** 2 - q ** 2) / (2 * q)
    d = -1j * np.exp(-1j * wt) * p / q
    e = 1j * np.exp(1j * wt) * p / q
    f = -2j * np.exp(2j * wt) / q
    return c, d, e, f


def xi_ratio(row: RelaxedRow, omega, order: str = "ascending"):
    """Complex ``prod(cf - de) / ([0 1] prod(C_m) [0 1]^T)`` over the row.

    ``order="ascending"`` multiplies ``C_0 C_1 ... C_{M-1}``; ``"descending"``
    the reverse. Only the magnitude is physically pinned down. Returns
    ``(ratio, numerator)`` with shape (K,).
    """
    if order not in ("ascending", "descending"):
        raise ValueError(f"order must be 'ascending' or 'descending', got {order!r}")
    c, d, e, f = coefficients(row, omega)
    C = np.stack([np.stack([c, d], -1), np.stack([e, f], -1)], -2)  # (K, M, 2, 2)
    K, M = c.shape
    idx = range(M) if order == "ascending" else range(M - 1, -1, -1)
    prod = np.broadcast_to(np.eye(2, dtype=complex), (K, 2, 2)).copy()
    for m in idx:
        prod = prod @ C[:, m]
    num = np.prod(c * f - d * e, axis=1)
    return num / prod[:, 1, 1], num


def xi_magnitude(row: RelaxedRow, omega, order: str = "ascending"):
    """|xi_M| of a relaxed 1 x M row at each frequency."""
    ratio, _ = xi_ratio(row, omega, order)
    return np.abs(ratio)


def xi1_closed_form(row: RelaxedRow, omega):
    """|q_0 / 2| (frequency independent)."""
    return np.full(np.atleast_1d(omega).shape, abs(row.q[0]) / 2)


def xi2_closed_form(row: RelaxedRow, omega):
    """|q0 q1 e^{-j4wt}| / |-4 + p0 p1 e^{-j4wt}|."""
    p, q = row.p, row.q
    z = np.exp(-4j * np.atleast_1d(np.asarray(omega, dtype=float)) * row.tau)
    return np.abs(q[0] * q[1] * z) / np.abs(-4 + p[0] * p[1] * z)


def is_relaxed(spec: MeshSpec, atol: float = RELAX_TOL) -> bool:
    """True when every horizontal TBU sits at (theta, phi) = (0, pi) mod 2 pi."""
    def near(x, v):
        return np.all(np.abs(np.angle(np.exp(1j * (x - v)))) < atol)
    return bool(near(spec.theta_h, 0.0) and near(spec.phi_h, np.pi))


def relaxed(spec: MeshSpec) -> MeshSpec:
    """Copy of ``spec`` with all horizontal TBUs placed in the relaxed bar state."""
    x = spec.params.copy()
    nv, nh = spec.theta_v.size, spec.theta_h.size
    x[2 * nv:2 * nv + nh] = 0.0
    x[2 * nv + nh:] = np.pi
    return spec.with_params(x)


def rows_of(spec: MeshSpec, tau=None):
    """One :class:`RelaxedRow` per mesh row."""
    if tau is None:
        tau = _uniform_tau(spec)
    return [RelaxedRow(spec.theta_v[r], spec.phi_v[r], tau) for r in range(spec.n_rows)]


def _uniform_tau(spec: MeshSpec) -> float:
    lengths = np.concatenate([spec.length_v.ravel(), spec.length_h.ravel()])
    if not np.allclose(lengths, lengths[0], rtol=0, atol=0):
        raise ValueError("closed forms need one common TBU length")
    if spec.constants.dispersion_slope:
        raise ValueError("closed forms assume a frequency-independent delay")
    return float(spec.constants.n_eff * lengths[0] / spec.constants.c)


def relaxed_mesh_response(spec: MeshSpec, omega):
    """Predicted forward map G* of a relaxed, lossless mesh, shape (K, 2N+2, 2N+2).

    Top and bottom lines carry ``+-exp(-j M w tau)``; row n's middle ports
    (2n-1, 2n) carry ``xi_M`` on the diagonal for even M and ``-xi_M`` /
    ``xi_M`` off the diagonal for odd M. The global phase of ``xi_M`` is not
    fixed by the closed form, so only the magnitude of those entries is
    meaningful.
    """
    if not is_relaxed(spec):
        raise ValueError("spec is not horizontally relaxed")
    if not (np.all(spec.alpha_v == 1.0) and np.all(spec.alpha_h == 1.0)):
        raise ValueError("closed forms hold for lossless meshes (alpha = 1) only")
    if not spec.ideal_couplers:
        raise ValueError("closed forms assume ideal 50:50 couplers")
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    tau = _uniform_tau(spec)
    N, M, n = spec.n_rows, spec.n_cols, spec.n_ports
    G = np.zeros((w.size, n, n), dtype=complex)
    line = np.exp(-1j * M * w * tau)
    G[:, 0, 0] = line
    G[:, n - 1, n - 1] = (-1) ** M * line
    for r, row in enumerate(rows_of(spec, tau)):
        xi, _ = xi_ratio(row, w)
        u, v = 2 * r + 1, 2 * r + 2
        if M % 2:
            G[:, u, v] = -xi
            G[:, v, u] = xi
        else:
            G[:, u, u] = xi
            G[:, v, v] = xi
    return G[0] if np.ndim(omega) == 0 else G
