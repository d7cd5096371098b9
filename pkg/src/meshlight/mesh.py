"""Square-mesh scattering solver.

Port naming follows the usual square-mesh convention: port rows ``n = 0..2N+1``
and port columns ``m = 0..M``. ``A`` ports sit on the left edge of a column of
vertical TBUs, ``B`` ports on its right edge, and the ``I``/``O`` direction is
into/out of the vertical TBU. Column ``M`` has no TBUs (the right-most column
of the physical mesh is disabled) and rows 0 and 2N+1 are ideal straight
connections.

Array indexing used throughout:

* vertical TBU ``[r, j]`` (``r = 0..N-1``) couples port rows ``2r+1`` and ``2r+2``
  in column ``j``;
* horizontal TBU ``[r, j]`` (``r = 0..N``) couples port rows ``2r`` and ``2r+1``
  between columns ``j`` and ``j+1``;
* a column state vector is interleaved ``[a_0^I, a_0^O, a_1^I, a_1^O, ...]``
  (length ``4N+4``), and the permuted "blocked" form is ``[all I; all O]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .compact_model import (
    TWO_PI,
    PhysicalConstants,
    TbuParams,
    ideal_core,
    nonideal_core,
    propagation_factor,
)
from .errors import IllConditionedWarning, SingularBarState, SolveFailure

SINGULAR_TOL = 1e-8
WARN_F12 = 1e-3
COND_WARN = 1e10

BOUNDARY = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


# -- mesh description ----------------------------------------------------------

def _arr(value, shape, dtype=float):
    a = np.array(np.broadcast_to(np.asarray(value, dtype=dtype), shape))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MeshSpec:
    """An N x M square mesh: per-TBU phases and physical parameters.

    Per-TBU fields are numpy arrays of shape ``(N, M)`` for vertical TBUs and
    ``(N+1, M)`` for horizontal TBUs. Scalars given at construction are
    broadcast. Phases are reduced into [0, 2*pi).
    """

    n_rows: int
    n_cols: int
    theta_v: np.ndarray = 0.0
    phi_v: np.ndarray = 0.0
    theta_h: np.ndarray = 0.0
    phi_h: np.ndarray = 0.0
    alpha_v: np.ndarray = 0.99
    alpha_h: np.ndarray = 0.99
    length_v: np.ndarray = 250e-6
    length_h: np.ndarray = 250e-6
    eta1_v: np.ndarray = 0.0
    eta2_v: np.ndarray = 0.0
    eta1_h: np.ndarray = 0.0
    eta2_h: np.ndarray = 0.0
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __post_init__(self):
        N, M = int(self.n_rows), int(self.n_cols)
        if N < 1 or M < 1:
            raise ValueError(f"mesh size must be positive, got {N}x{M}")
        object.__setattr__(self, "n_rows", N)
        object.__setattr__(self, "n_cols", M)
        sv, sh = (N, M), (N + 1, M)
        for name in ("theta_v", "phi_v"):
            object.__setattr__(self, name, _arr(np.mod(getattr(self, name), TWO_PI), sv))
        for name in ("theta_h", "phi_h"):
            object.__setattr__(self, name, _arr(np.mod(getattr(self, name), TWO_PI), sh))
        for name in ("alpha_v", "length_v", "eta1_v", "eta2_v"):
            object.__setattr__(self, name, _arr(getattr(self, name), sv))
        for name in ("alpha_h", "length_h", "eta1_h", "eta2_h"):
            object.__setattr__(self, name, _arr(getattr(self, name), sh))
        for a in (self.alpha_v, self.alpha_h):
            if np.any(a <= 0) or np.any(a > 1):
                raise ValueError("alpha must lie in (0, 1]")
        for a in (self.length_v, self.length_h):
            if np.any(a <= 0):
                raise ValueError("length must be positive")

    # sizes
    @property
    def n_ports(self) -> int:
        """Ports per column side, 2N+2."""
        return 2 * self.n_rows + 2

    @property
    def n_params(self) -> int:
        return 2 * (2 * self.n_rows + 1) * self.n_cols

    @property
    def ideal_couplers(self) -> bool:
        return not (np.any(self.eta1_v) or np.any(self.eta2_v)
                    or np.any(self.eta1_h) or np.any(self.eta2_h))

    # canonical parameter vector: theta_v, phi_v, theta_h, phi_h, each row-major
    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.theta_v.ravel(), self.phi_v.ravel(),
                               self.theta_h.ravel(), self.phi_h.ravel()])

    def with_params(self, x) -> "MeshSpec":
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {x.shape}")
        N, M = self.n_rows, self.n_cols
        nv, nh = N * M, (N + 1) * M
        return replace(
            self,
            theta_v=x[:nv].reshape(N, M),
            phi_v=x[nv:2 * nv].reshape(N, M),
            theta_h=x[2 * nv:2 * nv + nh].reshape(N + 1, M),
            phi_h=x[2 * nv + nh:].reshape(N + 1, M),
        )

    def vertical_tbu(self, r: int, j: int) -> TbuParams:
        return TbuParams(self.theta_v[r, j], self.phi_v[r, j], self.alpha_v[r, j],
                         self.length_v[r, j], self.eta1_v[r, j], self.eta2_v[r, j])

    def horizontal_tbu(self, r: int, j: int) -> TbuParams:
        return TbuParams(self.theta_h[r, j], self.phi_h[r, j], self.alpha_h[r, j],
                         self.length_h[r, j], self.eta1_h[r, j], self.eta2_h[r, j])

    @property
    def vertical_tbus(self) -> np.ndarray:
        out = np.empty((self.n_rows, self.n_cols), dtype=object)
        for r, j in np.ndindex(out.shape):
            out[r, j] = self.vertical_tbu(r, j)
        return out

    @property
    def horizontal_tbus(self) -> np.ndarray:
        out = np.empty((self.n_rows + 1, self.n_cols), dtype=object)
        for r, j in np.ndindex(out.shape):
            out[r, j] = self.horizontal_tbu(r, j)
        return out

    @classmethod
    def uniform(cls, n_rows, n_cols, alpha=0.99, length=250e-6, constants=None, **kw):
        return cls(n_rows, n_cols, alpha_v=alpha, alpha_h=alpha, length_v=length,
                   length_h=length, constants=constants or PhysicalConstants(), **kw)

    @classmethod
    def random(cls, n_rows, n_cols, rng=None, alpha=0.99, length=250e-6, constants=None,
               min_f12=1e-3):
        """Uniform random phases, nudged away from vertical bar states."""
        rng = np.random.default_rng(rng)
        spec = cls.uniform(n_rows, n_cols, alpha, length, constants)
        x = rng.uniform(0.0, TWO_PI, spec.n_params)
        return spec.with_params(guard_bar_states(spec, x, min_f12))

    def to_dict(self) -> dict:
        d = {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "params": self.params.tolist(),
            "constants": self.constants.to_dict(),
        }
        for name in ("alpha", "length", "eta1", "eta2"):
            for kind in ("v", "h"):
                a = getattr(self, f"{name}_{kind}")
                d[f"{name}_{kind}"] = float(a.flat[0]) if np.all(a == a.flat[0]) else a.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MeshSpec":
        kw = {k: np.asarray(d[k], dtype=float) for k in d
              if k.split("_")[0] in ("alpha", "length", "eta1", "eta2")}
        spec = cls(int(d["n_rows"]), int(d["n_cols"]),
                   constants=PhysicalConstants.from_dict(d.get("constants", {})), **kw)
        if "params" in d:
            spec = spec.with_params(np.asarray(d["params"], dtype=float))
        return spec


@dataclass(frozen=True)
class ParamIndex:
    """Location of one phase shifter in the canonical parameter vector."""

    tbu_kind: str  # "vertical" | "horizontal"
    row: int
    col: int
    which: str  # "theta" | "phi"
    flat_index: int


def param_index(spec: MeshSpec, flat: int) -> ParamIndex:
    N, M = spec.n_rows, spec.n_cols
    if not 0 <= flat < spec.n_params:
        raise IndexError(f"parameter index {flat} out of range [0, {spec.n_params})")
    nv, nh = N * M, (N + 1) * M
    if flat < 2 * nv:
        which = "theta" if flat < nv else "phi"
        r, j = divmod(flat % nv, M)
        return ParamIndex("vertical", r, j, which, flat)
    k = flat - 2 * nv
    which = "theta" if k < nh else "phi"
    r, j = divmod(k % nh, M)
    return ParamIndex("horizontal", r, j, which, flat)


def flat_index(spec: MeshSpec, tbu_kind: str, row: int, col: int, which: str) -> int:
    N, M = spec.n_rows, spec.n_cols
    nv, nh = N * M, (N + 1) * M
    if tbu_kind == "vertical":
        return (0 if which == "theta" else nv) + row * M + col
    return 2 * nv + (0 if which == "theta" else nh) + row * M + col


def guard_bar_states(spec: MeshSpec, x, min_f12=1e-3, nudge=1e-2):
    """Shift vertical theta values sitting within ``min_f12`` of a bar state.

    |F12| is proportional to |cos((theta - phi)/2)|, which vanishes when
    theta - phi = pi (mod 2*pi).
    """
    x = np.array(x, dtype=float)
    nv = spec.n_rows * spec.n_cols
    th, ph = x[:nv], x[nv:2 * nv]
    bad = np.abs(np.cos((th - ph) / 2)) < min_f12
    th[bad] += nudge
    return x


@dataclass(frozen=True)
class PortId:
    """A port ``A``/``B`` at (row, col) with direction ``I``/``O``."""

    side: str
    row: int
    col: int
    direction: str

    def __str__(self):
        return f"{self.side}_{{{self.row},{self.col}}}^{self.direction}"


# -- block transforms -------------------------------------------------------------

def _entries(F):
    return F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1]


def vertical_block(F, singular_tol=SINGULAR_TOL):
    """4x4 map V from ``[a_{2i-1}^I, a_{2i-1}^O, a_{2i}^I, a_{2i}^O]`` to the b ports.

    Raises SingularBarState when |F12| <= singular_tol.
    """
    F = np.asarray(F, dtype=complex)
    f11, f12, f21, f22 = _entries(F)
    if np.any(np.abs(f12) <= singular_tol):
        raise SingularBarState(f"|F12| <= {singular_tol}: vertical TBU in bar state",
                               f12=float(np.min(np.abs(f12))))
    V = np.zeros(F.shape[:-2] + (4, 4), dtype=complex)
    V[..., 0, 0] = V[..., 2, 2] = -f11 / f12
    V[..., 1, 1] = V[..., 3, 3] = f22 / f12
    V[..., 0, 3] = V[..., 2, 1] = 1.0 / f12
    V[..., 1, 2] = V[..., 3, 0] = f21 - f11 * f22 / f12
    return V


def d_vertical_block(F, dF):
    """Derivative of :func:`vertical_block` given dF (quotient rule)."""
    f11, f12, f21, f22 = _entries(F)
    d11, d12, d21, d22 = _entries(dF)
    inv2 = 1.0 / (f12 * f12)
    dV = np.zeros(np.broadcast_shapes(F.shape, dF.shape)[:-2] + (4, 4), dtype=complex)
    dV[..., 0, 0] = dV[..., 2, 2] = -(d11 * f12 - f11 * d12) * inv2
    dV[..., 1, 1] = dV[..., 3, 3] = (d22 * f12 - f22 * d12) * inv2
    dV[..., 0, 3] = dV[..., 2, 1] = -d12 * inv2
    dV[..., 1, 2] = dV[..., 3, 0] = d21 - ((d11 * f22 + f11 * d22) * f12 - f11 * f22 * d12) * inv2
    return dV


def horizontal_block(F):
    """4x4 map H from ``[b_{2i}^I, b_{2i}^O, b_{2i+1}^I, b_{2i+1}^O]`` at column j
    to the a ports at column j+1."""
    F = np.asarray(F, dtype=complex)
    f11, f12, f21, f22 = _entries(F)
    det = f11 * f22 - f12 * f21
    H = np.zeros(F.shape[:-2] + (4, 4), dtype=complex)
    H[..., 0, 1] = f11
    H[..., 0, 3] = f12
    H[..., 2, 1] = f21
    H[..., 2, 3] = f22
    H[..., 1, 0] = f22 / det
    H[..., 1, 2] = -f12 / det
    H[..., 3, 0] = -f21 / det
    H[..., 3, 2] = f11 / det
    return H


def d_horizontal_block(F, dF):
    f11, f12, f21, f22 = _entries(F)
    d11, d12, d21, d22 = _entries(dF)
    det = f11 * f22 - f12 * f21
    ddet = d11 * f22 + f11 * d22 - d12 * f21 - f12 * d21
    inv2 = 1.0 / (det * det)
    dH = np.zeros(np.broadcast_shapes(F.shape, dF.shape)[:-2] + (4, 4), dtype=complex)
    dH[..., 0, 1] = d11
    dH[..., 0, 3] = d12
    dH[..., 2, 1] = d21
    dH[..., 2, 3] = d22
    dH[..., 1, 0] = (d22 * det - f22 * ddet) * inv2
    dH[..., 1, 2] = -(d12 * det - f12 * ddet) * inv2
    dH[..., 3, 0] = -(d21 * det - f21 * ddet) * inv2
    dH[..., 3, 2] = (d11 * det - f11 * ddet) * inv2
    return dH


def boundary_block():
    """Ideal top/bottom line: ``[b^I, b^O] = [[0, 1], [1, 0]] [a^I, a^O]``."""
    return BOUNDARY.copy()


def permutation_indices(n_rows: int) -> np.ndarray:
    """``perm`` such that ``x_blocked = x_interleaved[perm]``."""
    D = 4 * n_rows + 4
    return np.concatenate([np.arange(0, D, 2), np.arange(1, D, 2)])


def permutation_matrix(n_rows: int) -> np.ndarray:
    """P with ``x_interleaved = P @ x_blocked`` (so ``T* = P.T @ T @ P``)."""
    perm = permutation_indices(n_rows)
    P = np.zeros((perm.size, perm.size))
    P[perm, np.arange(perm.size)] = 1.0
    return P


# -- vectorized evaluation -----------------------------------------------------------

def _as_omegas(omega):
    w = np.asarray(omega, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    if np.any(w <= 0):
        raise ValueError("angular frequencies must be positive")
    return w, scalar


def tbu_matrices(spec: MeshSpec, omegas, derivatives=False):
    """F for every TBU at every frequency.

    Returns ``(Fv, Fh)`` of shapes ``(K, N, M, 2, 2)`` and ``(K, N+1, M, 2, 2)``;
    with ``derivatives=True`` also ``(dFv_theta, dFv_phi, dFh_theta, dFh_phi)``.
    """
    c = spec.constants
    out = []
    for kind in ("v", "h"):
        th, ph = getattr(spec, f"theta_{kind}"), getattr(spec, f"phi_{kind}")
        e1, e2 = getattr(spec, f"eta1_{kind}"), getattr(spec, f"eta2_{kind}")
        if np.any(e1) or np.any(e2):
            S, dSt, dSp = nonideal_core(th, ph, e1, e2)
        else:
            S, dSt, dSp = ideal_core(th, ph)
        g = propagation_factor(getattr(spec, f"alpha_{kind}"), getattr(spec, f"length_{kind}"),
                               c, omegas[:, None, None])[..., None, None]
        out.append((S * g, dSt * g, dSp * g))
    (Fv, dFvt, dFvp), (Fh, dFht, dFhp) = out
    if derivatives:
        return Fv, Fh, (dFvt, dFvp, dFht, dFhp)
    return Fv, Fh


def _check_vertical(Fv, singular_tol):
    mag = np.abs(Fv[..., 0, 1])
    if np.any(mag <= singular_tol):
        k, r, j = np.unravel_index(np.argmin(mag), mag.shape)
        raise SingularBarState(
            f"vertical TBU (row {r}, col {j}) is in the bar state: |F12| = {mag[k, r, j]:.3g}",
            location=(int(r), int(j)), f12=float(mag[k, r, j]))
    return float(mag.min())


def assemble_columns(spec: MeshSpec, Fv, Fh, singular_tol=SINGULAR_TOL):
    """Block-diagonal factors of every column transfer.

    Returns ``(Hd, B, V, H, min_f12)`` with ``Hd``/``B`` shaped ``(K, M, D, D)``:
    ``T^j = Hd[:, j] @ B[:, j]``.
    """
    N = spec.n_rows
    K, M = Fv.shape[0], spec.n_cols
    D = 4 * N + 4
    min_f12 = _check_vertical(Fv, singular_tol)
    V = vertical_block(Fv, singular_tol=0.0)  # (K, N, M, 4, 4)
    H = horizontal_block(Fh)  # (K, N+1, M, 4, 4)
    B = np.zeros((K, M, D, D), dtype=complex)
    B[..., 0:2, 0:2] = BOUNDARY
    B[..., D - 2:, D - 2:] = BOUNDARY
    Hd = np.zeros((K, M, D, D), dtype=complex)
    for r in range(N):
        s = 4 * r + 2
        B[..., s:s + 4, s:s + 4] = V[:, r]
    for r in range(N + 1):
        s = 4 * r
        Hd[..., s:s + 4, s:s + 4] = H[:, r]
    return Hd, B, V, H, min_f12


def column_transfer(spec: MeshSpec, j: int, omega, singular_tol=SINGULAR_TOL):
    """T^j, mapping the a ports of column j to those of column j+1."""
    if not 0 <= j < spec.n_cols:
        raise IndexError(f"column {j} out of range [0, {spec.n_cols})")
    w, scalar = _as_omegas(omega)
    Fv, Fh = tbu_matrices(spec, w)
    Hd, B, *_ = assemble_columns(spec, Fv, Fh, singular_tol)
    T = Hd[:, j] @ B[:, j]
    return T[0] if scalar else T


def _lu_cond(A):
    """1-norm condition estimate of A from its LU factorization."""
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0:
        return np.inf
    return 1.0 / rcond


@dataclass(eq=False)
class GlobalScatter:
    """T* = P^T (T^{M-1} ... T^0) P at one or more frequencies.

    ``t_star`` has shape ``(K, D, D)``; ``omegas`` shape ``(K,)``. Column factors
    are kept so that derivative code can reuse them.
    """

    spec: MeshSpec
    omegas: np.ndarray
    t_star: np.ndarray
    columns: np.ndarray  # (K, M, D, D) T^j
    hd: np.ndarray
    b: np.ndarray
    fv: np.ndarray
    fh: np.ndarray
    min_f12: float
    scalar: bool = False

    @property
    def n_ports(self) -> int:
        return self.spec.n_ports

    def _block(self, r, c):
        n = self.n_ports
        blk = self.t_star[:, r * n:(r + 1) * n, c * n:(c + 1) * n]
        return blk[0] if self.scalar else blk

    @property
    def t11(self):
        return self._block(0, 0)

    @property
    def t12(self):
        return self._block(0, 1)

    @property
    def t21(self):
        return self._block(1, 0)

    @property
    def t22(self):
        return self._block(1, 1)

    @cached_property
    def condition_estimates(self) -> np.ndarray:
        n = self.n_ports
        return np.array([_lu_cond(t[n:, n:]) for t in self.t_star])

    @property
    def condition_estimate_T22(self) -> float:
        """Worst 1-norm condition estimate of T22* over the held frequencies."""
        return float(np.max(self.condition_estimates))


def global_scatter(spec: MeshSpec, omega, singular_tol=SINGULAR_TOL, cond_warn=COND_WARN,
                   check_condition=True) -> GlobalScatter:
    """Assemble T* for one frequency (scalar ``omega``) or a batch."""
    w, scalar = _as_omegas(omega)
    Fv, Fh = tbu_matrices(spec, w)
    Hd, B, _, _, min_f12 = assemble_columns(spec, Fv, Fh, singular_tol)
    Tj = Hd @ B
    T = Tj[:, 0]
    for j in range(1, spec.n_cols):
        T = Tj[:, j] @ T
    perm = permutation_indices(spec.n_rows)
    t_star = T[:, perm][:, :, perm]
    gs = GlobalScatter(spec, w, t_star, Tj, Hd, B, Fv, Fh, min_f12, scalar)
    if min_f12 < WARN_F12:
        warnings.warn(f"vertical TBU close to bar state (min |F12| = {min_f12:.2e})",
                      IllConditionedWarning, stacklevel=2)
    if check_condition and gs.condition_estimate_T22 > cond_warn:
        warnings.warn(f"T22* condition estimate {gs.condition_estimate_T22:.2e}",
                      IllConditionedWarning, stacklevel=2)
    return gs


def _solve(A, b):
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"T22* factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolveFailure("non-finite solution of T22* system")
    return x


def _batched(gs: GlobalScatter, v):
    v = np.asarray(v, dtype=complex)
    if v.ndim == 1:
        v = np.broadcast_to(v, (gs.omegas.size, v.size))
    return v


def mesh_response(gs: GlobalScatter, a0_in, aM_out_in=None):
    """Solve for the outputs ``(a_M^I, a_0^O)`` given ``a_0^I`` and ``a_M^O``."""
    n = gs.n_ports
    ts = gs.t_star
    a0 = _batched(gs, a0_in)
    aMo = np.zeros_like(a0) if aM_out_in is None else _batched(gs, aM_out_in)
    T11, T12, T21, T22 = ts[:, :n, :n], ts[:, :n, n:], ts[:, n:, :n], ts[:, n:, n:]
    rhs = aMo - np.einsum("kab,kb->ka", T21, a0)
    a0_out = _solve(T22, rhs[..., None])[..., 0]
    aM_in = np.einsum("kab,kb->ka", T11, a0) + np.einsum("kab,kb->ka", T12, a0_out)
    if gs.scalar:
        return aM_in[0], a0_out[0]
    return aM_in, a0_out


def forward_map(gs: GlobalScatter):
    """G* = T11* - T12* T22*^-1 T21*, computed with a solve, never an inverse."""
    n = gs.n_ports
    ts = gs.t_star
    G = ts[:, :n, :n] - ts[:, :n, n:] @ _solve(ts[:, n:, n:], ts[:, n:, :n])
    return G[0] if gs.scalar else G


@dataclass
class MeshField:
    """Every port amplitude of a mesh at one frequency.

    ``a_in``/``a_out`` have shape ``(2N+2, M+1)``, ``b_in``/``b_out`` shape
    ``(2N+2, M)``; entry ``[n, m]`` is the port on row n, column m.
    """

    a_in: np.ndarray
    a_out: np.ndarray
    b_in: np.ndarray
    b_out: np.ndarray

    def magnitudes(self) -> dict:
        return {k: np.abs(getattr(self, k)) for k in ("a_in", "a_out", "b_in", "b_out")}

    def max_abs_diff(self, other: "MeshField") -> float:
        return max(float(np.max(np.abs(getattr(self, k) - getattr(other, k))))
                   for k in ("a_in", "a_out", "b_in", "b_out"))


def internal_amplitudes(spec: MeshSpec, omega: float, a0_in, a0_out,
                        singular_tol=SINGULAR_TOL) -> MeshField:
    """Propagate column-0 amplitudes through every column (single frequency)."""
    w, _ = _as_omegas(omega)
    if w.size != 1:
        raise ValueError("internal_amplitudes takes a single frequency")
    Fv, Fh = tbu_matrices(spec, w)
    Hd, B, *_ = assemble_columns(spec, Fv, Fh, singular_tol)
    n, M = spec.n_ports, spec.n_cols
    s = np.empty(2 * n, dtype=complex)
    s[0::2] = a0_in
    s[1::2] = a0_out
    a = np.empty((2 * n, M + 1), dtype=complex)
    b = np.empty((2 * n, M), dtype=complex)
    a[:, 0] = s
    for j in range(M):
        b[:, j] = B[0, j] @ a[:, j]
        a[:, j + 1] = Hd[0, j] @ b[:, j]
    return MeshField(a[0::2], a[1::2], b[0::2], b[1::2])


def solve_fields(spec: MeshSpec, omega: float, a0_in, aM_out_in=None) -> MeshField:
    """T*-pipeline solution for every port at one frequency."""
    gs = global_scatter(spec, float(omega), check_condition=False)
    aM_in, a0_out = mesh_response(gs, a0_in, aM_out_in)
    return internal_amplitudes(spec, float(omega), a0_in, a0_out)


@lru_cache(maxsize=32)
def _direct_pattern(N: int, M: int):
    """Sparsity pattern of the raw port-equation system for an N x M mesh.

    Returns ``(rows, cols, const, fidx, size, layout)``: entries with
    ``fidx >= 0`` take the value ``-F_flat[fidx]`` where ``F_flat`` is
    ``concat(Fv.ravel(), Fh.ravel())`` at one frequency; others take ``const``.
    """
    n = 2 * N + 2
    na, nb = n * (M + 1), n * M

    def aI(r, m):
        return r * (M + 1) + m

    def aO(r, m):
        return na + r * (M + 1) + m

    def bI(r, m):
        return 2 * na + r * M + m

    def bO(r, m):
        return 2 * na + nb + r * M + m

    def fv(r, j, a, b):
        return ((r * M + j) * 2 + a) * 2 + b

    nfv = N * M * 4

    def fh(r, j, a, b):
        return nfv + ((r * M + j) * 2 + a) * 2 + b

    rows, cols, const, fidx = [], [], [], []
    eq = 0

    def add(*terms):
        nonlocal eq
        for col, src in terms:
            rows.append(eq)
            cols.append(col)
            if isinstance(src, tuple):
                const.append(0.0)
                fidx.append(src[1])
            else:
                const.append(src)
                fidx.append(-1)
        eq += 1

    inputs = []
    for r in range(n):
        inputs.append(eq)
        add((aI(r, 0), 1.0))
    for r in range(n):
        add((aO(r, M), 1.0))
    for j in range(M):
        for k in (0, n - 1):
            add((bI(k, j), 1.0), (aO(k, j), -1.0))
            add((bO(k, j), 1.0), (aI(k, j), -1.0))
        for r in range(N):
            top, bot = 2 * r + 1, 2 * r + 2
            # light entering at the top pair leaves at the bottom pair and vice versa
            for dst_a, dst_b, src in ((bot, bot, top), (top, top, bot)):
                add((aO(dst_a, j), 1.0), (aI(src, j), ("f", fv(r, j, 0, 0))), (bI(src, j), ("f", fv(r, j, 0, 1))))
                add((bO(dst_b, j), 1.0), (aI(src, j), ("f", fv(r, j, 1, 0))), (bI(src, j), ("f", fv(r, j, 1, 1))))
        for r in range(N + 1):
            up, lo = 2 * r, 2 * r + 1
            add((aI(up, j + 1), 1.0), (bO(up, j), ("f", fh(r, j, 0, 0))), (bO(lo, j), ("f", fh(r, j, 0, 1))))
            add((aI(lo, j + 1), 1.0), (bO(up, j), ("f", fh(r, j, 1, 0))), (bO(lo, j), ("f", fh(r, j, 1, 1))))
            add((bI(up, j), 1.0), (aO(up, j + 1), ("f", fh(r, j, 0, 0))), (aO(lo, j + 1), ("f", fh(r, j, 0, 1))))
            add((bI(lo, j), 1.0), (aO(up, j + 1), ("f", fh(r, j, 1, 0))), (aO(lo, j + 1), ("f", fh(r, j, 1, 1))))
    size = 2 * na + 2 * nb
    assert eq == size
    return (np.array(rows), np.array(cols), np.array(const, dtype=complex),
            np.array(fidx), size, (na, nb))


def direct_factor(spec: MeshSpec, Fv_k, Fh_k):
    """Sparse LU of the raw port-equation system at one frequency.

    ``Fv_k``/``Fh_k`` are the TBU matrices at that frequency. Returns
    ``(lu, pattern)`` with ``pattern`` as from :func:`_direct_pattern`.
    """
    pattern = _direct_pattern(spec.n_rows, spec.n_cols)
    rows, cols, const, fidx, size, _ = pattern
    use_f = fidx >= 0
    vals = const.copy()
    flat = np.concatenate([np.ravel(Fv_k), np.ravel(Fh_k)])
    vals[use_f] = -flat[fidx[use_f]]
    A = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(size, size))
    try:
        return scipy.sparse.linalg.splu(A), pattern
    except RuntimeError as exc:
        raise SolveFailure(f"direct sparse solve failed: {exc}") from exc


def _split_fields(x, n, M, na, nb):
    return MeshField(
        x[:na].reshape(n, M + 1), x[na:2 * na].reshape(n, M + 1),
        x[2 * na:2 * na + nb].reshape(n, M), x[2 * na + nb:].reshape(n, M),
    )


def _direct_fields(spec: MeshSpec, omegas, a0_in, aM_out_in):
    n, M = spec.n_ports, spec.n_cols
    Fv, Fh = tbu_matrices(spec, omegas)
    out = []
    for k in range(omegas.size):
        lu, (_, _, _, _, size, (na, nb)) = direct_factor(spec, Fv[k], Fh[k])
        rhs = np.zeros(size, dtype=complex)
        rhs[:n] = a0_in
        rhs[n:2 * n] = aM_out_in
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolveFailure("direct sparse solve returned non-finite values")
        out.append(_split_fields(x, n, M, na, nb))
    return out


def direct_solve(spec: MeshSpec, omega: float, a0_in, aM_out_in=None) -> MeshField:
    """Solve every port amplitude from one sparse system built on the raw TBU relations.

    Each TBU contributes its four scattering equations ``out = F in`` directly;
    nothing is inverted per block and no column products are formed, so bar
    states are handled without special cases. Used as an independent check
    of the T* pipeline.
    """
    w, _ = _as_omegas(omega)
    if w.size != 1:
        raise ValueError("direct_solve takes a single frequency; see direct_responses")
    n = spec.n_ports
    aMo = np.zeros(n, complex) if aM_out_in is None else np.asarray(aM_out_in, complex)
    return _direct_fields(spec, w, np.asarray(a0_in, dtype=complex), aMo)[0]


def direct_responses(spec: MeshSpec, omegas, a0_in, aM_out_in=None):
    """Forward outputs ``a_M^I`` of shape (K, 2N+2) from the sparse oracle."""
    w, scalar = _as_omegas(omegas)
    n = spec.n_ports
    aMo = np.zeros(n, complex) if aM_out_in is None else np.asarray(aM_out_in, complex)
    fields = _direct_fields(spec, w, np.asarray(a0_in, dtype=complex), aMo)
    out = np.array([f.a_in[:, -1] for f in fields])
    return out[0] if scalar else out
