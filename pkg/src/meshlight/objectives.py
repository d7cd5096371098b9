"""Frequency grids, target responses and the three synthesis costs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .compact_model import TWO_PI, PhysicalConstants
from .errors import DomainError, InvalidRange

COST_KINDS = ("complex", "linear_mag", "log_mag")
MAG_FLOOR = 1e-12
DEFAULT_LENGTH = 250e-6


def delta_f(consts: PhysicalConstants, length: float = DEFAULT_LENGTH) -> float:
    """Reference frequency span c / (n_g L); one TBU's FSR."""
    return consts.c / (consts.group_index * length)


def normalize_frequency(f, consts: PhysicalConstants, length: float = DEFAULT_LENGTH):
    """Map Hz onto the normalized axis where f_center +- delta_f/2 -> +-1."""
    return 2.0 / delta_f(consts, length) * (np.asarray(f, dtype=float) - consts.f_center)


def denormalize_frequency(f_norm, consts: PhysicalConstants, length: float = DEFAULT_LENGTH):
    return consts.f_center + np.asarray(f_norm, dtype=float) * delta_f(consts, length) / 2.0


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Uniformly spaced angular frequencies and their normalized images."""

    points: np.ndarray
    normalized: np.ndarray
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    length: float = DEFAULT_LENGTH

    @property
    def n_grid(self) -> int:
        return int(self.points.size)

    @property
    def omega_min(self) -> float:
        return float(self.points[0])

    @property
    def omega_max(self) -> float:
        return float(self.points[-1])

    @property
    def f_hz(self) -> np.ndarray:
        return self.points / TWO_PI

    @property
    def step(self) -> float:
        return (self.omega_max - self.omega_min) / (self.n_grid - 1) if self.n_grid > 1 else 0.0

    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.normalized)))


def make_grid(n_grid: int = 201, norm_range=(-1.0, 1.0), consts: Optional[PhysicalConstants] = None,
              length: float = DEFAULT_LENGTH, omega_range=None) -> FrequencyGrid:
    """Build a grid from a normalized range (default) or an absolute ``omega_range``."""
    consts = consts or PhysicalConstants()
    if n_grid < 2:
        raise InvalidRange(f"n_grid must be >= 2, got {n_grid}")
    if omega_range is not None:
        lo, hi = map(float, omega_range)
        if not 0 < lo < hi:
            raise InvalidRange(f"need 0 < omega_min < omega_max, got {omega_range}")
        points = np.linspace(lo, hi, n_grid)
        normalized = normalize_frequency(points / TWO_PI, consts, length)
    else:
        lo, hi = map(float, norm_range)
        if not lo < hi:
            raise InvalidRange(f"normalized range must be increasing, got {norm_range}")
        normalized = np.linspace(lo, hi, n_grid)
        points = TWO_PI * denormalize_frequency(normalized, consts, length)
        if points[0] <= 0:
            raise InvalidRange("range reaches non-positive frequencies")
    return FrequencyGrid(points, normalized, consts, length)


@dataclass(eq=False)
class TargetSpec:
    """Desired responses at output rows of ``a_M^I`` for a given excitation.

    ``values`` has shape ``(n_outputs, n_grid)``: complex amplitudes for
    complex targets, nonnegative magnitudes otherwise. ``weights`` is ``(n_grid,)``
    or ``(n_outputs, n_grid)``. ``excitation`` is the forward input vector
    ``a_0^I`` (length 2N+2).
    """

    outputs: Sequence[int]
    values: np.ndarray
    excitation: np.ndarray
    kinds: Optional[Sequence[str]] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.outputs = [int(o) for o in self.outputs]
        self.values = np.atleast_2d(np.asarray(self.values))
        self.excitation = np.asarray(self.excitation, dtype=complex)
        if self.values.shape[0] != len(self.outputs):
            raise ValueError(f"values has {self.values.shape[0]} rows for {len(self.outputs)} outputs")
        if self.kinds is None:
            kind = "complex" if np.iscomplexobj(self.values) else "magnitude"
            self.kinds = [kind] * len(self.outputs)
        self.kinds = list(self.kinds)
        for k, row in zip(self.kinds, self.values):
            if k not in ("complex", "magnitude"):
                raise ValueError(f"unknown target kind {k!r}")
            if k == "magnitude" and (np.any(np.imag(row) != 0) or np.any(np.real(row) < 0)):
                raise ValueError("magnitude targets must be real and nonnegative")
        n_grid = self.values.shape[1]
        if self.weights is None:
            self.weights = np.ones(n_grid)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape[-1] != n_grid:
            raise ValueError("weights must match the grid size")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @property
    def n_grid(self) -> int:
        return self.values.shape[1]

    def check_grid(self, grid: FrequencyGrid):
        if grid.n_grid != self.n_grid:
            raise ValueError(f"targets have {self.n_grid} frequency points, grid has {grid.n_grid}")

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values).astype(float)


def unit_excitation(n_ports: int, row: int, amplitude=1.0) -> np.ndarray:
    a = np.zeros(n_ports, dtype=complex)
    a[row] = amplitude
    return a


def mask_from_segments(grid: FrequencyGrid, segments, default=None):
    """Piecewise-constant magnitude target and weights.

    ``segments`` is a list of dicts with ``lo``, ``hi`` (normalized frequency),
    ``magnitude_db`` (or ``magnitude``) and optional ``weight``. ``period`` makes
    the segment repeat every ``period`` normalized units. Points covered by no
    segment take ``default`` (``(magnitude, weight)``) or raise.
    """
    f = grid.normalized
    mag = np.full(f.size, np.nan)
    w = np.full(f.size, np.nan)
    for seg in segments:
        lo, hi = float(seg["lo"]), float(seg["hi"])
        period = seg.get("period")
        if period:
            x = lo + np.mod(f - lo, float(period))
            hit = x <= hi + 1e-12
        else:
            hit = (f >= lo - 1e-12) & (f <= hi + 1e-12)
        m = seg["magnitude"] if "magnitude" in seg else 10 ** (float(seg["magnitude_db"]) / 20)
        mag[hit] = m
        w[hit] = float(seg.get("weight", 1.0))
    missing = np.isnan(mag)
    if np.any(missing):
        if default is None:
            raise InvalidRange(f"{int(missing.sum())} grid points are covered by no segment")
        mag[missing], w[missing] = default
    return mag, w


# -- costs ---------------------------------------------------------------------

def _check_shapes(responses, values):
    responses = np.asarray(responses)
    if responses.shape != np.shape(values):
        raise ValueError(f"response shape {responses.shape} != target shape {np.shape(values)}")
    return responses


def _weights(targets: TargetSpec, shape):
    return np.broadcast_to(targets.weights, shape)


def cost_complex(responses, targets: TargetSpec) -> float:
    """Sum over frequencies and outputs of |a - U|^2."""
    if any(k != "complex" for k in targets.kinds):
        raise ValueError("complex cost needs complex targets")
    a = _check_shapes(responses, targets.values)
    return float(np.sum(np.abs(a - targets.values) ** 2))


def cost_linear_mag(responses, targets: TargetSpec) -> float:
    """Weighted sum of (|a| - U)^2."""
    a = _check_shapes(responses, targets.values)
    r = _weights(targets, a.shape)
    return float(np.sum(r * (np.abs(a) - targets.magnitudes()) ** 2))


def cost_log_mag(responses, targets: TargetSpec, floor: float = MAG_FLOOR) -> float:
    """Weighted sum of (ln|a| - ln U)^2 with |a| floored at ``floor``."""
    return cost_and_chain("log_mag", responses, targets, floor)[0]


def cost_and_chain(kind: str, responses, targets: TargetSpec, floor: float = MAG_FLOOR):
    """Cost value plus the complex factor ``g`` with dCost/dp = sum Re(g * da/dp).

    Returns ``(cost, g, n_clamped)``; ``g`` has the shape of ``responses``.
    """
    if kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}; expected one of {COST_KINDS}")
    a = _check_shapes(responses, targets.values)
    if kind == "complex":
        if any(k != "complex" for k in targets.kinds):
            raise ValueError("complex cost needs complex targets")
        resid = a - targets.values
        return float(np.sum(np.abs(resid) ** 2)), 2.0 * np.conj(resid), 0
    r = _weights(targets, a.shape)
    U = targets.magnitudes()
    mag = np.abs(a)
    clamped = mag < floor
    n_clamped = int(np.count_nonzero(clamped))
    mag_c = np.where(clamped, floor, mag)
    # d|a|/dp = Re(conj(a) da/dp) / |a|
    if kind == "linear_mag":
        resid = mag - U
        g = 2.0 * r * resid * np.conj(a) / mag_c
        return float(np.sum(r * resid ** 2)), g, n_clamped
    if np.any(U <= 0):
        raise DomainError("log-magnitude cost needs strictly positive targets")
    resid = np.log(mag_c) - np.log(U)
    # clamped points contribute a constant, so no gradient
    g = np.where(clamped, 0.0, 2.0 * r * resid * np.conj(a) / mag_c ** 2)
    return float(np.sum(r * resid ** 2)), g, n_clamped


def evaluate_cost(kind: str, responses, targets: TargetSpec) -> float:
    if kind == "complex":
        return cost_complex(responses, targets)
    if kind == "linear_mag":
        return cost_linear_mag(responses, targets)
    if kind == "log_mag":
        return cost_log_mag(responses, targets)
    raise ValueError(f"unknown cost kind {kind!r}")
