"""Closed-form 2x2 model of a tunable basic unit (TBU).

A TBU is a Mach-Zehnder cell: two directional couplers around a pair of phase
shifters (theta on the upper arm, phi on the lower arm). All fields use the
``exp(+j*omega*t)`` time convention, so propagation contributes
``exp(-j*omega*n_eff*L/c)`` and every phase term carries a minus sign.

The functions here broadcast: ``theta``, ``phi`` and ``omega`` may be arrays,
and the trailing two axes of every returned array are the 2x2 matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PhysicalConstants:
    """Waveguide constants shared by every TBU in a mesh.

    ``n_g`` defaults to ``n_eff`` (no dispersion). When ``dispersion_slope``
    is set, ``n_eff(omega) = n_eff + dispersion_slope * (omega - omega_center)``
    and ``n_g`` is taken at the center frequency unless given explicitly.
    """

    n_eff: float = 2.35
    c: float = 3.0e8
    n_g: Optional[float] = None
    dispersion_slope: Optional[float] = None
    wavelength_center: float = 1550e-9

    def __post_init__(self):
        if not self.n_eff > 0:
            raise ValueError(f"n_eff must be positive, got {self.n_eff}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.n_g is not None and not self.n_g > 0:
            raise ValueError(f"n_g must be positive, got {self.n_g}")

    @property
    def f_center(self) -> float:
        return self.c / self.wavelength_center

    @property
    def omega_center(self) -> float:
        return TWO_PI * self.f_center

    @property
    def group_index(self) -> float:
        if self.n_g is not None:
            return self.n_g
        if self.dispersion_slope:
            # n_g = d(omega * n_eff)/d(omega) at the center frequency
            return self.n_eff + self.dispersion_slope * self.omega_center
        return self.n_eff

    def index(self, omega):
        """Effective index at ``omega`` (constant unless a dispersion slope is set)."""
        omega = np.asarray(omega, dtype=float)
        if not self.dispersion_slope:
            return np.full_like(omega, self.n_eff)
        return self.n_eff + self.dispersion_slope * (omega - self.omega_center)

    def delay(self, length, omega):
        """Phase delay tau = n_eff(omega) * L / c in seconds."""
        return self.index(omega) * length / self.c

    def to_dict(self) -> dict:
        return {
            "n_eff": self.n_eff,
            "c": self.c,
            "n_g": self.n_g,
            "dispersion_slope": self.dispersion_slope,
            "wavelength_center": self.wavelength_center,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalConstants":
        return cls(**{k: d[k] for k in ("n_eff", "c", "n_g", "dispersion_slope", "wavelength_center") if k in d})


@dataclass(frozen=True)
class TbuParams:
    """Tunable and physical parameters of one TBU.

    theta, phi are reduced into [0, 2*pi) on construction. ``length`` is the
    total lumped waveguide length in meters and ``alpha`` the lumped amplitude
    transmission. eta1/eta2 are coupler deviations from 50:50 in radians.
    """

    theta: float = 0.0
    phi: float = 0.0
    alpha: float = 0.99
    length: float = 250e-6
    eta1: float = 0.0
    eta2: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.length > 0.0:
            raise ValueError(f"length must be positive, got {self.length}")
        object.__setattr__(self, "theta", float(np.mod(self.theta, TWO_PI)))
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))

    @property
    def ideal(self) -> bool:
        return self.eta1 == 0.0 and self.eta2 == 0.0


# -- vectorized building blocks ------------------------------------------------

def coupler_matrix(eta):
    """Directional coupler ``M(eta)``; ``eta = 0`` is an exact 50:50 splitter."""
    eta = np.asarray(eta, dtype=float)
    c = np.cos(np.pi / 4 + eta)
    s = -1j * np.sin(np.pi / 4 + eta)
    return np.stack([np.stack([c, s], -1), np.stack([s, c], -1)], -2)


def ideal_core(theta, phi):
    """Frequency-independent part of the ideal TBU and its theta/phi derivatives.

    Returns ``(S, dS_dtheta, dS_dphi)`` with ``F = S * alpha * exp(-j*omega*tau)``.
    """
    et = np.exp(-1j * np.asarray(theta, dtype=float))
    ep = np.exp(-1j * np.asarray(phi, dtype=float))
    cross = -0.5j * (et + ep)
    S = np.stack([np.stack([0.5 * (et - ep), cross], -1),
                  np.stack([cross, 0.5 * (ep - et)], -1)], -2)
    # d/dtheta pulls -j*e^{-j theta} out of every theta term
    dt = -0.5j * et
    dS_t = np.stack([np.stack([dt, -1j * dt], -1), np.stack([-1j * dt, -dt], -1)], -2)
    dp = -0.5j * ep
    dS_p = np.stack([np.stack([-dp, -1j * dp], -1), np.stack([-1j * dp, dp], -1)], -2)
    return S, dS_t, dS_p


def nonideal_core(theta, phi, eta1, eta2):
    """``M(eta1) diag(e^{-j theta}, e^{-j phi}) M(eta2)`` and its derivatives."""
    m1 = coupler_matrix(eta1)
    m2 = coupler_matrix(eta2)
    et = np.exp(-1j * np.asarray(theta, dtype=float))
    ep = np.exp(-1j * np.asarray(phi, dtype=float))
    # outer products of the coupler column/row picked out by each arm
    upper = m1[..., :, 0:1] * m2[..., 0:1, :]
    lower = m1[..., :, 1:2] * m2[..., 1:2, :]
    et = et[..., None, None]
    ep = ep[..., None, None]
    S = upper * et + lower * ep
    return S, upper * (-1j * et), lower * (-1j * ep)


def propagation_factor(alpha, length, consts: PhysicalConstants, omega):
    """Lumped waveguide factor ``alpha * exp(-j*omega*n_eff*L/c)``."""
    omega = np.asarray(omega, dtype=float)
    return alpha * np.exp(-1j * omega * consts.delay(length, omega))


# -- single-TBU API -------------------------------------------------------------

def _expand(core, g):
    return core * np.asarray(g)[..., None, None]


def tbu_transfer(p: TbuParams, consts: PhysicalConstants, omega):
    """Ideal-coupler transfer matrix F of one TBU (couplers at exact 50:50).

    Coupler deviations stored on ``p`` are ignored here; see
    :func:`tbu_transfer_nonideal`.
    """
    S, _, _ = ideal_core(p.theta, p.phi)
    return _expand(S, propagation_factor(p.alpha, p.length, consts, omega))


def tbu_transfer_nonideal(p: TbuParams, consts: PhysicalConstants, omega):
    """Transfer matrix with imperfect couplers ``M(eta1) . PS . M(eta2)``.

    No extra factor 1/2: ``M(0)`` already carries the 1/sqrt(2) normalization,
    so eta1 = eta2 = 0 reduces to :func:`tbu_transfer`.
    """
    S, _, _ = nonideal_core(p.theta, p.phi, p.eta1, p.eta2)
    return _expand(S, propagation_factor(p.alpha, p.length, consts, omega))


def tbu_derivative(p: TbuParams, consts: PhysicalConstants, omega, which: str):
    """Analytic dF/dtheta or dF/dphi of the ideal model."""
    if which not in ("theta", "phi"):
        raise ValueError(f"which must be 'theta' or 'phi', got {which!r}")
    _, dS_t, dS_p = ideal_core(p.theta, p.phi)
    dS = dS_t if which == "theta" else dS_p
    return _expand(dS, propagation_factor(p.alpha, p.length, consts, omega))


def tbu_derivative_nonideal(p: TbuParams, consts: PhysicalConstants, omega, which: str):
    if which not in ("theta", "phi"):
        raise ValueError(f"which must be 'theta' or 'phi', got {which!r}")
    _, dS_t, dS_p = nonideal_core(p.theta, p.phi, p.eta1, p.eta2)
    dS = dS_t if which == "theta" else dS_p
    return _expand(dS, propagation_factor(p.alpha, p.length, consts, omega))


def tbu_transfer_segmented(theta, phi, consts: PhysicalConstants, omega,
                           alphas_upper, lengths_upper, alphas_lower=None, lengths_lower=None):
    """Four-segment TBU model with separate waveguide sections around each element.

    Segment 1 follows the right coupler, 2 sits between the right coupler and
    the phase shifters, 3 between phase shifters and left coupler, 4 precedes
    the left coupler. With balanced arms this collapses to the lumped model
    using ``L = sum(L_i)`` and ``alpha = prod(alpha_i)``.
    """
    if alphas_lower is None:
        alphas_lower = alphas_upper
    if lengths_lower is None:
        lengths_lower = lengths_upper
    dc = np.array([[1, -1j], [-1j, 1]]) / np.sqrt(2)
    ps = np.diag([np.exp(-1j * theta), np.exp(-1j * phi)])

    def lam(i):
        return np.diag([propagation_factor(alphas_upper[i], lengths_upper[i], consts, omega),
                        propagation_factor(alphas_lower[i], lengths_lower[i], consts, omega)])

    return lam(0) @ dc @ lam(1) @ ps @ lam(2) @ dc @ lam(3)


def power_coupling(theta, phi):
    """Cross-coupled power fraction cos^2((phi - theta)/2)."""
    return np.cos((np.asarray(phi) - np.asarray(theta)) / 2) ** 2
