"""Thermal crosstalk reparameterization and process-variation Monte Carlo."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import truncnorm

from .autodiff import evaluate
from .compact_model import TWO_PI
from .errors import NegativePower
from .mesh import MeshSpec, direct_responses
from .objectives import FrequencyGrid, TargetSpec
from .optimizer import OptimizerOptions, SynthesisResult, minimize, multi_restart, random_start, restart_rng


@dataclass(frozen=True, eq=False)
class ThermalModel:
    """Heater powers ``p`` set phases through ``x = h(Phi p)``.

    ``phi_matrix`` couples every heater to every phase shifter (ones on the
    diagonal). By default ``h`` is linear, ``h(u) = h_coefficient * u``;
    pass ``h``/``h_prime`` for any smooth elementwise map.
    """

    phi_matrix: np.ndarray
    h_coefficient: float = 1.0
    h: Optional[Callable] = None
    h_prime: Optional[Callable] = None

    def __post_init__(self):
        P = np.asarray(self.phi_matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"phi_matrix must be square, got shape {P.shape}")
        if not np.allclose(np.diag(P), 1.0):
            raise ValueError("phi_matrix must have ones on its diagonal")
        if not self.h_coefficient > 0:
            raise ValueError("h_coefficient must be positive")
        if (self.h is None) != (self.h_prime is None):
            raise ValueError("give both h and h_prime or neither")
        object.__setattr__(self, "phi_matrix", P)

    @property
    def size(self) -> int:
        return self.phi_matrix.shape[0]

    @classmethod
    def identity(cls, n: int, h_coefficient: float = 1.0) -> "ThermalModel":
        return cls(np.eye(n), h_coefficient)

    @classmethod
    def uniform_crosstalk(cls, n: int, level: float, h_coefficient: float = 1.0) -> "ThermalModel":
        """Every heater leaks ``level`` of its effect onto every other shifter."""
        P = np.full((n, n), float(level))
        np.fill_diagonal(P, 1.0)
        return cls(P, h_coefficient)

    def map(self, u):
        return self.h(u) if self.h is not None else self.h_coefficient * u

    def map_prime(self, u):
        return self.h_prime(u) if self.h_prime is not None else np.full_like(u, self.h_coefficient)

    def phases(self, p):
        """``h(Phi p)`` without the sign check (used inside optimization)."""
        return self.map(self.phi_matrix @ np.asarray(p, dtype=float))

    def pullback(self, p, grad_x):
        """Chain rule: dCost/dp = Phi^T (h'(Phi p) * dCost/dx)."""
        u = self.phi_matrix @ np.asarray(p, dtype=float)
        return self.phi_matrix.T @ (self.map_prime(u) * grad_x)

    def to_dict(self) -> dict:
        if self.h is not None:
            raise ValueError("custom h maps cannot be serialized")
        return {"phi_matrix": self.phi_matrix.tolist(), "h_coefficient": self.h_coefficient}


def phases_from_power(tm: ThermalModel, p) -> np.ndarray:
    """Phase vector induced by nonnegative heater powers."""
    p = np.asarray(p, dtype=float)
    if p.shape != (tm.size,):
        raise ValueError(f"expected {tm.size} powers, got shape {p.shape}")
    if np.any(p < 0):
        raise NegativePower(f"heater powers must be nonnegative; min is {p.min():.3g}")
    return tm.phases(p)


def thermal_objective(spec_template: MeshSpec, grid, targets, cost_kind, tm: ThermalModel,
                      engine: str = "product"):
    def fun(p):
        ev = evaluate(spec_template.with_params(tm.phases(p)), grid, targets, cost_kind, engine=engine)
        return ev.cost, tm.pullback(p, ev.gradient), ev
    return fun


def initial_power(spec: MeshSpec, tm: ThermalModel, rng) -> np.ndarray:
    """Same draw as a phase-space start, read as heater powers."""
    return random_start(spec, rng) / tm.h_coefficient


def synthesize_thermal(spec_template: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
                       tm: ThermalModel, opts: Optional[OptimizerOptions] = None, p0=None,
                       restart: int = 0, project_nonnegative: bool = False) -> SynthesisResult:
    """Optimize heater powers instead of phases.

    ``best_params`` holds the induced phases (mod 2 pi); the powers are in
    ``diagnostics["powers"]``. Powers are unconstrained unless
    ``project_nonnegative`` clips them at zero after every step.
    """
    opts = opts or OptimizerOptions()
    if tm.size != spec_template.n_params:
        raise ValueError(f"thermal model has {tm.size} heaters for {spec_template.n_params} phases")
    targets.check_grid(grid)
    if p0 is None:
        p0 = initial_power(spec_template, tm, restart_rng(opts.seed, restart))
    t0 = time.perf_counter()
    fun = thermal_objective(spec_template, grid, targets, cost_kind, tm, opts.engine)
    project = (lambda v: np.maximum(v, 0.0)) if project_nonnegative else None
    p, cost, trace, ev, info = minimize(fun, p0, opts, label=f"restart {restart}: ", project=project)
    x = np.mod(tm.phases(p), TWO_PI)
    spec = spec_template.with_params(x)
    final = evaluate(spec, grid, targets, cost_kind, gradient=False, engine="auto")
    info.update({
        "final_cost": final.cost,
        "sparse_points": final.sparse_points,
        "wall_time_s": time.perf_counter() - t0,
        "clamped_points": ev.n_clamped,
        "min_abs_f12": ev.min_f12,
        "cost_kind": cost_kind,
        "powers": p.tolist(),
        "negative_powers": int(np.count_nonzero(p < 0)),
    })
    return SynthesisResult(x, cost, trace, final.responses, restart, info, spec, [trace], [cost])


def synthesize_thermal_restarts(spec_template, grid, targets, cost_kind, tm, opts=None, **kw):
    opts = opts or OptimizerOptions()
    return multi_restart(
        lambda r: synthesize_thermal(spec_template, grid, targets, cost_kind, tm, opts, restart=r, **kw),
        opts.restarts)


# -- process variation ----------------------------------------------------------

@dataclass(frozen=True)
class VariationModel:
    """Independent per-TBU perturbations around shared nominal values.

    Each perturbation is a zero-mean Gaussian truncated at ``clip`` standard
    deviations; alpha is additionally kept inside (0, 1] and length above 0.
    """

    sigma_eta1: float = 0.0
    sigma_eta2: float = 0.0
    sigma_alpha: float = 0.0
    sigma_length: float = 0.0
    eta_nominal: float = 0.0
    alpha_nominal: float = 0.99
    length_nominal: float = 250e-6
    clip: float = 3.0

    def __post_init__(self):
        for name in ("sigma_eta1", "sigma_eta2", "sigma_alpha", "sigma_length"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.alpha_nominal <= 1:
            raise ValueError("alpha_nominal must lie in (0, 1]")
        if not self.length_nominal > 0:
            raise ValueError("length_nominal must be positive")
        if not self.clip > 0:
            raise ValueError("clip must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "VariationModel":
        return cls(**{k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__})


def _truncated(rng, mean, sigma, shape, clip, lo=-np.inf, hi=np.inf):
    if sigma == 0:
        return np.full(shape, float(mean))
    a = max(-clip, (lo - mean) / sigma)
    b = min(clip, (hi - mean) / sigma)
    return truncnorm.rvs(a, b, loc=mean, scale=sigma, size=shape, random_state=rng)


def sample_variation(vm: VariationModel, spec: MeshSpec, seed) -> MeshSpec:
    """Copy of ``spec`` with per-TBU coupler, loss and length perturbations.

    Phases are kept; every physical quantity is redrawn around the model's
    nominal values. Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    kw = {}
    for kind, shape in (("v", spec.theta_v.shape), ("h", spec.theta_h.shape)):
        kw[f"eta1_{kind}"] = _truncated(rng, vm.eta_nominal, vm.sigma_eta1, shape, vm.clip)
        kw[f"eta2_{kind}"] = _truncated(rng, vm.eta_nominal, vm.sigma_eta2, shape, vm.clip)
        kw[f"alpha_{kind}"] = _truncated(rng, vm.alpha_nominal, vm.sigma_alpha, shape, vm.clip,
                                         lo=np.nextafter(0.0, 1.0), hi=1.0)
        kw[f"length_{kind}"] = _truncated(rng, vm.length_nominal, vm.sigma_length, shape, vm.clip,
                                          lo=vm.length_nominal * 1e-6)
    return replace(spec, **kw)


@dataclass(eq=False)
class YieldReport:
    yield_fraction: float
    passed: np.ndarray
    n_samples: int
    normalized: np.ndarray
    outputs: list
    envelope_min: np.ndarray  # (n_outputs, K) magnitudes
    envelope_median: np.ndarray
    envelope_max: np.ndarray
    seed: int = 0
    model: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "yield": self.yield_fraction,
            "n_samples": self.n_samples,
            "n_passed": int(self.passed.sum()),
            "seed": self.seed,
            "model": self.model,
            "outputs": list(self.outputs),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def envelope_rows(self):
        for o, port in enumerate(self.outputs):
            for k, f in enumerate(self.normalized):
                yield (port, f, self.envelope_min[o, k], self.envelope_median[o, k], self.envelope_max[o, k])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("port,f_norm,mag_min,mag_median,mag_max\n")
            for port, f, lo, med, hi in self.envelope_rows():
                fh.write(f"{port},{f:.12g},{lo:.12g},{med:.12g},{hi:.12g}\n")


def monte_carlo_yield(spec: MeshSpec, vm: VariationModel, grid: FrequencyGrid, excitation, outputs,
                      pass_predicate: Callable, n_samples: int, seed: int = 0) -> YieldReport:
    """Fraction of perturbed copies of a fixed configuration that still pass.

    ``pass_predicate(mags, grid)`` gets magnitudes of shape (n_outputs, K).
    Sample ``i`` is drawn from seed ``[seed, i]`` so results do not depend on
    evaluation order. Responses come from the sparse field solve, which stays
    valid when perturbed couplers push a TBU onto a bar state.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    outputs = [int(o) for o in outputs]
    mags = np.empty((n_samples, len(outputs), grid.n_grid))
    passed = np.zeros(n_samples, dtype=bool)
    for i in range(n_samples):
        s = sample_variation(vm, spec, [int(seed), i])
        a = direct_responses(s, grid.points, excitation)[:, outputs].T
        mags[i] = np.abs(a)
        passed[i] = bool(pass_predicate(mags[i], grid))
    return YieldReport(float(passed.mean()), passed, n_samples, grid.normalized.copy(), outputs,
                       mags.min(axis=0), np.median(mags, axis=0), mags.max(axis=0), int(seed), vm.to_dict())
