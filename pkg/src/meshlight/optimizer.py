"""Gradient-descent synthesis with random restarts."""
from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .autodiff import FD_STEP, evaluate
from .compact_model import TWO_PI
from .errors import NoProgress, SingularBarState, SolveFailure
from .mesh import MeshSpec, guard_bar_states
from .objectives import FrequencyGrid, TargetSpec

ALGORITHMS = ("plain_gd", "momentum", "adam")


@dataclass
class OptimizerOptions:
    algorithm: str = "adam"
    learning_rate: float = 0.02
    max_iters: int = 5000
    rel_tol: float = 1e-9
    window: int = 50
    abs_tol: float = 1e-14
    restarts: int = 1
    seed: int = 0
    patience: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    max_backtracks: int = 20
    engine: str = "product"
    progress: Optional[Callable[[dict], None]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.engine not in ("product", "auto"):
            raise ValueError(f"engine must be 'product' or 'auto', got {self.engine!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "algorithm", "learning_rate", "max_iters", "rel_tol", "window", "abs_tol",
            "restarts", "seed", "patience", "engine")}


@dataclass(eq=False)
class SynthesisResult:
    best_params: np.ndarray
    best_cost: float
    cost_trace: np.ndarray
    final_responses: np.ndarray  # (n_outputs, K)
    restart_index: int = 0
    diagnostics: dict = field(default_factory=dict)
    spec: Optional[MeshSpec] = None
    all_traces: List[np.ndarray] = field(default_factory=list)
    all_costs: List[float] = field(default_factory=list)

    @property
    def n_iters(self) -> int:
        return len(self.cost_trace) - 1


class _Stepper:
    def __init__(self, opts: OptimizerOptions, n):
        self.o = opts
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def direction(self, grad):
        o = self.o
        self.t += 1
        if o.algorithm == "plain_gd":
            return grad
        if o.algorithm == "momentum":
            self.m = o.momentum * self.m + grad
            return self.m
        self.m = o.beta1 * self.m + (1 - o.beta1) * grad
        self.v = o.beta2 * self.v + (1 - o.beta2) * grad * grad
        m_hat = self.m / (1 - o.beta1 ** self.t)
        v_hat = self.v / (1 - o.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + o.eps)


def minimize(fun, x0, opts: OptimizerOptions, label: str = "", project=None):
    """Run one descent from ``x0``.

    ``fun(x)`` returns ``(cost, grad, extra)``. Returns
    ``(best_x, best_cost, trace, best_extra, info)``. A step landing on a
    singular configuration is halved up to ``opts.max_backtracks`` times; if
    every halving fails the descent has run into a bar state and stops there
    with ``stop_reason="singular"``, keeping the best point so far.
    ``project`` maps every iterate back onto a feasible set.
    """
    project = project or (lambda v: v)
    x = np.array(x0, dtype=float)
    cost, grad, extra = fun(x)
    trace = [cost]
    best = (cost, x.copy(), extra)
    stepper = _Stepper(opts, x.size)
    backtracks = 0
    stop = "max_iters"
    for it in range(1, opts.max_iters + 1):
        if cost <= opts.abs_tol:
            stop = "abs_tol"
            break
        step = opts.learning_rate * stepper.direction(grad)
        for _ in range(opts.max_backtracks + 1):
            try:
                x_new = project(x - step)
                new = fun(x_new)
                break
            except (SingularBarState, SolveFailure):
                step = step / 2
                backtracks += 1
        else:
            stop = "singular"
            break
        x = x_new
        cost, grad, extra = new
        trace.append(cost)
        if cost < best[0]:
            best = (cost, x.copy(), extra)
        if opts.progress is not None:
            opts.progress({"iteration": it, "cost": cost, "grad_norm": float(np.linalg.norm(grad)),
                           "label": label})
        if it >= opts.window:
            old = trace[-1 - opts.window]
            if abs(old - cost) <= opts.rel_tol * abs(old):
                stop = "rel_tol"
                break
        if it >= opts.patience and best[0] >= trace[0]:
            raise NoProgress(f"{label}no improvement over the initial cost after {it} iterations")
    info = {"stop_reason": stop, "iterations": len(trace) - 1, "backtracks": backtracks}
    return best[1], best[0], np.array(trace), best[2], info


def random_start(spec: MeshSpec, rng) -> np.ndarray:
    x = rng.uniform(0.0, TWO_PI, spec.n_params)
    return guard_bar_states(spec, x)


def restart_rng(seed: int, restart: int):
    return np.random.default_rng([int(seed), int(restart)])


def phase_objective(spec_template: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
                    engine: str = "product"):
    def fun(x):
        ev = evaluate(spec_template.with_params(x), grid, targets, cost_kind, engine=engine)
        return ev.cost, ev.gradient, ev
    return fun


def numerical_objective(spec_template: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
                        engine: str = "product", step: float = FD_STEP):
    """Baseline objective whose gradient comes from central differences.

    Costs 2P + 1 response evaluations per call; kept only as the reference
    point for the analytic gradient's speedup.
    """
    def cost_at(x):
        return evaluate(spec_template.with_params(x), grid, targets, cost_kind, gradient=False, engine=engine)

    def fun(x):
        ev = cost_at(x)
        grad = np.empty(x.size)
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp[i] += step
            xm[i] -= step
            grad[i] = (cost_at(xp).cost - cost_at(xm).cost) / (2 * step)
        ev.gradient = grad
        return ev.cost, grad, ev
    return fun


def synthesize(spec_template: MeshSpec, grid: FrequencyGrid, targets: TargetSpec, cost_kind: str,
               opts: Optional[OptimizerOptions] = None, x0=None, restart: int = 0,
               gradient: str = "analytic") -> SynthesisResult:
    """Minimize the cost over all phases from one random (or given) start.

    ``gradient="numerical"`` swaps in the finite-difference baseline.
    """
    opts = opts or OptimizerOptions()
    targets.check_grid(grid)
    if gradient not in ("analytic", "numerical"):
        raise ValueError(f"gradient must be 'analytic' or 'numerical', got {gradient!r}")
    if x0 is None:
        x0 = random_start(spec_template, restart_rng(opts.seed, restart))
    t0 = time.perf_counter()
    make = phase_objective if gradient == "analytic" else numerical_objective
    fun = make(spec_template, grid, targets, cost_kind, opts.engine)
    x, cost, trace, ev, info = minimize(fun, x0, opts, label=f"restart {restart}: ")
    x = np.mod(x, TWO_PI)
    spec = spec_template.with_params(x)
    # report the final state with the accurate engine
    final = evaluate(spec, grid, targets, cost_kind, gradient=False, engine="auto")
    info.update({
        "final_cost": final.cost,
        "sparse_points": final.sparse_points,
        "wall_time_s": time.perf_counter() - t0,
        "clamped_points": ev.n_clamped,
        "min_abs_f12": ev.min_f12,
        "cost_kind": cost_kind,
    })
    return SynthesisResult(x, cost, trace, final.responses, restart, info, spec, [trace], [cost])


def multi_restart(run: Callable[[int], SynthesisResult], restarts: int) -> SynthesisResult:
    """Run ``run(restart)`` for each restart index and keep the best result.

    A restart that fails on a singular configuration is recorded and skipped.
    """
    results, failures = [], []
    for r in range(restarts):
        try:
            results.append(run(r))
        except (SingularBarState, SolveFailure, NoProgress) as exc:
            failures.append({"restart": r, "error": type(exc).__name__, "message": str(exc)})
    if not results:
        raise NoProgress(f"all {restarts} restarts failed: {failures}")
    best = min(results, key=lambda res: res.best_cost)
    best.all_traces = [res.cost_trace for res in results]
    best.all_costs = [res.best_cost for res in results]
    best.diagnostics = dict(best.diagnostics)
    best.diagnostics["restart_costs"] = best.all_costs
    best.diagnostics["restart_failures"] = failures
    return best


def synthesize_restarts(spec_template, grid, targets, cost_kind, opts: Optional[OptimizerOptions] = None):
    opts = opts or OptimizerOptions()
    return multi_restart(
        lambda r: synthesize(spec_template, grid, targets, cost_kind, opts, restart=r), opts.restarts)


def json_progress(stream=None):
    """Progress callback writing one JSON object per line."""
    stream = stream or sys.stdout

    def emit(record):
        stream.write(json.dumps(record) + "\n")
    return emit
