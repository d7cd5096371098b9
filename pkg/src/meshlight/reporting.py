"""Scenario files, the experiment runner and deterministic exports.

A scenario is a JSON document describing one synthesis job: mesh size and
constants, the excitation on column 0, target responses on column M, the
cost, the frequency grid, optimizer settings and optional nonideality
models. :func:`run_scenario` executes it and writes CSV/JSON files whose
bytes depend only on the scenario and seed.
"""
from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff import finite_difference_check
from .compact_model import TWO_PI, PhysicalConstants
from .errors import ScenarioError
from .mesh import MeshSpec, direct_solve, param_index
from .nonideality import ThermalModel, VariationModel, synthesize_thermal_restarts
from .objectives import COST_KINDS, FrequencyGrid, TargetSpec, make_grid, mask_from_segments
from .optimizer import OptimizerOptions, SynthesisResult, json_progress, synthesize_restarts

SCHEMA_VERSION = 1
SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"
_PORT_RE = re.compile(r"^\s*A_?\{?\s*(\d+)\s*,\s*(\d+)\s*\}?\s*$")


# -- TBU state summaries ------------------------------------------------------------

def wrap_phase(x):
    """Reduce angles into (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(y == -np.pi, np.pi, y)


def coupling_and_common_phase(theta, phi):
    """Power coupling ratio cos^2((phi - theta)/2) and the common phase.

    The common phase is pi/2 - (phi + theta)/2, the global factor left after
    pulling the coupling rotation out of the TBU matrix.
    """
    theta, phi = np.asarray(theta, dtype=float), np.asarray(phi, dtype=float)
    ratio = np.clip(np.cos((phi - theta) / 2) ** 2, 0.0, 1.0)
    return ratio, wrap_phase(np.pi / 2 - (phi + theta) / 2)


def caption_common_phase(theta, phi):
    """(pi - phi - theta)/2, the figure-caption variant, exported alongside."""
    return wrap_phase((np.pi - np.asarray(phi) - np.asarray(theta)) / 2)


# -- scenario ------------------------------------------------------------------

def parse_port(value, where: str):
    """``"A_{n,m}"`` or ``{"row": n, "col": m}`` -> (row, col)."""
    if isinstance(value, str):
        m = _PORT_RE.match(value)
        if not m:
            raise ScenarioError(f"cannot parse port {value!r}; expected 'A_{{n,m}}'", where)
        return int(m.group(1)), int(m.group(2))
    if isinstance(value, dict) and "row" in value and "col" in value:
        return int(value["row"]), int(value["col"])
    raise ScenarioError(f"cannot parse port {value!r}", where)


def parse_amplitude(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        a = complex(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        a = complex(float(value[0]), float(value[1]))
    elif isinstance(value, dict) and "re" in value:
        a = complex(float(value["re"]), float(value.get("im", 0.0)))
    else:
        raise ScenarioError(f"cannot parse amplitude {value!r}; use a number or [re, im]", where)
    if not np.isfinite(a):
        raise ScenarioError("amplitude must be finite", where)
    return a


@dataclass(eq=False)
class Scenario:
    name: str
    n_rows: int
    n_cols: int
    constants: PhysicalConstants
    alpha: float
    length: float
    grid: FrequencyGrid
    inputs: List[tuple]  # (row, amplitude)
    outputs: List[int]
    targets: TargetSpec
    cost_kind: str
    options: OptimizerOptions
    thermal: Optional[dict] = None
    variation: Optional[VariationModel] = None
    yield_checks: list = field(default_factory=list)
    min_display_magnitude: float = 0.2
    state_frequency: float = 0.0
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def spec_template(self) -> MeshSpec:
        return MeshSpec.uniform(self.n_rows, self.n_cols, self.alpha, self.length, self.constants)

    @property
    def excitation(self) -> np.ndarray:
        return self.targets.excitation


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError("missing required field", f"{where}.{key}" if where else key)
    return d[key]


def _target_row(t: dict, grid: FrequencyGrid, consts, length, where: str):
    """One output's (values, kind, weights) from its target block."""
    kind = _require(t, "kind", where)
    ones = np.ones(grid.n_grid)
    if kind in ("complex", "magnitude"):
        if "magnitude_db" in t:
            mag = 10 ** (float(t["magnitude_db"]) / 20)
        else:
            mag = float(_require(t, "magnitude", where))
        if mag < 0:
            raise ScenarioError("magnitude must be nonnegative", f"{where}.magnitude")
        if kind == "magnitude":
            return mag * ones, "magnitude", ones * float(t.get("weight", 1.0))
        delay = float(t.get("delay_tbus", 0))
        phase0 = float(t.get("phase", 0.0))
        tau = consts.delay(length, grid.points)
        U = mag * np.exp(1j * (phase0 - delay * grid.points * tau))
        return U, "complex", ones
    if kind == "mask":
        segs = _require(t, "segments", where)
        default = t.get("default")
        if default is not None:
            m = default.get("magnitude", 10 ** (float(default.get("magnitude_db", 0)) / 20))
            default = (float(m), float(default.get("weight", 1.0)))
        try:
            mag, w = mask_from_segments(grid, segs, default)
        except (KeyError, ValueError) as exc:
            raise ScenarioError(str(exc), f"{where}.segments") from exc
        return mag, "magnitude", w
    raise ScenarioError(f"unknown target kind {kind!r}", f"{where}.kind")


def scenario_from_dict(d: dict) -> Scenario:
    """Validate a parsed scenario document."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a JSON object")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {version}", "schema_version")
    mesh = _require(d, "mesh", "")
    N, M = int(_require(mesh, "n_rows", "mesh")), int(_require(mesh, "n_cols", "mesh"))
    if N < 1 or M < 1:
        raise ScenarioError("mesh must be at least 1 x 1", "mesh")
    alpha = float(mesh.get("alpha", 0.99))
    length = float(mesh.get("length", 250e-6))
    if not 0 < alpha <= 1:
        raise ScenarioError("alpha must lie in (0, 1]", "mesh.alpha")
    try:
        consts = PhysicalConstants.from_dict(d.get("constants", {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), "constants") from exc
    g = d.get("grid", {})
    try:
        grid = make_grid(int(g.get("n_grid", 201)), tuple(g.get("norm_range", (-1.0, 1.0))), consts, length)
    except ValueError as exc:
        raise ScenarioError(str(exc), "grid") from exc
    n = 2 * N + 2
    inputs = []
    for i, item in enumerate(_require(d, "inputs", "")):
        where = f"inputs[{i}]"
        row, col = parse_port(_require(item, "port", where), f"{where}.port")
        if col != 0:
            raise ScenarioError(f"input ports must sit on column 0, got column {col}", f"{where}.port")
        if not 0 <= row < n:
            raise ScenarioError(f"row {row} outside 0..{n - 1}", f"{where}.port")
        inputs.append((row, parse_amplitude(item.get("amplitude", 1.0), f"{where}.amplitude")))
    if not inputs:
        raise ScenarioError("at least one input is required", "inputs")
    excitation = np.zeros(n, dtype=complex)
    for row, amp in inputs:
        excitation[row] += amp
    rows, values, kinds, weights = [], [], [], []
    for i, item in enumerate(_require(d, "outputs", "")):
        where = f"outputs[{i}]"
        row, col = parse_port(_require(item, "port", where), f"{where}.port")
        if col != M:
            raise ScenarioError(f"output ports must sit on column M = {M}, got column {col}", f"{where}.port")
        if not 0 <= row < n:
            raise ScenarioError(f"row {row} outside 0..{n - 1}", f"{where}.port")
        U, kind, w = _target_row(_require(item, "target", where), grid, consts, length, f"{where}.target")
        rows.append(row)
        values.append(U)
        kinds.append(kind)
        weights.append(w)
    cost_kind = d.get("cost", "complex")
    if cost_kind not in COST_KINDS:
        raise ScenarioError(f"unknown cost {cost_kind!r}; expected one of {COST_KINDS}", "cost")
    if rows:
        vals = np.array(values, dtype=complex if "complex" in kinds else float)
        try:
            targets = TargetSpec(rows, vals, excitation, kinds, np.array(weights))
        except ValueError as exc:
            raise ScenarioError(str(exc), "outputs") from exc
        if cost_kind == "complex" and any(k != "complex" for k in kinds):
            raise ScenarioError("complex cost needs complex targets on every output", "cost")
        if cost_kind == "log_mag" and np.any(targets.magnitudes() <= 0):
            raise ScenarioError("log_mag cost needs strictly positive targets", "outputs")
    else:
        targets = TargetSpec([], np.zeros((0, grid.n_grid)), excitation, [], np.ones(grid.n_grid))
    opt = dict(d.get("optimizer", {}))
    try:
        options = OptimizerOptions(**opt)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), "optimizer") from exc
    variation = None
    if "variation" in d:
        try:
            variation = VariationModel.from_dict(d["variation"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc), "variation") from exc
    export = d.get("export", {})
    return Scenario(
        name=str(d.get("name", "scenario")), n_rows=N, n_cols=M, constants=consts, alpha=alpha,
        length=length, grid=grid, inputs=inputs, outputs=rows, targets=targets, cost_kind=cost_kind,
        options=options, thermal=d.get("thermal"), variation=variation,
        yield_checks=list(d.get("yield", {}).get("checks", [])),
        min_display_magnitude=float(export.get("min_display_magnitude", 0.2)),
        state_frequency=float(export.get("state_frequency_norm", 0.0)),
        description=str(d.get("description", "")), raw=d,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", str(path)) from exc
    return scenario_from_dict(d)


def bundled_scenario(name: str) -> Path:
    """Path of a checked-in scenario, e.g. ``"case1_routing"``."""
    p = SCENARIO_DIR / (name if name.endswith(".json") else name + ".json")
    if not p.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return p


def list_bundled() -> list:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def band_predicate(checks, outputs):
    """``predicate(mags, grid)`` that is True when every band check holds.

    Each check names a port, a normalized band ``lo..hi`` (optionally repeating
    every ``period``) and a ``min_db`` and/or ``max_db`` bound.
    """
    parsed = []
    for i, c in enumerate(checks):
        row, _ = parse_port(c["port"], f"yield.checks[{i}].port")
        if row not in outputs:
            raise ScenarioError(f"row {row} is not a scenario output", f"yield.checks[{i}].port")
        parsed.append((outputs.index(row), c))

    def predicate(mags, grid):
        for o, c in parsed:
            f = grid.normalized
            lo, hi = float(c["lo"]), float(c["hi"])
            if c.get("period"):
                hit = lo + np.mod(f - lo, float(c["period"])) <= hi
            else:
                hit = (f >= lo) & (f <= hi)
            db = 20 * np.log10(np.maximum(mags[o][hit], 1e-300))
            if "min_db" in c and np.any(db < float(c["min_db"])):
                return False
            if "max_db" in c and np.any(db > float(c["max_db"])):
                return False
        return True
    return predicate


# -- report bundle ---------------------------------------------------------------

@dataclass(eq=False)
class ReportBundle:
    scenario: Scenario
    spec: MeshSpec
    result: Optional[SynthesisResult]
    responses: np.ndarray  # (n_outputs, K) complex
    fd_report: Optional[object] = None
    seed: int = 0
    restarts: int = 1

    @property
    def grid(self) -> FrequencyGrid:
        return self.scenario.grid


def _fmt(x) -> str:
    return format(float(x), ".12g")


def spectrum_rows(bundle: ReportBundle):
    g = bundle.grid
    for o, port in enumerate(bundle.scenario.outputs):
        a = bundle.responses[o]
        for k in range(g.n_grid):
            v = a[k]
            mag = abs(v)
            db = 20 * np.log10(mag) if mag > 0 else -np.inf
            yield (g.f_hz[k], g.normalized[k], f"A_{{{port},{bundle.spec.n_cols}}}",
                   v.real, v.imag, mag, db, np.angle(v))


SPECTRUM_HEADER = "f_hz,f_norm,port,re,im,mag,mag_db,phase_rad"


def export_spectrum(bundle: ReportBundle, path):
    with open(path, "w", newline="") as fh:
        fh.write(SPECTRUM_HEADER + "\n")
        for f, fn, port, re_, im, mag, db, ph in spectrum_rows(bundle):
            fh.write(",".join([_fmt(f), _fmt(fn), f'"{port}"', _fmt(re_), _fmt(im), _fmt(mag), _fmt(db),
                               _fmt(ph)]) + "\n")


def export_heatmap(bundle: ReportBundle, path):
    """One row per phase shifter in canonical order (1-based cell numbers)."""
    spec = bundle.spec
    x = spec.params
    with open(path, "w", newline="") as fh:
        fh.write("cell,index,tbu,row,col,which,value_rad,value_over_pi\n")
        for i in range(spec.n_params):
            p = param_index(spec, i)
            fh.write(f"{i + 1},{i},{p.tbu_kind},{p.row},{p.col},{p.which},{_fmt(x[i])},{_fmt(x[i] / np.pi)}\n")


def coupling_rows(spec: MeshSpec):
    for kind, th, ph in (("vertical", spec.theta_v, spec.phi_v), ("horizontal", spec.theta_h, spec.phi_h)):
        ratio, common = coupling_and_common_phase(th, ph)
        caption = caption_common_phase(th, ph)
        for r, j in np.ndindex(th.shape):
            yield kind, r, j, th[r, j], ph[r, j], ratio[r, j], common[r, j], caption[r, j]


def export_coupling(bundle: ReportBundle, path):
    with open(path, "w", newline="") as fh:
        fh.write("tbu,row,col,theta,phi,coupling_ratio,common_phase,common_phase_caption\n")
        for kind, r, j, th, ph, ratio, common, caption in coupling_rows(bundle.spec):
            fh.write(f"{kind},{r},{j},{_fmt(th)},{_fmt(ph)},{_fmt(ratio)},{_fmt(common)},{_fmt(caption)}\n")


def port_magnitudes(spec: MeshSpec, omega: float, excitation):
    """Every port's amplitude magnitude at one frequency, as rows of
    ``(side, row, col, direction, magnitude)``."""
    f = direct_solve(spec, omega, excitation)
    out = []
    for side, arr_i, arr_o in (("A", f.a_in, f.a_out), ("B", f.b_in, f.b_out)):
        for r, j in np.ndindex(arr_i.shape):
            out.append((side, r, j, "I", abs(arr_i[r, j])))
            out.append((side, r, j, "O", abs(arr_o[r, j])))
    return out


def export_meshstate(bundle: ReportBundle, path, ports_path=None):
    """Mesh configuration as JSON (reloadable with :func:`load_meshstate`)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario": bundle.scenario.name,
        "seed": bundle.seed,
        "mesh": bundle.spec.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ports_path is not None:
        sc = bundle.scenario
        fn = np.array([sc.state_frequency])
        from .objectives import denormalize_frequency
        omega = TWO_PI * float(denormalize_frequency(fn, sc.constants, sc.length)[0])
        with open(ports_path, "w", newline="") as fh:
            fh.write("side,row,col,direction,magnitude,displayed\n")
            for side, r, j, d, mag in port_magnitudes(bundle.spec, omega, sc.excitation):
                shown = int(mag >= sc.min_display_magnitude)
                fh.write(f"{side},{r},{j},{d},{_fmt(mag)},{shown}\n")


def load_meshstate(path) -> MeshSpec:
    with open(path) as fh:
        doc = json.load(fh)
    if "mesh" not in doc:
        raise ScenarioError("mesh state file lacks a 'mesh' entry", str(path))
    return MeshSpec.from_dict(doc["mesh"])


def export_trace(result: SynthesisResult, path):
    with open(path, "w", newline="") as fh:
        fh.write("restart,iteration,cost\n")
        for r, trace in enumerate(result.all_traces):
            for i, c in enumerate(trace):
                fh.write(f"{r},{i},{float(c)!r}\n")


def run_summary(bundle: ReportBundle) -> dict:
    """Deterministic run metadata (no timings)."""
    res = bundle.result
    d = {
        "scenario": bundle.scenario.name,
        "seed": bundle.seed,
        "restarts": bundle.restarts,
        "cost_kind": bundle.scenario.cost_kind,
        "n_params": bundle.spec.n_params,
    }
    if res is not None:
        diag = res.diagnostics
        d.update({
            "best_cost": float(res.best_cost),
            "best_restart": int(res.restart_index),
            "restart_costs": [float(c) for c in res.all_costs],
            "iterations": int(diag.get("iterations", res.n_iters)),
            "stop_reason": diag.get("stop_reason"),
            "clamped_points": int(diag.get("clamped_points", 0)),
            "min_abs_f12": float(diag.get("min_abs_f12", np.nan)),
            "restart_failures": diag.get("restart_failures", []),
        })
    mags = np.abs(bundle.responses)
    d["outputs"] = [
        {"port": f"A_{{{p},{bundle.spec.n_cols}}}",
         "min_mag_db": float(20 * np.log10(max(mags[o].min(), 1e-300))),
         "max_mag_db": float(20 * np.log10(max(mags[o].max(), 1e-300)))}
        for o, p in enumerate(bundle.scenario.outputs)
    ]
    if bundle.fd_report is not None:
        d["fd_check"] = {"normwise_error": bundle.fd_report.normwise_error,
                         "max_rel_error": bundle.fd_report.max_rel_error}
    return d


def svg_spectrum(bundle: ReportBundle, path, width=640, height=360):
    """Minimal SVG line plot of output magnitudes in dB against f_norm."""
    g = bundle.grid
    mags = np.abs(bundle.responses)
    db = 20 * np.log10(np.maximum(mags, 1e-12)) if mags.size else np.zeros((0, g.n_grid))
    lo = float(np.floor(db.min() / 10) * 10) if db.size else -10.0
    hi = max(float(np.ceil(db.max() / 10) * 10), lo + 10) if db.size else 0.0
    pad = 40
    x = pad + (g.normalized - g.normalized[0]) / (g.normalized[-1] - g.normalized[0]) * (width - 2 * pad)
    colors = ["#c0392b", "#2471a3", "#229954", "#17a589", "#7d3c98", "#b9770e"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             f'fill="none" stroke="black"/>',
             f'<text x="{pad}" y="{pad - 8}" font-size="12">{hi:g} dB</text>',
             f'<text x="{pad}" y="{height - pad + 16}" font-size="12">{lo:g} dB, f_norm '
             f'{g.normalized[0]:g} .. {g.normalized[-1]:g}</text>']
    for o in range(db.shape[0]):
        y = pad + (hi - db[o]) / (hi - lo) * (height - 2 * pad)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{colors[o % len(colors)]}" points="{pts}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_exports(bundle: ReportBundle, out_dir, svg=False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "spectrum": out / "spectrum.csv",
        "heatmap": out / "heatmap.csv",
        "coupling": out / "coupling.csv",
        "meshstate": out / "meshstate.json",
        "ports": out / "ports.csv",
        "summary": out / "summary.json",
    }
    export_spectrum(bundle, files["spectrum"])
    export_heatmap(bundle, files["heatmap"])
    export_coupling(bundle, files["coupling"])
    export_meshstate(bundle, files["meshstate"], files["ports"])
    if bundle.result is not None:
        files["trace"] = out / "cost_trace.csv"
        export_trace(bundle.result, files["trace"])
    if bundle.fd_report is not None:
        files["fd_check"] = out / "fd_check.json"
        bundle.fd_report.to_json(files["fd_check"])
    if svg:
        files["svg"] = out / "spectrum.svg"
        svg_spectrum(bundle, files["svg"])
    with open(files["summary"], "w") as fh:
        json.dump(run_summary(bundle), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return files


def _thermal_model(sc: Scenario, n_params: int) -> ThermalModel:
    t = sc.thermal or {}
    coeff = float(t.get("h_coefficient", 1.0))
    if "phi_matrix" in t:
        return ThermalModel(np.asarray(t["phi_matrix"], dtype=float), coeff)
    return ThermalModel.uniform_crosstalk(n_params, float(t.get("crosstalk", 0.0)), coeff)


def synthesize_scenario(sc: Scenario, seed: Optional[int] = None, restarts: Optional[int] = None,
                        progress=None) -> SynthesisResult:
    opts = sc.options
    kw = opts.to_dict()
    if seed is not None:
        kw["seed"] = int(seed)
    if restarts is not None:
        kw["restarts"] = int(restarts)
    opts = OptimizerOptions(**kw, progress=progress)
    spec = sc.spec_template
    if sc.thermal:
        tm = _thermal_model(sc, spec.n_params)
        return synthesize_thermal_restarts(spec, sc.grid, sc.targets, sc.cost_kind, tm, opts,
                                           project_nonnegative=bool(sc.thermal.get("nonnegative", False)))
    return synthesize_restarts(spec, sc.grid, sc.targets, sc.cost_kind, opts)


def run_scenario(path_or_scenario, out_dir=None, seed: Optional[int] = None, restarts: Optional[int] = None,
                 progress: bool = False, fd_check: bool = False, svg: bool = False,
                 progress_stream=None) -> ReportBundle:
    """Synthesize one scenario and (if ``out_dir`` is given) write every export."""
    sc = path_or_scenario if isinstance(path_or_scenario, Scenario) else load_scenario(path_or_scenario)
    cb = json_progress(progress_stream or sys.stdout) if progress else None
    result = synthesize_scenario(sc, seed, restarts, cb)
    spec = result.spec
    fd = None
    if fd_check and sc.outputs:
        fd = finite_difference_check(spec, sc.grid, sc.targets, sc.cost_kind)
    bundle = ReportBundle(sc, spec, result, result.final_responses, fd,
                          int(sc.options.seed if seed is None else seed),
                          int(sc.options.restarts if restarts is None else restarts))
    if out_dir is not None:
        write_exports(bundle, out_dir, svg)
    return bundle


def simulate_bundle(spec: MeshSpec, grid: FrequencyGrid, excitation, outputs=None, name="simulation"):
    """Report bundle for a fixed configuration (no optimization)."""
    from .autodiff import response_jacobian

    outputs = list(range(spec.n_ports)) if outputs is None else [int(o) for o in outputs]
    resp = response_jacobian(spec, grid.points, excitation, with_jacobian=False).responses[:, outputs].T
    sc = Scenario(name, spec.n_rows, spec.n_cols, spec.constants, float(spec.alpha_v.flat[0]),
                  float(spec.length_v.flat[0]), grid, [], outputs,
                  TargetSpec(outputs, np.abs(resp) if outputs else np.zeros((0, grid.n_grid)),
                             excitation, None, np.ones(grid.n_grid)),
                  "linear_mag", OptimizerOptions())
    return ReportBundle(sc, spec, None, resp)
