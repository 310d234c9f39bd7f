"""Scenario files: loading, defaults, overrides and validation.

A scenario is one TOML document.  Every section is optional apart from what
the chosen ``mode`` needs; :func:`resolve` fills in the defaults so that the
resolved dictionary (written to the run manifest) fully determines a run.
"""
from __future__ import annotations

import copy
import math
import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fundamental import PRESETS, FundamentalDiagram
from .geometry import EDGES, SEGMENT_KINDS, BoundarySegment, Grid, WalkingDomain
from .history import PiecewiseLinear
from .perception import STRATEGIES, PerceptionConfig

MODES = ("perception-test-1d", "perception-test-2d", "footbridge", "station", "custom")
PRESET_NAMES = ("perception_test_1d", "perception_test_2d", "footbridge", "station")


class ScenarioError(ValueError):
    """Invalid scenario; ``problems`` lists every violated constraint."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.problems))


DEFAULTS = {
    "mode": "custom",
    "description": "",
    "t_end": 1.0,
    "grid": {"n1": 100, "n2": 1, "dx": 0.01},
    "fundamental": {"preset": "asia-rush"},
    "perception": {
        "strategy": "s3", "alpha_bar_deg": 85.0, "delta0": 0.05, "mu": 1.0, "theta": 0.7,
        "tau1_steps": 0, "epsilon": 1e-4, "degenerate": "avoid",
    },
    "solver": {"cfl": 0.9, "n_eta": 64, "periodic": False, "sor_omega": 1.8},
    "domain": {"obstacles": [], "segments": []},
    "gates": [],
    "inflow": {"history": [[0.0, 0.0]], "note": ""},
    "initial": {"kind": "zero"},
    "output": {"dump_every": 0.0, "dump_potential": False},
    "diagnostics": {"lowpass_window": 0.0, "emptying_threshold": 0.01, "reference_width": 0.0,
                    "length_scale": 1.0},
    "seed": 0,
}

STRUCTURE_DEFAULTS = {
    "setup": "motionless",
    "frequency": 0.9, "damping": 0.007, "deck_width": 5.25, "deck_mass_per_area": 800.0,
    "length": 180.0, "pedestrian_mass": 75.0, "modal_mass": 0.0, "mode_shape": [],
    "z_c": 0.1, "z_max": 2.1, "tau1": 1.0, "tau2": 5.0,
    "imposed_peak": 0.25, "imposed_rate": 0.02,
    "probes": [0.3], "snapshot_times": [],
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_path(name: str) -> Path:
    key = name.replace("-", "_")
    if key not in PRESET_NAMES:
        raise ScenarioError([f"unknown scenario preset {name!r}; choose from {', '.join(PRESET_NAMES)}"])
    return Path(str(resources.files("crowdflow") / "scenarios" / f"{key}.toml"))


def load(source: str | Path) -> dict:
    """Parse a scenario file, or a shipped preset when given a bare name."""
    path = Path(source)
    if not path.exists() and path.suffix == "" and str(source).replace("-", "_") in PRESET_NAMES:
        path = preset_path(str(source))
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError([f"scenario file not found: {source}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"scenario file {source} is not valid TOML: {exc}"]) from None


def parse_value(text: str):
    """Interpret an override value as TOML, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides (values parsed as TOML)."""
    out = copy.deepcopy(raw)
    problems = []
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r} must look like key=value")
            continue
        key, text = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            problems.append(f"override {item!r} has an empty key")
            continue
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                problems.append(f"override {item!r}: {p!r} is not a table")
                break
            node = nxt
        else:
            node[parts[-1]] = parse_value(text.strip())
    if problems:
        raise ScenarioError(problems)
    return out


def resolve(raw: dict) -> dict:
    """Fill defaults and validate; raises :class:`ScenarioError` listing all problems."""
    sc = _merge(DEFAULTS, raw)
    if sc["mode"] == "footbridge" or "structure" in raw:
        sc["structure"] = _merge(STRUCTURE_DEFAULTS, raw.get("structure", {}))
    if not sc["diagnostics"].get("lowpass_window"):
        sc["diagnostics"]["lowpass_window"] = 0.1 * float(sc["t_end"]) if _is_num(sc["t_end"]) else 0.0
    problems = validate(sc)
    if problems:
        raise ScenarioError(problems)
    return sc


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(sc: dict) -> list[str]:
    p: list[str] = []

    def num(path, value, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
        if integer and not (isinstance(value, int) and not isinstance(value, bool)):
            p.append(f"{path} must be an integer (got {value!r})")
            return
        if not _is_num(value):
            p.append(f"{path} must be a number (got {value!r})")
            return
        bad_lo = lo is not None and (value <= lo if lo_open else value < lo)
        bad_hi = hi is not None and (value >= hi if hi_open else value > hi)
        if bad_lo or bad_hi:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            rng = f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
            p.append(f"{path} must lie in {rng} (got {value})")

    if sc["mode"] not in MODES:
        p.append(f"mode must be one of {', '.join(MODES)} (got {sc['mode']!r})")
    num("t_end", sc["t_end"], 0.0, None, lo_open=True)
    g = sc["grid"]
    num("grid.n1", g.get("n1"), 1, None, integer=True)
    num("grid.n2", g.get("n2"), 1, None, integer=True)
    num("grid.dx", g.get("dx"), 0.0, None, lo_open=True)

    fdc = sc["fundamental"]
    if "preset" in fdc and any(k in fdc for k in ("v_max", "rho_max", "gamma")):
        p.append("fundamental: give either preset or (v_max, rho_max, gamma), not both")
    elif "preset" in fdc:
        if fdc["preset"] not in PRESETS:
            p.append(f"fundamental.preset must be one of {', '.join(PRESETS)} (got {fdc['preset']!r})")
    else:
        for k in ("v_max", "rho_max", "gamma"):
            num(f"fundamental.{k}", fdc.get(k), 0.0, None, lo_open=True)

    pc = sc["perception"]
    known = set(DEFAULTS["perception"])
    for k in pc:
        if k not in known:
            p.append(f"perception.{k} is not a known setting")
    if pc.get("strategy") not in STRATEGIES:
        p.append(f"perception.strategy must be one of {', '.join(STRATEGIES)} (got {pc.get('strategy')!r})")
    num("perception.alpha_bar_deg", pc.get("alpha_bar_deg"), 0.0, 90.0, lo_open=True)
    num("perception.delta0", pc.get("delta0"), 0.0, None, lo_open=True)
    num("perception.mu", pc.get("mu"), 0.0, None)
    num("perception.theta", pc.get("theta"), 0.0, 1.0)
    num("perception.tau1_steps", pc.get("tau1_steps"), 0, None, integer=True)
    num("perception.epsilon", pc.get("epsilon"), 0.0, None, lo_open=True)
    if pc.get("degenerate") not in ("avoid", "none"):
        p.append(f"perception.degenerate must be 'avoid' or 'none' (got {pc.get('degenerate')!r})")

    so = sc["solver"]
    num("solver.cfl", so.get("cfl"), 0.0, 1.0, lo_open=True)
    num("solver.n_eta", so.get("n_eta"), 2, None, integer=True)
    num("solver.sor_omega", so.get("sor_omega"), 0.0, 2.0, lo_open=True, hi_open=True)

    hist = sc["inflow"].get("history")
    try:
        h = PiecewiseLinear(hist)
        if (h.values < 0).any() or (h.values > 1).any():
            p.append("inflow.history densities must lie in [0, 1]")
    except (ValueError, TypeError) as exc:
        p.append(f"inflow.history: {exc}")

    ini = sc["initial"]
    kind = ini.get("kind")
    if kind not in ("zero", "uniform", "gaussian"):
        p.append(f"initial.kind must be zero, uniform or gaussian (got {kind!r})")
    elif kind == "uniform":
        num("initial.value", ini.get("value"), 0.0, 1.0)
    elif kind == "gaussian":
        num("initial.rho0", ini.get("rho0", 0.25), 0.0, 1.0)
        num("initial.drho", ini.get("drho", 0.3), 0.0, 1.0)
        num("initial.width", ini.get("width", 1 / 35), 0.0, None, lo_open=True)
        if _is_num(ini.get("rho0", 0.25)) and _is_num(ini.get("drho", 0.3)) \
                and ini.get("rho0", 0.25) + ini.get("drho", 0.3) > 1.0:
            p.append("initial.rho0 + initial.drho must not exceed 1")

    out = sc["output"]
    num("output.dump_every", out.get("dump_every"), 0.0, None)
    dg = sc["diagnostics"]
    num("diagnostics.lowpass_window", dg.get("lowpass_window"), 0.0, None)
    num("diagnostics.emptying_threshold", dg.get("emptying_threshold"), 0.0, 1.0, lo_open=True, hi_open=True)
    num("diagnostics.reference_width", dg.get("reference_width"), 0.0, None)
    num("diagnostics.length_scale", dg.get("length_scale"), 0.0, None, lo_open=True)

    # geometry
    seg_names = set()
    for k, seg in enumerate(sc["domain"].get("segments", [])):
        where = f"domain.segments[{k}]"
        if seg.get("kind") not in SEGMENT_KINDS:
            p.append(f"{where}.kind must be one of {', '.join(SEGMENT_KINDS)} (got {seg.get('kind')!r})")
        if seg.get("edge") not in EDGES:
            p.append(f"{where}.edge must be one of {', '.join(EDGES)} (got {seg.get('edge')!r})")
        if not (_is_num(seg.get("start")) and _is_num(seg.get("end")) and seg["end"] > seg["start"]):
            p.append(f"{where} needs numeric start < end")
        seg_names.add(seg.get("name", ""))
    for k, ob in enumerate(sc["domain"].get("obstacles", [])):
        if not (isinstance(ob, list) and len(ob) == 4 and all(_is_num(v) for v in ob)):
            p.append(f"domain.obstacles[{k}] must be [x1_min, x1_max, x2_min, x2_max]")
    for k, gt in enumerate(sc.get("gates", [])):
        if gt.get("axis") not in (0, 1):
            p.append(f"gates[{k}].axis must be 0 or 1 (got {gt.get('axis')!r})")
        if "exit" in gt and gt["exit"] not in seg_names:
            p.append(f"gates[{k}] refers to unknown segment {gt['exit']!r}")

    if sc["mode"] in ("station", "perception-test-2d") and _is_num(g.get("n2")) and g.get("n2", 1) < 2:
        p.append(f"mode {sc['mode']} needs a 2D grid (grid.n2 >= 2)")
    if sc["mode"] in ("footbridge", "perception-test-1d") and g.get("n2") != 1:
        p.append(f"mode {sc['mode']} needs a 1D grid (grid.n2 = 1)")

    if "structure" in sc:
        st = sc["structure"]
        if st.get("setup") not in ("motionless", "imposed-motion", "two-way"):
            p.append(f"structure.setup must be motionless, imposed-motion or two-way (got {st.get('setup')!r})")
        num("structure.frequency", st.get("frequency"), 0.0, None, lo_open=True)
        num("structure.damping", st.get("damping"), 0.0, 1.0, hi_open=True)
        for k in ("deck_width", "deck_mass_per_area", "length", "pedestrian_mass"):
            num(f"structure.{k}", st.get(k), 0.0, None, lo_open=True)
        num("structure.modal_mass", st.get("modal_mass"), 0.0, None)
        num("structure.z_c", st.get("z_c"), 0.0, None, lo_open=True)
        num("structure.z_max", st.get("z_max"), 0.0, None, lo_open=True)
        if _is_num(st.get("z_c")) and _is_num(st.get("z_max")) and not st["z_c"] < st["z_max"]:
            p.append(f"structure.z_c must be below structure.z_max (got {st['z_c']} >= {st['z_max']})")
        num("structure.tau1", st.get("tau1"), 0.0, None)
        num("structure.tau2", st.get("tau2"), 0.0, None)
        num("structure.imposed_peak", st.get("imposed_peak"), 0.0, None)
        num("structure.imposed_rate", st.get("imposed_rate"), 0.0, None)
        for x in st.get("probes", []):
            num("structure.probes[]", x, 0.0, 1.0)
    if not p:
        try:
            build_domain(sc)
        except ValueError as exc:
            p.append(f"domain: {exc}")
    return p


# --------------------------------------------------------------- builders


def fundamental_diagram(sc: dict) -> FundamentalDiagram:
    """Dimensional law named by the scenario."""
    fdc = sc["fundamental"]
    if "preset" in fdc:
        return PRESETS[fdc["preset"]]
    return FundamentalDiagram(fdc["v_max"], fdc["rho_max"], fdc["gamma"])


def perception_config(sc: dict) -> PerceptionConfig:
    return PerceptionConfig(**sc["perception"])


def grid(sc: dict) -> Grid:
    g = sc["grid"]
    return Grid(int(g["n1"]), int(g["n2"]), float(g["dx"]))


def build_domain(sc: dict) -> WalkingDomain:
    gr = grid(sc)
    segs = [BoundarySegment(s["kind"], s["edge"], float(s["start"]), float(s["end"]), s.get("name", ""))
            for s in sc["domain"].get("segments", [])]
    if gr.is_1d and not segs:
        return WalkingDomain.interval(gr.n1, gr.length1)
    needs_exit = sc["mode"] != "perception-test-1d"
    return WalkingDomain.from_rectangles(gr, sc["domain"].get("obstacles", []), segs, require_exit=needs_exit)


def inflow(sc: dict) -> PiecewiseLinear:
    return PiecewiseLinear(sc["inflow"]["history"])
