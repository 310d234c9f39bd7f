"""Run orchestration: scenario in, CSV files and a manifest out."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import tomli_w

from . import diagnostics as dg
from . import scenario as scn
from . import solver1d, solver2d, structure
from .fundamental import MotionSensitivity
from .perception import perceive, perceive_1d
from .potential import solve_potential
from .geometry import visual_depth_field

FMT = "%.17g"


class RunError(RuntimeError):
    """Runtime failure with a machine-readable payload."""

    def __init__(self, message: str, kind: str = "runtime", extra: dict | None = None):
        super().__init__(message)
        self.kind = kind
        self.extra = extra or {}


# ------------------------------------------------------------------ output


def write_csv(path: Path, header: list[str], columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns]) if columns else np.empty((0, 0))
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=FMT)


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _plain(x):
    """Convert numpy scalars and containers into TOML-serialisable values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    return x


def write_manifest(out_dir: Path, sc: dict, results: dict) -> None:
    doc = {"scenario": _plain(sc), "results": _plain(results)}
    with open(out_dir / "manifest.txt", "wb") as fh:
        tomli_w.dump(doc, fh)


def read_manifest(run_dir: Path) -> dict:
    with open(Path(run_dir) / "manifest.txt", "rb") as fh:
        return scn.tomllib.load(fh)


def write_error(out_dir: Path, kind: str, message: str, problems=None, extra=None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"status": "error", "kind": kind, "message": message, "problems": list(problems or [])}
    payload.update(extra or {})
    with open(out_dir / "error.json", "w") as fh:
        json.dump(payload, fh, indent=2)


def _dump_times(t_end: float, every: float) -> list[float]:
    if not every > 0:
        return []
    n = int(math.floor(t_end / every + 1e-9))
    return [k * every for k in range(n + 1)]


# ------------------------------------------------------------- run modes


def run(sc: dict, out_dir: Path, dump_potential: bool | None = None) -> dict:
    """Execute a resolved scenario; returns the results table of the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dump_potential is not None:
        sc["output"]["dump_potential"] = bool(dump_potential)
    mode = sc["mode"]
    grid = scn.grid(sc)
    if mode == "perception-test-1d":
        results = _perception_1d(sc, out_dir)
    elif mode == "perception-test-2d":
        results = _perception_2d(sc, out_dir)
    elif grid.is_1d:
        results = _run_1d(sc, out_dir)
    else:
        results = _run_2d(sc, out_dir)
    results["status"] = "ok"
    write_manifest(out_dir, sc, results)
    return results


def _initial(sc: dict, grid) -> np.ndarray:
    ini = sc["initial"]
    if ini["kind"] == "zero":
        return np.zeros(grid.shape)
    if ini["kind"] == "uniform":
        return np.full(grid.shape, float(ini["value"]))
    centre = ini.get("centre", [0.4, 0.5])
    return dg.gaussian_bump(grid, ini.get("rho0", 0.25), ini.get("drho", 0.3), ini.get("width", 1 / 35),
                            tuple(centre))


def _perception_1d(sc: dict, out_dir: Path) -> dict:
    grid = scn.grid(sc)
    fd = scn.fundamental_diagram(sc).nondimensional()
    cfg = scn.perception_config(sc)
    rho = _initial(sc, grid).reshape(-1)
    x = grid.x1
    depth = grid.length1 - x
    delta = cfg.sensory_law().depth(depth, fd.speed(rho), fd.v_max)
    rho_p, x_p = perceive_1d(rho, delta, grid.dx, cfg.strategy)
    write_csv(out_dir / "perceived.csv", ["x", "rho", "rho_p", "x_p", "delta"], [x, rho, rho_p, x_p, delta])
    return {"rho_p_min": rho_p.min(), "rho_p_max": rho_p.max(), "cells": grid.n1}


def _perception_2d(sc: dict, out_dir: Path) -> dict:
    grid = scn.grid(sc)
    dom = scn.build_domain(sc)
    fd = scn.fundamental_diagram(sc).nondimensional()
    cfg = scn.perception_config(sc)
    pot = solve_potential(dom, omega=float(sc["solver"]["sor_omega"]))
    rho = _initial(sc, grid)
    depth = visual_depth_field(dom, pot.e_d)
    delta = cfg.sensory_law().depth(depth, fd.speed(rho), fd.v_max)
    res = perceive(dom, rho, pot.e_d, delta, cfg)
    X1, X2 = grid.centres()
    write_csv(out_dir / "perceived.csv", ["x1", "x2", "rho", "rho_p", "xp1", "xp2", "ei1", "ei2"],
              [X1.ravel(), X2.ravel(), rho.ravel(), res.rho_p.ravel(), res.x_p[..., 0].ravel(),
               res.x_p[..., 1].ravel(), res.e_i[..., 0].ravel(), res.e_i[..., 1].ravel()])
    if sc["output"]["dump_potential"]:
        _write_potential(out_dir, grid, pot)
    free = dom.free
    return {"rho_p_min": res.rho_p[free].min(), "rho_p_max": res.rho_p[free].max(),
            "potential_iterations": pot.iterations}


def _write_potential(out_dir: Path, grid, pot) -> None:
    X1, X2 = grid.centres()
    write_csv(out_dir / "potential.csv", ["x1", "x2", "u", "ed1", "ed2"],
              [X1.ravel(), X2.ravel(), pot.u.ravel(), pot.e_d[..., 0].ravel(), pot.e_d[..., 1].ravel()])


def _mode_shape(st: dict, x: np.ndarray) -> np.ndarray:
    table = st.get("mode_shape") or []
    if table:
        arr = np.asarray(table, dtype=float).reshape(-1, 2)
        return np.interp(x, arr[:, 0], arr[:, 1])
    return structure.default_mode_shape(x)


def _run_1d(sc: dict, out_dir: Path) -> dict:
    grid = scn.grid(sc)
    fd_dim = scn.fundamental_diagram(sc)
    fd = fd_dim.nondimensional()
    cfg = scn.perception_config(sc)
    inflow = scn.inflow(sc)
    model = solver1d.Model1D(grid.n1, fd, cfg, inflow, length=grid.length1, cfl=sc["solver"]["cfl"],
                             n_eta=sc["solver"]["n_eta"], periodic=bool(sc["solver"].get("periodic", False)))
    st = sc.get("structure", dict(scn.STRUCTURE_DEFAULTS))
    modal = structure.ModalStructure(
        _mode_shape(st, model.x), st["frequency"], st["damping"], st["deck_width"], st["deck_mass_per_area"],
        st["length"], st["pedestrian_mass"], st["modal_mass"] or None)
    config = structure.CouplingConfig(
        st["setup"], MotionSensitivity(st["z_c"], st["z_max"], st["tau1"], st["tau2"]),
        st["imposed_peak"], st["imposed_rate"], time_scale=st["length"] / fd_dim.v_max)
    t_end = float(sc["t_end"])
    dumps = _dump_times(t_end, sc["output"]["dump_every"])
    snaps = sorted(set(dumps) | {float(s) for s in st.get("snapshot_times", [])})
    rho0 = _initial(sc, grid).reshape(-1)
    try:
        res = structure.coupled_run(model, rho0, t_end, config, modal, st.get("probes", [0.3]), snaps)
    except solver1d.SolverAbort as exc:
        last = exc.state
        if last is not None:
            write_csv(out_dir / "last_state.csv", ["x", "rho"], [model.x, last.rho])
        raise RunError(str(exc), "solver-abort", {"t": getattr(last, "t", None)}) from exc

    for k, s in enumerate(res.snapshots):
        write_csv(out_dir / f"density_{k:04d}.csv", ["t", "x", "rho", "rho_p", "v", "g", "envelope"],
                  [np.full(model.n, s["t"]), model.x, s["rho"], s["rho_p"], s["v"], s["g"], s["envelope"]])
    write_csv(out_dir / "diagnostics.csv", ["t", "total_mass", "l2_energy", "q_in", "q_out"],
              [res.t, res.mass, res.energy, np.r_[np.nan, res.q_in], np.r_[np.nan, res.q_out]])
    header, cols = ["t"], [res.t]
    for x, rec in res.probes.items():
        for key in ("rho", "v", "acc"):
            header.append(f"{key}@{x:g}")
            cols.append(rec[key])
    write_csv(out_dir / "probes.csv", header, cols)
    # audit: initial + inflow - outflow == current
    m0, m1 = res.mass[0], res.mass[-1]
    net = float(np.sum(res.dt * (res.q_in - res.q_out)))
    audit = m0 + net - m1 if not model.periodic else m0 - m1
    return {"steps": len(res.t) - 1, "final_mass": m1, "injected_minus_exited": net, "mass_audit": audit,
            "snapshots": len(res.snapshots), "time_scale_s": config.time_scale}


def _run_2d(sc: dict, out_dir: Path) -> dict:
    grid = scn.grid(sc)
    dom = scn.build_domain(sc)
    fd = scn.fundamental_diagram(sc).nondimensional()
    cfg = scn.perception_config(sc)
    inflow = scn.inflow(sc)
    pot = solve_potential(dom, omega=float(sc["solver"]["sor_omega"]))
    model = solver2d.Model2D(dom, fd, cfg, inflow, cfl=sc["solver"]["cfl"], potential=pot)
    if sc["output"]["dump_potential"]:
        _write_potential(out_dir, grid, model.potential)
    gates = [dg.Gate(g.get("name", f"gate{k}"), int(g["axis"]), float(g["position"]), float(g["lo"]), float(g["hi"]))
             for k, g in enumerate(sc.get("gates", []))]
    t_end = float(sc["t_end"])
    dumps = _dump_times(t_end, sc["output"]["dump_every"])
    state = solver2d.initial_state(model, _initial(sc, grid))
    h2 = grid.cell_measure
    T, M, E = [0.0], [float(state.rho.sum() * h2)], [dg.l2_energy(state.rho, grid.dx)]
    Q = [[0.0] * len(gates)]
    X = [[0.0] * len(dom.exits)]
    X1, X2 = grid.centres()
    n_dump = 0

    def dump(st):
        nonlocal n_dump
        write_csv(out_dir / f"density_{n_dump:04d}.csv", ["t", "x1", "x2", "rho"],
                  [np.full(X1.size, st.t), X1.ravel(), X2.ravel(), st.rho.ravel()])
        n_dump += 1

    if dumps and dumps[0] <= 0.0:
        dump(state)
        dumps.pop(0)
    while state.t < t_end - 1e-14:
        # snapshots are taken at the first step on or after each dump time, so
        # output settings never change the computed trajectory
        cap = t_end - state.t
        old = state
        try:
            state, info = solver2d.step2d(model, state, dt_cap=cap)
        except solver2d.SolverAbort as exc:
            write_csv(out_dir / "last_state.csv", ["x1", "x2", "rho"], [X1.ravel(), X2.ravel(), old.rho.ravel()])
            raise RunError(str(exc), "solver-abort", {"t": old.t}) from exc
        T.append(state.t)
        M.append(float(state.rho.sum() * h2))
        E.append(dg.l2_energy(state.rho, grid.dx))
        Q.append([dg.corridor_flux(old.rho, state.v, grid, g) for g in gates])
        X.append((info.exited / info.dt).tolist())
        while dumps and dumps[0] <= state.t + 1e-14:
            dump(state)
            dumps.pop(0)
    T = np.asarray(T)
    Q = np.asarray(Q).reshape(len(T), len(gates))
    X = np.asarray(X).reshape(len(T), len(dom.exits))
    names = [g.name for g in gates]
    write_csv(out_dir / "diagnostics.csv", ["t", "total_mass", "l2_energy"] + [f"Q_{n}" for n in names],
              [T, M, E] + [Q[:, k] for k in range(len(gates))])
    window = float(sc["diagnostics"]["lowpass_window"])
    rho_bar = float(np.max(inflow.values))
    # reference flux: plateau inlet density through one corridor width
    diag = sc["diagnostics"]
    width = float(diag["reference_width"]) or (gates[0].length if gates else grid.dx)
    q_ref = dg.inlet_flux(fd, rho_bar, width) if rho_bar > 0 else float("nan")
    fd_dim = scn.fundamental_diagram(sc)
    q_ref_dim = q_ref * fd_dim.rho_max * fd_dim.v_max * float(diag["length_scale"])
    smooth = [dg.lowpass(Q[:, k], window, T) for k in range(len(gates))]
    header = ["t"] + [f"Q_{n}" for n in names] + [f"Qlp_{n}" for n in names] + [f"Qnorm_{n}" for n in names] \
        + [f"exit_{s.name or k}" for k, s in enumerate(dom.exits)]
    write_csv(out_dir / "flux.csv", header,
              [T] + [Q[:, k] for k in range(len(gates))] + smooth + [s / q_ref for s in smooth]
              + [X[:, k] for k in range(len(dom.exits))])
    after = inflow.last_nonzero_time()
    t_empty, frac = dg.emptying_time(T, M, float(sc["diagnostics"]["emptying_threshold"]), after)
    peaks = {}
    for k, n in enumerate(names):
        tp, qp = dg.first_local_max(T, smooth[k], window)
        j = int(np.argmax(smooth[k]))
        peaks[n] = {"max_time": T[j], "max_value": smooth[k][j], "first_max_time": tp, "first_max_value": qp}
    audit = solver2d.mass_audit(state, h2)
    return {"steps": len(T) - 1, "final_mass": M[-1], "peak_mass": max(M), "inlet_mass": state.inlet_mass,
            "exited_mass": float(state.exited.sum()), "mass_audit": audit, "emptying_time": t_empty,
            "emptying_final_fraction": frac, "inflow_end": after, "lowpass_window": window,
            "q_reference": q_ref, "q_reference_per_second": q_ref_dim,
            "peaks": peaks, "dumps": n_dump}


# ----------------------------------------------------------------- compare

METRICS = ("emptying", "flux-peaks", "diff", "speed-crossing")


def _check_compatible(ma: dict, mb: dict) -> None:
    ga, gb = ma["scenario"]["grid"], mb["scenario"]["grid"]
    if (ga["n1"], ga["n2"], ga["dx"]) != (gb["n1"], gb["n2"], gb["dx"]):
        raise RunError(f"incompatible domains: grid {ga} vs {gb}", "incompatible")
    da, db = ma["scenario"].get("domain", {}), mb["scenario"].get("domain", {})
    if da.get("obstacles", []) != db.get("obstacles", []) or da.get("segments", []) != db.get("segments", []):
        raise RunError("incompatible domains: obstacles or boundary segments differ", "incompatible")


def compare(dir_a: Path, dir_b: Path, metric: str) -> dict:
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    if metric not in METRICS:
        raise RunError(f"metric must be one of {', '.join(METRICS)} (got {metric!r})", "usage")
    try:
        ma, mb = read_manifest(dir_a), read_manifest(dir_b)
    except FileNotFoundError as exc:
        raise RunError(f"not a run directory: {exc.filename}", "usage") from None
    _check_compatible(ma, mb)
    ra, rb = ma["results"], mb["results"]
    if metric == "emptying":
        ta, tb = ra.get("emptying_time"), rb.get("emptying_time")
        if ta is None or tb is None:
            raise RunError("emptying time is only recorded for 2D runs", "usage")
        return {"metric": metric, "a": ta, "b": tb, "ratio_a_over_b": ta / tb if tb else float("inf")}
    if metric == "flux-peaks":
        pa, pb = ra.get("peaks", {}), rb.get("peaks", {})
        rows = {}
        for name in pa:
            if name in pb:
                rows[name] = {"a_time": pa[name]["max_time"], "a_value": pa[name]["max_value"],
                              "b_time": pb[name]["max_time"], "b_value": pb[name]["max_value"],
                              "ratio_a_over_b": pa[name]["max_value"] / pb[name]["max_value"]
                              if pb[name]["max_value"] else float("inf")}
        return {"metric": metric, "gates": rows}
    if metric == "diff":
        ha, da = read_csv(dir_a / "diagnostics.csv")
        hb, db = read_csv(dir_b / "diagnostics.csv")
        if ha != hb:
            raise RunError("diagnostics columns differ between the runs", "incompatible")
        t = da[:, 0]
        same_base = len(db) == len(da) and np.array_equal(db[:, 0], t)
        cols = {}
        for k, name in enumerate(ha[1:], start=1):
            b = db[:, k] if same_base else np.interp(t, db[:, 0], db[:, k])
            d = da[:, k] - b
            finite = np.isfinite(d)
            cols[name] = float(np.max(np.abs(d[finite]))) if finite.any() else 0.0
        return {"metric": metric, "resampled": not same_base, "max_abs_difference": cols,
                "series": {"t": t, **{n: da[:, k] - (db[:, k] if same_base else np.interp(t, db[:, 0], db[:, k]))
                                      for k, n in enumerate(ha[1:], start=1)}}}
    # speed-crossing: compare density snapshots taken at the same times
    files = sorted(p.name for p in dir_a.glob("density_*.csv"))
    out = []
    for name in files:
        if not (dir_b / name).exists():
            continue
        ha, a = read_csv(dir_a / name)
        hb, b = read_csv(dir_b / name)
        if "v" not in ha or "v" not in hb:
            raise RunError("speed-crossing needs 1D snapshots with a v column", "usage")
        x = a[:, ha.index("x")]
        cr = dg.crossings(x, a[:, ha.index("v")], b[:, hb.index("v")])
        out.append({"snapshot": name, "t": a[0, 0], "crossings": cr.tolist()})
    return {"metric": metric, "snapshots": out}
