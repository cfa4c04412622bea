"""Command-line front end: scenario files, commands, deterministic outputs.

Scenarios are TOML documents (schema version 1, reference in
docs/scenario_schema.md).  One command per invocation:

    run        simulate, write monitors.csv / snapshots.csv / summary.txt
    spectrum   assemble and solve the boundary eigenproblem, spectrum.csv
    diagnose   run, then Moser / DeGiorgi / decay-envelope verdicts
    waves      self-similar profile and conservation-law residual tables
    sweep      grid over a scenario key (nu, eps, scale, or a dotted path),
               one output directory per value plus a merged summary

Exit codes: 0 completed / all verdicts hold, 2 blow-up detected,
3 invalid input or unwritable output, 4 step failure or a verdict fails.

Outputs are byte-identical across repeat invocations; the only wall-clock
line is the summary metadata header, which --no-metadata removes.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

from . import __version__, analysis, solver, spectral, waves
from .domain import build_mesh
from .model import (BoundaryAssignment, BoundaryCondition, DiffusionLaw,
                    Expression, ModelError, ReactionSpec, Scenario)

__all__ = ["ScenarioError", "parse_scenario", "execute", "main"]

SCHEMA_VERSION = 1
COMMANDS = ("run", "spectrum", "diagnose", "waves", "sweep")

# alias -> dotted path for the common sweep axes
SWEEP_ALIASES = {"nu": "spectrum.nu", "eps": "solver.eps", "scale": "run.scale"}


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# schema


_SIDE_SCHEMA = {"kind", "value", "delta", "h2", "psi_zero"}
_SCHEMA = {
    "schema": None,
    "name": None,
    "domain": {"dimension", "extents", "cells", "boundary"},
    "field": {
        "name", "initial", "initial_trace", "m_exp", "theta", "beta_exp",
        "diffusion", "reaction", "boundary",
    },
    "field.diffusion": {"form", "alpha", "p", "sigma", "eps", "reg_mode"},
    "field.reaction": {"f", "g", "h", "C_f", "C_g", "C_h"},
    "solver": {"method", "cfl", "eps", "reg_mode", "blowup_threshold",
               "newton_tol", "newton_max", "min_dt", "max_dt",
               "force_reference"},
    "monitors": {"snapshot_cadence", "record_energy"},
    "run": {"horizon", "scale"},
    "spectrum": {"variant", "order", "k", "alpha", "m", "p", "c_f", "c_g",
                 "nu", "shift_f", "shift_g", "method"},
    "diagnose": {"decay_mode", "nu", "channel", "tau", "moser", "degiorgi",
                 "k_max"},
    "waves": {"form", "alpha", "p", "r_min", "r_max", "t_min", "t_max",
              "points"},
}
_SIDES = ("left", "right", "bottom", "top")


def _key_line(text: str, key: str):
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) or stripped.startswith(f"[{key}") \
                or stripped.startswith(f"[[{key}"):
            return ln
    return None


def _fail(text: str, key: str, msg: str):
    ln = _key_line(text, key.split(".")[-1])
    where = f" (line {ln})" if ln else ""
    raise ScenarioError(f"{msg}{where}")


def _check_keys(text: str, table: dict, allowed, path: str):
    for key in table:
        if key not in allowed:
            _fail(text, key, f"unknown key {path + key!r}")


def _validate_keys(doc: dict, text: str):
    top = set(_SCHEMA) - {"field.diffusion", "field.reaction"}
    _check_keys(text, doc, top, "")
    for section in ("domain", "solver", "monitors", "run", "spectrum",
                    "diagnose", "waves"):
        if section in doc:
            _check_keys(text, doc[section], _SCHEMA[section], section + ".")
    if "domain" in doc and "boundary" in doc["domain"]:
        _check_keys(text, doc["domain"]["boundary"], set(_SIDES),
                    "domain.boundary.")
    for fld in doc.get("field", []):
        _check_keys(text, fld, _SCHEMA["field"], "field.")
        if "diffusion" in fld:
            _check_keys(text, fld["diffusion"], _SCHEMA["field.diffusion"],
                        "field.diffusion.")
        if "reaction" in fld:
            _check_keys(text, fld["reaction"], _SCHEMA["field.reaction"],
                        "field.reaction.")
        for side, tbl in fld.get("boundary", {}).items():
            if side not in _SIDES:
                _fail(text, side, f"unknown boundary side {side!r}")
            _check_keys(text, tbl, _SIDE_SCHEMA, f"field.boundary.{side}.")


# ---------------------------------------------------------------------------
# document -> Scenario


def _load(text: str) -> dict:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"scenario is not well-formed TOML: {e}") from e
    if doc.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(
            f"schema = {SCHEMA_VERSION} required, got {doc.get('schema')!r}")
    _validate_keys(doc, text)
    return doc


def _build_scenario(doc: dict, text: str,
                    snapshot_cadence=None) -> Scenario:
    try:
        dom = doc["domain"]
        mesh = build_mesh(dom["dimension"], dom["extents"], dom["cells"],
                          dom["boundary"])
    except KeyError as e:
        _fail(text, str(e.args[0]), f"domain is missing key {e.args[0]!r}")
    except ValueError as e:
        raise ScenarioError(f"domain: {e}") from e

    fields = doc.get("field", [])
    if not fields:
        _fail(text, "field", "at least one [[field]] block is required")
    names = tuple(f.get("name", f"u{i}") for i, f in enumerate(fields))
    if len(set(names)) != len(names):
        _fail(text, "name", f"duplicate field names {names}")

    run_tbl = doc.get("run", {})
    scale = float(run_tbl.get("scale", 1.0))
    laws, initials, traces = [], [], []
    f_exprs, g_exprs, h_exprs = [], [], []
    m_exp, thetas, betas = [], [], []
    per_field_bc = []
    sides = sorted(set(mesh.b_side))
    for fname, fld in zip(names, fields):
        d = fld.get("diffusion", {})
        try:
            laws.append(DiffusionLaw(
                form=d.get("form", "constant"), alpha=d.get("alpha", 1.0),
                p=d.get("p", 0.0), sigma=d.get("sigma"),
                eps=d.get("eps", 0.0), reg_mode=d.get("reg_mode", "additive")))
        except ModelError as e:
            raise ScenarioError(f"field {fname!r} diffusion: {e}") from e
        init = fld.get("initial", 0.0)
        if scale != 1.0:
            init = (f"({scale!r})*({init})" if isinstance(init, str)
                    else scale * float(init))
        initials.append(init)
        tr = fld.get("initial_trace")
        if tr is not None and scale != 1.0:
            tr = (f"({scale!r})*({tr})" if isinstance(tr, str)
                  else scale * float(tr))
        traces.append(tr)
        r = fld.get("reaction", {})
        try:
            f_exprs.append(Expression(str(r.get("f", 0)), names))
            g_exprs.append(Expression(str(r.get("g", 0)), names))
            h_exprs.append(Expression(str(r.get("h", 0)), names))
        except ModelError as e:
            raise ScenarioError(f"field {fname!r} reaction: {e}") from e
        m_exp.append(float(fld.get("m_exp", 2.0)))
        thetas.append(fld.get("theta"))
        betas.append(fld.get("beta_exp"))

        bcs = {}
        btbl = fld.get("boundary", {})
        for side in sides:
            if side not in btbl:
                _fail(text, "boundary",
                      f"field {fname!r}: missing boundary.{side}")
            tbl = btbl[side]
            try:
                bcs[side] = BoundaryCondition(
                    kind=tbl.get("kind", "static"),
                    value=float(tbl.get("value", 0.0)),
                    delta=tbl.get("delta"),
                    h2=tbl.get("h2", 0.0),
                    psi_zero=bool(tbl.get("psi_zero", False)))
            except ModelError as e:
                _fail(text, side,
                      f"field {fname!r} boundary.{side}: {e} "
                      "(delta_i > 0 required on dynamic parts)")
        per_field_bc.append(bcs)

    theta_arr = (np.array([t if t is not None else 1.0 for t in thetas])
                 if any(t is not None for t in thetas) else None)
    beta_arr = (np.array([b if b is not None else 1.0 for b in betas])
                if any(b is not None for b in betas) else None)
    try:
        reactions = ReactionSpec(
            f=f_exprs, g=g_exprs, h=h_exprs, m_exp=np.array(m_exp),
            C_f=[fld.get("reaction", {}).get("C_f", 0.0) for fld in fields],
            C_g=[fld.get("reaction", {}).get("C_g", 0.0) for fld in fields],
            C_h=[fld.get("reaction", {}).get("C_h", 0.0) for fld in fields],
            theta=theta_arr, beta_g=beta_arr)
    except ModelError as e:
        raise ScenarioError(f"reactions: {e}") from e

    sv = doc.get("solver", {})
    try:
        cfg = solver.SolverConfig(
            method=sv.get("method", "heun"), cfl=sv.get("cfl", 0.4),
            eps=sv.get("eps"), reg_mode=sv.get("reg_mode", "additive"),
            blowup_threshold=sv.get("blowup_threshold", 1e8),
            newton_tol=sv.get("newton_tol", 1e-10),
            newton_max=sv.get("newton_max", 50),
            min_dt=sv.get("min_dt", 1e-13),
            max_dt=sv.get("max_dt", math.inf),
            force_reference=sv.get("force_reference", False))
    except solver.SolverError as e:
        raise ScenarioError(f"solver: {e}") from e
    mon = doc.get("monitors", {})
    cadence = snapshot_cadence if snapshot_cadence is not None \
        else mon.get("snapshot_cadence")
    monitors = solver.MonitorConfig(
        snapshot_cadence=cadence,
        record_energy=bool(mon.get("record_energy", True)))

    try:
        return Scenario(mesh=mesh, field_names=names, diffusion=laws,
                        reactions=reactions, boundary=BoundaryAssignment(per_field_bc),
                        initial=initials, initial_trace=traces,
                        horizon=float(run_tbl.get("horizon", 1.0)),
                        solver=cfg, monitors=monitors,
                        name=doc.get("name", "scenario"))
    except ModelError as e:
        raise ScenarioError(str(e)) from e


def parse_scenario(document: str, snapshot_cadence=None) -> Scenario:
    """Validated Scenario from TOML text, defaults filled, unknown keys
    rejected with the offending line."""
    doc = _load(document)
    return _build_scenario(doc, document, snapshot_cadence)


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path: str, header_units: list, names: list, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_units:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


class Summary:
    """Ordered key: value lines; every value comes from a monitor channel or
    an operation output (no recomputation in this layer)."""

    def __init__(self):
        self.lines = []

    def add(self, key: str, value):
        self.lines.append(f"{key}: {_fmt(value)}")

    def extend(self, other: "Summary", prefix: str = ""):
        self.lines += [prefix + ln for ln in other.lines]

    def write(self, path: str, metadata: bool, seed) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if metadata:
                stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
                fh.write(f"# generated: {stamp} wentlab {__version__} "
                         f"seed {seed}\n")
            fh.write("\n".join(self.lines) + "\n")


_STATUS_EXIT = {"Completed": 0, "BlowUp": 2, "StepFailure": 4}


# ---------------------------------------------------------------------------
# commands


def _cmd_run(doc, text, out, opts) -> tuple:
    scen = _build_scenario(doc, text, opts.get("snapshot_cadence"))
    traj = solver.run(scen)
    units = ["monitors: one row per accepted step plus the initial row",
             "units: t [T], dt [T], *_l1 *_l2 *_linf mass xinf [U], "
             "energy [U^m]"]
    _write_csv(os.path.join(out, "monitors.csv"), units,
               list(traj.channel_names), traj.monitor_matrix)
    srows = []
    mesh = scen.mesh
    for snap in traj.snapshots:
        for j, name in enumerate(traj.field_names):
            for k in range(mesh.n_nodes):
                srows.append((snap.t, name, "bulk", k, mesh.coords[k, 0],
                              snap.bulk[j, k]))
            for b, node in enumerate(mesh.boundary_nodes):
                srows.append((snap.t, name, "trace", int(node),
                              mesh.coords[int(node), 0], snap.trace[j, b]))
    _write_csv(os.path.join(out, "snapshots.csv"),
               ["snapshots at the configured cadence",
                "units: t [T], node [index], x [L], value [U]"],
               ["t", "field", "region", "node", "x", "value"], srows)
    summ = Summary()
    summ.add("command", "run")
    summ.add("scenario", scen.name)
    summ.add("status", traj.status.kind)
    summ.add("t_final", traj.times[-1])
    summ.add("steps", traj.n_steps)
    summ.add("xinf_final", traj.xinf[-1])
    if traj.status.t is not None:
        summ.add("status_t", traj.status.t)
    if traj.status.norm is not None:
        summ.add("status_norm", traj.status.norm)
    if traj.status.reason:
        summ.add("status_reason", traj.status.reason)
    for i, name in enumerate(traj.field_names):
        summ.add(f"mass_drift[{name}]", traj.mass_drift(i))
    delta, gamma = scen.exponents()
    summ.add("delta_exp", delta)
    summ.add("gamma_exp", gamma)
    return _STATUS_EXIT.get(traj.status.kind, 4), summ


def _spectrum_system(doc, text):
    dom = doc.get("domain")
    if dom is None:
        raise ScenarioError("spectrum command needs a [domain] table")
    try:
        mesh = build_mesh(dom["dimension"], dom["extents"], dom["cells"],
                          dom["boundary"])
    except (KeyError, ValueError) as e:
        raise ScenarioError(f"domain: {e}") from e
    cfg = doc.get("spectrum", {})
    try:
        system = spectral.assemble_wentzell(
            mesh, variant=cfg.get("variant", "classic"),
            order=cfg.get("order", 2), alpha=cfg.get("alpha", 1.0),
            m=cfg.get("m", 2.0), p=cfg.get("p", 0.0),
            c_f=cfg.get("c_f", 0.0), c_g=cfg.get("c_g", 0.0))
    except spectral.SpectralError as e:
        raise ScenarioError(f"spectrum: {e}") from e
    return system, cfg


def _cmd_spectrum(doc, text, out, opts) -> tuple:
    system, cfg = _spectrum_system(doc, text)
    k = int(cfg.get("k", 6))
    pairs = spectral.solve_spectrum(system, k)
    _write_csv(os.path.join(out, "spectrum.csv"),
               ["units: j [index], lambda [1/T], residual [1/T]"],
               ["j", "lambda", "residual"],
               [(p.j, p.value, p.residual) for p in pairs])
    summ = Summary()
    summ.add("command", "spectrum")
    summ.add("variant", system.variant)
    summ.add("order", system.order)
    summ.add("size", system.size)
    summ.add("lambda_first", pairs[0].value)
    if len(pairs) > 1:
        summ.add("gap", pairs[1].value - pairs[0].value)
    if "nu" in cfg:
        nu = float(cfg["nu"])
        shifts = (float(cfg.get("shift_f", 0.0)),
                  float(cfg.get("shift_g", cfg.get("shift_f", 0.0))))
        method = cfg.get("method", "direct")
        count = spectral.instability_index(system, nu, shifts, method=method)
        summ.add("nu", nu)
        summ.add("shift_f", shifts[0])
        summ.add("shift_g", shifts[1])
        summ.add(f"instability_{method}", count)
    return 0, summ


def _cmd_diagnose(doc, text, out, opts) -> tuple:
    scen = _build_scenario(doc, text, opts.get("snapshot_cadence"))
    traj = solver.run(scen)
    cfg = doc.get("diagnose", {})
    summ = Summary()
    summ.add("command", "diagnose")
    summ.add("scenario", scen.name)
    summ.add("status", traj.status.kind)
    if traj.status.kind == "BlowUp":
        summ.add("blowup_t", traj.status.t)
        return 2, summ
    if traj.status.kind != "Completed":
        summ.add("status_reason", traj.status.reason)
        return 4, summ
    mesh = scen.mesh
    verdicts = []

    if cfg.get("moser", True):
        k_max = int(cfg.get("k_max", 8))
        final = traj.final_state
        for i, name in enumerate(scen.field_names):
            lad = analysis.moser_ladder(mesh, final.bulk[i], final.trace[i],
                                        k_max)[-1]
            summ.add(f"moser_value[{name}]", lad.value)
            summ.add(f"moser_gap[{name}]", lad.rel_gap)
            verdicts.append(lad.rel_gap <= 0.05)
        summ.add("moser_holds", all(verdicts))

    if cfg.get("degiorgi", True):
        T = float(traj.times[-1])
        tau = float(cfg.get("tau", T / 4.0))
        delta, gamma = scen.exponents()
        try:
            rep, direct = analysis.degiorgi_bound(mesh, traj, T, tau,
                                                  delta, gamma)
            summ.add("degiorgi_L", rep.L)
            summ.add("degiorgi_bound", rep.bound)
            summ.add("degiorgi_direct_max", direct)
            summ.add("degiorgi_certified", rep.certified)
            verdicts.append(rep.certified and direct <= rep.bound)
        except analysis.AnalysisError as e:
            summ.add("degiorgi_error", str(e))
            verdicts.append(False)

    mode = cfg.get("decay_mode", "none")
    if mode != "none":
        channel = cfg.get("channel", "energy")
        y = traj.channel(channel)
        t = traj.times
        keep = y > 0
        nu = cfg.get("nu")
        if nu is None:
            p_vec = [d.p for d in scen.diffusion]
            nu = analysis.gronwall_nu(scen.reactions.m_exp, p_vec)
        try:
            fit = analysis.verify_decay(t[keep], y[keep], mode, nu=nu)
            for key, val in fit.constants.items():
                summ.add(f"decay_{key}", val)
            summ.add("decay_margin", fit.margin)
            summ.add("decay_holds", fit.verdict)
            verdicts.append(fit.verdict)
        except analysis.AnalysisError as e:
            summ.add("decay_error", str(e))
            verdicts.append(False)

    ok = all(verdicts) if verdicts else True
    summ.add("verdicts_hold", ok)
    return (0 if ok else 4), summ


def _cmd_waves(doc, text, out, opts) -> tuple:
    cfg = doc.get("waves", {})
    try:
        law = DiffusionLaw(form=cfg.get("form", "monomial"),
                           alpha=cfg.get("alpha", 1.0), p=cfg.get("p", 2))
    except ModelError as e:
        raise ScenarioError(f"waves: {e}") from e
    n = int(cfg.get("points", 40))
    r = np.linspace(float(cfg.get("r_min", 0.1)), float(cfg.get("r_max", 1.0)), n)
    t = np.linspace(float(cfg.get("t_min", 0.5)), float(cfg.get("t_max", 1.0)), n)
    try:
        U = np.array([[waves.self_similar_profile(law, ri, tk) for tk in t]
                      for ri in r])
        rep = waves.claw_residual(U, r, t, law)
    except waves.WaveError as e:
        raise ScenarioError(f"waves: {e}") from e
    names = ["r"] + [f"u@t={_fmt(tk)}" for tk in t]
    _write_csv(os.path.join(out, "waves.csv"),
               ["self-similar profile u = a^{-1}(r/t)",
                "units: r [L], u [U]"],
               names, [(ri, *U[i]) for i, ri in enumerate(r)])
    summ = Summary()
    summ.add("command", "waves")
    summ.add("form", law.form)
    summ.add("p", law.p)
    summ.add("claw_l1", rep.l1)
    summ.add("claw_linf", rep.linf)
    return 0, summ


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"sweep path {dotted!r} crosses a non-table")
    node[keys[-1]] = value


def _parse_sweep(arg: str) -> tuple:
    if arg is None or "=" not in arg:
        raise ScenarioError("--sweep expects KEY=v1,v2,...")
    key, _, rest = arg.partition("=")
    key = key.strip()
    vals = []
    for tok in rest.split(","):
        tok = tok.strip()
        try:
            vals.append(int(tok) if tok.isdigit() else float(tok))
        except ValueError:
            vals.append(tok)
    if not vals:
        raise ScenarioError("--sweep expects at least one value")
    return key, vals


def _cmd_sweep(doc, text, out, opts) -> tuple:
    key, vals = _parse_sweep(opts.get("sweep"))
    dotted = SWEEP_ALIASES.get(key, key)
    inner = "spectrum" if dotted.startswith("spectrum") else "run"
    members = []
    for v in vals:
        import copy
        sub = copy.deepcopy(doc)
        _set_path(sub, dotted, v)
        tag = f"{key}={_fmt(v)}"
        subdir = os.path.join(out, tag)
        os.makedirs(subdir, exist_ok=True)
        code, summ = _DISPATCH[inner](sub, text, subdir, opts)
        members.append((tag, code, summ))
    members.sort(key=lambda m: m[0])
    summ = Summary()
    summ.add("command", "sweep")
    summ.add("key", dotted)
    summ.add("members", len(members))
    for tag, code, msum in members:
        summ.add(f"member[{tag}].exit", code)
        summ.extend(msum, prefix=f"member[{tag}].")
    return 0, summ


_DISPATCH = {"run": _cmd_run, "spectrum": _cmd_spectrum,
             "diagnose": _cmd_diagnose, "waves": _cmd_waves,
             "sweep": _cmd_sweep}


def execute(command: str, document: str, out: str, sweep=None,
            snapshot_cadence=None, seed: int = 0,
            metadata: bool = True) -> int:
    """Run one command against a scenario document; returns the exit code."""
    if command not in COMMANDS:
        raise ScenarioError(f"unknown command {command!r}; have {COMMANDS}")
    doc = _load(document)
    os.makedirs(out, exist_ok=True)
    opts = {"sweep": sweep, "snapshot_cadence": snapshot_cadence, "seed": seed}
    code, summ = _DISPATCH[command](doc, document, out, opts)
    summ.add("exit", code)
    summ.write(os.path.join(out, "summary.txt"), metadata, seed)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="wentlab", description="quasilinear parabolic systems with "
        "dynamic boundary conditions: simulate, eigensolve, diagnose")
    ap.add_argument("--scenario", required=True, help="TOML scenario path")
    ap.add_argument("--command", default="run", choices=COMMANDS)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--sweep", default=None, metavar="KEY=v1,v2,...",
                    help="sweep axis (nu, eps, scale, or dotted path)")
    ap.add_argument("--snapshot-cadence", type=float, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-metadata", action="store_true",
                    help="omit the wall-clock metadata line from summaries")
    args = ap.parse_args(argv)

    if args.seed:
        np.random.seed(args.seed)
    try:
        with open(args.scenario, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return 3
    try:
        return execute(args.command, text, args.out, sweep=args.sweep,
                       snapshot_cadence=args.snapshot_cadence, seed=args.seed,
                       metadata=not args.no_metadata)
    except (ScenarioError, ModelError, solver.SolverError,
            spectral.SpectralError, analysis.AnalysisError,
            waves.WaveError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: output not writable: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
