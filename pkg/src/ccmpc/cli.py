"""Command-line front end: scenario files, single runs, sweeps, oracle checks and timing."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

import numpy as np
import yaml

from .experiments import (AXES, CONTROLLERS, ObstacleConfig, Scenario, empirical_chance, feasibility_experiment,
                          make_rng, random_instance, run_closed_loop, success_rate_experiment, trajectory_csv,
                          validate_moments)
from .control import FEASIBLE
from .experiments.tables import ExperimentTable

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3


class ScenarioError(ValueError):
    """Malformed or invalid scenario file."""


# value kinds: name -> (checker, description)
def _is_float(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_vec3(v) -> bool:
    return isinstance(v, (list, tuple)) and len(v) == 3 and all(_is_float(c) for c in v)


KINDS = {
    "float": (_is_float, "a number"),
    "int": (_is_int, "an integer"),
    "bool": (lambda v: isinstance(v, bool), "true or false"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "vec3": (_is_vec3, "a list of 3 numbers"),
}

SECTIONS = {
    "model": {"dt": "float", "velocity_persistence": "bool", "start": "vec3"},
    "reference": {"amplitude": "float", "rate": "float", "altitude": "float", "reference_arg": "str"},
    "mpc": {"horizon": "int", "p_weight": "float", "q_weight": "float", "r_weight": "float",
            "state_bound": "float", "input_bound": "float"},
    "barrier": {"gamma": "float", "delta": "float", "zeta": "float"},
    "run": {"k_max": "int", "seed": "int", "trials": "int", "controller": "str", "filter_eps": "float",
            "filter_max_iter": "int"},
}
OBSTACLE_KEYS = {"center": "vec3", "orbit_radius": "float", "omega": "float", "phase": "float",
                 "radius": "float", "sigma2": "float"}
SECTION_ORDER = ("model", "reference", "obstacles", "mpc", "barrier", "run")


def _convert(kind: str, v):
    if kind == "float":
        return float(v)
    if kind == "vec3":
        return tuple(float(c) for c in v)
    return v


def _read_mapping(data, keys: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ScenarioError(f"[{where}] must be a mapping")
    out = {}
    for key, value in data.items():
        if key not in keys:
            raise ScenarioError(f"[{where}] unknown key {key!r}; expected one of {', '.join(keys)}")
        check, desc = KINDS[keys[key]]
        if not check(value):
            raise ScenarioError(f"[{where}] {key}: expected {desc}, got {value!r}")
        out[key] = _convert(keys[key], value)
    return out


def scenario_from_dict(data) -> Scenario:
    """Build a validated Scenario from parsed sections; missing keys keep their defaults."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must be a mapping of sections")
    kwargs = {}
    for section, value in data.items():
        if section == "obstacles":
            if not isinstance(value, list) or not value:
                raise ScenarioError("[obstacles] expected a non-empty list of mappings")
            obs = []
            for i, item in enumerate(value):
                try:
                    obs.append(ObstacleConfig(**_read_mapping(item, OBSTACLE_KEYS, f"obstacles[{i}]")))
                except ScenarioError:
                    raise
                except ValueError as exc:
                    raise ScenarioError(f"[obstacles[{i}]] invariant violated: {exc}") from None
            kwargs["obstacles"] = tuple(obs)
        elif section in SECTIONS:
            kwargs.update(_read_mapping(value if value is not None else {}, SECTIONS[section], section))
        else:
            raise ScenarioError(f"unknown section {section!r}; expected one of {', '.join(SECTION_ORDER)}")
    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"invariant violated: {exc}") from None


def parse_scenario(path) -> Scenario:
    """Read a YAML scenario file; an empty file gives the default configuration."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from None
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    out = {}
    for section in SECTION_ORDER:
        if section == "obstacles":
            out[section] = [{k: (list(getattr(o, k)) if kind == "vec3" else getattr(o, k))
                             for k, kind in OBSTACLE_KEYS.items()} for o in sc.obstacles]
        else:
            out[section] = {k: (list(getattr(sc, k)) if kind == "vec3" else getattr(sc, k))
                            for k, kind in SECTIONS[section].items()}
    return out


def serialize_scenario(sc: Scenario) -> str:
    """YAML text that parses back to an identical Scenario."""
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------- svg

def trajectory_svg(sc: Scenario, log, size: int = 600, snapshots: int = 5) -> str:
    """Top-down X-Y view: reference path, robot path, obstacle paths and disks at a few times."""
    ref = np.array([sc.reference_position(k)[:2] for k in range(sc.k_max + 1)])
    robot = np.array([x[:2] for x in log.states])
    obs = np.array(log.obstacles)[:, :, :2]  # (steps, J, 2)
    pts = np.vstack([ref, robot, obs.reshape(-1, 2)])
    rmax = max(o.radius for o in sc.obstacles)
    lo, hi = pts.min(axis=0) - rmax - 0.5, pts.max(axis=0) + rmax + 0.5
    scale = (size - 20) / float(np.max(hi - lo))

    def px(p):
        return 10 + (p[0] - lo[0]) * scale, size - 10 - (p[1] - lo[1]) * scale

    def polyline(P, color, width, dash=""):
        coords = " ".join("{:.2f},{:.2f}".format(*px(p)) for p in P)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'

    colors = ("#d62728", "#9467bd", "#8c564b", "#e377c2")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             polyline(ref, "#7f7f7f", 1.5, "6,4")]
    for j in range(obs.shape[1]):
        parts.append(polyline(obs[:, j], colors[j % len(colors)], 0.8, "2,3"))
    idx = np.unique(np.linspace(0, len(log.states) - 1, snapshots).round().astype(int))
    for n, k in enumerate(idx):
        alpha = 0.15 + 0.5 * n / max(len(idx) - 1, 1)
        for j, ob in enumerate(sc.obstacles):
            cx, cy = px(obs[k, j])
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{ob.radius * scale:.2f}" '
                         f'fill="{colors[j % len(colors)]}" fill-opacity="{alpha:.2f}"/>')
        rx, ry = px(robot[k])
        parts.append(f'<circle cx="{rx:.2f}" cy="{ry:.2f}" r="3" fill="#1f77b4"/>')
    parts.append(polyline(robot, "#1f77b4", 2))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------- commands

def _values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError(f"--values must be a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise ScenarioError("--values is empty")
    return vals


def _load(args) -> Scenario:
    sc = Scenario() if args.scenario in (None, "default") else parse_scenario(args.scenario)
    changes = {}
    for name in ("controller", "gamma", "delta", "horizon", "trials", "seed", "k_max"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    try:
        if changes:
            sc = sc.replace(**changes)
        if args.sigma2 is not None:
            sc = sc.with_noise(args.sigma2)
    except ValueError as exc:
        raise ScenarioError(f"invariant violated: {exc}") from None
    return sc


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def cmd_run(args) -> int:
    sc = _load(args)
    log = run_closed_loop(sc, stop_on_infeasible=False)
    out = _out_dir(args)
    _write(os.path.join(out, "trajectory.csv"), trajectory_csv(log, timing=args.timing))
    if args.svg:
        _write(os.path.join(out, "trajectory.svg"), trajectory_svg(sc, log))
    infeasible = sum(s != FEASIBLE for s in log.status)
    print(f"controller={sc.controller} seed={sc.seed} steps={log.steps} feasible={log.feasible} "
          f"first_infeasible_k={log.first_infeasible_k} infeasible_steps={infeasible} "
          f"collided={log.collided} success={log.success} min_h={np.min(log.h_values):.6g} "
          f"wall_s={log.wall_time:.3f}")
    return EXIT_ASSERT if args.assert_ and not log.success else EXIT_OK


def _sweep_checks(table: ExperimentTable, axis: str, values: Sequence[float]) -> list[tuple[str, bool]]:
    """Directional claims of the corresponding table."""
    checks = []
    if axis == "success":
        cc = [table.row(v, "cc-mpc-cbf").success_pct for v in values]
        det = [table.row(v, "det-mpc-cbf").success_pct for v in sorted(values)]
        checks.append(("cc-mpc-cbf success = 100% at every value", all(s == 100.0 for s in cc)))
        checks.append(("det-mpc-cbf success non-increasing in sigma2",
                       all(a >= b for a, b in zip(det, det[1:]))))
    elif axis == "sigma2":
        for v in values:
            seq, one = table.row(v, "sequential").feasible_pct, table.row(v, "cc-mpc-cbf").feasible_pct
            checks.append((f"sigma2={v:g}: sequential feasibility {seq:g}% >= one-shot {one:g}%", seq >= one))
    else:
        order = sorted(values, reverse=(axis == "gamma"))
        feas = [table.row(v, "cc-mpc-cbf").feasible_pct for v in order]
        label = "as gamma decreases" if axis == "gamma" else "in N"
        checks.append((f"one-shot feasibility non-increasing {label}", all(a >= b for a, b in zip(feas, feas[1:]))))
    return checks


def cmd_sweep(args) -> int:
    values = _values(args.values)
    if args.axis == "horizon" and any(v != int(v) or v < 1 for v in values):
        raise ScenarioError("horizon values must be positive integers")
    if args.axis == "gamma" and any(not 0 < v <= 1 for v in values):
        raise ScenarioError("gamma values must satisfy 0 < gamma <= 1")
    if args.axis in ("success", "sigma2") and any(v < 0 for v in values):
        raise ScenarioError("sigma2 values must be >= 0")
    sc = _load(args)
    if args.axis in ("gamma", "horizon") and args.sigma2 is None:
        sc = sc.with_noise(1.0)  # the gamma and horizon tables are taken at sigma2 = 1
    if args.axis == "success":
        controllers = (args.controller,) if args.controller else ("det-mpc-cbf", "cc-mpc-cbf")
        table = success_rate_experiment(sc, values, controllers, sc.trials)
    else:
        controllers = (args.controller,) if args.controller else None
        table = feasibility_experiment(sc, args.axis, values, sc.trials, controllers)
    out = _out_dir(args)
    text = table.to_csv(timing=args.timing)
    _write(os.path.join(out, "table.csv"), text)
    sys.stdout.write(text)
    if not args.assert_:
        return EXIT_OK
    if args.controller:
        raise ScenarioError("--assert compares the default controllers; drop --controller")
    ok = True
    for label, passed in _sweep_checks(table, args.axis, values):
        print(f"{'PASS' if passed else 'FAIL'} {label}")
        ok &= passed
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_validate(args) -> int:
    if args.samples < 10**5:
        raise ScenarioError("--samples must be >= 100000")
    sc = _load(args)
    sigma2 = 0.1 if args.sigma2 is None else args.sigma2
    rng = make_rng(sc.seed)
    model, bcfg = sc.model(), sc.barrier_config()
    ok = True
    for i in range(args.instances):
        x, o, u, spec = random_instance(rng, sc, sigma2)
        rep = validate_moments(x, o, u, model, spec, bcfg, args.samples, sc.seed + i)
        prob = empirical_chance(x, o, u, model, spec, bcfg, args.samples, sc.seed + i)
        ok &= rep.agree
        print(f"{'PASS' if rep.agree else 'FAIL'} instance {i}: mean {rep.mean:.6g} vs {rep.sample_mean:.6g} "
              f"(z={rep.mean_z:+.2f}), var {rep.var:.6g} vs {rep.sample_var:.6g} (z={rep.var_z:+.2f}), "
              f"P[cbc>=zeta]={prob:.4f}")
    print(f"moment checks: {'all pass' if ok else 'disagreement beyond 3 standard errors'}")
    return EXIT_OK if ok or not args.assert_ else EXIT_ASSERT


def cmd_bench(args) -> int:
    sc = _load(args)
    trials = args.trials if args.trials is not None else 5
    res = {}
    for controller in ("sequential", "cc-mpc-cbf"):
        logs = [run_closed_loop(sc.replace(controller=controller), sc.seed + i) for i in range(trials)]
        wall = float(np.mean([g.wall_time for g in logs]))
        per_step = 1e3 * float(np.mean([t for g in logs for t in g.solve_time]))
        steps = float(np.mean([len(g.status) for g in logs]))
        res[controller] = wall
        print(f"{controller}: mean_wall_s={wall:.3f} mean_step_ms={per_step:.2f} mean_steps={steps:.1f} "
              f"feasible={sum(g.feasible for g in logs)}/{trials}")
    faster = res["sequential"] < res["cc-mpc-cbf"]
    print(f"{'PASS' if faster else 'FAIL'} sequential mean wall time < one-shot")
    return EXIT_ASSERT if args.assert_ and not faster else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, metavar="{run,sweep,validate,bench}")

    def common(q):
        q.add_argument("--scenario", default="default", help="YAML scenario file, or 'default'")
        q.add_argument("--controller", choices=CONTROLLERS)
        q.add_argument("--sigma2", type=float, help="noise variance of every obstacle")
        q.add_argument("--gamma", type=float)
        q.add_argument("--delta", type=float)
        q.add_argument("--horizon", type=int)
        q.add_argument("--trials", type=int)
        q.add_argument("--seed", type=int)
        q.add_argument("--k-max", dest="k_max", type=int)
        q.add_argument("--out", help="output directory (default: current directory)")
        q.add_argument("--assert", dest="assert_", action="store_true",
                       help="exit 3 when the experiment's claim does not hold")
        q.add_argument("--timing", action="store_true",
                       help="write measured times into CSVs (otherwise nan, keeping files reproducible)")

    q = sub.add_parser("run", help="single closed loop -> trajectory.csv")
    common(q)
    q.add_argument("--svg", action="store_true", help="also write a top-down trajectory.svg")
    q.set_defaults(func=cmd_run)
    q = sub.add_parser("sweep", help="success / feasibility table -> table.csv")
    common(q)
    q.add_argument("--axis", required=True, choices=("success",) + AXES,
                   help="success: success rate over sigma2; others: feasibility at delta=0.97")
    q.add_argument("--values", required=True, help="comma-separated parameter values")
    q.set_defaults(func=cmd_sweep)
    q = sub.add_parser("validate", help="moment and chance sampling oracles")
    common(q)
    q.add_argument("--samples", type=int, default=10**6)
    q.add_argument("--instances", type=int, default=10)
    q.set_defaults(func=cmd_validate)
    q = sub.add_parser("bench", help="sequential vs one-shot wall time")
    common(q)
    q.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if getattr(args, "k_max", None) is not None and args.k_max < 1:
        print("error: --k-max must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
