"""Command-line entry point: ``luminescence <command> [options]``.

Every command prints a one-line JSON summary to stdout and writes its bulk
output under ``--out`` (default: ``$LUMINESCENCE_OUT`` or the current
directory). Exit codes: 0 success, 1 domain error (the error class name is
reported), 2 usage error.

Options can also come from ``--config FILE``: a JSON object, or any CSV/JSON
output of this tool whose first ``# {...}`` line holds the resolved config.
Flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import LuminescenceError
from .model import ModelSpec, load_model, model_from_dict

OUT_ENV = "LUMINESCENCE_OUT"
STOCHASTIC = {"simulate", "mc-tail", "ldp-slope", "conditioned-share"}


class UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="luminescence", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", help="bundled model name or path to a model JSON file")
        p.add_argument("--config", help="JSON config or an output file with a '# {...}' header")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        return p

    def stochastic(p):
        p.add_argument("--seed", type=int, help="RNG seed (required)")
        p.add_argument("--threads", type=int, help="parallel replica batches (default 1)")

    command("validate", "check a model file and print its summary")

    p = command("simulate", "exact SSA path; writes trajectory.csv (+ scaled.csv)")
    p.add_argument("--n", type=int, help="number of particles N")
    p.add_argument("--m0", type=int, help="initial excited count (default round(N x_hat))")
    p.add_argument("--t", type=float, help="horizon T")
    p.add_argument("--grid", type=int, help="points of the scaled path on [0, T]")
    stochastic(p)

    p = command("fluid", "fluid ODE path; writes fluid.csv")
    p.add_argument("--x0", type=float, help="initial density (default 0)")
    p.add_argument("--t", type=float, help="horizon T")
    p.add_argument("--step", type=float, help="RK4 step (default 1e-3)")

    p = command("hamiltonian-eval", "evaluate H, its field and the Lagrangian")
    p.add_argument("--x0", type=float, help="density x0")
    p.add_argument("--x", type=_floats, help="emissions x_1..x_d (default zeros)")
    p.add_argument("--sigma", type=float, help="momentum sigma (default 0)")
    p.add_argument("--kappa", type=_floats, help="momenta kappa_1..kappa_d (default zeros)")
    p.add_argument("--v0", type=float, help="velocity of x0 for the Lagrangian")
    p.add_argument("--v", type=_floats, help="emission velocities for the Lagrangian")

    p = command("optimal-path", "shooting BVP; writes optimal_path.csv")
    p.add_argument("--x0", type=float, help="initial density")
    p.add_argument("--b", type=float, help="total scaled emission target at T")
    p.add_argument("--targets", type=_floats, help="per-channel targets (overrides --b)")
    p.add_argument("--t", type=float, help="horizon T")
    p.add_argument("--step", type=float, help="RK4 step (default T/1000)")

    p = command("stationary", "constant-share solution; writes stationary.json")
    p.add_argument("--b", type=float, help="emission rate B")
    p.add_argument("--split", help="comma list of channel shares, or 'optimal'")

    command("asymptote", "print the asymptotic share x_hat and dominant channel")

    p = command("share-convergence", "x0(B) table; writes share_convergence.csv/.json")
    p.add_argument("--b-list", type=_floats, help="increasing comma list of B values")
    p.add_argument("--rate-grid", type=_floats, help="rates for the sweep (default 0.1,1,10)")

    p = command("mc-tail", "Monte Carlo tail P(emission >= B N); writes mc_tail.json")
    p.add_argument("--n", type=int)
    p.add_argument("--m0", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--oracle", action="store_const", const=True,
                   help="also solve the master equation")
    stochastic(p)

    p = command("ldp-slope", "-ln p / N against I*; writes ldp_slope.csv/.json")
    p.add_argument("--n-list", type=_ints)
    p.add_argument("--m0-fraction", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--replicas", type=int)
    stochastic(p)

    p = command("conditioned-share", "mean share over hit runs; writes conditioned_share.json")
    p.add_argument("--n", type=int)
    p.add_argument("--m0", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--replicas", type=int)
    stochastic(p)
    return parser


# -- config ------------------------------------------------------------------

def _read_config(path):
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config: {exc}") from None
        return doc.get("config", doc)
    for line in text.splitlines():
        if line.startswith("# {"):
            return json.loads(line[2:])["config"]
    raise UsageError(f"--config: no JSON object or '# {{...}}' header in {path}")


def resolve(args: argparse.Namespace) -> dict:
    """Merge ``--config`` contents with explicit flags (flags win)."""
    cfg = {}
    if args.config:
        cfg.update(_read_config(args.config))
    for key, value in vars(args).items():
        if key == "config" or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _model(cfg) -> ModelSpec:
    _require(cfg, "model")
    ref = cfg["model"]
    return model_from_dict(ref) if isinstance(ref, dict) else load_model(ref)


def _out_dir(cfg) -> Path:
    out = Path(cfg.get("out") or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg, spec):
    """Resolved config with the model inlined, as one JSON line."""
    full = {k: v for k, v in cfg.items() if k not in ("out", "config")}
    full["model"] = spec.to_dict()
    return json.dumps({"config": full}, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def _write_json(path, cfg, spec, payload):
    doc = {"config": json.loads(_header(cfg, spec))["config"], **_jsonable(payload)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_validate(cfg):
    spec = _model(cfg)
    return {"valid": True, "d": spec.d, "mu0": spec.mu0,
            "channels": [[c.k, c.r, c.s, c.mu] for c in spec.channels],
            "propensity_mode": spec.propensity_mode}


def _default_m0(spec, N):
    from .large_emission import asymptotic_share

    return int(round(N * float(asymptotic_share(spec)[0])))


def cmd_simulate(cfg):
    from .simulator import scaled_path, simulate, total_emission, write_scaled_csv

    spec = _model(cfg)
    _require(cfg, "n", "t", "seed")
    cfg.setdefault("m0", None)
    if cfg["m0"] is None:
        cfg["m0"] = _default_m0(spec, cfg["n"])
    traj = simulate(spec, cfg["n"], cfg["m0"], cfg["t"], cfg["seed"])
    out = _out_dir(cfg)
    header = [_header(cfg, spec)]
    files = [str(out / "trajectory.csv")]
    traj.to_csv(files[0], header)
    if cfg.get("grid"):
        grid = np.linspace(0.0, cfg["t"], int(cfg["grid"]))
        files.append(str(out / "scaled.csv"))
        write_scaled_csv(files[1], grid, scaled_path(traj, grid), header)
    return {"events": traj.n_events, "total_emission": total_emission(traj),
            "final_m": traj.final.m, "m0": cfg["m0"], "files": files}


def cmd_fluid(cfg):
    from .optimal_path import _write_csv, fluid_trajectory

    spec = _model(cfg)
    _require(cfg, "t")
    cfg.setdefault("x0", 0.0)
    cfg["x0"] = cfg["x0"] if cfg["x0"] is not None else 0.0
    step = cfg.get("step") or 1e-3
    path = fluid_trajectory(spec, cfg["x0"], cfg["t"], step)
    target = _out_dir(cfg) / "fluid.csv"
    cols = ["t", "x0", *[f"x_{i}" for i in range(1, spec.d + 1)]]
    _write_csv(target, cols, np.column_stack([path.times, path.positions]), [_header(cfg, spec)])
    return {"x0_final": float(path.x0[-1]), "emission_final": path.x[-1].tolist(),
            "files": [str(target)]}


def cmd_hamiltonian_eval(cfg):
    from .hamiltonian import PhasePoint, Velocity, hamiltonian, hamiltonian_field, lagrangian

    spec = _model(cfg)
    _require(cfg, "x0")
    d = spec.d
    point = PhasePoint(cfg["x0"], cfg.get("x") or [0.0] * d, cfg.get("sigma") or 0.0,
                       cfg.get("kappa") or [0.0] * d)
    dx0, dx, dsig, dkap = hamiltonian_field(spec, point)
    summary = {"H": hamiltonian(spec, point), "dx0": dx0, "dx": dx, "dsigma": dsig,
               "dkappa": dkap}
    if cfg.get("v") is not None:
        res = lagrangian(spec, cfg["x0"], Velocity(cfg.get("v0") or 0.0, cfg["v"]))
        summary["lagrangian"] = {"value": res.value, "sigma": res.sigma, "kappa": res.kappa}
    return summary


def cmd_optimal_path(cfg):
    from .hamiltonian import rate_functional
    from .optimal_path import BoundaryData, solve_bvp

    spec = _model(cfg)
    _require(cfg, "x0", "t")
    targets = cfg.get("targets")
    if targets is None:
        _require(cfg, "b")
        if spec.d != 1:
            raise UsageError("--targets is required for models with several channels")
        targets = [cfg["b"]]
    path = solve_bvp(spec, BoundaryData(cfg["x0"], tuple(targets), cfg["t"]), step=cfg.get("step"))
    target = _out_dir(cfg) / "optimal_path.csv"
    path.to_csv(target, [_header(cfg, spec)])
    return {"sigma0": float(path.sigma[0]), "kappa": path.kappa[0].tolist(),
            "rate": rate_functional(spec, path), "energy_drift": path.energy_drift(),
            "files": [str(target)]}


def cmd_stationary(cfg):
    from .large_emission import constant_path_cost, stationary_solution

    spec = _model(cfg)
    _require(cfg, "b")
    split = cfg.get("split")
    if isinstance(split, str) and split != "optimal":
        split = _floats(split)
    if split is None and spec.d > 1:
        split = "optimal"
    sol = stationary_solution(spec, cfg["b"], split=split)
    payload = {"x0": sol.x0, "sigma": sol.sigma, "kappa": sol.kappa,
               "velocities": sol.velocities, "B": sol.B, "alpha": sol.alpha,
               "residual": sol.residual, "rate_per_unit_time": constant_path_cost(spec, sol, 1.0)}
    target = _out_dir(cfg) / "stationary.json"
    _write_json(target, cfg, spec, payload)
    return {**payload, "files": [str(target)]}


def cmd_asymptote(cfg):
    from .large_emission import asymptotic_share

    x_hat, i0 = asymptotic_share(_model(cfg))
    return {"x_hat": float(x_hat), "i0": i0}


def cmd_share_convergence(cfg):
    from .large_emission import share_convergence
    from .optimal_path import _write_csv

    spec = _model(cfg)
    _require(cfg, "b_list")
    grid = cfg.get("rate_grid") or (0.1, 1.0, 10.0)
    res = share_convergence(spec, cfg["b_list"], rate_grid=tuple(grid))
    out = _out_dir(cfg)
    d = spec.d
    cols = ["B", "x0", "error", "sigma", *[f"kappa_{i}" for i in range(1, d + 1)]]
    data = [[r["B"], r["x0"], r["error"], r["sigma"], *r["kappa"]] for r in res.rows]
    header = [_header(cfg, spec)]
    _write_csv(out / "share_convergence.csv", cols, data, header)
    summary = res.to_summary()
    _write_json(out / "share_convergence.json", cfg, spec,
                {**summary, "rows": res.rows, "rate_rows": res.rate_rows})
    return {**summary, "files": [str(out / "share_convergence.csv"),
                                 str(out / "share_convergence.json")]}


def cmd_mc_tail(cfg):
    from .validation import estimate_tail, master_equation_tail

    spec = _model(cfg)
    _require(cfg, "n", "t", "b", "replicas", "seed")
    if cfg.get("m0") is None:
        cfg["m0"] = _default_m0(spec, cfg["n"])
    est = estimate_tail(spec, cfg["n"], cfg["m0"], cfg["t"], cfg["b"], cfg["replicas"],
                        cfg["seed"], threads=cfg.get("threads") or 1)
    payload = est.to_dict()
    if cfg.get("oracle"):
        p = master_equation_tail(spec, cfg["n"], cfg["m0"], cfg["t"], cfg["b"])
        payload["oracle_p"] = p
        sd = math.sqrt(p * (1.0 - p) / est.replicas)
        payload["oracle_z"] = (est.p_hat - p) / sd if sd > 0 else 0.0
    target = _out_dir(cfg) / "mc_tail.json"
    _write_json(target, cfg, spec, payload)
    return {**payload, "files": [str(target)]}


def cmd_ldp_slope(cfg):
    from .validation import ldp_slope

    spec = _model(cfg)
    _require(cfg, "n_list", "t", "b", "replicas", "seed")
    if cfg.get("m0_fraction") is None:
        from .large_emission import asymptotic_share

        cfg["m0_fraction"] = float(asymptotic_share(spec)[0])
    study = ldp_slope(spec, cfg["n_list"], cfg["m0_fraction"], cfg["t"], cfg["b"],
                      cfg["replicas"], cfg["seed"], threads=cfg.get("threads") or 1)
    out = _out_dir(cfg)
    study.to_csv(out / "ldp_slope.csv", [_header(cfg, spec)])
    payload = {"rows": study.rows, "I_star": study.I_star, "method": study.method,
               "trend_decreasing": study.trend_decreasing, "final_gap": study.final_gap}
    _write_json(out / "ldp_slope.json", cfg, spec, payload)
    return {**payload, "files": [str(out / "ldp_slope.csv"), str(out / "ldp_slope.json")]}


def cmd_conditioned_share(cfg):
    from .validation import conditioned_share

    spec = _model(cfg)
    _require(cfg, "n", "t", "b", "replicas", "seed")
    if cfg.get("m0") is None:
        cfg["m0"] = _default_m0(spec, cfg["n"])
    res = conditioned_share(spec, cfg["n"], cfg["m0"], cfg["t"], cfg["b"], cfg["replicas"],
                            cfg["seed"], threads=cfg.get("threads") or 1)
    target = _out_dir(cfg) / "conditioned_share.json"
    _write_json(target, cfg, spec, res.to_dict())
    return {**res.to_dict(), "files": [str(target)]}


COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "fluid": cmd_fluid,
    "hamiltonian-eval": cmd_hamiltonian_eval,
    "optimal-path": cmd_optimal_path,
    "stationary": cmd_stationary,
    "asymptote": cmd_asymptote,
    "share-convergence": cmd_share_convergence,
    "mc-tail": cmd_mc_tail,
    "ldp-slope": cmd_ldp_slope,
    "conditioned-share": cmd_conditioned_share,
}


def run(argv=None) -> int:
    """Execute one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        if args.command in STOCHASTIC:
            _require(cfg, "seed")
        summary = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except LuminescenceError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
