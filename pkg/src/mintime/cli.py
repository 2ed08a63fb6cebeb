"""Command-line front end: ``solve``, ``certify``, ``simulate`` and ``table``.

A run artifact is a directory holding ``config.txt`` (the run configuration),
``report.csv`` (solve summary as ``key,value`` rows), ``iterations.csv``
(per-iteration log), ``theta.txt`` (coefficients with their exponents),
``trajectory.csv`` (closed-loop trajectory at the final iterate) and
``cert.txt`` (certification status and bound).

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .feedback import ControllerConfig, simulate
from .oracle import CertificationError, grid_certify
from .polybasis import PolyBasis, Theta
from .problem import PROBLEMS, ProblemError
from .qp import QPError
from .sip import certified_lower_bound, solve

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

TABLE_COLUMNS = ("d", "estimated_value", "certified_lb", "feedback_time", "solve_seconds",
                 "iterations", "certify_seconds")


class ConfigError(ValueError):
    pass


def _parse_floats(text):
    vals = tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    if not vals:
        raise ValueError("empty list")
    return vals[0] if len(vals) == 1 else vals


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; serializes to flat ``key = value`` text."""

    problem: str = "zermelo"
    degree: int = 2
    mu: float = 1e-5
    epsilon: float = 1e-3
    n_samples: int = 500_000
    top_k: int = 100
    seed: int = 0
    dt: float = 1e-3
    spacing: object = 0.01          # scalar or one value per (t, x) dimension
    order: int = 2
    max_iter: int = 200
    max_evaluations: int = 50_000_000
    out: str = "run"
    T: Optional[float] = None       # horizon override; None keeps the problem default

    _types = {"problem": str, "degree": int, "mu": float, "epsilon": float, "n_samples": int,
              "top_k": int, "seed": int, "dt": float, "spacing": _parse_floats, "order": int,
              "max_iter": int, "max_evaluations": int, "out": str, "T": float}

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")
        checks = [("mu", self.mu > 0), ("epsilon", self.epsilon > 0),
                  ("n_samples", self.n_samples >= 1), ("top_k", self.top_k >= 1),
                  ("dt", self.dt > 0), ("order", self.order in (1, 2)),
                  ("max_iter", self.max_iter >= 1),
                  ("spacing", np.all(np.asarray(self.spacing, dtype=float) > 0)),
                  ("T", self.T is None or self.T > 0)]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {name}: {getattr(self, name)!r}")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(float(s)) for s in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        cfg.update(parse_key_values(text))
        return cfg

    def update(self, values: dict):
        for key, raw in values.items():
            if key not in self._types:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                setattr(self, key, self._types[key](raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return self

    def make_problem(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        factory = PROBLEMS[self.problem]
        return factory() if self.T is None else factory(T=self.T)


def parse_key_values(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- artifact i/o -------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_key_values(path, rows, sep=","):
    with open(path, "w") as fh:
        if sep == ",":
            fh.write("key,value\n")
        for k, v in rows:
            fh.write(f"{k}{sep}{_fmt(v)}\n" if sep == "," else f"{k} = {_fmt(v)}\n")


def read_report(path) -> dict:
    out = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            k, v = line.rstrip("\n").split(",", 1)
            out[k] = v
    return out


def write_theta(path, theta: Theta):
    b = theta.basis
    with open(path, "w") as fh:
        fh.write(f"# n_states = {b.n_states}\n# degree = {b.degree}\n")
        fh.write("# columns: exponents of (t, x_1..x_n), coefficient\n")
        for e, c in zip(b.exps.tolist(), theta.coeffs):
            fh.write(" ".join(str(v) for v in e) + f" {float(c)!r}\n")


def read_theta(path) -> Theta:
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    meta[k.strip()] = int(v)
                continue
            if line.strip():
                rows.append(line.split())
    basis = PolyBasis(meta["n_states"], meta["degree"])
    exps = np.array([[int(v) for v in r[:-1]] for r in rows])
    if exps.shape != basis.exps.shape or np.any(exps != basis.exps):
        raise ConfigError(f"{path}: exponent table does not match the basis")
    return Theta(basis, [float(r[-1]) for r in rows])


def report_rows(rep, final_traj, p, seconds):
    return [
        ("problem", p.name), ("degree", rep.theta.basis.degree), ("T", p.T),
        ("mu", rep.mu), ("epsilon", rep.epsilon), ("seed", rep.seed),
        ("estimated_value", rep.estimated_value), ("repaired_value", rep.repaired_value),
        ("final_violation", rep.final_violation), ("iterations", rep.iterations),
        ("cuts_total", rep.cuts_total), ("terminated", rep.terminated),
        ("n_seed_terminal", rep.n_seed_terminal),
        ("heuristic_time", rep.heuristic_time), ("best_time", rep.best_time),
        ("final_hit", final_traj.hit), ("final_t_hit", final_traj.t_hit),
        ("kkt_stationarity", rep.kkt.get("stationarity")),
        ("kkt_primal", rep.kkt.get("primal")),
        ("kkt_complementarity", rep.kkt.get("complementarity")),
        ("solve_seconds", seconds),
    ]


def write_iterations(path, history):
    with open(path, "w") as fh:
        fh.write("iteration,master_value,max_violation,cuts_added,n_cuts,t_hit,seconds\n")
        for h in history:
            fh.write(",".join(_fmt(v) for v in (h.iteration, h.master_value, h.max_violation,
                                               h.cuts_added, h.n_cuts, h.t_hit, h.seconds)) + "\n")


# -- commands -----------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> dict:
    """Heuristic, seeds, cutting plane and a final closed-loop simulation; writes an artifact."""
    cfg.validate()
    p = cfg.make_problem()
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    controller = ControllerConfig(dt=cfg.dt)
    start = time.perf_counter()
    rep = solve(p, cfg.degree, mu=cfg.mu, epsilon=cfg.epsilon, n_samples=cfg.n_samples,
                top_k=cfg.top_k, seed=cfg.seed, max_iter=cfg.max_iter, controller=controller)
    seconds = time.perf_counter() - start
    traj = simulate(rep.theta, p, rep.theta.basis, controller)
    if traj.hit and (rep.best_time is None or traj.t_hit < rep.best_time):
        rep.best_time = traj.t_hit
    write_key_values(os.path.join(cfg.out, "report.csv"), report_rows(rep, traj, p, seconds))
    write_iterations(os.path.join(cfg.out, "iterations.csv"), rep.log)
    write_theta(os.path.join(cfg.out, "theta.txt"), rep.theta)
    traj.to_csv(os.path.join(cfg.out, "trajectory.csv"))
    write_key_values(os.path.join(cfg.out, "cert.txt"), [("status", "not_run")], sep="=")
    return read_report(os.path.join(cfg.out, "report.csv"))


def load_artifact(path):
    cfg_path = os.path.join(path, "config.txt")
    if not os.path.isfile(cfg_path):
        raise ConfigError(f"{path} is not a run artifact (missing config.txt)")
    with open(cfg_path) as fh:
        cfg = RunConfig.from_text(fh.read())
    cfg.out = path
    theta = read_theta(os.path.join(path, "theta.txt"))
    report = read_report(os.path.join(path, "report.csv"))
    return cfg, theta, report


def cmd_certify(path, spacing=None, order=None) -> dict:
    """Grid-certify the artifact's final iterate and record the certified lower bound."""
    cfg, theta, report = load_artifact(path)
    if spacing is not None:
        cfg.spacing = spacing
    if order is not None:
        cfg.order = order
    cfg.validate()
    p = cfg.make_problem()
    cert_path = os.path.join(path, "cert.txt")
    try:
        cert = grid_certify(theta, p, theta.basis, cfg.spacing, order=cfg.order,
                            max_evaluations=cfg.max_evaluations)
    except CertificationError as exc:
        write_key_values(cert_path, [("status", "out_of_reach"), ("message", str(exc))], sep="=")
        raise
    value = float(report["estimated_value"])
    lb = certified_lower_bound(cert.phi_hat, p.T, value)
    rows = [("status", "certified"), ("certified_lower_bound", lb)]
    rows += [(k, ",".join(_fmt(x) for x in v) if isinstance(v, list) else v)
             for k, v in cert.to_dict().items()]
    write_key_values(cert_path, rows, sep="=")
    with open(cert_path) as fh:
        return parse_key_values(fh.read())


def cmd_simulate(path, dt=None) -> dict:
    """Re-simulate the artifact's final iterate (optionally with another step) into trajectory.csv."""
    cfg, theta, _ = load_artifact(path)
    if dt is not None:
        cfg.dt = dt
    cfg.validate()
    p = cfg.make_problem()
    traj = simulate(theta, p, theta.basis, ControllerConfig(dt=cfg.dt))
    traj.to_csv(os.path.join(path, "trajectory.csv"))
    return {"hit": traj.hit, "t_hit": traj.t_hit, "dt": cfg.dt}


def cmd_table(cfg: RunConfig, degrees, out_csv=None) -> str:
    """Solve and certify for each degree; returns the CSV text (also written to ``out_csv``)."""
    lines = [",".join(TABLE_COLUMNS)]
    for d in degrees:
        sub = dataclasses.replace(cfg, degree=int(d), out=os.path.join(cfg.out, f"d{d}"))
        rep = cmd_solve(sub)
        start = time.perf_counter()
        try:
            cert = cmd_certify(sub.out)
            lb = cert["certified_lower_bound"]
        except CertificationError:
            lb = ""
        cert_seconds = time.perf_counter() - start
        lines.append(",".join([str(d), rep["estimated_value"], lb, rep["best_time"],
                               rep["solve_seconds"], rep["iterations"],
                               "" if lb == "" else repr(cert_seconds)]))
    text = "\n".join(lines) + "\n"
    if out_csv:
        with open(out_csv, "w") as fh:
            fh.write(text)
    return text


# -- argument parsing -----------------------------------------------------------

def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg.update(parse_key_values(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    overrides = {k: getattr(args, k) for k in RunConfig._types
                 if getattr(args, k, None) is not None}
    cfg.update({k: str(v) for k, v in overrides.items()})
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mintime", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log iterations")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(sp, with_problem=True):
        if with_problem:
            sp.add_argument("problem", nargs="?", default=None, choices=sorted(PROBLEMS))
        sp.add_argument("--config", help="flat key = value config file; flags override it")
        sp.add_argument("-d", "--degree", type=int)
        sp.add_argument("--mu", type=float)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--n-samples", dest="n_samples", type=int)
        sp.add_argument("--top-k", dest="top_k", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--spacing", help="grid spacing, scalar or comma list over (t, x)")
        sp.add_argument("--order", type=int, choices=(1, 2))
        sp.add_argument("--max-iter", dest="max_iter", type=int)
        sp.add_argument("--max-evaluations", dest="max_evaluations", type=int)
        sp.add_argument("-T", dest="T", type=float, help="horizon override")
        sp.add_argument("-o", "--out", help="artifact directory")

    run_options(sub.add_parser("solve", help="solve and write a run artifact"))
    c = sub.add_parser("certify", help="grid-certify an artifact")
    c.add_argument("artifact")
    c.add_argument("--spacing")
    c.add_argument("--order", type=int, choices=(1, 2))
    s = sub.add_parser("simulate", help="re-simulate the feedback of an artifact")
    s.add_argument("artifact")
    s.add_argument("--dt", type=float)
    t = sub.add_parser("table", help="solve and certify over several degrees")
    run_options(t)
    t.add_argument("--degrees", default="2,3,4", help="comma list, may be empty")
    t.add_argument("--csv", help="write the table here (default: <out>/table.csv)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command in ("solve", "table"):
            cfg = _config_from_args(args)
            if args.problem:
                cfg.problem = args.problem
            cfg.validate()
            if args.command == "solve":
                rep = cmd_solve(cfg)
                print(f"estimated_value = {rep['estimated_value']}")
                print(f"feedback_time = {rep['final_t_hit'] or 'miss'}")
                print(f"artifact = {cfg.out}")
            else:
                degrees = [int(d) for d in args.degrees.split(",") if d.strip()]
                os.makedirs(cfg.out, exist_ok=True)
                out_csv = args.csv or os.path.join(cfg.out, "table.csv")
                sys.stdout.write(cmd_table(cfg, degrees, out_csv))
        elif args.command == "certify":
            spacing = _parse_floats(args.spacing) if args.spacing else None
            cert = cmd_certify(args.artifact, spacing, args.order)
            print(f"certified_lower_bound = {cert['certified_lower_bound']}")
            print(f"phi_hat = {cert['phi_hat']}")
        elif args.command == "simulate":
            res = cmd_simulate(args.artifact, args.dt)
            print(f"hit = {str(res['hit']).lower()}")
            print(f"t_hit = {res['t_hit']}")
    except (CertificationError, QPError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ProblemError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
