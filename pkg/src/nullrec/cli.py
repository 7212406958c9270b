"""Command line entry point: ``nullrec-sim run CONFIG`` and ``nullrec-sim list-catalog``.

A config is a JSON object::

    {
      "kind": "verify-rate",                    # see KINDS
      "entry": {"name": "oscillator", "params": {"a": 1.0}},
      "grid": {"t0": 0.0, "t_end": 1.0, "n_steps": 1000},
      "eps": [0.4, 0.2, 0.1, 0.05],             # optional, with "h_ref"
      "n_paths": 2000,
      "seed": 0,                                # NULLREC_SEED overrides it
      "y0": [1.0, 0.0],
      "out": "results",
      "tolerances": {...},                      # kind specific, optional
      "options": {...}                          # kind specific, optional
    }

Exit status: 0 when every enabled check passes, 1 when a check fails (a JSON
failure summary is printed), 2 for an invalid config, 3 when a simulation
blows up.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .coefficients import build_catalog_entry, catalog, check_assumptions, l1_norm_envelope
from .deterministic import diffusion_kernel, fundamental_matrix, solve_ode
from .errors import BlowUpError, IntegrationError, NumericalDegeneracyError
from .limit import sample_V, sample_zeta0, sample_zeta_tilde0
from .localtime import local_time_ensemble, local_time_occupation, local_time_tanaka
from .paths import SeedSpec, make_grid, sample_brownian, set_default_threads, write_table_csv
from .report import VerificationReport
from .sde import EpsilonSchedule, simulate_pair_general
from .timechange import verify_timechange_limit
from .verify import (
    check_char_function,
    check_lemma_L1_bound,
    check_lemma_rate,
    check_reduction,
    check_weak_convergence,
    gaussian_psi,
    oscillator_demo,
)

KINDS = (
    "simulate",
    "localtime",
    "limit",
    "oscillator-demo",
    "verify-L1",
    "verify-rate",
    "verify-reduction",
    "verify-char",
    "verify-weak",
    "verify-timechange",
)

_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["kind", "grid"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "entry": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
        },
        "grid": {
            "type": "object",
            "required": ["t_end", "n_steps"],
            "additionalProperties": False,
            "properties": {"t0": _NUM, "t_end": _NUM, "n_steps": {"type": "integer", "minimum": 1}},
        },
        "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "h_ref": {"type": "number", "exclusiveMinimum": 0},
        "n_paths": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "y0": {"type": "array", "items": _NUM},
        "x0": _NUM,
        "out": {"type": "string"},
        "tolerances": {"type": "object", "additionalProperties": _NUM},
        "options": {"type": "object"},
    },
}

DEFAULTS = {
    "entry": {"name": "oscillator", "params": {}},
    "eps": [0.4, 0.2, 0.1, 0.05],
    "h_ref": 1e-2,
    "n_paths": 1000,
    "seed": 0,
    "x0": 0.0,
    "out": "nullrec-out",
}


class ConfigError(ValueError):
    pass


def load_config(path) -> tuple[dict, str]:
    """Parse and validate a config file; returns ``(config, sha256 of its bytes)``."""
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{path}: field {where}: {e.message}")
        raise ConfigError("\n".join(lines))
    full = {**DEFAULTS, **cfg}
    if full["grid"]["t_end"] <= full["grid"].get("t0", 0.0):
        raise ConfigError(f"{path}: field grid/t_end: must exceed grid/t0")
    return full, hashlib.sha256(raw).hexdigest()


class Runner:
    def __init__(self, cfg: dict, digest: str, out: Path):
        self.cfg = cfg
        self.digest = digest
        self.out = out
        env = os.environ.get("NULLREC_SEED")
        self.seed = int(env) if env not in (None, "") else int(cfg["seed"])
        g = cfg["grid"]
        self.grid = make_grid(g.get("t0", 0.0), g["t_end"], g["n_steps"])
        e = cfg["entry"]
        try:
            self.cs = build_catalog_entry(e["name"], e.get("params", {}))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"field entry: {exc}") from None
        y0 = cfg.get("y0")
        if y0 is None:
            y0 = [1.0] + [0.0] * (self.cs.dim - 1)
        if len(y0) != self.cs.dim:
            raise ConfigError(f"field y0: expected {self.cs.dim} components, got {len(y0)}")
        self.y0 = np.asarray(y0, dtype=float)
        try:
            self.schedule = EpsilonSchedule(tuple(cfg["eps"]), cfg["h_ref"])
        except ValueError as exc:
            raise ConfigError(f"field eps: {exc}") from None
        self.opts = cfg.get("options", {})
        self.tol = cfg.get("tolerances", {})
        self.written: list[str] = []

    @property
    def header(self) -> dict:
        return {"config_sha256": self.digest, "seed": self.seed}

    def csv(self, name: str, obj, **extra):
        self.out.mkdir(parents=True, exist_ok=True)
        obj.to_csv(self.out / name, {**self.header, **extra})
        self.written.append(name)

    def report(self, rep: VerificationReport, name: str = "report.json") -> VerificationReport:
        self.out.mkdir(parents=True, exist_ok=True)
        rep.provenance = {**rep.provenance, **self.header}
        (self.out / name).write_text(rep.to_json(include_runtime=False) + "\n")
        self.written.append(name)
        return rep

    # -- experiments ---------------------------------------------------

    def simulate(self):
        eps = self.schedule.values[-1]
        seed = SeedSpec(self.seed)
        traj = simulate_pair_general(self.cs, eps, self.cfg["x0"], self.y0, self.grid, seed,
                                     self.schedule.h_ref)
        table = _Table(["t", "X"] + [f"Y{i + 1}" for i in range(self.cs.dim)],
                       np.column_stack([self.grid.nodes, traj.X.values, traj.Y.values]))
        self.csv("trajectory.csv", table, eps=eps)
        return None

    def localtime(self):
        x = float(self.opts.get("level", 0.0))
        path = sample_brownian(self.grid, 1, SeedSpec(self.seed))
        occ = local_time_occupation(path, x)
        tan = local_time_tanaka(path, x)
        self.csv("local_time_occupation.csv", occ)
        self.csv("local_time_tanaka.csv", tan)
        n = int(self.cfg["n_paths"])
        if n < 2:
            return None
        res = local_time_ensemble(self.grid, n, self.seed, level=x)
        T = self.grid.t_end - self.grid.t0
        oracle = math.sqrt(2 * T / math.pi) if x == 0 else None
        est = [float(res["occupation"][:, -1].mean()), float(res["tanaka"][:, -1].mean())]
        se = [float(res[k][:, -1].std(ddof=1) / math.sqrt(n)) for k in ("occupation", "tanaka")]
        tol = float(self.tol.get("relative", 0.02))
        checks = {}
        if oracle is not None:
            checks = {f"{k}_mean": abs(v - oracle) / oracle <= tol for k, v in zip(("occupation", "tanaka"), est)}
        rep = VerificationReport("local_time_mean", {"n_paths": n, "level": x, "n_steps": self.grid.n_steps},
                                 est, se, tolerance=tol, checks=checks or {"computed": True},
                                 details={"oracle": oracle})
        return self.report(rep)

    def limit(self):
        seed = SeedSpec(self.seed)
        ode = solve_ode(self.cs, self.y0, self.grid)
        Phi = fundamental_matrix(self.cs, ode)
        V = sample_V(self.grid, self.cs.dim, seed, self.opts.get("h_inner"))
        self.csv("V.csv", V)
        if self.cs.sigma_zero:
            z = sample_zeta_tilde0(self.cs, Phi, ode, V.L)
        else:
            z = sample_zeta0(diffusion_kernel(self.cs, ode), Phi, V)
        self.csv("zeta.csv", z)
        tol = float(self.tol.get("construction_gap", 1e-2))
        rep = VerificationReport("limit_constructions", {"n_steps": self.grid.n_steps},
                                 [z.construction_gap], tolerance=tol,
                                 checks={"construction_gap": z.construction_gap <= tol})
        return self.report(rep)

    def oscillator_demo(self):
        o = self.opts
        demo = oscillator_demo(float(o.get("sqrt_eps", 0.1)), float(o.get("sigma_l2", 100.0)),
                               self.grid.t_end - self.grid.t0, SeedSpec(self.seed),
                               self.grid.n_steps, o.get("h_inner"))
        self.csv("oscillator_demo.csv", demo)
        return None

    def verify_L1(self):
        o = self.opts
        psi, l1 = gaussian_psi()
        rep = check_lemma_L1_bound(psi, l1, tuple(o.get("t_values", (0.25, 0.5, 1.0, 2.0))),
                                   o.get("p", 1), self.schedule, self.cfg["n_paths"], self.seed,
                                   limit_tol=self.tol.get("limit", 0.05),
                                   slope_tol=self.tol.get("slope", 0.1))
        return self.report(rep)

    def verify_rate(self):
        rep = check_lemma_rate(self.cs, self.y0, self.grid.t_end, self.opts.get("p", 2), self.schedule,
                               self.cfg["n_paths"], self.seed, slope_tol=self.tol.get("slope", 0.15))
        return self.report(rep)

    def verify_reduction(self):
        rep = check_reduction(self.cs, self.y0, self.grid.t_end, self.schedule, self.cfg["n_paths"], self.seed)
        return self.report(rep)

    def verify_char(self):
        ode = solve_ode(self.cs, self.y0, self.grid)
        lam = self.opts.get("lambdas", [[1.0] + [0.0] * (self.cs.dim - 1)])
        rep = check_char_function(self.cs, ode, self.schedule.values[-1], self.opts.get("t", self.grid.t_end),
                                  lam, self.cfg["n_paths"], self.seed, n_se=self.tol.get("n_se", 3.0))
        return self.report(rep)

    def verify_weak(self):
        o = self.opts
        rep = check_weak_convergence(
            self.cs, self.y0, self.grid.t_end, o.get("probe_times"), self.schedule, self.cfg["n_paths"],
            self.seed, ks_threshold=self.tol.get("ks", 0.05), second_moment=o.get("second_moment"),
            moment_tol=self.tol.get("moment", 0.10), h_limit=o.get("h_limit", 1e-3),
            h_inner=o.get("h_inner", 2.5e-5))
        return self.report(rep)

    def verify_timechange(self):
        ode = solve_ode(self.cs, self.y0, self.grid)
        rep = verify_timechange_limit(self.cs, ode, self.schedule, self.cfg["n_paths"], self.seed)
        return self.report(rep)

    def run(self) -> VerificationReport | None:
        return getattr(self, self.cfg["kind"].replace("-", "_"))()


class _Table:
    def __init__(self, columns, table):
        self.columns, self.table = columns, table

    def to_csv(self, fh, comments):
        return write_table_csv(fh, self.columns, self.table, comments)


def cmd_run(args) -> int:
    try:
        cfg, digest = load_config(args.config)
        out = Path(args.out or cfg["out"])
        runner = Runner(cfg, digest, out)
    except (ConfigError, OSError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    try:
        rep = runner.run()
    except (BlowUpError, NumericalDegeneracyError, IntegrationError, FloatingPointError) as exc:
        print(json.dumps({"pass": False, "error": type(exc).__name__, "message": str(exc)}))
        return 3
    if rep is not None and not rep.passed:
        print(json.dumps({"pass": False, "name": rep.name, "failures": rep.failures(),
                          "report": str(out / "report.json")}))
        return 1
    print(json.dumps({"pass": True, "artifacts": [str(out / w) for w in runner.written]}))
    return 0


def list_catalog() -> str:
    lines = []
    for name in sorted(catalog()):
        entry = catalog()[name]
        cs = entry.build()
        lines.append(name)
        if entry.description:
            lines.append(f"  {entry.description}")
        lines.append("  params: " + ", ".join(f"{k}={v}" for k, v in entry.defaults.items()))
        lines.append(f"  dim={cs.dim} noise_dim={cs.noise_dim}")
        norms = []
        for which in ("b_hat", "sigma_hat_sq"):
            try:
                norms.append(f"|{which}|_1={l1_norm_envelope(cs, which):.6g}")
            except ValueError:
                norms.append(f"|{which}|_1=not integrable")
        lines.append("  envelopes: " + " ".join(norms))
        rep = check_assumptions(cs)
        ok = lambda *ks: "yes" if all(rep.checks[k] for k in ks) else "no"  # noqa: E731
        lines.append(
            "  assumptions: L1 envelopes=yes "
            f"envelope domination={ok('envelope_b_hat', 'envelope_sigma_hat_sq')} "
            f"Lipschitz={ok('lipschitz_b1', 'lipschitz_b2', 'lipschitz_sigma')} "
            f"psi bounds={ok('psi_bounds')} (c1={cs.c1:g}, c2={cs.c2:g}) "
            f"b1 bounded={'yes' if cs.b1_bounded else 'no'}"
        )
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nullrec-sim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config)")
    sub.add_parser("list-catalog", help="list the built-in coefficient sets")
    args = parser.parse_args(argv)
    if args.command == "list-catalog":
        print(list_catalog())
        return 0
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    set_default_threads(args.threads)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
