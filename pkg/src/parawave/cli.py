"""``parawave`` batch entry point.

Every command reads an optional flat-key JSON config, writes its artifacts
into ``--out`` and prints a short report.  Exit codes: 0 success, 2 config
error, 3 numerical failure (with an error JSON on stderr and in the output
directory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .dirichlet_neumann import NumericalFailure

GIT_DESCRIBE = "unversioned"

COMMANDS = ("resonance-scan", "kappa-scan", "dno-verify", "paralin-probe", "nf-verify",
            "blocks", "simulate", "lifespan", "energy-drift")

# key -> (type, default); lists are given as tuples
DEFAULTS: dict[str, tuple[type, object]] = {
    "grid.n_max": (int, 32),
    "physics.kappa": (float, 1.0),
    "physics.g": (float, 1.0),
    "nf.delta": (float, 0.9375),
    "nf.tau": (float, 2.5),
    "nf.nu": (float, 0.25),
    "nf.r_loc": (float, 2.0),
    "nf.rho": (int, 2),
    "nf.samples": (int, 20),
    "nf.tables": (int, 10),
    "sim.dt": (float, 0.01),
    "sim.t_end": (float, 1.0),
    "sim.scheme": (str, "lawson_rk4"),
    "sim.dealias": (bool, True),
    "sim.snapshot_every": (int, 10),
    "sim.s": (float, 3.0),
    "sim.eps": (float, 0.05),
    "sim.n_y": (int, 24),
    "sim.dn_scale": (float, 2.0),
    "dn.tol": (float, 1e-10),
    "dn.n_y": (int, 80),
    "seed": (int, 0),
    "scan.K": (int, 10),
    "scan.gamma": (float, 1e-3),
    "scan.kappa_min": (float, 0.5),
    "scan.kappa_max": (float, 1.5),
    "scan.kappa_count": (int, 11),
    "probe.s": (float, 0.0),
    "probe.eta_amplitude": (float, 0.05),
    "probe.frequencies": (list, (8, 12, 16, 20)),
    "blocks.radius": (int, 48),
    "lifespan.eps_list": (list, (0.1, 0.05, 0.025)),
    "lifespan.factor": (float, 2.0),
    "lifespan.t_cap": (float, 50.0),
    "lifespan.s0": (float, 3.0),
    "drift.window": (float, 1.0),
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the JSON file at ``path``; unknown keys and bad types raise."""
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, (_, v) in DEFAULTS.items()}
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object with flat dotted keys")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in raw.items():
        cfg[key] = _coerce(key, value)
    return cfg


def _coerce(key: str, value):
    kind = DEFAULTS[key][0]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if kind is list:
        if not isinstance(value, list) or not value or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key} must be a non-empty list of numbers")
        return list(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def fmt(x) -> str:
    """Floats with 17 significant digits; everything else via ``str``."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def nf_params(cfg: dict):
    from .normal_form import NfParams

    return NfParams(cfg["nf.delta"], cfg["nf.tau"], cfg["nf.nu"], cfg["nf.r_loc"], cfg["nf.rho"])


def header_line(command: str, cfg: dict) -> str:
    return (f"# command={command} git={GIT_DESCRIBE} config_sha256={config_hash(cfg)} "
            f"nf=[{nf_params(cfg).describe()}] kappa={fmt(cfg['physics.kappa'])} "
            f"n_max={cfg['grid.n_max']} seed={cfg['seed']}")


class Output:
    """Collects report lines and writes artifacts, each starting with the header line."""

    def __init__(self, command: str, cfg: dict, out_dir: Path):
        self.command = command
        self.header = header_line(command, cfg)
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.dir / name

    def csv(self, name: str, columns, rows) -> Path:
        p = self.path(name)
        with open(p, "w") as fh:
            fh.write(self.header + "\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) for v in r) + "\n")
        return p

    def report(self, lines: list[str]) -> None:
        text = "\n".join(lines)
        print(text)
        self.path(f"{self.command}.txt").write_text(self.header + "\n" + text + "\n")


def _sim_config(cfg: dict, **over):
    from .simulator import RunConfig

    base = dict(n_max=cfg["grid.n_max"], kappa=cfg["physics.kappa"], g=cfg["physics.g"],
                dt=cfg["sim.dt"], t_end=cfg["sim.t_end"], scheme=cfg["sim.scheme"],
                dealias=cfg["sim.dealias"], dn_tol=cfg["dn.tol"],
                snapshot_every=cfg["sim.snapshot_every"], seed=cfg["seed"], n_y=cfg["sim.n_y"],
                dn_scale=cfg["sim.dn_scale"])
    base.update(over)
    try:
        return RunConfig(**base)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# commands ----------------------------------------------------------------------------


SCAN_COLUMNS = ("kappa", "K", "empirical_c", "j1", "j2", "k1", "k2", "s1", "s2", "divisor")


def _scan_row(kappa, K, c, rec):
    return (float(kappa), K, float(c), *rec.j, *rec.k, rec.s1, rec.s2, float(rec.divisor))


def cmd_resonance_scan(cfg, out: Output, jobs: int) -> None:
    from .resonance import divisor_scan

    res = divisor_scan(cfg["scan.K"], cfg["physics.kappa"], cfg["scan.gamma"], cfg["physics.g"],
                       jobs=jobs)
    rows = [_scan_row(res.kappa, res.K, res.empirical_c, res.min_record)]
    rows += [_scan_row(res.kappa, res.K, res.empirical_c, v) for v in res.violations]
    out.csv("resonance-scan.csv", SCAN_COLUMNS, rows)
    lines = [f"empirical_c={fmt(res.empirical_c)}", f"cases={res.n_cases}",
             f"below_gamma={len(res.violations)}"]
    try:
        a, b, c = res.exponents()
        lines.append(f"exponent_max={fmt(a)} exponent_min={fmt(b)}")
    except ValueError:
        pass
    out.report(lines)


def cmd_kappa_scan(cfg, out: Output, jobs: int) -> None:
    from .resonance import kappa_badset_scan

    grid = np.linspace(cfg["scan.kappa_min"], cfg["scan.kappa_max"], cfg["scan.kappa_count"])
    rows = kappa_badset_scan(grid, cfg["scan.K"], cfg["scan.gamma"], cfg["physics.g"], jobs=jobs)
    out.csv("kappa-scan.csv", SCAN_COLUMNS,
            [_scan_row(r.kappa, cfg["scan.K"], r.empirical_c, r.min_record) for r in rows])
    out.report([f"kappa={fmt(r.kappa)} empirical_c={fmt(r.empirical_c)} below_gamma={r.count_below}"
                for r in rows])


def cmd_dno_verify(cfg, out: Output, jobs: int) -> None:
    from .dirichlet_neumann import dirichlet_neumann
    from .grid import GridField, Truncation, differential, sobolev_norm

    trunc = Truncation(cfg["grid.n_max"])
    rng = np.random.default_rng(cfg["seed"])
    zero = GridField.zeros(trunc, real=True)
    worst = 0.0
    for _ in range(20):
        psi = GridField.from_physical(trunc, rng.normal(size=trunc.shape), meanzero=True)
        G = dirichlet_neumann(zero, psi, cfg["dn.tol"], n_y=cfg["dn.n_y"])
        worst = max(worst, sobolev_norm(G - differential(psi, "absD_power"), 0.0))
    ok = worst <= 1e-10
    eta = GridField.from_function(trunc, lambda x, y: 0.1 * np.cos(x))
    psi = GridField.from_function(trunc, lambda x, y: np.exp(0.1 * np.cos(x)) * np.cos(x))
    exact = GridField.from_function(
        trunc, lambda x, y: np.exp(0.1 * np.cos(x)) * (np.cos(x) - 0.1 * np.sin(x) ** 2))
    G = dirichlet_neumann(eta, psi, cfg["dn.tol"], n_y=cfg["dn.n_y"])
    rel = sobolev_norm(G - exact, 0.0) / sobolev_norm(exact, 0.0)
    out.report([f"flat_defect={fmt(worst)}",
                f"flat_defect<=1e-10 {'PASS' if ok else 'FAIL'}",
                f"analytic_rel_error={fmt(rel)}",
                f"analytic_rel_error<=1e-6 {'PASS' if rel <= 1e-6 else 'FAIL'}"])


def cmd_paralin_probe(cfg, out: Output, jobs: int) -> None:
    from .dirichlet_neumann import paralin_probe
    from .grid import Truncation

    trunc = Truncation(cfg["grid.n_max"])
    res = paralin_probe(trunc, cfg["probe.eta_amplitude"], cfg["probe.s"],
                        [int(v) for v in cfg["probe.frequencies"]], cfg["dn.tol"], cfg["dn.n_y"])
    out.csv("paralin-probe.csv", ("N", "remainder_norm"), zip(res.frequencies, res.norms))
    out.report([f"slope={fmt(res.slope)}", f"target<={fmt(cfg['probe.s'] - 1.8)}"])


def cmd_nf_verify(cfg, out: Output, jobs: int) -> None:
    from .normal_form import (birkhoff_coeffs, birkhoff_identity_residual, homological_residual,
                              random_admissible_symbol, random_table, transport_residual)
    from .grid import GridField, Truncation

    p = nf_params(cfg)
    kappa = cfg["physics.kappa"]
    rng = np.random.default_rng(cfg["seed"])
    homo = trans = birk = 0.0
    for _ in range(cfg["nf.samples"]):
        a = random_admissible_symbol(3, 1.5, rng)
        xi = rng.uniform(-40.0, 40.0, size=(64, 2))
        homo = max(homo, homological_residual(a, p, kappa, xi))
        trunc = Truncation(6)
        psi = GridField.from_physical(trunc, rng.normal(size=trunc.shape), meanzero=True)
        trans = max(trans, transport_residual(psi, kappa, xi))
    modes = [(1, 0), (0, 1), (1, 1), (2, -1), (-1, 2), (3, 1), (1, -3), (2, 2), (-2, 1)]
    for _ in range(cfg["nf.tables"]):
        R = random_table(modes, rng)
        dense, vec = birkhoff_identity_residual(R, birkhoff_coeffs(R, kappa, cfg["physics.g"]),
                                                kappa, cfg["physics.g"], rng)
        birk = max(birk, dense, vec)
    out.report([f"homological_residual={fmt(homo)} {'PASS' if homo <= 1e-9 else 'FAIL'}",
                f"transport_residual={fmt(trans)} {'PASS' if trans <= 1e-10 else 'FAIL'}",
                f"birkhoff_residual={fmt(birk)} {'PASS' if birk <= 1e-8 else 'FAIL'}"])


def cmd_blocks(cfg, out: Output, jobs: int) -> None:
    from .normal_form import block_partition

    part = block_partition(nf_params(cfg), cfg["blocks.radius"])
    p = out.path("blocks.txt")
    part.export_text(p)
    body = p.read_text()
    p.write_text(out.header + "\n" + body)
    lines = [f"blocks={part.n_blocks}", f"core_radius={fmt(part.core_radius)}",
             f"violations={len(part.violations)}"]
    lines += [f"violation alpha={a} max={fmt(hi)} min={fmt(lo)}" for a, hi, lo in part.violations]
    out.report(lines)


def cmd_simulate(cfg, out: Output, jobs: int) -> None:
    from .grid import Truncation
    from .simulator import RUN_COLUMNS, initial_by_norm, run

    sim = _sim_config(cfg)
    init = initial_by_norm(Truncation(sim.n_max), sim.kappa, cfg["sim.eps"], cfg["sim.s"],
                           cfg["seed"], sim.g)
    rec = run(sim, init, cfg["sim.s"], cfg["sim.eps"])
    out.csv("run.csv", RUN_COLUMNS, rec.rows)
    if rec.aborted:
        exc = NumericalFailure(rec.error["message"], {**rec.error["context"],
                                                      "partial_record": str(out.path("run.csv"))})
        exc.code = rec.error["code"]
        raise exc
    H = rec.column("H")
    drift = float(np.max(np.abs(H - H[0])) / abs(H[0])) if H[0] else 0.0
    out.report([f"steps={sim.n_steps}", f"snapshots={len(rec.rows)}",
                f"hamiltonian_rel_drift={fmt(drift)}"])


def cmd_lifespan(cfg, out: Output, jobs: int) -> None:
    from .simulator import lifespan_experiment

    sim = _sim_config(cfg)
    res = lifespan_experiment(cfg["lifespan.eps_list"], sim.kappa, cfg["sim.s"],
                              cfg["lifespan.factor"], sim, cfg["lifespan.t_cap"],
                              cfg["lifespan.s0"], cfg["seed"], jobs=jobs)
    out.csv("lifespan.csv", ("epsilon", "T", "censored"),
            [(r.epsilon, r.T, int(r.censored)) for r in res.rows])
    lo, hi = res.slope_ci
    out.report([f"slope={fmt(res.slope)}", f"slope_ci95=[{fmt(lo)}, {fmt(hi)}]",
                f"censored={sum(r.censored for r in res.rows)}/{len(res.rows)}"])


def cmd_energy_drift(cfg, out: Output, jobs: int) -> None:
    from .simulator import energy_drift_experiment

    sim = _sim_config(cfg)
    res = energy_drift_experiment(sim, cfg["sim.s"], cfg["sim.eps"], cfg["drift.window"],
                                  cfg["seed"])
    out.csv("energy-drift.csv", ("epsilon", "z_norm_sq_rate", "E_low_rate"),
            zip(res.eps, res.z_drift, res.low_drift))
    out.report([f"z_norm_sq_exponent={fmt(res.z_exponent)}",
                f"E_low_exponent={fmt(res.low_exponent)}"])


HANDLERS = {
    "resonance-scan": cmd_resonance_scan,
    "kappa-scan": cmd_kappa_scan,
    "dno-verify": cmd_dno_verify,
    "paralin-probe": cmd_paralin_probe,
    "nf-verify": cmd_nf_verify,
    "blocks": cmd_blocks,
    "simulate": cmd_simulate,
    "lifespan": cmd_lifespan,
    "energy-drift": cmd_energy_drift,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parawave", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None, help="flat-key JSON config")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes")
    return ap


def _fail(code: str, message: str, context: dict, out_dir: Path | None, status: int) -> int:
    payload = {"code": code, "message": message, "context": _jsonable(context)}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return status


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    return str(obj)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    if args.jobs < 1:
        return _fail("config", "--jobs must be at least 1", {"jobs": args.jobs}, out_dir, 2)
    try:
        cfg = load_config(args.config)
        out = Output(args.command, cfg, out_dir)
        HANDLERS[args.command](cfg, out, args.jobs)
    except ConfigError as exc:
        return _fail("config", str(exc), {"config": args.config}, out_dir, 2)
    except NumericalFailure as exc:
        return _fail(exc.code, str(exc), exc.context, out_dir, 3)
    except ValueError as exc:
        # parameter validation inside the library (NfParams, kappa, ...) is a config problem
        return _fail("config", str(exc), {"config": args.config}, out_dir, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
