"""Command-line front end.

Commands: ``run``, ``scan-pes``, ``single-point``, ``ensemble`` and
``ham import|export``. Runs are described by a sectioned key-value file
(INI syntax) and/or a named preset; command-line flags override both.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.

Artifacts (all numbers written with 17 significant digits):

``iterations.csv``
    iteration, fbar, e_a, solves, then r_ab_<i>, r_bc_<i>, e_<i> for every
    row i of the path (IS is row 0, FS the last row).
``summary.json``
    fbar, r_ab, r_bc (highest image), e_a, delta_saddle, saddle_e_a,
    iterations, total_solves, aborted.
``pes.csv``
    r_ab, r_bc, energy; row-major with r_bc varying fastest.
``ensemble.csv``
    iteration, mean_cz, std_cz, mean_none, std_none, delta, delta_std.
``ensemble_runs.csv``
    seed, arm, iteration, fbar.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from qneb.driver import (
    AdamParams,
    DecodeAbort,
    EnergyOracle,
    RunConfig,
    exact_saddle,
    optimize,
    rc_to_positions,
    run_ensemble,
)
from qneb.groundstate import SolverConfig, solve_ed, solve_vqe
from qneb.hamiltonian import (
    Geometry,
    HamiltonianFormatError,
    build_hamiltonian,
    load_hamiltonian,
    save_hamiltonian,
)
from qneb.neb import NebParams
from qneb.pathcircuit import GeneratorConfig, PathFormatError, initial_path, load_path

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_ABORT = 3

ITERATION_FIELDS = ("iteration", "fbar", "e_a", "solves")
PES_FIELDS = ("r_ab", "r_bc", "energy")
ENSEMBLE_FIELDS = ("iteration", "mean_cz", "std_cz", "mean_none", "std_none", "delta", "delta_std")
ENSEMBLE_RUN_FIELDS = ("seed", "arm", "iteration", "fbar")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# --- configuration ------------------------------------------------------------------

# section -> key -> (type, default)
SCHEMA = {
    "path": {
        "n_image": (int, 3),
        "is": ("pair", (0.73, 2.50)),
        "imp": ("pair", (0.73, 0.73)),
        "fs": ("pair", (2.50, 0.73)),
        "r_ref": (float, 6.0),
        "file": (str, ""),
    },
    "generator": {
        "depth": (int, 2),
        "entanglers": (bool, True),
    },
    "solver": {
        "method": (str, "ED"),
        "vqe_depth": (int, 5),
        "threshold": (float, 1e-4),
        "max_sweeps": (int, 500),
        "orbitals": (str, "lowdin"),
        "sector": (str, ""),
    },
    "neb": {
        "spring_constant": (float, 0.1),
        "coord_step": (float, 0.1),
    },
    "optimizer": {
        "theta_step": (float, 0.001),
        "learning_rate": (float, 0.01),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "max_iterations": (int, 100),
    },
    "run": {
        "seed": (int, 0),
        "cache": (bool, True),
        "count_parity": (bool, False),
        "saddle_reference": (str, "auto"),
        "threads": (int, 1),
    },
    "ensemble": {
        "n_paths": (int, 10),
        "perturbation": (float, 0.1),
    },
    "output": {
        "dir": (str, ""),
        "formats": (str, "csv,json"),
    },
}

PRESETS = {
    "table1-n3-ed": {"path": {"n_image": 3}, "solver": {"method": "ED"}},
    "table1-n5-ed": {"path": {"n_image": 5}, "solver": {"method": "ED"}},
    "table1-n3-vqe": {"path": {"n_image": 3}, "solver": {"method": "VQE", "orbitals": "core"}},
    "table1-n5-vqe": {"path": {"n_image": 5}, "solver": {"method": "VQE", "orbitals": "core"}},
    "appendix-n3": {"path": {"n_image": 3}, "solver": {"method": "ED"}},
    "appendix-n5": {"path": {"n_image": 5}, "solver": {"method": "ED"}},
    "appendix-n7": {"path": {"n_image": 7}, "solver": {"method": "ED"}},
}


def _convert(kind, raw, where: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind == "pair":
            parts = [float(v) for v in text.replace(",", " ").split()]
            if len(parts) != 2:
                raise ValueError
            return tuple(parts)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r}") from None


def resolve_settings(config_file=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- preset <- config file <- overrides, validated against SCHEMA."""
    settings = {sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    layers = []
    file_preset = None
    parser = None
    if config_file is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(config_file) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"config file {config_file}: {exc}") from None
        if parser.has_option("run", "preset"):
            file_preset = parser.get("run", "preset")
            parser.remove_option("run", "preset")
    name = preset or file_preset
    if name:
        if name not in PRESETS:
            raise ConfigError(f"run.preset: unknown preset {name!r} (choose from {', '.join(PRESETS)})")
        layers.append(PRESETS[name])
    if parser is not None:
        layers.append({sec: dict(parser.items(sec)) for sec in parser.sections()})
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for sec, values in layer.items():
            if sec not in SCHEMA:
                raise ConfigError(f"{sec}: unknown section")
            for key, raw in values.items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"{sec}.{key}: unknown key")
                settings[sec][key] = _convert(SCHEMA[sec][key][0], raw, f"{sec}.{key}")
    settings["run"]["preset"] = name or ""
    return settings


def _sector(text: str, where: str):
    if not text:
        return None
    try:
        n_el, sz = (float(v) for v in text.replace(",", " ").split())
        return int(n_el), sz
    except ValueError:
        raise ConfigError(f"{where}: expected 'electrons, sz', got {text!r}") from None


def build_run_config(settings: dict) -> RunConfig:
    p, g, s, n, o, r = (settings[k] for k in ("path", "generator", "solver", "neb", "optimizer", "run"))
    try:
        if p["file"]:
            path = load_path(p["file"])
        else:
            path = initial_path(p["n_image"], p["is"], p["imp"], p["fs"], p["r_ref"])
    except (OSError, PathFormatError) as exc:
        raise ConfigError(f"path.file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"path: {exc}") from None
    if s["orbitals"] not in ("lowdin", "core"):
        raise ConfigError(f"solver.orbitals: expected lowdin or core, got {s['orbitals']!r}")
    checks = [
        ("solver", lambda: SolverConfig(
            method=s["method"],
            vqe_depth=s["vqe_depth"],
            convergence_threshold=s["threshold"],
            seed=r["seed"],
            sector=_sector(s["sector"], "solver.sector"),
            max_sweeps=s["max_sweeps"],
        )),
        ("neb", lambda: NebParams(n["spring_constant"], n["coord_step"])),
        ("optimizer", lambda: AdamParams(o["learning_rate"], o["beta1"], o["beta2"], o["eps"])),
        ("generator", lambda: GeneratorConfig(np.zeros(0), g["depth"], g["entanglers"])),
    ]
    built = {}
    for sec, make in checks:
        try:
            built[sec] = make()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{sec}: {exc}") from None
    try:
        return RunConfig(
            path=path,
            generator=built["generator"],
            solver=built["solver"],
            neb=built["neb"],
            theta_step=o["theta_step"],
            adam=built["optimizer"],
            max_iterations=o["max_iterations"],
            cache_enabled=r["cache"],
            count_parity=r["count_parity"],
            orbitals=s["orbitals"],
            seed=r["seed"],
            n_jobs=max(1, r["threads"]),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None


@dataclass
class ExperimentConfig:
    """Resolved settings plus the run configuration built from them."""

    settings: dict
    run: RunConfig

    @classmethod
    def load(cls, config_file=None, preset=None, overrides=None) -> "ExperimentConfig":
        settings = resolve_settings(config_file, preset, overrides)
        return cls(settings, build_run_config(settings))

    @property
    def preset(self) -> str:
        return self.settings["run"]["preset"]

    @property
    def formats(self) -> set[str]:
        return {f.strip() for f in self.settings["output"]["formats"].split(",") if f.strip()}

    def out_dir(self, flag: str | None = None) -> Path:
        target = flag or self.settings["output"]["dir"] or os.environ.get("QNEB_OUT") or "qneb-out"
        path = Path(target)
        path.mkdir(parents=True, exist_ok=True)
        return path


def saddle_reference(settings: dict, cfg: RunConfig):
    """Exact saddle E_a (ED, symmetric stretch) or a fixed value in Hartree."""
    ref = settings["run"]["saddle_reference"].strip().lower()
    if ref in ("", "none", "off"):
        return None, None
    if ref != "auto":
        try:
            return None, float(ref)
        except ValueError:
            raise ConfigError(f"run.saddle_reference: expected auto, none or a number, got {ref!r}") from None
    is_rc = cfg.path.reaction_coordinates()[0]
    return exact_saddle(is_rc, orbitals="lowdin")


def format_settings(settings: dict) -> str:
    out = configparser.ConfigParser(interpolation=None)
    for sec, values in settings.items():
        out[sec] = {}
        for key, val in values.items():
            if isinstance(val, tuple):
                val = ", ".join(repr(float(v)) for v in val)
            out[sec][key] = str(val)
    lines = []
    for sec in out.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in out[sec].items())
        lines.append("")
    return "\n".join(lines)


# --- artifacts ---------------------------------------------------------------------


def num(x) -> str:
    return format(float(x), ".16e")


def iteration_header(n_rows: int) -> list[str]:
    cols = list(ITERATION_FIELDS)
    for i in range(n_rows):
        cols += [f"r_ab_{i}", f"r_bc_{i}", f"e_{i}"]
    return cols


def write_iterations(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not records:
            w.writerow(ITERATION_FIELDS)
            return
        w.writerow(iteration_header(len(records[0].energies)))
        for rec in records:
            row = [rec.iteration, num(rec.fbar), num(rec.activation_energy), rec.solves]
            for rc, e in zip(rec.reaction_coordinates, rec.energies):
                row += [num(rc[0]), num(rc[1]), num(e)]
            w.writerow(row)


def summary_row(report, rc, iterations, total_solves, saddle_e_a=None, aborted=False) -> dict:
    k = report.max_image
    delta = None if saddle_e_a is None else abs(report.activation_energy - saddle_e_a)
    return {
        "fbar": float(report.fbar),
        "r_ab": float(rc[k][0]),
        "r_bc": float(rc[k][1]),
        "e_a": float(report.activation_energy),
        "delta_saddle": None if delta is None else float(delta),
        "saddle_e_a": None if saddle_e_a is None else float(saddle_e_a),
        "iterations": int(iterations),
        "total_solves": int(total_solves),
        "aborted": bool(aborted),
    }


def write_json(path: Path, payload: dict) -> None:
    def enc(v):
        if isinstance(v, float):
            return float(num(v))
        return v

    with open(path, "w") as fh:
        json.dump({k: enc(v) for k, v in payload.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- commands ------------------------------------------------------------------------


def _common(fn):
    fn = click.option("--config", "config_file", type=click.Path(dir_okay=False), help="Config file.")(fn)
    fn = click.option("--preset", help=f"One of: {', '.join(PRESETS)}.")(fn)
    fn = click.option("--seed", type=int, help="Seed (VQE start, ensemble paths).")(fn)
    fn = click.option("--threads", type=int, help="Worker threads for ground-state solves.")(fn)
    fn = click.option("--out", "out", type=click.Path(file_okay=False), help="Output directory.")(fn)
    fn = click.option("--count-parity", is_flag=True, default=None, help="Uncached solve bookkeeping.")(fn)
    fn = click.option("--max-iter", type=int, help="Override optimizer.max_iterations.")(fn)
    return fn


def _overrides(seed, threads, count_parity, max_iter) -> dict:
    ov: dict = {}
    if seed is not None:
        ov.setdefault("run", {})["seed"] = seed
    if threads is not None:
        ov.setdefault("run", {})["threads"] = threads
    if count_parity:
        ov.setdefault("run", {})["count_parity"] = True
    if max_iter is not None:
        ov.setdefault("optimizer", {})["max_iterations"] = max_iter
    return ov


class _Guard:
    """Map library exceptions onto the exit-code contract."""

    def __enter__(self):
        return self

    def __exit__(self, etype, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, ConfigError):
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        if isinstance(exc, (click.exceptions.Exit, click.ClickException, SystemExit)):
            return False
        if isinstance(exc, (RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError)):
            click.echo(f"aborted: {exc}", err=True)
            sys.exit(EXIT_ABORT)
        return False


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-v info, -vv debug).")
def main(verbose):
    """Quantum-circuit reaction path optimization for H2 + H."""
    level = logging.WARNING if verbose == 0 else (logging.INFO if verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@_common
def cmd_run(config_file, preset, seed, threads, out, count_parity, max_iter):
    """Optimize a reaction path and write iteration CSV and summary JSON."""
    with _Guard():
        exp = ExperimentConfig.load(config_file, preset, _overrides(seed, threads, count_parity, max_iter))
        cfg = exp.run
        outdir = exp.out_dir(out)
        _, saddle_e_a = saddle_reference(exp.settings, cfg)
        cfg.saddle_energy = saddle_e_a
        (outdir / "config.ini").write_text(format_settings(exp.settings))
        formats = exp.formats
        try:
            traj = optimize(cfg)
        except DecodeAbort as exc:
            recs = exc.trajectory.records if exc.trajectory else []
            if "csv" in formats:
                write_iterations(outdir / "iterations.csv", recs)
            raise RuntimeError(f"path decoding failed: {exc}") from exc
        if "csv" in formats:
            write_iterations(outdir / "iterations.csv", traj.records)
        total = sum(r.solves for r in traj.records)
        row = summary_row(
            traj.final_report,
            traj.final_path.reaction_coordinates(),
            len(traj.records),
            total,
            saddle_e_a,
        )
        if "json" in formats:
            write_json(outdir / "summary.json", row)
        click.echo(json.dumps(row, sort_keys=True))


def _grid(spec: str, where: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ConfigError(f"{where}: expected min:max:step, got {spec!r}") from None
    if not step > 0 or hi < lo:
        raise ConfigError(f"{where}: need step > 0 and max >= min")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


@main.command("scan-pes")
@click.option("--ab", default="0.5:3.0:0.05", show_default=True, help="R_AB range min:max:step.")
@click.option("--bc", default="0.5:3.0:0.05", show_default=True, help="R_BC range min:max:step.")
@click.option("--diagonal", is_flag=True, help="Scan R_AB = R_BC only (uses --ab).")
@click.option("--orbitals", default="lowdin", type=click.Choice(["lowdin", "core"]))
@click.option("--r-ref", default=6.0, show_default=True, type=float)
@click.option("--is", "is_rc", default="0.73,2.50", show_default=True, help="IS for the diagonal report.")
@click.option("--out", "out", type=click.Path(file_okay=False))
def cmd_scan_pes(ab, bc, diagonal, orbitals, r_ref, is_rc, out):
    """ED energies on an (R_AB, R_BC) grid; writes pes.csv."""
    with _Guard():
        a = _grid(ab, "ab")
        if diagonal:
            pts = np.stack([a, a], axis=1)
        else:
            b = _grid(bc, "bc")
            pts = np.array([(x, y) for x in a for y in b])
        if np.any(pts <= 0) or np.any(pts.sum(axis=1) > r_ref):
            raise ConfigError("ab/bc: points must satisfy 0 < R and R_AB + R_BC <= r_ref")
        oracle = EnergyOracle(SolverConfig(), 3, orbitals)
        energies = oracle.energies(rc_to_positions(pts))
        outdir = Path(out or os.environ.get("QNEB_OUT") or "qneb-out")
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "pes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PES_FIELDS)
            for (x, y), e in zip(pts, energies):
                w.writerow([num(x), num(y), num(e)])
        if diagonal:
            k = int(np.argmin(energies))
            ref = _convert("pair", is_rc, "is")
            e_is = oracle(list(ref))
            click.echo(json.dumps({"r_saddle": float(pts[k, 0]), "e_a": float(energies[k] - e_is)}))


def _positions(positions: str | None, rab, rbc) -> np.ndarray:
    if positions:
        try:
            return np.array([float(v) for v in positions.replace(",", " ").split()])
        except ValueError:
            raise ConfigError(f"positions: cannot read {positions!r}") from None
    if rab is None or rbc is None:
        raise ConfigError("geometry: give --rab and --rbc, or --positions")
    return np.array([0.0, rab, rab + rbc])


@main.command("single-point")
@click.option("--rab", type=float, help="R_AB in Angstrom.")
@click.option("--rbc", type=float, help="R_BC in Angstrom.")
@click.option("--positions", help="Explicit 1-D atom positions, comma separated.")
@click.option("--method", default="both", type=click.Choice(["ED", "VQE", "both"], case_sensitive=False))
@click.option("--threshold", default=1e-4, show_default=True, type=float)
@click.option("--vqe-depth", default=5, show_default=True, type=int)
@click.option("--orbitals", default="core", show_default=True, type=click.Choice(["lowdin", "core"]))
@click.option("--seed", default=0, show_default=True, type=int)
def cmd_single_point(rab, rbc, positions, method, threshold, vqe_depth, orbitals, seed):
    """ED and/or VQE energy at one geometry, printed as JSON."""
    with _Guard():
        pos = _positions(positions, rab, rbc)
        try:
            ham = build_hamiltonian(Geometry(pos), orbitals)
        except ValueError as exc:
            raise ConfigError(f"geometry: {exc}") from None
        record: dict = {"positions": [float(v) for v in pos], "orbitals": orbitals}
        method = method.upper()
        if method in ("ED", "BOTH"):
            record["ed_energy"] = solve_ed(ham).energy
        if method in ("VQE", "BOTH"):
            cfg = SolverConfig("VQE", vqe_depth, threshold, seed)
            res = solve_vqe(ham, cfg)
            record.update(vqe_energy=res.energy, vqe_sweeps=res.iterations, vqe_converged=res.converged)
        if "ed_energy" in record and "vqe_energy" in record:
            record["gap"] = record["vqe_energy"] - record["ed_energy"]
        click.echo(json.dumps(record, sort_keys=True))


@main.command("ensemble")
@_common
@click.option("--paths", "n_paths", type=int, help="Override ensemble.n_paths.")
def cmd_ensemble(config_file, preset, seed, threads, out, count_parity, max_iter, n_paths):
    """Paired CZ / no-CZ runs from perturbed paths; writes ensemble CSVs."""
    with _Guard():
        ov = _overrides(None, threads, count_parity, max_iter)
        if n_paths is not None:
            ov.setdefault("ensemble", {})["n_paths"] = n_paths
        exp = ExperimentConfig.load(config_file, preset, ov)
        cfg = exp.run
        if cfg.solver.method != "ED":
            raise ConfigError("solver.method: ensembles use ED")
        outdir = exp.out_dir(out)
        (outdir / "config.ini").write_text(format_settings(exp.settings))
        ens = exp.settings["ensemble"]
        base_seed = exp.settings["run"]["seed"] if seed is None else seed
        seeds = list(range(base_seed, base_seed + ens["n_paths"]))
        result = run_ensemble(cfg, ens["n_paths"], ens["perturbation"], seeds)
        write_ensemble(outdir, result)
        final = result.summary()
        click.echo(json.dumps({"delta_final": float(final["delta"][-1]), "n_paths": len(seeds)}))


def write_ensemble(outdir: Path, result) -> None:
    stats = result.summary()
    with open(outdir / "ensemble.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENSEMBLE_FIELDS)
        for it in range(result.fbar_cz.shape[1]):
            w.writerow([it] + [num(stats[k][it]) for k in ENSEMBLE_FIELDS[1:]])
    with open(outdir / "ensemble_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENSEMBLE_RUN_FIELDS)
        for arm, data in (("cz", result.fbar_cz), ("none", result.fbar_none)):
            for seed, series in zip(result.seeds, data):
                for it, val in enumerate(series):
                    w.writerow([seed, arm, it, num(val)])


@main.group("ham")
def ham_group():
    """Hamiltonian text files."""


@ham_group.command("export")
@click.option("--rab", type=float)
@click.option("--rbc", type=float)
@click.option("--positions", help="Explicit 1-D atom positions, comma separated.")
@click.option("--orbitals", default="lowdin", show_default=True, type=click.Choice(["lowdin", "core"]))
@click.argument("target", type=click.Path(dir_okay=False))
def cmd_ham_export(rab, rbc, positions, orbitals, target):
    """Build the qubit Hamiltonian at a geometry and write it to TARGET."""
    with _Guard():
        pos = _positions(positions, rab, rbc)
        try:
            ham = build_hamiltonian(Geometry(pos), orbitals)
        except ValueError as exc:
            raise ConfigError(f"geometry: {exc}") from None
        save_hamiltonian(ham, target)
        click.echo(json.dumps({"n_qubits": ham.n_qubits, "n_terms": len(ham.coeffs), "file": str(target)}))


@ham_group.command("import")
@click.argument("source", type=click.Path(dir_okay=False))
def cmd_ham_import(source):
    """Parse a Hamiltonian file and report its ED ground-state energy."""
    with _Guard():
        try:
            ham = load_hamiltonian(source)
        except OSError as exc:
            raise ConfigError(f"file: {exc}") from None
        except HamiltonianFormatError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        record = {"n_qubits": ham.n_qubits, "n_terms": len(ham.coeffs)}
        if ham.n_qubits <= 14:
            record["ed_energy"] = solve_ed(ham).energy
        click.echo(json.dumps(record, sort_keys=True))


if __name__ == "__main__":  # pragma: no cover
    main()
