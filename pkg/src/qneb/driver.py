"""Outer optimization loop: path generation -> energies -> NEB forces -> Adam.

One iteration evaluates the evaluation value at ``theta`` and at
``theta +- delta e_k`` for every generator parameter, forms the central
difference gradient, and takes one Adam step. All ``2P + 1`` paths of an
iteration are decoded first so their ground-state solves can be batched.
"""

from __future__ import annotations

import copy
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from qneb.groundstate import SolverConfig, ed_energies, sector_indices, solve_vqe_batch
from qneb.hamiltonian import DenseHamiltonianBuilder
from qneb.neb import NebParams, NebReport, assemble, central_difference, probe_points
from qneb.pathcircuit import (
    GeneratorConfig,
    OrderingViolation,
    PathGenerator,
    PathSpec,
    initial_path,
)

logger = logging.getLogger(__name__)

REFERENCE_ELECTRONS = 3


@dataclass
class AdamParams:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta, gradient, state: AdamState, params: AdamParams | None = None):
    params = params or AdamParams()
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(gradient, dtype=float)
    if not (theta.shape == g.shape == state.m.shape):
        raise ValueError("theta, gradient and Adam moments must have equal length")
    t = state.t + 1
    m = params.beta1 * state.m + (1.0 - params.beta1) * g
    v = params.beta2 * state.v + (1.0 - params.beta2) * g * g
    m_hat = m / (1.0 - params.beta1**t)
    v_hat = v / (1.0 - params.beta2**t)
    new = theta - params.learning_rate * m_hat / (np.sqrt(v_hat) + params.eps)
    return new, AdamState(m, v, t)


@dataclass
class RunConfig:
    path: PathSpec = None
    generator: GeneratorConfig = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    neb: NebParams = field(default_factory=NebParams)
    theta_step: float = 0.001
    adam: AdamParams = field(default_factory=AdamParams)
    max_iterations: int = 100
    cache_enabled: bool = True
    count_parity: bool = False
    orbitals: str = "lowdin"
    seed: int = 0
    saddle_energy: float | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.path is None:
            self.path = initial_path(3)
        if self.generator is None:
            self.generator = GeneratorConfig(np.zeros(0))
        if not self.theta_step > 0:
            raise ValueError("theta_step must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


class EnergyCache:
    """Energies keyed by (positions, solver fingerprint).

    With a ``resolution`` the positions are rounded to that grid in Angstrom;
    with ``None`` the key is the exact float64 bytes.
    """

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(positions, fingerprint, resolution: float | None = 1e-9) -> tuple:
        pos = np.asarray(positions, dtype=float)
        if resolution is None:
            return (pos.tobytes(), fingerprint)
        q = np.rint(pos / resolution).astype(np.int64)
        return (tuple(q.ravel()), fingerprint)

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value: float) -> None:
        with self._lock:
            self._store[key] = value

    def __len__(self) -> int:
        return len(self._store)


class EnergyOracle:
    """Ground-state energies of 1-D hydrogen chains given absolute positions."""

    def __init__(
        self,
        solver: SolverConfig,
        n_atoms: int = 3,
        orbitals: str = "lowdin",
        cache: EnergyCache | None = None,
        n_jobs: int = 1,
    ):
        self.solver = solver
        self.builder = DenseHamiltonianBuilder(n_atoms, orbitals)
        self.cache = cache
        self.n_jobs = n_jobs
        self.solve_count = 0
        self.unconverged = 0
        self._fingerprint = solver.fingerprint() + (orbitals,)
        # Generator shifts can move a row by less than 1e-9 Angstrom, and a
        # rounded key would then return a neighbour's energy (~1e-11 in the
        # evaluation value). Exact keys keep ED runs bitwise equal to
        # uncached ones; VQE noise dwarfs the rounding, so the grid stays.
        self._resolution = None if solver.method == "ED" else 1e-9
        self._electron_counts = np.array(
            [bin(i).count("1") for i in range(self.builder.dim)], dtype=float
        )
        self._sector = None
        if solver.sector is not None:
            self._sector = sector_indices(2 * n_atoms, *solver.sector)

    def _solve(self, positions: np.ndarray) -> np.ndarray:
        mats = self.builder.matrices(positions)
        self.solve_count += len(positions)
        if self.solver.method == "ED":
            if self._sector is not None:
                return ed_energies(mats, self._sector)
            w, v = np.linalg.eigh(mats)
            n_el = np.einsum("mi,i->m", np.abs(v[:, :, 0]) ** 2, self._electron_counts)
            bad = np.abs(n_el - REFERENCE_ELECTRONS) > 1e-6
            if np.any(bad):
                logger.warning(
                    "full-space ground state has %.6f electrons at %s",
                    n_el[bad][0],
                    positions[bad][0],
                )
            return w[:, 0]

        if self.n_jobs > 1 and len(mats) > 1:
            # instances are independent, so splitting keeps results identical
            parts = np.array_split(np.arange(len(mats)), self.n_jobs)
            with ThreadPoolExecutor(self.n_jobs) as pool:
                chunks = pool.map(lambda idx: solve_vqe_batch(mats[idx], self.solver), parts)
            results = [r for chunk in chunks for r in chunk]
        else:
            results = solve_vqe_batch(mats, self.solver)
        self.unconverged += sum(not r.converged for r in results)
        return np.array([r.energy for r in results])

    def energies(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        if self.cache is None:
            return self._solve(pos)
        out = np.empty(len(pos))
        keys = [EnergyCache.key(p, self._fingerprint, self._resolution) for p in pos]
        todo: dict = {}
        for i, k in enumerate(keys):
            hit = self.cache.get(k)
            if hit is None:
                todo.setdefault(k, []).append(i)
            else:
                out[i] = hit
        if todo:
            first = [idx[0] for idx in todo.values()]
            vals = self._solve(pos[first])
            for (k, idx), val in zip(todo.items(), vals):
                self.cache.put(k, float(val))
                out[idx] = val
        return out

    def __call__(self, rc) -> float:
        """Energy at one reaction-coordinate vector (first atom at 0)."""
        return float(self.energies(rc_to_positions(np.atleast_2d(rc)))[0])


def rc_to_positions(rc: np.ndarray) -> np.ndarray:
    rc = np.asarray(rc, dtype=float)
    return np.concatenate([np.zeros(rc.shape[:-1] + (1,)), np.cumsum(rc, axis=-1)], axis=-1)


class DecodeAbort(RuntimeError):
    """Path decoding failed at some theta; carries the partial trajectory."""

    def __init__(self, message, theta=None, trajectory=None):
        super().__init__(message)
        self.theta = theta
        self.trajectory = trajectory


def make_oracle(cfg: RunConfig) -> EnergyOracle:
    cache = EnergyCache() if (cfg.cache_enabled and not cfg.count_parity) else None
    return EnergyOracle(cfg.solver, cfg.path.n_atom, cfg.orbitals, cache, cfg.n_jobs)


def _generator(cfg: RunConfig) -> PathGenerator:
    return PathGenerator(cfg.generator.depth, cfg.generator.entanglers).fit(cfg.path)


def _decode(gen: PathGenerator, theta) -> PathSpec:
    try:
        return gen.generate(theta)
    except OrderingViolation as exc:
        raise DecodeAbort(f"{exc} (theta attached)", theta=np.array(theta)) from exc


def _fbar_many(paths: list[PathSpec], oracle: EnergyOracle, cfg: RunConfig) -> list[NebReport]:
    """Evaluation values for several decoded paths with one batched solve."""
    step = cfg.neb.coord_step
    geoms = []
    layout = []
    for path in paths:
        rc = path.reaction_coordinates()
        n_rows, dim = rc.shape
        grad_rows = range(n_rows) if cfg.count_parity else range(1, n_rows - 1)
        start = len(geoms)
        geoms.extend(rc)
        probes = {}
        for r in grad_rows:
            probes[r] = len(geoms)
            geoms.extend(probe_points(rc[r], step))
        layout.append((rc, start, probes))
    energies = oracle.energies(rc_to_positions(np.array(geoms)))

    reports = []
    for rc, start, probes in layout:
        n_rows, dim = rc.shape
        E = energies[start : start + n_rows]
        grads = [None] * n_rows
        for r, off in probes.items():
            grads[r] = central_difference(energies[off : off + 2 * dim], step)
        report = assemble(rc, E, grads, cfg.neb)
        if cfg.saddle_energy is not None:
            report.delta_saddle = abs(report.activation_energy - cfg.saddle_energy)
        reports.append(report)
    return reports


def evaluate_fbar(theta, cfg: RunConfig, oracle: EnergyOracle | None = None):
    """Returns ``(fbar, report, solve_count)`` for one parameter vector."""
    oracle = oracle or make_oracle(cfg)
    gen = _generator(cfg)
    before = oracle.solve_count
    report = _fbar_many([_decode(gen, theta)], oracle, cfg)[0]
    return report.fbar, report, oracle.solve_count - before


def _shifted_thetas(theta: np.ndarray, delta: float) -> np.ndarray:
    eye = np.eye(theta.size) * delta
    return np.concatenate([theta[None], theta + eye, theta - eye])


def grad_theta_fbar(theta, cfg: RunConfig, oracle: EnergyOracle | None = None) -> np.ndarray:
    oracle = oracle or make_oracle(cfg)
    gen = _generator(cfg)
    theta = np.asarray(theta, dtype=float)
    shifted = _shifted_thetas(theta, cfg.theta_step)[1:]
    reports = _fbar_many([_decode(gen, t) for t in shifted], oracle, cfg)
    return central_difference([r.fbar for r in reports], cfg.theta_step)


@dataclass
class IterationRecord:
    iteration: int
    fbar: float
    reaction_coordinates: np.ndarray
    energies: np.ndarray
    activation_energy: float
    solves: int
    delta_saddle: float | None = None


@dataclass
class RunTrajectory:
    records: list[IterationRecord] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    final_report: NebReport | None = None
    final_path: PathSpec | None = None
    final_theta: np.ndarray | None = None

    @property
    def fbars(self) -> np.ndarray:
        return np.array([r.fbar for r in self.records])


def _initial_theta(cfg: RunConfig, gen: PathGenerator) -> np.ndarray:
    theta = np.asarray(cfg.generator.theta, dtype=float).reshape(-1)
    if theta.size == 0:
        return np.zeros(gen.n_params_)
    if theta.size != gen.n_params_:
        raise ValueError(f"initial theta has {theta.size} entries, need {gen.n_params_}")
    return theta.copy()


def optimize(cfg: RunConfig, oracle: EnergyOracle | None = None, callback=None) -> RunTrajectory:
    """Run ``max_iterations`` Adam steps on the evaluation value."""
    oracle = oracle or make_oracle(cfg)
    gen = _generator(cfg)
    theta = _initial_theta(cfg, gen)
    adam = AdamState.zeros(theta.size)
    traj = RunTrajectory()
    delta = cfg.theta_step
    for it in range(cfg.max_iterations):
        before = oracle.solve_count
        batch = _shifted_thetas(theta, delta)
        try:
            paths = [_decode(gen, t) for t in batch]
        except DecodeAbort as exc:
            exc.trajectory = traj
            raise
        reports = _fbar_many(paths, oracle, cfg)
        base = reports[0]
        grad = central_difference([r.fbar for r in reports[1:]], delta)
        rec = IterationRecord(
            iteration=it,
            fbar=base.fbar,
            reaction_coordinates=paths[0].reaction_coordinates(),
            energies=base.energies,
            activation_energy=base.activation_energy,
            solves=oracle.solve_count - before,
            delta_saddle=base.delta_saddle,
        )
        traj.records.append(rec)
        traj.thetas.append(theta.copy())
        if callback is not None:
            callback(rec)
        logger.info("iter %d  fbar %.6f  E_a %.6f  solves %d", it, rec.fbar, rec.activation_energy, rec.solves)
        theta, adam = adam_update(theta, grad, adam, cfg.adam)
    try:
        final_path = _decode(gen, theta)
    except DecodeAbort as exc:
        exc.trajectory = traj
        raise
    traj.final_report = _fbar_many([final_path], oracle, cfg)[0]
    traj.final_path = final_path
    traj.final_theta = theta
    return traj


# --- ensembles -------------------------------------------------------------


def perturb_path(path: PathSpec, rng: np.random.Generator, amplitude: float = 0.1) -> PathSpec:
    """Add uniform [-amplitude, amplitude) noise to every image's reaction
    coordinates; IS and FS rows are untouched."""
    rc = path.reaction_coordinates()
    noise = rng.uniform(-amplitude, amplitude, size=rc[1:-1].shape)
    rc = rc.copy()
    rc[1:-1] += noise
    return PathSpec.from_reaction_coordinates(rc, r_ref=path.r_ref)


@dataclass
class EnsembleResult:
    seeds: list[int]
    fbar_cz: np.ndarray  # (n_paths, n_iter)
    fbar_none: np.ndarray
    initial_paths: list[PathSpec]

    @property
    def delta(self) -> np.ndarray:
        """Mean over paths of F(None) - F(CZ) per iteration."""
        return np.mean(self.fbar_none - self.fbar_cz, axis=0)

    @property
    def delta_std(self) -> np.ndarray:
        return np.std(self.fbar_none - self.fbar_cz, axis=0)

    def summary(self) -> dict:
        return {
            "mean_cz": self.fbar_cz.mean(axis=0),
            "std_cz": self.fbar_cz.std(axis=0),
            "mean_none": self.fbar_none.mean(axis=0),
            "std_none": self.fbar_none.std(axis=0),
            "delta": self.delta,
            "delta_std": self.delta_std,
        }


def run_ensemble(
    base: RunConfig,
    n_paths: int = 10,
    perturbation: float = 0.1,
    seeds=None,
    callback=None,
) -> EnsembleResult:
    """Paired runs with and without CZ entanglers from shared perturbed paths."""
    if base.solver.method != "ED":
        raise ValueError("ensemble studies use the ED solver")
    seeds = list(range(n_paths)) if seeds is None else list(seeds)
    runs = {True: [], False: []}
    starts = []
    cache = EnergyCache() if (base.cache_enabled and not base.count_parity) else None
    for seed in seeds:
        path = perturb_path(base.path, np.random.default_rng(seed), perturbation)
        starts.append(path)
        for ent in (True, False):
            cfg = copy.deepcopy(base)
            cfg.path = path
            cfg.generator = GeneratorConfig(np.zeros(0), base.generator.depth, ent)
            oracle = EnergyOracle(cfg.solver, path.n_atom, cfg.orbitals, cache, cfg.n_jobs)
            traj = optimize(cfg, oracle)
            # iterations 0..max_iterations, the last after the final update
            runs[ent].append(np.append(traj.fbars, traj.final_report.fbar))
            if callback is not None:
                callback(seed, ent, traj)
    return EnsembleResult(seeds, np.array(runs[True]), np.array(runs[False]), starts)


# --- references ---------------------------------------------------------------


def exact_saddle(
    is_rc=(0.73, 2.50),
    solver: SolverConfig | None = None,
    orbitals: str = "lowdin",
    bounds=(0.6, 1.4),
) -> tuple[float, float]:
    """Symmetric-stretch saddle of the collinear H3 surface.

    Minimizes the energy along ``R_AB = R_BC`` and returns
    ``(R_saddle, E_saddle - E_IS)`` in Angstrom and Hartree.
    """
    oracle = EnergyOracle(solver or SolverConfig(), 3, orbitals)
    res = minimize_scalar(lambda d: oracle([d, d]), bounds=bounds, method="bounded", options={"xatol": 1e-6})
    return float(res.x), float(res.fun - oracle(list(is_rc)))


class QuantumNEB(BaseEstimator):
    """Reaction-path optimizer with a quantum-circuit path generator.

    ``fit(path)`` runs the full loop. Fitted attributes: ``theta_``,
    ``trajectory_``, ``path_`` (optimized path), ``fbar_``,
    ``activation_energy_`` and ``report_`` (final NEB report).
    """

    def __init__(
        self,
        method="ED",
        depth=2,
        entanglers=True,
        spring_constant=0.1,
        coord_step=0.1,
        theta_step=0.001,
        learning_rate=0.01,
        max_iter=100,
        vqe_depth=5,
        vqe_threshold=1e-4,
        orbitals="lowdin",
        seed=0,
        cache=True,
        count_parity=False,
        saddle_energy=None,
        n_jobs=1,
    ):
        self.method = method
        self.depth = depth
        self.entanglers = entanglers
        self.spring_constant = spring_constant
        self.coord_step = coord_step
        self.theta_step = theta_step
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.vqe_depth = vqe_depth
        self.vqe_threshold = vqe_threshold
        self.orbitals = orbitals
        self.seed = seed
        self.cache = cache
        self.count_parity = count_parity
        self.saddle_energy = saddle_energy
        self.n_jobs = n_jobs

    def run_config(self, path: PathSpec) -> RunConfig:
        return RunConfig(
            path=path,
            generator=GeneratorConfig(np.zeros(0), self.depth, self.entanglers),
            solver=SolverConfig(
                method=self.method,
                vqe_depth=self.vqe_depth,
                convergence_threshold=self.vqe_threshold,
                seed=self.seed,
            ),
            neb=NebParams(self.spring_constant, self.coord_step),
            theta_step=self.theta_step,
            adam=AdamParams(self.learning_rate),
            max_iterations=self.max_iter,
            cache_enabled=self.cache,
            count_parity=self.count_parity,
            orbitals=self.orbitals,
            seed=self.seed,
            saddle_energy=self.saddle_energy,
            n_jobs=self.n_jobs,
        )

    def fit(self, X: PathSpec | None = None, y=None, callback=None):
        path = initial_path(3) if X is None else X
        if not isinstance(path, PathSpec):
            raise TypeError("QuantumNEB.fit expects a PathSpec")
        self.config_ = self.run_config(path)
        self.trajectory_ = optimize(self.config_, callback=callback)
        self.theta_ = self.trajectory_.final_theta
        self.path_ = self.trajectory_.final_path
        self.report_ = self.trajectory_.final_report
        self.fbar_ = self.report_.fbar
        self.activation_energy_ = self.report_.activation_energy
        self.n_iter_ = len(self.trajectory_.records)
        return self

    def transform(self, X: PathSpec) -> PathSpec:
        """Push ``X`` through the fitted generator."""
        gen = PathGenerator(self.depth, self.entanglers).fit(X)
        return gen.generate(self.theta_)
