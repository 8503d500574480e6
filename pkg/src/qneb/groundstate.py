"""Ground-state energies by exact diagonalization or a Rotoselect VQE.

The VQE ansatz is ``depth`` repetitions of one rotation column (one gate per
qubit, axis chosen from Rx/Ry/Rz) followed by a CNOT chain ``m -> m + 1``,
acting on ``|0...0>``. Rotoselect visits the rotation gates in circuit order;
for each gate and each candidate axis the energy is a sinusoid in the angle,
reconstructed from three evaluations at 0 and +-pi/2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from qneb.simulator import (
    Circuit,
    GateOp,
    Observable,
    StateVector,
    rotation_matrix,
    run_circuit,
)

logger = logging.getLogger(__name__)

MAX_ED_QUBITS = 14
AXES = ("Rx", "Ry", "Rz")


@dataclass
class SolverConfig:
    method: str = "ED"
    vqe_depth: int = 5
    convergence_threshold: float = 1e-4
    seed: int = 0
    sector: tuple[int, float] | None = None
    max_sweeps: int = 500

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in ("ED", "VQE"):
            raise ValueError(f"unknown ground-state method {self.method!r}")
        if self.vqe_depth < 1:
            raise ValueError("vqe_depth must be >= 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")

    def fingerprint(self) -> tuple:
        if self.method == "ED":
            return ("ED", self.sector)
        return (
            "VQE",
            self.vqe_depth,
            self.convergence_threshold,
            self.seed,
            self.max_sweeps,
        )


@dataclass
class GroundStateResult:
    energy: float
    iterations: int
    converged: bool
    state: StateVector | None = None
    history: list[float] = field(default_factory=list)


@dataclass
class VqeState:
    """Rotation axes and angles, shape ``(depth, n_qubits)``."""

    n_qubits: int
    axes: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        self.axes = np.asarray(self.axes, dtype=object)
        self.angles = np.asarray(self.angles, dtype=float)
        if self.axes.shape != self.angles.shape or self.axes.ndim != 2:
            raise ValueError("axes and angles must share shape (depth, n_qubits)")
        if self.axes.shape[1] != self.n_qubits:
            raise ValueError("one rotation per qubit per block")
        if not np.all(np.isfinite(self.angles)):
            raise ValueError("angles must be finite")
        if any(ax not in AXES for ax in self.axes.ravel()):
            raise ValueError("rotation axes must be Rx, Ry or Rz")

    @classmethod
    def initial(cls, n_qubits: int, depth: int, seed) -> "VqeState":
        rng = np.random.default_rng(seed)
        angles = rng.uniform(0.0, 0.1, size=(depth, n_qubits))
        axes = np.full((depth, n_qubits), "Rx", dtype=object)
        return cls(n_qubits, axes, angles)

    @property
    def depth(self) -> int:
        return self.axes.shape[0]

    def copy(self) -> "VqeState":
        return VqeState(self.n_qubits, self.axes.copy(), self.angles.copy())

    def circuit(self) -> Circuit:
        n = self.n_qubits
        ops = []
        for b in range(self.depth):
            for q in range(n):
                ops.append(GateOp(self.axes[b, q], q, angle=float(self.angles[b, q])))
            for q in range(n - 1):
                ops.append(GateOp("CNOT", q + 1, control=q))
        return Circuit(n, ops)


# --- exact diagonalization ----------------------------------------------------


def sector_indices(n_qubits: int, n_electrons: int, sz: float) -> np.ndarray:
    """Basis indices with the given electron count and S_z.

    Even qubits are alpha spin orbitals, odd qubits beta (interleaved order).
    """
    idx = np.arange(1 << n_qubits)
    n_alpha = np.zeros_like(idx)
    n_beta = np.zeros_like(idx)
    for q in range(n_qubits):
        bit = (idx >> (n_qubits - 1 - q)) & 1
        if q % 2 == 0:
            n_alpha += bit
        else:
            n_beta += bit
    mask = (n_alpha + n_beta == n_electrons) & np.isclose(0.5 * (n_alpha - n_beta), sz)
    return idx[mask]


def particle_number(state: StateVector) -> float:
    n = state.n_qubits
    counts = np.array([bin(i).count("1") for i in range(1 << n)])
    return float(state.probabilities() @ counts)


def _hamiltonian_matrix(h) -> np.ndarray:
    mat = h.to_matrix() if isinstance(h, Observable) else np.asarray(h)
    if np.max(np.abs(mat.imag), initial=0.0) < 1e-12:
        return mat.real
    return mat


def solve_ed(h: Observable, sector: tuple[int, float] | None = None) -> GroundStateResult:
    if h.n_qubits > MAX_ED_QUBITS:
        raise ValueError(
            f"{h.n_qubits} qubits exceeds the dense diagonalization limit {MAX_ED_QUBITS}"
        )
    mat = _hamiltonian_matrix(h)
    dim = mat.shape[0]
    if sector is None:
        w, v = np.linalg.eigh(mat)
        amps = v[:, 0]
    else:
        sel = sector_indices(h.n_qubits, *sector)
        if sel.size == 0:
            raise ValueError(f"sector {sector} contains no basis states")
        w, v = np.linalg.eigh(mat[np.ix_(sel, sel)])
        amps = np.zeros(dim, dtype=complex)
        amps[sel] = v[:, 0]
    return GroundStateResult(float(w[0]), 0, True, StateVector(amps))


def ed_energies(matrices: np.ndarray, sector_sel: np.ndarray | None = None) -> np.ndarray:
    """Lowest eigenvalue of each matrix in a stack."""
    if sector_sel is not None:
        matrices = matrices[:, sector_sel[:, None], sector_sel[None, :]]
    return np.linalg.eigvalsh(matrices)[:, 0]


# --- Rotoselect VQE -------------------------------------------------------------
#
# The sweep runs on a batch of Hamiltonians at once: every instance visits the
# same gate positions in the same order, only the chosen axes and angles
# differ. At a rotation on qubit q with incoming state split as a_0, a_1 (qubit
# q = 0 or 1), the four vectors |l>_q (x) a_j are pushed through the remaining
# gates W. Then T[k,i,l,j] = <W(k,a_i)| H |W(l,a_j)> and the energy of any
# replacement gate G is sum conj(G_ki) G_lj T[k,i,l,j].

_PAULI_MATS = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)
_AXIS_CODE = {ax: i for i, ax in enumerate(AXES)}
_CHUNK = 128


def _rotations(codes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """``exp(-i angle P / 2)`` for arrays of axis codes; shape ``(..., 2, 2)``."""
    half = np.asarray(angles, dtype=float)[..., None, None] / 2
    return np.cos(half) * np.eye(2) - 1j * np.sin(half) * _PAULI_MATS[codes]


def _candidate_gates() -> np.ndarray:
    """Identity, then each axis at +pi/2 and -pi/2: shape (7, 2, 2)."""
    mats = [np.eye(2, dtype=complex)]
    for ax in AXES:
        mats.append(rotation_matrix(ax, np.pi / 2))
        mats.append(rotation_matrix(ax, -np.pi / 2))
    return np.array(mats)


_CANDIDATES = _candidate_gates()


def _mix(view: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """``out[m, x, a, y] = sum_b mats[m, a, b] view[m, x, b, y]``."""
    if view.shape[-1] > 2:
        return mats[:, None] @ view
    # batched matmul is slow for a tiny trailing axis
    g = mats[:, :, :, None, None]
    v0, v1 = view[:, :, 0], view[:, :, 1]
    return np.stack([g[:, 0, 0] * v0 + g[:, 0, 1] * v1, g[:, 1, 0] * v0 + g[:, 1, 1] * v1], axis=2)


def _on_rows(B: np.ndarray, q: int, n: int, mats: np.ndarray) -> np.ndarray:
    m = B.shape[0]
    return _mix(B.reshape(m, 1 << q, 2, -1), mats).reshape(B.shape)


def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def _layout(n: int, depth: int) -> list:
    """Ansatz gate sequence: ``("rot", block, qubit)`` or ``("cnot", perm)``."""
    seq = []
    for b in range(depth):
        seq.extend(("rot", b, q) for q in range(n))
        seq.extend(("cnot", _cnot_perm(q, q + 1, n)) for q in range(n - 1))
    return seq


def _sinusoid(e0, eplus, eminus):
    """Argmin and min of ``A cos(phi) + B sin(phi) + C`` through the samples at
    0, +pi/2 and -pi/2. Works elementwise on arrays."""
    c = 0.5 * (np.asarray(eplus) + eminus)
    b = 0.5 * (np.asarray(eplus) - eminus)
    a = e0 - c
    phi = np.arctan2(b, a) + np.pi
    phi = (phi + np.pi) % (2 * np.pi) - np.pi
    return phi, c - np.hypot(a, b)


def _prepare(codes: np.ndarray, angles: np.ndarray, n: int, layout) -> np.ndarray:
    """Ansatz states for a batch, shape ``(m, 2**n)``."""
    m = codes.shape[0]
    psi = np.zeros((m, 1 << n), dtype=complex)
    psi[:, 0] = 1.0
    for item in layout:
        if item[0] == "cnot":
            psi = psi[:, item[1]]
        else:
            _, b, q = item
            psi = _on_rows(psi[:, :, None], q, n, _rotations(codes[:, b, q], angles[:, b, q]))[:, :, 0]
    return psi


def _energies(mats: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return np.einsum("mi,mij,mj->m", psi.conj(), mats, psi).real


def _propagate(vecs: np.ndarray, layout, gates: dict, n: int) -> np.ndarray:
    """Apply the gates of ``layout`` to a stack of vectors ``(m, k, 2**n)``."""
    m, k, dim = vecs.shape
    for item in layout:
        if item[0] == "cnot":
            vecs = vecs[:, :, item[1]]
        else:
            _, b, q = item
            vecs = _mix(vecs.reshape(m, k << q, 2, -1), gates[(b, q)]).reshape(m, k, dim)
    return vecs


def _sweep_chunk(mats, codes, angles, n, layout, want_trace):
    m, dim = mats.shape[0], mats.shape[1]
    half = dim // 2
    codes = codes.copy()
    angles = angles.copy()
    gates = {}
    for item in layout:
        if item[0] == "rot":
            _, b, q = item
            gates[(b, q)] = _rotations(codes[:, b, q], angles[:, b, q])
    h_t = np.ascontiguousarray(mats.transpose(0, 2, 1))

    psi = np.zeros((m, dim), dtype=complex)
    psi[:, 0] = 1.0
    trace = []
    for pos, item in enumerate(layout):
        if item[0] == "cnot":
            psi = psi[:, item[1]]
            continue
        _, b, q = item
        left = 1 << q
        rest = half >> q
        # a[:, i] holds the amplitudes with qubit q equal to i
        a = psi.reshape(m, left, 2, rest)
        # u[l, j] = |l>_q (x) a_j, pushed through the rest of the circuit
        u = np.zeros((m, 2, 2, left, 2, rest), dtype=complex)
        u[:, 0, :, :, 0, :] = a.transpose(0, 2, 1, 3)
        u[:, 1, :, :, 1, :] = a.transpose(0, 2, 1, 3)
        v = _propagate(u.reshape(m, 4, dim), layout[pos + 1 :], gates, n)
        T = (v.conj() @ (v @ h_t).transpose(0, 2, 1)).reshape(m, 2, 2, 2, 2)
        cand = np.concatenate(
            [gates[(b, q)][:, None], np.broadcast_to(_CANDIDATES, (m,) + _CANDIDATES.shape)], axis=1
        )
        ev = np.einsum("mgki,mglj,mkilj->mg", cand.conj(), cand, T).real
        best_e = ev[:, 0].copy()
        best_code = codes[:, b, q].copy()
        best_phi = angles[:, b, q].copy()
        for ai in range(len(AXES)):
            phi, emin = _sinusoid(ev[:, 1], ev[:, 2 + 2 * ai], ev[:, 3 + 2 * ai])
            better = emin < best_e - 1e-15
            best_e = np.where(better, emin, best_e)
            best_code = np.where(better, ai, best_code)
            best_phi = np.where(better, phi, best_phi)
        codes[:, b, q] = best_code
        angles[:, b, q] = best_phi
        U = _rotations(best_code, best_phi)
        gates[(b, q)] = U
        if want_trace:
            trace.append(best_e)
        psi = _on_rows(psi[:, :, None], q, n, U)[:, :, 0]
    energy = _energies(mats, psi)
    trace = np.array(trace).T if want_trace else None
    return codes, angles, energy, psi, trace


def _sweep_batch(mats, codes, angles, want_trace=False):
    """One Rotoselect pass for every instance; chunked to bound memory."""
    m, dim = mats.shape[0], mats.shape[1]
    n = dim.bit_length() - 1
    layout = _layout(n, codes.shape[1])
    parts = [
        _sweep_chunk(mats[s : s + _CHUNK], codes[s : s + _CHUNK], angles[s : s + _CHUNK], n, layout, want_trace)
        for s in range(0, m, _CHUNK)
    ]
    out = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    trace = np.concatenate([p[4] for p in parts]) if want_trace else None
    return (*out, trace)


def _codes_of(state: VqeState) -> np.ndarray:
    return np.vectorize(_AXIS_CODE.__getitem__, otypes=[int])(state.axes)


def rotoselect_sweep(state: VqeState, h, *, return_trace: bool = False):
    """One Rotoselect pass over every rotation gate, in circuit order.

    ``h`` is an Observable or a dense Hermitian matrix. Returns the updated
    state and its energy (and, with ``return_trace``, the energy after each
    gate commit).
    """
    mat = _hamiltonian_matrix(h)
    if mat.shape != (1 << state.n_qubits,) * 2:
        raise ValueError("Hamiltonian and ansatz qubit counts differ")
    codes, angles, energy, _, trace = _sweep_batch(
        mat[None], _codes_of(state)[None], state.angles[None], return_trace
    )
    axes = np.array(AXES, dtype=object)[codes[0]]
    new = VqeState(state.n_qubits, axes, angles[0])
    if return_trace:
        return new, float(energy[0]), [float(t) for t in trace[0]]
    return new, float(energy[0])


def solve_vqe_batch(matrices, cfg: SolverConfig | None = None, initial: VqeState | None = None):
    """Rotoselect VQE on a stack of Hamiltonian matrices.

    Each instance starts from the same seeded ansatz and sweeps until two
    consecutive energies differ by less than the convergence threshold or
    ``max_sweeps`` is reached. Converged instances leave the batch, so every
    result equals what a solve of that matrix alone would give.
    """
    cfg = cfg or SolverConfig(method="VQE")
    mats = np.asarray(matrices)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError("expected a stack of square matrices")
    m, dim = mats.shape[0], mats.shape[1]
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise ValueError("matrix dimension must be a power of two")
    start = initial if initial is not None else VqeState.initial(n, cfg.vqe_depth, cfg.seed)
    if start.n_qubits != n:
        raise ValueError("initial ansatz and Hamiltonian qubit counts differ")
    codes = np.repeat(_codes_of(start)[None], m, axis=0)
    angles = np.repeat(start.angles[None], m, axis=0)
    psi = _prepare(codes, angles, n, _layout(n, start.depth))
    prev = _energies(mats, psi)
    history = [[float(e)] for e in prev]
    sweeps = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    active = np.arange(m)
    while active.size:
        c, a, e, p, _ = _sweep_batch(mats[active], codes[active], angles[active])
        codes[active], angles[active], psi[active] = c, a, p
        sweeps[active] += 1
        for i, val in zip(active, e):
            history[i].append(float(val))
        done = np.abs(e - prev[active]) < cfg.convergence_threshold
        converged[active[done]] = True
        prev[active] = e
        active = active[~done & (sweeps[active] < cfg.max_sweeps)]
    if not converged.all():
        logger.warning(
            "VQE did not converge within %d sweeps for %d of %d Hamiltonians",
            cfg.max_sweeps,
            int((~converged).sum()),
            m,
        )
    return [
        GroundStateResult(min(history[i]), int(sweeps[i]), bool(converged[i]), StateVector(psi[i]), history[i])
        for i in range(m)
    ]


def solve_vqe(h, cfg: SolverConfig | None = None, initial: VqeState | None = None) -> GroundStateResult:
    """Rotoselect VQE for one Hamiltonian (see :func:`solve_vqe_batch`)."""
    return solve_vqe_batch(_hamiltonian_matrix(h)[None], cfg, initial)[0]


def solve(h, cfg: SolverConfig) -> GroundStateResult:
    if cfg.method == "ED":
        return solve_ed(h, cfg.sector)
    return solve_vqe(h, cfg)


class GroundStateSolver(BaseEstimator):
    """Estimator wrapper: ``fit(hamiltonian)`` sets ``energy_`` and ``result_``."""

    def __init__(
        self,
        method="ED",
        vqe_depth=5,
        convergence_threshold=1e-4,
        seed=0,
        sector=None,
        max_sweeps=500,
    ):
        self.method = method
        self.vqe_depth = vqe_depth
        self.convergence_threshold = convergence_threshold
        self.seed = seed
        self.sector = sector
        self.max_sweeps = max_sweeps

    def config(self) -> SolverConfig:
        return SolverConfig(**self.get_params())

    def fit(self, hamiltonian, y=None):
        self.result_ = solve(hamiltonian, self.config())
        self.energy_ = self.result_.energy
        self.n_iter_ = self.result_.iterations
        self.converged_ = self.result_.converged
        return self

    def score(self, hamiltonian, y=None):
        """Negative ground-state energy, so that larger is better."""
        return -self.fit(hamiltonian).energy_
