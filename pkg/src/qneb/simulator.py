"""Dense statevector simulation of small circuits.

Qubit ``q`` of an ``n``-qubit register is axis ``q`` of the amplitude tensor
reshaped to ``(2,) * n``, i.e. bit ``n - 1 - q`` of the flat basis index
(qubit 0 is the most significant, matching ``kron(q0, q1, ...)``).

Rotations follow ``R_P(phi) = exp(-i phi P / 2)`` so that
``Ry(phi)|0> = cos(phi/2)|0> + sin(phi/2)|1>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ROTATIONS = ("Rx", "Ry", "Rz")
TWO_QUBIT = ("CZ", "CNOT")
PAULI_LETTERS = "IXYZ"


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c = np.cos(angle / 2.0)
    s = np.sin(angle / 2.0)
    if kind == "Rx":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "Ry":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "Rz":
        return np.array([[c - 1j * s, 0.0], [0.0, c + 1j * s]], dtype=complex)
    raise ValueError(f"unknown rotation kind {kind!r}")


@dataclass(frozen=True)
class GateOp:
    """One gate: a single-qubit rotation or a CZ/CNOT."""

    kind: str
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind in ROTATIONS:
            if self.angle is None:
                raise ValueError(f"{self.kind} gate needs an angle")
            if self.control is not None:
                raise ValueError(f"{self.kind} gate takes no control qubit")
            if not np.isfinite(self.angle):
                raise ValueError("rotation angle must be finite")
        elif self.kind in TWO_QUBIT:
            if self.angle is not None:
                raise ValueError(f"{self.kind} gate takes no angle")
            if self.control is None:
                raise ValueError(f"{self.kind} gate needs a control qubit")
            if self.control == self.target:
                raise ValueError("control and target must differ")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.target < 0 or (self.control is not None and self.control < 0):
            raise IndexError("qubit index must be non-negative")

    @property
    def qubits(self) -> tuple[int, ...]:
        if self.control is None:
            return (self.target,)
        return (self.control, self.target)

    def matrix(self) -> np.ndarray:
        """Dense matrix on the op's own qubits (control first for 2-qubit gates)."""
        if self.kind in ROTATIONS:
            return rotation_matrix(self.kind, self.angle)
        if self.kind == "CZ":
            return np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
        return np.array(
            [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
        )


@dataclass
class Circuit:
    n_qubits: int
    ops: list[GateOp]

    def __post_init__(self):
        self.ops = list(self.ops)
        for op in self.ops:
            _check_indices(op, self.n_qubits)

    def append(self, op: GateOp) -> None:
        _check_indices(op, self.n_qubits)
        self.ops.append(op)

    def extend(self, ops: Iterable[GateOp]) -> None:
        for op in ops:
            self.append(op)

    def __len__(self) -> int:
        return len(self.ops)


def _check_indices(op: GateOp, n_qubits: int) -> None:
    for q in op.qubits:
        if q >= n_qubits:
            raise IndexError(f"qubit {q} out of range for {n_qubits} qubits")


class StateVector:
    """Normalized amplitudes over ``n_qubits`` qubits."""

    def __init__(self, amplitudes, n_qubits: int | None = None):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = int(round(np.log2(amps.size))) if amps.size else -1
        if n < 0 or 2**n != amps.size:
            raise ValueError("amplitude count must be a power of two")
        if n_qubits is not None and n_qubits != n:
            raise ValueError(f"expected {2 ** n_qubits} amplitudes, got {amps.size}")
        self.n_qubits = n
        self.amplitudes = amps

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps, n_qubits)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[int(bits, 2)] = 1.0
        return cls(amps)

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.n_qubits)

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits})"


def apply_op_tensor(psi: np.ndarray, op: GateOp, n: int) -> np.ndarray:
    """Apply ``op`` to a ``(2,) * n`` tensor; returns the new tensor."""
    if op.kind in ROTATIONS:
        m = rotation_matrix(op.kind, op.angle)
        out = np.tensordot(m, psi, axes=([1], [op.target]))
        return np.moveaxis(out, 0, op.target)
    out = psi.copy()
    c, t = op.control, op.target
    idx1 = [slice(None)] * n
    idx1[c] = 1
    if op.kind == "CZ":
        idx1[t] = 1
        out[tuple(idx1)] *= -1.0
        return out
    # CNOT: swap target amplitudes inside the control = 1 block
    a = list(idx1)
    b = list(idx1)
    a[t] = 0
    b[t] = 1
    out[tuple(a)] = psi[tuple(b)]
    out[tuple(b)] = psi[tuple(a)]
    return out


def apply_gate(state: StateVector, op: GateOp) -> StateVector:
    n = state.n_qubits
    _check_indices(op, n)
    psi = state.amplitudes.reshape((2,) * n)
    return StateVector(apply_op_tensor(psi, op, n).reshape(-1), n)


def run_circuit(circuit: Circuit, initial: StateVector | None = None) -> StateVector:
    n = circuit.n_qubits
    if initial is None:
        initial = StateVector.zero(n)
    if initial.n_qubits != n:
        raise ValueError(
            f"circuit acts on {n} qubits but state has {initial.n_qubits}"
        )
    psi = initial.amplitudes.reshape((2,) * n)
    for op in circuit.ops:
        psi = apply_op_tensor(psi, op, n)
    return StateVector(psi.reshape(-1), n)


def zero_probabilities(state: StateVector) -> np.ndarray:
    """Marginal probability of measuring 0 on every qubit."""
    n = state.n_qubits
    probs = state.probabilities().reshape((2,) * n)
    out = np.empty(n)
    for m in range(n):
        axes = tuple(a for a in range(n) if a != m)
        out[m] = probs.sum(axis=axes)[0] if axes else probs[0]
    return out


def prob_zero(state: StateVector, m: int) -> float:
    if not 0 <= m < state.n_qubits:
        raise IndexError(f"qubit {m} out of range for {state.n_qubits} qubits")
    probs = state.probabilities().reshape((2,) * state.n_qubits)
    return float(np.take(probs, 0, axis=m).sum())


# --- Pauli observables -------------------------------------------------------


@dataclass(frozen=True)
class PauliTerm:
    coefficient: float
    letters: str

    def __post_init__(self):
        bad = set(self.letters) - set(PAULI_LETTERS)
        if bad:
            raise ValueError(f"invalid Pauli letters {sorted(bad)}")
        if not np.isfinite(self.coefficient):
            raise ValueError("coefficient must be finite")


def letters_to_masks(letters: str) -> tuple[int, int]:
    n = len(letters)
    x = z = 0
    for q, ch in enumerate(letters):
        bit = 1 << (n - 1 - q)
        if ch in "XY":
            x |= bit
        if ch in "ZY":
            z |= bit
    return x, z


def masks_to_letters(x: int, z: int, n: int) -> str:
    out = []
    for q in range(n):
        bit = 1 << (n - 1 - q)
        out.append("IZXY"[(bool(x & bit) << 1) | bool(z & bit)])
    return "".join(out)


def _popcount(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.int64)
    count = np.zeros_like(arr)
    while np.any(arr):
        count += arr & 1
        arr = arr >> 1
    return count


class Observable:
    """Real-weighted sum of Pauli strings stored as bit masks.

    ``xmask`` marks X/Y positions, ``zmask`` marks Z/Y positions, using the
    flat-index bit of each qubit.
    """

    def __init__(self, n_qubits: int, coeffs, xmask, zmask):
        self.n_qubits = int(n_qubits)
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        self.xmask = np.asarray(xmask, dtype=np.int64).reshape(-1)
        self.zmask = np.asarray(zmask, dtype=np.int64).reshape(-1)
        if not (self.coeffs.size == self.xmask.size == self.zmask.size):
            raise ValueError("coefficient and mask arrays differ in length")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")
        limit = 1 << self.n_qubits
        if np.any(self.xmask >= limit) or np.any(self.zmask >= limit):
            raise ValueError("Pauli mask exceeds qubit count")
        self._ny = _popcount(self.xmask & self.zmask)

    @classmethod
    def from_terms(cls, terms: Sequence[PauliTerm], n_qubits: int | None = None):
        terms = list(terms)
        if n_qubits is None:
            if not terms:
                raise ValueError("cannot infer qubit count from zero terms")
            n_qubits = len(terms[0].letters)
        xs, zs, cs = [], [], []
        for t in terms:
            if len(t.letters) != n_qubits:
                raise ValueError("all terms must share one qubit count")
            x, z = letters_to_masks(t.letters)
            xs.append(x)
            zs.append(z)
            cs.append(t.coefficient)
        return cls(n_qubits, cs, xs, zs)

    @property
    def terms(self) -> list[PauliTerm]:
        return [
            PauliTerm(float(c), masks_to_letters(int(x), int(z), self.n_qubits))
            for c, x, z in zip(self.coeffs, self.xmask, self.zmask)
        ]

    def __len__(self) -> int:
        return self.coeffs.size

    def simplify(self, atol: float = 1e-12) -> "Observable":
        """Merge like terms and drop those with ``|c| < atol``."""
        keys = self.xmask * (1 << self.n_qubits) + self.zmask
        uniq, inv = np.unique(keys, return_inverse=True)
        coeffs = np.bincount(inv, weights=self.coeffs, minlength=uniq.size)
        keep = np.abs(coeffs) >= atol
        uniq = uniq[keep]
        return Observable(
            self.n_qubits,
            coeffs[keep],
            uniq >> self.n_qubits,
            uniq & ((1 << self.n_qubits) - 1),
        )

    def _phases(self, basis: np.ndarray) -> np.ndarray:
        # P|b> = i^{nY} (-1)^{popcount(b & z)} |b ^ x>
        sign = 1 - 2 * (_popcount(basis[None, :] & self.zmask[:, None]) & 1)
        return (1j ** (self._ny % 4))[:, None] * sign

    def to_matrix(self) -> np.ndarray:
        dim = 1 << self.n_qubits
        basis = np.arange(dim, dtype=np.int64)
        vals = self.coeffs[:, None] * self._phases(basis)
        rows = basis[None, :] ^ self.xmask[:, None]
        flat = (rows * dim + basis[None, :]).reshape(-1)
        vals = vals.reshape(-1)
        re = np.bincount(flat, weights=vals.real, minlength=dim * dim)
        im = np.bincount(flat, weights=vals.imag, minlength=dim * dim)
        return (re + 1j * im).reshape(dim, dim)

    def __repr__(self) -> str:
        return f"Observable(n_qubits={self.n_qubits}, n_terms={len(self)})"


def expectation(state: StateVector, obs: Observable) -> float:
    if state.n_qubits != obs.n_qubits:
        raise ValueError(
            f"state has {state.n_qubits} qubits, observable {obs.n_qubits}"
        )
    psi = state.amplitudes
    basis = np.arange(psi.size, dtype=np.int64)
    flipped = psi[basis[None, :] ^ obs.xmask[:, None]]
    per_term = np.sum(np.conj(flipped) * obs._phases(basis) * psi[None, :], axis=1)
    value = complex(np.dot(obs.coeffs, per_term))
    if abs(value.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary part {value.imag:.3e}")
    return value.real
