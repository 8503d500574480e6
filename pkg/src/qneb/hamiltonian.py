"""Minimal-basis qubit Hamiltonians for linear hydrogen chains.

Pipeline: STO-3G integrals over s-type Gaussians -> orthonormal orbitals
(Loewdin by default) -> second-quantized operator -> Jordan-Wigner Pauli sum.

Conventions
-----------
* Lengths at every interface are in Angstrom; integrals are evaluated in Bohr.
* Energies are in Hartree.
* Two-electron integrals use chemists' notation ``g[p, q, r, s] = (pq|rs)``.
* Spin orbitals are interleaved: spin orbital ``2 * p + s`` is spatial orbital
  ``p`` with spin ``s`` (0 = alpha, 1 = beta), and maps to qubit ``2 * p + s``.
  Qubit state ``|1>`` means occupied; Z strings run over lower qubit indices.
"""

from __future__ import annotations

import functools
import itertools
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import erf

from qneb.simulator import Observable, PauliTerm, masks_to_letters

BOHR_IN_ANGSTROM = 0.52917721067


class HamiltonianFormatError(ValueError):
    pass


@dataclass(frozen=True)
class BasisShell:
    element: str
    shell: str
    exponents: np.ndarray
    coefficients: np.ndarray


def load_basis(path=None) -> BasisShell:
    """Read a one-shell basis file: header ``<element> <shell>``, then
    ``exponent coefficient`` per primitive."""
    if path is None:
        text = resources.files("qneb").joinpath("data/sto-3g_h.txt").read_text()
    else:
        text = Path(path).read_text()
    header = None
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            header = line.split()
            if len(header) != 2:
                raise ValueError(f"bad basis header {line!r}")
            continue
        exp, coef = (float(v) for v in line.split())
        rows.append((exp, coef))
    if header is None or not rows:
        raise ValueError("basis file has no primitives")
    arr = np.array(rows)
    return BasisShell(header[0], header[1], arr[:, 0], arr[:, 1])


@functools.lru_cache(maxsize=1)
def sto3g_hydrogen() -> BasisShell:
    return load_basis()


# --- geometry and integrals ---------------------------------------------------


@dataclass
class Geometry:
    """Atom positions in Angstrom; 1-D coordinates or ``(n_atoms, 3)``."""

    positions: np.ndarray
    charges: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[1] > 3:
            raise ValueError("positions must be 1-D or (n_atoms, <=3)")
        self.positions = np.pad(pos, ((0, 0), (0, 3 - pos.shape[1])))
        if self.charges is None:
            self.charges = np.ones(len(self.positions))
        self.charges = np.asarray(self.charges, dtype=float)
        if self.charges.shape != (len(self.positions),):
            raise ValueError("one charge per atom required")
        check_no_coincident(self.positions)

    @property
    def n_atoms(self) -> int:
        return len(self.positions)


def check_no_coincident(positions: np.ndarray, tol: float = 1e-6) -> None:
    pos = np.asarray(positions, dtype=float)
    for i, j in itertools.combinations(range(len(pos)), 2):
        if np.linalg.norm(pos[i] - pos[j]) <= tol:
            raise ValueError(f"atoms {i} and {j} coincide")


@dataclass
class IntegralSet:
    one_body: np.ndarray
    two_body: np.ndarray
    overlap: np.ndarray
    nuclear_repulsion: float
    kinetic: np.ndarray = field(default=None, repr=False)
    nuclear_attraction: np.ndarray = field(default=None, repr=False)

    @property
    def n_orbitals(self) -> int:
        return self.one_body.shape[0]


def boys_f0(t):
    """Zeroth-order Boys function ``F0(t) = int_0^1 exp(-t u^2) du``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("Boys function argument must be non-negative")
    small = t_arr < 1e-6
    safe = np.where(small, 1.0, t_arr)
    big = 0.5 * np.sqrt(np.pi / safe) * erf(np.sqrt(safe))
    series = 1.0 - t_arr / 3.0 + t_arr**2 / 10.0 - t_arr**3 / 42.0
    out = np.where(small, series, big)
    return float(out) if np.ndim(t) == 0 else out


@functools.lru_cache(maxsize=8)
def _primitive_pairs(n: int, k: int):
    """Unique primitive pairs (a <= b) over ``n`` atoms with ``k`` primitives.

    Returns atom/primitive indices of both members and the 0/1 matrix folding
    pair values back onto contracted AO pairs ``mu * n + nu``.
    """
    a_idx, b_idx = np.triu_indices(n * k)
    fold = np.zeros((n * n, a_idx.size))
    for u, (a, b) in enumerate(zip(a_idx, b_idx)):
        mu, nu = a // k, b // k
        fold[mu * n + nu, u] += 1.0
        if a != b:
            fold[nu * n + mu, u] += 1.0
    return a_idx // k, a_idx % k, b_idx // k, b_idx % k, fold


def _integrals_batch(pos_bohr: np.ndarray, charges: np.ndarray, basis: BasisShell):
    """Integrals for a batch of geometries, ``pos_bohr`` of shape (m, n, 3).

    Returns S, T, V, ERI, E_nuc with a leading batch axis. Work is done over
    unique primitive pairs and folded onto AO pairs at the end.
    """
    m, n, _ = pos_bohr.shape
    a = basis.exponents
    k = a.size
    c = basis.coefficients * (2.0 * a / np.pi) ** 0.75
    # published coefficients carry 8 digits; renormalize the contraction
    c = c / np.sqrt(np.sum(np.outer(c, c) * (np.pi / np.add.outer(a, a)) ** 1.5))
    mu, i, nu, j = _primitive_pairs(n, k)[:4]
    fold = _primitive_pairs(n, k)[4]

    ai, aj = a[i], a[j]
    p = ai + aj
    red = ai * aj / p
    cc = c[i] * c[j]
    A = pos_bohr[:, mu]
    B = pos_bohr[:, nu]
    r2 = np.sum((A - B) ** 2, axis=-1)  # (m, pairs)
    kab = np.exp(-red * r2)
    ov = cc * (np.pi / p) ** 1.5 * kab
    P = (ai[:, None] * A + aj[:, None] * B) / p[:, None]  # (m, pairs, 3)

    def to_ao(vals):
        return (vals @ fold.T).reshape(m, n, n)

    S = to_ao(ov)
    T = to_ao(ov * red * (3.0 - 2.0 * red * r2))
    v = np.zeros_like(ov)
    for C in range(n):
        pc2 = np.sum((P - pos_bohr[:, C, None, :]) ** 2, axis=-1)
        v -= charges[C] * cc * 2.0 * np.pi / p * kab * boys_f0(p * pc2)
    V = to_ao(v)

    pp = p[:, None] * p[None, :]
    ps = p[:, None] + p[None, :]
    rho = pp / ps
    pref = 2.0 * np.pi**2.5 / (pp * np.sqrt(ps))
    sq = np.sum(P**2, axis=-1)
    pq2 = sq[:, :, None] + sq[:, None, :] - 2.0 * P @ np.swapaxes(P, 1, 2)
    np.maximum(pq2, 0.0, out=pq2)
    w = cc * kab
    prim = w[:, :, None] * w[:, None, :] * pref * boys_f0(rho * pq2)
    eri = (fold @ prim @ fold.T).reshape(m, n, n, n, n)

    iu, ju = np.triu_indices(n, 1)
    dist = np.sqrt(np.sum((pos_bohr[:, iu] - pos_bohr[:, ju]) ** 2, axis=-1))
    e_nuc = np.sum(charges[iu] * charges[ju] / dist, axis=-1)
    return S, T, V, eri, e_nuc


def compute_integrals(geometry: Geometry, basis: BasisShell | None = None) -> IntegralSet:
    """AO-basis integrals with one contracted 1s function per atom."""
    if not isinstance(geometry, Geometry):
        geometry = Geometry(geometry)
    basis = basis or sto3g_hydrogen()
    pos = geometry.positions[None] / BOHR_IN_ANGSTROM
    S, T, V, eri, e_nuc = _integrals_batch(pos, geometry.charges, basis)
    return IntegralSet(
        one_body=T[0] + V[0],
        two_body=eri[0],
        overlap=S[0],
        nuclear_repulsion=float(e_nuc[0]),
        kinetic=T[0],
        nuclear_attraction=V[0],
    )


def _inv_sqrt(S: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(S)
    if np.min(w) <= 1e-10:
        raise ValueError(
            f"overlap matrix is not positive definite (min eigenvalue {np.min(w):.3e});"
            " atoms are nearly coincident"
        )
    return (U / np.sqrt(w)[..., None, :]) @ np.swapaxes(U, -1, -2)


def _transform(h, g, C):
    h2 = np.swapaxes(C, -1, -2) @ h @ C
    g2 = np.einsum("...pi,...qj,...rk,...sl,...pqrs->...ijkl", C, C, C, C, g, optimize=True)
    return h2, g2


def orthogonalize(integrals: IntegralSet, orbitals: str = "lowdin") -> IntegralSet:
    """Transform to an orthonormal orbital basis.

    ``"lowdin"`` uses ``S^(-1/2)``; ``"core"`` additionally rotates to the
    eigenbasis of the one-body matrix (ascending orbital energy).
    """
    X = _inv_sqrt(integrals.overlap)
    if orbitals == "core":
        _, U = np.linalg.eigh(X @ integrals.one_body @ X)
        X = X @ U
    elif orbitals != "lowdin":
        raise ValueError(f"unknown orbital choice {orbitals!r}")
    h, g = _transform(integrals.one_body, integrals.two_body, X)
    return IntegralSet(
        one_body=0.5 * (h + h.T),
        two_body=g,
        overlap=np.eye(integrals.n_orbitals),
        nuclear_repulsion=integrals.nuclear_repulsion,
    )


# --- Jordan-Wigner -------------------------------------------------------------
# Operators are held in "XZ form": O(x, z) = X^x Z^z with X factors to the left,
# so O(x1, z1) O(x2, z2) = (-1)^{|z1 & x2|} O(x1 ^ x2, z1 ^ z2).


def _ladder(j: int, n: int, dagger: bool) -> dict:
    bit = 1 << (n - 1 - j)
    low = 0
    for q in range(j):
        low |= 1 << (n - 1 - q)
    sign = 0.5 if dagger else -0.5
    return {(bit, low): 0.5, (bit, low | bit): sign}


def _mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for (x1, z1), c1 in a.items():
        for (x2, z2), c2 in b.items():
            sign = -1.0 if bin(z1 & x2).count("1") % 2 else 1.0
            key = (x1 ^ x2, z1 ^ z2)
            out[key] = out.get(key, 0.0) + sign * c1 * c2
    return out


@functools.lru_cache(maxsize=8)
def _jw_map(n_spatial: int):
    """Linear map from (1, vec(h), vec(g)) to Pauli coefficients.

    Returns (xmask, zmask, M) with M complex of shape (n_paulis, 1 + n^2 + n^4).
    """
    n = n_spatial
    nq = 2 * n
    up = [_ladder(j, nq, True) for j in range(nq)]
    dn = [_ladder(j, nq, False) for j in range(nq)]
    n_feat = 1 + n**2 + n**4
    acc: dict = {}

    def add(op: dict, feat: int, scale: float):
        for key, val in op.items():
            row = acc.setdefault(key, {})
            row[feat] = row.get(feat, 0.0) + scale * val

    add({(0, 0): 1.0}, 0, 1.0)
    for p, q in itertools.product(range(n), repeat=2):
        feat = 1 + p * n + q
        for s in range(2):
            add(_mul(up[2 * p + s], dn[2 * q + s]), feat, 1.0)
    for p, q, r, s in itertools.product(range(n), repeat=4):
        feat = 1 + n**2 + ((p * n + q) * n + r) * n + s
        for sa, sb in itertools.product(range(2), repeat=2):
            i, j, k, l = 2 * p + sa, 2 * r + sb, 2 * s + sb, 2 * q + sa
            if i == j or k == l:
                continue
            op = _mul(_mul(up[i], up[j]), _mul(dn[k], dn[l]))
            add(op, feat, 0.5)

    keys = sorted(acc)
    M = np.zeros((len(keys), n_feat), dtype=complex)
    for row, key in enumerate(keys):
        x, z = key
        # X^x Z^z = (-i)^{#Y} * (standard Pauli string with Y where x & z)
        phase = (-1j) ** bin(x & z).count("1")
        for feat, val in acc[key].items():
            M[row, feat] = phase * val
    xs = np.array([k[0] for k in keys], dtype=np.int64)
    zs = np.array([k[1] for k in keys], dtype=np.int64)
    return xs, zs, M


def _features(h: np.ndarray, g: np.ndarray, e_nuc) -> np.ndarray:
    h = np.asarray(h)
    g = np.asarray(g)
    lead = h.shape[:-2]
    const = np.broadcast_to(np.asarray(e_nuc, dtype=float), lead)[..., None]
    return np.concatenate(
        [const, h.reshape(lead + (-1,)), g.reshape(lead + (-1,))], axis=-1
    )


class QubitHamiltonian(Observable):
    """Pauli-sum Hamiltonian; coefficients in Hartree."""

    @classmethod
    def from_observable(cls, obs: Observable) -> "QubitHamiltonian":
        return cls(obs.n_qubits, obs.coeffs, obs.xmask, obs.zmask)

    @property
    def constant(self) -> float:
        ident = (self.xmask == 0) & (self.zmask == 0)
        return float(self.coeffs[ident].sum())

    def simplify(self, atol: float = 1e-12) -> "QubitHamiltonian":
        return QubitHamiltonian.from_observable(super().simplify(atol))

    def to_real_matrix(self) -> np.ndarray:
        mat = self.to_matrix()
        if np.max(np.abs(mat.imag), initial=0.0) > 1e-10:
            raise ValueError("Hamiltonian matrix is not real")
        return mat.real


def to_qubit_hamiltonian(integrals: IntegralSet, atol: float = 1e-12) -> QubitHamiltonian:
    n = integrals.n_orbitals
    if not np.allclose(integrals.overlap, np.eye(n), atol=1e-8):
        raise ValueError("to_qubit_hamiltonian needs orthonormal orbitals")
    xs, zs, M = _jw_map(n)
    coeffs = M @ _features(integrals.one_body, integrals.two_body, integrals.nuclear_repulsion)
    if np.max(np.abs(coeffs.imag), initial=0.0) > 1e-10:
        raise ValueError("non-Hermitian input integrals")
    obs = QubitHamiltonian(2 * n, coeffs.real, xs, zs)
    return obs.simplify(atol)


def build_hamiltonian(geometry, orbitals: str = "lowdin") -> QubitHamiltonian:
    """Geometry (Angstrom positions or Geometry) to Jordan-Wigner Hamiltonian."""
    if not isinstance(geometry, Geometry):
        geometry = Geometry(geometry)
    return to_qubit_hamiltonian(orthogonalize(compute_integrals(geometry), orbitals))


def linear_chain(*distances: float) -> Geometry:
    """Collinear chain with consecutive spacings in Angstrom, first atom at 0."""
    return Geometry(np.concatenate([[0.0], np.cumsum(distances)]))


class DenseHamiltonianBuilder:
    """Batched geometry -> dense Hamiltonian matrices for a fixed atom count.

    Uses the same Jordan-Wigner map as :func:`to_qubit_hamiltonian`, contracted
    once into a features -> matrix-elements operator so a batch of geometries
    costs one matrix product.
    """

    def __init__(self, n_atoms: int, orbitals: str = "lowdin", basis: BasisShell | None = None):
        self.n_atoms = n_atoms
        self.orbitals = orbitals
        self.basis = basis or sto3g_hydrogen()
        xs, zs, M = _jw_map(n_atoms)
        nq = 2 * n_atoms
        dim = 1 << nq
        obs = Observable(nq, np.zeros(len(xs)), xs, zs)
        basis_idx = np.arange(dim, dtype=np.int64)
        phases = obs._phases(basis_idx)
        rows = basis_idx[None, :] ^ xs[:, None]
        flat = rows * dim + basis_idx[None, :]
        A = sparse.csr_matrix(
            (phases.reshape(-1), (np.repeat(np.arange(len(xs)), dim), flat.reshape(-1))),
            shape=(len(xs), dim * dim),
        )
        G = (A.T @ M).T  # (n_features, dim * dim)
        G = np.asarray(G.todense() if sparse.issparse(G) else G)
        if np.max(np.abs(G.imag)) > 1e-12:
            raise AssertionError("Jordan-Wigner map produced complex matrix elements")
        self._G = np.ascontiguousarray(G.real)
        self.dim = dim

    def matrices(self, positions) -> np.ndarray:
        """``positions`` in Angstrom, shape (m, n_atoms) or (m, n_atoms, 3)."""
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 2:
            pos = pos[..., None]
        pos = np.pad(pos, ((0, 0), (0, 0), (0, 3 - pos.shape[-1])))
        if pos.shape[1] != self.n_atoms:
            raise ValueError(f"expected {self.n_atoms} atoms per geometry")
        for row in pos:
            check_no_coincident(row)
        if len(pos) == 1:
            # BLAS takes a different kernel for one row; padding keeps the
            # result bitwise independent of how geometries are batched
            return self.matrices(np.concatenate([pos, pos]))[:1]
        charges = np.ones(self.n_atoms)
        S, T, V, eri, e_nuc = _integrals_batch(pos / BOHR_IN_ANGSTROM, charges, self.basis)
        X = _inv_sqrt(S)
        if self.orbitals == "core":
            _, U = np.linalg.eigh(X @ (T + V) @ X)
            X = X @ U
        elif self.orbitals != "lowdin":
            raise ValueError(f"unknown orbital choice {self.orbitals!r}")
        h, g = _transform(T + V, eri, X)
        feats = _features(h, g, e_nuc)
        return (feats @ self._G).reshape(-1, self.dim, self.dim)


# --- text format -------------------------------------------------------------

_TOKEN = re.compile(r"^([XYZ])(\d+)$")


def parse_hamiltonian(text: str) -> QubitHamiltonian:
    declared = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("qubits:"):
            try:
                declared = int(line.split(":", 1)[1])
            except ValueError:
                raise HamiltonianFormatError(f"line {lineno}: bad qubit count") from None
            if declared < 1:
                raise HamiltonianFormatError(f"line {lineno}: qubit count must be positive")
            continue
        parts = line.replace("−", "-").split()
        try:
            coeff = float(parts[0])
        except ValueError:
            raise HamiltonianFormatError(
                f"line {lineno}: bad coefficient {parts[0]!r}"
            ) from None
        if not np.isfinite(coeff):
            raise HamiltonianFormatError(f"line {lineno}: coefficient must be finite")
        ops = {}
        for tok in parts[1:]:
            match = _TOKEN.match(tok)
            if match is None:
                raise HamiltonianFormatError(f"line {lineno}: bad Pauli token {tok!r}")
            q = int(match.group(2))
            if q in ops:
                raise HamiltonianFormatError(f"line {lineno}: qubit {q} repeated")
            ops[q] = match.group(1)
        entries.append((lineno, coeff, ops))
    if not entries:
        raise HamiltonianFormatError("no terms")
    highest = max((max(ops) for _, _, ops in entries if ops), default=-1)
    n = declared if declared is not None else max(highest + 1, 1)
    terms = []
    for lineno, coeff, ops in entries:
        if ops and max(ops) >= n:
            raise HamiltonianFormatError(
                f"line {lineno}: qubit {max(ops)} exceeds declared count {n}"
            )
        letters = "".join(ops.get(q, "I") for q in range(n))
        terms.append(PauliTerm(coeff, letters))
    return QubitHamiltonian.from_observable(Observable.from_terms(terms, n))


def load_hamiltonian(path) -> QubitHamiltonian:
    return parse_hamiltonian(Path(path).read_text())


def format_hamiltonian(ham: Observable) -> str:
    lines = [f"qubits: {ham.n_qubits}"]
    for c, x, z in zip(ham.coeffs, ham.xmask, ham.zmask):
        letters = masks_to_letters(int(x), int(z), ham.n_qubits)
        toks = [f"{ch}{q}" for q, ch in enumerate(letters) if ch != "I"]
        lines.append(" ".join([repr(float(c))] + toks))
    return "\n".join(lines) + "\n"


def save_hamiltonian(ham: Observable, path) -> None:
    Path(path).write_text(format_hamiltonian(ham))
