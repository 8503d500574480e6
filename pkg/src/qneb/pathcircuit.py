"""Reaction-path encoding into qubits, the generator circuit, and decoding.

Every unfixed coordinate gets one qubit prepared as ``Ry(2 arccos(sqrt(r)))|0>``
where ``r = x / r_ref`` is the fractional coordinate, so that the probability
of measuring 0 on that qubit equals ``r``. Fixed atoms consume no qubits.
Qubits are assigned row-major: row by row, atom by atom, then dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from qneb.simulator import Circuit, GateOp, StateVector, run_circuit, zero_probabilities

ROLES = ("IS", "IMG", "FS")


class OrderingViolation(ValueError):
    """A decoded row has atoms out of order (or coincident)."""

    def __init__(self, message: str, row: int | None = None, coords=None):
        super().__init__(message)
        self.row = row
        self.coords = coords


@dataclass
class PathSpec:
    """Rows (IS, images..., FS) of atomic coordinates in Angstrom.

    ``coords`` has shape ``(n_rows, n_atoms, ndim)``; a 2-D array is read as
    ``ndim = 1``. ``fixed`` flags whole atoms, shape ``(n_rows, n_atoms)``.
    """

    coords: np.ndarray
    fixed: np.ndarray
    roles: list[str] = None
    r_ref: float = 6.0

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim == 2:
            c = c[:, :, None]
        if c.ndim != 3:
            raise ValueError("coords must have shape (n_rows, n_atoms[, ndim])")
        self.coords = c
        self.fixed = np.asarray(self.fixed, dtype=bool)
        if self.fixed.shape != c.shape[:2]:
            raise ValueError("fixed flags must have shape (n_rows, n_atoms)")
        if self.roles is None:
            self.roles = ["IS"] + ["IMG"] * (c.shape[0] - 2) + ["FS"]
        self.roles = list(self.roles)
        if len(self.roles) != c.shape[0] or c.shape[0] < 3:
            raise ValueError("need an IS row, at least one image, and an FS row")
        if self.roles[0] != "IS" or self.roles[-1] != "FS" or set(self.roles[1:-1]) != {"IMG"}:
            raise ValueError("rows must be IS, IMG..., FS")
        if not self.r_ref > 0:
            raise ValueError("r_ref must be positive")
        self.validate()

    def validate(self) -> None:
        if not (self.fixed[0].all() and self.fixed[-1].all()):
            raise ValueError("IS and FS rows must be fully fixed")
        if not self.fixed[:, 0].all():
            raise ValueError("the first atom must be fixed in every row")
        if np.any(self.coords < 0) or np.any(self.coords > self.r_ref):
            raise ValueError(f"coordinates must lie in [0, {self.r_ref}]")
        if self.ndim == 1:
            for i, row in enumerate(self.coords[:, :, 0]):
                if np.any(np.diff(row) <= 0):
                    raise OrderingViolation(
                        f"row {i} coordinates are not strictly increasing: {row}", i, row
                    )

    @property
    def n_rows(self) -> int:
        return self.coords.shape[0]

    @property
    def n_image(self) -> int:
        return self.n_rows - 2

    @property
    def n_atom(self) -> int:
        return self.coords.shape[1]

    @property
    def ndim(self) -> int:
        return self.coords.shape[2]

    @property
    def n_ufa(self) -> int:
        return int((~self.fixed).sum())

    @property
    def n_qubits(self) -> int:
        return self.ndim * self.n_ufa

    def reaction_coordinates(self) -> np.ndarray:
        """Consecutive interatomic distances per row, shape (n_rows, n_atom - 1)."""
        return np.linalg.norm(np.diff(self.coords, axis=1), axis=-1)

    def copy(self) -> "PathSpec":
        return PathSpec(self.coords.copy(), self.fixed.copy(), list(self.roles), self.r_ref)

    @classmethod
    def from_reaction_coordinates(cls, rc, r_ref: float = 6.0) -> "PathSpec":
        """1-D chain rows from distances; the first atom sits at the origin and
        is fixed, IS/FS rows are fixed entirely."""
        rc = np.asarray(rc, dtype=float)
        coords = np.concatenate([np.zeros((rc.shape[0], 1)), np.cumsum(rc, axis=1)], axis=1)
        fixed = np.zeros(coords.shape, dtype=bool)
        fixed[:, 0] = True
        fixed[0] = fixed[-1] = True
        return cls(coords, fixed, r_ref=r_ref)


def initial_path(
    n_image: int = 3,
    is_rc=(0.73, 2.50),
    imp_rc=(0.73, 0.73),
    fs_rc=(2.50, 0.73),
    r_ref: float = 6.0,
) -> PathSpec:
    """H2 + H -> H + H2 starting path in (R_AB, R_BC).

    ``(n_image - 1) / 2`` images are interpolated linearly between the IS and
    the intermediate point, the intermediate point is the middle image, and as
    many again are interpolated towards the FS.
    """
    if n_image < 1 or n_image % 2 == 0:
        raise ValueError("n_image must be a positive odd number")
    half = (n_image - 1) // 2
    is_rc, imp_rc, fs_rc = (np.asarray(v, dtype=float) for v in (is_rc, imp_rc, fs_rc))
    rows = [is_rc]
    for k in range(1, half + 1):
        rows.append(is_rc + (imp_rc - is_rc) * k / (half + 1))
    rows.append(imp_rc)
    for k in range(1, half + 1):
        rows.append(imp_rc + (fs_rc - imp_rc) * k / (half + 1))
    rows.append(fs_rc)
    return PathSpec.from_reaction_coordinates(np.array(rows), r_ref=r_ref)


def qubit_map_for(path: PathSpec) -> list[tuple[int, int, int]]:
    return [
        (row, atom, d)
        for row in range(path.n_rows)
        for atom in range(path.n_atom)
        if not path.fixed[row, atom]
        for d in range(path.ndim)
    ]


def encoding_angle(fraction: float) -> float:
    return 2.0 * np.arccos(np.sqrt(fraction))


def fractional_encode(path: PathSpec) -> tuple[Circuit, list[tuple[int, int, int]]]:
    qmap = qubit_map_for(path)
    ops = []
    for m, (row, atom, d) in enumerate(qmap):
        x = path.coords[row, atom, d]
        if not 0.0 <= x <= path.r_ref:
            raise ValueError(f"coordinate {x} outside [0, {path.r_ref}]")
        ops.append(GateOp("Ry", m, angle=encoding_angle(x / path.r_ref)))
    return Circuit(len(qmap), ops), qmap


@dataclass
class GeneratorConfig:
    """Generator parameters: ``theta`` holds ``depth`` blocks of two Ry
    columns, shape ``(depth, 2, n_qubits)`` when reshaped."""

    theta: np.ndarray
    depth: int = 2
    entanglers: bool = True
    qubit_map: list = field(default_factory=list)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def n_qubits(self) -> int:
        return len(self.qubit_map)

    @property
    def n_params(self) -> int:
        return n_generator_params(self.n_qubits, self.depth)


def n_generator_params(n_qubits: int, depth: int) -> int:
    return 2 * n_qubits * depth


def build_generator(cfg: GeneratorConfig) -> Circuit:
    n = cfg.n_qubits
    if cfg.theta.size != cfg.n_params:
        raise ValueError(f"theta has {cfg.theta.size} entries, layout needs {cfg.n_params}")
    theta = cfg.theta.reshape(cfg.depth, 2, n)
    ops = []
    for b in range(cfg.depth):
        ops.extend(GateOp("Ry", m, angle=float(theta[b, 0, m])) for m in range(n))
        if cfg.entanglers:
            ops.extend(GateOp("CZ", m + 1, control=m) for m in range(n - 1))
        ops.extend(GateOp("Ry", m, angle=float(theta[b, 1, m])) for m in range(n))
    return Circuit(n, ops)


def decode_path(state: StateVector, template: PathSpec, qubit_map) -> PathSpec:
    if state.n_qubits != len(qubit_map):
        raise ValueError("state and qubit map disagree on qubit count")
    probs = zero_probabilities(state)
    coords = template.coords.copy()
    for m, (row, atom, d) in enumerate(qubit_map):
        coords[row, atom, d] = probs[m] * template.r_ref
    if template.ndim == 1:
        for i, row in enumerate(coords[:, :, 0]):
            if np.any(np.diff(row) <= 0):
                raise OrderingViolation(
                    f"decoded row {i} violates atom ordering: {row}", i, row.copy()
                )
    return PathSpec(coords, template.fixed.copy(), list(template.roles), template.r_ref)


def generate_path(template: PathSpec, cfg: GeneratorConfig) -> PathSpec:
    """Encode ``template``, apply the generator, decode."""
    enc, qmap = fractional_encode(template)
    if cfg.qubit_map and list(cfg.qubit_map) != qmap:
        raise ValueError("generator qubit map does not match the template")
    cfg = GeneratorConfig(cfg.theta, cfg.depth, cfg.entanglers, qmap)
    circ = Circuit(enc.n_qubits, enc.ops + build_generator(cfg).ops)
    return decode_path(run_circuit(circ), template, qmap)


class PathGenerator(BaseEstimator, TransformerMixin):
    """Quantum-circuit path generator.

    ``fit(path)`` records the template and qubit layout and sets ``theta_`` to
    zeros. ``transform(path)`` pushes a path with the same layout through the
    generator at ``theta_``; ``generate(theta)`` does so for the fitted
    template at an arbitrary parameter vector.
    """

    def __init__(self, depth=2, entanglers=True):
        self.depth = depth
        self.entanglers = entanglers

    def fit(self, X: PathSpec, y=None):
        if not isinstance(X, PathSpec):
            raise TypeError("PathGenerator.fit expects a PathSpec")
        self.template_ = X.copy()
        self.encoder_, self.qubit_map_ = fractional_encode(X)
        self.n_qubits_ = len(self.qubit_map_)
        self.n_params_ = n_generator_params(self.n_qubits_, self.depth)
        self.theta_ = np.zeros(self.n_params_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "template_"):
            raise AttributeError("PathGenerator is not fitted")

    def config(self, theta=None) -> GeneratorConfig:
        self._check_fitted()
        theta = self.theta_ if theta is None else theta
        return GeneratorConfig(theta, self.depth, self.entanglers, list(self.qubit_map_))

    def circuit(self, theta=None, encoder: Circuit | None = None) -> Circuit:
        gen = build_generator(self.config(theta))
        enc = self.encoder_ if encoder is None else encoder
        return Circuit(self.n_qubits_, enc.ops + gen.ops)

    def generate(self, theta=None) -> PathSpec:
        state = run_circuit(self.circuit(theta))
        return decode_path(state, self.template_, self.qubit_map_)

    def transform(self, X: PathSpec) -> PathSpec:
        self._check_fitted()
        enc, qmap = fractional_encode(X)
        if qmap != self.qubit_map_:
            raise ValueError("path layout differs from the fitted template")
        state = run_circuit(self.circuit(encoder=enc))
        return decode_path(state, X, qmap)


# --- path files -----------------------------------------------------------------
#
#   rref: 6.0
#   ndim: 1
#   IS  0.0:1 0.73:1 3.23:1
#   IMG 0.0:1 0.73:0 2.345:0
#   FS  0.0:1 2.5:1 3.23:1
#
# One line per row; each atom is ``coordinate:flag`` with flag 1 = fixed.
# For ndim > 1 the coordinate is comma-separated. ``#`` starts a comment.


class PathFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def parse_path(text: str) -> PathSpec:
    header = {}
    rows, flags, roles = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key = key.strip().lower()
        if sep and key in ("rref", "ndim"):
            try:
                header[key] = float(value) if key == "rref" else int(value)
            except ValueError:
                raise PathFormatError(f"bad {key} value {value.strip()!r}", lineno) from None
            continue
        tokens = line.split()
        role = tokens[0].upper()
        if role not in ROLES:
            raise PathFormatError(f"unknown row role {tokens[0]!r}", lineno)
        if len(tokens) < 2:
            raise PathFormatError("row has no atoms", lineno)
        coords, fixed = [], []
        for tok in tokens[1:]:
            value, sep, flag = tok.rpartition(":")
            if not sep or flag not in ("0", "1"):
                raise PathFormatError(f"atom token {tok!r} is not coordinate:flag", lineno)
            try:
                coords.append([float(v) for v in value.split(",")])
            except ValueError:
                raise PathFormatError(f"bad coordinate in {tok!r}", lineno) from None
            fixed.append(flag == "1")
        rows.append(coords)
        flags.append(fixed)
        roles.append(role)
    if "rref" not in header or "ndim" not in header:
        raise PathFormatError("missing rref: or ndim: header")
    if not rows:
        raise PathFormatError("no rows")
    ndim = header["ndim"]
    if any(len(c) != ndim for r in rows for c in r):
        raise PathFormatError(f"every coordinate needs {ndim} component(s)")
    if len({len(r) for r in rows}) != 1:
        raise PathFormatError("rows have different atom counts")
    return PathSpec(np.array(rows), np.array(flags), roles, header["rref"])


def format_path(path: PathSpec) -> str:
    lines = [f"rref: {path.r_ref!r}", f"ndim: {path.ndim}"]
    for role, row, fixed in zip(path.roles, path.coords, path.fixed):
        atoms = [
            ",".join(repr(float(v)) for v in xyz) + (":1" if f else ":0") for xyz, f in zip(row, fixed)
        ]
        lines.append(" ".join([role] + atoms))
    return "\n".join(lines) + "\n"


def load_path(path) -> PathSpec:
    with open(path) as fh:
        return parse_path(fh.read())


def save_path(spec: PathSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_path(spec))
