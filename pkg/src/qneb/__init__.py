"""Reaction path optimization with quantum-circuit path generation.

The reaction path is encoded into single-qubit rotations, transformed by a
parameterized generator circuit and decoded from marginal probabilities.
Ground-state energies along the path come from exact diagonalization or a
Rotoselect VQE, and a nudged elastic band objective is minimized with Adam.
"""

from qneb.simulator import Circuit, GateOp, Observable, PauliTerm, StateVector
from qneb.hamiltonian import Geometry, QubitHamiltonian, build_hamiltonian
from qneb.groundstate import GroundStateSolver, SolverConfig, solve_ed, solve_vqe
from qneb.pathcircuit import GeneratorConfig, PathGenerator, PathSpec, initial_path
from qneb.neb import NebParams
from qneb.driver import QuantumNEB, RunConfig

__all__ = [
    "Circuit",
    "GateOp",
    "Geometry",
    "GeneratorConfig",
    "GroundStateSolver",
    "NebParams",
    "Observable",
    "PathGenerator",
    "PathSpec",
    "PauliTerm",
    "QuantumNEB",
    "QubitHamiltonian",
    "RunConfig",
    "SolverConfig",
    "StateVector",
    "build_hamiltonian",
    "initial_path",
    "solve_ed",
    "solve_vqe",
]

__version__ = "0.1.0"
