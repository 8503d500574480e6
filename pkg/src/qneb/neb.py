"""Nudged elastic band forces with improved tangents.

Rows of ``R`` are reaction-coordinate vectors (IS, images..., FS). Endpoint
forces are zero; the evaluation value is the mean force norm over images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class NebParams:
    spring_constant: float = 0.1  # Hartree / Angstrom^2
    coord_step: float = 0.1  # Angstrom

    def __post_init__(self):
        if not self.spring_constant > 0:
            raise ValueError("spring constant must be positive")
        if not self.coord_step > 0:
            raise ValueError("coordinate step must be positive")


@dataclass
class ImageState:
    R: np.ndarray
    E: float
    gradE: np.ndarray | None = None
    tangent: np.ndarray | None = None
    force: np.ndarray | None = None


@dataclass
class NebReport:
    fbar: float
    images: list[ImageState]
    energies: np.ndarray  # all rows, IS first
    activation_energy: float
    max_image: int  # row index of the highest image
    delta_saddle: float | None = None
    extra: dict = field(default_factory=dict)


class DegenerateTangent(ValueError):
    pass


def tangent(R_prev, R_cur, R_next, E_prev, E_cur, E_next) -> np.ndarray:
    R_prev, R_cur, R_next = (np.asarray(v, dtype=float) for v in (R_prev, R_cur, R_next))
    tau_plus = R_next - R_cur
    tau_minus = R_cur - R_prev
    if E_next > E_cur > E_prev:
        tau = tau_plus
    elif E_next < E_cur < E_prev:
        tau = tau_minus
    else:
        # extremum, or a tie that no strict branch covers
        d_next = abs(E_next - E_cur)
        d_prev = abs(E_prev - E_cur)
        d_max, d_min = max(d_next, d_prev), min(d_next, d_prev)
        if E_next > E_prev:
            tau = tau_plus * d_max + tau_minus * d_min
        elif E_next < E_prev:
            tau = tau_plus * d_min + tau_minus * d_max
        else:
            # equal neighbours: both weights coincide
            tau = tau_plus + tau_minus
    norm = np.linalg.norm(tau)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateTangent("zero-length tangent; neighbouring images coincide")
    return tau / norm


def spring_force_parallel(R_prev, R_cur, R_next, tau, K) -> np.ndarray:
    R_prev, R_cur, R_next = (np.asarray(v, dtype=float) for v in (R_prev, R_cur, R_next))
    stretch = np.linalg.norm(R_next - R_cur) - np.linalg.norm(R_cur - R_prev)
    return K * stretch * np.asarray(tau, dtype=float)


def grad_perp(gradE, tau) -> np.ndarray:
    g = np.asarray(gradE, dtype=float)
    t = np.asarray(tau, dtype=float)
    return g - np.dot(g, t) * t


def image_force(spring_parallel, grad_perpendicular) -> np.ndarray:
    return np.asarray(spring_parallel, dtype=float) - np.asarray(grad_perpendicular, dtype=float)


def fbar(forces) -> float:
    forces = [np.asarray(f, dtype=float) for f in forces]
    if not forces:
        raise ValueError("no image forces to average")
    return float(np.mean([np.linalg.norm(f) for f in forces]))


def probe_points(R, step: float) -> np.ndarray:
    """Central-difference probe geometries: rows ``R + step e_j`` then
    ``R - step e_j`` for every coordinate ``j``; shape (2 * dim, dim)."""
    if not step > 0:
        raise ValueError("step must be positive")
    R = np.asarray(R, dtype=float)
    eye = np.eye(R.size) * step
    return np.concatenate([R + eye, R - eye])


def central_difference(probe_values, step: float) -> np.ndarray:
    vals = np.asarray(probe_values, dtype=float)
    dim = vals.size // 2
    return (vals[:dim] - vals[dim:]) / (2.0 * step)


class ProbeError(RuntimeError):
    def __init__(self, message: str, geometry):
        super().__init__(message)
        self.geometry = geometry


def numeric_gradient(energy_oracle: Callable, R, step: float = 0.1) -> np.ndarray:
    """``(E(R + h e_j) - E(R - h e_j)) / 2h`` with ``2 * dim`` oracle calls."""
    values = []
    for point in probe_points(R, step):
        try:
            values.append(float(energy_oracle(point)))
        except Exception as exc:
            raise ProbeError(f"energy oracle failed at {point}: {exc}", point) from exc
    return central_difference(values, step)


def activation_energy(energies) -> tuple[float, int]:
    """Highest image energy minus the IS energy; endpoints are excluded from
    the maximum. Returns ``(E_a, row index of the highest image)``."""
    E = np.asarray(energies, dtype=float)
    if E.size < 3:
        raise ValueError("need IS, at least one image, and FS energies")
    k = int(np.argmax(E[1:-1])) + 1
    return float(E[k] - E[0]), k


def assemble(R, energies, grads, params: NebParams) -> NebReport:
    """Tangents, projected forces and the evaluation value for a whole path.

    ``grads`` holds one gradient per row; endpoint rows may be ``None``.
    """
    R = np.asarray(R, dtype=float)
    E = np.asarray(energies, dtype=float)
    images = []
    forces = []
    for i in range(1, len(R) - 1):
        tau = tangent(R[i - 1], R[i], R[i + 1], E[i - 1], E[i], E[i + 1])
        spring = spring_force_parallel(R[i - 1], R[i], R[i + 1], tau, params.spring_constant)
        force = image_force(spring, grad_perp(grads[i], tau))
        forces.append(force)
        images.append(ImageState(R[i].copy(), float(E[i]), np.asarray(grads[i]), tau, force))
    e_a, k = activation_energy(E)
    return NebReport(fbar(forces), images, E.copy(), e_a, k)
