import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from qneb.driver import EnergyOracle
from qneb.groundstate import SolverConfig
from qneb.neb import (
    DegenerateTangent,
    NebParams,
    ProbeError,
    activation_energy,
    assemble,
    fbar,
    grad_perp,
    image_force,
    numeric_gradient,
    probe_points,
    spring_force_parallel,
    tangent,
)

coord = st.floats(-3, 3, allow_nan=False)
vec2 = st.tuples(coord, coord).map(np.array)
energy = st.floats(-2, 0, allow_nan=False)


def ed_oracle():
    return EnergyOracle(SolverConfig("ED"), 3)


def path_report(rc, oracle, params=NebParams()):
    rc = np.asarray(rc, dtype=float)
    E = [oracle(r) for r in rc]
    grads = [None] + [numeric_gradient(oracle, r, params.coord_step) for r in rc[1:-1]] + [None]
    return assemble(rc, E, grads, params)


# --- tangent ------------------------------------------------------------------


def test_tangent_monotone_up():
    R = [np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([2.0, 2.0])]
    t = tangent(*R, -1.0, -0.9, -0.8)
    assert np.allclose(t, np.array([1, 1]) / np.sqrt(2))


def test_tangent_local_max_example():
    R = [np.array([0.8, 1.2]), np.array([0.9, 1.0]), np.array([1.1, 0.9])]
    t = tangent(*R, -1.60, -1.57, -1.58)
    # independent evaluation: dE_max = 0.03, dE_min = 0.01, E_next > E_prev
    ref = 0.03 * np.array([0.2, -0.1]) + 0.01 * np.array([0.1, -0.2])
    assert np.allclose(t, ref / np.linalg.norm(ref), atol=1e-12)
    assert np.allclose(t, [0.8137, -0.5812], atol=1e-4)


def test_tangent_degenerate():
    with pytest.raises(DegenerateTangent):
        tangent(np.zeros(2), np.zeros(2), np.zeros(2), -1.0, -0.5, -0.2)


@settings(max_examples=300)
@given(vec2, vec2, vec2, energy, energy, energy)
def test_tangent_unit_and_antisymmetric(a, b, c, ea, eb, ec):
    assume(np.linalg.norm(b - a) > 1e-3 and np.linalg.norm(c - b) > 1e-3)
    try:
        t = tangent(a, b, c, ea, eb, ec)
    except DegenerateTangent:
        return
    assert abs(np.linalg.norm(t) - 1.0) <= 1e-10
    assert np.allclose(tangent(c, b, a, ec, eb, ea), -t, atol=1e-10)


@settings(max_examples=300)
@given(vec2, vec2)
def test_projection_identities(g, t):
    assume(np.linalg.norm(t) > 1e-3)
    t = t / np.linalg.norm(t)
    p = grad_perp(g, t)
    assert abs(np.dot(p, t)) <= 1e-12 * max(1.0, np.linalg.norm(g))
    assert np.allclose(grad_perp(p, t), p, atol=1e-12)


@pytest.mark.parametrize(
    "energies",
    [
        (-1.0, -0.9, -0.8),  # up
        (-0.8, -0.9, -1.0),  # down
        (-1.0, -0.7, -0.9),  # max
        (-0.9, -1.2, -1.0),  # min
        (-1.0, -1.0, -0.9),  # tie with previous
        (-1.0, -0.9, -0.9),  # tie with next
        (-1.0, -0.8, -1.0),  # equal neighbours
    ],
)
def test_every_branch_unit(energies):
    rng = np.random.default_rng(0)
    for _ in range(20):
        R = rng.normal(size=(3, 2))
        t = tangent(*R, *energies)
        assert abs(np.linalg.norm(t) - 1) <= 1e-12
        g = rng.normal(size=2)
        assert abs(np.dot(grad_perp(g, t), t)) <= 1e-12


def test_tie_is_continuous_limit():
    R = [np.array([0.0, 0.0]), np.array([1.0, 0.2]), np.array([1.5, 1.0])]
    tie = tangent(*R, -1.0, -1.0, -0.9)
    near = tangent(*R, -1.0 - 1e-12, -1.0, -0.9)
    assert np.allclose(tie, near, atol=1e-9)


# --- forces -------------------------------------------------------------------


def test_spring_examples():
    t = np.array([1.0, 0.0])
    f = spring_force_parallel([0, 0], [0.1, 0], [0.4, 0], t, 0.1)
    assert np.allclose(f, [0.02, 0.0])
    f2 = spring_force_parallel([0, 0], [0.1, 0], [0.4, 0], t, 0.2)
    assert np.allclose(f2, 2 * f)
    assert np.allclose(spring_force_parallel([0, 0], [1, 1], [2, 2], t, 0.1), 0.0)


def test_perp_examples():
    t = np.array([1.0, 0.0])
    assert np.allclose(grad_perp([1, 1], t), [0, 1])
    assert np.allclose(grad_perp([3, 0], t), [0, 0])
    assert np.allclose(grad_perp([0, 2], t), [0, 2])


def test_image_force_and_fbar():
    assert np.allclose(image_force([0.02, 0], [0, 1]), [0.02, -1])
    assert np.allclose(image_force([0, 0], [0, 0]), 0)
    assert fbar([np.array([0.3, 0.4])]) == pytest.approx(0.5)
    assert fbar([np.zeros(2), np.zeros(2)]) == 0.0
    with pytest.raises(ValueError):
        fbar([])


# --- gradients ----------------------------------------------------------------


def test_gradient_quadratic_exact():
    calls = []

    def oracle(r):
        calls.append(r)
        return float(np.dot(r, r))

    R = np.array([0.7, -1.3, 2.0])
    g = numeric_gradient(oracle, R, 0.1)
    assert np.allclose(g, 2 * R, atol=1e-12)
    assert len(calls) == 6


def test_gradient_second_order():
    def quartic(r):
        return float(np.sum(r**4))

    R = np.array([0.9, -0.4])
    exact = 4 * R**3
    e1 = np.abs(numeric_gradient(quartic, R, 0.1) - exact)
    e2 = np.abs(numeric_gradient(quartic, R, 0.05) - exact)
    assert np.allclose(e1 / e2, 4.0, rtol=0.05)


def test_probe_error_carries_geometry():
    def oracle(r):
        if r[0] < 0.95:
            raise RuntimeError("solver failed")
        return 0.0

    with pytest.raises(ProbeError) as err:
        numeric_gradient(oracle, np.array([1.0, 1.0]), 0.1)
    assert np.allclose(err.value.geometry, [0.9, 1.0])


def test_probe_layout():
    P = probe_points(np.array([1.0, 2.0]), 0.1)
    assert np.allclose(P, [[1.1, 2.0], [1.0, 2.1], [0.9, 2.0], [1.0, 1.9]])
    with pytest.raises(ValueError):
        probe_points(np.zeros(2), 0.0)


def test_symmetric_point_gradient():
    oracle = ed_oracle()
    g = numeric_gradient(oracle, np.array([1.1, 1.1]), 0.1)
    assert g[0] == pytest.approx(g[1], abs=1e-8)


# --- assembled paths ----------------------------------------------------------


def test_activation_energy():
    assert activation_energy([-1.0, -0.9, -0.95, -0.5]) == (pytest.approx(0.1), 1)
    assert activation_energy([-1.0, -1.0, -1.0])[0] == 0.0
    with pytest.raises(ValueError):
        activation_energy([-1.0, -0.5])


def test_quadratic_valley_zero_force():
    """Straight valley along direction u; equally spaced images on it."""
    ang = 0.4
    u = np.array([np.cos(ang), np.sin(ang)])
    v = np.array([-np.sin(ang), np.cos(ang)])

    def E(r):
        return 0.7 * np.dot(r, v) ** 2 - 0.3 * np.dot(r, u) ** 2

    rows = np.array([s * u for s in np.linspace(-1.0, 1.2, 6)])
    grads = [None] + [numeric_gradient(E, r, 0.1) for r in rows[1:-1]] + [None]
    rep = assemble(rows, [E(r) for r in rows], grads, NebParams())
    assert rep.fbar <= 1e-10


def test_translation_invariance():
    def E(r):
        return float(np.sin(r[0]) * np.cos(r[1]) + 0.1 * r[0] * r[1])

    rng = np.random.default_rng(4)
    rows = np.cumsum(rng.uniform(0.1, 0.4, size=(5, 2)), axis=0)
    shift = np.array([0.37, -0.21])

    def rep(rows, E):
        grads = [None] + [numeric_gradient(E, r, 0.1) for r in rows[1:-1]] + [None]
        return assemble(rows, [E(r) for r in rows], grads, NebParams())

    a = rep(rows, E)
    b = rep(rows + shift, lambda r: E(r - shift))
    assert a.fbar == pytest.approx(b.fbar, abs=1e-12)


def test_mirror_invariance_ed():
    oracle = ed_oracle()
    rc = np.array([(0.73, 2.5), (0.8, 1.6), (1.0, 0.9), (1.7, 0.78), (2.5, 0.73)])
    a = path_report(rc, oracle)
    mirrored = rc[::-1, ::-1]
    b = path_report(mirrored, oracle)
    assert a.fbar == pytest.approx(b.fbar, abs=1e-10)


def test_initial_path_values():
    oracle = ed_oracle()
    rc = np.array([(0.73, 2.5), (0.73, 1.615), (0.73, 0.73), (1.615, 0.73), (2.5, 0.73)])
    rep = path_report(rc, oracle)
    assert rep.activation_energy * 1000 == pytest.approx(83, abs=0.5)
    assert round(rep.fbar, 2) == 0.17
    assert rep.max_image == 2
