import numpy as np
import pytest
from sklearn.base import clone

from qneb.driver import (
    AdamParams,
    AdamState,
    DecodeAbort,
    EnergyCache,
    EnergyOracle,
    QuantumNEB,
    RunConfig,
    adam_update,
    evaluate_fbar,
    exact_saddle,
    grad_theta_fbar,
    make_oracle,
    optimize,
    perturb_path,
    rc_to_positions,
    run_ensemble,
)
from qneb.groundstate import SolverConfig
from qneb.pathcircuit import initial_path


def zeros_for(n_image):
    return np.zeros(4 * 2 * n_image)


# --- Adam ---------------------------------------------------------------------


def test_adam_first_step():
    theta, state = adam_update(np.zeros(3), np.array([1.0, -2.0, 0.0]), AdamState.zeros(3))
    assert theta == pytest.approx([-0.01, 0.01, 0.0], abs=1e-9)
    assert state.t == 1


def test_adam_zero_gradient():
    theta = np.array([0.3, -0.1])
    state = AdamState.zeros(2)
    for _ in range(5):
        new, state = adam_update(theta, np.zeros(2), state)
        assert np.array_equal(new, theta)


def test_adam_against_reference_loop():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(6, 4))
    theta, state = np.zeros(4), AdamState.zeros(4)
    m = v = np.zeros(4)
    ref = np.zeros(4)
    for t, g in enumerate(grads, start=1):
        theta, state = adam_update(theta, g, state, AdamParams(0.05))
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g**2
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(theta, ref, atol=1e-14)


def test_adam_validation():
    with pytest.raises(ValueError):
        adam_update(np.zeros(2), np.zeros(3), AdamState.zeros(2))
    with pytest.raises(ValueError):
        AdamParams(0.0)


# --- oracle and cache -----------------------------------------------------------


def test_cache_key_quantization():
    a = EnergyCache.key([0.0, 0.94, 1.88], ("ED", None))
    b = EnergyCache.key([0.0, 0.94 + 3e-11, 1.88], ("ED", None))
    c = EnergyCache.key([0.0, 0.94 + 2e-9, 1.88], ("ED", None))
    assert a == b
    assert a != c
    assert a != EnergyCache.key([0.0, 0.94, 1.88], ("VQE", 5))
    exact = EnergyCache.key([0.0, 0.94, 1.88], ("ED", None), None)
    assert exact != EnergyCache.key([0.0, 0.94 + 1e-15, 1.88], ("ED", None), None)


def test_oracle_uses_cache():
    cache = EnergyCache()
    oracle = EnergyOracle(SolverConfig(), 3, cache=cache)
    pos = rc_to_positions(np.array([[0.9, 1.0], [0.9, 1.0], [1.0, 0.9]]))
    e = oracle.energies(pos)
    assert oracle.solve_count == 2
    assert e[0] == e[1]
    assert e[2] == pytest.approx(e[0], abs=1e-10)
    oracle.energies(pos)
    assert oracle.solve_count == 2
    assert len(cache) == 2


def test_cache_soundness():
    cfg = RunConfig(max_iterations=3)
    cached = optimize(cfg)
    cfg_off = RunConfig(max_iterations=3, cache_enabled=False)
    plain = optimize(cfg_off)
    assert np.max(np.abs(cached.fbars - plain.fbars)) <= 1e-12
    assert abs(cached.final_report.fbar - plain.final_report.fbar) <= 1e-12


def test_vqe_cache_soundness_same_theta():
    cfg = RunConfig(solver=SolverConfig("VQE", vqe_depth=2, max_sweeps=20))
    theta = np.random.default_rng(2).uniform(-0.01, 0.01, 24)
    warm = make_oracle(cfg)
    evaluate_fbar(theta + 1e-3, cfg, warm)
    cached = evaluate_fbar(theta, cfg, warm)[0]
    plain = evaluate_fbar(theta, RunConfig(solver=cfg.solver, cache_enabled=False))[0]
    assert cached == pytest.approx(plain, abs=1e-12)


# --- evaluation value ---------------------------------------------------------


@pytest.mark.parametrize("n_image,expected", [(3, 0.17), (5, 0.12)])
def test_initial_fbar(n_image, expected):
    cfg = RunConfig(path=initial_path(n_image))
    fb, report, _ = evaluate_fbar(zeros_for(n_image), cfg)
    assert round(fb, 2) == expected
    if n_image == 3:
        assert report.activation_energy * 1000 == pytest.approx(83, abs=0.5)


def test_count_parity_solves_per_fbar():
    cfg = RunConfig(count_parity=True)
    _, _, solves = evaluate_fbar(zeros_for(3), cfg)
    assert solves == 25
    cfg5 = RunConfig(path=initial_path(5), count_parity=True)
    assert evaluate_fbar(zeros_for(5), cfg5)[2] == 35


@pytest.mark.parametrize("n_image,expected", [(3, 1225), (5, 2835)])
def test_count_parity_per_iteration(n_image, expected):
    cfg = RunConfig(path=initial_path(n_image), count_parity=True, max_iterations=1)
    traj = optimize(cfg)
    assert traj.records[0].solves == expected
    p = 2 * 2 * n_image * 2
    assert expected == (2 * p + 1) * (n_image + 2) * (1 + 2 * 2)


def test_single_iteration_matches_evaluate():
    cfg = RunConfig(max_iterations=1)
    traj = optimize(cfg)
    assert len(traj.records) == 1
    assert traj.records[0].fbar == evaluate_fbar(zeros_for(3), cfg)[0]


def test_theta_gradient_matches_direct_difference():
    cfg = RunConfig()
    rng = np.random.default_rng(1)
    theta = rng.uniform(-0.02, 0.02, 24)
    oracle = make_oracle(cfg)
    grad = grad_theta_fbar(theta, cfg, oracle)
    for k in (0, 7, 19):
        e = np.zeros(24)
        e[k] = 1e-3
        ref = (evaluate_fbar(theta + e, cfg, oracle)[0] - evaluate_fbar(theta - e, cfg, oracle)[0]) / 2e-3
        assert grad[k] == pytest.approx(ref, abs=1e-12)


def test_determinism():
    a = optimize(RunConfig(max_iterations=3))
    b = optimize(RunConfig(max_iterations=3))
    assert np.array_equal(a.fbars, b.fbars)
    for ta, tb in zip(a.thetas, b.thetas):
        assert np.array_equal(ta, tb)
    assert np.array_equal(a.final_theta, b.final_theta)


def test_decode_abort_keeps_partial_trajectory():
    cfg = RunConfig(adam=AdamParams(learning_rate=1.0), max_iterations=10)
    with pytest.raises(DecodeAbort) as err:
        optimize(cfg)
    assert err.value.theta is not None
    assert 1 <= len(err.value.trajectory.records) < 10


def test_trajectory_records(default_ed_run):
    traj = default_ed_run
    assert len(traj.records) == 100
    assert [r.iteration for r in traj.records] == list(range(100))
    assert all(r.solves >= 0 for r in traj.records)
    # convergence direction over the default run
    assert traj.final_report.fbar < traj.records[0].fbar


# --- ensembles ----------------------------------------------------------------


def test_perturb_path():
    path = initial_path(7)
    out = perturb_path(path, np.random.default_rng(3), 0.1)
    d = out.reaction_coordinates() - path.reaction_coordinates()
    assert np.array_equal(d[0], np.zeros(2))
    assert np.array_equal(d[-1], np.zeros(2))
    assert np.all(np.abs(d[1:-1]) <= 0.1)
    assert np.any(d[1:-1] != 0)


def test_ensemble_seed_pairing():
    base = RunConfig(max_iterations=2)
    seen = []
    res = run_ensemble(base, n_paths=2, callback=lambda s, ent, tr: seen.append((s, ent)))
    assert seen == [(0, True), (0, False), (1, True), (1, False)]
    assert res.fbar_cz.shape == (2, 3)
    # both arms start from the same perturbed path at theta = 0
    assert np.array_equal(res.fbar_cz[:, 0], res.fbar_none[:, 0])
    assert res.delta[0] == 0.0
    with pytest.raises(ValueError):
        run_ensemble(RunConfig(solver=SolverConfig("VQE")), n_paths=1)


# --- references and estimator ---------------------------------------------------


def test_exact_saddle():
    r, e_a = exact_saddle()
    assert r == pytest.approx(0.94, abs=0.01)
    assert e_a * 1000 == pytest.approx(33, abs=3)


def test_estimator_api():
    est = QuantumNEB(max_iter=2)
    assert est.fit() is est
    assert est.n_iter_ == 2
    assert est.theta_.shape == (24,)
    assert est.fbar_ == est.report_.fbar
    assert est.path_.n_image == 3
    fresh = clone(est).set_params(entanglers=False)
    assert fresh.get_params()["entanglers"] is False
    assert not hasattr(fresh, "theta_")
    out = est.transform(initial_path(3))
    assert np.allclose(out.coords, est.path_.coords, atol=1e-14)
