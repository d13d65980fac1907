import numpy as np
import pytest

from ddreg.errors import NonFiniteState
from ddreg.exo import Exosystem
from ddreg.imodel import build_harmonic
from ddreg.plant import (
    BasisLibrary,
    PlantModel,
    augmented_matrices,
    eval_Z,
    eval_Z_jacobian,
    run_experiment,
    simulate_closed_loop,
)

from helpers import TWO_PI, robot_arm_exo, robot_arm_plant


def scalar_plant(a=0.0):
    """dx = a x + u with a trivial exogenous channel (S = 0, w scalar)."""
    basis = BasisLibrary(1, [])
    return PlantModel(basis, [[a]], [[1.0]], [[0.0]], [[1.0]], [[-1.0]])


def scalar_exo(w0=1.0):
    return Exosystem(np.zeros((1, 1)), [w0], period=1.0)


def test_eval_Z_cos_at_zero():
    basis = BasisLibrary(4, [("cos", 0)])
    Z = eval_Z(basis, np.zeros(4))
    np.testing.assert_allclose(Z, [0, 0, 0, 0, 1.0])
    J = eval_Z_jacobian(basis, np.zeros(4))
    np.testing.assert_allclose(J[:4], np.eye(4))
    np.testing.assert_allclose(J[4], np.zeros(4))


def test_eval_Z_jacobian_cos_at_half_pi():
    basis = BasisLibrary(4, [("cos", 0)])
    J = eval_Z_jacobian(basis, np.array([np.pi / 2, 0, 0, 0]))
    np.testing.assert_allclose(J[4], [-1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    basis = BasisLibrary(
        3, [("cos", 0), ("sin", 2), ("prod", 0, 1), ("square", 1), ("cube", 2), ("prod", 2, 2)]
    )
    for _ in range(5):
        x = rng.uniform(-1.5, 1.5, 3)
        J = basis.jacobian_Q(x)
        h = 1e-5
        fd = np.empty_like(J)
        for i in range(3):
            dp = x.copy(); dp[i] += h
            dm = x.copy(); dm[i] -= h
            fd[:, i] = (basis.eval_Q(dp) - basis.eval_Q(dm)) / (2 * h)
        np.testing.assert_allclose(J, fd, atol=1e-6)


def test_eval_Q_dot_matches_chain_rule():
    rng = np.random.default_rng(4)
    basis = BasisLibrary(3, [("cos", 1), ("prod", 0, 2), ("cube", 0)])
    x = rng.standard_normal(3)
    dx = rng.standard_normal(3)
    np.testing.assert_allclose(basis.eval_Q_dot(x, dx), basis.jacobian_Q(x) @ dx, atol=1e-12)


def test_trivial_experiment_constant_state():
    plant = scalar_plant(a=0.0)
    # e = x - w must drive the internal model, but with u = 0 and x0 = 1 the
    # state never moves
    exo = scalar_exo(w0=0.0)
    im = build_harmonic(1, 0, 1.0)
    ds = run_experiment(plant, exo, im, amplitude=0.0, x0=[1.0], sample_period=0.1,
                        T=15, step=1e-3, seed=0)
    np.testing.assert_allclose(ds.x, np.ones((1, 15)), atol=1e-12)
    np.testing.assert_allclose(ds.dx, np.zeros((1, 15)), atol=1e-12)
    np.testing.assert_allclose(ds.u, np.zeros((1, 15)))


def test_experiment_dataset_consistency_exact():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 2, TWO_PI)
    ds = run_experiment(plant, exo, im, amplitude=0.1, sample_period=0.5, T=40,
                        step=1e-3, seed=1)
    # dx columns equal A Z(x) + B u + P w at the recorded samples exactly
    recon = plant.A @ eval_Z(plant.basis, ds.x) + plant.B @ ds.u + plant.P @ ds.w
    assert np.abs(ds.dx - recon).max() < 1e-12
    # error samples match the output map
    np.testing.assert_allclose(ds.e, plant.C_e @ eval_Z(plant.basis, ds.x) + plant.Q_e @ ds.w,
                               atol=1e-12)


def test_experiment_data_identity_with_truth():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 3, TWO_PI)
    ds = run_experiment(plant, exo, im, amplitude=0.1, sample_period=0.5, T=40,
                        step=1e-3, seed=2)
    Acal, Bcal, Pcal = augmented_matrices(plant, im, "nonlinear")
    Z0 = np.vstack([ds.x, ds.eta, plant.basis.eval_Q(ds.x)])
    Z1 = np.vstack([ds.dx, im.Phi @ ds.eta + im.G @ ds.e])
    resid = Z1 - (Acal @ Z0 + Bcal @ ds.u + Pcal @ ds.w)
    assert np.abs(resid).max() <= 1e-9 * max(1.0, np.abs(Z1).max())


def test_experiment_nonzero_error_during_collection():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 0, TWO_PI)
    ds = run_experiment(plant, exo, im, amplitude=0.1, sample_period=0.5, T=40, seed=3)
    assert ds.T == 40
    assert np.abs(ds.e).max() > 0.1  # the exogenous signal acts during collection


def test_experiment_determinism():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 1, TWO_PI)
    kw = dict(amplitude=0.1, sample_period=0.25, T=20, step=1e-3, seed=9)
    d1 = run_experiment(plant, exo, im, **kw)
    d2 = run_experiment(plant, exo, im, **kw)
    for name in ("times", "x", "u", "e", "dx", "eta", "w"):
        a, b = getattr(d1, name), getattr(d2, name)
        assert np.array_equal(a, b), name


def test_experiment_rejects_bad_step_ratio():
    plant = scalar_plant()
    exo = scalar_exo()
    im = build_harmonic(1, 0, 1.0)
    with pytest.raises(ValueError):
        run_experiment(plant, exo, im, sample_period=0.05, step=0.003, T=5)


def test_experiment_nonfinite_detection():
    plant = scalar_plant(a=50.0)  # violently unstable
    exo = scalar_exo()
    im = build_harmonic(1, 0, 1.0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteState):
        run_experiment(plant, exo, im, amplitude=1.0, x0=[1.0], sample_period=0.5,
                       T=40, step=0.01, seed=0)


def test_closed_loop_decay_without_coupling():
    # dx = -x, no exogenous action, K = 0: x decays like exp(-t)
    basis = BasisLibrary(1, [])
    plant = PlantModel(basis, [[-1.0]], [[1.0]], [[0.0]], [[1.0]], [[0.0]])
    exo = scalar_exo(w0=1.0)
    im = build_harmonic(1, 0, 1.0)
    K = np.zeros((1, 2))
    traj = simulate_closed_loop(plant, exo, im, K, x0=[1.0], horizon=20.0, step=1e-3,
                                mode="linear", record_every=1000)
    assert abs(traj["x"][0, -1] - np.exp(-20.0)) < 1e-6


def test_rk4_order_on_robot_arm_open_loop():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 0, TWO_PI)
    K = np.zeros((1, 6))

    def endpoint(h):
        traj = simulate_closed_loop(plant, exo, im, np.zeros((1, 6)), x0=[0.3, -0.2, 0.1, 0.4],
                                    horizon=2.0, step=h, mode="nonlinear",
                                    record_every=int(round(2.0 / h)))
        return np.concatenate([traj["x"][:, -1], traj["eta"][:, -1]])

    ref = endpoint(1e-4)
    e1 = np.abs(endpoint(8e-3) - ref).max()
    e2 = np.abs(endpoint(4e-3) - ref).max()
    ratio = e1 / e2
    assert 12.0 <= ratio <= 20.0


def test_closed_loop_mode_dimensions():
    plant = robot_arm_plant()
    exo = robot_arm_exo()
    im = build_harmonic(1, 1, TWO_PI)
    with pytest.raises(Exception):
        simulate_closed_loop(plant, exo, im, np.zeros((1, 3)), x0=np.zeros(4), horizon=0.1)
