import numpy as np
import pytest

from ddreg.errors import InsufficientSamples
from ddreg.fourier import coefficients, l2_bound, nulling_check, parseval_residual


def grid(D, N):
    return np.arange(N) * D / N


def test_constant_signal():
    D, c = 3.0, 1.7
    v = np.full(64, c)
    spec = coefficients(v, D, 8)
    assert spec.a[0] == pytest.approx(2 * c, abs=1e-10)
    assert np.abs(spec.a[1:]).max() < 1e-10
    assert np.abs(spec.b).max() < 1e-10


def test_pure_sine():
    D = 5.0
    t = grid(D, 64)
    spec = coefficients(np.sin(2 * np.pi * t / D), D, 8)
    assert spec.b[1] == pytest.approx(1.0, abs=1e-10)
    others = np.concatenate([spec.a, spec.b[2:]])
    assert np.abs(others).max() < 1e-10


def test_third_harmonic_with_offset():
    D = 2.0
    t = grid(D, 128)
    v = np.cos(3 * 2 * np.pi * t / D) + 0.5
    spec = coefficients(v, D, 8)
    assert spec.a[0] == pytest.approx(1.0, abs=1e-10)
    assert spec.a[3] == pytest.approx(1.0, abs=1e-10)
    assert abs(spec.b[3]) < 1e-10


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        coefficients(np.zeros(16), 1.0, 8)


def test_parseval_sine():
    D = 2 * np.pi
    t = grid(D, 128)
    v = np.sin(2 * np.pi * t / D)
    spec = coefficients(v, D, 8)
    # int v^2 = D / 2
    assert parseval_residual(v, spec) < 1e-8


def test_parseval_constant():
    D = 4.0
    v = np.full(64, -2.2)
    spec = coefficients(v, D, 4)
    assert parseval_residual(v, spec) < 1e-10


def test_parseval_random_trig_polynomial():
    rng = np.random.default_rng(7)
    D = 3.3
    t = grid(D, 256)
    a = rng.standard_normal(6)
    b = rng.standard_normal(6)
    v = a[0] / 2 + sum(
        a[k] * np.cos(k * 2 * np.pi * t / D) + b[k] * np.sin(k * 2 * np.pi * t / D)
        for k in range(1, 6)
    )
    spec = coefficients(v, D, 8)
    # analytic integral of the trig polynomial
    exact = D / 2 * (a[0] ** 2 / 2 + np.sum(a[1:] ** 2 + b[1:] ** 2))
    assert abs(D * np.mean(v**2) - exact) < 1e-8
    assert parseval_residual(v, spec) < 1e-8


def test_coefficient_recovery_spectral_accuracy():
    rng = np.random.default_rng(8)
    D = 1.0
    a = rng.standard_normal(9)
    b = rng.standard_normal(9)
    for N in (64, 128):
        t = grid(D, N)
        v = a[0] / 2 + sum(
            a[k] * np.cos(k * 2 * np.pi * t / D) + b[k] * np.sin(k * 2 * np.pi * t / D)
            for k in range(1, 9)
        )
        spec = coefficients(v, D, 8)
        assert np.abs(spec.a - a).max() < 1e-10
        assert np.abs(spec.b[1:] - b[1:]).max() < 1e-10


def test_nulling_check_examples():
    D = 2 * np.pi
    t = grid(D, 128)
    ell = 3
    ok, worst = nulling_check(coefficients(np.sin((ell + 1) * t), D, 8), ell, 1e-12)
    assert ok and worst < 1e-12
    ok, worst = nulling_check(coefficients(np.ones_like(t), D, 8), ell, 1.0)
    assert not ok and worst == pytest.approx(2.0, abs=1e-12)


def test_nulling_check_needs_resolution():
    spec = coefficients(np.zeros(64), 1.0, 4)
    with pytest.raises(InsufficientSamples):
        nulling_check(spec, 6, 1e-3)


def test_l2_bound_formula():
    D = 2 * np.pi
    assert l2_bound(0.0, D, 3) == 0.0
    vals = [l2_bound(1.0, D, ell) for ell in range(6)]
    assert all(v1 > v2 for v1, v2 in zip(vals, vals[1:]))  # decreasing in ell
    assert vals[0] == pytest.approx(1.0, abs=1e-14)  # (2pi/D) = 1


def test_l2_bound_holds_with_slack_two():
    # v = (1/(ell+1)) (D / 2 pi) sin((ell+1) 2 pi t / D): max |dv/dt| = 1 and
    # the mean square equals half the bound
    D, ell = 2 * np.pi, 2
    t = grid(D, 256)
    w1 = 2 * np.pi / D
    v = np.sin((ell + 1) * w1 * t) / ((ell + 1) * w1)
    mean_square = np.mean(v**2)
    bound = l2_bound(1.0, D, ell)
    assert mean_square <= bound
    assert mean_square == pytest.approx(bound / 2, rel=1e-12)
