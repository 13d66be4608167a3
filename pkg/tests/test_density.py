from math import lgamma

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroflow.density import (atomic, constant_block, evaluate_density, j_n, log_jpd_affine, log_jpd_green,
                              log_zhat_sequence, rate_n)
from zeroflow.ensemble import Ensemble, preset, reference_from_descriptor
from zeroflow.errors import DiagonalError, DomainError
from zeroflow.geometry import PointSet
from zeroflow.measures import potential

_ENS = {}


def ens(name, N):
    if (name, N) not in _ENS:
        m, nu = preset(name, N)
        _ENS[name, N] = (Ensemble.build(m, nu, N), m.green_constant())
    return _ENS[name, N]


def random_config(rng, N, scale=0.8):
    return (rng.standard_normal(N) + 1j * rng.standard_normal(N)) * scale


def test_fs_single_zero_density():
    # a random linear section has its zero distributed by the FS area form
    e, gc = ens("fs", 1)
    for z in (0.0, 0.7 - 0.2j, 5.0):
        assert log_jpd_affine(e, e.metric, e.nu, [z]) == pytest.approx(-2 * np.log1p(abs(z) ** 2), abs=1e-10)


def test_kh_single_zero_at_origin():
    e, gc = ens("kh", 1)
    assert log_jpd_affine(e, e.metric, e.nu, [0.0]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("name", ["fs", "kh"])
@pytest.mark.parametrize("N", [2, 3, 5])
def test_green_form_equals_affine_form(name, N):
    e, gc = ens(name, N)
    rng = np.random.default_rng(N)
    for _ in range(20):
        d = evaluate_density(e, gc, random_config(rng, N))
        assert d.rel_diff < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(4)), st.integers(0, 1000))
def test_permutation_invariance(perm, seed):
    e, gc = ens("kh", 4)
    z = random_config(np.random.default_rng(seed), 4)
    a = log_jpd_affine(e, e.metric, e.nu, z)
    b = log_jpd_affine(e, e.metric, e.nu, z[list(perm)])
    assert a == pytest.approx(b, abs=1e-10)
    c = log_jpd_green(e.metric, gc, e.nu, z[list(perm)])
    assert c == pytest.approx(log_jpd_green(e.metric, gc, e.nu, z), abs=1e-10)


@pytest.mark.parametrize("name", ["fs", "kh"])
def test_rotation_invariance(name):
    e, gc = ens(name, 3)
    z = np.array([0.3 + 0.1j, -0.5j, 1.4])
    rot = z * np.exp(0.7j)
    assert log_jpd_affine(e, e.metric, e.nu, rot) == pytest.approx(log_jpd_affine(e, e.metric, e.nu, z), abs=1e-9)


def test_fs_inversion_invariance():
    # z -> 1/z is an FS isometry; the affine density picks up the Jacobian |z|^-4 per root
    e, gc = ens("fs", 3)
    z = np.array([0.3 + 0.1j, -0.5j, 1.4])
    a = log_jpd_affine(e, e.metric, e.nu, z)
    b = log_jpd_affine(e, e.metric, e.nu, 1 / z)
    assert b == pytest.approx(a + 4 * np.sum(np.log(np.abs(z))), abs=1e-9)


def test_chart_one_green_form():
    e, gc = ens("fs", 3)
    z = np.array([0.3 + 0.1j, -2.5j, 1.4])
    c = constant_block(e.logdetA, 3, gc.E)
    g0 = log_jpd_green(e.metric, gc, e.nu, z, c)
    w = 1 / z
    g1 = log_jpd_green(e.metric, gc, e.nu, PointSet(1, w), c, chart=1)
    assert g1 == pytest.approx(g0 - 4 * np.sum(np.log(np.abs(w))), abs=1e-10)


def test_coalescence():
    e, gc = ens("kh", 3)
    z = np.array([0.2, 0.2, -0.4j])
    assert log_jpd_affine(e, e.metric, e.nu, z) == -np.inf
    with pytest.raises(DiagonalError):
        log_jpd_green(e.metric, gc, e.nu, z)
    with pytest.raises(DomainError):
        log_jpd_affine(e, e.metric, e.nu, PointSet.from_affine([0.2, np.inf, 1.0]))
    with pytest.raises(ValueError):
        log_jpd_affine(e, e.metric, e.nu, [0.1, 0.2])


@pytest.mark.parametrize("name", ["fs", "kh"])
def test_rate_identity(name):
    N = 4
    e, gc = ens(name, N)
    rng = np.random.default_rng(5)
    for _ in range(10):
        z = random_config(rng, N)
        d = evaluate_density(e, gc, z)
        r = rate_n(e.metric, gc, e.nu, z)
        lhs = -(d.log_green - d.constant + 2 * np.sum(e.metric.phi(PointSet.from_affine(z)))) / N ** 2
        assert lhs == pytest.approx(r.I_N, abs=1e-10)


@pytest.mark.parametrize("name", ["fs", "kh"])
def test_j_n_bounds(name):
    N = 20
    e, gc = ens(name, N)
    rng = np.random.default_rng(9)
    z = random_config(rng, N, 1.0)
    J = j_n(e.metric, gc, e.nu, z)
    mu = atomic(z)
    U_nu = potential(e.metric, gc, mu, e.nu.nodes)
    assert J <= U_nu.max() + 1e-12
    # Bernstein-Markov with Bergman density N + 1 on K
    U_K = potential(e.metric, gc, mu, e.nu.K.nodes)
    assert J >= U_K.max() - np.log(N + 1) / N - 1e-10
    assert j_n(e.metric, gc, e.nu, z, 2 * N) >= J - 1e-14


def test_kh_roots_of_unity_closed_form():
    m, nu = preset("kh", 200)
    gc = m.green_constant()
    E = gc.E
    prev = None
    for N in (5, 20, 80, 200):
        z = np.exp(2j * np.pi * np.arange(N) / N)
        r = rate_n(m, gc, nu, z)
        # sum_{i != j} log|z_i - z_j| = N log N and the mean of |z^N - 1|^2 over nu is 2
        E_N = (2 * N * np.log(N) + N * (N - 1) * E) / N ** 2
        J = E + np.log(2) / N
        assert r.E_N == pytest.approx(E_N, abs=1e-11)
        assert r.J_N == pytest.approx(J, abs=1e-11)
        assert r.I_N == pytest.approx(-E_N / 2 + (N + 1) / N * J, abs=1e-11)
        gap = abs(r.I_N - E / 2)
        if prev is not None:
            assert gap < prev
        prev = gap


def test_kh_normalizing_constant_closed_form():
    m, nu = preset("kh", 100)
    gc = m.green_constant()
    seq = log_zhat_sequence(m, nu, [10, 20, 40])
    for N, v in seq:
        assert v == pytest.approx(-(0.5 * N * N + 1.5 * N) * gc.E / N ** 2, abs=1e-10)


def test_fs_normalizing_constant_closed_form(fs, fs_gc):
    seq = log_zhat_sequence(fs, lambda N: reference_from_descriptor("fs_area", N), [5, 10], gc=fs_gc)
    for N, v in seq:
        logdetG = sum(lgamma(j + 1) + lgamma(N - j + 1) - lgamma(N + 2) for j in range(N + 1))
        expected = (-logdetG - (0.5 * N * N + 1.5 * N) * fs_gc.E) / N ** 2
        assert v == pytest.approx(expected, abs=1e-9)


def test_normalizing_constant_truncates_on_failure(kh):
    from zeroflow.ensemble import uniform_circle
    with pytest.warns(Warning, match="truncated"):
        seq = log_zhat_sequence(kh, uniform_circle(8), [3, 6, 12])
    assert [N for N, _ in seq] == [3, 6]
