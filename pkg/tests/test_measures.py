import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from zeroflow import cells as C
from zeroflow.errors import CollisionWarning, DiagonalError
from zeroflow.geometry import fubini_study, metric_from_descriptor
from zeroflow.measures import (AtomicMeasure, GridMeasure, energy_form_distance, green_energy, green_matrix,
                               log_energy, potential, potential_on, rate, rate_local, sup_potential)

_FS = fubini_study()
_FS_GC = _FS.green_constant()
_BUMP = metric_from_descriptor({"kind": "bump", "amplitude": 0.1})
_BUMP_GC = _BUMP.green_constant()
_GRID = C.sphere_grid(16)
_G_FS = green_matrix(_FS, _FS_GC, _GRID)
_G_BUMP = green_matrix(_BUMP, _BUMP_GC, _GRID)
_K = C.circle(1.0, 64)
n_cells = len(_GRID)

weights = arrays(np.float64, n_cells, elements=st.floats(0, 1)).filter(lambda w: w.sum() > 1e-3)


def prob(w):
    return w / w.sum()


@settings(max_examples=60, deadline=None)
@given(weights, weights)
def test_energy_form_negative_on_mass_zero(a, b):
    d = prob(a) - prob(b)
    assert d @ _G_BUMP @ d <= 1e-12


@settings(max_examples=60, deadline=None)
@given(weights, weights)
def test_distance_metric_independent(a, b):
    d = prob(a) - prob(b)
    assert d @ _G_FS @ d == pytest.approx(d @ _G_BUMP @ d, abs=1e-11)


@settings(max_examples=30, deadline=None)
@given(weights, weights, st.floats(0, 1))
def test_rate_is_convex(a, b, t):
    mu, nu = GridMeasure(_GRID, prob(a)), GridMeasure(_GRID, prob(b))
    I = lambda m: rate(_BUMP, _BUMP_GC, m, _K, 0.0).I
    assert I(mu.mix(nu, t)) <= t * I(mu) + (1 - t) * I(nu) + 1e-10


def test_uniform_circle_energies(kh, kh_gc, fs, fs_gc):
    mu = GridMeasure.uniform(C.circle(1.0, 256))
    # Phi vanishes on the unit circle for FS; the flat preset has phi = 0 there
    assert green_energy(fs, fs_gc, mu) == pytest.approx(fs_gc.E - 2 * np.log(2), abs=1e-11)
    assert green_energy(kh, kh_gc, mu) == pytest.approx(kh_gc.E, abs=1e-11)
    assert log_energy(mu) == pytest.approx(0.0, abs=1e-12)
    assert log_energy(GridMeasure.uniform(C.circle(0.5, 256))) == pytest.approx(np.log(0.5), abs=1e-12)


@pytest.mark.parametrize("which", ["fs", "kh"])
def test_rate_local_offset(which, kh, kh_gc, fs, fs_gc):
    metric, gc = (fs, fs_gc) if which == "fs" else (kh, kh_gc)
    K = C.circle(1.0, 128)
    rng = np.random.default_rng(3)
    mu = GridMeasure(K, prob(rng.uniform(size=128)))
    assert rate_local(metric, mu, K) - rate(metric, gc, mu, K, 0.0).I == pytest.approx(-gc.E / 2, abs=1e-10)


def test_rate_of_equilibrium_is_zero(kh, kh_gc, kh_eq, circle512):
    R = rate(kh, kh_gc, kh_eq.measure, circle512, kh_eq.E0)
    assert abs(R.I_tilde) < 1e-10
    assert R.I == pytest.approx(R.energy_term + R.sup_term)


def test_potential_on_matches_probes_for_smooth_targets(fs, fs_gc):
    mu = GridMeasure.uniform(C.circle(1.0, 256))
    K = C.circle(3.0, 64)
    U_cells = potential_on(fs, fs_gc, mu, K)
    U_nodes = potential(fs, fs_gc, mu, K.nodes)
    # potential is constant on the concentric circle
    assert np.allclose(U_cells, U_nodes, atol=1e-9)
    assert sup_potential(fs, fs_gc, mu, K) == pytest.approx(U_cells.max())


def test_grid_measure_validation():
    with pytest.raises(ValueError):
        GridMeasure(_K, np.ones(64))
    with pytest.raises(ValueError):
        GridMeasure(_K, -np.ones(64) / 64)
    assert GridMeasure(_K, np.ones(64), normalize=True).weights.sum() == pytest.approx(1.0)


def test_atomic_energy_off_diagonal(fs, fs_gc):
    z = np.array([0.0, 1.0, -1.0, 1j])
    mu = AtomicMeasure(z)
    d = np.abs(z[:, None] - z[None, :]) / np.sqrt((1 + np.abs(z[:, None]) ** 2) * (1 + np.abs(z) ** 2))
    np.fill_diagonal(d, 1.0)
    G = 2 * np.log(d)
    off = G + fs_gc.E * (1 - np.eye(4))
    assert green_energy(fs, fs_gc, mu) == pytest.approx(off.sum() / 16, abs=1e-13)


def test_atomic_coincidence(fs, fs_gc):
    mu = AtomicMeasure([0.5, 0.5, 1.0])
    assert np.isnan(green_energy(fs, fs_gc, mu))
    with pytest.raises(DiagonalError):
        green_energy(fs, fs_gc, mu, strict=True)
    assert np.isfinite(green_energy(fs, fs_gc, mu, M=30.0))
    with pytest.warns(CollisionWarning):
        potential(fs, fs_gc, mu, np.array([0.5]))


def test_distance_self_zero_and_symmetric(bump, bump_gc):
    rng = np.random.default_rng(7)
    mu = GridMeasure(_GRID, prob(rng.uniform(size=n_cells)))
    nu = GridMeasure(_GRID, prob(rng.uniform(size=n_cells)))
    assert energy_form_distance(bump, bump_gc, mu, mu) == 0.0
    assert energy_form_distance(bump, bump_gc, mu, nu) == pytest.approx(
        energy_form_distance(bump, bump_gc, nu, mu), abs=1e-14)


def test_distance_mixed_atomic_grid(fs, fs_gc):
    # atoms far from the circle: mixed distance equals the expanded quadratic form
    circ = GridMeasure.uniform(C.circle(1.0, 256))
    at = AtomicMeasure(np.array([3.0, -3.0j, 0.1]))
    d = energy_form_distance(fs, fs_gc, at, circ)
    expected = green_energy(fs, fs_gc, at) - 2 * potential(fs, fs_gc, circ, at.atoms).mean() \
        + green_energy(fs, fs_gc, circ)
    assert d == pytest.approx(expected, abs=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert energy_form_distance(fs, fs_gc, circ, at) == pytest.approx(d, abs=1e-12)
