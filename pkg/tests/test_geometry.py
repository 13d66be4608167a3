import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from zeroflow.errors import DiagonalError, DomainError, ResolutionError, SmoothnessError
from zeroflow.geometry import (Metric, PointSet, SpherePoint, chart_partition, chordal, compute_green_constant,
                               curvature_density, fs_nodes, green, green_average, green_truncated,
                               metric_from_descriptor, phi, smooth_step, sphere_quadrature)

finite = st.floats(-30, 30, allow_nan=False)
cplx = st.builds(complex, finite, finite)


def radial_integral(f, t1=None, t2=None):
    pts = [p for p in (t1, t2) if p is not None]
    return quad(f, -40, 40, points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-13)[0]


# ----------------------------------------------------------------- points and charts


def test_chart_canonical_form():
    p = PointSet.from_affine([0.5, 2.0, np.inf, 1.0])
    assert list(p.chart) == [0, 1, 1, 0]
    assert np.allclose(p.coord, [0.5, 0.5, 0.0, 1.0])
    assert p.at_infinity.tolist() == [False, False, True, False]


def test_sphere_point_equality_across_charts():
    assert SpherePoint(0, 2.0) == SpherePoint(1, 0.5)
    assert SpherePoint(0, 0.0) != SpherePoint(1, 0.0)


def test_xyz_south_pole_is_origin():
    X = PointSet.from_affine([0.0, np.inf, 1.0]).xyz()
    assert np.allclose(X, [[0, 0, -1], [0, 0, 1], [1, 0, 0]])


@given(cplx, cplx)
def test_chordal_symmetric_and_bounded(a, b):
    d1, d2 = chordal(a, b)[0], chordal(b, a)[0]
    assert d1 == pytest.approx(d2, abs=1e-15)
    assert 0 <= d1 <= 1 + 1e-15


@given(cplx, cplx)
def test_chordal_matches_euclidean_embedding(a, b):
    X = PointSet.from_affine([a, b]).xyz()
    assert chordal(a, b)[0] == pytest.approx(0.5 * np.linalg.norm(X[0] - X[1]), abs=1e-12)


@given(cplx)
def test_xyz_round_trip(a):
    p = PointSet.from_affine(a)
    q = PointSet.from_xyz(p.xyz())
    assert chordal(p, q)[0] < 1e-12


def test_chordal_antipodes():
    assert chordal(0.0, np.inf)[0] == 1.0
    assert chordal(1.0, -1.0)[0] == pytest.approx(1.0)


def test_smooth_step_symmetry():
    x = np.linspace(-1.2, 1.2, 41)
    assert np.allclose(smooth_step(x) + smooth_step(-x), 1.0)
    assert smooth_step(-1.0) == 0.0 and smooth_step(1.0) == 1.0


@given(st.floats(0.05, 20.0))
def test_partition_of_unity(r):
    assert chart_partition(r) + chart_partition(1 / r) == pytest.approx(1.0, abs=1e-14)


# ----------------------------------------------------------------- metrics and curvature


def test_fs_density_at_origin(fs):
    assert curvature_density(fs, SpherePoint(0, 0.0)) == pytest.approx(1 / np.pi, rel=1e-14)


def test_fs_density_matches_finite_differences():
    m = Metric(lambda c, u: 0.0 * np.abs(u), name="zero-fd")
    z = np.array([0.0, 0.3 + 0.4j, 0.9j])
    assert np.allclose(m.curvature_density(z), 1 / (np.pi * (1 + np.abs(z) ** 2) ** 2), rtol=1e-6)


def test_bump_density_ratio(bump):
    z = np.array([0.0, 0.5, -0.7j, 0.9 + 0.2j])
    X = PointSet.from_affine(z).xyz()
    assert np.allclose(bump.density_ratio(z), 1 - 0.1 * X[:, 0], atol=1e-6)


def test_kh_flat_potential_vanishes_on_disk(kh):
    z = np.array([0.0, 0.5, 1.0, 1.2j, -1.24])
    assert np.allclose(kh.phi(z), 0.0, atol=1e-14)


def test_kh_analytic_density_matches_finite_differences(kh):
    fd = Metric(kh.perturbation.__call__, name="kh-fd")
    z = np.array([1.3, 1.8j, -2.5 + 0.5j, 3.0])
    assert np.allclose(fd.density_ratio(z), kh.density_ratio(z), atol=2e-6)


def test_kh_density_is_probability(kh):
    f = lambda t: float(kh.density_ratio(PointSet(0, np.exp(t)))[0]) / (2 * np.cosh(t) ** 2)
    p = kh.perturbation.profile
    assert radial_integral(f, p.t1, p.t2) == pytest.approx(1.0, abs=1e-10)


def test_phi_chart_relation(bump):
    z = np.array([0.3 + 0.2j, 2.0 - 1.0j])
    p = PointSet.from_affine(z)
    assert np.allclose(bump.phi(p, 1) - bump.phi(p, 0), -np.log(np.abs(z) ** 2))


def test_phi_pole_raises(fs):
    with pytest.raises(DomainError):
        phi(fs, SpherePoint(1, 0.0), 0)


def test_nonsmooth_metric_is_rejected():
    m = Metric(lambda c, u: 0.3 * np.abs(np.real(u)), name="kink")
    with pytest.raises(SmoothnessError):
        m.density_ratio(np.array([0.0, 1e-4]))


def test_grid_metric_descriptor_round_trip():
    th = np.linspace(0.1, np.pi - 0.1, 12)
    lon = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    vals = 0.05 * np.cos(th)[:, None] * np.ones(len(lon))
    m = metric_from_descriptor({"kind": "grid", "theta": th.tolist(), "lon": lon.tolist(), "values": vals.tolist()})
    assert m.Phi(np.array([0.2 + 0.1j])).shape == (1,)
    with pytest.raises(ValueError):
        metric_from_descriptor({"kind": "nope"})


# ----------------------------------------------------------------- quadrature


def test_fs_quadrature_moments():
    errs = []
    for res in (64, 128, 256):
        q = sphere_quadrature(Metric(None), res)
        X = q.nodes.xyz()
        # second moments of the uniform sphere measure are 1/3; odd moments vanish
        errs.append(max(abs(q.raw_mass - 1), *[abs(q.integrate(X[:, k] ** 2) - 1 / 3) for k in range(3)]))
        assert abs(q.integrate(X[:, 2] ** 3)) < 1e-13
    assert errs[0] < 1e-7 and errs[2] < 1e-12
    assert errs[0] > errs[1] > errs[2]


def test_fs_nodes_weights_positive():
    _, w, _, _ = fs_nodes(32, 16)
    assert np.all(w > 0)


def test_kh_quadrature_drops_flat_region(kh):
    q = kh.quadrature(64)
    assert np.all(q.weights > 0)
    assert np.all(np.abs(q.nodes.affine()) > 1.25 - 1e-9)


# ----------------------------------------------------------------- Green function


def test_fs_green_constant_oracle(fs_gc):
    # -int 2 log[z, w] over the uniform sphere: X.Y = t is uniform on [-1, 1]
    oracle = -quad(lambda t: 0.5 * np.log((1 - t) / 2), -1, 1)[0]
    assert oracle == pytest.approx(1.0, abs=1e-12)
    assert fs_gc.E == pytest.approx(oracle, abs=1e-10)
    assert fs_gc.C_G >= fs_gc.E


def test_bump_green_constant_closed_form(bump_gc):
    assert bump_gc.E == pytest.approx(1 - 0.01 / 6, abs=1e-10)


def test_kh_green_constant_radial_oracle(kh, kh_gc):
    # E = 1 + int Phi omega_FS + int Phi omega_h, evaluated as one-dimensional integrals in log|z|
    p = kh.perturbation.profile
    Phi = lambda t: float(p(np.array([t]))[0])
    fsd = lambda t: 1 / (2 * np.cosh(t) ** 2)
    dens = lambda t: float(kh.density_ratio(PointSet(0, np.exp(t)))[0])
    oracle = 1 + radial_integral(lambda t: Phi(t) * fsd(t), p.t1, p.t2) \
        + radial_integral(lambda t: Phi(t) * fsd(t) * dens(t), p.t1, p.t2)
    assert kh_gc.E == pytest.approx(oracle, abs=1e-6)
    assert kh_gc.E == pytest.approx(-1.365752, abs=1e-5)


@pytest.mark.parametrize("z", [0.2 + 0.1j, -3.0 + 0.5j, np.inf, 1.0, 0.8j])
def test_green_average_vanishes_bump(bump, bump_gc, z):
    assert abs(green_average(bump, bump_gc, z)) < 1e-7


_BUMP = metric_from_descriptor({"kind": "bump"})
_BUMP_GC = _BUMP.green_constant(32)


@settings(max_examples=50, deadline=None)
@given(cplx, cplx)
def test_green_symmetric(a, b):
    g1, g2 = green(_BUMP, _BUMP_GC, a, b)[0], green(_BUMP, _BUMP_GC, b, a)[0]
    assert g1 == g2 or abs(g1 - g2) < 1e-12


def test_green_chart_independent(bump, bump_gc):
    z, w = 0.4 - 2.0j, 3.0 + 1.0j
    a = green(bump, bump_gc, SpherePoint(0, z), SpherePoint(0, w))
    b = green(bump, bump_gc, SpherePoint(1, 1 / z), SpherePoint(1, 1 / w))
    assert a == pytest.approx(b, abs=1e-13)


def test_green_bounded_by_C_G(bump, bump_gc, rng):
    z = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    w = rng.standard_normal(200) * 3 + 1j * rng.standard_normal(200)
    assert np.all(green(bump, bump_gc, z, w) <= bump_gc.C_G)


def test_green_diagonal(fs, fs_gc):
    assert green(fs, fs_gc, 0.3, 0.3)[0] == -np.inf
    with pytest.raises(DiagonalError):
        green(fs, fs_gc, 0.3, 0.3, strict=True)
    assert green_truncated(fs, fs_gc, 0.3, 0.3, 50.0)[0] == -50.0


def test_resolution_error_on_coarse_quadrature(kh):
    with pytest.raises(ResolutionError):
        compute_green_constant(kh, kh.quadrature(16), tol=1e-12)
