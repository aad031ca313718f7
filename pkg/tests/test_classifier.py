"""Moment-shift crease classifier: analytic references and annotation I/O."""

import numpy as np
import pytest

from cortexreg.classifier import (Annotation, ClassifierParams, ball_quadrature,
                                  classify_points, classify_volume, g_beta,
                                  load_annotation, polyline_distance,
                                  rasterize_annotation, save_annotation,
                                  surface_classifier, zero_moment_shift)
from cortexreg.errors import ValidationError
from cortexreg.fields import ScalarField3
from cortexreg.surface import GraphSurface


def plane_sdf(n=49, z0=0.5):
    """Exact SDF of the half-space z <= z0 on [0,1]^3."""
    h = 1.0 / (n - 1)
    x = np.arange(n) * h
    _, _, zz = np.meshgrid(x, x, x, indexing="ij")
    return ScalarField3(zz - z0, spacing=np.full(3, h)), h


def wedge_sdf(n=49, c=0.5, gamma_deg=60.0):
    """Exact SDF of a concave crease: intersection of two half-spaces whose
    normals enclose gamma (gamma=60 gives a 120-degree dihedral groove)."""
    h = 1.0 / (n - 1)
    ax = np.arange(n) * h
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    g = np.radians(gamma_deg) / 2.0
    n1 = np.array([np.sin(g), 0.0, np.cos(g)])
    n2 = np.array([-np.sin(g), 0.0, np.cos(g)])
    p = np.stack([xx - c, yy - c, zz - c], axis=-1)
    d1, d2 = p @ n1, p @ n2
    cg = n1 @ n2
    inside = np.maximum(d1, d2)          # both negative inside
    # closest feature outside: one of the faces, else the crease line itself
    use1 = (d1 > 0) & (d2 - d1 * cg <= 0)
    use2 = (d2 > 0) & (d1 - d2 * cg <= 0)
    edge = np.sqrt(p[..., 0] ** 2 + p[..., 2] ** 2)
    outside = np.where(use1, d1, np.where(use2, d2, edge))
    d = np.where((d1 <= 0) & (d2 <= 0), inside, outside)
    return ScalarField3(d, spacing=np.full(3, h)), h


def corner_sdf(n=49, c=0.5):
    """Exact SDF of {x <= c, y <= c, z <= c}: a concave corner point."""
    h = 1.0 / (n - 1)
    ax = np.arange(n) * h
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    d3 = np.stack([xx - c, yy - c, zz - c], axis=-1)
    pos = np.maximum(d3, 0.0)
    outside = np.linalg.norm(pos, axis=-1)
    inside = d3.max(axis=-1)
    d = np.where((d3 > 0).any(axis=-1), outside, inside)
    return ScalarField3(d, spacing=np.full(3, h)), h


class TestGBeta:
    def test_monotone_decreasing(self):
        t = np.linspace(0, 2, 50)
        v = g_beta(t)
        assert v[0] == 1.0
        assert np.all(np.diff(v) < 0)

    def test_planar_reference_value(self):
        # ||M||/eps^2 = 1/5 on a flat interface => g = 1/(1 + 20/25)
        assert g_beta(0.2) == pytest.approx(1.0 / 1.8)


class TestBallQuadrature:
    def test_volume_converges_to_ball(self):
        eps = 1.0
        offsets, w = ball_quadrature(eps, 40)
        vol = w * len(offsets)
        assert vol == pytest.approx(4.0 / 3.0 * np.pi, rel=5e-3)

    def test_symmetric_under_negation(self):
        offsets, _ = ball_quadrature(0.5, 8)
        assert np.allclose(offsets.sum(axis=0), 0.0, atol=1e-12)


class TestMomentShift:
    def test_plane_ratio_and_classifier(self):
        # analytic: ||M||/eps^2 = 1/5, C = 0.5556 (frozen quadrature: 0.20198)
        sdf, h = plane_sdf()
        eps = 8 * h
        m = zero_moment_shift(sdf, np.array([0.5, 0.5, 0.5]), eps)
        ratio = np.linalg.norm(m) / eps ** 2
        assert ratio == pytest.approx(0.2, abs=0.01)
        c = classify_points(sdf, np.array([[0.5, 0.5, 0.5]]),
                            ClassifierParams(eps))[0]
        assert c == pytest.approx(1.0 / 1.8, abs=0.02)

    def test_moment_direction_is_interface_normal(self):
        sdf, h = plane_sdf()
        m = zero_moment_shift(sdf, np.array([0.5, 0.5, 0.5]), 8 * h)
        direction = m / np.linalg.norm(m)
        assert np.allclose(direction, [0, 0, 1], atol=1e-10)

    def test_crease_ordering(self):
        # creases shift the ball-averaged moment more than a flat interface
        eps_h = 8
        cp = None
        vals = []
        for make in (plane_sdf, wedge_sdf, corner_sdf):
            sdf, h = make()
            cp = ClassifierParams(eps_h * h)
            vals.append(classify_points(
                sdf, np.array([[0.5, 0.5, 0.5]]), cp)[0])
        c_plane, c_edge, c_corner = vals
        assert c_plane + 0.05 <= c_edge
        assert c_edge + 0.05 <= c_corner

    def test_rigid_invariance(self):
        # classifier depends only on ||M||: rotating the plane leaves C fixed
        n = 49
        h = 1.0 / (n - 1)
        ax = np.arange(n) * h
        xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
        nrm = np.array([1.0, 2.0, -1.0])
        nrm /= np.linalg.norm(nrm)
        d = (xx - 0.5) * nrm[0] + (yy - 0.5) * nrm[1] + (zz - 0.5) * nrm[2]
        tilted = ScalarField3(d, spacing=np.full(3, h))
        flat, _ = plane_sdf(n)
        cp = ClassifierParams(6 * h)
        c_t = classify_points(tilted, np.array([[0.5, 0.5, 0.5]]), cp)[0]
        c_f = classify_points(flat, np.array([[0.5, 0.5, 0.5]]), cp)[0]
        assert c_t == pytest.approx(c_f, abs=0.02)

    def test_eps_below_2h_rejected(self):
        sdf, h = plane_sdf(n=17)
        with pytest.raises(ValidationError):
            classify_points(sdf, np.array([[0.5, 0.5, 0.5]]),
                            ClassifierParams(1.5 * h))


class TestClassifyVolume:
    def test_band_and_range(self):
        sdf, h = plane_sdf(n=33)
        C = classify_volume(sdf, ClassifierParams(4 * h))
        assert np.all(C.values >= 0.0) and np.all(C.values <= 1.0)
        # outside the |d| <= 2h band the classifier is zero
        assert np.all(C.values[np.abs(sdf.values) > 2 * h] == 0.0)

    def test_mid_band_value_on_plane(self):
        sdf, h = plane_sdf(n=33)
        C = classify_volume(sdf, ClassifierParams(4 * h))
        mid = C.values[16, 16, :][np.abs(sdf.values[16, 16, :]) <= 0.5 * h]
        assert np.all(np.abs(mid - 1.0 / 1.8) <= 0.02)

    def test_eps_margin_zeroed(self):
        sdf, h = plane_sdf(n=33)
        eps = 4 * h
        C = classify_volume(sdf, ClassifierParams(eps))
        assert np.all(C.values[0, :, :] == 0.0)
        assert np.all(C.values[:, :, 0] == 0.0)


class TestSurfaceClassifier:
    def test_clamp_rescales_to_unit_interval(self):
        sdf, h = plane_sdf(n=33)
        C = classify_volume(sdf, ClassifierParams(4 * h))
        surf = GraphSurface(np.full((9, 9), 0.5), spacing=np.full(2, 1.0 / 8))
        f = surface_classifier(C, surf, 0.2, 0.5)
        assert np.all((f.values >= 0.0) & (f.values <= 1.0))

    def test_bad_clamp_rejected(self):
        sdf, h = plane_sdf(n=33)
        C = classify_volume(sdf, ClassifierParams(4 * h))
        surf = GraphSurface(np.zeros((5, 5)))
        with pytest.raises(ValidationError):
            surface_classifier(C, surf, 0.6, 0.4)


class TestAnnotation:
    def test_polyline_distance_point_cases(self):
        line = np.array([[0.0, 0.0], [1.0, 0.0]])
        pts = np.array([[0.5, 0.3],    # interior perpendicular
                        [-0.3, 0.4],   # beyond the first endpoint
                        [1.0, 0.0]])   # on the line
        d = polyline_distance(pts, [line])
        assert d[0] == pytest.approx(0.3)
        assert d[1] == pytest.approx(0.5)
        assert d[2] == pytest.approx(0.0)

    def test_rasterize_peak_on_centerline(self):
        ann = Annotation((np.array([[2.0, 1.0], [2.0, 6.0]]),), 1.5)
        img = rasterize_annotation(ann, (8, 8))
        assert img.values[2, 3] == pytest.approx(1.0)
        assert img.values.max() <= 1.0
        # one pixel off the centerline: exp(-1/(2 sigma^2))
        assert img.values[3, 3] == pytest.approx(np.exp(-1.0 / (2 * 1.5 ** 2)))

    def test_empty_annotation_warns_and_zeroes(self):
        with pytest.warns(UserWarning):
            img = rasterize_annotation(Annotation((), 2.0), (4, 4))
        assert np.all(img.values == 0.0)

    def test_round_trip(self, tmp_path):
        ann = Annotation((np.array([[0.5, 1.5], [2.0, 3.0], [4.0, 1.0]]),
                          np.array([[1.0, 1.0], [2.0, 2.0]])), 2.25)
        path = tmp_path / "ann.txt"
        save_annotation(ann, path)
        back = load_annotation(path)
        assert back.stroke_sigma == ann.stroke_sigma
        assert len(back.polylines) == 2
        for a, b in zip(back.polylines, ann.polylines):
            assert np.array_equal(a, b)

    def test_missing_sigma_rejected(self, tmp_path):
        path = tmp_path / "ann.txt"
        path.write_text("0,0 1,1\n")
        with pytest.raises(ValidationError):
            load_annotation(path)
