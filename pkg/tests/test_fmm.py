"""Fast-marching redistancing accuracy and contracts."""

import numpy as np
import pytest

from cortexreg.errors import ValidationError
from cortexreg.fields import BinaryMask3
from cortexreg.fmm import _solve_quadratic, redistance_fmm


def grid(n, h):
    x = np.arange(n) * h
    return np.meshgrid(x, x, x, indexing="ij")


class TestQuadraticUpdate:
    def test_one_sided(self):
        assert _solve_quadratic([1.0], 0.5) == pytest.approx(1.5)

    def test_two_sided_symmetric(self):
        # (t-a)^2 + (t-a)^2 = h^2  =>  t = a + h/sqrt(2)
        t = _solve_quadratic([1.0, 1.0], 1.0)
        assert t == pytest.approx(1.0 + 1.0 / np.sqrt(2.0))

    def test_three_sided_symmetric(self):
        t = _solve_quadratic([0.0, 0.0, 0.0], 1.0)
        assert t == pytest.approx(1.0 / np.sqrt(3.0))

    def test_falls_back_when_neighbor_too_large(self):
        # second value above the one-sided update cannot be upwind
        assert _solve_quadratic([1.0, 10.0], 0.5) == pytest.approx(1.5)


class TestRedistance:
    def test_plane_is_exact(self):
        # flat interface: per-axis update chain is exact at every voxel
        n, h = 24, 1.0 / 23
        _, _, zz = grid(n, h)
        mask = BinaryMask3(zz < 0.5 * h * (n - 1) + 0.25 * h,
                           spacing=np.full(3, h))
        sdf = redistance_fmm(mask, band_width=8.0)
        z0 = zz[mask.values].max() + h / 2.0
        want = np.clip(zz - z0, -8 * h, 8 * h)
        assert np.max(np.abs(sdf.values - want)) <= 1e-10

    def test_sphere_accuracy(self):
        # frozen: first-order scheme reaches ~0.64h on this configuration
        n, h = 65, 1.0 / 64
        xx, yy, zz = grid(n, h)
        r = np.sqrt((xx - 0.5) ** 2 + (yy - 0.5) ** 2 + (zz - 0.5) ** 2)
        mask = BinaryMask3(r < 0.3, spacing=np.full(3, h))
        sdf = redistance_fmm(mask, band_width=12.0)
        exact = r - 0.3
        band = np.abs(exact) <= 10.0 * h
        err = np.max(np.abs(sdf.values[band] - exact[band]))
        assert err <= 0.8 * h

    def test_sign_convention(self):
        n, h = 17, 1.0 / 16
        xx, yy, zz = grid(n, h)
        r = np.sqrt((xx - 0.5) ** 2 + (yy - 0.5) ** 2 + (zz - 0.5) ** 2)
        mask = BinaryMask3(r < 0.3, spacing=np.full(3, h))
        sdf = redistance_fmm(mask)
        assert np.all(sdf.values[mask.values] < 0)
        assert np.all(sdf.values[~mask.values] > 0)

    def test_band_clamp(self):
        n, h = 33, 1.0 / 32
        _, _, zz = grid(n, h)
        mask = BinaryMask3(zz < 0.1, spacing=np.full(3, h))
        w = 5.0
        sdf = redistance_fmm(mask, band_width=w)
        assert np.max(np.abs(sdf.values)) <= w * h + 1e-12

    def test_all_inside_raises(self):
        with pytest.raises(ValidationError):
            redistance_fmm(BinaryMask3(np.ones((4, 4, 4), dtype=bool)))

    def test_all_outside_raises(self):
        with pytest.raises(ValidationError):
            redistance_fmm(BinaryMask3(np.zeros((4, 4, 4), dtype=bool)))

    def test_deterministic(self):
        n, h = 17, 1.0 / 16
        xx, yy, zz = grid(n, h)
        mask = BinaryMask3((xx - 0.4) ** 2 + (yy - 0.5) ** 2 + (zz - 0.6) ** 2
                           < 0.09, spacing=np.full(3, h))
        a = redistance_fmm(mask)
        b = redistance_fmm(mask)
        assert np.array_equal(a.values, b.values)
