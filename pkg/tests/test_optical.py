"""Normal fields, polynomial shading, shadows, and table persistence."""

import logging

import numpy as np
import pytest

import tacsim.geometry as geo
import tacsim.optical as op
import tacsim.tactile as tac
from tacsim.errors import CalibrationError, InvalidArgumentError, MeshFormatError

PITCH = 2.5e-5
SMALL = tac.SensorConfig(
    image_size=(120, 160), sensing_area=(160 * PITCH, 120 * PITCH)
)
LIGHTS = op.default_lighting()


def _flat_normals(h, w):
    n = np.zeros((h, w, 3))
    n[..., 2] = 1.0
    return n


def _overhead_white(ambient=0.05):
    dirs = np.array([[0.0, 0.0, 1.0]] * 3)
    cols = np.full((3, 3), 1.0 / 3.0)
    return op.LightingModel(dirs, cols, np.full(3, ambient))


class TestLighting:
    def test_default_unit_directions(self):
        norms = np.linalg.norm(LIGHTS.directions, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-12)

    def test_directions_normalized_on_construction(self):
        m = op.LightingModel(
            np.array([[0, 0, 2.0], [0, 3.0, 0], [4.0, 0, 0]]),
            np.eye(3),
            np.zeros(3),
        )
        assert np.allclose(np.linalg.norm(m.directions, axis=1), 1.0)

    def test_invalid_lighting(self):
        with pytest.raises(InvalidArgumentError):
            op.LightingModel(np.zeros((3, 3)), np.eye(3), np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            op.LightingModel(np.eye(3), -np.eye(3), np.zeros(3))
        with pytest.raises(InvalidArgumentError):
            op.LightingModel(np.eye(2), np.eye(3), np.zeros(3))


class TestNormals:
    def test_constant_map_flat(self):
        n = op.normals_from(np.full((40, 50), 3e-3), PITCH)
        assert n.shape == (40, 50, 3)
        assert np.allclose(n, _flat_normals(40, 50), atol=1e-12)

    def test_unit_norm(self):
        rng = np.random.default_rng(2)
        n = op.normals_from(rng.random((30, 30)) * 1e-4, PITCH)
        assert np.abs(np.linalg.norm(n, axis=-1) - 1.0).max() < 1e-6

    def test_tilted_plane(self):
        theta = 0.2
        xs = (np.arange(60) + 0.5) * PITCH
        elev = np.tile(xs * np.tan(theta), (40, 1))
        n = op.normals_from(elev, PITCH)
        expected = np.array([-np.sin(theta), 0.0, np.cos(theta)])
        assert np.abs(n - expected).max() < 1e-6

    def test_hemisphere_matches_analytic(self):
        r = 64 * PITCH
        h = w = 200
        ys = (np.arange(h) + 0.5 - 0.5 * h) * PITCH
        xs = (np.arange(w) + 0.5 - 0.5 * w) * PITCH
        gx, gy = np.meshgrid(xs, ys)
        rho2 = gx * gx + gy * gy
        cap = np.sqrt(np.clip(r * r - rho2, 0.0, None))
        n = op.normals_from(cap, PITCH)
        analytic = np.stack([gx / r, gy / r, cap / r], axis=-1)
        mask = rho2 < (0.7 * r) ** 2
        dots = np.clip((n * analytic).sum(axis=-1)[mask], -1.0, 1.0)
        assert np.degrees(np.arccos(dots)).max() < 2.0

    def test_heightmap_sign_convention(self):
        rng = np.random.default_rng(4)
        elev = rng.random((24, 24)) * 1e-4
        from_raw = op.normals_from(elev, PITCH)
        hm = tac.HeightMap(4e-3 - elev, PITCH)
        assert np.allclose(op.normals_from(hm), from_raw, atol=1e-12)

    def test_raw_array_requires_pitch(self):
        with pytest.raises(InvalidArgumentError):
            op.normals_from(np.zeros((4, 4)))


class TestCalibrate:
    def test_rmse_below_threshold(self):
        table = op.calibrate(LIGHTS, SMALL)
        assert np.asarray(table.fit_rmse).max() < 0.05

    def test_flat_eval_matches_background_mean(self):
        table = op.calibrate(LIGHTS, SMALL)
        mean = table.background.reshape(-1, 3).mean(axis=0)
        assert np.abs(table.eval(0.0, 0.0) - mean).max() <= 1e-6

    def test_overhead_light_lambertian_monotone(self):
        table = op.calibrate(_overhead_white(), SMALL)
        center = table.eval(0.0, 0.0)
        for phi in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            tilted = table.eval(0.5 * np.cos(phi), 0.5 * np.sin(phi))
            assert (center > tilted).all()

    def test_ambient_only_constant(self):
        ambient = np.array([0.4, 0.45, 0.5])
        m = op.LightingModel(np.eye(3), np.zeros((3, 3)), ambient)
        table = op.calibrate(m, SMALL)
        assert np.abs(table.coeffs[:, 1:]).max() < 1e-6
        assert np.allclose(table.eval(0.0, 0.0), ambient, atol=1e-9)

    def test_channel_azimuth_separation(self):
        table = op.calibrate(LIGHTS, SMALL)
        phis = np.linspace(0, 2 * np.pi, 360, endpoint=False)
        sweep = table.eval(0.5 * np.cos(phis), 0.5 * np.sin(phis))
        peaks = sweep.argmax(axis=0)
        assert peaks[0] != peaks[1]
        assert peaks[1] != peaks[2]

    def test_degenerate_presses_raise(self):
        with pytest.raises(CalibrationError):
            op.calibrate(LIGHTS, SMALL, press_depths=(0.0,))

    def test_degree_exposed(self):
        table = op.calibrate(LIGHTS, SMALL, degree=3)
        assert table.coeffs.shape == (3, 10)


class TestShade:
    def test_flat_frame_reproduces_background(self):
        table = op.calibrate(LIGHTS, SMALL)
        out = op.shade(_flat_normals(120, 160), table)
        assert np.array_equal(out, table.background)

    def test_default_dimensions(self):
        table = op.calibrate(LIGHTS, tac.SensorConfig())
        out = op.shade(_flat_normals(480, 640), table)
        assert out.shape == (480, 640, 3)

    def test_locality(self):
        table = op.calibrate(LIGHTS, SMALL)
        n = _flat_normals(120, 160)
        base = op.shade(n, table)
        n2 = n.copy()
        n2[60, 80] = np.array([0.3, -0.2, np.sqrt(1 - 0.09 - 0.04)])
        out = op.shade(n2, table)
        diff = np.abs(out - base).sum(axis=2)
        assert diff[60, 80] > 0
        assert (diff > 0).sum() == 1

    def test_output_range(self):
        table = op.calibrate(LIGHTS, SMALL)
        rng = np.random.default_rng(6)
        t = rng.random((120, 160)) * 0.6
        phi = rng.random((120, 160)) * 2 * np.pi
        n = np.stack(
            [t * np.cos(phi), t * np.sin(phi), np.sqrt(1 - t * t)], axis=-1
        )
        out = op.shade(n, table)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_saturation_warning(self, caplog):
        bg = np.full((20, 20, 3), 0.9)
        coeffs = np.zeros((3, 6))
        coeffs[:, 0] = 0.9
        coeffs[:, 1] = 5.0
        table = op.PolyTable(coeffs, bg)
        n = _flat_normals(20, 20)
        n[..., 0] = 0.5
        n[..., 2] = np.sqrt(0.75)
        with caplog.at_level(logging.WARNING, logger="tacsim.optical"):
            op.shade(n, table)
        assert any("saturated" in r.message for r in caplog.records)

    def test_shape_mismatch_raises(self):
        table = op.calibrate(LIGHTS, SMALL)
        with pytest.raises(InvalidArgumentError):
            op.shade(_flat_normals(10, 10), table)

    def test_sphere_press_radial_symmetry(self):
        table = op.calibrate(LIGHTS, SMALL)
        ind = op._sphere_press_indentation((120, 160), PITCH, 4e-3, 4e-4)
        rgb = op.shade(op.normals_from(ind, PITCH), table)
        disk = np.sqrt(2 * 4e-3 * 4e-4 - 4e-4 ** 2)
        ring = 0.7 * disk / PITCH
        phis = np.linspace(0, 2 * np.pi, 256, endpoint=False)
        ii = np.round(60 + ring * np.sin(phis)).astype(int)
        jj = np.round(80 + ring * np.cos(phis)).astype(int)
        samples = rgb[ii, jj]  # (256, 3)
        # Remove the first two azimuthal harmonics carried by the lights.
        basis = np.stack(
            [
                np.ones_like(phis),
                np.cos(phis),
                np.sin(phis),
                np.cos(2 * phis),
                np.sin(2 * phis),
            ],
            axis=1,
        )
        for c in range(3):
            fit, *_ = np.linalg.lstsq(basis, samples[:, c], rcond=None)
            resid = samples[:, c] - basis @ fit
            assert resid.std() / samples[:, c].mean() < 0.10


class TestShadows:
    def _bumpy(self):
        vals = np.full((80, 120), 4e-3)
        vals[35:45, 55:65] = 1e-3  # tall ridge toward the camera
        return tac.HeightMap(vals, PITCH)

    def test_flat_map_identity(self):
        rng = np.random.default_rng(8)
        rgb = rng.random((40, 60, 3))
        hm = tac.HeightMap(np.full((40, 60), 4e-3), PITCH)
        out = op.add_shadows(rgb, hm, LIGHTS)
        assert np.array_equal(out, rgb)

    def test_factor_one_identity(self):
        rng = np.random.default_rng(9)
        rgb = rng.random((80, 120, 3))
        out = op.add_shadows(rgb, self._bumpy(), LIGHTS, factor=1.0)
        assert np.array_equal(out, rgb)

    def test_band_on_far_side_of_light(self):
        rgb = np.full((80, 120, 3), 0.5)
        light = op.LightingModel(
            np.array([[0.94, 0.0, 0.34]] * 3), np.eye(3), np.zeros(3)
        )
        out = op.add_shadows(rgb, self._bumpy(), light)
        darkened = (out < rgb - 1e-12).any(axis=2)
        assert darkened.any()
        cols = np.where(darkened.any(axis=0))[0]
        assert cols.max() < 55  # strictly on the -x side of the ridge

    def test_march_range_limit(self):
        rgb = np.full((80, 200, 3), 0.5)
        vals = np.full((80, 200), 4e-3)
        vals[35:45, 150:160] = 1e-3
        hm = tac.HeightMap(vals, PITCH)
        light = op.LightingModel(
            np.array([[0.94, 0.0, 0.34]] * 3), np.eye(3), np.zeros(3)
        )
        out = op.add_shadows(rgb, hm, light, max_steps=80)
        assert np.array_equal(out[:, :60], rgb[:, :60])

    def test_invalid_factor(self):
        with pytest.raises(InvalidArgumentError):
            op.add_shadows(np.zeros((4, 4, 3)), self._bumpy(), LIGHTS, factor=1.5)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        table = op.calibrate(LIGHTS, SMALL)
        jp, pp = str(tmp_path / "table.json"), str(tmp_path / "bg.png")
        op.save_polytable(table, jp, pp)
        back = op.load_polytable(jp, pp)
        assert back.degree == table.degree
        assert np.allclose(back.coeffs[:, 1:], table.coeffs[:, 1:], atol=1e-12)
        assert np.abs(back.background - table.background).max() <= 1.0 / 65535.0
        mean = back.background.reshape(-1, 3).mean(axis=0)
        assert np.abs(back.eval(0.0, 0.0) - mean).max() <= 1e-6
        out = op.shade(_flat_normals(*back.background.shape[:2]), back)
        assert np.array_equal(out, back.background)

    def test_missing_png_raises(self, tmp_path):
        table = op.calibrate(LIGHTS, SMALL)
        jp, pp = str(tmp_path / "t.json"), str(tmp_path / "bg.png")
        op.save_polytable(table, jp, pp)
        with pytest.raises(MeshFormatError):
            op.load_polytable(jp, str(tmp_path / "missing.png"))


class TestEmptyScenePipeline:
    def test_reproduces_background_bit_stably(self):
        table = op.calibrate(LIGHTS, SMALL)
        frames = []
        for _ in range(2):
            hm = tac.render_heightmap([], geo.Pose.identity(), SMALL)
            ind = tac.indentation_from(hm, SMALL)
            smoothed = tac.smooth_pyramid(ind)
            rgb = op.shade(op.normals_from(smoothed), table)
            rgb = op.add_shadows(rgb, hm, LIGHTS)
            frames.append(rgb)
        assert np.abs(frames[0] - table.background).max() <= 1e-6
        assert np.array_equal(frames[0], frames[1])
        assert np.array_equal(frames[0], table.background)
