"""Contact centroid tracking and marker displacement distributions."""

import numpy as np
import pytest

import tacsim.geometry as geo
import tacsim.marker as mk
import tacsim.optical as op
import tacsim.tactile as tac
from tacsim.errors import InvalidArgumentError

PITCH = 2.5e-5
CFG = tac.SensorConfig()
PARAMS = mk.MarkerParams()


def _ind(values):
    return tac.IndentationMap(values, PITCH)


def _contact(cx=0.0, cy=0.0, depth=1e-3):
    return mk.LoadState((cx, cy), depth, (0.0, 0.0), 0.0, True)


class TestTypes:
    def test_rest_grid_shape_and_spacing(self):
        grid = mk.grid_rest_positions(CFG)
        assert grid.shape == (10, 10, 2)
        dx = np.diff(grid[0, :, 0])
        dy = np.diff(grid[:, 0, 1])
        assert np.allclose(dx, CFG.sensing_area[0] / 10)
        assert np.allclose(dy, CFG.sensing_area[1] / 10)
        assert np.abs(grid.reshape(-1, 2).mean(axis=0)).max() < 1e-12

    def test_load_state_gating(self):
        with pytest.raises(InvalidArgumentError):
            mk.LoadState((0, 0), 1e-3, (0, 0), 0.0, False)
        with pytest.raises(InvalidArgumentError):
            mk.LoadState((0, 0), -1e-3, (0, 0), 0.0, True)

    def test_params_validation(self):
        with pytest.raises(InvalidArgumentError):
            mk.MarkerParams(k_n=np.nan)
        with pytest.raises(InvalidArgumentError):
            mk.MarkerParams(lambda_s=0.0)

    def test_field_validation(self):
        with pytest.raises(InvalidArgumentError):
            mk.MarkerField(np.zeros((3, 3, 2)), np.zeros((3, 2, 2)))
        with pytest.raises(InvalidArgumentError):
            mk.MarkerField(np.zeros((3, 3, 2)), np.full((3, 3, 2), np.nan))


class TestContactCenter:
    def test_zero_map_no_contact(self):
        state = mk.contact_center(_ind(np.zeros((40, 60))))
        assert not state.in_contact
        assert state.max_indentation == 0.0
        assert state.contact_center == (0.0, 0.0)

    def test_below_threshold_no_contact(self):
        vals = np.full((20, 20), 4e-5)
        assert not mk.contact_center(_ind(vals)).in_contact

    def test_symmetric_press_centered(self):
        ind = op._sphere_press_indentation((120, 160), PITCH, 4e-3, 8e-4)
        state = mk.contact_center(_ind(ind))
        assert state.in_contact
        assert abs(state.contact_center[0]) <= PITCH
        assert abs(state.contact_center[1]) <= PITCH
        assert state.max_indentation == pytest.approx(8e-4, rel=1e-4)

    def test_two_pixel_weighted_centroid(self):
        vals = np.zeros((9, 9))
        vals[4, 2] = 1e-4
        vals[4, 6] = 3e-4
        state = mk.contact_center(_ind(vals))
        x1 = (2 + 0.5 - 4.5) * PITCH
        x2 = (6 + 0.5 - 4.5) * PITCH
        expected = (1e-4 * x1 + 3e-4 * x2) / 4e-4
        assert state.contact_center[0] == pytest.approx(expected, rel=1e-12)
        assert state.contact_center[1] == pytest.approx(0.0, abs=1e-18)

    def test_two_equal_blobs_midpoint(self):
        h, w = 80, 120
        ys = (np.arange(h) + 0.5 - 0.5 * h) * PITCH
        xs = (np.arange(w) + 0.5 - 0.5 * w) * PITCH
        gx, gy = np.meshgrid(xs, ys)
        a = 30 * PITCH
        blob = lambda cx: 2e-4 * np.exp(
            -((gx - cx) ** 2 + gy**2) / (2 * (8 * PITCH) ** 2)
        )
        state = mk.contact_center(_ind(blob(a) + blob(-a)))
        assert abs(state.contact_center[0]) <= PITCH
        assert abs(state.contact_center[1]) <= PITCH

    def test_bad_threshold(self):
        with pytest.raises(InvalidArgumentError):
            mk.contact_center(_ind(np.zeros((4, 4))), threshold=0.0)


class TestTrackLoad:
    def test_no_contact_stays_zero(self):
        state = mk.LoadState.zero()
        for _ in range(5):
            state = mk.track_load(
                state, geo.Pose(np.array([1e-3, 0, 0])), mk.LoadState.zero()
            )
        assert state == mk.LoadState.zero()

    def test_onset_resets_accumulators(self):
        state = mk.track_load(
            mk.LoadState.zero(), geo.Pose(np.array([5e-4, 0, 0])), _contact()
        )
        assert state.in_contact
        assert state.shear == (0.0, 0.0)
        assert state.twist == 0.0

    def test_tangential_accumulation(self):
        state = mk.LoadState.zero()
        k = 5
        delta = geo.Pose(np.array([1e-3 / k, 0.0, 0.0]))
        state = mk.track_load(state, geo.Pose.identity(), _contact())
        for _ in range(k):
            state = mk.track_load(state, delta, _contact())
        assert state.shear[0] == pytest.approx(1e-3, rel=1e-12)
        assert state.shear[1] == 0.0

    def test_z_rotation_sign(self):
        state = mk.track_load(mk.LoadState.zero(), geo.Pose.identity(), _contact())
        for _ in range(4):
            delta = geo.Pose.from_rotvec(np.zeros(3), [0.0, 0.0, 0.025])
            state = mk.track_load(state, delta, _contact())
        assert state.twist == pytest.approx(-0.1, rel=1e-12)

    def test_contact_loss_resets(self):
        state = mk.track_load(mk.LoadState.zero(), geo.Pose.identity(), _contact())
        state = mk.track_load(state, geo.Pose(np.array([1e-3, 0, 0])), _contact())
        state = mk.track_load(state, geo.Pose.identity(), mk.LoadState.zero())
        assert state == mk.LoadState.zero()

    def test_frame_rate_invariance(self):
        def run(n_steps):
            state = mk.track_load(
                mk.LoadState.zero(), geo.Pose.identity(), _contact()
            )
            delta = geo.Pose.from_rotvec(
                [2e-3 / n_steps, -1e-3 / n_steps, 0.0], [0.0, 0.0, 0.12 / n_steps]
            )
            for _ in range(n_steps):
                state = mk.track_load(state, delta, _contact())
            return state

        a, b = run(10), run(20)
        assert abs(a.shear[0] - b.shear[0]) < 1e-9
        assert abs(a.shear[1] - b.shear[1]) < 1e-9
        assert abs(a.twist - b.twist) < 1e-9


class TestDisplacements:
    GRID = mk.grid_rest_positions(CFG)

    def test_zero_load_zero_field(self):
        field = mk.marker_displacements(mk.LoadState.zero(), self.GRID, PARAMS)
        assert np.array_equal(field.displacements, np.zeros_like(self.GRID))

    def test_normal_radial_and_center_fixed(self):
        center = tuple(self.GRID[4, 4])
        load = mk.LoadState(center, 1e-3, (0, 0), 0.0, True)
        field = mk.marker_displacements(load, self.GRID, PARAMS)
        assert np.array_equal(field.displacements[4, 4], [0.0, 0.0])
        r = self.GRID - np.asarray(center)
        u = field.displacements
        cross = r[..., 0] * u[..., 1] - r[..., 1] * u[..., 0]
        dots = (r * u).sum(axis=-1)
        assert np.abs(cross).max() < 1e-18
        mask = np.linalg.norm(r, axis=-1) > 0
        assert (dots[mask] > 0).all()

    def test_normal_decay_monotone(self):
        load = mk.LoadState((0.0, 0.0), 1e-3, (0, 0), 0.0, True)
        field = mk.marker_displacements(load, self.GRID, PARAMS)
        dist = np.linalg.norm(self.GRID, axis=-1).ravel()
        mag = np.linalg.norm(field.displacements, axis=-1).ravel()
        order = np.argsort(dist)
        assert (np.diff(mag[order]) <= 1e-12).all()

    def test_pure_shear_center_exact(self):
        center = tuple(self.GRID[6, 3])
        load = mk.LoadState(center, 0.0, (2e-4, -1e-4), 0.0, True)
        field = mk.marker_displacements(load, self.GRID, PARAMS)
        assert np.array_equal(field.displacements[6, 3], [2e-4, -1e-4])
        far = self.GRID - np.asarray(center)
        dist = np.linalg.norm(far, axis=-1)
        mag = np.linalg.norm(field.displacements, axis=-1)
        s_mag = np.hypot(2e-4, -1e-4)
        beyond = dist >= 3 * PARAMS.lambda_s
        if beyond.any():
            assert mag[beyond].max() < 0.012 * s_mag

    def test_shear_linearity_exact(self):
        center = (0.0, 0.0)
        one = mk.marker_displacements(
            mk.LoadState(center, 0.0, (1e-4, 5e-5), 0.0, True), self.GRID, PARAMS
        )
        two = mk.marker_displacements(
            mk.LoadState(center, 0.0, (2e-4, 1e-4), 0.0, True), self.GRID, PARAMS
        )
        assert np.array_equal(two.displacements, 2.0 * one.displacements)

    def test_pure_twist_sums_to_zero(self):
        load = mk.LoadState((0.0, 0.0), 0.0, (0, 0), 0.3, True)
        field = mk.marker_displacements(load, self.GRID, PARAMS)
        total = field.displacements.reshape(-1, 2).sum(axis=0)
        assert np.abs(total).max() < 1e-15
        r = self.GRID
        u = field.displacements
        cross = (r[..., 0] * u[..., 1] - r[..., 1] * u[..., 0]).sum()
        assert cross > 0
        neg = mk.marker_displacements(
            mk.LoadState((0.0, 0.0), 0.0, (0, 0), -0.3, True), self.GRID, PARAMS
        )
        ncross = (
            r[..., 0] * neg.displacements[..., 1]
            - r[..., 1] * neg.displacements[..., 0]
        ).sum()
        assert ncross < 0

    def test_shear_falloff_is_gaussian(self):
        load = mk.LoadState((0.0, 0.0), 0.0, (3e-4, 0.0), 0.0, True)
        field = mk.marker_displacements(load, self.GRID, PARAMS)
        dist = np.linalg.norm(self.GRID, axis=-1)
        expected = 3e-4 * np.exp(-(dist**2) / (2 * PARAMS.lambda_s**2))
        assert np.allclose(field.displacements[..., 0], expected, atol=1e-18)
        assert np.abs(field.displacements[..., 1]).max() == 0.0


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        grid = mk.grid_rest_positions(CFG)
        load = mk.LoadState((1e-3, -5e-4), 8e-4, (2e-4, 1e-4), 0.15, True)
        field = mk.marker_displacements(load, grid, PARAMS)
        path = str(tmp_path / "markers.csv")
        mk.save_markers_csv(path, field)
        back = mk.load_markers_csv(path)
        assert np.array_equal(back.rest_positions, field.rest_positions)
        assert np.array_equal(back.displacements, field.displacements)

    def test_csv_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(InvalidArgumentError):
            mk.load_markers_csv(str(path))


class TestRender:
    def test_zero_field_regular_grid(self):
        grid = mk.grid_rest_positions(CFG)
        field = mk.MarkerField(grid, np.zeros_like(grid))
        img = mk.render_markers(field, CFG)
        assert img.shape == (480, 640, 3)
        assert img.dtype == np.uint8
        import cv2

        mask = (img[..., 0] < 100).astype(np.uint8)
        n_labels, _ = cv2.connectedComponents(mask)
        assert n_labels == 101  # background + 100 dots

    def test_deterministic(self):
        grid = mk.grid_rest_positions(CFG)
        load = mk.LoadState((0.0, 0.0), 5e-4, (1e-4, 0.0), 0.1, True)
        field = mk.marker_displacements(load, grid, PARAMS)
        a = mk.render_markers(field, CFG, draw_arrows=True)
        b = mk.render_markers(field, CFG, draw_arrows=True)
        assert np.array_equal(a, b)

    def test_displacement_moves_dot(self):
        grid = mk.grid_rest_positions(CFG)
        disp = np.zeros_like(grid)
        disp[0, 0] = (40 * PITCH, 0.0)
        moved = mk.render_markers(mk.MarkerField(grid, disp), CFG)
        rest = mk.render_markers(mk.MarkerField(grid, np.zeros_like(grid)), CFG)
        diff = np.where((moved != rest).any(axis=2))
        assert diff[1].max() - diff[1].min() >= 35  # dot moved ~40 px in x

    def test_overlay_preserves_dims(self):
        grid = mk.grid_rest_positions(CFG)
        field = mk.MarkerField(grid, np.zeros_like(grid))
        bg = np.full((480, 640, 3), 0.5)
        img = mk.render_markers(field, CFG, background=bg)
        assert img.shape == (480, 640, 3)
