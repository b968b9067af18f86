import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrfusion.fusion import MapBuffer, fuse_frame
from hdrfusion.radiometry import (
    ExposureProgram,
    NoiseModel,
    ResponseCurve,
    VignettingMap,
    estimate_radiance,
    inverse_response,
)
from hdrfusion.sensorsim import (
    CameraSim,
    Scene,
    batch_ground_truth,
    make_scene,
    synthetic_vignetting,
)

from conftest import diverse_scene


@pytest.fixture
def program():
    return ExposureProgram(times=(0.01, 0.1, 1.0), curve=ResponseCurve.linear())


class TestMakeScene:
    def test_log_gradient_formula(self):
        scene = make_scene("log-gradient", width=256, height=2, low=0.001, high=1.0)
        x = np.arange(256)
        expected = 0.001 * 1000.0 ** (x / 255)
        assert scene.radiance[0, :, 0] == pytest.approx(expected, rel=1e-12)
        assert scene.radiance[1, :, 2] == pytest.approx(expected, rel=1e-12)

    def test_checkerboard_two_levels(self):
        scene = make_scene(
            "checkerboard", width=16, height=16, low=0.01, high=0.9, tile=4
        )
        values = np.unique(scene.radiance)
        assert values.tolist() == [0.01, 0.9]
        assert scene.radiance[0, 0, 0] == 0.01
        assert scene.radiance[0, 4, 0] == 0.9

    def test_split_scene(self):
        scene = make_scene("bright-dark-split", width=8, height=4, low=0.1, high=10.0)
        assert np.all(scene.radiance[:, :4] == 0.1)
        assert np.all(scene.radiance[:, 4:] == 10.0)

    def test_from_file_roundtrip(self, tmp_path):
        from hdrfusion.fileio import save_pfm

        original = make_scene("log-gradient", width=12, height=8, low=0.01, high=5.0)
        path = tmp_path / "scene.pfm"
        save_pfm(original.radiance, path)
        loaded = make_scene("from-file", path=path)
        assert loaded.radiance == pytest.approx(original.radiance, rel=1e-6)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            make_scene("log-gradient", width=8, height=8, low=1.0, high=0.1)
        with pytest.raises(ValueError):
            make_scene("no-such-kind", width=8, height=8, low=0.1, high=1.0)
        with pytest.raises(ValueError):
            make_scene("log-gradient", width=8, height=8, low=0.1)

    def test_default_generator_exceeds_single_exposure_range(self, program):
        scene = make_scene("log-gradient", width=64, height=4, low=0.05, high=50.0)
        span = scene.radiance.max() / scene.radiance.min()
        assert span > program.exposure_max / program.exposure_min


class TestSyntheticVignetting:
    def test_anchor_and_range(self):
        vmap = synthetic_vignetting(32, 24)
        assert np.any(vmap.values == 1.0)
        assert np.all(vmap.values > 0) and np.all(vmap.values <= 1.0)

    def test_corner_attenuation(self):
        vmap = synthetic_vignetting(33, 25, corner_attenuation=0.5)
        assert vmap.values[0, 0, 0] == pytest.approx(0.5, abs=0.02)
        assert vmap.values[24, 32, 1] == pytest.approx(0.5, abs=0.02)
        center = vmap.values[12, 16, 0]
        assert center == pytest.approx(1.0, abs=1e-6)

    def test_uniform_limit(self):
        vmap = synthetic_vignetting(8, 8, corner_attenuation=1.0)
        assert np.all(vmap.values == 1.0)


class TestCapture:
    def test_noiseless_roundtrip_within_quantization(self, program):
        curve = ResponseCurve.linear()
        scene = diverse_scene(width=24, height=16, low=0.3, high=8.0)
        vmap = synthetic_vignetting(24, 16)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0, initial_time=0.1)
        frame = sim.capture(scene)
        radiance = estimate_radiance(curve, frame.pixels, 0.1, vmap.values)
        x = 0.1 * scene.radiance * vmap.values
        well = (frame.pixels > 4) & (frame.pixels < 250)
        step = (1 / 255) / (0.1 * vmap.values)  # one intensity step in radiance
        err = np.abs(radiance - scene.radiance)
        assert np.all(err[well] <= step[well] * (1 + 1e-12))

    def test_saturation_clamps(self, program):
        curve = ResponseCurve.linear()
        scene = Scene(np.full((4, 4, 3), 200.0))
        vmap = VignettingMap.uniform(4, 4)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0, initial_time=1.0)
        frame = sim.capture(scene)
        assert np.all(frame.pixels == 255)

    def test_rail_conditions(self, program):
        curve = ResponseCurve.linear()
        vmap = VignettingMap.uniform(3, 1)
        # exposures straddling the table: below g(1), between, above 1
        radiance = np.array([[[0.001, 0.001, 0.001],
                              [0.5, 0.5, 0.5],
                              [1.2, 1.2, 1.2]]])
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0, initial_time=1.0)
        frame = sim.capture(Scene(radiance))
        assert np.all(frame.pixels[0, 0] == 0)  # x < g(1)
        assert np.all(frame.pixels[0, 1] == 127)
        assert np.all(frame.pixels[0, 2] == 255)  # x >= 1

    def test_determinism_bit_identical(self, program):
        curve = ResponseCurve.linear()
        scene = diverse_scene(width=16, height=12, low=0.1, high=5.0)
        vmap = VignettingMap.uniform(16, 12)
        noise = NoiseModel(np.array([0.001, 0.001, 0.001]))

        def run():
            sim = CameraSim(curve, vmap, program, noise=noise, lag=2, seed=42)
            frames = []
            for k in range(8):
                if k % 3 == 0:
                    sim.command_exposure(program.times[(k // 3) % 3])
                frames.append(sim.capture(scene))
            return frames

        a, b = run(), run()
        for fa, fb in zip(a, b):
            assert fa.time == fb.time
            assert np.array_equal(fa.pixels, fb.pixels)

    def test_noise_changes_with_frame_index(self, program):
        curve = ResponseCurve.linear()
        scene = diverse_scene(width=16, height=12, low=0.1, high=5.0)
        vmap = VignettingMap.uniform(16, 12)
        noise = NoiseModel(np.array([0.002] * 3))
        sim = CameraSim(curve, vmap, program, noise=noise, lag=0, seed=1, initial_time=0.1)
        f1 = sim.capture(scene)
        f2 = sim.capture(scene)
        assert not np.array_equal(f1.pixels, f2.pixels)

    def test_variance_tracks_exposure(self, program):
        # light-weight check of the noise statistics; the full 900-frame
        # protocol runs in the acceptance suite
        curve = ResponseCurve.linear()
        a = 0.002
        noise = NoiseModel(np.array([a] * 3))
        scene = Scene(np.full((32, 32, 3), 5.0))
        vmap = VignettingMap.uniform(32, 32)
        sim = CameraSim(curve, vmap, program, noise=noise, lag=0, seed=3, initial_time=0.1)
        samples = np.stack(
            [inverse_response(curve, sim.capture(scene).pixels) for _ in range(300)]
        )
        x = 0.5  # = t * radiance
        measured = samples.var(axis=0, ddof=1).mean()
        assert measured == pytest.approx(a * x, rel=0.15)


class TestCommandLag:
    def test_three_frame_lag(self, program):
        curve = ResponseCurve.linear()
        scene = Scene(np.full((2, 2, 3), 1.0))
        vmap = VignettingMap.uniform(2, 2)
        sim = CameraSim(curve, vmap, program, noise=None, lag=3, seed=0, initial_time=0.01)
        sim.command_exposure(1.0)  # issued at frame 0
        times = [sim.capture(scene).time for _ in range(5)]
        assert times == [0.01, 0.01, 0.01, 1.0, 1.0]

    def test_zero_lag_immediate(self, program):
        curve = ResponseCurve.linear()
        scene = Scene(np.full((2, 2, 3), 1.0))
        vmap = VignettingMap.uniform(2, 2)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0, initial_time=0.01)
        sim.command_exposure(1.0)
        assert sim.capture(scene).time == 1.0

    def test_consecutive_commands_fifo(self, program):
        curve = ResponseCurve.linear()
        scene = Scene(np.full((2, 2, 3), 1.0))
        vmap = VignettingMap.uniform(2, 2)
        sim = CameraSim(curve, vmap, program, noise=None, lag=3, seed=0, initial_time=0.01)
        sim.command_exposure(0.1)  # frame 0 -> effective at 3
        assert sim.capture(scene).time == 0.01
        sim.command_exposure(1.0)  # frame 1 -> effective at 4
        times = [sim.capture(scene).time for _ in range(4)]
        assert times == [0.01, 0.01, 0.1, 1.0]

    def test_rejects_non_member(self, program):
        curve = ResponseCurve.linear()
        vmap = VignettingMap.uniform(2, 2)
        sim = CameraSim(curve, vmap, program, noise=None, lag=3, seed=0)
        with pytest.raises(ValueError):
            sim.command_exposure(0.5)

    @given(
        lag=st.integers(min_value=0, max_value=5),
        schedule=st.lists(
            st.tuples(st.booleans(), st.integers(min_value=0, max_value=2)),
            min_size=1,
            max_size=30,
        ),
    )
    @settings(deadline=None, max_examples=150)
    def test_fifo_contract_matches_reference(self, lag, schedule):
        program = ExposureProgram(times=(0.01, 0.1, 1.0))
        curve = ResponseCurve.linear()
        scene = Scene(np.full((1, 1, 3), 1.0))
        vmap = VignettingMap.uniform(1, 1)
        sim = CameraSim(
            curve, vmap, program, noise=None, lag=lag, seed=0, initial_time=0.01
        )

        # reference model: list of (due_frame, time)
        pending = []
        steady = 0.01
        frame = 0
        for is_capture, idx in schedule:
            if is_capture:
                while pending and pending[0][0] <= frame:
                    steady = pending.pop(0)[1]
                expected = steady
                got = sim.capture(scene).time
                assert got == expected
                frame += 1
            else:
                t = program.times[idx]
                pending.append((frame + lag, t))
                sim.command_exposure(t)


class TestBatchGroundTruth:
    def test_single_noise_free_frame(self, program):
        curve = ResponseCurve.linear()
        scene = diverse_scene(width=16, height=12, low=0.5, high=5.0)
        vmap = VignettingMap.uniform(16, 12)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0, initial_time=0.1)
        frame = sim.capture(scene)
        radiance, valid = batch_ground_truth([frame], curve, vmap, None, program)
        step = (1 / 255) / 0.1
        assert valid.all()
        assert np.all(np.abs(radiance - scene.radiance) <= step * (1 + 1e-12))

    def test_matches_fusion_accumulators(self, program):
        # classical merge and incremental fusion agree on all-valid pixels
        curve = ResponseCurve.linear()
        scene = diverse_scene(width=16, height=12, low=0.5, high=5.0)
        vmap = synthetic_vignetting(16, 12)
        noise = NoiseModel(np.array([0.0008] * 3))
        sim = CameraSim(curve, vmap, program, noise=noise, lag=0, seed=4, initial_time=0.1)
        frames = [sim.capture(scene) for _ in range(6)]

        radiance, valid = batch_ground_truth(frames, curve, vmap, noise, program)
        buffer = MapBuffer(16, 12, program)
        for f in frames:
            fuse_frame(buffer, f, vmap, curve)
        always_valid = np.ones((12, 16), dtype=bool)
        for f in frames:
            well = (f.pixels > program.under_threshold) & (
                f.pixels < program.over_threshold
            )
            always_valid &= well.all(axis=2)
        mask = always_valid & buffer.complete
        assert mask.any()
        fused = buffer.numerator[mask] / buffer.denominator[mask]
        assert fused == pytest.approx(radiance[mask], rel=1e-12)

    def test_bracketing_covers_three_decades(self):
        curve = ResponseCurve.linear()
        program = ExposureProgram.geometric(0.002, 0.9, 8, curve=curve)
        scene = make_scene("log-gradient", width=48, height=8, low=0.05, high=50.0)
        vmap = VignettingMap.uniform(48, 8)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0)
        frames = []
        for t in program.times:
            sim.command_exposure(t)
            frames.append(sim.capture(scene))
        radiance, valid = batch_ground_truth(frames, curve, vmap, None, program)
        assert valid.all()
        # dim pixels only get low-intensity samples, where one quantizer
        # step is a large relative error; 10% covers the worst of them
        assert radiance == pytest.approx(scene.radiance, rel=0.10)

    def test_pixels_without_valid_samples_flagged(self, program):
        curve = ResponseCurve.linear()
        scene = Scene(np.full((4, 4, 3), 1e-4))  # far below every window
        vmap = VignettingMap.uniform(4, 4)
        sim = CameraSim(curve, vmap, program, noise=None, lag=0, seed=0)
        frame = sim.capture(scene)
        radiance, valid = batch_ground_truth([frame], curve, vmap, None, program)
        assert not valid.any()
        assert np.all(np.isnan(radiance))
