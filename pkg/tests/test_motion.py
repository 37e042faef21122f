import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadretarget.motion import (
    Heightmap,
    Motion,
    MotionFormatError,
    TemporalParams,
    deform_time,
    detect_contacts,
    interp_keypoints,
    load_motion,
    lowpass,
    save_motion,
)


def random_motion(rng, frames=5, with_optional=True):
    kp = rng.normal(size=(frames, 16, 3))
    quat = rng.normal(size=(frames, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    return Motion(
        fps=30.0,
        keypoints=kp,
        contacts=rng.random((frames, 4)) < 0.5 if with_optional else None,
        base_pos=rng.normal(size=(frames, 3)) if with_optional else None,
        base_quat=quat if with_optional else None,
        joint_angles=rng.normal(size=(frames, 12)) if with_optional else None,
    ).validate()


class TestMotionIO:
    def test_minimal_two_frame_file(self, tmp_path):
        doc = {
            "fps": 30.0,
            "frames": [
                {"keypoints": [[0.0, 0.0, 0.0]] * 16},
                {"keypoints": [[0.0, 0.0, 1.0]] * 16},
            ],
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        m = load_motion(path)
        assert m.last_frame == 1
        assert m.contacts is None
        assert not m.has_base

    def test_non_unit_quaternion_names_frame(self, tmp_path):
        frames = []
        for i in range(3):
            quat = [1.0, 0.0, 0.0, 0.0] if i != 2 else [1.1, 0.0, 0.0, 0.0]
            frames.append(
                {"keypoints": [[0.0, 0.0, 0.0]] * 16, "base_pos": [0, 0, 0],
                 "base_quat": quat}
            )
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"fps": 30, "frames": frames}))
        with pytest.raises(MotionFormatError, match="frame 2"):
            load_motion(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"fps": 30,\n "frames": [}')
        with pytest.raises(MotionFormatError, match="line 2"):
            load_motion(path)

    def test_missing_field_in_later_frame(self, tmp_path):
        doc = {
            "fps": 30,
            "frames": [
                {"keypoints": [[0.0] * 3] * 16, "contacts": [True] * 4},
                {"keypoints": [[0.0] * 3] * 16},
            ],
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MotionFormatError, match="contacts.*frame 1"):
            load_motion(path)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        for trial in range(5):
            motion = random_motion(rng, frames=4, with_optional=trial % 2 == 0)
            path = tmp_path / f"m{trial}.json"
            save_motion(motion, path)
            back = load_motion(path)
            assert np.array_equal(back.keypoints, motion.keypoints)
            if motion.contacts is not None:
                assert np.array_equal(back.contacts, motion.contacts)
                assert np.array_equal(back.base_pos, motion.base_pos)
                assert np.array_equal(back.base_quat, motion.base_quat)
                assert np.array_equal(back.joint_angles, motion.joint_angles)

    def test_too_few_frames(self):
        with pytest.raises(MotionFormatError, match="2 frames"):
            Motion(fps=30, keypoints=np.zeros((1, 16, 3))).validate()


class TestDeformTime:
    def test_identity_warp(self):
        params = TemporalParams([1.0])
        assert deform_time(0.37, params, 1.0) == pytest.approx(0.37, abs=1e-15)

    def test_uniform_slowdown_maps_halfway(self):
        params = TemporalParams([2.0])
        assert deform_time(1.0, params, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_two_segment_warp_matches_bruteforce_inverse(self):
        # Oracle: invert the forward map (source time -> control time) by
        # dense sampling; the forward map integrates alpha over source time.
        params = TemporalParams([1.0, 2.0])
        duration = 1.0
        s_dense = np.linspace(0.0, duration, 200001)
        mid = (s_dense[1:] + s_dense[:-1]) / 2
        alpha_mid = np.where(mid < 0.5, 1.0, 2.0)
        t_dense = np.concatenate(([0.0], np.cumsum(alpha_mid * np.diff(s_dense))))
        for t_query in (0.3, 0.5, 0.9, 1.2, 1.5):
            expected = float(np.interp(t_query, t_dense, s_dense))
            assert deform_time(t_query, params, duration) == pytest.approx(expected, abs=1e-6)
        # Hand-computed check at a point in the slowed segment.
        assert deform_time(0.9, params, duration) == pytest.approx(0.7, abs=1e-12)

    def test_out_of_range_rejected(self):
        params = TemporalParams([1.0])
        with pytest.raises(ValueError):
            deform_time(1.5, params, 1.0)
        with pytest.raises(ValueError):
            deform_time(-0.1, params, 1.0)

    @given(
        alphas=st.lists(st.floats(0.5, 2.0), min_size=1, max_size=4),
        t_pair=st.tuples(st.floats(0, 1), st.floats(0, 1)),
    )
    @settings(max_examples=60, deadline=None)
    def test_strictly_monotone(self, alphas, t_pair):
        params = TemporalParams(np.asarray(alphas))
        duration = 2.0
        total = params.warped_duration(duration)
        t1, t2 = sorted(np.asarray(t_pair) * total)
        if t2 - t1 < 1e-9:
            return
        s1 = deform_time(t1, params, duration)
        s2 = deform_time(t2, params, duration)
        assert s2 > s1

    @given(alphas=st.lists(st.floats(0.5, 2.0), min_size=1, max_size=4))
    @settings(max_examples=60, deadline=None)
    def test_warped_duration_endpoint(self, alphas):
        params = TemporalParams(np.asarray(alphas))
        duration = 3.0
        total = params.warped_duration(duration)
        expected = duration / params.segment_count * np.sum(params.alphas)
        assert total == pytest.approx(expected, abs=1e-12)
        assert deform_time(0.0, params, duration) == pytest.approx(0.0, abs=1e-12)
        assert deform_time(total, params, duration) == pytest.approx(duration, abs=1e-9)

    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            TemporalParams([3.0])
        with pytest.raises(ValueError):
            TemporalParams([])


class TestInterpKeypoints:
    def make(self):
        frames = 7
        kp = np.zeros((frames, 16, 3))
        t = np.arange(frames) / 30.0
        # Quadratic-in-time coordinates exercise the interpolation error.
        for j in range(16):
            kp[:, j, 0] = 1.0 + j * t + 0.5 * t**2
            kp[:, j, 1] = -t
            kp[:, j, 2] = j
        return Motion(fps=30.0, keypoints=kp).validate()

    def test_node_exactness(self):
        m = self.make()
        for i in (0, 3, 6):
            out = interp_keypoints(i / 30.0, m)
            assert np.allclose(out, m.keypoints[i], atol=1e-14)

    def test_midpoint_average(self):
        m = self.make()
        out = interp_keypoints(1.5 / 30.0, m)
        assert np.allclose(out, (m.keypoints[1] + m.keypoints[2]) / 2, atol=1e-14)

    def test_matches_dense_resampling_oracle(self):
        m = self.make()
        rng = np.random.default_rng(3)
        dense_t = np.linspace(0, m.duration, 20001)
        dense = np.stack([
            np.stack([np.interp(dense_t, np.arange(7) / 30.0, m.keypoints[:, j, a])
                      for a in range(3)], axis=1)
            for j in range(16)
        ], axis=1)
        for t in rng.uniform(0, m.duration, 20):
            idx = int(round(t / m.duration * 20000))
            assert np.allclose(interp_keypoints(dense_t[idx], m), dense[idx], atol=1e-9)

    def test_out_of_range(self):
        m = self.make()
        with pytest.raises(ValueError):
            interp_keypoints(m.duration + 0.1, m)


class TestLowpass:
    def test_dc_pass(self):
        sig = np.full((100, 2), 3.7)
        out = lowpass(sig, 5.0, 100.0)
        assert np.allclose(out, sig, atol=1e-12)

    def test_sinusoid_attenuation_fft_oracle(self):
        fps, cutoff = 1000.0, 5.0
        t = np.arange(4000) / fps
        freq = 10 * cutoff
        sig = np.sin(2 * np.pi * freq * t)
        out = lowpass(sig, cutoff, fps)
        # FFT amplitude at the driven frequency, ignoring edge transients.
        window = slice(500, 3500)
        spectrum_in = np.abs(np.fft.rfft(sig[window]))
        spectrum_out = np.abs(np.fft.rfft(out[window]))
        k = np.argmax(spectrum_in)
        assert spectrum_out[k] < spectrum_in[k] / 10.0

    def test_zero_phase_impulse_symmetry(self):
        sig = np.zeros(201)
        sig[100] = 1.0
        out = lowpass(sig, 5.0, 100.0)
        assert np.allclose(out[100 - 40: 100], out[101: 141][::-1], atol=1e-9)

    def test_invalid_cutoff(self):
        with pytest.raises(ValueError):
            lowpass(np.zeros(10), 60.0, 100.0)


class TestDetectContacts:
    def synthetic_gait(self, noise=0.0, seed=0):
        rng = np.random.default_rng(seed)
        fps = 100.0
        frames = 400
        t = np.arange(frames) / fps
        kp = np.zeros((frames, 16, 3))
        truth = np.zeros((frames, 4), dtype=bool)
        for j in range(4):
            phase = (t + 0.5 * j) % 2.0
            stance = phase < 1.2
            x = np.cumsum(np.where(stance, 0.0, 0.5 / fps))
            z = np.where(stance, 0.0, 0.05 * np.sin(np.pi * (phase - 1.2) / 0.8))
            kp[:, 12 + j, 0] = x
            kp[:, 12 + j, 2] = z
            truth[:, j] = stance
        kp += rng.normal(0.0, noise, kp.shape)
        return Motion(fps=fps, keypoints=kp).validate(), truth

    def test_stationary_foot_always_contact(self):
        m, _ = self.synthetic_gait()
        m2 = m.copy()
        m2.keypoints[:, 12, :] = (0.1, 0.2, 0.0)
        contacts = detect_contacts(m2, 0.05, 6.0)
        assert contacts[:, 0].all()

    def test_fast_foot_never_contact(self):
        frames = 200
        kp = np.zeros((frames, 16, 3))
        kp[:, 12, 0] = np.arange(frames) / 100.0  # 1 m/s at 100 fps
        m = Motion(fps=100.0, keypoints=kp).validate()
        contacts = detect_contacts(m, 0.05, 6.0)
        assert not contacts[:, 0].any()

    def test_noisy_gait_iou_against_generator(self):
        m, truth = self.synthetic_gait(noise=0.002, seed=1)
        detected = detect_contacts(m, 0.08, 6.0)
        inter = np.sum(detected & truth)
        union = np.sum(detected | truth)
        assert inter / union >= 0.9

    def test_invariant_to_uniform_offset(self):
        m, _ = self.synthetic_gait(noise=0.001, seed=2)
        base = detect_contacts(m, 0.08, 6.0)
        shifted = m.copy()
        shifted.keypoints = shifted.keypoints + np.array([2.0, -3.0, 1.5])
        assert np.array_equal(detect_contacts(shifted, 0.08, 6.0), base)


class TestHeightmap:
    def test_queries(self):
        hm = Heightmap(np.array([[0.0, 0.35], [0.1, 0.2]]), cell_size=1.0,
                       origin=(0.0, 0.0), default_height=-1.0)
        assert hm.height_at(1.5, 0.5) == pytest.approx(0.35)
        assert hm.height_at(0.5, 1.5) == pytest.approx(0.1)
        assert hm.height_at(-0.5, 0.0) == pytest.approx(-1.0)

    def test_flat(self):
        hm = Heightmap.flat(0.2)
        assert hm.height_at(100.0, -50.0) == pytest.approx(0.2)

    def test_bad_cell_size(self):
        with pytest.raises(ValueError):
            Heightmap(np.zeros((2, 2)), cell_size=0.0)
