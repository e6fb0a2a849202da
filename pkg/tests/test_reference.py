import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biped_mimic import reference as ref
from biped_mimic.reference import (CSV_COLUMNS, FRAME_DT, GaitSpec, IncompatibleMotions,
                                   KinematicsError, ReferenceMotion, blend, generate_gait, leg_ik,
                                   retime, sample)
from biped_mimic.sim import SimState, point_kinematics

times = st.floats(0.0, 20.0, allow_nan=False)


def test_default_stride(motion):
    assert motion.stride_length == pytest.approx(0.5, abs=1e-15)
    assert motion.stride_period == 0.7
    assert motion.n_frames == 23
    assert np.allclose(np.diff(motion.times)[:-1], FRAME_DT)
    assert motion.times[-1] - motion.times[-2] == pytest.approx(0.7 - 21 * FRAME_DT)


def test_cyclic_consistency(motion):
    d = motion.q[-1] - motion.q[0]
    assert d[0] == pytest.approx(motion.stride_length, abs=1e-15)
    assert np.array_equal(d[1:], np.zeros(10))
    assert np.array_equal(motion.v[-1], motion.v[0])


def test_stepping_in_place(model):
    m = generate_gait(0.0, 0.7, 0.1, model)
    assert np.array_equal(m.q[:, 0], np.zeros(m.n_frames))
    assert m.stride_length == 0.0


def test_passive_reference_is_zero(motion):
    assert np.array_equal(motion.q[:, 9:], np.zeros((motion.n_frames, 2)))


def test_generator_validation(model):
    with pytest.raises(ValueError):
        generate_gait(0.5, 0.0, 0.1, model)
    with pytest.raises(ValueError):
        generate_gait(-0.1, 0.7, 0.1, model)
    with pytest.raises(ValueError):
        generate_gait(0.5, 0.7, 0.0, model)
    with pytest.raises(KinematicsError):
        generate_gait(3.0, 0.7, 0.1, model)


def test_ik_reaches_targets(model):
    spec = GaitSpec(model=model)
    for t in np.linspace(0.0, 0.7, 37):
        q = spec.pose(t)
        _, ankles = spec.ankle_targets(t)
        names, pos, _, _ = point_kinematics(model, SimState(q, np.zeros_like(q)))
        hip = np.array([q[0], q[1]])
        for k, side in enumerate(("left", "right")):
            assert np.allclose(pos[names.index(f"{side}_ankle")] - hip, ankles[k], atol=1e-12)
        assert q[4] <= 0 and q[7] <= 0


def test_stance_foot_rests_on_ground(model, motion):
    names, pos, _, _ = point_kinematics(model, SimState(motion.q[0], motion.v[0]))
    # at t=0 the right leg is in stance
    assert pos[names.index("right_heel")][1] == pytest.approx(0.0, abs=1e-12)
    assert pos[names.index("right_toe")][1] == pytest.approx(0.0, abs=1e-12)


def test_unreachable_target(model):
    with pytest.raises(KinematicsError):
        leg_ik(model, 2.0, -0.1)


def test_sample_at_zero_is_first_frame(motion):
    f = sample(motion, 0.0)
    assert np.array_equal(f.q, motion.q[0]) and np.array_equal(f.v, motion.v[0])


def test_sample_after_one_stride(motion):
    f = sample(motion, motion.stride_period)
    expected = motion.q[0].copy()
    expected[0] += motion.stride_length
    assert np.array_equal(f.q, expected)


def test_sample_interpolates_against_generator(model, motion):
    """Between frames, sampling is the linear blend of the generator's poses at the
    bracketing frame times, and stays close to the generator itself."""
    spec = GaitSpec(0.5, 0.7, 0.1, None, model)
    for t in np.linspace(0.001, 0.699, 71):
        i = int(np.searchsorted(motion.times, t, side="right")) - 1
        t0, t1 = motion.times[i], motion.times[i + 1]
        w = (t - t0) / (t1 - t0)
        oracle = (1 - w) * spec.pose(t0) + w * spec.pose(t1)
        if i + 1 == motion.n_frames - 1:
            oracle = (1 - w) * spec.pose(t0) + w * motion.q[-1]
        q = sample(motion, t).q
        assert np.allclose(q, oracle, atol=1e-12)
        assert np.abs(q - spec.pose(t)).max() < 0.05


def test_sample_rejects_negative_time(motion):
    with pytest.raises(ValueError):
        sample(motion, -0.1)


@given(times)
def test_cyclic_extension_periodicity(motion, t):
    a = sample(motion, t)
    b = sample(motion, t + motion.stride_period)
    assert np.allclose(a.q[1:], b.q[1:], atol=1e-9)
    assert np.allclose(a.v, b.v, atol=1e-9)
    assert b.q[0] - a.q[0] == pytest.approx(motion.stride_length, abs=1e-9)


@given(times, st.floats(1e-4, 1.0))
def test_pelvis_x_non_decreasing(motion, t, dt):
    assert sample(motion, t + dt).q[0] >= sample(motion, t).q[0] - 1e-12


def test_pelvis_x_continuous_across_loop(motion):
    p = motion.stride_period
    lo, hi = sample(motion, p - 1e-9).q[0], sample(motion, p).q[0]
    assert abs(hi - lo) < 1e-6


def test_retime_identity_and_stride(motion):
    assert retime(motion, 1.0) == motion
    assert retime(motion, 2.0).stride_length == pytest.approx(1.0)
    zero = retime(motion, 0.0)
    assert zero.stride_length == 0.0
    assert np.all(zero.q[:, 0] == motion.q[0, 0])
    assert np.array_equal(retime(motion, 3.0).q[:, 1:], motion.q[:, 1:])
    assert np.array_equal(retime(motion, 3.0).times, motion.times)
    with pytest.raises(ValueError):
        retime(motion, -1.0)


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_retime_linearity(motion, a, b):
    m1 = retime(retime(motion, a), b)
    m2 = retime(motion, a * b)
    assert np.allclose(m1.q, m2.q, atol=1e-12) and np.allclose(m1.v, m2.v, atol=1e-12)


def test_blend_examples(motion):
    fast = retime(motion, 2.0)
    t = 0.7
    assert np.array_equal(blend(motion, fast, 1.0, t).q, sample(motion, t).q)
    assert np.array_equal(blend(motion, fast, 0.0, t).q, sample(fast, t).q)
    assert blend(motion, fast, 0.5, t).q[0] == pytest.approx(0.75)


@given(times, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_blend_monotone_in_lambda(motion, t, l1, l2):
    other = retime(motion, 2.5)
    lo, hi = sorted((l1, l2))
    a, b = blend(motion, other, lo, t).q, blend(motion, other, hi, t).q
    e1, e2 = sample(motion, t).q, sample(other, t).q
    # moving lambda towards 1 moves every coordinate towards motion's value
    assert np.all((b - a) * (e1 - e2) >= -1e-12)


def test_blend_incompatible(model, motion):
    with pytest.raises(IncompatibleMotions):
        blend(motion, generate_gait(0.5, 0.9, 0.1, model), 0.5, 0.1)
    with pytest.raises(ValueError):
        blend(motion, motion, 1.5, 0.1)


def test_file_round_trip(tmp_path, motion):
    path = tmp_path / "ref.csv"
    ref.save(motion, path)
    back = ref.load(path)
    assert back == motion
    header = path.read_text().splitlines()[0].split(",")
    assert header == CSV_COLUMNS and len(header) == 23


def test_csv_errors():
    with pytest.raises(ValueError):
        ref.loads("a,b\n1,2\n")


def test_motion_validation(motion):
    q = motion.q.copy()
    q[-1, 4] += 0.1
    with pytest.raises(ValueError):
        ReferenceMotion(motion.times, q, motion.v)
    with pytest.raises(ValueError):
        ReferenceMotion([0.0], motion.q[:1], motion.v[:1])
    with pytest.raises(ValueError):
        motion.q[0, 0] = 1.0  # read-only
