import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prostasim import geometry
from prostasim.geometry import (
    DegenerateConfiguration,
    RigidTransform,
    Segment,
    apply,
    axis_decompose,
    compose,
    identity,
    inverse,
    max_line_deviation,
    normalize,
    register_points,
    rotation_about_axis,
    rotation_angle_deg,
    segment_capsule_distance,
    segment_segment_distance,
    translation,
)


def random_transform(rng, max_angle=180.0, max_trans=50.0):
    axis = rng.normal(size=3)
    angle = rng.uniform(-max_angle, max_angle)
    t = rotation_about_axis(axis, angle, np.zeros(3))
    return RigidTransform(t.rotation, rng.uniform(-max_trans, max_trans, 3))


def test_identity_and_translation():
    p = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(apply(identity(), p), p)
    np.testing.assert_allclose(apply(translation([1, 1, 1]), p), p + 1.0)


def test_apply_batch_matches_pointwise(rng):
    t = random_transform(rng)
    pts = rng.normal(size=(17, 3))
    batch = apply(t, pts)
    for i in range(len(pts)):
        np.testing.assert_allclose(batch[i], apply(t, pts[i]), atol=1e-12)


def test_compose_is_apply_then_apply(rng):
    # the definitional oracle: compose(t1, t2) acts as t2 first, then t1
    for _ in range(25):
        t1 = random_transform(rng)
        t2 = random_transform(rng)
        p = rng.normal(size=3) * 10
        np.testing.assert_allclose(
            apply(compose(t1, t2), p), apply(t1, apply(t2, p)), atol=1e-9
        )


def test_inverse_round_trip(rng):
    for _ in range(25):
        t = random_transform(rng)
        p = rng.normal(size=3) * 10
        np.testing.assert_allclose(apply(inverse(t), apply(t, p)), p, atol=1e-9)
        np.testing.assert_allclose(apply(t, apply(inverse(t), p)), p, atol=1e-9)


def test_long_compose_chain_stays_orthonormal(rng):
    t = identity()
    for _ in range(500):
        t = compose(t, random_transform(rng, max_angle=5.0, max_trans=0.5))
    gram = t.rotation @ t.rotation.T
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-12)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)


def test_rotation_about_axis_basics():
    t = rotation_about_axis([0, 0, 1], 90.0, np.zeros(3))
    np.testing.assert_allclose(apply(t, [1, 0, 0]), [0, 1, 0], atol=1e-12)
    assert rotation_angle_deg(t) == pytest.approx(90.0, abs=1e-9)


def test_rotation_center_is_fixed(rng):
    for _ in range(10):
        center = rng.uniform(-20, 20, 3)
        t = rotation_about_axis(rng.normal(size=3), rng.uniform(-170, 170), center)
        np.testing.assert_allclose(apply(t, center), center, atol=1e-9)


def test_rotation_angle_of_identity():
    assert rotation_angle_deg(identity()) == 0.0


def test_normalize_unit_and_zero():
    v = normalize([3.0, 4.0, 0.0])
    np.testing.assert_allclose(v, [0.6, 0.8, 0.0])
    with pytest.raises(ValueError):
        normalize([0.0, 0.0, 0.0])


def test_axis_decompose_known():
    depth, lateral = axis_decompose([0, 0, -60], [0, 0, 1], [3, 4, 0])
    assert depth == pytest.approx(60.0)
    assert lateral == pytest.approx(5.0)


def test_axis_decompose_is_closest_point(rng):
    # entry + depth*dir must be the nearest line point to the target
    for _ in range(20):
        entry = rng.uniform(-30, 30, 3)
        d = normalize(rng.normal(size=3))
        target = rng.uniform(-30, 30, 3)
        depth, lateral = axis_decompose(entry, d, target)
        at_depth = np.linalg.norm(entry + depth * d - target)
        assert at_depth == pytest.approx(lateral, abs=1e-9)
        for dt in rng.uniform(-20, 20, 15):
            other = np.linalg.norm(entry + (depth + dt) * d - target)
            assert other >= lateral - 1e-9


def _brute_segment_distance(p0, p1, q0, q1, steps=400):
    s = np.linspace(0.0, 1.0, steps + 1)
    pa = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    pb = q0[None, :] + s[:, None] * (q1 - q0)[None, :]
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.min(np.sqrt(np.sum(diff * diff, axis=2))))


def test_segment_distance_against_dense_sampling(rng):
    for _ in range(20):
        p0, p1, q0, q1 = rng.uniform(-10, 10, (4, 3))
        exact = segment_segment_distance(p0, p1, q0, q1)
        grid = _brute_segment_distance(p0, p1, q0, q1)
        # the sampled minimum can only overestimate, and not by much
        assert exact <= grid + 1e-9
        assert grid - exact < 5e-3


def test_segment_distance_known_cases():
    # crossing segments touch
    d = segment_segment_distance([-1, 0, 0], [1, 0, 0], [0, -1, 0.0], [0, 1, 0.0])
    assert d == pytest.approx(0.0, abs=1e-12)
    # parallel unit-offset segments
    d = segment_segment_distance([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0])
    assert d == pytest.approx(1.0)
    # degenerate point vs point
    d = segment_segment_distance([0, 0, 0], [0, 0, 0], [3, 4, 0], [3, 4, 0])
    assert d == pytest.approx(5.0)


def test_segment_capsule_distance_clamps():
    s = Segment([0, 0, 0], [10, 0, 0])
    axis = Segment([5, 3, 0], [5, 3, 5])
    assert segment_capsule_distance(s, axis, 1.0) == pytest.approx(2.0)
    assert segment_capsule_distance(s, axis, 3.0) == 0.0
    assert segment_capsule_distance(s, axis, 5.0) == 0.0
    with pytest.raises(ValueError):
        segment_capsule_distance(s, axis, -0.1)


def test_register_recovers_exact_transform(rng):
    pts = rng.uniform(-30, 30, (6, 3))
    for _ in range(50):
        true = random_transform(rng, max_angle=20.0, max_trans=10.0)
        obs = apply(true, pts)
        est, rms = register_points(pts, obs)
        assert rms < 1e-9
        np.testing.assert_allclose(est.translation, true.translation, atol=1e-9)
        np.testing.assert_allclose(est.rotation, true.rotation, atol=1e-9)


def test_register_proper_rotation_under_reflection_bait(rng):
    # near-planar configurations tempt the SVD into det(-1); the guard
    # must keep the estimate a proper rotation
    pts = rng.uniform(-10, 10, (5, 3))
    pts[:, 2] *= 1e-6
    true = random_transform(rng, max_angle=20.0, max_trans=5.0)
    est, _ = register_points(pts, apply(true, pts) + rng.normal(0, 0.5, (5, 3)))
    assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)


def test_register_requires_three_noncollinear():
    line = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    with pytest.raises(DegenerateConfiguration):
        register_points(line, line)
    with pytest.raises(DegenerateConfiguration):
        register_points(line[:2], line[:2])
    with pytest.raises(ValueError):
        register_points(line, line[:3])


def test_register_least_squares_beats_perturbations(rng):
    pts = rng.uniform(-20, 20, (8, 3))
    true = random_transform(rng, max_angle=15.0, max_trans=8.0)
    obs = apply(true, pts) + rng.normal(0, 0.4, pts.shape)
    est, rms = register_points(pts, obs)

    def cost(t):
        r = apply(t, pts) - obs
        return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))

    assert rms == pytest.approx(cost(est), abs=1e-12)
    for _ in range(40):
        bump = random_transform(rng, max_angle=1.0, max_trans=0.3)
        assert cost(compose(bump, est)) >= rms - 1e-12


def test_max_line_deviation():
    line = np.array([[-2.0, 0, 0], [-1, 0, 0], [1, 0, 0], [2, 0, 0]])
    assert max_line_deviation(line) == pytest.approx(0.0, abs=1e-12)
    bent = line.copy()
    bent[0, 1] = 0.5
    centered = bent - bent.mean(axis=0)
    assert max_line_deviation(centered) > 0.1


@st.composite
def small_transforms(draw):
    axis = draw(
        st.tuples(*[st.floats(-1, 1, allow_nan=False) for _ in range(3)]).filter(
            lambda a: sum(x * x for x in a) > 1e-4
        )
    )
    angle = draw(st.floats(-179, 179, allow_nan=False))
    trans = draw(st.tuples(*[st.floats(-20, 20, allow_nan=False) for _ in range(3)]))
    base = rotation_about_axis(np.array(axis), angle, np.zeros(3))
    return RigidTransform(base.rotation, np.array(trans))


@settings(max_examples=50, deadline=None)
@given(t=small_transforms(), p=st.tuples(*[st.floats(-30, 30) for _ in range(3)]),
       q=st.tuples(*[st.floats(-30, 30) for _ in range(3)]))
def test_rigid_transforms_preserve_distance(t, p, q):
    p = np.array(p)
    q = np.array(q)
    before = np.linalg.norm(p - q)
    after = np.linalg.norm(apply(t, p) - apply(t, q))
    assert after == pytest.approx(before, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(a=small_transforms(), b=small_transforms(), c=small_transforms(),
       p=st.tuples(*[st.floats(-10, 10) for _ in range(3)]))
def test_compose_associative_on_points(a, b, c, p):
    p = np.array(p)
    left = apply(compose(compose(a, b), c), p)
    right = apply(compose(a, compose(b, c)), p)
    np.testing.assert_allclose(left, right, atol=1e-7)
