import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from primbench.geometry import (
    KINDS,
    TORUS_MONOMIALS,
    GeometryError,
    ImplicitPrimitive,
    ParametricPrimitive,
    PrimitiveKind,
    TrimRegion,
    bounding_box_diagonal,
    distance_to_surface,
    eval_implicit,
    eval_parametric,
    make_cone,
    make_cylinder,
    make_plane,
    make_sphere,
    make_torus,
    normalize_coefficients,
    parametric_to_implicit,
    sample_surface,
    transform,
)

from helpers import (
    grid_samples,
    nearest_point_oracle,
    oracle_trim,
    patch_trim,
    random_primitive,
    random_rigid,
)

P = PrimitiveKind


def canonical_torus(big=2.0, small=0.5):
    return ParametricPrimitive(
        P.TORUS,
        [big, 0, 0, 0, big, 0, small, 0, 0, 0, small, 0, 0, 0, small, 0, 0, 0],
    )


class TestEvalParametric:
    def test_plane_identity_frame(self):
        p = ParametricPrimitive(P.PLANE, [1, 0, 0, 0, 1, 0, 0, 0, 0])
        npt.assert_allclose(eval_parametric(p, 1, 2), [1, 2, 0])

    def test_canonical_sphere(self):
        p = ParametricPrimitive(P.SPHERE, [1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0])
        npt.assert_allclose(eval_parametric(p, 0, 0), [1, 0, 0])

    def test_torus_outer_equator(self):
        npt.assert_allclose(eval_parametric(canonical_torus(), 0, 0), [2.5, 0, 0])

    def test_broadcasting(self):
        p = make_cylinder([0, 0, 0], [0, 0, 1], 1.0)
        out = eval_parametric(p, np.zeros((4, 5)), np.ones((4, 5)))
        assert out.shape == (4, 5, 3)


class TestWellFormedness:
    @pytest.mark.parametrize(
        "kind, params",
        [
            (P.PLANE, [1, 0, 0, 2, 0, 0, 0, 0, 0]),
            (P.CYLINDER, [1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]),
            (P.CYLINDER, [1, 0, 0, 0, 1, 0, 1, 0, 1, 0, 0, 0]),
            (P.SPHERE, [1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]),
            (P.TORUS, [1, 0, 0, 0, 1, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]),
            (P.CONE, [0] * 18),
        ],
    )
    def test_degenerate_rejected(self, kind, params):
        with pytest.raises(GeometryError):
            ParametricPrimitive(kind, params)

    def test_wrong_length(self):
        with pytest.raises(GeometryError):
            ParametricPrimitive(P.PLANE, [1, 0, 0])

    def test_cone_decoding_general_form(self):
        # radius 1 at v=0 shrinking with slope 0.5 per unit height 1: apex at v=2
        p = ParametricPrimitive(P.CONE, [1, 0, 0, 0, 1, 0, -0.5, 0, 0, 0, -0.5, 0, 0, 0, 1, 0, 0, 0])
        npt.assert_allclose(p.shape.center, [0, 0, 2])
        assert p.shape.half_angle == pytest.approx(math.atan(0.5))


class TestImplicit:
    def test_plane_point_on_plane(self):
        assert eval_implicit(ImplicitPrimitive(P.PLANE, [0, 0, 1, 0]), [3, 4, 0]) == 0

    def test_sphere_value_before_and_after_normalization(self):
        raw = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, -1.0])
        imp = ImplicitPrimitive(P.SPHERE, raw)
        # x^2+y^2+z^2-1 at (2,0,0) is 3, divided by the norm 2
        assert eval_implicit(imp, [2, 0, 0]) == pytest.approx(3 / 2)

    def test_cylinder_value(self):
        imp = ImplicitPrimitive(P.CYLINDER, [1, 1, 0, 0, 0, 0, 0, 0, 0, -1.0])
        assert eval_implicit(imp, [0, 0, 5]) == pytest.approx(-1 / math.sqrt(3))

    def test_quadric_cross_terms_carry_factor_two(self):
        # normalized d = 1 contributes 2*d*x*y
        imp = ImplicitPrimitive(P.CONE, [0, 0, 0, 0.5, 0, 0, 0, 0, 0, 0])
        assert eval_implicit(imp, [2, 3, 7]) == pytest.approx(12.0)

    def test_unit_sphere_conversion(self):
        imp = parametric_to_implicit(make_sphere([0, 0, 0], 1.0))
        npt.assert_allclose(imp.coeffs, np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, -1]) / 2, atol=1e-15)

    def test_plane_conversion(self):
        imp = parametric_to_implicit(ParametricPrimitive(P.PLANE, [1, 0, 0, 0, 1, 0, 0, 0, 0]))
        npt.assert_allclose(imp.coeffs, [0, 0, 1, 0])

    def test_torus_monomial_order(self):
        assert len(TORUS_MONOMIALS) == 35
        assert TORUS_MONOMIALS[0] == (4, 0, 0)
        assert TORUS_MONOMIALS[1:4] == ((3, 1, 0), (3, 0, 1), (3, 0, 0))
        assert TORUS_MONOMIALS[-1] == (0, 0, 0)

    def test_canonical_torus_coefficients(self):
        big, small = 2.0, 0.5
        # (x^2+y^2+z^2+R^2-r^2)^2 - 4R^2(x^2+y^2), expanded by hand
        k = big**2 - small**2
        expected = {
            (4, 0, 0): 1, (0, 4, 0): 1, (0, 0, 4): 1,
            (2, 2, 0): 2, (2, 0, 2): 2, (0, 2, 2): 2,
            (2, 0, 0): 2 * k - 4 * big**2, (0, 2, 0): 2 * k - 4 * big**2,
            (0, 0, 2): 2 * k, (0, 0, 0): k**2,
        }
        vec = np.array([expected.get(m, 0.0) for m in TORUS_MONOMIALS])
        imp = parametric_to_implicit(canonical_torus(big, small))
        npt.assert_allclose(imp.coeffs, normalize_coefficients(vec), atol=1e-14)

    def test_torus_conversion_vanishes_on_samples(self):
        p = canonical_torus()
        imp = parametric_to_implicit(p)
        pts = grid_samples(p, patch_trim(P.TORUS), 400)
        assert np.abs(eval_implicit(imp, pts)).max() <= 1e-9

    @pytest.mark.parametrize("kind", KINDS)
    def test_round_trip_random(self, kind):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p = random_primitive(kind, rng)
            imp = parametric_to_implicit(p)
            u, v = rng.uniform(-3, 3, (2, 50))
            assert np.abs(eval_implicit(imp, eval_parametric(p, u, v))).max() <= 1e-9


class TestNormalize:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ([0, -2, 0, 0], [0, 1, 0, 0]),
            ([3, 4, 0, 0], [0.6, 0.8, 0, 0]),
            ([1, 0, 0, 0], [1, 0, 0, 0]),
        ],
    )
    def test_examples(self, raw, expected):
        npt.assert_allclose(normalize_coefficients(raw), expected, atol=1e-15)

    def test_zero_vector(self):
        with pytest.raises(GeometryError):
            normalize_coefficients([0, 0, 0, 0])

    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=10).filter(
            lambda v: np.linalg.norm(v) > 1e-3
        ),
        st.floats(1e-3, 1e3),
        st.sampled_from([-1.0, 1.0]),
    )
    def test_scale_sign_invariance_and_idempotence(self, v, alpha, sign):
        n1 = normalize_coefficients(v)
        npt.assert_allclose(np.linalg.norm(n1), 1.0)
        npt.assert_allclose(normalize_coefficients(n1), n1, atol=1e-15)
        npt.assert_allclose(normalize_coefficients(sign * alpha * np.asarray(v)), n1, atol=1e-12)


class TestDistance:
    def test_sphere_radial_offset(self):
        assert distance_to_surface(make_sphere([0, 0, 0], 1), [0, 0, 1.1]) == pytest.approx(0.1)

    def test_plane_on_surface(self):
        assert distance_to_surface(make_plane([0, 0, 0], [0, 0, 1]), [7, -2, 0]) == 0

    def test_torus_on_core_circle(self):
        assert distance_to_surface(canonical_torus(), [2, 0, 0]) == pytest.approx(0.5)

    def test_torus_against_dense_sampling(self):
        p = canonical_torus()
        q = np.array([[2.0, 0.0, 0.0], [0.3, 0.2, 0.1], [3.0, 1.0, 0.7]])
        npt.assert_allclose(
            distance_to_surface(p, q), nearest_point_oracle(p, patch_trim(P.TORUS), q), atol=1e-6
        )

    def test_cone_apex_and_both_nappes(self):
        p = make_cone([0, 0, 0], [0, 0, 1], math.pi / 4)
        assert distance_to_surface(p, [0, 0, 0]) == 0
        # below the apex, on the axis: distance to either nappe is |z| sin(45deg)
        assert distance_to_surface(p, [0, 0, -2]) == pytest.approx(2 * math.sin(math.pi / 4))
        assert distance_to_surface(p, [1, 0, -1]) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_on_surface(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(10):
            p = random_primitive(kind, rng)
            u, v = rng.uniform(-3, 3, (2, 100))
            assert distance_to_surface(p, eval_parametric(p, u, v)).max() <= 1e-9

    @pytest.mark.parametrize("kind", KINDS)
    def test_against_brute_force(self, kind):
        rng = np.random.default_rng(3)
        trim = oracle_trim(kind)
        for _ in range(3):
            p = random_primitive(kind, rng)
            u0, v0 = rng.uniform(-1, 1, (2, 20))
            q = eval_parametric(p, u0, v0) + rng.normal(scale=0.25, size=(20, 3))
            expected = nearest_point_oracle(p, trim, q, n=40_000)
            diag = bounding_box_diagonal(grid_samples(p, trim, 40_000))
            npt.assert_allclose(distance_to_surface(p, q), expected, atol=1e-3 * diag)

    @pytest.mark.parametrize("kind", KINDS)
    def test_rigid_motion_equivariance(self, kind):
        rng = np.random.default_rng(5)
        p = random_primitive(kind, rng)
        q = rng.normal(size=(50, 3))
        rot, t = random_rigid(rng, spread=3.0)
        moved = transform(p, rot, t)
        npt.assert_allclose(
            distance_to_surface(moved, q @ rot.T + t), distance_to_surface(p, q), atol=1e-9
        )


class TestSampling:
    def test_plane_square(self):
        p = make_plane([0, 0, 0], [0, 0, 1])
        pts = sample_surface(p, TrimRegion(0, 1, 0, 1), 4, seed=1)
        assert pts.shape == (4, 3)
        assert np.abs(eval_implicit(parametric_to_implicit(p), pts)).max() < 1e-12

    def test_sphere_centroid(self):
        p = make_sphere([1, 2, 3], 2.0)
        pts = sample_surface(p, patch_trim(P.SPHERE), 1000, seed=2)
        assert np.linalg.norm(pts.mean(axis=0) - [1, 2, 3]) < 0.1 * 2.0

    def test_sphere_area_uniformity(self):
        # uniform by area => z is uniform on [-r, r] (Archimedes)
        pts = sample_surface(make_sphere([0, 0, 0], 1.0), patch_trim(P.SPHERE), 20_000, seed=4)
        hist, _ = np.histogram(pts[:, 2], bins=4, range=(-1, 1))
        npt.assert_allclose(hist / 20_000, 0.25, atol=0.02)

    def test_cylinder_radius(self):
        p = make_cylinder([0, 0, 0], [0, 0, 1], 0.7)
        pts = sample_surface(p, TrimRegion(0, 2 * math.pi, 0, 1), 500, seed=3)
        npt.assert_allclose(np.hypot(pts[:, 0], pts[:, 1]), 0.7, atol=1e-12)

    def test_deterministic(self):
        p = canonical_torus()
        a = sample_surface(p, patch_trim(P.TORUS), 100, seed=9)
        b = sample_surface(p, patch_trim(P.TORUS), 100, seed=9)
        npt.assert_array_equal(a, b)

    def test_degenerate_trim(self):
        with pytest.raises(GeometryError):
            TrimRegion(0, 0, 0, 1)
        with pytest.raises(GeometryError):
            sample_surface(make_sphere([0, 0, 0], 1), TrimRegion(0, 7, 0, 1), 3, seed=0)

    def test_mask(self):
        p = make_plane([0, 0, 0], [0, 0, 1])
        pts, u, v = sample_surface(
            p, TrimRegion(-1, 1, -1, 1), 300, seed=0,
            mask=lambda u, v: u * u + v * v >= 0.25, return_params=True,
        )
        assert (u * u + v * v >= 0.25).all()


class TestBoundingBox:
    def test_examples(self):
        assert bounding_box_diagonal([[0, 0, 0], [1, 1, 1]]) == pytest.approx(math.sqrt(3))
        assert bounding_box_diagonal([[1, 2, 3]]) == 0
        assert bounding_box_diagonal([[0, 0, 0], [1, 0, 0], [0, 2, 0]]) == pytest.approx(math.sqrt(5))

    def test_empty(self):
        with pytest.raises(GeometryError):
            bounding_box_diagonal(np.zeros((0, 3)))
