import numpy as np
import pytest

from hyperhash.errors import InvalidArgumentError
from hyperhash.hdc_core import bind, cosine_similarity, is_phase_vector
from hyperhash.spatial_encoder import (
    ObjectPlacement,
    SceneRep,
    compose_scene,
    encode_axis,
    encode_position,
    encode_positions,
    expected_position_kernel,
    flatten,
    new_basis,
    scene_matrix,
)

D = 10_000


@pytest.fixture
def basis():
    return new_basis(17, D)


class TestBasis:

    def test_deterministic_and_cached(self):
        first, second = new_basis(5, 1000), new_basis(5, 1000)
        assert first is second
        np.testing.assert_array_equal(first.b_x, second.b_x)

    def test_arrays_are_read_only(self, basis):
        with pytest.raises(ValueError):
            basis.b_x[0] = 1.0

    def test_axes_uncorrelated(self, basis):
        assert abs(np.corrcoef(basis.b_x, basis.b_y)[0, 1]) < 0.04

    def test_unit_variance(self, basis):
        assert np.var(basis.b_x) == pytest.approx(1.0, abs=0.05)

    def test_invalid_dimension(self):
        with pytest.raises(InvalidArgumentError):
            new_basis(1, 0)


class TestEncodePosition:

    def test_origin_is_all_ones(self, basis):
        np.testing.assert_allclose(encode_position(basis, 0.0, 0.0, 0.3), np.ones(D))

    def test_unit_modulus(self, basis, rng):
        for x, y in rng.uniform(0.0, 1.0, (10, 2)):
            assert is_phase_vector(encode_position(basis, x, y, 0.1))

    def test_factorises_over_axes(self, basis):
        joint = encode_position(basis, 0.3, 0.7, 0.5)
        factored = bind(encode_axis(basis.b_x, 0.3, 0.5), encode_axis(basis.b_y, 0.7, 0.5))
        np.testing.assert_allclose(joint, factored, atol=1e-12)

    def test_batch_matches_single(self, basis):
        rows = encode_positions(basis, [0.1, 0.9], [0.4, 0.2], 1.0)
        np.testing.assert_array_equal(rows[1], encode_position(basis, 0.9, 0.2, 1.0))

    def test_unit_displacement_at_unit_scale(self, basis):
        sim = cosine_similarity(encode_position(basis, 0, 0, 1.0), encode_position(basis, 0.6, 0.8, 1.0))
        assert sim == pytest.approx(np.exp(-0.5), abs=0.03)

    def test_kernel_convergence_grid(self, basis):
        """Empirical similarity within 3/sqrt(D) of exp(-|d|^2 / 2w^2) on a 5x5 grid per w."""
        for w in (0.1, 1.0, 10.0):
            origin = encode_position(basis, 0.0, 0.0, w)
            for dx in np.linspace(-1.5, 1.5, 5) * w:
                for dy in np.linspace(-1.5, 1.5, 5) * w:
                    empirical = cosine_similarity(origin, encode_position(basis, dx, dy, w))
                    assert abs(empirical - expected_position_kernel(dx, dy, w)) <= 3.0 / np.sqrt(D)

    def test_larger_scale_decays_slower(self, basis):
        for dx, dy in [(0.05, 0.0), (0.1, 0.1), (0.3, -0.2)]:
            wide = cosine_similarity(encode_position(basis, 0, 0, 10.0), encode_position(basis, dx, dy, 10.0))
            narrow = cosine_similarity(encode_position(basis, 0, 0, 0.1), encode_position(basis, dx, dy, 0.1))
            assert wide > narrow

    def test_translation_stationarity(self, basis):
        w = 0.2
        a = cosine_similarity(encode_position(basis, 0.1, 0.2, w), encode_position(basis, 0.3, 0.5, w))
        b = cosine_similarity(encode_position(basis, 0.5, 0.4, w), encode_position(basis, 0.7, 0.7, w))
        assert a == pytest.approx(b, abs=1e-9)

    @pytest.mark.parametrize("w", [0.0, -1.0])
    def test_non_positive_scale(self, basis, w):
        with pytest.raises(InvalidArgumentError):
            encode_position(basis, 0.1, 0.1, w)
        with pytest.raises(InvalidArgumentError):
            expected_position_kernel(0.0, 0.0, w)


class TestExpectedKernel:

    def test_zero_displacement(self):
        assert expected_position_kernel(0.0, 0.0, 0.7) == 1.0

    def test_closed_form_values(self):
        assert expected_position_kernel(1.0, 0.0, 1.0) == pytest.approx(0.60653, abs=1e-5)
        assert expected_position_kernel(3.0, 4.0, 5.0) == pytest.approx(np.exp(-0.5), abs=1e-12)


class TestComposeScene:

    def test_no_objects_gives_global(self, basis, rng):
        g = rng.standard_normal(D)
        scene = compose_scene(g, [], 1.0, basis, 0.1)
        np.testing.assert_array_equal(scene.h.real, g)
        np.testing.assert_array_equal(scene.h.imag, np.zeros(D))

    def test_single_object_preserves_magnitudes(self, basis, rng):
        f = rng.standard_normal(D)
        scene = compose_scene(np.zeros(D), [ObjectPlacement(f, 0.4, 0.6)], 1.0, basis, 0.5)
        np.testing.assert_allclose(scene.h, bind(f, encode_position(basis, 0.4, 0.6, 0.5)), atol=1e-12)
        np.testing.assert_allclose(np.abs(scene.h), np.abs(f), atol=1e-12)

    def test_weight_linearity_exact(self, basis, rng):
        """Integer features at the origin keep every sum exact, so the identity holds bit for bit."""
        g, f1, f2 = rng.integers(-50, 50, (3, D)).astype(np.float64)
        objects = [ObjectPlacement(f1, 0.0, 0.0), ObjectPlacement(f2, 0.0, 0.0)]
        doubled = [ObjectPlacement(f1, 0.0, 0.0, eta=2.0), objects[1]]
        base = compose_scene(g, objects, 1.0, basis, 0.1).h
        term = bind(f1, encode_position(basis, 0.0, 0.0, 0.1))
        assert np.array_equal(compose_scene(g, doubled, 1.0, basis, 0.1).h, base + term)

    def test_weight_linearity(self, basis, rng):
        """Equal up to floating-point reassociation of the sum."""
        g, f1, f2 = rng.standard_normal((3, D))
        objects = [ObjectPlacement(f1, 0.2, 0.3), ObjectPlacement(f2, 0.8, 0.1)]
        doubled = [ObjectPlacement(f1, 0.2, 0.3, eta=2.0), objects[1]]
        base = compose_scene(g, objects, 1.0, basis, 0.1).h
        term = bind(f1, encode_position(basis, 0.2, 0.3, 0.1))
        np.testing.assert_allclose(compose_scene(g, doubled, 1.0, basis, 0.1).h, base + term, rtol=0, atol=1e-10)

    def test_displacement_gap_follows_kernel(self, basis, rng):
        f = rng.standard_normal(D)
        w = 0.1
        anchor = compose_scene(np.zeros(D), [ObjectPlacement(f, 0.2, 0.2)], 1.0, basis, w).flat
        same = compose_scene(np.zeros(D), [ObjectPlacement(f, 0.2, 0.2)], 1.0, basis, w).flat
        moved = compose_scene(np.zeros(D), [ObjectPlacement(f, 0.5, 0.6)], 1.0, basis, w).flat
        gap = cosine_similarity(anchor, same) - cosine_similarity(anchor, moved)
        assert gap > 0
        assert gap == pytest.approx(1.0 - expected_position_kernel(0.3, 0.4, w), abs=0.05)

    def test_normalize_flag_removes_feature_scale(self, basis, rng):
        g, f = rng.standard_normal((2, D))
        plain = compose_scene(g, [ObjectPlacement(f, 0.5, 0.5)], 1.0, basis, 1.0, normalize=True)
        scaled = compose_scene(3 * g, [ObjectPlacement(5 * f, 0.5, 0.5)], 1.0, basis, 1.0, normalize=True)
        np.testing.assert_allclose(plain.h, scaled.h, atol=1e-12)

    def test_length_mismatch(self, basis, rng):
        with pytest.raises(InvalidArgumentError):
            compose_scene(rng.standard_normal(D - 1), [], 1.0, basis, 0.1)
        with pytest.raises(InvalidArgumentError):
            compose_scene(rng.standard_normal(D), [ObjectPlacement(np.ones(3), 0.5, 0.5)], 1.0, basis, 0.1)

    def test_placement_validation(self):
        with pytest.raises(InvalidArgumentError):
            ObjectPlacement(np.ones(3), 0.5, 0.5, eta=0.0)
        with pytest.raises(InvalidArgumentError):
            ObjectPlacement(np.ones(3), 1.5, 0.5)


class TestFlatten:

    def test_real_scene_has_zero_second_half(self, rng):
        flat = flatten(SceneRep(rng.standard_normal(50)))
        np.testing.assert_array_equal(flat[50:], np.zeros(50))

    def test_round_trip(self, rng):
        h = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        scene = SceneRep(h)
        np.testing.assert_array_equal(scene.flat[:40], h.real)
        np.testing.assert_array_equal(scene.flat[40:], h.imag)
        np.testing.assert_array_equal(SceneRep.from_flat(scene.flat).h, h)

    def test_imaginary_unit_rotates_to_orthogonal(self, rng):
        h = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        assert cosine_similarity(SceneRep(h).flat, SceneRep(1j * h).flat) == pytest.approx(0.0, abs=1e-12)

    def test_scene_matrix(self, rng):
        scenes = [SceneRep(rng.standard_normal(5) + 1j) for _ in range(3)]
        matrix = scene_matrix(scenes)
        assert matrix.shape == (3, 10)
        np.testing.assert_array_equal(matrix[2], scenes[2].flat)
        assert scene_matrix([], dimension=5).shape == (0, 10)
