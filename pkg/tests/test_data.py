import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffpkit.data import (
    EDIT_KINDS,
    DataParams,
    MotionSpec,
    ToyCodec,
    gen_dataset,
    gen_sample,
    load_dataset,
    rect_mask,
    save_dataset,
    toy_decode,
    toy_encode,
)
from ffpkit.errors import ConfigurationError, InvalidArgument


def footprint(sample, k):
    p = sample.source.shape
    return rect_mask(sample.motion, k, p[1], p[2])


class TestGenSample:
    @pytest.mark.parametrize("kind", EDIT_KINDS)
    def test_first_frame_is_edited_frame(self, kind):
        s = gen_sample(3, edit_kind=kind)
        assert np.array_equal(s.target[0], s.edited_first_frame)
        assert s.source.shape == s.target.shape == (4, 16, 16, 3)
        assert 0.0 <= s.target.min() and s.target.max() <= 1.0

    def test_color_swap_only_touches_the_rectangle(self):
        for seed in range(10):
            s = gen_sample(seed, edit_kind="color-swap")
            for k in range(s.source.shape[0]):
                outside = ~footprint(s, k)
                assert np.array_equal(s.target[k][outside], s.source[k][outside])

    def test_object_remove_shows_background(self):
        s = gen_sample(5, edit_kind="object-remove")
        for k in range(4):
            assert np.array_equal(s.target[k], s.background)
            assert np.array_equal(s.source[k][~footprint(s, k)], s.background[~footprint(s, k)])

    def test_identity_restyle(self):
        params = DataParams(restyle_matrix=np.eye(3))
        s = gen_sample(7, params, edit_kind="global-restyle")
        assert np.array_equal(s.target, s.source)

    def test_deterministic(self):
        a, b = gen_sample(11), gen_sample(11)
        assert np.array_equal(a.source, b.source) and np.array_equal(a.target, b.target)
        assert a.motion == b.motion and a.edit_kind == b.edit_kind

    @pytest.mark.parametrize("kw", [dict(height=4), dict(width=6), dict(frames=1)])
    def test_degenerate_canvas(self, kw):
        with pytest.raises(InvalidArgument):
            gen_sample(0, DataParams(**kw))

    def test_unknown_edit(self):
        with pytest.raises(ConfigurationError):
            DataParams(edit_kinds=("blur",))

    def test_dataset_is_prefix_stable(self):
        short, long = gen_dataset(0, 3), gen_dataset(0, 6)
        for a, b in zip(short, long):
            assert np.array_equal(a.target, b.target)

    def test_all_kinds_appear(self):
        assert {s.edit_kind for s in gen_dataset(0, 30)} == set(EDIT_KINDS)


class TestTrajectory:
    def test_linear_unit_speed(self):
        m = MotionSpec("linear", (2.0, 3.0), (3, 4), velocity=(1.0, 0.0))
        for k in range(4):
            assert m.origin_at(k) == (2.0 + k, 3.0)
            mask = rect_mask(m, k, 16, 16)
            ys, xs = np.nonzero(mask)
            assert (xs.min(), ys.min()) == (2 + k, 3)
            assert m.centroid_at(k) == (xs.mean(), ys.mean())

    def test_circular_radius(self):
        m = MotionSpec("circular", (0.0, 0.0), (3, 3), center=(6.0, 6.0), radius=2.0, angular_speed=0.5, phase=0.1)
        for k in range(5):
            x, y = m.origin_at(k)
            assert np.hypot(x - 6.0, y - 6.0) == pytest.approx(2.0, abs=1e-12)

    def test_centroid_matches_rendered_pixels(self):
        for seed in range(20):
            s = gen_sample(seed)
            for k in range(4):
                mask = footprint(s, k)
                if mask.sum() == np.prod(s.motion.size):  # fully on canvas
                    ys, xs = np.nonzero(mask)
                    assert s.motion.centroid_at(k) == pytest.approx((xs.mean(), ys.mean()), abs=1e-12)


class TestCodec:
    def test_zero_clip(self):
        assert np.count_nonzero(toy_encode(np.zeros((2, 4, 4, 3)))) == 0

    def test_shapes(self):
        codec = ToyCodec(channels=4, patch=2)
        assert codec.encode(np.zeros((4, 16, 16, 3))).shape == (4, 8, 8, 4)
        assert codec.decode(np.zeros((4, 8, 8, 4))).shape == (4, 16, 16, 3)

    def test_orthonormal_basis(self):
        b = ToyCodec(channels=5, patch=2, seed=3).basis
        assert np.abs(b.T @ b - np.eye(5)).max() <= 1e-12

    def test_patch_round_trip(self):
        codec = ToyCodec()
        x = np.random.default_rng(0).uniform(size=(2, 6, 4, 3))
        assert np.array_equal(codec.unpatch(codec.patches(x)), x)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.integers(1, 12))
    def test_encode_decode_encode_unclamped(self, seed, c):
        codec = ToyCodec(channels=c, seed=seed)
        x = np.random.default_rng(seed).uniform(size=(2, 4, 6, 3))
        z = codec.encode(x)
        assert np.abs(codec.encode(codec.decode(z, clamp=False)) - z).max() <= 1e-10

    def test_encode_decode_encode_full_rank(self):
        codec = ToyCodec(channels=12)
        x = np.random.default_rng(1).uniform(size=(2, 4, 4, 3))
        z = codec.encode(x)
        assert np.abs(codec.encode(codec.decode(z)) - z).max() <= 1e-10

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.integers(1, 12))
    def test_isometry_on_row_space(self, seed, c):
        codec = ToyCodec(channels=c, seed=seed)
        z = np.random.default_rng(seed).standard_normal((3, 2, 2, c))
        back = codec.decode(z, clamp=False)
        assert np.linalg.norm(codec.encode(back)) == pytest.approx(np.linalg.norm(codec.patches(back)), abs=1e-10)

    def test_full_rank_reconstruction(self):
        codec = ToyCodec(channels=12)
        x = np.random.default_rng(2).uniform(size=(3, 4, 4, 3))
        assert np.abs(codec.decode(codec.encode(x)) - x).max() <= 1e-12

    def test_non_divisible(self):
        with pytest.raises(InvalidArgument):
            toy_encode(np.zeros((2, 5, 4, 3)))

    def test_too_many_channels(self):
        with pytest.raises(InvalidArgument):
            ToyCodec(channels=13, patch=2)

    def test_decoded_first_frames_agree(self):
        codec = ToyCodec()
        s = gen_sample(9)
        assert np.array_equal(
            toy_decode(toy_encode(s.target, codec), codec)[0],
            toy_decode(toy_encode(s.edited_first_frame[None], codec), codec)[0],
        )


class TestPersistence:
    def test_dataset_round_trip(self, tmp_path):
        params = DataParams(frames=3, height=8, width=8, rect_min=2, rect_max=3)
        samples = gen_dataset(4, 5, params)
        save_dataset(tmp_path / "d.npz", samples, params)
        back, p2 = load_dataset(tmp_path / "d.npz")
        assert p2 == params
        for a, b in zip(samples, back):
            for f in dataclasses.fields(a):
                x, y = getattr(a, f.name), getattr(b, f.name)
                if isinstance(x, np.ndarray):
                    assert np.array_equal(x, y)
                else:
                    assert x == y

    def test_params_round_trip(self):
        p = DataParams(frames=5, max_speed=0.5, edit_kinds=("color-swap",))
        assert DataParams.from_dict(p.to_dict()) == p

    def test_params_unknown_key(self):
        with pytest.raises(ConfigurationError):
            DataParams.from_dict({"frame": 4})
