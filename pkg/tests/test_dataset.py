import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mact.dataset import (
    AugmentationSpec,
    Episode,
    augment,
    augment_depth,
    collate,
    load_episode,
    load_manifest,
    make_sample,
    pad_history,
    read_array,
    record_episode,
    sample_batch,
    save_episode,
    write_manifest,
)
from mact.errors import (
    EpisodeFormatError,
    MissingMetadataError,
    ParameterError,
    ShapeHeaderError,
    ShapeMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from mact.sim import EnvConfig, reset, step
from mact.taskgen import TaskSpec, build_path

CFG = EnvConfig(resolution=32, task=TaskSpec(kind="contour"))


@pytest.fixture(scope="module")
def episode():
    return record_episode(CFG, 3)


def _assert_same_episode(a: Episode, b: Episode):
    for name in ("rgb", "depth", "position", "action"):
        x, y = getattr(a, name), getattr(b, name)
        assert x.dtype == y.dtype and x.tobytes() == y.tobytes()
    assert a.config == b.config and a.seed == b.seed


class TestRecording:
    def test_length_tracks_path(self, episode):
        s, _ = reset(CFG, 3)
        n_wp = len(build_path(CFG.task, s.region, s.field, start=s.probe.position))
        # each waypoint takes at least one step; the approach from the start
        # position and the closing frame add a bounded number more
        assert n_wp <= len(episode) <= n_wp + 20

    def test_deterministic(self, episode):
        _assert_same_episode(episode, record_episode(CFG, 3))

    def test_actions_replay_positions(self, episode):
        s, _ = reset(CFG, 3)
        for t in range(len(episode) - 1):
            assert np.allclose(s.probe.position, episode.position[t], atol=1e-6)
            s, _, _ = step(s, episode.action[t])
        assert np.allclose(s.probe.position, episode.position[-1], atol=1e-6)

    def test_shapes(self, episode):
        n = len(episode)
        assert episode.rgb.shape == (n, 32, 32, 3) and episode.rgb.dtype == np.float32
        assert episode.depth.shape == (n, 32, 32)
        assert episode.position.shape == episode.action.shape == (n, 3)


class TestDiskFormat:
    def test_round_trip(self, episode, tmp_path):
        save_episode(episode, tmp_path / "ep")
        _assert_same_episode(episode, load_episode(tmp_path / "ep"))

    def test_corrupt_shape_header(self, episode, tmp_path):
        d = save_episode(episode, tmp_path / "ep")
        raw = bytearray((d / "rgb.bin").read_bytes())
        raw[12] ^= 0xFF  # inside the first uint64 of the shape
        (d / "rgb.bin").write_bytes(bytes(raw))
        with pytest.raises(ShapeHeaderError):
            load_episode(d)

    def test_corrupt_payload(self, episode, tmp_path):
        d = save_episode(episode, tmp_path / "ep")
        raw = bytearray((d / "position.bin").read_bytes())
        raw[-3] ^= 0x01
        (d / "position.bin").write_bytes(bytes(raw))
        with pytest.raises(EpisodeFormatError):
            load_episode(d)

    def test_truncated(self, episode, tmp_path):
        d = save_episode(episode, tmp_path / "ep")
        raw = (d / "depth.bin").read_bytes()
        (d / "depth.bin").write_bytes(raw[:-10])
        with pytest.raises(TruncatedFileError):
            load_episode(d)
        (d / "depth.bin").write_bytes(raw[:5])
        with pytest.raises(TruncatedFileError):
            read_array(d / "depth.bin")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(MissingMetadataError, match="missing metadata"):
            load_episode(tmp_path)

    def test_version_mismatch(self, episode, tmp_path):
        d = save_episode(episode, tmp_path / "ep")
        meta = json.loads((d / "meta.json").read_text())
        meta["format_version"] = 99
        (d / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(VersionMismatchError):
            load_episode(d)

    def test_metadata_shape_mismatch(self, episode, tmp_path):
        d = save_episode(episode, tmp_path / "ep")
        meta = json.loads((d / "meta.json").read_text())
        meta["length"] += 1
        (d / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(ShapeMismatchError):
            load_episode(d)

    def test_manifest(self, episode, tmp_path):
        dirs = [save_episode(episode, tmp_path / "eps" / f"e{i}") for i in range(2)]
        write_manifest(dirs, tmp_path / "manifest.json")
        loaded = load_manifest(tmp_path / "manifest.json")
        assert len(loaded) == 2
        _assert_same_episode(loaded[1], episode)


class TestAugment:
    def setup_method(self):
        self.img = np.random.default_rng(0).uniform(0.1, 0.9, size=(16, 16, 3)).astype(np.float32)

    def test_disabled_identity(self):
        assert np.array_equal(augment(self.img, AugmentationSpec(), 5), self.img)

    def test_zero_magnitudes_identity(self):
        zero = AugmentationSpec(brightness=(0, 0), shear=(0, 0), blur=(0, 0), colour=(0, 0), noise=(0, 0),
                                dropout=(0, 0))
        assert np.array_equal(augment(self.img, zero, 5), self.img)
        d = self.img[..., 0] * 50
        assert np.array_equal(augment_depth(d, zero, 5), d)

    def test_brightness(self):
        img = np.full((8, 8, 3), 0.5)
        out = augment(img, AugmentationSpec(brightness=(0.1, 0.1)), 0)
        assert np.allclose(out, 0.6, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 0.3), st.floats(0.0, 0.2))
    def test_dropout_single_rectangle(self, seed, lo, width):
        hi = lo + width
        fill = -1.0  # distinguishable from any valid pixel
        out = augment(self.img, AugmentationSpec(dropout=(lo, hi), dropout_fill=fill), seed)
        changed = np.any(out != self.img, axis=-1)
        rows, cols = np.nonzero(changed)
        r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
        # changed pixels form exactly one filled axis-aligned rectangle
        assert changed.sum() == (r1 - r0 + 1) * (c1 - c0 + 1)
        assert np.all(out[r0:r1 + 1, c0:c1 + 1] == fill)
        frac = changed.sum() / changed.size
        # integer rounding of the side lengths on a 16x16 grid
        assert lo - 0.07 <= frac <= hi + 0.07

    def test_seeded(self):
        spec = AugmentationSpec.default()
        assert np.array_equal(augment(self.img, spec, 9), augment(self.img, spec, 9))
        assert not np.array_equal(augment(self.img, spec, 9), augment(self.img, spec, 10))

    def test_output_range(self):
        out = augment(self.img, AugmentationSpec.default(), 1)
        assert out.min() >= 0.0 and out.max() <= 1.0 and out.dtype == self.img.dtype

    def test_validate(self):
        AugmentationSpec.default().validate()
        with pytest.raises(ParameterError):
            AugmentationSpec(shear=(-90.0, 90.0)).validate()


class TestPadHistory:
    def test_single(self):
        assert pad_history(["x"], 3) == ["x", "x", "x"]

    def test_full_unchanged(self):
        assert pad_history(["a", "b", "c"], 3) == ["a", "b", "c"]

    def test_prepend_earliest(self):
        assert pad_history(["a", "b"], 4) == ["a", "a", "a", "b"]

    def test_longer_keeps_latest(self):
        assert pad_history([1, 2, 3, 4], 2) == [3, 4]

    def test_empty(self):
        with pytest.raises(ParameterError):
            pad_history([], 3)

    @given(st.lists(st.integers(), min_size=1, max_size=12), st.integers(1, 12))
    def test_properties(self, buf, T):
        out = pad_history(buf, T)
        assert len(out) == T
        assert pad_history(out, T) == out
        tail = buf[-T:]
        assert out[T - len(tail):] == tail
        assert all(x == tail[0] for x in out[: T - len(tail)])


class TestSamples:
    def test_start_padding(self, episode):
        s = make_sample(episode, 0, 4, 5)
        assert len(s.history) == 4
        assert all(np.array_equal(o.rgb, episode.rgb[0]) for o in s.history)

    def test_end_mask(self, episode):
        s = make_sample(episode, len(episode) - 1, 4, 5)
        assert s.chunk_mask.tolist() == [True, False, False, False, False]
        assert np.all(s.target_chunk == episode.action[-1])

    @given(st.integers(0, 10_000), st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_mask_monotone(self, t_raw, K):
        ep = self.ep
        s = make_sample(ep, t_raw % len(ep), 2, K)
        m = s.chunk_mask.astype(int)
        assert np.all(np.diff(m) <= 0) and m[0] == 1

    @pytest.fixture(autouse=True)
    def _ep(self, episode):
        self.ep = episode

    def test_sample_batch_deterministic(self, episode):
        a = sample_batch([episode, episode], 3, 2, 6, seed=4)
        b = sample_batch([episode, episode], 3, 2, 6, seed=4)
        assert [(s.episode_index, s.t) for s in a] == [(s.episode_index, s.t) for s in b]

    def test_collate_shapes(self, episode):
        samples = sample_batch([episode], 3, 2, 4, seed=0)
        b = collate(samples, AugmentationSpec.default(), seed=1)
        assert b.rgb.shape == (4, 3, 3, 32, 32)
        assert b.depth.shape == (4, 3, 1, 32, 32)
        assert b.target.shape == (4, 2, 3) and b.mask.shape == (4, 2)
        again = collate(samples, AugmentationSpec.default(), seed=1)
        assert np.array_equal(b.rgb, again.rgb)

    def test_shared_augmentation_across_frames(self, episode):
        samples = [make_sample(episode, 0, 3, 2)]  # all frames identical after padding
        b = collate(samples, AugmentationSpec.default(), seed=2)
        assert np.array_equal(b.rgb[0, 0], b.rgb[0, 2])
        b = collate(samples, AugmentationSpec.default(), seed=2, per_frame=True)
        assert not np.array_equal(b.rgb[0, 0], b.rgb[0, 2])
