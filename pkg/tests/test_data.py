from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from memorymamba.data import (
    SynthSpec,
    batches,
    bilinear_resize,
    epoch_order,
    load_split,
    preprocess,
    scan_folder,
    synth_generate,
)
from memorymamba.errors import DataError, ManifestError

# 2x2 identity checkerboard upsampled to 4x4 with half-pixel centres: each axis
# maps [a, b] to [a, 3a/4 + b/4, a/4 + 3b/4, b]
CHECKER_4X4 = np.array(
    [
        [1.0, 0.75, 0.25, 0.0],
        [0.75, 0.625, 0.375, 0.25],
        [0.25, 0.375, 0.625, 0.75],
        [0.0, 0.25, 0.75, 1.0],
    ]
)


def png(arr) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def dummy_layout(root: Path, train: list, test: list):
    for split, counts in (("train", train), ("test", test)):
        for k, n in enumerate(counts):
            d = root / split / f"class_{k:02d}"
            d.mkdir(parents=True)
            for i in range(n):
                (d / f"{i:05d}.jpg").touch()


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestScanFolder:
    @pytest.mark.parametrize(
        "train,test,classes,n_train,n_test",
        [
            ([70, 69, 69, 69], [31, 31, 31, 30], 4, 277, 123),
            ([184] * 4 + [183] * 6, [46] * 8 + [45] * 2, 10, 1834, 458),
        ],
        ids=["aluminum", "gc10"],
    )
    def test_published_split_sizes(self, tmp_path, train, test, classes, n_train, n_test):
        dummy_layout(tmp_path, train, test)
        m = scan_folder(tmp_path)
        assert len(m.class_names) == classes
        assert m.counts() == {"train": n_train, "test": n_test}

    def test_empty_root(self, tmp_path):
        with pytest.raises(ManifestError):
            scan_folder(tmp_path)
        (tmp_path / "train").mkdir()
        (tmp_path / "test").mkdir()
        with pytest.raises(ManifestError):
            scan_folder(tmp_path)

    def test_missing_root(self, tmp_path):
        with pytest.raises(ManifestError):
            scan_folder(tmp_path / "nope")

    def test_empty_class_directory(self, tmp_path):
        dummy_layout(tmp_path, [2, 2], [1, 1])
        (tmp_path / "test" / "class_02").mkdir(parents=True)
        (tmp_path / "train" / "class_02").mkdir(parents=True)
        with pytest.raises(ManifestError, match="class_02"):
            scan_folder(tmp_path)

    def test_labels_and_stability(self, tmp_path):
        dummy_layout(tmp_path, [2, 3], [1, 1])
        (tmp_path / "train" / "class_00" / "notes.txt").touch()
        a, b = scan_folder(tmp_path), scan_folder(tmp_path)
        assert a.checksum == b.checksum
        assert a.class_names == ["class_00", "class_01"]
        assert all(s.path.split("/")[1] == a.class_names[s.label] for s in a.samples)
        assert not {s.path for s in a.split("train")} & {s.path for s in a.split("test")}
        assert len(a.split("train")) == 5


class TestPreprocess:
    def test_white_and_black(self):
        np.testing.assert_array_equal(preprocess(png(np.full((5, 5, 3), 255)), 5), np.ones((5, 5, 3)))
        np.testing.assert_array_equal(preprocess(png(np.zeros((5, 5, 3))), 5), -np.ones((5, 5, 3)))

    def test_grayscale_replicated(self):
        out = preprocess(png(np.full((4, 4), 255)), 4)
        assert out.shape == (4, 4, 3)

    def test_bilinear_hand_case(self):
        out = bilinear_resize(np.eye(2)[..., None], 4)[..., 0]
        np.testing.assert_allclose(out, CHECKER_4X4, atol=1e-15)
        pre = preprocess(png(np.repeat((np.eye(2) * 255)[..., None], 3, axis=2)), 4)
        np.testing.assert_allclose(pre[..., 0], 2 * CHECKER_4X4 - 1, atol=1e-6)

    def test_undecodable(self):
        with pytest.raises(DataError):
            preprocess(b"definitely not an image", 8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 12))
    def test_range(self, seed, h, size):
        img = np.random.default_rng(seed).integers(0, 256, size=(h, h + 1, 3))
        out = preprocess(png(img), size)
        assert out.shape == (size, size, 3) and out.dtype == np.float32
        assert out.min() >= -1.0 and out.max() <= 1.0


class TestBatches:
    def test_sizes(self):
        x, y = np.zeros((10, 1)), np.arange(10)
        assert [len(b) for _, b in batches(x, y, 4, seed=0, epoch=0)] == [4, 4, 2]

    def test_same_seed_epoch_same_order(self):
        np.testing.assert_array_equal(epoch_order(20, 3, 5), epoch_order(20, 3, 5))

    def test_epochs_differ(self):
        assert not np.array_equal(epoch_order(10, 7, 0), epoch_order(10, 7, 1))

    def test_unshuffled(self):
        np.testing.assert_array_equal(epoch_order(5, 7, 3, shuffle=False), np.arange(5))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 16), st.integers(0, 99), st.integers(0, 9))
    def test_covers_split_once(self, n, bs, seed, epoch):
        y = np.arange(n)
        seen = np.concatenate([b for _, b in batches(np.zeros((n, 1)), y, bs, seed, epoch)])
        assert sorted(seen.tolist()) == list(range(n))


class TestSynth:
    def test_counts(self, synth_dataset):
        assert synth_dataset.counts() == {"train": 104, "test": 24}
        assert len(synth_dataset.class_names) == 4
        for k in range(4):
            assert sum(s.label == k for s in synth_dataset.split("train")) == 26

    def test_deterministic(self, tmp_path):
        spec = SynthSpec(num_classes=3, images_per_class=4, image_size=16, seed=1)
        synth_generate(spec, tmp_path / "a")
        synth_generate(spec, tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
        other = SynthSpec(num_classes=3, images_per_class=4, image_size=16, seed=2)
        synth_generate(other, tmp_path / "c")
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")

    def test_extra_classes(self, tmp_path):
        m = synth_generate(SynthSpec(num_classes=6, images_per_class=2, image_size=16), tmp_path)
        assert len(m.class_names) == 6

    def test_blob_differs_from_clean(self, synth_dataset):
        x, y = load_split(synth_dataset, "train", 64)
        stat = x.max(axis=(1, 2, 3))
        names = synth_dataset.class_names
        clean, blob = stat[y == names.index("clean")], stat[y == names.index("blob")]
        sigma = np.sqrt((clean.var(ddof=1) + blob.var(ddof=1)) / 2)
        assert abs(blob.mean() - clean.mean()) >= 2 * sigma

    def test_load_split_order_independent_of_threads(self, tiny_dataset, monkeypatch):
        a, la = load_split(tiny_dataset, "train", 16)
        monkeypatch.setenv("MEMMAMBA_THREADS", "3")
        b, lb = load_split(tiny_dataset, "train", 16)
        assert a.tobytes() == b.tobytes()
        np.testing.assert_array_equal(la, lb)

    def test_every_class_has_both_splits(self, tmp_path):
        m = synth_generate(SynthSpec(num_classes=2, images_per_class=2, image_size=16), tmp_path)
        assert m.counts() == {"train": 2, "test": 2}
        with pytest.raises(DataError):
            synth_generate(SynthSpec(num_classes=2, images_per_class=1, image_size=16), tmp_path / "x")
