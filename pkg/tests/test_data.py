import numpy as np
import pytest

from cdblab.data import (
    CorruptRecordError,
    CROP_PAD,
    DataFormatError,
    Dataset,
    SyntheticSpec,
    augment,
    crop_offsets,
    decode_cifar_file,
    generate_synthetic,
    load_dataset_cache,
    normalize_pair,
    save_dataset_cache,
    synthetic_glyphs,
)
from cdblab.rng import substream


def write_records(path, records):
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(bytes(rec))


def c10_record(label, fill=None):
    pixels = list(range(256)) * 12 if fill is None else [fill] * 3072
    return [label] + pixels[:3072]


class TestCifarDecode:
    def test_c10_single_record(self, tmp_path):
        p = tmp_path / "one.bin"
        write_records(p, [c10_record(7)])
        images, labels = decode_cifar_file(p, "c10")
        assert images.shape == (1, 3, 32, 32)
        assert images.dtype == np.float32
        assert labels.tolist() == [7]
        # first pixel is byte 1 of the file, raw value, no scaling
        assert images[0, 0, 0, 0] == 0.0
        assert images[0, 0, 0, 1] == 1.0
        # planes are R then G then B, row-major within each plane
        assert images[0, 1, 0, 0] == float((1024) % 256)

    def test_c10_multiple_records(self, tmp_path):
        p = tmp_path / "two.bin"
        write_records(p, [c10_record(0, fill=5), c10_record(9, fill=200)])
        images, labels = decode_cifar_file(p, "c10")
        assert labels.tolist() == [0, 9]
        assert np.all(images[0] == 5.0)
        assert np.all(images[1] == 200.0)

    def test_c100_keeps_fine_label(self, tmp_path):
        p = tmp_path / "c100.bin"
        write_records(p, [[19, 42] + [0] * 3072])  # coarse 19, fine 42
        _, labels = decode_cifar_file(p, "c100")
        assert labels.tolist() == [42]

    def test_wrong_length_rejected(self, tmp_path):
        p = tmp_path / "short.bin"
        p.write_bytes(bytes(100))
        with pytest.raises(DataFormatError, match="multiple of 3073"):
            decode_cifar_file(p, "c10")

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.bin"
        p.write_bytes(b"")
        with pytest.raises(DataFormatError):
            decode_cifar_file(p, "c10")

    def test_out_of_range_label_names_record(self, tmp_path):
        p = tmp_path / "bad.bin"
        write_records(p, [c10_record(3), c10_record(10)])
        with pytest.raises(CorruptRecordError, match="record 1"):
            decode_cifar_file(p, "c10")

    def test_unknown_variant(self, tmp_path):
        with pytest.raises(ValueError, match="c10 or c100"):
            decode_cifar_file(tmp_path / "x.bin", "c20")


class TestNormalizePair:
    def test_train_standardized(self):
        gen = substream(3, "norm")
        train = (50 + 10 * gen.standard_normal((40, 3, 8, 8))).astype(np.float32)
        test = (50 + 10 * gen.standard_normal((10, 3, 8, 8))).astype(np.float32)
        ntr, nte = normalize_pair(train, test)
        assert np.allclose(ntr.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        assert np.allclose(ntr.std(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_test_uses_train_statistics(self):
        train = np.zeros((4, 3, 2, 2), dtype=np.float32)
        train[0::2] = 0.0
        train[1::2] = 2.0  # mean 1, std 1 per channel
        test = np.full((2, 3, 2, 2), 3.0, dtype=np.float32)
        _, nte = normalize_pair(train, test)
        assert np.allclose(nte, 2.0)

    def test_constant_channel_rejected(self):
        train = np.ones((4, 3, 2, 2), dtype=np.float32)
        with pytest.raises(DataFormatError, match="constant"):
            normalize_pair(train, train.copy())


class TestAugment:
    def test_matches_manual_pad_and_crop(self):
        gen = substream(9, "aug")
        img = gen.standard_normal((3, 32, 32)).astype(np.float32)
        out = augment(img, substream(9, "aug-draws"))
        r, c = crop_offsets(substream(9, "aug-draws"))
        padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
        assert np.array_equal(out, padded[:, r : r + 32, c : c + 32])

    def test_shape_and_contiguity(self):
        img = np.zeros((3, 32, 32), dtype=np.float32)
        out = augment(img, substream(0, "a"))
        assert out.shape == img.shape
        assert out.flags["C_CONTIGUOUS"]

    def test_center_pixel_always_survives(self):
        img = np.zeros((3, 32, 32), dtype=np.float32)
        img[:, 16, 16] = 7.0
        for t in range(30):
            out = augment(img, substream(t, "surv"))
            assert np.count_nonzero(out) == 3
            assert set(np.unique(out)) == {0.0, 7.0}

    def test_offsets_uniform_over_81_cells(self):
        gen = substream(5, "unif")
        n = 16200  # 200 expected per cell
        counts = np.zeros((9, 9), dtype=np.int64)
        for _ in range(n):
            r, c = crop_offsets(gen)
            counts[r, c] += 1
        expected = n / 81.0
        sigma = np.sqrt(expected * (1 - 1 / 81.0))
        assert np.all(np.abs(counts - expected) <= 4 * sigma), counts

    def test_flip_off_consumes_no_draw(self):
        img = np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
        a, b = substream(2, "flip"), substream(2, "flip")
        augment(img, a, flip=False)
        crop_offsets(b)
        # both streams sit at the same point afterwards
        assert a.random() == b.random()

    def test_flip_mirrors_columns(self):
        img = np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
        flipped = 0
        for t in range(400):
            out = augment(img, substream(t, "mirror"), flip=True)
            r, c = crop_offsets(substream(t, "mirror"))
            padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
            crop = padded[:, r : r + 32, c : c + 32]
            if np.array_equal(out, crop[:, :, ::-1]):
                flipped += 1
            else:
                assert np.array_equal(out, crop)
        # binomial(400, 1/2), 4 sigma = 40
        assert abs(flipped - 200) <= 40

    def test_pad_width_constant(self):
        assert CROP_PAD == 4


class TestSyntheticSpec:
    def test_defaults_valid(self):
        spec = SyntheticSpec()
        assert spec.num_glyphs == spec.num_classes

    def test_too_few_classes(self):
        with pytest.raises(ValueError, match="at least 3 classes"):
            SyntheticSpec(num_classes=2, patches_per_class=2)

    def test_patch_count_bounds(self):
        with pytest.raises(ValueError, match="patches_per_class"):
            SyntheticSpec(num_classes=4, patches_per_class=1)
        with pytest.raises(ValueError, match="patches_per_class"):
            SyntheticSpec(num_classes=4, patches_per_class=4)

    def test_narrow_windows_rejected(self):
        # 2*p must exceed K, otherwise two classes exist with disjoint glyphs
        with pytest.raises(ValueError, match="windows too narrow"):
            SyntheticSpec(num_classes=4, patches_per_class=2)
        with pytest.raises(ValueError, match="windows too narrow"):
            SyntheticSpec(num_classes=5, patches_per_class=2)

    def test_glyph_size_bounds(self):
        with pytest.raises(ValueError, match="at least 3"):
            SyntheticSpec(glyph_size=2)
        with pytest.raises(ValueError):
            SyntheticSpec(glyph_size=40)

    def test_negative_noise_rejected(self):
        with pytest.raises(ValueError, match="noise"):
            SyntheticSpec(noise=-0.1)

    def test_packing_bound(self):
        with pytest.raises(ValueError, match="packed"):
            SyntheticSpec(num_classes=4, patches_per_class=3, glyph_size=14)

    def test_class_glyphs_cyclic_windows(self):
        spec = SyntheticSpec(num_classes=4, patches_per_class=3)
        assert spec.class_glyphs(0) == [0, 1, 2]
        assert spec.class_glyphs(1) == [1, 2, 3]
        assert spec.class_glyphs(3) == [3, 0, 1]

    def test_every_pair_shares_a_glyph(self):
        spec = SyntheticSpec(num_classes=5, patches_per_class=3)
        sets = [set(spec.class_glyphs(k)) for k in range(5)]
        for a in range(5):
            for b in range(a + 1, 5):
                assert sets[a] & sets[b], (a, b)

    def test_no_glyph_identifies_a_class(self):
        spec = SyntheticSpec(num_classes=4, patches_per_class=3)
        for g in range(spec.num_glyphs):
            holders = [k for k in range(4) if g in spec.class_glyphs(k)]
            assert len(holders) >= 2, g


class TestGlyphBank:
    def test_shapes_and_ranges(self):
        spec = SyntheticSpec(num_classes=5, patches_per_class=3)
        patterns, colors = synthetic_glyphs(spec)
        assert patterns.shape == (5, 5, 5)
        assert colors.shape == (5, 3)
        assert set(np.unique(patterns)) <= {0.0, 1.0}
        assert np.all(colors >= 0.6) and np.all(colors <= 1.0)

    def test_pairwise_distinct(self):
        spec = SyntheticSpec(num_classes=6, patches_per_class=4)
        patterns, _ = synthetic_glyphs(spec)
        cells = spec.glyph_size**2
        for a in range(6):
            for b in range(a + 1, 6):
                assert int(np.sum(patterns[a] != patterns[b])) >= cells // 4

    def test_ones_count_moderate(self):
        spec = SyntheticSpec()
        patterns, _ = synthetic_glyphs(spec)
        s = spec.glyph_size
        for g in range(patterns.shape[0]):
            assert s <= patterns[g].sum() <= s * s - s

    def test_deterministic(self):
        spec = SyntheticSpec(seed=123)
        p1, c1 = synthetic_glyphs(spec)
        p2, c2 = synthetic_glyphs(spec)
        assert np.array_equal(p1, p2) and np.array_equal(c1, c2)

    def test_seed_changes_bank(self):
        p1, _ = synthetic_glyphs(SyntheticSpec(seed=1))
        p2, _ = synthetic_glyphs(SyntheticSpec(seed=2))
        assert not np.array_equal(p1, p2)


SMALL = SyntheticSpec(num_classes=4, patches_per_class=3, samples_per_class=4,
                      test_per_class=2, noise=0.25, seed=7)


class TestGenerateSynthetic:
    def test_shapes_and_labels(self):
        train, test = generate_synthetic(SMALL)
        assert train.images.shape == (16, 3, 32, 32)
        assert test.images.shape == (8, 3, 32, 32)
        assert train.labels.tolist() == [0, 1, 2, 3] * 4
        assert test.labels.tolist() == [0, 1, 2, 3] * 2
        assert train.num_classes == 4
        assert train.glyph_boxes.shape == (16, 3, 4)
        assert train.glyph_boxes.dtype == np.int64

    def test_boxes_inside_image_and_disjoint(self):
        train, _ = generate_synthetic(SMALL)
        s = SMALL.glyph_size
        for i in range(len(train)):
            bs = train.glyph_boxes[i]
            for r0, c0, r1, c1 in bs:
                assert 0 <= r0 and r1 <= 32 and 0 <= c0 and c1 <= 32
                assert r1 - r0 == s and c1 - c0 == s
            for a in range(bs.shape[0]):
                for b in range(a + 1, bs.shape[0]):
                    ra0, ca0, ra1, ca1 = bs[a]
                    rb0, cb0, rb1, cb1 = bs[b]
                    overlap = ra0 < rb1 and rb0 < ra1 and ca0 < cb1 and cb0 < ca1
                    assert not overlap, (i, a, b)

    def test_boxes_hold_exact_stamps_when_noiseless(self):
        spec = SyntheticSpec(num_classes=4, patches_per_class=3, noise=0.0,
                             samples_per_class=2, test_per_class=1, seed=3)
        patterns, colors = synthetic_glyphs(spec)
        train, _ = generate_synthetic(spec, normalize=False)
        for i in range(len(train)):
            label = int(train.labels[i])
            img = train.images[i]
            for p, g in enumerate(spec.class_glyphs(label)):
                r0, c0, r1, c1 = train.glyph_boxes[i, p]
                want = patterns[g] * colors[g][:, None, None]
                assert np.array_equal(img[:, r0:r1, c0:c1], want), (i, p)
            # outside all boxes the image is exactly the zero background
            mask = np.ones((32, 32), dtype=bool)
            for r0, c0, r1, c1 in train.glyph_boxes[i]:
                mask[r0:r1, c0:c1] = False
            assert np.all(img[:, mask] == 0.0)

    def test_deterministic(self):
        a_train, a_test = generate_synthetic(SMALL)
        b_train, b_test = generate_synthetic(SMALL)
        assert np.array_equal(a_train.images, b_train.images)
        assert np.array_equal(a_test.images, b_test.images)
        assert np.array_equal(a_train.glyph_boxes, b_train.glyph_boxes)

    def test_splits_keyed_independently(self):
        # growing the train split must not move the test split (and vice
        # versa): every image draws from a stream keyed by split and index
        small = generate_synthetic(SMALL, normalize=False)
        grown = generate_synthetic(
            SyntheticSpec(num_classes=4, patches_per_class=3, samples_per_class=9,
                          test_per_class=2, noise=0.25, seed=7),
            normalize=False,
        )
        assert np.array_equal(small[1].images, grown[1].images)
        assert np.array_equal(small[0].images[:16], grown[0].images[:16])

    def test_train_test_differ(self):
        train, test = generate_synthetic(SMALL)
        assert not np.array_equal(train.images[:8], test.images)

    def test_normalized_train_statistics(self):
        train, _ = generate_synthetic(SMALL)
        assert np.allclose(train.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        assert np.allclose(train.images.std(axis=(0, 2, 3)), 1.0, atol=1e-4)


class TestDataset:
    def test_length_mismatch_rejected(self):
        with pytest.raises(DataFormatError):
            Dataset(np.zeros((3, 3, 4, 4), dtype=np.float32),
                    np.zeros(2, dtype=np.int64), 2)

    def test_subset_carries_boxes(self):
        train, _ = generate_synthetic(SMALL)
        sub = train.subset([3, 0])
        assert len(sub) == 2
        assert np.array_equal(sub.images[0], train.images[3])
        assert np.array_equal(sub.glyph_boxes[1], train.glyph_boxes[0])
        assert sub.num_classes == train.num_classes

    def test_subset_without_boxes(self):
        ds = Dataset(np.zeros((4, 3, 2, 2), dtype=np.float32),
                     np.arange(4, dtype=np.int64), 4)
        assert ds.subset([1, 2]).glyph_boxes is None


class TestDatasetCache:
    def test_round_trip_with_boxes(self, tmp_path):
        train, test = generate_synthetic(SMALL)
        p = tmp_path / "synth.cache"
        save_dataset_cache(p, train, test)
        rtrain, rtest = load_dataset_cache(p)
        for orig, back in ((train, rtrain), (test, rtest)):
            assert np.array_equal(orig.images, back.images)
            assert back.images.dtype == np.float32
            assert np.array_equal(orig.labels, back.labels)
            assert back.labels.dtype == np.int64
            assert np.array_equal(orig.glyph_boxes, back.glyph_boxes)
            assert back.glyph_boxes.dtype == np.int64
            assert back.num_classes == orig.num_classes

    def test_round_trip_without_boxes(self, tmp_path):
        gen = substream(1, "cache")
        ds = Dataset(gen.standard_normal((5, 3, 4, 4)).astype(np.float32),
                     np.arange(5, dtype=np.int64) % 2, 2)
        p = tmp_path / "plain.cache"
        save_dataset_cache(p, ds, ds)
        back, _ = load_dataset_cache(p)
        assert back.glyph_boxes is None
        assert np.array_equal(back.images, ds.images)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.cache"
        p.write_bytes(b"NOTACACHE 9\n")
        with pytest.raises(DataFormatError, match="not a dataset cache"):
            load_dataset_cache(p)

    def test_truncated_manifest(self, tmp_path):
        p = tmp_path / "trunc.cache"
        p.write_bytes(b"CDBCACHE 1\nnum_classes=4\n")
        with pytest.raises(DataFormatError, match="truncated"):
            load_dataset_cache(p)
