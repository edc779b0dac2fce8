import numpy as np
import pytest

from helpers import write_png
from pecas import data
from pecas.errors import DecodeError, LayoutError
from pecas.rng import SplitMix64


class TestSplitMix64:
    def test_reference_vectors(self):
        # canonical first outputs of splitmix64 for these seeds
        r = SplitMix64(0)
        assert [r.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
        r = SplitMix64(1234567)
        assert [r.next_u64() for _ in range(3)] == [
            0x599ED017FB08FC85, 0x2C73F08458540FA5, 0x883EBCE5A3F27C77]

    def test_random_unit_interval(self):
        r = SplitMix64(42)
        values = [r.random() for _ in range(1000)]
        assert all(0.0 <= v < 1.0 for v in values)

    def test_shuffle_is_permutation(self):
        items = list(range(50))
        shuffled = items[:]
        SplitMix64(9).shuffle(shuffled)
        assert sorted(shuffled) == items
        assert shuffled != items


class TestPnmDecode:
    def test_p5_direct_scaling(self):
        payload = b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
        img = data.decode_image(payload)
        assert img.shape == (1, 2, 2)
        assert img[0, 0, 0] == 0.0
        assert img[0, 0, 1] == 1.0
        assert img[0, 1, 0] == pytest.approx(128 / 255, abs=1e-9)  # 0.50196
        assert img[0, 1, 1] == pytest.approx(64 / 255, abs=1e-9)   # 0.25098

    def test_p6_white_is_one(self):
        payload = b"P6\n1 1\n255\n" + bytes([255, 255, 255])
        img = data.decode_image(payload)
        assert img[0, 0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_p6_luma_weights(self):
        red = data.decode_image(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        assert red[0, 0, 0] == pytest.approx(0.299, abs=1e-9)
        green = data.decode_image(b"P6\n1 1\n255\n" + bytes([0, 255, 0]))
        assert green[0, 0, 0] == pytest.approx(0.587, abs=1e-9)

    def test_maxval_scaling(self):
        img = data.decode_image(b"P5\n1 1\n100\n" + bytes([50]))
        assert img[0, 0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_header_comments(self):
        payload = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([10, 20])
        img = data.decode_image(payload)
        assert img.shape == (1, 1, 2)

    def test_pgm_round_trip_own_writer(self):
        rng = SplitMix64(77)
        grid = np.array([rng.randrange(256) for _ in range(35)]).reshape(5, 7) / 255.0
        decoded = data.decode_image(data.encode_pgm(grid))
        assert decoded.shape == (1, 5, 7)
        assert np.array_equal(decoded[0], grid)

    def test_truncated_payload_raises(self):
        with pytest.raises(DecodeError, match="truncated"):
            data.decode_image(b"P5\n4 4\n255\n" + bytes([1, 2, 3]))

    def test_ascii_pgm_unsupported(self):
        with pytest.raises(DecodeError, match="P2"):
            data.decode_image(b"P2\n1 1\n255\n7")

    def test_16bit_maxval_unsupported(self):
        with pytest.raises(DecodeError, match="maxval"):
            data.decode_image(b"P5\n1 1\n65535\n" + bytes([1, 1]))

    def test_garbage_rejected(self):
        with pytest.raises(DecodeError):
            data.decode_image(b"\x00\x01\x02not an image")


class TestPngDecode:
    def test_grayscale_values(self):
        pixels = np.array([[0, 128], [255, 64]], dtype=np.uint8)
        img = data.decode_image(write_png(pixels, color_type=0))
        assert img.shape == (1, 2, 2)
        assert np.allclose(img[0], pixels / 255.0, atol=1e-12)

    def test_rgb_luma(self):
        pixels = np.zeros((1, 2, 3), dtype=np.uint8)
        pixels[0, 0] = [255, 0, 0]
        pixels[0, 1] = [255, 255, 255]
        img = data.decode_image(write_png(pixels, color_type=2))
        assert img[0, 0, 0] == pytest.approx(0.299, abs=1e-9)
        assert img[0, 0, 1] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("ftype", [0, 1, 2, 3, 4])
    def test_every_filter_type_inverts(self, ftype):
        rng = SplitMix64(200 + ftype)
        pixels = np.array([rng.randrange(256) for _ in range(48)],
                          dtype=np.uint8).reshape(6, 8)
        blob = write_png(pixels, color_type=0, filters=[ftype] * 6)
        img = data.decode_image(blob)
        assert np.array_equal(np.rint(img[0] * 255).astype(np.uint8), pixels)

    def test_mixed_filters_rgb(self):
        rng = SplitMix64(300)
        pixels = np.array([rng.randrange(256) for _ in range(90)],
                          dtype=np.uint8).reshape(5, 6, 3)
        blob = write_png(pixels, color_type=2, filters=[0, 1, 2, 3, 4])
        img = data.decode_image(blob)
        expect = (0.299 * pixels[:, :, 0] + 0.587 * pixels[:, :, 1]
                  + 0.114 * pixels[:, :, 2]) / 255.0
        assert np.allclose(img[0], np.clip(expect, 0, 1), atol=1e-9)

    def test_16bit_depth_unsupported(self):
        pixels = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(DecodeError, match="depth"):
            data.decode_image(write_png(pixels, bit_depth=16))

    def test_palette_unsupported(self):
        pixels = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(DecodeError, match="color type"):
            data.decode_image(write_png(pixels, color_type=3))

    def test_interlace_unsupported(self):
        pixels = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(DecodeError, match="interlaced"):
            data.decode_image(write_png(pixels, interlace=1))

    def test_corrupt_zlib_stream(self):
        blob = bytearray(write_png(np.zeros((4, 4), dtype=np.uint8)))
        # IDAT body starts after signature(8) + IHDR chunk(25) + len+type(8)
        blob[8 + 25 + 8 + 2] ^= 0xFF
        with pytest.raises(DecodeError):
            data.decode_image(bytes(blob))


class TestResize:
    def test_same_size_is_copy(self):
        img = np.arange(12.0).reshape(1, 3, 4)
        out = data.resize_bilinear(img, (3, 4))
        assert np.array_equal(out, img)
        assert out is not img

    def test_corners_preserved(self):
        img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = data.resize_bilinear(img, (5, 5))
        assert out[0, 0, 0] == 1.0
        assert out[0, 0, -1] == 2.0
        assert out[0, -1, 0] == 3.0
        assert out[0, -1, -1] == 4.0

    def test_interpolated_midpoint(self):
        img = np.array([[[0.0, 1.0]]])
        out = data.resize_bilinear(img, (1, 3))
        assert out[0, 0, 1] == pytest.approx(0.5, abs=1e-12)

    def test_values_stay_in_hull(self):
        rng = SplitMix64(400)
        img = np.array([rng.random() for _ in range(64)]).reshape(1, 8, 8)
        out = data.resize_bilinear(img, (13, 5))
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12


class TestLoadDatasetDir:
    def make_tree(self, root, n_pos, n_neg):
        (root / "pos").mkdir(parents=True)
        (root / "neg").mkdir(parents=True)
        rng = SplitMix64(1)
        for i in range(n_pos):
            grid = np.array([rng.randrange(256) for _ in range(16)]).reshape(4, 4) / 255.0
            (root / "pos" / f"p{i}.pgm").write_bytes(data.encode_pgm(grid))
        for i in range(n_neg):
            grid = np.array([rng.randrange(256) for _ in range(16)]).reshape(4, 4) / 255.0
            (root / "neg" / f"n{i}.pgm").write_bytes(data.encode_pgm(grid))

    def test_labels_and_order(self, tmp_path):
        self.make_tree(tmp_path, 3, 2)
        images = data.load_dataset_dir(tmp_path, (4, 4))
        assert [img.label for img in images] == [1, 1, 1, 0, 0]
        names = [img.source_path for img in images]
        assert names == sorted(names[:3]) + sorted(names[3:])

    def test_empty_pos_ok(self, tmp_path):
        self.make_tree(tmp_path, 0, 2)
        images = data.load_dataset_dir(tmp_path, (4, 4))
        assert [img.label for img in images] == [0, 0]

    def test_missing_subdir_raises(self, tmp_path):
        (tmp_path / "pos").mkdir()
        with pytest.raises(LayoutError):
            data.load_dataset_dir(tmp_path, (4, 4))

    def test_resize_applied_and_range(self, tmp_path):
        self.make_tree(tmp_path, 1, 1)
        images = data.load_dataset_dir(tmp_path, (10, 6))
        assert all(img.pixels.shape == (1, 10, 6) for img in images)
        assert all((img.pixels >= 0).all() and (img.pixels <= 1).all() for img in images)

    def test_undecodable_file_skipped_with_warning(self, tmp_path, capsys):
        self.make_tree(tmp_path, 2, 1)
        (tmp_path / "pos" / "broken.pgm").write_bytes(b"P5\n9 9\n255\nshort")
        images = data.load_dataset_dir(tmp_path, (4, 4))
        assert len(images) == 3
        err = capsys.readouterr().err
        assert "broken.pgm" in err and err.count("\n") == 1

    def test_non_image_suffixes_ignored(self, tmp_path):
        self.make_tree(tmp_path, 1, 1)
        (tmp_path / "pos" / "notes.txt").write_text("hello")
        assert len(data.load_dataset_dir(tmp_path, (4, 4))) == 2

    def test_streaming_mode_rereads_from_disk(self, tmp_path):
        self.make_tree(tmp_path, 2, 1)
        eager = data.load_dataset_dir(tmp_path, (4, 4))
        lazy = data.load_dataset_dir(tmp_path, (4, 4), keep_in_memory=False)
        assert [img.label for img in lazy] == [img.label for img in eager]
        for a, b in zip(lazy, eager):
            assert a._pixels is None  # nothing resident until accessed
            assert np.array_equal(a.pixels, b.pixels)
            assert np.array_equal(a.pixels, b.pixels)  # repeatable re-decode
            assert a._pixels is None  # still not cached afterwards

    def test_streaming_mode_skips_broken_files_up_front(self, tmp_path, capsys):
        self.make_tree(tmp_path, 1, 1)
        (tmp_path / "neg" / "bad.pgm").write_bytes(b"P5\n5 5\n255\nxx")
        lazy = data.load_dataset_dir(tmp_path, (4, 4), keep_in_memory=False)
        assert len(lazy) == 2
        assert "bad.pgm" in capsys.readouterr().err


def make_images(n):
    pixel = np.zeros((1, 1, 1))
    return [data.LabeledImage(pixel, i % 2, f"img{i}") for i in range(n)]


class TestSplit:
    def test_sizes_n10(self):
        split = data.split_dataset(make_images(10), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (6, 2, 2)

    def test_sizes_full_corpus_scale(self):
        # 12820 positives + 9000 negatives
        split = data.split_dataset(make_images(21820), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (13092, 4364, 4364)

    @pytest.mark.parametrize("n", [5, 10, 100])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_partition_property(self, n, seed):
        images = make_images(n)
        split = data.split_dataset(images, seed)
        ids = [id(img) for part in (split.train, split.validation, split.test) for img in part]
        assert len(ids) == n
        assert set(ids) == {id(img) for img in images}

    def test_same_seed_identical(self):
        images = make_images(100)
        a = data.split_dataset(images, 7)
        b = data.split_dataset(images, 7)
        assert [img.source_path for img in a.train] == [img.source_path for img in b.train]

    def test_different_seed_differs(self):
        images = make_images(100)
        a = data.split_dataset(images, 7)
        b = data.split_dataset(images, 8)
        assert [img.source_path for img in a.train] != [img.source_path for img in b.train]

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            data.split_dataset(make_images(4), seed=0)
